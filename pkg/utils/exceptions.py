"""Исключения движка разбиения задачи выравнивания.

Загрузчики и построители контекста выбрасывают исключения, оркестратор
решает, прерывать ли запуск (ConfigurationError: всегда до первой итерации,
MatcherError: только в строгом режиме).
"""

from typing import Optional


class DivisionError(Exception):
    """Базовое исключение движка."""


class KGParseError(DivisionError):
    """Ошибка разбора файла триплетов или сопоставлений.

    Attributes:
        path (str): Путь к файлу
        line_no (Optional[int]): Номер строки (с единицы) или None для файла целиком
    """

    def __init__(self, path: str, line_no: Optional[int], message: str):
        self.path = path
        self.line_no = line_no
        where = f"{path}:{line_no}" if line_no is not None else path
        super().__init__(f"{where}: {message}")


class MappingError(DivisionError):
    """Некорректное сопоставление: неизвестная сущность или нарушение один-к-одному."""


class ConfigurationError(DivisionError):
    """Недопустимые параметры запуска или бюджета подзадачи."""


class NoLocalEvidence(DivisionError):
    """Пустое множество якорей: веса локальности не определены."""


class SubtaskSizeError(DivisionError):
    """Нарушено ограничение |E~s| + |E~t| <= S (не должно происходить)."""


class MatcherError(DivisionError):
    """Сбой сопоставителя на отдельной подзадаче."""


class MatcherTimeout(MatcherError):
    """Внешний сопоставитель не уложился в тайм-аут."""


class MatcherProtocolError(MatcherError):
    """Ответ внешнего сопоставителя не соответствует протоколу."""
