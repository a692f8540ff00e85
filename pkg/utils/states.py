from enum import Enum


class Provenance(str, Enum):
    """
    Происхождение пары сопоставления сущностей.

    Наследуется от str для удобной сериализации/десериализации
    (в файлы манифестов и в реестр запусков).
    """

    SEED = "seed"
    """Заранее выровненная пара из обучающей выборки (M^l)"""

    PSEUDO = "pseudo"
    """Взаимно ближайшая пара, добавленная между итерациями"""

    PREDICTED = "predicted"
    """Top-1 предсказание подзадачи (M^p)"""


class Side(str, Enum):
    """Сторона задачи выравнивания: исходный или целевой граф знаний."""

    SOURCE = "source"
    TARGET = "target"


class SubtaskStatus(str, Enum):
    """
    Состояние подзадачи после выполнения итерации.

    Сохраняется в реестр запусков для каждой подзадачи каждой итерации.
    """

    DONE = "done"
    """Сопоставитель отработал, предсказания собраны"""

    SKIPPED = "skipped"
    """Пустая группа или пустое множество кандидатов"""

    FAILED = "failed"
    """Ошибка сопоставителя (в нестрогом режиме запуск продолжается)"""


class RunStatus(str, Enum):
    """Состояние запуска в реестре."""

    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"
