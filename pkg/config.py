import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from matchers.external import is_valid_matcher_spec
from utils.exceptions import ConfigurationError

# Загрузка переменных окружения из файла .env
load_dotenv()


def _env(name: str, default: str) -> str:
    return os.getenv(f"DIVEA_{name}", default)


class Config:
    """
    Класс для работы с конфигурацией движка.

    Значения по умолчанию для всех параметров запуска.
    Каждый параметр можно переопределить переменной окружения DIVEA_<ИМЯ>.
    """

    NUM_SUBTASKS = int(_env("NUM_SUBTASKS", "5"))
    """Число подзадач N"""

    MAX_SIZE = int(_env("MAX_SIZE", "0"))
    """Ограничение размера подзадачи S (0 - вычислить по размеру графов)"""

    ITERATIONS = int(_env("ITERATIONS", "5"))
    """Число итераций"""

    ALPHA = float(_env("ALPHA", "0.9"))
    """Сдвиг alpha нормированного сходства"""

    BETA = float(_env("BETA", "1.0"))
    """Вес beta сходства в итоговом весе кандидата"""

    LAMBDA = float(_env("LAMBDA", "2.0"))
    """Крутизна нормировки свидетельств"""

    TOP_K = int(_env("TOP_K", "10"))
    """K наибольших оценок при накоплении сходства"""

    DELTA1 = float(_env("DELTA1", "0.5"))
    """Доля исходного контекста в S"""

    DELTA2 = float(_env("DELTA2", "0.7"))
    """Доля кандидатов в целевом контексте"""

    DEPTH = int(_env("DEPTH", "2"))
    """Глубина L передачи свидетельств"""

    BALANCE_SLACK = float(_env("BALANCE_SLACK", "0.10"))
    """Допуск дисбаланса разбиения"""

    RADIUS = int(_env("RADIUS", "6"))
    """Радиус BFS для весов локальности"""

    TOP_K_STORE = int(_env("TOP_K_STORE", "50"))
    """Длина строки матрицы сходства"""

    MATCHER = _env("MATCHER", "builtin")
    """Сопоставитель: builtin или external:CMD"""

    MATCHER_ROUNDS = int(_env("MATCHER_ROUNDS", "3"))
    """Раунды бутстрэппинга встроенного сопоставителя"""

    MATCHER_THRESHOLD = float(_env("MATCHER_THRESHOLD", "0.5"))
    """Порог временных пар встроенного сопоставителя и pseudo-пар итерации"""

    MATCHER_TIMEOUT = float(_env("MATCHER_TIMEOUT", "600"))
    """Тайм-аут внешнего сопоставителя, с"""

    MATCHER_RETRIES = int(_env("MATCHER_RETRIES", "2"))
    """Повторы внешнего сопоставителя при сбое"""

    PARALLELISM = int(_env("PARALLELISM", "1"))
    """Число одновременно выполняемых подзадач"""

    SEED = int(_env("SEED", "0"))
    """Зерно генераторов случайных чисел"""

    TRAIN_RATIO = float(_env("TRAIN_RATIO", "0.2"))
    """Доля обучающих ссылок при случайном разбиении ent_links"""

    DB_URL = os.getenv("DB_URL")
    """URL реестра запусков (по умолчанию sqlite-файл runs.db в каталоге вывода)"""

    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    """Уровень логирования"""


@dataclass
class RunConfig:
    """Параметры одного запуска.

    Значения по умолчанию берутся из Config; CLI переопределяет их через from_args.
    """

    n_subtasks: int = Config.NUM_SUBTASKS
    max_size: int = Config.MAX_SIZE
    iterations: int = Config.ITERATIONS
    alpha: float = Config.ALPHA
    beta: float = Config.BETA
    lam: float = Config.LAMBDA
    top_k: int = Config.TOP_K
    delta1: float = Config.DELTA1
    delta2: float = Config.DELTA2
    depth: int = Config.DEPTH
    balance_slack: float = Config.BALANCE_SLACK
    rng_seed: int = Config.SEED
    matcher: str = Config.MATCHER
    parallelism: int = Config.PARALLELISM
    radius: int = Config.RADIUS
    top_k_store: int = Config.TOP_K_STORE
    matcher_rounds: int = Config.MATCHER_ROUNDS
    matcher_threshold: float = Config.MATCHER_THRESHOLD
    matcher_timeout: float = Config.MATCHER_TIMEOUT
    matcher_retries: int = Config.MATCHER_RETRIES
    train_ratio: float = Config.TRAIN_RATIO
    partition_file: Optional[str] = None
    extra_seeds: Optional[str] = None
    strict: bool = False
    locality_only: bool = False
    db_url: Optional[str] = Config.DB_URL

    def validate(self) -> None:
        """Проверяет параметры.

        Raises:
            ConfigurationError: Первое нарушенное ограничение (с именем поля)
        """
        checks = [
            ("n_subtasks", self.n_subtasks >= 1, "должно быть >= 1"),
            ("max_size", self.max_size >= 0, "должно быть >= 0 (0 - автоматически)"),
            ("iterations", self.iterations >= 1, "должно быть >= 1"),
            ("alpha", 0 <= self.alpha < 1, "должно лежать в [0, 1)"),
            ("beta", self.beta >= 0, "должно быть >= 0"),
            ("lam", self.lam > 0, "должно быть > 0"),
            ("top_k", self.top_k >= 1, "должно быть >= 1"),
            ("delta1", 0 < self.delta1 < 1, "должно лежать в (0, 1)"),
            ("delta2", 0 < self.delta2 <= 1, "должно лежать в (0, 1]"),
            ("depth", self.depth >= 1, "должно быть >= 1"),
            ("balance_slack", self.balance_slack >= 0, "должно быть >= 0"),
            ("parallelism", self.parallelism >= 1, "должно быть >= 1"),
            ("radius", self.radius >= 1, "должно быть >= 1"),
            ("top_k_store", self.top_k_store >= 1, "должно быть >= 1"),
            ("matcher_rounds", self.matcher_rounds >= 0, "должно быть >= 0"),
            ("matcher_timeout", self.matcher_timeout > 0, "должно быть > 0"),
            ("matcher_retries", self.matcher_retries >= 0, "должно быть >= 0"),
            ("train_ratio", 0 < self.train_ratio < 1, "должно лежать в (0, 1)"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ConfigurationError(f"Параметр {name}={getattr(self, name)!r} {message}")
        if not is_valid_matcher_spec(self.matcher):
            raise ConfigurationError(f"Параметр matcher={self.matcher!r}: ожидается builtin или external:CMD")

    @classmethod
    def from_args(cls, namespace: Any) -> "RunConfig":
        """Берёт из argparse.Namespace все заданные (не None) значения полей."""
        values = {}
        for f in fields(cls):
            value = getattr(namespace, f.name, None)
            if value is not None:
                values[f.name] = value
        return cls(**values)

    @classmethod
    def from_dict(cls, data: Dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_dict(self) -> Dict:
        return asdict(self)
