"""Модуль моделей реестра запусков.

Содержит все модели SQLAlchemy, используемые в проекте.
"""

from sqlalchemy import JSON, TIMESTAMP, Column, Enum as SqlEnum, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func

from database import Base
from utils.states import RunStatus, SubtaskStatus


class Run(Base):
    """Модель запуска движка.

    Attributes:
        run_id (int): Уникальный идентификатор запуска (автоинкремент)
        started_at (datetime): Время начала (устанавливается автоматически)
        finished_at (datetime): Время завершения
        status (RunStatus): Текущее состояние запуска
        data_dir (str): Каталог входных данных
        out_dir (str): Каталог вывода
        config (JSON): Снимок RunConfig
    """

    __tablename__ = 'runs'

    run_id = Column(Integer, primary_key=True, autoincrement=True)
    started_at = Column(TIMESTAMP, server_default=func.now())
    finished_at = Column(TIMESTAMP)
    status = Column(
        SqlEnum(RunStatus, name='run_status'),
        default=RunStatus.RUNNING,
        nullable=False
    )
    data_dir = Column(String(1000), nullable=False)
    out_dir = Column(String(1000), nullable=False)
    config = Column(JSON)

    iterations = relationship(
        "IterationMetrics", back_populates="run", order_by="IterationMetrics.iteration"
    )


class IterationMetrics(Base):
    """Модель метрик одной итерации.

    Attributes:
        id (int): Уникальный идентификатор записи (автоинкремент)
        run_id (int): Идентификатор запуска (внешний ключ)
        iteration (int): Номер итерации (с единицы)
        hits1, hits5, mrr (float): Метрики ранжирования
        coverage_recall (float): Доля тестовых пар внутри одной подзадачи
        candidate_recall (float): Доля тестовых целей среди кандидатов
        n_pseudo (int): Размер накопленного множества pseudo-пар
        n_predictions (int): Число top-1 предсказаний
        n_subtasks (int): Число выполненных подзадач
        n_failed (int): Число подзадач со сбоем сопоставителя
        seconds (float): Длительность итерации
    """

    __tablename__ = 'iteration_metrics'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('runs.run_id'), nullable=False)
    iteration = Column(Integer, nullable=False)
    hits1 = Column(Float, default=0.0)
    hits5 = Column(Float, default=0.0)
    mrr = Column(Float, default=0.0)
    coverage_recall = Column(Float, default=0.0)
    candidate_recall = Column(Float, default=0.0)
    n_pseudo = Column(Integer, default=0)
    n_predictions = Column(Integer, default=0)
    n_subtasks = Column(Integer, default=0)
    n_failed = Column(Integer, default=0)
    seconds = Column(Float, default=0.0)

    run = relationship("Run", back_populates="iterations")


class SubtaskRecord(Base):
    """Модель записи о подзадаче.

    Attributes:
        id (int): Уникальный идентификатор записи (автоинкремент)
        run_id (int): Идентификатор запуска (внешний ключ)
        iteration (int): Номер итерации
        group (int): Номер группы
        source_size, target_size (int): Размеры контекстов
        n_candidates (int): Число кандидатов
        n_seeds (int): Число локальных seed/pseudo пар
        status (SubtaskStatus): Итог выполнения
        seconds (float): Длительность
        message (str): Текст ошибки или причины пропуска
    """

    __tablename__ = 'subtasks'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('runs.run_id'), nullable=False)
    iteration = Column(Integer, nullable=False)
    group = Column(Integer, nullable=False)
    source_size = Column(Integer, default=0)
    target_size = Column(Integer, default=0)
    n_candidates = Column(Integer, default=0)
    n_seeds = Column(Integer, default=0)
    status = Column(SqlEnum(SubtaskStatus, name='subtask_status'), nullable=False)
    seconds = Column(Float, default=0.0)
    message = Column(Text)
