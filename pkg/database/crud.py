"""Модуль для работы с реестром запусков (CRUD операции).

Содержит функции для создания и завершения запусков, записи метрик
итераций и записей о подзадачах, чтения истории.
"""

import logging
from datetime import datetime
from typing import Dict, List, Optional

from sqlalchemy import select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session

from utils.states import RunStatus, SubtaskStatus

from . import models

logger = logging.getLogger(__name__)


def create_run(db: Session, data_dir: str, out_dir: str, config: Dict) -> Optional[models.Run]:
    """Создаёт запись о запуске в состоянии running.

    Args:
        db (Session): Сессия базы данных
        data_dir (str): Каталог входных данных
        out_dir (str): Каталог вывода
        config (Dict): Снимок RunConfig.to_dict()

    Returns:
        Optional[models.Run]: Созданный запуск или None при ошибке
    """
    try:
        run = models.Run(
            data_dir=data_dir,
            out_dir=out_dir,
            config=config,
            status=RunStatus.RUNNING,
        )
        db.add(run)
        db.commit()
        db.refresh(run)
        return run
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Ошибка создания запуска: {e}")
        return None


def finish_run(db: Session, run_id: int, status: RunStatus = RunStatus.FINISHED) -> bool:
    """Отмечает запуск завершённым (или упавшим).

    Returns:
        bool: True, если запись обновлена
    """
    try:
        run = db.get(models.Run, run_id)
        if not run:
            return False
        run.status = status
        run.finished_at = datetime.now()
        db.commit()
        return True
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Ошибка завершения запуска {run_id}: {e}")
        return False


def record_iteration(db: Session, run_id: int, iteration: int, values: Dict) -> Optional[models.IterationMetrics]:
    """Сохраняет метрики итерации.

    Args:
        db (Session): Сессия базы данных
        run_id (int): Идентификатор запуска
        iteration (int): Номер итерации
        values (Dict): hits1, hits5, mrr, coverage_recall, candidate_recall,
            n_pseudo, n_predictions, n_subtasks, n_failed, seconds

    Returns:
        Optional[models.IterationMetrics]: Запись или None при ошибке
    """
    try:
        columns = {c.name for c in models.IterationMetrics.__table__.columns}
        record = models.IterationMetrics(
            run_id=run_id,
            iteration=iteration,
            **{k: v for k, v in values.items() if k in columns and k not in ("id", "run_id", "iteration")},
        )
        db.add(record)
        db.commit()
        return record
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Ошибка сохранения метрик итерации {iteration}: {e}")
        return None


def record_subtask(
    db: Session,
    run_id: int,
    iteration: int,
    group: int,
    status: SubtaskStatus,
    source_size: int = 0,
    target_size: int = 0,
    n_candidates: int = 0,
    n_seeds: int = 0,
    seconds: float = 0.0,
    message: Optional[str] = None,
) -> bool:
    """Сохраняет запись о подзадаче.

    Returns:
        bool: True при успехе
    """
    try:
        db.add(models.SubtaskRecord(
            run_id=run_id,
            iteration=iteration,
            group=group,
            status=status,
            source_size=source_size,
            target_size=target_size,
            n_candidates=n_candidates,
            n_seeds=n_seeds,
            seconds=seconds,
            message=message,
        ))
        db.commit()
        return True
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Ошибка сохранения подзадачи {group} итерации {iteration}: {e}")
        return False


def get_iteration_history(db: Session, run_id: int) -> List[models.IterationMetrics]:
    """История метрик запуска по возрастанию номера итерации."""
    try:
        stmt = (
            select(models.IterationMetrics)
            .where(models.IterationMetrics.run_id == run_id)
            .order_by(models.IterationMetrics.iteration)
        )
        return list(db.scalars(stmt))
    except SQLAlchemyError as e:
        logger.error(f"Ошибка чтения истории запуска {run_id}: {e}")
        return []


def get_subtasks(db: Session, run_id: int, iteration: Optional[int] = None) -> List[models.SubtaskRecord]:
    """Записи о подзадачах запуска (по итерации и группе)."""
    try:
        stmt = select(models.SubtaskRecord).where(models.SubtaskRecord.run_id == run_id)
        if iteration is not None:
            stmt = stmt.where(models.SubtaskRecord.iteration == iteration)
        stmt = stmt.order_by(models.SubtaskRecord.iteration, models.SubtaskRecord.group)
        return list(db.scalars(stmt))
    except SQLAlchemyError as e:
        logger.error(f"Ошибка чтения подзадач запуска {run_id}: {e}")
        return []


def get_run(db: Session, run_id: int) -> Optional[models.Run]:
    return db.get(models.Run, run_id)
