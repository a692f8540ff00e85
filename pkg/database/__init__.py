"""Модуль инициализации подключения к реестру запусков.

Содержит базовый класс моделей SQLAlchemy и фабрику сессий. Движок
создаётся функцией configure: URL зависит от каталога вывода запуска
(по умолчанию sqlite-файл runs.db).
"""

import logging
import os
from contextlib import contextmanager
from typing import Iterator, Optional

from sqlalchemy import create_engine, event
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

logger = logging.getLogger(__name__)

DEFAULT_DB_FILE = "runs.db"

# Базовый класс для объявления моделей SQLAlchemy
Base = declarative_base()

# Фабрика сессий; привязывается к движку в configure()
SessionLocal = sessionmaker(
    autoflush=False,    # Отключение автоматического сброса изменений
    expire_on_commit=False  # Объекты остаются доступны после commit
)

engine: Optional[Engine] = None


def default_url(out_dir: str) -> str:
    return f"sqlite:///{os.path.join(os.path.abspath(out_dir), DEFAULT_DB_FILE)}"


def configure(url: str, create_tables: bool = True) -> Engine:
    """Создаёт движок, привязывает к нему фабрику сессий и создаёт таблицы.

    Args:
        url (str): SQLAlchemy URL
        create_tables (bool): Создать отсутствующие таблицы (без alembic)

    Returns:
        Engine: Движок SQLAlchemy
    """
    global engine
    if url.startswith("sqlite"):
        engine = create_engine(url, connect_args={"check_same_thread": False})
        event.listen(engine, "connect", _enable_sqlite_foreign_keys)
    else:
        engine = create_engine(
            url,
            pool_size=5,
            max_overflow=10,
            pool_pre_ping=True, # Проверка активности соединений перед использованием
            pool_recycle=3600   # Время жизни соединения (в секундах)
        )
    SessionLocal.configure(bind=engine)
    if create_tables:
        from database import models  # noqa: F401
        Base.metadata.create_all(engine)
    logger.debug(f"Реестр запусков: {engine.url.render_as_string(hide_password=True)}")
    return engine


def _enable_sqlite_foreign_keys(dbapi_connection, connection_record) -> None:
    cursor = dbapi_connection.cursor()
    cursor.execute("PRAGMA foreign_keys=ON")
    cursor.close()


@contextmanager
def get_db() -> Iterator[Session]:
    """Сессия реестра запусков для блока with.

    Yields:
        Session: Объект сессии SQLAlchemy

    Примечание:
        Автоматически закрывает соединение после завершения работы.
    """
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
