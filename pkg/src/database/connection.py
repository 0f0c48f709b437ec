"""
Database connection module for the run registry.

This module provides functions for establishing database connections and managing sessions
using SQLAlchemy. The registry defaults to a SQLite file under the output root.
"""

import os
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Union

from dotenv import load_dotenv
from loguru import logger
from sqlalchemy import create_engine, text
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from .models import Base

# Load environment variables
load_dotenv()

# Initialize engine at module level
_engine = None
_Session = None


def get_database_url(directory: Optional[Union[str, Path]] = None) -> str:
    """
    Get the registry URL.

    RGT_DATABASE_URL wins; otherwise a SQLite file ``runs.sqlite`` in
    ``directory`` (default: the output root).
    """
    db_url = os.getenv("RGT_DATABASE_URL")
    if db_url:
        return db_url
    directory = Path(directory or os.getenv("RGT_OUTPUT_ROOT", "runs"))
    directory.mkdir(parents=True, exist_ok=True)
    return f"sqlite:///{directory / 'runs.sqlite'}"


def create_db_engine(database_url: Optional[str] = None, create_tables: bool = True) -> Engine:
    """
    Create a SQLAlchemy engine and, by default, the registry tables.

    Args:
        database_url: The database URL. If None, uses get_database_url().
        create_tables: Create missing tables.

    Returns:
        SQLAlchemy engine instance.
    """
    if database_url is None:
        database_url = get_database_url()

    if database_url in ("sqlite://", "sqlite:///:memory:"):
        # one shared connection keeps the in-memory database alive
        engine = create_engine(database_url, poolclass=StaticPool, connect_args={"check_same_thread": False})
    else:
        engine = create_engine(database_url, pool_pre_ping=True)

    if create_tables:
        Base.metadata.create_all(engine)
    return engine


def get_engine() -> Engine:
    """Get or create the SQLAlchemy engine."""
    global _engine
    if _engine is None:
        _engine = create_db_engine()
    return _engine


def get_session_factory():
    """Get or create the session factory."""
    global _Session
    if _Session is None:
        _Session = sessionmaker(bind=get_engine())
    return _Session


def get_db_session(engine: Optional[Engine] = None):
    """
    Create a new database session.

    Args:
        engine: Optional SQLAlchemy engine. If None, uses the default engine.
    """
    if engine:
        return sessionmaker(bind=engine)()
    return get_session_factory()()


@contextmanager
def session_scope(engine: Optional[Engine] = None):
    """
    Context manager for database sessions.

    Usage:
        with session_scope() as session:
            # Use session here

    The session will be committed if no exceptions occur,
    or rolled back if an exception is raised.
    """
    session = get_db_session(engine)
    try:
        yield session
        session.commit()
    except Exception as e:
        session.rollback()
        logger.error(f"Database session error: {str(e)}")
        raise
    finally:
        session.close()


def ping_database(engine: Optional[Engine] = None) -> bool:
    """Check that the registry answers a trivial query."""
    try:
        with (engine or get_engine()).connect() as conn:
            conn.execute(text("SELECT 1")).scalar()
        logger.info("Database connection successful")
        return True
    except Exception as e:
        logger.error(f"Failed to connect to database: {str(e)}")
        return False
