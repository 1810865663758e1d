"""Database connection and session management"""
from contextlib import contextmanager
from typing import Optional

from sqlalchemy.engine import Engine
from sqlalchemy.pool import StaticPool
from sqlmodel import Session, SQLModel, create_engine

from exitctrl.settings import database_url


def make_engine(url: Optional[str] = None) -> Engine:
    """Engine for the run registry; in-memory SQLite shares one connection"""
    url = database_url(url)
    if url in ("sqlite://", "sqlite:///:memory:"):
        return create_engine(url, connect_args={"check_same_thread": False}, poolclass=StaticPool)
    if url.startswith("sqlite"):
        return create_engine(url, connect_args={"check_same_thread": False})
    return create_engine(url)


# Create engine
engine = make_engine()


def init_db(bind: Optional[Engine] = None):
    """Create all tables"""
    from exitctrl import models  # noqa: F401  registers the tables

    SQLModel.metadata.create_all(bind or engine)


@contextmanager
def get_session(bind: Optional[Engine] = None):
    """Context manager for database sessions"""
    session = Session(bind or engine)
    try:
        yield session
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()
