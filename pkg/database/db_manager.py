import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from sqlalchemy import create_engine, text
from sqlalchemy.engine import Engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session, sessionmaker

from models.run_records import Base
from utils.errors import DataIOError

logger = logging.getLogger("db_manager")

DATABASE_URL_ENV = "CRACK_DATABASE_URL"


def default_database_url(out_dir: Path) -> str:
    """Run ledger URL from the environment, or a SQLite file under <out>/reports/"""
    url = os.getenv(DATABASE_URL_ENV)
    if url:
        return url
    reports = Path(out_dir) / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    return f"sqlite:///{(reports / 'runs.db').resolve()}"


def get_engine(url: str) -> Engine:
    """Create the engine and the ledger tables"""
    echo = os.getenv("SQL_ECHO", "false").lower() == "true"
    try:
        if url.startswith("sqlite"):
            engine = create_engine(url, connect_args={"check_same_thread": False}, echo=echo)
        else:
            engine = create_engine(url, pool_pre_ping=True, echo=echo)
        Base.metadata.create_all(bind=engine)
    except SQLAlchemyError as e:
        raise DataIOError(f"Cannot open run ledger at {url}: {e}") from e
    logger.debug(f"Using run ledger: {url}")
    return engine


@contextmanager
def session_scope(engine: Engine) -> Iterator[Session]:
    """Session that commits on success and rolls back on error"""
    factory = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    session = factory()
    try:
        yield session
        session.commit()
    except SQLAlchemyError as e:
        session.rollback()
        raise DataIOError(f"Run ledger write failed: {e}") from e
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()


def check_connection(engine: Optional[Engine]) -> bool:
    if engine is None:
        return False
    try:
        with engine.connect() as connection:
            connection.execute(text("SELECT 1"))
        return True
    except SQLAlchemyError as e:
        logger.error(f"Database connection test failed: {str(e)}")
        return False
