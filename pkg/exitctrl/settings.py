"""Environment-driven settings"""
import os
from typing import Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

DEFAULT_DATABASE_URL = "sqlite://"


def thread_cap() -> int:
    """Worker cap for path simulation; results never depend on it"""
    raw = os.getenv("EXITCTRL_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def log_level() -> str:
    return os.getenv("EXITCTRL_LOG_LEVEL", "WARNING").upper()


def database_url(override: Optional[str] = None) -> str:
    return override or os.getenv("EXITCTRL_DATABASE_URL", DEFAULT_DATABASE_URL)
