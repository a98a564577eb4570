"""Console logging helpers.

Every line looks like ``[2026-01-01 12:00:00] [Component] message`` and is
flushed immediately so long runs can be tailed.
"""

from datetime import datetime

import pytz

from shared.config import settings


def now() -> str:
    """Current UTC time as a log timestamp."""
    return datetime.now(pytz.UTC).strftime("%Y-%m-%d %H:%M:%S")


def log(component: str, message: str) -> None:
    print(f"[{now()}] [{component}] {message}", flush=True)


def debug(component: str, message: str) -> None:
    if settings.log_level == "debug":
        print(f"[{now()}] [DEBUG {component}] {message}", flush=True)


def warn(component: str, message: str) -> None:
    if settings.log_level in ("debug", "info", "warning"):
        print(f"[{now()}] [{component}] WARNING: {message}", flush=True)
