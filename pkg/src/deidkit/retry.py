"""Bounded retry with exponential backoff."""

from __future__ import annotations

import logging
import time
from typing import Callable, TypeVar

from .errors import AuthFailure, DeidError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def call_with_retries(
    fn: Callable[[], T],
    attempts: int = 3,
    backoff_s: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
    error_cls: type[DeidError] = DeidError,
    what: str = "call",
) -> T:
    """Run ``fn`` up to ``attempts`` times; wrap the last failure in ``error_cls``.

    AuthFailure is raised immediately: retrying a rejected credential only adds load.
    """
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return fn()
        except AuthFailure:
            raise
        except Exception as exc:  # noqa: BLE001
            last = exc
            logger.warning("%s attempt %d/%d failed: %s", what, attempt + 1, attempts, type(exc).__name__)
            if attempt + 1 < attempts:
                sleep(backoff_s * (2**attempt))
    raise error_cls(f"{what} failed after {attempts} attempts ({type(last).__name__})") from last
