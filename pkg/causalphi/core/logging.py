"""Logging setup and a thread-safe record capture for solver messages."""

from __future__ import annotations

import logging
import threading


def setup_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


class LogCapture(logging.Handler):
    """Thread-safe handler that keeps (level, message) pairs for later replay."""

    def __init__(self, level: int = logging.NOTSET):
        super().__init__(level)
        self._lock = threading.Lock()
        self._records: list[tuple[int, str]] = []

    def emit(self, record: logging.LogRecord) -> None:
        msg = record.getMessage()
        if msg:
            with self._lock:
                self._records.append((record.levelno, msg))

    def records(self) -> list[tuple[int, str]]:
        with self._lock:
            return list(self._records)

    def lines(self, level: int = logging.WARNING) -> list[str]:
        with self._lock:
            return [msg for lvl, msg in self._records if lvl >= level]
