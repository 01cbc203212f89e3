"""
Structured logging helpers. Library modules only ever call
``logging.getLogger(__name__)``; handlers are installed by the CLI.
"""

import json
import logging
import sys
from typing import IO, Optional

# Attributes present on every LogRecord; anything else came in through `extra`.
_RECORD_FIELDS = frozenset(
    vars(logging.LogRecord("", logging.INFO, "", 0, "", (), None)).keys()
) | {"message", "asctime"}


class JsonLogFormatter(logging.Formatter):
    """Formats each record as a single JSON object on one line."""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        for key, value in vars(record).items():
            if key not in _RECORD_FIELDS and not key.startswith("_"):
                entry[key] = value
        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, sort_keys=True, default=str)


def configure_logging(
    level: str = "WARNING", stream: Optional[IO[str]] = None
) -> logging.Handler:
    """Attach a JSON-lines handler to the ``barrierkit`` logger.

    Arguments:
        level (str): Logging level name.
        stream (IO[str], optional): Destination, defaults to standard error.

    Returns:
        The installed handler so callers may remove it again.
    """
    root = logging.getLogger("barrierkit")
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    for existing in list(root.handlers):
        if isinstance(existing.formatter, JsonLogFormatter):
            root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level.upper())
    root.propagate = False
    return handler
