import logging
import sys
from pathlib import Path

from core.config import settings

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str | None = None, log_file: Path | None = None):
    """Console logging on stderr; stdout is reserved for command results."""
    root_logger = logging.getLogger()

    root_logger.setLevel(level or settings.LOG_LEVEL)
    formatter = logging.Formatter(LOG_FORMAT)

    if not root_logger.handlers:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

    log_file = log_file or settings.LOG_FILE
    if log_file is not None:
        path = Path(log_file).resolve()
        known = {
            Path(h.baseFilename) for h in root_logger.handlers if isinstance(h, logging.FileHandler)
        }
        if path not in known:
            path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(path)
            file_handler.setFormatter(formatter)
            root_logger.addHandler(file_handler)

    return root_logger
