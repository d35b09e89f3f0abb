import logging
import os
import sys
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_LEVEL_ENV = 'GGDPOTTS_LOG_LEVEL'


def configure_logging(level: Optional[str] = None) -> None:
    """
    Install a single stream handler on the package logger.
    Falls back to GGDPOTTS_LOG_LEVEL, then INFO.
    """
    level_name = (level or os.getenv(LOG_LEVEL_ENV, 'INFO')).upper()
    root = logging.getLogger('src')
    root.setLevel(getattr(logging, level_name, logging.INFO))
    for handler in root.handlers:
        if getattr(handler, '_ggdpotts', False):
            # sys.stderr may have been swapped since the last call
            handler.setStream(sys.stderr)
            return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._ggdpotts = True
    root.addHandler(handler)


def progress_enabled() -> bool:
    return os.getenv('GGDPOTTS_PROGRESS', '1') not in ('0', 'false', 'False', '')
