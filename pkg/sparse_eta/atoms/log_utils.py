"""
Logging setup for the sparse-eta command line.

Library modules only call ``logging.getLogger(__name__)``; handlers are
installed once by the CLI through :func:`configure_logging`.
"""

import logging
import os
from typing import Optional, Union

from rich.console import Console
from rich.logging import RichHandler

LOG_ENV_VAR = "SPARSE_ETA_LOG"
DEFAULT_LEVEL = "WARNING"


def resolve_log_level(level: Optional[Union[str, int]] = None) -> int:
    """
    Resolve the effective log level.

    Precedence: explicit ``level`` argument, then the ``SPARSE_ETA_LOG``
    environment variable, then WARNING. Unknown names fall back to WARNING.
    """
    if isinstance(level, int):
        return level
    name = (level or os.getenv(LOG_ENV_VAR) or DEFAULT_LEVEL).strip().upper()
    resolved = logging.getLevelName(name)
    return resolved if isinstance(resolved, int) else logging.WARNING


def configure_logging(
    level: Optional[Union[str, int]] = None,
    console: Optional[Console] = None
) -> int:
    """
    Install a RichHandler on the root logger and return the level in use.

    Calling it twice replaces the previous handler instead of stacking them.
    """
    resolved = resolve_log_level(level)
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )
    handler.setFormatter(logging.Formatter("[%(name)s] %(message)s"))
    root.addHandler(handler)
    root.setLevel(resolved)
    return resolved
