"""
Console logging setup. Library code only calls logging.getLogger(__name__);
the CLI configures handlers once through configure_logging().
"""
from __future__ import annotations
import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

_CONFIGURED = False


def configure_logging(level: Optional[str] = None) -> None:
    """Attach a RichHandler on stderr to the root logger (idempotent)."""
    global _CONFIGURED
    import config

    lvl = (level or config.LOG_LEVEL or "INFO").upper()
    root = logging.getLogger()
    root.setLevel(getattr(logging, lvl, logging.INFO))
    if _CONFIGURED:
        return
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    root.addHandler(handler)
    logging.getLogger("joblib").setLevel(logging.WARNING)
    _CONFIGURED = True
