"""
Append-only JSONL activity log: one event per CLI command.
"""
from __future__ import annotations
import json
import os
from datetime import datetime, timezone
from typing import Any, Dict, Optional

import config


def log_activity(event: Dict[str, Any], path: Optional[str] = None) -> None:
    """Append one event; never raises (the log is advisory)."""
    try:
        event = dict(event or {})
        event.setdefault("ts", datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"))
        target = path or config.ACTIVITY_LOG
        os.makedirs(os.path.dirname(os.path.abspath(target)), exist_ok=True)
        with open(target, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, ensure_ascii=False, default=str) + "\n")
    except Exception:
        pass
