from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, is_dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Optional


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _plain(value: Any) -> Any:
    if is_dataclass(value) and not isinstance(value, type):
        return _plain(asdict(value))
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, float) and value in (float("inf"), float("-inf")):
        return str(value)
    return value


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict[str, Any]
    seeds: dict[str, int] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    exit_code: Optional[int] = None
    notes: list[str] = field(default_factory=list)

    def finish(self, exit_code: int) -> None:
        self.exit_code = exit_code
        self.finished_at = _now()

    def to_dict(self) -> dict[str, Any]:
        return _plain(asdict(self))

    def write(self, path: Optional[Path] = None, *, out_dir: str = "outputs") -> Path:
        if path is None:
            stamp = self.started_at.replace(":", "").replace("-", "").replace("+0000", "Z")
            path = Path(out_dir) / "manifests" / f"{self.command}-{stamp}.json"
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
