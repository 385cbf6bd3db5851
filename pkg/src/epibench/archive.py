"""Forecast archive: canonical submission files under <root>/<method_id>/<origin>.csv.

Bundled runs write canonical bytes through the submission codec; imported
submissions are stored untouched. A small method.json sidecar per method
directory records the descriptor so evaluation can label AI/ML vs
human-expert rows; methods without a sidecar default to human_expert.
"""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path

from .dates import parse_date
from .forecast import (
    CATEGORY_HUMAN,
    ForecastSet,
    MethodDescriptor,
    parse_submission,
    write_submission,
)

METHOD_SIDECAR = "method.json"


class ArchiveError(Exception):
    """Base error for archive access."""


class ArchiveIncomplete(ArchiveError):
    """A required forecast file is missing from the archive."""


class ForecastArchive:
    def __init__(self, root: Path | str):
        self.root = Path(root)

    def path(self, method_id: str, origin: dt.date) -> Path:
        return self.root / method_id / f"{origin.isoformat()}.csv"

    def has(self, method_id: str, origin: dt.date) -> bool:
        return self.path(method_id, origin).is_file()

    def write(self, fs: ForecastSet) -> Path:
        path = self.path(fs.method.method_id, fs.origin)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_submission(fs))
        self._write_sidecar(fs.method)
        return path

    def import_submission(self, data: bytes, method: MethodDescriptor) -> Path:
        """Store an externally produced submission file byte-for-byte."""
        fs = parse_submission(data, method=method)  # validates before storing
        path = self.path(method.method_id, fs.origin)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self._write_sidecar(method)
        return path

    def load(self, method_id: str, origin: dt.date) -> ForecastSet:
        path = self.path(method_id, origin)
        if not path.is_file():
            raise ArchiveIncomplete(f"missing forecast {method_id} @ {origin} ({path})")
        return parse_submission(path.read_bytes(), method=self.descriptor(method_id))

    def methods(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def origins(self, method_id: str) -> list[dt.date]:
        mdir = self.root / method_id
        if not mdir.is_dir():
            return []
        return sorted(parse_date(p.stem) for p in mdir.glob("*.csv"))

    def descriptor(self, method_id: str) -> MethodDescriptor:
        sidecar = self.root / method_id / METHOD_SIDECAR
        if sidecar.is_file():
            raw = json.loads(sidecar.read_text(encoding="utf-8"))
            return MethodDescriptor(
                method_id=raw["method_id"],
                category=raw["category"],
                decisions=tuple((k, v) for k, v in sorted(raw.get("decisions", {}).items())),
            )
        return MethodDescriptor(method_id=method_id, category=CATEGORY_HUMAN)

    def _write_sidecar(self, method: MethodDescriptor) -> None:
        sidecar = self.root / method.method_id / METHOD_SIDECAR
        payload = {
            "method_id": method.method_id,
            "category": method.category,
            "decisions": dict(method.decisions),
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        if not (sidecar.is_file() and sidecar.read_text(encoding="utf-8") == text):
            sidecar.write_text(text, encoding="utf-8")
