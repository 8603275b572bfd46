"""Run bookkeeping: atomic file writes, digests, and run manifests."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Provenance record emitted by every command that writes artifacts."""

    command: str
    config_digest: str = ""
    dataset_digest: str = ""
    seed: int = 0
    code_version: str = __version__
    started_utc: str = ""
    finished_utc: str = ""
    notes: dict = field(default_factory=dict)

    def start(self) -> "RunManifest":
        self.started_utc = _utc_now()
        return self

    def finish(self) -> "RunManifest":
        self.finished_utc = _utc_now()
        return self

    def write(self, path: str | Path) -> None:
        payload = {
            "command": self.command,
            "config_digest": self.config_digest,
            "dataset_digest": self.dataset_digest,
            "seed": self.seed,
            "code_version": self.code_version,
            "started_utc": self.started_utc,
            "finished_utc": self.finished_utc,
            "notes": self.notes,
        }
        atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
