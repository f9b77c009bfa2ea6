"""Run provenance: deterministic CSV/JSON writers and the run manifest.

Every CLI command records the resolved configuration, master seed, tool
version and a content digest of each output file, so a run can be reproduced
byte-for-byte from its manifest alone.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from . import __version__

MANIFEST_NAME = "manifest.json"


def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, float):
        if v != v:  # NaN marks a gap
            return ""
        return repr(v)
    return str(v)


def write_csv(path: str | Path, header: Iterable[str], rows: Iterable[Iterable[Any]]) -> Path:
    """Write a headered, LF-terminated CSV with round-trip float formatting."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_value(v) for v in row) + "\n")
    return path


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    arguments: dict
    config: dict
    master_seed: int
    tool_version: str = __version__
    outputs: dict = field(default_factory=dict)
    duration_s: float = 0.0

    def add_output(self, path: str | Path) -> None:
        path = Path(path)
        self.outputs[path.name] = sha256_file(path)

    def write(self, out_dir: str | Path) -> Path:
        return write_json(Path(out_dir) / MANIFEST_NAME, {
            "command": self.command,
            "arguments": self.arguments,
            "config": self.config,
            "master_seed": self.master_seed,
            "tool_version": self.tool_version,
            "outputs": self.outputs,
            "duration_s": self.duration_s,
        })


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
