"""Append-only run manifests for generated artifact directories.

Each artifact directory holds exactly one ``manifest.jsonl``; every run
appends one JSON record capturing the subcommand, the fully resolved
configuration, seeds, checkpoint hashes, stage timings, and evaluation
counters so results stay reproducible and auditable.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.jsonl"


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def new_record(subcommand: str, config: dict, seeds: dict = None,
               checkpoints: dict = None, timings: dict = None,
               counters: dict = None) -> dict:
    """Assemble one manifest record; checkpoint values are paths to hash."""
    return {
        "subcommand": subcommand,
        "tool_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "config": _jsonable(config),
        "seeds": _jsonable(seeds or {}),
        "checkpoint_hashes": {name: file_sha256(p) for name, p in (checkpoints or {}).items()},
        "timings_s": _jsonable(timings or {}),
        "counters": _jsonable(counters or {}),
    }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "item"):  # numpy scalars
        return value.item()
    return value


def append_record(directory, record: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / MANIFEST_NAME
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_manifest(directory) -> list:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
