"""Deterministic artifact serialization and atomic output staging.

Artifacts must be byte-identical across runs with identical inputs, so
floats are serialized with repr (shortest round-trip form), JSON keys are
sorted, and nothing time- or host-dependent is ever written.  Writes are
staged in a temporary sibling directory and moved into place only after
every artifact has been produced, so a failed run leaves no partial
files in the target directory.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

__all__ = ["json_bytes", "csv_bytes", "write_artifacts"]


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):  # before int: bool subclasses int
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


class _ReprFloat(float):
    def __repr__(self):  # shortest round-trip decimal, deterministic
        return float.__repr__(self)


def json_bytes(payload) -> bytes:
    def default(o):
        raise TypeError(f"not serializable: {o!r}")

    cooked = _jsonable(payload)
    return (json.dumps(cooked, sort_keys=True, indent=2, default=default) + "\n").encode()


def csv_bytes(header: Iterable[str], rows: Iterable[Iterable]) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (bool, np.bool_)):
                cells.append("true" if v else "false")
            elif isinstance(v, (float, np.floating)):
                cells.append(repr(float(v)))
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return ("\n".join(lines) + "\n").encode()


def write_artifacts(target_dir: str | Path, files: Mapping[str, bytes | str]) -> Path:
    """Stage all files, then move them into target_dir (atomic per run)."""
    target = Path(target_dir)
    target.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=target.parent))
    try:
        for name, payload in files.items():
            data = payload.encode() if isinstance(payload, str) else payload
            (stage / name).parent.mkdir(parents=True, exist_ok=True)
            with open(stage / name, "wb") as fh:
                fh.write(data)
        target.mkdir(parents=True, exist_ok=True)
        for name in files:
            os.replace(stage / name, target / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return target
