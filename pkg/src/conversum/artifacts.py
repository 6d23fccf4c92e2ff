"""Deterministic on-disk artifacts and run manifests."""

from __future__ import annotations

import hashlib
import io
import json
import os
import subprocess
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from . import __version__

_EPOCH = (1980, 1, 1, 0, 0, 0)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_arrays(path: str | os.PathLike, arrays: dict[str, np.ndarray]) -> None:
    """``.npz`` writer with fixed zip timestamps, so equal arrays give equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), buf.getvalue())


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def version_string() -> str:
    """Package version plus ``git describe`` of the working tree when available."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        described = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        described = ""
    return f"conversum-{__version__}" + (f"-g{described}" if described else "")


def write_manifest(directory: str | os.PathLike, command: str, config: dict, wall_time: float,
                   artifacts: list[Path], extra: dict | None = None) -> Path:
    directory = Path(directory)
    files = {}
    for p in sorted(set(artifacts)):
        if p.is_file():
            files[os.path.relpath(p, directory)] = sha256_file(p)
    manifest = {
        "command": command,
        "config": config,
        "version": version_string(),
        "wall_time_s": round(wall_time, 3),
        "artifacts": files,
    }
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    write_text_atomic(path, json.dumps(manifest, sort_keys=True, indent=1, ensure_ascii=False) + "\n")
    return path
