"""Checkpoint files: a text manifest next to a little-endian binary blob.

Manifest layout::

    trajcast-checkpoint
    version = 1
    blob = <file name of the blob, relative to the manifest>
    dtype = <f4
    [config]
    key = value
    [arrays]
    name offset count dim0,dim1,...
    [state]
    key = value
    [metrics]
    name = value
    [log]
    free-form lines

Offsets and counts are in elements of ``dtype``. Files are written to a
temporary name and renamed into place. No timestamps or absolute paths are
recorded, so identical runs produce identical bytes.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = "trajcast-checkpoint"
VERSION = 1
SECTIONS = ("config", "arrays", "state", "metrics", "log")


@dataclass
class Checkpoint:
    config: dict[str, str]
    arrays: dict[str, np.ndarray]
    state: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)
    log: list[str] = field(default_factory=list)
    dtype: str = "<f4"

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not k.startswith("opt.")}


def quantize(a: np.ndarray, dtype: str) -> np.ndarray:
    """Round-trip ``a`` through the storage dtype, returning float64."""
    return np.asarray(a, dtype=np.float64).astype(dtype).astype(np.float64)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def blob_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".bin")


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    blob = blob_path(path)
    dt = np.dtype(ckpt.dtype)
    chunks, index, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        if any(c.isspace() for c in name):
            raise DataError(f"array name {name!r} contains whitespace")
        a = np.asarray(ckpt.arrays[name]).astype(dt, order="C")
        chunks.append(a.tobytes())
        shape = ",".join(map(str, a.shape)) or "-"
        index.append(f"{name} {offset} {a.size} {shape}")
        offset += a.size
    lines = [MAGIC, f"version = {VERSION}", f"blob = {blob.name}", f"dtype = {dt.str}"]
    lines.append("[config]")
    lines += [f"{k} = {v}" for k, v in ckpt.config.items()]
    lines.append("[arrays]")
    lines += index
    lines.append("[state]")
    lines += [f"{k} = {v}" for k, v in ckpt.state.items()]
    lines.append("[metrics]")
    lines += [f"{k} = {float(v)!r}" for k, v in ckpt.metrics.items()]
    lines.append("[log]")
    lines += list(ckpt.log)
    _atomic_write(blob, b"".join(chunks))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())
    return path


def _kv(line: str, path, lineno) -> tuple[str, str]:
    if "=" not in line:
        raise DataError("expected 'key = value'", path, lineno)
    k, v = line.split("=", 1)
    return k.strip(), v.strip()


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc.strerror}", path) from None
    except UnicodeDecodeError:
        raise DataError("not a checkpoint manifest", path) from None
    if not lines or lines[0] != MAGIC:
        raise DataError("not a checkpoint manifest", path, 1)
    header, section = {}, None
    body: dict[str, list[tuple[int, str]]] = {s: [] for s in SECTIONS}
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("[") and line.endswith("]") and line[1:-1] in SECTIONS:
            section = line[1:-1]
        elif section is None:
            k, v = _kv(line, path, lineno)
            header[k] = v
        elif section == "log" or line.strip():
            body[section].append((lineno, line))
    if "version" not in header:
        raise DataError("checkpoint has no version field", path)
    if header["version"] != str(VERSION):
        raise DataError(f"unsupported checkpoint version {header['version']}", path)
    dt = np.dtype(header.get("dtype", "<f4"))
    blob = path.parent / header.get("blob", blob_path(path).name)
    try:
        raw = np.frombuffer(blob.read_bytes(), dtype=dt)
    except OSError as exc:
        raise DataError(f"cannot read blob: {exc.strerror}", blob) from None
    arrays = {}
    for lineno, line in body["arrays"]:
        parts = line.split()
        if len(parts) != 4:
            raise DataError("expected 'name offset count shape'", path, lineno)
        name, off, cnt = parts[0], int(parts[1]), int(parts[2])
        shape = () if parts[3] == "-" else tuple(int(s) for s in parts[3].split(","))
        if off + cnt > raw.size or int(np.prod(shape)) != cnt:
            raise DataError(f"array {name!r} does not fit the blob", path, lineno)
        arrays[name] = raw[off:off + cnt].astype(np.float64).reshape(shape)
    return Checkpoint(
        config=dict(_kv(l, path, n) for n, l in body["config"]),
        arrays=arrays,
        state=dict(_kv(l, path, n) for n, l in body["state"]),
        metrics={k: float(v) for k, v in (_kv(l, path, n) for n, l in body["metrics"])},
        log=[l for _, l in body["log"]],
        dtype=dt.str,
    )
