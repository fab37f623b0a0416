"""FSEQ binary clip files and plain-text dataset manifests.

Layout (little-endian): magic ``FSQ1``, version u16, fps f32, T u32, D u32,
coupling u8, 3 reserved bytes, then T*D f32 for agent A followed by T*D f32
for agent B, row-major.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .sequences import N_FEATURES, Coupling, DyadClip, FlameSequence

MAGIC = b"FSQ1"
VERSION = 1
_HEADER = struct.Struct("<4sHfIIB3x")


class FseqError(ValueError):
    pass


class BadMagicError(FseqError):
    pass


class VersionMismatchError(FseqError):
    pass


class TruncatedPayloadError(FseqError):
    pass


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_fseq(clip: DyadClip) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, clip.fps, clip.T, N_FEATURES, int(clip.coupling))
    a = np.ascontiguousarray(clip.a.frames, dtype="<f4")
    b = np.ascontiguousarray(clip.b.frames, dtype="<f4")
    return header + a.tobytes() + b.tobytes()


def decode_fseq(raw: bytes, session_id: str = "") -> DyadClip:
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError("truncated header")
    _, version, fps, T, D, coupling = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, reader supports {VERSION}")
    if D != N_FEATURES:
        raise FseqError(f"unsupported feature count {D}")
    n = T * D * 4
    if len(raw) < _HEADER.size + 2 * n:
        raise TruncatedPayloadError(f"truncated payload: need {_HEADER.size + 2 * n} bytes, have {len(raw)}")
    body = np.frombuffer(raw, dtype="<f4", count=2 * T * D, offset=_HEADER.size)
    a = body[: T * D].reshape(T, D).astype(np.float32)
    b = body[T * D :].reshape(T, D).astype(np.float32)
    return DyadClip(FlameSequence(a, float(fps)), FlameSequence(b, float(fps)), session_id, 0, Coupling(coupling))


def write_fseq(path, clip: DyadClip) -> None:
    atomic_write_bytes(path, encode_fseq(clip))


def read_fseq(path) -> DyadClip:
    """Read a clip; ``session_id`` is the file stem (the format does not store it)."""
    path = Path(path)
    return decode_fseq(path.read_bytes(), session_id=path.stem)


def write_manifest(path, fseq_paths) -> None:
    lines = "".join(f"{p}\n" for p in fseq_paths)
    atomic_write_bytes(path, lines.encode())


def read_manifest(path) -> list[Path]:
    """Paths listed one per line; relative entries resolve against the manifest's folder."""
    path = Path(path)
    base = path.parent
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            p = Path(line)
            out.append(p if p.is_absolute() else base / p)
    return out


def load_dataset(root) -> list[DyadClip]:
    """Load every session of a dataset directory (``manifest.txt``) or a single manifest file."""
    root = Path(root)
    manifest = root / "manifest.txt" if root.is_dir() else root
    return [read_fseq(p) for p in read_manifest(manifest)]
