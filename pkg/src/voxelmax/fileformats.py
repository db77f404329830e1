"""Binary container formats (little-endian throughout).

VWAM  feature/response matrix: magic, u32 version, u64 rows, u64 cols,
      u64 layout fingerprint, f32 row-major data.
VWMW  backbone weights: magic, u32 version, then per parameter
      (u32 name length, utf-8 name, u32 rank, u64 extents, f32 data).
VWBW  fitted voxel weights: magic, u32 version, u64 voxels, u64 coef_len,
      per voxel (f64 alpha, f64 cv_score, f32[coef_len] beta).
VWOB  contrast objective: magic, u32 version, target string, reference
      string, u64 length, f32 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC_MATRIX = b"VWAM"
MAGIC_BACKBONE = b"VWMW"
MAGIC_VOXEL_WEIGHTS = b"VWBW"
MAGIC_OBJECTIVE = b"VWOB"
VERSION = 1


class FormatError(ValueError):
    """Raised on a bad magic, version, or truncated record."""


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _check_header(fh, magic: bytes) -> None:
    got = _read_exact(fh, 4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


# -- VWAM ------------------------------------------------------------------


def write_matrix(path, data: np.ndarray, fingerprint: int = 0) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError(f"matrix file stores 2-D arrays, got shape {data.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC_MATRIX)
        fh.write(struct.pack("<IQQQ", VERSION, data.shape[0], data.shape[1], int(fingerprint)))
        np.ascontiguousarray(data, dtype="<f4").tofile(fh)


def read_matrix(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        _check_header(fh, MAGIC_MATRIX)
        rows, cols, fingerprint = struct.unpack("<QQQ", _read_exact(fh, 24))
        data = np.fromfile(fh, dtype="<f4", count=rows * cols)
    if data.size != rows * cols:
        raise FormatError("truncated matrix payload")
    return data.reshape(rows, cols).astype(np.float32), fingerprint


# -- VWMW ------------------------------------------------------------------


def write_backbone_weights(path, params: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC_BACKBONE)
        fh.write(struct.pack("<I", VERSION))
        for name, value in params.items():
            value = np.asarray(value)
            _write_str(fh, name)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}Q", *value.shape))
            np.ascontiguousarray(value, dtype="<f4").tofile(fh)


def read_backbone_weights(path) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    size = Path(path).stat().st_size
    with open(path, "rb") as fh:
        _check_header(fh, MAGIC_BACKBONE)
        while fh.tell() < size:
            name = _read_str(fh)
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            extents = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank))
            count = int(np.prod(extents)) if rank else 1
            data = np.fromfile(fh, dtype="<f4", count=count)
            if data.size != count:
                raise FormatError(f"truncated payload for parameter {name!r}")
            params[name] = data.reshape(extents).astype(np.float32)
    return params


# -- VWBW ------------------------------------------------------------------


def write_voxel_weights(path, betas: np.ndarray, alphas: np.ndarray, cv_scores: np.ndarray) -> None:
    betas = np.asarray(betas)
    if betas.ndim != 2:
        raise ValueError("betas must be (voxels, coef_len)")
    v, p = betas.shape
    alphas = np.asarray(alphas, dtype=np.float64)
    cv_scores = np.asarray(cv_scores, dtype=np.float64)
    if alphas.shape != (v,) or cv_scores.shape != (v,):
        raise ValueError("alphas/cv_scores must have one entry per voxel")
    with open(path, "wb") as fh:
        fh.write(MAGIC_VOXEL_WEIGHTS)
        fh.write(struct.pack("<IQQ", VERSION, v, p))
        for i in range(v):
            fh.write(struct.pack("<dd", float(alphas[i]), float(cv_scores[i])))
            np.ascontiguousarray(betas[i], dtype="<f4").tofile(fh)


def read_voxel_weights(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        _check_header(fh, MAGIC_VOXEL_WEIGHTS)
        v, p = struct.unpack("<QQ", _read_exact(fh, 16))
        betas = np.empty((v, p), dtype=np.float32)
        alphas = np.empty(v, dtype=np.float64)
        cv_scores = np.empty(v, dtype=np.float64)
        for i in range(v):
            alphas[i], cv_scores[i] = struct.unpack("<dd", _read_exact(fh, 16))
            row = np.fromfile(fh, dtype="<f4", count=p)
            if row.size != p:
                raise FormatError(f"truncated beta for voxel {i}")
            betas[i] = row
    return betas, alphas, cv_scores


# -- VWOB ------------------------------------------------------------------


def write_objective(path, weights: np.ndarray, target: str, reference: str) -> None:
    weights = np.asarray(weights)
    if weights.ndim != 1:
        raise ValueError("objective weights must be a vector")
    with open(path, "wb") as fh:
        fh.write(MAGIC_OBJECTIVE)
        fh.write(struct.pack("<I", VERSION))
        _write_str(fh, target)
        _write_str(fh, reference)
        fh.write(struct.pack("<Q", weights.size))
        np.ascontiguousarray(weights, dtype="<f4").tofile(fh)


def read_objective(path) -> tuple[np.ndarray, str, str]:
    with open(path, "rb") as fh:
        _check_header(fh, MAGIC_OBJECTIVE)
        target = _read_str(fh)
        reference = _read_str(fh)
        (n,) = struct.unpack("<Q", _read_exact(fh, 8))
        data = np.fromfile(fh, dtype="<f4", count=n)
    if data.size != n:
        raise FormatError("truncated objective payload")
    return data.astype(np.float32), target, reference
