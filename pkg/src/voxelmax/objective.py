"""Contrast objectives over encoding-model weights.

Fitted weights are collapsed across lags, z-scored within the vector,
contrasted against the mean z-scored weights of a reference set, and
normalized to unit length. The resulting direction scores an image by a
plain dot product with its feature vector; gradient ascent on that score
is what the synthesizer runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class DegenerateObjectiveError(ValueError):
    """Contrast weights collapsed to a zero or constant vector."""


class FingerprintMismatchError(ValueError):
    """Objective and feature vector come from different layouts."""


@dataclass
class ContrastObjective:
    weights: np.ndarray          # unit-norm (F,)
    target: str
    reference: str
    fingerprint: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise ValueError("objective weights must be a vector")
        norm = np.linalg.norm(self.weights)
        if not np.isfinite(norm) or norm == 0:
            raise DegenerateObjectiveError("objective weights have zero norm")
        if abs(norm - 1.0) > 1e-9:
            self.weights = self.weights / norm


def collapse_lags(beta: np.ndarray, n_lags: int) -> np.ndarray:
    """Sum equal-length lag blocks into one per-feature vector."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim == 1:
        if beta.size % n_lags:
            raise ValueError(f"vector of length {beta.size} is not {n_lags} equal lag blocks")
        return beta.reshape(n_lags, -1).sum(axis=0)
    if beta.ndim == 2:
        if beta.shape[1] % n_lags:
            raise ValueError(f"{beta.shape[1]} columns is not {n_lags} equal lag blocks")
        return beta.reshape(beta.shape[0], n_lags, -1).sum(axis=1)
    raise ValueError("collapse_lags expects a vector or a (voxels, lags*F) matrix")


def _zscore_vector(w: np.ndarray, what: str) -> np.ndarray:
    sd = w.std()  # population
    if sd == 0:
        raise DegenerateObjectiveError(f"{what} has zero variance across features")
    return (w - w.mean()) / sd


def roi_aggregate(weights: np.ndarray) -> np.ndarray:
    """Mean of per-voxel z-scored weight vectors for an ROI.

    weights: (voxels, F), already lag-collapsed. The mean of z-scored
    vectors can legitimately be (near) zero for antagonistic voxels; that
    degenerate case surfaces downstream when building the contrast.
    """
    W = np.asarray(weights, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 1:
        raise ValueError("roi_aggregate expects a non-empty (voxels, F) matrix")
    rows = np.stack([_zscore_vector(W[i], f"voxel {i} weights") for i in range(W.shape[0])])
    return rows.mean(axis=0)


def contrast_weights(beta: np.ndarray, reference: list[np.ndarray], target: str = "",
                     reference_desc: str = "", fingerprint: int | None = None) -> ContrastObjective:
    """Build the unit-norm contrast direction for one target.

    z-scores the target vector and every reference vector across features,
    subtracts the reference mean, and normalizes. The target itself is
    normally a member of the reference set, which makes the contrast
    weights of a full reference family sum to zero.
    """
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 1:
        raise ValueError("contrast_weights expects a weight vector")
    if not reference:
        raise ValueError("contrast_weights needs a non-empty reference set")
    for i, r in enumerate(reference):
        if np.asarray(r).shape != beta.shape:
            raise ValueError(f"reference vector {i} has shape {np.asarray(r).shape}, expected {beta.shape}")
    z = _zscore_vector(beta, "target weights")
    zs = np.stack([_zscore_vector(np.asarray(r, dtype=np.float64), f"reference vector {i}")
                   for i, r in enumerate(reference)])
    contrast = z - zs.mean(axis=0)
    norm = np.linalg.norm(contrast)
    if norm < 1e-12:
        raise DegenerateObjectiveError("contrast collapsed to zero (target equals reference mean)")
    return ContrastObjective(contrast / norm, target, reference_desc, fingerprint)


def predicted_contrast(features, objective: ContrastObjective, fingerprint: int | None = None):
    """Score s = objective . features; differentiable when given a Tensor.

    Layout fingerprints are compared whenever both sides carry one; a
    mismatch is a hard error because mixing layouts silently reorders the
    meaning of every weight.
    """
    if fingerprint is not None and objective.fingerprint is not None and fingerprint != objective.fingerprint:
        raise FingerprintMismatchError(
            f"feature layout {fingerprint:#018x} != objective layout {objective.fingerprint:#018x}"
        )
    n = objective.weights.size
    if isinstance(features, Tensor):
        if features.ndim != 1 or features.shape[0] != n:
            raise ValueError(f"feature vector of length {features.shape} does not match objective length {n}")
        w = Tensor(objective.weights.astype(features.dtype))
        return ad.dot(features, w)
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 1 or arr.size != n:
        raise ValueError(f"feature vector of shape {arr.shape} does not match objective length {n}")
    return float(arr @ objective.weights)
