"""Adaptive spatial downsampling and multi-layer feature assembly.

Each tapped activation with C channels and n spatial dims is pooled to a
per-dimension target size S = floor((f_max / C) ** (1/n)), clamped to
[1, extent], so every layer retains at most f_max values (whenever
f_max >= C). Pooled layers are flattened row-major and concatenated in
chain order into one feature vector whose layout is fingerprinted;
downstream consumers refuse to mix fingerprints.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import Backbone, BackboneSpec, LayerActivation, resolve_spec

DEFAULT_FEATURE_BUDGET = 5000


def target_spatial_size(channels: int, spatial_rank: int, f_max: int) -> int:
    """Per-dimension pooled size: floor((f_max / C) ** (1/n)), at least 1.

    Computed as the exact integer floor of the real-valued root so that
    perfect powers do not fall victim to floating-point rounding.
    """
    channels = int(channels)
    f_max = int(f_max)
    n = int(spatial_rank)
    if channels < 1 or f_max < 1 or n < 1:
        raise ValueError("target_spatial_size needs channels >= 1, f_max >= 1, spatial_rank >= 1")
    s = int((f_max / channels) ** (1.0 / n))
    while (s + 1) ** n * channels <= f_max:
        s += 1
    while s > 1 and s**n * channels > f_max:
        s -= 1
    return max(s, 1)


def downsample_activation(act: LayerActivation, f_max: int) -> LayerActivation:
    """Pool one activation to its budgeted size; rank-0 taps pass through.

    Differentiable: gradients flow through the average pooling. The pooled
    size is additionally clamped per dimension so pooling never upsamples.
    """
    if act.spatial_rank == 0:
        return act
    extents = act.data.shape[-act.spatial_rank :]
    channels = act.data.shape[-(act.spatial_rank + 1)]  # holds batched or not
    s = target_spatial_size(channels, act.spatial_rank, f_max)
    out_sizes = tuple(min(s, e) for e in extents)
    pooled = ad.adaptive_avg_pool(act.data, out_sizes)
    return LayerActivation(act.name, pooled, act.spatial_rank)


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    channels: int
    extents: tuple[int, ...]

    @property
    def length(self) -> int:
        return self.channels * int(np.prod(self.extents)) if self.extents else self.channels


@dataclass(frozen=True)
class FeatureLayout:
    entries: tuple[LayoutEntry, ...]

    @property
    def total(self) -> int:
        return sum(e.length for e in self.entries)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, pos = [], 0
        for e in self.entries:
            out.append(pos)
            pos += e.length
        return tuple(out)

    @property
    def fingerprint(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        for e in self.entries:
            h.update(f"{e.name}:{e.channels}:{','.join(map(str, e.extents))};".encode())
        return int.from_bytes(h.digest(), "little")

    def segment(self, name: str) -> slice:
        for e, off in zip(self.entries, self.offsets):
            if e.name == name:
                return slice(off, off + e.length)
        raise KeyError(f"no layer segment named {name!r}")


def concat_features(acts: list[LayerActivation]) -> tuple[Tensor, FeatureLayout]:
    """Flatten each pooled activation row-major and concatenate in order.

    Accepts single-stimulus activations (C, *sp) producing an (F,) vector,
    or batched ones (N, C, *sp) producing (N, F).
    """
    if not acts:
        raise ValueError("concat_features: empty activation list")
    batched = acts[0].data.ndim == acts[0].spatial_rank + 2
    entries = []
    parts = []
    for act in acts:
        shape = act.data.shape[1:] if batched else act.data.shape
        if act.spatial_rank:
            channels, extents = int(shape[0]), tuple(int(e) for e in shape[1:])
        else:
            channels, extents = int(np.prod(shape)), ()
        entries.append(LayoutEntry(act.name, channels, extents))
        if batched:
            parts.append(ad.reshape(act.data, (act.data.shape[0], int(np.prod(shape)))))
        else:
            parts.append(ad.reshape(act.data, (int(np.prod(shape)),)))
    vec = ad.concat(parts, axis=1 if batched else 0)
    return vec, FeatureLayout(tuple(entries))


def temporal_average(features: np.ndarray, frames_per_sample: int) -> np.ndarray:
    """Average consecutive frame features into sample features.

    A trailing remainder that does not fill a window is dropped with a
    warning rather than silently averaged short.
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("temporal_average expects a non-empty (frames, F) matrix")
    w = int(frames_per_sample)
    if w < 1:
        raise ValueError("frames_per_sample must be >= 1")
    n = features.shape[0]
    m, r = divmod(n, w)
    if m == 0:
        raise ValueError(f"temporal_average: {n} frames cannot fill a window of {w}")
    if r:
        warnings.warn(f"temporal_average: dropping {r} trailing frames that do not fill a window")
    return features[: m * w].reshape(m, w, features.shape[1]).mean(axis=1)


class FeatureExtractor(BaseEstimator, TransformerMixin):
    """Backbone -> pooled multi-layer feature matrix, sklearn-style.

    Parameters
    ----------
    backbone : builtin profile name, JSON path, BackboneSpec, or Backbone.
    f_max : per-layer feature budget.
    frames_per_sample : consecutive frames averaged into one sample row.
    batch_size : frames run through the backbone per forward pass.
    dtype : numpy float dtype for the forward pass.
    """

    def __init__(self, backbone="tiny", f_max=DEFAULT_FEATURE_BUDGET, frames_per_sample=1,
                 batch_size=32, dtype=np.float32):
        self.backbone = backbone
        self.f_max = f_max
        self.frames_per_sample = frames_per_sample
        self.batch_size = batch_size
        self.dtype = dtype

    def fit(self, X=None, y=None):
        """Build the backbone and probe the pooled feature layout."""
        if isinstance(self.backbone, Backbone):
            self.backbone_ = self.backbone
        else:
            spec = resolve_spec(self.backbone)
            self.backbone_ = Backbone(spec, dtype=self.dtype)
        probe = np.zeros((self.backbone_.spec.input_size,) * 2 + (3,))
        _, layout = self._single(probe, validate=True)
        self.layout_ = layout
        self.n_features_ = layout.total
        self.fingerprint_ = layout.fingerprint
        return self

    def _require_fitted(self):
        if not hasattr(self, "backbone_"):
            raise RuntimeError("FeatureExtractor is not fitted; call fit() first")

    def _single(self, image, validate: bool) -> tuple[Tensor, FeatureLayout]:
        acts = self.backbone_.extract(image, validate=validate)
        pooled = [downsample_activation(a, self.f_max) for a in acts]
        return concat_features(pooled)

    def features_of(self, image, validate: bool = False) -> Tensor:
        """Differentiable feature vector for one stimulus (the synthesis path)."""
        self._require_fitted()
        vec, layout = self._single(image, validate=validate)
        if layout.fingerprint != self.fingerprint_:
            raise RuntimeError("feature layout changed between fit and features_of")
        return vec

    def transform(self, frames) -> np.ndarray:
        """Feature matrix for a frame sequence, temporally averaged into samples."""
        self._require_fitted()
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 3:
            frames = frames[None]
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"transform expects (n, H, W, 3) frames, got {frames.shape}")
        n = frames.shape[0]
        rows = np.empty((n, self.n_features_), dtype=np.float32)
        bs = int(self.batch_size)
        for lo in range(0, n, bs):
            hi = min(lo + bs, n)
            pre = [self.backbone_.preprocess(frames[i]) for i in range(lo, hi)]
            batch = Tensor(np.stack([p.data for p in pre]))
            tapped = self.backbone_.forward(batch)
            acts = [
                LayerActivation(info.name, tapped[info.name], info.spatial_rank)
                for info in self.backbone_.tap_infos
            ]
            pooled = [downsample_activation(a, self.f_max) for a in acts]
            vec, layout = concat_features(pooled)
            if layout.fingerprint != self.fingerprint_:
                raise RuntimeError("feature layout changed between fit and transform")
            rows[lo:hi] = vec.data.astype(np.float32)
        if self.frames_per_sample != 1:
            rows = temporal_average(rows, self.frames_per_sample).astype(np.float32)
        return rows
