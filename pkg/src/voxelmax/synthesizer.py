"""Gradient-ascent image synthesis in a Fourier-domain parameterization.

The optimized state is one complex coefficient array per color channel,
stored pre-scaled by 1/max(freq_norm, 1/side) so every frequency sees a
comparable effective learning rate. Rendering is |IDFT2| per channel,
optionally followed by a fixed 3x3 color mixing matrix; optimization is
unconstrained and the final deliverable is clamped to [0, 1].

Each iteration renders, augments (random pad-crop, small rotation,
random resized crop, second pad-crop, all differentiable and all driven
by a counter-based RNG keyed on (seed, iteration)), preprocesses,
extracts pooled features, and takes an Adam step on the negated
predicted contrast.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .objective import ContrastObjective, predicted_contrast

GRAY_INIT_LEVEL = 140.0 / 255.0
BLACK_NOISE_STD = 0.01


class SynthesisError(RuntimeError):
    """Optimization aborted (non-finite loss)."""


@dataclass
class SynthesisConfig:
    """Knobs for one synthesis run. Defaults are full-scale values;
    desk() returns the small test-scale variant."""

    iterations: int = 2500
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init: str = "gray140"            # or "black_noise"
    canvas: int = 500
    seed: int = 0
    dtype: type = np.float32
    color_matrix: np.ndarray | None = None
    # augmentation stack, applied in this order
    crop1_pad: int = 5
    rotate_degrees: float = 5.0
    scale_range: tuple[float, float] = (0.95, 1.05)
    crop2_pad: int = 3
    enable_crop1: bool = True
    enable_rotate: bool = True
    enable_resized_crop: bool = True
    enable_crop2: bool = True

    @classmethod
    def desk(cls, **overrides) -> "SynthesisConfig":
        base = dict(iterations=256, canvas=128)
        base.update(overrides)
        return cls(**base)

    def without_augmentation(self) -> "SynthesisConfig":
        return replace(self, enable_crop1=False, enable_rotate=False,
                       enable_resized_crop=False, enable_crop2=False)


# ---------------------------------------------------------------------------
# Fourier image state


def frequency_scale(h: int, w: int) -> np.ndarray:
    """Per-coefficient scale 1/max(||freq||, 1/side)."""
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    f = np.sqrt(fy * fy + fx * fx)
    return 1.0 / np.maximum(f, 1.0 / max(h, w))


class FourierImage:
    """Per-channel complex spectrum with scaled real parameter storage."""

    def __init__(self, param_re: Tensor, param_im: Tensor, color_matrix: np.ndarray | None = None):
        if param_re.shape != param_im.shape or param_re.ndim != 3 or param_re.shape[0] != 3:
            raise ValueError("FourierImage parameters must be matching (3, H, W) tensors")
        self.param_re = param_re
        self.param_im = param_im
        self.size = param_re.shape[-2:]
        self._scale = frequency_scale(*self.size).astype(param_re.dtype)
        self.color_matrix = None
        if color_matrix is not None:
            self.color_matrix = _check_color_matrix(color_matrix)

    # -- constructors --------------------------------------------------------

    @classmethod
    def from_coefficients(cls, coeffs: np.ndarray, color_matrix: np.ndarray | None = None,
                          dtype=np.float32) -> "FourierImage":
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.ndim != 3 or coeffs.shape[0] != 3:
            raise ValueError("coefficients must be (3, H, W) complex")
        scale = frequency_scale(*coeffs.shape[-2:])
        re = Tensor((coeffs.real / scale).astype(dtype), requires_grad=True)
        im = Tensor((coeffs.imag / scale).astype(dtype), requires_grad=True)
        return cls(re, im, color_matrix)

    @classmethod
    def init(cls, mode: str, size: int, seed: int = 0, dtype=np.float32,
             color_matrix: np.ndarray | None = None) -> "FourierImage":
        h = w = int(size)
        if mode == "gray140":
            raw = np.full(3, GRAY_INIT_LEVEL)
            if color_matrix is not None:
                raw = np.linalg.solve(_check_color_matrix(color_matrix), raw)
            coeffs = np.zeros((3, h, w), dtype=np.complex128)
            coeffs[:, 0, 0] = raw * h * w  # DC only: |IDFT| is the constant itself
        elif mode == "black_noise":
            rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
            noise = rng.normal(0.0, BLACK_NOISE_STD, size=(3, h, w))
            coeffs = np.fft.fft2(noise, axes=(-2, -1))  # renders |noise|
        else:
            raise ValueError(f"unknown init mode {mode!r}")
        return cls.from_coefficients(coeffs, color_matrix, dtype)

    # -- rendering -----------------------------------------------------------

    def coefficients(self) -> np.ndarray:
        return (self.param_re.data + 1j * self.param_im.data) * self._scale

    def render(self) -> Tensor:
        """Differentiable (3, H, W) image: |IDFT2| then optional color mixing."""
        scale = Tensor(self._scale)
        re = ad.mul(self.param_re, scale)
        im = ad.mul(self.param_im, scale)
        mag = ad.inverse_fft2_magnitude(re, im)
        if self.color_matrix is None:
            return mag
        h, w = self.size
        mixed = ad.matmul(Tensor(self.color_matrix.astype(mag.dtype)), ad.reshape(mag, (3, h * w)))
        return ad.reshape(mixed, (3, h, w))

    def render_array(self) -> np.ndarray:
        """Final deliverable: rendered pixels clamped to [0, 1], (H, W, 3)."""
        img = self.render().data
        return np.clip(img, 0.0, 1.0).transpose(1, 2, 0)

    @property
    def parameters(self) -> list[Tensor]:
        return [self.param_re, self.param_im]


def _check_color_matrix(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError("color matrix must be 3x3")
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("color matrix is singular")
    return m


def decorrelate_colors(image: FourierImage, matrix) -> FourierImage:
    """Attach a color mixing matrix; optimization stays in decorrelated space."""
    out = FourierImage(image.param_re, image.param_im, _check_color_matrix(matrix))
    return out


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentParams:
    crop1_offset: tuple[int, int]
    angle_degrees: float
    scale: float
    resized_center_jitter: tuple[float, float]
    crop2_offset: tuple[int, int]


def augment_params(seed: int, iteration: int, cfg: SynthesisConfig) -> AugmentParams:
    """Draws for one iteration from a counter-based stream keyed (seed, iteration).

    All parameters are always drawn, whether or not their stage is
    enabled, so toggling a stage never reshuffles the rest of the run.
    """
    key = np.array([seed, iteration], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    c1 = tuple(int(x) for x in rng.integers(0, 2 * cfg.crop1_pad + 1, size=2))
    angle = float(rng.uniform(-cfg.rotate_degrees, cfg.rotate_degrees))
    scale = float(rng.uniform(*cfg.scale_range))
    jitter = tuple(float(x) for x in rng.uniform(0.0, 1.0, size=2))
    c2 = tuple(int(x) for x in rng.integers(0, 2 * cfg.crop2_pad + 1, size=2))
    return AugmentParams(c1, angle, scale, jitter, c2)


def _pad_crop(x: Tensor, pad: int, offset: tuple[int, int]) -> Tensor:
    h, w = x.shape[-2:]
    return ad.crop2d(ad.pad2d(x, pad), offset[0], offset[1], h, w)


def _rotate(x: Tensor, angle_degrees: float) -> Tensor:
    h, w = x.shape[-2:]
    t = np.deg2rad(angle_degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    # sample source coordinates: rotate the grid by -angle about the center
    gy = cy + np.cos(t) * (yy - cy) - np.sin(t) * (xx - cx)
    gx = cx + np.sin(t) * (yy - cy) + np.cos(t) * (xx - cx)
    return ad.bilinear_sample(x, gy, gx)


def _resized_crop(x: Tensor, scale: float, jitter: tuple[float, float]) -> Tensor:
    h, w = x.shape[-2:]
    ch, cw = h * scale, w * scale  # 1:1 aspect window, may exceed the image
    top = (h - ch) * jitter[0]
    left = (w - cw) * jitter[1]
    ys = top + np.linspace(0.0, ch - 1.0, h)
    xs = left + np.linspace(0.0, cw - 1.0, w)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return ad.bilinear_sample(x, gy, gx)


def apply_augmentations(x: Tensor, params: AugmentParams, cfg: SynthesisConfig) -> Tensor:
    if cfg.enable_crop1:
        x = _pad_crop(x, cfg.crop1_pad, params.crop1_offset)
    if cfg.enable_rotate:
        x = _rotate(x, params.angle_degrees)
    if cfg.enable_resized_crop:
        x = _resized_crop(x, params.scale, params.resized_center_jitter)
    if cfg.enable_crop2:
        x = _pad_crop(x, cfg.crop2_pad, params.crop2_offset)
    return x


def augment(x: Tensor, seed: int, iteration: int, cfg: SynthesisConfig) -> Tensor:
    return apply_augmentations(x, augment_params(seed, iteration, cfg), cfg)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard Adam with bias correction; params are rebound, not mutated."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = self.v[i] / (1 - b2**self.t)
            p.data = p.data - (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
            p.grad = None


# ---------------------------------------------------------------------------
# the loop


@dataclass
class SynthesisTrace:
    scores: np.ndarray
    image: np.ndarray
    config: SynthesisConfig
    wall_seconds: float
    objective_target: str = ""

    def summary(self) -> dict:
        tail = max(1, int(0.1 * self.scores.size))
        return {
            "iterations": int(self.scores.size),
            "first_score": float(self.scores[0]),
            "final_score": float(self.scores[-1]),
            "best_score": float(self.scores.max()),
            "tail_mean_score": float(self.scores[-tail:].mean()),
            "wall_seconds": float(self.wall_seconds),
        }


def synthesize(objective: ContrastObjective, extractor, cfg: SynthesisConfig | None = None
               ) -> tuple[np.ndarray, SynthesisTrace]:
    """Maximize the predicted contrast of one objective by gradient ascent.

    extractor is a fitted FeatureExtractor; its layout must match the
    objective. Returns the clamped (H, W, 3) image and a per-iteration
    score trace. Only the Fourier coefficients change; the backbone and
    the objective are never written to.
    """
    cfg = cfg or SynthesisConfig()
    extractor._require_fitted()
    if objective.weights.size != extractor.n_features_:
        raise ValueError(
            f"objective length {objective.weights.size} != feature length {extractor.n_features_}"
        )
    if objective.fingerprint is not None and objective.fingerprint != extractor.fingerprint_:
        raise ValueError("objective fingerprint does not match the extractor layout")

    state = FourierImage.init(cfg.init, cfg.canvas, seed=cfg.seed, dtype=cfg.dtype,
                              color_matrix=cfg.color_matrix)
    opt = Adam(state.parameters, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    scores = np.empty(cfg.iterations, dtype=np.float64)
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        try:
            img = state.render()
            img = augment(img, cfg.seed, it, cfg)
            feats = extractor.features_of(img)
            s = predicted_contrast(feats, objective, fingerprint=extractor.fingerprint_)
            value = float(s.data)
            if not np.isfinite(value):
                raise SynthesisError(f"non-finite loss at iteration {it}")
            scores[it] = value
            loss = ad.neg(s)
            loss.backward()
            opt.step()
        except FloatingPointError as e:
            raise SynthesisError(f"non-finite loss at iteration {it}: {e}") from e
    wall = time.perf_counter() - t0
    image = state.render_array()
    trace = SynthesisTrace(scores, image, cfg, wall, objective.target)
    return image, trace


# ---------------------------------------------------------------------------
# output


def save_png(image: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def write_sidecar(trace: SynthesisTrace, path) -> None:
    """Plain-text run record next to a rendered image."""
    cfg = trace.config
    lines = [f"target = {trace.objective_target}"]
    for k, v in trace.summary().items():
        lines.append(f"{k} = {v}")
    for name in ("iterations", "learning_rate", "init", "canvas", "seed",
                 "crop1_pad", "rotate_degrees", "scale_range", "crop2_pad"):
        lines.append(f"config.{name} = {getattr(cfg, name)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
