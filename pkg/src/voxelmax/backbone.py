"""Differentiable vision backbones with named activation taps.

A BackboneSpec declares an operator chain, which stages are tapped, the
preprocessing geometry (input size, channel mean/std), and where weights
come from (a seed or a weight file). The shipped runnable reference is a
small seeded-random CNN; a 21-tap Inception V3 profile ships as a
configuration schema (declared tap shapes, weight-file loader) without a
runnable block implementation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import fileformats
from .autodiff import Tensor

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_RUNNABLE_KINDS = {"conv", "relu", "maxpool", "adaptive_avg_pool", "flatten", "linear"}


@dataclass
class LayerActivation:
    """One tapped activation for a single stimulus: (C, *spatial) or (F,)."""

    name: str
    data: Tensor
    spatial_rank: int

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True)
class TapInfo:
    name: str
    channels: int
    spatial_rank: int
    shape: tuple[int, ...]


@dataclass
class StageDef:
    kind: str
    name: str
    params: dict = field(default_factory=dict)
    tap: bool = False


@dataclass
class BackboneSpec:
    name: str
    input_size: int
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    stages: list[StageDef]
    weight_seed: int | None = None
    weight_file: str | None = None

    @property
    def tap_names(self) -> list[str]:
        return [s.name for s in self.stages if s.tap]

    def is_runnable(self) -> bool:
        return all(s.kind in _RUNNABLE_KINDS for s in self.stages)

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "input_size": self.input_size,
            "mean": list(self.mean),
            "std": list(self.std),
            "weight_seed": self.weight_seed,
            "weight_file": self.weight_file,
            "stages": [
                {"kind": s.kind, "name": s.name, "params": s.params, "tap": s.tap}
                for s in self.stages
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "BackboneSpec":
        doc = json.loads(text)
        stages = [
            StageDef(kind=s["kind"], name=s["name"], params=s.get("params", {}), tap=s.get("tap", False))
            for s in doc["stages"]
        ]
        return cls(
            name=doc["name"],
            input_size=int(doc["input_size"]),
            mean=tuple(doc["mean"]),
            std=tuple(doc["std"]),
            stages=stages,
            weight_seed=doc.get("weight_seed"),
            weight_file=doc.get("weight_file"),
        )


# ---------------------------------------------------------------------------
# built-in profiles


def tiny_cnn_spec(weight_seed: int = 97) -> BackboneSpec:
    """Reference CNN: 64x64x3 input, seeded-random weights, 7 taps."""
    stages = [
        StageDef("conv", "conv1", {"out_channels": 16, "kernel": 3, "stride": 2, "padding": 0}, tap=True),
        StageDef("relu", "relu1", tap=True),
        StageDef("conv", "conv2", {"out_channels": 32, "kernel": 3, "stride": 2, "padding": 0}),
        StageDef("relu", "relu2", tap=True),
        StageDef("maxpool", "pool1", {"kernel": 2}, tap=True),
        StageDef("conv", "conv3", {"out_channels": 64, "kernel": 3, "stride": 1, "padding": 0}),
        StageDef("relu", "relu3", tap=True),
        StageDef("adaptive_avg_pool", "gap", {"out": 1}, tap=True),
        StageDef("flatten", "flatten"),
        StageDef("linear", "fc", {"out_features": 64}, tap=True),
    ]
    return BackboneSpec(
        name="tiny",
        input_size=64,
        mean=(0.5, 0.5, 0.5),
        std=(0.25, 0.25, 0.25),
        stages=stages,
        weight_seed=weight_seed,
    )


def linear_probe_spec(input_size: int = 64, out_channels: int = 4, weight_seed: int = 13) -> BackboneSpec:
    """Single 1x1-conv tap with identity preprocessing; analytic-gradient probe."""
    stages = [
        StageDef("conv", "probe", {"out_channels": out_channels, "kernel": 1, "stride": 1, "padding": 0}, tap=True),
    ]
    return BackboneSpec(
        name="linear_probe",
        input_size=input_size,
        mean=(0.0, 0.0, 0.0),
        std=(1.0, 1.0, 1.0),
        stages=stages,
        weight_seed=weight_seed,
    )


# Canonical output shapes of the 21 tapped layers for a 299x299 input.
_INCEPTION_TAPS: list[tuple[str, tuple[int, ...]]] = [
    ("Conv2d_1a_3x3", (32, 149, 149)),
    ("Conv2d_2a_3x3", (32, 147, 147)),
    ("Conv2d_2b_3x3", (64, 147, 147)),
    ("MaxPool_3a_3x3", (64, 73, 73)),
    ("Conv2d_3b_1x1", (80, 73, 73)),
    ("Conv2d_4a_3x3", (192, 71, 71)),
    ("MaxPool_5a_3x3", (192, 35, 35)),
    ("Mixed_5b", (256, 35, 35)),
    ("Mixed_5c", (288, 35, 35)),
    ("Mixed_5d", (288, 35, 35)),
    ("Mixed_6a", (768, 17, 17)),
    ("Mixed_6b", (768, 17, 17)),
    ("Mixed_6c", (768, 17, 17)),
    ("Mixed_6d", (768, 17, 17)),
    ("Mixed_6e", (768, 17, 17)),
    ("Mixed_7a", (1280, 8, 8)),
    ("Mixed_7b", (2048, 8, 8)),
    ("Mixed_7c", (2048, 8, 8)),
    ("AvgPool", (2048, 1, 1)),
    ("Dropout", (2048,)),
    ("FC", (1000,)),
]


def inception_v3_spec() -> BackboneSpec:
    """21-tap Inception V3 profile.

    Shipped as a configuration schema: tap names and canonical shapes are
    declared so feature budgets and layouts can be computed, and weights
    can be loaded from a file, but the stages are not runnable here.
    """
    stages = [
        StageDef("external", name, {"shape": list(shape)}, tap=True) for name, shape in _INCEPTION_TAPS
    ]
    return BackboneSpec(
        name="inception_v3",
        input_size=299,
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        stages=stages,
        weight_file=None,
    )


_BUILTIN_SPECS = {
    "tiny": tiny_cnn_spec,
    "linear_probe": linear_probe_spec,
    "inception_v3": inception_v3_spec,
}


def resolve_spec(ref: "str | Path | BackboneSpec") -> BackboneSpec:
    """Turn a builtin profile name, a JSON path, or a spec object into a spec."""
    if isinstance(ref, BackboneSpec):
        return ref
    key = str(ref)
    if key in _BUILTIN_SPECS:
        return _BUILTIN_SPECS[key]()
    path = Path(key)
    if path.exists():
        return BackboneSpec.from_json(path.read_text())
    raise ValueError(f"unknown backbone spec {ref!r} (not a builtin name or an existing file)")


# ---------------------------------------------------------------------------
# preprocessing geometry


def _resize_grid(in_h: int, in_w: int, out_h: int, out_w: int) -> tuple[np.ndarray, np.ndarray]:
    # corner-aligned sampling: output corners land on input corners
    ys = np.linspace(0.0, in_h - 1.0, out_h) if out_h > 1 else np.array([(in_h - 1) / 2.0])
    xs = np.linspace(0.0, in_w - 1.0, out_w) if out_w > 1 else np.array([(in_w - 1) / 2.0])
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return gy, gx


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    gy, gx = _resize_grid(x.shape[-2], x.shape[-1], out_h, out_w)
    return ad.bilinear_sample(x, gy, gx)


# ---------------------------------------------------------------------------
# the runnable backbone


class Backbone:
    """Runnable operator chain built from a BackboneSpec."""

    def __init__(self, spec: BackboneSpec, dtype=np.float32):
        if not spec.is_runnable():
            raise ValueError(
                f"backbone profile {spec.name!r} is a configuration schema and is not runnable"
            )
        self.spec = spec
        self.dtype = np.dtype(dtype).type
        self.params: dict[str, Tensor] = {}
        self._init_params()
        self.tap_infos: list[TapInfo] = self._trace_shapes()

    # -- parameters --------------------------------------------------------

    def _init_params(self) -> None:
        if self.spec.weight_file is not None:
            raw = fileformats.read_backbone_weights(self.spec.weight_file)
            self.params = {k: Tensor(v.astype(self.dtype)) for k, v in raw.items()}
            return
        seed = self.spec.weight_seed if self.spec.weight_seed is not None else 0
        rng = np.random.default_rng(seed)
        in_ch = 3
        flat = None
        for stage in self.spec.stages:
            if stage.kind == "conv":
                k = stage.params["kernel"]
                out_ch = stage.params["out_channels"]
                fan_in = in_ch * k * k
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, k, k))
                b = rng.normal(0.0, 0.05, size=out_ch)
                self.params[f"{stage.name}.weight"] = Tensor(w.astype(self.dtype))
                self.params[f"{stage.name}.bias"] = Tensor(b.astype(self.dtype))
                in_ch = out_ch
            elif stage.kind == "linear":
                if flat is None:
                    flat = self._flat_size_before(stage.name)
                out_f = stage.params["out_features"]
                w = rng.normal(0.0, np.sqrt(2.0 / flat), size=(flat, out_f))
                b = rng.normal(0.0, 0.05, size=out_f)
                self.params[f"{stage.name}.weight"] = Tensor(w.astype(self.dtype))
                self.params[f"{stage.name}.bias"] = Tensor(b.astype(self.dtype))
                flat = out_f

    def _flat_size_before(self, stage_name: str) -> int:
        # shape dry-run up to (not including) the named stage
        shape = (3, self.spec.input_size, self.spec.input_size)
        for stage in self.spec.stages:
            if stage.name == stage_name:
                break
            shape = _stage_out_shape(stage, shape)
        return int(np.prod(shape))

    def save_weights(self, path) -> None:
        fileformats.write_backbone_weights(path, {k: v.data for k, v in self.params.items()})

    # -- shape bookkeeping ---------------------------------------------------

    def _trace_shapes(self) -> list[TapInfo]:
        infos = []
        shape = (3, self.spec.input_size, self.spec.input_size)
        for stage in self.spec.stages:
            shape = _stage_out_shape(stage, shape)
            if stage.tap:
                rank = len(shape) - 1
                infos.append(TapInfo(stage.name, shape[0], rank, shape))
        return infos

    @property
    def tap_names(self) -> list[str]:
        return [t.name for t in self.tap_infos]

    # -- forward -------------------------------------------------------------

    def preprocess(self, image, validate: bool = True) -> Tensor:
        """Resize shorter side to input_size, center crop, normalize.

        Accepts an (H, W, 3) array in [0, 1] or an already channels-first
        (3, H, W) Tensor (the synthesis path, where intermediate values
        may exceed 1 and range validation is skipped).
        """
        S = self.spec.input_size
        if isinstance(image, Tensor):
            x = image
            if x.ndim != 3 or x.shape[0] != 3:
                raise ValueError(f"preprocess expects (3, H, W) tensors, got {x.shape}")
        else:
            arr = np.asarray(image, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[2] != 3:
                raise ValueError(f"preprocess expects (H, W, 3) arrays, got {arr.shape}")
            if validate:
                if not np.isfinite(arr).all():
                    raise ValueError("preprocess: non-finite pixels")
                if arr.min() < 0.0 or arr.max() > 1.0:
                    raise ValueError("preprocess: pixel values outside [0, 1]")
            x = Tensor(np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(self.dtype))
        H, W = x.shape[-2:]
        if H < S / 8 or W < S / 8:
            raise ValueError(f"preprocess: input {H}x{W} too small for target {S}")
        if (H, W) != (S, S):
            if H <= W:
                oh, ow = S, max(S, round(W * S / H))
            else:
                oh, ow = max(S, round(H * S / W)), S
            x = resize_bilinear(x, oh, ow)
            top, left = (oh - S) // 2, (ow - S) // 2
            x = ad.crop2d(x, top, left, S, S)
        return ad.affine_channels(x, np.asarray(self.spec.mean, dtype=x.dtype.type),
                                  np.asarray(self.spec.std, dtype=x.dtype.type))

    def forward(self, x: Tensor, taps: list[str] | None = None) -> dict[str, Tensor]:
        """Run a batch (N, 3, S, S) through the chain; return tapped tensors."""
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (self.spec.input_size,) * 2:
            raise ValueError(
                f"forward expects (N, 3, {self.spec.input_size}, {self.spec.input_size}), got {x.shape}"
            )
        wanted = set(taps) if taps is not None else set(self.tap_names)
        unknown = wanted - set(self.tap_names)
        if unknown:
            raise ValueError(f"unknown taps requested: {sorted(unknown)}")
        out: dict[str, Tensor] = {}
        h = x
        for stage in self.spec.stages:
            h = self._run_stage(stage, h)
            if stage.tap and stage.name in wanted:
                out[stage.name] = h
        return out

    def _run_stage(self, stage: StageDef, h: Tensor) -> Tensor:
        kind = stage.kind
        if kind == "conv":
            return ad.conv2d(
                h,
                self.params[f"{stage.name}.weight"],
                self.params[f"{stage.name}.bias"],
                stride=stage.params.get("stride", 1),
                padding=stage.params.get("padding", 0),
            )
        if kind == "relu":
            return ad.relu(h)
        if kind == "maxpool":
            return ad.maxpool2d(h, stage.params.get("kernel", 2))
        if kind == "adaptive_avg_pool":
            out = stage.params.get("out", 1)
            return ad.adaptive_avg_pool(h, (out, out))
        if kind == "flatten":
            return ad.reshape(h, (h.shape[0], int(np.prod(h.shape[1:]))))
        if kind == "linear":
            y = ad.matmul(h, self.params[f"{stage.name}.weight"])
            return ad.add(y, self.params[f"{stage.name}.bias"])
        raise ValueError(f"unknown stage kind {kind!r}")

    def extract(self, image, taps: list[str] | None = None, validate: bool = True) -> list[LayerActivation]:
        """Preprocess one stimulus and return tapped activations in chain order."""
        x = self.preprocess(image, validate=validate)
        batch = ad.reshape(x, (1,) + tuple(x.shape))
        tapped = self.forward(batch, taps=taps)
        acts = []
        for info in self.tap_infos:
            if info.name in tapped:
                t = tapped[info.name]
                acts.append(LayerActivation(info.name, ad.reshape(t, t.shape[1:]), info.spatial_rank))
        return acts


def _stage_out_shape(stage: StageDef, shape: tuple[int, ...]) -> tuple[int, ...]:
    kind = stage.kind
    if kind == "conv":
        c, h, w = shape
        k = stage.params["kernel"]
        s = stage.params.get("stride", 1)
        p = stage.params.get("padding", 0)
        return (stage.params["out_channels"], (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
    if kind == "relu":
        return shape
    if kind == "maxpool":
        c, h, w = shape
        k = stage.params.get("kernel", 2)
        return (c, h // k, w // k)
    if kind == "adaptive_avg_pool":
        c = shape[0]
        out = stage.params.get("out", 1)
        return (c, out, out)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "linear":
        return (stage.params["out_features"],)
    if kind == "external":
        return tuple(stage.params["shape"])
    raise ValueError(f"unknown stage kind {kind!r}")


def spec_tap_infos(spec: BackboneSpec) -> list[TapInfo]:
    """Tap shapes for any spec, via dry-run (runnable) or declaration (external)."""
    infos = []
    shape = (3, spec.input_size, spec.input_size)
    for stage in spec.stages:
        shape = _stage_out_shape(stage, shape)
        if stage.tap:
            infos.append(TapInfo(stage.name, shape[0], len(shape) - 1, shape))
    return infos


def describe_spec(spec: BackboneSpec, f_max: int | None = None) -> str:
    """Human-readable profile summary for the CLI."""
    from . import featurizer as fz  # local import to avoid a cycle

    lines = [
        f"backbone:   {spec.name}",
        f"input:      {spec.input_size}x{spec.input_size}x3",
        f"mean/std:   {tuple(spec.mean)} / {tuple(spec.std)}",
        f"weights:    {spec.weight_file or f'seeded (seed={spec.weight_seed})'}",
        f"runnable:   {'yes' if spec.is_runnable() else 'no (configuration schema)'}",
        "taps:",
    ]
    total = 0
    for info in spec_tap_infos(spec):
        extra = ""
        if f_max is not None:
            if info.spatial_rank > 0:
                s = fz.target_spatial_size(info.channels, info.spatial_rank, f_max)
                dims = tuple(min(s, e) for e in info.shape[1:])
                kept = info.channels * int(np.prod(dims))
            else:
                kept = int(np.prod(info.shape))
            total += kept
            extra = f"  -> {kept} features"
        lines.append(f"  {info.name:<16} {str(info.shape):<18}{extra}")
    if f_max is not None:
        lines.append(f"total features at f_max={f_max}: {total}")
    return "\n".join(lines)
