"""Command-line entry points.

Subcommands cover the full pipeline: profile a backbone, extract pooled
features from a frame directory, fit the lagged ridge encoder, build a
contrast objective from fitted weights and an ROI map, synthesize an
image for an objective, and run the self-contained synthetic experiment.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import fileformats as ff
from .backbone import describe_spec, resolve_spec
from .encoder import RidgeEncoder, alpha_grid
from .featurizer import DEFAULT_FEATURE_BUDGET, FeatureExtractor
from .harness import (ExperimentConfig, format_report, run_experiment,
                      write_accuracy_csv, write_report, write_selectivity_csv)
from .objective import ContrastObjective, collapse_lags, contrast_weights, roi_aggregate
from .synthesizer import SynthesisConfig, save_png, synthesize, write_sidecar

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _parse_lags(text: str) -> tuple[int, ...]:
    try:
        lags = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise SystemExit(f"bad --lags {text!r}: expected comma-separated integers")
    if not lags or any(l < 1 for l in lags):
        raise SystemExit(f"bad --lags {text!r}: lags must be positive")
    return lags


def _parse_alphas(text: str) -> np.ndarray:
    """count:low:high, log-spaced inclusive; e.g. 15:1e0:1e10."""
    parts = text.split(":")
    if len(parts) != 3:
        raise SystemExit(f"bad --alphas {text!r}: expected count:low:high")
    try:
        n, low, high = int(parts[0]), float(parts[1]), float(parts[2])
        return alpha_grid(n, low, high)
    except ValueError as e:
        raise SystemExit(f"bad --alphas {text!r}: {e}")


def _load_responses(path: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        y = np.load(p)
    else:
        y = np.loadtxt(p, delimiter=",", ndmin=2)
    return np.asarray(y, dtype=np.float64)


def _load_roi_map(path: str) -> dict[int, str]:
    """CSV voxel index -> ROI name. Accepts 'voxel,roi' rows (any order)
    or one ROI name per line (line number = voxel index)."""
    rois: dict[int, str] = {}
    with open(path) as fh:
        seq = 0
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) == 1:
                rois[seq] = cells[0]
                seq += 1
            elif len(cells) == 2:
                if cells[0].lower() == "voxel":   # header row
                    continue
                rois[int(cells[0])] = cells[1]
            else:
                raise SystemExit(f"bad ROI map line {line!r}: expected 'voxel,roi' or 'roi'")
    if not rois:
        raise SystemExit(f"ROI map {path} is empty")
    return rois


def _load_frames(path: str) -> np.ndarray:
    """A directory of images (sorted by name) or one .npy stack, as
    (n, H, W, 3) float in [0, 1]."""
    from PIL import Image

    p = Path(path)
    if p.is_file() and p.suffix == ".npy":
        return np.asarray(np.load(p), dtype=np.float32)
    if not p.is_dir():
        raise SystemExit(f"--frames {path!r} is neither a directory nor a .npy stack")
    files = sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise SystemExit(f"no image files in {path}")
    frames = []
    for f in files:
        arr = np.asarray(Image.open(f).convert("RGB"), dtype=np.float32) / 255.0
        frames.append(arr)
    shapes = {a.shape for a in frames}
    if len(shapes) > 1:
        raise SystemExit(f"frames differ in shape: {sorted(shapes)}")
    return np.stack(frames)


# ---------------------------------------------------------------------------
# subcommands


def cmd_backbone_info(args) -> int:
    spec = resolve_spec(args.spec)
    print(describe_spec(spec, args.fmax))
    return 0


def cmd_extract(args) -> int:
    frames = _load_frames(args.frames)
    extractor = FeatureExtractor(backbone=args.backbone, f_max=args.fmax,
                                 frames_per_sample=args.frames_per_sample).fit()
    feats = extractor.transform(frames)
    ff.write_matrix(args.out, feats, extractor.fingerprint_)
    print(f"{feats.shape[0]} samples x {feats.shape[1]} features "
          f"(layout {extractor.fingerprint_:#018x}) -> {args.out}")
    return 0


def cmd_fit(args) -> int:
    X, fingerprint = ff.read_matrix(args.features)
    y = _load_responses(args.responses)
    if y.shape[0] != X.shape[0]:
        raise SystemExit(f"features have {X.shape[0]} samples but responses have {y.shape[0]}")
    alphas = _parse_alphas(args.alphas) if args.alphas else None
    enc = RidgeEncoder(lags=_parse_lags(args.lags), alphas=alphas,
                       n_splits=args.splits, n_resamples=args.resamples, seed=args.seed)
    enc.fit(X, y, fingerprint=fingerprint)
    ff.write_voxel_weights(args.out, enc.coef_, enc.alpha_, enc.cv_score_)
    ok = np.isfinite(enc.cv_score_)
    med = np.median(enc.cv_score_[ok]) if ok.any() else float("nan")
    print(f"fit {enc.coef_.shape[0]} voxels x {enc.coef_.shape[1]} weights, "
          f"median cv R^2 = {med:.4f} -> {args.out}")
    return 0


def cmd_objective(args) -> int:
    betas, _, _ = ff.read_voxel_weights(args.model)
    n_lags = len(_parse_lags(args.lags))
    roi_map = _load_roi_map(args.roi_map) if args.roi_map else {}

    def roi_profile(name: str) -> np.ndarray:
        vox = sorted(v for v, r in roi_map.items() if r == name)
        if not vox:
            raise SystemExit(f"ROI {name!r} has no voxels in the map")
        return roi_aggregate(collapse_lags(betas[vox], n_lags))

    kind, _, value = args.target.partition(":")
    if kind == "roi" and value:
        target_vec = roi_profile(value)
    elif kind == "voxel" and value:
        target_vec = collapse_lags(betas[int(value)], n_lags)
    else:
        raise SystemExit(f"bad --target {args.target!r}: expected roi:NAME or voxel:INDEX")

    rkind, _, rvalue = args.reference.partition(":")
    if rkind == "rois" and rvalue:
        names = [r.strip() for r in rvalue.split(",") if r.strip()]
    elif args.reference == "all":
        names = sorted(set(roi_map.values()))
    else:
        raise SystemExit(f"bad --reference {args.reference!r}: expected rois:A,B,... or all")
    if not names:
        raise SystemExit("empty reference set")

    obj = contrast_weights(target_vec, [roi_profile(n) for n in names],
                           target=args.target, reference_desc=",".join(names))
    ff.write_objective(args.out, obj.weights, obj.target, obj.reference)
    print(f"objective {args.target} vs {len(names)} reference profiles, "
          f"{obj.weights.size} weights -> {args.out}")
    return 0


def cmd_synthesize(args) -> int:
    weights, target, reference = ff.read_objective(args.objective)
    extractor = FeatureExtractor(backbone=args.backbone, f_max=args.fmax).fit()
    if weights.size != extractor.n_features_:
        raise SystemExit(f"objective has {weights.size} weights but {args.backbone} at "
                         f"f_max={args.fmax} yields {extractor.n_features_} features")
    obj = ContrastObjective(weights, target, reference)
    cfg = SynthesisConfig(iterations=args.iterations, learning_rate=args.lr,
                          init=args.init, canvas=args.canvas, seed=args.seed)
    if args.no_augment:
        cfg = cfg.without_augmentation()
    image, trace = synthesize(obj, extractor, cfg)
    save_png(image, args.out)
    sidecar = Path(args.out).with_suffix(".txt")
    write_sidecar(trace, sidecar)
    s = trace.summary()
    print(f"{target or 'objective'}: score {s['first_score']:.4f} -> {s['final_score']:.4f} "
          f"in {s['wall_seconds']:.1f}s -> {args.out} (+ {sidecar.name})")
    return 0


def _coerce(value: str, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        elem = current[0] if current else 1
        return tuple(type(elem)(x) for x in value.split(","))
    if isinstance(current, str):
        return value
    if current is None:   # unset optional: int, then float, then text
        for kind in (int, float):
            try:
                return kind(value)
            except ValueError:
                pass
        return value
    raise ValueError(f"cannot set option of type {type(current).__name__} from text")


# config keys, grouped by pipeline stage, routed onto ExperimentConfig fields
_EXP_KEYS = {
    "master_seed": "master_seed",
    "stimuli.seed": "master_seed",
    "stimuli.n_train": "n_train",
    "stimuli.n_test": "n_test",
    "stimuli.n_repeats": "n_repeats",
    "stimuli.image_size": "image_size",
    "stimuli.backbone": "backbone",
    "stimuli.f_max": "f_max",
    "brain.sigma": "sigma",
    "brain.n_rois": "n_rois",
    "brain.voxels_per_roi": "voxels_per_roi",
    "brain.density": "density",
    "brain.jitter": "jitter",
    "brain.lags": "lags",
    "brain.lag_kernel": "lag_kernel",
    "brain.structure_seed": "structure_seed",
    "brain.subject_seed": "subject_seed",
    "encoder.lags": "lags",
    "encoder.splits": "n_splits",
    "encoder.resamples": "n_resamples",
    "encoder.permutations": "n_permutations",
    "objective.images_per_roi": "images_per_roi",
    "synthesis.images_per_roi": "images_per_roi",
}
_SYN_SKIP = {"color_matrix", "dtype"}    # not settable from text


def load_experiment_config(path) -> ExperimentConfig:
    """Flat 'section.key = value' lines, '#' comments. Sections: stimuli,
    brain, encoder, objective, synthesis, report. Unknown keys are an error."""
    exp = ExperimentConfig()
    syn = SynthesisConfig.desk(learning_rate=0.05)
    syn_names = {f.name for f in fields(SynthesisConfig)} - _SYN_SKIP
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SystemExit(f"{path}:{lineno}: expected 'section.key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            section, _, name = key.partition(".")
            try:
                if key in _EXP_KEYS:
                    target = _EXP_KEYS[key]
                    exp = replace(exp, **{target: _coerce(value, getattr(exp, target))})
                elif section == "synthesis" and name in syn_names:
                    syn = replace(syn, **{name: _coerce(value, getattr(syn, name))})
                elif section == "report":
                    raise SystemExit(f"{path}:{lineno}: the report section has no options yet")
                else:
                    raise SystemExit(f"{path}:{lineno}: unknown option {key!r}")
            except ValueError as e:
                raise SystemExit(f"{path}:{lineno}: {e}")
    return replace(exp, synthesis=syn)


def cmd_simulate(args) -> int:
    cfg = load_experiment_config(args.config) if args.config else ExperimentConfig(
        synthesis=SynthesisConfig.desk(learning_rate=0.05))
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg, verbose=not args.quiet)
    write_report(result, out / "report.txt")
    write_selectivity_csv(result.selectivity, result.roi_names, out / "selectivity.csv")
    write_accuracy_csv(result, out / "accuracy.csv")
    for roi, imgs in result.images.items():
        for i, img in enumerate(imgs):
            save_png(img, out / f"{roi}_{i}.png")
            write_sidecar(result.traces[roi][i], out / f"{roi}_{i}.txt")
    if args.quiet:
        print(f"{result.diagonal_hits}/{len(result.roi_names)} ROIs self-maximal -> {out}")
    else:
        print(format_report(result), end="")
        print(f"artifacts -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxelmax",
                                description="voxel-weighted activation maximization")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("backbone-info", help="profile a backbone's tap layout")
    q.add_argument("--spec", default="tiny",
                   help="builtin name (tiny, linear_probe, inception_v3) or JSON path")
    q.add_argument("--fmax", type=int, default=None, help="also show kept features per tap")
    q.set_defaults(func=cmd_backbone_info)

    q = sub.add_parser("extract", help="pool backbone features from stimulus frames")
    q.add_argument("--backbone", default="tiny")
    q.add_argument("--frames", required=True, help="image directory or .npy stack (n, H, W, 3)")
    q.add_argument("--fmax", type=int, default=DEFAULT_FEATURE_BUDGET)
    q.add_argument("--frames-per-sample", type=int, default=1)
    q.add_argument("--out", required=True, help="output feature matrix (.vwam)")
    q.set_defaults(func=cmd_extract)

    q = sub.add_parser("fit", help="fit the lagged ridge encoder")
    q.add_argument("--features", required=True, help="feature matrix (.vwam)")
    q.add_argument("--responses", required=True, help="responses, CSV or .npy (samples, voxels)")
    q.add_argument("--lags", default="1,2,3")
    q.add_argument("--alphas", default=None, help="count:low:high, e.g. 15:1e0:1e10")
    q.add_argument("--splits", type=int, default=10)
    q.add_argument("--resamples", type=int, default=10)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True, help="output voxel weights (.vwbw)")
    q.set_defaults(func=cmd_fit)

    q = sub.add_parser("objective", help="build a contrast objective from fitted weights")
    q.add_argument("--model", required=True, help="voxel weights (.vwbw)")
    q.add_argument("--lags", default="1,2,3", help="lags used at fit time")
    q.add_argument("--roi-map", default=None, help="CSV mapping voxel index to ROI name")
    q.add_argument("--target", required=True, help="roi:NAME or voxel:INDEX")
    q.add_argument("--reference", required=True, help="rois:A,B,... or all")
    q.add_argument("--out", required=True, help="output objective (.vwob)")
    q.set_defaults(func=cmd_objective)

    q = sub.add_parser("synthesize", help="gradient-ascent image for an objective")
    q.add_argument("--objective", required=True, help="objective file (.vwob)")
    q.add_argument("--backbone", default="tiny")
    q.add_argument("--fmax", type=int, default=DEFAULT_FEATURE_BUDGET)
    q.add_argument("--iterations", type=int, default=SynthesisConfig.iterations)
    q.add_argument("--lr", type=float, default=SynthesisConfig.learning_rate)
    q.add_argument("--canvas", type=int, default=SynthesisConfig.canvas)
    q.add_argument("--init", default=SynthesisConfig.init, choices=("gray140", "black_noise"))
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--no-augment", action="store_true")
    q.add_argument("--out", required=True, help="output image (.png); sidecar .txt goes next to it")
    q.set_defaults(func=cmd_synthesize)

    q = sub.add_parser("simulate", help="run the synthetic end-to-end experiment")
    q.add_argument("--config", default=None, help="flat 'section.key = value' file")
    q.add_argument("--seed", type=int, default=None, help="override the master seed")
    q.add_argument("--out", required=True, help="output directory")
    q.add_argument("--quiet", action="store_true")
    q.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
