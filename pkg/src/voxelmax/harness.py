"""Synthetic end-to-end testbed: stimuli, a simulated brain, and the full
fit / objective / synthesis loop wired together.

The simulated brain reads out pooled backbone features through a sparse
per-ROI weight bank (each ROI tuned to a contiguous band of layer
segments, so ROI prototypes are orthogonal by construction), mixes the
signal over a few acquisition lags, and adds Gaussian noise. Readout
rows are scaled so the noiseless lag-mixed response has unit standard
deviation on the fitting stimuli, which makes the noise level directly
interpretable: with repeated presentations the expected repeat
reliability is 1 / (1 + sigma^2).

Every random draw derives from one master seed through named
SeedSequence children, so a full experiment is reproducible bit for bit
and the brain's structure can be held fixed while the subject (weight
jitter, measurement noise) varies. Synthesized images are always scored
on the ground-truth brain, never on the fitted model; the fitted model
only gets a separate internal-consistency table.
"""

from __future__ import annotations

import io
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import NoiseCeiling, RidgeEncoder, noise_ceiling, prediction_accuracy
from .featurizer import FeatureExtractor, FeatureLayout
from .objective import (ContrastObjective, collapse_lags, contrast_weights,
                        predicted_contrast, roi_aggregate)
from .synthesizer import SynthesisConfig, SynthesisTrace, synthesize

DEFAULT_LAGS = (1, 2, 3)
DEFAULT_LAG_KERNEL = (0.5, 0.3, 0.2)
PROTOTYPE_COSINE_LIMIT = 0.1


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(f"stage '{name}' failed: {e}") from e


# ---------------------------------------------------------------------------
# stimuli


def _pink_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    amp = 1.0 / np.maximum(np.sqrt(fy * fy + fx * fx), 1.0 / size)
    spec = (rng.standard_normal((3, size, size)) + 1j * rng.standard_normal((3, size, size))) * amp
    img = np.fft.ifft2(spec, axes=(-2, -1)).real
    lo, hi = img.min(), img.max()
    return ((img - lo) / max(hi - lo, 1e-12)).transpose(1, 2, 0)


def _grating(rng: np.random.Generator, size: int) -> np.ndarray:
    theta = rng.uniform(0.0, np.pi)
    cycles = rng.uniform(2.0, size / 4.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    axis = np.arange(size) / size
    proj = np.cos(theta) * axis[None, :] + np.sin(theta) * axis[:, None]
    wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * cycles * proj + phase)
    color = rng.uniform(0.3, 1.0, size=3)
    return wave[:, :, None] * color[None, None, :]


def _blobs(rng: np.random.Generator, size: int) -> np.ndarray:
    img = np.full((size, size, 3), 0.2)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, size, size=2)
        width = rng.uniform(size / 12.0, size / 4.0)
        color = rng.uniform(0.0, 1.0, size=3)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width * width))
        img += bump[:, :, None] * color[None, None, :]
    return np.clip(img, 0.0, 1.0)


def generate_stimuli(n: int, size: int, seed: int) -> np.ndarray:
    """n images in [0, 1], (n, size, size, 3): thirds of 1/f noise,
    oriented gratings, and soft blobs, interleaved."""
    rng = np.random.default_rng(seed)
    makers = (_pink_noise, _grating, _blobs)
    out = np.empty((n, size, size, 3), dtype=np.float32)
    for i in range(n):
        out[i] = makers[i % 3](rng, size)
    return out


def rgb_covariance(images: np.ndarray) -> np.ndarray:
    """3x3 covariance of RGB values pooled over every pixel of a stack."""
    px = np.asarray(images, dtype=np.float64).reshape(-1, 3)
    if px.shape[0] < 2:
        raise ValueError("need at least two pixels")
    return np.cov(px, rowvar=False)


def color_matrix_from_covariance(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor scaled to unit spectral norm; maps decorrelated
    coordinates to correlated RGB."""
    L = np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
    return L / np.linalg.norm(L, 2)


# ---------------------------------------------------------------------------
# simulated brain


def expected_ceiling(sigma: float) -> float:
    """Repeat reliability implied by a noise level, unit signal std."""
    return 1.0 / (1.0 + sigma * sigma)


def sigma_for_ceiling(r: float) -> float:
    """Noise level producing a target repeat reliability r in (0, 1]."""
    if not 0.0 < r <= 1.0:
        raise ValueError("target reliability must be in (0, 1]")
    return float(np.sqrt((1.0 - r) / r))


@dataclass
class SyntheticBrain:
    readout: np.ndarray           # (voxels, F), rows scaled to unit signal std
    lag_kernel: np.ndarray        # (L,)
    lags: tuple[int, ...]
    roi_labels: np.ndarray        # (voxels,) strings
    sigma: float
    structure_seed: int
    subject_seed: int
    prototypes: np.ndarray | None = field(repr=False, default=None)   # (rois, F)

    @property
    def n_voxels(self) -> int:
        return self.readout.shape[0]

    @property
    def roi_names(self) -> list[str]:
        return list(dict.fromkeys(self.roi_labels.tolist()))

    def voxels_of(self, roi: str) -> np.ndarray:
        idx = np.flatnonzero(self.roi_labels == roi)
        if idx.size == 0:
            raise KeyError(f"no ROI named {roi!r}")
        return idx

    @property
    def full_readout(self) -> np.ndarray:
        """(voxels, L*F) ground-truth weights over the lagged design,
        lag blocks in increasing-lag order."""
        return np.kron(self.lag_kernel[None, :], self.readout)

    def _signal(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        n = f.shape[0]
        if max(self.lags) >= n:
            raise ValueError(f"lag {max(self.lags)} needs more than {n} samples")
        static = f @ self.readout.T
        out = np.zeros_like(static)
        for k, lag in zip(self.lag_kernel, self.lags):
            out[lag:] += k * static[: n - lag]
        return out

    def respond(self, features: np.ndarray, noise_seed: int = 0) -> np.ndarray:
        """Lag-mixed noisy responses, (samples, voxels)."""
        sig = self._signal(features)
        if self.sigma == 0:
            return sig
        rng = np.random.default_rng(noise_seed)
        return sig + rng.normal(0.0, self.sigma, size=sig.shape)

    def respond_static(self, features: np.ndarray) -> np.ndarray:
        """Noiseless response to a single presentation, all lags collapsed.
        Accepts (F,) or (n, F)."""
        f = np.asarray(features, dtype=np.float64)
        return (f @ self.readout.T) * self.lag_kernel.sum()


def _check_separation(prototypes: np.ndarray) -> None:
    P = prototypes / np.linalg.norm(prototypes, axis=1, keepdims=True)
    gram = P @ P.T
    np.fill_diagonal(gram, 0.0)
    worst = float(np.abs(gram).max())
    if worst >= PROTOTYPE_COSINE_LIMIT:
        raise ValueError(f"ROI prototypes are not separated: max pairwise cosine {worst:.3f}")


def make_brain(features: np.ndarray, layout: FeatureLayout, structure_seed: int,
               subject_seed: int, sigma: float = 1.0, n_rois: int = 5,
               voxels_per_roi: int = 10, lags: tuple[int, ...] = DEFAULT_LAGS,
               lag_kernel: tuple[float, ...] = DEFAULT_LAG_KERNEL,
               density: float = 0.2, jitter: float = 0.1) -> SyntheticBrain:
    """Build a banded synthetic brain calibrated on a fitting feature matrix.

    The structure stream fixes which layer-segment band each ROI reads and
    the sparse prototype weights inside it; the subject stream fixes the
    per-voxel multiplicative jitter around the prototype. Two brains built
    with the same structure seed share tuning up to jitter and noise.
    Bands are disjoint, so prototype separation holds trivially; it is
    still asserted, since downstream selectivity claims depend on it.
    """
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != layout.total:
        raise ValueError(f"features {F.shape} do not match layout length {layout.total}")
    if n_rois < 1 or voxels_per_roi < 1:
        raise ValueError("need at least one ROI and one voxel per ROI")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    if len(lags) != len(lag_kernel):
        raise ValueError("lags and lag_kernel lengths differ")
    if n_rois > len(layout.entries):
        raise ValueError(f"{n_rois} ROIs but only {len(layout.entries)} layer segments to band")

    offsets = layout.offsets
    spans = [(offsets[i], offsets[i] + e.length) for i, e in enumerate(layout.entries)]
    groups = np.array_split(np.arange(len(spans)), n_rois)

    structure = np.random.default_rng(structure_seed)
    subject = np.random.default_rng(subject_seed)
    total = layout.total
    protos, rows, labels = [], [], []
    for r, grp in enumerate(groups):
        lo = spans[grp[0]][0]
        hi = spans[grp[-1]][1]
        band = hi - lo
        support = structure.random(band) < density
        if not support.any():
            support[structure.integers(band)] = True
        proto = np.zeros(total)
        proto[lo:hi][support] = structure.uniform(0.5, 1.5, size=int(support.sum()))
        protos.append(proto)
        nnz = np.flatnonzero(proto)
        for _ in range(voxels_per_roi):
            w = proto.copy()
            w[nnz] *= 1.0 + jitter * subject.standard_normal(nnz.size)
            rows.append(w)
            labels.append(f"roi{r}")

    prototypes = np.stack(protos)
    _check_separation(prototypes)
    brain = SyntheticBrain(np.stack(rows), np.asarray(lag_kernel, dtype=np.float64),
                           tuple(int(x) for x in lags), np.asarray(labels), float(sigma),
                           int(structure_seed), int(subject_seed), prototypes)
    sd = brain._signal(F).std(axis=0)
    if (sd == 0).any():
        raise ValueError("a voxel has zero signal variance on the calibration features")
    brain.readout = brain.readout / sd[:, None]
    return brain


def calibration_table(brain: SyntheticBrain, features: np.ndarray, sigmas,
                      n_repeats: int = 2, seed: int = 0) -> list[tuple[float, float, float]]:
    """Monte Carlo reliability sweep: (sigma, median measured repeat r,
    analytic expectation) per noise level, on the given stimulus features."""
    rows = []
    for k, s in enumerate(np.asarray(sigmas, dtype=np.float64)):
        b = replace(brain, sigma=float(s))
        reps = np.stack([b.respond(features, noise_seed=seed + 101 * k + r)
                         for r in range(n_repeats)])
        nc = noise_ceiling(reps, n_permutations=0)
        rows.append((float(s), float(np.nanmedian(nc.mean_r)), expected_ceiling(float(s))))
    return rows


# ---------------------------------------------------------------------------
# experiment


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    n_train: int = 600
    n_test: int = 200
    n_repeats: int = 2
    image_size: int = 64
    backbone: str = "tiny"
    f_max: int = 256
    sigma: float = 1.0
    n_rois: int = 5
    voxels_per_roi: int = 10
    density: float = 0.2
    jitter: float = 0.1
    lags: tuple[int, ...] = DEFAULT_LAGS
    lag_kernel: tuple[float, ...] = DEFAULT_LAG_KERNEL
    images_per_roi: int = 3
    n_splits: int = 10
    n_resamples: int = 3
    n_permutations: int = 500
    synthesis: SynthesisConfig | None = None    # None: desk-scale defaults
    structure_seed: int | None = None           # None: derived from master
    subject_seed: int | None = None


_SEED_NAMES = ("train_stimuli", "test_stimuli", "structure", "subject",
               "train_noise", "test_noise", "permutation", "cv", "synthesis")


def derive_seeds(master_seed: int) -> dict[str, int]:
    """Named, order-stable child seeds of one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(len(_SEED_NAMES))
    return {name: int(c.generate_state(1, np.uint32)[0]) for name, c in zip(_SEED_NAMES, children)}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seeds: dict[str, int]
    fingerprint: int
    brain: SyntheticBrain
    encoder: RidgeEncoder
    ceiling: NoiseCeiling
    raw_accuracy: np.ndarray
    corrected_accuracy: np.ndarray
    objectives: dict[str, ContrastObjective]
    images: dict[str, list[np.ndarray]]
    traces: dict[str, list[SynthesisTrace]] = field(repr=False, default_factory=dict)
    image_features: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    train_features: np.ndarray | None = field(repr=False, default=None)
    live_features: np.ndarray | None = field(repr=False, default=None)
    selectivity: np.ndarray | None = None       # scored on the ground-truth brain
    fitted_selectivity: np.ndarray | None = None  # scored on the fitted objectives
    roi_names: list[str] = field(default_factory=list)

    @property
    def diagonal_hits(self) -> int:
        return diagonal_hits(self.selectivity)

    def verdicts(self) -> dict[str, bool]:
        n = len(self.roi_names)
        out = {}
        med = float(np.nanmedian(self.ceiling.mean_r))
        out["reliability_calibrated"] = abs(med - expected_ceiling(self.config.sigma)) <= 0.1
        mask = self.ceiling.mask
        out["positive_accuracy"] = bool(mask.any()
                                        and np.median(self.corrected_accuracy[mask]) > 0)
        if self.selectivity is not None:
            out["selectivity"] = diagonal_hits(self.selectivity) >= max(1, n - 1)
        if self.fitted_selectivity is not None:
            out["fitted_consistency"] = diagonal_hits(self.fitted_selectivity) == n
        return out


def selectivity_matrix(brain: SyntheticBrain, image_features: dict[str, np.ndarray],
                       roi_names: list[str]) -> np.ndarray:
    """R[i, j]: mean static response of ROI i to the images made for ROI j."""
    n = len(roi_names)
    R = np.zeros((n, n))
    for j, target in enumerate(roi_names):
        resp = brain.respond_static(image_features[target])   # (images, voxels)
        for i, measured in enumerate(roi_names):
            R[i, j] = resp[:, brain.voxels_of(measured)].mean()
    return R


def objective_selectivity(objectives: dict[str, ContrastObjective],
                          image_features: dict[str, np.ndarray],
                          roi_names: list[str]) -> np.ndarray:
    """C[i, j]: mean fitted-objective score of objective i on images for j.
    Diagonal dominance here only says the optimizer optimized its own
    objective; the ground-truth matrix is the one that can fail honestly."""
    n = len(roi_names)
    C = np.zeros((n, n))
    for j, target in enumerate(roi_names):
        feats = image_features[target]
        for i, measured in enumerate(roi_names):
            C[i, j] = np.mean([predicted_contrast(f, objectives[measured]) for f in feats])
    return C


def diagonal_hits(R: np.ndarray) -> int:
    """How many ROIs respond most to their own images."""
    R = np.asarray(R)
    return int(np.sum(R.argmax(axis=1) == np.arange(R.shape[0])))


def _scatter_lagged(coef: np.ndarray, live: np.ndarray, n_lags: int) -> np.ndarray:
    """Expand (voxels, lags*kept) coefficients to the full feature width,
    zero at columns that were dropped as constant."""
    v = coef.shape[0]
    kept = int(live.sum())
    blocks = coef.reshape(v, n_lags, kept)
    full = np.zeros((v, n_lags, live.size))
    full[:, :, live] = blocks
    return full.reshape(v, n_lags * live.size)


def run_experiment(cfg: ExperimentConfig | None = None, verbose: bool = False) -> ExperimentResult:
    """One full simulated study: stimuli, responses, encoder, reliability,
    per-ROI contrast objectives, synthesis, and the selectivity matrices.

    Any stage failure aborts with the stage name in the error.
    """
    cfg = cfg or ExperimentConfig()
    seeds = derive_seeds(cfg.master_seed)
    structure_seed = seeds["structure"] if cfg.structure_seed is None else cfg.structure_seed
    subject_seed = seeds["subject"] if cfg.subject_seed is None else cfg.subject_seed

    def log(msg: str) -> None:
        if verbose:
            print(msg, flush=True)

    with _stage("generate stimuli"):
        log(f"stimuli: {cfg.n_train} train + {cfg.n_test} test at {cfg.image_size}px")
        train = generate_stimuli(cfg.n_train, cfg.image_size, seeds["train_stimuli"])
        test = generate_stimuli(cfg.n_test, cfg.image_size, seeds["test_stimuli"])

    with _stage("extract features"):
        extractor = FeatureExtractor(backbone=cfg.backbone, f_max=cfg.f_max).fit()
        Xtr = extractor.transform(train)
        Xte = extractor.transform(test)
        log(f"features: {Xtr.shape[1]} per stimulus, layout {extractor.fingerprint_:#018x}")

    with _stage("simulate brain"):
        brain = make_brain(Xtr, extractor.layout_, structure_seed, subject_seed,
                           sigma=cfg.sigma, n_rois=cfg.n_rois,
                           voxels_per_roi=cfg.voxels_per_roi, lags=cfg.lags,
                           lag_kernel=cfg.lag_kernel, density=cfg.density, jitter=cfg.jitter)
        ytr = brain.respond(Xtr, noise_seed=seeds["train_noise"])
        reps = np.stack([brain.respond(Xte, noise_seed=seeds["test_noise"] + r)
                         for r in range(cfg.n_repeats)])

    with _stage("noise ceiling"):
        ceiling = noise_ceiling(reps, n_permutations=cfg.n_permutations,
                                seed=seeds["permutation"])
        log(f"reliability: {int(ceiling.mask.sum())}/{brain.n_voxels} voxels pass, "
            f"median r={np.nanmedian(ceiling.mean_r):.3f}")

    with _stage("fit encoder"):
        # silent units are constant columns; the encoder rejects those by
        # contract, so they are dropped here and given weight zero
        live = Xtr.std(axis=0) > 0
        encoder = RidgeEncoder(lags=cfg.lags, n_splits=cfg.n_splits,
                               n_resamples=cfg.n_resamples, seed=seeds["cv"])
        encoder.fit(Xtr[:, live], ytr, fingerprint=extractor.fingerprint_)
        coef_full = _scatter_lagged(encoder.coef_, live, len(cfg.lags))
        log(f"encoder: {int(live.sum())}/{live.size} live features")

    with _stage("predict held-out"):
        raw_acc, corrected = prediction_accuracy(encoder.predict(Xte[:, live]),
                                                 reps.mean(axis=0), ceiling)
        log(f"accuracy: median held-out r={np.nanmedian(raw_acc):.3f}, "
            f"corrected={np.nanmedian(corrected):.3f}")

    with _stage("build objectives"):
        profiles = {}
        for roi in brain.roi_names:
            vox = brain.voxels_of(roi)
            keep = vox[ceiling.mask[vox]]
            if keep.size == 0:
                raise RuntimeError(f"no reliable voxels in {roi}; cannot build its objective")
            profiles[roi] = roi_aggregate(collapse_lags(coef_full[keep], len(cfg.lags)))
        reference = [profiles[r] for r in brain.roi_names]
        ref_desc = ",".join(brain.roi_names)
        objectives = {roi: contrast_weights(profiles[roi], reference, target=roi,
                                            reference_desc=ref_desc,
                                            fingerprint=extractor.fingerprint_)
                      for roi in brain.roi_names}

    with _stage("synthesize"):
        base = cfg.synthesis if cfg.synthesis is not None else SynthesisConfig.desk(
            learning_rate=0.05)
        images: dict[str, list[np.ndarray]] = {}
        traces: dict[str, list[SynthesisTrace]] = {}
        image_features: dict[str, np.ndarray] = {}
        for j, roi in enumerate(brain.roi_names):
            images[roi], traces[roi] = [], []
            feats = []
            for i in range(cfg.images_per_roi):
                run_cfg = replace(base, seed=seeds["synthesis"] + j * cfg.images_per_roi + i)
                img, trace = synthesize(objectives[roi], extractor, run_cfg)
                images[roi].append(img)
                traces[roi].append(trace)
                feats.append(extractor.transform(img[None])[0])
            image_features[roi] = np.stack(feats)
            log(f"synthesis {roi}: final score {traces[roi][-1].scores[-1]:.3f} "
                f"({traces[roi][-1].wall_seconds:.1f}s/image)")

    with _stage("evaluate selectivity"):
        R = selectivity_matrix(brain, image_features, brain.roi_names)
        C = objective_selectivity(objectives, image_features, brain.roi_names)
        log(f"selectivity: {diagonal_hits(R)}/{cfg.n_rois} ROIs self-maximal "
            f"on the ground-truth brain, {diagonal_hits(C)}/{cfg.n_rois} on the fitted model")

    return ExperimentResult(cfg, seeds, extractor.fingerprint_, brain, encoder, ceiling,
                            raw_acc, corrected, objectives, images, traces, image_features,
                            Xtr, live, R, C, brain.roi_names)


# ---------------------------------------------------------------------------
# reporting


def format_report(result: ExperimentResult) -> str:
    cfg = result.config
    ceiling = result.ceiling
    buf = io.StringIO()
    w = buf.write
    w("synthetic experiment report\n")
    w(f"master seed: {cfg.master_seed}\n")
    w(f"layout fingerprint: {result.fingerprint:#018x}\n")
    w(f"volume: {cfg.n_rois} ROIs x {cfg.voxels_per_roi} voxels, sigma={cfg.sigma}\n")
    w(f"reliability: median r={np.nanmedian(ceiling.mean_r):.4f} "
      f"(expected {expected_ceiling(cfg.sigma):.4f}), "
      f"{int(ceiling.mask.sum())}/{ceiling.mask.size} voxels pass\n")
    w("\nper-ROI accuracy (reliable voxels)\n")
    w(f"{'roi':<10}{'voxels':>8}{'reliable':>10}{'median r':>10}{'corrected':>11}"
      f"{' winner' if result.selectivity is not None else ''}\n")
    hits = (np.argmax(result.selectivity, axis=1) == np.arange(len(result.roi_names))
            if result.selectivity is not None else None)
    for i, roi in enumerate(result.roi_names):
        vox = result.brain.voxels_of(roi)
        ok = vox[ceiling.mask[vox]]
        raw = np.median(result.raw_accuracy[ok]) if ok.size else float("nan")
        cor = np.median(result.corrected_accuracy[ok]) if ok.size else float("nan")
        flag = ""
        if hits is not None:
            flag = "    yes" if hits[i] else "     no"
        w(f"{roi:<10}{vox.size:>8}{ok.size:>10}{raw:>10.4f}{cor:>11.4f}{flag}\n")
    if result.selectivity is not None:
        w("\nselectivity on the ground-truth brain (rows: measured ROI, cols: image target)\n")
        w(format_selectivity(result.selectivity, result.roi_names))
        w(f"self-maximal ROIs: {result.diagonal_hits}/{len(result.roi_names)}\n")
    if result.fitted_selectivity is not None:
        w(f"fitted-model self-maximal ROIs: "
          f"{diagonal_hits(result.fitted_selectivity)}/{len(result.roi_names)}\n")
    w("\nverdicts\n")
    for name, ok in result.verdicts().items():
        w(f"  {name}: {'PASS' if ok else 'FAIL'}\n")
    return buf.getvalue()


def format_selectivity(R: np.ndarray, roi_names: list[str]) -> str:
    width = max(8, max(len(n) for n in roi_names) + 1)
    lines = ["".rjust(width) + "".join(n.rjust(width) for n in roi_names)]
    for i, name in enumerate(roi_names):
        lines.append(name.rjust(width) + "".join(f"{R[i, j]:{width}.3f}" for j in range(len(roi_names))))
    return "\n".join(lines) + "\n"


def write_selectivity_csv(R: np.ndarray, roi_names: list[str], path) -> None:
    with open(path, "w") as fh:
        fh.write("roi," + ",".join(roi_names) + "\n")
        for i, name in enumerate(roi_names):
            fh.write(name + "," + ",".join(f"{x:.10g}" for x in R[i]) + "\n")


def read_selectivity_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    names = lines[0].split(",")[1:]
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        rows.append([float(x) for x in cells[1:]])
    R = np.asarray(rows)
    if R.shape != (len(names), len(names)):
        raise ValueError(f"selectivity table is {R.shape}, expected square over {len(names)} ROIs")
    return R, names


def write_accuracy_csv(result: ExperimentResult, path) -> None:
    """Per-voxel machine-readable accuracy table."""
    nc = result.ceiling
    with open(path, "w") as fh:
        fh.write("voxel,roi,reliability_r,reliability_p,reliable,raw_r,corrected_r\n")
        for v in range(result.brain.n_voxels):
            fh.write(f"{v},{result.brain.roi_labels[v]},{nc.mean_r[v]:.10g},"
                     f"{nc.p_values[v]:.10g},{int(nc.mask[v])},"
                     f"{result.raw_accuracy[v]:.10g},{result.corrected_accuracy[v]:.10g}\n")


def write_report(result: ExperimentResult, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(result))
