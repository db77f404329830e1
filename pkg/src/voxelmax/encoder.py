"""Voxelwise ridge encoding models over lagged feature time series.

The solver shares one eigendecomposition across the whole regularization
grid and all voxels: with G = X'X = V diag(lam) V' the coefficients for
every alpha are V diag(1/(lam+alpha)) V' X'Y. When the design has more
columns than rows the dual form is used instead, eigendecomposing XX' and
mapping back through X', which gives the identical solution for
alpha > 0 at a fraction of the cost.

Cross-validation uses contiguous temporal blocks (time series folds must
respect autocorrelation) and repeats the split after rotating the block
boundaries by a seeded circular offset. Alpha is chosen per voxel by mean
held-out R^2, ties resolved toward the stronger penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

DEFAULT_LAGS = (1, 2, 3)
CEILING_EPS = 0.05


def alpha_grid(n: int = 15, low: float = 1.0, high: float = 1e10) -> np.ndarray:
    """Log-spaced regularization grid, ascending; defaults to 10^(10k/14)."""
    if n < 1:
        raise ValueError("alpha_grid needs n >= 1")
    if n == 1:
        return np.array([low], dtype=np.float64)
    return np.logspace(np.log10(low), np.log10(high), n)


def zscore_columns(m: np.ndarray, mean: np.ndarray | None = None, std: np.ndarray | None = None,
                   label: str = "column") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise (x - mean) / std with population std.

    With stats given, applies them (held-out data reuses training stats).
    A zero-variance column is an error naming the offending column.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"zscore_columns expects a 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("zscore_columns: non-finite input")
    if mean is None:
        mean = m.mean(axis=0)
        std = m.std(axis=0)  # ddof=0
        dead = np.flatnonzero(std == 0)
        if dead.size:
            raise ValueError(f"zscore_columns: {label} {int(dead[0])} has zero variance")
    return (m - mean) / std, mean, std


@dataclass
class DesignMatrix:
    X: np.ndarray
    lags: tuple[int, ...]
    n_features: int
    fingerprint: int = 0


def build_design(features: np.ndarray, lags=DEFAULT_LAGS, fingerprint: int = 0) -> DesignMatrix:
    """Stack lagged copies of the feature matrix as column blocks.

    Block for lag L holds, at row t, the features from sample t - L;
    rows before the series start are zero-filled (features are z-scored,
    so zero is the mean). Blocks are ordered by increasing lag.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("build_design expects (samples, features)")
    lags = tuple(int(l) for l in lags)
    if not lags or any(l < 1 for l in lags):
        raise ValueError("lags must be positive integers")
    if sorted(lags) != list(lags):
        raise ValueError("lags must be given in increasing order")
    n, f = features.shape
    if max(lags) >= n:
        raise ValueError(f"lag {max(lags)} >= sequence length {n}")
    X = np.zeros((n, f * len(lags)), dtype=np.float64)
    for k, lag in enumerate(lags):
        X[lag:, k * f : (k + 1) * f] = features[:-lag]
    return DesignMatrix(X, lags, f, fingerprint)


# ---------------------------------------------------------------------------
# ridge solver


def ridge_solve(X: np.ndarray, Y: np.ndarray, alphas) -> np.ndarray:
    """Coefficients for every alpha from one shared eigendecomposition.

    Returns (n_alphas, p, v). Primal when p <= n, dual otherwise.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row mismatch: X has {X.shape[0]}, Y has {Y.shape[0]}")
    alphas = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    n, p = X.shape
    out = np.empty((alphas.size, p, Y.shape[1]), dtype=np.float64)
    if p <= n:
        lam, V = np.linalg.eigh(X.T @ X)
        lam = np.maximum(lam, 0.0)
        C = V.T @ (X.T @ Y)  # (p, v)
        for i, a in enumerate(alphas):
            out[i] = V @ (C / (lam + a)[:, None])
    else:
        lam, U = np.linalg.eigh(X @ X.T)
        lam = np.maximum(lam, 0.0)
        D = U.T @ Y  # (n, v)
        for i, a in enumerate(alphas):
            out[i] = X.T @ (U @ (D / (lam + a)[:, None]))
    return out


def _cv_folds(n: int, n_splits: int, n_resamples: int, seed: int):
    """Contiguous-block folds, boundaries rotated per resample."""
    if n_splits < 2:
        raise ValueError("cross-validation needs at least 2 splits")
    if n < n_splits:
        raise ValueError(f"cannot split {n} samples into {n_splits} blocks")
    rng = np.random.default_rng(seed)
    for _ in range(n_resamples):
        offset = int(rng.integers(0, n))
        order = np.roll(np.arange(n), -offset)
        for block in np.array_split(order, n_splits):
            test = block
            train = np.setdiff1d(np.arange(n), test)
            yield train, test


@dataclass
class RidgeFit:
    betas: np.ndarray        # (p, v)
    alphas: np.ndarray       # (v,) chosen per voxel
    cv_scores: np.ndarray    # (v,) mean held-out R^2 at the chosen alpha
    alpha_grid: np.ndarray
    cv_curve: np.ndarray     # (n_alphas, v) mean held-out R^2


def fit_ridge(X: np.ndarray, Y: np.ndarray, alphas=None, n_splits: int = 10,
              n_resamples: int = 10, seed: int = 0) -> RidgeFit:
    """Per-voxel ridge with cross-validated alpha.

    Expects column-standardized X and Y (this function does not
    re-standardize). With a single-alpha grid the CV sweep is skipped.
    Ties in the CV curve resolve toward the larger alpha.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row mismatch: X has {X.shape[0]}, Y has {Y.shape[0]}")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise ValueError("fit_ridge: non-finite input")
    grid = alpha_grid() if alphas is None else np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    n, p = X.shape
    v = Y.shape[1]

    if grid.size == 1:
        betas = ridge_solve(X, Y, grid)[0]
        return RidgeFit(betas, np.full(v, grid[0]), np.full(v, np.nan), grid,
                        np.full((1, v), np.nan))

    score_sum = np.zeros((grid.size, v), dtype=np.float64)
    n_folds = 0
    for train, test in _cv_folds(n, n_splits, n_resamples, seed):
        Xtr, Ytr = X[train], Y[train]
        Xte, Yte = X[test], Y[test]
        sol = ridge_solve(Xtr, Ytr, grid)  # (n_alphas, p, v)
        ss_tot = ((Yte - Yte.mean(axis=0)) ** 2).sum(axis=0)
        ss_tot = np.where(ss_tot == 0, np.nan, ss_tot)
        for i in range(grid.size):
            resid = Yte - Xte @ sol[i]
            score_sum[i] += 1.0 - (resid**2).sum(axis=0) / ss_tot
        n_folds += 1
    curve = score_sum / n_folds

    # argmax per voxel, ties toward the larger alpha (grid is ascending)
    best = np.zeros(v, dtype=np.int64)
    for j in range(v):
        col = curve[:, j]
        best[j] = np.flatnonzero(col == col.max())[-1]
    chosen = grid[best]
    cv_scores = curve[best, np.arange(v)]

    betas = np.empty((p, v), dtype=np.float64)
    full = ridge_solve(X, Y, np.unique(chosen))
    uniq = np.unique(chosen)
    for k, a in enumerate(uniq):
        cols = np.flatnonzero(chosen == a)
        betas[:, cols] = full[k][:, cols]
    return RidgeFit(betas, chosen, cv_scores, grid, curve)


# ---------------------------------------------------------------------------
# noise ceiling and accuracy


@dataclass
class NoiseCeiling:
    mean_r: np.ndarray       # (v,) mean pairwise Pearson r, NaN where undefined
    p_values: np.ndarray     # (v,) one-sided permutation p, NaN where undefined
    mask: np.ndarray         # (v,) bool, True where defined and p < threshold
    excluded: dict[int, str]
    n_permutations: int
    threshold: float


def _standardize_series(reps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # z-score each (repeat, voxel) series over samples; flag zero-variance series
    mean = reps.mean(axis=1, keepdims=True)
    std = reps.std(axis=1, keepdims=True)
    bad = (std == 0).any(axis=0).ravel()
    std = np.where(std == 0, 1.0, std)
    return (reps - mean) / std, bad


def _mean_pairwise_r(z: np.ndarray) -> np.ndarray:
    # z: (R, n, v) standardized; mean over the R*(R-1)/2 repeat pairs
    R, n, _ = z.shape
    acc = 0.0
    count = 0
    for i in range(R):
        for j in range(i + 1, R):
            acc = acc + (z[i] * z[j]).mean(axis=0)
            count += 1
    return acc / count


def noise_ceiling(repeats: np.ndarray, n_permutations: int = 1000, seed: int = 0,
                  threshold: float = 0.05) -> NoiseCeiling:
    """Repeat reliability with a circular-shift permutation test.

    repeats: (R, samples, voxels), R >= 2. The ceiling is the mean Pearson
    correlation over all repeat pairs. The null shifts every repeat but the
    first by independent per-voxel circular offsets; the p-value is the
    one-sided exceedance fraction with the +1 correction. Voxels with a
    constant repeat series are excluded (correlation undefined).
    """
    reps = np.asarray(repeats, dtype=np.float64)
    if reps.ndim != 3 or reps.shape[0] < 2:
        raise ValueError("noise_ceiling expects (repeats >= 2, samples, voxels)")
    R, n, v = reps.shape
    z, bad = _standardize_series(reps)
    observed = _mean_pairwise_r(z)

    rng = np.random.default_rng(seed)
    exceed = np.zeros(v, dtype=np.int64)
    rows = np.arange(n)[:, None]
    for _ in range(n_permutations):
        zp = np.empty_like(z)
        zp[0] = z[0]
        for r in range(1, R):
            # offset 0 is the identity permutation; the +1 correction already
            # counts it, so surrogate draws are restricted to proper shifts
            offsets = rng.integers(1, n, size=v) if n > 1 else np.zeros(v, dtype=np.int64)
            zp[r] = z[r][(rows + offsets[None, :]) % n, np.arange(v)[None, :]]
        exceed += _mean_pairwise_r(zp) >= observed
    p = (1.0 + exceed) / (1.0 + n_permutations)

    excluded = {int(i): "constant repeat series (correlation undefined)" for i in np.flatnonzero(bad)}
    observed = np.where(bad, np.nan, observed)
    p = np.where(bad, np.nan, p)
    mask = ~bad & (p < threshold)
    return NoiseCeiling(observed, p, mask, excluded, n_permutations, threshold)


def prediction_accuracy(predicted: np.ndarray, actual: np.ndarray,
                        ceiling: NoiseCeiling | np.ndarray | None = None,
                        eps: float = CEILING_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Per-voxel Pearson r and its ceiling-corrected form.

    corrected = clip(r / max(mean_r, eps), -1, 1). Without a ceiling the
    corrected array equals the raw one. Zero-variance predictions are an
    error (correlation undefined on the model side is a bug upstream).
    """
    P = np.asarray(predicted, dtype=np.float64)
    A = np.asarray(actual, dtype=np.float64)
    if P.shape != A.shape or P.ndim != 2:
        raise ValueError("prediction_accuracy expects matching (samples, voxels) matrices")
    sp = P.std(axis=0)
    sa = A.std(axis=0)
    dead = np.flatnonzero(sp == 0)
    if dead.size:
        raise ValueError(f"prediction_accuracy: voxel {int(dead[0])} has a zero-variance prediction")
    sa = np.where(sa == 0, np.nan, sa)
    r = ((P - P.mean(axis=0)) * (A - A.mean(axis=0))).mean(axis=0) / (sp * sa)
    if ceiling is None:
        return r, r.copy()
    mean_r = ceiling.mean_r if isinstance(ceiling, NoiseCeiling) else np.asarray(ceiling, dtype=np.float64)
    corrected = np.clip(r / np.maximum(mean_r, eps), -1.0, 1.0)
    return r, corrected


# ---------------------------------------------------------------------------
# estimator


class RidgeEncoder(BaseEstimator):
    """Lagged, standardized ridge encoding model with CV alpha selection.

    fit(features, responses) z-scores both with fit-set statistics, builds
    the lagged design, standardizes its columns, and fits per-voxel ridge.
    predict(features) reapplies every stored statistic, so held-out data
    never leaks into standardization. Predictions live in the z-scored
    response space (correlation metrics are invariant to that).
    """

    def __init__(self, lags=DEFAULT_LAGS, alphas=None, n_splits=10, n_resamples=10, seed=0):
        self.lags = lags
        self.alphas = alphas
        self.n_splits = n_splits
        self.n_resamples = n_resamples
        self.seed = seed

    def fit(self, X, y, fingerprint: int = 0):
        F = np.asarray(X, dtype=np.float64)
        Y = np.asarray(y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if F.shape[0] != Y.shape[0]:
            raise ValueError(f"row mismatch: features {F.shape[0]}, responses {Y.shape[0]}")
        Fz, self.feature_mean_, self.feature_std_ = zscore_columns(F, label="feature column")
        Yz, self.response_mean_, self.response_std_ = zscore_columns(Y, label="response column")
        design = build_design(Fz, self.lags, fingerprint)
        Xz, self.design_mean_, self.design_std_ = zscore_columns(design.X, label="design column")
        grid = alpha_grid() if self.alphas is None else np.asarray(self.alphas, dtype=np.float64)
        fit = fit_ridge(Xz, Yz, grid, n_splits=self.n_splits,
                        n_resamples=self.n_resamples, seed=self.seed)
        self.fit_ = fit
        self.coef_ = fit.betas.T            # (voxels, lags * features)
        self.alpha_ = fit.alphas
        self.cv_score_ = fit.cv_scores
        self.n_features_in_ = F.shape[1]
        self.n_lags_ = len(tuple(self.lags))
        self.fingerprint_ = fingerprint
        return self

    def _design(self, X) -> np.ndarray:
        F = np.asarray(X, dtype=np.float64)
        if F.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {F.shape[1]}")
        Fz, _, _ = zscore_columns(F, self.feature_mean_, self.feature_std_)
        design = build_design(Fz, self.lags, self.fingerprint_)
        Xz, _, _ = zscore_columns(design.X, self.design_mean_, self.design_std_)
        return Xz

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "coef_"):
            raise RuntimeError("RidgeEncoder is not fitted; call fit() first")
        return self._design(X) @ self.coef_.T
