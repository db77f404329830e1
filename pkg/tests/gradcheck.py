"""Directional finite-difference machinery shared by the gradient tests.

Each check draws one random direction over all differentiable inputs of
an op, scalarizes the output through a fixed random weighting, and
compares the central difference along that direction against the
analytic directional derivative from backward(). Case generators keep
inputs away from the genuine kinks (relu at 0, pooling ties, magnitude
at 0) so the finite difference is actually probing a smooth point;
the kink conventions themselves are pinned by separate exact tests.
"""

from __future__ import annotations

import numpy as np

from voxelmax import autodiff as ad
from voxelmax.autodiff import Tensor

RELU_MARGIN = 0.05
MAG_MARGIN = 0.1
POOL_MARGIN = 1e-3


def _as_outputs(out):
    return list(out) if isinstance(out, tuple) else [out]


def directional_check(op: str, arrays, params, rng, h=1e-5, tol=1e-5, list_input=False):
    """One probe: relative error between central FD and backward()."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]

    def run(inputs):
        tensors = [Tensor(a) for a in inputs]
        call = [tensors] if list_input else tensors
        return _as_outputs(ad.forward_op(op, *call, **params))

    base = run(arrays)
    weights = [rng.standard_normal(o.shape) for o in base]
    dirs = [rng.standard_normal(a.shape) for a in arrays]
    norm = np.sqrt(sum((d * d).sum() for d in dirs))
    dirs = [d / norm for d in dirs]

    def scalar(t: float) -> float:
        outs = run([a + t * d for a, d in zip(arrays, dirs)])
        return float(sum((w * o.data).sum() for w, o in zip(weights, outs)))

    fd = (scalar(h) - scalar(-h)) / (2.0 * h)

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    call = [tensors] if list_input else tensors
    outs = _as_outputs(ad.forward_op(op, *call, **params))
    loss = None
    for w, o in zip(weights, outs):
        term = ad.tsum(ad.mul(o, Tensor(w)))
        loss = term if loss is None else ad.add(loss, term)
    grads = ad.gradients(loss, tensors)
    an = float(sum((d * g).sum() for d, g in zip(dirs, grads)))

    rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
    assert rel < tol, f"{op}: fd={fd:.10g} analytic={an:.10g} rel={rel:.3g}"
    return rel


# ---------------------------------------------------------------------------
# case generators: (arrays, params, list_input) per draw


def _shape2(rng, lo=1, hi=5):
    return tuple(int(s) for s in rng.integers(lo, hi + 1, size=2))


def _away_from_zero(x, margin):
    sign = np.where(x >= 0, 1.0, -1.0)
    return np.where(np.abs(x) < margin, x + sign * 2 * margin, x)


def _broadcast_pair(rng):
    full = tuple(int(s) for s in rng.integers(1, 5, size=int(rng.integers(1, 4))))
    drop = rng.random(len(full)) < 0.3
    other = tuple(1 if d else s for s, d in zip(full, drop))
    if rng.random() < 0.5 and len(other) > 1:
        other = other[1:]
    a = rng.standard_normal(full)
    b = rng.standard_normal(other)
    return ([a, b] if rng.random() < 0.5 else [b, a]), {}


def gen_add(rng):
    arrays, p = _broadcast_pair(rng)
    return arrays, p, False


gen_sub = gen_add
gen_mul = gen_add


def gen_neg(rng):
    return [rng.standard_normal(_shape2(rng))], {}, False


def gen_scale(rng):
    return [rng.standard_normal(_shape2(rng))], {"c": float(rng.uniform(-3, 3))}, False


def gen_relu(rng):
    x = _away_from_zero(rng.standard_normal(_shape2(rng, 2, 6)), RELU_MARGIN)
    return [x], {}, False


def gen_sum(rng):
    return [rng.standard_normal(_shape2(rng))], {}, False


gen_mean = gen_sum


def gen_dot(rng):
    n = int(rng.integers(2, 12))
    return [rng.standard_normal(n), rng.standard_normal(n)], {}, False


def gen_matmul(rng):
    m, k, n = (int(s) for s in rng.integers(1, 6, size=3))
    return [rng.standard_normal((m, k)), rng.standard_normal((k, n))], {}, False


def gen_reshape(rng):
    a = rng.standard_normal((2, 3, 4))
    shapes = [(6, 4), (24,), (4, 3, 2), (2, 12)]
    return [a], {"shape": shapes[int(rng.integers(len(shapes)))]}, False


def gen_concat(rng):
    rank = int(rng.integers(1, 3))
    axis = int(rng.integers(rank))
    base = [int(s) for s in rng.integers(2, 4, size=rank)]
    arrays = []
    for _ in range(int(rng.integers(2, 4))):
        shape = list(base)
        shape[axis] = int(rng.integers(1, 4))
        arrays.append(rng.standard_normal(shape))
    return arrays, {"axis": axis}, True


def gen_affine_channels(rng):
    c = int(rng.integers(1, 4))
    x = rng.standard_normal((c, 4, 4)) if rng.random() < 0.5 else rng.standard_normal((2, c, 4, 4))
    mean = rng.standard_normal(c)
    std = rng.uniform(0.5, 2.0, size=c)
    return [x], {"mean": mean, "std": std}, False


def gen_pad2d(rng):
    x = rng.standard_normal((2, 4, 4))
    return [x], {"padding": int(rng.integers(1, 4))}, False


def gen_crop2d(rng):
    h, w = 6, 7
    x = rng.standard_normal((2, h, w))
    ch = int(rng.integers(1, h))
    cw = int(rng.integers(1, w))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return [x], {"top": top, "left": left, "height": ch, "width": cw}, False


def gen_conv2d(rng):
    n, ci, co = 1, int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    size = int(rng.integers(k, k + 4))
    x = rng.standard_normal((n, ci, size, size))
    w = rng.standard_normal((co, ci, k, k))
    b = rng.standard_normal(co)
    return [x, w, b], {"stride": stride, "padding": padding}, False


def gen_maxpool2d(rng):
    k = int(rng.integers(2, 4))
    size = int(rng.integers(k, 3 * k + 1))
    # globally distinct values with a margin keep every window tie-free,
    # so the probe cannot flip the argmax
    x = rng.standard_normal((1, 2, size, size))
    while np.diff(np.sort(x, axis=None)).min() < POOL_MARGIN:
        x = rng.standard_normal(x.shape) * 5.0
    return [x], {"kernel": k}, False


def gen_adaptive_avg_pool(rng):
    rank = int(rng.integers(1, 3))
    extents = [int(rng.integers(2, 9)) for _ in range(rank)]
    outs = tuple(int(rng.integers(1, e + 1)) for e in extents)
    x = rng.standard_normal((2, *extents))
    return [x], {"out_sizes": outs}, False


def gen_bilinear_sample(rng):
    h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    x = rng.standard_normal((2, h, w))
    oh, ow = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    # mix of interior, fractional, and out-of-bounds coordinates
    gy = rng.uniform(-1.0, h, size=(oh, ow))
    gx = rng.uniform(-1.0, w, size=(oh, ow))
    return [x], {"grid_y": gy, "grid_x": gx}, False


def gen_inverse_fft2(rng):
    shape = (2, int(rng.integers(2, 7)), int(rng.integers(2, 7)))
    return [rng.standard_normal(shape), rng.standard_normal(shape)], {}, False


def gen_complex_magnitude(rng):
    shape = _shape2(rng, 2, 5)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    mag = np.sqrt(re * re + im * im)
    boost = np.where(mag < MAG_MARGIN, (2 * MAG_MARGIN) / np.maximum(mag, 1e-12), 1.0)
    return [re * boost, im * boost], {}, False


def gen_inverse_fft2_magnitude(rng):
    h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    # spectrum of a strictly positive image keeps |IDFT| off the kink
    pix = rng.uniform(0.3, 1.0, size=(2, h, w))
    spec = np.fft.fft2(pix, axes=(-2, -1))
    return [spec.real, spec.imag], {}, False


CASE_GENERATORS = {
    "add": gen_add,
    "sub": gen_sub,
    "mul": gen_mul,
    "neg": gen_neg,
    "scale": gen_scale,
    "relu": gen_relu,
    "sum": gen_sum,
    "mean": gen_mean,
    "dot": gen_dot,
    "matmul": gen_matmul,
    "reshape": gen_reshape,
    "concat": gen_concat,
    "affine_channels": gen_affine_channels,
    "pad2d": gen_pad2d,
    "crop2d": gen_crop2d,
    "conv2d": gen_conv2d,
    "maxpool2d": gen_maxpool2d,
    "adaptive_avg_pool": gen_adaptive_avg_pool,
    "bilinear_sample": gen_bilinear_sample,
    "inverse_fft2": gen_inverse_fft2,
    "complex_magnitude": gen_complex_magnitude,
    "inverse_fft2_magnitude": gen_inverse_fft2_magnitude,
}


def check_operator(op: str, n_cases: int, seed: int = 0, h=1e-5, tol=1e-5) -> float:
    """Run n_cases directional probes for one op; returns the worst error."""
    rng = np.random.default_rng(seed)
    gen = CASE_GENERATORS[op]
    worst = 0.0
    for _ in range(n_cases):
        arrays, params, list_input = gen(rng)
        worst = max(worst, directional_check(op, arrays, params, rng, h=h, tol=tol,
                                             list_input=list_input))
    return worst
