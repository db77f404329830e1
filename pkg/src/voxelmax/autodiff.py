"""Reverse-mode automatic differentiation on dense numpy arrays.

A Tensor wraps a float32/float64 ndarray. Operators compute the forward
value eagerly and, when any input participates in gradient tracking,
record a backward closure on the output node. Calling ``backward()`` on a
scalar output walks the recorded graph once in reverse topological order
and accumulates gradients into every tensor on the path (fan-out sums).

Conventions, fixed here so every consumer agrees:

- relu'(0) = 0; the derivative of a complex magnitude at 0 is 0; maxpool
  ties resolve to the first element in row-major window order.
- A traced graph supports exactly one backward pass. A second call raises
  (closures are dropped as they run, so retrying cannot silently return
  partial gradients).
- Every operator checks its output for NaN/Inf and raises
  FloatingPointError on the first non-finite value.
- Tensors built with requires_grad=False record nothing; a frozen forward
  pass touches no shared state and is safe to run from multiple threads.
  A tracing graph belongs to the thread that builds it.
"""

from __future__ import annotations

import itertools

import numpy as np

_ALLOWED_DTYPES = (np.float32, np.float64)


def _finite_or_raise(data: np.ndarray, op: str) -> None:
    # min/max propagate NaN and expose infinities without allocating a mask
    if data.size == 0:
        return
    lo, hi = data.min(), data.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise FloatingPointError(f"non-finite values in output of {op}")


class Tensor:
    """Dense array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        _finite_or_raise(arr, "tensor construction")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.data.shape}, dtype={self.data.dtype})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Run one reverse pass from this scalar output."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.data.shape}")
        if self._consumed:
            raise RuntimeError("graph already consumed (double backward unsupported)")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._backward
            if fn is not None and node.grad is not None:
                fn(node.grad)
            node._backward = None
            node._consumed = True

    # Arithmetic sugar; scalars are lifted to constant tensors.
    def __add__(self, other):
        return add(self, as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, backward_fn) -> Tensor:
    """Wrap an op result; record the closure only if gradients can flow."""
    _finite_or_raise(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out._consumed = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), "mul", backward)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(-a.data, (a,), "neg", backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _make(a.data * c, (a,), "scale", backward)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))  # subgradient 0 at exactly 0

    return _make(data, (a,), "relu", backward)


def tsum(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.asarray(a.data.sum(), dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), "sum", backward)


def tmean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    data = np.asarray(a.data.mean(), dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g / n, a.data.shape).copy())

    return _make(data, (a,), "mean", backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError(f"dot needs equal-length vectors, got {a.data.shape} and {b.data.shape}")
    data = np.asarray(a.data @ b.data, dtype=np.result_type(a.dtype, b.dtype))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(data, (a, b), "dot", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), "matmul", backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), "reshape", backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(data, tuple(tensors), "concat", backward)


def affine_channels(a: Tensor, mean, std) -> Tensor:
    """Per-channel (x - mean) / std with the channel axis third from last."""
    a = as_tensor(a)
    if a.data.ndim < 3:
        raise ValueError("affine_channels expects (..., C, H, W)")
    c = a.data.shape[-3]
    m = np.asarray(mean, dtype=a.dtype).reshape(c, 1, 1)
    s = np.asarray(std, dtype=a.dtype).reshape(c, 1, 1)
    if np.any(s == 0):
        raise ValueError("affine_channels: zero std")
    data = (a.data - m) / s

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / s)

    return _make(data, (a,), "affine_channels", backward)


# ---------------------------------------------------------------------------
# structural ops


def pad2d(a: Tensor, padding: int) -> Tensor:
    a = as_tensor(a)
    p = int(padding)
    if p < 0:
        raise ValueError("pad2d: negative padding")
    if p == 0:
        return a
    width = [(0, 0)] * (a.data.ndim - 2) + [(p, p), (p, p)]
    data = np.pad(a.data, width)

    def backward(g):
        if a.requires_grad:
            sl = (Ellipsis, slice(p, g.shape[-2] - p), slice(p, g.shape[-1] - p))
            a._accumulate(g[sl])

    return _make(data, (a,), "pad2d", backward)


def crop2d(a: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    a = as_tensor(a)
    H, W = a.data.shape[-2:]
    if top < 0 or left < 0 or top + height > H or left + width > W:
        raise ValueError(f"crop2d window [{top}:{top+height}, {left}:{left+width}] outside {H}x{W}")
    sl = (Ellipsis, slice(top, top + height), slice(left, left + width))
    data = a.data[sl].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[sl] = g
            a._accumulate(full)

    return _make(data, (a,), "crop2d", backward)


# ---------------------------------------------------------------------------
# convolution / pooling


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """NCHW cross-correlation with square stride/padding.

    x: (N, Cin, H, W), w: (Cout, Cin, kh, kw), b: (Cout,) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects x (N,Cin,H,W) and w (Cout,Cin,kh,kw)")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"conv2d channel mismatch: {x.data.shape[1]} vs {w.data.shape[1]}")
    s, p = int(stride), int(padding)
    N, Cin, H, W = x.data.shape
    Cout, _, kh, kw = w.data.shape
    Hp, Wp = H + 2 * p, W + 2 * p
    if kh > Hp or kw > Wp:
        raise ValueError("conv2d kernel larger than padded input")
    Ho, Wo = (Hp - kh) // s + 1, (Wp - kw) // s + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data

    out = np.zeros((N, Ho, Wo, Cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i : i + (Ho - 1) * s + 1 : s, j : j + (Wo - 1) * s + 1 : s]
            out += np.tensordot(xs, w.data[:, :, i, j], axes=([1], [1]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        b = as_tensor(b)
        out = out + b.data.reshape(1, Cout, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        need_x = x.requires_grad
        need_w = w.requires_grad
        if not (need_x or need_w):
            return
        gxp = np.zeros_like(xp) if need_x else None
        gw = np.zeros_like(w.data) if need_w else None
        for i in range(kh):
            for j in range(kw):
                rows = slice(i, i + (Ho - 1) * s + 1, s)
                cols = slice(j, j + (Wo - 1) * s + 1, s)
                if need_x:
                    contrib = np.tensordot(g, w.data[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, rows, cols] += contrib.transpose(0, 3, 1, 2)
                if need_w:
                    xs = xp[:, :, rows, cols]
                    gw[:, :, i, j] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
        if need_x:
            x._accumulate(gxp[:, :, p : p + H, p : p + W] if p else gxp)
        if need_w:
            w._accumulate(gw)

    return _make(out, parents, "conv2d", backward)


def maxpool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling (stride == kernel); trailing remainder dropped.

    Ties route the gradient to the first maximal element in row-major
    window order.
    """
    x = as_tensor(x)
    k = int(kernel)
    if x.data.ndim != 4:
        raise ValueError("maxpool2d expects (N,C,H,W)")
    N, C, H, W = x.data.shape
    Ho, Wo = H // k, W // k
    if Ho == 0 or Wo == 0:
        raise ValueError(f"maxpool2d kernel {k} larger than input {H}x{W}")
    win = (
        x.data[:, :, : Ho * k, : Wo * k]
        .reshape(N, C, Ho, k, Wo, k)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(N, C, Ho, Wo, k * k)
    )
    idx = win.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        gwin = np.zeros((N, C, Ho, Wo, k * k), dtype=g.dtype)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, : Ho * k, : Wo * k] = (
            gwin.reshape(N, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho * k, Wo * k)
        )
        x._accumulate(gx)

    return _make(out, (x,), "maxpool2d", backward)


def _pool_edges(extent: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(size)
    starts = (i * extent) // size  # floor(i*E/S)
    ends = -((-(i + 1) * extent) // size)  # ceil((i+1)*E/S)
    return starts, ends


def adaptive_avg_pool(x: Tensor, out_sizes) -> Tensor:
    """Adaptive average pooling over the trailing len(out_sizes) dims.

    Bin d covers [floor(i*E/S), ceil((i+1)*E/S)); bins may overlap when S
    does not divide E. Never upsamples: each S must satisfy 1 <= S <= E.
    """
    x = as_tensor(x)
    out_sizes = tuple(int(s) for s in out_sizes)
    n = len(out_sizes)
    if n == 0:
        return x
    if x.data.ndim < n:
        raise ValueError("adaptive_avg_pool: more output dims than input dims")
    spatial = x.data.shape[-n:]
    lead = x.data.shape[:-n]
    for S, E in zip(out_sizes, spatial):
        if S < 1 or S > E:
            raise ValueError(f"adaptive_avg_pool: output size {S} invalid for extent {E}")
    edges = [_pool_edges(E, S) for S, E in zip(out_sizes, spatial)]
    out = np.empty(lead + out_sizes, dtype=x.dtype)
    red_axes = tuple(range(-n, 0))
    for idx in itertools.product(*(range(S) for S in out_sizes)):
        sl = tuple(slice(edges[d][0][i], edges[d][1][i]) for d, i in enumerate(idx))
        out[(Ellipsis,) + idx] = x.data[(Ellipsis,) + sl].mean(axis=red_axes)

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        for idx in itertools.product(*(range(S) for S in out_sizes)):
            sl = tuple(slice(edges[d][0][i], edges[d][1][i]) for d, i in enumerate(idx))
            area = 1
            for d, i in enumerate(idx):
                area *= int(edges[d][1][i] - edges[d][0][i])
            gx[(Ellipsis,) + sl] += g[(Ellipsis,) + idx].reshape(lead + (1,) * n) / area
        x._accumulate(gx)

    return _make(out, (x,), "adaptive_avg_pool", backward)


# ---------------------------------------------------------------------------
# sampling


def bilinear_sample(x: Tensor, grid_y: np.ndarray, grid_x: np.ndarray) -> Tensor:
    """Sample x(..., H, W) at float pixel coordinates with zero fill.

    grid_y/grid_x give input coordinates per output pixel (Ho, Wo). The
    grid is a constant: gradients flow to x only. Out-of-range bilinear
    taps contribute zero, so outputs are convex combinations of in-range
    pixels and implicit zeros.
    """
    x = as_tensor(x)
    gy = np.asarray(grid_y, dtype=np.float64)
    gx = np.asarray(grid_x, dtype=np.float64)
    if gy.shape != gx.shape or gy.ndim != 2:
        raise ValueError("bilinear_sample: grid_y/grid_x must share a 2-D shape")
    H, W = x.data.shape[-2:]
    lead = x.data.shape[:-2]
    L = int(np.prod(lead)) if lead else 1
    Ho, Wo = gy.shape

    y0 = np.floor(gy).astype(np.int64)
    x0 = np.floor(gx).astype(np.int64)
    taps = []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yt, xt = y0 + dy, x0 + dx
        wy = 1.0 - np.abs(gy - yt)
        wx = 1.0 - np.abs(gx - xt)
        valid = (yt >= 0) & (yt < H) & (xt >= 0) & (xt < W)
        idx = (np.clip(yt, 0, H - 1) * W + np.clip(xt, 0, W - 1)).ravel()
        wgt = (wy * wx * valid).ravel()
        taps.append((idx, wgt))

    xf = x.data.reshape(L, H * W)
    out = np.zeros((L, Ho * Wo), dtype=x.dtype)
    for idx, wgt in taps:
        out += xf[:, idx] * wgt.astype(x.dtype)
    out = out.reshape(lead + (Ho, Wo))

    def backward(g):
        if not x.requires_grad:
            return
        gf = g.reshape(L, Ho * Wo)
        base = (np.arange(L, dtype=np.int64) * (H * W))[:, None]
        gx_flat = np.zeros(L * H * W, dtype=np.float64)
        for idx, wgt in taps:
            flat = (base + idx[None, :]).ravel()
            gx_flat += np.bincount(flat, weights=(gf * wgt).ravel(), minlength=L * H * W)
        x._accumulate(gx_flat.reshape(x.data.shape).astype(x.dtype))

    return _make(out, (x,), "bilinear_sample", backward)


# ---------------------------------------------------------------------------
# Fourier ops (complex values carried as real re/im tensor pairs)


def inverse_fft2(re: Tensor, im: Tensor) -> tuple[Tensor, Tensor]:
    """2-D inverse DFT over the trailing two axes.

    Input and output are (re, im) pairs of real tensors. The adjoint of
    the inverse DFT is the forward DFT scaled by 1/(H*W), which is what
    the backward closures apply.
    """
    re, im = as_tensor(re), as_tensor(im)
    if re.data.shape != im.data.shape:
        raise ValueError("inverse_fft2: re/im shape mismatch")
    if re.data.ndim < 2:
        raise ValueError("inverse_fft2 expects at least 2 dims")
    H, W = re.data.shape[-2:]
    y = np.fft.ifft2(re.data + 1j * im.data, axes=(-2, -1))
    out_re = np.ascontiguousarray(y.real.astype(re.dtype))
    out_im = np.ascontiguousarray(y.imag.astype(re.dtype))

    def _push(gc: np.ndarray) -> None:
        if re.requires_grad:
            re._accumulate(gc.real.astype(re.dtype))
        if im.requires_grad:
            im._accumulate(gc.imag.astype(im.dtype))

    def backward_re(g):
        _push(np.fft.fft2(g.astype(np.float64), axes=(-2, -1)) / (H * W))

    def backward_im(g):
        _push(1j * np.fft.fft2(g.astype(np.float64), axes=(-2, -1)) / (H * W))

    node_re = _make(out_re, (re, im), "inverse_fft2", backward_re)
    node_im = _make(out_im, (re, im), "inverse_fft2", backward_im)
    return node_re, node_im


def complex_magnitude(re: Tensor, im: Tensor) -> Tensor:
    """Elementwise sqrt(re^2 + im^2); subgradient 0 where the magnitude is 0."""
    re, im = as_tensor(re), as_tensor(im)
    if re.data.shape != im.data.shape:
        raise ValueError("complex_magnitude: re/im shape mismatch")
    mag = np.hypot(re.data, im.data)

    def backward(g):
        safe = np.where(mag > 0, mag, 1.0)
        if re.requires_grad:
            re._accumulate(np.where(mag > 0, g * re.data / safe, 0.0).astype(re.dtype))
        if im.requires_grad:
            im._accumulate(np.where(mag > 0, g * im.data / safe, 0.0).astype(im.dtype))

    return _make(mag.astype(re.dtype), (re, im), "complex_magnitude", backward)


def inverse_fft2_magnitude(re: Tensor, im: Tensor) -> Tensor:
    """|IDFT2(re + i*im)|, the rendering primitive for Fourier images."""
    yr, yi = inverse_fft2(re, im)
    return complex_magnitude(yr, yi)


# ---------------------------------------------------------------------------
# dispatch

OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "scale": scale,
    "relu": relu,
    "sum": tsum,
    "mean": tmean,
    "dot": dot,
    "matmul": matmul,
    "reshape": reshape,
    "concat": concat,
    "affine_channels": affine_channels,
    "pad2d": pad2d,
    "crop2d": crop2d,
    "conv2d": conv2d,
    "maxpool2d": maxpool2d,
    "adaptive_avg_pool": adaptive_avg_pool,
    "bilinear_sample": bilinear_sample,
    "inverse_fft2": inverse_fft2,
    "complex_magnitude": complex_magnitude,
    "inverse_fft2_magnitude": inverse_fft2_magnitude,
}


def forward_op(op: str, *inputs, **params):
    """Apply a registered operator by name."""
    try:
        fn = OPS[op]
    except KeyError:
        raise ValueError(f"unknown operator: {op!r}") from None
    return fn(*inputs, **params)


def gradients(output: Tensor, targets) -> list[np.ndarray]:
    """Backward from a scalar output; return the gradient for each target."""
    targets = list(targets)
    output.backward()
    grads = []
    for t in targets:
        grads.append(t.grad if t.grad is not None else np.zeros_like(t.data))
    return grads
