"""Dense NCHW tensors with taped reverse-mode differentiation.

Values are numpy arrays (float32 for training, float64 for verification)
wrapped in immutable `Tensor` handles. Operations applied while a `Tape`
is active append `TapeRecord`s in topological order. `Tape.backward`
walks the records in reverse; with ``create_graph=True`` the vector-
Jacobian products are themselves recorded onto the same tape, which is
what makes the R1 penalty (a gradient norm that is differentiated again)
work: the backward pass becomes new tape records.

Every differentiation rule is expressed through other recorded operations,
so the operation set {conv2d, add, mul, leaky_relu, square, reductions,
pooling, matmul, reshape} is closed under repeated differentiation.
Leaky-relu's second derivative is treated as zero almost everywhere: its
backward multiplies by a constant slope mask. Ops listed in
`_FIRST_ORDER_ONLY` refuse to participate in a ``create_graph`` backward.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError

SUPPORTED_DTYPES = (np.float32, np.float64)

# Direct convolution is verifiable, not fast; keep spatial extents desk-sized.
MAX_CONV_HW = 64


class Tensor:
    """Immutable dense array, optionally linked to a tape record."""

    __slots__ = ("data", "node")

    def __init__(self, data: np.ndarray, node=None):
        self.data = data
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ConfigError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __repr__(self):
        tag = "" if self.node is None else f" op={self.node.op}"
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag})"


class TapeRecord:
    __slots__ = ("op", "inputs", "out", "ctx", "tape")

    def __init__(self, op, inputs, out, ctx, tape):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.ctx = ctx
        self.tape = tape


class _State(threading.local):
    def __init__(self):
        self.tape = None
        self.recording = False


_STATE = _State()


class Tape:
    """Single-writer record of operations for one differentiation scope.

    ``second_order=True`` permits ``create_graph`` backwards, whose VJP
    operations are appended to this same tape as new records.
    """

    def __init__(self, second_order: bool = False):
        self.second_order = second_order
        self.records: list[TapeRecord] = []
        self.leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        if _STATE.tape is not None:
            raise ConfigError("a tape is already active on this thread")
        _STATE.tape = self
        _STATE.recording = True
        return self

    def __exit__(self, *exc):
        _STATE.tape = None
        _STATE.recording = False
        return False

    def backward(self, output: Tensor, wrt=None, create_graph: bool = False):
        """Accumulate d(output)/d(input) over the recorded graph.

        Returns a dict mapping tensors to gradient tensors: the ``wrt``
        list if given, otherwise every leaf seen by this tape. Leaves the
        output does not depend on get zero gradients.
        """
        rec = output.node
        if rec is None or rec.tape is not self:
            raise ConfigError("output is not a value recorded on this tape")
        if output.data.size != 1:
            raise ConfigError("backward needs a scalar output")
        if create_graph and not self.second_order:
            raise ConfigError("create_graph requires a second-order tape")

        snapshot = list(self.records)

        reach = set()
        stack = [rec]
        while stack:
            r = stack.pop()
            if id(r) in reach:
                continue
            reach.add(id(r))
            for t in r.inputs:
                if t.node is not None and t.node.tape is self:
                    stack.append(t.node)

        wrt_ids = None
        needed = None
        if wrt is not None:
            wrt_ids = {id(t) for t in wrt}
            needed = set(wrt_ids)
            for r in snapshot:
                if id(r) not in reach:
                    continue
                if any(id(t) in needed for t in r.inputs):
                    needed.add(id(r.out))

        def want(t: Tensor) -> bool:
            return needed is None or id(t) in needed

        grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
        captured: dict[int, Tensor] = {}

        with _use_tape(self, recording=create_graph):
            for r in reversed(snapshot):
                if id(r) not in reach:
                    continue
                g = grads.pop(id(r.out), None)
                if g is None:
                    continue
                if wrt_ids is not None and id(r.out) in wrt_ids:
                    captured[id(r.out)] = g
                needs = tuple(want(t) for t in r.inputs)
                if not any(needs):
                    continue
                if create_graph and r.op in _FIRST_ORDER_ONLY:
                    raise ConfigError(
                        f"op '{r.op}' does not support second-order differentiation")
                gin = _VJPS[r.op](r, g, needs)
                for t, gi in zip(r.inputs, gin):
                    if gi is None:
                        continue
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else add(prev, gi)

        if wrt is not None:
            out = {}
            for t in wrt:
                g = captured.get(id(t), grads.get(id(t)))
                out[t] = g if g is not None else Tensor(np.zeros_like(t.data))
            return out
        out = {}
        for tid, leaf in self.leaves.items():
            g = grads.get(tid)
            out[leaf] = g if g is not None else Tensor(np.zeros_like(leaf.data))
        return out


def backward(tape: Tape, scalar_output: Tensor, wrt=None, create_graph=False):
    """Functional alias for `Tape.backward`."""
    return tape.backward(scalar_output, wrt=wrt, create_graph=create_graph)


def grad_norm_sq(tape: Tape, d_out: Tensor, x: Tensor) -> Tensor:
    """Squared L2 norm of d(d_out)/dx as a differentiable tape value."""
    if not tape.second_order:
        raise ConfigError("grad_norm_sq needs a tape created with second_order=True")
    gx = tape.backward(d_out, wrt=[x], create_graph=True)[x]
    with _use_tape(tape, recording=True):
        return sum_all(square(gx))


@contextmanager
def _use_tape(tape: Tape, recording: bool):
    prev_tape, prev_rec = _STATE.tape, _STATE.recording
    if prev_tape is not None and prev_tape is not tape:
        raise ConfigError("a different tape is already active")
    _STATE.tape = tape
    _STATE.recording = recording
    try:
        yield
    finally:
        _STATE.tape = prev_tape
        _STATE.recording = prev_rec


@contextmanager
def no_grad():
    """Disable recording within the block (values become constants)."""
    prev = _STATE.recording
    _STATE.recording = False
    try:
        yield
    finally:
        _STATE.recording = prev


def _apply(op: str, inputs, out_data: np.ndarray, ctx=None) -> Tensor:
    if _STATE.recording:
        tape = _STATE.tape
        out = Tensor(out_data)
        rec = TapeRecord(op, tuple(inputs), out, ctx or {}, tape)
        out.node = rec
        tape.records.append(rec)
        for t in inputs:
            if t.node is None or t.node.tape is not tape:
                tape.leaves.setdefault(id(t), t)
        return out
    return Tensor(out_data)


# ---------------------------------------------------------------------------
# construction helpers

def tensor(values, dtype=np.float64) -> Tensor:
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.dtype.type not in SUPPORTED_DTYPES:
        raise ConfigError(f"unsupported dtype {arr.dtype}")
    return Tensor(arr)


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def full(shape, value, dtype=np.float64) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype))


def _check_same_dtype(*ts: Tensor):
    dt = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != dt:
            raise ConfigError(f"dtype mismatch: {t.data.dtype} vs {dt}")


def _require_finite(name: str, *ts: Tensor):
    for t in ts:
        if not np.isfinite(t.data).all():
            raise NumericError(f"{name}: non-finite input values")


# ---------------------------------------------------------------------------
# convolution family

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, *,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Direct NCHW cross-correlation with OIHW weights and optional bias.

    Supported configuration is deliberately narrow: stride 1, pad 0 or 1,
    square 1x1 or 3x3 kernels, spatial extents at most 64.
    """
    if stride != 1:
        raise ConfigError(f"stride must be 1, got {stride}")
    if pad not in (0, 1):
        raise ConfigError(f"pad must be 0 or 1, got {pad}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ConfigError("conv2d expects NCHW input and OIHW weight")
    kh, kw = w.shape[2], w.shape[3]
    if (kh, kw) not in ((1, 1), (3, 3)):
        raise ConfigError(f"kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if x.shape[1] != w.shape[1]:
        raise ConfigError(
            f"input channels {x.shape[1]} != weight input channels {w.shape[1]}")
    if x.shape[2] > MAX_CONV_HW or x.shape[3] > MAX_CONV_HW:
        raise ConfigError(f"spatial extent exceeds desk-scale cap {MAX_CONV_HW}")
    _check_same_dtype(x, w)
    _require_finite("conv2d", x, w)
    y = _conv2d_raw(x, w, pad)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ConfigError(f"bias shape {b.shape} != ({w.shape[0]},)")
        _check_same_dtype(x, b)
        _require_finite("conv2d bias", b)
        y = add_channel_bias(y, b)
    return y


def _conv2d_raw(x: Tensor, w: Tensor, pad: int) -> Tensor:
    out = kernels.conv2d_forward(x.data, w.data, pad)
    return _apply("conv2d", (x, w), out, {"pad": pad})


def _conv2d_igrad(g: Tensor, w: Tensor, pad: int, in_hw) -> Tensor:
    out = kernels.conv2d_input_grad(g.data, w.data, pad, tuple(in_hw))
    return _apply("conv2d_igrad", (g, w), out, {"pad": pad, "in_hw": tuple(in_hw)})


def _conv2d_wgrad(x: Tensor, g: Tensor, pad: int, k_hw) -> Tensor:
    out = kernels.conv2d_weight_grad(x.data, g.data, pad, tuple(k_hw))
    return _apply("conv2d_wgrad", (x, g), out, {"pad": pad, "k_hw": tuple(k_hw)})


def _vjp_conv2d(rec, g, needs):
    x, w = rec.inputs
    pad = rec.ctx["pad"]
    gx = _conv2d_igrad(g, w, pad, x.shape[2:]) if needs[0] else None
    gw = _conv2d_wgrad(x, g, pad, w.shape[2:]) if needs[1] else None
    return gx, gw


def _vjp_conv2d_igrad(rec, gg, needs):
    g, w = rec.inputs
    pad = rec.ctx["pad"]
    a = _conv2d_raw(gg, w, pad) if needs[0] else None
    b = _conv2d_wgrad(gg, g, pad, w.shape[2:]) if needs[1] else None
    return a, b


def _vjp_conv2d_wgrad(rec, gw, needs):
    x, g = rec.inputs
    pad = rec.ctx["pad"]
    a = _conv2d_igrad(g, gw, pad, x.shape[2:]) if needs[0] else None
    b = _conv2d_raw(x, gw, pad) if needs[1] else None
    return a, b


# ---------------------------------------------------------------------------
# resampling

def upsample2x(x: Tensor, mode: str = "nearest") -> Tensor:
    """Double H and W per channel; 'nearest' replication or 'bilinear'."""
    if x.data.ndim != 4:
        raise ConfigError("upsample2x expects NCHW")
    if mode == "nearest":
        out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
        return _apply("upsample_nearest", (x,), out)
    if mode == "bilinear":
        out = _bilinear_up(x.data)
        return _apply("upsample_bilinear", (x,), out)
    raise ConfigError(f"unknown upsample mode {mode!r}")


def avgpool2x2(x: Tensor) -> Tensor:
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ConfigError("avgpool2x2 expects NCHW with even H and W")
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return _apply("avgpool2x2", (x,), out)


def _vjp_upsample_nearest(rec, g, needs):
    # adjoint of replication = 2x2 block sum
    return (mul_scalar(avgpool2x2(g), 4.0),)


def _vjp_avgpool2x2(rec, g, needs):
    return (mul_scalar(upsample2x(g, "nearest"), 0.25),)


def _bilinear_axis(n_in: int, dtype):
    # output pixel centers mapped back to input coordinates, edges clamped
    src = (np.arange(2 * n_in, dtype=np.float64) + 0.5) / 2.0 - 0.5
    i0 = np.floor(src).astype(np.int64)
    t = src - i0
    i0c = np.clip(i0, 0, n_in - 1)
    i1c = np.clip(i0 + 1, 0, n_in - 1)
    return i0c, i1c, t.astype(dtype)


def _bilinear_up(a: np.ndarray) -> np.ndarray:
    i0, i1, t = _bilinear_axis(a.shape[2], a.dtype)
    j0, j1, u = _bilinear_axis(a.shape[3], a.dtype)
    rows = a[:, :, i0, :] * (1 - t)[None, None, :, None] \
        + a[:, :, i1, :] * t[None, None, :, None]
    return rows[:, :, :, j0] * (1 - u)[None, None, None, :] \
        + rows[:, :, :, j1] * u[None, None, None, :]


def _bilinear_down_adjoint(g: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = g.shape
    h, w = h2 // 2, w2 // 2
    i0, i1, t = _bilinear_axis(h, g.dtype)
    j0, j1, u = _bilinear_axis(w, g.dtype)
    cols = np.zeros((n, c, h2, w), dtype=g.dtype)
    np.add.at(cols, (slice(None), slice(None), slice(None), j0),
              g * (1 - u)[None, None, None, :])
    np.add.at(cols, (slice(None), slice(None), slice(None), j1),
              g * u[None, None, None, :])
    out = np.zeros((n, c, h, w), dtype=g.dtype)
    np.add.at(out, (slice(None), slice(None), i0, slice(None)),
              cols * (1 - t)[None, None, :, None])
    np.add.at(out, (slice(None), slice(None), i1, slice(None)),
              cols * t[None, None, :, None])
    return out


def _upsample_bilinear_adj(g: Tensor) -> Tensor:
    return _apply("upsample_bilinear_adj", (g,), _bilinear_down_adjoint(g.data))


def _vjp_upsample_bilinear(rec, g, needs):
    return (_upsample_bilinear_adj(g),)


def _vjp_upsample_bilinear_adj(rec, g, needs):
    return (_apply("upsample_bilinear", (g,), _bilinear_up(g.data)),)


# ---------------------------------------------------------------------------
# elementwise and scalar ops

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigError(f"add shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    return _apply("add", (a, b), a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, mul_scalar(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigError(f"mul shape mismatch {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    return _apply("mul", (a, b), a.data * b.data)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _apply("mul_scalar", (a,), a.data * a.data.dtype.type(c), {"c": float(c)})


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _apply("add_scalar", (a,), a.data + a.data.dtype.type(c), {"c": float(c)})


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = np.where(a.data >= 0, a.data.dtype.type(1), a.data.dtype.type(slope))
    return _apply("leaky_relu", (a,), a.data * mask, {"mask": mask})


def square(a: Tensor) -> Tensor:
    return _apply("square", (a,), a.data * a.data)


def pow_const(a: Tensor, p: float) -> Tensor:
    if p != int(p) and not (a.data > 0).all():
        raise NumericError("pow_const with fractional exponent needs positive input")
    return _apply("pow_const", (a,), np.power(a.data, a.data.dtype.type(p)),
                  {"p": float(p)})


def sqrt_eps(a: Tensor, eps: float = 1e-8) -> Tensor:
    """sqrt(a + eps), the demodulation divisor form."""
    return pow_const(add_scalar(a, eps), 0.5)


def _scale_by(a: Tensor, const: np.ndarray) -> Tensor:
    return _apply("scale_by", (a,), a.data * const, {"const": const})


def _vjp_add(rec, g, needs):
    return (g if needs[0] else None, g if needs[1] else None)


def _vjp_mul(rec, g, needs):
    a, b = rec.inputs
    return (mul(g, b) if needs[0] else None, mul(g, a) if needs[1] else None)


def _vjp_mul_scalar(rec, g, needs):
    return (mul_scalar(g, rec.ctx["c"]),)


def _vjp_add_scalar(rec, g, needs):
    return (g,)


def _vjp_leaky_relu(rec, g, needs):
    return (_scale_by(g, rec.ctx["mask"]),)


def _vjp_scale_by(rec, g, needs):
    return (_scale_by(g, rec.ctx["const"]),)


def _vjp_square(rec, g, needs):
    (a,) = rec.inputs
    return (mul(g, mul_scalar(a, 2.0)),)


def _vjp_pow_const(rec, g, needs):
    (a,) = rec.inputs
    p = rec.ctx["p"]
    return (mul(g, mul_scalar(pow_const(a, p - 1.0), p)),)


# ---------------------------------------------------------------------------
# reductions and broadcasts

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def reduce_sum(a: Tensor, axes=None) -> Tensor:
    axes = _norm_axes(axes, a.data.ndim)
    out = np.asarray(a.data.sum(axis=axes))
    return _apply("reduce_sum", (a,), out, {"axes": axes, "in_shape": a.shape})


def broadcast_from(a: Tensor, shape, axes) -> Tensor:
    """Inverse of reduce_sum's shape change: insert axes and replicate."""
    shape = tuple(shape)
    axes = _norm_axes(axes, len(shape))
    kept = tuple(s for i, s in enumerate(shape) if i not in axes)
    if tuple(a.shape) != kept:
        raise ConfigError(f"broadcast_from: shape {a.shape} incompatible with "
                          f"{shape} over axes {axes}")
    expanded = np.expand_dims(a.data, axes) if axes else a.data
    out = np.ascontiguousarray(np.broadcast_to(expanded, shape))
    return _apply("broadcast_from", (a,), out, {"axes": axes, "shape": shape})


def _vjp_reduce_sum(rec, g, needs):
    return (broadcast_from(g, rec.ctx["in_shape"], rec.ctx["axes"]),)


def _vjp_broadcast_from(rec, g, needs):
    return (reduce_sum(g, rec.ctx["axes"]),)


def sum_all(a: Tensor) -> Tensor:
    return reduce_sum(a, None)


def mean_all(a: Tensor) -> Tensor:
    return mul_scalar(sum_all(a), 1.0 / a.size)


# ---------------------------------------------------------------------------
# channel plumbing

def concat_channels(*xs: Tensor) -> Tensor:
    if len(xs) < 1:
        raise ConfigError("concat_channels needs at least one input")
    for t in xs:
        if t.data.ndim != 4:
            raise ConfigError("concat_channels expects NCHW tensors")
        if t.shape[0] != xs[0].shape[0] or t.shape[2:] != xs[0].shape[2:]:
            raise ConfigError("concat_channels: N/H/W mismatch")
    _check_same_dtype(*xs)
    out = np.concatenate([t.data for t in xs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in xs]).tolist()
    return _apply("concat_channels", xs, out, {"bounds": bounds})


def slice_channels(x: Tensor, lo: int, hi: int) -> Tensor:
    if not (0 <= lo < hi <= x.shape[1]):
        raise ConfigError(f"slice_channels range [{lo},{hi}) out of C={x.shape[1]}")
    out = np.ascontiguousarray(x.data[:, lo:hi])
    return _apply("slice_channels", (x,), out, {"lo": lo, "hi": hi, "c": x.shape[1]})


def pad_channels(x: Tensor, lo: int, total: int) -> Tensor:
    n, c, h, w = x.shape
    if lo < 0 or lo + c > total:
        raise ConfigError("pad_channels: slice does not fit")
    out = np.zeros((n, total, h, w), dtype=x.data.dtype)
    out[:, lo:lo + c] = x.data
    return _apply("pad_channels", (x,), out, {"lo": lo, "total": total, "c": c})


def _vjp_concat_channels(rec, g, needs):
    bounds = rec.ctx["bounds"]
    return tuple(
        slice_channels(g, bounds[i], bounds[i + 1]) if needs[i] else None
        for i in range(len(rec.inputs)))


def _vjp_slice_channels(rec, g, needs):
    return (pad_channels(g, rec.ctx["lo"], rec.ctx["c"]),)


def _vjp_pad_channels(rec, g, needs):
    lo, c = rec.ctx["lo"], rec.ctx["c"]
    return (slice_channels(g, lo, lo + c),)


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each (n, c) plane of NCHW x by scalar s[n, c]."""
    if x.data.ndim != 4 or s.data.ndim != 2 or s.shape != x.shape[:2]:
        raise ConfigError(f"scale_channels: x {x.shape} vs s {s.shape}")
    _check_same_dtype(x, s)
    out = x.data * s.data[:, :, None, None]
    return _apply("scale_channels", (x, s), out)


def _vjp_scale_channels(rec, g, needs):
    x, s = rec.inputs
    gx = scale_channels(g, s) if needs[0] else None
    gs = reduce_sum(mul(g, x), (2, 3)) if needs[1] else None
    return gx, gs


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 4 or b.shape != (x.shape[1],):
        raise ConfigError(f"add_channel_bias: x {x.shape} vs b {b.shape}")
    _check_same_dtype(x, b)
    return _apply("add_channel_bias", (x, b), x.data + b.data[None, :, None, None])


def _vjp_add_channel_bias(rec, g, needs):
    gx = g if needs[0] else None
    gb = reduce_sum(g, (0, 2, 3)) if needs[1] else None
    return gx, gb


# ---------------------------------------------------------------------------
# dense algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigError(f"matmul: {a.shape} @ {b.shape}")
    _check_same_dtype(a, b)
    return _apply("matmul", (a, b), a.data @ b.data)


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ConfigError("transpose2d expects a matrix")
    return _apply("transpose2d", (a,), np.ascontiguousarray(a.data.T))


def add_row_bias(x: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ConfigError(f"add_row_bias: x {x.shape} vs b {b.shape}")
    _check_same_dtype(x, b)
    return _apply("add_row_bias", (x, b), x.data + b.data[None, :])


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b): rows are samples, w maps in_dim -> out_dim."""
    y = matmul(x, w)
    if b is not None:
        y = add_row_bias(y, b)
    return y


def _vjp_matmul(rec, g, needs):
    a, b = rec.inputs
    ga = matmul(g, transpose2d(b)) if needs[0] else None
    gb = matmul(transpose2d(a), g) if needs[1] else None
    return ga, gb


def _vjp_transpose2d(rec, g, needs):
    return (transpose2d(g),)


def _vjp_add_row_bias(rec, g, needs):
    gx = g if needs[0] else None
    gb = reduce_sum(g, (0,)) if needs[1] else None
    return gx, gb


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ConfigError(f"reshape {x.shape} -> {shape} changes size")
    out = np.ascontiguousarray(x.data.reshape(shape))
    return _apply("reshape", (x,), out, {"in_shape": x.shape})


def _vjp_reshape(rec, g, needs):
    return (reshape(g, rec.ctx["in_shape"]),)


# ---------------------------------------------------------------------------
# first-order-only nonlinearities (loss plumbing)

def _sigmoid_np(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), overflow-safe."""
    return _apply("softplus", (a,), np.logaddexp(a.data.dtype.type(0), a.data))


def sigmoid(a: Tensor) -> Tensor:
    return _apply("sigmoid", (a,), _sigmoid_np(a.data))


def log(a: Tensor) -> Tensor:
    if not (a.data > 0).all():
        raise NumericError("log needs positive input")
    return _apply("log", (a,), np.log(a.data))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
    return _apply("clamp", (a,), np.clip(a.data, lo, hi), {"mask": mask})


def _vjp_softplus(rec, g, needs):
    (a,) = rec.inputs
    return (_scale_by(g, _sigmoid_np(a.data)),)


def _vjp_sigmoid(rec, g, needs):
    s = rec.out.data
    return (_scale_by(g, s * (1.0 - s)),)


def _vjp_log(rec, g, needs):
    (a,) = rec.inputs
    return (_scale_by(g, 1.0 / a.data),)


def _vjp_clamp(rec, g, needs):
    return (_scale_by(g, rec.ctx["mask"]),)


_FIRST_ORDER_ONLY = {"softplus", "sigmoid", "log", "clamp"}

_VJPS = {
    "conv2d": _vjp_conv2d,
    "conv2d_igrad": _vjp_conv2d_igrad,
    "conv2d_wgrad": _vjp_conv2d_wgrad,
    "upsample_nearest": _vjp_upsample_nearest,
    "upsample_bilinear": _vjp_upsample_bilinear,
    "upsample_bilinear_adj": _vjp_upsample_bilinear_adj,
    "avgpool2x2": _vjp_avgpool2x2,
    "add": _vjp_add,
    "mul": _vjp_mul,
    "mul_scalar": _vjp_mul_scalar,
    "add_scalar": _vjp_add_scalar,
    "leaky_relu": _vjp_leaky_relu,
    "scale_by": _vjp_scale_by,
    "square": _vjp_square,
    "pow_const": _vjp_pow_const,
    "reduce_sum": _vjp_reduce_sum,
    "broadcast_from": _vjp_broadcast_from,
    "concat_channels": _vjp_concat_channels,
    "slice_channels": _vjp_slice_channels,
    "pad_channels": _vjp_pad_channels,
    "scale_channels": _vjp_scale_channels,
    "add_channel_bias": _vjp_add_channel_bias,
    "matmul": _vjp_matmul,
    "transpose2d": _vjp_transpose2d,
    "add_row_bias": _vjp_add_row_bias,
    "reshape": _vjp_reshape,
    "softplus": _vjp_softplus,
    "sigmoid": _vjp_sigmoid,
    "log": _vjp_log,
    "clamp": _vjp_clamp,
}
