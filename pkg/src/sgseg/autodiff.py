"""Dense tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active, and touching at least one
tensor with ``requires_grad``, are recorded in execution order.
:func:`backward` replays the tape in reverse to fill leaf gradients.

Broadcasting is restricted to full axes of equal rank (extent 1 against
extent n). Python scalars are accepted as the second operand of the
elementwise ops.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

from sgseg.errors import ContractError, DimensionError, NumericError

_DEFAULT_DTYPE = np.dtype(np.float32)
_CHECK_FINITE = True
_TAPES: list["Tape"] = []


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new tensors (e.g. float64 for checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def finite_checks(enabled: bool) -> Iterator[None]:
    global _CHECK_FINITE
    previous = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = previous


class Tensor:
    """N-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f" or arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    __array_priority__ = 1000

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


class _Node:
    __slots__ = ("op", "out", "inputs", "backward")

    def __init__(self, op, out, inputs, backward):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, root: Tensor) -> None:
        backward(root, self)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if _CHECK_FINITE and not np.isfinite(out_data).all():
        raise NumericError(f"{op} produced non-finite values (shape {out_data.shape})")
    out = Tensor(out_data, dtype=out_data.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.nodes.append(_Node(op, out, tuple(inputs), backward_fn))
    return out


def backward(root: Tensor, tape: Tape | None = None) -> None:
    """Fill ``.grad`` of every ``requires_grad`` leaf recorded on ``tape``.

    Leaf gradients are overwritten, not accumulated, so repeated passes over
    the same tape are bitwise identical. Leaves on the tape that the root does
    not reach get a zero gradient.
    """
    if tape is None:
        tape = active_tape()
        if tape is None:
            raise ContractError("backward() needs a tape")
    if root.size != 1:
        raise ContractError(f"backward() root must be scalar, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    if root.is_leaf and root.requires_grad:
        leaves[id(root)] = root
    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.is_leaf and t.requires_grad:
                leaves.setdefault(id(t), t)
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)


# -- broadcasting helpers ---------------------------------------------------


def _as_operand(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor(np.full((1,) * like.ndim, x, dtype=like.dtype), dtype=like.dtype)
    return Tensor(x, dtype=like.dtype)


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    if len(a) != len(b):
        raise DimensionError(f"{op}: rank mismatch {a} vs {b} (no implicit rank promotion)")
    out = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            out.append(x)
        elif x == 1:
            out.append(y)
        else:
            raise DimensionError(f"{op}: shapes {a} and {b} are not broadcastable")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


# -- elementwise ------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _emit(
        "mul", ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit("scale", a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    m = x.data > 0
    return _emit("relu", np.where(m, x.data, 0).astype(x.dtype), (x,), lambda g: (g * m,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU (smooth, so finite differences stay clean)."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def bwd(g):
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * d,)

    return _emit("gelu", y, (x,), bwd)


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return _emit("log", y, (x,), lambda g: (g / xd,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _emit("clamp", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# -- reductions and shape ops -----------------------------------------------


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.asarray(out), (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("permute", np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inverse),))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _emit("getitem", np.array(x.data[index]), (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    return _emit("concat", data, tuple(tensors), bwd)


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be a plain 2-D matrix applied to every leading index of ``a``;
    otherwise ranks must match and batch extents agree or equal 1.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        out = ad @ bd

        def bwd(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return _emit("matmul", out, (a, b), bwd)
    if a.ndim != b.ndim:
        raise DimensionError(f"matmul rank mismatch: {a.shape} x {b.shape}")
    _broadcast_shape("matmul batch", a.shape[:-2], b.shape[:-2])

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return (
            _unbroadcast(ga, ad.shape[:-2] + ga.shape[-2:]),
            _unbroadcast(gb, bd.shape[:-2] + gb.shape[-2:]),
        )

    return _emit("matmul", ad @ bd, (a, b), bwd)


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax over empty last dimension: shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", y, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bwd(g):
        dxhat = g * gamma.data
        dx = inv * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(xd.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", y, (x, gamma, beta), bwd)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-length temporal convolution with zero padding.

    ``x`` is [N, T, C_in], ``weight`` is [k, C_in, C_out] with odd k, and the
    output at t is ``sum_j x[t + j - k//2] @ weight[j] + bias``.
    """
    k, cin, cout = weight.shape
    if k % 2 == 0:
        raise DimensionError(f"conv1d kernel width must be odd, got {k}")
    if x.shape[-1] != cin:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape}, weight {weight.shape}")
    n, t, _ = x.shape
    pad = k // 2
    xp = np.zeros((n, t + 2 * pad, cin), dtype=x.dtype)
    xp[:, pad : pad + t] = x.data
    cols = np.stack([xp[:, j : j + t] for j in range(k)], axis=2).reshape(n, t, k * cin)
    wmat = weight.data.reshape(k * cin, cout)
    out = cols @ wmat + bias.data

    def bwd(g):
        gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        gb = g.reshape(-1, cout).sum(axis=0)
        gcols = (g @ wmat.T).reshape(n, t, k, cin)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j : j + t] += gcols[:, :, j]
        return gxp[:, pad : pad + t], gw, gb

    return _emit("conv1d", out, (x, weight, bias), bwd)


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Single-layer LSTM over the time axis of ``x`` [N, T, E].

    Gate layout along the 4H axis is input, forget, candidate, output.
    Initial hidden and cell states are zero. Backward is hand-written BPTT.
    """
    n, t_len, e = x.shape
    h4 = w_ih.shape[1]
    hid = h4 // 4
    if w_ih.shape[0] != e or w_hh.shape != (hid, h4) or bias.shape != (h4,):
        raise DimensionError(
            f"lstm weight shapes {w_ih.shape}, {w_hh.shape}, {bias.shape} do not fit input {x.shape}"
        )
    xd = x.data[:, ::-1] if reverse else x.data
    whh = w_hh.data
    xp = xd @ w_ih.data + bias.data
    dtype = x.dtype
    gates = np.empty((n, t_len, h4), dtype=dtype)
    cs = np.empty((n, t_len + 1, hid), dtype=dtype)
    hs = np.empty((n, t_len + 1, hid), dtype=dtype)
    tcs = np.empty((n, t_len, hid), dtype=dtype)
    cs[:, 0] = 0
    hs[:, 0] = 0
    for t in range(t_len):
        a = xp[:, t] + hs[:, t] @ whh
        sig = 0.5 * (1.0 + np.tanh(0.5 * a))
        gi, gf, go = sig[:, :hid], sig[:, hid : 2 * hid], sig[:, 3 * hid :]
        gg = np.tanh(a[:, 2 * hid : 3 * hid])
        gates[:, t, :hid] = gi
        gates[:, t, hid : 2 * hid] = gf
        gates[:, t, 2 * hid : 3 * hid] = gg
        gates[:, t, 3 * hid :] = go
        cs[:, t + 1] = gf * cs[:, t] + gi * gg
        tcs[:, t] = np.tanh(cs[:, t + 1])
        hs[:, t + 1] = go * tcs[:, t]
    out = hs[:, 1:]
    if reverse:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out)

    def bwd(g):
        if reverse:
            g = g[:, ::-1]
        da_all = np.empty((n, t_len, h4), dtype=dtype)
        dh_next = np.zeros((n, hid), dtype=dtype)
        dc_next = np.zeros((n, hid), dtype=dtype)
        for t in range(t_len - 1, -1, -1):
            gi = gates[:, t, :hid]
            gf = gates[:, t, hid : 2 * hid]
            gg = gates[:, t, 2 * hid : 3 * hid]
            go = gates[:, t, 3 * hid :]
            dh = g[:, t] + dh_next
            tc = tcs[:, t]
            dc = dh * go * (1.0 - tc * tc) + dc_next
            da = da_all[:, t]
            da[:, :hid] = dc * gg * gi * (1.0 - gi)
            da[:, hid : 2 * hid] = dc * cs[:, t] * gf * (1.0 - gf)
            da[:, 2 * hid : 3 * hid] = dc * gi * (1.0 - gg * gg)
            da[:, 3 * hid :] = dh * tc * go * (1.0 - go)
            dc_next = dc * gf
            dh_next = da @ whh.T
        flat_da = da_all.reshape(-1, h4)
        gw_hh = hs[:, :-1].reshape(-1, hid).T @ flat_da
        gw_ih = xd.reshape(-1, e).T @ flat_da
        gb = flat_da.sum(axis=0)
        gx = da_all @ w_ih.data.T
        if reverse:
            gx = gx[:, ::-1]
        return np.ascontiguousarray(gx), gw_ih, gw_hh, gb

    return _emit("lstm", out, (x, w_ih, w_hh, bias), bwd)
