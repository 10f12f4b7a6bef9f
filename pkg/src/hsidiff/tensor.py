"""Dense float64 tensors with taped reverse-mode gradients.

Every operation records its inputs and a backward closure on the output
node; `backward` replays the recorded graph in reverse topological order.
The graph is rebuilt on every forward pass and confined to the step that
built it.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf (amplitude blowup guard)."""


_FINITE_CHECKS = True
_GRAD_ENABLED = True
_MAC_COUNT: list[int] | None = None


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf detection after each primitive; returns the old value."""
    global _FINITE_CHECKS
    old = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return old


class no_grad:
    """Context in which primitives skip recording the differentiation graph."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class mac_counter:
    """Context that measures multiply-accumulate counts of the primitives run inside."""

    def __enter__(self):
        global _MAC_COUNT
        self._prev = _MAC_COUNT
        self._box = [0]
        _MAC_COUNT = self._box
        return self

    def __exit__(self, *exc):
        global _MAC_COUNT
        _MAC_COUNT = self._prev
        return False

    @property
    def total(self) -> int:
        return self._box[0]


def _count_macs(n: int) -> None:
    if _MAC_COUNT is not None:
        _MAC_COUNT[0] += n


class Tensor:
    """Immutable rank-0..4 float64 value grid, optionally on the grad graph.

    `parents` and `_bwd` are the graph handle: leaves have neither.
    """

    __slots__ = ("data", "parents", "_bwd", "grad", "op")

    def __init__(self, data, parents: tuple = (), bwd=None, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} > 4 in '{op}'")
        if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        self.data = arr
        if _GRAD_ENABLED:
            self.parents = parents
            self._bwd = bwd
        else:
            self.parents = ()
            self._bwd = None
        self.grad: np.ndarray | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # operator sugar over the module-level primitives
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


class Parameter:
    """Named trainable leaf. `name` is a path-like identifier, unique per model."""

    def __init__(self, data, name: str, trainable: bool = True):
        self.tensor = Tensor(data, op=f"param:{name}")
        self.name = name
        self.trainable = trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def assign(self, data: np.ndarray) -> None:
        """Replace the leaf tensor (optimizer updates between forwards)."""
        self.tensor = Tensor(data, op=f"param:{self.name}")

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def _accum(t: Tensor, g: np.ndarray) -> None:
    # never mutate in place: grads may be shared between sibling closures
    t.grad = g if t.grad is None else t.grad + g


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen = {id(root)}
    stack: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root.parents))]
    while stack:
        node, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            order.append(node)
            stack.pop()
        elif id(nxt) not in seen:
            seen.add(id(nxt))
            stack.append((nxt, iter(nxt.parents)))
    return order


def backward(loss: Tensor, params: Iterable[Parameter]) -> dict[str, Tensor]:
    """Gradients of a scalar loss for every trainable parameter.

    Parameters not reached by the recorded graph get zero gradients.
    Node grads are cleared afterwards so persistent leaves stay clean.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.grad is not None and node._bwd is not None:
            node._bwd(node.grad)
    grads: dict[str, Tensor] = {}
    for p in params:
        if not p.trainable:
            continue
        g = p.tensor.grad
        grads[p.name] = Tensor(np.zeros_like(p.data) if g is None else g,
                               op=f"grad:{p.name}")
    for node in order:
        node.grad = None
    return grads


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return Tensor(a.data + b.data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return Tensor(a.data - b.data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    _count_macs(a.size)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return Tensor(a.data * b.data, (a, b), bwd, "mul")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, -g)

    return Tensor(-a.data, (a,), bwd, "neg")


def scale(a: Tensor, s: float) -> Tensor:
    def bwd(g):
        _accum(a, g * s)

    return Tensor(a.data * s, (a,), bwd, "scale")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return Tensor(out_data, (a,), bwd, "exp")


def mul_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Multiply by a one-element tensor (learnable scalar gains)."""
    if s.size != 1:
        raise ShapeError(f"mul_scalar: scalar operand has shape {s.shape}")
    sval = float(s.data.reshape(()))
    _count_macs(a.size)

    def bwd(g):
        _accum(a, g * sval)
        _accum(s, np.sum(g * a.data).reshape(s.shape))

    return Tensor(a.data * sval, (a, s), bwd, "mul_scalar")


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[C,H,W] + b[C] broadcast over the spatial axes."""
    if x.ndim != 3 or b.ndim != 1 or b.shape[0] != x.shape[0]:
        raise ShapeError(f"add_channel_bias: x {x.shape}, bias {b.shape}")

    def bwd(g):
        _accum(x, g)
        _accum(b, g.sum(axis=(1, 2)))

    return Tensor(x.data + b.data[:, None, None], (x, b), bwd, "add_channel_bias")


def mul_channel(x: Tensor, w: Tensor) -> Tensor:
    """x[C,H,W] * w[C] broadcast over the spatial axes."""
    if x.ndim != 3 or w.ndim != 1 or w.shape[0] != x.shape[0]:
        raise ShapeError(f"mul_channel: x {x.shape}, weight {w.shape}")
    _count_macs(x.size)

    def bwd(g):
        _accum(x, g * w.data[:, None, None])
        _accum(w, (g * x.data).sum(axis=(1, 2)))

    return Tensor(x.data * w.data[:, None, None], (x, w), bwd, "mul_channel")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)

    def bwd(g):
        _accum(a, g * s * (1.0 - s))

    return Tensor(s, (a,), bwd, "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = expit(a.data)

    def bwd(g):
        _accum(a, g * s * (1.0 + a.data * (1.0 - s)))

    return Tensor(a.data * s, (a,), bwd, "silu")


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF form x * Phi(x), not the tanh approximation."""
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))

    def bwd(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT_2PI
        _accum(a, g * (cdf + a.data * pdf))

    return Tensor(a.data * cdf, (a,), bwd, "gelu")


_ACTIVATIONS = {"gelu": gelu, "silu": silu, "sigmoid": sigmoid}


def activation(a: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(a)


def softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        _accum(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return Tensor(s, (a,), bwd, "softmax")


def l2_normalize(a: Tensor, axis: int, eps: float) -> Tensor:
    """Divide each vector along `axis` by (its Euclidean norm + eps)."""
    if eps <= 0:
        raise ValueError("l2_normalize: eps must be positive")
    _count_macs(a.size)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    denom = n + eps
    y = a.data / denom

    def bwd(g):
        # second term vanishes where the vector is zero; guard the 0/0
        n_safe = np.maximum(n, 1e-300)
        dot = (g * a.data).sum(axis=axis, keepdims=True)
        _accum(a, g / denom - a.data * dot / (n_safe * denom * denom))

    return Tensor(y, (a,), bwd, "l2_normalize")


def standardize(a: Tensor, eps: float) -> Tensor:
    """Whole-tensor standardization: (a - mean) / sqrt(var + eps)."""
    mu = a.data.mean()
    var = a.data.var()
    sd = math.sqrt(var + eps)
    y = (a.data - mu) / sd

    def bwd(g):
        _accum(a, (g - g.mean() - y * (g * y).mean()) / sd)

    return Tensor(y, (a,), bwd, "standardize")


# ---------------------------------------------------------------------------
# structural primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner axes {a.shape[1]} and {b.shape[0]} differ")
    _count_macs(a.shape[0] * a.shape[1] * b.shape[1])

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor(a.data @ b.data, (a, b), bwd, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expects rank 2, got {a.shape}")

    def bwd(g):
        _accum(a, g.T)

    return Tensor(a.data.T.copy(), (a,), bwd, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return Tensor(a.data.reshape(shape), (a,), bwd, "reshape")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    parents = tuple(tensors)

    def bwd(g):
        for t, lo, hi in zip(parents, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  parents, bwd, "concat")


def split(a: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not cover axis {axis} "
                         f"of size {a.shape[axis]}")
    outs = []
    offset = 0
    for size in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(offset, offset + size)
        idx = tuple(idx)
        offset += size

        def bwd(g, idx=idx):
            buf = np.zeros_like(a.data)
            buf[idx] = g
            _accum(a, buf)

        outs.append(Tensor(a.data[idx].copy(), (a,), bwd, "split"))
    return outs


def chunk(a: Tensor, n: int, axis: int) -> list[Tensor]:
    if a.shape[axis] % n != 0:
        raise ShapeError(f"chunk: axis {axis} of size {a.shape[axis]} not divisible by {n}")
    return split(a, [a.shape[axis] // n] * n, axis)


def tensor_sum(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, np.full(a.shape, float(g.reshape(()))))

    return Tensor(a.data.sum(), (a,), bwd, "sum")


def tensor_mean(a: Tensor) -> Tensor:
    inv_n = 1.0 / a.size

    def bwd(g):
        _accum(a, np.full(a.shape, float(g.reshape(())) * inv_n))

    return Tensor(a.data.mean(), (a,), bwd, "mean")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_cols(xp: np.ndarray, kh: int, kw: int, stride: int,
               groups: int) -> tuple[np.ndarray, int, int]:
    """im2col on a padded (C,Hp,Wp) array -> (groups, cin_g*kh*kw, Ho*Wo)."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[0], win.shape[1], win.shape[2]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2))
    return cols.reshape(groups, (c // groups) * kh * kw, ho * wo), ho, wo


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
           padding: int = 0, pad_mode: str = "zero", groups: int = 1) -> Tensor:
    """2-D cross-correlation on a (C,H,W) input.

    Weight is (C_out, C_in/groups, kH, kW); depthwise when groups == C_in.
    Output spatial dims follow floor((dim + 2*padding - kernel)/stride) + 1.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d: input must be (C,H,W), got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4, got {w.shape}")
    cout, cin_g, kh, kw = w.shape
    cin, h, wd = x.shape
    if cin != cin_g * groups:
        raise ShapeError(
            f"conv2d: input channel axis {cin} != weight in-channels "
            f"{cin_g} * groups {groups}")
    if cout % groups != 0:
        raise ShapeError(f"conv2d: out channels {cout} not divisible by groups {groups}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias channel axis {b.shape} != ({cout},)")
    if pad_mode not in ("zero", "reflect"):
        raise ValueError(f"conv2d: unknown pad mode {pad_mode!r}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel ({kh},{kw}) exceeds padded input "
                         f"({h + 2 * padding},{wd + 2 * padding})")

    if padding:
        mode = "reflect" if pad_mode == "reflect" else "constant"
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)), mode=mode)
    else:
        xp = x.data
    cols, ho, wo = _conv_cols(xp, kh, kw, stride, groups)
    wmat = w.data.reshape(groups, cout // groups, cin_g * kh * kw)
    out = np.matmul(wmat, cols).reshape(cout, ho, wo) + b.data[:, None, None]
    _count_macs(cout * cin_g * kh * kw * ho * wo)

    def bwd(g):
        g3 = g.reshape(groups, cout // groups, ho * wo)
        cols_b, _, _ = _conv_cols(xp, kh, kw, stride, groups)  # recompute, not captured
        _accum(w, np.matmul(g3, cols_b.transpose(0, 2, 1)).reshape(w.shape))
        _accum(b, g.sum(axis=(1, 2)))
        dwin = np.matmul(wmat.transpose(0, 2, 1), g3).reshape(cin, kh, kw, ho, wo)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dwin[:, i, j]
        if padding == 0:
            _accum(x, dxp)
        elif pad_mode == "zero":
            _accum(x, dxp[:, padding:padding + h, padding:padding + wd])
        else:
            # fold reflected border grads back onto their source pixels
            src = np.pad(np.arange(h * wd).reshape(h, wd),
                         ((padding, padding), (padding, padding)),
                         mode="reflect").ravel()
            dx = np.zeros((cin, h * wd))
            np.add.at(dx, (np.arange(cin)[:, None], src[None, :]),
                      dxp.reshape(cin, -1))
            _accum(x, dx.reshape(cin, h, wd))

    return Tensor(out, (x, w, b), bwd, "conv2d")


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of a (C,H,W) tensor."""
    if x.ndim != 3:
        raise ShapeError(f"upsample_nearest2: input must be (C,H,W), got {x.shape}")
    c, h, w = x.shape

    def bwd(g):
        _accum(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    return Tensor(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2),
                  (x,), bwd, "upsample_nearest2")
