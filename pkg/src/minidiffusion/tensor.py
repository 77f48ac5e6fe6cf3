"""Dense float tensors with a dynamic reverse-mode gradient tape.

The operator set is exactly what the noise-prediction U-Net and its trainer
need. Forward arithmetic is delegated to numpy; each op records a backward
closure on a per-call tape, and every gradient here is checked against
central finite differences in the test suite.

Float32 is the working precision for training and inference; all ops also
run at float64 (used for schedule math and gradient checks).
"""

from __future__ import annotations

import numpy as np

from .rng import Rng

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
        return data
    return np.asarray(data, dtype=np.float32)


class Tensor:
    """N-dimensional float array, optionally participating in the gradient tape.

    Leaves created with requires_grad=True accumulate into ``.grad`` on
    ``backward()``; repeated backward calls keep accumulating until
    ``zero_grad()``. Tensors produced by ops are treated as immutable.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        grad = ", grad" if self.grad is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def relu(self) -> "Tensor":
        return relu(self)

    # -- reverse mode -------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        ``self`` must be a scalar produced by recorded ops (or a scalar leaf).
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        flows: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                flows[key] = pg if key not in flows else flows[key] + pg


def _coerce(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _record(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over axes that were stretched when broadcasting to g.shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise / reductions -----------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _record(a.data + c, (a,), lambda g: (g,))
    data = a.data + b.data  # trailing-aligned broadcast; numpy raises on mismatch
    return _record(
        data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _record(a.data - c, (a,), lambda g: (g,))
    data = a.data - b.data
    return _record(
        data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; the scalar case covers coefficient scaling."""
    if not isinstance(b, Tensor):
        c = float(b)
        return _record(a.data * c, (a,), lambda g: (g * c,))
    data = a.data * b.data
    return _record(
        data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def tsum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.dtype)
    return _record(data, (x,), lambda g: (np.broadcast_to(g, x.shape),))


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.mean(), dtype=x.dtype)
    return _record(data, (x,), lambda g: (np.broadcast_to(g / n, x.shape),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)
    mask = x.data > 0
    return _record(data, (x,), lambda g: (g * mask,))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    d = sub(a, b)
    return tmean(mul(d, d))


# -- neural-network ops -------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x (B, I) @ w (O, I)^T + b (O,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear shape mismatch: x {x.shape}, w {w.shape}")
    data = x.data @ w.data.T + b.data
    return _record(
        data, (x, w, b),
        lambda g: (g @ w.data, g.T @ x.data, g.sum(axis=0)),
    )


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Row gather from an embedding table; differentiable wrt the table only."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding index out of range [0, {table.shape[0]}): {idx.min()}..{idx.max()}"
        )

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _record(table.data[idx], (table,), backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Duplicate each pixel of an NCHW tensor into a 2x2 block."""
    if x.ndim != 4:
        raise ValueError(f"expected NCHW input, got shape {x.shape}")
    B, C, H, W = x.shape
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return _record(
        data, (x,),
        lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),),
    )


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    B, C, _, _ = xp.shape
    cols = np.empty((B, C, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(B, C * kh * kw, oh * ow)


def _col2im(gcols: np.ndarray, xp_shape, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    B, C, _, _ = xp_shape
    g6 = gcols.reshape(B, C, kh, kw, oh, ow)
    gx = np.zeros(xp_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g6[:, :, i, j]
    return gx


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OIKK kernels (im2col + matmul)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    B, C, H, W = x.shape
    O, I, KH, KW = w.shape
    if I != C:
        raise ValueError(f"channel mismatch: input has {C}, kernel expects {I}")
    if H + 2 * padding < KH or W + 2 * padding < KW:
        raise ValueError(f"kernel ({KH}x{KW}) exceeds padded input ({H + 2 * padding}x{W + 2 * padding})")
    oh = (H + 2 * padding - KH) // stride + 1
    ow = (W + 2 * padding - KW) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, KH, KW, stride, oh, ow)  # (B, C*KH*KW, oh*ow)
    wf = w.data.reshape(O, -1)
    out = np.matmul(wf, cols).reshape(B, O, oh, ow) + b.data.reshape(1, O, 1, 1)

    def backward(g):
        gf = g.reshape(B, O, -1)
        db = g.sum(axis=(0, 2, 3))
        dw = np.tensordot(gf, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gcols = np.matmul(wf.T, gf)
        gxp = _col2im(gcols, xp.shape, KH, KW, stride, oh, ow)
        if padding:
            gxp = gxp[:, :, padding : padding + H, padding : padding + W]
        return (gxp, dw, db)

    return _record(out, (x, w, b), backward)


def group_norm(x: Tensor, num_groups: int, eps: float = 1e-5) -> Tensor:
    """Per-(sample, group) standardization of an NCHW tensor, no affine terms."""
    if x.ndim != 4:
        raise ValueError(f"expected NCHW input, got shape {x.shape}")
    B, C, H, W = x.shape
    if C % num_groups != 0:
        raise ValueError(f"channels ({C}) not divisible by num_groups ({num_groups})")
    xg = x.data.reshape(B, num_groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (xg - mu) * inv

    def backward(g):
        gg = g.reshape(B, num_groups, -1)
        g_mean = gg.mean(axis=2, keepdims=True)
        gx_mean = (gg * xhat).mean(axis=2, keepdims=True)
        dx = inv * (gg - g_mean - xhat * gx_mean)
        return (dx.reshape(x.shape),)

    return _record(xhat.reshape(x.shape), (x,), backward)


def randn(rng: Rng, shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    """Tensor of i.i.d. standard normals drawn from rng."""
    return Tensor(rng.standard_normal(shape).astype(dtype), requires_grad=requires_grad)
