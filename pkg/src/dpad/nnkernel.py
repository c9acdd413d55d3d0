"""Minimal reverse-mode differentiation engine on numpy float64 buffers.

Each op builds a DiffValue node recording its inputs and a backward closure;
`DiffValue.backward()` walks the graph once in reverse topological order.
Backward closures return one gradient array per parent (or None); gradients
for max/min filters route each output's gradient to the window winner, as in
max pooling. Graphs are confined to one thread; distinct graphs may run on
distinct threads.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from dpad.morph import SEKernel, envelopes

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class DiffValue:
    """A node in the differentiation graph: value buffer plus accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"DiffValue(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, seed=None):
        """Accumulate gradients of this value into every reachable parent.

        Visits each node exactly once in reverse topological order. `seed`
        defaults to ones (i.e. d(sum(self))/d(parent)).
        """
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), self.data.shape)
        # iterative DFS postorder; visited marks expansion, not discovery, so a
        # node shared by several children is ordered after all of them
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = seed.copy() if self.grad is None else self.grad + seed
        for node in reversed(order):
            if node._bwd is None or node.grad is None:
                continue
            for p, gp in zip(node._parents, node._bwd(node.grad)):
                if gp is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = gp.copy()
                else:
                    p.grad += gp


def constant(data) -> DiffValue:
    return DiffValue(data, requires_grad=False)


def parameter(data) -> DiffValue:
    return DiffValue(data, requires_grad=True)


def _node(data, parents, bwd) -> DiffValue:
    out = DiffValue(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def _to_scalar_grad(parent: DiffValue, g: np.ndarray) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's (scalar) shape."""
    if parent.data.shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


def _check_same_or_scalar(a: DiffValue, b: DiffValue, op: str):
    if a.data.shape != b.data.shape and a.data.shape != () and b.data.shape != ():
        raise ValueError(f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}")


def add(a: DiffValue, b: DiffValue) -> DiffValue:
    _check_same_or_scalar(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_to_scalar_grad(a, g), _to_scalar_grad(b, g)))


def sub(a: DiffValue, b: DiffValue) -> DiffValue:
    _check_same_or_scalar(a, b, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_to_scalar_grad(a, g), _to_scalar_grad(b, -g)))


def mul(a: DiffValue, b: DiffValue) -> DiffValue:
    _check_same_or_scalar(a, b, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_to_scalar_grad(a, g * b.data), _to_scalar_grad(b, g * a.data)))


def div(a: DiffValue, b: DiffValue) -> DiffValue:
    _check_same_or_scalar(a, b, "div")
    return _node(a.data / b.data, (a, b),
                 lambda g: (_to_scalar_grad(a, g / b.data),
                            _to_scalar_grad(b, -g * a.data / (b.data * b.data))))


def neg(x: DiffValue) -> DiffValue:
    return _node(-x.data, (x,), lambda g: (-g,))


def scale(x: DiffValue, c: float) -> DiffValue:
    return _node(x.data * c, (x,), lambda g: (g * c,))


def add_const(x: DiffValue, c: float) -> DiffValue:
    return _node(x.data + c, (x,), lambda g: (g,))


def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    return _node(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None))


def transpose(x: DiffValue) -> DiffValue:
    return _node(x.data.T, (x,), lambda g: (np.ascontiguousarray(g.T),))


def relu(x: DiffValue) -> DiffValue:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def absolute(x: DiffValue) -> DiffValue:
    s = np.sign(x.data)
    return _node(np.abs(x.data), (x,), lambda g: (g * s,))


def mean_all(x: DiffValue) -> DiffValue:
    n = x.data.size
    return _node(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.full_like(x.data, float(g) / n),))


def sum_axis1(x: DiffValue) -> DiffValue:
    if x.data.ndim != 2:
        raise ValueError(f"sum_axis1 expects a matrix, got shape {x.data.shape}")
    n = x.data.shape[1]
    return _node(x.data.sum(axis=1), (x,),
                 lambda g: (np.repeat(g[:, None], n, axis=1),))


def demean(x: DiffValue) -> DiffValue:
    """x minus its sample mean (the removed mean stays with the caller's residual)."""
    return _node(x.data - x.data.mean(), (x,), lambda g: (g - g.mean(),))


def affine(x: DiffValue, w: DiffValue, b: DiffValue) -> DiffValue:
    """x @ w + b for a row vector (in,) or row batch (n, in)."""
    if x.data.ndim not in (1, 2) or w.data.ndim != 2 or x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(f"affine: incompatible shapes {x.data.shape} and {w.data.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"affine: bias shape {b.data.shape} does not match width {w.data.shape[1]}")

    def bwd(g):
        gx = g @ w.data.T if x.requires_grad else None
        if x.data.ndim == 1:
            gw = np.outer(x.data, g) if w.requires_grad else None
            gb = g if b.requires_grad else None
        else:
            gw = x.data.T @ g if w.requires_grad else None
            gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _node(x.data @ w.data + b.data, (x, w, b), bwd)


def affine_cols(x: DiffValue, w: DiffValue, b: DiffValue) -> DiffValue:
    """w @ x + b[:, None] for column-major features (features x nodes)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or w.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"affine_cols: incompatible shapes {w.data.shape} and {x.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ValueError(f"affine_cols: bias shape {b.data.shape} does not match {w.data.shape[0]}")

    def bwd(g):
        return (w.data.T @ g if x.requires_grad else None,
                g @ x.data.T if w.requires_grad else None,
                g.sum(axis=1) if b.requires_grad else None)

    return _node(w.data @ x.data + b.data[:, None], (x, w, b), bwd)


def softmax_rows(x: DiffValue) -> DiffValue:
    """Row-wise softmax, stabilized by row-max subtraction."""
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows expects a matrix, got shape {x.data.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return _node(s, (x,), lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def conv2d_components(x: DiffValue, kernels: DiffValue, bias: DiffValue) -> DiffValue:
    """Convolve a (T, K) component stack with K kernels of shape (O, K).

    Time axis replicate-padded by (O-1)/2 so the output stays (T, K);
    kernel j spans all K components and emits output channel j.
    """
    if x.data.ndim != 2 or kernels.data.ndim != 3:
        raise ValueError(f"conv2d: expected (T,K) input and (K,O,K) kernels, "
                         f"got {x.data.shape} and {kernels.data.shape}")
    t_len, k = x.data.shape
    k_out, o, k_in = kernels.data.shape
    if k_in != k or k_out != k:
        raise ValueError(f"conv2d: kernels {kernels.data.shape} do not match input width {k}")
    if o % 2 == 0:
        raise ValueError(f"conv2d: kernel time span must be odd, got {o}")
    if bias.data.shape != (k,):
        raise ValueError(f"conv2d: bias shape {bias.data.shape} does not match {k} channels")
    pad = (o - 1) // 2
    xp = np.pad(x.data, ((pad, pad), (0, 0)), mode="edge")
    # windows[t, v, u] = xp[t+u, v]
    win = np.lib.stride_tricks.sliding_window_view(xp, o, axis=0)
    out = np.einsum("tvu,juv->tj", win, kernels.data) + bias.data

    def bwd(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for u in range(o):
                gxp[u:u + t_len] += g @ kernels.data[:, u, :]
            gx = gxp[pad:pad + t_len].copy()
            if pad:
                gx[0] += gxp[:pad].sum(axis=0)
                gx[-1] += gxp[pad + t_len:].sum(axis=0)
        gk = np.einsum("tj,tvu->juv", g, win) if kernels.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gk, gb

    return _node(out, (x, kernels, bias), bwd)


def _needs_grad(x: DiffValue) -> bool:
    return _grad_enabled and x.requires_grad


def _route(winners: np.ndarray, g: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(winners, weights=g, minlength=n)


def dilate(x: DiffValue, kernel: SEKernel) -> DiffValue:
    """Sliding max filter; backward routes each gradient to the window winner."""
    want = _needs_grad(x)
    out, _, winners, _ = envelopes(x.data, kernel, winners=want)
    if not want:
        return DiffValue(out)
    n = x.data.shape[0]
    return _node(out, (x,), lambda g: (_route(winners, g, n),))


def erode(x: DiffValue, kernel: SEKernel) -> DiffValue:
    """Sliding min filter; backward routes each gradient to the window winner."""
    want = _needs_grad(x)
    _, out, _, winners = envelopes(x.data, kernel, winners=want)
    if not want:
        return DiffValue(out)
    n = x.data.shape[0]
    return _node(out, (x,), lambda g: (_route(winners, g, n),))


def mean_envelope(x: DiffValue, kernel: SEKernel) -> DiffValue:
    """(dilate + erode) / 2 fused into one node for the sifting hot path."""
    want = _needs_grad(x)
    up, lo, up_win, lo_win = envelopes(x.data, kernel, winners=want)
    out = 0.5 * (up + lo)
    if not want:
        return DiffValue(out)
    n = x.data.shape[0]

    def bwd(g):
        half = 0.5 * g
        return (_route(up_win, half, n) + _route(lo_win, half, n),)

    return _node(out, (x,), bwd)


def stack_cols(columns: list[DiffValue]) -> DiffValue:
    """Stack 1-D series of equal length into a (T, K) matrix."""
    length = columns[0].data.shape[0]
    for c in columns:
        if c.data.ndim != 1 or c.data.shape[0] != length:
            raise ValueError("stack_cols: all columns must be 1-D of equal length")
    out = np.column_stack([c.data for c in columns])
    return _node(out, tuple(columns),
                 lambda g: tuple(np.ascontiguousarray(g[:, i]) for i in range(len(columns))))


def concat_cols(mats: list[DiffValue]) -> DiffValue:
    """Concatenate (T, k_i) matrices along the column axis."""
    t_len = mats[0].data.shape[0]
    for m in mats:
        if m.data.ndim != 2 or m.data.shape[0] != t_len:
            raise ValueError("concat_cols: all inputs must be matrices with equal row count")
    widths = [m.data.shape[1] for m in mats]
    edges = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(np.ascontiguousarray(g[:, edges[i]:edges[i + 1]]) for i in range(len(mats)))

    return _node(np.concatenate([m.data for m in mats], axis=1), tuple(mats), bwd)


def concat_rows(mats: list[DiffValue]) -> DiffValue:
    """Concatenate (r_i, N) matrices along the row (feature) axis."""
    n = mats[0].data.shape[1]
    for m in mats:
        if m.data.ndim != 2 or m.data.shape[1] != n:
            raise ValueError("concat_rows: all inputs must be matrices with equal column count")
    heights = [m.data.shape[0] for m in mats]
    edges = np.cumsum([0] + heights)

    def bwd(g):
        return tuple(np.ascontiguousarray(g[edges[i]:edges[i + 1]]) for i in range(len(mats)))

    return _node(np.concatenate([m.data for m in mats], axis=0), tuple(mats), bwd)


def col(x: DiffValue, j: int) -> DiffValue:
    """Extract column j of a matrix as a 1-D series."""
    if x.data.ndim != 2:
        raise ValueError(f"col expects a matrix, got shape {x.data.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, j] = g
        return (gx,)

    return _node(np.ascontiguousarray(x.data[:, j]), (x,), bwd)


def mlp(x: DiffValue, layers: list[tuple[DiffValue, DiffValue]]) -> DiffValue:
    """Alternating affine + ReLU over `layers` [(w, b), ...]; final layer affine only."""
    out = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        out = affine(out, w, b)
        if i != last:
            out = relu(out)
    return out


class ParameterSet:
    """Named learnable parameters; each name registered exactly once."""

    def __init__(self):
        self._params: dict[str, DiffValue] = {}

    def create(self, name: str, data: np.ndarray) -> DiffValue:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        p = parameter(np.array(data, dtype=np.float64))
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> DiffValue:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {k!r}: shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.copy()


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] initialization."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)
