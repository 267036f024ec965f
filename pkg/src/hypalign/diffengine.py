"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records primitive applications in execution order; ``backward``
replays the record once, in reverse, accumulating vector-Jacobian products.
Only the primitives the models and losses need are provided, and each one
carries a hand-written backward rule that the finite-difference harness at
the bottom of this module can check.

Broadcasting in binary ops is restricted to the handful of patterns the
formulas use: equal shapes, a one-element operand, a column (n, 1) against
(n, d), or a row (1, d) against (n, d). Anything else raises rather than
silently outer-broadcasting.

Tapes are independent per thread. Ops executed with no active tape still
compute values (useful for evaluation) but record nothing.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, HypalignError, NumericError

_state = threading.local()

_PAIR_BLOCK = 65536

# Floor under sqrt(u^2 - 1) in arccosh backward rules; keeps the gradient
# finite when a distance collapses to zero instead of poisoning the step.
_ACOSH_GUARD = 1e-30


def _active_tape():
    return getattr(_state, "tape", None)


class Tensor:
    """A dense float64 array plus grad bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def parameter(x) -> Tensor:
    return Tensor(x, requires_grad=True)


class Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op, inputs, output, vjp):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of primitive applications, one per recorded op."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise HypalignError("tapes do not nest")
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = None
        return False


def _check_finite(op: str, data: np.ndarray):
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by primitive {op!r}")


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, vjp) -> Tensor:
    _check_finite(op, out_data)
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=rg)
    tape = _active_tape()
    if tape is not None and rg:
        tape.nodes.append(Node(op, tuple(inputs), out, vjp))
    return out


def backward(tape: Tape, output: Tensor, wrt: Iterable[Tensor] | None = None):
    """Accumulate d(output)/d(leaf) for every requires_grad leaf on the tape.

    ``output`` must be scalar. Returns a dict mapping leaf Tensors to their
    gradient arrays; leaves also get ``.grad`` set. Tensors in ``wrt`` that
    the output does not depend on map to zeros.
    """
    if output.data.shape != ():
        raise DimensionError("backward expects a scalar output")
    grads: dict[int, np.ndarray] = {id(output): np.ones(())}
    holders: dict[int, Tensor] = {id(output): output}
    produced = {id(n.output) for n in tape.nodes}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        holders.pop(id(node.output), None)
        if g is None:
            continue
        for t, ig in zip(node.inputs, node.vjp(g)):
            if ig is None or not t.requires_grad:
                continue
            k = id(t)
            if k in grads:
                grads[k] = grads[k] + ig
            else:
                grads[k] = np.array(ig, dtype=np.float64, copy=True) if np.isscalar(ig) else ig
                holders[k] = t
    result: dict[Tensor, np.ndarray] = {}
    for k, g in grads.items():
        t = holders.get(k)
        if t is None or k in produced:
            continue
        t.grad = g
        result[t] = g
    if wrt is not None:
        for t in wrt:
            if t not in result:
                z = np.zeros_like(t.data)
                t.grad = z
                result[t] = z
    return result


# ---------------------------------------------------------------------------
# binary ops with restricted broadcasting

def _check_broadcast(a: np.ndarray, b: np.ndarray):
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    if a.ndim == 2 and b.ndim == 2 and a.shape[0] == b.shape[0] and 1 in (a.shape[1], b.shape[1]):
        return
    if a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[1] and 1 in (a.shape[0], b.shape[0]):
        return
    raise DimensionError(f"unsupported operand shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] > 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data)
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.data.shape),
                              _unbroadcast(g * a.data, b.data.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data)
    return _record("div", (a, b), a.data / b.data,
                   lambda g: (_unbroadcast(g / b.data, a.data.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a: Tensor) -> Tensor:
    return _record("neg", (a,), -a.data, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul needs (n,k)@(k,m), got {a.data.shape} and {b.data.shape}")
    return _record("matmul", (a, b), a.data @ b.data,
                   lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# reductions and structure

def tsum(a: Tensor) -> Tensor:
    return _record("sum", (a,), np.asarray(a.data.sum()),
                   lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    return _record("mean", (a,), np.asarray(a.data.mean()),
                   lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),))


def rowsum(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("rowsum expects a 2-D tensor")
    return _record("rowsum", (a,), a.data.sum(axis=1, keepdims=True),
                   lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if axis not in (0, 1):
        raise DimensionError("concat supports axis 0 or 1")
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offs = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(offs[i], offs[i + 1]), axis=axis)
                     for i in range(len(datas)))

    return _record("concat", tuple(tensors), np.concatenate(datas, axis=axis), vjp)


def slice_cols(a: Tensor, lo: int, hi: int | None) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("slice_cols expects a 2-D tensor")
    hi_ = a.data.shape[1] if hi is None else hi

    def vjp(g):
        z = np.zeros_like(a.data)
        z[:, lo:hi_] = g
        return (z,)

    return _record("slice_cols", (a,), a.data[:, lo:hi_].copy(), vjp)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _record("gather_rows", (a,), a.data[idx], vjp)


def scatter_add_rows(a: Tensor, idx: np.ndarray, n_rows: int) -> Tensor:
    """out[k] = sum of rows of ``a`` whose index maps to k."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros((n_rows,) + a.data.shape[1:])
    np.add.at(out, idx, a.data)
    return _record("scatter_add_rows", (a,), out, lambda g: (g[idx],))


def take_per_row(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick one entry per row, returned as a column (n, 1)."""
    if a.data.ndim != 2:
        raise DimensionError("take_per_row expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])

    def vjp(g):
        z = np.zeros_like(a.data)
        z[rows, idx] = g[:, 0]
        return (z,)

    return _record("take_per_row", (a,), a.data[rows, idx][:, None], vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def _unary(op: str, a: Tensor, out: np.ndarray, back: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    return _record(op, (a,), out, lambda g: (back(g),))


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _unary("exp", a, out, lambda g: g * out)


def tlog(a: Tensor) -> Tensor:
    return _unary("log", a, np.log(a.data), lambda g: g / a.data)


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _unary("sqrt", a, out, lambda g: g / (2.0 * out))


def ttanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _unary("tanh", a, out, lambda g: g * (1.0 - out * out))


def artanh(a: Tensor) -> Tensor:
    return _unary("artanh", a, np.arctanh(a.data), lambda g: g / (1.0 - a.data * a.data))


def tcosh(a: Tensor) -> Tensor:
    return _unary("cosh", a, np.cosh(a.data), lambda g: g * np.sinh(a.data))


def tsinh(a: Tensor) -> Tensor:
    return _unary("sinh", a, np.sinh(a.data), lambda g: g * np.cosh(a.data))


def acosh(a: Tensor) -> Tensor:
    out = np.arccosh(a.data)
    return _unary("acosh", a, out,
                  lambda g: g / np.sqrt(np.maximum(a.data * a.data - 1.0, _ACOSH_GUARD)))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _unary("sigmoid", a, out, lambda g: g * out * (1.0 - out))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)
    return _unary("softplus", a, out, lambda g: g / (1.0 + np.exp(-a.data)))


def relu(a: Tensor) -> Tensor:
    return _unary("relu", a, np.maximum(a.data, 0.0), lambda g: g * (a.data > 0.0))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(a.data > 0.0, a.data, slope * a.data)
    return _unary("leaky_relu", a, out, lambda g: g * np.where(a.data > 0.0, 1.0, slope))


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]. The gradient passes only where the input is strictly interior."""
    out = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi
    return _unary("clamp", a, out, lambda g: g * inside)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, shifted for stability."""
    if a.data.ndim != 2:
        raise DimensionError("softmax expects a 2-D tensor")
    sh = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(sh)
    out = e / e.sum(axis=1, keepdims=True)
    return _unary("softmax", a, out,
                  lambda g: out * (g - (g * out).sum(axis=1, keepdims=True)))


def rownorm(a: Tensor) -> Tensor:
    """Euclidean norm of each row as a column (n, 1); gradient is 0 at a zero row."""
    if a.data.ndim != 2:
        raise DimensionError("rownorm expects a 2-D tensor")
    out = np.linalg.norm(a.data, axis=1, keepdims=True)

    def back(g):
        return g * a.data / np.maximum(out, 1e-300)

    return _unary("rownorm", a, out, back)


def lorentz_inner_rows(u: Tensor, v: Tensor) -> Tensor:
    """Row-wise Minkowski product of two (n, d+1) tensors, as a column (n, 1)."""
    if u.data.shape != v.data.shape or u.data.ndim != 2:
        raise DimensionError(f"mismatched shapes {u.data.shape} vs {v.data.shape}")
    sgn = np.ones((1, u.data.shape[1]))
    sgn[0, 0] = -1.0
    out = np.sum(u.data * v.data * sgn, axis=1, keepdims=True)
    return _record("lorentz_inner", (u, v), out,
                   lambda g: (g * v.data * sgn, g * u.data * sgn))


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a mask drawn from ``rng`` at record time."""
    if not 0.0 <= p < 1.0:
        raise HypalignError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    return _unary("dropout", a, a.data * mask, lambda g: g * mask)


# ---------------------------------------------------------------------------
# fused pairwise geodesic distances
#
# A probe set of hundreds of thousands of pairs times a wide embedding would
# put several (pairs, dim) intermediates on the tape if written with
# gather/sub/rownorm. These fused ops chunk internally, keep O(block * dim)
# transient memory, and save only per-pair scalars for the backward pass.

def _pair_idx(Z: Tensor, ii, jj):
    ii = np.asarray(ii, dtype=np.int64)
    jj = np.asarray(jj, dtype=np.int64)
    if Z.data.ndim != 2:
        raise DimensionError("pairwise distance expects a 2-D embedding tensor")
    if ii.shape != jj.shape or ii.ndim != 1:
        raise DimensionError("index arrays must be equal-length 1-D")
    return ii, jj


def pair_dist_euclidean(Z: Tensor, ii, jj) -> Tensor:
    ii, jj = _pair_idx(Z, ii, jj)
    P = ii.shape[0]
    d = np.empty(P)
    for lo in range(0, P, _PAIR_BLOCK):
        hi = min(lo + _PAIR_BLOCK, P)
        diff = Z.data[ii[lo:hi]] - Z.data[jj[lo:hi]]
        d[lo:hi] = np.sqrt(np.sum(diff * diff, axis=1))

    def vjp(g):
        dZ = np.zeros_like(Z.data)
        for lo in range(0, P, _PAIR_BLOCK):
            hi = min(lo + _PAIR_BLOCK, P)
            diff = Z.data[ii[lo:hi]] - Z.data[jj[lo:hi]]
            coef = (g[lo:hi] / np.maximum(d[lo:hi], 1e-300))[:, None] * diff
            np.add.at(dZ, ii[lo:hi], coef)
            np.add.at(dZ, jj[lo:hi], -coef)
        return (dZ,)

    return _record("pair_dist_euclidean", (Z,), d, vjp)


def pair_dist_lorentz(Z: Tensor, ii, jj, c) -> Tensor:
    """Hyperboloid distances acosh(-c <z_i, z_j>_L) / sqrt(c) for index pairs.

    ``c`` may be a python float or a scalar Tensor; when it is a traced
    Tensor the backward rule also produces the curvature gradient.
    """
    ii, jj = _pair_idx(Z, ii, jj)
    ct = c if isinstance(c, Tensor) else constant(c)
    cv = float(ct.data)
    sc = np.sqrt(cv)
    P = ii.shape[0]
    u = np.empty(P)
    for lo in range(0, P, _PAIR_BLOCK):
        hi = min(lo + _PAIR_BLOCK, P)
        zi = Z.data[ii[lo:hi]]
        zj = Z.data[jj[lo:hi]]
        inner = np.sum(zi[:, 1:] * zj[:, 1:], axis=1) - zi[:, 0] * zj[:, 0]
        u[lo:hi] = -cv * inner
    uc = np.maximum(u, 1.0)
    d = np.arccosh(uc) / sc
    interior = u > 1.0

    def vjp(g):
        dZ = np.zeros_like(Z.data)
        dd_du = np.where(interior, g / (sc * np.sqrt(np.maximum(uc * uc - 1.0, _ACOSH_GUARD))), 0.0)
        for lo in range(0, P, _PAIR_BLOCK):
            hi = min(lo + _PAIR_BLOCK, P)
            zi = Z.data[ii[lo:hi]].copy()
            zj = Z.data[jj[lo:hi]].copy()
            zi[:, 0] = -zi[:, 0]
            zj[:, 0] = -zj[:, 0]
            coef = (-cv) * dd_du[lo:hi][:, None]
            np.add.at(dZ, ii[lo:hi], coef * zj)
            np.add.at(dZ, jj[lo:hi], coef * zi)
        # d = acosh(u)/sqrt(c) with u = c * (-inner): du/dc = u/c
        dc = np.sum(g * (-d / (2.0 * cv))) + np.sum(dd_du * u / cv)
        return (dZ, np.asarray(dc))

    return _record("pair_dist_lorentz", (Z, ct), d, vjp)


def pair_dist_poincare(Z: Tensor, ii, jj, c) -> Tensor:
    """Ball distances acosh(1 + 2c A / (px py)) / sqrt(c) for index pairs,

    where A = ||x_i - x_j||^2 and px = 1 - c ||x||^2. Equivalent to the
    Mobius form but cheaper to differentiate.
    """
    ii, jj = _pair_idx(Z, ii, jj)
    ct = c if isinstance(c, Tensor) else constant(c)
    cv = float(ct.data)
    sc = np.sqrt(cv)
    sq = np.sum(Z.data * Z.data, axis=1)
    p = 1.0 - cv * sq
    if np.any(p <= 0.0):
        raise NumericError("pair_dist_poincare input leaves the ball")
    P = ii.shape[0]
    A = np.empty(P)
    for lo in range(0, P, _PAIR_BLOCK):
        hi = min(lo + _PAIR_BLOCK, P)
        diff = Z.data[ii[lo:hi]] - Z.data[jj[lo:hi]]
        A[lo:hi] = np.sum(diff * diff, axis=1)
    pij = p[ii] * p[jj]
    u = 1.0 + 2.0 * cv * A / pij
    uc = np.maximum(u, 1.0)
    d = np.arccosh(uc) / sc
    interior = u > 1.0

    def vjp(g):
        dZ = np.zeros_like(Z.data)
        dd_du = np.where(interior, g / (sc * np.sqrt(np.maximum(uc * uc - 1.0, _ACOSH_GUARD))), 0.0)
        for lo in range(0, P, _PAIR_BLOCK):
            hi = min(lo + _PAIR_BLOCK, P)
            i_blk, j_blk = ii[lo:hi], jj[lo:hi]
            xi = Z.data[i_blk]
            xj = Z.data[j_blk]
            pi, pj = p[i_blk], p[j_blk]
            blk = dd_du[lo:hi][:, None]
            base = 4.0 * cv / (pi * pj)
            ri = (cv * A[lo:hi] / pi)
            rj = (cv * A[lo:hi] / pj)
            np.add.at(dZ, i_blk, blk * base[:, None] * ((xi - xj) + ri[:, None] * xi))
            np.add.at(dZ, j_blk, blk * base[:, None] * ((xj - xi) + rj[:, None] * xj))
        du_dc = 2.0 * A / pij + 2.0 * cv * A * (sq[ii] * p[jj] + sq[jj] * p[ii]) / (pij * pij)
        dc = np.sum(g * (-d / (2.0 * cv))) + np.sum(dd_du * du_dc)
        return (dZ, np.asarray(dc))

    return _record("pair_dist_poincare", (Z, ct), d, vjp)


# ---------------------------------------------------------------------------
# finite-difference checking

class GradCheckReport:
    """Worst absolute/relative disagreement between analytic and numeric grads."""

    def __init__(self, ok: bool, max_abs: float, max_ratio: float, per_input):
        self.ok = ok
        self.max_abs = max_abs
        self.max_ratio = max_ratio
        self.per_input = per_input

    def __repr__(self):
        return f"GradCheckReport(ok={self.ok}, max_abs={self.max_abs:.3g}, max_ratio={self.max_ratio:.3g})"


def numeric_gradient(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` with respect to ``t.data``."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        keep = flat[k]
        flat[k] = keep + eps
        hi = float(f().data)
        flat[k] = keep - eps
        lo = float(f().data)
        flat[k] = keep
        gflat[k] = (hi - lo) / (2.0 * eps)
    return g


def gradient_check(f: Callable[[], Tensor], tensors: Sequence[Tensor],
                   eps: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must recompute the scalar output purely from the current data of
    ``tensors`` each time it is called. A coordinate passes when
    |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|).
    """
    with Tape() as tape:
        out = f()
        grads = backward(tape, out, wrt=tensors)
    max_abs = 0.0
    max_ratio = 0.0
    per_input = []
    for t in tensors:
        ana = grads[t]
        num = numeric_gradient(f, t, eps=eps)
        err = np.abs(ana - num)
        tol = atol + rtol * np.maximum(np.abs(ana), np.abs(num))
        ratio = float(np.max(err / tol)) if err.size else 0.0
        per_input.append((float(err.max(initial=0.0)), ratio))
        max_abs = max(max_abs, float(err.max(initial=0.0)))
        max_ratio = max(max_ratio, ratio)
    return GradCheckReport(max_ratio <= 1.0, max_abs, max_ratio, per_input)
