"""Constant-curvature space kernels.

Two models of hyperbolic space are supported next to plain Euclidean space:

* ``poincare``: the open ball {x in R^d : c * ||x||^2 < 1} with conformal
  metric factor lam_c(x) = 2 / (1 - c * ||x||^2).
* ``lorentz``: the upper hyperboloid sheet {x in R^(d+1) : <x, x>_L = -1/c,
  x_0 > 0} under the Minkowski bilinear form
  <x, y>_L = -x_0 y_0 + sum_{i>=1} x_i y_i.

``c`` is the curvature magnitude (the sectional curvature is -c). All
functions work on 1-D float64 coordinate vectors; ``pairwise_distances``
is the batched variant used by the analysis code. Everything here is plain
numpy with no gradient tracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ManifoldError

EUCLIDEAN = "euclidean"
POINCARE = "poincare"
LORENTZ = "lorentz"

KINDS = (EUCLIDEAN, POINCARE, LORENTZ)

# Radial clamp for ball projections: points are pulled back to radius
# (1 - BOUNDARY_EPS) / sqrt(c). Distances stay finite at ~12.2 for c = 1,
# well past anything the trainers produce.
BOUNDARY_EPS = 1e-5

# Slack used when validating on-manifold constraints of inputs.
_CHECK_TOL = 1e-6


@dataclass(frozen=True)
class ManifoldSpec:
    """Which space we are in: kind, curvature magnitude and point dimension.

    ``dim`` is the manifold dimension d. Lorentz points carry d+1 ambient
    coordinates, the other kinds carry d.
    """

    kind: str
    dim: int
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ManifoldError(f"unknown manifold kind: {self.kind!r}")
        if self.dim < 1:
            raise ManifoldError(f"dim must be >= 1, got {self.dim}")
        if self.kind != EUCLIDEAN and not self.c > 0:
            raise ManifoldError(f"curvature magnitude must be positive, got {self.c}")

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1 if self.kind == LORENTZ else self.dim


@dataclass(frozen=True)
class Point:
    """A point on a manifold, stored in ambient coordinates."""

    spec: ManifoldSpec
    x: np.ndarray


@dataclass(frozen=True)
class TangentVector:
    """A tangent vector attached to its base point."""

    base: Point
    v: np.ndarray


def _as_vec(spec: ManifoldSpec, x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.ambient_dim:
        raise DimensionError(
            f"{name} must be a 1-D vector of length {spec.ambient_dim}, got shape {x.shape}"
        )
    return x


def lorentz_inner(u, v) -> float:
    """Minkowski product -u_0 v_0 + sum_{i>=1} u_i v_i of two raw vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"mismatched shapes {u.shape} vs {v.shape}")
    return float(-u[0] * v[0] + u[1:] @ v[1:])


def check_point(spec: ManifoldSpec, x, tol: float = _CHECK_TOL) -> np.ndarray:
    """Validate that ``x`` lies on the manifold, returning it as float64.

    Poincare points must satisfy c * ||x||^2 < 1, Lorentz points
    <x, x>_L = -1/c with x_0 > 0 (up to ``tol`` relative slack).
    """
    x = _as_vec(spec, x)
    if spec.kind == POINCARE:
        if spec.c * float(x @ x) >= 1.0:
            raise ManifoldError(f"point with c*||x||^2 = {spec.c * float(x @ x):.6g} is outside the ball")
    elif spec.kind == LORENTZ:
        q = lorentz_inner(x, x)
        if abs(q + 1.0 / spec.c) > tol * max(1.0, 1.0 / spec.c):
            raise ManifoldError(f"<x,x>_L = {q:.6g}, expected {-1.0 / spec.c:.6g}")
        if x[0] <= 0:
            raise ManifoldError("Lorentz point must lie on the upper sheet (x_0 > 0)")
    return x


def origin(spec: ManifoldSpec) -> Point:
    """The canonical base point: 0 in the ball / Euclidean space, (1/sqrt(c), 0, ..., 0) on the hyperboloid."""
    x = np.zeros(spec.ambient_dim)
    if spec.kind == LORENTZ:
        x[0] = 1.0 / np.sqrt(spec.c)
    return Point(spec, x)


def conformal_factor(spec: ManifoldSpec, x) -> float:
    """lam_c(x) = 2 / (1 - c * ||x||^2) on the ball; 1 elsewhere is not defined here."""
    if spec.kind != POINCARE:
        raise ManifoldError("conformal factor is a ball-model quantity")
    x = check_point(spec, x)
    return 2.0 / (1.0 - spec.c * float(x @ x))


def mobius_add(spec: ManifoldSpec, x, y) -> np.ndarray:
    """Mobius addition x (+)_c y in the ball model."""
    if spec.kind != POINCARE:
        raise ManifoldError("Mobius addition is a ball-model operation")
    x = check_point(spec, x)
    y = check_point(spec, y)
    c = spec.c
    xy = float(x @ y)
    x2 = float(x @ x)
    y2 = float(y @ y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return num / den


def distance(spec: ManifoldSpec, x, y) -> float:
    """Geodesic distance between two points of the given space."""
    x = check_point(spec, x)
    y = check_point(spec, y)
    if spec.kind == EUCLIDEAN:
        return float(np.linalg.norm(x - y))
    c = spec.c
    sc = np.sqrt(c)
    if spec.kind == POINCARE:
        w = mobius_add(spec, -x, y)
        nw = min(sc * float(np.linalg.norm(w)), 1.0 - 1e-15)
        return float(2.0 / sc * np.arctanh(nw))
    # lorentz: the product -c <x,y>_L is cosh of the scaled distance.
    arg = max(-c * lorentz_inner(x, y), 1.0)
    return float(np.arccosh(arg) / sc)


def project_to_manifold(spec: ManifoldSpec, x) -> Point:
    """Pull an arbitrary ambient vector onto the manifold.

    Ball points beyond the radial clamp are rescaled to norm
    (1 - BOUNDARY_EPS) / sqrt(c); Lorentz vectors keep their spatial part
    and get the time coordinate recomputed as sqrt(||rest||^2 + 1/c).
    """
    x = _as_vec(spec, x)
    if spec.kind == EUCLIDEAN:
        return Point(spec, x.copy())
    c = spec.c
    if spec.kind == POINCARE:
        max_norm = (1.0 - BOUNDARY_EPS) / np.sqrt(c)
        n = float(np.linalg.norm(x))
        if n > max_norm:
            x = x * (max_norm / n)
        return Point(spec, x.copy())
    rest = x[1:]
    t = np.sqrt(float(rest @ rest) + 1.0 / c)
    return Point(spec, np.concatenate(([t], rest)))


def project_to_tangent(spec: ManifoldSpec, x, v) -> np.ndarray:
    """Project an ambient vector into the tangent space at ``x``.

    Only the hyperboloid has a nontrivial ambient tangent condition,
    <x, v>_L = 0; the projection is v + c <x, v>_L x.
    """
    x = check_point(spec, x)
    v = _as_vec(spec, v, "v")
    if spec.kind != LORENTZ:
        return v.copy()
    return v + spec.c * lorentz_inner(x, v) * x


def exp_map(spec: ManifoldSpec, x, v) -> Point:
    """Follow the geodesic from ``x`` with initial velocity ``v`` for unit time."""
    x = check_point(spec, x)
    v = _as_vec(spec, v, "v")
    c = spec.c
    sc = np.sqrt(c) if spec.kind != EUCLIDEAN else 0.0
    if spec.kind == EUCLIDEAN:
        return Point(spec, x + v)
    if spec.kind == POINCARE:
        nv = float(np.linalg.norm(v))
        if nv < 1e-15:
            return Point(spec, x.copy())
        lam = 2.0 / (1.0 - c * float(x @ x))
        t = np.tanh(sc * lam * nv / 2.0)
        y = mobius_add(spec, x, (t / (sc * nv)) * v)
        return project_to_manifold(spec, y)
    if abs(lorentz_inner(x, v)) > 1e-6 * max(1.0, float(np.linalg.norm(v))):
        raise ManifoldError("velocity is not tangent at x (<x,v>_L != 0)")
    nv = lorentz_inner(v, v)
    nv = np.sqrt(max(nv, 0.0))
    if nv < 1e-15:
        return Point(spec, x.copy())
    a = sc * nv
    y = np.cosh(a) * x + np.sinh(a) * (v / (sc * nv))
    return project_to_manifold(spec, y)


def log_map(spec: ManifoldSpec, x, y) -> TangentVector:
    """Inverse of exp_map: the velocity at ``x`` whose geodesic reaches ``y``."""
    x = check_point(spec, x)
    y = check_point(spec, y)
    base = Point(spec, x.copy())
    c = spec.c
    if spec.kind == EUCLIDEAN:
        return TangentVector(base, y - x)
    if spec.kind == POINCARE:
        w = mobius_add(spec, -x, y)
        nw = float(np.linalg.norm(w))
        if nw < 1e-15:
            return TangentVector(base, np.zeros_like(x))
        sc = np.sqrt(c)
        lam = 2.0 / (1.0 - c * float(x @ x))
        scale = 2.0 / (sc * lam) * np.arctanh(min(sc * nw, 1.0 - 1e-15))
        return TangentVector(base, scale * w / nw)
    w = y + c * lorentz_inner(x, y) * x
    nw = np.sqrt(max(lorentz_inner(w, w), 0.0))
    if nw < 1e-15:
        return TangentVector(base, np.zeros_like(x))
    return TangentVector(base, distance(spec, x, y) * w / nw)


def poincare_to_lorentz(spec: ManifoldSpec, x) -> Point:
    """Isometry from the ball to the hyperboloid of the same curvature."""
    if spec.kind != POINCARE:
        raise ManifoldError("expected a ball-model spec")
    x = check_point(spec, x)
    c = spec.c
    r2 = c * float(x @ x)
    den = 1.0 - r2
    t = (1.0 + r2) / (np.sqrt(c) * den)
    target = ManifoldSpec(LORENTZ, spec.dim, c)
    return Point(target, np.concatenate(([t], 2.0 * x / den)))


def lorentz_to_poincare(spec: ManifoldSpec, z) -> Point:
    """Isometry from the hyperboloid to the ball of the same curvature."""
    if spec.kind != LORENTZ:
        raise ManifoldError("expected a hyperboloid spec")
    z = check_point(spec, z)
    c = spec.c
    target = ManifoldSpec(POINCARE, spec.dim, c)
    x = z[1:] / (1.0 + np.sqrt(c) * z[0])
    return Point(target, x)


def lorentz_to_poincare_rows(spec: ManifoldSpec, Z: np.ndarray) -> np.ndarray:
    """Row-wise hyperboloid-to-ball map; no per-row validation."""
    if spec.kind != LORENTZ:
        raise ManifoldError("expected a hyperboloid spec")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != spec.ambient_dim:
        raise DimensionError(f"expected (n, {spec.ambient_dim}) array, got {Z.shape}")
    return Z[:, 1:] / (1.0 + np.sqrt(spec.c) * Z[:, :1])


def poincare_to_lorentz_rows(spec: ManifoldSpec, X: np.ndarray) -> np.ndarray:
    """Row-wise ball-to-hyperboloid map; no per-row validation."""
    if spec.kind != POINCARE:
        raise ManifoldError("expected a ball-model spec")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.dim:
        raise DimensionError(f"expected (n, {spec.dim}) array, got {X.shape}")
    c = spec.c
    r2 = c * np.sum(X * X, axis=1, keepdims=True)
    den = 1.0 - r2
    t = (1.0 + r2) / (np.sqrt(c) * den)
    return np.concatenate([t, 2.0 * X / den], axis=1)


def pairwise_distances(spec: ManifoldSpec, Z: np.ndarray) -> np.ndarray:
    """Full n x n geodesic distance matrix for rows of ``Z`` (ambient coords).

    Vectorized and validation-free; rows are assumed to already lie on the
    manifold (use ``project_rows`` first when unsure).
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != spec.ambient_dim:
        raise DimensionError(f"expected (n, {spec.ambient_dim}) array, got {Z.shape}")
    if spec.kind == EUCLIDEAN:
        sq = np.sum(Z * Z, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
        return np.sqrt(np.maximum(d2, 0.0))
    c = spec.c
    sc = np.sqrt(c)
    if spec.kind == LORENTZ:
        G = Z[:, 1:] @ Z[:, 1:].T - np.outer(Z[:, 0], Z[:, 0])
        arg = np.maximum(-c * G, 1.0)
        D = np.arccosh(arg) / sc
    else:
        sq = np.sum(Z * Z, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T), 0.0)
        denom = np.outer(1.0 - c * sq, 1.0 - c * sq)
        arg = 1.0 + 2.0 * c * d2 / np.maximum(denom, 1e-300)
        D = np.arccosh(np.maximum(arg, 1.0)) / sc
    np.fill_diagonal(D, 0.0)
    return D


def project_rows(spec: ManifoldSpec, Z: np.ndarray) -> np.ndarray:
    """Row-wise ``project_to_manifold`` for a batch of ambient vectors."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != spec.ambient_dim:
        raise DimensionError(f"expected (n, {spec.ambient_dim}) array, got {Z.shape}")
    if spec.kind == EUCLIDEAN:
        return Z.copy()
    c = spec.c
    if spec.kind == POINCARE:
        max_norm = (1.0 - BOUNDARY_EPS) / np.sqrt(c)
        n = np.linalg.norm(Z, axis=1, keepdims=True)
        scale = np.minimum(1.0, max_norm / np.maximum(n, 1e-300))
        return Z * scale
    rest = Z[:, 1:]
    t = np.sqrt(np.sum(rest * rest, axis=1, keepdims=True) + 1.0 / c)
    return np.hstack([t, rest])


def mobius_add_rows(spec: ManifoldSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Row-wise Mobius addition of two (n, d) arrays of ball points."""
    if spec.kind != POINCARE:
        raise ManifoldError("Mobius addition is a ball-model operation")
    c = spec.c
    xy = np.sum(X * Y, axis=1, keepdims=True)
    x2 = np.sum(X * X, axis=1, keepdims=True)
    y2 = np.sum(Y * Y, axis=1, keepdims=True)
    num = (1.0 + 2.0 * c * xy + c * y2) * X + (1.0 - c * x2) * Y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return num / den


def exp_map_rows(spec: ManifoldSpec, X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise exponential map at arbitrary base points.

    The optimizer uses this to retract parameter rows after a tangent-space
    step; results are pushed back onto the manifold to absorb roundoff.
    """
    X = np.asarray(X, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if X.shape != V.shape:
        raise DimensionError(f"mismatched shapes {X.shape} vs {V.shape}")
    if spec.kind == EUCLIDEAN:
        return X + V
    c = spec.c
    sc = np.sqrt(c)
    if spec.kind == POINCARE:
        nv = np.linalg.norm(V, axis=1, keepdims=True)
        lam = 2.0 / (1.0 - c * np.sum(X * X, axis=1, keepdims=True))
        t = np.tanh(sc * lam * nv / 2.0)
        step = np.where(nv > 1e-15, t / (sc * np.maximum(nv, 1e-300)), 0.0) * V
        return project_rows(spec, mobius_add_rows(spec, X, step))
    q = np.sum(V[:, 1:] * V[:, 1:], axis=1, keepdims=True) - V[:, :1] * V[:, :1]
    nv = np.sqrt(np.maximum(q, 0.0))
    a = sc * nv
    out = np.cosh(a) * X + np.where(nv > 1e-15, np.sinh(a) / np.maximum(sc * nv, 1e-300), 0.0) * V
    return project_rows(spec, out)


def project_tangent_rows(spec: ManifoldSpec, X: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Row-wise tangent projection; the identity except on the hyperboloid."""
    if spec.kind != LORENTZ:
        return np.asarray(V, dtype=np.float64).copy()
    inner = np.sum(X[:, 1:] * V[:, 1:], axis=1, keepdims=True) - X[:, :1] * V[:, :1]
    return V + spec.c * inner * X


def random_points(spec: ManifoldSpec, n: int, rng: np.random.Generator,
                  radius: float = 0.8) -> np.ndarray:
    """Sample ``n`` points, returned as an (n, ambient_dim) array.

    Euclidean: standard normal scaled by ``radius``. Ball: uniform direction
    with norm uniform in [0, radius / sqrt(c)), so ``radius`` < 1 bounds the
    relative distance to the boundary. Hyperboloid: exp at the origin of a
    normal tangent draw scaled by ``radius``.
    """
    if not 0 < radius:
        raise ManifoldError("radius must be positive")
    if spec.kind == EUCLIDEAN:
        return radius * rng.standard_normal((n, spec.dim))
    if spec.kind == POINCARE:
        if radius >= 1.0:
            raise ManifoldError("ball sampling radius must be < 1")
        dirs = rng.standard_normal((n, spec.dim))
        dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
        r = radius / np.sqrt(spec.c) * rng.random((n, 1))
        return dirs * r
    v = radius * rng.standard_normal((n, spec.dim))
    nv = np.linalg.norm(v, axis=1, keepdims=True)
    sc = np.sqrt(spec.c)
    a = sc * nv
    t = np.cosh(a) / sc
    rest = np.sinh(a) * v / np.maximum(sc * nv, 1e-300)
    return np.hstack([t, rest])
