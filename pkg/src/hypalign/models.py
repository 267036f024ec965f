"""Graph encoders over flat and curved embedding spaces.

Five architectures share one functional interface: ``init_params`` builds a
name-to-Tensor dict, ``forward`` maps features to an ``EmbedOutput`` whose
rows live in the output geometry of the architecture.

* ``mlp``: per-node feedforward net, ignores the graph.
* ``gcn``: symmetric-normalized neighbor averaging, A_hat = D~^-1/2 (A + I) D~^-1/2.
* ``gat``: attention over N(i) plus self, logits from a LeakyReLU of
  source/receiver scores, softmax per receiver.
* ``hgcn``: ball-model network that maps points to the tangent space at the
  origin, applies a GCN-style transform there, and maps back; per-layer
  curvature, optionally learnable.
* ``lorentz``: hyperboloid network; neighbors are averaged, renormalized to
  the Lorentzian centroid, linearly mapped to a spatial vector through a
  sigmoid gate, and the time coordinate is recomputed from the constraint
  <z, z>_L = -1/c. ``lorentz_flat`` is the identically wired flat twin
  (mean aggregation, gated affine transform, no time coordinate), which
  isolates the contribution of the geometry from that of the wiring.

Curved arithmetic is batched over rows and built from recorded primitives,
so curvature gradients flow when curvature is learnable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from .diffengine import Tensor
from .errors import ConfigError, DimensionError
from .graphs import Graph
from .manifold import EUCLIDEAN, LORENTZ, POINCARE, ManifoldSpec

ARCHS = ("mlp", "gcn", "gat", "hgcn", "lorentz", "lorentz_flat")
EUCLIDEAN_ARCHS = ("mlp", "gcn", "gat", "lorentz_flat")

_MIN_CURV = 1e-4

# Clamp points in scaled tangent coordinates: tanh saturates to float 1.0
# past ~19 and cosh overflows past ~710, either of which would put points
# numerically on or past the boundary.
_BALL_REACH = 18.0
_LORENTZ_REACH = 90.0


@dataclass
class ModelConfig:
    arch: str
    in_dim: int
    out_dim: int
    hidden_dim: int = 16
    num_layers: int = 2
    activation: str = "relu"
    dropout: float = 0.0
    heads: int = 1
    curvature: float = 1.0
    learnable_curvature: bool = False
    lorentz_attention: bool = False
    bias: bool = True

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.arch in ("hgcn", "lorentz") and not self.curvature > 0:
            raise ConfigError("curvature must be positive")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer in tangent/feature coordinates.

        Multi-head GAT hidden layers concatenate their heads, so the next
        layer's fan_in picks up the factor.
        """
        dims = []
        prev = self.in_dim
        for l in range(self.num_layers):
            out = self.out_dim if l == self.num_layers - 1 else self.hidden_dim
            dims.append((prev, out))
            prev = out
            if self.arch == "gat" and l < self.num_layers - 1 and self.heads > 1:
                prev = out * self.heads
        return dims


@dataclass
class EmbedOutput:
    """Embedding rows plus the geometry they live in."""

    Z: Tensor
    kind: str
    c: Tensor | None = None

    def spec(self) -> ManifoldSpec:
        dim = self.Z.data.shape[1] - (1 if self.kind == LORENTZ else 0)
        return ManifoldSpec(self.kind, dim, 1.0 if self.c is None else float(self.c.data))


_ACTIVATIONS = {
    "relu": de.relu,
    "leaky_relu": lambda t: de.leaky_relu(t, 0.2),
    "tanh": de.ttanh,
    "identity": lambda t: t,
}


def _act(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}") from None


# ---------------------------------------------------------------------------
# differentiable batched geometry

def expmap0_ball(V: Tensor, c: Tensor) -> Tensor:
    """Row-wise exponential map at the ball origin, tanh(sc n)/(sc n) * v."""
    sc = de.tsqrt(c)
    nc = de.mul(de.rownorm(V), sc)
    ncl = de.clamp(nc, 1e-15, None)
    nch = de.clamp(ncl, None, _BALL_REACH)
    return de.mul(V, de.div(de.ttanh(nch), ncl))


def logmap0_ball(Z: Tensor, c: Tensor) -> Tensor:
    """Row-wise log map at the ball origin, artanh(sc n)/(sc n) * z."""
    sc = de.tsqrt(c)
    nc = de.clamp(de.mul(de.rownorm(Z), sc), 1e-15, 1.0 - 1e-12)
    return de.mul(Z, de.div(de.artanh(nc), nc))


def expmap0_lorentz(V: Tensor, c: Tensor) -> Tensor:
    """Lift spatial tangent rows at the hyperboloid origin onto the sheet.

    Returns (n, d+1) rows (cosh(a)/sc, sinh(a) v / (sc ||v||)) with
    a = sc ||v||, which satisfy <z, z>_L = -1/c exactly even past the
    saturation clamp.
    """
    sc = de.tsqrt(c)
    nc = de.mul(de.rownorm(V), sc)
    ncl = de.clamp(nc, 1e-15, None)
    nch = de.clamp(ncl, None, _LORENTZ_REACH)
    time = de.div(de.tcosh(nch), sc)
    spatial = de.mul(V, de.div(de.tsinh(nch), ncl))
    return de.concat([time, spatial], axis=1)


def logmap0_lorentz(Z: Tensor, c: Tensor) -> Tensor:
    """Spatial tangent coordinates at the origin for hyperboloid rows."""
    sc = de.tsqrt(c)
    time = de.slice_cols(Z, 0, 1)
    rest = de.slice_cols(Z, 1, None)
    a = de.clamp(de.mul(time, sc), 1.0 + 1e-15, None)
    dist0 = de.div(de.acosh(a), sc)
    ns = de.clamp(de.rownorm(rest), 1e-15, None)
    return de.mul(rest, de.div(dist0, ns))


def lorentz_centroid(M: Tensor, c: Tensor) -> Tensor:
    """Renormalize aggregated hyperboloid rows back onto the sheet,
    m / (sqrt(c) * sqrt(-<m, m>_L)); invariant to positive row scaling."""
    sc = de.tsqrt(c)
    q = de.lorentz_inner_rows(M, M)
    nrm = de.tsqrt(de.clamp(de.neg(q), 1e-15, None))
    return de.div(M, de.mul(nrm, sc))


def lift_features(X: Tensor, kind: str, c: Tensor | None) -> Tensor:
    """Place raw feature rows into the input geometry of an architecture."""
    if kind == EUCLIDEAN:
        return X
    if kind == POINCARE:
        return expmap0_ball(X, c)
    if kind == LORENTZ:
        return expmap0_lorentz(X, c)
    raise DimensionError(f"unknown geometry {kind!r}")


# ---------------------------------------------------------------------------
# propagation structure

@dataclass
class PropData:
    """Precomputed edge indexing shared by every layer of a forward pass."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    gcn_w: np.ndarray = field(repr=False, default=None)
    inv_deg: np.ndarray = field(repr=False, default=None)


def build_prop(graph: Graph) -> PropData:
    """Directed edge list with self loops, GCN weights and mean weights."""
    e = graph.edges
    src = np.concatenate([e[:, 0], e[:, 1], np.arange(graph.n)])
    dst = np.concatenate([e[:, 1], e[:, 0], np.arange(graph.n)])
    deg = np.bincount(dst, minlength=graph.n).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    gcn_w = (inv_sqrt[src] * inv_sqrt[dst])[:, None]
    return PropData(graph.n, src, dst, gcn_w=gcn_w, inv_deg=(1.0 / deg)[:, None])


def _weighted_aggregate(U: Tensor, prop: PropData, w: np.ndarray) -> Tensor:
    msg = de.mul(de.gather_rows(U, prop.src), de.constant(w))
    return de.scatter_add_rows(msg, prop.dst, prop.n)


def segment_softmax(e: Tensor, seg: np.ndarray, n: int) -> Tensor:
    """Softmax of per-edge column scores, normalized over each receiver.

    The per-segment max is subtracted as a detached constant; softmax is
    invariant to a uniform shift within a segment so gradients are exact.
    """
    m = np.full((n, 1), -np.inf)
    np.maximum.at(m, seg, e.data)
    ex = de.texp(de.sub(e, de.constant(m[seg])))
    denom = de.scatter_add_rows(ex, seg, n)
    return de.div(ex, de.gather_rows(denom, seg))


# ---------------------------------------------------------------------------
# parameters

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _raw_curvature(c: float) -> float:
    # inverse of softplus(x) + _MIN_CURV
    return float(np.log(np.expm1(max(c - _MIN_CURV, 1e-6))))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Glorot weights, zero biases and gates, raw softplus curvatures.

    Gate and attention vectors start at zero so the first forward pass uses
    uniform attention and a 1/2 gate, which keeps early steps well scaled.
    """
    params: dict[str, Tensor] = {}
    dims = cfg.layer_dims()
    for l, (fin, fout) in enumerate(dims):
        if cfg.arch == "lorentz":
            params[f"layer{l}.W"] = de.parameter(_glorot(rng, fin + 1, fout))
            params[f"layer{l}.v"] = de.parameter(np.zeros((fout, 1)))
            if cfg.lorentz_attention:
                params[f"layer{l}.att_s"] = de.parameter(np.asarray(1.0))
                params[f"layer{l}.att_b"] = de.parameter(np.asarray(0.0))
        elif cfg.arch == "lorentz_flat":
            params[f"layer{l}.W"] = de.parameter(_glorot(rng, fin, fout))
            params[f"layer{l}.v"] = de.parameter(np.zeros((fout, 1)))
            if cfg.bias:
                params[f"layer{l}.b"] = de.parameter(np.zeros((1, fout)))
        elif cfg.arch == "gat" and l < cfg.num_layers - 1 and cfg.heads > 1:
            for h in range(cfg.heads):
                params[f"layer{l}.h{h}.W"] = de.parameter(_glorot(rng, fin, fout))
                params[f"layer{l}.h{h}.a_src"] = de.parameter(np.zeros((fout, 1)))
                params[f"layer{l}.h{h}.a_dst"] = de.parameter(np.zeros((fout, 1)))
            if cfg.bias:
                params[f"layer{l}.b"] = de.parameter(np.zeros((1, fout * cfg.heads)))
        elif cfg.arch == "gat":
            params[f"layer{l}.W"] = de.parameter(_glorot(rng, fin, fout))
            params[f"layer{l}.a_src"] = de.parameter(np.zeros((fout, 1)))
            params[f"layer{l}.a_dst"] = de.parameter(np.zeros((fout, 1)))
            if cfg.bias:
                params[f"layer{l}.b"] = de.parameter(np.zeros((1, fout)))
        else:
            params[f"layer{l}.W"] = de.parameter(_glorot(rng, fin, fout))
            if cfg.bias:
                params[f"layer{l}.b"] = de.parameter(np.zeros((1, fout)))
    if cfg.arch == "hgcn" and cfg.learnable_curvature:
        for l in range(cfg.num_layers):
            params[f"curv{l}"] = de.parameter(np.asarray(_raw_curvature(cfg.curvature)))
    elif cfg.arch == "lorentz" and cfg.learnable_curvature:
        params["curv"] = de.parameter(np.asarray(_raw_curvature(cfg.curvature)))
    return params


def count_parameters(params: dict[str, Tensor]) -> int:
    return sum(t.data.size for t in params.values())


def clone_param_data(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in params.items()}


def load_param_data(params: dict[str, Tensor], data: dict[str, np.ndarray]):
    if set(params) != set(data):
        raise DimensionError("parameter name sets differ")
    for k, t in params.items():
        if t.data.shape != data[k].shape:
            raise DimensionError(f"shape mismatch for {k}: {t.data.shape} vs {data[k].shape}")
        t.data = data[k].copy()


def _curvature_tensor(cfg: ModelConfig, params: dict[str, Tensor], name: str) -> Tensor:
    if cfg.learnable_curvature:
        return de.add(de.softplus(params[name]), de.constant(_MIN_CURV))
    return de.constant(cfg.curvature)


# ---------------------------------------------------------------------------
# GAT layer heads also correct for multi-head dims at the following layer,
# so layer_dims is adjusted on the fly inside forward for that arch.

def _gat_head(U: Tensor, prop: PropData, a_src: Tensor, a_dst: Tensor) -> Tensor:
    s_src = de.matmul(U, a_src)
    s_dst = de.matmul(U, a_dst)
    e = de.leaky_relu(de.add(de.gather_rows(s_src, prop.src), de.gather_rows(s_dst, prop.dst)), 0.2)
    alpha = segment_softmax(e, prop.dst, prop.n)
    msg = de.mul(de.gather_rows(U, prop.src), alpha)
    return de.scatter_add_rows(msg, prop.dst, prop.n)


def forward(cfg: ModelConfig, params: dict[str, Tensor], prop: PropData, X,
            training: bool = False, rng: np.random.Generator | None = None) -> EmbedOutput:
    """Run the encoder; returns embeddings in the architecture's geometry.

    ``X`` may be a raw array or a Tensor. Dropout fires only when
    ``training`` is true, drawing masks from ``rng``.
    """
    H = X if isinstance(X, Tensor) else de.constant(X)
    if H.data.ndim != 2 or H.data.shape[1] != cfg.in_dim:
        raise DimensionError(f"features must be (n, {cfg.in_dim}), got {H.data.shape}")
    act = _act(cfg.activation)
    drop = cfg.dropout if training else 0.0
    if drop > 0.0 and rng is None:
        raise ConfigError("training forward with dropout needs an rng")
    L = cfg.num_layers

    if cfg.arch == "mlp":
        for l in range(L):
            if drop > 0.0:
                H = de.dropout(H, drop, rng)
            H = de.matmul(H, params[f"layer{l}.W"])
            if cfg.bias:
                H = de.add(H, params[f"layer{l}.b"])
            if l < L - 1:
                H = act(H)
        return EmbedOutput(H, EUCLIDEAN)

    if cfg.arch == "gcn":
        for l in range(L):
            if drop > 0.0:
                H = de.dropout(H, drop, rng)
            U = de.matmul(H, params[f"layer{l}.W"])
            H = _weighted_aggregate(U, prop, prop.gcn_w)
            if cfg.bias:
                H = de.add(H, params[f"layer{l}.b"])
            if l < L - 1:
                H = act(H)
        return EmbedOutput(H, EUCLIDEAN)

    if cfg.arch == "gat":
        for l in range(L):
            if drop > 0.0:
                H = de.dropout(H, drop, rng)
            multi = l < L - 1 and cfg.heads > 1
            if multi:
                outs = []
                for h in range(cfg.heads):
                    U = de.matmul(H, params[f"layer{l}.h{h}.W"])
                    outs.append(_gat_head(U, prop, params[f"layer{l}.h{h}.a_src"],
                                          params[f"layer{l}.h{h}.a_dst"]))
                H = de.concat(outs, axis=1)
            else:
                U = de.matmul(H, params[f"layer{l}.W"])
                H = _gat_head(U, prop, params[f"layer{l}.a_src"], params[f"layer{l}.a_dst"])
            if cfg.bias:
                H = de.add(H, params[f"layer{l}.b"])
            if l < L - 1:
                H = act(H)
        return EmbedOutput(H, EUCLIDEAN)

    if cfg.arch == "hgcn":
        c_in = _curvature_tensor(cfg, params, "curv0")
        Z = lift_features(H, POINCARE, c_in)
        for l in range(L):
            c_out = _curvature_tensor(cfg, params, f"curv{l}")
            T = logmap0_ball(Z, c_in)
            if drop > 0.0:
                T = de.dropout(T, drop, rng)
            U = de.matmul(T, params[f"layer{l}.W"])
            U = _weighted_aggregate(U, prop, prop.gcn_w)
            if cfg.bias:
                U = de.add(U, params[f"layer{l}.b"])
            if l < L - 1:
                U = act(U)
            Z = expmap0_ball(U, c_out)
            c_in = c_out
        return EmbedOutput(Z, POINCARE, c_in)

    if cfg.arch == "lorentz":
        c = _curvature_tensor(cfg, params, "curv")
        Z = lift_features(H, LORENTZ, c)
        for l in range(L):
            if cfg.lorentz_attention:
                # logits from the Minkowski similarity of receiver and sender
                inn = de.lorentz_inner_rows(de.gather_rows(Z, prop.dst), de.gather_rows(Z, prop.src))
                logits = de.add(de.mul(inn, params[f"layer{l}.att_s"]), params[f"layer{l}.att_b"])
                alpha = segment_softmax(logits, prop.dst, prop.n)
                M = de.scatter_add_rows(de.mul(de.gather_rows(Z, prop.src), alpha),
                                        prop.dst, prop.n)
            else:
                # uniform attention: self loops are in the edge list and the
                # centroid normalization absorbs the 1/|N(i)| factor
                M = de.scatter_add_rows(de.gather_rows(Z, prop.src), prop.dst, prop.n)
            M = lorentz_centroid(M, c)
            U = de.matmul(M, params[f"layer{l}.W"])
            gate = de.sigmoid(de.matmul(U, params[f"layer{l}.v"]))
            S = de.mul(U, gate)
            sumsq = de.rowsum(de.mul(S, S))
            time = de.tsqrt(de.add(sumsq, de.div(de.constant(1.0), c)))
            Z = de.concat([time, S], axis=1)
        return EmbedOutput(Z, LORENTZ, c)

    # lorentz_flat: same wiring in flat space
    for l in range(L):
        M = de.mul(de.scatter_add_rows(de.gather_rows(H, prop.src), prop.dst, prop.n),
                   de.constant(prop.inv_deg))
        U = de.matmul(M, params[f"layer{l}.W"])
        if cfg.bias:
            U = de.add(U, params[f"layer{l}.b"])
        gate = de.sigmoid(de.matmul(U, params[f"layer{l}.v"]))
        H = de.mul(U, gate)
    return EmbedOutput(H, EUCLIDEAN)


def tangent0(out: EmbedOutput) -> Tensor:
    """Embedding rows pulled to the tangent space at the origin (identity in
    flat space); the coordinate system every linear decoder head reads."""
    if out.kind == EUCLIDEAN:
        return out.Z
    if out.kind == POINCARE:
        return logmap0_ball(out.Z, out.c)
    return logmap0_lorentz(out.Z, out.c)


def pair_distances(out: EmbedOutput, ii: np.ndarray, jj: np.ndarray) -> Tensor:
    """Geodesic distances between embedding rows for index pairs."""
    if out.kind == EUCLIDEAN:
        return de.pair_dist_euclidean(out.Z, ii, jj)
    if out.kind == POINCARE:
        return de.pair_dist_poincare(out.Z, ii, jj, out.c)
    return de.pair_dist_lorentz(out.Z, ii, jj, out.c)
