"""Geometry diagnostics and predictive metrics.

Distortion compares embedding geodesic distances against graph distances
pair by pair. The alignment report relates a linear readout to the graph
metric through three quantities: the range of chord-to-geodesic ratios,
the worst cosine between the readout direction and any chord, and the
distortion factors. Together they give two-sided Lipschitz constants for
the readout as a function on the graph, which ``verify_lipschitz_bounds``
checks against the model's own outputs.

Gromov delta measures how far a metric is from a tree metric via the
four-point condition; both a pruned exact search and a brute-force
reference are provided.

All pair scans run in row blocks so memory stays proportional to
block size times n rather than n^2 times stored quantities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .graphs import Graph
from .manifold import EUCLIDEAN, KINDS, LORENTZ, POINCARE

_DUP_TOL = 1e-12


def _as_embedding(emb) -> tuple[np.ndarray, str, float]:
    """Accept (Z, kind, c) or any object with .Z/.kind/.c such as a model
    forward output."""
    if isinstance(emb, tuple):
        Z, kind, c = emb
    else:
        Z, kind, c = emb.Z, emb.kind, emb.c
    Z = np.asarray(getattr(Z, "data", Z), dtype=np.float64)
    c = 0.0 if c is None else float(np.asarray(getattr(c, "data", c)))
    if Z.ndim != 2:
        raise ConfigError("embeddings must be a 2-D array of row points")
    if kind not in KINDS:
        raise ConfigError(f"unknown geometry {kind!r}")
    return Z, kind, c


def _block_rows(n: int, per_row: int) -> int:
    return max(1, min(n, (1 << 22) // max(per_row, 1)))


def _geo_block(Z: np.ndarray, kind: str, c: float, rows: np.ndarray) -> np.ndarray:
    """Geodesic distances from the given rows to every point, (B, n)."""
    B = Z[rows]
    if kind == LORENTZ:
        inner = B[:, 1:] @ Z[:, 1:].T - np.outer(B[:, 0], Z[:, 0])
        u = np.maximum(-c * inner, 1.0)
        return np.arccosh(u) / np.sqrt(c)
    sq = np.maximum(
        np.sum(B * B, axis=1)[:, None] + np.sum(Z * Z, axis=1)[None, :] - 2.0 * (B @ Z.T),
        0.0)
    if kind == EUCLIDEAN:
        return np.sqrt(sq)
    p = 1.0 - c * np.sum(Z * Z, axis=1)
    u = 1.0 + 2.0 * c * sq / np.outer(p[rows], p)
    return np.arccosh(np.maximum(u, 1.0)) / np.sqrt(c)


def _chord_block(Z: np.ndarray, rows: np.ndarray) -> np.ndarray:
    B = Z[rows]
    sq = np.maximum(
        np.sum(B * B, axis=1)[:, None] + np.sum(Z * Z, axis=1)[None, :] - 2.0 * (B @ Z.T),
        0.0)
    return np.sqrt(sq)


def _graph_distances(graph: Graph) -> np.ndarray:
    if not graph.is_connected():
        raise DataError("geometry diagnostics need a connected graph")
    return graph.apsp()


def geodesic_pair_distances(Z: np.ndarray, kind: str, c: float,
                            ii: np.ndarray, jj: np.ndarray,
                            block: int = 1 << 16) -> np.ndarray:
    """Geodesic distance for explicit index pairs, chunked."""
    Z, kind, c = _as_embedding((Z, kind, c))
    out = np.empty(ii.shape[0])
    for s in range(0, ii.shape[0], block):
        sl = slice(s, s + block)
        a, b = Z[ii[sl]], Z[jj[sl]]
        if kind == LORENTZ:
            inner = np.sum(a[:, 1:] * b[:, 1:], axis=1) - a[:, 0] * b[:, 0]
            out[sl] = np.arccosh(np.maximum(-c * inner, 1.0)) / np.sqrt(c)
            continue
        sq = np.sum((a - b) ** 2, axis=1)
        if kind == EUCLIDEAN:
            out[sl] = np.sqrt(sq)
        else:
            p = (1.0 - c * np.sum(a * a, axis=1)) * (1.0 - c * np.sum(b * b, axis=1))
            out[sl] = np.arccosh(np.maximum(1.0 + 2.0 * c * sq / p, 1.0)) / np.sqrt(c)
    return out


# ---------------------------------------------------------------------------
# distortion

@dataclass(frozen=True)
class DistortionReport:
    """Worst-case ratios between graph and embedding distances.

    contraction_factor: max over pairs of d_graph / d_embed.
    expansion_factor:   max over pairs of d_embed / d_graph.
    total_distortion:   their product, always >= 1.
    best_fit_scale:     least-squares scale mapping graph to embedding
                        distances, sum(dg*dm) / sum(dg^2).
    """
    contraction_factor: float
    expansion_factor: float
    total_distortion: float
    best_fit_scale: float
    contraction_pair: tuple[int, int]
    expansion_pair: tuple[int, int]
    n_pairs: int


def embedding_distortion(emb, graph: Graph) -> DistortionReport:
    Z, kind, c = _as_embedding(emb)
    n = graph.n
    if Z.shape[0] != n:
        raise DataError("one embedding row per node required")
    D = _graph_distances(graph)
    cols = np.arange(n)
    con = exp = -np.inf
    con_pair = exp_pair = (0, 0)
    s_gm = s_gg = 0.0
    for start in range(0, n, _block_rows(n, n)):
        rows = np.arange(start, min(start + _block_rows(n, n), n))
        geo = _geo_block(Z, kind, c, rows)
        dg = D[rows].astype(np.float64)
        mask = cols[None, :] > rows[:, None]
        if not mask.any():
            continue
        gm = geo[mask]
        gg = dg[mask]
        if gm.min() < _DUP_TOL:
            k = int(np.argmin(gm))
            ri, ci = np.nonzero(mask)
            raise DataError(
                f"degenerate embedding: nodes {int(rows[ri[k]])} and {int(cols[ci[k]])} coincide")
        ratio_c = gg / gm
        ratio_e = gm / gg
        for ratio, best, tag in ((ratio_c, con, "c"), (ratio_e, exp, "e")):
            k = int(np.argmax(ratio))
            if ratio[k] > best:
                ri, ci = np.nonzero(mask)
                pair = (int(rows[ri[k]]), int(cols[ci[k]]))
                if tag == "c":
                    con, con_pair = float(ratio[k]), pair
                else:
                    exp, exp_pair = float(ratio[k]), pair
        s_gm += float(np.sum(gg * gm))
        s_gg += float(np.sum(gg * gg))
    return DistortionReport(
        contraction_factor=con, expansion_factor=exp, total_distortion=con * exp,
        best_fit_scale=s_gm / s_gg, contraction_pair=con_pair,
        expansion_pair=exp_pair, n_pairs=n * (n - 1) // 2)


# ---------------------------------------------------------------------------
# alignment

@dataclass(frozen=True)
class AlignmentReport:
    """How well a linear readout direction lines up with the graph metric.

    chord_geo_min / chord_geo_max bracket the ratio of ambient chord length
    to geodesic distance over all pairs. min_abs_cos is the worst absolute
    cosine between the readout direction and a chord. max_scaled_norm is
    sqrt(c) times the largest point norm for ball embeddings (None in the
    Euclidean case). lower_constant and upper_constant are the two-sided
    Lipschitz constants of the readout against graph distance, and
    condition_number is their ratio (inf when min_abs_cos is 0).
    """
    chord_geo_min: float
    chord_geo_max: float
    min_abs_cos: float
    max_scaled_norm: float | None
    weight_norm: float
    lower_constant: float
    upper_constant: float
    condition_number: float
    distortion: DistortionReport
    n_pairs: int


def alignment_quantities(emb, w: np.ndarray, graph: Graph) -> AlignmentReport:
    Z, kind, c = _as_embedding(emb)
    if kind == LORENTZ:
        raise ConfigError("alignment is defined for euclidean or ball embeddings; "
                          "map hyperboloid points to the ball first")
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != Z.shape[1]:
        raise DimensionError(f"readout direction has {w.shape[0]} entries, "
                             f"embeddings have {Z.shape[1]} columns")
    wn = float(np.linalg.norm(w))
    if wn == 0.0:
        raise ConfigError("readout direction must be nonzero")
    dist = embedding_distortion(emb, graph)
    n = graph.n
    cols = np.arange(n)
    ratio_min = np.inf
    ratio_max = -np.inf
    cos_min = np.inf
    for start in range(0, n, _block_rows(n, 2 * n)):
        rows = np.arange(start, min(start + _block_rows(n, 2 * n), n))
        geo = _geo_block(Z, kind, c, rows)
        chord = _chord_block(Z, rows)
        proj = np.abs((Z[rows] @ w)[:, None] - (Z @ w)[None, :])
        mask = cols[None, :] > rows[:, None]
        if not mask.any():
            continue
        ratio = chord[mask] / geo[mask]
        ratio_min = min(ratio_min, float(ratio.min()))
        ratio_max = max(ratio_max, float(ratio.max()))
        cos = proj[mask] / (wn * chord[mask])
        cos_min = min(cos_min, float(cos.min()))
    cos_min = float(np.clip(cos_min, 0.0, 1.0))
    lower = wn * ratio_min * cos_min / dist.contraction_factor
    upper = wn * ratio_max * dist.expansion_factor
    cond = upper / lower if lower > 0 else np.inf
    eta = float(np.sqrt(c) * np.linalg.norm(Z, axis=1).max()) if kind == POINCARE else None
    return AlignmentReport(
        chord_geo_min=ratio_min, chord_geo_max=ratio_max, min_abs_cos=cos_min,
        max_scaled_norm=eta, weight_norm=wn, lower_constant=lower,
        upper_constant=upper, condition_number=cond, distortion=dist,
        n_pairs=dist.n_pairs)


@dataclass(frozen=True)
class BoundReport:
    """Outcome of checking the two-sided Lipschitz bounds on actual model
    outputs. attained_lower / attained_upper are the realized extremes of
    |y_i - y_j| / d_graph(i, j)."""
    lower_constant: float
    upper_constant: float
    n_pairs: int
    lower_violations: int
    upper_violations: int
    lower_tested: bool
    attained_lower: float
    attained_upper: float
    slack: float


def verify_lipschitz_bounds(emb, w: np.ndarray, b: float, graph: Graph,
                            alpha_scale: float = 1.0, beta_scale: float = 1.0,
                            slack: float = 1e-9) -> BoundReport:
    """Check lower <= |y_i - y_j| / d_graph <= upper for every pair, with
    y = Z w + b. The offset b cancels in differences but is accepted for
    signature completeness. ``alpha_scale`` and ``beta_scale`` rescale the
    constants before checking; scaling the upper constant below 1 turns the
    check into a sharpness probe that should report violations.
    """
    report = alignment_quantities(emb, w, graph)
    Z, kind, c = _as_embedding(emb)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    y = Z @ w
    D = _graph_distances(graph)
    n = graph.n
    alpha = report.lower_constant * alpha_scale
    beta = report.upper_constant * beta_scale
    lower_tested = report.min_abs_cos > 0.0
    cols = np.arange(n)
    low_v = up_v = 0
    att_lo, att_hi = np.inf, -np.inf
    for start in range(0, n, _block_rows(n, n)):
        rows = np.arange(start, min(start + _block_rows(n, n), n))
        dy = np.abs(y[rows][:, None] - y[None, :])
        mask = cols[None, :] > rows[:, None]
        if not mask.any():
            continue
        dyv = dy[mask]
        dgv = D[rows].astype(np.float64)[mask]
        ratio = dyv / dgv
        att_lo = min(att_lo, float(ratio.min()))
        att_hi = max(att_hi, float(ratio.max()))
        up_v += int(np.count_nonzero(dyv > beta * dgv + slack))
        if lower_tested:
            low_v += int(np.count_nonzero(dyv < alpha * dgv - slack))
    return BoundReport(
        lower_constant=alpha, upper_constant=beta, n_pairs=report.n_pairs,
        lower_violations=low_v, upper_violations=up_v, lower_tested=lower_tested,
        attained_lower=att_lo, attained_upper=att_hi, slack=slack)


# ---------------------------------------------------------------------------
# four-point hyperbolicity

@dataclass(frozen=True)
class GromovReport:
    delta: float
    witness: tuple[int, int, int, int]


def _quad_delta(D: np.ndarray, quads: np.ndarray) -> np.ndarray:
    x, y, z, t = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    s1 = D[x, y] + D[z, t]
    s2 = D[x, z] + D[y, t]
    s3 = D[x, t] + D[y, z]
    s = np.sort(np.stack([s1, s2, s3], axis=1), axis=1)
    return (s[:, 2] - s[:, 1]) / 2.0


def gromov_delta_naive(graph_or_D) -> GromovReport:
    """Brute force over all quadruples; reference for the pruned search."""
    from itertools import combinations

    D = graph_or_D.apsp() if isinstance(graph_or_D, Graph) else np.asarray(graph_or_D)
    n = D.shape[0]
    if n < 4:
        return GromovReport(0.0, (0, 0, 0, 0))
    quads = np.array(list(combinations(range(n), 4)), dtype=np.int64)
    h = _quad_delta(D.astype(np.float64), quads)
    k = int(np.argmax(h))
    return GromovReport(float(h[k]), tuple(int(v) for v in quads[k]))


def gromov_delta_exact(graph: Graph, cap: int = 2000, force: bool = False) -> GromovReport:
    """Exact four-point hyperbolicity with pruning.

    Pairs are scanned in decreasing distance order as the far pair of a
    quadruple. For any split of a quadruple into pairs (a,b) and (u,v),
    the four-point value is at most min(d(a,b), d(u,v)), so once the outer
    pair's distance drops to the current best the search is complete, and
    inner candidates below the best can be cut with a binary search. Every
    surviving quadruple is evaluated under all three splits across the
    scan, which keeps the maximum exact. Tree metrics yield 0 with no
    pruning power; the search degrades to full enumeration there, so the
    cap matters.
    """
    if not graph.is_connected():
        raise DataError("hyperbolicity needs a connected graph")
    if graph.n > cap and not force:
        raise ConfigError(f"graph has {graph.n} nodes, above the cap {cap}; "
                          "pass force to run anyway")
    D = graph.apsp().astype(np.float64)
    n = graph.n
    if n < 4:
        return GromovReport(0.0, (0, 0, 0, min(3, n - 1)))
    iu, ju = np.triu_indices(n, k=1)
    dv = D[iu, ju]
    order = np.argsort(-dv, kind="stable")
    pu, pv, pd = iu[order], ju[order], dv[order]
    m = pu.shape[0]
    best = -np.inf
    witness = (0, 1, 2, 3)
    for k in range(m - 1):
        if pd[k] <= best:
            break
        a, b = int(pu[k]), int(pv[k])
        # inner pairs come after k in the ordering; those with distance
        # <= best cannot improve, and the order is descending
        hi = m if best < 0 else int(np.searchsorted(-pd, -best, side="left"))
        if hi <= k + 1:
            continue
        u = pu[k + 1:hi]
        v = pv[k + 1:hi]
        keep = (u != a) & (u != b) & (v != a) & (v != b)
        if not keep.any():
            continue
        u, v = u[keep], v[keep]
        s1 = D[a, b] + D[u, v]
        s2 = D[a, u] + D[b, v]
        s3 = D[a, v] + D[b, u]
        h = (s1 - np.maximum(s2, s3)) / 2.0
        j = int(np.argmax(h))
        if h[j] > best:
            best = float(h[j])
            witness = (a, b, int(u[j]), int(v[j]))
    return GromovReport(max(best, 0.0), witness)


# ---------------------------------------------------------------------------
# binned distance fit

@dataclass(frozen=True)
class BinnedFit:
    slope: float
    intercept: float
    r2: float
    bins: list[tuple[float, float, float, int]]  # graph distance, mean, std, count


def r2_binned_fit(emb, graph: Graph) -> BinnedFit:
    """Average embedding distance per graph-distance value, then an
    ordinary least-squares line through the averaged points."""
    Z, kind, c = _as_embedding(emb)
    D = _graph_distances(graph)
    n = graph.n
    dmax = int(D.max())
    cnt = np.zeros(dmax + 1, dtype=np.int64)
    s1 = np.zeros(dmax + 1)
    s2 = np.zeros(dmax + 1)
    cols = np.arange(n)
    for start in range(0, n, _block_rows(n, n)):
        rows = np.arange(start, min(start + _block_rows(n, n), n))
        geo = _geo_block(Z, kind, c, rows)
        mask = cols[None, :] > rows[:, None]
        dg = D[rows][mask]
        gm = geo[mask]
        np.add.at(cnt, dg, 1)
        np.add.at(s1, dg, gm)
        np.add.at(s2, dg, gm * gm)
    used = np.nonzero(cnt)[0]
    if used.shape[0] < 2:
        raise DataError("binned fit needs at least two distinct graph distances")
    mean = s1[used] / cnt[used]
    var = np.maximum(s2[used] / cnt[used] - mean * mean, 0.0)
    x = used.astype(np.float64)
    slope, intercept = np.polyfit(x, mean, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((mean - pred) ** 2))
    ss_tot = float(np.sum((mean - mean.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    bins = [(float(d), float(mu), float(np.sqrt(v)), int(k))
            for d, mu, v, k in zip(x, mean, var, cnt[used])]
    return BinnedFit(float(slope), float(intercept), float(r2), bins)


# ---------------------------------------------------------------------------
# predictive metrics

def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0])
    sx = x[order]
    i = 0
    while i < sx.shape[0]:
        j = i
        while j + 1 < sx.shape[0] and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_auc(y_true, scores) -> float:
    """Probability a positive outranks a negative; ties count one half."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC AUC needs both classes present")
    r = _midranks(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(y_true, scores) -> float:
    """Area under precision-recall, stepping at each score level."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.shape[0]:
        raise DataError("average precision needs both classes present")
    order = np.argsort(-s, kind="stable")
    ys = y[order]
    ss = s[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(~ys)
    # evaluate at the last index of each tied score block
    last = np.nonzero(np.append(ss[1:] != ss[:-1], True))[0]
    tp_l = tp[last]
    fp_l = fp[last]
    prec = tp_l / (tp_l + fp_l)
    dtp = np.diff(np.concatenate([[0], tp_l]))
    return float(np.sum(prec * dtp) / n_pos)


def mae(y_true, y_pred) -> float:
    return float(np.mean(np.abs(np.asarray(y_true, dtype=np.float64)
                                - np.asarray(y_pred, dtype=np.float64))))


def accuracy(y_true, y_pred) -> float:
    y = np.asarray(y_true)
    p = np.asarray(y_pred)
    return float(np.mean(y == p))


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    """Unweighted mean of per-class F1; empty classes contribute 0."""
    y = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    f1s = []
    for k in range(n_classes):
        tp = int(np.sum((p == k) & (y == k)))
        fp = int(np.sum((p == k) & (y != k)))
        fn = int(np.sum((p != k) & (y == k)))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


# ---------------------------------------------------------------------------
# stress helpers

def stress_value(pred: np.ndarray, target: np.ndarray, eps: float = 1e-8) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.mean((pred - target) ** 2 / (target * target + eps)))


def _feature_distances(X: np.ndarray, ii: np.ndarray, jj: np.ndarray,
                       block: int = 1 << 16) -> np.ndarray:
    out = np.empty(ii.shape[0])
    for s in range(0, ii.shape[0], block):
        sl = slice(s, s + block)
        diff = X[ii[sl]] - X[jj[sl]]
        out[sl] = np.sqrt(np.sum(diff * diff, axis=1))
    return out


def feature_baseline_stress(X: np.ndarray, fit_pairs, eval_pairs,
                            eps: float = 1e-8) -> float:
    """Stress of the best affine predictor on raw feature distances.

    The line is fit by ordinary least squares on the fit pairs and scored
    on the eval pairs; training runs fit on train pairs, while standalone
    probes may pass the same pairs twice.
    """
    X = np.asarray(X, dtype=np.float64)
    ii_f, jj_f, D_f = fit_pairs
    ii_e, jj_e, D_e = eval_pairs
    df = _feature_distances(X, ii_f, jj_f)
    var = float(np.var(df))
    if var > 0:
        a = float(np.cov(df, D_f, bias=True)[0, 1] / var)
        b = float(np.mean(D_f) - a * np.mean(df))
    else:
        a, b = 0.0, float(np.mean(D_f))
    de_ = _feature_distances(X, ii_e, jj_e)
    return stress_value(a * de_ + b, D_e, eps)
