"""Supervised tasks, decoders, optimizers and the training loop.

Four tasks share one loop:

* ``pdp``: predict pairwise graph distances from embedding geodesic
  distances through an affine head a * d + b.
* ``nr``: regress a per-node scalar (graph distance to an anchor, scaled)
  with a linear head on ambient coordinates.
* ``lp``: score node pairs as edges with a Fermi-Dirac head on squared
  distance, 1 / (exp((d^2 - r) / t) + 1), trained with cross-entropy
  against sampled negatives; message passing sees train edges only.
* ``nc``: classify nodes with a linear head on tangent coordinates at the
  origin.

Training is full-graph and deterministic per seed. Validation picks the
best epoch (stress, MAE, ROC AUC or macro F1 depending on the task), and
the best parameters are restored before test metrics are computed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from . import models as mo
from .analysis import (accuracy, average_precision, macro_f1, roc_auc,
                       feature_baseline_stress, stress_value)
from .diffengine import Tape, Tensor, backward
from .errors import ConfigError, DataError
from .graphs import (Graph, SplitManifest, all_pairs, permute_targets,
                     split_edges, split_nodes_fixed, split_nodes_ratio,
                     split_pairs)
from .manifold import ManifoldSpec, exp_map_rows, project_rows, project_tangent_rows

TASKS = ("pdp", "nr", "lp", "nc")

STRESS_EPS = 1e-8


def _stream(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=[int(seed), k]))


def _stream_int(seed: int, k: int) -> int:
    return int(np.random.SeedSequence(entropy=[int(seed), k]).generate_state(1)[0])


def _softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


# ---------------------------------------------------------------------------
# losses

def stress_loss(pred: Tensor, target: np.ndarray, eps: float = STRESS_EPS) -> Tensor:
    """Mean of (pred - target)^2 / (target^2 + eps); relative squared error."""
    target = np.asarray(target, dtype=np.float64)
    w = de.constant(1.0 / (target * target + eps))
    diff = de.sub(pred, de.constant(target))
    return de.tmean(de.mul(de.mul(diff, diff), w))


def bce_with_logits(logits: Tensor, y: np.ndarray) -> Tensor:
    y = np.asarray(y, dtype=np.float64)
    sp_neg = de.softplus(de.neg(logits))
    sp_pos = de.softplus(logits)
    return de.tmean(de.add(de.mul(de.constant(y), sp_neg),
                           de.mul(de.constant(1.0 - y), sp_pos)))


def cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    """Softmax cross-entropy; the per-row max is shifted out as a constant,
    which leaves both value and gradient unchanged."""
    y = np.asarray(y, dtype=np.int64)
    m = logits.data.max(axis=1, keepdims=True)
    sh = de.sub(logits, de.constant(m))
    lse = de.tlog(de.rowsum(de.texp(sh)))
    return de.tmean(de.sub(lse, de.take_per_row(sh, y)))


def multiclass_hinge(logits: Tensor, y: np.ndarray, margin: float = 1.0) -> Tensor:
    """Sum over wrong classes of max(0, logit_k - logit_true + margin)."""
    y = np.asarray(y, dtype=np.int64)
    n, k = logits.data.shape
    mask = np.ones((n, k))
    mask[np.arange(n), y] = 0.0
    viol = de.relu(de.add(de.sub(logits, de.take_per_row(logits, y)), de.constant(margin)))
    return de.tmean(de.rowsum(de.mul(viol, de.constant(mask))))


def fermi_dirac_prob(d2: Tensor, r: Tensor, t: Tensor) -> Tensor:
    """Edge probability 1 / (exp((d^2 - r) / t) + 1)."""
    return de.sigmoid(de.div(de.sub(r, d2), t))


# ---------------------------------------------------------------------------
# task data

@dataclass
class PairTask:
    graph: Graph
    X: np.ndarray
    ii: np.ndarray
    jj: np.ndarray
    target: np.ndarray
    split: SplitManifest
    task: str = "pdp"

    def prop_graph(self) -> Graph:
        return self.graph


@dataclass
class RegressionTask:
    graph: Graph
    X: np.ndarray
    y: np.ndarray
    anchor: int
    split: SplitManifest
    task: str = "nr"

    def prop_graph(self) -> Graph:
        return self.graph


@dataclass
class LinkTask:
    graph: Graph
    X: np.ndarray
    train_graph: Graph
    split: SplitManifest
    pairs: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]
    task: str = "lp"

    def prop_graph(self) -> Graph:
        return self.train_graph


@dataclass
class ClassifyTask:
    graph: Graph
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    split: SplitManifest
    task: str = "nc"

    def prop_graph(self) -> Graph:
        return self.graph


def build_pdp(graph: Graph, X: np.ndarray, seed: int,
              ratios=(0.70, 0.15, 0.15)) -> PairTask:
    """All unordered pairs with shortest-path targets, split by ``ratios``."""
    if not graph.is_connected():
        raise DataError("pair distance prediction needs a connected graph")
    ii, jj = all_pairs(graph.n)
    D = graph.apsp()[ii, jj].astype(np.float64)
    split = split_pairs(graph.n, seed, ratios)
    return PairTask(graph, X, ii, jj, D, split)


def build_nr(graph: Graph, X: np.ndarray, seed: int, anchor: int = 0,
             beta: float = 1.0, per_class: int = 20, val_total: int = 500,
             permute: bool = False) -> RegressionTask:
    """Distance-to-anchor regression; the anchor itself is held out.

    With ``permute`` the target vector is shuffled before splitting, which
    destroys the tie between labels and graph positions while keeping the
    label multiset; the control runs use it.
    """
    d = graph.bfs(anchor)
    if np.any(d < 0):
        raise DataError("anchor does not reach every node")
    y = beta * d.astype(np.float64)
    if permute:
        keep = np.ones(graph.n, dtype=bool)
        keep[anchor] = False
        y[keep] = permute_targets(y[keep], _stream_int(seed, 3))
    split = split_nodes_fixed(y, seed, per_class=per_class, val_total=val_total,
                              exclude=np.array([anchor]))
    return RegressionTask(graph, X, y, anchor, split)


def build_lp(graph: Graph, X: np.ndarray, seed: int,
             ratios=(0.85, 0.05, 0.10)) -> LinkTask:
    """Edge split with per-split negatives; builds the train-edge graph."""
    split = split_edges(graph, seed, ratios)
    pairs = {}
    for name in ("train", "val", "test"):
        pos = graph.edges[split.arrays[f"{name}_pos"]]
        nu = split.arrays[f"{name}_neg_u"]
        nv = split.arrays[f"{name}_neg_v"]
        u = np.concatenate([pos[:, 0], nu])
        v = np.concatenate([pos[:, 1], nv])
        lab = np.concatenate([np.ones(pos.shape[0]), np.zeros(nu.shape[0])])
        pairs[name] = (u, v, lab)
    train_graph = Graph(graph.n, graph.edges[split.arrays["train_pos"]])
    return LinkTask(graph, X, train_graph, split, pairs)


def build_nc(graph: Graph, X: np.ndarray, y: np.ndarray, seed: int,
             scheme: str = "fixed", per_class: int = 20, val_total: int = 500,
             ratios=(0.70, 0.15, 0.15), permute: bool = False) -> ClassifyTask:
    """Node classification with either the fixed-count or the stratified
    ratio split."""
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] != graph.n:
        raise DataError("one label per node required")
    if permute:
        y = permute_targets(y, _stream_int(seed, 3))
    if scheme == "fixed":
        split = split_nodes_fixed(y, seed, per_class=per_class, val_total=val_total)
    elif scheme == "ratio":
        split = split_nodes_ratio(y, seed, ratios)
    else:
        raise ConfigError(f"unknown node split scheme {scheme!r}")
    classes = np.unique(y)
    if not np.array_equal(classes, np.arange(classes.shape[0])):
        raise DataError("labels must be 0..K-1")
    return ClassifyTask(graph, X, y, classes.shape[0], split)


# ---------------------------------------------------------------------------
# decoders

def init_decoder(task: str, data, ambient_dim: int, rng: np.random.Generator,
                 freeze_fermi: bool = False) -> dict[str, Tensor]:
    """Decoder parameters per task.

    The distance head starts at the identity (a, b) = (1, 0); the edge head
    at (r, t) = (2, 1) with t kept positive through a softplus. Freezing the
    edge head turns both into constants.
    """
    if task == "pdp":
        return {"a": de.parameter(np.asarray(1.0)), "b": de.parameter(np.asarray(0.0))}
    if task == "nr":
        lim = np.sqrt(6.0 / (ambient_dim + 1))
        return {"w": de.parameter(rng.uniform(-lim, lim, size=(ambient_dim, 1))),
                "b": de.parameter(np.asarray(0.0))}
    if task == "lp":
        mk = de.constant if freeze_fermi else de.parameter
        return {"r": mk(np.asarray(2.0)), "t_raw": mk(np.asarray(_softplus_inv(1.0)))}
    if task == "nc":
        lim = np.sqrt(6.0 / (ambient_dim + data.n_classes))
        return {"W": de.parameter(rng.uniform(-lim, lim, size=(ambient_dim, data.n_classes))),
                "b": de.parameter(np.zeros((1, data.n_classes)))}
    raise ConfigError(f"unknown task {task!r}")


def decoder_ambient_dim(task: str, cfg: mo.ModelConfig) -> int:
    amb = cfg.out_dim + (1 if cfg.arch == "lorentz" else 0)
    if task == "nc":
        return cfg.out_dim  # tangent coordinates drop the time component
    return amb


# ---------------------------------------------------------------------------
# optimizers

class ManifoldParameter(Tensor):
    """Parameter whose rows are points of a manifold; the Riemannian
    optimizer rescales its gradients and retracts its updates."""

    __slots__ = ("manifold",)

    def __init__(self, data, manifold: ManifoldSpec):
        super().__init__(data, requires_grad=True)
        self.manifold = manifold


def _riemannian_gradient(spec: ManifoldSpec, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    if spec.kind == "poincare":
        factor = (1.0 - spec.c * np.sum(x * x, axis=1, keepdims=True)) ** 2 / 4.0
        return g * factor
    if spec.kind == "lorentz":
        gj = g.copy()
        gj[:, 0] = -gj[:, 0]
        return project_tangent_rows(spec, x, gj)
    return g


class RiemannianAdam:
    """Adam with per-parameter manifold awareness.

    Flat tensors get the standard update. ``ManifoldParameter`` rows get
    the Riemannian gradient, moments kept in coordinates (identity
    transport), an exponential-map retraction and a projection back onto
    the manifold. With no manifold parameters this is exactly Adam.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads: dict[Tensor, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            manifold = getattr(p, "manifold", None)
            if manifold is not None:
                g = _riemannian_gradient(manifold, p.data, g)
            elif self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * g * g
            step = -self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if manifold is None:
                p.data = p.data + step
            else:
                u = project_tangent_rows(manifold, p.data, step)
                p.data = project_rows(manifold, exp_map_rows(manifold, p.data, u))


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    lr: float = 0.01
    max_epochs: int = 5000
    min_epochs: int = 100
    patience: int = 500
    eval_every: int = 1
    weight_decay: float = 0.0
    grad_clip: float | None = None
    seed: int = 0
    freeze_fermi: bool = False
    nc_loss: str = "ce"

    def __post_init__(self):
        if self.max_epochs < self.min_epochs:
            raise ConfigError("max_epochs must be >= min_epochs")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.nc_loss not in ("ce", "hinge"):
            raise ConfigError("nc_loss must be 'ce' or 'hinge'")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")


def _clip_gradients(grads: dict, wrt: list, limit: float):
    """Global-norm clipping across every trainable tensor."""
    total = 0.0
    for t in wrt:
        g = grads.get(t)
        if g is not None:
            total += float(np.sum(np.asarray(g) ** 2))
    total = np.sqrt(total)
    if total > limit:
        scale = limit / total
        for t in wrt:
            if grads.get(t) is not None:
                grads[t] = grads[t] * scale


VAL_CRITERIA = {"pdp": ("stress", "min"), "nr": ("mae", "min"),
                "lp": ("roc_auc", "max"), "nc": ("macro_f1", "max")}


@dataclass
class TrainResult:
    task: str
    arch: str
    seed: int
    epochs_run: int
    best_epoch: int
    best_val: float
    val_metric: str
    test_metrics: dict[str, float]
    history: list[tuple[int, float, float]] = field(repr=False)
    param_data: dict[str, np.ndarray] = field(repr=False)
    decoder_data: dict[str, np.ndarray] = field(repr=False)
    wall_time: float = 0.0
    curvature: float | None = None

    def summary(self) -> dict:
        out = {
            "task": self.task, "arch": self.arch, "seed": self.seed,
            "epochs_run": self.epochs_run, "best_epoch": self.best_epoch,
            "best_val": self.best_val, "val_metric": self.val_metric,
            "test_metrics": dict(self.test_metrics), "wall_time": self.wall_time,
        }
        if self.curvature is not None:
            out["curvature"] = self.curvature
        return out


def _pair_subset(data: PairTask, which: str):
    idx = data.split.arrays[which]
    return data.ii[idx], data.jj[idx], data.target[idx]


def _pdp_loss(out: mo.EmbedOutput, data: PairTask, dec, which: str) -> Tensor:
    ii, jj, D = _pair_subset(data, which)
    dh = mo.pair_distances(out, ii, jj)
    pred = de.add(de.mul(dh, dec["a"]), dec["b"])
    return stress_loss(pred, D)


def _nr_predict(out: mo.EmbedOutput, dec) -> Tensor:
    return de.add(de.matmul(out.Z, dec["w"]), dec["b"])


def _lp_scores(out: mo.EmbedOutput, data: LinkTask, dec, which: str):
    u, v, lab = data.pairs[which]
    dh = mo.pair_distances(out, u, v)
    d2 = de.mul(dh, dh)
    t = de.add(de.softplus(dec["t_raw"]), de.constant(1e-4))
    prob = fermi_dirac_prob(d2, dec["r"], t)
    logits = de.div(de.sub(dec["r"], d2), t)
    return logits, prob, lab


def _nc_logits(out: mo.EmbedOutput, dec) -> Tensor:
    return de.add(de.matmul(mo.tangent0(out), dec["W"]), dec["b"])


def _train_loss(out, data, dec, tcfg: TrainConfig) -> Tensor:
    if data.task == "pdp":
        return _pdp_loss(out, data, dec, "train")
    if data.task == "nr":
        idx = data.split.arrays["train"]
        yhat = de.gather_rows(_nr_predict(out, dec), idx)
        return stress_loss(yhat, data.y[idx][:, None])
    if data.task == "lp":
        logits, _, lab = _lp_scores(out, data, dec, "train")
        return bce_with_logits(logits, lab)
    idx = data.split.arrays["train"]
    logits = de.gather_rows(_nc_logits(out, dec), idx)
    loss_fn = cross_entropy if tcfg.nc_loss == "ce" else multiclass_hinge
    return loss_fn(logits, data.y[idx])


def _eval_metrics(out, data, dec, which: str) -> dict[str, float]:
    """Task metrics on one split, computed without recording."""
    if data.task == "pdp":
        stress = float(_pdp_loss(out, data, dec, which).data)
        return {"stress": stress}
    if data.task == "nr":
        idx = data.split.arrays[which]
        yhat = _nr_predict(out, dec).data[idx, 0]
        err = yhat - data.y[idx]
        return {"mae": float(np.abs(err).mean()),
                "loss": float(stress_value(yhat, data.y[idx]))}
    if data.task == "lp":
        _, prob, lab = _lp_scores(out, data, dec, which)
        scores = prob.data
        return {"roc_auc": roc_auc(lab, scores), "ap": average_precision(lab, scores)}
    idx = data.split.arrays[which]
    pred = _nc_logits(out, dec).data[idx].argmax(axis=1)
    return {"macro_f1": macro_f1(data.y[idx], pred, data.n_classes),
            "accuracy": accuracy(data.y[idx], pred)}


def train(cfg: mo.ModelConfig, data, tcfg: TrainConfig) -> TrainResult:
    """Full-graph training with early stopping on the task criterion."""
    if data.task not in TASKS:
        raise ConfigError(f"unknown task {data.task!r}")
    t0 = time.perf_counter()
    prop = mo.build_prop(data.prop_graph())
    params = mo.init_params(cfg, _stream(tcfg.seed, 0))
    dec = init_decoder(data.task, data, decoder_ambient_dim(data.task, cfg),
                       _stream(tcfg.seed, 2), freeze_fermi=tcfg.freeze_fermi)
    trainable = {**{f"model.{k}": v for k, v in params.items()},
                 **{f"dec.{k}": v for k, v in dec.items() if v.requires_grad}}
    opt = RiemannianAdam(trainable, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    drop_rng = _stream(tcfg.seed, 1)
    metric_name, mode = VAL_CRITERIA[data.task]
    sign = 1.0 if mode == "min" else -1.0
    best = np.inf if mode == "min" else -np.inf
    best_epoch = 0
    best_state = None
    history = []
    epoch = 0
    wrt = list(trainable.values())
    for epoch in range(1, tcfg.max_epochs + 1):
        with Tape() as tape:
            out = mo.forward(cfg, params, prop, data.X, training=True, rng=drop_rng)
            loss = _train_loss(out, data, dec, tcfg)
        grads = backward(tape, loss, wrt=wrt)
        if tcfg.grad_clip is not None:
            _clip_gradients(grads, wrt, tcfg.grad_clip)
        opt.step(grads)
        if epoch % tcfg.eval_every == 0 or epoch == tcfg.max_epochs:
            out_eval = mo.forward(cfg, params, prop, data.X)
            val = _eval_metrics(out_eval, data, dec, "val")[metric_name]
            history.append((epoch, float(loss.data), val))
            if sign * val < sign * best:
                best = val
                best_epoch = epoch
                best_state = ({k: v.data.copy() for k, v in params.items()},
                              {k: v.data.copy() for k, v in dec.items()})
            if epoch >= tcfg.min_epochs and epoch - best_epoch >= tcfg.patience:
                break
    if best_state is not None:
        for k, v in params.items():
            v.data = best_state[0][k].copy()
        for k, v in dec.items():
            v.data = best_state[1][k].copy()
    out_eval = mo.forward(cfg, params, prop, data.X)
    test = _eval_metrics(out_eval, data, dec, "test")
    if data.task == "pdp":
        ii_f, jj_f, D_f = _pair_subset(data, "train")
        ii_e, jj_e, D_e = _pair_subset(data, "test")
        dh = mo.pair_distances(out_eval, ii_e, jj_e).data
        pred = float(dec["a"].data) * dh + float(dec["b"].data)
        base = feature_baseline_stress(data.X, (ii_f, jj_f, D_f), (ii_e, jj_e, D_e))
        test["normalized_stress"] = float(stress_value(pred, D_e) / base) if base > 0 else np.inf
    curv = None
    if cfg.arch in ("hgcn", "lorentz"):
        spec = out_eval.spec()
        curv = spec.c
    return TrainResult(
        task=data.task, arch=cfg.arch, seed=tcfg.seed, epochs_run=epoch,
        best_epoch=best_epoch, best_val=best, val_metric=metric_name,
        test_metrics=test, history=history,
        param_data={k: v.data.copy() for k, v in params.items()},
        decoder_data={k: v.data.copy() for k, v in dec.items()},
        wall_time=time.perf_counter() - t0, curvature=curv,
    )


def embed(cfg: mo.ModelConfig, param_data: dict[str, np.ndarray], graph: Graph,
          X: np.ndarray) -> mo.EmbedOutput:
    """Rebuild parameters from checkpoint arrays and run an eval forward."""
    params = mo.init_params(cfg, np.random.default_rng(0))
    mo.load_param_data(params, param_data)
    return mo.forward(cfg, params, mo.build_prop(graph), X)


# ---------------------------------------------------------------------------
# checkpoints: a json manifest naming shapes and offsets plus a raw binary

CHECKPOINT_VERSION = 1


def save_checkpoint(prefix: str, arrays: dict[str, np.ndarray], meta: dict | None = None):
    import json

    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        blobs.append(np.ravel(a))
    manifest = {"version": CHECKPOINT_VERSION, "dtype": "float64",
                "total": offset, "entries": entries, "meta": meta or {}}
    with open(prefix + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    np.concatenate(blobs if blobs else [np.empty(0)]).tofile(prefix + ".bin")


def load_checkpoint(prefix: str) -> tuple[dict[str, np.ndarray], dict]:
    import json

    try:
        with open(prefix + ".manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read checkpoint manifest: {e}") from e
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {manifest.get('version')!r}")
    raw = np.fromfile(prefix + ".bin", dtype=np.float64)
    if raw.size != manifest["total"]:
        raise DataError(f"checkpoint payload has {raw.size} values, manifest says {manifest['total']}")
    arrays = {}
    for ent in manifest["entries"]:
        size = int(np.prod(ent["shape"])) if ent["shape"] else 1
        arrays[ent["name"]] = raw[ent["offset"]:ent["offset"] + size].reshape(ent["shape"]).copy()
    return arrays, manifest.get("meta", {})
