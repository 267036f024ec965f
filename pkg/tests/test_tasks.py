import numpy as np
import pytest

from hypalign import diffengine as de
from hypalign import manifold as mf
from hypalign import models as mo
from hypalign import tasks as tk
from hypalign.errors import ConfigError, DataError
from hypalign.graphs import (Graph, balanced_tree, random_connected_graph,
                             sparse_gaussian_features)


# ---------------------------------------------------------------------------
# losses

def test_stress_loss_oracles():
    one = tk.stress_loss(de.constant(np.array([3.0])), np.array([2.0]))
    assert float(one.data) == pytest.approx(0.25, rel=1e-6)
    two = tk.stress_loss(de.constant(np.array([1.0, 4.0])), np.array([1.0, 2.0]))
    assert float(two.data) == pytest.approx(0.5, rel=1e-6)
    perfect = tk.stress_loss(de.constant(np.array([1.0, 2.0])), np.array([1.0, 2.0]))
    assert float(perfect.data) == 0.0


def test_bce_with_logits_matches_manual():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=12) * 3
    y = (rng.random(12) < 0.5).astype(np.float64)
    got = float(tk.bce_with_logits(de.constant(logits), y).data)
    p = 1.0 / (1.0 + np.exp(-logits))
    want = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert got == pytest.approx(want, rel=1e-10)
    # extreme logits stay finite
    big = float(tk.bce_with_logits(de.constant(np.array([1e4, -1e4])), np.array([0.0, 1.0])).data)
    assert np.isfinite(big) and big == pytest.approx(1e4, rel=1e-12)


def test_cross_entropy_oracles():
    # two classes, logits (3, 1), true class 0: loss = log(1 + e^-2)
    ce = tk.cross_entropy(de.constant(np.array([[3.0, 1.0]])), np.array([0]))
    assert float(ce.data) == pytest.approx(np.log1p(np.exp(-2.0)), rel=1e-12)
    # uniform logits: log K
    ce = tk.cross_entropy(de.constant(np.zeros((4, 3))), np.zeros(4, dtype=int))
    assert float(ce.data) == pytest.approx(np.log(3.0), rel=1e-12)
    # shift invariance and overflow safety
    L = np.array([[1e4, 1e4 - 2.0]])
    ce = tk.cross_entropy(de.constant(L), np.array([0]))
    assert float(ce.data) == pytest.approx(np.log1p(np.exp(-2.0)), rel=1e-9)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(1)
    L = de.parameter(rng.normal(size=(5, 4)))
    y = rng.integers(0, 4, size=5)
    with de.Tape() as tape:
        loss = tk.cross_entropy(L, y)
        grads = de.backward(tape, loss, wrt=[L])
    sm = np.exp(L.data - L.data.max(axis=1, keepdims=True))
    sm /= sm.sum(axis=1, keepdims=True)
    onehot = np.zeros((5, 4))
    onehot[np.arange(5), y] = 1.0
    assert np.allclose(grads[L], (sm - onehot) / 5.0, atol=1e-12)


def test_multiclass_hinge_oracles():
    sat = tk.multiclass_hinge(de.constant(np.array([[5.0, 0.0, 1.0]])), np.array([0]))
    assert float(sat.data) == 0.0
    one = tk.multiclass_hinge(de.constant(np.array([[1.0, 0.8]])), np.array([0]))
    assert float(one.data) == pytest.approx(0.8, rel=1e-12)
    wide = tk.multiclass_hinge(de.constant(np.array([[1.0, 0.8]])), np.array([0]), margin=0.1)
    assert float(wide.data) == 0.0


def test_fermi_dirac_oracles():
    p = tk.fermi_dirac_prob(de.constant(np.array([0.0])), de.constant(2.0), de.constant(1.0))
    assert float(p.data[0]) == pytest.approx(1.0 / (np.exp(-2.0) + 1.0), rel=1e-12)
    p = tk.fermi_dirac_prob(de.constant(np.array([2.0])), de.constant(2.0), de.constant(1.0))
    assert float(p.data[0]) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# task builders

def test_build_pdp():
    g = balanced_tree(2, 3)
    X = np.zeros((g.n, 4))
    data = tk.build_pdp(g, X, seed=0)
    D = g.apsp()
    total = g.n * (g.n - 1) // 2
    assert data.target.shape[0] == total
    for k in (0, 17, total - 1):
        assert data.target[k] == D[data.ii[k], data.jj[k]]
    covered = np.concatenate([data.split.arrays[s] for s in ("train", "val", "test")])
    assert np.array_equal(np.sort(covered), np.arange(total))
    with pytest.raises(DataError, match="connected"):
        tk.build_pdp(Graph(4, [[0, 1]]), np.zeros((4, 2)), seed=0)


def test_build_nr_targets_and_anchor_exclusion():
    g = balanced_tree(3, 4)  # 121 nodes, depths 0..4
    X = np.zeros((g.n, 4))
    data = tk.build_nr(g, X, seed=0, beta=0.5, per_class=2, val_total=10)
    assert np.array_equal(data.y, 0.5 * g.bfs(0))
    joined = np.concatenate([data.split.arrays[s] for s in ("train", "val", "test")])
    assert 0 not in joined
    assert joined.shape[0] == g.n - 1


def test_build_nr_reverse_triangle():
    # anchor distances satisfy |y_i - y_j| <= beta * d(i, j) on every pair
    g = balanced_tree(3, 3)
    data = tk.build_nr(g, np.zeros((g.n, 2)), seed=0, beta=2.0, per_class=2, val_total=5)
    D = g.apsp()
    diff = np.abs(data.y[:, None] - data.y[None, :])
    assert np.all(diff <= 2.0 * D + 1e-12)


def test_build_nr_permute_control():
    g = balanced_tree(3, 4)
    X = np.zeros((g.n, 4))
    a = tk.build_nr(g, X, seed=0, per_class=2, val_total=10, permute=True)
    b = tk.build_nr(g, X, seed=0, per_class=2, val_total=10)
    assert sorted(a.y.tolist()) == sorted(b.y.tolist())
    assert a.y[0] == 0.0  # anchor label never moves
    assert not np.array_equal(a.y, b.y)
    # deterministic per seed
    again = tk.build_nr(g, X, seed=0, per_class=2, val_total=10, permute=True)
    assert np.array_equal(a.y, again.y)


def test_build_nr_disconnected_anchor():
    with pytest.raises(DataError, match="reach"):
        tk.build_nr(Graph(4, [[0, 1]]), np.zeros((4, 2)), seed=0)


def test_build_lp():
    g = balanced_tree(4, 3)
    X = np.zeros((g.n, 4))
    data = tk.build_lp(g, X, seed=0)
    assert data.prop_graph() is data.train_graph
    edge_keys = {(int(u), int(v)) for u, v in g.edges}
    for name in ("train", "val", "test"):
        u, v, lab = data.pairs[name]
        npos = int(lab.sum())
        assert npos * 2 == lab.shape[0]
        for k in range(npos):
            assert (min(u[k], v[k]), max(u[k], v[k])) in edge_keys
        for k in range(npos, lab.shape[0]):
            assert (min(u[k], v[k]), max(u[k], v[k])) not in edge_keys
    # message passing graph holds exactly the train positives
    assert data.train_graph.m == int(data.pairs["train"][2].sum())


def test_build_nc():
    g = balanced_tree(3, 3)
    y = g.bfs(0) % 2
    X = np.zeros((g.n, 4))
    data = tk.build_nc(g, X, y, seed=0, per_class=3, val_total=8)
    assert data.n_classes == 2
    perm = tk.build_nc(g, X, y, seed=0, per_class=3, val_total=8, permute=True)
    assert sorted(perm.y.tolist()) == sorted(y.tolist())
    with pytest.raises(DataError, match="0..K-1"):
        tk.build_nc(g, X, y * 2, seed=0, per_class=3, val_total=8)
    with pytest.raises(ConfigError, match="scheme"):
        tk.build_nc(g, X, y, seed=0, scheme="leave_one_out")
    ratio = tk.build_nc(g, X, y, seed=0, scheme="ratio")
    assert ratio.split.meta["ratios"] == [0.70, 0.15, 0.15]


# ---------------------------------------------------------------------------
# decoders

def test_init_decoder_shapes_and_inits():
    rng = np.random.default_rng(2)
    pdp = tk.init_decoder("pdp", None, 3, rng)
    assert float(pdp["a"].data) == 1.0 and float(pdp["b"].data) == 0.0
    nr = tk.init_decoder("nr", None, 4, rng)
    assert nr["w"].data.shape == (4, 1)
    lp = tk.init_decoder("lp", None, 3, rng)
    assert float(lp["r"].data) == 2.0
    assert float(np.logaddexp(0.0, lp["t_raw"].data)) == pytest.approx(1.0, rel=1e-9)
    assert lp["r"].requires_grad
    frozen = tk.init_decoder("lp", None, 3, rng, freeze_fermi=True)
    assert not frozen["r"].requires_grad

    class FakeNC:
        n_classes = 5
    nc = tk.init_decoder("nc", FakeNC(), 3, rng)
    assert nc["W"].data.shape == (3, 5) and nc["b"].data.shape == (1, 5)
    with pytest.raises(ConfigError):
        tk.init_decoder("segmentation", None, 3, rng)


def test_decoder_ambient_dim():
    lor = mo.ModelConfig(arch="lorentz", in_dim=4, out_dim=3)
    flat = mo.ModelConfig(arch="gcn", in_dim=4, out_dim=3)
    # hyperboloid rows carry a time coordinate
    assert tk.decoder_ambient_dim("pdp", lor) == 4
    assert tk.decoder_ambient_dim("nr", lor) == 4
    # tangent coordinates at the origin drop it again
    assert tk.decoder_ambient_dim("nc", lor) == 3
    assert tk.decoder_ambient_dim("nr", flat) == 3


# ---------------------------------------------------------------------------
# optimizer

def test_adam_first_step_is_signed_lr():
    p = de.parameter(np.array([0.0, 0.0]))
    opt = tk.RiemannianAdam({"p": p}, lr=0.01)
    opt.step({p: np.array([0.5, -2.0])})
    assert np.allclose(p.data, [-0.01, 0.01], atol=1e-9)


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(3)
    p = de.parameter(rng.normal(size=(3,)))
    ref = p.data.copy()
    opt = tk.RiemannianAdam({"p": p}, lr=0.05)
    m = np.zeros(3)
    v = np.zeros(3)
    for t in range(1, 6):
        g = rng.normal(size=3)
        opt.step({p: g.copy()})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1.0 - 0.9 ** t)
        vh = v / (1.0 - 0.999 ** t)
        ref = ref - 0.05 * mh / (np.sqrt(vh) + 1e-8)
        assert np.allclose(p.data, ref, atol=1e-12)


def test_adam_missing_grad_leaves_param():
    p = de.parameter(np.array([1.0]))
    q = de.parameter(np.array([1.0]))
    opt = tk.RiemannianAdam({"p": p, "q": q}, lr=0.1)
    opt.step({p: np.array([1.0])})
    assert q.data[0] == 1.0
    assert p.data[0] != 1.0


def test_adam_weight_decay_flat_only():
    p = de.parameter(np.array([2.0]))
    opt = tk.RiemannianAdam({"p": p}, lr=0.01, weight_decay=0.1)
    opt.step({p: np.array([0.0])})
    # effective gradient 0 + 0.1 * 2 = 0.2, first step is -lr * sign
    assert p.data[0] == pytest.approx(2.0 - 0.01, abs=1e-8)


def test_riemannian_gradient_ball_scale():
    spec = mf.ManifoldSpec("poincare", 2, 1.0)
    x = np.array([[0.5, 0.0]])
    g = np.array([[1.0, 2.0]])
    out = tk._riemannian_gradient(spec, x, g)
    assert np.allclose(out, g * (1.0 - 0.25) ** 2 / 4.0)


def test_manifold_parameter_stays_on_ball():
    spec = mf.ManifoldSpec("poincare", 3, 1.0)
    rng = np.random.default_rng(4)
    p = tk.ManifoldParameter(mf.random_points(spec, 20, rng), spec)
    opt = tk.RiemannianAdam({"Z": p}, lr=0.1)
    for _ in range(300):
        opt.step({p: rng.normal(size=p.data.shape)})
    assert np.all(np.linalg.norm(p.data, axis=1) < 1.0)


def test_manifold_parameter_stays_on_hyperboloid():
    # bounded random walk: an unbounded one drifts to coordinates where the
    # constraint cannot hold in float64 anyway
    spec = mf.ManifoldSpec("lorentz", 3, 0.8)
    rng = np.random.default_rng(5)
    p = tk.ManifoldParameter(mf.random_points(spec, 20, rng), spec)
    opt = tk.RiemannianAdam({"Z": p}, lr=0.02)
    for _ in range(100):
        opt.step({p: rng.normal(size=p.data.shape)})
    q = -p.data[:, 0] ** 2 + np.sum(p.data[:, 1:] ** 2, axis=1)
    assert np.max(np.abs(q + 1.0 / 0.8)) < 1e-9
    assert np.all(p.data[:, 0] > 0)


def test_manifold_adam_descends_distance():
    # a free ball point pulled toward a target by its own geodesic distance
    spec = mf.ManifoldSpec("poincare", 2, 1.0)
    target = np.array([[0.4, 0.3]])
    p = tk.ManifoldParameter(np.array([[-0.5, 0.1]]), spec)
    opt = tk.RiemannianAdam({"x": p}, lr=0.05)
    start = mf.distance(spec, p.data[0], target[0])
    for _ in range(200):
        with de.Tape() as tape:
            d = de.pair_dist_poincare(de.concat([p, de.constant(target)], axis=0),
                                      np.array([0]), np.array([1]), 1.0)
            loss = de.tsum(de.mul(d, d))
        grads = de.backward(tape, loss, wrt=[p])
        opt.step(grads)
    assert mf.distance(spec, p.data[0], target[0]) < 0.05 * start


def test_clip_gradients():
    a = de.parameter(np.zeros(3))
    b = de.parameter(np.zeros(2))
    grads = {a: np.array([3.0, 0.0, 0.0]), b: np.array([0.0, 4.0])}
    tk._clip_gradients(grads, [a, b], 10.0)
    assert np.allclose(grads[a], [3.0, 0.0, 0.0])
    tk._clip_gradients(grads, [a, b], 1.0)
    assert np.allclose(grads[a], [0.6, 0.0, 0.0])
    assert np.allclose(grads[b], [0.0, 0.8])


def test_train_config_validation():
    with pytest.raises(ConfigError):
        tk.TrainConfig(max_epochs=10, min_epochs=20)
    with pytest.raises(ConfigError):
        tk.TrainConfig(patience=0)
    with pytest.raises(ConfigError):
        tk.TrainConfig(nc_loss="mse")
    with pytest.raises(ConfigError):
        tk.TrainConfig(eval_every=0)
    with pytest.raises(ConfigError):
        tk.TrainConfig(grad_clip=0.0)


# ---------------------------------------------------------------------------
# training loop

def _tiny_pdp(seed=0):
    g = balanced_tree(2, 2)
    X = sparse_gaussian_features(g.n, 8, np.random.default_rng(0), density=0.5)
    return g, X, tk.build_pdp(g, X, seed=seed)


def test_train_single_epoch():
    _, X, data = _tiny_pdp()
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    r = tk.train(cfg, data, tk.TrainConfig(max_epochs=1, min_epochs=1))
    assert r.epochs_run == 1
    assert len(r.history) == 1
    assert r.best_epoch == 1
    assert "stress" in r.test_metrics and "normalized_stress" in r.test_metrics


def test_train_zero_lr_constant_loss():
    _, X, data = _tiny_pdp()
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    r = tk.train(cfg, data, tk.TrainConfig(lr=0.0, max_epochs=20, min_epochs=1, patience=100))
    losses = [h[1] for h in r.history]
    assert max(losses) - min(losses) < 1e-12


def test_train_early_stopping_patience():
    _, X, data = _tiny_pdp()
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    r = tk.train(cfg, data, tk.TrainConfig(lr=0.0, max_epochs=500, min_epochs=5, patience=1))
    # no improvement after the first eval, so training halts at min_epochs
    assert r.epochs_run == 5
    assert r.best_epoch == 1


def test_train_deterministic_with_dropout():
    g = balanced_tree(2, 3)
    X = sparse_gaussian_features(g.n, 8, np.random.default_rng(1), density=0.5)
    data = tk.build_pdp(g, X, seed=0)
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4, dropout=0.2)
    tc = tk.TrainConfig(max_epochs=40, min_epochs=1, patience=100, seed=7)
    a = tk.train(cfg, data, tc)
    b = tk.train(cfg, data, tc)
    assert a.test_metrics == b.test_metrics
    assert all(np.array_equal(a.param_data[k], b.param_data[k]) for k in a.param_data)
    c = tk.train(cfg, data, tk.TrainConfig(max_epochs=40, min_epochs=1, patience=100, seed=8))
    assert any(not np.array_equal(a.param_data[k], c.param_data[k]) for k in a.param_data)


def test_train_lorentz_fits_small_tree():
    g = balanced_tree(2, 2)
    X = sparse_gaussian_features(g.n, 8, np.random.default_rng(2), density=0.5)
    data = tk.build_pdp(g, X, seed=0)
    cfg = mo.ModelConfig(arch="lorentz", in_dim=8, out_dim=2, hidden_dim=8)
    tc = tk.TrainConfig(lr=0.05, max_epochs=2000, min_epochs=100, patience=300, eval_every=20)
    r = tk.train(cfg, data, tc)
    assert r.test_metrics["stress"] < 0.05
    assert r.curvature == pytest.approx(1.0)
    # restored parameters reproduce the reported embedding
    out = tk.embed(cfg, r.param_data, data.prop_graph(), X)
    q = -out.Z.data[:, 0] ** 2 + np.sum(out.Z.data[:, 1:] ** 2, axis=1)
    assert np.max(np.abs(q + 1.0)) < 1e-6


def test_train_best_epoch_restore():
    _, X, data = _tiny_pdp()
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    r = tk.train(cfg, data, tk.TrainConfig(lr=0.05, max_epochs=60, min_epochs=1, patience=200))
    out = tk.embed(cfg, r.param_data, data.prop_graph(), X)
    dec = {k: de.constant(v) for k, v in r.decoder_data.items()}
    stress = float(tk._pdp_loss(out, data, dec, "test").data)
    assert stress == pytest.approx(r.test_metrics["stress"], rel=1e-9)


def test_train_nr_smoke():
    g = balanced_tree(3, 4)
    X = sparse_gaussian_features(g.n, 16, np.random.default_rng(3), density=0.3)
    data = tk.build_nr(g, X, seed=0, per_class=3, val_total=20)
    cfg = mo.ModelConfig(arch="gcn", in_dim=16, out_dim=3, hidden_dim=8)
    r = tk.train(cfg, data, tk.TrainConfig(lr=0.03, max_epochs=60, min_epochs=10,
                                           patience=100, eval_every=10))
    assert r.val_metric == "mae"
    assert set(r.test_metrics) == {"mae", "loss"}
    assert np.isfinite(r.test_metrics["mae"])


def _two_blocks(n_half, p_in, p_out, seed):
    rng = np.random.default_rng(seed)
    n = 2 * n_half
    iu, ju = np.triu_indices(n, k=1)
    same = (iu < n_half) == (ju < n_half)
    keep = rng.random(iu.shape[0]) < np.where(same, p_in, p_out)
    return Graph(n, np.stack([iu[keep], ju[keep]], axis=1))


def test_train_lp_learns_community_edges():
    g = _two_blocks(30, 0.35, 0.03, seed=1)
    X = sparse_gaussian_features(g.n, 16, np.random.default_rng(4), density=0.3)
    data = tk.build_lp(g, X, seed=0)
    cfg = mo.ModelConfig(arch="gcn", in_dim=16, out_dim=3, hidden_dim=8)
    r = tk.train(cfg, data, tk.TrainConfig(lr=0.03, max_epochs=300, min_epochs=50,
                                           patience=300, eval_every=20))
    assert set(r.test_metrics) == {"roc_auc", "ap"}
    assert r.test_metrics["roc_auc"] > 0.7
    # a max-mode criterion must register improvements and restore a snapshot
    assert r.best_epoch > 0
    assert r.best_val == pytest.approx(max(h[2] for h in r.history))


def test_train_lp_freeze_fermi():
    g = balanced_tree(3, 3)
    X = sparse_gaussian_features(g.n, 8, np.random.default_rng(5), density=0.5)
    data = tk.build_lp(g, X, seed=0)
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    r = tk.train(cfg, data, tk.TrainConfig(max_epochs=30, min_epochs=1, patience=100,
                                           eval_every=10, freeze_fermi=True))
    assert float(r.decoder_data["r"]) == 2.0
    assert float(np.logaddexp(0.0, r.decoder_data["t_raw"])) == pytest.approx(1.0, rel=1e-9)


def test_train_nc_both_losses():
    g = balanced_tree(3, 3)
    y = (g.bfs(0) >= 2).astype(int)
    X = sparse_gaussian_features(g.n, 8, np.random.default_rng(6), density=0.5)
    data = tk.build_nc(g, X, y, seed=0, per_class=3, val_total=10)
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    for loss in ("ce", "hinge"):
        r = tk.train(cfg, data, tk.TrainConfig(max_epochs=30, min_epochs=1, patience=100,
                                               eval_every=10, nc_loss=loss))
        assert set(r.test_metrics) == {"macro_f1", "accuracy"}
        assert 0.0 <= r.test_metrics["macro_f1"] <= 1.0


def test_train_grad_clip_changes_trajectory():
    _, X, data = _tiny_pdp()
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    a = tk.train(cfg, data, tk.TrainConfig(max_epochs=30, min_epochs=1, patience=100))
    b = tk.train(cfg, data, tk.TrainConfig(max_epochs=30, min_epochs=1, patience=100,
                                           grad_clip=1e-3))
    assert any(not np.array_equal(a.param_data[k], b.param_data[k]) for k in a.param_data)


def test_train_pdp_normalized_stress_definition():
    g = balanced_tree(2, 3)
    X = sparse_gaussian_features(g.n, 8, np.random.default_rng(8), density=0.5)
    data = tk.build_pdp(g, X, seed=0)
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    r = tk.train(cfg, data, tk.TrainConfig(max_epochs=20, min_epochs=1, patience=100))
    from hypalign.analysis import feature_baseline_stress
    ii, jj, D = tk._pair_subset(data, "train")
    ii2, jj2, D2 = tk._pair_subset(data, "test")
    base = feature_baseline_stress(X, (ii, jj, D), (ii2, jj2, D2))
    assert r.test_metrics["normalized_stress"] == pytest.approx(
        r.test_metrics["stress"] / base, rel=1e-9)


def test_train_hgcn_reports_curvature():
    _, X, data = _tiny_pdp()
    cfg = mo.ModelConfig(arch="hgcn", in_dim=8, out_dim=2, hidden_dim=4, curvature=0.5)
    r = tk.train(cfg, data, tk.TrainConfig(max_epochs=5, min_epochs=1, patience=100))
    assert r.curvature == pytest.approx(0.5)
    flat = tk.train(mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4),
                    data, tk.TrainConfig(max_epochs=5, min_epochs=1, patience=100))
    assert flat.curvature is None


def test_train_result_summary():
    _, X, data = _tiny_pdp()
    cfg = mo.ModelConfig(arch="gcn", in_dim=8, out_dim=2, hidden_dim=4)
    r = tk.train(cfg, data, tk.TrainConfig(max_epochs=3, min_epochs=1, patience=100))
    s = r.summary()
    assert s["task"] == "pdp" and s["arch"] == "gcn"
    assert "param_data" not in s and "history" not in s


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_roundtrip(tmp_path):
    arrays = {
        "W": np.random.default_rng(9).normal(size=(3, 4)),
        "b": np.zeros(4),
        "curv": np.asarray(1.5),  # 0-d scalar must survive
    }
    prefix = str(tmp_path / "ck")
    tk.save_checkpoint(prefix, arrays, meta={"arch": "gcn"})
    back, meta = tk.load_checkpoint(prefix)
    assert meta == {"arch": "gcn"}
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].shape == np.asarray(arrays[k]).shape
        assert np.array_equal(back[k], arrays[k])


def test_checkpoint_errors(tmp_path):
    prefix = str(tmp_path / "ck")
    tk.save_checkpoint(prefix, {"a": np.ones(3)})
    with open(prefix + ".bin", "wb") as fh:
        fh.write(b"\x00" * 8)
    with pytest.raises(DataError, match="payload"):
        tk.load_checkpoint(prefix)
    with pytest.raises(DataError, match="manifest"):
        tk.load_checkpoint(str(tmp_path / "missing"))
    import json
    with open(prefix + ".manifest.json") as fh:
        man = json.load(fh)
    man["version"] = 99
    with open(prefix + ".manifest.json", "w") as fh:
        json.dump(man, fh)
    with pytest.raises(DataError, match="version"):
        tk.load_checkpoint(prefix)
