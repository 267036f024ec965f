import numpy as np
import pytest

from hypalign import diffengine as de
from hypalign import manifold as mf
from hypalign import models as md
from hypalign.errors import ConfigError, DimensionError
from hypalign.graphs import Graph, balanced_tree


def _cfg(**kw):
    base = dict(arch="gcn", in_dim=4, out_dim=3, hidden_dim=8, num_layers=2)
    base.update(kw)
    return md.ModelConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        _cfg(arch="transformer")
    with pytest.raises(ConfigError):
        _cfg(num_layers=0)
    with pytest.raises(ConfigError):
        _cfg(arch="hgcn", curvature=0.0)
    with pytest.raises(ConfigError):
        _cfg(dropout=1.0)
    with pytest.raises(ConfigError):
        _cfg(heads=0)


def test_layer_dims():
    cfg = _cfg(arch="mlp", in_dim=7, hidden_dim=16, out_dim=3, num_layers=3)
    assert cfg.layer_dims() == [(7, 16), (16, 16), (16, 3)]
    gat = _cfg(arch="gat", in_dim=7, hidden_dim=16, out_dim=3, num_layers=3, heads=4)
    assert gat.layer_dims() == [(7, 16), (64, 16), (64, 3)]


def test_gcn_two_node_hand_oracle():
    # one edge, one layer, identity weight: both nodes see (x0 + x1) / 2
    g = Graph(2, [[0, 1]])
    cfg = _cfg(arch="gcn", in_dim=1, out_dim=1, num_layers=1)
    params = md.init_params(cfg, np.random.default_rng(0))
    params["layer0.W"].data = np.array([[1.0]])
    out = md.forward(cfg, params, md.build_prop(g), np.array([[1.0], [0.0]]))
    assert np.allclose(out.Z.data, [[0.5], [0.5]])
    assert out.kind == "euclidean"


def test_gcn_matches_dense_normalized_adjacency():
    g = Graph(5, [[0, 1], [1, 2], [2, 3], [3, 4], [0, 4], [1, 3]])
    X = np.random.default_rng(1).normal(size=(5, 3))
    A = np.eye(5)
    for u, v in g.edges:
        A[u, v] = A[v, u] = 1.0
    dinv = 1.0 / np.sqrt(A.sum(axis=1))
    A_hat = dinv[:, None] * A * dinv[None, :]
    prop = md.build_prop(g)
    agg = md._weighted_aggregate(de.constant(X), prop, prop.gcn_w)
    assert np.allclose(agg.data, A_hat @ X, atol=1e-12)


def test_mlp_ignores_graph():
    cfg = _cfg(arch="mlp")
    params = md.init_params(cfg, np.random.default_rng(2))
    X = np.random.default_rng(3).normal(size=(6, 4))
    a = md.forward(cfg, params, md.build_prop(balanced_tree(1, 5)), X)
    b = md.forward(cfg, params, md.build_prop(Graph(6, [[0, 5]])), X)
    assert np.allclose(a.Z.data, b.Z.data)


def test_segment_softmax_rows_sum_to_one():
    rng = np.random.default_rng(4)
    seg = np.repeat(np.arange(5), [3, 1, 4, 2, 2])
    e = de.constant(rng.normal(size=(seg.shape[0], 1)) * 5)
    alpha = md.segment_softmax(e, seg, 5)
    sums = np.zeros(5)
    np.add.at(sums, seg, alpha.data[:, 0])
    assert np.allclose(sums, 1.0)


def test_gat_zero_attention_is_mean():
    # zero score vectors give uniform attention: a plain neighborhood mean
    g = Graph(4, [[0, 1], [1, 2], [2, 3]])
    cfg = _cfg(arch="gat", in_dim=3, out_dim=3, num_layers=1, bias=False)
    params = md.init_params(cfg, np.random.default_rng(5))
    params["layer0.W"].data = np.eye(3)
    X = np.random.default_rng(6).normal(size=(4, 3))
    out = md.forward(cfg, params, md.build_prop(g), X)
    expect = np.stack([
        (X[0] + X[1]) / 2,
        (X[0] + X[1] + X[2]) / 3,
        (X[1] + X[2] + X[3]) / 3,
        (X[2] + X[3]) / 2,
    ])
    assert np.allclose(out.Z.data, expect, atol=1e-12)


def test_gat_multi_head_hidden_width():
    g = balanced_tree(2, 3)
    cfg = _cfg(arch="gat", heads=3, num_layers=2, hidden_dim=5, out_dim=2)
    params = md.init_params(cfg, np.random.default_rng(7))
    X = np.random.default_rng(8).normal(size=(g.n, 4))
    out = md.forward(cfg, params, md.build_prop(g), X)
    assert out.Z.data.shape == (g.n, 2)
    assert params["layer0.h2.W"].data.shape == (4, 5)
    assert params["layer1.W"].data.shape == (15, 2)


@pytest.mark.parametrize("arch", ["gcn", "gat", "hgcn", "lorentz", "lorentz_flat"])
def test_permutation_equivariance(arch):
    g = balanced_tree(2, 3)
    rng = np.random.default_rng(9)
    X = rng.normal(size=(g.n, 4)) * 0.3
    cfg = _cfg(arch=arch, heads=2 if arch == "gat" else 1)
    params = md.init_params(cfg, np.random.default_rng(10))
    base = md.forward(cfg, params, md.build_prop(g), X)

    perm = np.random.default_rng(11).permutation(g.n)
    ge = perm[g.edges]
    gp = Graph(g.n, ge)
    Zp = md.forward(cfg, params, md.build_prop(gp), X[np.argsort(perm)])
    assert np.allclose(Zp.Z.data[perm[np.argsort(perm)]], Zp.Z.data)
    assert np.allclose(base.Z.data, Zp.Z.data[perm], atol=1e-9)


@pytest.mark.parametrize("c,learnable", [(1.0, False), (0.5, True)])
def test_lorentz_constraint_after_each_layer(c, learnable):
    g = balanced_tree(3, 3)
    cfg = _cfg(arch="lorentz", num_layers=3, curvature=c, learnable_curvature=learnable)
    params = md.init_params(cfg, np.random.default_rng(12))
    X = np.random.default_rng(13).normal(size=(g.n, 4))
    out = md.forward(cfg, params, md.build_prop(g), X)
    cv = float(out.c.data)
    q = -out.Z.data[:, 0] ** 2 + np.sum(out.Z.data[:, 1:] ** 2, axis=1)
    assert np.max(np.abs(q + 1.0 / cv)) < 1e-6
    assert np.all(out.Z.data[:, 0] > 0)
    assert out.Z.data.shape == (g.n, 4)


def test_lorentz_intermediate_layers_on_sheet():
    # capture the per-layer outputs by running 1, 2 and 3 layer stacks with
    # shared weights
    g = balanced_tree(2, 3)
    rng = np.random.default_rng(14)
    X = np.random.default_rng(15).normal(size=(g.n, 4))
    full = _cfg(arch="lorentz", num_layers=3)
    params = md.init_params(full, rng)
    prop = md.build_prop(g)
    for L in (1, 2, 3):
        sub = _cfg(arch="lorentz", num_layers=L,
                   out_dim=full.hidden_dim if L < 3 else full.out_dim)
        subp = {k: v for k, v in params.items() if int(k.split(".")[0][5:]) < L}
        out = md.forward(sub, subp, prop, X)
        q = -out.Z.data[:, 0] ** 2 + np.sum(out.Z.data[:, 1:] ** 2, axis=1)
        assert np.max(np.abs(q + 1.0)) < 1e-6


def test_hgcn_output_inside_ball():
    g = balanced_tree(3, 3)
    cfg = _cfg(arch="hgcn", curvature=0.8)
    params = md.init_params(cfg, np.random.default_rng(16))
    X = np.random.default_rng(17).normal(size=(g.n, 4))
    out = md.forward(cfg, params, md.build_prop(g), X)
    assert out.kind == "poincare"
    norms = np.linalg.norm(out.Z.data, axis=1)
    assert np.all(0.8 * norms ** 2 < 1.0)
    assert out.spec().c == pytest.approx(0.8)


def test_lorentz_centroid_scale_invariant():
    c = de.constant(1.0)
    spec = mf.ManifoldSpec("lorentz", 3, 1.0)
    Z = mf.random_points(spec, 6, np.random.default_rng(18))
    M = de.constant(Z.sum(axis=0, keepdims=True))
    a = md.lorentz_centroid(M, c)
    b = md.lorentz_centroid(de.mul(M, de.constant(7.5)), c)
    assert np.allclose(a.data, b.data, atol=1e-12)
    q = -a.data[0, 0] ** 2 + np.sum(a.data[0, 1:] ** 2)
    assert q == pytest.approx(-1.0, abs=1e-12)


def test_expmap_logmap_zero_roundtrip_batched():
    rng = np.random.default_rng(19)
    V = rng.normal(size=(10, 3)) * 0.5
    c = de.constant(0.7)
    ball = md.logmap0_ball(md.expmap0_ball(de.constant(V), c), c)
    assert np.allclose(ball.data, V, atol=1e-9)
    lor = md.logmap0_lorentz(md.expmap0_lorentz(de.constant(V), c), c)
    assert np.allclose(lor.data, V, atol=1e-9)


def test_expmap0_matches_manifold_scalar():
    c = 0.7
    V = np.random.default_rng(20).normal(size=(5, 3)) * 0.4
    ball = md.expmap0_ball(de.constant(V), de.constant(c))
    bspec = mf.ManifoldSpec("poincare", 3, c)
    for i in range(5):
        ref = mf.exp_map(bspec, np.zeros(3), V[i])
        assert np.allclose(ball.data[i], ref.x, atol=1e-12)


def test_tangent0_all_geometries():
    g = balanced_tree(2, 2)
    X = np.random.default_rng(21).normal(size=(g.n, 4)) * 0.3
    prop = md.build_prop(g)
    for arch in ("gcn", "hgcn", "lorentz"):
        cfg = _cfg(arch=arch)
        params = md.init_params(cfg, np.random.default_rng(22))
        out = md.forward(cfg, params, prop, X)
        T = md.tangent0(out)
        assert T.data.shape == (g.n, 3)
        assert np.all(np.isfinite(T.data))
        if arch == "gcn":
            assert T is out.Z


def test_pair_distances_match_manifold():
    g = balanced_tree(2, 2)
    X = np.random.default_rng(23).normal(size=(g.n, 4)) * 0.3
    prop = md.build_prop(g)
    ii = np.array([0, 1, 2])
    jj = np.array([3, 4, 5])
    for arch in ("gcn", "hgcn", "lorentz"):
        cfg = _cfg(arch=arch)
        params = md.init_params(cfg, np.random.default_rng(24))
        out = md.forward(cfg, params, prop, X)
        d = md.pair_distances(out, ii, jj)
        spec = out.spec()
        for k in range(3):
            ref = mf.distance(spec, out.Z.data[ii[k]], out.Z.data[jj[k]])
            assert d.data[k] == pytest.approx(ref, abs=1e-9)


def test_forward_shape_checks_and_dropout_rng():
    g = balanced_tree(2, 2)
    cfg = _cfg(dropout=0.3)
    params = md.init_params(cfg, np.random.default_rng(25))
    X = np.zeros((g.n, 4))
    with pytest.raises(DimensionError):
        md.forward(cfg, params, md.build_prop(g), np.zeros((g.n, 5)))
    with pytest.raises(ConfigError):
        md.forward(cfg, params, md.build_prop(g), X, training=True)
    # eval mode never applies dropout even with no rng
    md.forward(cfg, params, md.build_prop(g), X, training=False)


def test_dropout_only_in_training():
    g = balanced_tree(2, 3)
    cfg = _cfg(dropout=0.5)
    params = md.init_params(cfg, np.random.default_rng(26))
    X = np.random.default_rng(27).normal(size=(g.n, 4))
    prop = md.build_prop(g)
    a = md.forward(cfg, params, prop, X).Z.data
    b = md.forward(cfg, params, prop, X).Z.data
    assert np.array_equal(a, b)
    t = md.forward(cfg, params, prop, X, training=True,
                   rng=np.random.default_rng(0)).Z.data
    assert not np.allclose(a, t)


def test_init_params_deterministic_and_shapes():
    cfg = _cfg(arch="lorentz", in_dim=6, hidden_dim=8, out_dim=3)
    a = md.init_params(cfg, np.random.default_rng(30))
    b = md.init_params(cfg, np.random.default_rng(30))
    assert set(a) == set(b)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    # hyperboloid rows carry a time coordinate, hence fan_in + 1
    assert a["layer0.W"].data.shape == (7, 8)
    assert a["layer1.W"].data.shape == (9, 3)


def test_clone_and_load_param_data():
    cfg = _cfg()
    params = md.init_params(cfg, np.random.default_rng(31))
    snap = md.clone_param_data(params)
    params["layer0.W"].data += 1.0
    md.load_param_data(params, snap)
    assert np.array_equal(params["layer0.W"].data, snap["layer0.W"])
    with pytest.raises(DimensionError):
        md.load_param_data(params, {k: v for k, v in snap.items() if k != "layer0.W"})
    bad = {k: v.copy() for k, v in snap.items()}
    bad["layer0.W"] = np.zeros((2, 2))
    with pytest.raises(DimensionError, match="layer0.W"):
        md.load_param_data(params, bad)


def test_learnable_curvature_positive():
    cfg = _cfg(arch="hgcn", curvature=0.3, learnable_curvature=True)
    params = md.init_params(cfg, np.random.default_rng(32))
    c = md._curvature_tensor(cfg, params, "curv0")
    assert float(c.data) == pytest.approx(0.3, rel=1e-6)
    params["curv0"].data = np.asarray(-40.0)
    c = md._curvature_tensor(cfg, params, "curv0")
    assert float(c.data) >= md._MIN_CURV


def test_count_parameters():
    cfg = _cfg(arch="mlp", in_dim=4, hidden_dim=8, out_dim=3, num_layers=2)
    params = md.init_params(cfg, np.random.default_rng(33))
    # (4*8 + 8) + (8*3 + 3)
    assert md.count_parameters(params) == 32 + 8 + 24 + 3


def test_unknown_activation():
    cfg = _cfg(activation="gelu")
    params = md.init_params(cfg, np.random.default_rng(34))
    with pytest.raises(ConfigError, match="activation"):
        md.forward(cfg, params, md.build_prop(balanced_tree(2, 2)), np.zeros((7, 4)))
