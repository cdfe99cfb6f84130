import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import brute_max, brute_median, path_graph, random_graph
from localgnn.filters import (
    ActivationWeights,
    ConvTaps,
    EmptyNeighborhoodError,
    conv_bank_forward,
    graph_convolution,
    local_activation_forward,
    max_operator,
    median_operator,
    relu_forward,
)
from localgnn.graph_core import (
    Graph,
    Permutation,
    ShiftVariant,
    build_shift_operator,
    neighborhoods,
    permute,
    permute_signal,
)

V = ShiftVariant
X = np.array([1.0, 5.0, 3.0])


@pytest.fixture
def p3_table():
    return neighborhoods(build_shift_operator(path_graph(), V.SELF_LOOP_ADJACENCY), 1)


# -- linear filters ---------------------------------------------------------------


def test_graph_convolution_examples():
    a = build_shift_operator(path_graph(), V.UNWEIGHTED_ADJACENCY)
    np.testing.assert_array_equal(graph_convolution(a, [1.0], X), X)
    np.testing.assert_array_equal(graph_convolution(a, [0.0, 1.0], X), [5.0, 4.0, 5.0])
    np.testing.assert_array_equal(graph_convolution(a, [-2.5], X), -2.5 * X)
    with pytest.raises(ValueError):
        graph_convolution(a, [], X)


def test_graph_convolution_matches_dense_polynomial():
    rng = np.random.default_rng(0)
    s = build_shift_operator(random_graph(15, 0.3, rng, True), V.WEIGHTED_ADJACENCY)
    dense = s.toarray()
    h = rng.standard_normal(5)
    x = rng.standard_normal(15)
    ref = sum(hk * np.linalg.matrix_power(dense, k) @ x for k, hk in enumerate(h))
    np.testing.assert_allclose(graph_convolution(s, h, x), ref, rtol=1e-12, atol=1e-12)


def test_single_filter_bank_equals_graph_convolution():
    rng = np.random.default_rng(1)
    s = build_shift_operator(random_graph(10, 0.4, rng, True), V.WEIGHTED_ADJACENCY)
    h = rng.standard_normal(4)
    x = rng.standard_normal(10)
    u = conv_bank_forward(s, ConvTaps(h[None, None, :]), x[:, None])
    np.testing.assert_allclose(u[:, 0], graph_convolution(s, h, x), rtol=1e-14, atol=1e-14)


def test_filter_bank_selector():
    s = build_shift_operator(path_graph(), V.UNWEIGHTED_ADJACENCY)
    taps = np.zeros((2, 2, 3))
    taps[0, 1, 0] = 1.0
    x = np.column_stack([X, [7.0, -1.0, 2.0]])
    u = conv_bank_forward(s, taps, x)
    np.testing.assert_array_equal(u[:, 0], x[:, 1])
    np.testing.assert_array_equal(u[:, 1], 0.0)


def test_filter_bank_matches_dense_oracle_in_batches():
    rng = np.random.default_rng(2)
    s = build_shift_operator(random_graph(12, 0.3, rng, True), V.WEIGHTED_ADJACENCY)
    dense = s.toarray()
    taps = rng.standard_normal((3, 2, 4))
    x = rng.standard_normal((5, 12, 2))
    powers = [np.linalg.matrix_power(dense, k) for k in range(4)]
    ref = np.zeros((5, 12, 3))
    for f in range(3):
        for g in range(2):
            for k in range(4):
                ref[:, :, f] += taps[f, g, k] * (powers[k] @ x[:, :, g].T).T
    u, shifts = conv_bank_forward(s, taps, x, return_shifts=True)
    np.testing.assert_allclose(u, ref, rtol=1e-12, atol=1e-12)
    assert shifts.shape == (4, 5, 12, 2)


def test_filter_bank_is_linear():
    rng = np.random.default_rng(3)
    s = build_shift_operator(random_graph(8, 0.4, rng, True), V.WEIGHTED_ADJACENCY)
    t1, t2 = rng.standard_normal((2, 2, 1, 3))
    x1, x2 = rng.standard_normal((2, 8, 1))
    np.testing.assert_allclose(conv_bank_forward(s, t1 + t2, x1),
                               conv_bank_forward(s, t1, x1) + conv_bank_forward(s, t2, x1), atol=1e-12)
    np.testing.assert_allclose(conv_bank_forward(s, t1, x1 + x2),
                               conv_bank_forward(s, t1, x1) + conv_bank_forward(s, t1, x2), atol=1e-12)


def test_filter_bank_shape_errors():
    s = build_shift_operator(path_graph(), V.UNWEIGHTED_ADJACENCY)
    with pytest.raises(ValueError):
        conv_bank_forward(s, np.ones((1, 2, 1)), np.ones((3, 1)))
    with pytest.raises(ValueError):
        conv_bank_forward(s, np.ones((1, 1, 1)), np.ones((4, 1)))
    with pytest.raises(ValueError):
        ConvTaps(np.ones((1, 0, 2)))


def test_conv_taps_init_bounds():
    t = ConvTaps.init(32, 4, 5, np.random.default_rng(0))
    assert t.taps.shape == (32, 4, 5)
    assert np.max(np.abs(t.taps)) <= (4 * 5) ** -0.5


# -- median / max ----------------------------------------------------------------------


def test_median_on_path(p3_table):
    z, r = median_operator(p3_table.hops[1], X)
    np.testing.assert_array_equal(z, [5.0, 3.0, 5.0])
    np.testing.assert_array_equal(r, [1, 2, 1])


def test_max_on_path(p3_table):
    z, r = max_operator(p3_table.hops[1], X)
    np.testing.assert_array_equal(z, [5.0, 5.0, 5.0])
    np.testing.assert_array_equal(r, [1, 1, 1])


@pytest.mark.parametrize("op", [median_operator, max_operator])
def test_constant_and_hop_zero(op, p3_table):
    z, r = op(p3_table.hops[1], np.full(3, 2.5))
    np.testing.assert_array_equal(z, 2.5)
    # all values tie: smallest index in each neighborhood
    np.testing.assert_array_equal(r, [0, 0, 1])
    z, r = op(p3_table.hops[0], X)
    np.testing.assert_array_equal(z, X)
    np.testing.assert_array_equal(r, [0, 1, 2])


def test_even_neighborhood_takes_upper_median():
    # node 0 of a star sees {0, 1, 2, 3}
    g = Graph.undirected(4, [(0, 1), (0, 2), (0, 3)])
    t = neighborhoods(build_shift_operator(g, V.SELF_LOOP_ADJACENCY), 1)
    z, r = median_operator(t.hops[1], np.array([4.0, 1.0, 3.0, 2.0]))
    assert z[0] == 3.0 and r[0] == 2


def test_empty_neighborhood_is_an_error():
    # node 0 has no 1-hop neighbors under plain adjacency
    g = Graph.undirected(3, [(1, 2)])
    t = neighborhoods(build_shift_operator(g, V.UNWEIGHTED_ADJACENCY), 1)
    with pytest.raises(EmptyNeighborhoodError, match="node 0"):
        median_operator(t.hops[1], X)
    with pytest.raises(EmptyNeighborhoodError):
        max_operator(t.hops[1], X)


def _random_case(rng, n_max=50):
    n = int(rng.integers(1, n_max + 1))
    g = random_graph(n, rng.uniform(0.02, 0.5), rng)
    t = neighborhoods(build_shift_operator(g, V.SELF_LOOP_ADJACENCY), 3)
    if rng.random() < 0.5:
        x = rng.integers(0, 3, size=n).astype(float)
    else:
        x = rng.standard_normal(n)
    return t, x


def test_operators_match_brute_force_oracle():
    rng = np.random.default_rng(10)
    for _ in range(60):
        t, x = _random_case(rng)
        lists = t.as_lists()
        for k in range(4):
            hood = [lists[i][k] for i in range(t.n)]
            for op, oracle in ((median_operator, brute_median), (max_operator, brute_max)):
                z, r = op(t.hops[k], x)
                z_ref, r_ref = oracle(hood, x)
                np.testing.assert_array_equal(z, z_ref)
                np.testing.assert_array_equal(r, r_ref)


def test_selection_kernel_paths_agree():
    # the rank-select fallback must reproduce the bitmap path bit for bit
    rng = np.random.default_rng(11)
    for _ in range(40):
        t, x = _random_case(rng)
        for k in range(4):
            z1, r1 = median_operator(t.hops[k], x)
            z2, r2 = median_operator(t.hops[k], x, force_select=True)
            np.testing.assert_array_equal(z1, z2)
            np.testing.assert_array_equal(r1, r2)


def test_operators_on_batched_multifeature_signals():
    rng = np.random.default_rng(12)
    t, _ = _random_case(rng)
    u = rng.standard_normal((3, t.n, 2))
    z, r = median_operator(t.hops[2], u)
    assert z.shape == r.shape == u.shape
    for b in range(3):
        for f in range(2):
            zz, rr = median_operator(t.hops[2], u[b, :, f])
            np.testing.assert_array_equal(z[b, :, f], zz)
            np.testing.assert_array_equal(r[b, :, f], rr)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_operators_are_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    g = random_graph(n, rng.uniform(0.05, 0.5), rng)
    s = build_shift_operator(g, V.SELF_LOOP_ADJACENCY)
    p = Permutation.random(n, rng)
    t = neighborhoods(s, 2)
    tp = neighborhoods(permute(s, p), 2)
    x = rng.standard_normal(n)
    xp = permute_signal(x, p)
    for op in (median_operator, max_operator):
        for k in range(3):
            z, r = op(t.hops[k], x)
            zp, rp = op(tp.hops[k], xp)
            np.testing.assert_array_equal(zp, permute_signal(z, p))
            np.testing.assert_array_equal(rp, permute_signal(p.map[r], p))
    w = rng.standard_normal(3)
    sc = build_shift_operator(g, V.WEIGHTED_ADJACENCY)
    np.testing.assert_allclose(graph_convolution(permute(sc, p), w, xp),
                               permute_signal(graph_convolution(sc, w, x), p), atol=1e-12)


# -- multiresolution activation -----------------------------------------------------------


def test_activation_examples(p3_table):
    u = X[:, None]
    z, _ = local_activation_forward("median", ActivationWeights([1.0, 0.0]), p3_table, u)
    np.testing.assert_array_equal(z, u)
    z, _ = local_activation_forward("median", ActivationWeights([0.0, 1.0]), p3_table, u)
    np.testing.assert_array_equal(z[:, 0], [5.0, 3.0, 5.0])
    z, sel = local_activation_forward("median", ActivationWeights([0.5, 0.5]), p3_table, u)
    np.testing.assert_array_equal(z[:, 0], [3.0, 4.0, 4.0])
    np.testing.assert_array_equal(sel.realizers[0][:, 0], [0, 1, 2])
    np.testing.assert_array_equal(sel.realizers[1][:, 0], [1, 2, 1])


def test_activation_hop_mismatch(p3_table):
    with pytest.raises(ValueError, match="hops"):
        local_activation_forward("max", ActivationWeights([1.0, 0.0, 0.0]), p3_table, X[:, None])
    with pytest.raises(ValueError):
        local_activation_forward("mode", ActivationWeights([1.0, 0.0]), p3_table, X[:, None])


@pytest.mark.parametrize("kind", ["median", "max"])
def test_activation_with_zero_hops_is_linear(kind):
    rng = np.random.default_rng(4)
    t = neighborhoods(build_shift_operator(random_graph(10, 0.3, rng), V.SELF_LOOP_ADJACENCY), 0)
    u = rng.standard_normal((10, 3))
    z, _ = local_activation_forward(kind, ActivationWeights([-1.7]), t, u)
    np.testing.assert_array_equal(z, -1.7 * u)


@pytest.mark.parametrize("kind", ["median", "max"])
def test_activation_is_linear_in_weights(kind):
    rng = np.random.default_rng(5)
    t = neighborhoods(build_shift_operator(random_graph(12, 0.3, rng), V.SELF_LOOP_ADJACENCY), 2)
    u = rng.standard_normal((4, 12, 3))
    w1, w2 = rng.standard_normal((2, 3, 3))
    z1, _ = local_activation_forward(kind, ActivationWeights(w1, shared=False), t, u)
    z2, _ = local_activation_forward(kind, ActivationWeights(w2, shared=False), t, u)
    z12, _ = local_activation_forward(kind, ActivationWeights(w1 + w2, shared=False), t, u)
    np.testing.assert_allclose(z12, z1 + z2, atol=1e-12)


def test_per_feature_weights_act_per_feature(p3_table):
    u = np.column_stack([X, X])
    w = ActivationWeights([[1.0, 0.0], [0.0, 1.0]], shared=False)
    z, _ = local_activation_forward("max", w, p3_table, u)
    np.testing.assert_array_equal(z[:, 0], X)
    np.testing.assert_array_equal(z[:, 1], [5.0, 5.0, 5.0])


def test_realizers_lie_in_their_neighborhoods():
    rng = np.random.default_rng(6)
    t = neighborhoods(build_shift_operator(random_graph(25, 0.2, rng), V.SELF_LOOP_ADJACENCY), 3)
    u = rng.standard_normal((2, 25, 2))
    for kind in ("median", "max"):
        _, sel = local_activation_forward(kind, ActivationWeights.init(3), t, u)
        for k, r in enumerate(sel.realizers):
            for i in range(25):
                assert set(r[:, i, :].ravel().tolist()) <= set(t.hood(i, k).tolist())


def test_activation_weight_init():
    w = ActivationWeights.init(3)
    np.testing.assert_array_equal(w.weights, [1.0, 0.0, 0.0, 0.0])
    w = ActivationWeights.init(2, n_features=4, shared=False)
    assert w.weights.shape == (4, 3)
    w = ActivationWeights.init(2, rng=np.random.default_rng(0))
    assert np.all(np.abs(w.weights) <= 0.1)
    with pytest.raises(ValueError):
        ActivationWeights([np.nan, 1.0])


# -- ReLU -----------------------------------------------------------------------------------


def test_relu_examples():
    z, mask = relu_forward([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(z, [1.0, 0.0, 3.0])
    np.testing.assert_array_equal(mask, [True, False, True])
    np.testing.assert_array_equal(relu_forward([-1.0, -0.5])[0], 0.0)
    np.testing.assert_array_equal(relu_forward([0.5, 2.0])[0], [0.5, 2.0])
