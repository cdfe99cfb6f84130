import numpy as np
import pytest

from _oracles import path_graph
from localgnn.backprop import (
    TieError,
    activation_backward,
    conv_backward,
    finite_difference_check,
    model_backward,
    sample_loss,
)
from localgnn.filters import ActivationWeights, ConvTaps, local_activation_forward, relu_forward, shift_stack
from localgnn.graph_core import ShiftVariant, build_shift_operator, neighborhoods
from localgnn.harness.checks import gradcheck_instance, random_connected_graph, random_model
from localgnn.model import GnnLayer, GnnModel, Readout, build_model, model_forward

V = ShiftVariant
X = np.array([1.0, 5.0, 3.0])


@pytest.fixture
def p3_table():
    return neighborhoods(build_shift_operator(path_graph(), V.SELF_LOOP_ADJACENCY), 1)


def test_median_activation_backward_example(p3_table):
    u = X[:, None]
    w = ActivationWeights([0.0, 1.0])
    _, sel = local_activation_forward("median", w, p3_table, u)
    d_w, d_u = activation_backward("median", w, sel, p3_table, u, np.ones((3, 1)))
    np.testing.assert_array_equal(d_w, [9.0, 13.0])
    np.testing.assert_array_equal(d_u[:, 0], [0.0, 2.0, 1.0])


def test_relu_backward_uses_mask():
    u = np.array([[1.0], [-2.0], [3.0]])
    _, mask = relu_forward(u)
    d_w, d_u = activation_backward("relu", None, mask, None, u, np.array([[0.3], [0.7], [-1.1]]))
    assert d_w is None
    np.testing.assert_array_equal(d_u[:, 0], [0.3, 0.0, -1.1])


def test_zero_weights_give_zero_input_gradient(p3_table):
    u = X[:, None]
    w = ActivationWeights([0.0, 0.0])
    _, sel = local_activation_forward("max", w, p3_table, u)
    d_w, d_u = activation_backward("max", w, sel, p3_table, u, np.ones((3, 1)))
    np.testing.assert_array_equal(d_u, 0.0)
    np.testing.assert_array_equal(d_w, [9.0, 15.0])


def test_stale_selection_is_rejected(p3_table):
    w = ActivationWeights([0.0, 1.0])
    _, sel = local_activation_forward("median", w, p3_table, X[:, None])
    with pytest.raises(ValueError, match="stale"):
        activation_backward("median", w, sel, p3_table, np.ones((3, 2)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        activation_backward("max", w, sel, p3_table, X[:, None], np.ones((3, 1)))


def test_activation_backward_matches_selection_matrices():
    rng = np.random.default_rng(0)
    g = random_connected_graph(12, 0.3, rng)
    t = neighborhoods(build_shift_operator(g, V.SELF_LOOP_ADJACENCY), 2)
    u = rng.standard_normal((12, 2))
    d_out = rng.standard_normal((12, 2))
    w = ActivationWeights(rng.standard_normal((2, 3)), shared=False)
    for kind in ("median", "max"):
        _, sel = local_activation_forward(kind, w, t, u)
        d_w, d_u = activation_backward(kind, w, sel, t, u, d_out)
        ref_u = np.zeros_like(u)
        for f in range(2):
            for k in range(3):
                p = np.zeros((12, 12))
                p[np.arange(12), sel.realizers[k][:, f]] = 1.0
                # one realizer per node and hop
                np.testing.assert_array_equal(p.sum(axis=1), 1.0)
                np.testing.assert_array_equal(p @ u[:, f], sel.values[k][:, f])
                ref_u[:, f] += w.weights[f, k] * p.T @ d_out[:, f]
                assert d_w[f, k] == pytest.approx(d_out[:, f] @ sel.values[k][:, f], rel=1e-13)
        np.testing.assert_allclose(d_u, ref_u, rtol=1e-13, atol=1e-13)


def test_conv_backward_example():
    a = build_shift_operator(path_graph(), V.UNWEIGHTED_ADJACENCY)
    d_taps, _ = conv_backward(a, ConvTaps(np.ones((1, 1, 2))), X[:, None], np.ones((3, 1)))
    np.testing.assert_array_equal(d_taps[0, 0], [9.0, 14.0])


def test_conv_backward_zero_taps_and_dense_oracle():
    rng = np.random.default_rng(1)
    g = random_connected_graph(10, 0.3, rng)
    s = build_shift_operator(g, V.WEIGHTED_ADJACENCY)
    x = rng.standard_normal((3, 10, 2))
    d_u = rng.standard_normal((3, 10, 4))
    _, d_x = conv_backward(s, np.zeros((4, 2, 3)), x, d_u)
    np.testing.assert_array_equal(d_x, 0.0)
    taps = rng.standard_normal((4, 2, 3))
    d_taps, d_x = conv_backward(s, taps, x, d_u)
    dense = s.toarray()
    powers = [np.linalg.matrix_power(dense, k) for k in range(3)]
    ref_taps = np.einsum("bnf,kmn,bmg->fgk", d_u, np.array(powers).transpose(0, 2, 1), x)
    np.testing.assert_allclose(d_taps, ref_taps, rtol=1e-12, atol=1e-12)
    ref_x = sum(np.einsum("fg,mn,bmf->bng", taps[:, :, k], powers[k], d_u) for k in range(3))
    np.testing.assert_allclose(d_x, ref_x, rtol=1e-12, atol=1e-12)
    # cached shifts give the same result
    d_taps2, d_x2 = conv_backward(s, taps, x, d_u, shifts=shift_stack(s, x, 3))
    np.testing.assert_array_equal(d_taps, d_taps2)
    np.testing.assert_array_equal(d_x, d_x2)


def test_single_layer_median_gradients_match_closed_form(p3_table):
    """Assemble dJ/dh and dJ/dw by hand from the hop-1 selection matrix."""
    g = path_graph()
    s = build_shift_operator(g, V.UNWEIGHTED_ADJACENCY)
    h = np.array([0.5, 0.25])
    w = np.array([0.3, 0.7])
    layer = GnnLayer(ConvTaps(h[None, None, :]), "median", s, ActivationWeights(w), p3_table)
    r = np.array([[1.0], [-2.0], [0.5]])
    m = GnnModel([layer], Readout("graph", r, np.zeros(1)))
    x = X[:, None]
    logits, tape = model_forward(m, x)
    grads = model_backward(m, tape, np.ones(1))
    a = s.toarray()
    u = h[0] * X + h[1] * a @ X
    dy = r[:, 0]
    med = np.array([np.sort(u[[j for j in range(3) if abs(i - j) <= 1]])[[2, 3, 2][i] // 2]
                    for i in range(3)])
    realizer = [int(np.flatnonzero(u == med[i])[0]) for i in range(3)]
    p1 = np.zeros((3, 3))
    p1[np.arange(3), realizer] = 1.0
    mix = w[0] * np.eye(3) + w[1] * p1
    d_h = [dy @ mix @ np.linalg.matrix_power(a, k) @ X for k in range(2)]
    d_w = [dy @ u, dy @ med]
    np.testing.assert_allclose(grads.layers[0].d_taps[0, 0], d_h, rtol=1e-14)
    np.testing.assert_allclose(grads.layers[0].d_act_weights, d_w, rtol=1e-14)
    np.testing.assert_allclose(grads.d_readout_weight[:, 0], w[0] * u + w[1] * med, rtol=1e-14)


def test_zero_and_doubled_logit_gradients():
    m = build_model(path_graph(7), "max", hops=2, features=(3, 2), taps=3, n_classes=4,
                    random_act_init=True, seed=3)
    x = np.random.default_rng(0).standard_normal((5, 7, 1))
    logits, tape = model_forward(m, x)
    zero = model_backward(m, tape, np.zeros_like(logits)).as_dict()
    assert all(np.all(v == 0) for v in zero.values())
    d = np.random.default_rng(1).standard_normal(logits.shape)
    once = model_backward(m, tape, d).as_dict()
    twice = model_backward(m, tape, 2 * d).as_dict()
    for name in once:
        np.testing.assert_array_equal(twice[name], 2 * once[name])


def test_gradient_shapes_and_tape_mismatch():
    m = build_model(path_graph(5), "median", hops=1, features=(3, 2), taps=2, n_classes=3)
    logits, tape = model_forward(m, np.ones((4, 5, 1)))
    grads = model_backward(m, tape, np.ones_like(logits)).as_dict()
    assert list(grads) == list(m.parameters())
    for name, g in grads.items():
        assert g.shape == m.parameters()[name].shape
    with pytest.raises(ValueError):
        model_backward(m, tape, np.ones((4, 2)))
    other = build_model(path_graph(5), "median", hops=1, features=(3,), taps=2, n_classes=3)
    with pytest.raises(ValueError, match="different model"):
        model_backward(other, tape, np.ones_like(logits))


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    g = random_connected_graph(8, 0.4, rng)
    m = random_model(g, "max", rng, 2, 2, 1, readout="graph", n_classes=3)
    x = rng.standard_normal((8, 1))
    _, d_logits, tape = sample_loss(m, x, 1)
    d_x = model_backward(m, tape, d_logits, need_input_grad=True).layers[0].d_x
    num = np.empty(8)
    for i in range(8):
        e = np.zeros((8, 1))
        e[i] = 1e-6
        num[i] = (sample_loss(m, x + e, 1)[0] - sample_loss(m, x - e, 1)[0]) / 2e-6
    np.testing.assert_allclose(d_x[:, 0], num, rtol=1e-5, atol=1e-9)


# -- finite differences -----------------------------------------------------------------------


def test_linear_model_with_squared_loss_is_exact():
    rng = np.random.default_rng(5)
    g = random_connected_graph(8, 0.4, rng)
    m = random_model(g, "median", rng, 1, 2, 0, readout="node", n_classes=2)
    m.layers[0].act_weights.weights[...] = [1.0]
    x = rng.standard_normal((8, 1))
    target = rng.standard_normal((8, 2))
    assert finite_difference_check(m, (x, target), loss="squared") <= 1e-9


def test_random_one_layer_median_and_two_layer_max():
    rng = np.random.default_rng(6)
    g = random_connected_graph(10, 0.3, rng)
    med = random_model(g, "median", rng, 1, 3, 2, readout="graph", n_classes=3)
    assert finite_difference_check(med, (rng.standard_normal((10, 1)), 2)) <= 1e-5
    mx = random_model(g, "max", rng, 2, 2, 1, readout="graph", n_classes=3)
    assert finite_difference_check(mx, (rng.standard_normal((10, 1)), 0)) <= 1e-5


def test_ties_are_detected(p3_table):
    s = build_shift_operator(path_graph(), V.UNWEIGHTED_ADJACENCY)
    layer = GnnLayer(ConvTaps(np.ones((1, 1, 1))), "max", s, ActivationWeights([0.5, 0.5]), p3_table)
    m = GnnModel([layer], Readout("graph", np.ones((3, 2)), np.zeros(2)))
    with pytest.raises(TieError):
        finite_difference_check(m, (np.array([[1.0], [1.0], [0.0]]), 0))
    with pytest.raises(ValueError):
        finite_difference_check(m, (np.array([[1.0], [2.0], [0.0]]), 0), step=0.0)


def test_details_report_every_parameter():
    rng = np.random.default_rng(7)
    assert gradcheck_instance("relu", rng) <= 1e-5
    g = random_connected_graph(6, 0.5, rng)
    m = random_model(g, "median", rng, 1, 2, 1, readout="graph", n_classes=2)
    worst, details = finite_difference_check(m, (rng.standard_normal((6, 1)), 1), return_details=True)
    assert set(details) == set(m.parameters())
    assert worst == max(details.values()) <= 1e-5
