import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgeda.autodiff import GraphBuilder, GraphError

from helpers import central_diff, max_rel_err, straight_mlp


def test_sigmoid_at_zero():
    g = GraphBuilder()
    x = g.input("x")
    graph = g.build(g.sum(g.sigmoid(x)))
    assert graph.eval({"x": np.array(0.0)}) == 0.5
    assert graph.grad({"x": np.array(0.0)})["x"] == 0.25


def test_sum_of_squares():
    g = GraphBuilder()
    x = g.input("x")
    graph = g.build(g.sum(g.mul(x, x)))
    x0 = np.array([1.0, 2.0, 3.0])
    assert graph.eval({"x": x0}) == 14.0
    np.testing.assert_array_equal(graph.grad({"x": x0})["x"], [2.0, 4.0, 6.0])


def _mlp_graph():
    g = GraphBuilder()
    x = g.input("x")
    h = g.sigmoid(g.bias_add(g.matmul(x, g.input("W1")), g.input("b1")))
    out = g.bias_add(g.matmul(h, g.input("W2")), g.input("b2"))
    return g, out


def test_mlp_forward_matches_straight_line():
    rng = np.random.default_rng(3)
    inputs = {"x": rng.normal(size=(3, 2)), "W1": rng.normal(size=(2, 4)), "b1": rng.normal(size=4),
              "W2": rng.normal(size=(4, 2)), "b2": rng.normal(size=2)}
    g, out = _mlp_graph()
    graph = g.build(out)
    got = graph.forward(inputs)[out]
    want = straight_mlp(**inputs)
    assert np.max(np.abs(got - want)) < 1e-12


def test_mlp_loss_gradient_vs_finite_differences():
    rng = np.random.default_rng(4)
    g, out = _mlp_graph()
    y = g.input("y")
    loss = g.scale(g.sum(g.mul(y, g.log(g.softmax(out)))), -1 / 5)
    graph = g.build(loss)
    inputs = {"x": rng.normal(size=(5, 2)), "W1": rng.normal(size=(2, 4)), "b1": rng.normal(size=4),
              "W2": rng.normal(size=(4, 3)), "b2": rng.normal(size=3), "y": np.eye(3)[rng.integers(0, 3, 5)]}
    grads = graph.grad(inputs)
    for name in ("x", "W1", "b1", "W2", "b2"):
        assert max_rel_err(grads[name], central_diff(graph.eval, inputs, name)) < 1e-4


def test_log_softmax_of_uniform_logits():
    for n in (2, 3, 10):
        g = GraphBuilder()
        z = g.input("z")
        graph = g.build(g.scale(g.sum(g.log(g.softmax(z))), 1.0 / n))
        assert abs(graph.eval({"z": np.full((1, n), 7.5)}) + np.log(n)) < 1e-12


def test_eval_is_pure():
    rng = np.random.default_rng(0)
    g, out = _mlp_graph()
    graph = g.build(g.sum(out))
    inputs = {"x": rng.normal(size=(6, 2)), "W1": rng.normal(size=(2, 4)), "b1": rng.normal(size=4),
              "W2": rng.normal(size=(4, 2)), "b2": rng.normal(size=2)}
    first = graph.eval(inputs)
    assert all(graph.eval(inputs) == first for _ in range(5))
    g1, g2 = graph.grad(inputs), graph.grad(inputs)
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


def test_shape_mismatch_names_the_node():
    g = GraphBuilder()
    a, b = g.input("a"), g.input("b")
    node = g.matmul(a, b)
    graph = g.build(g.sum(node))
    with pytest.raises(GraphError) as info:
        graph.eval({"a": np.ones((2, 3)), "b": np.ones((2, 3))})
    assert info.value.node == node
    assert "matmul" in str(info.value)


def test_unbound_input():
    g = GraphBuilder()
    graph = g.build(g.sum(g.input("a")))
    with pytest.raises(GraphError, match="not bound"):
        graph.eval({})


def test_non_scalar_output_rejected():
    g = GraphBuilder()
    graph = g.build(g.sigmoid(g.input("a")))
    with pytest.raises(GraphError, match="scalar"):
        graph.grad({"a": np.zeros(3)})


def test_bias_add_is_the_only_broadcast():
    g = GraphBuilder()
    graph = g.build(g.sum(g.add(g.input("a"), g.input("b"))))
    with pytest.raises(GraphError):
        graph.eval({"a": np.ones((2, 3)), "b": np.ones(3)})


def test_log_is_clamped():
    g = GraphBuilder()
    x = g.input("x")
    graph = g.build(g.sum(g.log(x)))
    v = graph.eval({"x": np.array([0.0])})
    assert np.isfinite(v) and v == pytest.approx(np.log(1e-12))
    assert graph.grad({"x": np.array([0.0])})["x"][0] == 0.0


def test_concat_and_relu_gradients():
    rng = np.random.default_rng(1)
    g = GraphBuilder()
    a, b = g.input("a"), g.input("b")
    c = g.relu(g.concat(a, b))
    graph = g.build(g.sum(g.mul(c, g.input("w"))))
    # keep entries away from the relu kink
    av = rng.uniform(0.1, 1, size=(2, 3)) * rng.choice([-1, 1], size=(2, 3))
    bv = rng.uniform(0.1, 1, size=(1, 3)) * rng.choice([-1, 1], size=(1, 3))
    inputs = {"a": av, "b": bv, "w": rng.normal(size=(3, 3))}
    grads = graph.grad(inputs)
    for name in inputs:
        assert max_rel_err(grads[name], central_diff(graph.eval, inputs, name)) < 1e-4


UNARY = ("sigmoid", "relu", "softmax", "log", "scale")


@st.composite
def random_graphs(draw):
    """Random chains over every op, with <= 100 free parameters."""
    seed = draw(st.integers(0, 2**31 - 1))
    n, k, m = draw(st.integers(1, 4)), draw(st.integers(1, 4)), draw(st.integers(1, 4))
    ops = draw(st.lists(st.sampled_from(UNARY + ("mul", "add", "concat")), min_size=1, max_size=5))
    reduce_op = draw(st.sampled_from(("mean", "sum")))
    return seed, n, k, m, ops, reduce_op


@settings(max_examples=60, deadline=None)
@given(random_graphs())
def test_random_graph_gradients(case):
    seed, n, k, m, ops, reduce_op = case
    rng = np.random.default_rng(seed)
    g = GraphBuilder()
    x, W, b = g.input("x"), g.input("W"), g.input("b")
    h = g.bias_add(g.matmul(x, W), b)
    inputs = {"x": rng.normal(size=(n, k)), "W": rng.normal(size=(k, m)), "b": rng.normal(size=m)}
    rows = n
    for i, op in enumerate(ops):
        if op == "log":
            h = g.log(g.sigmoid(h))
        elif op == "scale":
            h = g.scale(h, float(rng.uniform(-2, 2)))
        elif op == "relu":
            # shift away from the kink so differences stay smooth
            off = f"o{i}"
            inputs[off] = np.where(rng.random((rows, m)) < 0.5, -3.0, 3.0)
            h = g.relu(g.add(g.scale(g.sigmoid(h), 0.5), g.input(off)))
        elif op in ("mul", "add"):
            name = f"p{i}"
            inputs[name] = rng.normal(size=(rows, m))
            h = getattr(g, op)(h, g.input(name))
        elif op == "concat":
            name = f"c{i}"
            inputs[name] = rng.normal(size=(1, m))
            h = g.concat(h, g.input(name))
            rows += 1
        else:
            h = getattr(g, op)(h)
    graph = g.build(getattr(g, reduce_op)(h))
    assert sum(v.size for v in inputs.values()) <= 150
    grads = graph.grad(inputs)
    for name in ("x", "W", "b"):
        assert max_rel_err(grads[name], central_diff(graph.eval, inputs, name), floor=1e-5) < 1e-4
