import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgeda.autodiff import GraphBuilder, sigmoid
from bridgeda.losses import (
    LossReport,
    ce_node,
    classification_loss,
    disc_loss_node,
    discriminator_loss,
    extractor_objective,
    objective_node,
    onehot,
)
from bridgeda.nn import LayerSpec, build_bundle


def test_ce_one_hot_correct_is_zero():
    assert classification_loss(np.eye(3), np.arange(3)) == 0.0


def test_ce_uniform_two_classes():
    assert classification_loss(np.full((4, 2), 0.5), np.array([0, 1, 1, 0])) == pytest.approx(math.log(2), abs=1e-15)


def test_ce_hand_batch():
    probs = np.array([[0.7, 0.2, 0.1], [0.25, 0.25, 0.5], [0.1, 0.6, 0.3]])
    labels = np.array([0, 2, 1])
    want = -(math.log(0.7) + math.log(0.5) + math.log(0.6)) / 3
    assert abs(classification_loss(probs, labels) - want) < 1e-12


def test_ce_errors():
    with pytest.raises(ValueError):
        classification_loss(np.zeros((0, 2)), np.zeros(0, dtype=int))
    with pytest.raises(ValueError, match="row 1"):
        classification_loss(np.array([[0.5, 0.5], [0.6, 0.6]]), np.array([0, 1]))
    with pytest.raises(ValueError):
        classification_loss(np.array([[0.5, 0.5]]), np.array([2]))


def test_disc_constant_half():
    assert discriminator_loss(np.full(5, 0.5), np.full(7, 0.5)) == pytest.approx(-2 * math.log(2), abs=1e-15)


def test_disc_perfect():
    v = discriminator_loss(np.full(3, 1 - 1e-12), np.full(3, 1e-12))
    assert v <= 0 and abs(v) < 1e-11


def test_disc_random_vs_direct_sum():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p, n = rng.uniform(0.01, 0.99, rng.integers(1, 20)), rng.uniform(0.01, 0.99, rng.integers(1, 20))
        want = sum(math.log(v) for v in p) / len(p) + sum(math.log(1 - v) for v in n) / len(n)
        assert abs(discriminator_loss(p, n) - want) < 1e-12


def test_disc_empty_side():
    with pytest.raises(ValueError):
        discriminator_loss(np.array([]), np.array([0.5]))


def test_objective_examples():
    assert extractor_objective(0.4, [-1.0, -2.0], [0.0, 0.0]) == 0.4
    assert extractor_objective(0.4, [-1.0], [0.5]) == 0.4 + 0.5 * -1.0
    assert extractor_objective(0.7, [-1.0, -0.5], [0.3, 0.6]) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ValueError):
        extractor_objective(0.7, [-1.0], [0.3, 0.6])


def test_loss_report_combined_value():
    r = LossReport(0.31, [-1.2, -0.4, -1.1], [1.0, 0.5, 2.0])
    assert r.objective == pytest.approx(0.31 - 1.2 - 0.2 - 2.2, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_constant_output_optimum(n_pos, n_neg):
    # pooled-batch view: per-point objective sum(log d) over pos + sum(log(1-d)) over neg
    grid = np.linspace(0.001, 0.999, 999)
    vals = n_pos * np.log(grid) + n_neg * np.log(1 - grid)
    p = n_pos / (n_pos + n_neg)
    assert abs(grid[np.argmax(vals)] - p) <= 0.001 + 1e-12
    # equal side weights in the mean form peak at 1/2
    means = [discriminator_loss(np.full(n_pos, d), np.full(n_neg, d)) for d in grid]
    assert grid[int(np.argmax(means))] == pytest.approx(0.5)
    assert max(means) == pytest.approx(-2 * math.log(2), abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=20),
       st.lists(st.floats(0.001, 0.999), min_size=1, max_size=20))
def test_label_flip_symmetry(pos, neg):
    pos, neg = np.array(pos), np.array(neg)
    assert discriminator_loss(pos, neg) == pytest.approx(discriminator_loss(1 - neg, 1 - pos), abs=1e-12)


def test_graph_forms_match_numpy():
    rng = np.random.default_rng(2)
    g = GraphBuilder()
    zu, zd = g.input("zu"), g.input("zd")
    ld = g.build(disc_loss_node(g, zu, zd))
    for _ in range(10):
        u, d = rng.normal(size=(7, 1)) * 3, rng.normal(size=(5, 1)) * 3
        assert ld.eval({"zu": u, "zd": d}) == pytest.approx(discriminator_loss(sigmoid(u), sigmoid(d)), rel=1e-12)
    h = GraphBuilder()
    lc = h.build(ce_node(h, h.input("z"), h.input("y"), 6))
    z, y = rng.normal(size=(6, 3)), rng.integers(0, 3, 6)
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    assert lc.eval({"z": z, "y": onehot(y, 3)}) == pytest.approx(classification_loss(p, y), rel=1e-12)


def test_nonsaturating_points_the_same_way():
    g = GraphBuilder()
    zu, zd = g.input("zu"), g.input("zd")
    mm = g.build(disc_loss_node(g, zu, zd))
    h = GraphBuilder()
    ns = h.build(disc_loss_node(h, h.input("zu"), h.input("zd"), nonsaturating=True))
    inputs = {"zu": np.array([[0.3], [-1.0]]), "zd": np.array([[0.2], [2.0]])}
    gm, gn = mm.grad(inputs), ns.grad(inputs)
    for k in inputs:
        assert np.all(np.sign(gm[k]) == np.sign(gn[k]))


def test_classifier_gradient_ignores_discriminator_terms():
    rng = np.random.default_rng(9)
    b = build_bundle([LayerSpec(2, 5, "sigmoid")], 2, 2, seed=9)
    inputs = dict(b.params, xs=rng.normal(size=(4, 2)), ys=onehot(rng.integers(0, 2, 4), 2),
                  **{"lambda.1": np.asarray(2.0), "lambda.2": np.asarray(0.5)})
    for m in (1, 2):
        inputs[f"xu.{m}"], inputs[f"xd.{m}"] = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))

    def build(with_adv):
        g = GraphBuilder()
        l_c = ce_node(g, b.logits_node(g, b.features_node(g, g.input("xs"))), g.input("ys"), 4)
        if not with_adv:
            return g.build(l_c)
        lds = [disc_loss_node(g, b.disc_logit_node(g, m, b.features_node(g, g.input(f"xu.{m}"))),
                              b.disc_logit_node(g, m, b.features_node(g, g.input(f"xd.{m}")))) for m in (1, 2)]
        return g.build(objective_node(g, l_c, lds))

    full, only_c = build(True).grad(inputs), build(False).grad(inputs)
    for k in b.block_names("C"):
        np.testing.assert_allclose(full[k], only_c[k], rtol=1e-12, atol=1e-15)
    assert not np.allclose(full["f.0.W"], only_c["f.0.W"])


def test_single_discriminator_reduces_to_dann_form():
    # M = 0: L_C + lambda * L_d on (source, target)
    rng = np.random.default_rng(1)
    b = build_bundle([LayerSpec(2, 4, "sigmoid")], 2, 1, seed=1)
    g = GraphBuilder()
    l_c = ce_node(g, b.logits_node(g, b.features_node(g, g.input("xs"))), g.input("ys"), 5)
    l_d = disc_loss_node(g, b.disc_logit_node(g, 1, b.features_node(g, g.input("xu.1"))),
                         b.disc_logit_node(g, 1, b.features_node(g, g.input("xd.1"))))
    out = objective_node(g, l_c, [l_d])
    graph = g.build(out)
    xs, ys = rng.normal(size=(5, 2)), rng.integers(0, 2, 5)
    xu, xd = rng.normal(size=(4, 2)), rng.normal(size=(4, 2)) + 3
    vals = graph.forward(dict(b.params, xs=xs, ys=onehot(ys, 2), **{"xu.1": xu, "xd.1": xd, "lambda.1": np.asarray(0.4)}))
    probs = np.exp(b.logits(xs)) / np.exp(b.logits(xs)).sum(1, keepdims=True)
    want = classification_loss(probs, ys) + 0.4 * discriminator_loss(b.disc_prob(1, xu), b.disc_prob(1, xd))
    assert float(vals[out]) == pytest.approx(want, rel=1e-12)
