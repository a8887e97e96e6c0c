"""Loss checks: closed forms, naive-arithmetic oracles, monotonicity, the
weight freeze, extreme-dot stability, and the dropout/cross-tower encoders."""

import numpy as np
import pytest

import hc2.autodiff as ad
import hc2.model as model
from hc2 import (ConfigError, ContractError, DimensionError, IndividualTriple,
                 ModelDims, RngStream, Schema, WeightedPair, augment_positive,
                 cross_scenario_negative, generalized_loss, individual_loss,
                 init_params, reciprocal_weight)
from hc2.autodiff import DiffNode


def _row(vec):
    return DiffNode.param(np.asarray(vec, dtype=float).reshape(1, -1))


def _const_row(vec):
    return DiffNode.constant(np.asarray(vec, dtype=float).reshape(1, -1))


# -- reciprocal weight -------------------------------------------------------

def test_weight_hand_values():
    assert reciprocal_weight([1.0, 1.0], [1.0, 1.0]) == pytest.approx(0.5)
    assert reciprocal_weight([1.0, 0.0], [-3.0, 5.0], eps=1e-2) == pytest.approx(100.0)
    assert reciprocal_weight([1.0], [1e-9], eps=1e-2) == pytest.approx(100.0)


def test_weight_identity_over_random_unit_vectors():
    rng = RngStream(0, "w")
    hits = 0
    for _ in range(200):
        a = rng.normal(4)
        b = rng.normal(4)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        dot = float(a @ b)
        if dot > 1e-2:
            assert reciprocal_weight(a, b) * dot == pytest.approx(1.0, rel=1e-12)
            hits += 1
    assert hits > 50


def test_weight_validation():
    with pytest.raises(ConfigError):
        reciprocal_weight([1.0], [1.0], eps=0.0)
    with pytest.raises(DimensionError):
        reciprocal_weight([1.0, 2.0], [1.0])
    with pytest.raises(ContractError):
        WeightedPair(0.0, [1.0], "positive")
    with pytest.raises(ContractError):
        WeightedPair(np.inf, [1.0], "positive")
    with pytest.raises(ContractError):
        WeightedPair(1.0, [1.0], "anchor")


# -- generalized loss --------------------------------------------------------

def test_generalized_closed_forms():
    anchor = _const_row([0.0, 0.0])
    pos = WeightedPair(1.0, [1.0, 0.0], "positive")
    neg = WeightedPair(1.0, [0.0, 1.0], "negative")
    out = generalized_loss(anchor, pos, [neg], tau=1.0)
    assert out.item() == pytest.approx(np.log(2.0), abs=1e-9)
    assert out.item() == pytest.approx(0.693147, abs=1e-6)

    out = generalized_loss(anchor, WeightedPair(2.0, [1.0, 0.0], "positive"),
                           [neg], tau=1.0)
    assert out.item() == pytest.approx(-np.log(2.0 / 3.0), abs=1e-9)
    assert out.item() == pytest.approx(0.405465, abs=1e-6)


def test_generalized_matches_naive_arithmetic_oracle():
    rng = RngStream(1, "gl")
    for trial in range(20):
        d = 4
        anchor_v = rng.normal(d)
        pos_v = rng.normal(d)
        neg_vs = [rng.normal(d) for _ in range(5)]
        s_pos = float(rng.uniform()) + 0.5
        s_negs = [float(rng.uniform()) + 0.5 for _ in range(5)]
        tau = 0.7
        p = s_pos * np.exp(anchor_v @ pos_v / tau)
        nsum = sum(s * np.exp(anchor_v @ v / tau) for s, v in zip(s_negs, neg_vs))
        want_log = -np.log(p / (p + nsum))
        want_lit = -p / (p + nsum)

        anchor = _const_row(anchor_v)
        pos = WeightedPair(s_pos, pos_v, "positive")
        negs = [WeightedPair(s, v, "negative") for s, v in zip(s_negs, neg_vs)]
        got_log = generalized_loss(anchor, pos, negs, tau=tau, log_form=True)
        got_lit = generalized_loss(anchor, pos, negs, tau=tau, log_form=False)
        assert got_log.item() == pytest.approx(want_log, rel=1e-9)
        assert got_lit.item() == pytest.approx(want_lit, rel=1e-9)


def _loss_at(pos_vec, neg_vecs, s_pos=1.0, s_negs=None, tau=1.0, log_form=True):
    anchor = _const_row([1.0, 0.0])
    s_negs = s_negs or [1.0] * len(neg_vecs)
    pos = WeightedPair(s_pos, pos_vec, "positive")
    negs = [WeightedPair(s, v, "negative") for s, v in zip(s_negs, neg_vecs)]
    return generalized_loss(anchor, pos, negs, tau=tau, log_form=log_form).item()


def test_generalized_monotonicity():
    base_negs = [[0.3, 0.0], [0.1, 0.0]]
    base = _loss_at([0.5, 0.0], base_negs)
    assert _loss_at([0.5, 0.0], [[0.4, 0.0], [0.1, 0.0]]) > base
    assert _loss_at([0.7, 0.0], base_negs) < base
    # literal form moves the same way
    base_lit = _loss_at([0.5, 0.0], base_negs, log_form=False)
    assert _loss_at([0.5, 0.0], [[0.4, 0.0], [0.1, 0.0]], log_form=False) > base_lit
    assert _loss_at([0.7, 0.0], base_negs, log_form=False) < base_lit


def test_generalized_weight_suppression():
    negs = [[0.3, 0.0], [0.1, 0.0]]
    full = _loss_at([0.5, 0.0], negs, s_negs=[1.0, 1.0])
    damped = _loss_at([0.5, 0.0], negs, s_negs=[0.2, 1.0])
    assert damped < full
    seq = [_loss_at([0.5, 0.0], negs, s_pos=s) for s in (1.0, 1e-2, 1e-4, 1e-8)]
    assert seq == sorted(seq)
    assert seq[-1] > 15.0


def test_generalized_stability_at_extreme_dots():
    for sign in (1.0, -1.0):
        anchor = _row([100.0])
        pos = WeightedPair(1.0, [sign * 100.0], "positive")
        negs = [WeightedPair(1.0, [-sign * 100.0], "negative")]
        out = generalized_loss(anchor, pos, negs, tau=0.1)
        assert np.isfinite(out.item())
        grads = ad.backward(out)
        assert np.all(np.isfinite(grads[anchor]))
    # dots +-1e4 at tau 0.1: naive arithmetic overflows, log space must not
    hot = generalized_loss(_row([100.0]), WeightedPair(1.0, [-100.0], "positive"),
                           [WeightedPair(1.0, [100.0], "negative")], tau=0.1)
    assert hot.item() == pytest.approx(2e5, rel=1e-9)


def test_generalized_gradient_fd():
    pos_v = np.array([0.8, -0.2, 0.4])
    neg_vs = [np.array([0.1, 0.5, -0.3]), np.array([-0.6, 0.2, 0.2])]

    def f(x):
        anchor = _row(x)
        pos = WeightedPair(1.3, pos_v, "positive")
        negs = [WeightedPair(0.7, v, "negative") for v in neg_vs]
        out = generalized_loss(anchor, pos, negs, tau=0.5)
        grads = ad.backward(out)
        return out.item(), grads[anchor].ravel()

    assert ad.finite_difference_check(f, np.array([0.3, -0.1, 0.5]), 1e-6) < 1e-4


def test_generalized_weights_are_frozen():
    """Analytic grads track the rep path only; recomputing weights from the
    perturbed input must therefore break the finite-difference match."""
    pos_v = np.array([0.9, 0.1])
    neg_v = np.array([0.2, 0.8])

    def build(x, weights_from):
        anchor = _row(x)
        s_pos = reciprocal_weight(weights_from, pos_v)
        s_neg = reciprocal_weight(weights_from, neg_v)
        out = generalized_loss(anchor, WeightedPair(s_pos, pos_v, "positive"),
                               [WeightedPair(s_neg, neg_v, "negative")], tau=1.0)
        grads = ad.backward(out)
        return out.item(), grads[anchor].ravel()

    x0 = np.array([0.7, 0.6])
    pinned = ad.finite_difference_check(lambda x: build(x, x0), x0, 1e-6)
    assert pinned < 1e-4
    live = ad.finite_difference_check(lambda x: build(x, x), x0, 1e-6)
    assert live > 1e-2


def test_generalized_validation():
    anchor = _const_row([0.0])
    pos = WeightedPair(1.0, [0.0], "positive")
    neg = WeightedPair(1.0, [0.0], "negative")
    with pytest.raises(ContractError):
        generalized_loss(anchor, pos, [], tau=1.0)
    with pytest.raises(ContractError):
        generalized_loss(anchor, neg, [neg], tau=1.0)
    with pytest.raises(ContractError):
        generalized_loss(anchor, pos, [pos], tau=1.0)
    with pytest.raises(ConfigError):
        generalized_loss(anchor, pos, [neg], tau=0.0)


# -- individual loss ---------------------------------------------------------

def test_individual_closed_forms():
    zero = _const_row([0.0, 0.0])
    triple = IndividualTriple(h=zero, h_aug=zero,
                              neg_other=[_const_row([1.0, 0.0])],
                              neg_cross=[_const_row([0.0, 1.0])])
    out = individual_loss(triple, tau=1.0)
    assert out.item() == pytest.approx(np.log(3.0), abs=1e-9)
    assert out.item() == pytest.approx(1.098612, abs=1e-6)

    h = _const_row([1.0, 0.0])
    triple = IndividualTriple(h=h, h_aug=_const_row([1.0, 0.0]),
                              neg_other=[_const_row([0.0, 1.0])],
                              neg_cross=[_const_row([0.0, -1.0])])
    out = individual_loss(triple, tau=1.0)
    assert out.item() == pytest.approx(-np.log(np.e / (np.e + 2.0)), abs=1e-9)
    assert out.item() == pytest.approx(0.5514447139320511, abs=1e-12)


def test_individual_matches_naive_arithmetic_oracle():
    rng = RngStream(2, "il")
    for _ in range(20):
        d = 3
        h_v = rng.normal(d)
        ha_v = rng.normal(d)
        other = [rng.normal(d) for _ in range(3)]
        cross = [rng.normal(d) for _ in range(3)]
        tau = 0.6
        num = np.exp(h_v @ ha_v / tau)
        den = num + sum(np.exp(h_v @ v / tau) for v in other + cross)
        triple = IndividualTriple(
            h=_const_row(h_v), h_aug=_const_row(ha_v),
            neg_other=[_const_row(v) for v in other],
            neg_cross=[_const_row(v) for v in cross])
        got = individual_loss(triple, tau=tau)
        assert got.item() == pytest.approx(-np.log(num / den), rel=1e-9)
        lit = individual_loss(triple, tau=tau, log_form=False)
        assert lit.item() == pytest.approx(-num / den, rel=1e-9)


def test_individual_monotonicity():
    def loss(pos_dot, neg_dot):
        h = _const_row([1.0, 0.0])
        triple = IndividualTriple(
            h=h, h_aug=_const_row([pos_dot, 0.0]),
            neg_other=[_const_row([neg_dot, 0.0])],
            neg_cross=[_const_row([0.0, 1.0])])
        return individual_loss(triple, tau=1.0).item()

    assert loss(0.9, 0.3) < loss(0.5, 0.3)
    assert loss(0.5, 0.6) > loss(0.5, 0.3)


def test_individual_gradient_fd():
    def f(x):
        h = _row(x[:3])
        h_aug = _row(x[3:6])
        neg_o = _row(x[6:9])
        neg_c = _row(x[9:12])
        out = individual_loss(IndividualTriple(h, h_aug, [neg_o], [neg_c]), tau=0.5)
        grads = ad.backward(out)
        return out.item(), np.concatenate(
            [grads[n].ravel() for n in (h, h_aug, neg_o, neg_c)])

    x0 = RngStream(3, "fd").normal(12) * 0.5
    assert ad.finite_difference_check(f, x0, 1e-6) < 1e-4


def test_individual_descent_separates_views():
    """Plain gradient descent on the raw vectors pulls the augmented view in
    and pushes every negative away within 100 steps."""
    rng = RngStream(4, "sep")
    vals = {name: rng.normal(3) * 0.3
            for name in ("h", "ha", "n1", "n2")}

    def dots():
        return (float(vals["h"] @ vals["ha"]),
                max(float(vals["h"] @ vals["n1"]), float(vals["h"] @ vals["n2"])))

    pos0, neg0 = dots()
    for _ in range(100):
        nodes = {name: _row(v) for name, v in vals.items()}
        out = individual_loss(IndividualTriple(
            nodes["h"], nodes["ha"], [nodes["n1"]], [nodes["n2"]]), tau=1.0)
        grads = ad.backward(out)
        for name, node in nodes.items():
            vals[name] = vals[name] - 0.1 * grads[node].ravel()
    pos1, neg1 = dots()
    assert pos1 > pos0
    assert neg1 < neg0


def test_individual_validation():
    zero = _const_row([0.0])
    with pytest.raises(ContractError):
        individual_loss(IndividualTriple(zero, zero), tau=1.0)
    with pytest.raises(ConfigError):
        individual_loss(IndividualTriple(zero, zero, [zero], []), tau=-1.0)


# -- encoders ----------------------------------------------------------------

SCHEMA = Schema(n_scenarios=3, n_fields=2, vocab_sizes=(4, 4))
DIMS = ModelDims(embed_dim=2, shared=(4,), specific=(4, 4))


def _positive_params(seed=0):
    params = init_params(SCHEMA, DIMS, RngStream(seed, "init"))
    fill = np.random.Generator(np.random.PCG64(seed + 100))
    for _, node in params.named_params():
        node.value[...] = fill.uniform(0.1, 0.5, size=node.value.shape)
    return params


def test_augment_rate_zero_is_identity():
    params = _positive_params()
    z = _const_row([0.4, 0.2, 0.1, 0.3])
    h = model.specific_forward(1, z, params)
    h_aug = augment_positive(1, z, params, rate=0.0, rng=RngStream(0, "drop"))
    assert np.array_equal(h.value, h_aug.value)


def test_augment_differs_from_h_across_trials():
    params = _positive_params()
    z = _const_row([0.4, 0.2, 0.1, 0.3])
    h = model.specific_forward(1, z, params)
    assert np.abs(h.value).min() > 0
    differing = sum(
        not np.array_equal(
            h.value,
            augment_positive(1, z, params, 0.5, RngStream(t, "drop")).value)
        for t in range(100))
    assert differing >= 90


def test_augment_mean_matches_h_on_linear_tower():
    """All-positive tower keeps relu in its identity region, so inverted
    dropout is unbiased and the empirical mean must recover h."""
    params = _positive_params()
    n = 100_000
    z_rows = np.tile([0.4, 0.2, 0.1, 0.3], (n, 1))
    h = model.specific_forward(1, _const_row([0.4, 0.2, 0.1, 0.3]), params)
    h_aug = augment_positive(1, DiffNode.constant(z_rows), params,
                             rate=0.5, rng=RngStream(7, "drop"))
    mean = h_aug.value.mean(axis=0)
    assert np.all(np.abs(mean / h.value.ravel() - 1.0) < 0.02)


def test_cross_encoding_identity_tower():
    params = _positive_params()
    for (w, b) in params.specific_layers[2]:
        w.value[...] = np.eye(4)
        b.value[...] = 0.0
    z = _const_row([0.4, 0.2, 0.1, 0.3])
    out = cross_scenario_negative(2, z, params, anchor_scenario=0)
    assert np.allclose(out.value, z.value, atol=1e-15)


def test_cross_encoding_zero_weights_gives_bias_path():
    params = _positive_params()
    layers = params.specific_layers[1]
    for (w, b) in layers:
        w.value[...] = 0.0
    layers[0][1].value[...] = np.array([[0.5, -0.2, 0.1, 0.0]])
    layers[1][1].value[...] = np.array([[-0.3, 0.4, 0.0, 0.2]])
    z = _const_row([1.0, 1.0, 1.0, 1.0])
    out = cross_scenario_negative(1, z, params, anchor_scenario=0)
    want = np.maximum(np.array([[-0.3, 0.4, 0.0, 0.2]]), 0.0)
    assert np.allclose(out.value, want, atol=1e-15)


def test_cross_encoding_matches_straight_line_replay():
    params = init_params(SCHEMA, DIMS, RngStream(5, "init"))
    z_v = RngStream(6, "z").normal(4)
    out = cross_scenario_negative(1, _const_row(z_v), params, anchor_scenario=2)
    x = z_v[None, :]
    for (w, b) in params.specific_layers[1]:
        x = np.maximum(x @ w.value + b.value, 0.0)
    assert np.allclose(out.value, x, atol=1e-12)


def test_cross_encoding_rejects_own_tower():
    params = init_params(SCHEMA, DIMS, RngStream(5, "init"))
    with pytest.raises(ContractError):
        cross_scenario_negative(1, _const_row(np.zeros(4)), params,
                                anchor_scenario=1)


def test_loss_touches_only_involved_towers():
    params = _positive_params(seed=3)
    z = _const_row([0.4, 0.2, 0.1, 0.3])

    def value():
        h = model.specific_forward(0, z, params)
        h_aug = augment_positive(0, z, params, 0.0, RngStream(0, "drop"))
        neg = cross_scenario_negative(1, z, params, anchor_scenario=0)
        return individual_loss(IndividualTriple(h, h_aug, [], [neg]), tau=1.0).item()

    base = value()
    params.specific_layers[2][0][0].value[0, 0] += 0.25
    assert value() == base
    params.specific_layers[1][0][0].value[0, 0] += 0.25
    assert value() != base
