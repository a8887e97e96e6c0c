"""Trainer checks: metric primitives against brute-force oracles, Adam
behavior, composite-loss accounting, dual-route contrast equality, and
end-to-end determinism and learning floors."""

import numpy as np
import pytest

import hc2.autodiff as ad
import hc2.training as training
from hc2 import (Adam, ConfigError, ContractError, Dataset, DimensionError,
                 MemoryBank, MetricsRow, NumericError, RngStream, Sample, Schema,
                 SynthConfig, TrainConfig, TrainState, WeightedPair, auc,
                 build_schedule, evaluate, format_metrics, generalized_loss,
                 init_params, synth_generate, total_loss, train, uniformity,
                 write_metrics)
from hc2.autodiff import DiffNode
from hc2.model import forward_arrays, main_loss


# -- auc ---------------------------------------------------------------------

def test_auc_hand_values():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.1, 0.9], [1, 0]) == 0.0
    assert auc([0.5, 0.5], [1, 0]) == 0.5
    assert auc([0.2, 0.4], [1, 1]) is None
    assert auc([0.2, 0.4], [0, 0]) is None


def _auc_pair_counting(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


def test_auc_matches_pair_counting_oracle():
    rng = RngStream(0, "auc")
    checked = 0
    for _ in range(200):
        n = int(rng.integers(2, 51))
        # coarse grid forces frequent ties
        scores = np.round(rng.uniform(n) * 8) / 8.0
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            continue
        want = _auc_pair_counting(scores.tolist(), labels.tolist())
        assert auc(scores, labels) == pytest.approx(want, abs=1e-12)
        checked += 1
    assert checked > 150


def test_auc_validation():
    with pytest.raises(DimensionError):
        auc([0.1, 0.2], [1])
    with pytest.raises(ContractError):
        auc([0.1, 0.2], [1, 2])


# -- uniformity --------------------------------------------------------------

def test_uniformity_closed_forms():
    same = np.tile([0.3, 0.4], (5, 1))
    assert uniformity(same) == pytest.approx(0.0, abs=1e-12)
    anti = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert uniformity(anti) == pytest.approx(-8.0, abs=1e-12)


def test_uniformity_matches_double_loop_oracle():
    rng = RngStream(1, "uni")
    Z = rng.normal((100, 5))
    Zn = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    vals = []
    for i in range(100):
        for j in range(i + 1, 100):
            vals.append(np.exp(-2.0 * ((Zn[i] - Zn[j]) ** 2).sum()))
    want = np.log(np.mean(vals))
    assert uniformity(Z) == pytest.approx(want, abs=1e-12)


def test_uniformity_skips_zero_norm_and_validates():
    Z = np.array([[1.0, 0.0], [0.0, 0.0], [-1.0, 0.0]])
    with pytest.warns(UserWarning, match="zero-norm"):
        v = uniformity(Z)
    assert v == pytest.approx(-8.0, abs=1e-12)
    with pytest.raises(ContractError):
        uniformity(np.zeros((1, 3)))
    with pytest.raises(ContractError):
        with pytest.warns(UserWarning):
            uniformity(np.zeros((4, 3)))


# -- adam --------------------------------------------------------------------

def test_adam_zero_gradient_is_identity():
    x = DiffNode.param(np.array([[1.0, -2.0]]))
    opt = Adam([("x", x)], lr=0.1)
    opt.step({})
    assert np.array_equal(x.value, [[1.0, -2.0]])
    opt.step({x: np.zeros((1, 2))})
    assert np.array_equal(x.value, [[1.0, -2.0]])


def test_adam_first_step_magnitude():
    x = DiffNode.param(np.array([[1.0, 1.0]]))
    opt = Adam([("x", x)], lr=0.01)
    opt.step({x: np.array([[3.0, -0.002]])})
    delta = x.value - 1.0
    assert delta[0, 0] == pytest.approx(-0.01, rel=1e-5)
    assert delta[0, 1] == pytest.approx(+0.01, rel=1e-2)


def test_adam_descends_quadratic():
    x = DiffNode.param(np.array([[1.0]]))
    opt = Adam([("x", x)], lr=0.1)
    prev = abs(x.item())
    for _ in range(10):
        sq = ad.mul(x, x)
        grads = ad.backward(sq)
        opt.step(grads)
        cur = abs(x.item())
        assert cur < prev
        prev = cur


def test_adam_rejects_bad_inputs():
    x = DiffNode.param(np.array([[1.0]]))
    with pytest.raises(ConfigError):
        Adam([("x", x)], lr=0.0)
    with pytest.raises(ConfigError):
        Adam([("x", x)], lr=0.1, beta1=1.0)
    opt = Adam([("spikey", x)], lr=0.1)
    with pytest.raises(NumericError, match="spikey"):
        opt.step({x: np.array([[np.nan]])})


# -- metrics formatting ------------------------------------------------------

def test_format_metrics_exact_layout(tmp_path):
    rows = [MetricsRow(0, 0, 0.75, 0.693147, 0.0, 0.0, 3),
            MetricsRow(0, -1, None, 0.5, 1.25, 0.1, 0)]
    text = format_metrics(rows)
    assert text == ("epoch,scenario,auc,loss_main,loss_g,loss_s,skipped\n"
                    "0,0,0.750000,0.693147,0.000000,0.000000,3\n"
                    "0,-1,nan,0.500000,1.250000,0.100000,0\n")
    p = tmp_path / "metrics.csv"
    write_metrics(p, rows)
    assert p.read_text() == text


# -- composite loss ----------------------------------------------------------

def _toy_setup(seed=0, **overrides):
    cfg = TrainConfig(batch_size=8, epochs=1, negatives=2, bank_capacity=16,
                      clusters=2, refresh=10, embed_dim=3, shared_dims=(6,),
                      specific_dims=(4,), seed=seed, **overrides)
    data = synth_generate(SynthConfig(n_scenarios=3, n_fields=2,
                                      vocab_sizes=(6, 6), counts=(40, 40, 20),
                                      seed=seed))
    params = init_params(data.schema, cfg.model_dims(), RngStream(seed, "init"))
    state = TrainState(bank=MemoryBank(cfg.bank_capacity),
                       schedule=build_schedule(cfg.beta_start, cfg.beta_end,
                                               cfg.diff_steps),
                       root=RngStream(seed, "train"))
    batch = data.all_train()[: cfg.batch_size]
    return cfg, data, params, state, batch


def test_total_loss_reduces_to_main_when_lambdas_zero():
    import dataclasses
    cfg, _, params, state, batch = _toy_setup()
    cfg0 = dataclasses.replace(cfg, lambda1=0.0, lambda2=0.0)
    total = total_loss(batch, params, state, cfg0)
    main = main_loss(batch, params)
    assert total.item() == main.item()


def test_total_loss_component_sum_oracle():
    cfg, data, params, state, _ = _toy_setup(seed=3)
    batch = [g[i] for i in range(3) for g in data.train if len(g) > i][:8]
    assert len({s.scenario for s in batch}) == 3
    for e in synth_generate(SynthConfig(n_scenarios=3, n_fields=2,
                                        vocab_sizes=(6, 6), counts=(10, 10, 10),
                                        seed=9)).all_train():
        e_np, z_np, _, _ = forward_arrays(params, [e])
        state.bank.push(training.MemoryBankEntry(z_np[0], e_np[0], e.label,
                                                 e.scenario, 0))
    view = training._batch_view(params, batch, None)
    plan = training.plan_step(cfg, state, view)
    sl = training.assemble_step(cfg, params, batch, plan,
                                state.root.substream("dropout/0"))
    assert plan.g_anchors and plan.s_triples
    want = (sl.main_value
            + cfg.lambda1 * np.mean([v for _, v in sl.g_values])
            + cfg.lambda2 * np.mean([v for _, v in sl.s_values]))
    assert sl.total.item() == pytest.approx(want, abs=1e-12)


def test_total_loss_replays_identically():
    cfg, _, params, state, batch = _toy_setup(seed=5)
    a = total_loss(batch, params, state, cfg)
    b = total_loss(batch, params, state, cfg)
    assert a.item() == b.item()


def test_row_contrast_agrees_with_pairwise_loss_route():
    """The trainer's row-wise contrast and the standalone weighted softmax
    must be the same function, value and gradient."""
    rng = RngStream(7, "row")
    for log_form in (True, False):
        dots_v = rng.normal(5) * 3.0
        weights = (rng.uniform(5) + 0.5).reshape(1, -1)
        tau = 0.3

        dots_a = DiffNode.param(dots_v.reshape(1, -1))
        out_a = training._row_contrast(dots_a, weights, tau, log_form)
        grads_a = ad.backward(out_a)

        anchor = DiffNode.param(np.array([[1.0]]))
        pos = WeightedPair(float(weights[0, 0]), [dots_v[0]], "positive")
        negs = [WeightedPair(float(weights[0, j]), [dots_v[j]], "negative")
                for j in range(1, 5)]
        out_b = generalized_loss(anchor, pos, negs, tau=tau, log_form=log_form)
        assert out_a.item() == pytest.approx(out_b.item(), rel=1e-12)

        # closed-form softmax gradient as the exact reference
        w = weights.ravel()
        p = w * np.exp(dots_v / tau - dots_v.max() / tau)
        p = p / p.sum()
        if log_form:
            ref = p / tau
            ref[0] -= 1.0 / tau
        else:
            ref = (p / tau) * p[0]
            ref[0] -= p[0] / tau
        assert np.allclose(grads_a[dots_a].ravel(), ref, rtol=1e-12, atol=1e-15)


def test_row_contrast_gradient_fd_at_moderate_dots():
    weights = np.array([[1.2, 0.8, 1.5]])

    def f(x):
        node = DiffNode.param(x.reshape(1, -1))
        out = training._row_contrast(node, weights, 0.5, True)
        g = ad.backward(out)
        return out.item(), g[node].ravel()

    x0 = np.array([0.4, -0.3, 0.6])
    assert ad.finite_difference_check(f, x0, 1e-6) < 1e-4


def test_plan_respects_diffused_override_and_s_rules():
    cfg, _, params, state, batch = _toy_setup(seed=2)
    import dataclasses
    cfg = dataclasses.replace(cfg, diffused_per_anchor=3, negatives=2)
    view = training._batch_view(params, batch, None)
    plan = training.plan_step(cfg, state, view)
    scens = view.scenarios
    for pa in plan.g_anchors:
        consts = [c for c in pa.negatives if c.batch_index < 0]
        live = [c for c in pa.negatives if c.batch_index >= 0]
        # bank is empty, so every constant negative is a diffused variant
        assert len(consts) == 3
        assert len(live) <= cfg.negatives
    for tr in plan.s_triples:
        k = int(scens[tr.anchor])
        assert len(tr.other_rows) == len(tr.cross_rows) == len(tr.cross_towers)
        assert all(int(scens[r]) != k for r in tr.other_rows)
        assert all(int(scens[r]) == k and r != tr.anchor for r in tr.cross_rows)
        assert all(kp != k for kp in tr.cross_towers)


def test_plan_skips_isolated_scenarios():
    cfg, _, params, state, _ = _toy_setup()
    batch = [Sample(0, 1, (0, 0)), Sample(0, 0, (1, 1)), Sample(0, 1, (2, 2))]
    view = training._batch_view(params, batch, None)
    plan = training.plan_step(cfg, state, view)
    assert not plan.g_anchors
    assert not plan.s_triples
    # every anchor skipped once per loss family
    assert plan.skipped == {0: 6}


# -- evaluate / train --------------------------------------------------------

def _sep_dataset():
    """One scenario, label decided by whether f0 is in the low half."""
    samples = [Sample(0, 1 if f < 4 else 0, (f,)) for f in range(8)] * 8
    schema = Schema(1, 1, (8,))
    return Dataset(schema, [samples], [list(samples)])


def test_epoch_zero_only_evaluation():
    data = synth_generate(SynthConfig(counts=(400, 400, 100), seed=1))
    cfg = TrainConfig(epochs=0, seed=4, embed_dim=4, shared_dims=(8,),
                      specific_dims=(6,))
    res = train(data, cfg)
    assert [r.epoch for r in res.rows] == [0, 0, 0, 0]
    agg = res.rows[-1]
    assert agg.scenario == -1
    assert abs(agg.auc - 0.5) < 0.05
    assert agg.loss_main == 0.0 and agg.loss_g == 0.0 and agg.loss_s == 0.0
    assert len(res.uniformity) == 1


def test_train_deterministic_and_seed_sensitive():
    data = synth_generate(SynthConfig(n_scenarios=2, n_fields=2,
                                      vocab_sizes=(8, 8), counts=(60, 40),
                                      seed=2))
    kw = dict(epochs=2, batch_size=16, refresh=3, clusters=2, bank_capacity=64,
              negatives=3, embed_dim=3, shared_dims=(6,), specific_dims=(4,))
    a = train(data, TrainConfig(seed=7, **kw))
    b = train(data, TrainConfig(seed=7, **kw))
    assert a.metrics_text() == b.metrics_text()
    assert a.uniformity == b.uniformity
    for (na, xa), (nb, xb) in zip(a.params.named_params(), b.params.named_params()):
        assert na == nb and np.array_equal(xa.value, xb.value)
    c = train(data, TrainConfig(seed=8, **kw))
    assert c.metrics_text() != a.metrics_text()


def test_train_learns_separable_toy():
    data = _sep_dataset()
    cfg = TrainConfig(epochs=50, batch_size=16, lr=0.02, seed=0, embed_dim=4,
                      shared_dims=(8,), specific_dims=(6,), negatives=2,
                      bank_capacity=32, clusters=2, refresh=5)
    res = train(data, cfg)
    by_epoch = {}
    for r in res.rows:
        if r.scenario == -1 and r.auc is not None:
            by_epoch[r.epoch] = r.auc
    assert max(by_epoch.values()) > 0.99
    # skipped counts every anchor: no second scenario ever exists
    last = [r for r in res.rows if r.epoch == cfg.epochs and r.scenario == -1][0]
    assert last.skipped > 0


def test_train_numeric_errors_carry_context(monkeypatch):
    def boom(*args, **kwargs):
        raise NumericError("non-finite loss: injected")
    monkeypatch.setattr(training, "assemble_step", boom)
    data = synth_generate(SynthConfig(n_scenarios=2, n_fields=1,
                                      vocab_sizes=(4,), counts=(20, 20), seed=0))
    with pytest.raises(NumericError, match=r"epoch 1, step 0:.*injected"):
        train(data, TrainConfig(epochs=1, batch_size=8, embed_dim=2,
                                shared_dims=(4,), specific_dims=(3,)))


def test_lambda_zero_matches_flags_off_bitwise():
    data = synth_generate(SynthConfig(n_scenarios=2, n_fields=2,
                                      vocab_sizes=(6, 6), counts=(50, 30),
                                      seed=3))
    kw = dict(epochs=2, batch_size=16, seed=9, embed_dim=3, shared_dims=(6,),
              specific_dims=(4,), refresh=3, clusters=2)
    by_lambda = train(data, TrainConfig(lambda1=0.0, lambda2=0.0, **kw))
    by_flags = train(data, TrainConfig(g_loss=False, s_loss=False, **kw))
    assert by_lambda.metrics_text() == by_flags.metrics_text()
    for (_, xa), (_, xb) in zip(by_lambda.params.named_params(),
                                by_flags.params.named_params()):
        assert np.array_equal(xa.value, xb.value)


def test_evaluate_handles_single_class_scenario():
    schema = Schema(2, 1, (4,))
    train_part = [[Sample(0, 1, (0,)), Sample(0, 0, (1,))],
                  [Sample(1, 1, (2,))]]
    test_part = [[Sample(0, 1, (0,)), Sample(0, 0, (1,))],
                 [Sample(1, 1, (2,)), Sample(1, 1, (3,))]]
    data = Dataset(schema, train_part, test_part)
    params = init_params(schema, training.TrainConfig(
        embed_dim=2, shared_dims=(3,), specific_dims=(3,)).model_dims(),
        RngStream(0, "init"))
    rows, uni = evaluate(params, data)
    assert rows[1].auc is None
    assert "nan" in format_metrics(rows)
    assert rows[-1].scenario == -1 and rows[-1].auc is not None
    assert np.isfinite(uni)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(tau=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(lambda1=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
    with pytest.raises(ConfigError):
        TrainConfig(beta_start=0.3, beta_end=0.2)
    with pytest.raises(ConfigError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(seed=-1)
