"""Hybrid decision-rule tests: exactness outside skips, gating, quadrants."""

import numpy as np
import pytest

from zeroskip import (ConfigError, HybridConfig, Outcome, SchedulingError,
                      calibrate_model, cluster_layer, estimate_base,
                      forward_batch, hybrid_forward, predict_member_zero)
from zeroskip.calibrate import PredictorParams
from zeroskip.runtime import negative_input_fraction
from zeroskip.synth import correlated_model, pm_inputs, random_inputs, random_model


def _prepared(seed, n_samples=48, threshold=0.7, **model_kw):
    rng = np.random.default_rng(seed)
    model = random_model(rng, **model_kw)
    samples = random_inputs(rng, model, n_samples)
    params = calibrate_model(model, samples, threshold=threshold)
    clusters = [cluster_layer(l.weights) for l in model.layers]
    return rng, model, clusters, params


def test_estimate_base_examples():
    p = PredictorParams(1.0, 0.5, 2.0, enabled=True)
    assert estimate_base(-10, p) == -3.0
    p2 = PredictorParams(1.0, 1.0, 0.0, enabled=True)
    assert estimate_base(4, p2, bn=(0, 2, 1, -1)) == 1.0
    # BN output -1, residual +3 flips the decision
    p3 = PredictorParams(1.0, 1.0, 0.0, enabled=True)
    assert estimate_base(0, p3, bn=(2, 2, 1, 0), residual=3) == 2.0


def test_estimate_base_requires_enabled():
    with pytest.raises(ValueError):
        estimate_base(1, PredictorParams.disabled())


def test_predict_member_zero_rules():
    p = PredictorParams(1.0, 1.0, 0.0, enabled=True)
    w = np.array([3, -3], dtype=np.int8)
    win = np.array([-5, 5], dtype=np.int8)  # p_bin = -2 -> estimate -2 < 0
    assert predict_member_zero(p, w, win, proxy_output_zero=True) == "skip"
    assert predict_member_zero(p, w, win, proxy_output_zero=False) == "evaluate"
    disabled = PredictorParams.disabled()
    assert predict_member_zero(disabled, w, win, proxy_output_zero=True) == "evaluate"
    with pytest.raises(SchedulingError):
        predict_member_zero(p, w, win, proxy_output_zero=None)


def test_estimate_exactly_zero_evaluates():
    p = PredictorParams(1.0, 1.0, 0.0, enabled=True)
    w = np.array([1, 1], dtype=np.int8)
    win = np.array([1, -1], dtype=np.int8)  # p_bin = 0 -> estimate 0
    assert predict_member_zero(p, w, win, proxy_output_zero=True) == "evaluate"


def test_threshold_one_means_zero_skips_and_identical_outputs():
    rng, model, clusters, params = _prepared(101)
    x = random_inputs(rng, model, 1)[0]
    res = hybrid_forward(model, clusters, params, x, HybridConfig(threshold=1.0))
    ref = forward_batch(model, x[None])
    for li, layer in enumerate(res.layers):
        assert layer.skipped.sum() == 0
        assert np.array_equal(layer.emitted, ref.layers[li].codes[0])
    assert np.array_equal(res.output, ref.layers[-1].codes[0].reshape(res.output.shape))


def test_perfect_fixture_skips_exactly_the_true_zero_members():
    model = correlated_model(k=64, n_neurons=16, w_mag=3, bias=4, seed=3)
    rng = np.random.default_rng(3)
    samples = pm_inputs(rng, model, 64, x_mag=2)
    params = calibrate_model(model, samples, 0.9)
    clusters = [cluster_layer(l.weights) for l in model.layers]
    assert clusters[0].member_count() == 15  # all parallel: one cluster

    member_mask = np.zeros(16, dtype=bool)
    for ms in clusters[0].members:
        member_mask[list(ms)] = True

    for x in pm_inputs(rng, model, 32, x_mag=2):
        res = hybrid_forward(model, clusters, params, x, HybridConfig(threshold=0.9))
        layer = res.layers[0]
        true_zero = forward_batch(model, x[None]).layers[0].codes[0] == 0
        assert np.array_equal(layer.skipped[member_mask], true_zero[member_mask])
        counts = res.total_counts()
        assert counts["incorrectly_predicted_zero"] == 0


def test_residual_estimate_tracks_engine_exactly():
    # layer 0 passes signed codes through (no ReLU); layer 1 adds them back
    # as a residual. Equal-magnitude weights and inputs make the estimate
    # reproduce the engine bit for bit, so skips hit exactly the true zeros.
    from zeroskip import LayerDesc, QuantModel
    from zeroskip.model import forward_batch as fb
    k = 16
    rng = np.random.default_rng(33)
    pattern = rng.choice([-1, 1], k).astype(np.int8)
    l0 = LayerDesc("fc", np.eye(k, dtype=np.int8), has_relu=False, out_shift=0)
    l1 = LayerDesc("fc", np.tile(pattern * 3, (k, 1)).astype(np.int8),
                   has_residual=True, has_relu=True, out_shift=0)
    model = QuantModel([l0, l1], (k,), residual_sources={1: 0})

    samples = (rng.choice([-1, 1], (64, k)) * 2).astype(np.int8)
    params = calibrate_model(model, samples, 0.9)
    assert all(p.c == 1.0 and p.m == 6.0 for p in params[1])
    clusters = [cluster_layer(l.weights) for l in model.layers]
    member_mask = np.zeros(k, dtype=bool)
    for ms in clusters[1].members:
        member_mask[list(ms)] = True

    proxy = clusters[1].proxies[0]
    saw_skip = False
    for x in samples[:16]:
        res = hybrid_forward(model, clusters, params, x, HybridConfig(threshold=0.9))
        true_zero = fb(model, x[None]).layers[1].codes[0] == 0
        # the residual is per neuron here, so a member is skipped exactly
        # when it is truly zero AND its proxy also went to zero
        expected = true_zero & true_zero[proxy][None, :]
        assert np.array_equal(res.layers[1].skipped[member_mask], expected[member_mask])
        assert res.total_counts()["incorrectly_predicted_zero"] == 0
        saw_skip = saw_skip or res.layers[1].skipped.any()
    assert saw_skip


def test_binary_mode_quadrants_partition():
    rng, model, clusters, params = _prepared(44)
    x = random_inputs(rng, model, 1)[0]
    res = hybrid_forward(model, clusters, params, x,
                         HybridConfig(threshold=0.5, mode="binary"))
    counts = res.total_counts()
    assert sum(counts.values()) == sum(l.elements for l in res.layers)


def test_mismatches_are_contained_in_skip_set():
    for seed in (5, 6, 7):
        rng, model, clusters, params = _prepared(seed)
        for x in random_inputs(rng, model, 10):
            res = hybrid_forward(model, clusters, params, x,
                                 HybridConfig(threshold=0.5))
            ref = forward_batch(model, x[None])
            for li, layer in enumerate(res.layers):
                mism = layer.emitted != ref.layers[li].codes[0]
                assert np.all(layer.skipped[mism])
                # skipped elements emit exactly zero
                assert np.all(layer.emitted[layer.skipped] == 0)


def test_quadrants_partition_all_elements():
    rng, model, clusters, params = _prepared(8)
    x = random_inputs(rng, model, 1)[0]
    res = hybrid_forward(model, clusters, params, x, HybridConfig(threshold=0.6))
    counts = res.total_counts()
    total_elements = sum(l.elements for l in res.layers)
    assert sum(counts.values()) == total_elements


def test_proxy_fidelity():
    rng, model, clusters, params = _prepared(9)
    x = random_inputs(rng, model, 1)[0]
    res = hybrid_forward(model, clusters, params, x, HybridConfig(threshold=0.0))
    ref = forward_batch(model, x[None])
    for li, plan in enumerate(clusters):
        got = res.layers[li].emitted
        want = ref.layers[li].codes[0]
        for proxy in plan.proxies:
            assert np.array_equal(got[proxy], want[proxy])
            assert not res.layers[li].skipped[proxy].any()


def test_threshold_monotonicity_per_input():
    rng, model, clusters, params = _prepared(10)
    xs = random_inputs(rng, model, 8)
    thresholds = [1.0, 0.95, 0.9, 0.8, 0.7, 0.6]
    for x in xs:
        prev_skip = None
        prev_incorrect = None
        for t in thresholds:  # descending: skip sets grow
            res = hybrid_forward(model, clusters, params, x, HybridConfig(threshold=t))
            skip = np.concatenate([l.skipped.ravel() for l in res.layers])
            incorrect = res.total_counts()["incorrectly_predicted_zero"]
            if prev_skip is not None:
                assert np.all(skip[prev_skip])  # higher-T skip set is a subset
                assert incorrect >= prev_incorrect
            prev_skip, prev_incorrect = skip, incorrect


def test_conjunction_dominance_against_binary_only():
    rng, model, clusters, params = _prepared(12)
    for x in random_inputs(rng, model, 8):
        for t in (0.9, 0.7, 0.5):
            hyb = hybrid_forward(model, clusters, params, x,
                                 HybridConfig(threshold=t, mode="hybrid"))
            binonly = hybrid_forward(model, clusters, params, x,
                                     HybridConfig(threshold=t, mode="binary"))
            for lh, lb in zip(hyb.layers, binonly.layers):
                inc_h = (lh.outcome == Outcome.INCORRECT_ZERO)
                inc_b = (lb.outcome == Outcome.INCORRECT_ZERO)
                assert np.all(inc_b[inc_h])  # hybrid incorrect-zeros subset of binary's


def test_non_relu_layers_never_predicted():
    rng, model, clusters, params = _prepared(14, n_layers=3)
    x = random_inputs(rng, model, 1)[0]
    res = hybrid_forward(model, clusters, params, x, HybridConfig(threshold=0.0))
    for li, layer in enumerate(model.layers):
        if not layer.has_relu:
            out = res.layers[li].outcome
            assert np.all(out == Outcome.NOT_PREDICTED)
            assert res.layers[li].skipped.sum() == 0


def test_layer_mask_disables_prediction_per_layer():
    model = correlated_model(k=32, n_neurons=8, seed=20)
    rng = np.random.default_rng(20)
    samples = pm_inputs(rng, model, 32)
    params = calibrate_model(model, samples, 0.9)
    clusters = [cluster_layer(l.weights) for l in model.layers]
    x = samples[0]
    masked = hybrid_forward(model, clusters, params, x,
                            HybridConfig(threshold=0.9, layer_mask=[False]))
    assert masked.layers[0].skipped.sum() == 0
    assert np.all(masked.layers[0].outcome == Outcome.NOT_PREDICTED)
    off = hybrid_forward(model, clusters, params, x,
                         HybridConfig(threshold=0.9, predictor_enabled=False))
    assert off.layers[0].skipped.sum() == 0


def test_missing_config_is_rejected():
    rng, model, clusters, params = _prepared(15)
    x = random_inputs(rng, model, 1)[0]
    with pytest.raises(ConfigError):
        hybrid_forward(model, None, params, x, HybridConfig())
    with pytest.raises(ConfigError):
        hybrid_forward(model, clusters, params[:-1], x, HybridConfig())
    with pytest.raises(ConfigError):
        HybridConfig(threshold=1.5)


def test_negative_fraction_reported():
    rng, model, clusters, params = _prepared(16)
    xs = random_inputs(rng, model, 16)
    stats = negative_input_fraction(model, forward_batch(model, xs))
    assert 0.0 <= stats["overall_mac_fraction"] <= 1.0
    assert len(stats["per_layer"]) == model.num_layers
    relu_fracs = [f for layer, f in zip(model.layers, stats["per_layer"]) if layer.has_relu]
    assert any(f > 0 for f in relu_fracs)
