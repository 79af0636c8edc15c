"""Trainer: schedules, metric, optimizer, and candidate evaluation."""

import dataclasses
import json
import math

import numpy as np
import pytest
from scipy.special import log_softmax

import fusenas.trainer as trainer_mod
from fusenas.compiler import compile_genome
from fusenas.data import Dataset, DatasetSpec, generate
from fusenas.executor import build_store
from fusenas.seeds import seed_genome, unimodal_seed
from fusenas.trainer import (
    DATASET_STREAMS,
    Adam,
    FitnessResult,
    TrainConfig,
    _attach_extras,
    _cross_entropy,
    _embed_width_plan,
    evaluate_candidate,
    evaluation_record,
    loss_curve_flags,
    lr_at,
    model_parameter_count,
    recall_at_k,
    score_on_split,
)
from fusenas.autodiff import Tensor
from fusenas.vocab import DEFAULT_VOCABULARY as V


@pytest.fixture(scope="module")
def ds():
    return generate(DatasetSpec(seed=0, num_examples=400, interaction=1.0))


def small_config(**kw):
    base = dict(steps=40, embed_width=8, seed=1)
    base.update(kw)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# learning-rate schedules

def test_cosine_schedule_endpoints():
    cfg = TrainConfig(steps=2000, peak_lr=4.23e-4)
    assert lr_at(cfg, 0) == pytest.approx(4.23e-4, abs=0.0)
    assert lr_at(cfg, 2000) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(cfg, 1000) == pytest.approx(4.23e-4 / 2)


def test_cosine_schedule_monotone_decreasing():
    cfg = TrainConfig(steps=100)
    values = [lr_at(cfg, s) for s in range(101)]
    assert all(a > b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("step", [-1, 2001, 10_000])
def test_schedule_rejects_out_of_range_step(step):
    cfg = TrainConfig(steps=2000)
    with pytest.raises(ValueError):
        lr_at(cfg, step)


def test_constant_schedule():
    cfg = TrainConfig(steps=10, schedule="constant", peak_lr=0.5)
    assert {lr_at(cfg, s) for s in range(11)} == {0.5}


def test_linear_decay_schedule():
    cfg = TrainConfig(steps=10, schedule="linear-decay", peak_lr=1.0)
    assert lr_at(cfg, 0) == 1.0
    assert lr_at(cfg, 5) == pytest.approx(0.5)
    assert lr_at(cfg, 10) == 0.0


def test_exponential_decay_schedule():
    cfg = TrainConfig(steps=10, schedule="exponential-decay", peak_lr=1.0)
    assert lr_at(cfg, 0) == 1.0
    assert lr_at(cfg, 10) == pytest.approx(0.01)
    assert lr_at(cfg, 5) == pytest.approx(0.1)


def test_inverse_square_root_schedule():
    cfg = TrainConfig(steps=10, schedule="inverse-square-root", peak_lr=1.0)
    assert lr_at(cfg, 0) == 1.0
    assert lr_at(cfg, 3) == pytest.approx(0.5)


def test_unknown_schedule_rejected():
    with pytest.raises(ValueError):
        TrainConfig(schedule="warmup-cosine")


@pytest.mark.parametrize("field,value", [
    ("steps", 0), ("batch_size", 0), ("peak_lr", 0.0),
    ("recall_k", 0), ("embed_width", 0), ("budget", 0),
])
def test_config_rejects_nonpositive(field, value):
    with pytest.raises(ValueError):
        TrainConfig(**{field: value})


# ---------------------------------------------------------------------------
# recall@k

def brute_force_recall(logits, labels, k):
    hits = 0
    for row, label in zip(logits, labels):
        ranked = sorted(range(len(row)), key=lambda c: (-row[c], c))
        hits += label in ranked[:k]
    return hits / len(labels)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_recall_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(8, 12))
    labels = rng.integers(0, 12, size=8)
    assert recall_at_k(logits, labels, k) == brute_force_recall(
        logits, labels, k)


def test_recall_ties_prefer_lower_class_index():
    logits = np.zeros((2, 6))
    # all-equal logits rank classes 0..k-1 first
    assert recall_at_k(logits, np.array([2, 3]), 3) == 0.5
    assert recall_at_k(logits, np.array([2, 3]), 4) == 1.0


def test_recall_rejects_empty_batch():
    with pytest.raises(ValueError):
        recall_at_k(np.zeros((0, 5)), np.zeros(0, dtype=int), 1)


def test_recall_rejects_bad_k():
    logits = np.zeros((2, 5))
    labels = np.array([0, 1])
    with pytest.raises(ValueError):
        recall_at_k(logits, labels, 6)
    with pytest.raises(ValueError):
        recall_at_k(logits, labels, 0)


# ---------------------------------------------------------------------------
# optimizer

def reference_adam(param, grads, lr, b1, b2, eps):
    w = param.copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + eps)
    return w


def test_adam_matches_reference_sequence():
    rng = np.random.default_rng(7)
    w0 = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]
    params = {"w": w0.copy()}
    opt = Adam(params, beta1=0.9, beta2=0.997, eps=1e-9)
    for g in grads:
        opt.step({"w": g}, 0.05)
    expected = reference_adam(w0, grads, 0.05, 0.9, 0.997, 1e-9)
    np.testing.assert_allclose(params["w"], expected, rtol=1e-12)


def test_adam_updates_in_place_and_skips_missing_grads():
    w = np.ones(4)
    b = np.ones(2)
    params = {"w": w, "b": b}
    opt = Adam(params)
    opt.step({"w": np.full(4, 0.5), "b": None}, 0.1)
    assert params["w"] is w
    assert not np.array_equal(w, np.ones(4))
    np.testing.assert_array_equal(b, np.ones(2))


# ---------------------------------------------------------------------------
# model assembly

def test_embed_width_plan_three_streams():
    g = seed_genome("hybrid", 3, V)
    cfg = TrainConfig(embed_width=16)
    assert _embed_width_plan(g, cfg, DATASET_STREAMS) == (
        False, (16, 16, 16))


def test_embed_width_plan_concat_feeds_every_input():
    g = seed_genome("hybrid", 3, V)
    cfg = TrainConfig(embed_width=16, concat_inputs=True)
    assert _embed_width_plan(g, cfg, DATASET_STREAMS) == (
        True, (48, 48, 48))


def test_embed_width_plan_single_stream_always_concat():
    g = unimodal_seed(V)
    cfg = TrainConfig(embed_width=16)
    assert _embed_width_plan(g, cfg, DATASET_STREAMS) == (True, (48,))


def test_embed_width_plan_rejects_stream_mismatch():
    g = seed_genome("hybrid", 2, V)
    cfg = TrainConfig(embed_width=16)
    with pytest.raises(ValueError):
        _embed_width_plan(g, cfg, DATASET_STREAMS)


def test_model_parameter_count_matches_allocated_store(ds):
    g = seed_genome("hybrid", 3, V)
    cfg = small_config()
    _, widths = _embed_width_plan(g, cfg, DATASET_STREAMS)
    graph = compile_genome(g, widths, ds.spec.seq_len, vocab=V)
    store = build_store(graph, seed=cfg.seed, dtype=np.float32)
    _attach_extras(store, ds, cfg, graph.node(graph.output_id).out_width)
    allocated = sum(a.size for a in store.params.values())
    assert model_parameter_count(graph, ds, cfg) == allocated


def test_cross_entropy_matches_log_softmax_oracle():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(5, 7)) * 4
    labels = rng.integers(0, 7, size=5)
    loss = _cross_entropy(Tensor(logits), labels)
    expected = -log_softmax(logits, axis=1)[np.arange(5), labels].mean()
    assert float(loss.data) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# evaluation contract

def test_budget_rejection_applies_no_updates(ds, monkeypatch):
    calls = []

    class SpyAdam(Adam):
        def step(self, grads, lr):
            calls.append(lr)
            super().step(grads, lr)

    monkeypatch.setattr(trainer_mod, "Adam", SpyAdam)
    g = seed_genome("hybrid", 3, V)
    result = evaluate_candidate(g, ds, small_config(budget=1000))
    assert result.rejected and result.reason == "budget"
    assert result.fitness == 0.0
    assert result.train_loss_curve == ()
    assert result.parameter_count > 1000
    assert calls == []


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reported(ds):
    g = seed_genome("hybrid", 3, V)
    cfg = small_config(steps=20, peak_lr=1e8, schedule="constant")
    result = evaluate_candidate(g, ds, cfg)
    assert result.rejected and result.reason == "diverged"
    assert result.fitness == 0.0
    assert len(result.train_loss_curve) < 20
    assert all(math.isfinite(v) for v in result.train_loss_curve)


def test_deterministic_replay(ds):
    g = seed_genome("hybrid", 3, V)
    a = evaluate_candidate(g, ds, small_config())
    b = evaluate_candidate(g, ds, small_config())
    assert a.fitness == b.fitness
    assert a.train_loss_curve == b.train_loss_curve
    assert a.flags == b.flags
    assert a.parameter_count == b.parameter_count


def test_seed_changes_trajectory(ds):
    g = seed_genome("hybrid", 3, V)
    a = evaluate_candidate(g, ds, small_config(seed=1))
    b = evaluate_candidate(g, ds, small_config(seed=2))
    assert a.train_loss_curve != b.train_loss_curve


def test_fitness_invariant_to_validation_order(ds):
    g = seed_genome("hybrid", 3, V)
    cfg = small_config(steps=10)
    use_concat, widths = _embed_width_plan(g, cfg, DATASET_STREAMS)
    graph = compile_genome(g, widths, ds.spec.seq_len, vocab=V)
    store = build_store(graph, seed=cfg.seed, dtype=np.float32)
    _attach_extras(store, ds, cfg, graph.node(graph.output_id).out_width)

    base = score_on_split(graph, store, ds, cfg, use_concat, "val")
    perm = np.random.default_rng(0).permutation(len(ds.val_idx))
    shuffled = dataclasses.replace(ds, val_idx=ds.val_idx[perm])
    assert score_on_split(graph, store, shuffled, cfg, use_concat,
                          "val") == base
    assert score_on_split(graph, store, ds, cfg, use_concat, "val",
                          chunk=7) == base


def test_loss_decreases_during_training(ds):
    g = seed_genome("hybrid", 3, V)
    result = evaluate_candidate(g, ds, small_config(steps=300, seed=0,
                                                    embed_width=16))
    curve = result.train_loss_curve
    assert not result.rejected
    assert np.mean(curve[-50:]) < np.mean(curve[:50])


@pytest.mark.slow
def test_training_beats_untrained_model():
    data = generate(DatasetSpec(seed=0, interaction=1.0))
    g = seed_genome("hybrid", 3, V)
    cfg = TrainConfig(steps=2000, seed=0)
    use_concat, widths = _embed_width_plan(g, cfg, DATASET_STREAMS)
    graph = compile_genome(g, widths, data.spec.seq_len, vocab=V)
    store = build_store(graph, seed=cfg.seed, dtype=np.float32)
    _attach_extras(store, data, cfg, graph.node(graph.output_id).out_width)
    untrained = score_on_split(graph, store, data, cfg, use_concat, "val")

    trained = evaluate_candidate(g, data, cfg)
    assert not trained.rejected
    assert trained.fitness > untrained


def test_concat_routing_still_trains(ds):
    g = seed_genome("hybrid", 3, V)
    plain = evaluate_candidate(g, ds, small_config(steps=5))
    merged = evaluate_candidate(g, ds, small_config(steps=5,
                                                    concat_inputs=True))
    assert not plain.rejected and not merged.rejected
    # wider inputs mean more parameters on the first projections
    assert merged.parameter_count > plain.parameter_count


# ---------------------------------------------------------------------------
# loss-curve flags

def test_flat_descent_raises_no_flag():
    curve = np.linspace(2.5, 0.5, 1200)
    assert loss_curve_flags(curve) == ()


def test_late_rise_is_flagged():
    down = np.linspace(2.5, 0.5, 800)
    up = np.linspace(0.5, 1.5, 600)
    assert loss_curve_flags(np.concatenate([down, up])) == ("loss-increase",)


def test_short_curve_never_flagged():
    assert loss_curve_flags(np.linspace(1.0, 2.0, 700)) == ()


def test_small_wiggle_within_tolerance_not_flagged():
    steps = np.arange(1500, dtype=np.float64)
    curve = 1.0 + 0.004 * np.sin(steps / 30.0)
    assert loss_curve_flags(curve) == ()


# ---------------------------------------------------------------------------
# records

def test_evaluation_record_fields():
    result = FitnessResult(fitness=0.5, train_loss_curve=(1.0,),
                           wall_time_s=1.23456, parameter_count=777)
    line = evaluation_record(9, result, steps=40)
    assert "\n" not in line
    payload = json.loads(line)
    assert payload["id"] == 9
    assert payload["fitness"] == 0.5
    assert payload["steps"] == 40
    assert payload["rejected"] is False
    assert payload["reason"] is None
    assert payload["parameter_count"] == 777
    assert payload["wall_time_s"] == pytest.approx(1.235)


def test_evaluation_record_rejected():
    result = FitnessResult(fitness=0.0, train_loss_curve=(),
                           wall_time_s=0.1, rejected=True, reason="budget",
                           parameter_count=10**9)
    payload = json.loads(evaluation_record(3, result, steps=0))
    assert payload["rejected"] is True
    assert payload["reason"] == "budget"
