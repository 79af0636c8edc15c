"""Train one candidate architecture and score it on held-out data.

The model around a compiled graph: token modalities get learned embedding
tables aggregated by bag mean, the continuous modality enters as-is
(zero-padded to the embedding width, no parameters), the graph output is
mean-pooled over time, concatenated with static context features, and passed
through a dense softmax head. Fitness is recall@k on the validation split.

Over-budget candidates are rejected before any optimizer step; non-finite
loss aborts training with reason "diverged". Both reject paths score 0.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .autodiff import GradientTape, Tensor, add, concat, embedding_lookup, \
    exp, log, matmul2, mul, neg, pad_last, reduce_max, reduce_mean, reduce_sum
from .compiler import ComputationGraph, compile_genome
from .data import Dataset
from .executor import ParameterStore, _seed_for, build_store, forward_graph, \
    truncated_normal
from .genome import Genome
from .vocab import DEFAULT_VOCABULARY, Vocabulary

DATASET_STREAMS = 3  # categorical, continuous, notes

SCHEDULES = ("single-cycle-cosine", "constant", "linear-decay",
             "exponential-decay", "inverse-square-root")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    peak_lr: float = 4.23e-4
    schedule: str = "single-cycle-cosine"
    seed: int = 0
    budget: int = 76_000_000
    recall_k: int = 5
    embed_width: int = 16
    adam_beta1: float = 0.9
    adam_beta2: float = 0.997
    adam_eps: float = 1e-9
    dtype: str = "float32"
    concat_inputs: bool = False
    eval_split: str = "val"

    def __post_init__(self):
        for name in ("steps", "batch_size", "peak_lr", "budget",
                     "recall_k", "embed_width"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.eval_split not in ("train", "val", "test"):
            raise ValueError(f"unknown eval split {self.eval_split!r}")


@dataclass(frozen=True)
class FitnessResult:
    fitness: float
    train_loss_curve: Tuple[float, ...]
    wall_time_s: float
    rejected: bool = False
    reason: Optional[str] = None
    parameter_count: int = 0
    flags: Tuple[str, ...] = ()


def lr_at(config: TrainConfig, step: int) -> float:
    """Learning rate for a step in [0, steps]."""
    if not 0 <= step <= config.steps:
        raise ValueError(f"step {step} outside [0, {config.steps}]")
    frac = step / config.steps
    peak = config.peak_lr
    if config.schedule == "single-cycle-cosine":
        return peak * 0.5 * (1.0 + math.cos(math.pi * frac))
    if config.schedule == "constant":
        return peak
    if config.schedule == "linear-decay":
        return peak * (1.0 - frac)
    if config.schedule == "exponential-decay":
        return peak * 0.01 ** frac  # reaches 1% of peak at the last step
    return peak / math.sqrt(step + 1.0)  # inverse-square-root


def recall_at_k(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label is among the k largest logits.

    Ties resolve toward the lower class index via a stable descending sort.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or len(logits) == 0:
        raise ValueError("logits must be a non-empty (n, classes) array")
    if not 1 <= k <= logits.shape[1]:
        raise ValueError("k must be in [1, class count]")
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float((top == labels[:, None]).any(axis=1).mean())


class Adam:
    """Bias-corrected Adam updating a parameter dict in place."""

    def __init__(self, params: Dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.997, eps: float = 1e-9):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# model assembly

def _embed_width_plan(genome: Genome, config: TrainConfig,
                      n_modalities: int) -> Tuple[bool, Tuple[int, ...]]:
    """Whether inputs are concatenated, and the compile-time input widths."""
    m = genome.num_modalities
    use_concat = config.concat_inputs or m == 1
    full = config.embed_width * n_modalities
    if use_concat:
        return True, (full,) * m
    if m != n_modalities:
        raise ValueError(
            f"genome has {m} modalities but the dataset has {n_modalities}; "
            "set concat_inputs for early-fused evaluation")
    return False, (config.embed_width,) * m


def _extra_param_sizes(ds: Dataset, config: TrainConfig,
                       out_width: int) -> Dict[str, Tuple[int, ...]]:
    w = config.embed_width
    k = ds.spec.num_classes
    return {
        "embed/categorical": (ds.spec.cat_vocab, w),
        "embed/notes": (ds.spec.notes_vocab, w),
        "head/W": (out_width + ds.spec.context_features, k),
        "head/b": (k,),
    }


def model_parameter_count(graph: ComputationGraph, ds: Dataset,
                          config: TrainConfig) -> int:
    extras = _extra_param_sizes(ds, config, graph.node(graph.output_id).out_width)
    return graph.parameter_count + sum(
        int(np.prod(s)) for s in extras.values())


def _attach_extras(store: ParameterStore, ds: Dataset, config: TrainConfig,
                   out_width: int) -> None:
    for name, shape in _extra_param_sizes(ds, config, out_width).items():
        if name.endswith("/b"):
            arr = np.zeros(shape, dtype=store.dtype)
        else:
            arr = truncated_normal(_seed_for(config.seed, name), shape,
                                   0.02, store.dtype)
        store.params[name] = arr
        store.grads[name] = None


def _bag_mean_embed(table: Tensor, ids: np.ndarray):
    return reduce_mean(embedding_lookup(table, ids), axis=2)


def _model_inputs(ds: Dataset, idx: np.ndarray, bound: Dict[str, Tensor],
                  config: TrainConfig, use_concat: bool, n_inputs: int):
    cat = _bag_mean_embed(bound["embed/categorical"], ds.categorical[idx])
    cont = pad_last(Tensor(ds.continuous[idx].astype(
        np.dtype(config.dtype), copy=False)), config.embed_width)
    notes = _bag_mean_embed(bound["embed/notes"], ds.notes[idx])
    if use_concat:
        full = concat([cat, cont, notes], axis=-1)
        return [full] * n_inputs
    return [cat, cont, notes]


def _head_logits(graph_out: Tensor, context: np.ndarray,
                 bound: Dict[str, Tensor]):
    pooled = reduce_mean(graph_out, axis=1)
    feats = concat([pooled, context.astype(graph_out.dtype)], axis=-1)
    return add(matmul2(feats, bound["head/W"]), bound["head/b"])


def _cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    n, k = logits.shape
    onehot = np.zeros((n, k), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    m = reduce_max(logits, axis=1, keepdims=True)
    shifted = add(logits, neg(m))
    lse = add(log(reduce_sum(exp(shifted), axis=1, keepdims=True)), m)
    picked = reduce_sum(mul(logits, onehot), axis=1, keepdims=True)
    return reduce_mean(add(lse, neg(picked)))


def loss_curve_flags(curve, window: int = 500, smooth: int = 250,
                     tolerance: float = 0.01) -> Tuple[str, ...]:
    """Flag a smoothed training-loss rise across any 500-step span."""
    values = np.asarray(curve, dtype=np.float64)
    if len(values) < window + smooth:
        return ()
    kernel = np.ones(smooth) / smooth
    smoothed = np.convolve(values, kernel, mode="valid")
    earlier = smoothed[:-window]
    later = smoothed[window:]
    if np.any(later > earlier + tolerance * np.abs(earlier)):
        return ("loss-increase",)
    return ()


def evaluate_candidate(genome: Genome, ds: Dataset, config: TrainConfig,
                       vocab: Vocabulary = DEFAULT_VOCABULARY) -> FitnessResult:
    start = time.perf_counter()
    use_concat, widths = _embed_width_plan(genome, config, DATASET_STREAMS)
    graph = compile_genome(genome, widths, ds.spec.seq_len, vocab=vocab)
    total = model_parameter_count(graph, ds, config)
    if total > config.budget:
        return FitnessResult(
            fitness=0.0, train_loss_curve=(), rejected=True, reason="budget",
            wall_time_s=time.perf_counter() - start, parameter_count=total)

    dtype = np.dtype(config.dtype)
    store = build_store(graph, seed=config.seed, dtype=dtype)
    _attach_extras(store, ds, config, graph.node(graph.output_id).out_width)
    adam = Adam(store.params, config.adam_beta1, config.adam_beta2,
                config.adam_eps)
    batch_rng = np.random.default_rng(config.seed)
    train_idx = ds.train_idx
    curve = []

    for step in range(config.steps):
        idx = train_idx[batch_rng.integers(0, len(train_idx),
                                           size=config.batch_size)]
        tape = GradientTape()
        bound = store.bind(tape)
        inputs = _model_inputs(ds, idx, bound, config, use_concat,
                               len(graph.input_widths))
        out = forward_graph(graph, store, inputs, training=True,
                            tape=tape, bound=bound)
        logits = _head_logits(out, ds.context[idx], bound)
        loss = _cross_entropy(logits, ds.labels[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            return FitnessResult(
                fitness=0.0, train_loss_curve=tuple(curve), rejected=True,
                reason="diverged", wall_time_s=time.perf_counter() - start,
                parameter_count=total)
        curve.append(value)
        tape.backward(loss)
        store.collect_grads(bound)
        adam.step(store.grads, lr_at(config, step))

    fitness = score_on_split(graph, store, ds, config,
                             use_concat, config.eval_split)
    return FitnessResult(
        fitness=fitness, train_loss_curve=tuple(curve),
        wall_time_s=time.perf_counter() - start, parameter_count=total,
        flags=loss_curve_flags(curve))


def score_on_split(graph: ComputationGraph,
                   store: ParameterStore, ds: Dataset, config: TrainConfig,
                   use_concat: bool, split: str,
                   chunk: int = 256) -> float:
    idx = ds.split(split)
    bound = {name: Tensor(arr) for name, arr in store.params.items()}
    logits = []
    for lo in range(0, len(idx), chunk):
        part = idx[lo:lo + chunk]
        inputs = _model_inputs(ds, part, bound, config, use_concat,
                               len(graph.input_widths))
        out = forward_graph(graph, store, inputs, training=False,
                            tape=None, bound=bound)
        logits.append(_head_logits(out, ds.context[part], bound).data)
    return recall_at_k(np.concatenate(logits), ds.labels[idx], config.recall_k)


def evaluation_record(candidate_id: int, result: FitnessResult,
                      steps: int) -> str:
    """One line-delimited JSON record per evaluation."""
    return json.dumps({
        "id": candidate_id,
        "fitness": result.fitness,
        "steps": steps,
        "wall_time_s": round(result.wall_time_s, 3),
        "rejected": result.rejected,
        "reason": result.reason,
        "parameter_count": result.parameter_count,
    }, sort_keys=True)
