"""Synthetic multimodal sequence datasets with planted cross-modal structure.

Each example carries three modalities over a shared daily grid plus a small
static context vector. Two latent class variables drive the data: ``a`` is
encoded by categorical tokens (and weakly by context), ``b`` by continuous
templates and noisy note tokens. The label blends them as

    label = (a + floor(interaction * b)) mod num_classes

so ``interaction`` (the λ knob) moves the task from single-modality (λ=0,
label = a) to fully cross-modal (λ=1, label needs modular addition of both
latents, one per modality).

Preprocessing follows the bagging pipeline: values are grouped into daily
bags, empty bags are dropped, continuous features are z-scored with
training-split statistics, clamped to ten deviations, and gap-filled by
carrying the last observation forward (leading gaps become 0, the
post-normalization mean). The generator emits at most one continuous
observation per feature per day, so bag means equal the raw observations;
``bag_aggregate`` implements the general event-stream rule.

Continuous features deliberately span scales (0.1x to 10x with rare spikes
past ten deviations) while token embeddings start near zero: concatenating
such disparate channels into one stream is exactly the failure mode the
fusion search is meant to expose.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import binio

DATASET_MAGIC = b"FNDS1\n"
FORMAT_NAME = "fusenas-dataset"
FORMAT_VERSION = 1

MODALITIES = ("categorical", "continuous", "notes")


@dataclass(frozen=True)
class DatasetSpec:
    seed: int = 0
    num_examples: int = 1000
    num_classes: int = 12
    seq_len: int = 6
    empty_bags: int = 2
    tokens_per_bag: int = 3
    cat_vocab: int = 48
    notes_vocab: int = 64
    cont_features: int = 6
    context_features: int = 2
    interaction: float = 1.0   # λ: P(label uses the cross-modal term)
    missing_rate: float = 0.25
    token_noise: float = 0.1
    notes_noise: float = 0.3
    cont_noise: float = 0.25
    spike_rate: float = 0.002
    gain_jitter: float = 1.0

    def __post_init__(self):
        if self.num_examples < 10:
            raise ValueError("need at least 10 examples for an 8:1:1 split")
        if not 0.0 <= self.interaction <= 1.0:
            raise ValueError("interaction must be in [0, 1]")
        if self.cat_vocab < self.num_classes or self.notes_vocab < self.num_classes:
            raise ValueError("vocabularies must cover the class count")
        if self.gain_jitter < 0:
            raise ValueError("gain_jitter must be non-negative")


@dataclass(frozen=True)
class Dataset:
    spec: DatasetSpec
    categorical: np.ndarray   # (N, T, tokens_per_bag) int64
    continuous: np.ndarray    # (N, T, cont_features) float32, preprocessed
    notes: np.ndarray         # (N, T, tokens_per_bag) int64
    context: np.ndarray       # (N, context_features) float32
    labels: np.ndarray        # (N,) int64
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def num_examples(self) -> int:
        return len(self.labels)

    def split(self, name: str) -> np.ndarray:
        return {"train": self.train_idx, "val": self.val_idx,
                "test": self.test_idx}[name]


# ---------------------------------------------------------------------------
# preprocessing ops

def zscore_clamp(values: np.ndarray, mean: np.ndarray, std: np.ndarray,
                 clamp: float = 10.0) -> np.ndarray:
    """(x - mean) / std clipped to [-clamp, clamp]; zero-variance features
    map to 0. NaNs pass through for later imputation."""
    std = np.asarray(std, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    safe = np.where(std > 0, std, 1.0)
    z = (values - mean) / safe
    z = np.where(std > 0, z, 0.0 * values)  # 0*NaN keeps NaN
    return np.clip(z, -clamp, clamp)


def locf_impute(series: np.ndarray) -> np.ndarray:
    """Fill NaNs along the time axis (axis -2) with the last observed value;
    leading gaps become 0."""
    x = np.array(series, dtype=np.float64, copy=True)
    t_axis = x.ndim - 2
    length = x.shape[t_axis]
    filled = np.moveaxis(x, t_axis, 0)
    for t in range(length):
        row = filled[t]
        gap = np.isnan(row)
        if t == 0:
            row[gap] = 0.0
        else:
            row[gap] = filled[t - 1][gap]
    return np.moveaxis(filled, 0, t_axis).astype(series.dtype
                                                 if series.dtype.kind == "f"
                                                 else np.float64)


def bag_aggregate(timestamps: Sequence[float], values, bag_length: float,
                  kind: str = "continuous"):
    """Group timestamped events into fixed-length bags.

    Continuous values are averaged per bag; token ids are collected as a
    sorted multiset per bag. Bags with no events are dropped. Returns
    (bag_ids, aggregates) where bag_ids are the surviving bag indices in
    order.
    """
    if bag_length <= 0:
        raise ValueError("bag_length must be positive")
    stamps = np.asarray(timestamps, dtype=np.float64)
    bins = np.floor(stamps / bag_length).astype(np.int64)
    order = np.argsort(bins, kind="stable")
    bins = bins[order]
    kept = np.unique(bins)
    if kind == "continuous":
        vals = np.asarray(values, dtype=np.float64)[order]
        out = np.stack([vals[bins == b].mean(axis=0) for b in kept]) \
            if len(kept) else vals.reshape((0,) + vals.shape[1:])
        return kept, out
    if kind == "tokens":
        vals = np.asarray(values)[order]
        return kept, [sorted(vals[bins == b].tolist()) for b in kept]
    raise ValueError(f"unknown kind {kind!r}")


def train_statistics(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std over examples and time, ignoring NaNs."""
    flat = values.reshape(-1, values.shape[-1])
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(flat, axis=0)
        std = np.nanstd(flat, axis=0)
    mean = np.where(np.isnan(mean), 0.0, mean)
    std = np.where(np.isnan(std), 0.0, std)
    return mean, std


# ---------------------------------------------------------------------------
# generation

def _class_templates(rng: np.random.Generator, classes: int, length: int,
                     features: int) -> np.ndarray:
    """Per-class feature levels plus a small waveform, spread over scales
    0.1/1/10. Levels dominate so the class survives day dropping; the
    waveform keeps the sequence non-constant."""
    level = rng.standard_normal((classes, 1, features))
    wiggle = rng.standard_normal((classes, length, features))
    scales = np.array([0.1, 1.0, 10.0])[np.arange(features) % 3]
    return (level + 0.4 * wiggle) * scales


def _raw_parts(spec: DatasetSpec):
    """Everything generate() needs, with continuous features still raw
    (un-normalized, NaN gaps), so tests can audit the preprocessing."""
    rng = np.random.default_rng(spec.seed)
    n, k = spec.num_examples, spec.num_classes
    raw_len = spec.seq_len + spec.empty_bags
    tpb = spec.tokens_per_bag

    a = rng.integers(0, k, size=n)
    b = rng.integers(0, k, size=n)
    labels = ((a + np.floor(spec.interaction * b).astype(np.int64)) % k)
    labels = labels.astype(np.int64)

    # planted empty days, dropped later by bagging
    day_order = np.argsort(rng.random((n, raw_len)), axis=1)
    empty_days = day_order[:, :spec.empty_bags]
    keep_mask = np.ones((n, raw_len), dtype=bool)
    np.put_along_axis(keep_mask, empty_days, False, axis=1)
    kept_days = np.argsort(~keep_mask, axis=1, kind="stable")[:, :spec.seq_len]
    kept_days.sort(axis=1)

    # categorical tokens encode a
    cat_group = spec.cat_vocab // k
    cat = (a[:, None, None] * cat_group
           + rng.integers(0, cat_group, size=(n, raw_len, tpb)))
    cat_noise = rng.random((n, raw_len, tpb)) < spec.token_noise
    cat = np.where(cat_noise, rng.integers(0, spec.cat_vocab,
                                           size=cat.shape), cat)

    # notes encode b, noisier
    notes_group = spec.notes_vocab // k
    notes = (b[:, None, None] * notes_group
             + rng.integers(0, notes_group, size=(n, raw_len, tpb)))
    notes_noise = rng.random((n, raw_len, tpb)) < spec.notes_noise
    notes = np.where(notes_noise, rng.integers(0, spec.notes_vocab,
                                               size=notes.shape), notes)

    # continuous features encode b through class templates; noise tracks each
    # feature's own scale so z-scoring leaves every feature informative
    templates = _class_templates(rng, k, raw_len, spec.cont_features)
    scales = np.array([0.1, 1.0, 10.0])[np.arange(spec.cont_features) % 3]
    cont = templates[b] + spec.cont_noise * scales * rng.standard_normal(
        (n, raw_len, spec.cont_features))
    spikes = rng.random(cont.shape) < spec.spike_rate
    cont = np.where(spikes, cont * 30.0, cont)
    # per-example/day measurement gain on two of every three features: a
    # static weight matrix cannot undo it, so mixing these channels into
    # token embeddings stays costly; the clean features keep the class
    # linearly readable
    if spec.gain_jitter > 0:
        gain = 10.0 ** rng.uniform(-spec.gain_jitter, spec.gain_jitter,
                                   size=(n, raw_len, 1))
        jittered = (np.arange(spec.cont_features) % 3) != 2
        cont = np.where(jittered, cont * gain, cont)
    missing = rng.random(cont.shape) < spec.missing_rate
    cont[missing] = np.nan

    # bagging: drop the empty days from every modality
    take = kept_days[:, :, None]
    cat = np.take_along_axis(cat, take, axis=1).astype(np.int64)
    notes = np.take_along_axis(notes, take, axis=1).astype(np.int64)
    cont = np.take_along_axis(cont, take, axis=1)

    # first context column carries a weak copy of a; the rest is noise
    context_cols = [a / k - 0.5 + 0.1 * rng.standard_normal(n)]
    while len(context_cols) < spec.context_features:
        context_cols.append(rng.standard_normal(n))
    context = np.stack(context_cols[:spec.context_features], axis=1)

    # 8:1:1 split by seeded shuffle
    perm = rng.permutation(n)
    n_test = n // 10
    n_val = n // 10
    n_train = n - n_val - n_test
    train_idx = np.sort(perm[:n_train]).astype(np.int64)
    val_idx = np.sort(perm[n_train:n_train + n_val]).astype(np.int64)
    test_idx = np.sort(perm[n_train + n_val:]).astype(np.int64)

    return (cat, cont, notes, context, labels,
            (train_idx, val_idx, test_idx))


def generate(spec: DatasetSpec) -> Dataset:
    cat, cont_raw, notes, context, labels, splits = _raw_parts(spec)
    train_idx, val_idx, test_idx = splits
    mean, std = train_statistics(cont_raw[train_idx])
    cont = locf_impute(zscore_clamp(cont_raw, mean, std))

    return Dataset(
        spec=spec,
        categorical=cat,
        continuous=cont.astype(np.float32),
        notes=notes,
        context=context.astype(np.float32),
        labels=labels,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
    )


# ---------------------------------------------------------------------------
# persistence

def save_dataset(ds: Dataset, path: str) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "spec": dataclasses.asdict(ds.spec),
        "modalities": list(MODALITIES),
    }
    header_raw = json.dumps(header, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", len(header_raw)))
    buf.write(header_raw)
    binio.write_block(buf, {
        "categorical": ds.categorical,
        "continuous": ds.continuous,
        "notes": ds.notes,
        "context": ds.context,
        "labels": ds.labels,
        "train_idx": ds.train_idx,
        "val_idx": ds.val_idx,
        "test_idx": ds.test_idx,
    })
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(len(DATASET_MAGIC)) != DATASET_MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format") != FORMAT_NAME:
            raise ValueError("unrecognized dataset header")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset version {header.get('version')}")
        arrays = binio.read_block(fh)
    spec = DatasetSpec(**header["spec"])
    return Dataset(spec=spec,
                   categorical=arrays["categorical"],
                   continuous=arrays["continuous"],
                   notes=arrays["notes"],
                   context=arrays["context"],
                   labels=arrays["labels"],
                   train_idx=arrays["train_idx"],
                   val_idx=arrays["val_idx"],
                   test_idx=arrays["test_idx"])
