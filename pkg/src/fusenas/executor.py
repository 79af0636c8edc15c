"""Run compiled graphs: parameter storage, initialization, forward pass.

Parameter shapes are derived here from each node's op and widths, a second
route independent of the compiler's count formulas; ``build_store`` fails
loudly if the two disagree.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import binio, ops
from .autodiff import GradientTape, Tensor, add, concat
from .compiler import ComputationGraph, NodeSpec

INIT_STD = 0.02


def _seed_for(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...],
                     std: float, dtype) -> np.ndarray:
    """Normal(0, std) with draws beyond two deviations resampled."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


@dataclass
class ParameterStore:
    """Named parameter arrays plus gradient slots and untrained buffers."""

    dtype: np.dtype = np.dtype(np.float32)
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)
    grads: Dict[str, Optional[np.ndarray]] = field(default_factory=dict)

    def parameter_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def zero_grads(self) -> None:
        for name in self.grads:
            self.grads[name] = None

    def bind(self, tape: GradientTape) -> Dict[str, Tensor]:
        """Wrap every parameter in a tape-tracked tensor for one step."""
        return {name: Tensor(arr, tape) for name, arr in self.params.items()}

    def collect_grads(self, bound: Dict[str, Tensor]) -> None:
        for name, t in bound.items():
            g = t.grad
            if g is None:
                g = np.zeros_like(self.params[name])
            self.grads[name] = g


def _param_specs(node: NodeSpec, in_width: int):
    """(name, shape, init) triples for one node; init is normal/ones/zeros."""
    op, w = node.op, node.out_width
    if node.kind == "norm":
        return [("gamma", (w,), "ones"), ("beta", (w,), "zeros")]
    if op == "conv":
        k = node.attrs["kernel"]
        return [("W", (k * in_width, w), "normal"), ("b", (w,), "zeros")]
    if op == "sep_conv":
        k = node.attrs["kernel"]
        return [("depth", (k, in_width), "normal"),
                ("point", (in_width, w), "normal"), ("b", (w,), "zeros")]
    if op == "light_conv":
        return [("kernels", (node.attrs["reduction"], node.attrs["kernel"]),
                 "normal")]
    if op == "attention":
        return [("wq", (in_width, w), "normal"), ("wk", (in_width, w), "normal"),
                ("wv", (in_width, w), "normal"), ("wo", (w, w), "normal")]
    if op == "glu":
        return [("W", (in_width, w), "normal"), ("V", (in_width, w), "normal")]
    return []


def _buffer_specs(node: NodeSpec):
    if node.kind == "norm" and node.op == "batch_norm":
        w = node.out_width
        return [("running_mean", (w,), "zeros"), ("running_var", (w,), "ones")]
    return []


def build_store(graph: ComputationGraph, seed: int,
                dtype=np.float32) -> ParameterStore:
    store = ParameterStore(dtype=np.dtype(dtype))
    for node in graph.nodes:
        in_width = graph.nodes[node.preds[0]].out_width if node.preds else 0
        declared = 0
        for pname, shape, init in _param_specs(node, in_width):
            name = f"node{node.id:03d}/{pname}"
            if init == "normal":
                arr = truncated_normal(_seed_for(seed, name), shape,
                                       INIT_STD, store.dtype)
            elif init == "ones":
                arr = np.ones(shape, dtype=store.dtype)
            else:
                arr = np.zeros(shape, dtype=store.dtype)
            store.params[name] = arr
            store.grads[name] = None
            declared += int(arr.size)
        if declared != node.params:
            raise RuntimeError(
                f"parameter accounting mismatch at node {node.id} "
                f"({node.op}): store {declared}, graph {node.params}")
        for bname, shape, init in _buffer_specs(node):
            name = f"node{node.id:03d}/{bname}"
            store.buffers[name] = (np.ones(shape, dtype=store.dtype)
                                   if init == "ones"
                                   else np.zeros(shape, dtype=store.dtype))
    if store.parameter_count() != graph.parameter_count:
        raise RuntimeError("parameter accounting mismatch for graph total")
    return store


def forward_graph(graph: ComputationGraph, store: ParameterStore,
                  inputs: Sequence[Union[Tensor, np.ndarray]], *,
                  training: bool, tape: Optional[GradientTape] = None,
                  bound: Optional[Dict[str, Tensor]] = None) -> Tensor:
    """Evaluate the graph on per-modality embedded sequences (b, t, w_m)."""
    if len(inputs) != len(graph.input_widths):
        raise ValueError("one input sequence per modality required")
    if bound is None:
        bound = store.bind(tape) if tape is not None else {
            name: Tensor(arr) for name, arr in store.params.items()}

    def param(node_id: int, pname: str) -> Tensor:
        return bound[f"node{node_id:03d}/{pname}"]

    values: Dict[int, Tensor] = {}
    for node in graph.nodes:
        preds = [values[q] for q in node.preds]
        if node.kind == "input":
            x = inputs[node.attrs["modality"]]
            if not isinstance(x, Tensor):
                x = Tensor(np.asarray(x, dtype=store.dtype), tape)
            signal = ops.positional_signal(x.shape[1], x.shape[2],
                                           dtype=store.dtype)
            values[node.id] = add(x, signal)
        elif node.kind == "norm":
            if node.op == "layer_norm":
                values[node.id] = ops.layer_norm(
                    preds[0], param(node.id, "gamma"), param(node.id, "beta"))
            else:
                prefix = f"node{node.id:03d}"
                values[node.id] = ops.batch_norm(
                    preds[0], param(node.id, "gamma"), param(node.id, "beta"),
                    store.buffers[f"{prefix}/running_mean"],
                    store.buffers[f"{prefix}/running_var"],
                    training=training)
        elif node.kind == "layer":
            values[node.id] = _run_layer(node, preds[0], param)
        elif node.kind == "act":
            values[node.id] = ops.ACTIVATIONS[node.op](preds[0])
        elif node.kind == "combine":
            values[node.id] = ops.combine(preds, node.op,
                                          pad_to=node.out_width
                                          if node.op != "concat" else None)
        elif node.kind == "output":
            values[node.id] = (concat(preds, axis=-1)
                               if len(preds) > 1 else preds[0])
        else:
            raise ValueError(f"unknown node kind {node.kind!r}")
    return values[graph.output_id]


def _run_layer(node: NodeSpec, x: Tensor, param) -> Tensor:
    op = node.op
    if op == "identity":
        return x
    if op == "conv":
        return ops.conv(x, param(node.id, "W"), param(node.id, "b"),
                        node.attrs["kernel"])
    if op == "sep_conv":
        return ops.separable_conv(x, param(node.id, "depth"),
                                  param(node.id, "point"), param(node.id, "b"),
                                  node.attrs["kernel"])
    if op == "light_conv":
        return ops.light_conv(x, param(node.id, "kernels"),
                              node.attrs["kernel"], node.attrs["reduction"])
    if op == "attention":
        return ops.attention(x, param(node.id, "wq"), param(node.id, "wk"),
                             param(node.id, "wv"), param(node.id, "wo"),
                             node.attrs["heads"])
    if op == "glu":
        return ops.glu(x, param(node.id, "W"), param(node.id, "V"))
    if op == "max_pool":
        return ops.max_pool(x, node.attrs["kernel"])
    if op == "avg_pool":
        return ops.avg_pool(x, node.attrs["kernel"])
    raise ValueError(f"unknown layer op {op!r}")


def save_store(store: ParameterStore, path: str) -> None:
    arrays = {f"P/{k}": v for k, v in store.params.items()}
    arrays.update({f"B/{k}": v for k, v in store.buffers.items()})
    binio.write_arrays(path, arrays)


def load_store(path: str) -> ParameterStore:
    arrays = binio.read_arrays(path)
    store = ParameterStore()
    for name, arr in arrays.items():
        kind, _, key = name.partition("/")
        if kind == "P":
            store.params[key] = arr
            store.grads[key] = None
        elif kind == "B":
            store.buffers[key] = arr
        else:
            raise ValueError(f"unexpected entry {name!r}")
    if store.params:
        store.dtype = next(iter(store.params.values())).dtype
    return store
