"""Finite-difference verification of tape gradients.

Central differences in float64 against the analytic backward pass. Errors are
reported as max over elements of |analytic - numeric| / max(1, |analytic|,
|numeric|), so tiny gradients are compared absolutely and large ones
relatively.
"""

from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from .autodiff import GradientTape, Tensor, mul, reduce_sum
from .compiler import ComputationGraph
from .executor import ParameterStore, forward_graph

LossBuilder = Callable[[Dict[str, Tensor], GradientTape], Tensor]


def finite_difference_check(build_loss: LossBuilder,
                            arrays: Dict[str, np.ndarray],
                            eps: float = 1e-5) -> Dict[str, float]:
    """Compare tape gradients of a scalar loss against central differences.

    ``build_loss`` must rebuild the loss from the given tensors on every
    call; ``arrays`` are perturbed in place and restored.
    """
    tape = GradientTape()
    tensors = {k: Tensor(v, tape) for k, v in arrays.items()}
    loss = build_loss(tensors, tape)
    tape.backward(loss)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}

    def evaluate() -> float:
        t2 = GradientTape()
        vals = {k: Tensor(v, t2) for k, v in arrays.items()}
        return float(build_loss(vals, t2).data)

    errors: Dict[str, float] = {}
    for name, base in arrays.items():
        flat = base.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = evaluate()
            flat[i] = orig - eps
            down = evaluate()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * eps)
        numeric = numeric.reshape(base.shape)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic[name]),
                                           np.abs(numeric)))
        gap = np.abs(analytic[name] - numeric) / denom
        errors[name] = float(gap.max()) if gap.size else 0.0
    return errors


def check_graph_gradients(graph: ComputationGraph, store: ParameterStore,
                          inputs: Sequence[np.ndarray], *,
                          eps: float = 1e-5, seed: int = 0) -> Dict[str, float]:
    """Check every parameter and every input of a compiled graph.

    The loss is a fixed random projection of the output so all output
    elements influence it. Expects a float64 store and float64 inputs.
    """
    arrays: Dict[str, np.ndarray] = {
        f"in{m}": np.asarray(x, dtype=np.float64)
        for m, x in enumerate(inputs)}
    arrays.update({f"P/{k}": v for k, v in store.params.items()})

    probe = forward_graph(graph, store, [arrays[f"in{m}"]
                                         for m in range(len(inputs))],
                          training=True, tape=None)
    proj = np.random.default_rng(seed).standard_normal(probe.data.shape)

    def build(tensors: Dict[str, Tensor], tape: GradientTape) -> Tensor:
        bound = {k[2:]: t for k, t in tensors.items() if k.startswith("P/")}
        ins = [tensors[f"in{m}"] for m in range(len(inputs))]
        out = forward_graph(graph, store, ins, training=True, tape=tape,
                            bound=bound)
        return reduce_sum(mul(out, proj))

    return finite_difference_check(build, arrays, eps=eps)
