"""Operation vocabulary for the block search space.

A branch picks one entry from each field vocabulary (normalization, layer,
relative output dim, activation); a block additionally picks a combiner.
Layer entries are the fixed 29-op table; the dim multipliers are configurable
because reasonable deployments disagree on them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class LayerOp:
    """One layer choice. Unused attributes stay None (e.g. heads for convs)."""

    name: str
    kernel: int | None = None
    reduction: int | None = None
    heads: int | None = None

    def label(self) -> str:
        parts = [self.name]
        if self.kernel is not None:
            parts.append(f"k{self.kernel}")
        if self.reduction is not None:
            parts.append(f"r{self.reduction}")
        if self.heads is not None:
            parts.append(f"h{self.heads}")
        return ":".join(parts)


def _default_layers() -> tuple[LayerOp, ...]:
    ops: list[LayerOp] = []
    ops += [LayerOp("conv", kernel=k) for k in (1, 3)]
    ops += [LayerOp("sep_conv", kernel=k) for k in (3, 5, 7, 9, 11)]
    ops += [
        LayerOp("light_conv", kernel=k, reduction=r)
        for k in (3, 5, 7, 15)
        for r in (1, 4, 16)
    ]
    ops += [LayerOp("attention", heads=h) for h in (4, 8, 16)]
    ops.append(LayerOp("glu"))
    ops += [LayerOp("max_pool", kernel=k) for k in (3, 5)]
    ops += [LayerOp("avg_pool", kernel=k) for k in (3, 5)]
    ops.append(LayerOp("identity"))
    ops.append(LayerOp("dead"))
    return tuple(ops)


NORMALIZATIONS: tuple[str, ...] = ("layer_norm", "batch_norm", "none")
ACTIVATIONS: tuple[str, ...] = ("relu", "leaky_relu", "swish", "none")
COMBINERS: tuple[str, ...] = ("add", "concat", "mul")
DEFAULT_DIMS: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)

# Layers that can change the branch width; the rest pass their input width on.
PROJECTING_LAYERS = frozenset({"conv", "sep_conv", "attention", "glu"})


@dataclass(frozen=True)
class Vocabulary:
    """Field vocabularies; genomes store indices into these tuples."""

    layers: tuple[LayerOp, ...] = field(default_factory=_default_layers)
    normalizations: tuple[str, ...] = NORMALIZATIONS
    activations: tuple[str, ...] = ACTIVATIONS
    combiners: tuple[str, ...] = COMBINERS
    dims: tuple[float, ...] = DEFAULT_DIMS

    def __post_init__(self) -> None:
        for group in (self.layers, self.normalizations, self.activations,
                      self.combiners, self.dims):
            if len(set(group)) != len(group):
                raise ValueError("vocabulary entries must be duplicate-free")
        if any(d <= 0 for d in self.dims):
            raise ValueError("dim multipliers must be positive")

    def layer_index(self, name: str, **attrs: int) -> int:
        """Index of the layer op matching name and all given attributes."""
        for i, op in enumerate(self.layers):
            if op.name != name:
                continue
            if all(getattr(op, k) == v for k, v in attrs.items()):
                return i
        raise KeyError(f"no layer op {name} with {attrs}")

    def norm_index(self, name: str) -> int:
        return self.normalizations.index(name)

    def activation_index(self, name: str) -> int:
        return self.activations.index(name)

    def combiner_index(self, name: str) -> int:
        return self.combiners.index(name)

    def dim_index(self, value: float) -> int:
        return self.dims.index(value)

    def fingerprint(self) -> str:
        """Stable content hash; stored in genome files and checked on load."""
        doc = {
            "layers": [[op.name, op.kernel, op.reduction, op.heads]
                       for op in self.layers],
            "normalizations": list(self.normalizations),
            "activations": list(self.activations),
            "combiners": list(self.combiners),
            "dims": list(self.dims),
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


DEFAULT_VOCABULARY = Vocabulary()
