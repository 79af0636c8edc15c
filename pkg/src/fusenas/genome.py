"""Genome encoding for the two-branch block search space.

A genome holds per-modality block lists plus a fusion block list. Every block
is 11 integer fields: two branches of (input state, normalization, layer,
relative output dim, activation) and a combiner. Branch inputs index a single
global state space: modality 0's states first (embedding, then block outputs),
then modality 1's, ..., then fusion block outputs. Modality blocks may only
reference their own modality's earlier states; fusion blocks may reference
every modality state plus earlier fusion states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .vocab import Vocabulary

FIELDS_PER_BLOCK = 11
FUSION = -1  # arch id for fusion blocks; modalities are 0..M-1


@dataclass(frozen=True)
class BranchGene:
    input_state: int
    normalization: int
    layer: int
    dim: int
    activation: int


@dataclass(frozen=True)
class BlockGene:
    left: BranchGene
    right: BranchGene
    combiner: int


@dataclass(frozen=True)
class GenomeMeta:
    seed: str
    generation: int


@dataclass(frozen=True)
class Genome:
    modality_blocks: tuple[tuple[BlockGene, ...], ...]
    fusion_blocks: tuple[BlockGene, ...]
    meta: GenomeMeta = GenomeMeta(seed="custom", generation=0)

    @property
    def num_modalities(self) -> int:
        return len(self.modality_blocks)

    @property
    def num_blocks(self) -> int:
        return sum(len(b) for b in self.modality_blocks) + len(self.fusion_blocks)

    @property
    def num_fields(self) -> int:
        return FIELDS_PER_BLOCK * self.num_blocks


@dataclass(frozen=True)
class SpaceLayout:
    """Block counts only; enough to size the search space."""

    modality_blocks: tuple[int, ...]
    fusion_blocks: int


@dataclass(frozen=True)
class StateIndex:
    """Global state numbering for a given layout.

    Modality i owns states base[i] .. base[i] + n_i (embedding plus one output
    per block); fusion block j's output is state fusion_start + j.
    """

    bases: tuple[int, ...]
    counts: tuple[int, ...]  # states per modality, n_i + 1
    fusion_start: int

    @classmethod
    def for_layout(cls, layout: SpaceLayout) -> "StateIndex":
        bases: list[int] = []
        pos = 0
        for n in layout.modality_blocks:
            bases.append(pos)
            pos += n + 1
        return cls(bases=tuple(bases),
                   counts=tuple(n + 1 for n in layout.modality_blocks),
                   fusion_start=pos)

    def embedding_state(self, modality: int) -> int:
        return self.bases[modality]

    def block_state(self, modality: int, block: int) -> int:
        return self.bases[modality] + 1 + block

    def fusion_state(self, block: int) -> int:
        return self.fusion_start + block

    def owner(self, state: int) -> int:
        """Arch id owning a state: modality index, or FUSION."""
        if state >= self.fusion_start:
            return FUSION
        for i, base in enumerate(self.bases):
            if base <= state < base + self.counts[i]:
                return i
        raise ValueError(f"state {state} out of range")

    def input_range(self, arch: int, block: int) -> tuple[int, int]:
        """Legal input states for a block, as an inclusive (lo, hi) range."""
        if arch == FUSION:
            return 0, self.fusion_start + block - 1
        return self.bases[arch], self.bases[arch] + block


def layout_of(genome: Genome) -> SpaceLayout:
    return SpaceLayout(
        modality_blocks=tuple(len(b) for b in genome.modality_blocks),
        fusion_blocks=len(genome.fusion_blocks),
    )


def state_index(genome: Genome) -> StateIndex:
    return StateIndex.for_layout(layout_of(genome))


def iter_blocks(genome: Genome) -> Iterator[tuple[int, int, BlockGene]]:
    """Blocks in canonical order as (arch id, block index, gene)."""
    for m, blocks in enumerate(genome.modality_blocks):
        for k, block in enumerate(blocks):
            yield m, k, block
    for k, block in enumerate(genome.fusion_blocks):
        yield FUSION, k, block


def linearize(genome: Genome) -> tuple[int, ...]:
    """Fixed field order per block: left branch, right branch, combiner."""
    out: list[int] = []
    for _, _, block in iter_blocks(genome):
        for br in (block.left, block.right):
            out += [br.input_state, br.normalization, br.layer, br.dim,
                    br.activation]
        out.append(block.combiner)
    return tuple(out)


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    kind: str       # "vocab" | "cross_modality" | "nonexistent_state"
    where: str      # e.g. "m0.block1.left.layer"
    detail: str


def _check_branch(br: BranchGene, where: str, arch: int, lo: int, hi: int,
                  vocab: Vocabulary, idx: StateIndex,
                  out: list[Violation]) -> None:
    ranges = {
        "normalization": (br.normalization, len(vocab.normalizations)),
        "layer": (br.layer, len(vocab.layers)),
        "dim": (br.dim, len(vocab.dims)),
        "activation": (br.activation, len(vocab.activations)),
    }
    for name, (value, size) in ranges.items():
        if not 0 <= value < size:
            out.append(Violation("vocab", f"{where}.{name}",
                                 f"index {value} outside vocabulary of {size}"))
    s = br.input_state
    if lo <= s <= hi:
        return
    total = idx.fusion_start  # fusion states are bounded per-block by hi
    if arch != FUSION and 0 <= s < total and idx.owner(s) != arch:
        owner = idx.owner(s)
        label = "fusion" if owner == FUSION else f"modality {owner}"
        out.append(Violation("cross_modality", f"{where}.input",
                             f"state {s} belongs to {label}"))
    else:
        out.append(Violation("nonexistent_state", f"{where}.input",
                             f"state {s} not produced yet (legal {lo}..{hi})"))


def validate(genome: Genome, vocab: Vocabulary) -> list[Violation]:
    """Every constraint violation in the genome; empty iff legal."""
    idx = state_index(genome)
    out: list[Violation] = []
    for arch, k, block in iter_blocks(genome):
        name = "fusion" if arch == FUSION else f"m{arch}"
        where = f"{name}.block{k}"
        lo, hi = idx.input_range(arch, k)
        _check_branch(block.left, f"{where}.left", arch, lo, hi, vocab, idx, out)
        _check_branch(block.right, f"{where}.right", arch, lo, hi, vocab, idx, out)
        if not 0 <= block.combiner < len(vocab.combiners):
            out.append(Violation("vocab", f"{where}.combiner",
                                 f"index {block.combiner} outside vocabulary of "
                                 f"{len(vocab.combiners)}"))
    return out


# ---------------------------------------------------------------------------
# mutation

def _resample(current: int, lo: int, hi: int, rng: np.random.Generator) -> int:
    """Uniform draw from lo..hi excluding current; identity if no alternative."""
    size = hi - lo + 1
    if size <= 1:
        return current
    pick = int(rng.integers(size - 1))
    if pick >= current - lo:
        pick += 1
    return lo + pick


def mutate_traced(genome: Genome, rate: float,
                  rng: np.random.Generator,
                  vocab: Vocabulary) -> tuple[Genome, tuple[int, ...]]:
    """Mutate and report which linear fields were hit by the per-field draw.

    Every field flips independently with probability `rate`; a flipped field
    resamples uniformly over its legal values excluding the current one.
    Fields with a single legal value (each modality's block-0 inputs) stay
    unchanged even when hit. The flip trace is what mutation-rate statistics
    are measured on.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mutation rate {rate} outside [0, 1]")
    idx = state_index(genome)
    hits = rng.random(genome.num_fields) < rate
    flipped: list[int] = []
    pos = 0

    def branch(br: BranchGene, arch: int, k: int) -> BranchGene:
        nonlocal pos
        lo, hi = idx.input_range(arch, k)
        values = [br.input_state, br.normalization, br.layer, br.dim,
                  br.activation]
        domains = [(lo, hi),
                   (0, len(vocab.normalizations) - 1),
                   (0, len(vocab.layers) - 1),
                   (0, len(vocab.dims) - 1),
                   (0, len(vocab.activations) - 1)]
        for i, (d_lo, d_hi) in enumerate(domains):
            if hits[pos]:
                flipped.append(pos)
                values[i] = _resample(values[i], d_lo, d_hi, rng)
            pos += 1
        return BranchGene(*values)

    new_mod: list[tuple[BlockGene, ...]] = []
    new_fus: list[BlockGene] = []
    for arch, blocks in [*enumerate(genome.modality_blocks),
                         (FUSION, genome.fusion_blocks)]:
        rebuilt: list[BlockGene] = []
        for k, block in enumerate(blocks):
            left = branch(block.left, arch, k)
            right = branch(block.right, arch, k)
            combiner = block.combiner
            if hits[pos]:
                flipped.append(pos)
                combiner = _resample(combiner, 0, len(vocab.combiners) - 1, rng)
            pos += 1
            rebuilt.append(BlockGene(left, right, combiner))
        if arch == FUSION:
            new_fus = rebuilt
        else:
            new_mod.append(tuple(rebuilt))

    child = Genome(
        modality_blocks=tuple(new_mod),
        fusion_blocks=tuple(new_fus),
        meta=replace(genome.meta, generation=genome.meta.generation + 1),
    )
    return child, tuple(flipped)


def mutate(genome: Genome, rate: float, rng: np.random.Generator,
           vocab: Vocabulary) -> Genome:
    return mutate_traced(genome, rate, rng, vocab)[0]


# ---------------------------------------------------------------------------
# cardinality

def branch_choices(num_inputs: int, vocab: Vocabulary) -> int:
    return (num_inputs * len(vocab.normalizations) * len(vocab.layers)
            * len(vocab.dims) * len(vocab.activations))


def block_cardinality(num_inputs: int, vocab: Vocabulary) -> int:
    """Encodable settings of one block whose branches see num_inputs states."""
    return len(vocab.combiners) * branch_choices(num_inputs, vocab) ** 2


def cardinality(layout: SpaceLayout, vocab: Vocabulary) -> int:
    """Exact number of encodable genomes for a layout (Python int, no overflow)."""
    idx = StateIndex.for_layout(layout)
    total = 1
    for m, n in enumerate(layout.modality_blocks):
        for k in range(n):
            lo, hi = idx.input_range(m, k)
            total *= block_cardinality(hi - lo + 1, vocab)
    for k in range(layout.fusion_blocks):
        lo, hi = idx.input_range(FUSION, k)
        total *= block_cardinality(hi - lo + 1, vocab)
    return total


# ---------------------------------------------------------------------------
# serialization

FORMAT_NAME = "fusenas-genome"
FORMAT_VERSION = 1


def _branch_doc(br: BranchGene) -> dict:
    return {"input": br.input_state, "norm": br.normalization,
            "layer": br.layer, "dim": br.dim, "activation": br.activation}


def _block_doc(block: BlockGene) -> dict:
    return {"left": _branch_doc(block.left), "right": _branch_doc(block.right),
            "combiner": block.combiner}


def _branch_from(doc: dict) -> BranchGene:
    return BranchGene(input_state=doc["input"], normalization=doc["norm"],
                      layer=doc["layer"], dim=doc["dim"],
                      activation=doc["activation"])


def _block_from(doc: dict) -> BlockGene:
    return BlockGene(left=_branch_from(doc["left"]),
                     right=_branch_from(doc["right"]),
                     combiner=doc["combiner"])


def genome_to_text(genome: Genome, vocab: Vocabulary) -> str:
    """Canonical self-describing text form; round-trips bit-exactly."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "vocabulary": vocab.fingerprint(),
        "seed": genome.meta.seed,
        "generation": genome.meta.generation,
        "modalities": [[_block_doc(b) for b in blocks]
                       for blocks in genome.modality_blocks],
        "fusion": [_block_doc(b) for b in genome.fusion_blocks],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def genome_from_text(text: str, vocab: Vocabulary) -> Genome:
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported genome format version {doc.get('version')}")
    if doc.get("vocabulary") != vocab.fingerprint():
        raise ValueError("genome was written under a different vocabulary")
    return Genome(
        modality_blocks=tuple(tuple(_block_from(b) for b in blocks)
                              for blocks in doc["modalities"]),
        fusion_blocks=tuple(_block_from(b) for b in doc["fusion"]),
        meta=GenomeMeta(seed=doc["seed"], generation=doc["generation"]),
    )
