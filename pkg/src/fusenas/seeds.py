"""Seed genomes: Transformer stacks wired for early, hybrid, or late fusion.

One Transformer layer spans three blocks: (norm -> attention) plus identity
residual, (norm -> 1x1 conv at x4 width -> relu), and (1x1 conv back to x1)
plus the residual from before the feed-forward. All seeds share one layout --
three blocks per modality plus max(2, M-1) + 3 fusion blocks -- so every seed
has the same maximum achievable depth.
"""

from __future__ import annotations

from .genome import FUSION, BlockGene, BranchGene, Genome, GenomeMeta, StateIndex, SpaceLayout
from .vocab import Vocabulary

SEED_KINDS = ("early", "hybrid", "late")


class _Ix:
    """Vocabulary indices the seeds need, resolved once."""

    def __init__(self, vocab: Vocabulary):
        self.ln = vocab.norm_index("layer_norm")
        self.no_norm = vocab.norm_index("none")
        self.attn = vocab.layer_index("attention", heads=8)
        self.conv1 = vocab.layer_index("conv", kernel=1)
        self.identity = vocab.layer_index("identity")
        self.dead = vocab.layer_index("dead")
        self.relu = vocab.activation_index("relu")
        self.no_act = vocab.activation_index("none")
        self.x1 = vocab.dim_index(1.0)
        self.x4 = vocab.dim_index(4.0)
        self.add = vocab.combiner_index("add")
        self.concat = vocab.combiner_index("concat")


def _transformer(ix: _Ix, s_in: int, s_a: int, s_b: int) -> list[BlockGene]:
    """Three blocks reading state s_in, whose outputs get states s_a, s_b, s_a+2."""
    attn = BlockGene(
        left=BranchGene(s_in, ix.ln, ix.attn, ix.x1, ix.no_act),
        right=BranchGene(s_in, ix.no_norm, ix.identity, ix.x1, ix.no_act),
        combiner=ix.add,
    )
    ffn_up = BlockGene(
        left=BranchGene(s_a, ix.ln, ix.conv1, ix.x4, ix.relu),
        right=BranchGene(s_a, ix.no_norm, ix.dead, ix.x1, ix.no_act),
        combiner=ix.add,
    )
    ffn_down = BlockGene(
        left=BranchGene(s_b, ix.no_norm, ix.conv1, ix.x1, ix.no_act),
        right=BranchGene(s_a, ix.no_norm, ix.identity, ix.x1, ix.no_act),
        combiner=ix.add,
    )
    return [attn, ffn_up, ffn_down]


def _passthrough(ix: _Ix, s_in: int) -> BlockGene:
    return BlockGene(
        left=BranchGene(s_in, ix.no_norm, ix.identity, ix.x1, ix.no_act),
        right=BranchGene(s_in, ix.no_norm, ix.dead, ix.x1, ix.no_act),
        combiner=ix.add,
    )


def _dead_block(ix: _Ix, s_in: int) -> BlockGene:
    return BlockGene(
        left=BranchGene(s_in, ix.no_norm, ix.dead, ix.x1, ix.no_act),
        right=BranchGene(s_in, ix.no_norm, ix.dead, ix.x1, ix.no_act),
        combiner=ix.add,
    )


def _fold_concat(ix: _Ix, s_left: int, s_right: int | None) -> BlockGene:
    """Concat two states; a missing right operand becomes a dead branch."""
    if s_right is None:
        right = BranchGene(s_left, ix.no_norm, ix.dead, ix.x1, ix.no_act)
    else:
        right = BranchGene(s_right, ix.no_norm, ix.identity, ix.x1, ix.no_act)
    return BlockGene(
        left=BranchGene(s_left, ix.no_norm, ix.identity, ix.x1, ix.no_act),
        right=right,
        combiner=ix.concat,
    )


def seed_layout(modalities: int) -> SpaceLayout:
    return SpaceLayout(modality_blocks=(3,) * modalities,
                       fusion_blocks=max(2, modalities - 1) + 3)


def seed_genome(kind: str, modalities: int, vocab: Vocabulary) -> Genome:
    """A Transformer seed with the requested fusion strategy."""
    if kind not in SEED_KINDS:
        raise ValueError(f"unknown seed kind {kind!r}; expected one of {SEED_KINDS}")
    if modalities < 1:
        raise ValueError("need at least one modality")
    ix = _Ix(vocab)
    layout = seed_layout(modalities)
    states = StateIndex.for_layout(layout)

    modality_lists: list[tuple[BlockGene, ...]] = []
    for m in range(modalities):
        emb = states.embedding_state(m)
        if kind == "early":
            blocks = [_passthrough(ix, emb + k) for k in range(3)]
        else:
            blocks = _transformer(ix, emb,
                                  states.block_state(m, 0),
                                  states.block_state(m, 1))
        modality_lists.append(tuple(blocks))

    finals = [states.block_state(m, 2) for m in range(modalities)]
    fusion: list[BlockGene] = []
    if kind == "late":
        fusion = [_dead_block(ix, finals[0])
                  for _ in range(layout.fusion_blocks)]
    else:
        folds = layout.fusion_blocks - 3
        prev = finals[0]
        for j in range(folds):
            other = finals[j + 1] if j + 1 < modalities else None
            fusion.append(_fold_concat(ix, prev, other))
            prev = states.fusion_state(j)
        fusion += _transformer(ix, prev,
                               states.fusion_state(folds),
                               states.fusion_state(folds + 1))

    return Genome(modality_blocks=tuple(modality_lists),
                  fusion_blocks=tuple(fusion),
                  meta=GenomeMeta(seed=kind, generation=0))


def unimodal_seed(vocab: Vocabulary, blocks: int = 8) -> Genome:
    """Single-stream seed: Transformer layers then pass-throughs, no fusion list.

    Meant for searches where all inputs are concatenated into one stream before
    the model; depth capacity matches the default multimodal layout.
    """
    if blocks < 3:
        raise ValueError("need at least one 3-block Transformer layer")
    ix = _Ix(vocab)
    out: list[BlockGene] = []
    s = 0
    while len(out) + 3 <= blocks:
        out += _transformer(ix, s, len(out) + 1, len(out) + 2)
        s = len(out)
    while len(out) < blocks:
        out.append(_passthrough(ix, s))
        s = len(out)
    return Genome(modality_blocks=(tuple(out),), fusion_blocks=(),
                  meta=GenomeMeta(seed="unimodal", generation=0))
