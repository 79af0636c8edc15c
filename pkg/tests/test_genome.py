"""Search-space encoding: vocabulary, validation, mutation, cardinality."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusenas.genome import (
    FUSION,
    BlockGene,
    BranchGene,
    Genome,
    GenomeMeta,
    SpaceLayout,
    StateIndex,
    block_cardinality,
    branch_choices,
    cardinality,
    genome_from_text,
    genome_to_text,
    layout_of,
    linearize,
    mutate,
    mutate_traced,
    state_index,
    validate,
)
from fusenas.seeds import seed_genome, seed_layout, unimodal_seed
from fusenas.vocab import DEFAULT_VOCABULARY, Vocabulary

V = DEFAULT_VOCABULARY

# Field counts recomputed from the documented vocabulary groups, independent of
# the implementation's tables.
N_LAYERS = 2 + 5 + 12 + 3 + 1 + 2 + 2 + 1 + 1
N_NORMS = 3
N_ACTS = 4
N_DIMS = 4
N_COMBINERS = 3
BRANCH_ONE_INPUT = 1 * N_NORMS * N_LAYERS * N_DIMS * N_ACTS


def test_vocabulary_has_29_layer_entries():
    assert len(V.layers) == 29 == N_LAYERS
    assert len(set(V.layers)) == 29


def test_vocabulary_fingerprint_tracks_content():
    assert V.fingerprint() == Vocabulary().fingerprint()
    other = Vocabulary(dims=(0.25, 0.5, 1.0, 2.0, 4.0))
    assert other.fingerprint() != V.fingerprint()


def test_branch_and_block_cardinality_frozen_values():
    # Oracle: 2 * 3 * 29 * 4 * 4 = 2784 choices per branch with two legal
    # inputs; a block squares that and multiplies by the 3 combiners.
    assert BRANCH_ONE_INPUT == 1392
    assert branch_choices(2, V) == 2 * 1392 == 2784
    assert block_cardinality(2, V) == 3 * 2784**2 == 23_251_968


def test_cardinality_empty_layout_is_one():
    assert cardinality(SpaceLayout((), 0), V) == 1
    assert cardinality(SpaceLayout((0, 0), 0), V) == 1


def test_cardinality_block_appends_multiply():
    base = cardinality(SpaceLayout((1,), 0), V)
    # Appending one fusion block multiplies by that block's own choice count:
    # its branches see the modality's 2 states, so 2 legal inputs.
    bigger = cardinality(SpaceLayout((1,), 1), V)
    assert base == block_cardinality(1, V)
    assert bigger == base * block_cardinality(2, V)


def test_cardinality_default_layout_product_oracle():
    layout = seed_layout(3)
    expected = 1
    for _, n_inputs in _default_layout_input_counts():
        expected *= 3 * (n_inputs * N_NORMS * N_LAYERS * N_DIMS * N_ACTS) ** 2
    assert cardinality(layout, V) == expected
    assert expected > 10**23  # strictly larger than the coarser published figure


def _default_layout_input_counts():
    # 3 modalities x 3 blocks: block k sees k+1 states; 5 fusion blocks see
    # 12 modality states plus earlier fusion outputs.
    out = []
    for m in range(3):
        for k in range(3):
            out.append(((m, k), k + 1))
    for j in range(5):
        out.append(((FUSION, j), 12 + j))
    return out


def test_state_index_global_numbering():
    idx = StateIndex.for_layout(seed_layout(3))
    assert idx.bases == (0, 4, 8)
    assert idx.fusion_start == 12
    assert idx.embedding_state(1) == 4
    assert idx.block_state(2, 2) == 11
    assert idx.fusion_state(4) == 16
    assert idx.owner(7) == 1
    assert idx.owner(12) == FUSION
    assert idx.input_range(0, 0) == (0, 0)
    assert idx.input_range(2, 1) == (8, 9)
    assert idx.input_range(FUSION, 3) == (0, 14)


def test_seed_genomes_have_fixed_layout_and_154_fields():
    for kind in ("early", "hybrid", "late"):
        g = seed_genome(kind, 3, V)
        assert layout_of(g) == SpaceLayout((3, 3, 3), 5)
        assert g.num_fields == 154
        assert len(linearize(g)) == 154
        assert validate(g, V) == []
        assert g.meta == GenomeMeta(seed=kind, generation=0)


@pytest.mark.parametrize("kind", ["early", "hybrid", "late"])
@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_seed_genomes_validate_for_all_modality_counts(kind, m):
    g = seed_genome(kind, m, V)
    assert validate(g, V) == []
    assert g.num_modalities == m


def test_unimodal_seed_shape():
    g = unimodal_seed(V)
    assert layout_of(g) == SpaceLayout((8,), 0)
    assert g.num_fields == 88
    assert validate(g, V) == []


def test_linearize_field_order():
    g = seed_genome("hybrid", 3, V)
    first = g.modality_blocks[0][0]
    fields = linearize(g)[:11]
    assert fields == (
        first.left.input_state, first.left.normalization, first.left.layer,
        first.left.dim, first.left.activation,
        first.right.input_state, first.right.normalization, first.right.layer,
        first.right.dim, first.right.activation,
        first.combiner,
    )


def test_validate_reports_cross_modality_reference():
    g = seed_genome("hybrid", 3, V)
    blocks = list(g.modality_blocks[0])
    bad = blocks[1]
    # modality-1 owns states 4..7; point modality-0's block at one of them
    blocks[1] = BlockGene(
        left=BranchGene(5, bad.left.normalization, bad.left.layer,
                        bad.left.dim, bad.left.activation),
        right=bad.right,
        combiner=bad.combiner,
    )
    broken = Genome((tuple(blocks),) + g.modality_blocks[1:], g.fusion_blocks,
                    g.meta)
    issues = validate(broken, V)
    assert len(issues) == 1
    assert issues[0].kind == "cross_modality"
    assert "m0.block1.left" in issues[0].where


def test_validate_reports_out_of_range_vocabulary_index():
    g = seed_genome("early", 2, V)
    b = g.fusion_blocks[0]
    bad = BlockGene(
        left=BranchGene(b.left.input_state, b.left.normalization, 29,
                        b.left.dim, b.left.activation),
        right=b.right, combiner=b.combiner)
    broken = Genome(g.modality_blocks, (bad,) + g.fusion_blocks[1:], g.meta)
    issues = validate(broken, V)
    assert [i.kind for i in issues] == ["vocab"]
    assert "layer" in issues[0].where


def test_validate_reports_nonexistent_fusion_state():
    g = seed_genome("early", 3, V)
    b = g.fusion_blocks[0]
    # fusion block 0 may reference states 0..11 only
    bad = BlockGene(
        left=BranchGene(16, b.left.normalization, b.left.layer, b.left.dim,
                        b.left.activation),
        right=b.right, combiner=b.combiner)
    broken = Genome(g.modality_blocks, (bad,) + g.fusion_blocks[1:], g.meta)
    issues = validate(broken, V)
    assert [i.kind for i in issues] == ["nonexistent_state"]


def test_validate_reports_forward_reference_within_modality():
    g = seed_genome("hybrid", 3, V)
    blocks = list(g.modality_blocks[0])
    b = blocks[0]
    blocks[0] = BlockGene(
        left=BranchGene(3, b.left.normalization, b.left.layer, b.left.dim,
                        b.left.activation),
        right=b.right, combiner=b.combiner)
    broken = Genome((tuple(blocks),) + g.modality_blocks[1:], g.fusion_blocks,
                    g.meta)
    issues = validate(broken, V)
    assert [i.kind for i in issues] == ["nonexistent_state"]


def test_mutate_rate_zero_is_identity_on_encoding():
    g = seed_genome("hybrid", 3, V)
    child = mutate(g, 0.0, np.random.default_rng(0), V)
    assert linearize(child) == linearize(g)
    assert child.meta.generation == 1


def test_mutate_rate_one_changes_every_field_with_an_alternative():
    g = seed_genome("hybrid", 3, V)
    child, flips = mutate_traced(g, 1.0, np.random.default_rng(7), V)
    assert len(flips) == 154
    before, after = linearize(g), linearize(child)
    idx = state_index(g)
    frozen = []
    pos = 0
    for arch, k, _ in _iter_block_refs(g):
        lo, hi = idx.input_range(arch, k)
        single = hi == lo
        for field in range(11):
            is_input = field in (0, 5)
            if is_input and single:
                frozen.append(pos)
            pos += 1
    for i, (a, b) in enumerate(zip(before, after)):
        if i in frozen:
            assert a == b
        else:
            assert a != b
    # the default layout has exactly 6 single-choice fields (block-0 inputs)
    assert len(frozen) == 6


def _iter_block_refs(g):
    for m, blocks in enumerate(g.modality_blocks):
        for k, b in enumerate(blocks):
            yield m, k, b
    for k, b in enumerate(g.fusion_blocks):
        yield FUSION, k, b


def test_mutate_is_deterministic_given_seed():
    g = seed_genome("early", 3, V)
    a = mutate(g, 0.3, np.random.default_rng(123), V)
    b = mutate(g, 0.3, np.random.default_rng(123), V)
    c = mutate(g, 0.3, np.random.default_rng(124), V)
    assert linearize(a) == linearize(b)
    assert linearize(a) != linearize(c)


def test_mutate_flip_count_matches_binomial_mean():
    # Quick Monte-Carlo check; the acceptance suite runs the precise version.
    g = seed_genome("hybrid", 3, V)
    rng = np.random.default_rng(42)
    rate = 0.01875
    n = 20_000
    total = sum(len(mutate_traced(g, rate, rng, V)[1]) for _ in range(n))
    mean = total / n
    expect = 154 * rate
    sigma = (154 * rate * (1 - rate) / n) ** 0.5
    assert abs(mean - expect) < 4 * sigma


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(["early", "hybrid", "late"]),
    m=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    rate=st.floats(min_value=0.0, max_value=1.0),
)
def test_mutated_genomes_always_validate(kind, m, seed, rate):
    g = seed_genome(kind, m, V)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        g = mutate(g, rate, rng, V)
        assert validate(g, V) == []


@settings(max_examples=40, deadline=None)
@given(
    kind=st.sampled_from(["early", "hybrid", "late"]),
    m=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=2**32 - 1),
)
def test_serialization_round_trip(kind, m, seed):
    g = seed_genome(kind, m, V)
    g = mutate(g, 0.2, np.random.default_rng(seed), V)
    text = genome_to_text(g, V)
    back = genome_from_text(text, V)
    assert back == g
    assert genome_to_text(back, V) == text


def test_serialized_genome_is_self_describing():
    doc = json.loads(genome_to_text(seed_genome("late", 2, V), V))
    assert doc["format"] == "fusenas-genome"
    assert doc["vocabulary"] == V.fingerprint()
    assert doc["seed"] == "late"
    assert len(doc["modalities"]) == 2


def test_deserialization_rejects_other_vocabulary():
    text = genome_to_text(seed_genome("early", 1, V), V)
    other = Vocabulary(dims=(1.0, 2.0))
    with pytest.raises(ValueError, match="vocabulary"):
        genome_from_text(text, other)


def test_mutation_rejects_bad_rate():
    g = seed_genome("early", 1, V)
    with pytest.raises(ValueError):
        mutate(g, 1.5, np.random.default_rng(0), V)
