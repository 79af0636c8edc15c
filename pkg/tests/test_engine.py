"""Tensor engine: serialization, tape mechanics, gradients, graph execution."""

import io

import numpy as np
import pytest

from fusenas import binio
from fusenas.autodiff import (
    GradientTape,
    Tensor,
    add,
    bmm,
    concat,
    embedding_lookup,
    matmul2,
    mul,
    pad_last,
    reduce_max,
    reduce_mean,
    reduce_sum,
    softmax,
    transpose,
    unfold_time,
)
from fusenas.compiler import compile_genome
from fusenas.executor import (
    build_store,
    forward_graph,
    load_store,
    save_store,
    truncated_normal,
)
from fusenas.genome import BlockGene, BranchGene, Genome, mutate
from fusenas.gradcheck import check_graph_gradients, finite_difference_check
from fusenas.ops import positional_signal
from fusenas.seeds import seed_genome
from fusenas.vocab import DEFAULT_VOCABULARY

V = DEFAULT_VOCABULARY


# ---------------------------------------------------------------------------
# binary container

def test_binio_round_trip_and_byte_identical():
    rng = np.random.default_rng(0)
    arrays = {
        "alpha/W": rng.standard_normal((3, 4)).astype(np.float32),
        "alpha/b": rng.standard_normal(5),
        "ids": np.arange(7, dtype=np.int64),
        "flags": np.array([1, 0, 255], dtype=np.uint8),
        "scalarish": np.array(3.25, dtype=np.float32),
    }
    buf1, buf2 = io.BytesIO(), io.BytesIO()
    binio.write_block(buf1, arrays)
    binio.write_block(buf2, arrays)
    assert buf1.getvalue() == buf2.getvalue()

    buf1.seek(0)
    back = binio.read_block(buf1)
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        np.testing.assert_array_equal(back[k], arrays[k])


def test_binio_file_magic(tmp_path):
    path = str(tmp_path / "x.bin")
    binio.write_arrays(path, {"a": np.zeros(2, dtype=np.float32)})
    assert open(path, "rb").read(6) == b"FNAB1\n"
    with open(path, "r+b") as fh:
        fh.write(b"XXXXX\n")
    with pytest.raises(ValueError):
        binio.read_arrays(path)


def test_binio_truncated_payload(tmp_path):
    path = str(tmp_path / "x.bin")
    binio.write_arrays(path, {"a": np.arange(8, dtype=np.float64)})
    blob = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(blob[:-4])
    with pytest.raises(ValueError):
        binio.read_arrays(path)


# ---------------------------------------------------------------------------
# tape mechanics

def test_fanout_gradient_accumulates():
    tape = GradientTape()
    x = Tensor(np.array([1.5, -2.0, 0.25]), tape)
    y = add(mul(x, x), x)  # y = x^2 + x
    tape.backward(reduce_sum(y))
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0)


def test_backward_misuse_raises():
    tape = GradientTape()
    with pytest.raises(RuntimeError, match="before any"):
        tape.backward(Tensor(np.array(1.0), tape))

    tape = GradientTape()
    x = Tensor(np.ones(3), tape)
    y = reduce_sum(mul(x, x))
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(mul(x, x))
    tape.backward(y)
    with pytest.raises(RuntimeError, match="already"):
        tape.backward(y)


def test_float32_stays_float32():
    tape = GradientTape()
    x = Tensor(np.ones((2, 3, 4), dtype=np.float32), tape)
    y = reduce_mean(mul(x, 0.5), axis=(0, 1), keepdims=True)
    assert y.dtype == np.float32
    tape.backward(reduce_sum(y))
    assert x.grad.dtype == np.float32


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(3).standard_normal((4, 7)) * 30)
    s = softmax(x, axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(4), atol=1e-12)
    assert np.isfinite(s.data).all()


# ---------------------------------------------------------------------------
# primitive gradients against central differences

def _loss_cases():
    rng = np.random.default_rng(11)

    def c(name, build, **arrays):
        return pytest.param(build, arrays, id=name)

    return [
        c("add_broadcast",
          lambda t, tape: reduce_sum(mul(add(t["a"], t["b"]), t["a"])),
          a=rng.standard_normal((3, 4)), b=rng.standard_normal((1, 4))),
        c("matmul2",
          lambda t, tape: reduce_sum(mul(matmul2(t["x"], t["w"]), 1.3)),
          x=rng.standard_normal((2, 3, 4)), w=rng.standard_normal((4, 5))),
        c("bmm",
          lambda t, tape: reduce_sum(bmm(t["a"], t["b"])),
          a=rng.standard_normal((3, 2, 4)), b=rng.standard_normal((3, 4, 2))),
        c("softmax_proj",
          lambda t, tape: reduce_sum(mul(softmax(t["x"], axis=-1), t["p"])),
          x=rng.standard_normal((2, 5)), p=rng.standard_normal((2, 5))),
        c("unfold_short_kernel",
          lambda t, tape: reduce_sum(mul(unfold_time(t["x"], 3), t["p"])),
          x=rng.standard_normal((2, 5, 3)), p=rng.standard_normal((2, 5, 3, 3))),
        c("unfold_kernel_longer_than_sequence",
          lambda t, tape: reduce_sum(mul(unfold_time(t["x"], 7), t["p"])),
          x=rng.standard_normal((1, 4, 2)), p=rng.standard_normal((1, 4, 7, 2))),
        c("reduce_max",
          lambda t, tape: reduce_sum(mul(reduce_max(t["x"], axis=1), t["p"])),
          x=rng.standard_normal((2, 4, 3)), p=rng.standard_normal((2, 3))),
        c("embedding",
          lambda t, tape: reduce_sum(
              mul(embedding_lookup(t["tab"], np.array([0, 2, 2, 1])), t["p"])),
          tab=rng.standard_normal((3, 4)), p=rng.standard_normal((4, 4))),
        c("concat_pad",
          lambda t, tape: reduce_sum(
              mul(concat([pad_last(t["a"], 5), t["b"]], axis=-1), t["p"])),
          a=rng.standard_normal((2, 3)), b=rng.standard_normal((2, 4)),
          p=rng.standard_normal((2, 9))),
        c("transpose_chain",
          lambda t, tape: reduce_sum(
              mul(transpose(t["x"], (1, 0, 2)), t["p"])),
          x=rng.standard_normal((2, 3, 4)), p=rng.standard_normal((3, 2, 4))),
    ]


@pytest.mark.parametrize("build,arrays", _loss_cases())
def test_primitive_gradients(build, arrays):
    errors = finite_difference_check(build, arrays)
    assert max(errors.values()) < 1e-7, errors


# ---------------------------------------------------------------------------
# whole-graph gradients per layer family (fast subset; the acceptance suite
# sweeps every vocabulary entry)

def _single_layer_genome(layer_name, **attrs):
    li = V.layer_index(layer_name, **attrs)
    left = BranchGene(0, V.norm_index("none"), li, V.dim_index(1.0),
                      V.activation_index("none"))
    right = BranchGene(0, V.norm_index("none"), V.layer_index("dead"),
                       V.dim_index(1.0), V.activation_index("none"))
    return Genome(modality_blocks=((BlockGene(left, right,
                                              V.combiner_index("add")),),),
                  fusion_blocks=())


@pytest.mark.parametrize("layer,attrs", [
    ("attention", {"heads": 4}),
    ("light_conv", {"kernel": 3, "reduction": 4}),
    ("sep_conv", {"kernel": 5}),
    ("glu", {}),
    ("max_pool", {"kernel": 3}),
    ("avg_pool", {"kernel": 5}),
])
def test_layer_gradients_through_graph(layer, attrs):
    genome = _single_layer_genome(layer, **attrs)
    graph = compile_genome(genome, (6,), 4, vocab=V)
    store = build_store(graph, seed=7, dtype=np.float64)
    x = np.random.default_rng(1).standard_normal((2, 4, 6))
    errors = check_graph_gradients(graph, store, [x])
    assert max(errors.values()) < 1e-6, errors


def test_norm_gradients_through_graph():
    for norm in ("layer_norm", "batch_norm"):
        left = BranchGene(0, V.norm_index(norm), V.layer_index("conv", kernel=1),
                          V.dim_index(1.0), V.activation_index("swish"))
        right = BranchGene(0, V.norm_index("none"), V.layer_index("dead"),
                           V.dim_index(1.0), V.activation_index("none"))
        g = Genome(modality_blocks=((BlockGene(left, right,
                                               V.combiner_index("add")),),),
                   fusion_blocks=())
        graph = compile_genome(g, (6,), 4, vocab=V)
        store = build_store(graph, seed=3, dtype=np.float64)
        x = np.random.default_rng(2).standard_normal((2, 4, 6))
        errors = check_graph_gradients(graph, store, [x])
        assert max(errors.values()) < 1e-6, (norm, errors)


# ---------------------------------------------------------------------------
# executor behavior

def test_identity_graph_adds_positional_signal():
    g = _single_layer_genome("identity")
    graph = compile_genome(g, (6,), 5, vocab=V)
    store = build_store(graph, seed=0, dtype=np.float64)
    x = np.random.default_rng(0).standard_normal((2, 5, 6))
    out = forward_graph(graph, store, [x], training=False)
    np.testing.assert_allclose(
        out.data, x + positional_signal(5, 6, dtype=np.float64))


def test_causal_ops_ignore_future_positions():
    rng = np.random.default_rng(4)
    for layer, attrs in [("conv", {"kernel": 3}), ("sep_conv", {"kernel": 5}),
                         ("light_conv", {"kernel": 5, "reduction": 4}),
                         ("max_pool", {"kernel": 3}),
                         ("avg_pool", {"kernel": 3})]:
        graph = compile_genome(_single_layer_genome(layer, **attrs),
                               (6,), 6, vocab=V)
        store = build_store(graph, seed=5, dtype=np.float64)
        x = rng.standard_normal((2, 6, 6))
        y = rng.standard_normal((2, 6, 6))
        y[:, :4] = x[:, :4]
        a = forward_graph(graph, store, [x], training=False)
        b = forward_graph(graph, store, [y], training=False)
        np.testing.assert_allclose(a.data[:, :4], b.data[:, :4], atol=1e-12,
                                   err_msg=layer)


def test_attention_is_bidirectional():
    graph = compile_genome(_single_layer_genome("attention", heads=4),
                           (6,), 6, vocab=V)
    store = build_store(graph, seed=5, dtype=np.float64)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 6, 6))
    y = x.copy()
    y[:, 5] += 1.0
    a = forward_graph(graph, store, [x], training=False)
    b = forward_graph(graph, store, [y], training=False)
    assert np.abs(a.data[:, 0] - b.data[:, 0]).max() > 1e-9


def test_batch_norm_train_eval_modes():
    left = BranchGene(0, V.norm_index("batch_norm"), V.layer_index("identity"),
                      V.dim_index(1.0), V.activation_index("none"))
    right = BranchGene(0, V.norm_index("none"), V.layer_index("dead"),
                       V.dim_index(1.0), V.activation_index("none"))
    g = Genome(modality_blocks=((BlockGene(left, right,
                                           V.combiner_index("add")),),),
               fusion_blocks=())
    graph = compile_genome(g, (4,), 6, vocab=V)
    store = build_store(graph, seed=0, dtype=np.float64)
    mean0 = store.buffers["node001/running_mean"].copy()
    x = np.random.default_rng(9).standard_normal((8, 6, 4)) * 3 + 1
    train_out = forward_graph(graph, store, [x], training=True)
    assert not np.array_equal(store.buffers["node001/running_mean"], mean0)
    eval_out = forward_graph(graph, store, [x], training=False)
    assert np.abs(train_out.data - eval_out.data).max() > 1e-6


def test_store_counts_match_compiler_for_seeds_and_mutants():
    rng = np.random.default_rng(12)
    genomes = [seed_genome(k, 3, V) for k in ("early", "hybrid", "late")]
    g = seed_genome("hybrid", 3, V)
    for _ in range(15):
        g = mutate(g, 0.05, rng, V)
        genomes.append(g)
    for genome in genomes:
        graph = compile_genome(genome, (8, 8, 8), 6, vocab=V)
        store = build_store(graph, seed=1)
        assert store.parameter_count() == graph.parameter_count


def test_truncated_normal_bounds_and_determinism():
    rng = np.random.default_rng(0)
    a = truncated_normal(rng, (4000,), 0.02, np.float32)
    assert np.abs(a).max() <= 0.04 + 1e-9
    b = truncated_normal(np.random.default_rng(0), (4000,), 0.02, np.float32)
    np.testing.assert_array_equal(a, b)


def test_store_init_deterministic_and_order_independent():
    graph = compile_genome(seed_genome("hybrid", 2, V), (8, 8), 6, vocab=V)
    s1 = build_store(graph, seed=42)
    s2 = build_store(graph, seed=42)
    assert set(s1.params) == set(s2.params)
    for k in s1.params:
        np.testing.assert_array_equal(s1.params[k], s2.params[k])
    s3 = build_store(graph, seed=43)
    assert any(not np.array_equal(s1.params[k], s3.params[k])
               for k in s1.params if "gamma" not in k and "/b" not in k)


def test_forward_deterministic():
    graph = compile_genome(seed_genome("hybrid", 3, V), (8, 8, 8), 6, vocab=V)
    store = build_store(graph, seed=2)
    rng = np.random.default_rng(0)
    xs = [rng.standard_normal((4, 6, 8)).astype(np.float32) for _ in range(3)]
    a = forward_graph(graph, store, xs, training=False)
    b = forward_graph(graph, store, xs, training=False)
    np.testing.assert_array_equal(a.data, b.data)
    assert a.data.shape == (4, 6, 24)


def test_checkpoint_round_trip(tmp_path):
    graph = compile_genome(seed_genome("hybrid", 2, V), (8, 8), 6, vocab=V)
    store = build_store(graph, seed=8)
    p1 = str(tmp_path / "ck1.bin")
    p2 = str(tmp_path / "ck2.bin")
    save_store(store, p1)
    loaded = load_store(p1)
    assert set(loaded.params) == set(store.params)
    for k in store.params:
        np.testing.assert_array_equal(loaded.params[k], store.params[k])
    for k in store.buffers:
        np.testing.assert_array_equal(loaded.buffers[k], store.buffers[k])
    save_store(loaded, p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()
