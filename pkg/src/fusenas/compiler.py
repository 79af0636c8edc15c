"""Compile genomes into explicit computation DAGs.

Nodes are created in execution order (embeddings, then each modality's blocks,
then fusion blocks, then the output), so predecessor ids are always smaller.
Relative output dims resolve against an architecture reference width: the
modality's embedding width, or the sum of all embedding widths for fusion
blocks. Projection-free layers (lightweight conv, pooling, identity) keep
their input width. Hidden states nobody consumes are concatenated into the
output node after the final fusion state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .genome import FUSION, BranchGene, Genome, state_index, validate
from .vocab import PROJECTING_LAYERS, Vocabulary


class CompileError(Exception):
    pass


class InvalidGenomeError(CompileError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{v.where}: {v.detail}" for v in self.violations)
        super().__init__(f"genome fails validation: {lines}")


class BudgetExceeded(Exception):
    def __init__(self, count: int, budget: int):
        self.count = count
        self.budget = budget
        super().__init__(f"{count} parameters exceed budget {budget}")


@dataclass(frozen=True, eq=True)
class NodeSpec:
    id: int
    kind: str                 # input | norm | layer | act | combine | output
    op: str
    preds: tuple[int, ...]
    out_width: int
    tag: str                  # m<i> | fusion | mixed
    params: int
    attrs: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=True)
class ComputationGraph:
    nodes: tuple[NodeSpec, ...]
    output_id: int
    parameter_count: int
    input_widths: tuple[int, ...]
    length: int
    state_nodes: tuple[tuple[int, ...], ...]  # per modality, then fusion last
    orphans: tuple[int, ...]

    def node(self, node_id: int) -> NodeSpec:
        return self.nodes[node_id]


def resolve_width(multiplier: float, base: int) -> int:
    """Nearest positive integer to multiplier*base, ties away from zero."""
    return max(1, int(multiplier * base + 0.5))


def round_up_multiple(value: int, k: int) -> int:
    return ((value + k - 1) // k) * k


def _layer_plan(op_name: str, attrs: dict, w_in: int, target: int) -> tuple[int, int]:
    """(output width, parameter count) for one layer node."""
    if op_name == "conv":
        k = attrs["kernel"]
        return target, k * w_in * target + target
    if op_name == "sep_conv":
        k = attrs["kernel"]
        return target, k * w_in + w_in * target + target
    if op_name == "light_conv":
        return w_in, attrs["reduction"] * attrs["kernel"]
    if op_name == "attention":
        h = attrs["heads"]
        out = round_up_multiple(target, h)
        return out, 3 * w_in * out + out * out
    if op_name == "glu":
        return target, 2 * w_in * target
    if op_name in ("max_pool", "avg_pool", "identity"):
        return w_in, 0
    raise CompileError(f"unknown layer op {op_name!r}")


class _Builder:
    def __init__(self, max_width: int):
        self.nodes: list[NodeSpec] = []
        self.max_width = max_width

    def add(self, kind: str, op: str, preds: tuple[int, ...], width: int,
            tag: str, params: int = 0, **attrs) -> int:
        if width > self.max_width:
            raise CompileError(
                f"width {width} exceeds configured maximum {self.max_width} "
                f"at node {len(self.nodes)} ({op})")
        node = NodeSpec(id=len(self.nodes), kind=kind, op=op, preds=preds,
                        out_width=width, tag=tag, params=params, attrs=attrs)
        self.nodes.append(node)
        return node.id

    def width(self, node_id: int) -> int:
        return self.nodes[node_id].out_width


def _build_branch(b: _Builder, br: BranchGene, vocab: Vocabulary,
                  src_node: int, base: int, tag: str) -> int | None:
    """Nodes for norm -> layer -> activation; None when the branch is dead."""
    op = vocab.layers[br.layer]
    if op.name == "dead":
        return None
    cur = src_node
    w = b.width(cur)
    norm = vocab.normalizations[br.normalization]
    if norm != "none":
        cur = b.add("norm", norm, (cur,), w, tag, params=2 * w)
    attrs = {k: v for k, v in (("kernel", op.kernel),
                               ("reduction", op.reduction),
                               ("heads", op.heads)) if v is not None}
    target = resolve_width(vocab.dims[br.dim], base)
    out_w, params = _layer_plan(op.name, attrs, w, target)
    cur = b.add("layer", op.name, (cur,), out_w, tag, params=params, **attrs)
    act = vocab.activations[br.activation]
    if act != "none":
        cur = b.add("act", act, (cur,), out_w, tag)
    return cur


def _combine_width(op: str, wl: int, wr: int) -> int:
    if op == "concat":
        return wl + wr
    return max(wl, wr)  # add/mul zero-pad the narrower operand


def compile_genome(genome: Genome, input_widths: tuple[int, ...], length: int,
                   *, vocab: Vocabulary, max_width: int = 65536) -> ComputationGraph:
    """Lower a valid genome to a ComputationGraph for the given input shapes."""
    if len(input_widths) != genome.num_modalities:
        raise CompileError(
            f"genome has {genome.num_modalities} modalities but "
            f"{len(input_widths)} input widths were given")
    if length < 1 or any(w < 1 for w in input_widths):
        raise CompileError("input widths and length must be positive")
    violations = validate(genome, vocab)
    if violations:
        raise InvalidGenomeError(violations)

    idx = state_index(genome)
    b = _Builder(max_width)

    # state id -> node id; aliases (fully dead blocks) map states onto old nodes
    state_node: dict[int, int] = {}
    for m, w in enumerate(input_widths):
        state_node[idx.embedding_state(m)] = b.add(
            "input", "embedding", (), w, f"m{m}", modality=m)

    def build_block(arch: int, k: int, block, base: int, tag: str, out_state: int):
        left = _build_branch(b, block.left, vocab,
                             state_node[block.left.input_state], base, tag)
        right = _build_branch(b, block.right, vocab,
                              state_node[block.right.input_state], base, tag)
        alive = [n for n in (left, right) if n is not None]
        comb = vocab.combiners[block.combiner]
        if not alive:
            state_node[out_state] = state_node[block.left.input_state]
            return
        if len(alive) == 1:
            width = b.width(alive[0])
        else:
            width = _combine_width(comb, b.width(alive[0]), b.width(alive[1]))
        state_node[out_state] = b.add("combine", comb, tuple(alive), width, tag)

    for m, blocks in enumerate(genome.modality_blocks):
        for k, block in enumerate(blocks):
            build_block(m, k, block, input_widths[m], f"m{m}",
                        idx.block_state(m, k))
    fusion_base = sum(input_widths)
    for k, block in enumerate(genome.fusion_blocks):
        build_block(FUSION, k, block, fusion_base, "fusion",
                    idx.fusion_state(k))

    consumed = {p for node in b.nodes for p in node.preds}
    final = (state_node[idx.fusion_state(len(genome.fusion_blocks) - 1)]
             if genome.fusion_blocks else None)
    seen: set[int] = set()
    ordered_states: list[int] = []
    for s in sorted(state_node):
        n = state_node[s]
        if n not in seen:
            seen.add(n)
            ordered_states.append(n)
    orphans = tuple(n for n in ordered_states
                    if n not in consumed and n != final)
    operands = ([final] if final is not None else []) + list(orphans)
    out_width = sum(b.width(n) for n in operands)
    output_id = b.add("output", "output", tuple(operands), out_width, "mixed")

    per_arch: list[tuple[int, ...]] = []
    for m in range(genome.num_modalities):
        per_arch.append(tuple(state_node[idx.embedding_state(m)]
                              if k == 0 else state_node[idx.block_state(m, k - 1)]
                              for k in range(len(genome.modality_blocks[m]) + 1)))
    per_arch.append(tuple(state_node[idx.fusion_state(j)]
                          for j in range(len(genome.fusion_blocks))))

    return ComputationGraph(
        nodes=tuple(b.nodes),
        output_id=output_id,
        parameter_count=sum(n.params for n in b.nodes),
        input_widths=tuple(input_widths),
        length=length,
        state_nodes=tuple(per_arch),
        orphans=orphans,
    )


def count_parameters(graph: ComputationGraph) -> int:
    return sum(n.params for n in graph.nodes)


def enforce_budget(graph: ComputationGraph, max_params: int) -> None:
    count = count_parameters(graph)
    if count > max_params:
        raise BudgetExceeded(count, max_params)


# ---------------------------------------------------------------------------
# fusion strategy classification

@dataclass(frozen=True)
class FusionReport:
    strategies: tuple[frozenset, ...]   # per modality: subset of {early,hybrid,late}
    disconnected: tuple[int, ...]


def classify_fusion(graph: ComputationGraph) -> FusionReport:
    """Per-modality fusion strategies from data flow.

    A merge event for modality i is a node where i-carrying data meets data of
    another modality. The stream counts as processed once any parameterized
    node of that modality's own architecture is an ancestor (a parameter-free
    residual bypass does not undo processing). Interior merges classify early
    (unprocessed) or hybrid (processed, with parameterized nodes downstream of
    the merge) or late (processed, nothing parameterized afterwards); merges at
    the output node are late. With a single modality no cross-modal merge can
    exist, so entry into fusion-architecture nodes stands in for a merge.
    """
    m_count = len(graph.input_widths)
    n = len(graph.nodes)
    reach = [0] * n
    proc = [0] * n
    for node in graph.nodes:
        r = p = 0
        for q in node.preds:
            r |= reach[q]
            p |= proc[q]
        if node.op == "embedding":
            r |= 1 << node.attrs["modality"]
        if node.tag.startswith("m") and node.params > 0:
            p |= 1 << int(node.tag[1:])
        reach[node.id] = r
        proc[node.id] = p

    succs: list[list[int]] = [[] for _ in range(n)]
    for node in graph.nodes:
        for q in node.preds:
            succs[q].append(node.id)
    param_below = [False] * n
    for node in reversed(graph.nodes):
        param_below[node.id] = any(
            graph.nodes[s].params > 0 or param_below[s] for s in succs[node.id])

    events: list[tuple[int, int, bool]] = []  # (modality, node, processed)
    if m_count == 1:
        entries = [node for node in graph.nodes if node.tag == "fusion"
                   and any(graph.nodes[q].tag != "fusion" for q in node.preds)]
        if entries:
            for node in entries:
                for q in node.preds:
                    if graph.nodes[q].tag != "fusion":
                        events.append((0, node.id, bool(proc[q] & 1)))
        elif reach[graph.output_id] & 1:
            events.append((0, graph.output_id, True))
    else:
        for node in graph.nodes:
            if len(node.preds) < 2:
                continue
            union = reach[node.id]
            for i in range(m_count):
                bit = 1 << i
                if not union & bit or not union & ~bit:
                    continue
                for q in node.preds:
                    # a genuine merge: this operand carries modality i and
                    # meets some modality it does not already contain, so a
                    # residual re-join of an already-mixed stream is not one
                    if reach[q] & bit and union & ~reach[q]:
                        events.append((i, node.id, bool(proc[q] & bit)))

    sets: list[set] = [set() for _ in range(m_count)]
    for i, node_id, processed in events:
        if node_id == graph.output_id:
            sets[i].add("late")
        elif not processed:
            sets[i].add("early")
        elif param_below[node_id]:
            sets[i].add("hybrid")
        else:
            sets[i].add("late")

    disconnected = tuple(i for i in range(m_count)
                         if not reach[graph.output_id] & (1 << i))
    for i in range(m_count):
        if i not in disconnected and not sets[i]:
            sets[i].add("late")  # joins others only at the output, by elimination
    return FusionReport(strategies=tuple(frozenset(s) for s in sets),
                        disconnected=disconnected)


# ---------------------------------------------------------------------------
# exports

_TAG_COLORS = {"fusion": "#fb8072", "mixed": "#d9d9d9"}
_MODALITY_COLORS = ("#ffd92f", "#a6d854", "#bebada", "#80b1d3", "#fdb462")
_KIND_SHAPES = {"input": "box", "norm": "ellipse", "layer": "box",
                "act": "diamond", "combine": "circle", "output": "doubleoctagon"}


def _node_color(tag: str) -> str:
    if tag in _TAG_COLORS:
        return _TAG_COLORS[tag]
    return _MODALITY_COLORS[int(tag[1:]) % len(_MODALITY_COLORS)]


def _node_label(node: NodeSpec) -> str:
    bits = [node.op]
    for key in ("kernel", "reduction", "heads"):
        if key in node.attrs:
            bits.append(f"{key[0]}{node.attrs[key]}")
    bits.append(f"w{node.out_width}")
    return " ".join(bits)


def to_dot(graph: ComputationGraph) -> str:
    """Deterministic graphviz text; nodes colored by tag, shaped by kind."""
    lines = ["digraph model {", "  rankdir=LR;",
             "  node [style=filled, fontname=Helvetica];"]
    for node in graph.nodes:
        lines.append(
            f'  n{node.id} [label="{_node_label(node)}", '
            f'shape={_KIND_SHAPES[node.kind]}, fillcolor="{_node_color(node.tag)}"];')
    for node in graph.nodes:
        for q in node.preds:
            lines.append(f"  n{q} -> n{node.id};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_json(graph: ComputationGraph) -> str:
    """Structured export: node list plus edges, canonical layout."""
    import json

    doc = {
        "format": "fusenas-graph",
        "version": 1,
        "length": graph.length,
        "input_widths": list(graph.input_widths),
        "parameter_count": graph.parameter_count,
        "output": graph.output_id,
        "orphans": list(graph.orphans),
        "nodes": [
            {"id": n.id, "kind": n.kind, "op": n.op, "preds": list(n.preds),
             "width": n.out_width, "tag": n.tag, "params": n.params,
             "attrs": dict(sorted(n.attrs.items()))}
            for n in graph.nodes
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"
