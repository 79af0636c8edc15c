"""Compile the three fusion seeds and dump one as a graphviz diagram.

Run: python demos/compile_and_draw.py [out.dot]
"""

import sys

from fusenas import (
    DEFAULT_VOCABULARY,
    classify_fusion,
    compile_genome,
    count_parameters,
    seed_genome,
    to_dot,
)

for kind in ("early", "hybrid", "late"):
    genome = seed_genome(kind, 3, DEFAULT_VOCABULARY)
    graph = compile_genome(genome, (16, 16, 16), length=6,
                           vocab=DEFAULT_VOCABULARY)
    report = classify_fusion(graph)
    kinds = sorted(set().union(*report.strategies))
    print(f"{kind:6s}: {len(graph.nodes):3d} nodes, "
          f"{count_parameters(graph):6d} params, classified {kinds}")

target = sys.argv[1] if len(sys.argv) > 1 else "hybrid_seed.dot"
graph = compile_genome(seed_genome("hybrid", 3, DEFAULT_VOCABULARY),
                       (16, 16, 16), length=6, vocab=DEFAULT_VOCABULARY)
with open(target, "w") as fh:
    fh.write(to_dot(graph))
print(f"wrote {target}; render with: dot -Tpng {target} -o arch.png")
