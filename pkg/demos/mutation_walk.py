"""Take a short random walk through the search space and watch the
encoding change one field at a time."""

import numpy as np

from fusenas import DEFAULT_VOCABULARY, linearize, mutate, seed_genome
from fusenas.genome import SpaceLayout, cardinality

vocab = DEFAULT_VOCABULARY
genome = seed_genome("hybrid", 3, vocab)
layout = SpaceLayout(modality_blocks=(3, 3, 3), fusion_blocks=5)
print(f"search space holds {cardinality(layout, vocab):.3e} genomes; "
      f"each is {genome.num_fields} discrete fields\n")

rng = np.random.default_rng(4)
fields = linearize(genome)
for step in range(8):
    child = mutate(genome, 0.01875, rng, vocab)
    new_fields = linearize(child)
    changed = [i for i, (a, b) in enumerate(zip(fields, new_fields))
               if a != b]
    print(f"step {step}: {len(changed)} field(s) changed at {changed}")
    genome, fields = child, new_fields

print("\nfinal genome, text form:")
from fusenas import genome_to_text
print(genome_to_text(genome, vocab)[:400] + "...")
