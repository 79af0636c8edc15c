"""Evolve against the closed-form surrogate landscape: no training, a few
seconds, and the tournament loop is easy to watch converging."""

from fusenas import (
    DEFAULT_VOCABULARY,
    SearchConfig,
    make_surrogate_evaluator,
    run_search,
    seed_genome,
    surrogate_fitness,
)

vocab = DEFAULT_VOCABULARY
baseline = surrogate_fitness(seed_genome("hybrid", 3, vocab), vocab)
print(f"seed architecture scores {baseline:.4f}; the optimum is 1.0")

config = SearchConfig(population_size=100, tournament_size=30,
                      candidates=3000, evaluator="surrogate", rng_seed=0)

milestones = []

def watch(record):
    if record["id"] % 500 == 0:
        milestones.append(record["id"])
        print(f"  candidate {record['id']:5d}: fitness {record['fitness']:.4f}")

result = run_search(config, make_surrogate_evaluator(vocab), log_fn=watch)
print(f"best fitness {result.best.fitness:.4f} "
      f"(candidate {result.best.id}, parent {result.best.parent_id})")
