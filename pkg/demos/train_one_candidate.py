"""Generate a small synthetic dataset and train the hybrid seed on it.

About a minute on one core; prints the loss curve sparsely and the
validation recall@5 at the end.
"""

from fusenas import (
    DatasetSpec,
    DEFAULT_VOCABULARY,
    TrainConfig,
    evaluate_candidate,
    generate,
    seed_genome,
)

spec = DatasetSpec(seed=0, interaction=1.0)
ds = generate(spec)
print(f"dataset: {spec.num_examples} examples, {spec.num_classes} classes, "
      f"interaction={spec.interaction}")
print(f"splits: {len(ds.train_idx)} train / {len(ds.val_idx)} val / "
      f"{len(ds.test_idx)} test\n")

config = TrainConfig(steps=1200, peak_lr=1.5e-3, embed_width=8, seed=0)
genome = seed_genome("hybrid", 3, DEFAULT_VOCABULARY)
result = evaluate_candidate(genome, ds, config)

curve = result.train_loss_curve
for i in range(0, len(curve), 200):
    print(f"step {i:5d}: loss {curve[i]:.4f}")
print(f"\nvalidation recall@{config.recall_k}: {result.fitness:.3f} "
      f"({result.parameter_count} parameters, {result.wall_time_s:.1f}s)")
