"""Watching the filter catch boosted flip-attack clients round by round.

Attackers train on flipped targets and scale their delta by the number of
participants so a single one would take over plain averaging. Each row
shows who was sampled, who attacked and who the filter dropped.
"""

from floral.attacks import AttackConfig
from floral.runtime import ExperimentConfig, TrainingConfig, detection_stats, run_experiment

cfg = ExperimentConfig(
    seed=0,
    rounds=10,
    defense="floral",
    attack=AttackConfig(kind="model_replacement", epsilon=0.2),
    training=TrainingConfig(lr=0.05),
)
result = run_experiment(cfg)
print("attacker pool:", result.attacker_pool)
for r in result.records:
    dropped = [c for c, keep in zip(r.sampled, r.mask) if not keep]
    print(f"round {r.round:>2}  attackers {str(r.attackers):<14} dropped {str(dropped):<14} mse {r.mse:.4f}")

stats = detection_stats(result)
print(f"\nattacker appearances masked: {stats['recall']:.0%}")
print(f"benign appearances masked:   {stats['false_positive_rate']:.1%}")
