"""Gaussian Byzantine clients against several server defenses.

Thirty clients share a seasonal forecasting task; a fifth of them replace
their update with unit Gaussian noise. The table compares final test MSE
for plain FedAvg, three robust aggregators and the logic-guided filter.
"""

import numpy as np

from floral.attacks import AttackConfig
from floral.runtime import ExperimentConfig, TrainingConfig, run_experiment

SEEDS = range(3)
training = TrainingConfig(lr=0.05)


def mse(defense, attack):
    runs = [
        run_experiment(ExperimentConfig(seed=s, defense=defense, attack=attack, training=training)).final_mse
        for s in SEEDS
    ]
    return float(np.mean(runs))


clean = mse("none", AttackConfig())
byz = AttackConfig(kind="byzantine", epsilon=0.2, sigma=1.0)
print(f"{'defense':<12} {'final MSE':>10} {'vs clean':>9}")
print(f"{'(no attack)':<12} {clean:>10.4f} {1.0:>8.1f}x")
for defense in ("none", "krum", "median", "rfa", "floral"):
    value = mse(defense, byz)
    print(f"{defense:<12} {value:>10.4f} {value / clean:>8.1f}x")
