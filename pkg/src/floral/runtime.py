"""Server loop: sampling, local training, attacks, defense, evaluation, records."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attacks import (
    AttackConfig,
    byzantine_update,
    constrain_and_scale_train,
    flip_targets,
    model_replacement,
    pgd_project,
)
from .data import (
    GeneratorConfig,
    generate,
    ingest_csv,
    sample_clients,
    train_test_split,
    validation_from_clients,
)
from .defenses import RoundContext, make_defense
from .inference import PropertyTemplate
from .models import ModelSpec, ParamVector, forward, init_params, local_sgd, local_steps, save_params

SUMMARY_SCHEMA = "v1"
SUMMARY_COLUMNS = [
    "schema", "round", "defense", "attack", "epsilon", "aggregator", "seed",
    "mse", "mae", "mse_raw", "mae_raw",
]

# stream tags for np.random.SeedSequence; client streams use the client id
_SAMPLE, _POOL, _INIT, _COLLUDE, _SPLIT = -1, -2, -3, -4, -5


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 0.001
    epochs: int = 3
    batch_size: int = 128


@dataclass(frozen=True)
class CsvSource:
    paths: tuple
    channels: tuple
    client_column: Optional[str] = None
    validation_fraction: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    n_clients: int = 30
    fraction: float = 0.5
    rounds: int = 20
    seed: int = 0
    model: ModelSpec = field(default_factory=ModelSpec)
    data: GeneratorConfig = field(default_factory=GeneratorConfig)
    csv: Optional[CsvSource] = None
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: str = "floral"
    defense_params: dict = field(default_factory=dict)
    aggregator: str = "fedavg"
    mu: float = 0.01
    training: TrainingConfig = field(default_factory=TrainingConfig)
    test_fraction: float = 0.2
    window: int = 2

    def __post_init__(self):
        if self.rounds < 1:
            raise ExperimentError("rounds must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ExperimentError("fraction must lie in (0, 1]")
        if self.aggregator not in ("fedavg", "fedprox", "fednova"):
            raise ExperimentError(f"unknown aggregator {self.aggregator!r}")


@dataclass
class RoundRecord:
    round: int
    sampled: list
    attackers: list
    mask: list
    mse: float
    mae: float
    mse_raw: float
    mae_raw: float
    round_scores: Optional[list] = None
    cumulative_scores: Optional[list] = None
    clusters: Optional[list] = None
    flags: dict = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    def to_json(self) -> str:
        # wall time stays out of the record file so replays are byte-identical
        d = dataclasses.asdict(self)
        d.pop("wall_time")
        d["type"] = "round"
        return json.dumps(d, sort_keys=True)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    params: ParamVector
    attacker_pool: list

    def summary_rows(self) -> list[dict]:
        cfg = self.config
        return [
            {
                "schema": SUMMARY_SCHEMA,
                "round": r.round,
                "defense": cfg.defense,
                "attack": cfg.attack.kind,
                "epsilon": cfg.attack.epsilon,
                "aggregator": cfg.aggregator,
                "seed": cfg.seed,
                "mse": r.mse,
                "mae": r.mae,
                "mse_raw": r.mse_raw,
                "mae_raw": r.mae_raw,
            }
            for r in self.records
        ]

    def record_text(self) -> str:
        from .config import config_to_dict

        head = json.dumps(
            {"type": "config", "config": config_to_dict(self.config), "attacker_pool": self.attacker_pool},
            sort_keys=True,
        )
        return "\n".join([head] + [r.to_json() for r in self.records]) + "\n"

    def summary_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.summary_rows())
        return buf.getvalue()

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "records.jsonl").write_text(self.record_text())
        (out / "summary.csv").write_text(self.summary_csv())
        save_params(out / "final_params.txt", self.params)
        return out

    @property
    def final_mse(self) -> float:
        return self.records[-1].mse


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, *stream)``."""
    return np.random.default_rng(np.random.SeedSequence([seed % 2**32, *(s % 2**32 for s in stream)]))


def evaluate(spec: ModelSpec, params, inputs, targets, normalizer=None) -> tuple[float, float]:
    """(MSE, MAE) over every window, step and channel; optionally in raw units."""
    if len(inputs) == 0:
        raise ExperimentError("empty test set")
    pred = forward(spec, params, inputs)
    y = np.asarray(targets, dtype=float)
    if normalizer is not None:
        pred = normalizer.denormalize(pred)
        y = normalizer.denormalize(y)
    err = pred - y
    return float(np.mean(err**2)), float(np.mean(np.abs(err)))


def _prepare_data(cfg: ExperimentConfig):
    spec = cfg.model
    if cfg.csv is not None:
        clients = ingest_csv(
            list(cfg.csv.paths), list(cfg.csv.channels), spec.lookback, spec.horizon, cfg.csv.client_column
        )
        clients, validation = validation_from_clients(
            clients, cfg.csv.validation_fraction, rng_for(cfg.seed, _SPLIT)
        )
    else:
        gen = dataclasses.replace(
            cfg.data,
            n_clients=cfg.n_clients,
            lookback=spec.lookback,
            horizon=spec.horizon,
            n_channels=spec.n_channels,
            seed=cfg.seed,
        )
        clients, validation = generate(gen)
    if len(clients) != cfg.n_clients:
        raise ExperimentError(f"data provides {len(clients)} clients, config expects {cfg.n_clients}")
    train, test_x, test_y = train_test_split(clients, cfg.test_fraction)
    return train, validation, test_x, test_y, clients[0].normalizer


def attacker_pool(cfg: ExperimentConfig) -> list[int]:
    """Fixed set of malicious client ids, ``round(epsilon * N)`` of them."""
    if cfg.attack.kind == "none" or cfg.attack.epsilon == 0:
        return []
    n_bad = int(np.floor(cfg.attack.epsilon * cfg.n_clients + 0.5))
    perm = rng_for(cfg.seed, _POOL).permutation(cfg.n_clients)
    return sorted(int(i) for i in perm[:n_bad])


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run ``cfg.rounds`` federated rounds and return records plus the final model."""
    spec = cfg.model
    train, validation, test_x, test_y, normalizer = _prepare_data(cfg)
    pool = attacker_pool(cfg)
    bad = set(pool)
    atk = cfg.attack
    poisoned = {i: flip_targets(train[i], atk.budget) for i in pool} if atk.poisons_data else {}

    template = PropertyTemplate(
        horizon=spec.horizon, window=min(cfg.window, spec.horizon), channels=tuple(range(spec.n_channels))
    )
    defense = make_defense(cfg.defense, spec=spec, validation=validation, template=template, **cfg.defense_params)
    tr = cfg.training
    mu = cfg.mu if cfg.aggregator == "fedprox" else None

    g = init_params(spec, rng_for(cfg.seed, _INIT))
    prev_benign_norms: list[float] = []
    records = []
    for t in range(1, cfg.rounds + 1):
        t0 = time.perf_counter()
        try:
            sampled = [int(i) for i in sample_clients(cfg.n_clients, cfg.fraction, rng_for(cfg.seed, t, _SAMPLE))]
            m = len(sampled)
            updates, weights, steps, benign_norms = [], [], [], []
            for cid in sampled:
                rng = rng_for(cfg.seed, t, cid)
                data = train[cid]
                if cid in bad and atk.kind == "byzantine":
                    noise_rng = rng_for(cfg.seed, t, _COLLUDE) if atk.colluding else rng
                    upd = g + byzantine_update(spec.dim, atk.sigma, noise_rng)
                elif cid in bad and atk.poisons_data:
                    upd = _poisoned_update(cfg, g, poisoned[cid], m, prev_benign_norms, rng)
                else:
                    upd = local_sgd(spec, g, data, tr.lr, tr.epochs, tr.batch_size, rng, mu=mu)
                    benign_norms.append((upd - g).norm())
                updates.append(upd.values)
                weights.append(data.size)
                steps.append(local_steps(data.size, tr.batch_size, tr.epochs))

            ctx = RoundContext(sampled, weights, steps, cfg.aggregator, t, atk.epsilon)
            outcome = defense(g.values, updates, ctx)
            g = ParamVector(outcome.params, spec.tag)
            prev_benign_norms = benign_norms or prev_benign_norms

            mse, mae = evaluate(spec, g, test_x, test_y)
            if normalizer is not None:
                mse_raw, mae_raw = evaluate(spec, g, test_x, test_y, normalizer)
            else:
                mse_raw, mae_raw = mse, mae
        except Exception as exc:
            raise ExperimentError(f"round {t}: {exc}") from exc

        diag = outcome.diagnostics
        flags = {k: diag[k] for k in ("no_signal", "all_masked", "n_clusters") if k in diag}
        records.append(
            RoundRecord(
                round=t,
                sampled=sampled,
                attackers=[c for c in sampled if c in bad],
                mask=[bool(b) for b in outcome.mask],
                mse=mse,
                mae=mae,
                mse_raw=mse_raw,
                mae_raw=mae_raw,
                round_scores=diag.get("round_scores"),
                cumulative_scores=diag.get("cumulative_scores"),
                clusters=diag.get("clusters"),
                flags=flags,
                wall_time=time.perf_counter() - t0,
            )
        )
    return ExperimentResult(cfg, records, g, pool)


def _poisoned_update(cfg, g, data, m, prev_benign_norms, rng):
    spec, atk, tr = cfg.model, cfg.attack, cfg.training
    scale = atk.scale if atk.scale is not None else float(m)
    if atk.kind == "constrain_scale":
        return constrain_and_scale_train(
            spec, g, data, atk.alpha, scale, tr.lr, tr.epochs, tr.batch_size, rng
        )
    upd = local_sgd(spec, g, data, tr.lr, tr.epochs, tr.batch_size, rng)
    if atk.kind == "pgd":
        radius = atk.radius
        if radius is None and prev_benign_norms:
            radius = 0.5 * float(np.median(prev_benign_norms))
        if radius:
            upd = pgd_project(upd, g, radius)
    elif atk.kind == "model_replacement":
        upd = model_replacement(upd, g, m, atk.scale)
    return upd


def detection_stats(result: ExperimentResult) -> dict:
    """Share of attacker appearances masked out and of benign appearances masked out."""
    bad_total = bad_masked = good_total = good_masked = 0
    for r in result.records:
        for cid, keep in zip(r.sampled, r.mask):
            if cid in r.attackers:
                bad_total += 1
                bad_masked += not keep
            else:
                good_total += 1
                good_masked += not keep
    return {
        "attacker_appearances": bad_total,
        "benign_appearances": good_total,
        "recall": bad_masked / bad_total if bad_total else float("nan"),
        "false_positive_rate": good_masked / good_total if good_total else 0.0,
    }
