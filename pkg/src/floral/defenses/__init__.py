"""Server-side defenses: logic-guided filtering plus robust-aggregation baselines."""

from .baselines import FoolsGold, Krum, Median, NoDefense, Rfa, Rlr, TrimmedMean
from .finch import ClusterPartition, finch_cluster, finch_partitions, first_neighbors
from .floral import (
    DefenseError,
    DefenseOutcome,
    Floral,
    RoundContext,
    TrustState,
    cluster_property,
    floral_round,
    global_formulas,
    global_property,
    lower_median,
    malicious_mask,
    range_scores,
    robustness_score,
    trust_update,
)
from .robust import (
    GeometricMedianResult,
    RobustAggregationError,
    coordinate_median,
    coordinate_median_or_trimmed_mean,
    foolsgold_raw,
    foolsgold_weights,
    geometric_median,
    krum,
    krum_f,
    krum_scores,
    rlr_aggregate,
    trimmed_mean,
)

DEFENSES = ("none", "floral", "krum", "multikrum", "rfa", "median", "trimmed_mean", "foolsgold", "rlr")


def make_defense(name: str, spec=None, validation=None, template=None, **params):
    """Build a defense by name; ``floral`` also needs ``spec`` and ``validation``."""
    if name == "none":
        return NoDefense()
    if name == "floral":
        return Floral(spec, validation, template, gamma=params.get("gamma", 0.5))
    if name == "krum":
        return Krum(False, params.get("f"))
    if name == "multikrum":
        return Krum(True, params.get("f"), params.get("m_select"))
    if name == "rfa":
        return Rfa()
    if name == "median":
        return Median()
    if name == "trimmed_mean":
        return TrimmedMean(params.get("beta", 0.1))
    if name == "foolsgold":
        return FoolsGold(params.get("kappa", 10.0))
    if name == "rlr":
        return Rlr(params.get("threshold", 1.0), params.get("server_lr", 1.0))
    raise DefenseError(f"unknown defense {name!r}; choose from {DEFENSES}")
