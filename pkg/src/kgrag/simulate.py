"""Black-box combinatorial search over a sparse hidden oracle set.

A reward function evaluates how well a drawn subset matches an unknown oracle subset
of a size-N universe. The randomized search draws uniform size-S subsets,
accepts a draw when its normalized reward strictly exceeds a threshold, and
unions accepted draws until the oracle set is covered. The exact acceptance
probability of a single draw follows a hypergeometric tail, which this module
also computes in closed form for comparison against simulation.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleInstance:
    universe_size: int
    oracle_set: frozenset[int]
    s0: float = 1.0
    delta0: float = 0.0

    def __post_init__(self):
        if self.universe_size < 1:
            raise ValueError("universe_size must be >= 1")
        if not self.oracle_set:
            raise ValueError("oracle set must be nonempty")
        if any(i < 0 or i >= self.universe_size for i in self.oracle_set):
            raise ValueError("oracle items must lie in [0, universe_size)")
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.delta0 < 0:
            raise ValueError("delta0 must be non-negative")
        if len(self.oracle_set) > self.universe_size // 10:
            logger.warning(
                "oracle set of %d is not sparse relative to universe %d",
                len(self.oracle_set),
                self.universe_size,
            )

    @property
    def k(self) -> int:
        return len(self.oracle_set)


@dataclass(frozen=True)
class SearchConfig:
    subset_size: int
    threshold: float
    max_rounds: int
    seed: int = 42

    def __post_init__(self):
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass
class SearchTrace:
    rounds_executed: int
    accepted_rounds: int
    recovered: bool
    rewards: list[float] = field(default_factory=list)
    final_set: frozenset[int] = frozenset()


def reward_coverage(selected: set[int] | frozenset[int], inst: OracleInstance) -> float:
    """Reward normalized by the oracle size: 1 exactly when selected == oracle.

    ``(|sel ∩ oracle| s0 − |sel \\ oracle| δ0) / (|oracle| s0)``; the empty
    selection scores 0 and all-noise selections go negative when δ0 > 0.
    """
    overlap = len(selected & inst.oracle_set)
    noise = len(selected) - overlap
    return (overlap * inst.s0 - noise * inst.delta0) / (inst.k * inst.s0)


def reward_draw(selected: set[int] | frozenset[int], inst: OracleInstance) -> float:
    """Reward normalized by the draw size, in [-δ0/s0, 1]. Selection must be nonempty."""
    if not selected:
        raise ValueError("selected set must be nonempty")
    overlap = len(selected & inst.oracle_set)
    noise = len(selected) - overlap
    return (overlap * inst.s0 - noise * inst.delta0) / (len(selected) * inst.s0)


def acceptance_occupancy(inst: OracleInstance, threshold: float) -> float:
    """θ such that a draw is accepted iff its oracle count exceeds S·θ."""
    return (threshold * inst.s0 + inst.delta0) / (inst.s0 + inst.delta0)


def universe_reward(inst: OracleInstance) -> float:
    """Draw-normalized reward of the whole universe (r0)."""
    n, k = inst.universe_size, inst.k
    return (k * inst.s0 - (n - k) * inst.delta0) / (n * inst.s0)


def _check_config(inst: OracleInstance, cfg: SearchConfig) -> None:
    if cfg.subset_size > inst.universe_size:
        raise ValueError("subset_size cannot exceed the universe size")
    r0 = universe_reward(inst)
    if not (r0 < cfg.threshold < 1.0):
        logger.warning(
            "threshold %.3f outside the analyzed range (%.3f, 1); the search "
            "still runs but may never accept",
            cfg.threshold,
            r0,
        )


def run_subset_search(
    inst: OracleInstance, cfg: SearchConfig, seed: int | Sequence[int] | None = None
) -> SearchTrace:
    """Uniform size-S draws, strict-threshold acceptance, union until covered.

    Draws are returned to the pool after each round. The trace is fully
    determined by the seed (``cfg.seed`` unless overridden).
    """
    _check_config(inst, cfg)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    oracle_mask = np.zeros(inst.universe_size, dtype=bool)
    oracle_mask[list(inst.oracle_set)] = True
    covered = np.zeros(inst.universe_size, dtype=bool)
    identified: set[int] = set()
    rewards: list[float] = []
    accepted = 0
    remaining = inst.k
    s0, d0, size = inst.s0, inst.delta0, cfg.subset_size

    for rounds in range(1, cfg.max_rounds + 1):
        draw = rng.choice(inst.universe_size, size=size, replace=False)
        overlap = int(oracle_mask[draw].sum())
        reward = (overlap * s0 - (size - overlap) * d0) / (size * s0)
        rewards.append(reward)
        if reward > cfg.threshold:
            accepted += 1
            identified.update(int(i) for i in draw)
            hits = draw[oracle_mask[draw] & ~covered[draw]]
            covered[hits] = True
            remaining -= len(hits)
            if remaining == 0:
                return SearchTrace(rounds, accepted, True, rewards, frozenset(identified))
    return SearchTrace(cfg.max_rounds, accepted, False, rewards, frozenset(identified))


def hypergeometric_tail(n: int, k: int, s: int, min_count: int) -> float:
    """P(X >= min_count) for X ~ Hypergeometric(n, k, s), exact.

    Terms are exact integer binomials summed before a single division, so the
    result is correct to float rounding.
    """
    if not (0 <= k <= n and 0 <= s <= n):
        raise ValueError("need 0 <= k <= n and 0 <= s <= n")
    if min_count <= max(0, s - (n - k)):
        return 1.0
    if min_count > min(k, s):
        return 0.0
    numerator = sum(
        math.comb(k, i) * math.comb(n - k, s - i) for i in range(min_count, min(k, s) + 1)
    )
    return numerator / math.comb(n, s)


def acceptance_probability(inst: OracleInstance, cfg: SearchConfig) -> float:
    """Closed-form probability that one uniform draw is accepted.

    Acceptance means the draw's oracle count strictly exceeds S·θ, i.e. the
    count reaches floor(S·θ) + 1.
    """
    cut = cfg.subset_size * acceptance_occupancy(inst, cfg.threshold)
    return hypergeometric_tail(
        inst.universe_size, inst.k, cfg.subset_size, math.floor(cut) + 1
    )


def measure_acceptance_rate(
    inst: OracleInstance, cfg: SearchConfig, rounds: int, seed: int | None = None
) -> float:
    """Empirical acceptance frequency over independent rounds (no stopping)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    oracle_mask = np.zeros(inst.universe_size, dtype=bool)
    oracle_mask[list(inst.oracle_set)] = True
    s0, d0, size = inst.s0, inst.delta0, cfg.subset_size
    accepted = 0
    for _ in range(rounds):
        draw = rng.choice(inst.universe_size, size=size, replace=False)
        overlap = int(oracle_mask[draw].sum())
        reward = (overlap * s0 - (size - overlap) * d0) / (size * s0)
        if reward > cfg.threshold:
            accepted += 1
    return accepted / rounds


@dataclass(frozen=True)
class RecoverySummary:
    trials: int
    recovered_trials: int
    mean_rounds: float
    median_rounds: float
    quantiles: dict[str, float]
    acceptance_rate: float
    rounds_per_trial: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "recovered_trials": self.recovered_trials,
            "mean_rounds": self.mean_rounds,
            "median_rounds": self.median_rounds,
            "quantiles": dict(self.quantiles),
            "acceptance_rate": self.acceptance_rate,
        }


def estimate_recovery_rounds(
    inst: OracleInstance, cfg: SearchConfig, trials: int
) -> RecoverySummary:
    """Monte-Carlo rounds-to-recovery statistics over independent trials.

    Each trial runs with a generator derived from (base seed, trial index) so
    parallel and serial execution agree. Unrecovered trials count at
    max_rounds (censored). The aggregate acceptance rate over all executed
    rounds is reported for comparison with the closed-form tail.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rounds_per_trial = []
    recovered = 0
    accepted_total = 0
    rounds_total = 0
    for trial in range(trials):
        trace = run_subset_search(inst, cfg, seed=[cfg.seed, trial])
        rounds_per_trial.append(trace.rounds_executed)
        recovered += int(trace.recovered)
        accepted_total += trace.accepted_rounds
        rounds_total += trace.rounds_executed
    arr = np.array(rounds_per_trial, dtype=np.float64)
    quantiles = {
        f"p{q}": float(np.quantile(arr, q / 100.0)) for q in (10, 25, 75, 90)
    }
    return RecoverySummary(
        trials=trials,
        recovered_trials=recovered,
        mean_rounds=float(arr.mean()),
        median_rounds=float(np.median(arr)),
        quantiles=quantiles,
        acceptance_rate=accepted_total / rounds_total if rounds_total else 0.0,
        rounds_per_trial=tuple(rounds_per_trial),
    )


# -- experiment config / output -------------------------------------------------


def load_experiment(source: IO[str]) -> tuple[OracleInstance, SearchConfig, int]:
    """Experiment JSON {N, K, s0, delta0, S, threshold, max_rounds, trials, seed}.

    The oracle set is the first K item ids; by symmetry of uniform draws any
    other choice gives the same law.
    """
    raw = json.load(source)
    inst = OracleInstance(
        universe_size=int(raw["N"]),
        oracle_set=frozenset(range(int(raw["K"]))),
        s0=float(raw.get("s0", 1.0)),
        delta0=float(raw.get("delta0", 0.0)),
    )
    cfg = SearchConfig(
        subset_size=int(raw["S"]),
        threshold=float(raw["threshold"]),
        max_rounds=int(raw.get("max_rounds", 10000)),
        seed=int(raw.get("seed", 42)),
    )
    return inst, cfg, int(raw.get("trials", 100))


def write_trials_csv(summary: RecoverySummary, sink: IO[str]) -> None:
    writer = csv.writer(sink)
    writer.writerow(["trial", "rounds"])
    for trial, rounds in enumerate(summary.rounds_per_trial):
        writer.writerow([trial, rounds])


def write_summary_json(
    summary: RecoverySummary, inst: OracleInstance, cfg: SearchConfig, sink: IO[str]
) -> None:
    payload = {
        "config": {
            "N": inst.universe_size,
            "K": inst.k,
            "s0": inst.s0,
            "delta0": inst.delta0,
            "S": cfg.subset_size,
            "threshold": cfg.threshold,
            "max_rounds": cfg.max_rounds,
            "seed": cfg.seed,
        },
        "closed_form_acceptance": acceptance_probability(inst, cfg),
        **summary.to_dict(),
    }
    json.dump(payload, sink, sort_keys=True, indent=2)
    sink.write("\n")
