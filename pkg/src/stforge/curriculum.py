"""Difficulty stratification and capability-aware curriculum statistics.

Two halves: histogram/schedule machinery over annotated difficulty scores,
and the probe pipeline that turns per-query reward samples into learnability
scores, region labels, and trajectory budgets.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ._hashing import derive_seed
from .corpus import Query
from .errors import StforgeError

ALL_INTENTS = "ALL"
DEFAULT_K_MAX = 8
DEFAULT_EPS = 0.05


class MissingDifficulty(StforgeError):
    pass


class MissingAnnotation(StforgeError):
    pass


class EmptyRewards(StforgeError):
    pass


class RewardOutOfRange(StforgeError):
    pass


class EmptyBatch(StforgeError):
    pass


class EmptyEligibleSet(StforgeError):
    pass


class Region(str, Enum):
    TRIVIAL = "Trivial"
    NOISE = "Noise"
    LEARNABLE = "Learnable"


# ---------------------------------------------------------------------------
# Probe statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeStats:
    """Empirical reward moments for one query's K probe rollouts.

    sigma2_hat is the population variance (divide by K): the K rollouts are
    treated as the full empirical distribution, not a sample from one.
    """

    query_id: str
    rewards: tuple[float, ...]
    mu_hat: float
    sigma2_hat: float
    K: int


def probe_stats(query_id: str, rewards: Sequence[float]) -> ProbeStats:
    if len(rewards) == 0:
        raise EmptyRewards(f"query {query_id!r} has no probe rewards")
    for r in rewards:
        if not (0.0 <= r <= 1.0):
            raise RewardOutOfRange(f"query {query_id!r} reward {r} outside [0, 1]")
    k = len(rewards)
    mu = sum(rewards) / k
    sigma2 = sum((r - mu) ** 2 for r in rewards) / k
    return ProbeStats(
        query_id=query_id, rewards=tuple(rewards), mu_hat=mu, sigma2_hat=sigma2, K=k
    )


def classify_region(
    stats: ProbeStats, eps_mu: float = DEFAULT_EPS, eps_var: float = DEFAULT_EPS
) -> Region:
    """Trivial: confidently solved. Noise: confidently unsolvable. Learnable:
    everything on the boundary, where the probe signal is informative."""
    for name, eps in (("eps_mu", eps_mu), ("eps_var", eps_var)):
        if not (0.0 < eps < 0.5):
            raise ValueError(f"{name} must lie in (0, 0.5)")
    if stats.mu_hat >= 1.0 - eps_mu and stats.sigma2_hat <= eps_var:
        return Region.TRIVIAL
    if stats.mu_hat <= eps_mu and stats.sigma2_hat <= eps_var:
        return Region.NOISE
    return Region.LEARNABLE


@dataclass(frozen=True)
class LearnabilityRecord:
    """Ranking record for one probed query: raw score sigma2*mu, its min-max
    normalized value over the batch, the region label, and the allotted
    trajectory budget (0 outside the Learnable region)."""

    query_id: str
    raw_score: float
    normalized_score: float
    region: Region
    budget: int = 0


def learnability_scores(
    stats: Sequence[ProbeStats],
    eps_mu: float = DEFAULT_EPS,
    eps_var: float = DEFAULT_EPS,
) -> list[LearnabilityRecord]:
    """Score = variance * mean: high only when the policy is inconsistent yet
    sometimes successful. Normalization is min-max over the given batch; a
    batch with all-equal scores maps uniformly to 0.5."""
    if not stats:
        raise EmptyBatch("no probe statistics supplied")
    raw = [s.sigma2_hat * s.mu_hat for s in stats]
    lo, hi = min(raw), max(raw)
    if hi == lo:
        normalized = [0.5] * len(raw)
    else:
        normalized = [(r - lo) / (hi - lo) for r in raw]
    return [
        LearnabilityRecord(
            query_id=s.query_id,
            raw_score=r,
            normalized_score=n,
            region=classify_region(s, eps_mu, eps_var),
        )
        for s, r, n in zip(stats, raw, normalized)
    ]


def allocate_budget(
    records: Sequence[LearnabilityRecord], k_max: int = DEFAULT_K_MAX
) -> list[LearnabilityRecord]:
    """Rank Learnable records by raw score (ties by id) and assign budgets
    max(1, ceil(k_max * (n - i) / n)): the top record gets k_max, budgets are
    non-increasing along the ranking, and no retained record starves.
    Records outside the Learnable region get budget 0."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    learnable = [r for r in records if r.region is Region.LEARNABLE]
    ranked = sorted(learnable, key=lambda r: (-r.raw_score, r.query_id))
    n = len(ranked)
    budget_of = {
        r.query_id: max(1, -((k_max * (n - i)) // -n))  # ceil via negative floor div
        for i, r in enumerate(ranked)
    }
    return [replace(r, budget=budget_of.get(r.query_id, 0)) for r in records]


# ---------------------------------------------------------------------------
# Difficulty histogram
# ---------------------------------------------------------------------------

def difficulty_histogram(corpus: Iterable[Query]) -> dict[tuple[str, int], int]:
    """Count queries per (leaf intent, difficulty), plus an ALL aggregate row
    per difficulty. Raises if any query lacks annotation or difficulty."""
    missing_diff: list[str] = []
    missing_ann: list[str] = []
    hist: dict[tuple[str, int], int] = {}
    for q in corpus:
        if q.annotation is None:
            missing_ann.append(q.id)
            continue
        if q.difficulty is None:
            missing_diff.append(q.id)
            continue
        intent = q.annotation.primary_intent
        hist[(intent, q.difficulty)] = hist.get((intent, q.difficulty), 0) + 1
        hist[(ALL_INTENTS, q.difficulty)] = hist.get((ALL_INTENTS, q.difficulty), 0) + 1
    if missing_ann:
        raise MissingAnnotation(f"queries without annotation: {missing_ann[:10]}")
    if missing_diff:
        raise MissingDifficulty(f"queries without difficulty: {missing_diff[:10]}")
    return hist


def write_histogram_csv(path: str | Path, hist: Mapping[tuple[str, int], int]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["intent", "difficulty", "count"])
        for (intent, difficulty) in sorted(hist):
            writer.writerow([intent, difficulty, hist[(intent, difficulty)]])


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchedulePhase:
    difficulty_weights: Mapping[int, float]
    batch_size: int
    num_batches: int


@dataclass(frozen=True)
class CurriculumSchedule:
    phases: tuple[SchedulePhase, ...]
    rng_seed: int = 0

    def validate(self) -> None:
        if not self.phases:
            raise ValueError("schedule needs at least one phase")
        for i, phase in enumerate(self.phases):
            if phase.batch_size < 1 or phase.num_batches < 1:
                raise ValueError(f"phase {i}: batch_size and num_batches must be >= 1")
            if any(w < 0 for w in phase.difficulty_weights.values()):
                raise ValueError(f"phase {i}: negative difficulty weight")
            if not any(w > 0 for w in phase.difficulty_weights.values()):
                raise ValueError(f"phase {i}: needs at least one positive weight")


def build_schedule(
    corpus: Sequence[Query], schedule: CurriculumSchedule
) -> list[list[list[str]]]:
    """Emit [phase][batch][query ids] via per-phase weighted sampling without
    replacement (weight = the phase's weight for the query's difficulty).

    Sampling uses exponential-key order statistics, so the draw is a single
    deterministic pass under the schedule's seed. Phases draw independently;
    a query may recur across phases but never within one.
    """
    schedule.validate()
    by_difficulty: dict[int, list[str]] = {}
    for q in corpus:
        if q.difficulty is not None:
            by_difficulty.setdefault(q.difficulty, []).append(q.id)
    for ids in by_difficulty.values():
        ids.sort()

    out: list[list[list[str]]] = []
    for phase_idx, phase in enumerate(schedule.phases):
        eligible: list[tuple[str, float]] = []
        for difficulty, weight in sorted(phase.difficulty_weights.items()):
            if weight > 0:
                for qid in by_difficulty.get(difficulty, ()):
                    eligible.append((qid, weight))
        if not eligible:
            raise EmptyEligibleSet(f"phase {phase_idx}: no queries in any weighted bucket")
        rng = random.Random(derive_seed(schedule.rng_seed, f"phase-{phase_idx}"))
        keyed = sorted(
            ((rng.random() ** (1.0 / w), qid) for qid, w in eligible),
            key=lambda kv: (-kv[0], kv[1]),
        )
        want = phase.batch_size * phase.num_batches
        picked = [qid for _, qid in keyed[:want]]
        batches = [
            picked[b * phase.batch_size : (b + 1) * phase.batch_size]
            for b in range(phase.num_batches)
        ]
        out.append([b for b in batches if b])
    return out


def tiny_dataset(corpus: Sequence[Query], fraction: float = 0.1, seed: int = 0) -> list[Query]:
    """Deterministic warm-up subsample: ceil(fraction * n) queries drawn
    uniformly without replacement."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    n = len(corpus)
    want = -((-n * fraction) // 1)  # ceil
    rng = random.Random(derive_seed(seed, "tiny-dataset"))
    order = sorted(corpus, key=lambda q: q.id)
    rng.shuffle(order)
    return order[: int(want)]
