"""Numeric kernels for the post-training objectives.

Operates purely on supplied per-token log-probability channels: masked SFT
loss, group-normalized advantages, token-level clipped surrogates, the
sequence-level geometric-mean ratio, and a nonnegative per-token KL
estimator. Values only; no autodiff and no parameter updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .corpus import Trajectory
from .errors import StforgeError

RatioMode = Literal["token_grpo", "sequence_gspo"]


class AllMasked(StforgeError):
    pass


class GroupTooSmall(StforgeError):
    pass


class MissingOldPolicy(StforgeError):
    pass


class MissingRefPolicy(StforgeError):
    pass


class ChannelLengthMismatch(StforgeError):
    pass


@dataclass(eq=False)
class TokenLogProbs:
    """Per-token log-probability channels for one trajectory.

    mask is True where a token contributes to losses (assistant text and tool
    calls); tool-observation tokens carry False. All channels are float64 and
    must share one length.
    """

    logp_policy: np.ndarray
    mask: np.ndarray
    logp_old: np.ndarray | None = None
    logp_ref: np.ndarray | None = None

    def __post_init__(self):
        self.logp_policy = np.asarray(self.logp_policy, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        n = self.logp_policy.shape[0]
        if n < 1:
            raise ChannelLengthMismatch("trajectory has no tokens")
        if self.mask.shape[0] != n:
            raise ChannelLengthMismatch(f"mask length {self.mask.shape[0]} != {n}")
        for name in ("logp_old", "logp_ref"):
            channel = getattr(self, name)
            if channel is not None:
                channel = np.asarray(channel, dtype=np.float64)
                setattr(self, name, channel)
                if channel.shape[0] != n:
                    raise ChannelLengthMismatch(f"{name} length {channel.shape[0]} != {n}")
        for name in ("logp_policy", "logp_old", "logp_ref"):
            channel = getattr(self, name)
            if channel is None:
                continue
            if not np.all(np.isfinite(channel)):
                raise ChannelLengthMismatch(f"{name} contains non-finite entries")
            if np.any(channel > 0.0):
                raise ChannelLengthMismatch(f"{name} contains positive log-probabilities")

    def __len__(self) -> int:
        return self.logp_policy.shape[0]

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "TokenLogProbs":
        """Flatten a trajectory's step token records into channel arrays.

        Optional channels are kept only when present on every token.
        """
        policy, old, ref, mask = [], [], [], []
        for step in traj.steps:
            for tok in step.tokens:
                policy.append(tok.logp_policy)
                old.append(tok.logp_old)
                ref.append(tok.logp_ref)
                mask.append(not step.masked)
        if not policy:
            raise ChannelLengthMismatch(f"trajectory {traj.query_id!r} has no tokens")
        return cls(
            logp_policy=np.array(policy, dtype=np.float64),
            mask=np.array(mask, dtype=bool),
            logp_old=None if any(v is None for v in old) else np.array(old, dtype=np.float64),
            logp_ref=None if any(v is None for v in ref) else np.array(ref, dtype=np.float64),
        )


@dataclass(eq=False)
class RolloutMember:
    trajectory: TokenLogProbs
    reward: float


@dataclass(eq=False)
class GroupRollout:
    query_id: str
    members: tuple[RolloutMember, ...]

    @property
    def G(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class RLConfig:
    clip_eps: float = 0.2
    kl_beta: float = 0.0
    adv_delta: float = 1e-8
    ratio_mode: RatioMode = "token_grpo"
    mask_gspo: bool = False  # extension: restrict the sequence ratio to contributing tokens

    def validate(self) -> None:
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.adv_delta <= 0.0:
            raise ValueError("adv_delta must be > 0")
        if self.kl_beta < 0.0:
            raise ValueError("kl_beta must be >= 0")
        if self.ratio_mode not in ("token_grpo", "sequence_gspo"):
            raise ValueError(f"unknown ratio_mode {self.ratio_mode!r}")


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

def sft_masked_loss(t: TokenLogProbs) -> float:
    """Mean negative log-likelihood over contributing tokens only.

    Observation tokens are excluded by boolean selection before summation,
    so inserting masked tokens can never perturb the result.
    """
    selected = t.logp_policy[t.mask]
    if selected.size == 0:
        raise AllMasked("every token is masked; the normalizer would be zero")
    return float(-np.sum(selected) / selected.size)


def group_advantages(rewards: Sequence[float], delta: float = 1e-8) -> np.ndarray:
    """(r_i - mean) / (population std + delta). Sums to ~0; a uniform group
    maps to exactly zero advantages."""
    if delta <= 0.0:
        raise ValueError("delta must be > 0")
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[0] < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {r.shape[0]}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards contain non-finite entries")
    mean = np.mean(r)
    std = np.sqrt(np.mean((r - mean) ** 2))
    return (r - mean) / (std + delta)


def token_ratios(t: TokenLogProbs) -> np.ndarray:
    """Per-token importance ratios exp(logp_policy - logp_old)."""
    if t.logp_old is None:
        raise MissingOldPolicy("logp_old channel is required for ratios")
    return np.exp(t.logp_policy - t.logp_old)


def gspo_sequence_ratio(t: TokenLogProbs, mask_only: bool = False) -> float:
    """Geometric mean of per-token likelihood ratios over the trajectory.

    By default the mean runs over every token, observations included. With
    mask_only=True (an extension, off by default) it runs over contributing
    tokens only.
    """
    if t.logp_old is None:
        raise MissingOldPolicy("logp_old channel is required for the sequence ratio")
    gaps = t.logp_policy - t.logp_old
    if mask_only:
        gaps = gaps[t.mask]
        if gaps.size == 0:
            raise AllMasked("no contributing tokens for the masked sequence ratio")
    return float(np.exp(np.mean(gaps)))


def clipped_surrogate(ratio: float, advantage: float, eps: float) -> float:
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    if ratio <= 0.0:
        raise ValueError("ratio must be positive")
    clamped = min(max(ratio, 1.0 - eps), 1.0 + eps)
    return min(ratio * advantage, clamped * advantage)


def kl_term(t: TokenLogProbs) -> float:
    """Mean of exp(g) - g - 1 with g = logp_ref - logp_policy over
    contributing tokens; nonnegative for every input, zero iff the policies
    agree on all contributing tokens."""
    if t.logp_ref is None:
        raise MissingRefPolicy("logp_ref channel is required for the KL term")
    gaps = (t.logp_ref - t.logp_policy)[t.mask]
    if gaps.size == 0:
        return 0.0
    return float(np.mean(np.exp(gaps) - gaps - 1.0))


def _clip_active(ratio: float, advantage: float, eps: float) -> bool:
    return (ratio > 1.0 + eps and advantage > 0.0) or (ratio < 1.0 - eps and advantage < 0.0)


@dataclass(frozen=True)
class ObjectiveBreakdown:
    mode: str
    G: int
    objective: float
    mean_kl: float | None
    clip_fraction: float


def evaluate_group(group: GroupRollout, cfg: RLConfig) -> ObjectiveBreakdown:
    """Evaluate the clipped objective for one rollout group.

    token_grpo: mean over members of the per-token average surrogate, the
    per-token average running over the full trajectory length.
    sequence_gspo: one surrogate per member at its sequence-level ratio.
    A kl_beta > 0 subtracts beta times the group-mean KL term.
    """
    cfg.validate()
    if group.G < 2:
        raise GroupTooSmall(f"group {group.query_id!r} has G={group.G} < 2")
    advantages = group_advantages([m.reward for m in group.members], cfg.adv_delta)

    surrogates: list[float] = []
    clipped_hits = 0
    clip_total = 0
    for member, adv in zip(group.members, advantages):
        adv = float(adv)
        if cfg.ratio_mode == "token_grpo":
            ratios = token_ratios(member.trajectory)
            terms = [clipped_surrogate(float(r), adv, cfg.clip_eps) for r in ratios]
            surrogates.append(float(np.mean(terms)))
            clipped_hits += sum(_clip_active(float(r), adv, cfg.clip_eps) for r in ratios)
            clip_total += len(ratios)
        else:
            s = gspo_sequence_ratio(member.trajectory, mask_only=cfg.mask_gspo)
            surrogates.append(clipped_surrogate(s, adv, cfg.clip_eps))
            clipped_hits += _clip_active(s, adv, cfg.clip_eps)
            clip_total += 1

    refs_present = all(m.trajectory.logp_ref is not None for m in group.members)
    if cfg.kl_beta > 0.0 and not refs_present:
        raise MissingRefPolicy("kl_beta > 0 requires logp_ref on every trajectory")
    mean_kl = (
        float(np.mean([kl_term(m.trajectory) for m in group.members])) if refs_present else None
    )

    objective = float(np.mean(surrogates))
    if cfg.kl_beta > 0.0:
        objective -= cfg.kl_beta * mean_kl
    return ObjectiveBreakdown(
        mode=cfg.ratio_mode,
        G=group.G,
        objective=objective,
        mean_kl=mean_kl,
        clip_fraction=clipped_hits / clip_total if clip_total else 0.0,
    )


def grpo_objective(group: GroupRollout, cfg: RLConfig) -> float:
    """Scalar value of the clipped group objective under cfg.ratio_mode."""
    return evaluate_group(group, cfg).objective
