"""Rubric reward aggregation with scenario weights and a hallucination veto.

The final reward is a weighted sum of three dimension ratings (reasoning,
information fidelity, presentation), zeroed outright when the trajectory
contains a hallucinated fact. Weights depend on the task scenario; the three
reference presets can be overridden but are always renormalized to sum 1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .corpus import OTHER_OR_UNCLEAR, AnnotationVector
from .errors import StforgeError

WEIGHT_SUM_TOL = 1e-9
REPORT_CONSISTENCY_TOL = 1e-6


class UnknownScenario(StforgeError):
    pass


class RatingOutOfRange(StforgeError):
    pass


class WeightsNotNormalized(StforgeError):
    pass


class MalformedReport(StforgeError):
    pass


class InconsistentReport(StforgeError):
    pass


class ValueOutOfRange(StforgeError):
    pass


class Scenario(str, Enum):
    A_COMPLEX_PLANNING = "A_ComplexPlanning"
    B_INFO_RETRIEVAL = "B_InfoRetrieval"
    C_CONSULTATION = "C_Consultation"


@dataclass(frozen=True)
class Weights:
    w_reas: float
    w_info: float
    w_pres: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w_reas, self.w_info, self.w_pres)


@dataclass(frozen=True)
class Ratings:
    s_reas: float
    s_info: float
    s_pres: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.s_reas, self.s_info, self.s_pres)


DEFAULT_WEIGHTS: dict[Scenario, Weights] = {
    Scenario.A_COMPLEX_PLANNING: Weights(0.6, 0.3, 0.1),
    Scenario.B_INFO_RETRIEVAL: Weights(0.2, 0.6, 0.2),
    Scenario.C_CONSULTATION: Weights(0.3, 0.3, 0.4),
}

# Level-1 intent prefix -> scenario, used only when no scenario is supplied.
_SCENARIO_BY_PREFIX = {
    "planning_and_decision": Scenario.A_COMPLEX_PLANNING,
    "dynamic_information": Scenario.B_INFO_RETRIEVAL,
    "discovery": Scenario.B_INFO_RETRIEVAL,
    "rules_and_policies": Scenario.C_CONSULTATION,
    "application_interaction": Scenario.C_CONSULTATION,
    OTHER_OR_UNCLEAR: Scenario.C_CONSULTATION,
}


@dataclass(frozen=True)
class RewardReport:
    """A parsed evaluator verdict: ratings, weights, the veto flag, and the
    final scalar, with rationale text preserved verbatim."""

    weights: Weights
    ratings: Ratings
    hallucination: bool
    final: float
    scenario: Scenario | None = None
    rationale_fields: Mapping[str, str] = field(default_factory=dict)


def scenario_weights(
    scenario: Scenario | str,
    overrides: Mapping[Scenario, tuple[float, float, float]] | None = None,
) -> Weights:
    """Reference weights for a scenario; overrides are renormalized to sum 1
    while preserving their ratios."""
    try:
        tag = Scenario(scenario)
    except ValueError as exc:
        raise UnknownScenario(f"unknown scenario {scenario!r}") from exc
    if overrides and tag in overrides:
        raw = overrides[tag]
        if len(raw) != 3 or any(w < 0 for w in raw):
            raise WeightsNotNormalized(f"override for {tag.value} must be 3 nonnegative weights")
        total = sum(raw)
        if total <= 0:
            raise WeightsNotNormalized(f"override for {tag.value} sums to zero")
        return Weights(raw[0] / total, raw[1] / total, raw[2] / total)
    return DEFAULT_WEIGHTS[tag]


def aggregate_reward(weights: Weights, ratings: Ratings, hallucination: bool) -> float:
    """(1 - H) * sum(w_k * s_k), clamped to [0, 1]. H=1 is a hard veto."""
    for s in ratings.as_tuple():
        if not (0.0 <= s <= 1.0):
            raise RatingOutOfRange(f"rating {s} outside [0, 1]")
    w = weights.as_tuple()
    if any(x < 0 for x in w) or abs(sum(w) - 1.0) > WEIGHT_SUM_TOL:
        raise WeightsNotNormalized(f"weights {w} do not sum to 1")
    if hallucination:
        return 0.0
    total = w[0] * ratings.s_reas + w[1] * ratings.s_info + w[2] * ratings.s_pres
    return min(1.0, max(0.0, total))


def classify_scenario(
    annotation: AnnotationVector, override: Scenario | None = None
) -> Scenario:
    """Deterministic fallback keyed on the level-1 intent prefix. A supplied
    scenario always wins over the fallback."""
    if override is not None:
        return override
    prefix = annotation.primary_intent.split(".", 1)[0]
    return _SCENARIO_BY_PREFIX.get(prefix, Scenario.C_CONSULTATION)


# ---------------------------------------------------------------------------
# Evaluator report parsing
# ---------------------------------------------------------------------------

_REPORT_RE = re.compile(r"<evaluation_report>(.*?)</evaluation_report>", re.DOTALL)


def _tag(body: str, name: str, required: bool = True) -> str | None:
    m = re.search(rf"<{name}>(.*?)</{name}>", body, re.DOTALL)
    if m is None:
        if required:
            raise MalformedReport(f"report is missing <{name}>")
        return None
    return m.group(1).strip()


def _tag_float(body: str, name: str) -> float:
    raw = _tag(body, name)
    try:
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise MalformedReport(f"<{name}> does not contain a number: {raw!r}") from exc


def _unit_interval(value: float, name: str) -> float:
    if not (0.0 <= value <= 1.0):
        raise ValueOutOfRange(f"{name} = {value} outside [0, 1]")
    return value


def parse_evaluation_report(text: str) -> RewardReport:
    """Parse one evaluator report embedded anywhere in the text (surrounding
    prose and code fences are fine). The final score is recomputed from the
    parts and must agree with the reported value."""
    m = _REPORT_RE.search(text)
    if m is None:
        raise MalformedReport("no <evaluation_report> element found")
    body = m.group(1)

    flag_raw = _tag(body, "has_hallucination")
    flag_norm = flag_raw.lower()
    if flag_norm not in ("true", "false"):
        raise MalformedReport(f"<has_hallucination> must be true or false, got {flag_raw!r}")
    hallucination = flag_norm == "true"

    weights = Weights(
        w_reas=_unit_interval(_tag_float(body, "w_reasoning"), "w_reasoning"),
        w_info=_unit_interval(_tag_float(body, "w_integration"), "w_integration"),
        w_pres=_unit_interval(_tag_float(body, "w_presentation"), "w_presentation"),
    )
    if abs(sum(weights.as_tuple()) - 1.0) > REPORT_CONSISTENCY_TOL:
        raise InconsistentReport(f"weights {weights.as_tuple()} do not sum to 1")

    ratings = []
    rationales: dict[str, str] = {}
    for dim in ("reasoning", "integration", "presentation"):
        block = _tag(body, f"dimension_{dim}")
        rating = _tag(block, "rating")
        try:
            value = float(rating)
        except (TypeError, ValueError) as exc:
            raise MalformedReport(f"dimension_{dim} rating is not a number: {rating!r}") from exc
        ratings.append(_unit_interval(value, f"dimension_{dim} rating"))
        rationale = _tag(block, "rationale", required=False)
        if rationale is not None:
            rationales[f"{dim}_rationale"] = rationale
    ratings = Ratings(*ratings)

    details = _tag(body, "details", required=False)
    if details is not None:
        rationales["hallucination_details"] = details
    weight_rationale = _tag(body, "rationale", required=False)
    if weight_rationale is not None:
        rationales.setdefault("weight_rationale", weight_rationale)

    reported = _unit_interval(_tag_float(body, "final_score"), "final_score")
    recomputed = (0.0 if hallucination else sum(
        w * s for w, s in zip(weights.as_tuple(), ratings.as_tuple())
    ))
    if abs(reported - recomputed) > REPORT_CONSISTENCY_TOL:
        raise InconsistentReport(
            f"final_score {reported} disagrees with recomputed {recomputed:.8f}"
        )

    return RewardReport(
        weights=weights,
        ratings=ratings,
        hallucination=hallucination,
        final=reported,
        rationale_fields=rationales,
    )
