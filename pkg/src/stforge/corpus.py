"""Data model for queries, the intent taxonomy, annotations, and trajectories.

All types are immutable after construction and validated on construction.
Line-oriented parse/serialize helpers are canonical: serializing a parsed
record reproduces the input bytes exactly, so files round-trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import StforgeError

OTHER_OR_UNCLEAR = "other_or_unclear"
MAX_SECONDARY_INTENTS = 3
DIFFICULTY_RANGE = range(-1, 6)


class MalformedTaxonomy(StforgeError):
    pass


class UnknownIntentId(StforgeError):
    pass


class TooManySecondary(StforgeError):
    pass


class DuplicateIntent(StforgeError):
    pass


class MalformedRecord(StforgeError):
    """A corpus/trajectory line violates the record format or an invariant."""


# ---------------------------------------------------------------------------
# Taxonomy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaxonomyNode:
    """A node in the intent taxonomy.

    Node ids are dot paths; a child extends its parent's id by exactly one
    segment. The synthetic document root has the empty id and level 0. Every
    non-leaf node below the root owns exactly one catch-all child flagged
    is_other, which absorbs intents the taxonomy does not cover yet.
    """

    id: str
    label: str
    level: int
    children: tuple["TaxonomyNode", ...] = ()
    is_other: bool = False

    @property
    def is_leaf(self) -> bool:
        return not self.children


def _build_node(doc: Any, parent_id: str, level: int) -> TaxonomyNode:
    if not isinstance(doc, dict):
        raise MalformedTaxonomy(f"taxonomy node must be an object, got {type(doc).__name__}")
    node_id = doc.get("id")
    if not isinstance(node_id, str):
        raise MalformedTaxonomy("taxonomy node is missing a string 'id'")
    if level > 0:
        prefix = parent_id + "." if parent_id else ""
        tail = node_id[len(prefix):] if node_id.startswith(prefix) else ""
        if not tail or "." in tail:
            raise MalformedTaxonomy(
                f"node id {node_id!r} does not extend parent {parent_id!r} by one segment"
            )
    if level > 3:
        raise MalformedTaxonomy(f"node {node_id!r} exceeds the maximum depth of 3")
    children = tuple(
        _build_node(child, node_id, level + 1) for child in doc.get("children", ())
    )
    return TaxonomyNode(
        id=node_id,
        label=str(doc.get("label", node_id)),
        level=level,
        children=children,
        is_other=bool(doc.get("is_other", False)),
    )


def _validate_tree(root: TaxonomyNode) -> None:
    seen: set[str] = set()
    for node in iter_nodes(root):
        if node.id in seen:
            raise MalformedTaxonomy(f"duplicate node id {node.id!r}")
        seen.add(node.id)
        # The synthetic root is a container; the Other rule applies below it.
        if node.level >= 1 and not node.is_leaf:
            others = [c for c in node.children if c.is_other]
            if len(others) != 1:
                raise MalformedTaxonomy(
                    f"non-leaf node {node.id!r} must have exactly one Other child, found {len(others)}"
                )
    if OTHER_OR_UNCLEAR in seen:
        raise MalformedTaxonomy(f"{OTHER_OR_UNCLEAR!r} is reserved and may not appear in the tree")


def load_taxonomy(path: str | Path) -> TaxonomyNode:
    """Load and validate a taxonomy document. Raises MalformedTaxonomy."""
    with open(path, "rb") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedTaxonomy(f"not valid JSON: {exc}") from exc
    if isinstance(doc, dict) and doc.get("id", "") != "":
        raise MalformedTaxonomy("the document root must carry the empty id; category ids are dot paths from it")
    root = _build_node(doc, parent_id="", level=0)
    _validate_tree(root)
    return root


def default_taxonomy_path() -> Path:
    return Path(str(resources.files("stforge").joinpath("data/intent_taxonomy.json")))


def load_default_taxonomy() -> TaxonomyNode:
    return load_taxonomy(default_taxonomy_path())


def iter_nodes(root: TaxonomyNode) -> Iterator[TaxonomyNode]:
    """Depth-first iteration over all nodes, including the root."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def leaves(root: TaxonomyNode) -> list[TaxonomyNode]:
    return [n for n in iter_nodes(root) if n.is_leaf and n.level > 0]


def nodes_at_level(root: TaxonomyNode, level: int) -> list[TaxonomyNode]:
    return [n for n in iter_nodes(root) if n.level == level]


def find_node(root: TaxonomyNode, node_id: str) -> TaxonomyNode | None:
    for node in iter_nodes(root):
        if node.id == node_id:
            return node
    return None


# ---------------------------------------------------------------------------
# Annotations and queries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalDetails:
    departure: str | None = None
    arrival: str | None = None


@dataclass(frozen=True)
class AnnotationVector:
    """Composite intent annotation: one primary leaf intent, up to three
    secondary leaf intents, explicit constraint dimension ids, and optional
    departure/arrival constraints."""

    primary_intent: str
    secondary_intents: tuple[str, ...] = ()
    constraints: tuple[str, ...] = ()
    temporal_details: TemporalDetails | None = None


def _resolve_leaf(intent_id: str, root: TaxonomyNode, role: str) -> None:
    if intent_id == OTHER_OR_UNCLEAR:
        return
    node = find_node(root, intent_id)
    if node is None or not node.is_leaf or node.level == 0:
        raise UnknownIntentId(f"{role} intent {intent_id!r} is not a leaf of the taxonomy")


def validate_annotation(av: AnnotationVector, root: TaxonomyNode) -> AnnotationVector:
    """Check every intent id against the taxonomy; returns av unchanged."""
    if len(av.secondary_intents) > MAX_SECONDARY_INTENTS:
        raise TooManySecondary(
            f"{len(av.secondary_intents)} secondary intents exceed the cap of {MAX_SECONDARY_INTENTS}"
        )
    if len(set(av.secondary_intents)) != len(av.secondary_intents):
        raise DuplicateIntent("secondary intents contain duplicates")
    if av.primary_intent in av.secondary_intents:
        raise DuplicateIntent(f"primary intent {av.primary_intent!r} repeated as secondary")
    _resolve_leaf(av.primary_intent, root, "primary")
    for sid in av.secondary_intents:
        _resolve_leaf(sid, root, "secondary")
    return av


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    annotation: AnnotationVector | None = None
    difficulty: int | None = None
    user_profile: Mapping[str, Any] | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise MalformedRecord(f"query {self.id!r} has empty text")
        if self.difficulty is not None and self.difficulty not in DIFFICULTY_RANGE:
            raise MalformedRecord(
                f"query {self.id!r} difficulty {self.difficulty} outside {{-1..5}}"
            )


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

class StepKind(str, Enum):
    ASSISTANT_TEXT = "assistant_text"
    TOOL_CALL = "tool_call"
    TOOL_OBSERVATION = "tool_observation"


@dataclass(frozen=True)
class TokenRecord:
    """Per-token log-probability channels. Old-policy and reference-policy
    channels are optional so curation-only pipelines can omit them."""

    logp_policy: float
    logp_old: float | None = None
    logp_ref: float | None = None


@dataclass(frozen=True)
class Step:
    kind: StepKind
    text: str
    masked: bool
    tokens: tuple[TokenRecord, ...] = ()

    def __post_init__(self):
        if self.masked != (self.kind is StepKind.TOOL_OBSERVATION):
            raise MalformedRecord(
                f"step masked={self.masked} contradicts kind={self.kind.value}; "
                "only tool observations are masked"
            )

    @property
    def token_count(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Trajectory:
    query_id: str
    steps: tuple[Step, ...]
    token_count: int

    def __post_init__(self):
        prev: Step | None = None
        for step in self.steps:
            if step.kind is StepKind.TOOL_OBSERVATION:
                if prev is None or prev.kind is not StepKind.TOOL_CALL:
                    raise MalformedRecord(
                        f"trajectory {self.query_id!r}: tool observation not preceded by a tool call"
                    )
            prev = step
        expected = sum(s.token_count for s in self.steps)
        if self.token_count != expected:
            raise MalformedRecord(
                f"trajectory {self.query_id!r}: token_count {self.token_count} != sum of steps {expected}"
            )


# ---------------------------------------------------------------------------
# Canonical line formats (JSON object per line, '\n' terminated on disk)
# ---------------------------------------------------------------------------

def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _annotation_to_obj(av: AnnotationVector) -> dict:
    obj: dict[str, Any] = {
        "primary_intent": av.primary_intent,
        "secondary_intents": list(av.secondary_intents),
        "constraints": list(av.constraints),
    }
    if av.temporal_details is not None:
        td: dict[str, str] = {}
        if av.temporal_details.departure is not None:
            td["departure"] = av.temporal_details.departure
        if av.temporal_details.arrival is not None:
            td["arrival"] = av.temporal_details.arrival
        obj["temporal_details"] = td
    return obj


def _annotation_from_obj(obj: Any) -> AnnotationVector:
    if not isinstance(obj, dict) or "primary_intent" not in obj:
        raise MalformedRecord("annotation object must carry primary_intent")
    td = None
    if "temporal_details" in obj:
        raw = obj["temporal_details"]
        td = TemporalDetails(departure=raw.get("departure"), arrival=raw.get("arrival"))
    return AnnotationVector(
        primary_intent=obj["primary_intent"],
        secondary_intents=tuple(obj.get("secondary_intents", ())),
        constraints=tuple(obj.get("constraints", ())),
        temporal_details=td,
    )


def serialize_query(q: Query) -> str:
    obj: dict[str, Any] = {"id": q.id, "text": q.text}
    if q.annotation is not None:
        obj["annotation"] = _annotation_to_obj(q.annotation)
    if q.difficulty is not None:
        obj["difficulty"] = q.difficulty
    if q.user_profile is not None:
        obj["user_profile"] = dict(q.user_profile)
    return _dumps(obj)


def parse_query(line: str) -> Query:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"corpus line is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
        raise MalformedRecord("corpus line must carry id and text")
    annotation = _annotation_from_obj(obj["annotation"]) if "annotation" in obj else None
    return Query(
        id=str(obj["id"]),
        text=obj["text"],
        annotation=annotation,
        difficulty=obj.get("difficulty"),
        user_profile=obj.get("user_profile"),
    )


def serialize_trajectory(t: Trajectory) -> str:
    steps = []
    for s in t.steps:
        step_obj: dict[str, Any] = {"kind": s.kind.value, "text": s.text, "masked": s.masked}
        if s.tokens:
            step_obj["tokens"] = [
                {
                    k: v
                    for k, v in (
                        ("logp_policy", tok.logp_policy),
                        ("logp_old", tok.logp_old),
                        ("logp_ref", tok.logp_ref),
                    )
                    if v is not None
                }
                for tok in s.tokens
            ]
        steps.append(step_obj)
    return _dumps({"query_id": t.query_id, "steps": steps, "token_count": t.token_count})


def parse_trajectory(line: str) -> Trajectory:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"trajectory line is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "query_id" not in obj or "steps" not in obj:
        raise MalformedRecord("trajectory line must carry query_id and steps")
    steps = []
    for raw in obj["steps"]:
        try:
            kind = StepKind(raw["kind"])
        except (KeyError, ValueError) as exc:
            raise MalformedRecord(f"bad step kind in trajectory {obj['query_id']!r}") from exc
        tokens = tuple(
            TokenRecord(
                logp_policy=tok["logp_policy"],
                logp_old=tok.get("logp_old"),
                logp_ref=tok.get("logp_ref"),
            )
            for tok in raw.get("tokens", ())
        )
        steps.append(Step(kind=kind, text=raw.get("text", ""), masked=raw["masked"], tokens=tokens))
    token_count = obj.get("token_count", sum(s.token_count for s in steps))
    return Trajectory(query_id=str(obj["query_id"]), steps=tuple(steps), token_count=token_count)


def read_corpus(path: str | Path) -> list[Query]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(parse_query(line))
    return out


def write_corpus(path: str | Path, queries: Iterable[Query]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for q in queries:
            fh.write(serialize_query(q))
            fh.write("\n")


def read_trajectories(path: str | Path) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(parse_trajectory(line))
    return out


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for t in trajectories:
            fh.write(serialize_trajectory(t))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Other-bucket bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class OtherBucketReport:
    """Counts of annotations falling into each node's Other child.

    Keys are the ids of non-leaf nodes (the owners of Other buckets); the
    reserved out-of-tree id lands under the root's empty id. Queries without
    an annotation are skipped and tallied separately.
    """

    counts: dict[str, int] = field(default_factory=dict)
    samples: dict[str, list[str]] = field(default_factory=dict)
    skipped_unannotated: int = 0

    @property
    def total_other(self) -> int:
        return sum(self.counts.values())


def other_bucket_report(corpus: Iterable[Query], root: TaxonomyNode) -> OtherBucketReport:
    report = OtherBucketReport()
    parent_of_other: dict[str, str] = {}
    for node in iter_nodes(root):
        if not node.is_leaf or node.level == 0:
            report.counts[node.id] = 0
            report.samples[node.id] = []
        for child in node.children:
            if child.is_other:
                parent_of_other[child.id] = node.id
    report.counts.setdefault(root.id, 0)
    report.samples.setdefault(root.id, [])
    for q in corpus:
        if q.annotation is None:
            report.skipped_unannotated += 1
            continue
        primary = q.annotation.primary_intent
        if primary == OTHER_OR_UNCLEAR:
            owner = root.id
        elif primary in parent_of_other:
            owner = parent_of_other[primary]
        else:
            continue
        report.counts[owner] += 1
        report.samples[owner].append(q.id)
    return report
