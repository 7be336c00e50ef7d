"""Three-stage query curation funnel.

Stage 1 removes lexical near-duplicates with MinHash signatures and LSH
banding at corpus level. Stage 2 prunes semantic near-duplicates per intent
bucket with a greedy distance-threshold scan over embeddings. Stage 3 keeps
the most representative survivors with k-center greedy selection.

Every stage is deterministic given (inputs, config): hash families come from
seeded splitmix64 streams and the semantic ANN index uses seeded hyperplanes.
"""

from __future__ import annotations

import json
import struct
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._hashing import MASK64, derive_seed, mix64_array, splitmix64, stable_hash64
from .corpus import Query
from .errors import StforgeError

_ASCII_LOWER = str.maketrans(
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ", "abcdefghijklmnopqrstuvwxyz"
)

EMPTY_SENTINEL = MASK64  # signature value for an empty shingle set

STAGE_LEXICAL = "lexical"
STAGE_SEMANTIC = "semantic"
STAGE_GEOMETRIC = "geometric"


class DuplicateId(StforgeError):
    pass


class SignatureMismatch(StforgeError):
    pass


class ZeroVector(StforgeError):
    pass


class KOutOfRange(StforgeError):
    pass


class MissingEmbedding(StforgeError):
    pass


class MalformedSidecar(StforgeError):
    pass


# ---------------------------------------------------------------------------
# Config and result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunnelConfig:
    """Knobs for all three stages.

    lsh_bands * lsh_rows must equal num_hashes. kcenter_target=None disables
    the geometric stage (equivalent to a target at least as large as the
    semantic survivor count).
    """

    shingle_k: int = 3
    num_hashes: int = 256
    lsh_bands: int = 32
    lsh_rows: int = 8
    jaccard_threshold: float = 0.85
    semantic_distance_threshold: float = 0.15
    kcenter_target: int | None = None
    rng_seed: int = 0
    semantic_exact_cutoff: int = 10_000

    def validate(self) -> None:
        if self.shingle_k < 1:
            raise ValueError("shingle_k must be >= 1")
        if self.num_hashes < 1:
            raise ValueError("num_hashes must be >= 1")
        if self.lsh_bands * self.lsh_rows != self.num_hashes:
            raise ValueError(
                f"lsh_bands*lsh_rows = {self.lsh_bands * self.lsh_rows} != num_hashes = {self.num_hashes}"
            )
        if not (0.0 < self.jaccard_threshold <= 1.0):
            raise ValueError("jaccard_threshold must lie in (0, 1]")
        if self.semantic_distance_threshold < 0.0:
            raise ValueError("semantic_distance_threshold must be >= 0")
        if self.kcenter_target is not None and self.kcenter_target < 1:
            raise ValueError("kcenter_target must be >= 1 when set")


@dataclass(eq=False)
class MinHashSignature:
    values: np.ndarray  # uint64, shape (num_hashes,)
    seed: int
    shingle_k: int


@dataclass(eq=False)
class EmbeddingMatrix:
    """Row-per-query embedding block; ids align with rows."""

    ids: tuple[str, ...]
    rows: np.ndarray  # float32, shape (count, dim)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2:
            raise ValueError("rows must be a 2-D array")
        if len(self.ids) != self.rows.shape[0]:
            raise ValueError("ids and rows are misaligned")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("embedding ids are not unique")
        if self.rows.size and not np.all(np.isfinite(self.rows)):
            raise ValueError("embedding rows contain non-finite entries")

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def subset(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        index = {qid: i for i, qid in enumerate(self.ids)}
        missing = [qid for qid in ids if qid not in index]
        if missing:
            raise MissingEmbedding(f"no embedding rows for: {', '.join(sorted(missing)[:5])}")
        picks = [index[qid] for qid in ids]
        return EmbeddingMatrix(ids=tuple(ids), rows=self.rows[picks])


@dataclass
class CuratedSet:
    """Funnel output: survivors plus a full account of every dropped id.

    drop_log maps survivor id -> stage -> ids dropped in favor of that
    survivor, so surviving_ids plus all dropped ids partition the input.
    """

    surviving_ids: list[str]
    drop_log: dict[str, dict[str, list[str]]]
    stage_counts: dict[str, int]

    def dropped_by(self, survivor: str) -> list[str]:
        return [qid for stage in self.drop_log.get(survivor, {}).values() for qid in stage]


# ---------------------------------------------------------------------------
# Shingling and MinHash
# ---------------------------------------------------------------------------

def normalize_text(text: str) -> str:
    """NFC-normalize, collapse whitespace runs to one space, lowercase ASCII."""
    text = unicodedata.normalize("NFC", text)
    text = " ".join(text.split())
    return text.translate(_ASCII_LOWER)


def shingle(text: str, k: int) -> set[str]:
    """All contiguous k-grams of Unicode scalar values of the normalized text."""
    if k < 1:
        raise ValueError("k must be >= 1")
    norm = normalize_text(text)
    if len(norm) < k:
        return set()
    return {norm[i : i + k] for i in range(len(norm) - k + 1)}


def _hash_family_keys(seed: int, num_hashes: int) -> np.ndarray:
    """Per-coordinate 64-bit keys from the splitmix64 stream seeded by `seed`."""
    keys = np.empty(num_hashes, dtype=np.uint64)
    state = seed & MASK64
    for j in range(num_hashes):
        value, state = splitmix64(state)
        keys[j] = value
    return keys


class _ShingleHasher:
    """Memoizing 64-bit shingle hasher (hash is independent of the seed;
    the seed enters signatures through the per-coordinate keys)."""

    def __init__(self):
        self._memo: dict[str, int] = {}

    def hash_set(self, shingles: set[str]) -> np.ndarray:
        out = np.empty(len(shingles), dtype=np.uint64)
        memo = self._memo
        for i, s in enumerate(shingles):
            h = memo.get(s)
            if h is None:
                h = stable_hash64(s.encode("utf-8"))
                memo[s] = h
            out[i] = h
        return out


def _signature_from_bases(bases: np.ndarray, keys: np.ndarray) -> np.ndarray:
    if bases.size == 0:
        return np.full(keys.shape[0], EMPTY_SENTINEL, dtype=np.uint64)
    return mix64_array(bases[:, None] ^ keys[None, :]).min(axis=0)


def minhash_signature(shingles: set[str], cfg: FunnelConfig) -> MinHashSignature:
    """Coordinate-wise minimum of a keyed 64-bit hash family over the set.

    An empty set maps to the all-max sentinel signature.
    """
    cfg.validate()
    keys = _hash_family_keys(cfg.rng_seed, cfg.num_hashes)
    bases = _ShingleHasher().hash_set(shingles)
    return MinHashSignature(
        values=_signature_from_bases(bases, keys), seed=cfg.rng_seed, shingle_k=cfg.shingle_k
    )


def jaccard_estimate(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of equal signature coordinates; unbiased Jaccard estimator."""
    if a.values.shape != b.values.shape or a.seed != b.seed or a.shingle_k != b.shingle_k:
        raise SignatureMismatch("signatures differ in length, seed, or shingle size")
    return float(np.mean(a.values == b.values))


# ---------------------------------------------------------------------------
# Stage 1: lexical dedup (LSH banding + union-find)
# ---------------------------------------------------------------------------

class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _signature_matrix(texts: Sequence[str], cfg: FunnelConfig, threads: int = 1) -> np.ndarray:
    keys = _hash_family_keys(cfg.rng_seed, cfg.num_hashes)
    hasher = _ShingleHasher()
    sigs = np.empty((len(texts), cfg.num_hashes), dtype=np.uint64)

    def work(span: tuple[int, int]) -> None:
        lo, hi = span
        for i in range(lo, hi):
            bases = hasher.hash_set(shingle(texts[i], cfg.shingle_k))
            sigs[i] = _signature_from_bases(bases, keys)

    if threads <= 1 or len(texts) < 2048:
        work((0, len(texts)))
    else:
        # Shards write disjoint rows; the memo dict is guarded by the GIL.
        step = (len(texts) + threads - 1) // threads
        spans = [(lo, min(lo + step, len(texts))) for lo in range(0, len(texts), step)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, spans))
    return sigs


def _band_groups(sigs: np.ndarray, bands: int, rows: int) -> Iterable[np.ndarray]:
    """Yield index groups that share a band; all-C grouping via np.unique."""
    n = sigs.shape[0]
    byte_view = np.ascontiguousarray(sigs).view(np.dtype((np.void, 8 * rows)))
    for b in range(bands):
        col = byte_view[:, b]
        _, inverse, counts = np.unique(col, return_inverse=True, return_counts=True)
        if not np.any(counts > 1):
            continue
        order = np.argsort(inverse, kind="stable")
        sorted_inv = inverse[order]
        boundaries = np.nonzero(np.diff(sorted_inv))[0] + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [n]))
        for s, e in zip(starts, ends):
            if e - s > 1:
                yield order[s:e]


def lexical_dedup(corpus: Sequence[Query], cfg: FunnelConfig, threads: int = 1) -> CuratedSet:
    """LSH-banded near-duplicate removal over the whole corpus.

    Candidate pairs come from shared signature bands; a pair merges when its
    Jaccard estimate reaches the threshold. Within each duplicate class the
    lexicographically smallest id survives, so the survivor set is stable
    under input reordering.
    """
    cfg.validate()
    ids = [q.id for q in corpus]
    seen: set[str] = set()
    for qid in ids:
        if qid in seen:
            raise DuplicateId(f"duplicate query id {qid!r}")
        seen.add(qid)

    sigs = _signature_matrix([q.text for q in corpus], cfg, threads=threads)
    uf = _UnionFind(len(corpus))
    for group in _band_groups(sigs, cfg.lsh_bands, cfg.lsh_rows):
        members = sorted(int(i) for i in group)
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                if uf.find(a) == uf.find(b):
                    continue
                est = float(np.mean(sigs[a] == sigs[b]))
                if est >= cfg.jaccard_threshold:
                    uf.union(a, b)

    classes: dict[int, list[int]] = {}
    for i in range(len(corpus)):
        classes.setdefault(uf.find(i), []).append(i)

    survivors: list[str] = []
    drop_log: dict[str, dict[str, list[str]]] = {}
    for members in classes.values():
        named = sorted(ids[i] for i in members)
        keeper = named[0]
        survivors.append(keeper)
        if len(named) > 1:
            drop_log[keeper] = {STAGE_LEXICAL: named[1:]}
    survivors.sort()

    counts = {
        "input": len(corpus),
        "after_lexical": len(survivors),
        "after_semantic": len(survivors),
        "after_geometric": len(survivors),
    }
    return CuratedSet(surviving_ids=survivors, drop_log=drop_log, stage_counts=counts)


# ---------------------------------------------------------------------------
# Stage 2: semantic dedup
# ---------------------------------------------------------------------------

class _HyperplaneIndex:
    """Seeded random-hyperplane LSH over unit vectors, for candidate lookup.

    Survivors are spread out by construction (they passed the distance
    threshold against each other), so band buckets stay small and expected
    lookup cost is far below a full scan.
    """

    def __init__(self, dim: int, n: int, seed: int, bands: int = 32):
        bits = int(np.clip(round(np.log2(max(n, 2))) - 4, 8, 20))
        rng = np.random.Generator(np.random.PCG64(seed & MASK64))
        self.planes = rng.standard_normal((bands, bits, dim)).astype(np.float32)
        self.bands = bands
        self.tables: list[dict[bytes, list[int]]] = [{} for _ in range(bands)]

    def codes(self, vec: np.ndarray) -> list[bytes]:
        return [np.packbits(self.planes[b] @ vec > 0).tobytes() for b in range(self.bands)]

    def candidates(self, codes: list[bytes]) -> set[int]:
        out: set[int] = set()
        for b, code in enumerate(codes):
            out.update(self.tables[b].get(code, ()))
        return out

    def insert(self, codes: list[bytes], idx: int) -> None:
        for b, code in enumerate(codes):
            self.tables[b].setdefault(code, []).append(idx)


def semantic_dedup(
    bucket: EmbeddingMatrix,
    threshold: float,
    exact_cutoff: int = 10_000,
    seed: int = 0,
) -> list[int]:
    """Greedy scan in ascending id order; a row survives iff its cosine
    distance to every prior survivor exceeds the threshold.

    At or below exact_cutoff rows the scan is exhaustive and pruning is
    exact; above it an approximate hyperplane index narrows the comparison
    set, trading a small recall loss for sub-quadratic expected cost.
    """
    if bucket.count == 0:
        return []
    norms = np.linalg.norm(bucket.rows.astype(np.float64), axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ZeroVector(f"embedding row for {bucket.ids[zero[0]]!r} has zero norm")
    unit = bucket.rows.astype(np.float64) / norms[:, None]

    order = sorted(range(bucket.count), key=lambda i: bucket.ids[i])
    survivors: list[int] = []

    if bucket.count <= exact_cutoff:
        kept = np.empty((bucket.count, bucket.rows.shape[1]), dtype=np.float64)
        n_kept = 0
        for i in order:
            if n_kept == 0 or np.max(kept[:n_kept] @ unit[i]) < 1.0 - threshold:
                kept[n_kept] = unit[i]
                n_kept += 1
                survivors.append(i)
        return survivors

    index = _HyperplaneIndex(bucket.rows.shape[1], bucket.count, seed)
    unit32 = unit.astype(np.float32)
    for i in order:
        codes = index.codes(unit32[i])
        cand = index.candidates(codes)
        close = any(float(unit[j] @ unit[i]) >= 1.0 - threshold for j in cand)
        if not close:
            index.insert(codes, i)
            survivors.append(i)
    return survivors


# ---------------------------------------------------------------------------
# Stage 3: k-center greedy
# ---------------------------------------------------------------------------

def kcenter_greedy(points: EmbeddingMatrix, k: int, seed_index: int = 0) -> list[int]:
    """Farthest-point selection: start at seed_index, then repeatedly take the
    index with the largest min Euclidean distance to the chosen set. Ties go
    to the smallest index. Classical 2-approximation for the k-center radius.
    """
    n = points.count
    if not (1 <= k <= n):
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    if not (0 <= seed_index < n):
        raise KOutOfRange(f"seed_index={seed_index} outside [0, {n})")
    rows = points.rows.astype(np.float64)
    selected = [seed_index]
    min_dist = np.linalg.norm(rows - rows[seed_index], axis=1)
    for _ in range(k - 1):
        pick = int(np.argmax(min_dist))  # argmax takes the first maximum
        selected.append(pick)
        min_dist = np.minimum(min_dist, np.linalg.norm(rows - rows[pick], axis=1))
    return selected


# ---------------------------------------------------------------------------
# Full funnel
# ---------------------------------------------------------------------------

def _bucket_key(q: Query) -> tuple:
    if q.annotation is None:
        return ("",)
    return (q.annotation.primary_intent, q.annotation.secondary_intents)


def run_funnel(
    corpus: Sequence[Query],
    embeddings: EmbeddingMatrix,
    cfg: FunnelConfig,
    threads: int = 1,
) -> CuratedSet:
    """Compose lexical -> per-bucket semantic -> global geometric selection."""
    cfg.validate()
    by_id = {q.id: q for q in corpus}

    stage1 = lexical_dedup(corpus, cfg, threads=threads)
    drop_log = dict(stage1.drop_log)
    lex_survivors = stage1.surviving_ids

    embedded = set(embeddings.ids)
    missing = [qid for qid in lex_survivors if qid not in embedded]
    if missing:
        raise MissingEmbedding(
            f"{len(missing)} surviving ids lack embedding rows, e.g. {missing[:5]}"
        )

    buckets: dict[tuple, list[str]] = {}
    for qid in lex_survivors:
        buckets.setdefault(_bucket_key(by_id[qid]), []).append(qid)

    sem_survivors: list[str] = []
    for key in sorted(buckets):
        bucket_ids = sorted(buckets[key])
        sub = embeddings.subset(bucket_ids)
        kept_rows = semantic_dedup(
            sub, cfg.semantic_distance_threshold, cfg.semantic_exact_cutoff, cfg.rng_seed
        )
        kept_ids = [bucket_ids[i] for i in kept_rows]
        sem_survivors.extend(kept_ids)
        if len(kept_ids) < len(bucket_ids):
            # Attach each pruned id to its nearest (most similar) survivor.
            kept_set = set(kept_ids)
            unit = sub.rows.astype(np.float64)
            unit = unit / np.linalg.norm(unit, axis=1)[:, None]
            row_of = {qid: i for i, qid in enumerate(bucket_ids)}
            kept_matrix = unit[[row_of[s] for s in kept_ids]]
            for qid in bucket_ids:
                if qid in kept_set:
                    continue
                sims = kept_matrix @ unit[row_of[qid]]
                owner = kept_ids[int(np.argmax(sims))]
                drop_log.setdefault(owner, {}).setdefault(STAGE_SEMANTIC, []).append(qid)
    sem_survivors.sort()

    if cfg.kcenter_target is None or cfg.kcenter_target >= len(sem_survivors):
        geo_survivors = list(sem_survivors)
    else:
        matrix = embeddings.subset(sem_survivors)
        picks = kcenter_greedy(matrix, cfg.kcenter_target, seed_index=0)
        pick_set = set(picks)
        geo_survivors = sorted(sem_survivors[i] for i in picks)
        rows = matrix.rows.astype(np.float64)
        centers = np.stack([rows[i] for i in picks])
        for i, qid in enumerate(sem_survivors):
            if i in pick_set:
                continue
            dists = np.linalg.norm(centers - rows[i], axis=1)
            owner = sem_survivors[picks[int(np.argmin(dists))]]
            drop_log.setdefault(owner, {}).setdefault(STAGE_GEOMETRIC, []).append(qid)

    counts = {
        "input": len(corpus),
        "after_lexical": len(lex_survivors),
        "after_semantic": len(sem_survivors),
        "after_geometric": len(geo_survivors),
    }
    return CuratedSet(surviving_ids=geo_survivors, drop_log=drop_log, stage_counts=counts)


# ---------------------------------------------------------------------------
# Embedding sidecar file (bit-exact binary format)
# ---------------------------------------------------------------------------

_SIDECAR_MAGIC = b"STFE"
_SIDECAR_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")  # magic, version u16, dim u32, count u64


def write_sidecar(path: str | Path, matrix: EmbeddingMatrix) -> None:
    rows = np.ascontiguousarray(matrix.rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_SIDECAR_MAGIC, _SIDECAR_VERSION, matrix.dim, matrix.count))
        fh.write(rows.tobytes())
        for qid in matrix.ids:
            fh.write(qid.encode("utf-8"))
            fh.write(b"\n")


def read_sidecar(path: str | Path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise MalformedSidecar("truncated header")
        magic, version, dim, count = _HEADER.unpack(header)
        if magic != _SIDECAR_MAGIC:
            raise MalformedSidecar(f"bad magic {magic!r}")
        if version != _SIDECAR_VERSION:
            raise MalformedSidecar(f"unsupported version {version}")
        payload = fh.read(4 * dim * count)
        if len(payload) != 4 * dim * count:
            raise MalformedSidecar("truncated row data")
        rows = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
        ids = []
        tail = fh.read().decode("utf-8")
        for line in tail.split("\n")[:-1]:
            ids.append(line)
        if len(ids) != count:
            raise MalformedSidecar(f"expected {count} ids, found {len(ids)}")
    return EmbeddingMatrix(ids=tuple(ids), rows=rows)


def write_drop_log(path: str | Path, curated: CuratedSet) -> None:
    """One JSON object per survivor per stage: {survivor, dropped, stage}."""
    entries = []
    for survivor, stages in curated.drop_log.items():
        for stage, dropped in stages.items():
            entries.append((stage, survivor, sorted(dropped)))
    entries.sort(key=lambda e: ((STAGE_LEXICAL, STAGE_SEMANTIC, STAGE_GEOMETRIC).index(e[0]), e[1]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for stage, survivor, dropped in entries:
            fh.write(
                json.dumps(
                    {"survivor": survivor, "dropped": dropped, "stage": stage},
                    ensure_ascii=False,
                    separators=(",", ":"),
                )
            )
            fh.write("\n")
