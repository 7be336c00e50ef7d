import itertools
import random
import string

import numpy as np
import pytest

from stforge.corpus import AnnotationVector, Query
from stforge.funnel import (
    CuratedSet,
    DuplicateId,
    EmbeddingMatrix,
    FunnelConfig,
    KOutOfRange,
    MissingEmbedding,
    SignatureMismatch,
    ZeroVector,
    jaccard_estimate,
    kcenter_greedy,
    lexical_dedup,
    minhash_signature,
    normalize_text,
    read_sidecar,
    run_funnel,
    semantic_dedup,
    shingle,
    write_sidecar,
)

CFG = FunnelConfig()


# -- independent oracles -----------------------------------------------------

def exact_jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def brute_force_semantic(rows: np.ndarray, ids, threshold: float) -> list[int]:
    unit = rows.astype(np.float64)
    unit = unit / np.linalg.norm(unit, axis=1)[:, None]
    survivors: list[int] = []
    for i in sorted(range(len(ids)), key=lambda j: ids[j]):
        ok = True
        for s in survivors:
            if 1.0 - float(unit[s] @ unit[i]) <= threshold:
                ok = False
                break
        if ok:
            survivors.append(i)
    return survivors


def covering_radius(rows: np.ndarray, centers: list[int]) -> float:
    d = np.linalg.norm(rows[:, None, :] - rows[centers][None, :, :], axis=2)
    return float(d.min(axis=1).max())


def brute_force_kcenter_radius(rows: np.ndarray, k: int) -> float:
    best = float("inf")
    for subset in itertools.combinations(range(rows.shape[0]), k):
        best = min(best, covering_radius(rows, list(subset)))
    return best


# -- shingling ----------------------------------------------------------------

class TestShingle:
    def test_abab(self):
        assert shingle("abab", 2) == {"ab", "ba"}

    def test_too_short(self):
        assert shingle("a", 3) == set()

    def test_normalization_collapses(self):
        assert shingle("Go  to  X", 3) == shingle("go to x", 3)

    def test_nfc_and_whitespace(self):
        assert normalize_text("  Hello\t\tWorld \n") == "hello world"

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            shingle("abc", 0)


# -- minhash -------------------------------------------------------------------

class TestMinHash:
    def test_deterministic(self):
        s = shingle("navigate to the museum", 3)
        a = minhash_signature(s, CFG)
        b = minhash_signature(s, CFG)
        assert np.array_equal(a.values, b.values)

    def test_empty_set_sentinel(self):
        sig = minhash_signature(set(), CFG)
        assert np.all(sig.values == np.uint64(2**64 - 1))

    def test_estimator_accuracy_500_pairs(self):
        rng = random.Random(2024)
        errors = []
        for _ in range(500):
            base = "".join(rng.choices(string.ascii_lowercase + " ", k=rng.randint(20, 80)))
            mutated = list(base)
            for _ in range(rng.randint(0, 12)):
                pos = rng.randrange(len(mutated))
                mutated[pos] = rng.choice(string.ascii_lowercase)
            other = "".join(mutated)
            sa, sb = shingle(base, 3), shingle(other, 3)
            est = jaccard_estimate(minhash_signature(sa, CFG), minhash_signature(sb, CFG))
            errors.append(abs(est - exact_jaccard(sa, sb)))
        assert float(np.mean(errors)) <= 0.10

    def test_identity_estimate(self):
        sig = minhash_signature(shingle("hello world", 3), CFG)
        assert jaccard_estimate(sig, sig) == 1.0

    def test_disjoint_sets_low_estimate(self):
        a = {f"a{i:04d}"[:3] + str(i) for i in range(10_000)}
        b = {f"b{i:04d}"[:3] + str(i) for i in range(10_000)}
        assert not (a & b)
        est = jaccard_estimate(minhash_signature(a, CFG), minhash_signature(b, CFG))
        assert est <= 0.05

    def test_seed_mismatch(self):
        s = shingle("same text", 3)
        a = minhash_signature(s, CFG)
        b = minhash_signature(s, FunnelConfig(rng_seed=1))
        with pytest.raises(SignatureMismatch):
            jaccard_estimate(a, b)

    def test_length_mismatch(self):
        s = shingle("same text", 3)
        a = minhash_signature(s, CFG)
        b = minhash_signature(s, FunnelConfig(num_hashes=128, lsh_bands=16, lsh_rows=8))
        with pytest.raises(SignatureMismatch):
            jaccard_estimate(a, b)


# -- lexical dedup ---------------------------------------------------------------

def _queries(texts, prefix="q"):
    return [Query(id=f"{prefix}{i:04d}", text=t) for i, t in enumerate(texts)]


class TestLexicalDedup:
    def test_three_identical_texts(self):
        qs = _queries(["find a cafe near me"] * 3)
        out = lexical_dedup(qs, CFG)
        assert out.surviving_ids == ["q0000"]
        assert sorted(out.drop_log["q0000"]["lexical"]) == ["q0001", "q0002"]

    def test_byte_identical_never_both_survive(self):
        qs = _queries(["x y z"] * 2 + ["totally different text here"])
        out = lexical_dedup(qs, CFG)
        assert "q0000" in out.surviving_ids
        assert "q0001" not in out.surviving_ids

    def test_disjoint_texts_all_survive(self):
        # pairwise-disjoint shingle sets, confirmed by the exact oracle
        texts = ["aaaaaaa", "bbbbbbb", "ccccccc", "ddddddd"]
        for a, b in itertools.combinations(texts, 2):
            assert exact_jaccard(shingle(a, 3), shingle(b, 3)) == 0.0
        out = lexical_dedup(_queries(texts), CFG)
        assert len(out.surviving_ids) == 4

    def test_trailing_punctuation_near_duplicate(self):
        a, b = "navigate to the eiffel tower", "navigate to the eiffel tower."
        assert exact_jaccard(shingle(a, 3), shingle(b, 3)) >= 0.85
        out = lexical_dedup(_queries([a, b]), CFG)
        assert out.surviving_ids == ["q0000"]

    def test_duplicate_id_rejected(self):
        qs = [Query(id="same", text="a"), Query(id="same", text="b")]
        with pytest.raises(DuplicateId):
            lexical_dedup(qs, CFG)

    def test_partition_covers_input(self):
        rng = random.Random(5)
        texts = []
        for i in range(60):
            base = "".join(rng.choices(string.ascii_lowercase + " ", k=30))
            texts.append(base)
            if i % 3 == 0:
                texts.append(base + ".")
        qs = _queries(texts)
        out = lexical_dedup(qs, CFG)
        dropped = [d for v in out.drop_log.values() for ids in v.values() for d in ids]
        assert sorted(out.surviving_ids + dropped) == sorted(q.id for q in qs)

    def test_permutation_stability_of_class_partition(self):
        rng = random.Random(11)
        texts = []
        for _ in range(40):
            base = "".join(rng.choices(string.ascii_lowercase + " ", k=26))
            texts.append(base)
            texts.append(base + "!")
        qs = _queries(texts)
        out_a = lexical_dedup(qs, CFG)

        shuffled = qs[:]
        rng.shuffle(shuffled)
        out_b = lexical_dedup(shuffled, CFG)

        def partition(curated: CuratedSet) -> set[frozenset]:
            classes = []
            for sid in curated.surviving_ids:
                members = {sid}
                members.update(curated.dropped_by(sid))
                classes.append(frozenset(members))
            return set(classes)

        assert partition(out_a) == partition(out_b)
        assert out_a.surviving_ids == out_b.surviving_ids  # smallest-id rule

    def test_threads_do_not_change_output(self):
        rng = random.Random(3)
        texts = ["".join(rng.choices(string.ascii_lowercase + " ", k=40)) for _ in range(3000)]
        qs = _queries(texts)
        single = lexical_dedup(qs, CFG, threads=1)
        multi = lexical_dedup(qs, CFG, threads=4)
        assert single.surviving_ids == multi.surviving_ids
        assert single.drop_log == multi.drop_log


# -- semantic dedup ---------------------------------------------------------------

class TestSemanticDedup:
    def test_identical_unit_vectors(self):
        m = EmbeddingMatrix(ids=("a", "b"), rows=np.array([[1, 0], [1, 0]], dtype=np.float32))
        assert semantic_dedup(m, 0.15) == [0]

    def test_orthogonal_vectors_both_survive(self):
        m = EmbeddingMatrix(ids=("a", "b"), rows=np.array([[1, 0], [0, 1]], dtype=np.float32))
        assert semantic_dedup(m, 0.15) == [0, 1]

    def test_zero_vector_rejected(self):
        m = EmbeddingMatrix(ids=("a", "b"), rows=np.array([[1, 0], [0, 0]], dtype=np.float32))
        with pytest.raises(ZeroVector):
            semantic_dedup(m, 0.15)

    def test_matches_exhaustive_oracle_200_vectors(self):
        rng = np.random.default_rng(7)
        rows = rng.standard_normal((200, 8)).astype(np.float32)
        ids = tuple(f"v{i:03d}" for i in range(200))
        m = EmbeddingMatrix(ids=ids, rows=rows)
        assert semantic_dedup(m, 0.3) == brute_force_semantic(rows, ids, 0.3)

    def test_scan_order_is_id_order_not_row_order(self):
        rows = np.array([[1, 0], [1, 0.01]], dtype=np.float32)
        # row 0 has the larger id, so row 1 is scanned first and survives
        m = EmbeddingMatrix(ids=("zz", "aa"), rows=rows)
        assert semantic_dedup(m, 0.15) == [1]

    def test_approximate_path_high_recall(self):
        rng = np.random.default_rng(13)
        rows = rng.standard_normal((3000, 16)).astype(np.float32)
        # plant exact duplicates to be pruned
        rows[100] = rows[50]
        rows[200] = rows[150]
        ids = tuple(f"v{i:05d}" for i in range(3000))
        m = EmbeddingMatrix(ids=ids, rows=rows)
        exact = semantic_dedup(m, 0.25, exact_cutoff=10_000)
        approx = semantic_dedup(m, 0.25, exact_cutoff=100)
        # planted duplicates must be caught even by the approximate index
        assert 100 not in approx and 200 not in approx
        overlap = len(set(exact) & set(approx)) / len(exact)
        assert overlap >= 0.98


# -- k-center greedy ---------------------------------------------------------------

class TestKCenter:
    def test_k_equals_count(self):
        rows = np.array([[0.0], [1.0], [2.0]], dtype=np.float32)
        m = EmbeddingMatrix(ids=("a", "b", "c"), rows=rows)
        picks = kcenter_greedy(m, 3, seed_index=0)
        assert sorted(picks) == [0, 1, 2]
        assert picks[0] == 0

    def test_one_dimensional_farthest_point(self):
        rows = np.array([[0.0], [1.0], [10.0]], dtype=np.float32)
        m = EmbeddingMatrix(ids=("a", "b", "c"), rows=rows)
        assert kcenter_greedy(m, 2, seed_index=0) == [0, 2]

    def test_k_out_of_range(self):
        m = EmbeddingMatrix(ids=("a",), rows=np.array([[0.0]], dtype=np.float32))
        with pytest.raises(KOutOfRange):
            kcenter_greedy(m, 2, seed_index=0)
        with pytest.raises(KOutOfRange):
            kcenter_greedy(m, 0, seed_index=0)
        with pytest.raises(KOutOfRange):
            kcenter_greedy(m, 1, seed_index=5)

    def test_two_approximation_against_bruteforce(self):
        rng = np.random.default_rng(17)
        for trial in range(25):
            n = int(rng.integers(5, 13))
            k = int(rng.integers(2, 5))
            rows = rng.standard_normal((n, 3)).astype(np.float32)
            m = EmbeddingMatrix(ids=tuple(f"p{i}" for i in range(n)), rows=rows)
            picks = kcenter_greedy(m, min(k, n), seed_index=0)
            greedy_r = covering_radius(rows.astype(np.float64), picks)
            opt_r = brute_force_kcenter_radius(rows.astype(np.float64), min(k, n))
            assert greedy_r <= 2.0 * opt_r + 1e-9

    def test_each_step_maximizes_min_distance(self):
        rng = np.random.default_rng(23)
        rows = rng.standard_normal((30, 4)).astype(np.float32)
        m = EmbeddingMatrix(ids=tuple(f"p{i:02d}" for i in range(30)), rows=rows)
        picks = kcenter_greedy(m, 6, seed_index=3)
        dense = rows.astype(np.float64)
        for step in range(1, len(picks)):
            chosen = picks[:step]
            dists = np.linalg.norm(dense[:, None, :] - dense[chosen][None, :, :], axis=2)
            min_d = dists.min(axis=1)
            best = float(min_d.max())
            got = float(min_d[picks[step]])
            assert got == pytest.approx(best, abs=0.0)
            # tie-break: no smaller index achieves the same max-min distance
            first = int(np.argmax(min_d))
            assert picks[step] == first


# -- full funnel ---------------------------------------------------------------

def _annotated(texts, intents):
    return [
        Query(id=f"q{i:04d}", text=t, annotation=AnnotationVector(primary_intent=intent))
        for i, (t, intent) in enumerate(zip(texts, intents))
    ]


def _embeddings_for(queries, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((len(queries), dim)).astype(np.float32)
    return EmbeddingMatrix(ids=tuple(q.id for q in queries), rows=rows)


class TestRunFunnel:
    def test_geometric_noop_when_target_large(self):
        qs = _queries(["alpha bravo", "charlie delta", "echo foxtrot"])
        emb = _embeddings_for(qs)
        cfg = FunnelConfig(kcenter_target=10)
        out = run_funnel(qs, emb, cfg)
        assert out.stage_counts["after_geometric"] == out.stage_counts["after_semantic"]

    def test_replay_is_identical(self):
        rng = random.Random(31)
        texts = ["".join(rng.choices(string.ascii_lowercase + " ", k=30)) for _ in range(80)]
        texts += [t + "." for t in texts[:20]]
        qs = _queries(texts)
        emb = _embeddings_for(qs, seed=4)
        cfg = FunnelConfig(kcenter_target=30)
        a = run_funnel(qs, emb, cfg)
        b = run_funnel(qs, emb, cfg)
        assert a.surviving_ids == b.surviving_ids
        assert a.drop_log == b.drop_log
        assert a.stage_counts == b.stage_counts

    def test_missing_embedding_rejected(self):
        qs = _queries(["one text", "two text"])
        emb = EmbeddingMatrix(ids=("q0000",), rows=np.ones((1, 4), dtype=np.float32))
        with pytest.raises(MissingEmbedding):
            run_funnel(qs, emb, FunnelConfig())

    def test_planted_duplicates_removed_and_counts_decrease(self):
        rng = random.Random(41)
        rng_np = np.random.default_rng(41)
        base_texts = [
            "".join(rng.choices(string.ascii_lowercase + " ", k=35)) for _ in range(300)
        ]
        texts, ids_of_exact_dups = [], []
        for i, t in enumerate(base_texts):
            texts.append(t)
            if i < 60:  # planted exact duplicates
                texts.append(t)
                ids_of_exact_dups.append(f"q{len(texts) - 1:04d}")
        qs = _queries(texts)

        # embeddings: duplicate clusters share a row, so the semantic stage
        # prunes whatever lexical leaves of them; distinct texts get noise
        base_rows = rng_np.standard_normal((len(texts), 8)).astype(np.float32)
        emb = EmbeddingMatrix(ids=tuple(q.id for q in qs), rows=base_rows)

        cfg = FunnelConfig(kcenter_target=150)
        out = run_funnel(qs, emb, cfg)
        counts = out.stage_counts
        assert counts["input"] > counts["after_lexical"] >= counts["after_semantic"]
        assert counts["after_semantic"] > counts["after_geometric"] == 150
        for dup_id in ids_of_exact_dups:
            assert dup_id not in out.surviving_ids

    def test_partition_and_monotone_counts(self):
        rng = random.Random(51)
        texts = ["".join(rng.choices(string.ascii_lowercase + " ", k=28)) for _ in range(50)]
        texts += [t + "?" for t in texts[:10]]
        intents = ["discovery.poi_search.keyword_poi_search"] * 30 + \
                  ["planning_and_decision.route_planning"] * 30
        qs = _annotated(texts, intents)
        emb = _embeddings_for(qs, seed=6)
        out = run_funnel(qs, emb, FunnelConfig(kcenter_target=20))
        dropped = [d for v in out.drop_log.values() for ids in v.values() for d in ids]
        assert sorted(out.surviving_ids + dropped) == sorted(q.id for q in qs)
        c = out.stage_counts
        assert c["input"] >= c["after_lexical"] >= c["after_semantic"] >= c["after_geometric"]

    def test_idempotence_on_own_output(self):
        rng = random.Random(61)
        texts = ["".join(rng.choices(string.ascii_lowercase + " ", k=32)) for _ in range(60)]
        texts += [t + "." for t in texts[:15]]
        qs = _queries(texts)
        emb = _embeddings_for(qs, seed=9)
        cfg = FunnelConfig(kcenter_target=25)
        first = run_funnel(qs, emb, cfg)

        survivors = [q for q in qs if q.id in set(first.surviving_ids)]
        emb2 = emb.subset([q.id for q in survivors])
        cfg2 = FunnelConfig(kcenter_target=len(survivors))
        second = run_funnel(survivors, emb2, cfg2)
        assert second.surviving_ids == first.surviving_ids
        assert all(not stages for stages in second.drop_log.values()) or not second.drop_log


# -- sidecar format ---------------------------------------------------------------

class TestSidecar:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        m = EmbeddingMatrix(
            ids=("alpha", "beta", "海口"),
            rows=rng.standard_normal((3, 5)).astype(np.float32),
        )
        path = tmp_path / "emb.stfe"
        write_sidecar(path, m)
        loaded = read_sidecar(path)
        assert loaded.ids == m.ids
        assert loaded.rows.tobytes() == m.rows.tobytes()
        write_sidecar(tmp_path / "again.stfe", loaded)
        assert (tmp_path / "again.stfe").read_bytes() == path.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.stfe"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(Exception):
            read_sidecar(path)
