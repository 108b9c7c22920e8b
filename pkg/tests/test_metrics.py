import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oaag import kernels
from oaag.metrics import (
    bleu1, classification_metrics, distinct_n, embedding_similarity, generation_report,
    lcs_length, repetition, rouge1_f1, rougeL_f1, toa,
)


def brute_lcs(a, b):
    """Exhaustive LCS by memoized recursion (independent of the kernel's table layout)."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


class TestRouge:
    def test_r1_fixtures(self):
        assert rouge1_f1("a b c".split(), "a b c".split()) == 1.0
        assert rouge1_f1("x y".split(), "a b".split()) == 0.0
        assert abs(rouge1_f1("the cat".split(), "the cat sat".split()) - 0.8) < 1e-9
        assert rouge1_f1([], ["a"]) == 0.0

    def test_empty_ref(self):
        for fn in (rouge1_f1, rougeL_f1):
            with pytest.raises(ValueError, match="reference is empty"):
                fn(["a"], [])

    def test_rl_fixtures(self):
        assert rougeL_f1("a b c".split(), "a b c".split()) == 1.0
        assert abs(rougeL_f1("a c b".split(), "a b c".split()) - 2 / 3) < 1e-9
        for n in (1, 2, 5, 9):
            toks = [f"w{i}" for i in range(n)]
            assert abs(rougeL_f1(toks[::-1], toks) - 1 / n) < 1e-9

    @settings(max_examples=500, deadline=None)
    @given(st.lists(st.sampled_from("abcd"), max_size=10), st.lists(st.sampled_from("abcd"), max_size=10))
    def test_lcs_matches_brute_force(self, a, b):
        assert lcs_length(a, b) == brute_lcs(tuple(a), tuple(b))


class TestBleu:
    def test_fixtures(self):
        assert bleu1("a b".split(), "a b".split()) == 1.0
        assert abs(bleu1("the the".split(), "the cat".split()) - 0.5) < 1e-9
        assert abs(bleu1(["cat"], "the cat".split()) - math.exp(-1)) < 1e-9
        assert bleu1([], ["a"]) == 0.0


class TestEmbedding:
    def test_identity_and_antiparallel(self):
        table = np.array([[0, 0], [1, 1], [1, 0], [-1, 0], [0, 1]], dtype=float)
        stoi = {"a": 2, "b": 3, "c": 4}
        assert abs(embedding_similarity(["a", "c"], ["a", "c"], table, stoi) - 1.0) < 1e-12
        assert abs(embedding_similarity(["a"], ["b"], table, stoi)) < 1e-12

    def test_hand_cosine(self):
        table = np.array([[0, 0], [1, 1], [1, 0], [-1, 0], [0, 1]], dtype=float)
        stoi = {"a": 2, "b": 3, "c": 4}
        # mean(a, c) = (0.5, 0.5); "zzz" -> unk (1, 1): cos = 1
        assert abs(embedding_similarity(["a", "c"], ["zzz"], table, stoi) - 1.0) < 1e-12
        # (1, 0) vs (0, 1): cos 0 -> 0.5
        assert abs(embedding_similarity(["a"], ["c"], table, stoi) - 0.5) < 1e-12

    def test_empty_warns(self):
        with pytest.warns(UserWarning):
            assert embedding_similarity([], ["a"], np.eye(3), {"a": 2}) == 0.0


class TestDistinct:
    def test_fixtures(self):
        assert distinct_n([["a", "b", "c"]], 1) == 1.0
        assert abs(distinct_n([["a"] * 4], 1) - 0.25) < 1e-9
        assert abs(repetition([["a"] * 4], 1) - 0.75) < 1e-9
        assert abs(distinct_n(["a b a b".split()], 2) - 2 / 3) < 1e-9
        assert distinct_n([["a"]], 2) == 0.0

    def test_bad_n(self):
        with pytest.raises(ValueError):
            distinct_n([["a"]], 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abc"), max_size=6), max_size=6), st.randoms())
    def test_permutation_invariant(self, corpus, rnd):
        shuffled = list(corpus)
        rnd.shuffle(shuffled)
        assert distinct_n(corpus, 2) == distinct_n(shuffled, 2)


class TestClassification:
    def test_perfect(self):
        r = classification_metrics([0, 1, 2], [0, 1, 2])
        assert r.accuracy == 1.0 and r.macro_f1 == 1.0

    def test_single_class_predictions(self):
        r = classification_metrics([0, 0, 0], [0, 1, 2])
        assert abs(r.accuracy - 1 / 3) < 1e-12
        assert abs(r.macro_f1 - 1 / 6) < 1e-12
        assert r.per_class_f1[1] == 0.0
        assert [sum(row) for row in r.confusion] == [1, 1, 1]

    def test_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            classification_metrics([0], [0, 1])


def test_toa():
    assert toa([["yes"], ["no"]], [0, 0], lambda h: 0 if h == ["yes"] else 1) == 0.5


def test_report_identity():
    refs = [["a", "b"], ["c", "d", "e"]]
    r = generation_report(refs, refs, table=np.eye(6), stoi={t: i + 1 for i, t in enumerate("abcde")})
    assert r.r1_f1 == r.rl_f1 == r.bleu1 == 1.0
    assert abs(r.emb_sim - 1.0) < 1e-12
    assert r.repetition_1 == 1.0 - r.distinct1


@pytest.mark.parametrize("backend", ["python", "compiled"])
def test_lcs_backends(backend):
    from oaag import _kernels_py
    fn = _kernels_py.lcs_length
    if backend == "compiled":
        if kernels.BACKEND != "compiled":
            pytest.skip("extension not built")
        from oaag import _kernels
        fn = _kernels.lcs_length
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.integers(0, 4, size=rng.integers(0, 12)), rng.integers(0, 4, size=rng.integers(0, 12))
        assert fn(a.astype(np.int64), b.astype(np.int64)) == brute_lcs(tuple(a), tuple(b))
