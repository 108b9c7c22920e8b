"""Invariant suite behind ``oaag verify``.

Each check returns a :class:`CheckResult`; brute-force oracles here are
written independently of the production code paths they check.
"""
import math
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import toy
from .corpus import ReviewSnippet, bm25_rank
from .generator import (
    build_context, decode_step, dynamic_fusion, init_state, static_fusion,
)
from .metrics import bleu1, distinct_n, lcs_length, rouge1_f1, rougeL_f1
from .opinion import classify, self_match
from .reader import EncoderOutput, coattend, fuse_representations, matching_vector, read
from .training import joint_loss, sample_forward

# central differences with eps 1e-5 lose ~1e-10 absolute to roundoff, which
# swamps coordinates whose true gradient is ~1e-7; the joint check uses the
# three-point rule at 1e-4, the module checks the five-point rule at 3e-3
GRAD_EPS = 1e-4
MODULE_EPS = 3e-3
TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


# ----------------------------------------------------------------- gradient checks

def _rand(rng, *shape):
    return ad.Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def reader_gradient_error(seed=0):
    rng = np.random.default_rng(seed)
    d = 4
    Hq, Hr1, Hr2, U = _rand(rng, 3, d), _rand(rng, 4, d), _rand(rng, 2, d), _rand(rng, d, d)
    w_m, w_pq, w_pr = (rng.uniform(-1, 1, size=s) for s in ((2, 2 * d), (3, d), (6, d)))

    def f(Hq, Hr1, Hr2, U):
        eq = EncoderOutput(Hq, np.ones(3, dtype=np.int64))
        ers = [EncoderOutput(Hr1, np.ones(4, dtype=np.int64)), EncoderOutput(Hr2, np.ones(2, dtype=np.int64))]
        att = [coattend(eq, er, U)[:2] for er in ers]
        pq, pr = fuse_representations(eq, ers, [a[0] for a in att], [a[1] for a in att])
        ms = ad.stack([matching_vector(eq, er, a[0], a[1]) for er, a in zip(ers, att)])
        return ad.add(ad.add(ad.sum(ad.mul(ms, w_m)), ad.sum(ad.mul(pq, w_pq))), ad.sum(ad.mul(pr, w_pr)))

    return ad.grad_check(f, [Hq, Hr1, Hr2, U], eps=MODULE_EPS, stencil=5)


def opinion_gradient_error(seed=0):
    rng = np.random.default_rng(seed)
    d_m, d_a = 6, 4
    M = _rand(rng, 3, d_m)
    names = ("opinion.W_m", "opinion.w_m", "opinion.W_s", "opinion.b_s")
    ts = [_rand(rng, d_m, d_a), _rand(rng, d_a), _rand(rng, d_m, 3), _rand(rng, 3)]
    mask = np.array([1, 0, 1])

    def f(M, *ws):
        p = dict(zip(names, ws))
        _, o = self_match(M, mask, p)
        return ad.neg(ad.log(ad.getitem(classify(o, p), 1)))

    return ad.grad_check(f, [M] + ts, eps=MODULE_EPS, stencil=5)


def generator_gradient_error(mode="dynamic", seed=0):
    _, p = toy.toy_model(init_scale=1.0, seed=seed)
    s = toy.toy_batch(1, seed=seed)[0]
    names = [k for k in p if k.startswith("dec.")]
    with ad.no_grad():
        ctx0 = build_context(s, p)
    pi_q = ad.Tensor(ctx0.pi_q.data, requires_grad=True)
    pi_r = ad.Tensor(ctx0.pi_r.data, requires_grad=True)
    o_hat = ad.Tensor(ctx0.o_hat.data, requires_grad=True)
    target = s.answer_ids[1]

    def f(pi_q, pi_r, o_hat, *ws):
        q = dict(p)
        q.update(zip(names, ws))
        ctx0.pi_q, ctx0.pi_r, ctx0.o_hat = pi_q, pi_r, o_hat
        ctx0.proj = {}
        st = init_state(o_hat, q)
        out, st = decode_step(st, s.answer_ids[0], ctx0, mode, q)
        out, _ = decode_step(st, s.answer_ids[0], ctx0, mode, q)
        return ad.neg(ad.log(ad.getitem(out.P, target)))

    return ad.grad_check(f, [pi_q, pi_r, o_hat] + [p[k] for k in names], eps=MODULE_EPS, stencil=5)


def joint_gradient_error(mode="static", seed=0):
    """Full joint loss, averaged over a 2-sample toy batch, w.r.t. every parameter."""
    _, p = toy.toy_model(init_scale=1.0, seed=seed)
    batch = toy.toy_batch(2, seed=seed)
    names = list(p)

    def f(*ts):
        q = dict(zip(names, ts))
        total = None
        for s in batch:
            lo, la, _ = sample_forward(s, q, mode)
            term = joint_loss(lo, la, 5.0)
            total = term if total is None else ad.add(total, term)
        return ad.mul(total, 1.0 / len(batch))

    return ad.grad_check(f, [p[k] for k in names], eps=GRAD_EPS)


# ----------------------------------------------------------------- normalization

def normalization_sweep(n_passes=1000, seed=0, tol=TOL):
    """Random forward passes; returns (worst deviation, mask violations, passes run)."""
    rng = np.random.default_rng(seed)
    worst, violations = 0.0, 0
    modes = ("none", "static", "dynamic")
    models = [toy.toy_model(vocab_size=24, init_scale=sc, seed=i)[1]
              for i, sc in enumerate((0.05, 0.5, 1.0, 2.0))]

    def dev(v):
        return abs(float(np.sum(v)) - 1.0)

    with ad.no_grad():
        for i in range(n_passes):
            p = models[i % len(models)]
            K = int(rng.integers(1, 4))
            s = toy.random_sample(rng, 24, K=K, n_pad=int(rng.integers(0, K)))
            ctx = build_context(s, p)
            vals = [ctx.beta.data, ctx.p_o.data]
            st = init_state(ctx.o_hat, p)
            rd = read(s, p)
            for m in rd.matches:
                vals += [m.alpha_q.data, m.alpha_r.data]
            pad = ~ctx.mask.astype(bool)
            violations += int(np.any(ctx.beta.data[pad] != 0))
            mode = modes[i % 3]
            prev = 2
            for _ in range(int(rng.integers(1, 4))):
                out, st = decode_step(st, prev, ctx, mode, p)
                vals += [out.alpha_q.data, out.alpha_r.data, out.alpha_r_hat.data, out.gamma.data, out.P.data]
                if out.beta_hat is not None:
                    vals.append(out.beta_hat.data)
                    violations += int(np.any(out.beta_hat.data[pad] != 0))
                violations += int(any(np.any(v < 0) for v in vals))
                prev = int(rng.integers(0, ctx.ext_size))
            worst = max(worst, max(dev(v) for v in vals))
    return worst, violations, n_passes


# ----------------------------------------------------------------- fusion identities

def fusion_identities():
    """Returns a dict of named deviations (0.0 means exact)."""
    out = {}
    a, _ = static_fusion(ad.Tensor([0.1, 0.2, 0.3, 0.4]), ad.Tensor([0.75, 0.25]), np.array([0, 0, 1, 1]))
    out["worked_example"] = float(np.max(np.abs(a.data - [0.1875, 0.375, 0.1875, 0.25])))
    rng = np.random.default_rng(0)
    worst_u = worst_k1 = 0.0
    for _ in range(200):
        K = int(rng.integers(1, 5))
        lens = rng.integers(1, 5, size=K)
        w2r = np.repeat(np.arange(K), lens)
        e = rng.normal(size=w2r.size)
        alpha = np.exp(e - e.max())
        alpha /= alpha.sum()
        fused, _ = static_fusion(ad.Tensor(alpha), ad.Tensor(np.full(K, 1.0 / K)), w2r)
        worst_u = max(worst_u, float(np.max(np.abs(fused.data - alpha))))
        d = 3
        params = {"dec.att_o.W_o": ad.Tensor(rng.normal(size=(5, d))),
                  "dec.att_o.W_s": ad.Tensor(rng.normal(size=(d, d))),
                  "dec.att_o.b": ad.Tensor(rng.normal(size=d)), "dec.att_o.w": ad.Tensor(rng.normal(size=d))}
        one = np.zeros(lens[0], dtype=np.int64)
        a1 = alpha[:lens[0]] / alpha[:lens[0]].sum()
        _, fused1, _ = dynamic_fusion(ad.Tensor(rng.normal(size=d)), ad.Tensor(a1), one, np.ones(1),
                                      params, o=ad.Tensor(rng.normal(size=(1, 5))))
        worst_k1 = max(worst_k1, float(np.max(np.abs(fused1.data - a1))))
    out["uniform_static"] = worst_u
    out["k1_dynamic"] = worst_k1
    return out


# ----------------------------------------------------------------- copy

def copy_check(vocab_size=12):
    """An OOV review token must be emitted verbatim when review copying dominates.

    The gamma bias forces the review-copy view, zero attention weights make
    the word attention uniform, and the OOV token fills two of three review
    positions, so its copy mass is about 2/3.
    """
    from .corpus import EOS, EncodedReview, QASample, Vocabulary
    from .generator import decode_greedy
    vocab = Vocabulary([f"w{i}" for i in range(vocab_size - 4)])
    _, p = toy.toy_model(vocab_size=len(vocab), init_scale=0.3, seed=0)
    oov = len(vocab)
    s = QASample([5, 6], [oov, EOS], [EncodedReview([oov, 7, oov], 5)], 0, ["zyx"])
    p["dec.gamma.W"].data[:] = 0
    p["dec.gamma.b"].data[:] = [-30.0, -30.0, 30.0]
    p["dec.att_r.W_pi"].data[:] = 0
    p["dec.att_r.W_s"].data[:] = 0
    out = decode_greedy(s, p, "static", max_len=1)
    words = vocab.decode(out, s.oov_tokens)
    round_trip = vocab.decode(s.reviews[0].ids, s.oov_tokens) == ["zyx", "w3", "zyx"]
    return out == [oov] and words == ["zyx"] and round_trip, words


# ----------------------------------------------------------------- oracles

def _brute_bm25(query, docs, k1=1.2, b=0.75):
    N = len(docs)
    avgdl = sum(len(d) for d in docs) / N
    scores = []
    for d in docs:
        s = 0.0
        for t in query:
            n = sum(1 for o in docs if t in o)
            idf = max(0.0, math.log((N - n + 0.5) / (n + 0.5)))
            f = d.count(t)
            s += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * len(d) / avgdl))
        scores.append(s)
    return sorted(range(N), key=lambda i: (-scores[i], i))


def bm25_oracle(n_corpora=200, seed=0):
    rng = np.random.default_rng(seed)
    alphabet = list("abcdefgh")
    bad = 0
    for _ in range(n_corpora):
        docs = [list(rng.choice(alphabet, size=rng.integers(1, 9))) for _ in range(rng.integers(1, 21))]
        query = list(rng.choice(alphabet, size=rng.integers(1, 9)))
        snips = [ReviewSnippet(tuple(d)) for d in docs]
        pos = {id(s): i for i, s in enumerate(snips)}  # by identity; equal snippets are common
        got = [pos[id(s)] for s in bm25_rank(query, snips, top_k=len(snips))]
        bad += got != _brute_bm25(query, docs)
    return bad


def _brute_lcs(a, b):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))
    return go(0, 0)


def metric_oracles(n_pairs=500, seed=0):
    """Returns (max fixture deviation, LCS disagreements)."""
    fixtures = [
        (rouge1_f1("the cat".split(), "the cat sat".split()), 0.8),
        (rouge1_f1("a b".split(), "a b".split()), 1.0),
        (rougeL_f1("a c b".split(), "a b c".split()), 2 / 3),
        (rougeL_f1("a b c d".split(), "d c b a".split()), 0.25),
        (bleu1("the the".split(), "the cat".split()), 0.5),
        (bleu1(["cat"], "the cat".split()), math.exp(-1)),
        (distinct_n([["a"] * 4], 1), 0.25),
        (distinct_n(["a b a b".split()], 2), 2 / 3),
        (distinct_n([["a", "b", "c"]], 1), 1.0),
    ]
    dev = max(abs(a - b) for a, b in fixtures)
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_pairs):
        a = tuple(rng.choice(list("abcd"), size=rng.integers(0, 11)))
        b = tuple(rng.choice(list("abcd"), size=rng.integers(0, 11)))
        bad += lcs_length(list(a), list(b)) != _brute_lcs(a, b)
    return dev, bad


# ----------------------------------------------------------------- suite

def _timed(name, fn, judge):
    t = time.perf_counter()
    try:
        value = fn()
        ok, detail = judge(value)
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"error: {exc!r}"
    return CheckResult(name, ok, detail, time.perf_counter() - t)


def run_all(quick=False):
    n_sweep = 200 if quick else 1000
    with ad.precision("float64"):
        checks = [
            ("grad reader composite", reader_gradient_error,
             lambda e: (e < 1e-5, f"max rel err {e:.2e} (limit 1e-5)")),
            ("grad opinion composite", opinion_gradient_error,
             lambda e: (e < 1e-5, f"max rel err {e:.2e} (limit 1e-5)")),
            ("grad generator step", generator_gradient_error,
             lambda e: (e < 1e-5, f"max rel err {e:.2e} (limit 1e-5)")),
            ("grad joint loss", joint_gradient_error,
             lambda e: (e < 1e-4, f"max rel err {e:.2e} (limit 1e-4)")),
            ("normalization sweep", lambda: normalization_sweep(n_sweep),
             lambda r: (r[0] <= TOL and r[1] == 0,
                        f"{r[2]} passes, worst |sum-1| {r[0]:.1e}, mask violations {r[1]}")),
            ("fusion identities", fusion_identities,
             lambda d: (d["uniform_static"] == 0 and d["k1_dynamic"] == 0 and d["worked_example"] <= 1e-12,
                        ", ".join(f"{k} {v:.1e}" for k, v in d.items()))),
            ("copy mechanism", copy_check, lambda r: (r[0], f"greedy emitted {r[1]}")),
            ("bm25 oracle", bm25_oracle, lambda bad: (bad == 0, f"{bad} of 200 corpora disagree")),
            ("metric oracles", metric_oracles,
             lambda r: (r[0] <= 1e-9 and r[1] == 0, f"fixture dev {r[0]:.1e}, lcs mismatches {r[1]}/500")),
        ]
        return [_timed(name, fn, judge) for name, fn, judge in checks]
