"""Opinion-initialized pointer-generator decoder with review-level fusion."""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .corpus import EOS, SOS
from .opinion import opinion_forward
from .reader import embed_ids, read


class FusionMode(str, Enum):
    NONE = "none"
    STATIC = "static"
    DYNAMIC = "dynamic"

    @classmethod
    def parse(cls, value):
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown fusion mode {value!r}; expected none, static or dynamic") from None


@dataclass
class DecoderState:
    h: ad.Tensor
    c: ad.Tensor
    t: int = 0


@dataclass
class StepOutput:
    alpha_q: ad.Tensor
    alpha_r: ad.Tensor
    alpha_r_hat: ad.Tensor
    beta_hat: object      # Tensor in dynamic mode, else None
    c_q: ad.Tensor
    c_r: ad.Tensor
    h_s: ad.Tensor
    gamma: ad.Tensor
    P: ad.Tensor
    fallback: bool = False


@dataclass
class DecodeContext:
    """Everything the decoder reads from the encoder side of one sample."""
    pi_q: ad.Tensor
    pi_r: ad.Tensor
    q_ids: np.ndarray
    r_ids: np.ndarray
    word_to_review: np.ndarray
    beta: ad.Tensor
    M: ad.Tensor
    mask: np.ndarray
    o_hat: ad.Tensor
    p_o: ad.Tensor
    ext_size: int
    proj: dict = field(default_factory=dict)


def build_context(sample, params, train=False, dropout=0.0, rng=None):
    rd = read(sample, params, train, dropout, rng)
    op = opinion_forward(rd.matches, sample.reviews, params)
    V = params["embedding"].shape[0]
    ctx = DecodeContext(
        pi_q=rd.pi_q, pi_r=rd.pi_r,
        q_ids=np.asarray(sample.question_ids, dtype=np.int64), r_ids=rd.r_ids,
        word_to_review=rd.word_to_review, beta=op.beta, M=op.M, mask=op.mask,
        o_hat=op.o_hat, p_o=op.p_o, ext_size=V + len(sample.oov_tokens),
    )
    precompute(ctx, params)
    return ctx


def precompute(ctx, params):
    """Step-independent projections of the attention memories."""
    ctx.proj["q"] = ad.matmul(ctx.pi_q, params["dec.att_q.W_pi"])
    ctx.proj["r"] = ad.matmul(ctx.pi_r, params["dec.att_r.W_pi"])
    o = ad.mul(ctx.M, ad.reshape(ctx.beta, (-1, 1)))
    ctx.proj["o"] = ad.matmul(o, params["dec.att_o.W_o"])


def init_state(o_hat, params):
    h = ad.tanh(ad.add(ad.matmul(o_hat, params["dec.init_h.W"]), params["dec.init_h.b"]))
    c = ad.tanh(ad.add(ad.matmul(o_hat, params["dec.init_c.W"]), params["dec.init_c.b"]))
    return DecoderState(h, c, 0)


def attend(s, Pi, W_pi, W_s, b, w, mask=None, pi_proj=None):
    """Additive attention; returns ``(alpha, context)``.

    ``pi_proj`` may carry a cached ``Pi @ W_pi``.
    """
    if Pi.shape[0] == 0:
        raise ValueError("attention memory is empty")
    if pi_proj is None:
        pi_proj = ad.matmul(Pi, W_pi)
    e = ad.matmul(ad.tanh(ad.add(pi_proj, ad.add(ad.matmul(s, W_s), b))), w)
    alpha = ad.softmax(e, mask=mask)
    return alpha, ad.matmul(alpha, Pi)


def static_fusion(alpha_r, beta, word_to_review):
    """Re-weight word attention by the weight of each word's review.

    Returns ``(alpha_hat, fallback)``; when every attended word sits in a
    zero-weight review the unfused ``alpha_r`` is returned and ``fallback`` is True.
    """
    weights = ad.take(beta, word_to_review)
    if not (alpha_r.data * weights.data).sum() > 0:
        return alpha_r, True
    return ad.reweight(alpha_r, weights), False


def dynamic_fusion(s, alpha_r, word_to_review, mask, params, o_proj=None, o=None):
    """Step-dependent review weights ``beta_hat`` from ``o_k = beta_k * m_hat_k``.

    Pass either the cached ``o_proj = o @ W_o`` or the raw ``o`` (K x d_m).
    Returns ``(beta_hat, alpha_hat, fallback)``.
    """
    if o_proj is None:
        o_proj = ad.matmul(o, params["dec.att_o.W_o"])
    s_part = ad.add(ad.matmul(s, params["dec.att_o.W_s"]), params["dec.att_o.b"])
    e = ad.matmul(ad.tanh(ad.add(o_proj, s_part)), params["dec.att_o.w"])
    beta_hat = ad.softmax(e, mask=mask)
    alpha_hat, fallback = static_fusion(alpha_r, beta_hat, word_to_review)
    return beta_hat, alpha_hat, fallback


def mix_distribution(gamma, p_vocab, alpha_q, alpha_r_hat, q_ids, r_ids, ext_size):
    """``P = gamma_0 P^v + gamma_1 P^q + gamma_2 P^r`` over the extended vocabulary."""
    V = p_vocab.shape[0]
    if ext_size < V:
        raise ValueError(f"extended size {ext_size} smaller than vocabulary {V}")
    pv = p_vocab if ext_size == V else ad.concat([p_vocab, ad.constant(np.zeros(ext_size - V))])
    pq = ad.scatter_add(alpha_q, q_ids, ext_size)
    pr = ad.scatter_add(alpha_r_hat, r_ids, ext_size)
    g = [ad.getitem(gamma, i) for i in range(3)]
    return ad.add(ad.add(ad.mul(g[0], pv), ad.mul(g[1], pq)), ad.mul(g[2], pr))


def output_distribution(h_s, alpha_q, alpha_r_hat, s, c_q, c_r, q_ids, r_ids, ext_size, params):
    """Returns ``(gamma, P)``."""
    feats = ad.concat([s, c_q, c_r])
    gamma = ad.softmax(ad.add(ad.matmul(feats, params["dec.gamma.W"]), params["dec.gamma.b"]))
    p_vocab = ad.softmax(ad.add(ad.matmul(h_s, params["dec.out.W2"]), params["dec.out.b2"]))
    return gamma, mix_distribution(gamma, p_vocab, alpha_q, alpha_r_hat, q_ids, r_ids, ext_size)


def decode_step(state, prev_id, ctx, mode, params, train=False, dropout=0.0, rng=None):
    mode = FusionMode.parse(mode)
    x = ad.reshape(embed_ids([prev_id], params, train, dropout, rng), (-1,))
    h, c = ad.lstm_cell(x, state.h, state.c, params["dec.lstm.Wx"], params["dec.lstm.Wh"],
                        params["dec.lstm.b"])
    a_q, c_q = attend(h, ctx.pi_q, params["dec.att_q.W_pi"], params["dec.att_q.W_s"],
                      params["dec.att_q.b"], params["dec.att_q.w"], pi_proj=ctx.proj.get("q"))
    a_r, c_r = attend(h, ctx.pi_r, params["dec.att_r.W_pi"], params["dec.att_r.W_s"],
                      params["dec.att_r.b"], params["dec.att_r.w"], pi_proj=ctx.proj.get("r"))
    beta_hat, fallback = None, False
    if mode is FusionMode.NONE:
        a_hat = a_r
    elif mode is FusionMode.STATIC:
        a_hat, fallback = static_fusion(a_r, ctx.beta, ctx.word_to_review)
    else:
        o = None
        if "o" not in ctx.proj:
            o = ad.mul(ctx.M, ad.reshape(ctx.beta, (-1, 1)))
        beta_hat, a_hat, fallback = dynamic_fusion(h, a_r, ctx.word_to_review, ctx.mask, params,
                                                   o_proj=ctx.proj.get("o"), o=o)
    feats = ad.concat([h, c_q, c_r])
    h_s = ad.add(ad.matmul(feats, params["dec.out.W1"]), params["dec.out.b1"])
    gamma, P = output_distribution(h_s, a_q, a_hat, h, c_q, c_r, ctx.q_ids, ctx.r_ids,
                                   ctx.ext_size, params)
    out = StepOutput(a_q, a_r, a_hat, beta_hat, c_q, c_r, h_s, gamma, P, fallback)
    return out, DecoderState(h, c, state.t + 1)


# ----------------------------------------------------------------- search

def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


def greedy_search(step_fn, state, max_len, sos=SOS, eos=EOS):
    """Argmax decoding; ``step_fn(state, prev) -> (probs, state)``. Ties go to the lowest id."""
    out, prev = [], sos
    for _ in range(max_len):
        probs, state = step_fn(state, prev)
        prev = int(np.argmax(probs))
        if prev == eos:
            break
        out.append(prev)
    return out


def beam_search(step_fn, state, beam, max_len, sos=SOS, eos=EOS):
    """Length-normalized beam search.

    Each step ranks the successors of all live hypotheses by total log
    probability (ties to the earlier hypothesis, then the lower id). Finished
    hypotheses are scored by log probability divided by length, EOS included.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    live = [((), 0.0, state)]
    done = []
    for _ in range(max_len):
        cands = []
        for hi, (toks, lp, st) in enumerate(live):
            probs, nst = step_fn(st, toks[-1] if toks else sos)
            logp = _log(np.asarray(probs, dtype=np.float64))
            order = np.argsort(-logp, kind="stable")[:2 * beam]
            for tok in order:
                if np.isfinite(logp[tok]):
                    cands.append((lp + logp[tok], hi, int(tok), toks, nst))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        live = []
        for score, _, tok, toks, nst in cands:
            if tok == eos:
                done.append((toks, score, len(toks) + 1))
            else:
                live.append((toks + (tok,), score, nst))
            if len(live) == beam or len(done) >= beam:
                break
        if len(done) >= beam or not live:
            break
    else:
        done.extend((toks, lp, len(toks)) for toks, lp, _ in live)
    if not done:
        done.extend((toks, lp, len(toks)) for toks, lp, _ in live)
    if not done:
        return []
    best = min(done, key=lambda d: (-(d[1] / max(d[2], 1)), d[0]))
    return list(best[0])


def _model_step_fn(ctx, mode, params, trace):
    def step(state, prev):
        out, new = decode_step(state, prev, ctx, mode, params)
        if trace is not None:
            p = out.P.data
            top = np.argsort(-p, kind="stable")[:5]
            trace.append({"gamma": out.gamma.data.tolist(),
                          "top5": [(int(i), float(p[i])) for i in top]})
        return out.P.data, new
    return step


def decode_greedy(sample, params, mode="static", max_len=100, trace=None):
    """Greedy decode; returns extended-vocabulary ids without the final EOS.

    When ``trace`` is a list, one entry per step is appended with gamma and the
    five most probable ids.
    """
    with ad.no_grad():
        ctx = build_context(sample, params)
        return greedy_search(_model_step_fn(ctx, mode, params, trace),
                             init_state(ctx.o_hat, params), max_len)


def decode_beam(sample, params, mode="static", beam=4, max_len=100):
    if beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    with ad.no_grad():
        ctx = build_context(sample, params)
        return beam_search(_model_step_fn(ctx, mode, params, None),
                           init_state(ctx.o_hat, params), beam, max_len)


def replay(sample, params, mode, ids):
    """Per-step diagnostics along a fixed output path (the decoded ids plus EOS).

    Each entry holds gamma, the review weights in force at that step (beta, or
    beta_hat in dynamic mode), and whether static fusion fell back.
    """
    mode = FusionMode.parse(mode)
    with ad.no_grad():
        ctx = build_context(sample, params)
        state = init_state(ctx.o_hat, params)
        prev, steps = SOS, []
        for tok in list(ids) + [EOS]:
            out, state = decode_step(state, prev, ctx, mode, params)
            weights = out.beta_hat if out.beta_hat is not None else ctx.beta
            steps.append({"gamma": out.gamma.data.tolist(),
                          "review_weights": weights.data.tolist() if mode is not FusionMode.NONE else None,
                          "fallback": bool(out.fallback),
                          "p_token": float(out.P.data[tok])})
            prev = tok
    return steps
