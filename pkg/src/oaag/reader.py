"""Question-review reader: BiLSTM encoding and dual co-attention."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .corpus import PAD, UNK

_NEG = -1e9


@dataclass
class EncoderOutput:
    H: ad.Tensor       # L x d_h
    mask: np.ndarray   # length L, 1 for real tokens

    @property
    def length(self):
        return int(self.mask.sum())


@dataclass
class MatchState:
    alpha_q: ad.Tensor
    alpha_r: ad.Tensor
    m: ad.Tensor


def embed_ids(ids, params, train=False, dropout=0.0, rng=None):
    """Embedding lookup; temporary (extended) ids embed as UNK."""
    V = params["embedding"].shape[0]
    ids = np.asarray(ids, dtype=np.int64)
    ids = np.where(ids >= V, UNK, ids)
    return ad.dropout(ad.embedding_lookup(params["embedding"], ids), dropout, train, rng)


def encode_sequence(ids, params, train=False, dropout=0.0, rng=None):
    """Encode a token sequence into ``H``: forward and backward LSTM states per position.

    Trailing PAD ids are allowed; their rows are zero and masked.
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = (ids != PAD).astype(np.int64)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("cannot encode an all-pad sequence")
    if not mask[:n].all():
        raise ValueError("PAD ids must only appear as trailing padding")
    X = embed_ids(ids[:n], params, train, dropout, rng)
    fw = ad.lstm_sequence(X, params["enc.fw.Wx"], params["enc.fw.Wh"], params["enc.fw.b"])
    bw = ad.lstm_sequence(X, params["enc.bw.Wx"], params["enc.bw.Wh"], params["enc.bw.b"],
                          reverse=True)
    H = ad.concat([fw, bw], axis=1)
    if n < len(ids):
        H = ad.concat([H, ad.constant(np.zeros((len(ids) - n, H.shape[1])))], axis=0)
    return EncoderOutput(H, mask)


def coattend(enc_q, enc_r, U):
    """Dual attention from one bilinear affinity matrix.

    ``Omega = tanh(H_q U H_r^T)``; the question weights are a softmax over the
    row-wise max of Omega, the review weights over the row-wise max of its
    transpose. Returns ``(alpha_q, alpha_r, Omega)``.
    """
    Hq, Hr = enc_q.H, enc_r.H
    if Hq.shape[1] != Hr.shape[1] or U.shape != (Hq.shape[1], Hr.shape[1]):
        raise ValueError(f"coattend: shape mismatch {Hq.shape} vs {Hr.shape} (U {U.shape})")
    omega = ad.tanh(ad.matmul(ad.matmul(Hq, U), ad.transpose(Hr)))
    scores = omega
    if not (enc_q.mask.all() and enc_r.mask.all()):
        # padded positions must never win the max-pool
        pen = _NEG * (1 - np.outer(enc_q.mask, enc_r.mask))
        scores = ad.add(omega, pen)
    alpha_q = ad.softmax(ad.max(scores, axis=1), mask=enc_q.mask)
    alpha_r = ad.softmax(ad.max(scores, axis=0), mask=enc_r.mask)
    return alpha_q, alpha_r, omega


def _row_scale(H, alpha):
    return ad.mul(H, ad.reshape(alpha, (-1, 1)))


def fuse_representations(enc_q, enc_rs, alphas_q, alphas_r):
    """Attentive representations of the question and the concatenated reviews.

    The question side averages ``H_q`` row-scaled by each review's question
    attention; the review side stacks each ``H_r`` row-scaled by its own
    attention, in rank order. Only real (non-padded) reviews are passed in.
    """
    if not enc_rs:
        raise ValueError("fuse_representations needs at least one review")
    scaled = [_row_scale(enc_q.H, a) for a in alphas_q]
    pi_q = scaled[0] if len(scaled) == 1 else ad.mean(ad.stack(scaled), axis=0)
    pi_r = ad.concat([_row_scale(e.H, a) for e, a in zip(enc_rs, alphas_r)], axis=0)
    return pi_q, pi_r


def matching_vector(enc_q, enc_r, alpha_q, alpha_r):
    """Concatenate the attention-weighted sums of question and review states."""
    return ad.concat([ad.matmul(alpha_q, enc_q.H), ad.matmul(alpha_r, enc_r.H)], axis=0)


@dataclass
class ReaderOutput:
    enc_q: EncoderOutput
    enc_rs: list          # EncoderOutput per real review
    review_index: list    # position in the K slots for each real review
    matches: list         # MatchState per real review
    pi_q: ad.Tensor
    pi_r: ad.Tensor
    word_to_review: np.ndarray
    r_ids: np.ndarray     # extended ids aligned with rows of pi_r


def read(sample, params, train=False, dropout=0.0, rng=None):
    enc_q = encode_sequence(sample.question_ids, params, train, dropout, rng)
    U = params["coatt.U"]
    enc_rs, index, matches = [], [], []
    for k, rev in enumerate(sample.reviews):
        if rev.is_pad:
            continue
        enc_r = encode_sequence(rev.ids, params, train, dropout, rng)
        a_q, a_r, _ = coattend(enc_q, enc_r, U)
        matches.append(MatchState(a_q, a_r, matching_vector(enc_q, enc_r, a_q, a_r)))
        enc_rs.append(enc_r)
        index.append(k)
    if not enc_rs:
        raise ValueError("sample has no real reviews")
    pi_q, pi_r = fuse_representations(enc_q, enc_rs, [m.alpha_q for m in matches],
                                      [m.alpha_r for m in matches])
    w2r = np.concatenate([np.full(e.H.shape[0], k, dtype=np.int64) for e, k in zip(enc_rs, index)])
    r_ids = np.concatenate([np.asarray(sample.reviews[k].ids, dtype=np.int64) for k in index])
    return ReaderOutput(enc_q, enc_rs, index, matches, pi_q, pi_r, w2r, r_ids)
