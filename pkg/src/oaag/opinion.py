"""Opinion classifier: review-level self attention over rating-augmented matching vectors."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .params import N_RATINGS


@dataclass
class OpinionState:
    M: ad.Tensor          # K x d_m, zero rows for padded reviews
    mask: np.ndarray      # length K, 1 for real reviews
    beta: ad.Tensor       # length K, exactly 0 on padded reviews
    o_hat: ad.Tensor      # length d_m
    p_o: ad.Tensor        # length 3, order (positive, negative, neutral)


def rating_one_hot(rating):
    vec = np.zeros(N_RATINGS, dtype=ad.get_dtype())
    if rating is None:
        return vec
    if isinstance(rating, bool) or int(rating) != rating or not 1 <= rating <= N_RATINGS:
        raise ValueError(f"rating must be an integer in 1..{N_RATINGS} or absent, got {rating!r}")
    vec[int(rating) - 1] = 1.0
    return vec


def augment(m, rating):
    """Append the rating one-hot (all zeros when the rating is absent)."""
    return ad.concat([m, ad.constant(rating_one_hot(rating))], axis=0)


def build_memory(m_hats, pad_flags):
    """Stack per-slot vectors into ``M``; ``m_hats`` holds one entry per real slot in order."""
    pad_flags = [bool(p) for p in pad_flags]
    if all(pad_flags):
        raise ValueError("all reviews are padded")
    n_real = sum(1 for p in pad_flags if not p)
    if len(m_hats) != n_real:
        raise ValueError(f"expected {n_real} vectors for the real reviews, got {len(m_hats)}")
    d_m = m_hats[0].shape[0]
    zero = ad.constant(np.zeros(d_m))
    it = iter(m_hats)
    rows = [zero if p else next(it) for p in pad_flags]
    return ad.stack(rows), np.array([0 if p else 1 for p in pad_flags], dtype=np.int64)


def self_match(M, mask, params):
    """Review-level attention ``beta`` and the opinion memory ``O_hat = M^T beta``."""
    mask = np.asarray(mask)
    if not mask.any():
        raise ValueError("all reviews are padded")
    u = ad.tanh(ad.matmul(M, params["opinion.W_m"]))
    beta = ad.softmax(ad.matmul(u, params["opinion.w_m"]), mask=mask)
    return beta, ad.matmul(beta, M)


def classify(o_hat, params):
    return ad.softmax(ad.add(ad.matmul(o_hat, params["opinion.W_s"]), params["opinion.b_s"]))


def opinion_forward(matches, reviews, params):
    """Run the classifier from the reader's matching vectors.

    ``matches`` aligns with the real entries of ``reviews`` (one per K slot).
    """
    real = [r for r in reviews if not r.is_pad]
    m_hats = [augment(ms.m, r.rating) for ms, r in zip(matches, real)]
    M, mask = build_memory(m_hats, [r.is_pad for r in reviews])
    beta, o_hat = self_match(M, mask, params)
    return OpinionState(M, mask, beta, o_hat, classify(o_hat, params))
