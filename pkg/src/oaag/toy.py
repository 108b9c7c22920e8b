"""Small random samples and parameters for checks that need a model but no corpus."""
import numpy as np

from .corpus import EOS, PAD, EncodedReview, QASample
from .params import ModelConfig, init_params

FIRST_WORD = 4


def random_sample(rng, vocab_size, K=2, n_oov=1, q_len=(3, 6), r_len=(3, 6), a_len=(2, 4),
                  n_pad=0, sample_id=""):
    """Random ids over ``vocab_size`` words plus ``n_oov`` temporary ids.

    The answer copies at least one source token so every copy path is exercised.
    """
    if n_pad >= K:
        raise ValueError("need at least one real review")
    ext = vocab_size + n_oov

    def seq(lo_hi):
        return [int(i) for i in rng.integers(FIRST_WORD, ext, size=int(rng.integers(*lo_hi, endpoint=True)))]

    question = seq(q_len)
    reviews = [EncodedReview(seq(r_len), int(rng.integers(1, 6)) if k % 3 != 2 else None)
               for k in range(K - n_pad)]
    reviews += [EncodedReview([PAD], None, True) for _ in range(n_pad)]
    answer = seq(a_len)
    answer[0] = reviews[0].ids[-1]
    answer = [i if i < vocab_size or i in question or any(i in r.ids for r in reviews) else 1
              for i in answer]
    return QASample(question, answer + [EOS], reviews, int(rng.integers(0, 3)),
                    [f"oov{j}" for j in range(n_oov)], sample_id)


def toy_model(vocab_size=24, d_h=8, emb_dim=8, d_a=8, init_scale=0.5, seed=0):
    cfg = ModelConfig(vocab_size, emb_dim=emb_dim, d_h=d_h, d_a=d_a, init_scale=init_scale)
    return cfg, init_params(cfg, np.random.default_rng(seed))


def toy_batch(n=2, vocab_size=24, K=2, seed=0, n_pad=0):
    rng = np.random.default_rng(seed)
    return [random_sample(rng, vocab_size, K=K, n_pad=n_pad, sample_id=f"toy{i}") for i in range(n)]
