"""Generation and classification metrics."""
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .corpus import LABELS


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _check_ref(ref):
    if len(ref) == 0:
        raise ValueError("reference is empty")


def rouge1_f1(hyp, ref):
    _check_ref(ref)
    if not hyp:
        return 0.0
    overlap = sum((Counter(hyp) & Counter(ref)).values())
    return _f1(overlap / len(hyp), overlap / len(ref))


def _as_ids(a, b):
    """Map two token lists to int arrays over a shared index."""
    index = {}
    conv = [np.array([index.setdefault(t, len(index)) for t in seq], dtype=np.int64) for seq in (a, b)]
    return conv[0], conv[1]


def lcs_length(a, b):
    return kernels.lcs_length(*_as_ids(a, b))


def rougeL_f1(hyp, ref):
    _check_ref(ref)
    if not hyp:
        return 0.0
    lcs = lcs_length(hyp, ref)
    return _f1(lcs / len(hyp), lcs / len(ref))


def bleu1(hyp, ref):
    """Clipped unigram precision times the brevity penalty."""
    if not hyp:
        return 0.0
    clipped = sum((Counter(hyp) & Counter(ref)).values())
    bp = math.exp(min(0.0, 1.0 - len(ref) / len(hyp)))
    return clipped / len(hyp) * bp


def embedding_similarity(hyp, ref, table, stoi, unk_id=1):
    """Cosine of mean word vectors mapped to [0, 1]; unknown tokens use row ``unk_id``."""
    if not hyp or not ref:
        warnings.warn("embedding_similarity on an empty sequence; returning 0", stacklevel=2)
        return 0.0
    table = np.asarray(table, dtype=np.float64)

    def mean_vec(toks):
        return table[[stoi.get(t, unk_id) for t in toks]].mean(axis=0)

    u, v = mean_vec(hyp), mean_vec(ref)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 1.0 if nu == nv else 0.5
    cos = float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
    return (cos + 1.0) / 2.0


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(corpus, n):
    """Unique over total n-grams across all sequences; 0 when there are none."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    grams = [g for seq in corpus for g in ngrams(list(seq), n)]
    return len(set(grams)) / len(grams) if grams else 0.0


def repetition(corpus, n):
    return 1.0 - distinct_n(corpus, n)


@dataclass
class GenEvalReport:
    r1_f1: float
    rl_f1: float
    bleu1: float
    emb_sim: object  # float, or None without an embedding table
    distinct1: float
    distinct2: float
    repetition_1: float
    repetition_2: float
    n: int

    def to_dict(self):
        return asdict(self)


def generation_report(hyps, refs, table=None, stoi=None):
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ValueError("nothing to evaluate")
    n = len(hyps)
    emb = None
    if table is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            emb = math.fsum(embedding_similarity(h, r, table, stoi) for h, r in zip(hyps, refs)) / n
    d1, d2 = distinct_n(hyps, 1), distinct_n(hyps, 2)
    return GenEvalReport(
        r1_f1=math.fsum(rouge1_f1(h, r) for h, r in zip(hyps, refs)) / n,
        rl_f1=math.fsum(rougeL_f1(h, r) for h, r in zip(hyps, refs)) / n,
        bleu1=math.fsum(bleu1(h, r) for h, r in zip(hyps, refs)) / n,
        emb_sim=emb, distinct1=d1, distinct2=d2,
        repetition_1=1.0 - d1, repetition_2=1.0 - d2, n=n,
    )


@dataclass
class ClsEvalReport:
    macro_f1: float
    accuracy: float
    per_class_f1: list
    confusion: list  # rows gold, columns predicted, order of LABELS
    n: int

    def to_dict(self):
        d = asdict(self)
        d["labels"] = list(LABELS)
        return d


def classification_metrics(pred, gold, n_classes=3):
    pred, gold = list(pred), list(gold)
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gold)} labels")
    if not gold:
        raise ValueError("no labels to evaluate")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, g in zip(pred, gold):
        conf[g, p] += 1
    f1s = []
    for c in range(n_classes):
        tp = conf[c, c]
        prec = tp / conf[:, c].sum() if conf[:, c].sum() else 0.0
        rec = tp / conf[c, :].sum() if conf[c, :].sum() else 0.0
        f1s.append(float(_f1(prec, rec)))
    return ClsEvalReport(
        macro_f1=math.fsum(f1s) / n_classes,
        accuracy=float(np.trace(conf)) / len(gold),
        per_class_f1=f1s, confusion=conf.tolist(), n=len(gold),
    )


def toa(hyps, labels, labeler):
    """Share of generated answers whose label under ``labeler`` matches the target label."""
    if len(hyps) != len(labels):
        raise ValueError(f"{len(hyps)} answers vs {len(labels)} labels")
    if not hyps:
        raise ValueError("nothing to evaluate")
    return sum(int(labeler(h) == y) for h, y in zip(hyps, labels)) / len(hyps)
