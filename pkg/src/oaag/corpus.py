"""Raw QA/review ingestion, snippet retrieval and sample encoding."""
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

LABELS = ("positive", "negative", "neutral")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

PAD, UNK, SOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>")

SENTENCE_END = {".", "!", "?"}

_TOKEN_RE = re.compile(r"\w+(?:-\w+)*|[^\w\s]")


@dataclass(frozen=True)
class RawRecord:
    question_text: str
    answer_text: str
    opinion_label: str
    product_id: str
    sample_id: str = ""

    def __post_init__(self):
        if self.opinion_label not in LABEL_INDEX:
            raise ValueError(f"unknown opinion label {self.opinion_label!r}; "
                             f"expected one of {', '.join(LABELS)}")


@dataclass(frozen=True)
class ReviewSnippet:
    tokens: tuple
    rating: int | None = None
    source_review_id: str = ""

    def __post_init__(self):
        if self.rating is not None and self.rating not in (1, 2, 3, 4, 5):
            raise ValueError(f"rating must be 1..5 or absent, got {self.rating!r}")


@dataclass
class EncodedReview:
    ids: list
    rating: int | None
    is_pad: bool = False


@dataclass
class QASample:
    """One encoded instance. Source ids may be temporary ids >= len(vocab)."""

    question_ids: list
    answer_ids: list
    reviews: list
    label: int
    oov_tokens: list = field(default_factory=list)
    sample_id: str = ""

    @property
    def n_real_reviews(self):
        return sum(not r.is_pad for r in self.reviews)

    def to_json(self):
        return {
            "sample_id": self.sample_id,
            "question_ids": self.question_ids,
            "answer_ids": self.answer_ids,
            "reviews": [{"ids": r.ids, "rating": r.rating, "is_pad": r.is_pad}
                        for r in self.reviews],
            "label": self.label,
            "oov_tokens": self.oov_tokens,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            question_ids=list(d["question_ids"]),
            answer_ids=list(d["answer_ids"]),
            reviews=[EncodedReview(list(r["ids"]), r["rating"], bool(r["is_pad"]))
                     for r in d["reviews"]],
            label=int(d["label"]),
            oov_tokens=list(d["oov_tokens"]),
            sample_id=str(d.get("sample_id", "")),
        )


def tokenize(text):
    """Lowercase, split punctuation into its own tokens, keep internal hyphens.

    >>> tokenize("Blu-ray PC.")
    ['blu-ray', 'pc', '.']
    """
    return _TOKEN_RE.findall(text.lower())


def chunk_review(tokens, max_len=50, rating=None, review_id=""):
    """Split a tokenized review into snippets of at most ``max_len`` tokens.

    Chunks are taken greedily left to right. If the remainder fits it becomes
    the last chunk; otherwise the chunk closes at the last sentence-final token
    inside the window, or at exactly ``max_len`` tokens if there is none.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    tokens = list(tokens)
    out = []
    pos = 0
    while pos < len(tokens):
        if len(tokens) - pos <= max_len:
            end = len(tokens)
        else:
            end = pos + max_len
            for j in range(pos + max_len - 1, pos - 1, -1):
                if tokens[j] in SENTENCE_END:
                    end = j + 1
                    break
        out.append(ReviewSnippet(tuple(tokens[pos:end]), rating, review_id))
        pos = end
    return out


def bm25_scores(question, snippets, k1=1.2, b=0.75):
    """Okapi BM25 score of every snippet against the query tokens.

    IDF is ``ln((N - n + 0.5) / (n + 0.5))`` clamped at 0. Repeated query terms
    contribute once per occurrence.
    """
    question = list(question)
    if not question:
        raise ValueError("empty query")
    docs = [s.tokens if isinstance(s, ReviewSnippet) else tuple(s) for s in snippets]
    N = len(docs)
    if N == 0:
        return []
    tfs = [Counter(d) for d in docs]
    df = Counter()
    for tf in tfs:
        df.update(tf.keys())
    avgdl = sum(len(d) for d in docs) / N
    idf = {t: max(0.0, math.log((N - df[t] + 0.5) / (df[t] + 0.5))) for t in set(question)}
    scores = []
    for d, tf in zip(docs, tfs):
        norm = k1 * (1.0 - b + b * len(d) / avgdl) if avgdl > 0 else k1
        s = 0.0
        for t in question:
            f = tf.get(t, 0)
            if f:
                s += idf[t] * f * (k1 + 1.0) / (f + norm)
        scores.append(s)
    return scores


def bm25_rank(question, snippets, k1=1.2, b=0.75, top_k=10):
    """Top ``top_k`` snippets by descending BM25 score; ties keep input order."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    scores = bm25_scores(question, snippets, k1, b)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [snippets[i] for i in order[:top_k]]


class Vocabulary:
    """Token/id maps. Ids 0-3 are the specials PAD, UNK, SOS, EOS."""

    def __init__(self, tokens=()):
        self.itos = list(SPECIALS)
        for t in tokens:
            if t in SPECIALS:
                raise ValueError(f"token {t!r} collides with a special symbol")
            self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token):
        return self.stoi.get(token, UNK)

    def token(self, idx):
        return self.itos[idx]

    def encode(self, tokens):
        return [self.id(t) for t in tokens]

    def decode(self, ids, oov_tokens=()):
        """Map ids (including temporary extended ids) back to tokens."""
        n = len(self.itos)
        out = []
        for i in ids:
            if i < n:
                out.append(self.itos[i])
            elif i - n < len(oov_tokens):
                out.append(oov_tokens[i - n])
            else:
                raise IndexError(f"id {i} outside vocabulary and extended vocabulary")
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.itos[len(SPECIALS):]:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocab(token_streams, cap=50000):
    """Keep the ``cap`` most frequent tokens (ties broken lexicographically)."""
    counts = Counter()
    for toks in token_streams:
        counts.update(toks)
    if not counts:
        raise ValueError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(t for t, _ in ranked[:max(cap, 0)])


def encode_sample(record, ranked, vocab, K=10, max_answer_len=100):
    """Encode a record and its ranked snippets with a per-sample extended vocabulary."""
    if not ranked:
        raise ValueError("encode_sample needs at least one review snippet")
    V = len(vocab)
    oov = {}

    def src_id(tok):
        if tok in vocab.stoi:
            return vocab.stoi[tok]
        if tok not in oov:
            oov[tok] = V + len(oov)
        return oov[tok]

    q_ids = [src_id(t) for t in tokenize(record.question_text)]
    reviews = []
    for snip in ranked[:K]:
        reviews.append(EncodedReview([src_id(t) for t in snip.tokens], snip.rating))
    while len(reviews) < K:
        reviews.append(EncodedReview([], None, is_pad=True))

    a_ids = []
    for t in tokenize(record.answer_text)[:max_answer_len]:
        if t in vocab.stoi:
            a_ids.append(vocab.stoi[t])
        else:
            a_ids.append(oov.get(t, UNK))
    a_ids.append(EOS)
    return QASample(q_ids, a_ids, reviews, LABEL_INDEX[record.opinion_label],
                    list(oov), record.sample_id)


# ------------------------------------------------------------------ file IO

def read_jsonl(path):
    """Yield parsed objects; malformed lines raise ValueError with the line number."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSONL at line {lineno}: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ValueError(f"{path}: malformed JSONL at line {lineno}: expected an object")
            yield lineno, obj


def _field(obj, key, path, lineno):
    if key not in obj:
        raise ValueError(f"{path}: line {lineno} is missing field {key!r}")
    return obj[key]


def load_qa(path):
    out = []
    for lineno, obj in read_jsonl(path):
        try:
            rec = RawRecord(
                question_text=str(_field(obj, "question", path, lineno)),
                answer_text=str(_field(obj, "answer", path, lineno)),
                opinion_label=str(_field(obj, "label", path, lineno)),
                product_id=str(_field(obj, "product_id", path, lineno)),
                sample_id=str(obj.get("sample_id", obj.get("id", f"q{len(out):06d}"))),
            )
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        if not tokenize(rec.question_text) or not tokenize(rec.answer_text):
            raise ValueError(f"{path}: line {lineno}: empty question or answer")
        out.append(rec)
    return out


def load_reviews(path):
    """Return ``{product_id: [(review_id, text, rating), ...]}`` in file order."""
    out = {}
    for lineno, obj in read_jsonl(path):
        rating = obj.get("rating")
        if rating is not None:
            rating = int(rating)
            if rating not in (1, 2, 3, 4, 5):
                raise ValueError(f"{path}: line {lineno}: rating must be 1..5 or null")
        pid = str(_field(obj, "product_id", path, lineno))
        out.setdefault(pid, []).append(
            (str(obj.get("review_id", f"r{lineno}")), str(_field(obj, "text", path, lineno)), rating))
    return out


def product_snippets(reviews, max_len=50):
    snippets = []
    for rid, text, rating in reviews:
        snippets.extend(chunk_review(tokenize(text), max_len, rating, rid))
    return snippets


def prepare_corpus(records, reviews_by_product, K=10, cap=50000, chunk_len=50,
                   max_answer_len=100, k1=1.2, b=0.75, vocab=None):
    """tokenize -> chunk -> BM25 top-K -> vocabulary -> encoded samples.

    Returns ``(samples, vocab, stats)``. Pass ``vocab`` to reuse an existing one
    (e.g. a test split encoded with the training vocabulary).
    """
    records = list(records)
    if not records:
        raise ValueError("empty corpus")
    snippets = {pid: product_snippets(revs, chunk_len) for pid, revs in reviews_by_product.items()}
    ranked = []
    for rec in records:
        pool = snippets.get(rec.product_id, [])
        if not pool:
            raise ValueError(f"no reviews for product {rec.product_id!r} "
                             f"(sample {rec.sample_id!r})")
        ranked.append(bm25_rank(tokenize(rec.question_text), pool, k1, b, K))

    if vocab is None:
        def streams():
            for rec in records:
                yield tokenize(rec.question_text)
                yield tokenize(rec.answer_text)
            for pid in sorted({r.product_id for r in records}):
                for s in snippets[pid]:
                    yield s.tokens
        vocab = build_vocab(streams(), cap)

    samples = [encode_sample(rec, rk, vocab, K, max_answer_len) for rec, rk in zip(records, ranked)]
    q_lens = [len(tokenize(r.question_text)) for r in records]
    a_lens = [len(tokenize(r.answer_text)) for r in records]
    stats = {
        "pairs": len(records),
        "products": len({r.product_id for r in records}),
        "snippets": sum(len(snippets[p]) for p in {r.product_id for r in records}),
        "avg_question_len": sum(q_lens) / len(q_lens),
        "avg_answer_len": sum(a_lens) / len(a_lens),
        "padded_reviews": sum(K - s.n_real_reviews for s in samples),
        "vocab_size": len(vocab),
        "label_counts": {name: sum(s.label == i for s in samples) for i, name in enumerate(LABELS)},
        "K": K,
    }
    return samples, vocab, stats


def write_samples(path, samples):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")


def read_samples(path):
    return [QASample.from_json(obj) for _, obj in read_jsonl(path)]
