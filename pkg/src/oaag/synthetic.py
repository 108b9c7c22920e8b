"""Deterministic 16-sample toy corpus with planted opinion labels.

Eight products each get two yes/no questions about different attributes.
The reviews for an attribute carry the planted stance (and a matching
rating), so both the label and the answer wording are recoverable from the
retrieved snippets.
"""
import json
from importlib import resources
from pathlib import Path

PRODUCTS = ("phone", "tablet", "speaker", "laptop", "watch", "headset", "keyboard", "router")
ATTRS = ("battery", "screen", "sound", "price", "size", "weight", "color", "range")

# (product index, attribute index, label) for each question
_PLAN = (
    (0, 0, "positive"), (0, 1, "negative"),
    (1, 1, "positive"), (1, 3, "neutral"),
    (2, 2, "positive"), (2, 3, "negative"),
    (3, 0, "negative"), (3, 4, "neutral"),
    (4, 0, "positive"), (4, 6, "neutral"),
    (5, 2, "negative"), (5, 5, "positive"),
    (6, 6, "neutral"), (6, 5, "negative"),
    (7, 7, "positive"), (7, 4, "neutral"),
)

_STANCE = {"positive": ("great", 5), "negative": ("bad", 1), "neutral": ("okay", 3)}


def answer_text(attr, label):
    word = _STANCE[label][0]
    if label == "positive":
        return f"yes , the {attr} is {word} ."
    if label == "negative":
        return f"no , the {attr} is {word} ."
    return f"the {attr} is {word} ."


def build():
    """Return ``(qa_records, review_records)`` as lists of JSON-ready dicts."""
    qa, reviews = [], []
    for i, (p, a, label) in enumerate(_PLAN):
        product, attr = PRODUCTS[p], ATTRS[a]
        pid = f"p{p}"
        qa.append({"sample_id": f"s{i:02d}", "product_id": pid,
                   "question": f"is the {attr} of this {product} good ?",
                   "answer": answer_text(attr, label), "label": label})
        word, rating = _STANCE[label]
        for j, text in enumerate((f"the {attr} is {word} .", f"i think the {attr} is {word} .")):
            reviews.append({"product_id": pid, "review_id": f"{pid}-{attr}-{j}",
                            "text": text, "rating": rating})
    for p in range(len(PRODUCTS)):
        reviews.append({"product_id": f"p{p}", "review_id": f"p{p}-ship",
                        "text": "fast shipping and nice box .", "rating": 4})
    reviews.sort(key=lambda r: (int(r["product_id"][1:]), r["review_id"]))
    return qa, reviews


def write(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    qa, reviews = build()
    for name, rows in (("qa.jsonl", qa), ("reviews.jsonl", reviews)):
        with open(out / name, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return out / "qa.jsonl", out / "reviews.jsonl"


def shipped_paths():
    """Paths of the packaged copy of the corpus."""
    root = resources.files("oaag") / "data" / "overfit"
    return Path(str(root / "qa.jsonl")), Path(str(root / "reviews.jsonl"))


if __name__ == "__main__":
    write(Path(__file__).parent / "data" / "overfit")
