"""Command-line entry point: prepare | train | generate | evaluate | verify.

Options come from three layers: built-in defaults, an optional JSON config
file (``--config``), then explicit flags. Exit codes: 0 success, 1 invalid
input or configuration, 2 a verification check failed.
"""
import argparse
import hashlib
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import EOS, LABELS, QASample, EncodedReview, Vocabulary, load_qa, load_reviews, \
    prepare_corpus, read_jsonl, read_samples, write_samples
from .generator import FusionMode, build_context, decode_beam, decode_greedy, replay
from .metrics import classification_metrics, generation_report, repetition, toa
from .training import Checkpoint, TrainConfig, latest_checkpoint, run_training

EXIT_OK, EXIT_INVALID, EXIT_VERIFY = 0, 1, 2

_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}

# command-specific keys, with defaults, accepted in config files and as flags
_COMMAND_KEYS = {
    "prepare": {"qa": None, "reviews": None, "out": None, "synthetic": False, "vocab": None,
                "chunk_len": 50},
    "train": {"data": None, "out": None, "no_resume": False, "checkpoint_every": 1,
              "keep_checkpoints": None},
    "generate": {"checkpoint": None, "data": None, "out": None, "strategy": "greedy", "beam": 4,
                 "max_len": None, "modes": None},
    "evaluate": {"generations": None, "data": None, "predictions": None, "checkpoint": None,
                 "out": None},
    "verify": {"quick": False, "perturb": None, "out": None},
}

TOA_CAVEAT = ("stand-in labeler: the model's own opinion head reads the generated answer as "
              "its only review; not an independent judge, so scores are optimistic")


class UsageError(ValueError):
    pass


# ----------------------------------------------------------------- config layering

def _flag(name):
    return "--" + ("lambda" if name == "lam" else name.replace("_", "-"))


def _add_train_flags(p, names):
    for name in names:
        f = _TRAIN_FIELDS[name]
        typ = {"int": int, "float": float, "str": str}[f.type if isinstance(f.type, str) else f.type.__name__]
        p.add_argument(_flag(name), dest=name, type=typ, default=None)


def _add_command_flags(p, command):
    for key, default in _COMMAND_KEYS[command].items():
        if isinstance(default, bool):
            p.add_argument(_flag(key), dest=key, action="store_true", default=None)
        elif key in ("beam", "max_len", "chunk_len", "checkpoint_every", "keep_checkpoints"):
            p.add_argument(_flag(key), dest=key, type=int, default=None)
        else:
            p.add_argument(_flag(key), dest=key, default=None)


def load_config(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def resolve(command, args, train_names):
    """Merge defaults, config file and flags into ``(train_cfg_dict, options)``."""
    raw = load_config(args.config)
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    allowed = set(train_names) | set(_COMMAND_KEYS[command])
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {unknown}")
    merged = dict(_COMMAND_KEYS[command])
    merged.update(raw)
    for key in allowed:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    train_part = {k: merged.pop(k) for k in list(merged) if k in train_names}
    return train_part, merged


def _need(opts, *keys):
    missing = [_flag(k) for k in keys if opts.get(k) in (None, "")]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def _existing(path, what, kind="file"):
    p = Path(path)
    ok = p.is_file() if kind == "file" else p.is_dir()
    if not ok:
        raise UsageError(f"{what} not found: {p}")
    return p


def config_digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands

def cmd_prepare(tcfg, opts):
    if opts["synthetic"]:
        from .synthetic import shipped_paths
        qa_path, rev_path = shipped_paths()
    else:
        _need(opts, "qa", "reviews")
        qa_path, rev_path = opts["qa"], opts["reviews"]
    _need(opts, "out")
    qa_path = _existing(qa_path, "qa file")
    rev_path = _existing(rev_path, "reviews file")
    vocab = Vocabulary.load(_existing(opts["vocab"], "vocabulary")) if opts["vocab"] else None
    cfg = TrainConfig(**tcfg)
    if opts["chunk_len"] < 1:
        raise UsageError("chunk_len must be >= 1")
    samples, vocab, stats = prepare_corpus(
        load_qa(qa_path), load_reviews(rev_path), K=cfg.K, cap=cfg.vocab_cap,
        chunk_len=opts["chunk_len"], max_answer_len=cfg.max_answer_len, vocab=vocab)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_samples(out / "samples.jsonl", samples)
    vocab.save(out / "vocab.txt")
    (out / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    print(f"prepared {stats['pairs']} samples, vocabulary {stats['vocab_size']} -> {out}")
    return EXIT_OK


def _load_data(data_dir):
    d = _existing(data_dir, "data directory", "dir")
    samples = read_samples(_existing(d / "samples.jsonl", "samples file"))
    vocab = Vocabulary.load(_existing(d / "vocab.txt", "vocabulary"))
    return samples, vocab


def cmd_train(tcfg, opts):
    _need(opts, "data", "out")
    cfg = TrainConfig(**tcfg)
    samples, vocab = _load_data(opts["data"])
    if not samples:
        raise UsageError("empty corpus")
    ks = {len(s.reviews) for s in samples}
    if ks != {cfg.K}:
        raise UsageError(f"config/data mismatch: K={cfg.K} but samples carry {sorted(ks)} reviews")
    out = Path(opts["out"])
    latest = latest_checkpoint(out / "checkpoints")
    if latest is not None and not opts["no_resume"]:
        prev = Checkpoint.load(latest)
        if prev.model_config != cfg.model_config(len(vocab)):
            raise UsageError(f"cannot resume from {latest}: model dimensions differ from the config")
    last = run_training(samples, len(vocab), cfg, out, resume=not opts["no_resume"],
                        checkpoint_every=opts["checkpoint_every"], keep_last=opts["keep_checkpoints"])
    rec = last.history[-1] if last.history else {}
    print(f"trained to epoch {last.epoch}" +
          (f": L_om {rec['L_om']:.4f}, L_ag {rec['L_ag']:.4f}, accuracy {rec['accuracy']:.3f}"
           if rec else ""))
    return EXIT_OK


def _resolve_checkpoint(path):
    p = Path(path)
    if p.is_dir():
        found = latest_checkpoint(p / "checkpoints") or latest_checkpoint(p)
        if found is None:
            raise UsageError(f"no checkpoints under {p}")
        return found
    return _existing(p, "checkpoint")


def _load_checkpoint(path, vocab=None, precision=None):
    ck_path = _resolve_checkpoint(path)
    head = Checkpoint.load(ck_path)
    ad.set_precision(precision or head.train_config.precision)
    ck = Checkpoint.load(ck_path)
    if vocab is not None and ck.model_config.vocab_size != len(vocab):
        raise UsageError(f"checkpoint/data mismatch: checkpoint vocabulary {ck.model_config.vocab_size} "
                         f"vs {len(vocab)} in vocab.txt")
    return ck


def _parse_modes(text, default):
    names = [m.strip() for m in (text or default).split(",") if m.strip()]
    if not names:
        raise UsageError("no fusion modes given")
    return [FusionMode.parse(m).value for m in names]


def cmd_generate(tcfg, opts):
    _need(opts, "checkpoint", "data", "out")
    samples, vocab = _load_data(opts["data"])
    ck = _load_checkpoint(opts["checkpoint"], vocab, tcfg.get("precision"))
    modes = _parse_modes(opts["modes"] or tcfg.get("mode"), ck.train_config.mode)
    if opts["strategy"] not in ("greedy", "beam"):
        raise UsageError(f"unknown strategy {opts['strategy']!r}; expected greedy or beam")
    if opts["beam"] < 1:
        raise UsageError(f"beam must be >= 1, got {opts['beam']}")
    max_len = opts["max_len"] or ck.train_config.max_answer_len
    ks = {len(s.reviews) for s in samples}
    if ks != {ck.train_config.K}:
        raise UsageError(f"checkpoint/data mismatch: K={ck.train_config.K} but samples carry {sorted(ks)}")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    params = ck.params
    gens, preds = [], []
    for s in sorted(samples, key=lambda s: s.sample_id):
        with ad.no_grad():
            ctx = build_context(s, params)
        preds.append({"sample_id": s.sample_id, "p_o": ctx.p_o.data.tolist(),
                      "beta": ctx.beta.data.tolist(), "label": LABELS[int(np.argmax(ctx.p_o.data))],
                      "gold": LABELS[s.label]})
        for mode in modes:
            if opts["strategy"] == "greedy":
                ids = decode_greedy(s, params, mode, max_len=max_len)
            else:
                ids = decode_beam(s, params, mode, beam=opts["beam"], max_len=max_len)
            gens.append({"sample_id": s.sample_id, "mode": mode, "strategy": opts["strategy"],
                         "ids": ids, "tokens": vocab.decode(ids, s.oov_tokens),
                         "steps": replay(s, params, mode, ids)})
    _write_jsonl(out / "generations.jsonl", gens)
    _write_jsonl(out / "predictions.jsonl", preds)
    print(f"wrote {len(gens)} generations ({', '.join(modes)}) and {len(preds)} predictions -> {out}")
    return EXIT_OK


def _by_id(rows, what, expected):
    got = {}
    for r in rows:
        if r["sample_id"] in got:
            raise UsageError(f"{what}: duplicate sample_id {r['sample_id']!r}")
        got[r["sample_id"]] = r
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    if missing or extra:
        raise UsageError(f"{what}: sample ids do not align with the data; missing {missing}, "
                         f"unknown {extra}")
    return got


def _opinion_labeler(by_id, params, vocab):
    """Label ``(sample_id, tokens)`` by feeding the tokens to the opinion head as the only review."""
    def label(item):
        sample_id, tokens = item
        q = by_id[sample_id]
        ids = [vocab.id(t) for t in tokens] or [vocab.id("<unk>")]
        pads = [EncodedReview([], None, True) for _ in range(len(q.reviews) - 1)]
        s = QASample(list(q.question_ids), [EOS], [EncodedReview(ids, None)] + pads, 0)
        with ad.no_grad():
            return int(np.argmax(build_context(s, params).p_o.data))
    return label


def cmd_evaluate(tcfg, opts):
    _need(opts, "generations", "data", "predictions", "out")
    samples, vocab = _load_data(opts["data"])
    gen_rows = [row for _, row in read_jsonl(_existing(opts["generations"], "generations file"))]
    pred_rows = [row for _, row in read_jsonl(_existing(opts["predictions"], "predictions file"))]
    ck = _load_checkpoint(opts["checkpoint"], vocab, tcfg.get("precision")) if opts["checkpoint"] else None

    by_id = {s.sample_id: s for s in samples}
    if len(by_id) != len(samples):
        raise UsageError("data: duplicate sample ids")
    ids = sorted(by_id)
    refs = {i: vocab.decode([t for t in by_id[i].answer_ids if t != EOS], by_id[i].oov_tokens)
            for i in ids}

    modes = sorted({r.get("mode", "static") for r in gen_rows})
    if not modes:
        raise UsageError("generations file is empty")
    table = stoi = None
    if ck is not None:
        table, stoi = ck.params["embedding"].data, vocab.stoi
    gen_reports, rep_rows, toa_scores = {}, [], {}
    for mode in modes:
        rows = _by_id([r for r in gen_rows if r.get("mode", "static") == mode], f"generations[{mode}]", ids)
        hyps = [list(rows[i]["tokens"]) for i in ids]
        rep = generation_report(hyps, [refs[i] for i in ids], table, stoi)
        gen_reports[mode] = rep.to_dict()
        rep_rows.append({"mode": mode, "repetition_1": rep.repetition_1, "repetition_2": rep.repetition_2})
        if ck is not None:
            labeler = _opinion_labeler(by_id, ck.params, vocab)
            toa_scores[mode] = toa(list(zip(ids, hyps)), [by_id[i].label for i in ids], labeler)
    ref_corpus = [refs[i] for i in ids]
    rep_rows.append({"mode": "reference", "repetition_1": repetition(ref_corpus, 1),
                     "repetition_2": repetition(ref_corpus, 2)})

    preds = _by_id(pred_rows, "predictions", ids)
    index = {name: k for k, name in enumerate(LABELS)}
    try:
        pred_labels = [index[preds[i]["label"]] for i in ids]
    except KeyError as exc:
        raise UsageError(f"predictions: unknown label {exc.args[0]!r}") from None
    cls = classification_metrics(pred_labels, [by_id[i].label for i in ids])

    config = {"data": str(Path(opts["data"]).resolve().name), "modes": modes,
              "train": ck.train_config.to_dict() if ck is not None else None,
              "checkpoint_epoch": ck.epoch if ck is not None else None}
    report = {
        "config": config,
        "config_digest": config_digest(config),
        "generation": gen_reports,
        "classification": cls.to_dict(),
        "repetition": rep_rows,
        "toa": {"scores": toa_scores or None, "labeler": "opinion-head" if ck is not None else None,
                "caveat": TOA_CAVEAT if ck is not None else "no checkpoint given; TOA not computed"},
    }
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for mode in modes:
        g = gen_reports[mode]
        print(f"{mode:8s} R1 {g['r1_f1']:.4f}  RL {g['rl_f1']:.4f}  B1 {g['bleu1']:.4f}  "
              f"rep1 {g['repetition_1']:.4f}  rep2 {g['repetition_2']:.4f}")
    print(f"classification macro-F1 {cls.macro_f1:.4f}  accuracy {cls.accuracy:.4f}  -> {out}")
    return EXIT_OK


def _parse_perturb(text):
    if text is None:
        return None
    op, _, factor = text.partition(":")
    try:
        return op, float(factor) if factor else 1.5
    except ValueError:
        raise UsageError(f"--perturb expects OP or OP:FACTOR, got {text!r}") from None


def cmd_verify(tcfg, opts):
    from . import verify
    perturb = _parse_perturb(opts["perturb"])
    if perturb is not None:
        with ad.perturb_backward(*perturb):
            results = verify.run_all(quick=bool(opts["quick"]))
    else:
        results = verify.run_all(quick=bool(opts["quick"]))
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if opts["out"]:
        Path(opts["out"]).write_text(json.dumps(
            [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
            indent=2) + "\n")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


# ----------------------------------------------------------------- parser

_TRAIN_FLAGS = {
    "prepare": ("K", "vocab_cap", "max_answer_len"),
    "train": tuple(_TRAIN_FIELDS),
    "generate": ("mode", "precision"),
    "evaluate": ("precision",),
    "verify": (),
}

_HANDLERS = {"prepare": cmd_prepare, "train": cmd_train, "generate": cmd_generate,
             "evaluate": cmd_evaluate, "verify": cmd_verify}


def build_parser():
    parser = argparse.ArgumentParser(prog="oaag", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "prepare": "tokenize, chunk, retrieve top-K snippets and encode samples",
        "train": "train the joint model (resumes from the latest checkpoint)",
        "generate": "decode answers and dump opinion predictions",
        "evaluate": "score generations and predictions into eval_report.json",
        "verify": "run the invariant suite (exit 2 on any failure)",
    }
    for name in _HANDLERS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", default=None, help="JSON file of option values")
        _add_command_flags(p, name)
        _add_train_flags(p, _TRAIN_FLAGS[name])
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        tcfg, opts = resolve(args.command, args, _TRAIN_FLAGS[args.command])
        return _HANDLERS[args.command](tcfg, opts)
    except (ValueError, OSError, KeyError, IndexError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
