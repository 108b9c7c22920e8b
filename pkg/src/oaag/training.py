"""Joint objective, Adagrad with global-norm clipping, and the training loop."""
import json
import os
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff.serialize import load_params, save_params
from .corpus import SOS
from .generator import FusionMode, build_context, decode_step, init_state
from .params import ModelConfig, init_params, params_from_arrays

CLAMP = 1e-12
OPT_PREFIX = "adagrad/"


@dataclass
class TrainConfig:
    learning_rate: float = 0.15
    accumulator_init: float = 0.1
    dropout: float = 0.5
    batch_size: int = 32
    epochs: int = 20
    lam: float = 5.0
    grad_clip_norm: float = 2.0
    vocab_cap: int = 50000
    d_h: int = 256
    d_a: int = 256
    emb_dim: int = 300
    init_scale: float = 0.05
    K: int = 10
    max_answer_len: int = 100
    seed: int = 0
    mode: str = "static"
    precision: str = "float32"

    def __post_init__(self):
        FusionMode.parse(self.mode)
        for name in ("learning_rate", "accumulator_init", "batch_size", "grad_clip_norm",
                     "d_h", "d_a", "emb_dim", "init_scale", "K", "max_answer_len"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0 or self.vocab_cap < 0:
            raise ValueError("epochs and vocab_cap must be non-negative")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision}")

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    def model_config(self, vocab_size):
        return ModelConfig(vocab_size, self.emb_dim, self.d_h, self.d_a, self.init_scale)


class Counters(dict):
    """Named event counts (clamps, skipped updates, fusion fallbacks)."""

    def bump(self, key, n=1):
        self[key] = self.get(key, 0) + n


# ----------------------------------------------------------------- losses

def opinion_loss(p_os, labels, counters=None):
    """Summed cross entropy over the batch. Probabilities below 1e-12 are clamped."""
    if len(p_os) != len(labels) or not p_os:
        raise ValueError("opinion_loss needs equal, non-zero numbers of distributions and labels")
    total = None
    for p, y in zip(p_os, labels):
        py = ad.getitem(p, int(y))
        if counters is not None and py.data < CLAMP:
            counters.bump("clamp_om")
        term = ad.neg(ad.log(py, floor=CLAMP))
        total = term if total is None else ad.add(total, term)
    return total


def generation_loss(step_probs, targets, counters=None):
    """Mean negative log likelihood of the targets over the T steps."""
    if len(step_probs) != len(targets) or not targets:
        raise ValueError("generation_loss needs one distribution per target, T >= 1")
    idx = np.asarray(targets, dtype=np.int64)
    P = ad.stack(step_probs)
    picked = ad.getitem(P, (np.arange(len(idx)), idx))
    if counters is not None:
        counters.bump("clamp_ag", int((picked.data < CLAMP).sum()))
    return ad.neg(ad.mean(ad.log(picked, floor=CLAMP)))


def joint_loss(l_om, l_ag, lam):
    return ad.add(l_om, ad.mul(l_ag, float(lam)))


def sample_forward(sample, params, mode, train=False, dropout=0.0, rng=None, counters=None):
    """Teacher-forced pass over one sample; returns ``(L_om, L_ag, p_o)``."""
    ctx = build_context(sample, params, train, dropout, rng)
    state = init_state(ctx.o_hat, params)
    prev, probs = SOS, []
    for tgt in sample.answer_ids:
        out, state = decode_step(state, prev, ctx, mode, params, train, dropout, rng)
        if counters is not None and out.fallback:
            counters.bump("fusion_fallback")
        probs.append(out.P)
        prev = tgt
    l_om = opinion_loss([ctx.p_o], [sample.label], counters)
    l_ag = generation_loss(probs, sample.answer_ids, counters)
    return l_om, l_ag, ctx.p_o


# ----------------------------------------------------------------- optimizer

def clip_global_norm(grads, max_norm):
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * np.asarray(scale, dtype=grads[k].dtype)
    return norm


def init_accumulators(params, value):
    return {k: np.full(t.shape, value, dtype=t.data.dtype) for k, t in params.items()}


def adagrad_step(params, grads, state, lr, eps=1e-10, counters=None):
    """``acc += g**2; theta -= lr * g / (sqrt(acc) + eps)``.

    A batch with any non-finite gradient is skipped entirely. Returns True when applied.
    """
    if not all(np.isfinite(g).all() for g in grads.values()):
        if counters is not None:
            counters.bump("skipped_updates")
        return False
    for k, g in grads.items():
        acc = state[k]
        acc += g * g
        params[k].data -= (lr * g / (np.sqrt(acc) + eps)).astype(acc.dtype, copy=False)
    return True


# ----------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    params: dict
    accumulators: dict
    model_config: ModelConfig
    train_config: TrainConfig
    epoch: int
    history: list

    def save(self, path):
        blob = dict(self.params)
        blob.update({OPT_PREFIX + k: ad.Tensor(v) for k, v in self.accumulators.items()})
        meta = {"model": self.model_config.to_dict(), "train": self.train_config.to_dict(),
                "epoch": self.epoch, "history": self.history}
        save_params(path, blob, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_params(path)
        try:
            mcfg = ModelConfig(**meta["model"])
            tcfg = TrainConfig.from_dict(meta["train"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: checkpoint metadata incomplete ({exc})") from None
        opt = {k[len(OPT_PREFIX):]: v for k, v in arrays.items() if k.startswith(OPT_PREFIX)}
        weights = {k: v for k, v in arrays.items() if not k.startswith(OPT_PREFIX)}
        params = params_from_arrays(weights, mcfg)
        return cls(params, opt, mcfg, tcfg, int(meta.get("epoch", 0)), list(meta.get("history", [])))


def checkpoint_name(epoch):
    return f"epoch_{epoch:04d}.json"


def latest_checkpoint(ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    found = sorted(ckpt_dir.glob("epoch_*.json")) if ckpt_dir.is_dir() else []
    return found[-1] if found else None


# ----------------------------------------------------------------- loop

def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(samples, params, acc, cfg, epoch, counters):
    """One pass over ``samples``; returns the epoch record (without timing)."""
    rng = np.random.default_rng([cfg.seed, epoch])
    tot_om = tot_ag = 0.0
    correct = 0
    for batch in _batches(len(samples), cfg.batch_size, rng):
        for t in params.values():
            t.zero_grad()
        for i in batch:
            s = samples[i]
            with ad.Tape() as tape:
                l_om, l_ag, p_o = sample_forward(s, params, cfg.mode, cfg.dropout > 0,
                                                 cfg.dropout, rng, counters)
                loss = ad.mul(joint_loss(l_om, l_ag, cfg.lam), 1.0 / len(batch))
            tape.backward(loss)
            tot_om += float(l_om.data)
            tot_ag += float(l_ag.data)
            correct += int(np.argmax(p_o.data) == s.label)
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in params.items()}
        if all(np.isfinite(g).all() for g in grads.values()):
            clip_global_norm(grads, cfg.grad_clip_norm)
        adagrad_step(params, grads, acc, cfg.learning_rate, counters=counters)
    n = len(samples)
    l_om, l_ag = tot_om / n, tot_ag / n
    return {"epoch": epoch, "L_om": l_om, "L_ag": l_ag, "L": l_om + cfg.lam * l_ag,
            "accuracy": correct / n, "counters": dict(sorted(counters.items()))}


def train(samples, vocab_size, cfg, resume=None, rng_init=None):
    """Yield a :class:`Checkpoint` after initialization (epoch 0) and after each epoch.

    With ``resume`` (a Checkpoint) training continues from its epoch.
    """
    if not samples:
        raise ValueError("empty corpus")
    ad.set_precision(cfg.precision)
    if resume is not None:
        ck = resume
        if ck.model_config.vocab_size != vocab_size:
            raise ValueError(f"checkpoint/config mismatch: vocab size {ck.model_config.vocab_size} "
                             f"vs {vocab_size}")
        params, acc, history, start = ck.params, ck.accumulators, list(ck.history), ck.epoch
        mcfg = ck.model_config
        if set(acc) != set(params):
            acc = init_accumulators(params, cfg.accumulator_init)
    else:
        mcfg = cfg.model_config(vocab_size)
        params = init_params(mcfg, rng_init or np.random.default_rng(cfg.seed))
        acc = init_accumulators(params, cfg.accumulator_init)
        history, start = [], 0
        yield Checkpoint(params, acc, mcfg, cfg, 0, [])
    for epoch in range(start + 1, cfg.epochs + 1):
        rec = train_epoch(samples, params, acc, cfg, epoch, Counters())
        history.append(rec)
        yield Checkpoint(params, acc, mcfg, cfg, epoch, list(history))


def run_training(samples, vocab_size, cfg, out_dir, resume=True, checkpoint_every=1, keep_last=None):
    """Drive :func:`train`, writing checkpoints and ``train_log.jsonl`` under ``out_dir``.

    A checkpoint is written at epoch 0, every ``checkpoint_every`` epochs and
    at the last epoch; with ``keep_last`` only that many newest ones are kept.
    Wall-clock time goes to ``train_timing.jsonl`` so the log itself stays
    byte-reproducible. Returns the final checkpoint.
    """
    if checkpoint_every < 1:
        raise ValueError(f"checkpoint_every must be >= 1, got {checkpoint_every}")
    if keep_last is not None and keep_last < 1:
        raise ValueError(f"keep_last must be >= 1, got {keep_last}")
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path, timing_path = out / "train_log.jsonl", out / "train_timing.jsonl"
    start_ck = None
    if resume:
        latest = latest_checkpoint(ckpt_dir)
        if latest is not None:
            ad.set_precision(cfg.precision)
            start_ck = Checkpoint.load(latest)
    if start_ck is None:
        for p in (log_path, timing_path):
            if p.exists():
                p.unlink()
    else:
        _rewrite_log(log_path, start_ck.history)
    last = start_ck
    t0 = time.perf_counter()
    for ck in train(samples, vocab_size, cfg, resume=start_ck):
        if ck.epoch % checkpoint_every == 0 or ck.epoch == cfg.epochs:
            ck.save(ckpt_dir / checkpoint_name(ck.epoch))
            if keep_last is not None:
                for old in sorted(ckpt_dir.glob("epoch_*.json"))[:-keep_last]:
                    old.unlink()
        if ck.epoch > 0 and ck.history:
            with open(log_path, "a") as fh:
                fh.write(json.dumps(ck.history[-1], sort_keys=True) + "\n")
            with open(timing_path, "a") as fh:
                fh.write(json.dumps({"epoch": ck.epoch,
                                     "wall_time": round(time.perf_counter() - t0, 6)}) + "\n")
        last = ck
    if not log_path.exists():
        log_path.touch()
    return last


def _rewrite_log(path, history):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    os.replace(tmp, path)
