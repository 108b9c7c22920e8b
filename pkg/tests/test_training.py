import json
import math

import numpy as np
import pytest

from oaag import autodiff as ad
from oaag import toy
from oaag.training import (
    Checkpoint, Counters, TrainConfig, adagrad_step, clip_global_norm, generation_loss,
    init_accumulators, joint_loss, opinion_loss, run_training, sample_forward, train,
)


@pytest.fixture(autouse=True)
def f64():
    with ad.precision("float64"):
        yield


def _t(x):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


class TestLosses:
    def test_opinion(self):
        assert opinion_loss([_t([0, 1, 0])], [1]).item() == 0.0
        assert opinion_loss([_t([1 / 3] * 3)], [2]).item() == pytest.approx(math.log(3), abs=1e-12)
        both = opinion_loss([_t([0, 1, 0]), _t([1 / 3] * 3)], [1, 0]).item()
        assert both == pytest.approx(1.0986, abs=1e-4)

    def test_opinion_clamp_counted(self):
        c = Counters()
        val = opinion_loss([_t([0.0, 1.0, 0.0])], [0], c).item()
        assert val == pytest.approx(-math.log(1e-12)) and c["clamp_om"] == 1

    def test_generation(self):
        one = [_t([0, 1.0]), _t([1.0, 0])]
        assert generation_loss(one, [1, 0]).item() == 0.0
        V = 7
        uni = [_t(np.full(V, 1 / V))] * 3
        assert generation_loss(uni, [0, 3, 6]).item() == pytest.approx(math.log(V), abs=1e-12)
        got = generation_loss([_t([0.5, 0.5]), _t([0.25, 0.75])], [0, 0]).item()
        assert got == pytest.approx(1.5 * math.log(2), abs=1e-12)
        assert got == pytest.approx(1.0397, abs=1e-4)

    def test_joint(self):
        assert joint_loss(_t(1.0), _t(2.0), 5).item() == 11.0
        assert joint_loss(_t(1.0), _t(2.0), 0).item() == 1.0
        assert joint_loss(_t(1.0), _t(0.0), 5).item() == 1.0

    def test_joint_gradient_is_linear(self):
        _, p = toy.toy_model(init_scale=0.5)
        s = toy.toy_batch(1)[0]

        def grads(fn):
            for t in p.values():
                t.zero_grad()
            with ad.Tape() as tape:
                lo, la, _ = sample_forward(s, p, "static")
                loss = fn(lo, la)
            tape.backward(loss)
            return {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in p.items()}

        g_joint = grads(lambda lo, la: joint_loss(lo, la, 5.0))
        g_om = grads(lambda lo, la: lo)
        g_ag = grads(lambda lo, la: la)
        for k in p:
            np.testing.assert_allclose(g_joint[k], g_om[k] + 5.0 * g_ag[k], rtol=1e-10, atol=1e-14)


class TestOptimizer:
    def _one(self, g, acc0=0.1):
        p = {"w": _t([0.0])}
        st = init_accumulators(p, acc0)
        adagrad_step(p, {"w": np.array([g])}, st, 0.15)
        return p["w"].data[0], st

    def test_zero_grad(self):
        assert self._one(0.0)[0] == 0.0

    def test_first_step(self):
        assert self._one(1.0)[0] == pytest.approx(-0.15 / (math.sqrt(1.1) + 1e-10), abs=1e-15)
        assert self._one(1.0)[0] == pytest.approx(-0.14302, abs=1e-5)

    def test_steps_shrink(self):
        p = {"w": _t([0.0])}
        st = init_accumulators(p, 0.1)
        adagrad_step(p, {"w": np.array([1.0])}, st, 0.15)
        first = p["w"].data[0]
        adagrad_step(p, {"w": np.array([1.0])}, st, 0.15)
        assert abs(p["w"].data[0] - first) < abs(first)

    def test_nonfinite_skipped(self):
        p = {"w": _t([1.0])}
        st = init_accumulators(p, 0.1)
        c = Counters()
        assert not adagrad_step(p, {"w": np.array([np.nan])}, st, 0.15, counters=c)
        assert p["w"].data[0] == 1.0 and st["w"][0] == 0.1 and c["skipped_updates"] == 1

    def test_clip_preserves_direction(self):
        g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
        before = {k: v.copy() for k, v in g.items()}
        assert clip_global_norm(g, 2.0) == 5.0
        for k in g:
            np.testing.assert_allclose(g[k], before[k] * 0.4)
        small = {"a": np.array([0.1])}
        clip_global_norm(small, 2.0)
        assert small["a"][0] == 0.1


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.accumulator_init, c.dropout, c.batch_size, c.epochs, c.lam,
                c.grad_clip_norm, c.d_h, c.K, c.max_answer_len) == (0.15, 0.1, 0.5, 32, 20, 5.0, 2.0, 256, 10, 100)

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            TrainConfig.from_dict({"lr": 1})

    def test_roundtrip(self):
        c = TrainConfig(lam=2.0, mode="dynamic")
        assert TrainConfig.from_dict(c.to_dict()) == c

    @pytest.mark.parametrize("kw", [{"lam": -1}, {"batch_size": 0}, {"mode": "x"}, {"dropout": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def _small_cfg(**kw):
    base = dict(dropout=0.0, batch_size=2, epochs=2, d_h=8, d_a=8, emb_dim=8, K=2,
                precision="float64", seed=3)
    base.update(kw)
    return TrainConfig(**base)


class TestLoop:
    def test_yields_initial_and_epochs(self):
        cks = list(train(toy.toy_batch(3), 24, _small_cfg()))
        assert [c.epoch for c in cks] == [0, 1, 2]
        assert len(cks[-1].history) == 2

    def test_lambda_zero_freezes_generator_only_params(self):
        cfg = _small_cfg(lam=0.0)
        init = {k: v.data.copy() for k, v in next(iter(train(toy.toy_batch(3), 24, cfg))).params.items()}
        *_, last = train(toy.toy_batch(3), 24, cfg)
        gen_only = [k for k in init if k.startswith(("dec.att", "dec.out", "dec.gamma", "dec.lstm",
                                                      "dec.init"))]
        for k in gen_only:
            np.testing.assert_array_equal(last.params[k].data, init[k])
        assert not np.array_equal(last.params["opinion.W_s"].data, init["opinion.W_s"])

    def test_empty(self):
        with pytest.raises(ValueError, match="empty corpus"):
            list(train([], 24, _small_cfg()))

    def test_determinism_and_resume(self, tmp_path):
        data = toy.toy_batch(4)
        run_training(data, 24, _small_cfg(epochs=3, dropout=0.3), tmp_path / "a")
        run_training(data, 24, _small_cfg(epochs=3, dropout=0.3), tmp_path / "b")
        for name in ("train_log.jsonl", "checkpoints/epoch_0003.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        # stop after one epoch, then resume to three
        run_training(data, 24, _small_cfg(epochs=1, dropout=0.3), tmp_path / "c")
        run_training(data, 24, _small_cfg(epochs=3, dropout=0.3), tmp_path / "c")
        assert (tmp_path / "c/train_log.jsonl").read_bytes() == (tmp_path / "a/train_log.jsonl").read_bytes()
        assert (tmp_path / "c/checkpoints/epoch_0003.json").read_bytes() == \
            (tmp_path / "a/checkpoints/epoch_0003.json").read_bytes()
        rec = json.loads((tmp_path / "a/train_log.jsonl").read_text().splitlines()[0])
        assert {"epoch", "L_om", "L_ag", "L", "counters"} <= set(rec)
        assert (tmp_path / "a/train_timing.jsonl").exists()

    def test_epochs_zero(self, tmp_path):
        run_training(toy.toy_batch(2), 24, _small_cfg(epochs=0), tmp_path)
        assert [p.name for p in (tmp_path / "checkpoints").iterdir()] == ["epoch_0000.json"]
        assert (tmp_path / "train_log.jsonl").read_text() == ""

    def test_checkpoint_every_and_keep_last(self, tmp_path):
        data = toy.toy_batch(2)
        run_training(data, 24, _small_cfg(epochs=5), tmp_path / "a", checkpoint_every=2, keep_last=2)
        assert sorted(p.name for p in (tmp_path / "a/checkpoints").iterdir()) == \
            ["epoch_0004.json", "epoch_0005.json"]
        assert len((tmp_path / "a/train_log.jsonl").read_text().splitlines()) == 5
        run_training(data, 24, _small_cfg(epochs=5), tmp_path / "b")
        assert (tmp_path / "a/train_log.jsonl").read_bytes() == (tmp_path / "b/train_log.jsonl").read_bytes()
        with pytest.raises(ValueError):
            run_training(data, 24, _small_cfg(), tmp_path / "c", checkpoint_every=0)

    def test_checkpoint_reload_bit_identical(self, tmp_path):
        *_, last = train(toy.toy_batch(2), 24, _small_cfg(epochs=1))
        last.save(tmp_path / "ck.json")
        back = Checkpoint.load(tmp_path / "ck.json")
        s = toy.toy_batch(1, seed=9)[0]
        with ad.no_grad():
            a = sample_forward(s, last.params, "dynamic")
            b = sample_forward(s, back.params, "dynamic")
        assert a[1].item() == b[1].item()
        np.testing.assert_array_equal(a[2].data, b[2].data)
        assert back.epoch == 1 and back.history == last.history

    def test_single_batch_loss_decreases(self):
        data = toy.toy_batch(2)
        cks = list(train(data, 24, _small_cfg(epochs=2, batch_size=2)))
        assert cks[2].history[1]["L"] <= cks[1].history[0]["L"]
