import numpy as np
import pytest

from oaag import autodiff as ad
from oaag import verify


@pytest.fixture(autouse=True)
def f64():
    with ad.precision("float64"):
        yield


def test_module_gradients():
    assert verify.reader_gradient_error() < 1e-5
    assert verify.opinion_gradient_error() < 1e-5


@pytest.mark.parametrize("op", ["matmul", "tanh", "softmax"])
def test_perturbed_rule_is_caught(op):
    with ad.perturb_backward(op, 1.5):
        assert verify.reader_gradient_error() > 1e-3


def test_perturbed_reweight_is_caught():
    with ad.perturb_backward("reweight", 1.5):
        assert verify.generator_gradient_error("static") > 1e-3


def test_sweep_and_identities():
    worst, violations, n = verify.normalization_sweep(60)
    assert worst <= 1e-6 and violations == 0 and n == 60
    d = verify.fusion_identities()
    assert d["uniform_static"] == 0 and d["k1_dynamic"] == 0 and d["worked_example"] <= 1e-12


def test_copy_and_oracles():
    ok, words = verify.copy_check()
    assert ok and words == ["zyx"]
    assert verify.bm25_oracle(40) == 0
    dev, bad = verify.metric_oracles(50)
    assert dev <= 1e-9 and bad == 0


def test_check_result_line():
    r = verify.CheckResult("x", False, "detail", 1.25)
    assert r.line().startswith("FAIL  x: detail")
    assert np.isclose(r.seconds, 1.25)
