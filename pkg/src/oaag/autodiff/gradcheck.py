"""Central finite-difference gradient checking."""
import numpy as np

from .tensor import Tape


def grad_check(f, inputs, eps=1e-5, stencil=3):
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    Every input tensor is perturbed coordinate by coordinate. The returned value
    is the max over all coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    ``stencil=5`` uses the fourth-order five-point formula, which tolerates a
    larger ``eps`` and so less roundoff on coordinates with tiny gradients.
    """
    if stencil not in (3, 5):
        raise ValueError(f"stencil must be 3 or 5, got {stencil}")
    inputs = list(inputs)
    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        with Tape() as tape:
            out = f(*inputs)
        if out.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
        if not np.isfinite(out.data).all():
            raise FloatingPointError("function output is not finite")
        if out.requires_grad:
            tape.backward(out)
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

        worst = 0.0
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                offsets = (1, -1) if stencil == 3 else (1, -1, 2, -2)
                vals = []
                for k in offsets:
                    flat[j] = orig + k * eps
                    vals.append(float(f(*inputs).data))
                flat[j] = orig
                if not np.all(np.isfinite(vals)):
                    raise FloatingPointError("function output is not finite")
                if stencil == 3:
                    num = (vals[0] - vals[1]) / (2 * eps)
                else:
                    num = (8 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12 * eps)
                a = float(gflat[j])
                err = abs(a - num) / max(abs(a), abs(num), 1e-8)
                worst = err if err > worst else worst
        return worst
    finally:
        for t, rg in zip(inputs, saved):
            t.requires_grad = rg
            t.grad = None
