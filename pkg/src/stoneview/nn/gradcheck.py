"""Analytic-vs-numeric gradient comparison by central finite differences.

Works on any Module whose forward/backward pair is exercised through a
scalar loss closure. Relative error uses max(|analytic|, |numeric|) plus a
small floor so parameters with genuinely tiny gradients do not blow up the
ratio on finite-difference noise.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamCheck:
    name: str
    checked: int
    max_rel_err: float
    worst_index: tuple


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    per_param: list = field(default_factory=list)

    @property
    def max_rel_err(self):
        return max((c.max_rel_err for c in self.per_param), default=0.0)

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance

    @property
    def worst_param(self):
        if not self.per_param:
            return None
        return max(self.per_param, key=lambda c: c.max_rel_err).name

    def summary(self):
        status = "pass" if self.passed else "FAIL"
        return (f"gradcheck {status}: max rel err {self.max_rel_err:.3e} "
                f"(tol {self.tolerance:.1e}, worst {self.worst_param})")


def _rel_err(a, n, floor=1e-5):
    return abs(a - n) / (max(abs(a), abs(n)) + floor)


def check_gradients(model, loss_fn, tolerance=1e-4, step=1e-5,
                    sample_fraction=1.0, min_per_param=4, rng=None):
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must run a full forward pass of ``model`` and return the
    scalar loss; gradients are produced separately by the caller having run
    backward once before calling (we recompute them here for safety).
    """
    rng = rng or np.random.default_rng(0)
    named = list(model.named_parameters())

    model.zero_grad()
    base_loss, backprop = loss_fn()
    backprop()
    analytic = {name: p.grad.copy() for name, p in named}

    report = GradCheckReport(tolerance=tolerance, step=step)
    for name, p in named:
        flat = p.data.reshape(-1)
        size = flat.size
        n_check = size if sample_fraction >= 1.0 else max(
            min_per_param, int(round(size * sample_fraction))
        )
        n_check = min(n_check, size)
        if n_check == size:
            idxs = np.arange(size)
        else:
            idxs = rng.choice(size, size=n_check, replace=False)
        worst = 0.0
        worst_idx = ()
        a_flat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            lp, _ = loss_fn()
            flat[i] = orig - step
            lm, _ = loss_fn()
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * step)
            err = _rel_err(float(a_flat[i]), numeric)
            if err > worst:
                worst = err
                worst_idx = np.unravel_index(int(i), p.data.shape)
        report.per_param.append(ParamCheck(name, int(n_check), worst, worst_idx))
    return report


def projection_loss(module, x, rng=None):
    """Scalar loss for checking a standalone block: sum(out * R) with a
    fixed random projection R, so every output element receives gradient."""
    rng = rng or np.random.default_rng(42)
    r_holder = {}

    def loss_fn():
        out = module(x)
        if "r" not in r_holder:
            r_holder["r"] = rng.standard_normal(out.shape)
        r = r_holder["r"]
        loss = float((out * r).sum())

        def backprop():
            module.backward(r.astype(out.dtype, copy=False))

        return loss, backprop

    return loss_fn
