"""Invariant battery behind ``gahqs check``.

Every check returns a :class:`CheckResult`. Operators are looked up through
their modules at call time (``kspace.data_consistency``), so a patched or
broken implementation is what gets checked.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import torch

from . import kspace, training, unfold


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _rand(rng, h, w):
    return rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))


def _rand_mask(rng, max_size=16):
    """Unstructured Bernoulli sampling pattern; the operators accept any boolean mask."""
    h, w = (int(v) for v in rng.integers(4, max_size + 1, size=2))
    return rng.random((h, w)) < rng.uniform(0.1, 0.9)


def check_smw(trials=100, seed=0, tol=1e-8):
    """Closed-form data consistency against the dense regularised least-squares solve."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        mask = _rand_mask(rng)
        h, w = np.shape(mask)
        z, y = _rand(rng, h, w), kspace.apply_forward(_rand(rng, h, w), mask)
        mu = float(10 ** rng.uniform(-2, 1))
        dense = kspace.dense_data_consistency(z, y, mu, mask)
        fast = kspace.data_consistency(z, y, 1.0 / (1.0 + mu), mask)
        worst = max(worst, np.linalg.norm(fast - dense) / np.linalg.norm(dense))
    return worst <= tol, f"max relative error {worst:.2e} over {trials} instances"


def check_adjoint(trials=1000, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        mask = _rand_mask(rng)
        h, w = np.shape(mask)
        x, v = _rand(rng, h, w), _rand(rng, h, w)
        lhs = np.vdot(v, kspace.apply_forward(x, mask))
        rhs = np.vdot(kspace.apply_adjoint(v, mask), x)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        worst = max(worst, abs(np.linalg.norm(kspace.fft2c(x)) - np.linalg.norm(x)) / np.linalg.norm(x))
    return worst <= tol, f"max relative defect {worst:.2e} over {trials} trials"


def check_gradients(targets=("pgsa", "msst", "stage"), tol=1e-4):
    configs = {
        "pgsa": {"size": 8, "channels": 8, "num_splits": 2},
        "msst": {"size": 16, "channels": 8, "num_splits": 2, "window_size": 4, "heads": 2},
        "stage": {"size": 16, "channels": 8, "num_splits": 2, "window_size": 4, "heads": 2},
    }
    errs = {}
    ok = True
    for t in targets:
        rep = training.gradient_check(t, configs.get(t, {}))
        errs[t] = rep.max_rel_error
        ok &= rep.all_finite and rep.max_rel_error <= tol
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items())


def zero_beta_pair(cfg: unfold.UnfoldConfig, seed=0):
    """An HQS net and an A-HQS net with the same denoisers and eta, beta set to 0."""
    torch.manual_seed(seed)
    hqs = unfold.make_variant(cfg.with_(variant="hqs"))
    ahqs = unfold.make_variant(cfg.with_(variant="ahqs"))
    ahqs.load_state_dict(hqs.state_dict(), strict=False)
    with torch.no_grad():
        for stage in ahqs.stages:
            stage.beta.zero_()
    return hqs, ahqs


def check_reduction(trials=20, seed=0):
    rng = np.random.default_rng(seed)
    failures = 0
    for t in range(trials):
        size = int(rng.choice([16, 24, 32]))
        cfg = unfold.UnfoldConfig(
            num_stages=int(rng.integers(1, 4)), num_splits=2, channels=int(rng.choice([4, 8])),
            window_size=4, heads=2, img_size=size,
        )
        hqs, ahqs = zero_beta_pair(cfg, seed + t)
        mask = kspace.make_mask("radial", size, size, 4)
        x = torch.as_tensor(_rand(rng, size, size)).to(torch.complex64)
        y = kspace.apply_forward(x, mask)
        with torch.no_grad():
            a, b = hqs(y, mask), ahqs(y, mask)
        failures += not torch.equal(a, b)
    return failures == 0, f"{trials - failures}/{trials} configurations bit-equal"


def acceleration_instance(seed, size=32):
    """One random strongly convex quadratic problem for the momentum comparison."""
    rng = np.random.default_rng(seed)
    kind = kspace.MASK_KINDS[seed % len(kspace.MASK_KINDS)]
    mask = kspace.make_mask(kind, size, size, int(rng.choice([2, 4, 8])), seed=seed)
    y = kspace.apply_forward(_rand(rng, size, size), mask)
    anchor = _rand(rng, size, size)
    reg = float(10 ** rng.uniform(-3, -1))
    return y, mask, anchor, reg


def acceleration_counts(seed, size=32, tol=1e-6):
    y, mask, anchor, reg = acceleration_instance(seed, size)
    x_star = unfold.quadratic_fixed_point(y, mask, anchor, reg)
    plain, _ = unfold.quadratic_hqs(y, mask, anchor, reg, x_star=x_star, tol=tol)
    fast, _ = unfold.quadratic_hqs(y, mask, anchor, reg, accelerate=True, x_star=x_star, tol=tol)
    return plain, fast


def check_convergence(trials=50, size=32, need=40):
    never_slower = faster = 0
    for s in range(trials):
        plain, fast = acceleration_counts(s, size)
        if plain is None or fast is None:
            continue
        never_slower += fast <= plain
        faster += fast < 0.8 * plain
    ok = never_slower == trials and faster >= need
    return ok, f"not slower on {never_slower}/{trials}, under 0.8x on {faster}/{trials}"


CHECKS = {
    "smw": check_smw,
    "adjoint": check_adjoint,
    "gradients": check_gradients,
    "reduction": check_reduction,
    "convergence": check_convergence,
}


def run_checks(only=None, quick=False):
    """Run the named checks (all by default). ``quick`` shrinks the trial counts."""
    names = list(only) if only else list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks {unknown}; available {list(CHECKS)}")
    small = {"smw": {"trials": 20}, "adjoint": {"trials": 100}, "reduction": {"trials": 4},
             "convergence": {"trials": 10, "size": 16, "need": 8}}
    out = []
    for n in names:
        t0 = time.perf_counter()
        try:
            ok, detail = CHECKS[n](**(small.get(n, {}) if quick else {}))
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(n, bool(ok), detail, time.perf_counter() - t0))
    return out
