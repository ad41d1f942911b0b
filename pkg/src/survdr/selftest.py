"""Fast invariant checks runnable without pytest (``survdr selftest``)."""

from __future__ import annotations

import numpy as np

from .estimators import SurvDiffPipeline
from .glm import logistic_loglik, logistic_score
from .hazards import fit_weighted_cox, partial_loglik
from .nonparam import jackknife_pseudo, jackknife_pseudo_naive, kaplan_meier
from .survdata import Dataset


def _toy(rng, n=60):
    z = rng.normal(size=n)
    x = (rng.random(n) < 1 / (1 + np.exp(-0.5 * z))).astype(int)
    t_ev = rng.exponential(1 / np.exp(0.4 * x + 0.5 * z))
    t_c = rng.exponential(2.0, size=n)
    return Dataset(np.minimum(t_ev, t_c), t_ev <= t_c, x, z[:, None], ("z",))


def _fd(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def check_km_hand():
    km = kaplan_meier([1, 2, 2, 3, 4], [1, 1, 0, 1, 0])
    want = [0.8, 0.6, 0.3]
    return np.allclose(km.values, want, rtol=0, atol=1e-15)


def check_pseudo_uncensored():
    rng = np.random.default_rng(1)
    t = rng.exponential(size=40)
    return np.array_equal(jackknife_pseudo(t, np.ones(40, bool), 0.7), (t > 0.7).astype(float))


def check_pseudo_fast_vs_naive():
    data = _toy(np.random.default_rng(2), 50)
    a = jackknife_pseudo(data.time, data.event, 0.8)
    b = jackknife_pseudo_naive(data.time, data.event, 0.8)
    return np.max(np.abs(a - b)) < 1e-10


def check_logistic_score():
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(80), rng.normal(size=(80, 2))])
    y = (rng.random(80) < 0.4).astype(float)
    w = rng.uniform(0.5, 2, 80)
    b = rng.normal(scale=0.5, size=3)
    fd = _fd(lambda c: logistic_loglik(c, X, y, w), b)
    an = logistic_score(b, X, y, w)
    return np.max(np.abs(fd - an)) / max(1.0, np.max(np.abs(an))) < 1e-6


def check_cox_score():
    data = _toy(np.random.default_rng(4))
    X = np.column_stack([data.exposure, data.covariates[:, 0]])
    b = np.array([0.3, -0.2])
    fd = _fd(lambda c: partial_loglik(c, data.time, data.event, X)[0], b)
    an = partial_loglik(b, data.time, data.event, X)[1]
    return np.max(np.abs(fd - an)) / max(1.0, np.max(np.abs(an))) < 1e-6


def check_cox_weight_scaling():
    data = _toy(np.random.default_rng(5))
    w = np.random.default_rng(6).uniform(0.5, 3, data.n)
    a = fit_weighted_cox(data, ("z",), w)
    b = fit_weighted_cox(data, ("z",), 7.5 * w)
    return np.max(np.abs(a.coefficients - b.coefficients)) < 1e-10


def check_zero_at_time_zero():
    data = _toy(np.random.default_rng(7), 120)
    vals = []
    for m in ("stdcox", "drbin", "drsurv", "drpseudo"):
        outcome = ("x", "z") if m in ("drbin", "drpseudo") else ("z",)
        vals.append(SurvDiffPipeline(m, 0.0, ("z",), outcome)(data))
    return all(v == 0.0 for v in vals)


def check_null_truth():
    from .simulation import Scenario, truth

    return truth(Scenario("independent", "null"), draws=1000).zeta == 0.0


CHECKS = (
    ("Kaplan-Meier hand case", check_km_hand),
    ("pseudo-values without censoring", check_pseudo_uncensored),
    ("fast jackknife equals leave-one-out refit", check_pseudo_fast_vs_naive),
    ("logistic score vs finite differences", check_logistic_score),
    ("Cox partial-likelihood score vs finite differences", check_cox_score),
    ("Cox invariance to weight scaling", check_cox_weight_scaling),
    ("survival differences vanish at t=0", check_zero_at_time_zero),
    ("null scenario has zero true difference", check_null_truth),
)


def run_selftest(verbose=True) -> bool:
    ok_all = True
    for name, fn in CHECKS:
        try:
            ok = bool(fn())
        except Exception as err:  # a crash is a failed check, reported by name
            ok = False
            name = f"{name} ({type(err).__name__}: {err})"
        ok_all &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return ok_all
