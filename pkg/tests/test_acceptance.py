"""Acceptance criteria 1-8, one test each.

Each test records a single PASS/FAIL line that is printed in the terminal
summary. Criteria 4-6 run the desk-scale simulation profile and dominate
the runtime; deselect them with ``-m "not acceptance"``. Seeds were fixed
before any of these runs and are not tuned.
"""

import contextlib
import math
import os
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from survdr import Dataset, fit_weighted_cox, fit_weighted_parametric_ph, kaplan_meier, load_csv
from survdr.cli import analyze_dataset, main
from survdr.glm import cloglog_objective, cloglog_score, logistic_loglik, logistic_score
from survdr.hazards import default_breaks, full_loglik, partial_loglik
from survdr.survdata import term_covariates
from survdr import simulation as sim

import test_estimators as te
import test_glm as tg
import test_hazards as th
import test_nonparam as tn
from conftest import CRITERIA, central_fd, make_data

M = sim.ModelSpec.parse


@contextlib.contextmanager
def criterion(k, title):
    notes = []
    start = time.perf_counter()
    try:
        yield notes
    except BaseException as err:
        if isinstance(err, pytest.skip.Exception):
            CRITERIA[k] = f"criterion {k} SKIP  {title}: {err}"
            raise
        CRITERIA[k] = f"criterion {k} FAIL  {title}: {type(err).__name__}: {str(err).splitlines()[0] if str(err) else ''}"
        raise
    extra = f" [{'; '.join(notes)}]" if notes else ""
    CRITERIA[k] = f"criterion {k} PASS  {title} ({time.perf_counter() - start:.1f}s){extra}"


def check(notes, ok, what):
    notes.append(what)
    assert ok, what


def rel_err(fd, an):
    return float(np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1e-300))


# -- 1 ------------------------------------------------------------------------


def test_criterion_1_score_gradients():
    with criterion(1, "analytic scores vs central differences") as notes:
        rng = np.random.default_rng(101)
        start = time.perf_counter()
        worst = {}
        n = 300
        X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = (rng.random(n) < 0.4).astype(float)
        w = rng.uniform(0.2, 3.0, n)
        s = rng.random(n) + rng.normal(scale=0.3, size=n)
        ds = make_data(rng, 200, ties=True)
        Xc = np.column_stack([ds.exposure, ds.covariates])
        wd = rng.uniform(0.3, 3.0, ds.n)
        breaks = default_breaks(ds.time, ds.event)
        for _ in range(5):
            b = rng.normal(scale=0.6, size=3)
            worst["logistic"] = max(worst.get("logistic", 0), rel_err(
                central_fd(lambda c: logistic_loglik(c, X, y, w), b), logistic_score(b, X, y, w)))
            worst["cloglog"] = max(worst.get("cloglog", 0), rel_err(
                central_fd(lambda c: cloglog_objective(c, X, s), b), cloglog_score(b, X, s)))
            worst["cox"] = max(worst.get("cox", 0), rel_err(
                central_fd(lambda c: partial_loglik(c, ds.time, ds.event, Xc, wd)[0], b),
                partial_loglik(b, ds.time, ds.event, Xc, wd)[1]))
            for family, nb in (("exponential", 1), ("weibull", 2), ("piecewise", len(breaks))):
                theta = rng.normal(scale=0.3, size=nb + 3)

                def f(tt):
                    return full_loglik(family, tt[:nb], tt[nb:], ds, ("z1", "z2"), wd, breaks)[0]

                an = full_loglik(family, theta[:nb], theta[nb:], ds, ("z1", "z2"), wd, breaks)[1]
                worst[family] = max(worst.get(family, 0), rel_err(central_fd(f, theta), an))
        elapsed = time.perf_counter() - start
        for name, e in worst.items():
            check(notes, e < 1e-6, f"{name} {e:.1e}")
        check(notes, elapsed < 10, f"{elapsed:.2f}s < 10s")


# -- 2 ------------------------------------------------------------------------


def test_criterion_2_oracle_equivalence():
    with criterion(2, "Cox brute force and DR hand oracles") as notes:
        th.test_cox_matches_brute_force_1d()
        notes.append("cox 20/20 within 1e-6")
        for t in (1.0, 1.6):
            te.test_dr_binomial_hand_oracle(t)
            te.test_dr_pseudo_hand_oracle(t)
        for t in (1.6, 2.2):
            for form in ("standard", "printed"):
                te.test_dr_survival_curve_hand_oracle(t, form)
        notes.append("drbin drpseudo drsurv within 1e-12")


# -- 3 ------------------------------------------------------------------------


def fraction_km(time, event):
    s, out = Fraction(1), []
    for u in sorted({t for t, e in zip(time, event) if e}):
        r = sum(t >= u for t in time)
        d = sum(t == u and e for t, e in zip(time, event))
        s *= 1 - Fraction(d, r)
        out.append(s)
    return out


def test_criterion_3_identities():
    with criterion(3, "exact identities") as notes:
        rng = np.random.default_rng(303)
        # pseudo-observations without censoring
        for _ in range(30):
            n = int(rng.integers(2, 80))
            t = np.round(rng.exponential(size=n), 1) + 0.1
            for tt in (float(np.median(t)), float(t[0]), 0.05, 50.0):
                assert np.array_equal(tn.jackknife_pseudo(t, np.ones(n, bool), tt), (t > tt).astype(float))
        notes.append("pseudo == I(T>t)")
        # hand cases with dyadic product-limit factors, compared bit for bit
        for time_, event in (([1, 2, 3, 4], [1, 1, 1, 1]), ([2, 2, 2, 2], [1, 1, 0, 0]),
                             ([1, 1, 1, 1, 2, 2, 3, 3], [1, 1, 0, 0, 1, 0, 1, 0])):
            km = kaplan_meier(time_, event)
            assert list(km.values) == [float(v) for v in fraction_km(time_, event)]
        notes.append("KM hand cases exact")
        # weight scaling
        ds = make_data(rng, 200, ties=True)
        w = rng.uniform(0.2, 4.0, ds.n)
        grid = np.linspace(0.1, 2, 9)
        worst = 0.0
        for c in (1e-4, 7.0, 3e3):
            a, b = fit_weighted_cox(ds, ("z1", "z2"), w), fit_weighted_cox(ds, ("z1", "z2"), c * w)
            worst = max(worst, np.max(np.abs(a.coefficients - b.coefficients)),
                        np.max(np.abs(a.baseline_cumhaz(grid) - b.baseline_cumhaz(grid))))
            for fam in ("exponential", "weibull"):
                pa = fit_weighted_parametric_ph(ds, ("z1",), w, fam)
                pb = fit_weighted_parametric_ph(ds, ("z1",), c * w, fam)
                worst = max(worst, np.max(np.abs(pa.coefficients - pb.coefficients)))
        check(notes, worst < 1e-10, f"weight scaling {worst:.1e}")
        tg.test_logistic_weight_scaling_invariance(np.random.default_rng(12345))
        te.test_all_estimators_zero_at_time_zero(np.random.default_rng(12345))
        te.test_standardization_zero_when_beta_is_zero(np.random.default_rng(12345))
        notes.append("zeta == 0 at t=0 and beta=0")


# -- 4-6: desk-profile simulations --------------------------------------------

DESK = dict(n=1000, reps=500, boot=200)


def row_for(result, spec, estimator):
    return next(r for r in result.rows if r.spec == M(spec).token and r.estimator == estimator)


@pytest.mark.acceptance
def test_criterion_4_null_robustness():
    with criterion(4, "null robustness of IPTW hazard ratios") as notes:
        start = time.perf_counter()
        s = sim.Scenario("independent", "null", seed=4001, **DESK)
        res = sim.run(s, [M("right:wrong")], ("iptw-cox", "iptw-weibull"))
        elapsed = time.perf_counter() - start
        msgs = []
        for est in ("iptw-cox", "iptw-weibull"):
            r = row_for(res, "right:wrong", est)
            notes.append(f"{est} bias {r.bias:+.4f} mcse {r.mcse:.4f} t1e {r.t1e:.3f}")
            if not abs(r.bias) < 3 * r.mcse:
                msgs.append(f"{est} |bias| >= 3 mcse")
            if not 0.03 <= r.t1e <= 0.07:
                msgs.append(f"{est} t1e {r.t1e} outside [0.03, 0.07]")
        notes.append(f"{elapsed / 60:.1f} min")
        assert elapsed < 30 * 60, "runtime over 30 min"
        assert not msgs, "; ".join(msgs)


@pytest.mark.acceptance
def test_criterion_5_non_robustness():
    with criterion(5, "non-robustness patterns") as notes:
        msgs = []
        a = sim.run(sim.Scenario("independent", "non-null", n=1000, reps=1000, boot=0, seed=5001),
                    [M("right:wrong")], ("iptw-cox",))
        r = row_for(a, "right:wrong", "iptw-cox")
        notes.append(f"(a) bias {r.bias:+.4f} = {r.bias / r.mcse:+.1f} mcse")
        if not (r.bias < 0 and abs(r.bias) > 5 * r.mcse):
            msgs.append("(a) bias not negative beyond 5 mcse")
        b = sim.run(sim.Scenario("independent", "null", seed=5002, **DESK), [M("wrong:wrong")], ("iptw-cox",))
        r = row_for(b, "wrong:wrong", "iptw-cox")
        notes.append(f"(b) t1e {r.t1e:.3f}")
        if not r.t1e > 0.5:
            msgs.append("(b) t1e <= 0.5")
        c = sim.run(sim.Scenario("typeB", "null", n=2000, reps=400, boot=200, seed=5003),
                    [M("right:wrong")], ("iptw-cox",))
        r = row_for(c, "right:wrong", "iptw-cox")
        notes.append(f"(c) n=2000 t1e {r.t1e:.3f}")
        if not r.t1e > 0.10:
            msgs.append("(c) t1e <= 0.10")
        assert not msgs, "; ".join(msgs)


@pytest.mark.acceptance
def test_criterion_6_double_robustness():
    with criterion(6, "double robustness of the DR estimators") as notes:
        specs = [M("right:wrong:right"), M("wrong:right:right")]
        dr = ("drbin", "drsurv", "drpseudo")
        msgs, worst_rel, t1es = [], 0.0, []
        for j, kind in enumerate(("independent", "typeB")):
            nn = sim.run(sim.Scenario(kind, "non-null", n=1000, reps=1000, boot=0, seed=6001 + j), specs, dr)
            for r in nn.rows:
                worst_rel = max(worst_rel, abs(r.rel_bias))
                if not abs(r.rel_bias) < 0.02:
                    msgs.append(f"{kind} {r.spec} {r.estimator} rel.bias {r.rel_bias:+.4f}")
            nul = sim.run(sim.Scenario(kind, "null", seed=6011 + j, **DESK), specs, dr)
            for r in nul.rows:
                t1es.append(r.t1e)
                if not 0.03 <= r.t1e <= 0.07:
                    msgs.append(f"{kind} {r.spec} {r.estimator} t1e {r.t1e:.3f}")
        notes.append(f"max |rel.bias| {worst_rel:.4f}")
        notes.append(f"t1e range {min(t1es):.3f}-{max(t1es):.3f}")
        assert not msgs, "; ".join(msgs)


# -- 7 ------------------------------------------------------------------------

ROTTERDAM_TERMS = ("year", "age", "meno", "C(size)", "grade", "nodes", "pgr", "er")
PUBLISHED_EST = {
    "stdcox": (0.048, 0.067, 0.073),
    "drsurv": (0.047, 0.052, 0.055),
    "drbin": (0.059, 0.068, 0.070),
    "drpseudo": (0.055, 0.070, 0.077),
}
# drsurv compared against its bootstrap row
PUBLISHED_SE = {
    "stdcox": (0.018, 0.026, 0.029),
    "drsurv": (0.027, 0.034, 0.034),
    "drbin": (0.024, 0.028, 0.031),
    "drpseudo": (0.025, 0.029, 0.031),
}


def test_criterion_7_rotterdam():
    path = os.environ.get("SURVDR_ROTTERDAM_CSV")
    with criterion(7, "Rotterdam point estimates and bootstrap SEs") as notes:
        if not path:
            pytest.skip("set SURVDR_ROTTERDAM_CSV to the prepared Rotterdam CSV (see README)")
        ds = load_csv(path, "rfstime", "rfs", "chemo", term_covariates(ROTTERDAM_TERMS))
        rows = analyze_dataset(ds, ROTTERDAM_TERMS, (2.5, 5.0, 7.5), tuple(PUBLISHED_EST), "km", 200, 7)
        msgs, worst_est, worst_se = [], 0.0, 0.0
        for r in rows:
            k = (2.5, 5.0, 7.5).index(r.t)
            de = r.estimate - PUBLISHED_EST[r.method][k]
            dse = r.se / PUBLISHED_SE[r.method][k] - 1.0
            worst_est, worst_se = max(worst_est, abs(de)), max(worst_se, abs(dse))
            if not abs(de) <= 0.01:
                msgs.append(f"{r.method} t={r.t:g} est {r.estimate:.4f}")
            if not abs(dse) <= 0.30:
                msgs.append(f"{r.method} t={r.t:g} se {r.se:.4f}")
        notes.append(f"max |est diff| {worst_est:.4f}")
        notes.append(f"max |se ratio - 1| {worst_se:.2f}")
        assert not msgs, "; ".join(msgs)


# -- 8 ------------------------------------------------------------------------


def test_criterion_8_determinism(tmp_path, capsys, monkeypatch):
    with criterion(8, "byte-identical CSV output") as notes:
        base = ["simulate", "--censoring", "independent,typeB", "--effect", "null", "--n", "300", "--reps", "6",
                "--boot", "10", "--specs", "right:wrong,right:wrong:right", "--estimators",
                "iptw-cox,drbin,drsurv,drpseudo", "--seed", "8001"]
        outs = []
        for i, threads in enumerate(("1", "1", "2", "3")):
            p = tmp_path / f"sim{i}.csv"
            assert main(base + ["--threads", threads, "--out", str(p)]) == 0
            outs.append(p.read_bytes())
        check(notes, len(set(outs)) == 1, "simulate identical over runs and 1/2/3 threads")

        ds = make_data(np.random.default_rng(808), 400)
        data = tmp_path / "d.csv"
        import test_cli
        test_cli.write_csv(data, ds)
        outs = []
        for i, threads in enumerate(("1", "1", "2")):
            p = tmp_path / f"an{i}.csv"
            assert main(["analyze", "--data", str(data), "--time-col", "time", "--event-col", "status",
                         "--exposure-col", "treat", "--covariates", "z1,z2", "--t", "0.5,1", "--boot", "25",
                         "--seed", "8002", "--threads", threads, "--out", str(p)]) == 0
            outs.append(p.read_bytes())
        capsys.readouterr()
        check(notes, len(set(outs)) == 1, "analyze identical over runs and 1/2 threads")
