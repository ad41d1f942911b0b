import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from survdr import (
    BothExposuresRequired,
    Dataset,
    EstimatorFailed,
    PositivityViolation,
    bootstrap,
    dr_binomial_regression,
    dr_pseudo_obs,
    dr_survival_curve,
    fit_censoring_model,
    fit_weighted_cox,
    fit_weighted_parametric_ph,
    iptw,
    jackknife_pseudo,
    standardized_survdiff,
)
from survdr.errors import EstimationError
from survdr.estimators import (
    HazardRatioPipeline,
    PipelineBatch,
    SurvDiffPipeline,
    censoring_martingale_integral,
    constant_propensity,
    estimate_with_bootstrap,
    rng_stream,
)
from survdr.hazards import CoxFit
from survdr.steps import StepFunction

from conftest import make_data

# six subjects: (T, event, X, Z)
ROWS = [(0.5, 1, 0, -1.0), (1.2, 0, 0, 0.3), (2.0, 1, 0, 0.8), (0.8, 1, 1, 0.1), (1.5, 0, 1, -0.4), (2.5, 1, 1, 1.2)]
T6 = [r[0] for r in ROWS]
D6 = [bool(r[1]) for r in ROWS]
X6 = [r[2] for r in ROWS]
Z6 = [r[3] for r in ROWS]


def six():
    return Dataset(T6, D6, X6, [[z] for z in Z6], ("z",))


# --- loop oracles: Python scalars, one subject at a time ----------------------


def expit(v):
    return 1.0 / (1.0 + math.exp(-v))


def reverse_km(u, left=False):
    """Censoring survival with events-before-censorings ties."""
    g = 1.0
    for c in sorted({t for t, d in zip(T6, D6) if not d}):
        if c > u or (left and c == u):
            break
        at_risk = sum(1 for t, d in zip(T6, D6) if t > c or (t == c and not d))
        g *= 1.0 - sum(1 for t, d in zip(T6, D6) if t == c and not d) / at_risk
    return g


def loop_km(time, event, t):
    s = 1.0
    for u in sorted({a for a, e in zip(time, event) if e}):
        if u > t:
            break
        s *= 1.0 - sum(1 for a, e in zip(time, event) if a == u and e) / sum(1 for a in time if a >= u)
    return s


def oracle_propensity(ps):
    a, b = ps.glm.coefficients
    return [expit(a + b * z) for z in Z6]


def oracle_ipcw(t):
    out = []
    for T, D in zip(T6, D6):
        if T <= t and D:
            out.append(1.0 / reverse_km(T, left=True))
        elif T > t:
            out.append(1.0 / reverse_km(t))
        else:
            out.append(0.0)
    return out


def test_six_row_propensity_and_weights():
    ps = iptw(six(), ("z",))
    g = oracle_propensity(ps)
    for i in range(6):
        assert ps.scores[i] == pytest.approx(g[i], abs=1e-14)
        w = 1 / g[i] if X6[i] else 1 / (1 - g[i])
        assert ps.weights[i] == pytest.approx(w, abs=1e-12)


@pytest.mark.parametrize("t", [1.0, 1.6])
def test_dr_binomial_hand_oracle(t):
    ds = six()
    ps = iptw(ds, ("z",))
    cens = fit_censoring_model(ds)
    got = dr_binomial_regression(ds, t, ps, cens, ("x",))

    from survdr.estimators import fit_ipcw_logistic

    u = oracle_ipcw(t)
    a, b = fit_ipcw_logistic(ds, t, np.array(u), ("x",)).coefficients
    g = oracle_propensity(ps)
    f1 = f0 = 0.0
    for i in range(6):
        y = 1.0 if (T6[i] <= t and D6[i]) else 0.0
        q1, q0 = expit(a + b), expit(a)
        f1 += q1 + X6[i] / g[i] * u[i] * (y - q1)
        f0 += q0 + (1 - X6[i]) / (1 - g[i]) * u[i] * (y - q0)
    assert got.s1 == pytest.approx(1 - f1 / 6, abs=1e-12)
    assert got.s0 == pytest.approx(1 - f0 / 6, abs=1e-12)


@pytest.mark.parametrize("t", [1.0, 1.6])
def test_dr_pseudo_hand_oracle(t):
    ds = six()
    ps = iptw(ds, ("z",))
    pseudo = []
    for i in range(6):
        rest_t = T6[:i] + T6[i + 1:]
        rest_d = D6[:i] + D6[i + 1:]
        pseudo.append(6 * loop_km(T6, D6, t) - 5 * loop_km(rest_t, rest_d, t))
    np.testing.assert_allclose(jackknife_pseudo(ds.time, ds.event, t), pseudo, atol=1e-13)

    got = dr_pseudo_obs(ds, t, ps, np.array(pseudo), ("x", "z"))

    from survdr.glm import fit_cloglog_pseudo
    from survdr.survdata import design_matrix

    c0, c1, c2 = fit_cloglog_pseudo(design_matrix(ds, ("x", "z"), intercept=True)[0], np.array(pseudo)).coefficients
    g = oracle_propensity(ps)
    s1 = s0 = 0.0
    for i in range(6):
        v1 = math.exp(-math.exp(c0 + c1 + c2 * Z6[i]))
        v0 = math.exp(-math.exp(c0 + c2 * Z6[i]))
        x = X6[i]
        s1 += (x * pseudo[i] - (x - g[i]) * v1) / g[i]
        s0 += ((1 - x) * pseudo[i] + (x - g[i]) * v0) / (1 - g[i])
    assert got.s1 == pytest.approx(s1 / 6, abs=1e-12)
    assert got.s0 == pytest.approx(s0 / 6, abs=1e-12)


def weibull_h(fit, u, x, z):
    b, gz = fit.coefficients
    return math.exp(-fit.rate * u ** fit.shape * math.exp(b * x + gz * z))


def oracle_martingale(fit, t, i, x):
    """int_0^t dM_c / (G H) for subject i with H evaluated at exposure x."""
    total = 0.0
    for c in sorted({a for a, d in zip(T6, D6) if not d}):
        if c > t:
            break
        d_lam = 1.0 - reverse_km(c) / reverse_km(c, left=True)
        at_risk = T6[i] > c or (T6[i] == c and not D6[i])
        jump = 1.0 if (T6[i] == c and not D6[i]) else 0.0
        total += (jump - at_risk * d_lam) / (reverse_km(c) * weibull_h(fit, c, x, Z6[i]))
    return total


@pytest.mark.parametrize("t", [1.6, 2.2])
@pytest.mark.parametrize("form", ["standard", "printed"])
def test_dr_survival_curve_hand_oracle(t, form):
    ds = six()
    ps = iptw(ds, ("z",))
    cens = fit_censoring_model(ds)
    h = fit_weighted_parametric_ph(ds, ("z",), None, "weibull")
    got = dr_survival_curve(ds, t, ps, cens, h, form=form)

    g = oracle_propensity(ps)
    s = {1: 0.0, 0: 0.0}
    for i in range(6):
        for arm in (1, 0):
            ix = 1.0 if X6[i] == arm else 0.0
            gbar = g[i] if arm == 1 else 1 - g[i]
            beyond = 1.0 if T6[i] > t else 0.0
            ht = weibull_h(h, t, arm, Z6[i])
            ipw = ix * beyond / (gbar * reverse_km(t)) if beyond else 0.0
            if form == "standard":
                s[arm] += ipw - (ix - gbar) / gbar * ht + ix / gbar * ht * oracle_martingale(h, t, i, arm)
            else:
                mart = oracle_martingale(h, t, i, X6[i])
                s[arm] += ipw + (ix - gbar) / gbar * ht + (ix - gbar) / gbar * ht * mart
    assert got.s1 == pytest.approx(s[1] / 6, abs=1e-12)
    assert got.s0 == pytest.approx(s[0] / 6, abs=1e-12)


def test_standardized_cox_hand_oracle():
    ds = six()
    ps = iptw(ds, ("z",))
    fit = fit_weighted_cox(ds, ("z",), ps.weights)
    b, gz = fit.coefficients
    w = ps.weights
    lam = 0.0
    for i in sorted(range(6), key=lambda k: T6[k]):
        if D6[i] and T6[i] <= 1.6:
            lam += w[i] / sum(w[j] * math.exp(b * X6[j] + gz * Z6[j]) for j in range(6) if T6[j] >= T6[i])
    want = sum(math.exp(-lam * math.exp(b + gz * z)) - math.exp(-lam * math.exp(gz * z)) for z in Z6) / 6
    assert standardized_survdiff(fit, ds, 1.6) == pytest.approx(want, abs=1e-12)


# --- censoring martingale ----------------------------------------------------


def test_martingale_vectorized_matches_loop(rng):
    ds = make_data(rng, 120, ties=True, p_cov=1)
    for kind in ("pooled-km", "km-stratified-by-exposure", "cox"):
        cens = fit_censoring_model(ds, kind, ("x", "z1"))
        h = fit_weighted_parametric_ph(ds, ("z1",), None, "weibull")
        t = float(np.quantile(ds.time, 0.7))
        got = censoring_martingale_integral(ds, t, cens, h, exposure=1)
        grid = cens.jump_times[cens.jump_times <= t]
        G = cens.survival_grid(ds, grid)
        dL = cens.hazard_increments(ds, grid)
        H = np.exp(-np.exp(h.linear_predictor(ds, 1))[:, None] * h.baseline_cumhaz(grid)[None, :])
        want = np.zeros(ds.n)
        for i in range(ds.n):
            for k, u in enumerate(grid):
                y = ds.time[i] > u or (ds.time[i] == u and not ds.event[i])
                dn = float(ds.time[i] == u and not ds.event[i])
                want[i] += (dn - y * dL[i, k]) / (G[i, k] * H[i, k])
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def unit_outcome():
    """Outcome model with H == 1 (zero baseline hazard)."""
    return CoxFit(("x",), np.array([0.0]), StepFunction(np.zeros(0), np.zeros(0)))


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_martingale_ipcw_identity(data):
    # with H == 1 and t past all times, D / G(T-) = 1 - int dM_c / G for every subject
    n = data.draw(st.integers(4, 20))
    time = np.array(data.draw(st.lists(st.integers(1, 6), min_size=n, max_size=n)), float)
    event = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    event[time == time.max()] = True  # keep G positive where it is needed
    assume(not event.all())
    x = np.arange(n) % 2
    ds = Dataset(time, event, x, np.zeros((n, 0)))
    cens = fit_censoring_model(ds)
    mart = censoring_martingale_integral(ds, 10.0, cens, unit_outcome())
    g_left = cens.survival(ds, ds.time, left=True)
    np.testing.assert_allclose(ds.event / g_left, 1.0 - mart, atol=1e-12)


def test_martingale_rejects_vanishing_survival():
    ds = Dataset([1.0, 2.0, 3.0, 4.0], [1, 0, 1, 0], [0, 1, 0, 1], np.zeros((4, 0)))
    cens = fit_censoring_model(ds)
    with pytest.raises(EstimationError):
        censoring_martingale_integral(ds, 5.0, cens, unit_outcome())


# --- identities and error paths ---------------------------------------------


def test_all_estimators_zero_at_time_zero(rng):
    ds = make_data(rng, 150)
    for m in ("stdcox", "stdweibull", "drbin", "drsurv", "drpseudo"):
        outcome = ("x", "z1", "z2") if m in ("drbin", "drpseudo") else ("z1", "z2")
        assert SurvDiffPipeline(m, 0.0, ("z1", "z2"), outcome)(ds) == 0.0


def test_standardization_zero_when_beta_is_zero(rng):
    ds = make_data(rng, 200)
    for fit in (fit_weighted_cox(ds, ("z1",)), fit_weighted_parametric_ph(ds, ("z1",))):
        coef = fit.coefficients.copy()
        coef[0] = 0.0
        assert standardized_survdiff(replace(fit, coefficients=coef), ds, 0.9) == 0.0


def test_dr_estimators_consistent_at_large_n():
    # correctly specified nuisance models, no confounding misspecification
    rng = np.random.default_rng(77)
    ds = make_data(rng, 6000, beta=0.5)
    t = 0.8
    # truth by Monte Carlo from the generator in conftest
    z = rng.normal(size=(400_000, 2))
    lin = 0.6 * z[:, 0] + 0.2 * z[:, 1]
    truth = np.mean(np.exp(-t * np.exp(0.5 + lin)) - np.exp(-t * np.exp(lin)))
    for m in ("drbin", "drsurv", "drpseudo", "stdcox"):
        outcome = ("x", "z1", "z2") if m in ("drbin", "drpseudo") else ("z1", "z2")
        est = SurvDiffPipeline(m, t, ("z1", "z2"), outcome)(ds)
        assert est == pytest.approx(truth, abs=0.03), m


def test_positivity_violation():
    z = np.linspace(-3, 3, 40)
    x = (z > 0).astype(int)
    ds = Dataset(np.linspace(1, 2, 40), np.ones(40, bool), x, z[:, None], ("z",))
    with pytest.raises(PositivityViolation):
        iptw(ds, ("z",))


def test_both_exposures_required():
    ds = Dataset([1.0, 2.0, 3.0], [1, 1, 0], [1, 1, 1], [[0.1], [0.2], [0.3]], ("z",))
    with pytest.raises(BothExposuresRequired, match="both exposure levels required"):
        iptw(ds)
    for p in (SurvDiffPipeline("drbin", 1.0, ("z",), ("x",)), HazardRatioPipeline("cox")):
        with pytest.raises(BothExposuresRequired):
            p(ds)


def test_constant_propensity_gives_marginal_weights(rng):
    ds = make_data(rng, 100)
    ps = constant_propensity(ds)
    pbar = ds.exposure.mean()
    np.testing.assert_allclose(ps.weights, np.where(ds.exposure == 1, 1 / pbar, 1 / (1 - pbar)))


def test_hazard_ratio_pipeline_matches_direct_fit(rng):
    ds = make_data(rng, 300)
    w = iptw(ds, ("z1", "z2")).weights
    assert HazardRatioPipeline("cox", ("z1", "z2"), ("z1",))(ds) == fit_weighted_cox(ds, ("z1",), w).beta
    unweighted = HazardRatioPipeline("weibull", None, ("z1", "z2"))(ds)
    assert unweighted == fit_weighted_parametric_ph(ds, ("z1", "z2")).beta


def test_pipeline_batch_isolates_failures(rng):
    ds = make_data(rng, 200)
    ok = SurvDiffPipeline("drbin", 0.5, ("z1",), ("x", "z1"))
    bad = SurvDiffPipeline("drbin", 0.5, ("z1",), ("x", "z1", "z1"))  # rank deficient
    out = PipelineBatch((ok, bad))(ds)
    assert out[0] == ok(ds) and np.isnan(out[1])


# --- bootstrap ---------------------------------------------------------------


def test_bootstrap_reproducible_and_thread_invariant(rng):
    ds = make_data(rng, 120)
    p = HazardRatioPipeline("cox", ("z1", "z2"), ("z1", "z2"))
    a = bootstrap(p, ds, 30, seed=9)
    b = bootstrap(p, ds, 30, seed=9)
    c = bootstrap(p, ds, 30, seed=9, n_jobs=2)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    np.testing.assert_array_equal(a.replicates, c.replicates)
    assert a.se == pytest.approx(np.std(a.replicates, ddof=1), abs=0)
    assert a.normal_ci == pytest.approx((a.estimate - 1.959963984540054 * a.se, a.estimate + 1.959963984540054 * a.se))
    assert bootstrap(p, ds, 30, seed=10).replicates[0] != a.replicates[0]


def test_bootstrap_resamples_rows():
    ds = Dataset(np.arange(1, 11, dtype=float), np.ones(10, bool), np.arange(10) % 2, np.zeros((10, 0)))
    res = bootstrap(lambda d: float(d.time.mean()), ds, 50, seed=3)
    idx = rng_stream(3, 0).integers(0, 10, 10)
    assert res.replicates[0] == pytest.approx(ds.time[idx].mean())


def test_bootstrap_failure_budget():
    ds = Dataset(np.arange(1, 21, dtype=float), np.ones(20, bool), np.arange(20) % 2, np.zeros((20, 0)))
    flaky = {"calls": 0}

    def est(d):
        flaky["calls"] += 1
        if 1.0 not in d.time:  # about 36% of resamples miss row 1
            raise EstimationError("boom")
        return float(d.time.mean())

    res = bootstrap(est, ds, 100, seed=1, estimate=10.5, raise_on_fail=False)
    assert res.n_failed == int(np.isnan(res.replicates).sum()) > 5
    with pytest.raises(EstimatorFailed):
        bootstrap(est, ds, 100, seed=1, estimate=10.5)


def test_bootstrap_vector_estimator(rng):
    ds = make_data(rng, 100)
    res = bootstrap(lambda d: np.array([d.time.mean(), d.time.max()]), ds, 40, seed=2)
    assert res.replicates.shape == (40, 2) and res.se.shape == (2,)
    scalar = bootstrap(lambda d: float(d.time.max()), ds, 40, seed=2)
    np.testing.assert_array_equal(res.replicates[:, 1], scalar.replicates)


def test_estimate_with_bootstrap_and_flip(rng):
    ds = make_data(rng, 200)
    p = SurvDiffPipeline("stdcox", 0.7, ("z1", "z2"), ("z1", "z2"))
    e = estimate_with_bootstrap(p, ds, 20, seed=4)
    assert e.estimate == p(ds) and e.n_boot == 20 and e.se > 0
    f = e.flipped()
    assert f.estimate == -e.estimate and f.ci_lower == -e.ci_upper and f.se == e.se
