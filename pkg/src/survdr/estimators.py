"""Causal estimators of the marginal survival difference and the log hazard ratio.

The survival-difference estimators all target
``zeta(t) = P(T(1) > t) - P(T(0) > t)``:

* :func:`standardized_survdiff` -- regression standardization of a fitted
  (IPT-weighted) proportional-hazards model;
* :func:`dr_binomial_regression` -- IPCW logistic outcome model augmented
  with IPT weights;
* :func:`dr_pseudo_obs` -- cloglog regression of jackknife pseudo-values,
  augmented with IPT weights;
* :func:`dr_survival_curve` -- augmented IPT/IPCW estimator of the
  counterfactual survival curves with a censoring-martingale correction.

Standard errors come from the nonparametric bootstrap of a whole
:class:`SurvDiffPipeline` or :class:`HazardRatioPipeline`, which refits
every nuisance model on each resample.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BothExposuresRequired,
    EstimationError,
    EstimatorFailed,
    PositivityViolation,
    Separation,
    SurvdrError,
    ZeroCensoringSurvival,
)
from .glm import GlmFit, fit_cloglog_pseudo, fit_weighted_logistic
from .hazards import CoxFit, ParametricPHFit, fit_weighted_cox, fit_weighted_parametric_ph
from .nonparam import CensoringModel, fit_censoring_model, ipcw_pseudo, ipcw_weights, jackknife_pseudo
from .survdata import Dataset, design_matrix

EPS_PROPENSITY = 1e-6
Z95 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class PropensityFit:
    glm: GlmFit
    scores: np.ndarray
    weights: np.ndarray
    terms: tuple = ()


def iptw_from_scores(exposure, scores) -> np.ndarray:
    """``W = X / g + (1 - X) / (1 - g)``."""
    x = np.asarray(exposure, float)
    g = np.asarray(scores, float)
    return x / g + (1.0 - x) / (1.0 - g)


def iptw(dataset: Dataset, propensity_terms: Sequence[str] = ()) -> PropensityFit:
    """Fit a logistic propensity model (intercept + terms) and form IPT weights.

    Raises
    ------
    BothExposuresRequired
    PositivityViolation
        If any fitted score falls outside ``(1e-6, 1 - 1e-6)``, including
        separated fits. No trimming is done.
    """
    if not dataset.has_both_exposures():
        raise BothExposuresRequired()
    X, _ = design_matrix(dataset, propensity_terms, intercept=True)
    try:
        fit = fit_weighted_logistic(X, dataset.exposure.astype(float))
    except Separation:
        raise PositivityViolation(-1, 0.0) from None
    g = fit.predict(X)
    bad = np.flatnonzero((g <= EPS_PROPENSITY) | (g >= 1 - EPS_PROPENSITY))
    if bad.size:
        raise PositivityViolation(int(bad[0]), float(g[bad[0]]))
    return PropensityFit(fit, g, iptw_from_scores(dataset.exposure, g), tuple(propensity_terms))


def constant_propensity(dataset: Dataset, score=None) -> PropensityFit:
    """Propensity fixed at ``score`` (sample exposure proportion by default)."""
    g = float(np.mean(dataset.exposure)) if score is None else float(score)
    scores = np.full(dataset.n, g)
    fit = GlmFit(np.array([math.log(g / (1 - g)) if 0 < g < 1 else math.inf]), True, 0, 0.0, "logit")
    with np.errstate(divide="ignore"):
        weights = iptw_from_scores(dataset.exposure, scores)
    return PropensityFit(fit, scores, weights, ())


class SurvivalContrast(NamedTuple):
    s1: float
    s0: float

    @property
    def diff(self) -> float:
        return self.s1 - self.s0


# ---------------------------------------------------------------------------
# regression standardization


def standardized_survdiff(fit, dataset: Dataset, t: float) -> float:
    """Mean over subjects of ``S(t | 1, Z_i) - S(t | 0, Z_i)`` from a PH fit."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    s1 = fit.survival(t, dataset, exposure=1)
    s0 = fit.survival(t, dataset, exposure=0)
    return float(np.mean(s1 - s0))


# ---------------------------------------------------------------------------
# DR binomial regression


def event_indicator(dataset: Dataset, t: float) -> np.ndarray:
    """``I(T <= t)`` with subjects censored before ``t`` set to 0."""
    return ((dataset.time <= t) & dataset.event).astype(float)


def dr_binomial_components(exposure, scores, ipcw, y, q1, q0) -> SurvivalContrast:
    x = np.asarray(exposure, float)
    g = np.asarray(scores, float)
    f1 = np.mean(x / g * ipcw * (y - q1)) + np.mean(q1)
    f0 = np.mean((1 - x) / (1 - g) * ipcw * (y - q0)) + np.mean(q0)
    return SurvivalContrast(1.0 - f1, 1.0 - f0)


def fit_ipcw_logistic(dataset: Dataset, t: float, ipcw, outcome_terms) -> GlmFit:
    """IPCW-weighted logistic model for ``P(T <= t | X, Z)``.

    Fit among subjects with an event by ``t`` or still under observation
    at ``t`` (those with positive IPCW weight).
    """
    keep = ipcw > 0
    X, _ = design_matrix(dataset, outcome_terms, intercept=True)
    y = event_indicator(dataset, t)
    return fit_weighted_logistic(X[keep], y[keep], ipcw[keep])


def dr_binomial_regression(
    dataset: Dataset,
    t: float,
    propensity: PropensityFit,
    censoring: CensoringModel,
    outcome_terms: Sequence[str],
) -> SurvivalContrast:
    """Doubly robust binomial-regression estimate of ``S_1(t)`` and ``S_0(t)``."""
    if t == 0:
        return SurvivalContrast(1.0, 1.0)
    u = ipcw_weights(dataset, t, censoring)
    fit = fit_ipcw_logistic(dataset, t, u, outcome_terms)
    q1 = fit.predict(design_matrix(dataset, outcome_terms, exposure=1, intercept=True)[0])
    q0 = fit.predict(design_matrix(dataset, outcome_terms, exposure=0, intercept=True)[0])
    return dr_binomial_components(dataset.exposure, propensity.scores, u, event_indicator(dataset, t), q1, q0)


# ---------------------------------------------------------------------------
# DR pseudo-observations


def dr_pseudo_components(exposure, scores, pseudo, v1, v0) -> SurvivalContrast:
    x = np.asarray(exposure, float)
    g = np.asarray(scores, float)
    s1 = np.mean((x * pseudo - (x - g) * v1) / g)
    s0 = np.mean(((1 - x) * pseudo + (x - g) * v0) / (1 - g))
    return SurvivalContrast(float(s1), float(s0))


def dr_pseudo_obs(
    dataset: Dataset,
    t: float,
    propensity: PropensityFit,
    pseudo,
    outcome_terms: Sequence[str],
) -> SurvivalContrast:
    """Doubly robust pseudo-observation estimate of ``S_1(t)`` and ``S_0(t)``.

    ``pseudo`` are the jackknife pseudo-values at ``t``
    (:func:`~survdr.nonparam.jackknife_pseudo`).
    """
    if t == 0:
        return SurvivalContrast(1.0, 1.0)
    pseudo = np.asarray(pseudo, float)
    X, _ = design_matrix(dataset, outcome_terms, intercept=True)
    fit = fit_cloglog_pseudo(X, pseudo)
    v1 = fit.predict(design_matrix(dataset, outcome_terms, exposure=1, intercept=True)[0])
    v0 = fit.predict(design_matrix(dataset, outcome_terms, exposure=0, intercept=True)[0])
    return dr_pseudo_components(dataset.exposure, propensity.scores, pseudo, v1, v0)


# ---------------------------------------------------------------------------
# DR survival curve


def _cumhaz_parts(fit, dataset, exposure):
    """(exp(eta_i), Lambda0) accessors for a PH fit."""
    return np.exp(fit.linear_predictor(dataset, exposure)), fit.baseline_cumhaz


def censoring_martingale_integral(dataset: Dataset, t: float, censoring: CensoringModel, cond_surv,
                                  exposure=None, rows=None):
    """Per-subject ``int_0^t dM_c(u) / (G_c(u) H(u))``.

    ``H(u) = P(T > u | x, Z_i)`` comes from the PH fit ``cond_surv`` with
    ``x`` set to ``exposure`` (the observed exposure if None). The integral
    is a finite sum over the censoring model's jump times up to ``t``; a
    subject is at risk of censoring at ``u`` if its time exceeds ``u`` or
    equals ``u`` with a censoring (events precede censorings). Only
    ``rows`` (all by default) are computed; others are 0.
    """
    n = dataset.n
    out = np.zeros(n)
    rows = np.arange(n) if rows is None else np.asarray(rows)
    grid = censoring.jump_times
    grid = grid[grid <= t]
    if grid.size == 0 or rows.size == 0:
        return out
    sub = dataset.take(rows)
    risk, L0 = _cumhaz_parts(cond_surv, sub, exposure)
    time = sub.time
    cens = ~sub.event
    m = np.searchsorted(grid, time, side="left")
    on_grid = (m < grid.size) & (grid[np.minimum(m, grid.size - 1)] == time)
    m_risk = m + (cens & on_grid)  # grid points at which each subject is at risk
    jumped = cens & (time <= t)

    lam0 = np.asarray(L0(grid), float)
    cols = np.arange(grid.size)
    block = max(1, 2_000_000 // grid.size)
    comp = np.empty(rows.size)
    for s in range(0, rows.size, block):
        sl = slice(s, min(rows.size, s + block))
        la = censoring.log_hazard_over_survival(sub.take(np.arange(sl.start, sl.stop)), grid)
        # dLambda_c / (G_c H) = exp(log(dLambda_c / G_c) + exp(eta) Lambda0(u))
        expo = la + risk[sl, None] * lam0[None, :]
        expo = np.where(cols[None, :] < m_risk[sl, None], expo, -np.inf)
        with np.errstate(over="ignore"):
            comp[sl] = np.exp(expo).sum(axis=1)
    dn = np.zeros(rows.size)
    if np.any(jumped):
        sj = sub.take(np.flatnonzero(jumped))
        g_own = censoring.survival(sj, sj.time)
        h_own = np.exp(-risk[jumped] * np.asarray(L0(sj.time), float))
        with np.errstate(divide="ignore"):
            dn[jumped] = 1.0 / (g_own * h_own)
    with np.errstate(invalid="ignore"):
        vals = dn - comp
    if not np.all(np.isfinite(vals)):
        raise EstimationError("censoring martingale integral is not finite (G_c or H vanished)")
    out[rows] = vals
    return out


DR_CURVE_FORMS = ("standard", "printed")


def dr_survival_curve_components(exposure, scores, observed_beyond_t, g_t, h_t1, h_t0, mart1, mart0,
                                 form="standard"):
    """Combine the weighted, augmentation and censoring-correction terms.

    ``mart1`` / ``mart0`` are per-subject censoring-martingale integrals
    (see :func:`dr_survival_curve` for which ``H`` each one uses).

    ``form="standard"``::

        S_x = mean[ I_x I(T > t) / (gb G(t)) - (I_x - gb) / gb * H(t|x)
                    + I_x / gb * H(t|x) * mart_x ]

    ``form="printed"`` flips the sign of the augmentation term and uses
    ``(I_x - gb) / gb`` as the leading factor of the correction term. That
    variant is not doubly robust and is kept for comparison only.
    """
    if form not in DR_CURVE_FORMS:
        raise ValueError(f"unknown form {form!r}")
    x = np.asarray(exposure, float)
    g = np.asarray(scores, float)
    out = []
    for ix, gbar, h_t, mart in ((x, g, h_t1, mart1), (1 - x, 1 - g, h_t0, mart0)):
        term_ipw = ix * observed_beyond_t / (gbar * g_t)
        resid = (ix - gbar) / gbar
        if form == "standard":
            total = term_ipw - resid * h_t + ix / gbar * h_t * mart
        else:
            total = term_ipw + resid * h_t + resid * h_t * mart
        out.append(float(np.mean(total)))
    return SurvivalContrast(*out)


def dr_survival_curve(
    dataset: Dataset,
    t: float,
    propensity: PropensityFit,
    censoring: CensoringModel,
    cond_surv,
    form: str = "standard",
) -> SurvivalContrast:
    """Augmented IPT/IPCW estimate of ``S_1(t)`` and ``S_0(t)``.

    Parameters
    ----------
    cond_surv : ParametricPHFit or CoxFit
        Outcome model supplying ``H(u | x, Z) = P(T > u | X = x, Z)``.
    form : {"standard", "printed"}
        See :func:`dr_survival_curve_components`. In the standard form the
        correction term for arm ``x`` only involves subjects with
        ``X_i = x``, so ``H(u | x, Z_i)`` equals ``H(u | X_i, Z_i)`` there;
        the printed form evaluates ``H(u | X_i, Z_i)`` at the subject's own
        exposure for everyone.
    """
    if t == 0:
        return SurvivalContrast(1.0, 1.0)
    g_t = censoring.survival(dataset, t)
    if np.any(g_t[dataset.time > t] <= 1e-6):
        raise ZeroCensoringSurvival("censoring survival at t vanishes")
    beyond = (dataset.time > t).astype(float)
    h_t1 = cond_surv.survival(t, dataset, exposure=1)
    h_t0 = cond_surv.survival(t, dataset, exposure=0)
    if form == "standard":
        # only arm-x subjects enter arm x's correction term
        mart1 = censoring_martingale_integral(dataset, t, censoring, cond_surv, 1, np.flatnonzero(dataset.exposure == 1))
        mart0 = censoring_martingale_integral(dataset, t, censoring, cond_surv, 0, np.flatnonzero(dataset.exposure == 0))
    else:
        mart1 = mart0 = censoring_martingale_integral(dataset, t, censoring, cond_surv)
    return dr_survival_curve_components(
        dataset.exposure, propensity.scores, beyond, np.where(beyond > 0, g_t, 1.0), h_t1, h_t0, mart1, mart0, form
    )


# ---------------------------------------------------------------------------
# bootstrap


def rng_stream(seed, *key) -> np.random.Generator:
    """Counter-based generator for stream ``key`` under base ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


@dataclass(frozen=True)
class BootstrapResult:
    estimate: np.ndarray | float
    se: np.ndarray | float
    percentile_ci: tuple
    normal_ci: tuple
    replicates: np.ndarray = field(repr=False)
    n_failed: np.ndarray | int = 0


def _safe_eval(estimator, data):
    try:
        return np.atleast_1d(np.asarray(estimator(data), dtype=float))
    except (SurvdrError, np.linalg.LinAlgError, FloatingPointError):
        return None


def _boot_chunk(args):
    estimator, dataset, seed, key, indices, width = args
    out = np.full((len(indices), width), np.nan)
    for row, b in enumerate(indices):
        rng = rng_stream(seed, *key, b)
        idx = rng.integers(0, dataset.n, dataset.n)
        val = _safe_eval(estimator, dataset.take(idx))
        if val is not None:
            out[row] = val
    return out


def bootstrap(
    estimator: Callable[[Dataset], float],
    dataset: Dataset,
    B: int,
    seed: int,
    key: tuple = (),
    n_jobs: int = 1,
    estimate=None,
    max_fail: float = 0.05,
    raise_on_fail: bool = True,
) -> BootstrapResult:
    """Nonparametric row bootstrap of ``estimator``.

    Replicate ``b`` draws its resample from ``rng_stream(seed, *key, b)`` so
    results do not depend on ``n_jobs``. ``estimator`` may return a scalar
    or a vector; failed replicates (errors or NaN) are dropped per output
    component and counted.

    Raises
    ------
    EstimatorFailed
        If more than ``max_fail`` of the replicates failed (with
        ``raise_on_fail``).
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if estimate is None:
        est = np.atleast_1d(np.asarray(estimator(dataset), dtype=float))
    else:
        est = np.atleast_1d(np.asarray(estimate, dtype=float))
    width = est.size
    jobs = max(1, int(n_jobs))
    if jobs == 1:
        reps = _boot_chunk((estimator, dataset, seed, key, range(B), width))
    else:
        chunks = np.array_split(np.arange(B), jobs)
        with ProcessPoolExecutor(jobs) as ex:
            parts = list(ex.map(_boot_chunk, [(estimator, dataset, seed, key, list(c), width) for c in chunks]))
        reps = np.vstack(parts)
    ok = np.isfinite(reps)
    n_failed = B - ok.sum(axis=0)
    if raise_on_fail and np.any(n_failed > max_fail * B):
        raise EstimatorFailed(int(n_failed.max()), B)
    se = np.array([np.std(reps[ok[:, j], j], ddof=1) if ok[:, j].sum() > 1 else np.nan for j in range(width)])
    lo = np.array([np.quantile(reps[ok[:, j], j], 0.025) if ok[:, j].any() else np.nan for j in range(width)])
    hi = np.array([np.quantile(reps[ok[:, j], j], 0.975) if ok[:, j].any() else np.nan for j in range(width)])
    nlo, nhi = est - Z95 * se, est + Z95 * se
    if width == 1:
        return BootstrapResult(float(est[0]), float(se[0]), (float(lo[0]), float(hi[0])),
                               (float(nlo[0]), float(nhi[0])), reps[:, 0], int(n_failed[0]))
    return BootstrapResult(est, se, (lo, hi), (nlo, nhi), reps, n_failed)


# ---------------------------------------------------------------------------
# pipelines


@dataclass(frozen=True)
class EstimateWithCI:
    estimand: str  # "log-hazard-ratio" or "survival-difference"
    t: float | None
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    method: str
    n_boot: int | None = None
    percentile_ci: tuple | None = None
    n_failed: int = 0

    def flipped(self) -> "EstimateWithCI":
        """Same estimate for the reversed contrast (x0 - x1)."""
        pci = None if self.percentile_ci is None else (-self.percentile_ci[1], -self.percentile_ci[0])
        return EstimateWithCI(self.estimand, self.t, -self.estimate, self.se, -self.ci_upper,
                              -self.ci_lower, self.method, self.n_boot, pci, self.n_failed)


SURVDIFF_METHODS = ("stdcox", "stdweibull", "drbin", "drsurv", "drpseudo")


class _Cache(dict):
    """Per-dataset memo for nuisance fits shared across pipelines."""

    def get_or(self, key, fn):
        if key not in self:
            try:
                self[key] = ("ok", fn())
            except SurvdrError as err:
                self[key] = ("err", err)
        kind, val = self[key]
        if kind == "err":
            raise val
        return val


def _propensity(dataset, terms, cache):
    if terms is None:
        return None
    return cache.get_or(("ps", tuple(terms)), lambda: iptw(dataset, terms))


@dataclass(frozen=True)
class SurvDiffPipeline:
    """Estimator of ``zeta(t)`` that refits all nuisance models on its input.

    Parameters
    ----------
    method : {"stdcox", "stdweibull", "drbin", "drsurv", "drpseudo"}
    t : float
    propensity_terms : tuple of str or None
        Covariate terms of the logistic propensity model; ``None`` means
        unweighted (standardization methods only).
    outcome_terms : tuple of str
        For stdcox/stdweibull/drsurv: covariate terms of the PH outcome model
        (exposure added automatically). For drbin/drpseudo: terms of
        ``beta * x + h(x, Z)`` and so should normally include ``"x"``.
    censoring_kind, censoring_terms
        Censoring model for drbin and drsurv (and drpseudo with
        ``pseudo_kind="ipcw"``).
    pseudo_kind : {"jackknife", "ipcw"}
        Pseudo-values for drpseudo: Kaplan-Meier jackknife values, or
        :func:`~survdr.nonparam.ipcw_pseudo` under the censoring model.
    """

    method: str
    t: float
    propensity_terms: tuple | None = ()
    outcome_terms: tuple = ()
    censoring_kind: str = "pooled-km"
    censoring_terms: tuple = ("x",)
    outcome_family: str = "weibull"
    pseudo_kind: str = "jackknife"

    def __post_init__(self):
        if self.pseudo_kind not in ("jackknife", "ipcw"):
            raise ValueError(f"unknown pseudo_kind {self.pseudo_kind!r}")
        if self.method not in SURVDIFF_METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.propensity_terms is None and self.method not in ("stdcox", "stdweibull"):
            raise ValueError(f"{self.method} requires a propensity model")

    def contrast(self, dataset: Dataset, cache=None) -> SurvivalContrast:
        cache = _Cache() if cache is None else cache
        if not dataset.has_both_exposures():
            raise BothExposuresRequired()
        t = self.t
        ps = _propensity(dataset, self.propensity_terms, cache)
        m = self.method
        if m in ("stdcox", "stdweibull"):
            w = None if ps is None else ps.weights
            key = ("ph", m, None if ps is None else self.propensity_terms, tuple(self.outcome_terms))
            if m == "stdcox":
                fit = cache.get_or(key, lambda: fit_weighted_cox(dataset, self.outcome_terms, w))
            else:
                fit = cache.get_or(key, lambda: fit_weighted_parametric_ph(dataset, self.outcome_terms, w, "weibull"))
            if t == 0:
                return SurvivalContrast(1.0, 1.0)
            return SurvivalContrast(float(np.mean(fit.survival(t, dataset, 1))), float(np.mean(fit.survival(t, dataset, 0))))
        if m == "drpseudo" and self.pseudo_kind == "jackknife":
            pseudo = cache.get_or(("pseudo", t), lambda: jackknife_pseudo(dataset.time, dataset.event, t))
            return dr_pseudo_obs(dataset, t, ps, pseudo, self.outcome_terms)
        cens = cache.get_or(
            ("cens", self.censoring_kind, tuple(self.censoring_terms)),
            lambda: fit_censoring_model(dataset, self.censoring_kind, self.censoring_terms),
        )
        if m == "drpseudo":
            pseudo = ipcw_pseudo(dataset, t, cens)
            return dr_pseudo_obs(dataset, t, ps, pseudo, self.outcome_terms)
        if m == "drbin":
            return dr_binomial_regression(dataset, t, ps, cens, self.outcome_terms)
        key = ("ph", self.outcome_family, None, tuple(self.outcome_terms))
        h = cache.get_or(key, lambda: fit_weighted_parametric_ph(dataset, self.outcome_terms, None, self.outcome_family))
        return dr_survival_curve(dataset, t, ps, cens, h)

    def __call__(self, dataset: Dataset, cache=None) -> float:
        return self.contrast(dataset, cache).diff


@dataclass(frozen=True)
class HazardRatioPipeline:
    """IPT-weighted PH estimate of the exposure log hazard ratio."""

    model: str = "cox"  # "cox", "weibull", "exponential" or "piecewise"
    propensity_terms: tuple | None = ()
    outcome_terms: tuple = ()

    def __call__(self, dataset: Dataset, cache=None) -> float:
        cache = _Cache() if cache is None else cache
        if not dataset.has_both_exposures():
            raise BothExposuresRequired()
        ps = _propensity(dataset, self.propensity_terms, cache)
        w = None if ps is None else ps.weights
        key = ("ph", self.model, None if ps is None else self.propensity_terms, tuple(self.outcome_terms))
        if self.model == "cox":
            fit = cache.get_or(key, lambda: fit_weighted_cox(dataset, self.outcome_terms, w))
        else:
            fit = cache.get_or(key, lambda: fit_weighted_parametric_ph(dataset, self.outcome_terms, w, self.model))
        return fit.beta


@dataclass(frozen=True)
class PipelineBatch:
    """Evaluate several pipelines on one dataset, sharing nuisance fits.

    Returns NaN for any pipeline that fails on the given data.
    """

    pipelines: tuple

    def __call__(self, dataset: Dataset) -> np.ndarray:
        cache = _Cache()
        out = np.full(len(self.pipelines), np.nan)
        for j, p in enumerate(self.pipelines):
            try:
                out[j] = p(dataset, cache)
            except (SurvdrError, np.linalg.LinAlgError, FloatingPointError):
                pass
        return out


def estimate_with_bootstrap(pipeline, dataset: Dataset, B: int, seed: int, n_jobs: int = 1,
                            key: tuple = ()) -> EstimateWithCI:
    """Point estimate on ``dataset`` plus bootstrap SE and normal 95% CI."""
    est = float(pipeline(dataset))
    if B and B >= 2:
        res = bootstrap(pipeline, dataset, B, seed, key=key, n_jobs=n_jobs, estimate=est)
        se, nci, pci, nf = res.se, res.normal_ci, res.percentile_ci, res.n_failed
    else:
        se, nci, pci, nf = float("nan"), (float("nan"), float("nan")), None, 0
    if isinstance(pipeline, HazardRatioPipeline):
        estimand, t, method = "log-hazard-ratio", None, f"iptw-{pipeline.model}"
    else:
        estimand, t, method = "survival-difference", pipeline.t, pipeline.method
    return EstimateWithCI(estimand, t, est, se, nci[0], nci[1], method, B or None, pci, nf)
