"""Weighted proportional-hazards models.

Two fitters share the linear predictor ``beta * x + m(z; gamma)`` where
``m`` is linear in a design built from covariate terms:

* :func:`fit_weighted_cox` maximizes the weighted log partial likelihood
  (Breslow ties) and attaches the weighted Breslow baseline.
* :func:`fit_weighted_parametric_ph` maximizes the weighted full
  log-likelihood for an exponential, Weibull or piecewise-exponential
  baseline hazard.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    EmptyInterval,
    NoConvergence,
    NoEvents,
    NonfiniteEstimate,
    RankDeficient,
)
from .steps import StepFunction
from .survdata import EXPOSURE_TERM, Dataset, design_matrix, term_covariates

TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 25
_STEP_TOL = 1e-6
_DIVERGED = 25.0


def _check_weights(weights, n):
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be positive and finite")
    return w


def _newton_maximize(objective, theta0, scale, what):
    """Damped Newton ascent with step-halving.

    ``objective(theta)`` returns ``(value, gradient, hessian)``. Converged
    when ``max|gradient| / scale < TOL`` and the Newton step is small.
    """
    theta = np.array(theta0, dtype=float)
    val, grad, hess = objective(theta)
    if not np.isfinite(val):
        raise NonfiniteEstimate(f"{what}: objective not finite at the starting point")
    for it in range(MAX_ITER + 1):
        neg = -hess
        ridge = 0.0
        for _ in range(30):
            try:
                chol = np.linalg.cholesky(neg + ridge * np.eye(len(theta)))
                break
            except np.linalg.LinAlgError:
                ridge = max(1e-8 * max(1.0, np.max(np.abs(np.diag(neg)), initial=0.0)), ridge * 10)
        else:
            raise RankDeficient(f"{what}: information matrix is singular")
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        score = np.max(np.abs(grad), initial=0.0) / scale
        if score < TOL and np.max(np.abs(step), initial=0.0) < _STEP_TOL:
            return theta, it, score, val
        if it == MAX_ITER:
            break
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            cand = theta + lam * step
            # overflowing trial steps give a non-finite value and are halved
            with np.errstate(over="ignore", invalid="ignore"):
                cval, cgrad, chess = objective(cand)
            if np.isfinite(cval) and cval >= val - 1e-12 * abs(val):
                break
            lam *= 0.5
        else:
            raise NoConvergence(f"{what}: step-halving exhausted")
        theta, val, grad, hess = cand, cval, cgrad, chess
        if np.max(np.abs(theta)) > 1e6 or not np.all(np.isfinite(theta)):
            raise NonfiniteEstimate(f"{what}: coefficients diverged")
    if np.max(np.abs(theta), initial=0.0) > _DIVERGED:
        raise NonfiniteEstimate(f"{what}: coefficients diverging (monotone likelihood)")
    raise NoConvergence(f"{what}: no convergence in {MAX_ITER} iterations")


# ---------------------------------------------------------------------------
# partial likelihood


class _RiskSets:
    """Sorted layout for risk-set sums of a counting process.

    ``jump`` marks the subjects whose times are jump times. With
    ``nonjump_ties_at_risk`` (the usual convention) a non-jumping subject
    tied at a jump time is in that risk set; setting it False removes those
    subjects, which is the events-before-censorings convention for fits
    where censoring is the jump.
    """

    def __init__(self, time, jump, nonjump_ties_at_risk=True):
        time = np.asarray(time, dtype=float)
        jump = np.asarray(jump, dtype=bool)
        if nonjump_ties_at_risk:
            order = np.argsort(time, kind="stable")
            key = time[order]
        else:
            order = np.lexsort((jump, time))
            _, rank = np.unique(time[order], return_inverse=True)
            key = 2.0 * rank + jump[order]
        self.order = order
        self.time = time[order]
        self.jump = jump[order]
        self.start = np.searchsorted(key, key, side="left")
        self.jump_rows = np.flatnonzero(self.jump)
        self.jump_start = self.start[self.jump_rows]

    def revcumsum(self, a):
        return np.cumsum(a[::-1], axis=0)[::-1]


def _partial_loglik(theta, rs, X, w):
    """Weighted log partial likelihood, score and Hessian (sorted inputs)."""
    eta = X @ theta
    c = np.max(eta) if eta.size else 0.0
    r = w * np.exp(eta - c)
    S0 = rs.revcumsum(r)[rs.jump_start]
    S1 = rs.revcumsum(r[:, None] * X)[rs.jump_start]
    S2 = rs.revcumsum(r[:, None, None] * (X[:, :, None] * X[:, None, :]))[rs.jump_start]
    wj = w[rs.jump_rows]
    Xj = X[rs.jump_rows]
    val = float(np.sum(wj * (eta[rs.jump_rows] - c - np.log(S0))))
    mean1 = S1 / S0[:, None]
    grad = (wj[:, None] * (Xj - mean1)).sum(axis=0)
    hess = -np.einsum("k,kij->ij", wj, S2 / S0[:, None, None] - mean1[:, :, None] * mean1[:, None, :])
    return val, grad, hess


def partial_loglik(coefficients, time, jump, design, weights=None, nonjump_ties_at_risk=True):
    """Weighted log partial likelihood and its score at ``coefficients``."""
    rs = _RiskSets(time, jump, nonjump_ties_at_risk)
    X = np.asarray(design, dtype=float)[rs.order]
    w = _check_weights(weights, len(rs.order))[rs.order]
    val, grad, _ = _partial_loglik(np.asarray(coefficients, dtype=float), rs, X, w)
    return val, grad


def _breslow(theta, rs, X, w):
    eta = X @ theta
    r = w * np.exp(eta)
    S0 = rs.revcumsum(r)[rs.jump_start]
    inc = w[rs.jump_rows] / S0
    jt = rs.time[rs.jump_rows]
    times, inv = np.unique(jt, return_inverse=True)
    dl = np.bincount(inv, weights=inc, minlength=times.size)
    return StepFunction(times, np.cumsum(dl))


@dataclass(frozen=True, eq=False)
class CoxFit:
    """Weighted Cox fit.

    ``terms`` are the design terms in coefficient order; for outcome models
    the first term is the exposure ``"x"``.
    """

    terms: tuple
    coefficients: np.ndarray
    baseline_cumhaz: StepFunction
    converged: bool = True
    iterations: int = 0
    max_abs_score: float = 0.0
    loglik: float = float("nan")

    @property
    def beta(self) -> float:
        if self.terms and self.terms[0] == EXPOSURE_TERM:
            return float(self.coefficients[0])
        raise AttributeError("fit has no exposure coefficient")

    @property
    def gamma(self) -> np.ndarray:
        if self.terms and self.terms[0] == EXPOSURE_TERM:
            return self.coefficients[1:]
        return self.coefficients

    def linear_predictor(self, dataset: Dataset, exposure=None) -> np.ndarray:
        X, _ = design_matrix(dataset, self.terms, exposure=exposure)
        return X @ self.coefficients

    def cumulative_hazard(self, t, dataset: Dataset, exposure=None):
        """Per-subject cumulative hazard at ``t`` (scalar or length-n array)."""
        return np.exp(self.linear_predictor(dataset, exposure)) * self.baseline_cumhaz(t)

    def survival(self, t, dataset: Dataset, exposure=None):
        return np.exp(-self.cumulative_hazard(t, dataset, exposure))


def _fit_cox_core(time, jump, X, w, terms, nonjump_ties_at_risk=True) -> CoxFit:
    if not np.any(jump):
        raise NoEvents("no events to fit")
    rs = _RiskSets(time, jump, nonjump_ties_at_risk)
    Xs = X[rs.order]
    ws = w[rs.order]
    p = Xs.shape[1]
    if p == 0:
        theta, it, score, val = np.zeros(0), 0, 0.0, _partial_loglik(np.zeros(0), rs, Xs, ws)[0]
    else:
        if np.linalg.matrix_rank(Xs) < p:
            raise RankDeficient("Cox design matrix is not of full column rank")
        theta, it, score, val = _newton_maximize(
            lambda th: _partial_loglik(th, rs, Xs, ws),
            np.zeros(p),
            float(ws.sum()),
            "Cox partial likelihood",
        )
    base = _breslow(theta, rs, Xs, ws)
    return CoxFit(tuple(terms), theta, base, True, it, float(score), float(val))


def fit_weighted_cox(dataset: Dataset, covariate_terms: Sequence[str] = (), weights=None) -> CoxFit:
    """IPT-weighted Cox model for the event hazard.

    Parameters
    ----------
    dataset : Dataset
    covariate_terms : sequence of str
        Design terms for ``m(Z; gamma)``; the exposure is always included
        as the first coefficient.
    weights : ndarray, optional
        Positive case weights (e.g. IPTW). Ones by default.
    """
    terms = (EXPOSURE_TERM, *covariate_terms)
    X, _ = design_matrix(dataset, terms)
    w = _check_weights(weights, dataset.n)
    return _fit_cox_core(dataset.time, dataset.event, X, w, terms)


def fit_cox_terms(dataset, terms, jump, weights=None, nonjump_ties_at_risk=True) -> CoxFit:
    """Cox fit of an arbitrary counting process ``jump`` on arbitrary ``terms``."""
    X, _ = design_matrix(dataset, terms)
    w = _check_weights(weights, dataset.n)
    return _fit_cox_core(dataset.time, np.asarray(jump, bool), X, w, terms, nonjump_ties_at_risk)


def weighted_breslow(dataset: Dataset, fit: CoxFit, weights=None, jump=None,
                     nonjump_ties_at_risk=True) -> StepFunction:
    """Weighted Breslow cumulative baseline hazard at the fit's coefficients.

    The coefficients of ``fit`` are used as given, so a fit with coefficients
    forced to zero yields the weighted Nelson-Aalen estimator.
    """
    jump = dataset.event if jump is None else np.asarray(jump, bool)
    if not np.any(jump):
        raise NoEvents("no events")
    rs = _RiskSets(dataset.time, jump, nonjump_ties_at_risk)
    X, _ = design_matrix(dataset, fit.terms)
    w = _check_weights(weights, dataset.n)
    return _breslow(np.asarray(fit.coefficients, float), rs, X[rs.order], w[rs.order])


# ---------------------------------------------------------------------------
# parametric proportional hazards

FAMILIES = ("exponential", "weibull", "piecewise")


def _exposure_matrix(t, breaks):
    """Time spent in each interval (breaks[k], breaks[k+1]] up to ``t``; last interval open."""
    lo = breaks
    hi = np.append(breaks[1:], np.inf)
    return np.clip(t[:, None] - lo[None, :], 0.0, hi - lo)


def _interval_index(t, breaks):
    return np.searchsorted(breaks[1:], t, side="left")


@dataclass(frozen=True, eq=False)
class ParametricPHFit:
    """Parametric PH fit.

    ``baseline_params`` holds ``log_rate`` (exponential), ``log_shape`` and
    ``log_rate`` (Weibull, cumulative baseline ``rate * t**shape``), or
    ``breaks`` and ``log_hazards`` (piecewise exponential, intervals
    ``(breaks[k], breaks[k+1]]`` with the last one unbounded).
    """

    family: str
    terms: tuple
    coefficients: np.ndarray
    baseline_params: dict
    loglik: float
    converged: bool = True
    iterations: int = 0
    max_abs_score: float = 0.0

    @property
    def beta(self) -> float:
        return float(self.coefficients[0])

    @property
    def gamma(self) -> np.ndarray:
        return self.coefficients[1:]

    @property
    def shape(self) -> float:
        return float(np.exp(self.baseline_params.get("log_shape", 0.0)))

    @property
    def rate(self) -> float:
        return float(np.exp(self.baseline_params["log_rate"]))

    def baseline_hazard(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "piecewise":
            br = self.baseline_params["breaks"]
            return np.exp(self.baseline_params["log_hazards"])[_interval_index(np.atleast_1d(t), br)].reshape(t.shape)
        k = self.shape
        return self.rate * k * t ** (k - 1)

    def baseline_cumhaz(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "piecewise":
            br = self.baseline_params["breaks"]
            E = _exposure_matrix(np.atleast_1d(t).ravel(), br)
            out = E @ np.exp(self.baseline_params["log_hazards"])
            return out.reshape(t.shape) if t.ndim else float(out[0])
        out = self.rate * t ** self.shape
        return out if np.ndim(out) else float(out)

    def linear_predictor(self, dataset: Dataset, exposure=None) -> np.ndarray:
        X, _ = design_matrix(dataset, self.terms, exposure=exposure)
        return X @ self.coefficients

    def cumulative_hazard(self, t, dataset: Dataset, exposure=None):
        return np.exp(self.linear_predictor(dataset, exposure)) * self.baseline_cumhaz(t)

    def survival(self, t, dataset: Dataset, exposure=None):
        return np.exp(-self.cumulative_hazard(t, dataset, exposure))


def default_breaks(time, event, weights=None, n_intervals=5):
    """Interval start points at weighted quantiles of the event times."""
    w = np.ones(len(time)) if weights is None else np.asarray(weights, float)
    et = np.asarray(time, float)[np.asarray(event, bool)]
    ew = w[np.asarray(event, bool)]
    order = np.argsort(et, kind="stable")
    et, ew = et[order], ew[order]
    cw = np.cumsum(ew) / ew.sum()
    qs = np.arange(1, n_intervals) / n_intervals
    cuts = et[np.minimum(np.searchsorted(cw, qs, side="left"), et.size - 1)]
    cuts = np.unique(cuts[cuts < et.max()])
    return np.concatenate([[0.0], cuts])


def _full_loglik(theta, family, X, t, d, w, logt=None, E=None, k_idx=None):
    """Weighted full log-likelihood, gradient and Hessian.

    Parameter layout: baseline parameters first, then regression
    coefficients for ``X``.
    """
    if family == "exponential":
        a = theta[0]
        c = theta[1:]
        eta = a + X @ c
        H = np.exp(eta) * t
        val = float(np.sum(w * (d * eta - H)))
        D = np.column_stack([np.ones(len(t)), X])
        r = w * (d - H)
        grad = D.T @ r
        hess = -(D * (w * H)[:, None]).T @ D
        return val, grad, hess
    if family == "weibull":
        u, a = theta[0], theta[1]
        c = theta[2:]
        k = np.exp(u)
        eta = a + X @ c
        kl = k * logt
        H = np.exp(eta + kl)
        val = float(np.sum(w * (d * (u + (k - 1.0) * logt + eta) - H)))
        D = np.column_stack([np.ones(len(t)), X])
        g_u = np.sum(w * (d * (1.0 + kl) - H * kl))
        g_rest = D.T @ (w * (d - H))
        grad = np.concatenate([[g_u], g_rest])
        p = D.shape[1]
        hess = np.empty((p + 1, p + 1))
        hess[0, 0] = np.sum(w * (d * kl - H * kl * (kl + 1.0)))
        cross = -(D.T @ (w * H * kl))
        hess[0, 1:] = cross
        hess[1:, 0] = cross
        hess[1:, 1:] = -(D * (w * H)[:, None]).T @ D
        return val, grad, hess
    # piecewise
    K = E.shape[1]
    a = theta[:K]
    c = theta[K:]
    xb = X @ c
    ea = np.exp(a)
    exb = np.exp(xb)
    HE = exb[:, None] * E * ea[None, :]  # n x K contributions to cumulative hazard
    H = HE.sum(axis=1)
    val = float(np.sum(w * (d * (a[k_idx] + xb) - H)))
    Dk = np.zeros((len(t), K))
    Dk[np.arange(len(t)), k_idx] = d
    g_a = (w[:, None] * (Dk - HE)).sum(axis=0)
    g_c = X.T @ (w * (d - H))
    grad = np.concatenate([g_a, g_c])
    p = X.shape[1]
    hess = np.zeros((K + p, K + p))
    hess[np.arange(K), np.arange(K)] = -(w[:, None] * HE).sum(axis=0)
    cross = -(X * w[:, None]).T @ HE  # p x K
    hess[K:, :K] = cross
    hess[:K, K:] = cross.T
    hess[K:, K:] = -(X * (w * H)[:, None]).T @ X
    return val, grad, hess


def full_loglik(family, baseline, coefficients, dataset, covariate_terms=(), weights=None, breaks=None):
    """Weighted full log-likelihood and gradient at the given parameters.

    ``baseline`` is ``[log_rate]`` (exponential), ``[log_shape, log_rate]``
    (Weibull) or the per-interval log-hazards (piecewise, with ``breaks``).
    """
    terms = (EXPOSURE_TERM, *covariate_terms)
    X, _ = design_matrix(dataset, terms)
    w = _check_weights(weights, dataset.n)
    t = dataset.time
    d = dataset.event.astype(float)
    theta = np.concatenate([np.atleast_1d(baseline), np.atleast_1d(coefficients)]).astype(float)
    kw = {}
    if family == "weibull":
        kw["logt"] = np.log(t)
    elif family == "piecewise":
        br = np.asarray(breaks, float)
        kw["E"] = _exposure_matrix(t, br)
        kw["k_idx"] = _interval_index(t, br)
    val, grad, _ = _full_loglik(theta, family, X, t, d, w, **kw)
    return val, grad


def fit_weighted_parametric_ph(
    dataset: Dataset,
    covariate_terms: Sequence[str] = (),
    weights=None,
    family: str = "weibull",
    breaks=None,
) -> ParametricPHFit:
    """IPT-weighted parametric PH model fit by maximum likelihood.

    Parameters
    ----------
    family : {"exponential", "weibull", "piecewise"}
    breaks : array_like, optional
        Piecewise interval start points, beginning at 0 and strictly
        increasing. Defaults to weighted event-time quintiles.

    Raises
    ------
    NoEvents, EmptyInterval, NoConvergence
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if not np.any(dataset.event):
        raise NoEvents("no events to fit")
    terms = (EXPOSURE_TERM, *covariate_terms)
    X, _ = design_matrix(dataset, terms)
    w = _check_weights(weights, dataset.n)
    t = dataset.time
    d = dataset.event.astype(float)
    p = X.shape[1]
    if np.linalg.matrix_rank(np.column_stack([np.ones(dataset.n), X])) < p + 1:
        raise RankDeficient("parametric PH design matrix is not of full column rank")
    scale = float(w.sum())
    rate0 = np.log(np.sum(w * d) / np.sum(w * t))
    kw = {}
    if family == "exponential":
        theta0 = np.concatenate([[rate0], np.zeros(p)])
    elif family == "weibull":
        kw["logt"] = np.log(t)
        theta0 = np.concatenate([[0.0, rate0], np.zeros(p)])
    else:
        br = default_breaks(t, d, w) if breaks is None else np.asarray(breaks, float)
        if br[0] != 0.0 or np.any(np.diff(br) <= 0):
            raise ValueError("breaks must start at 0 and be strictly increasing")
        E = _exposure_matrix(t, br)
        k_idx = _interval_index(t, br)
        expo = (w[:, None] * E).sum(axis=0)
        ev = np.bincount(k_idx, weights=w * d, minlength=br.size)
        if np.any(expo <= 0):
            raise EmptyInterval(f"interval {int(np.argmin(expo))} has zero weighted exposure time")
        if np.any(ev <= 0):
            raise EmptyInterval(f"interval {int(np.argmin(ev))} contains no events")
        kw["E"] = E
        kw["k_idx"] = k_idx
        theta0 = np.concatenate([np.log(ev / expo), np.zeros(p)])
    theta, it, score, val = _newton_maximize(
        lambda th: _full_loglik(th, family, X, t, d, w, **kw),
        theta0,
        scale,
        f"{family} PH likelihood",
    )
    if family == "exponential":
        base, coef = {"log_rate": float(theta[0])}, theta[1:]
    elif family == "weibull":
        base, coef = {"log_shape": float(theta[0]), "log_rate": float(theta[1])}, theta[2:]
    else:
        K = br.size
        base, coef = {"breaks": br, "log_hazards": theta[:K].copy()}, theta[K:]
    return ParametricPHFit(family, terms, coef.copy(), base, float(val), True, it, float(score))


def conditional_survival(fit, t, x, z=None) -> float:
    """Model survival probability ``S(t | x, z)`` for one covariate profile.

    ``z`` is the raw covariate vector in the order of the covariate names the
    fit's terms refer to; pass a :class:`Dataset` row via ``fit.survival``
    for vectorized use.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 1.0
    z = np.atleast_1d(np.asarray([] if z is None else z, dtype=float))
    if any("C(" in term for term in fit.terms):
        raise ValueError("conditional_survival does not support C() terms; use fit.survival on a Dataset")
    names = term_covariates(fit.terms)
    if len(z) != len(names):
        raise ValueError(f"expected {len(names)} covariate values for {names}")
    row = Dataset([1.0], [False], [int(x)], z[None, :] if names else np.zeros((1, 0)), names)
    return float(fit.survival(t, row)[0])
