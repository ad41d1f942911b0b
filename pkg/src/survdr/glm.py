"""Weighted logistic regression and a cloglog estimating-equation solver.

Both fitters are Newton-type with step-halving on an objective. Convergence
is declared when the score, scaled by the total case weight, has max-norm
below ``tol`` *and* the last Newton step is small; the second condition is
what distinguishes a true root from the vanishing gradient along a
separating direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .errors import DimensionMismatch, NoConvergence, RankDeficient, Separation

TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 25
_STEP_TOL = 1e-6
# cloglog Levenberg-Marquardt controls
LM_MAX_ITER = 500
LM_MIN_DAMPING = 1e-8
LM_MAX_DAMPING = 1e10
_PIN = 1e-10


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    max_abs_score: float
    link: str  # "logit" or "cloglog-survival"

    def linear_predictor(self, design):
        design = np.atleast_2d(np.asarray(design, dtype=float))
        if design.shape[1] != self.coefficients.shape[0]:
            raise DimensionMismatch(
                f"design has {design.shape[1]} columns, fit has {self.coefficients.shape[0]}"
            )
        return design @ self.coefficients

    def predict(self, design):
        """Mean response for each design row."""
        eta = self.linear_predictor(design)
        if self.link == "logit":
            return expit(eta)
        return _cloglog_parts(eta)[0]


def predict_probability(fit: GlmFit, design_row) -> float:
    """Fitted probability for a single design row."""
    row = np.asarray(design_row, dtype=float)
    if row.ndim != 1:
        raise DimensionMismatch("design_row must be one-dimensional")
    return float(fit.predict(row[None, :])[0])


def _check_design(design, n):
    design = np.asarray(design, dtype=float)
    if design.ndim != 2 or design.shape[0] != n:
        raise DimensionMismatch("design must be an (n, p) matrix matching the response")
    if design.shape[0] < design.shape[1]:
        raise RankDeficient(f"n={design.shape[0]} < p={design.shape[1]}")
    return design


def _check_rank(design, weights):
    sw = np.sqrt(weights)[:, None] * design
    if design.shape[1] and np.linalg.matrix_rank(sw) < design.shape[1]:
        raise RankDeficient("design matrix is not of full column rank")


def logistic_loglik(coef, design, response, weights):
    eta = design @ coef
    return float(np.sum(weights * (response * log_expit(eta) + (1 - response) * log_expit(-eta))))


def logistic_score(coef, design, response, weights):
    p = expit(design @ coef)
    return design.T @ (weights * (response - p))


def fit_weighted_logistic(design, response, case_weights=None, start=None) -> GlmFit:
    """Weighted maximum-likelihood logistic regression.

    Parameters
    ----------
    design : ndarray, shape (n, p)
        Design matrix; include an intercept column explicitly.
    response : ndarray, shape (n,)
        Binary outcomes.
    case_weights : ndarray, shape (n,), optional
        Nonnegative weights, not all zero. Defaults to ones.
    start : ndarray, optional
        Starting coefficients (zeros by default).

    Raises
    ------
    RankDeficient, Separation, NoConvergence
    """
    y = np.asarray(response, dtype=float)
    n = y.shape[0]
    X = _check_design(design, n)
    w = np.ones(n) if case_weights is None else np.asarray(case_weights, dtype=float)
    if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("case_weights must be finite, nonnegative and not all zero")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("response must be binary")
    _check_rank(X, w)
    wsum = w.sum()

    b = np.zeros(X.shape[1]) if start is None else np.array(start, dtype=float)
    ll = logistic_loglik(b, X, y, w)
    score = np.inf
    for it in range(1, MAX_ITER + 1):
        eta = X @ b
        p = expit(eta)
        u = X.T @ (w * (y - p))
        info = (X * (w * p * (1 - p))[:, None]).T @ X
        try:
            step = np.linalg.solve(info, u)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, u, rcond=None)[0]
        score = np.max(np.abs(u)) / wsum
        if score < TOL and np.max(np.abs(step)) < _STEP_TOL:
            return GlmFit(b, True, it - 1, float(score), "logit")
        pinned = np.minimum(p, 1 - p)[w > 0]
        if pinned.size and np.min(pinned) < _PIN:
            raise Separation("fitted probabilities pinned to 0 or 1; data appear separated")
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            b_new = b + lam * step
            ll_new = logistic_loglik(b_new, X, y, w)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            lam *= 0.5
        else:
            raise NoConvergence("logistic step-halving exhausted")
        b, ll = b_new, ll_new
    raise NoConvergence(f"logistic regression did not converge in {MAX_ITER} iterations")


def _cloglog_parts(eta):
    """mu = exp(-exp(eta)) with its first two eta-derivative factors.

    ``d = dmu/deta = -e mu`` and ``d2 = e mu (e - 1)``; both vanish in the
    limit where ``e = exp(eta)`` overflows.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(eta)
        mu = np.exp(-e)
        d = np.where(mu > 0, -e * mu, 0.0)
        d2 = np.where(mu > 0, e * mu * (e - 1.0), 0.0)
    return mu, d, d2


def cloglog_score(coef, design, pseudo):
    """Estimating function sum_i (d mu_i / d b)(s_i - mu_i) with identity working variance."""
    mu, d, _ = _cloglog_parts(design @ coef)
    return design.T @ (d * (pseudo - mu))


def cloglog_objective(coef, design, pseudo):
    """Negative half residual sum of squares; its gradient is :func:`cloglog_score`."""
    mu = _cloglog_parts(design @ coef)[0]
    return -0.5 * float(np.sum((pseudo - mu) ** 2))


def _cloglog_root(b, jtj, iterations, score):
    # a flat direction at the "root" means fitted survival has collapsed to
    # 0 or 1 on part of the design and the coefficients are not identified
    d = np.sqrt(np.maximum(np.diag(jtj), 1e-300))
    ev = np.linalg.eigvalsh(jtj / np.outer(d, d))
    if ev[0] < 1e-10 * ev[-1] or np.min(np.diag(jtj)) < 1e-12 * np.max(np.diag(jtj)):
        raise NoConvergence("cloglog fit has no finite root: fitted survival collapses to 0 or 1 "
                            "on part of the design")
    return GlmFit(b, True, iterations, float(score), "cloglog-survival")


def fit_cloglog_pseudo(design, pseudo_outcomes, start=None) -> GlmFit:
    """Solve the cloglog-survival estimating equations.

    Each iteration tries the Newton step on the least-squares objective when
    its Hessian is negative definite and a Levenberg-Marquardt step on the
    Gauss-Newton matrix otherwise; the damping grows until the objective
    improves. Near-separated designs, where one arm's fitted survival sits
    close to 0, make the Gauss-Newton matrix nearly singular and are the
    reason for the damping.

    The mean model is ``mu = exp(-exp(design @ b))``; outcomes are
    jackknife pseudo-observations and may fall outside [0, 1].
    """
    s = np.asarray(pseudo_outcomes, dtype=float)
    n = s.shape[0]
    X = _check_design(design, n)
    _check_rank(X, np.ones(n))
    p = X.shape[1]

    if start is None:
        b = np.zeros(p)
        # the intercept column (if any) starts at the closed-form intercept-only root
        const = np.flatnonzero(np.all(X == 1.0, axis=0))
        if const.size:
            m = np.clip(np.mean(s), 1e-3, 1 - 1e-3)
            b[const[0]] = np.log(-np.log(m))
    else:
        b = np.array(start, dtype=float)

    obj = cloglog_objective(b, X, s)
    lam = 0.0
    for it in range(1, LM_MAX_ITER + 1):
        mu, d, d2 = _cloglog_parts(X @ b)
        resid = s - mu
        u = X.T @ (d * resid)
        jtj = (X * (d * d)[:, None]).T @ X
        full = jtj - (X * (d2 * resid)[:, None]).T @ X
        score = np.max(np.abs(u)) / n
        scale = np.maximum(np.diag(jtj), 1e-12 * max(np.max(np.diag(jtj)), 1e-300))
        accepted = False
        while lam <= LM_MAX_DAMPING:
            step = None
            if lam == 0.0:
                try:
                    np.linalg.cholesky(full)
                    step = np.linalg.solve(full, u)
                except np.linalg.LinAlgError:
                    lam = LM_MIN_DAMPING
            if step is None:
                try:
                    step = np.linalg.solve(jtj + lam * np.diag(scale), u)
                except np.linalg.LinAlgError:
                    lam = max(lam * 10.0, LM_MIN_DAMPING)
                    continue
            if score < TOL and np.max(np.abs(step)) < _STEP_TOL:
                return _cloglog_root(b, jtj, it - 1, score)
            b_new = b + step
            obj_new = cloglog_objective(b_new, X, s)
            if np.isfinite(obj_new) and obj_new >= obj - 1e-12 * max(abs(obj), 1e-300):
                accepted = True
                break
            lam = max(lam * 10.0, LM_MIN_DAMPING)
        if not accepted:
            if score < TOL:
                # no representable improvement left at a root
                return _cloglog_root(b, jtj, it - 1, score)
            raise NoConvergence("cloglog damping exhausted without improving the objective")
        b, obj = b_new, obj_new
        lam = lam / 10.0 if lam > LM_MIN_DAMPING else 0.0
    raise NoConvergence(f"cloglog estimating equations did not converge in {LM_MAX_ITER} iterations")
