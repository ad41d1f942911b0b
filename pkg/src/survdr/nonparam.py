"""Kaplan-Meier, censoring-distribution models, IPCW weights and pseudo-observations.

Tie convention throughout: at equal times events precede censorings. In a
fit where censoring is the jump process, a subject whose event occurs at a
censoring time is therefore not at risk of being censored at that time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NoCensoringEvents, ZeroCensoringSurvival
from .hazards import CoxFit, fit_cox_terms
from .steps import StepFunction
from .survdata import Dataset

G_MIN = 1e-6
CENSORING_KINDS = ("pooled-km", "km-stratified-by-exposure", "cox")


def _product_limit(time, jump, weights, nonjump_ties_at_risk=True):
    time = np.asarray(time, float)
    jump = np.asarray(jump, bool)
    w = np.ones(time.size) if weights is None else np.asarray(weights, float)
    jt, inv = np.unique(time[jump], return_inverse=True)
    if jt.size == 0:
        return StepFunction(np.zeros(0), np.zeros(0), initial=1.0)
    d = np.bincount(inv, weights=w[jump], minlength=jt.size)
    order = np.argsort(time, kind="stable")
    ts = time[order]
    tail = np.concatenate([np.cumsum(w[order][::-1])[::-1], [0.0]])
    if nonjump_ties_at_risk:
        at_risk = tail[np.searchsorted(ts, jt, side="left")]
    else:
        at_risk = tail[np.searchsorted(ts, jt, side="right")] + d
    factors = 1.0 - d / at_risk
    return StepFunction(jt, np.cumprod(np.clip(factors, 0.0, 1.0)), initial=1.0)


def kaplan_meier(times, events, weights=None) -> StepFunction:
    """(Weighted) product-limit survival estimate.

    Returns a right-continuous :class:`~survdr.steps.StepFunction` with jumps
    at the distinct event times and value 1 before the first one.
    """
    return _product_limit(times, events, weights)


def reverse_kaplan_meier(times, events, weights=None) -> StepFunction:
    """Product-limit estimate of the censoring survival function."""
    events = np.asarray(events, bool)
    return _product_limit(times, ~events, weights, nonjump_ties_at_risk=False)


@dataclass(frozen=True, eq=False)
class CensoringModel:
    """Fitted model for ``G_c(u | x, z) = P(C > u | X = x, Z = z)``.

    Attributes
    ----------
    kind : {"pooled-km", "km-stratified-by-exposure", "cox"}
    curves : dict
        Product-limit curves keyed by stratum (``None`` for pooled).
    cox : CoxFit or None
        Cox model of the censoring hazard (``kind == "cox"``).
    """

    kind: str
    curves: dict
    cox: CoxFit | None = None

    @property
    def jump_times(self) -> np.ndarray:
        if self.kind == "cox":
            return self.cox.baseline_cumhaz.times
        return np.unique(np.concatenate([c.times for c in self.curves.values()]))

    def _strata(self, dataset):
        if self.kind == "km-stratified-by-exposure":
            return dataset.exposure.astype(int)
        return None

    def survival(self, dataset: Dataset, u, left=False) -> np.ndarray:
        """``G_c(u_i | X_i, Z_i)`` for each subject (``u`` scalar or length n).

        With ``left=True`` the left limit ``G_c(u_i-)`` is returned.
        """
        u = np.broadcast_to(np.asarray(u, float), (dataset.n,))
        if self.kind == "cox":
            base = self.cox.baseline_cumhaz
            L = base.left_limit(u) if left else base(u)
            return np.exp(-np.exp(self.cox.linear_predictor(dataset)) * L)
        if self.kind == "pooled-km":
            c = self.curves[None]
            return np.asarray(c.left_limit(u) if left else c(u), float)
        out = np.empty(dataset.n)
        strata = self._strata(dataset)
        for key, c in self.curves.items():
            m = strata == key
            out[m] = c.left_limit(u[m]) if left else c(u[m])
        missing = ~np.isin(strata, list(self.curves))
        out[missing] = 1.0
        return out

    def survival_grid(self, dataset: Dataset, grid) -> np.ndarray:
        """Matrix ``G_c(grid[k] | X_i, Z_i)`` of shape (n, len(grid))."""
        grid = np.asarray(grid, float)
        if self.kind == "cox":
            L = self.cox.baseline_cumhaz(grid)
            return np.exp(-np.outer(np.exp(self.cox.linear_predictor(dataset)), L))
        if self.kind == "pooled-km":
            return np.broadcast_to(self.curves[None](grid), (dataset.n, grid.size)).copy()
        strata = self._strata(dataset)
        out = np.ones((dataset.n, grid.size))
        for key, c in self.curves.items():
            out[strata == key] = c(grid)
        return out

    def hazard_increments(self, dataset: Dataset, grid) -> np.ndarray:
        """Censoring cumulative-hazard increments ``dLambda_c(grid[k] | X_i, Z_i)``.

        ``grid`` should be the model's jump times (a subset is fine). For
        product-limit curves the increment is ``1 - G(s) / G(s-)``.
        """
        grid = np.asarray(grid, float)
        if self.kind == "cox":
            base = self.cox.baseline_cumhaz
            dL = base(grid) - base.left_limit(grid)
            return np.outer(np.exp(self.cox.linear_predictor(dataset)), dL)

        def incr(c):
            g, gl = c(grid), c.left_limit(grid)
            return np.where(gl > 0, 1.0 - g / np.where(gl > 0, gl, 1.0), 0.0)

        if self.kind == "pooled-km":
            return np.broadcast_to(incr(self.curves[None]), (dataset.n, grid.size)).copy()
        strata = self._strata(dataset)
        out = np.zeros((dataset.n, grid.size))
        for key, c in self.curves.items():
            out[strata == key] = incr(c)
        return out


    def log_hazard_over_survival(self, dataset: Dataset, grid) -> np.ndarray:
        """``log(dLambda_c(grid[k]) / G_c(grid[k]))`` per subject.

        Shape (n, len(grid)), or (1, len(grid)) for the pooled model. Zero
        increments give ``-inf``.
        """
        grid = np.asarray(grid, float)
        with np.errstate(divide="ignore"):
            if self.kind == "cox":
                base = self.cox.baseline_cumhaz
                eta = self.cox.linear_predictor(dataset)[:, None]
                dL = base(grid) - base.left_limit(grid)
                return eta + np.log(dL)[None, :] + np.exp(eta) * base(grid)[None, :]

            def vec(c):
                g, gl = c(grid), c.left_limit(grid)
                inc = np.where(gl > 0, 1.0 - g / np.where(gl > 0, gl, 1.0), 0.0)
                return np.log(inc) - np.log(g)

            if self.kind == "pooled-km":
                return vec(self.curves[None])[None, :]
            strata = self._strata(dataset)
            out = np.full((dataset.n, grid.size), -np.inf)
            for key, c in self.curves.items():
                out[strata == key] = vec(c)
            return out


def fit_censoring_model(dataset: Dataset, kind: str = "pooled-km", terms: Sequence[str] = ("x",)) -> CensoringModel:
    """Fit a model for the censoring distribution (censoring as the event).

    Parameters
    ----------
    kind : {"pooled-km", "km-stratified-by-exposure", "cox"}
    terms : sequence of str
        Design terms for the censoring Cox model (may include ``"x"`` and
        interactions such as ``"x*z1"``). Ignored for the KM kinds.
    """
    if kind in ("km", "pooled"):
        kind = "pooled-km"
    elif kind in ("km-strat", "stratified"):
        kind = "km-stratified-by-exposure"
    if kind not in CENSORING_KINDS:
        raise ValueError(f"unknown censoring model kind {kind!r}")
    cens = ~dataset.event
    if not np.any(cens):
        raise NoCensoringEvents("no censored observations to fit a censoring model")
    if kind == "pooled-km":
        return CensoringModel(kind, {None: reverse_kaplan_meier(dataset.time, dataset.event)})
    if kind == "km-stratified-by-exposure":
        curves = {}
        for x in (0, 1):
            m = dataset.exposure == x
            if np.any(m):
                curves[x] = reverse_kaplan_meier(dataset.time[m], dataset.event[m])
        return CensoringModel(kind, curves)
    fit = fit_cox_terms(dataset, tuple(terms), cens, nonjump_ties_at_risk=False)
    return CensoringModel(kind, {}, fit)


def censoring_model_from_cox(fit: CoxFit) -> CensoringModel:
    return CensoringModel("cox", {}, fit)


def ipcw_weights(dataset: Dataset, t: float, model: CensoringModel) -> np.ndarray:
    """Inverse probability of censoring weights at horizon ``t``.

    ``U_i = I(T_i <= t) D_i / G(T_i- | X_i, Z_i) + I(T_i > t) / G(t | X_i, Z_i)``;
    subjects censored at or before ``t`` get weight 0. The left limit in
    the first denominator keeps a subject's own tied censoring jump out of
    its weight.

    Raises
    ------
    ZeroCensoringSurvival
        If a needed censoring survival probability is at or below 1e-6.
    """
    early = (dataset.time <= t) & dataset.event
    late = dataset.time > t
    g = np.ones(dataset.n)
    if np.any(early):
        g_early = model.survival(dataset, dataset.time, left=True)
        g[early] = g_early[early]
    if np.any(late):
        g_late = model.survival(dataset, t)
        g[late] = g_late[late]
    need = early | late
    if np.any(g[need] <= G_MIN):
        i = int(np.flatnonzero(need & (g <= G_MIN))[0])
        raise ZeroCensoringSurvival(f"censoring survival {g[i]:.3g} at subject {i}")
    u = np.zeros(dataset.n)
    u[need] = 1.0 / g[need]
    return u


def jackknife_pseudo(times, events, t: float) -> np.ndarray:
    """Jackknife pseudo-observations ``n S(t) - (n-1) S^{-i}(t)`` of the KM estimate.

    Leave-one-out estimates are exact. Removing a subject with time ``tau``
    shrinks the risk sets at jump times up to ``tau`` by one (and removes
    one death at ``tau`` if it was an event), so each leave-one-out curve
    is a prefix product of modified factors times a suffix product of the
    full-data factors. Cost is O(n log n). Without censoring before ``t`` the
    result is ``I(T_i > t)`` exactly.
    """
    time = np.asarray(times, float)
    event = np.asarray(events, bool)
    n = time.size
    if n < 2:
        raise ValueError("need at least two subjects")
    if not np.any(~event & (time <= t)):
        # no censoring by t: KM is the empirical survival and the jackknife
        # collapses to the indicator, returned exactly
        return (time > t).astype(float)
    jt, d = np.unique(time[event & (time <= t)], return_counts=True)
    r = n - np.searchsorted(np.sort(time), jt, side="left")
    d = d.astype(float)
    r = r.astype(float)

    def ratio(num, den):
        return np.where(den > 0, 1.0 - num / np.where(den > 0, den, 1.0), 1.0)

    full_f = ratio(d, r)  # factors with the subject kept
    drop_f = ratio(d, r - 1)  # subject removed from the risk set only
    death_f = ratio(d - 1, r - 1)  # subject's own death removed too
    K = jt.size
    prefix = np.concatenate([[1.0], np.cumprod(drop_f)])  # prod_{k < j} drop_f
    suffix = np.concatenate([np.cumprod(full_f[::-1])[::-1], [1.0]])  # prod_{k >= j} full_f
    full = suffix[0]

    j = np.searchsorted(jt, np.minimum(time, t), side="right")  # jumps at or before own time
    loo = prefix[j] * suffix[j]
    own = event & (time <= t)
    if np.any(own):
        k = j[own] - 1  # own death is the last affected jump
        loo[own] = prefix[k] * death_f[k] * suffix[k + 1]
    loo[time > t] = prefix[K]
    return n * full - (n - 1) * loo


def ipcw_pseudo(dataset: Dataset, t: float, model: CensoringModel) -> np.ndarray:
    """Censoring-adjusted pseudo-values ``1 - I(T_i <= t) D_i / G(T_i- | X_i, Z_i)``.

    Their conditional mean given (X, Z) is ``P(T > t | X, Z)`` whenever the
    censoring model is correct, so they stand in for jackknife values
    when censoring depends on covariates.
    """
    early = (dataset.time <= t) & dataset.event
    out = np.ones(dataset.n)
    if np.any(early):
        g = model.survival(dataset, dataset.time, left=True)[early]
        if np.any(g <= G_MIN):
            raise ZeroCensoringSurvival("censoring survival vanishes at an event time")
        out[early] = 1.0 - 1.0 / g
    return out


def jackknife_pseudo_naive(times, events, t: float) -> np.ndarray:
    """Reference implementation: refit Kaplan-Meier n times."""
    time = np.asarray(times, float)
    event = np.asarray(events, bool)
    n = time.size
    full = kaplan_meier(time, event)(t)
    keep = np.ones(n, bool)
    out = np.empty(n)
    for i in range(n):
        keep[i] = False
        out[i] = n * full - (n - 1) * kaplan_meier(time[keep], event[keep])(t)
        keep[i] = True
    return out
