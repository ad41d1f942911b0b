"""Simulation study: data-generating processes, truths, replicate runner, summaries.

Data-generating process
-----------------------
``Z1 ~ N(0, 1)``, ``Z2 ~ Bernoulli(0.5)``, exposure ``X ~ Bernoulli(g(Z))``
with ``logit g = 0.4 Z1 + 0.6 Z1^2 - 0.4 Z2``. Event hazard
``lambda0 k t^(k-1) exp(beta X + 0.5 Z1 + 0.5 Z1^2 + 0.3 Z2)`` with
``k = 1.3``. "Wrong" propensity and outcome models drop ``Z1^2``.

``lambda0`` is set so that ``P(T <= 1) = 0.4`` under the null, which makes
the evaluation time ``t = 1`` the 40th percentile of the null event-time
distribution. Censoring mechanisms:

* ``independent``: exponential;
* ``typeA``: additive hazard ``a0 + a1 X + a2 |Z1|``;
* ``typeB``: PH exponential with linear predictor ``c1 X + c2 Z1 + a3 X Z1``
  (defaults make censoring rise with Z1 in the exposed and fall with Z1
  in the unexposed);
* ``outcome-dependent``: exponential with rate multiplied by a gamma
  frailty (variance 0.5) that also multiplies the event hazard.

Rates give about 30% censoring under the null.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from . import __version__
from .errors import ConfigError, EstimatorFailed, SurvdrError
from .estimators import (
    HazardRatioPipeline,
    PipelineBatch,
    SurvDiffPipeline,
    bootstrap,
    rng_stream,
)
from .survdata import Dataset

SHAPE = 1.3
GAMMA = (0.5, 0.5, 0.3)  # Z1, Z1^2, Z2
PS_COEF = (0.4, 0.6, -0.4)  # Z1, Z1^2, Z2
# P(T <= 1) = 0.4 under the null, solved by Gauss-Hermite quadrature
EVENT_RATE = 0.26121871615446873
EVAL_TIME = 1.0
BETA_NONNULL = 0.69
FRAILTY_VAR = 0.5

# censoring parameters, each tuned by Monte Carlo for ~30% censoring under the null
CENSORING_PARAMS = {
    "independent": {"rate": 0.2289},
    "typeA": {"a0": 0.1072, "a1": 0.1072, "a2": 0.1072},
    "typeB": {"c0": 0.1836, "c1": 0.0, "c2": -1.0, "a3": 2.0},
    "outcome-dependent": {"rate": 0.2419},
}
CENSORING_KINDS = tuple(CENSORING_PARAMS)
EFFECTS = ("null", "non-null")

PROFILES = {
    "desk": {"n": 1000, "reps": 500, "boot": 200},
    "full": {"n": 2000, "reps": 1000, "boot": 500},
}

RIGHT_TERMS = ("z1", "z1^2", "z2")
WRONG_TERMS = ("z1", "z2")

HR_ESTIMATORS = ("iptw-cox", "iptw-weibull", "iptw-pwexp")
SD_ESTIMATORS = ("stdcox", "drbin", "drsurv", "drpseudo")
ESTIMATORS = HR_ESTIMATORS + SD_ESTIMATORS
DR_ESTIMATORS = ("drbin", "drsurv", "drpseudo")


@dataclass(frozen=True)
class Scenario:
    censoring: str = "independent"
    effect: str = "null"
    n: int = 1000
    reps: int = 500
    seed: int = 20240101
    boot: int = 200
    t: float = EVAL_TIME
    censoring_params: tuple = ()  # overrides as (key, value) pairs

    def __post_init__(self):
        if self.censoring not in CENSORING_KINDS:
            raise ValueError(f"unknown censoring kind {self.censoring!r}")
        if self.effect not in EFFECTS:
            raise ValueError(f"unknown effect {self.effect!r}")
        if self.n < 50:
            raise ValueError("n must be at least 50")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.t < 0:
            raise ValueError("t must be nonnegative")
        if self.censoring == "typeB" and self.params["a3"] == 0:
            raise ValueError("type B censoring needs a nonzero X*Z1 coefficient")

    @property
    def id(self) -> str:
        return f"{self.censoring}-{self.effect}"

    @property
    def beta(self) -> float:
        return 0.0 if self.effect == "null" else BETA_NONNULL

    @property
    def params(self) -> dict:
        out = dict(CENSORING_PARAMS[self.censoring])
        out.update(dict(self.censoring_params))
        return out


class SimulatedData(NamedTuple):
    dataset: Dataset
    t0: np.ndarray  # potential event times
    t1: np.ndarray
    censor_time: np.ndarray


def _linear_predictor(beta, x, z1, z2):
    return beta * x + GAMMA[0] * z1 + GAMMA[1] * z1**2 + GAMMA[2] * z2


def propensity(z1, z2):
    return expit(PS_COEF[0] * z1 + PS_COEF[1] * z1**2 + PS_COEF[2] * z2)


def censoring_rate(scenario: Scenario, x, z1, frailty=None):
    p = scenario.params
    kind = scenario.censoring
    if kind == "independent":
        return np.full(x.shape, p["rate"])
    if kind == "typeA":
        return p["a0"] + p["a1"] * x + p["a2"] * np.abs(z1)
    if kind == "typeB":
        return p["c0"] * np.exp(p["c1"] * x + p["c2"] * z1 + p["a3"] * x * z1)
    return p["rate"] * frailty


def generate(scenario: Scenario, rng: np.random.Generator, n=None) -> SimulatedData:
    """Draw one dataset, keeping both potential event times.

    Both potential times share one unit-exponential draw, so ``T = T(X)``.
    """
    n = scenario.n if n is None else n
    z1 = rng.standard_normal(n)
    z2 = (rng.random(n) < 0.5).astype(float)
    x = (rng.random(n) < propensity(z1, z2)).astype(float)
    e = rng.standard_exponential(n)
    ec = rng.standard_exponential(n)
    frailty = None
    scale = np.ones(n)
    if scenario.censoring == "outcome-dependent":
        k = 1.0 / FRAILTY_VAR
        frailty = rng.gamma(k, FRAILTY_VAR, n)
        scale = frailty
    t_pot = []
    for xx in (0.0, 1.0):
        lp = _linear_predictor(scenario.beta, xx, z1, z2)
        t_pot.append((e / (scale * EVENT_RATE * np.exp(lp))) ** (1.0 / SHAPE))
    t_obs = np.where(x == 1, t_pot[1], t_pot[0])
    c = ec / censoring_rate(scenario, x, z1, frailty)
    ds = Dataset(np.minimum(t_obs, c), t_obs <= c, x.astype(int), np.column_stack([z1, z2]), ("z1", "z2"))
    return SimulatedData(ds, t_pot[0], t_pot[1], c)


def conditional_survival_true(scenario: Scenario, t, x, z1, z2):
    """True ``P(T(x) > t | Z)`` (frailty integrated out where present)."""
    L = EVENT_RATE * t**SHAPE * np.exp(_linear_predictor(scenario.beta, x, z1, z2))
    if scenario.censoring == "outcome-dependent":
        return (1.0 + FRAILTY_VAR * L) ** (-1.0 / FRAILTY_VAR)
    return np.exp(-L)


class Truth(NamedTuple):
    psi: float
    zeta: float
    mcse: float
    draws: int


def truth(scenario: Scenario, draws: int = 1_000_000, seed: int | None = None) -> Truth:
    """Monte Carlo truth for ``zeta(t)`` over covariate draws; ``psi = beta``.

    The null gives ``zeta = 0`` exactly.
    """
    if scenario.effect == "null" or scenario.t == 0:
        return Truth(scenario.beta, 0.0, 0.0, 0)
    rng = rng_stream(scenario.seed if seed is None else seed, 2**31 - 1)
    z1 = rng.standard_normal(draws)
    z2 = (rng.random(draws) < 0.5).astype(float)
    d = conditional_survival_true(scenario, scenario.t, 1.0, z1, z2) - conditional_survival_true(
        scenario, scenario.t, 0.0, z1, z2
    )
    return Truth(scenario.beta, float(d.mean()), float(d.std(ddof=1) / math.sqrt(draws)), draws)


def truth_quadrature(scenario: Scenario, nodes: int = 200) -> float:
    """``zeta(t)`` by Gauss-Hermite quadrature over Z1 (exact over Z2)."""
    z, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / w.sum()
    out = 0.0
    for z2 in (0.0, 1.0):
        d = conditional_survival_true(scenario, scenario.t, 1.0, z, z2) - conditional_survival_true(
            scenario, scenario.t, 0.0, z, z2
        )
        out += 0.5 * float(np.sum(w * d))
    return out


# ---------------------------------------------------------------------------
# model specifications and estimator construction

_LEVELS = ("right", "wrong", "none")


@dataclass(frozen=True)
class ModelSpec:
    weights: str = "right"
    outcome: str = "wrong"
    censoring_model: str = "none"

    def __post_init__(self):
        if self.weights not in _LEVELS or self.outcome not in ("right", "wrong") or self.censoring_model not in _LEVELS:
            raise ValueError(f"invalid model specification {self.token!r}")

    @classmethod
    def parse(cls, token: str) -> "ModelSpec":
        parts = token.strip().split(":")
        if len(parts) == 2:
            parts.append("none")
        if len(parts) != 3:
            raise ValueError(f"model spec {token!r} is not weights:outcome[:censoring]")
        return cls(*parts)

    @property
    def token(self) -> str:
        return f"{self.weights}:{self.outcome}:{self.censoring_model}"

    @property
    def label(self) -> str:
        out = f"{self.weights} weights, {self.outcome} outcome"
        if self.censoring_model != "none":
            out += f", {self.censoring_model} cens"
        return out


DEFAULT_SPECS = {
    "independent": ("right:wrong:right", "wrong:right:right", "wrong:wrong:right"),
    "typeA": ("right:right:none", "right:wrong:none", "right:right:wrong", "right:wrong:wrong", "right:wrong:right"),
    "typeB": (
        "right:right:none",
        "right:wrong:none",
        "right:right:wrong",
        "right:wrong:wrong",
        "right:wrong:right",
        "wrong:right:right",
    ),
    "outcome-dependent": ("right:wrong:wrong", "wrong:wrong:wrong"),
}

# drbin's logistic model for P(T <= t | X, Z): main effects and exposure interactions
def _drbin_terms(cov):
    return ("x", *cov, *(f"x*{c}" for c in cov))


def censoring_model_for(scenario: Scenario, level: str):
    """(kind, terms) of the censoring model, or None when unavailable.

    No fitted family is correct for type A (additive) or outcome-dependent
    censoring, so "right" has no model there.
    """
    if level == "none":
        return None
    if level == "wrong":
        return None if scenario.censoring == "independent" else ("pooled-km", ("x",))
    if scenario.censoring == "independent":
        return ("pooled-km", ("x",))
    if scenario.censoring == "typeB":
        return ("cox", ("x", "z1", "x*z1"))
    return None


def build_pipeline(estimator: str, spec: ModelSpec, scenario: Scenario):
    """Pipeline for one table cell, or None where the method cannot be used."""
    ps = {"right": RIGHT_TERMS, "wrong": WRONG_TERMS, "none": None}[spec.weights]
    cov = RIGHT_TERMS if spec.outcome == "right" else WRONG_TERMS
    ipcw_free_scenario = scenario.censoring == "independent"
    if estimator in HR_ESTIMATORS or estimator == "stdcox":
        if spec.censoring_model != "none" and not ipcw_free_scenario and scenario.censoring != "outcome-dependent":
            return None
        if estimator == "stdcox":
            return SurvDiffPipeline("stdcox", scenario.t, ps, cov)
        model = {"iptw-cox": "cox", "iptw-weibull": "weibull", "iptw-pwexp": "piecewise"}[estimator]
        return HazardRatioPipeline(model, ps, cov)
    if estimator not in DR_ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if ps is None:
        return None
    cens = censoring_model_for(scenario, spec.censoring_model)
    if cens is None:
        return None
    kind, terms = cens
    if estimator == "drbin":
        return SurvDiffPipeline("drbin", scenario.t, ps, _drbin_terms(cov), kind, terms)
    if estimator == "drsurv":
        return SurvDiffPipeline("drsurv", scenario.t, ps, cov, kind, terms)
    pseudo = "ipcw" if kind == "cox" else "jackknife"
    return SurvDiffPipeline("drpseudo", scenario.t, ps, ("x", *cov), kind, terms, pseudo_kind=pseudo)


# ---------------------------------------------------------------------------
# runner


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    spec: str
    estimator: str
    n: int
    reps: int
    bias: float
    sd: float
    t1e: float
    rel_bias: float
    mcse: float
    n_failed: int = 0
    truth: float = float("nan")


COLUMNS = ("scenario", "spec", "estimator", "n", "reps", "bias", "sd", "t1e", "rel_bias", "mcse")


@dataclass(frozen=True)
class RunResult:
    scenario: Scenario
    cells: tuple  # (spec token, estimator) per column of estimates
    estimates: np.ndarray  # reps x cells
    ses: np.ndarray
    rows: tuple = field(default=())


def _cells(scenario, specs, estimators):
    cells, pipes = [], []
    for spec in specs:
        for est in estimators:
            p = build_pipeline(est, spec, scenario)
            if p is not None:
                cells.append((spec.token, est))
                pipes.append(p)
    return tuple(cells), PipelineBatch(tuple(pipes))


def _replicate(args):
    scenario, batch, r = args
    data = generate(scenario, rng_stream(scenario.seed, r, 0)).dataset
    est = batch(data)
    se = np.full(est.shape, np.nan)
    if scenario.effect == "null" and scenario.boot >= 2:
        res = bootstrap(batch, data, scenario.boot, scenario.seed, key=(r, 1), estimate=est, raise_on_fail=False)
        se = np.where(np.asarray(res.n_failed) <= 0.05 * scenario.boot, res.se, np.nan)
    return est, np.reshape(se, est.shape)


def _replicate_chunk(args):
    scenario, batch, rs = args
    return [_replicate((scenario, batch, r)) for r in rs]


def run(
    scenario: Scenario,
    specs: Sequence[ModelSpec] | None = None,
    estimators: Sequence[str] = ESTIMATORS,
    threads: int = 1,
    max_fail: float = 0.05,
    truth_value: Truth | None = None,
) -> RunResult:
    """Run all replicates of ``scenario`` and summarize each (spec, estimator) cell.

    Replicate ``r`` draws its data from ``rng_stream(seed, r, 0)`` and its
    bootstrap resamples from ``rng_stream(seed, r, 1, b)``, so the result
    does not depend on ``threads``. Bootstrap SEs (hence type I error) are
    computed only for null scenarios.

    Raises
    ------
    EstimatorFailed
        If more than ``max_fail`` of the replicates fail for some cell.
    """
    if specs is None:
        specs = [ModelSpec.parse(s) for s in DEFAULT_SPECS[scenario.censoring]]
    cells, batch = _cells(scenario, specs, estimators)
    if not cells:
        return RunResult(scenario, (), np.zeros((scenario.reps, 0)), np.zeros((scenario.reps, 0)), ())
    threads = max(1, int(threads))
    if threads == 1:
        out = [_replicate((scenario, batch, r)) for r in range(scenario.reps)]
    else:
        chunks = [list(c) for c in np.array_split(np.arange(scenario.reps), min(threads * 4, scenario.reps))]
        with ProcessPoolExecutor(threads) as ex:
            out = [item for part in ex.map(_replicate_chunk, [(scenario, batch, c) for c in chunks]) for item in part]
    est = np.array([o[0] for o in out])
    se = np.array([o[1] for o in out])
    tr = truth(scenario) if truth_value is None else truth_value
    rows = summarize(scenario, cells, est, se, tr)
    for row in rows:
        if row.n_failed > max_fail * scenario.reps:
            raise EstimatorFailed(row.n_failed, scenario.reps)
    return RunResult(scenario, cells, est, se, tuple(rows))


def summarize(scenario, cells, est, se, tr: Truth):
    rows = []
    for j, (spec, name) in enumerate(cells):
        target = tr.psi if name in HR_ESTIMATORS else tr.zeta
        e = est[:, j]
        ok = np.isfinite(e)
        k = int(ok.sum())
        bias = float(e[ok].mean() - target) if k else float("nan")
        sd = float(e[ok].std(ddof=1)) if k > 1 else float("nan")
        mcse = sd / math.sqrt(k) if k > 1 else float("nan")
        t1e = float("nan")
        n_failed = scenario.reps - k
        if scenario.effect == "null":
            s = se[:, j]
            both = ok & np.isfinite(s) & (s > 0)
            if scenario.boot >= 2:
                n_failed = scenario.reps - int(both.sum())
                if both.any():
                    t1e = float(np.mean(np.abs(e[both] / s[both]) > 1.959963984540054))
        rel = bias / target if target != 0 else float("nan")
        rows.append(SummaryRow(scenario.id, spec, name, scenario.n, k, bias, sd, t1e, rel, mcse, n_failed, target))
    return rows


class InflationResult(NamedTuple):
    se_weighted: float
    se_unweighted: float
    ratio: float
    n_ok: int


def variance_inflation(
    n: int = 80,
    reps: int = 2000,
    seed: int = 20240101,
    outcome: str = "right",
    noise_vars: int = 0,
) -> InflationResult:
    """Empirical SE of the Cox log hazard ratio with and without wrong IPT weights.

    Null scenario with independent censoring. Both fits use the same
    outcome terms (``outcome`` is "right" or "wrong"); the weighted fit
    takes its propensity from the misspecified terms plus ``noise_vars``
    independent standard normal covariates. Replicates where either fit
    fails are dropped.
    """
    scenario = Scenario("independent", "null", n=n, reps=reps, seed=seed)
    cov = RIGHT_TERMS if outcome == "right" else WRONG_TERMS
    noise = tuple(f"noise{j + 1}" for j in range(noise_vars))
    weighted = HazardRatioPipeline("cox", WRONG_TERMS + noise, cov)
    plain = HazardRatioPipeline("cox", None, cov)
    pairs = []
    for r in range(reps):
        rng = rng_stream(seed, r, 2)
        ds = generate(scenario, rng).dataset
        if noise_vars:
            extra = rng.standard_normal((ds.n, noise_vars))
            ds = Dataset(ds.time, ds.event, ds.exposure, np.column_stack([ds.covariates, extra]),
                         ds.covariate_names + noise)
        try:
            pairs.append((weighted(ds), plain(ds)))
        except (SurvdrError, np.linalg.LinAlgError):
            continue
    est = np.array(pairs)
    sw, su = (float(np.std(est[:, j], ddof=1)) for j in (0, 1))
    return InflationResult(sw, su, sw / su, len(pairs))


# ---------------------------------------------------------------------------
# config files and output


@dataclass(frozen=True)
class SimConfig:
    censoring: tuple = ("independent",)
    effect: tuple = EFFECTS
    n: int | None = None
    reps: int | None = None
    boot: int | None = None
    seed: int = 20240101
    t: float = EVAL_TIME
    specs: tuple | None = None
    estimators: tuple = ESTIMATORS
    profile: str = "desk"

    def scenarios(self):
        prof = PROFILES[self.profile]
        n = prof["n"] if self.n is None else self.n
        reps = prof["reps"] if self.reps is None else self.reps
        boot = prof["boot"] if self.boot is None else self.boot
        return [
            Scenario(c, e, n=n, reps=reps, seed=self.seed, boot=boot, t=self.t)
            for c in self.censoring
            for e in self.effect
        ]

    def specs_for(self, scenario):
        toks = DEFAULT_SPECS[scenario.censoring] if self.specs is None else self.specs
        return [ModelSpec.parse(s) for s in toks]

    def serialize(self) -> str:
        lines = [
            f"censoring = {', '.join(self.censoring)}",
            f"effect = {', '.join(self.effect)}",
            f"profile = {self.profile}",
        ]
        for key in ("n", "reps", "boot"):
            if getattr(self, key) is not None:
                lines.append(f"{key} = {getattr(self, key)}")
        lines.append(f"seed = {self.seed}")
        lines.append(f"t = {self.t!r}")
        if self.specs is not None:
            lines.append(f"specs = {', '.join(self.specs)}")
        lines.append(f"estimators = {', '.join(self.estimators)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()[:12]


CONFIG_KEYS = ("censoring", "effect", "n", "reps", "boot", "seed", "t", "specs", "estimators", "profile")


def _list(value):
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _convert(key, value, line):
    try:
        if key in ("n", "reps", "boot", "seed"):
            v = int(value)
            if v < 0:
                raise ValueError
            return v
        if key == "t":
            v = float(value)
            if not math.isfinite(v) or v < 0:
                raise ValueError
            return v
        if key == "profile":
            if value not in PROFILES:
                raise ValueError
            return value
        items = _list(value)
        if not items:
            raise ValueError
        allowed = {"censoring": CENSORING_KINDS, "effect": EFFECTS, "estimators": ESTIMATORS}.get(key)
        if allowed is not None and any(i not in allowed for i in items):
            raise ValueError
        if key == "specs":
            for i in items:
                ModelSpec.parse(i)
        return items
    except ValueError:
        raise ConfigError(f"invalid value {value!r}", line=line, key=key) from None


def parse_config(text: str, **overrides) -> SimConfig:
    """Parse ``key = value`` lines (``#`` starts a comment).

    Raises
    ------
    ConfigError
        Naming the line number and key for unknown keys, duplicate keys,
        missing ``=``, or invalid values.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno, key=line.split()[0])
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError("unknown key", line=lineno, key=key)
        if key in values:
            raise ConfigError("duplicate key", line=lineno, key=key)
        values[key] = _convert(key, value, lineno)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "n" in values and values["n"] < 50:
        raise ConfigError("n must be at least 50", key="n")
    if "reps" in values and values["reps"] < 1:
        raise ConfigError("reps must be at least 1", key="reps")
    return SimConfig(**values)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def provenance(seed, digest) -> str:
    return f"# survdr {__version__} seed={seed} config={digest}"


def rows_to_csv(rows: Sequence[SummaryRow], seed, digest) -> str:
    lines = [provenance(seed, digest), ",".join(COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in COLUMNS))
    return "\n".join(lines) + "\n"


def rows_to_table(rows: Sequence[SummaryRow]) -> str:
    """Aligned text table grouped by scenario, one line per (spec, estimator)."""
    out = []
    by_scenario = {}
    for r in rows:
        by_scenario.setdefault(r.scenario, []).append(r)
    for sid, group in by_scenario.items():
        zeta = [r.truth for r in group if r.estimator in SD_ESTIMATORS]
        head = f"{sid}"
        if zeta:
            head += f"  (zeta true = {zeta[0]:.4f})"
        out.append(head)
        labels = [ModelSpec.parse(r.spec).label for r in group]
        w = max(len(x) for x in labels + ["spec"])
        out.append(f"  {'spec':{w}s}  {'estimator':13s} {'bias (sd)':>19s} {'rel.bias':>9s} {'T1E':>6s} {'reps':>5s}")
        for label, r in zip(labels, group):
            rel = "" if math.isnan(r.rel_bias) else f"{100 * r.rel_bias:.1f}%"
            t1e = "" if math.isnan(r.t1e) else f"{r.t1e:.3f}"
            out.append(
                f"  {label:{w}s}  {r.estimator:13s} "
                f"{r.bias:>+9.4f} ({r.sd:.4f}) {rel:>9s} {t1e:>6s} {r.reps:>5d}"
            )
        out.append("")
    return "\n".join(out)
