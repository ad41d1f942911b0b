"""Command-line interface: ``survdr simulate | analyze | oracle | selftest``.

Exit codes: 0 success, 2 configuration or data error, 3 when more than 5% of
replicates (simulation or bootstrap) failed.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, EstimatorFailed, SurvdrError
from .estimators import PipelineBatch, SurvDiffPipeline, Z95, bootstrap
from .survdata import load_csv, term_covariates

EXIT_OK, EXIT_DATA, EXIT_FAILED = 0, 2, 3

ANALYZE_METHODS = ("stdcox", "drbin", "drsurv", "drpseudo")
METHOD_LABELS = {
    "stdcox": "standardized IPTW Cox",
    "drbin": "DR binomial regression",
    "drsurv": "DR survival",
    "drpseudo": "DR pseudo observations",
}
CENSORING_FLAGS = {"km": "pooled-km", "km-strat": "km-stratified-by-exposure", "cox": "cox"}


def _csv_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _float_list(text):
    try:
        vals = [float(s) for s in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not math.isfinite(v) or v < 0 for v in vals):
        raise argparse.ArgumentTypeError("times must be finite and nonnegative")
    return vals


def _threads(requested):
    env = os.environ.get("SURVDR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, int(requested))


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _provenance(seed, digest):
    return f"# survdr {__version__} seed={seed} config={digest}"


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    from . import simulation as sim

    text = ""
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as err:
            print(f"survdr: cannot read config: {err}", file=sys.stderr)
            return EXIT_DATA
    overrides = dict(
        censoring=tuple(_csv_list(args.censoring)) if args.censoring else None,
        effect=tuple(_csv_list(args.effect)) if args.effect else None,
        specs=tuple(_csv_list(args.specs)) if args.specs else None,
        estimators=tuple(_csv_list(args.estimators)) if args.estimators else None,
        n=args.n, reps=args.reps, boot=args.boot, seed=args.seed, t=args.t, profile=args.profile,
    )
    inline = "\n".join(
        f"{k} = {', '.join(v) if isinstance(v, tuple) else v}" for k, v in overrides.items() if v is not None
    )
    try:
        sim.parse_config(text)
    except SurvdrError as err:
        print(f"survdr: config error: {err}", file=sys.stderr)
        return EXIT_DATA
    try:
        # inline flags go through the same validation as config lines
        sim.parse_config(inline)
        cfg = sim.parse_config(_merge(text, inline))
        specs_by = {s: cfg.specs_for(s) for s in cfg.scenarios()}
    except SurvdrError as err:
        key = getattr(err, "key", None)
        where = f"--{key}" if key else "flags"
        print(f"survdr: invalid {where}: {str(err).split(': ')[-1]}", file=sys.stderr)
        return EXIT_DATA

    threads = _threads(args.threads)
    rows = []
    try:
        for scenario, specs in specs_by.items():
            res = sim.run(scenario, specs, cfg.estimators, threads=threads)
            rows.extend(res.rows)
    except EstimatorFailed as err:
        print(f"survdr: {err}", file=sys.stderr)
        return EXIT_FAILED
    _write(args.out, sim.rows_to_csv(rows, cfg.seed, cfg.digest()))
    table = sim.provenance(cfg.seed, cfg.digest()) + "\n" + sim.rows_to_table(rows)
    if args.table:
        _write(args.table, table)
    elif args.out not in (None, "-"):
        sys.stdout.write(table)
    return EXIT_OK


def _merge(base, inline):
    """Config text where ``inline`` lines replace keys of ``base``."""
    new_keys = {line.split("=", 1)[0].strip() for line in inline.splitlines()}
    kept = [line for line in base.splitlines() if line.split("=", 1)[0].strip() not in new_keys]
    return "\n".join(kept + inline.splitlines()) + "\n"


# ---------------------------------------------------------------------------
# analyze


class AnalyzeRow:
    """One (method, t) line of an analysis report."""

    __slots__ = ("method", "t", "estimate", "se", "ci_lower", "ci_upper", "pct_lower", "pct_upper",
                 "se_method", "n_boot", "n_failed", "error")

    def __init__(self, method, t, **kw):
        self.method, self.t = method, t
        nan = float("nan")
        for name in self.__slots__[2:]:
            setattr(self, name, kw.get(name, nan if name not in ("se_method", "error", "n_boot", "n_failed") else None))


def analyze_columns(percentile):
    cols = ["method", "t", "estimate", "se", "ci_lower", "ci_upper"]
    if percentile:
        cols += ["pct_lower", "pct_upper"]
    return cols + ["se_method", "n_boot", "n_failed", "error"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return str(v).replace(",", ";").replace("\n", " ")


def analyze_dataset(dataset, terms, times, methods, censoring="km", boot=200, seed=1, contrast="x1-x0",
                    n_jobs=1):
    """Fit every (method, t) pair and bootstrap them jointly.

    Point estimates are computed one row at a time so an error in one row is
    reported without affecting the others. All rows share the same bootstrap
    resamples.
    """
    terms = tuple(terms)
    kind = CENSORING_FLAGS[censoring]
    pipes, keys = [], []
    for m in methods:
        for t in times:
            outcome = ("x",) + terms if m in ("drbin", "drpseudo") else terms
            pipes.append(SurvDiffPipeline(m, float(t), propensity_terms=terms, outcome_terms=outcome,
                                          censoring_kind=kind, censoring_terms=("x",) + terms))
            keys.append((m, float(t)))
    sign = 1.0 if contrast == "x1-x0" else -1.0

    rows, est = [], np.full(len(pipes), np.nan)
    for j, (p, (m, t)) in enumerate(zip(pipes, keys)):
        try:
            est[j] = sign * p(dataset)
            rows.append(AnalyzeRow(m, t, estimate=float(est[j])))
        except (SurvdrError, np.linalg.LinAlgError, FloatingPointError) as err:
            rows.append(AnalyzeRow(m, t, error=str(err) or type(err).__name__))

    live = [j for j, r in enumerate(rows) if r.error is None]
    if boot >= 2 and live:
        batch = PipelineBatch(tuple(pipes[j] for j in live))
        res = bootstrap(batch, dataset, boot, seed, n_jobs=n_jobs, estimate=sign * est[live], raise_on_fail=False)
        reps = sign * np.atleast_2d(res.replicates.T).T
        for k, j in enumerate(live):
            r = rows[j]
            r.se_method, r.n_boot = "bootstrap", boot
            col = reps[:, k]
            ok = np.isfinite(col)
            r.n_failed = int(boot - ok.sum())
            if r.n_failed > 0.05 * boot:
                r.error = f"{r.n_failed} of {boot} bootstrap replicates failed (limit is 5%)"
                continue
            r.se = float(np.std(col[ok], ddof=1))
            r.ci_lower, r.ci_upper = r.estimate - Z95 * r.se, r.estimate + Z95 * r.se
            r.pct_lower, r.pct_upper = (float(q) for q in np.quantile(col[ok], [0.025, 0.975]))
    else:
        for j in live:
            rows[j].se_method = "analytic-absent"
    return rows


def analyze_digest(args, terms, data_path) -> str:
    h = hashlib.sha256()
    h.update(Path(data_path).read_bytes())
    canon = [
        args.time_col, args.event_col, args.exposure_col, ",".join(terms), ",".join(f"{t!r}" for t in args.t),
        ",".join(args.methods), args.censoring_model, str(args.boot), str(args.seed), args.contrast,
        str(bool(args.percentile)),
    ]
    h.update("\n".join(canon).encode("utf-8"))
    return h.hexdigest()[:12]


def _short(v):
    return "" if v is None or math.isnan(v) else f"{v:.3f}"


def rows_to_report(rows, contrast) -> str:
    out = [f"contrast: S(t | {'x=1) - S(t | x=0' if contrast == 'x1-x0' else 'x=0) - S(t | x=1'})",
           f"{'model':42s} {'est':>8s} {'se':>8s} {'lower 95':>9s} {'upper 95':>9s}"]
    for t in dict.fromkeys(r.t for r in rows):
        out.append(f"t = {t:g}")
        for r in (r for r in rows if r.t == t):
            label = METHOD_LABELS.get(r.method, r.method)
            if r.se_method == "bootstrap":
                label += " -- bootstrap"
            if r.error is not None and math.isnan(r.estimate):
                out.append(f"  {label:40s} error: {r.error}")
                continue
            cells = "".join(f" {_short(v):>8s}" for v in (r.estimate, r.se))
            cells += "".join(f" {_short(v):>9s}" for v in (r.ci_lower, r.ci_upper))
            line = f"  {label:40s}{cells}"
            if r.error is not None:
                line += f"  ({r.error})"
            out.append(line)
    return "\n".join(out) + "\n"


def cmd_analyze(args) -> int:
    terms = tuple(_csv_list(args.covariates)) if args.covariates else ()
    bad = [m for m in args.methods if m not in ANALYZE_METHODS]
    if bad:
        print(f"survdr: unknown method(s) {', '.join(bad)}; choose from {', '.join(ANALYZE_METHODS)}",
              file=sys.stderr)
        return EXIT_DATA
    try:
        columns = term_covariates(terms)
        dataset = load_csv(args.data, args.time_col, args.event_col, args.exposure_col, columns)
        # fail early on terms that cannot be evaluated on this data
        from .survdata import design_matrix
        design_matrix(dataset, terms)
    except (DataError, OSError) as err:
        print(f"survdr: data error: {err}", file=sys.stderr)
        return EXIT_DATA

    rows = analyze_dataset(dataset, terms, args.t, args.methods, args.censoring_model, args.boot, args.seed,
                           args.contrast, n_jobs=_threads(args.threads))
    digest = analyze_digest(args, terms, args.data)
    cols = analyze_columns(args.percentile)
    lines = [_provenance(args.seed, digest), ",".join(cols)]
    lines += [",".join(_cell(getattr(r, c)) for c in cols) for r in rows]
    csv_text = "\n".join(lines) + "\n"
    report = _provenance(args.seed, digest) + "\n" + rows_to_report(rows, args.contrast)
    if args.out:
        _write(args.out, csv_text)
        sys.stdout.write(report)
    else:
        sys.stdout.write(csv_text)
    if args.report:
        _write(args.report, report)
    budget = any(r.error and "bootstrap replicates failed" in r.error for r in rows)
    return EXIT_FAILED if budget else EXIT_OK


# ---------------------------------------------------------------------------
# oracle and selftest


def cmd_oracle(args) -> int:
    from . import simulation as sim

    try:
        scenario = sim.Scenario(args.censoring, args.effect, t=args.t)
    except (ValueError, SurvdrError) as err:
        print(f"survdr: {err}", file=sys.stderr)
        return EXIT_DATA
    tr = sim.truth(scenario, draws=args.draws, seed=args.seed)
    digest = hashlib.sha256(f"{scenario.id}|{args.t!r}|{args.draws}".encode()).hexdigest()[:12]
    print(_provenance(args.seed, digest))
    print(f"scenario   {scenario.id}")
    print(f"t          {args.t:g}")
    print(f"psi_true   {tr.psi:.6f}")
    print(f"zeta_true  {tr.zeta:.6f}")
    print(f"mcse       {tr.mcse:.6f}")
    print(f"draws      {tr.draws}")
    if args.quadrature:
        print(f"zeta_quad  {sim.truth_quadrature(scenario):.6f}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(verbose=not args.quiet) else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .simulation import CENSORING_KINDS, EFFECTS, EVAL_TIME, PROFILES

    parser = argparse.ArgumentParser(prog="survdr", description="Causal survival estimators with bootstrap inference.")
    parser.add_argument("--version", action="version", version=f"survdr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run simulation scenarios and write a summary CSV")
    p.add_argument("--config", help="key = value config file; inline flags override it")
    p.add_argument("--censoring", help=f"comma list from {', '.join(CENSORING_KINDS)}")
    p.add_argument("--effect", help=f"comma list from {', '.join(EFFECTS)}")
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--boot", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--t", type=float)
    p.add_argument("--specs", help="comma list of weights:outcome[:censoring] tokens, e.g. right:wrong:right")
    p.add_argument("--estimators", help="comma list of estimator names")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--threads", type=int, default=1, help="worker processes (SURVDR_THREADS overrides)")
    p.add_argument("--out", default="-", help="CSV output path (default stdout)")
    p.add_argument("--table", help="text table output path (default stdout when --out is a file)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="estimate survival differences on a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--time-col", required=True)
    p.add_argument("--event-col", required=True)
    p.add_argument("--exposure-col", required=True)
    p.add_argument("--covariates", default="",
                   help="comma list of design terms used in every model, e.g. age,C(size),nodes")
    p.add_argument("--t", type=_float_list, required=True, help="comma list of evaluation times")
    p.add_argument("--methods", type=_csv_list, default=list(ANALYZE_METHODS))
    p.add_argument("--censoring-model", choices=sorted(CENSORING_FLAGS), default="km",
                   help="censoring model for the IPCW weights of drbin and drsurv")
    p.add_argument("--boot", type=int, default=200, help="bootstrap replicates (0 disables)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--contrast", choices=("x1-x0", "x0-x1"), default="x1-x0")
    p.add_argument("--percentile", action="store_true", help="add percentile bootstrap CI columns")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="CSV output path (default stdout; the text report then goes to stdout)")
    p.add_argument("--report", help="also write the text report here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracle", help="print true estimands of a simulation scenario")
    p.add_argument("--censoring", choices=CENSORING_KINDS, default="independent")
    p.add_argument("--effect", choices=EFFECTS, default="null")
    p.add_argument("--t", type=float, default=EVAL_TIME)
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=20240101)
    p.add_argument("--quadrature", action="store_true", help="also print the quadrature value of zeta")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
