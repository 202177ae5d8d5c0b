"""Command-line interface: ``srpmask fit | simulate | bench``.

Settings are merged as defaults < ``--config`` JSON file < ``SRPMASK_*``
environment variables < command-line flags. Errors are written to stderr as
one JSON object and mapped to exit codes (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

from .data import FleetValidationError, failure_count_table, format_failure_table, read_fleet, write_fleet
from .distributions import Family, LifetimeModel, moment_match, reliability, rng_stream
from .em import EmConfig, SingularInformationError, _jsonable, default_grid, info_criteria, run_em
from .enumeration import BudgetExceededError, EnumerationBudget, NonConvergenceError, exact_mle

log = logging.getLogger("srpmask")

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATOR, EXIT_BUDGET, EXIT_IO = 0, 2, 3, 4, 5
EXIT_CODES = {
    "ok": EXIT_OK,
    "validation": EXIT_VALIDATION,
    "estimator": EXIT_ESTIMATOR,
    "budget_exceeded": EXIT_BUDGET,
    "io": EXIT_IO,
}

ENV_PREFIX = "SRPMASK_"
FAMILIES = tuple(f.value for f in Family)

DEFAULTS = {
    "m": None,
    "family": "weibull",
    "estimator": "em",
    "seed": 0,
    "level": 0.95,
    "threads": 1,
    "out": ".",
    "mode": "renewal",
    "init": None,
    "L": 1000,
    "tol": 1e-4,
    "max_iters": 200,
    "weighting": "importance",
    "B": 20000,
    "burn_in": 10000,
    "thin": 10,
    "chains": 4,
    "max_configs": 10**7,
    "grid_points": 200,
    "n": 100,
    "mc": 8.0,
    "params": None,
    "format": "csv",
    "estimators": None,
    "verbose": False,
}

# how environment strings are converted
_TYPES = {
    "m": int, "seed": int, "level": float, "threads": int, "L": int, "tol": float, "max_iters": int,
    "B": int, "burn_in": int, "thin": int, "chains": int, "max_configs": int, "grid_points": int,
    "n": int, "mc": float, "verbose": lambda s: s.lower() in ("1", "true", "yes"),
    "init": lambda s: [float(x) for x in s.replace(",", " ").split()],
    "params": lambda s: [float(x) for x in s.replace(",", " ").split()],
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, **details):
        super().__init__(message)
        self.kind = kind
        self.details = details


def _add_common(p):
    p.add_argument("--m", type=int, help="sockets per system")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="maximum worker processes")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="JSON file with settings (keys as flag names)")
    p.add_argument("--verbose", "-v", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srpmask", argument_default=argparse.SUPPRESS,
                                 description="Component lifetime estimation from masked repairable-system data.")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", argument_default=argparse.SUPPRESS, help="fit lifetime models to a fleet file")
    f.add_argument("data", help="fleet CSV (system_id,event_type,time) or JSON")
    _add_common(f)
    f.add_argument("--family", choices=FAMILIES + ("all",))
    f.add_argument("--estimator", choices=("em", "bayes", "enum"))
    f.add_argument("--level", type=float, help="interval level in (0, 1)")
    f.add_argument("--init", type=float, nargs=2, metavar=("A", "B"))
    f.add_argument("--L", type=int, help="E-step sample size")
    f.add_argument("--tol", type=float)
    f.add_argument("--max-iters", dest="max_iters", type=int)
    f.add_argument("--weighting", choices=("importance", "none"))
    f.add_argument("--B", type=int, help="MCMC iterations per chain")
    f.add_argument("--burn-in", dest="burn_in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--max-configs", dest="max_configs", type=int, help="enumeration budget")
    f.add_argument("--grid-points", dest="grid_points", type=int)

    s = sub.add_parser("simulate", argument_default=argparse.SUPPRESS, help="simulate a fleet")
    _add_common(s)
    s.add_argument("--n", type=int, help="number of systems")
    s.add_argument("--mc", type=float, help="mean censoring time")
    s.add_argument("--mode", choices=("renewal", "paper-literal"))
    s.add_argument("--family", choices=FAMILIES, help="component family (with --params)")
    s.add_argument("--params", type=float, nargs=2, metavar=("A", "B"))
    s.add_argument("--format", choices=("csv", "json"))

    b = sub.add_parser("bench", argument_default=argparse.SUPPRESS, help="run a JSON scenario grid")
    b.add_argument("grid", help="scenario grid JSON")
    _add_common(b)
    b.add_argument("--estimator", dest="estimators", help="comma-separated subset of em,bayes,enum")
    b.add_argument("--mode", choices=("renewal", "paper-literal"))
    return ap


def resolve_settings(ns: argparse.Namespace, environ=None) -> dict:
    """Merge defaults, config file, environment and flags (later wins)."""
    environ = os.environ if environ is None else environ
    given = vars(ns)
    out = dict(DEFAULTS)
    cfg_path = given.get("config") or environ.get(ENV_PREFIX + "CONFIG")
    if cfg_path:
        try:
            with open(cfg_path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise CliError("io", f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError("validation", f"config file is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise CliError("validation", "config file must hold a JSON object")
        out.update({k.replace("-", "_"): v for k, v in cfg.items()})
    for key in DEFAULTS:
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            try:
                out[key] = _TYPES.get(key, str)(raw)
            except ValueError:
                raise CliError("validation", f"bad value for {ENV_PREFIX + key.upper()}: {raw!r}") from None
    out.update({k: v for k, v in given.items() if v is not None})
    if not 0 < float(out["level"]) < 1:
        raise CliError("validation", "--level must lie in (0, 1)")
    return out


# ---------------------------------------------------------------------------
# helpers


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError("io", f"cannot create output directory: {exc}") from None


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError("io", f"cannot write {path}: {exc}") from None


def _write_curve(path, rows):
    lines = ["t,estimate,lower,upper"]
    for t, e, lo, hi in rows:
        lines.append(",".join("" if not math.isfinite(v) else repr(float(v)) for v in (t, e, lo, hi)))
    _write_text(path, "\n".join(lines) + "\n")


def _print_table(rows, columns, best_col, best_fn):
    vals = [r[best_col] for r in rows]
    finite = [v for v in vals if v is not None and math.isfinite(v)]
    best = best_fn(finite) if finite else None
    print("family       " + " ".join(f"{c:>12}" for c in columns))
    for r in rows:
        cells = []
        for c in columns:
            v = r.get(c)
            cells.append(f"{v:12.2f}" if isinstance(v, float) and math.isfinite(v) else f"{'-':>12}")
        mark = " *" if best is not None and r[best_col] == best else ""
        print(f"{r['family']:<12} " + " ".join(cells) + mark)


def _fit_em(fleet, family, st, out_dir):
    cfg = EmConfig(L=st["L"], tol=st["tol"], max_iters=st["max_iters"], seed=st["seed"], level=st["level"],
                   weighting=st["weighting"], exact_budget=st["max_configs"])
    rep = run_em(fleet, family, st["init"], cfg)
    _write_text(os.path.join(out_dir, f"report_{family}.json"), rep.to_json())
    grid = default_grid(rep.model, st["grid_points"])
    _write_curve(os.path.join(out_dir, f"reliability_{family}.csv"), rep.reliability_band(grid))
    row = {"family": family, "l": rep.q_final, **rep.criteria}
    return row, rep.converged


def _fit_enum(fleet, family, st, out_dir):
    budget = EnumerationBudget(st["max_configs"])
    model, ll = exact_mle(fleet, family, st["init"], budget)
    crit = info_criteria(2, fleet.n, ll)
    doc = {"estimator": "enum", "family": family, "params": dict(zip(model.family.param_names, model.params)),
           "log_lik": ll, "criteria": crit, "n": fleet.n}
    _write_text(os.path.join(out_dir, f"report_{family}.json"), json.dumps(_jsonable(doc), indent=2))
    grid = default_grid(model, st["grid_points"])
    rows = [(t, float(reliability(model, t)), math.nan, math.nan) for t in grid]
    _write_curve(os.path.join(out_dir, f"reliability_{family}.csv"), rows)
    return {"family": family, "l": ll, **crit}, True


def _fit_bayes(fleet, family, st, out_dir):
    from .bayes import McmcConfig, cpo_lpml, gelman_rubin, posterior_summary, run_mwg

    cfg = McmcConfig(B=st["B"], burn_in=st["burn_in"], thin=st["thin"], n_chains=st["chains"], seed=st["seed"],
                     init=tuple(st["init"]) if st["init"] else None, threads=st["threads"])
    sample = run_mwg(fleet, family, None, cfg)
    pilot = LifetimeModel(Family.parse(family), tuple(sample.pooled().mean(axis=0)))
    grid = default_grid(pilot, st["grid_points"])
    summ = posterior_summary(sample, st["level"], grid)
    _, lpml = cpo_lpml(sample)
    psrf = gelman_rubin(sample.draws).tolist() if sample.n_chains > 1 else None
    doc = {"estimator": "bayes", "family": family, "summary": {k: v for k, v in summ.items() if k != "reliability"},
           "lpml": lpml, "gelman_rubin": psrf, "acceptance": sample.acceptance.tolist(), "flags": sample.flags}
    _write_text(os.path.join(out_dir, f"posterior_{family}.json"), json.dumps(_jsonable(doc), indent=2))
    sample.to_csv(os.path.join(out_dir, f"draws_{family}.csv"))
    _write_curve(os.path.join(out_dir, f"reliability_{family}.csv"), summ["reliability"])
    return {"family": family, "LPML": lpml}, not sample.flags


def cmd_fit(st) -> int:
    if st["m"] is None:
        raise CliError("validation", "--m is required")
    try:
        fleet = read_fleet(st["data"], int(st["m"]))
    except FileNotFoundError as exc:
        raise CliError("io", f"cannot read input: {exc}") from None
    _ensure_dir(st["out"])
    families = FAMILIES if st["family"] == "all" else (st["family"],)
    fitter = {"em": _fit_em, "enum": _fit_enum, "bayes": _fit_bayes}[st["estimator"]]
    rows, ok = [], True
    for fam in families:
        row, good = fitter(fleet, fam, st, st["out"])
        rows.append(row)
        ok &= good
    if st["estimator"] == "bayes":
        _print_table(rows, ("LPML",), "LPML", max)
    else:
        _print_table(rows, ("l", "AIC", "AICc", "BIC", "HQIC", "CAIC"), "AIC", min)
    if not ok:
        raise CliError("estimator", "estimator did not converge; reports were written with convergence flags")
    return EXIT_OK


def cmd_simulate(st) -> int:
    from .sim import Scenario, generate_fleet

    if st["m"] is None:
        raise CliError("validation", "--m is required")
    comp = None
    if st["params"] is not None:
        comp = LifetimeModel(Family.parse(st["family"]), tuple(float(x) for x in st["params"]))
    elif st["family"] != "weibull":
        comp = moment_match(st["family"], 7.0, 4.0)
    sc = Scenario(n=int(st["n"]), m=int(st["m"]), m_c=float(st["mc"]), component_model=comp, seed=int(st["seed"]),
                  mode=st["mode"])
    sim = generate_fleet(sc, rng_stream(sc.seed, 0, 0))
    _ensure_dir(st["out"])
    ext = "json" if st["format"] == "json" else "csv"
    try:
        write_fleet(sim.fleet, os.path.join(st["out"], f"fleet.{ext}"))
    except OSError as exc:
        raise CliError("io", f"cannot write fleet: {exc}") from None
    _write_text(os.path.join(st["out"], "truth.json"), sim.truth_json())
    print(format_failure_table(failure_count_table(sim.fleet)))
    return EXIT_OK


def cmd_bench(st) -> int:
    from .sim import load_grid, run_scenarios, summarize, write_replicates_csv, write_summary_csv

    try:
        scenarios, estimators, options = load_grid(st["grid"])
    except OSError as exc:
        raise CliError("io", f"cannot read grid: {exc}") from None
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError("validation", str(exc)) from None
    if st.get("estimators"):
        estimators = tuple(e.strip() for e in str(st["estimators"]).split(",") if e.strip())
    _ensure_dir(st["out"])
    results = run_scenarios(scenarios, estimators, options=options, threads=int(st["threads"]))
    try:
        write_replicates_csv(results, os.path.join(st["out"], "replicates.csv"))
        write_summary_csv(summarize(results), os.path.join(st["out"], "summary.csv"))
    except OSError as exc:
        raise CliError("io", f"cannot write results: {exc}") from None
    bad = [r for r in results if r.status in ("failed", "nonconverged", "flagged")]
    for row in summarize(results):
        print(f"{row['scenario_id']:<24} {row['estimator']:<6} ok={row['n_ok']} failed={row['n_failed']} "
              f"budget_exceeded={row['n_budget_exceeded']} mae_mean={row['mae_mean']:.4f}")
    if bad:
        raise CliError("estimator", f"{len(bad)} replicate fits failed or did not converge", count=len(bad))
    return EXIT_OK


def _emit_error(kind, message, **details):
    doc = {"error": kind, "exit_code": EXIT_CODES[kind], "message": message}
    doc.update({k: v for k, v in details.items() if v is not None})
    print(json.dumps(_jsonable(doc)), file=sys.stderr)
    return EXIT_CODES[kind]


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        st = resolve_settings(ns)
        logging.basicConfig(level=logging.INFO if st["verbose"] else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return {"fit": cmd_fit, "simulate": cmd_simulate, "bench": cmd_bench}[ns.command](st)
    except CliError as exc:
        return _emit_error(exc.kind, str(exc), **exc.details)
    except FleetValidationError as exc:
        return _emit_error("validation", str(exc), code=exc.code, system_id=exc.system_id, line=exc.line)
    except BudgetExceededError as exc:
        return _emit_error("budget_exceeded", str(exc), system_id=exc.system_id, configurations=exc.total,
                           system_configurations=exc.configs, max_configs=exc.max_configs)
    except (NonConvergenceError, SingularInformationError) as exc:
        return _emit_error("estimator", str(exc))
    except OSError as exc:
        return _emit_error("io", str(exc))
    except ValueError as exc:
        return _emit_error("validation", str(exc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
