"""Command-line entry point: ``rlsforget run | verify | sweep``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .analysis import BOUND_TOL, BoundMonitor, rmse
from .estimators import AlgoParams, Algorithm, check_delta_admissible
from .harness import LYAPUNOV_TOL, ExperimentConfig
from .wingrock import regressor

OUT_ENV = "RLSFORGET_OUT"
# tolerance for comparing recomputed summary figures against stored ones
SUMMARY_RTOL = 1e-9

log = logging.getLogger("rlsforget")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _algo_list(text: str) -> list[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    if not names:
        raise argparse.ArgumentTypeError("empty algorithm list")
    try:
        return [Algorithm.parse(n).value for n in names]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _case(text: str) -> str:
    if text.upper() not in ("C1", "C2"):
        raise argparse.ArgumentTypeError(f"unknown case {text!r} (choose C1 or C2)")
    return text.upper()


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rlsforget", description="Forgetting-factor RLS experiments on the wing-rock model.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate a case and write trace.csv and summary.txt")
    r.add_argument("--case", type=_case, help="builtin case C1 or C2")
    r.add_argument("--config", type=Path, help="flat key = value config file; flags override it")
    r.add_argument("--algo", type=_algo_list, help="comma-separated subset of ef,df1,df2,pef")
    r.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./out)")
    r.add_argument("--seed", type=int)
    r.add_argument("--mu", type=float, help="forgetting factor applied to every selected algorithm")
    r.add_argument("--delta", type=float, help="pef regularisation delta")
    r.add_argument("--duration", type=float, help="simulated seconds")
    r.add_argument("--plot-script", action="store_true", help="also write a matplotlib plotting stub")

    v = sub.add_parser("verify", help="recheck bounds, Lyapunov monotonicity and summary figures of a stored trace")
    v.add_argument("--trace", type=Path, required=True)
    v.add_argument("--summary", type=Path, help="defaults to summary.txt next to the trace")

    s = sub.add_parser("sweep", help="run one algorithm over several values of mu or delta")
    s.add_argument("--param", choices=("mu", "delta"), required=True)
    s.add_argument("--values", type=float, nargs="+", required=True)
    s.add_argument("--case", type=_case, default="C1")
    s.add_argument("--algo", type=_algo_list, default=["pef"])
    s.add_argument("--out", type=Path)
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float)
    return p


def _out_dir(arg: Path | None) -> Path:
    if arg is not None:
        return arg
    return Path(os.environ.get(OUT_ENV, "out"))


def config_from_args(args) -> ExperimentConfig:
    if args.config is None and args.case is None:
        raise UsageError("run: one of --case or --config is required")
    if args.config is not None:
        try:
            kv = harness.read_kv(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if args.case is not None:
            kv["case"] = args.case
        cfg = harness.config_from_mapping(kv)
    else:
        cfg = harness.builtin_case(args.case)
    return apply_overrides(cfg, algos=args.algo, seed=args.seed, mu=args.mu, delta=args.delta, duration=args.duration)


def apply_overrides(cfg: ExperimentConfig, algos=None, seed=None, mu=None, delta=None, duration=None) -> ExperimentConfig:
    params = cfg.algorithms
    if algos is not None:
        by_kind = {a.kind.value: a for a in params}
        params = [by_kind.get(k) or harness.default_algorithms([k])[0] for k in algos]
    if mu is not None:
        params = [dataclasses.replace(a, mu=mu) for a in params]
    if delta is not None:
        if not any(a.kind is Algorithm.PROPOSED for a in params):
            raise UsageError("--delta only applies to pef")
        params = [dataclasses.replace(a, delta=delta) if a.kind is Algorithm.PROPOSED else a for a in params]
    changes = {"algorithms": params}
    if seed is not None:
        changes["schedule"] = dataclasses.replace(cfg.schedule, rng_seed=seed)
    if duration is not None:
        changes["duration"] = duration
    return dataclasses.replace(cfg, **changes)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    trace, summary = harness.run(cfg)
    paths = harness.write_outputs(trace, summary, _out_dir(args.out), plot_script=args.plot_script)
    for p in paths:
        print(p)
    if summary.aborted:
        print(f"run aborted: {summary.abort_reason}", file=sys.stderr)
        return 1
    return 0


def _close(a: float, b: float) -> bool:
    if math.isnan(a) and math.isnan(b):
        return True
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= SUMMARY_RTOL * max(1.0, abs(a), abs(b))


def verify_trace(trace_path: Path, summary_path: Path | None = None) -> list[str]:
    """Recompute what can be recomputed from a stored trace. Returns a list of problems."""
    summary_path = summary_path or trace_path.with_name("summary.txt")
    recs = harness.read_csv(trace_path)
    kv = harness.read_kv(summary_path.read_text(encoding="utf-8"))
    cfg_kv = {k[len("config."):]: v for k, v in kv.items() if k.startswith("config.")}
    cfg = harness.config_from_mapping(cfg_kv)
    sched = cfg.schedule
    problems: list[str] = []

    n_steps = len({r.t for r in recs})
    if int(kv.get("run.n_steps", -1)) != n_steps:
        problems.append(f"run.n_steps = {kv.get('run.n_steps')} but trace holds {n_steps} steps")

    R0 = cfg.R0
    for params in cfg.algorithms:
        name = params.kind.value
        rows = [r for r in recs if r.algo == name]
        if len(rows) != n_steps:
            problems.append(f"{name}: {len(rows)} rows for {n_steps} steps")
            continue
        admissible = check_delta_admissible(params.mu, params.delta, R0) if params.kind is Algorithm.PROPOSED else None
        mon = BoundMonitor(params, float(np.linalg.eigvalsh(R0)[-1]), admissible)
        lyap_claimed = params.kind is Algorithm.DF2 or (params.kind is Algorithm.PROPOSED and admissible)
        lyap_bad = 0
        V_prev = None
        for k, rec in enumerate(rows):
            theta = sched.theta_at(rec.t)
            err = rmse(np.array(rec.theta_hat), theta)
            if abs(err - rec.rmse) > 1e-12 * max(1.0, err):
                problems.append(f"{name} t={rec.t}: stored rmse {rec.rmse} != recomputed {err}")
            mon.push(rec.lam_min_R, rec.lam_max_R, regressor((rec.x1, rec.x2)))
            if V_prev is not None and harness._lyapunov_monitored(sched, rec.t, rows[k - 1].t):
                if rec.V > V_prev + LYAPUNOV_TOL:
                    lyap_bad += 1
            V_prev = rec.V
        rep = mon.report
        if rep.violations:
            problems.append(
                f"{name}: {rep.lower_violations} lower / {rep.upper_violations} upper / "
                f"{rep.finiteness_violations} finiteness bound violations (tol {BOUND_TOL})"
            )
        if lyap_claimed and lyap_bad:
            problems.append(f"{name}: {lyap_bad} Lyapunov monotonicity violations")
        if rows:
            checks = {
                "final_rmse": rows[-1].rmse,
                "max_V": max(r.V for r in rows),
                "bounds.violations": float(rep.violations),
            }
            for key, val in checks.items():
                stored = kv.get(f"{name}.{key}")
                if stored is None:
                    problems.append(f"summary lacks {name}.{key}")
                elif not _close(float(stored), float(val)):
                    problems.append(f"{name}.{key}: summary {stored} vs trace {val!r}")
    return problems


def cmd_verify(args) -> int:
    try:
        problems = verify_trace(args.trace, args.summary)
    except (OSError, ValueError) as exc:
        print(f"verify: {exc}", file=sys.stderr)
        return 2
    for p in problems:
        print(p)
    print("verify: OK" if not problems else f"verify: {len(problems)} problem(s)")
    return 1 if problems else 0


def cmd_sweep(args) -> int:
    base = harness.builtin_case(args.case)
    if len(args.algo) != 1:
        raise UsageError("sweep takes exactly one algorithm")
    if args.param == "delta" and args.algo[0] != "pef":
        raise UsageError("--param delta only applies to pef")
    out = _out_dir(args.out)
    lines = []
    status = 0
    for value in args.values:
        over = {args.param: value}
        cfg = apply_overrides(base, algos=args.algo, seed=args.seed, duration=args.duration, **over)
        trace, summary = harness.run(cfg)
        sub = out / f"{args.param}_{value!r}"
        harness.write_outputs(trace, summary, sub)
        name = args.algo[0]
        metrics = harness.adaptation_metrics(trace, cfg, name)
        s = summary.algos[name]
        lines.append(
            f"{args.param}={value!r} final_rmse={s.final_rmse!r} settle_time={metrics['settle_time']!r} "
            f"noise_growth={metrics['noise_growth']!r} aborted={int(summary.aborted)}"
        )
        status |= int(summary.aborted)
    (out / "sweep.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        handler = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep}[args.command]
        return handler(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid parameter values (mu out of range, bad config keys, ...)
        print(f"rlsforget: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"rlsforget: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
