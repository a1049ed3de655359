"""Experiment runner: builtin wing-rock cases, simulation loop with online
invariant checks, CSV traces and key-value run summaries."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import estimators as est
from .analysis import BoundMonitor, BoundReport, PeConfig, PeMonitor, noise_growth, rmse, settling_time
from .estimators import AlgoParams, Algorithm
from .linalg import LinalgError
from .wingrock import (
    N_PARAMS,
    THETA_NOMINAL,
    THETA_SHIFTED,
    ControllerGains,
    PlantDivergenceError,
    PlantSchedule,
    PlantState,
    SquareWave,
    aileron,
    integrate_step,
    measure,
    regressor,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    ["t", "x1", "x2", "r", "delta_a", "y", "algo"]
    + [f"theta{i}" for i in range(1, N_PARAMS + 1)]
    + ["V", "rmse", "lam_min_R", "lam_max_R", "beta", "pe", "windup"]
)

LYAPUNOV_TOL = 1e-12
DF2_TOL = 1e-10

EF_MU = 0.99
DF_MU = 0.95
PEF_DELTA = 0.01


@dataclass
class ExperimentConfig:
    case: str = "custom"
    duration: float = 100.0
    dt: float = 0.01
    algorithms: list[AlgoParams] = field(default_factory=list)
    schedule: PlantSchedule = field(default_factory=PlantSchedule)
    gains: ControllerGains = field(default_factory=ControllerGains)
    pe: PeConfig = field(default_factory=PeConfig)
    theta0: tuple[float, ...] = (0.0,) * N_PARAMS
    r0_scale: float = 1.0
    x0: tuple[float, float] = (0.0, 0.0)
    checkpoints: tuple[float, ...] = ()
    out_dir: Path | None = None

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.duration < 0.0:
            raise ValueError(f"duration must be non-negative, got {self.duration}")
        if not self.algorithms:
            raise ValueError("at least one algorithm is required")
        kinds = [a.kind for a in self.algorithms]
        if len(set(kinds)) != len(kinds):
            raise ValueError("each algorithm may appear only once per run")
        if not self.r0_scale > 0.0:
            raise ValueError("r0_scale must be positive")

    @property
    def seed(self) -> int:
        return self.schedule.rng_seed

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def R0(self) -> np.ndarray:
        return self.r0_scale * np.eye(N_PARAMS)

    def algo(self, kind: Algorithm | str) -> AlgoParams:
        kind = Algorithm.parse(kind) if isinstance(kind, str) else kind
        for a in self.algorithms:
            if a.kind is kind:
                return a
        raise KeyError(kind)


def default_algorithms(kinds=("ef", "df1", "df2", "pef")) -> list[AlgoParams]:
    out = []
    for k in kinds:
        kind = Algorithm.parse(k)
        if kind is Algorithm.PROPOSED:
            out.append(AlgoParams(kind, EF_MU, PEF_DELTA))
        elif kind is Algorithm.EF:
            out.append(AlgoParams(kind, EF_MU))
        else:
            out.append(AlgoParams(kind, DF_MU))
    return out


def builtin_case(case_id: str) -> ExperimentConfig:
    """The two wing-rock experiments.

    C1: parameter jump at 50 s, N(0, 0.1) measurement noise from 60 s,
    reference -0.6 +/- 0.3 rad (10 s period) until 60 s.
    C2: nominal parameters throughout, no noise, reference +/- 1 rad until 30 s.
    """
    cid = case_id.strip().upper()
    if cid == "C1":
        return ExperimentConfig(
            case="C1",
            duration=100.0,
            algorithms=default_algorithms(),
            schedule=PlantSchedule(
                [(0.0, np.array(THETA_NOMINAL)), (50.0, np.array(THETA_SHIFTED))],
                noise_start=60.0,
                noise_variance=0.1,
            ),
            gains=ControllerGains(reference=SquareWave(0.3, 10.0, 60.0, -0.6)),
            checkpoints=(50.0, 60.0),
        )
    if cid == "C2":
        return ExperimentConfig(
            case="C2",
            duration=150.0,
            algorithms=default_algorithms(),
            schedule=PlantSchedule([(0.0, np.array(THETA_NOMINAL))]),
            gains=ControllerGains(reference=SquareWave(1.0, 10.0, 30.0, 0.0)),
            checkpoints=(30.0,),
        )
    raise ValueError(f"unknown case {case_id!r}; builtin cases are C1 and C2")


# -- flat key-value config -------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _vec(values) -> str:
    return ",".join(_fmt(float(v)) for v in values)


def _parse_vec(text: str) -> list[float]:
    text = text.strip()
    return [float(p) for p in text.split(",")] if text else []


def serialize_config(cfg: ExperimentConfig) -> str:
    items = config_items(cfg)
    return "".join(f"{k} = {v}\n" for k, v in items)


def config_items(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    ref = cfg.gains.reference
    items = [
        ("case", cfg.case),
        ("duration", _fmt(float(cfg.duration))),
        ("dt", _fmt(float(cfg.dt))),
        ("seed", str(cfg.seed)),
        ("algorithms", ",".join(a.kind.value for a in cfg.algorithms)),
    ]
    for a in cfg.algorithms:
        items.append((f"mu.{a.kind.value}", _fmt(float(a.mu))))
        if a.delta is not None:
            items.append((f"delta.{a.kind.value}", _fmt(float(a.delta))))
    floors = {a.phi_norm_floor for a in cfg.algorithms}
    items += [
        ("phi_norm_floor", _fmt(float(floors.pop())) if len(floors) == 1 else _fmt(est.DEFAULT_PHI_FLOOR)),
        ("theta0", _vec(cfg.theta0)),
        ("r0_scale", _fmt(float(cfg.r0_scale))),
        ("x0", _vec(cfg.x0)),
        ("theta_segments", "; ".join(f"{_fmt(float(t0))}:{_vec(th)}" for t0, th in cfg.schedule.theta_segments)),
        ("noise_start", _fmt(float(cfg.schedule.noise_start))),
        ("noise_variance", _fmt(float(cfg.schedule.noise_variance))),
        ("kp", _fmt(float(cfg.gains.kp))),
        ("kd", _fmt(float(cfg.gains.kd))),
        ("ref_amplitude", _fmt(float(ref.amplitude))),
        ("ref_period", _fmt(float(ref.period))),
        ("ref_until", _fmt(float(ref.active_until))),
        ("ref_offset", _fmt(float(ref.offset))),
        ("pe_window", str(cfg.pe.s)),
        ("pe_gamma", _fmt(float(cfg.pe.gamma))),
        ("checkpoints", _vec(cfg.checkpoints)),
    ]
    return items


def read_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_CONFIG_KEYS = {
    "case", "duration", "dt", "seed", "algorithms", "phi_norm_floor", "theta0", "r0_scale", "x0",
    "theta_segments", "noise_start", "noise_variance", "kp", "kd", "ref_amplitude", "ref_period",
    "ref_until", "ref_offset", "pe_window", "pe_gamma", "checkpoints",
}


def config_from_mapping(kv: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from flat keys. Keys absent from ``kv`` come from ``base``,
    which defaults to the builtin case named by ``kv['case']`` when there is one."""
    for key in kv:
        head = key.split(".", 1)[0]
        if key not in _CONFIG_KEYS and head not in ("mu", "delta"):
            raise ValueError(f"unknown config key {key!r}")
    if base is None:
        case = kv.get("case", "custom")
        base = builtin_case(case) if case.upper() in ("C1", "C2") else None
    if base is None:
        base = ExperimentConfig(algorithms=default_algorithms())

    def get(key, conv, default):
        return conv(kv[key]) if key in kv else default

    floor = get("phi_norm_floor", float, base.algorithms[0].phi_norm_floor)
    names = get("algorithms", lambda s: [p for p in s.split(",") if p.strip()], [a.kind.value for a in base.algorithms])
    algos = []
    for name in names:
        kind = Algorithm.parse(name)
        try:
            template = base.algo(kind)
        except KeyError:
            template = default_algorithms([kind.value])[0]
        mu = get(f"mu.{kind.value}", float, template.mu)
        delta = get(f"delta.{kind.value}", float, template.delta) if kind is Algorithm.PROPOSED else None
        algos.append(AlgoParams(kind, mu, delta, floor))

    if "theta_segments" in kv:
        segs = []
        for chunk in kv["theta_segments"].split(";"):
            t0, vec = chunk.split(":", 1)
            segs.append((float(t0), np.array(_parse_vec(vec))))
    else:
        segs = [(t0, th.copy()) for t0, th in base.schedule.theta_segments]
    sched = PlantSchedule(
        segs,
        noise_start=get("noise_start", float, base.schedule.noise_start),
        noise_variance=get("noise_variance", float, base.schedule.noise_variance),
        rng_seed=get("seed", int, base.schedule.rng_seed),
    )
    bref = base.gains.reference
    gains = ControllerGains(
        kp=get("kp", float, base.gains.kp),
        kd=get("kd", float, base.gains.kd),
        reference=SquareWave(
            get("ref_amplitude", float, bref.amplitude),
            get("ref_period", float, bref.period),
            get("ref_until", float, bref.active_until),
            get("ref_offset", float, bref.offset),
        ),
    )
    return ExperimentConfig(
        case=kv.get("case", base.case),
        duration=get("duration", float, base.duration),
        dt=get("dt", float, base.dt),
        algorithms=algos,
        schedule=sched,
        gains=gains,
        pe=PeConfig(get("pe_window", int, base.pe.s), get("pe_gamma", float, base.pe.gamma)),
        theta0=tuple(get("theta0", _parse_vec, list(base.theta0))),
        r0_scale=get("r0_scale", float, base.r0_scale),
        x0=tuple(get("x0", _parse_vec, list(base.x0))),
        checkpoints=tuple(get("checkpoints", _parse_vec, list(base.checkpoints))),
        out_dir=base.out_dir,
    )


def parse_config(text: str) -> ExperimentConfig:
    return config_from_mapping(read_kv(text))


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# -- running ---------------------------------------------------------------


@dataclass
class StepRecord:
    t: float
    x1: float
    x2: float
    r: float
    delta_a: float
    y: float
    algo: str
    theta_hat: tuple[float, ...]
    V: float
    rmse: float
    lam_min_R: float
    lam_max_R: float
    beta: float | None
    pe: bool
    windup: bool

    def row(self) -> list[str]:
        beta = "" if self.beta is None else repr(float(self.beta))
        nums = [self.t, self.x1, self.x2, self.r, self.delta_a, self.y]
        return (
            [repr(float(v)) for v in nums]
            + [self.algo]
            + [repr(float(v)) for v in self.theta_hat]
            + [repr(float(v)) for v in (self.V, self.rmse, self.lam_min_R, self.lam_max_R)]
            + [beta, "1" if self.pe else "0", "1" if self.windup else "0"]
        )


@dataclass
class AlgoSummary:
    params: AlgoParams
    final_rmse: float = math.nan
    max_V: float = -math.inf
    V_at: dict[str, float] = field(default_factory=dict)
    rmse_at: dict[str, float] = field(default_factory=dict)
    bounds: BoundReport | None = None
    lyapunov_checked: int = 0
    lyapunov_violations: int = 0
    windup_steps: int = 0
    windup_events: int = 0
    first_windup_t: float = math.nan
    df2_checked: int = 0
    df2_violations: int = 0
    beta_negative_steps: int = 0

    @property
    def lyapunov_claimed(self) -> bool:
        """Whether monotone V is a proven property for this configuration."""
        kind = self.params.kind
        if kind is Algorithm.DF2:
            return True
        return kind is Algorithm.PROPOSED and bool(self.bounds and self.bounds.lower_bound is not None)

    def items(self) -> list[tuple[str, float | int]]:
        out: list[tuple[str, float | int]] = [("final_rmse", self.final_rmse), ("max_V", self.max_V)]
        out += [(f"V@{k}", v) for k, v in self.V_at.items()]
        out += [(f"rmse@{k}", v) for k, v in self.rmse_at.items()]
        if self.bounds is not None:
            out += [(f"bounds.{k}", v) for k, v in self.bounds.digest().items()]
        out += [
            ("lyapunov_checked", self.lyapunov_checked),
            ("lyapunov_violations", self.lyapunov_violations),
            ("windup_steps", self.windup_steps),
            ("windup_events", self.windup_events),
            ("first_windup_t", self.first_windup_t),
            ("df2_checked", self.df2_checked),
            ("df2_violations", self.df2_violations),
            ("beta_negative_steps", self.beta_negative_steps),
        ]
        return out


@dataclass
class RunSummary:
    config: ExperimentConfig
    algos: dict[str, AlgoSummary]
    n_steps: int = 0
    aborted: bool = False
    abort_reason: str = ""
    pe_fraction: float = 0.0

    @property
    def claimed_violations(self) -> int:
        """Violations of properties the theory guarantees for these settings."""
        total = 0
        for s in self.algos.values():
            if s.lyapunov_claimed:
                total += s.lyapunov_violations
            if s.bounds is not None:
                total += s.bounds.violations
            total += s.df2_violations
        return total

    def items(self) -> list[tuple[str, str]]:
        out = [(f"config.{k}", v) for k, v in config_items(self.config)]
        out += [
            ("run.n_steps", str(self.n_steps)),
            ("run.aborted", _fmt(self.aborted)),
            ("run.abort_reason", self.abort_reason or "-"),
            ("run.pe_fraction", _fmt(float(self.pe_fraction))),
            ("run.claimed_violations", str(self.claimed_violations)),
        ]
        for name, s in self.algos.items():
            out += [(f"{name}.{k}", _fmt(v if isinstance(v, (int, str)) else float(v)) if v is not None else "-")
                    for k, v in s.items()]
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())


def _checkpoint_index(times: list[float], when: float) -> int | None:
    if not times:
        return None
    i = int(np.searchsorted(np.asarray(times), when - 1e-9))
    return min(i, len(times) - 1)


def _lyapunov_monitored(sched: PlantSchedule, t: float, t_prev: float) -> bool:
    # V is only expected to decrease where y is noise-free and theta is constant
    if sched.noisy_at(t):
        return False
    return bool(np.array_equal(sched.theta_at(t), sched.theta_at(t_prev)))


def _df2_ok(out: est.StepOutput, mu: float) -> bool:
    M = np.eye(out.forgetting.shape[0]) - out.forgetting
    return (
        out.phi_P_phi < 1.0
        and abs(float(np.trace(M)) - (1.0 - mu)) <= DF2_TOL
        and float(np.max(np.abs(M @ M - (1.0 - mu) * M))) <= DF2_TOL
    )


def run(config: ExperimentConfig) -> tuple[list[StepRecord], RunSummary]:
    """Simulate the plant once and drive every configured estimator from the
    same (phi, y) stream, checking invariants online."""
    sched = config.schedule
    gains = config.gains
    rng = sched.make_rng()
    x = PlantState(float(config.x0[0]), float(config.x0[1]), 0.0)
    theta0 = np.array(config.theta0, dtype=float)
    R0 = config.R0

    states: dict[str, est.EstimatorState] = {}
    summaries: dict[str, AlgoSummary] = {}
    bounds: dict[str, BoundMonitor] = {}
    V_prev: dict[str, float] = {}
    theta_init = sched.theta_at(0.0)
    for params in config.algorithms:
        name = params.kind.value
        st = est.init(params, theta0, R0)
        states[name] = st
        bounds[name] = BoundMonitor(params, st.lam_max_R, st.delta_admissible)
        summaries[name] = AlgoSummary(params=params, bounds=bounds[name].report)
        V_prev[name] = est.lyapunov(st, theta_init)

    pe = PeMonitor(config.pe, N_PARAMS)
    trace: list[StepRecord] = []
    times: list[float] = []
    rmse_hist: dict[str, list[float]] = {n: [] for n in states}
    V_hist: dict[str, list[float]] = {n: [] for n in states}
    summary = RunSummary(config=config, algos=summaries)
    pe_count = 0

    try:
        for k in range(config.n_steps):
            t = k * config.dt
            theta = sched.theta_at(t)
            r = gains.reference(t)
            da = aileron(x, r, gains)
            phi = regressor(x)
            y = measure(x, theta, t, sched, rng)
            pe_flag = pe.push(phi)
            pe_count += pe_flag
            monitored = _lyapunov_monitored(sched, t, t - config.dt if k else 0.0)
            for name, st in states.items():
                out = est.step(st, phi, y)
                s = summaries[name]
                V = est.lyapunov(st, theta)
                err = rmse(st.theta_hat, theta)
                bounds[name].push(out.lam_min_R, out.lam_max_R, phi)
                if monitored:
                    s.lyapunov_checked += 1
                    if V > V_prev[name] + LYAPUNOV_TOL:
                        s.lyapunov_violations += 1
                V_prev[name] = V
                if out.windup:
                    s.windup_steps += 1
                    if s.windup_steps == 1 or not trace_windup_prev(trace, name):
                        s.windup_events += 1
                        if math.isnan(s.first_windup_t):
                            s.first_windup_t = t
                if st.params.kind is Algorithm.DF2 and not out.degenerate:
                    s.df2_checked += 1
                    if not _df2_ok(out, st.params.mu):
                        s.df2_violations += 1
                if out.beta is not None and out.beta < 0.0:
                    s.beta_negative_steps += 1
                s.max_V = max(s.max_V, V)
                rmse_hist[name].append(err)
                V_hist[name].append(V)
                trace.append(
                    StepRecord(t, x.x1, x.x2, r, da, y, name, tuple(st.theta_hat.tolist()), V, err,
                               out.lam_min_R, out.lam_max_R, out.beta, pe_flag, out.windup)
                )
            times.append(t)
            x = integrate_step(x, theta, da, config.dt)
    except (PlantDivergenceError, LinalgError, FloatingPointError) as exc:
        summary.aborted = True
        summary.abort_reason = f"t={t:.4f}: {exc}"
        log.warning("run aborted: %s", summary.abort_reason)
        # drop a partially written step so every step has one row per algorithm
        while len(trace) > len(times) * len(states):
            trace.pop()

    summary.n_steps = len(times)
    summary.pe_fraction = pe_count / len(times) if times else 0.0
    for name, s in summaries.items():
        hist_r = rmse_hist[name][: len(times)]
        hist_V = V_hist[name][: len(times)]
        if not hist_r:
            s.max_V = V_prev[name]
            continue
        s.final_rmse = hist_r[-1]
        for cp in config.checkpoints:
            i = _checkpoint_index(times, cp)
            s.V_at[_fmt(float(cp))] = hist_V[i]
            s.rmse_at[_fmt(float(cp))] = hist_r[i]
        s.V_at["end"] = hist_V[-1]
        s.rmse_at["end"] = hist_r[-1]
    return trace, summary


def trace_windup_prev(trace: list[StepRecord], name: str) -> bool:
    for rec in reversed(trace):
        if rec.algo == name:
            return rec.windup
    return False


def series(trace: list[StepRecord], algo: str, column: str) -> np.ndarray:
    return np.array([getattr(rec, column) for rec in trace if rec.algo == algo], dtype=float)


def adaptation_metrics(trace: list[StepRecord], config: ExperimentConfig, algo: str) -> dict[str, float]:
    """Settling time of RMSE after the first parameter jump, and RMSE growth after noise onset."""
    t = series(trace, algo, "t")
    err = series(trace, algo, "rmse")
    segs = config.schedule.theta_segments
    out = {"settle_time": math.nan, "noise_growth": math.nan}
    if len(segs) > 1:
        jump = segs[1][0]
        stop = config.schedule.noise_start if math.isfinite(config.schedule.noise_start) else config.duration
        if len(segs) > 2:
            stop = min(stop, segs[2][0])
        out["settle_time"] = settling_time(t, err, jump, stop)
    if config.schedule.noise_variance > 0.0 and math.isfinite(config.schedule.noise_start):
        out["noise_growth"] = noise_growth(t, err, config.schedule.noise_start)
    return out


# -- output ----------------------------------------------------------------


def emit_csv(trace: list[StepRecord], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rec in trace:
                w.writerow(rec.row())
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_csv(path: str | Path) -> list[StepRecord]:
    recs = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            d = dict(zip(CSV_COLUMNS, row))
            recs.append(
                StepRecord(
                    t=float(d["t"]), x1=float(d["x1"]), x2=float(d["x2"]), r=float(d["r"]),
                    delta_a=float(d["delta_a"]), y=float(d["y"]), algo=d["algo"],
                    theta_hat=tuple(float(d[f"theta{i}"]) for i in range(1, N_PARAMS + 1)),
                    V=float(d["V"]), rmse=float(d["rmse"]), lam_min_R=float(d["lam_min_R"]),
                    lam_max_R=float(d["lam_max_R"]), beta=float(d["beta"]) if d["beta"] else None,
                    pe=d["pe"] == "1", windup=d["windup"] == "1",
                )
            )
    return recs


def write_summary(summary: RunSummary, path: str | Path) -> None:
    Path(path).write_text(summary.to_text(), encoding="utf-8")


PLOT_STUB = '''"""Plot a trace written by `rlsforget run`. Usage: python plot_trace.py trace.csv"""
import sys

import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv(sys.argv[1] if len(sys.argv) > 1 else "trace.csv")
fig, axes = plt.subplots(3, 1, sharex=True, figsize=(8, 9))
first = df[df.algo == df.algo.iloc[0]]
axes[0].plot(first.t, first.x1, label="x1")
axes[0].plot(first.t, first.x2, label="x2")
axes[0].legend()
for algo, g in df.groupby("algo"):
    axes[1].semilogy(g.t, g.V.clip(lower=1e-16), label=algo)
    axes[2].semilogy(g.t, g.rmse.clip(lower=1e-16), label=algo)
axes[1].set_ylabel("V")
axes[2].set_ylabel("RMSE")
axes[2].set_xlabel("t [s]")
axes[1].legend()
plt.tight_layout()
plt.show()
'''


def write_outputs(trace, summary: RunSummary, out_dir: str | Path, plot_script: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "trace.csv", out_dir / "summary.txt"]
    emit_csv(trace, paths[0])
    write_summary(summary, paths[1])
    if plot_script:
        paths.append(out_dir / "plot_trace.py")
        paths[-1].write_text(PLOT_STUB, encoding="utf-8")
    return paths


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return dataclasses.replace(config, **changes)
