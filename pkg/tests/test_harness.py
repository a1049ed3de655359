import math

import numpy as np
import pytest

from rlsforget import harness
from rlsforget.cli import apply_overrides, main, verify_trace
from rlsforget.estimators import Algorithm
from rlsforget.wingrock import THETA_NOMINAL, THETA_SHIFTED


def short(case="C2", duration=3.0, **kw):
    return apply_overrides(harness.builtin_case(case), duration=duration, **kw)


def test_builtin_cases():
    c1 = harness.builtin_case("C1")
    np.testing.assert_array_equal(c1.schedule.theta_at(49.99), THETA_NOMINAL)
    np.testing.assert_array_equal(c1.schedule.theta_at(50.0), THETA_SHIFTED)
    assert c1.schedule.noise_variance == 0.1 and c1.schedule.noise_start == 60.0
    assert c1.algo("df1").mu == 0.95 and c1.algo("df2").mu == 0.95
    assert c1.algo("ef").mu == 0.99 and c1.algo("pef").delta == 0.01
    assert c1.duration == 100.0 and c1.dt == 0.01
    assert c1.checkpoints == (50.0, 60.0)
    c2 = harness.builtin_case("c2")
    assert c2.schedule.noise_variance == 0.0
    assert len(c2.schedule.theta_segments) == 1
    assert c2.duration == 150.0 and c2.checkpoints == (30.0,)
    np.testing.assert_array_equal(c2.R0, np.eye(6))
    assert (c2.gains.kp, c2.gains.kd) == (1.5, 1.3)
    with pytest.raises(ValueError):
        harness.builtin_case("C9")


def test_config_validation():
    cfg = harness.builtin_case("C2")
    with pytest.raises(ValueError):
        harness.with_overrides(cfg, dt=0.0)
    with pytest.raises(ValueError):
        harness.with_overrides(cfg, algorithms=[])
    with pytest.raises(ValueError):
        harness.with_overrides(cfg, algorithms=cfg.algorithms[:1] * 2)


def test_zero_duration_run():
    trace, summary = harness.run(short(duration=0.0))
    assert trace == []
    assert summary.n_steps == 0 and not summary.aborted
    assert math.isnan(summary.algos["pef"].final_rmse)
    assert summary.claimed_violations == 0


def test_trace_shape_and_time():
    cfg = short(duration=2.0)
    trace, summary = harness.run(cfg)
    assert len(trace) == 200 * 4
    ts = [r.t for r in trace if r.algo == "ef"]
    assert ts == [k * 0.01 for k in range(200)]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert summary.n_steps == 200
    assert all(r.beta is not None for r in trace if r.algo == "df1")
    assert all(r.beta is None for r in trace if r.algo != "df1")


def test_plant_divergence_aborts_with_partial_trace():
    cfg = short(duration=10.0, algos=["pef"])
    cfg = harness.with_overrides(cfg, x0=(1e50, 1e50))
    trace, summary = harness.run(cfg)
    assert summary.aborted
    assert "t=" in summary.abort_reason
    assert len(trace) == summary.n_steps


def test_csv_examples(tmp_path):
    path = tmp_path / "t.csv"
    harness.emit_csv([], path)
    assert path.read_text().splitlines() == [",".join(harness.CSV_COLUMNS)]
    trace, _ = harness.run(short(duration=0.03, algos=["pef"]))
    harness.emit_csv(trace, path)
    assert len(path.read_text().splitlines()) == 4
    with pytest.raises(OSError, match="missing"):
        harness.emit_csv(trace, tmp_path / "missing" / "t.csv")


def test_csv_round_trip(tmp_path):
    trace, _ = harness.run(short(case="C1", duration=1.0))
    path = tmp_path / "t.csv"
    harness.emit_csv(trace, path)
    back = harness.read_csv(path)
    assert len(back) == len(trace)
    for a, b in zip(trace, back):
        assert a.algo == b.algo and a.pe == b.pe and a.windup == b.windup
        for f in ("t", "x1", "x2", "r", "delta_a", "y", "V", "rmse", "lam_min_R", "lam_max_R"):
            assert abs(getattr(a, f) - getattr(b, f)) <= 1e-12 * max(1.0, abs(getattr(a, f)))
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, rtol=1e-12, atol=1e-12)
        assert (a.beta is None) == (b.beta is None)


def test_replay_determinism(tmp_path):
    cfg = harness.with_overrides(
        short(case="C1", duration=1.0), schedule=harness.builtin_case("C1").schedule
    )
    # open the noise window early so the generator is exercised
    cfg.schedule.noise_start = 0.5
    paths = []
    for i in range(2):
        trace, _ = harness.run(cfg)
        paths.append(tmp_path / f"{i}.csv")
        harness.emit_csv(trace, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    other = apply_overrides(cfg, seed=1)
    trace, _ = harness.run(other)
    harness.emit_csv(trace, tmp_path / "o.csv")
    assert (tmp_path / "o.csv").read_bytes() != paths[0].read_bytes()


@pytest.mark.parametrize("case", ["C1", "C2"])
def test_config_round_trip(case):
    cfg = apply_overrides(harness.builtin_case(case), mu=0.9, seed=7)
    text = harness.serialize_config(cfg)
    again = harness.serialize_config(harness.parse_config(text))
    assert again == text
    assert harness.serialize_config(harness.parse_config(again)) == again


def test_config_parsing_custom():
    text = """
    # custom experiment
    case = custom
    duration = 2.5
    algorithms = pef, df2
    mu.pef = 0.9
    delta.pef = 0.05
    theta_segments = 0:1,0,0,0,0,0; 1:0,1,0,0,0,0
    ref_offset = 0.2
    ref_until = 50
    """
    cfg = harness.parse_config(text)
    assert cfg.case == "custom" and cfg.duration == 2.5
    assert [a.kind for a in cfg.algorithms] == [Algorithm.PROPOSED, Algorithm.DF2]
    assert cfg.algo("pef").delta == 0.05 and cfg.algo("pef").mu == 0.9
    np.testing.assert_array_equal(cfg.schedule.theta_at(1.0), np.eye(6)[1])
    assert cfg.gains.reference(100.0) == 0.2
    with pytest.raises(ValueError):
        harness.parse_config("bogus = 1")
    with pytest.raises(ValueError):
        harness.parse_config("no equals sign")


def test_summary_checkpoints_consistent_with_trace():
    cfg = short(case="C1", duration=0.5)
    cfg = harness.with_overrides(cfg, checkpoints=(0.25,))
    trace, summary = harness.run(cfg)
    for name, s in summary.algos.items():
        V = harness.series(trace, name, "V")
        t = harness.series(trace, name, "t")
        assert s.V_at["0.25"] == V[np.argmin(np.abs(t - 0.25))]
        assert s.V_at["end"] == V[-1] and s.max_V == V.max()


def test_summary_run_examples(c2_run):
    _, trace, summary = c2_run
    pef = summary.algos["pef"]
    assert pef.lyapunov_claimed and pef.lyapunov_checked > 0
    assert pef.lyapunov_violations == 0
    ef = summary.algos["ef"]
    assert ef.windup_events >= 1 and ef.first_windup_t > 30.0
    assert not summary.aborted


def test_cli_run_and_verify(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["run", "--case", "C2", "--algo", "pef", "--out", str(out), "--duration", "5"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["summary.txt", "trace.csv"]
    assert main(["verify", "--trace", str(out / "trace.csv")]) == 0
    assert verify_trace(out / "trace.csv") == []


def test_cli_verify_detects_tampering(tmp_path):
    out = tmp_path / "d"
    assert main(["run", "--case", "C2", "--algo", "pef,df2", "--out", str(out), "--duration", "2"]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    cols = lines[0].split(",")
    row = lines[51].split(",")
    row[cols.index("lam_min_R")] = "0.5"
    lines[51] = ",".join(row)
    (out / "trace.csv").write_text("\n".join(lines) + "\n")
    assert main(["verify", "--trace", str(out / "trace.csv")]) == 1


def test_cli_plot_script_and_env(tmp_path, monkeypatch):
    monkeypatch.setenv("RLSFORGET_OUT", str(tmp_path / "env"))
    assert main(["run", "--case", "C2", "--algo", "pef", "--duration", "0.1", "--plot-script"]) == 0
    assert (tmp_path / "env" / "plot_trace.py").exists()


def test_cli_config_file_with_override(tmp_path):
    cfg = apply_overrides(harness.builtin_case("C2"), algos=["pef"], duration=0.2)
    path = tmp_path / "exp.cfg"
    path.write_text(harness.serialize_config(cfg))
    out = tmp_path / "o"
    assert main(["run", "--config", str(path), "--mu", "0.9", "--delta", "0.05", "--out", str(out)]) == 0
    kv = harness.read_kv((out / "summary.txt").read_text())
    assert kv["config.mu.pef"] == "0.9" and kv["config.delta.pef"] == "0.05"
    assert kv["run.n_steps"] == "20"


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--case", "C9"],
        ["run", "--case", "C2", "--bogus"],
        ["run", "--case", "C2", "--algo", "rls"],
        ["run"],
        ["run", "--case", "C2", "--mu", "1.5"],
        ["run", "--case", "C2", "--algo", "ef", "--delta", "0.1"],
        ["sweep", "--param", "gamma", "--values", "1"],
        [],
    ],
)
def test_cli_usage_errors(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv[:1] == ["run"] and "--bogus" not in argv else [])) == 2


def test_cli_sweep(tmp_path):
    out = tmp_path / "s"
    code = main(["sweep", "--param", "mu", "--values", "0.5", "0.99", "--case", "C1", "--duration", "1", "--out", str(out)])
    assert code == 0
    lines = (out / "sweep.txt").read_text().splitlines()
    assert len(lines) == 2 and lines[0].startswith("mu=0.5 ")
    assert (out / "mu_0.99" / "trace.csv").exists()
