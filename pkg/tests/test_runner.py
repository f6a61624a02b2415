import csv
import logging

import numpy as np
import pytest

from causalphi.core.errors import ConfigError, NonConvergenceError
from causalphi.models.schemas import ExperimentConfig
from causalphi.services.distributions import format_distribution
from causalphi.services.ising import PRESETS, ExteriorIsingSystem, IsingSystem, exterior_joint, stationary_joint
from causalphi.services.measures import phi_SI, phi_T
from causalphi.tasks.runner import (
    PointResult,
    measure_distribution,
    run_localmin_trace,
    run_sweep,
    run_table1,
    segment_marks,
    sweep_columns,
    write_csv,
)

V2 = PRESETS["paper-n2"].weights.tolist()


def small_config(**kw) -> ExperimentConfig:
    base = dict(weights=V2, beta_grid=[0.0, 0.5], measures=["I", "SI", "G", "CII"], w_sizes=[2], restarts=2)
    base.update(kw)
    return ExperimentConfig(**base)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


# ── CSV ──


def test_write_csv_format(tmp_path):
    path = tmp_path / "sub" / "out.csv"
    text = write_csv(path, ["a", "b", "c"], [[0.1, None, "x"], [1 / 3, 2.0, ""]])
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.decode("utf-8") == text
    lines = text.splitlines()
    assert lines[0] == "a,b,c"
    assert lines[1] == "0.10000000000000001,,x"
    assert lines[2] == "0.33333333333333331,2,"


def test_write_csv_without_path():
    assert write_csv(None, ["beta"], [[np.float64(0.5)]]) == "beta\n0.5\n"


# ── sweep ──


def test_sweep_columns():
    config = small_config(w_sizes=[4, 2])
    assert sweep_columns(config) == [
        "beta", "phi_I", "phi_SI", "phi_G", "phi_CII_w2", "phi_CII_w4", "phi_CIS", "phi_T", "flags",
    ]


def test_sweep_writes_one_row_per_beta(tmp_path):
    path = run_sweep(small_config(), out=tmp_path / "sweep.csv")
    rows = read_rows(path)
    assert [float(r["beta"]) for r in rows] == [0.0, 0.5]
    zero = rows[0]
    for column in ("phi_I", "phi_SI", "phi_G", "phi_CII_w2"):
        assert float(zero[column]) < 1e-8
    assert zero["phi_CIS"] == ""
    assert zero["phi_T"] == ""
    assert float(rows[1]["phi_I"]) > 0
    assert float(rows[1]["phi_CII_w2"]) <= float(rows[1]["phi_SI"]) + 1e-9


def test_sweep_is_deterministic(tmp_path):
    a = run_sweep(small_config(), out=tmp_path / "a.csv")
    b = run_sweep(small_config(), out=tmp_path / "b.csv")
    assert a.read_text() == b.read_text()


def test_sweep_derives_phi_T_without_exterior_weights(tmp_path):
    path = run_sweep(small_config(measures=["T"], beta_grid=[1.0]), out=tmp_path / "t.csv")
    (row,) = read_rows(path)
    assert row["phi_SI"] == ""
    assert "phi_T:derived" in row["flags"].split(";")
    P = stationary_joint(IsingSystem(V2, 1.0))
    assert float(row["phi_T"]) == pytest.approx(phi_SI(P).value, abs=1e-9)


def test_sweep_with_exterior_weights(tmp_path):
    config = small_config(measures=["SI", "T"], beta_grid=[1.0], exterior_weights=[1.0, 1.0])
    (row,) = read_rows(run_sweep(config, out=tmp_path / "ext.csv"))
    assert "phi_T:derived" not in row["flags"]
    P_ext, _ = exterior_joint(ExteriorIsingSystem(IsingSystem(V2, 1.0), [1.0, 1.0]))
    assert float(row["phi_T"]) == pytest.approx(phi_T(P_ext).value, abs=1e-9)


def test_strict_sweep_raises_on_non_convergence(tmp_path):
    config = small_config(measures=["G"], beta_grid=[1.0], ips_max_cycles=1, strict=True)
    with pytest.raises(NonConvergenceError):
        run_sweep(config, out=tmp_path / "strict.csv")
    (row,) = read_rows(tmp_path / "strict.csv")
    assert "phi_G" in row["flags"].split(";")


def test_lenient_sweep_only_flags(tmp_path):
    config = small_config(measures=["G"], beta_grid=[1.0], ips_max_cycles=1)
    (row,) = read_rows(run_sweep(config, out=tmp_path / "lenient.csv"))
    assert row["flags"] == "phi_G"


def test_process_pool_matches_serial_run(tmp_path):
    config = small_config(beta_grid=[0.5, 1.0, 2.0])
    serial = run_sweep(config, out=tmp_path / "serial.csv")
    pooled = run_sweep(config.model_copy(update={"workers": 2}), out=tmp_path / "pooled.csv")
    assert serial.read_text() == pooled.read_text()


def test_output_from_config(tmp_path):
    config = small_config(beta_grid=[0.0], output=str(tmp_path / "cfg.csv"))
    assert run_sweep(config) == tmp_path / "cfg.csv"


# ── table 1 ──


def test_table1_statistics(tmp_path):
    config = small_config(w_sizes=[2, 3], table1_samples=3, table1_restarts=2)
    rows = read_rows(run_table1(config, out=tmp_path / "table1.csv"))
    assert [int(r["w_size"]) for r in rows] == [2, 3]
    for r in rows:
        assert list(r) == ["w_size", "samples", "min", "max", "mean"]
        assert int(r["samples"]) == 3
        lo, hi, mean = float(r["min"]), float(r["max"]), float(r["mean"])
        assert 0 <= lo <= mean <= hi


# ── local-minima trace ──


def test_trace_needs_single_latent_size(tmp_path):
    with pytest.raises(ConfigError):
        run_localmin_trace(small_config(w_sizes=[2, 4]), out=tmp_path / "trace.csv")


def test_trace_rows(tmp_path):
    config = small_config(beta_grid=[0.5, 1.0, 2.0], restarts=3)
    rows = read_rows(run_localmin_trace(config, out=tmp_path / "trace.csv"))
    assert len(rows) == 9
    assert [int(r["restart"]) for r in rows[:3]] == [0, 1, 2]
    assert all(r["segment"] == "0" for r in rows[:3])
    for r in rows:
        assert float(r["divergence"]) >= 0
        marginal = [float(v) for v in r["w_marginal"].split(";")]
        assert len(marginal) == 2
        assert sum(marginal) == pytest.approx(1.0, abs=1e-9)


def test_segment_marks():
    def point(key, projection):
        return PointResult(key=key, values={}, extra=[{"divergence": 0.1, "projection": np.array(projection)}])

    results = [point(0.0, [0.5, 0.5]), point(1.0, [0.5, 0.5]), point(2.0, [0.99, 0.01])]
    assert segment_marks(results) == [False, False, True]


# ── single distribution ──


def test_measure_distribution_on_system_joint():
    P = stationary_joint(IsingSystem(V2, 1.0))
    config = small_config(measures=["I", "SI", "T"])
    out = measure_distribution(format_distribution(P.dist), config)
    columns = [c for c, _, _ in out]
    assert columns == ["phi_I", "phi_SI", "phi_T"]
    values = {c: v for c, v, _ in out}
    assert values["phi_T"] == values["phi_SI"]
    assert all(converged for _, _, converged in out)


def test_measure_distribution_on_extended_joint():
    P_ext, _ = exterior_joint(ExteriorIsingSystem(IsingSystem(V2, 1.0), [0.5, -0.5]))
    config = small_config(measures=["SI", "T"])
    values = {c: v for c, v, _ in measure_distribution(format_distribution(P_ext), config)}
    assert values["phi_T"] == pytest.approx(phi_T(P_ext).value, abs=1e-9)
    assert set(values) == {"phi_SI", "phi_T"}


def test_beta_zero_row_vanishes_for_every_measure(tmp_path):
    config = small_config(beta_grid=[0.0], measures=["I", "SI", "G", "CII", "CIS", "T"], cis_multi_starts=1)
    (row,) = read_rows(run_sweep(config, out=tmp_path / "zero.csv"))
    for column in ("phi_I", "phi_SI", "phi_G", "phi_CII_w2", "phi_CIS", "phi_T"):
        assert float(row[column]) < 1e-8


def test_trace_of_constant_system_has_no_segments(tmp_path):
    config = small_config(weights=[[0.0, 0.0], [0.0, 0.0]], beta_grid=[0.0, 1.0, 2.0, 3.0])
    rows = read_rows(run_localmin_trace(config, out=tmp_path / "flat.csv"))
    assert all(r["segment"] == "0" for r in rows)


def test_carried_trace_starts_from_previous_minimizer(tmp_path):
    config = small_config(beta_grid=[1.0, 1.0, 1.0], restarts=2, trace_starts="carried")
    rows = read_rows(run_localmin_trace(config, out=tmp_path / "carried.csv"))
    assert [int(r["restart"]) for r in rows] == [0, 1] * 3
    for r in range(2):
        chain = [float(row["divergence"]) for row in rows[r::2]]
        assert chain[1] <= chain[0] + 1e-12
        assert chain[2] <= chain[1] + 1e-12
    assert all(row["segment"] == "0" for row in rows)


def test_fresh_trace_draws_new_starts_per_beta(tmp_path):
    config = small_config(beta_grid=[1.0, 1.0], restarts=1, em_max_iterations=1)
    rows = read_rows(run_localmin_trace(config, out=tmp_path / "fresh.csv"))
    assert rows[0]["w_marginal"] != rows[1]["w_marginal"]


def test_solver_warnings_are_logged_once(tmp_path, caplog):
    config = small_config(measures=["G"], beta_grid=[1.0], ips_max_cycles=1)
    with caplog.at_level(logging.WARNING, logger="causalphi"):
        run_sweep(config, out=tmp_path / "once.csv")
    stopped = [r for r in caplog.records if "ips stopped" in r.getMessage()]
    assert len(stopped) == 1
    assert stopped[0].getMessage().startswith("[1] ")


def test_trace_with_permuted_latent_states(tmp_path):
    config = small_config(beta_grid=[0.5, 1.5], restarts=3)
    plain = read_rows(run_localmin_trace(config, out=tmp_path / "plain.csv"))
    permuted = read_rows(
        run_localmin_trace(config.model_copy(update={"permute_latent": True}), out=tmp_path / "perm.csv")
    )
    for a, b in zip(plain, permuted):
        assert float(a["divergence"]) == pytest.approx(float(b["divergence"]), abs=1e-9)


# ── preset scale ──


@pytest.mark.slow
def test_orderings_on_two_node_preset(tmp_path):
    config = ExperimentConfig(preset="paper-n2", measures=["I", "SI", "G", "CII", "CIS"], w_sizes=[2, 4])
    for row in read_rows(run_sweep(config, out=tmp_path / "order.csv")):
        phi_I, phi_SI = float(row["phi_I"]), float(row["phi_SI"])
        assert float(row["phi_G"]) <= phi_I + 1e-6
        for m in (2, 4):
            cii = float(row[f"phi_CII_w{m}"])
            assert float(row["phi_CIS"]) <= cii + 1e-6
            assert cii <= min(phi_SI, phi_I) + 1e-6
        assert float(row["phi_CII_w4"]) <= float(row["phi_CII_w2"]) + 1e-9


@pytest.mark.slow
def test_gap_between_cii_and_cis_persists(tmp_path):
    config = ExperimentConfig(
        preset="paper-n2", beta_grid=[15.0, 20.0, 25.0], measures=["CII", "CIS"], w_sizes=[2, 16, 92]
    )
    for row in read_rows(run_sweep(config, out=tmp_path / "gap.csv")):
        for m in (2, 16, 92):
            assert float(row[f"phi_CII_w{m}"]) - float(row["phi_CIS"]) > 5e-7


@pytest.mark.slow
def test_table1_samples_are_reproduced_by_the_latent_family(tmp_path):
    # N_CIS sits inside the closure of N_CII for |W| >= 2 (take W = Y2)
    config = ExperimentConfig(preset="paper-n2", w_sizes=[2, 4, 16], table1_samples=50, table1_restarts=50)
    for row in read_rows(run_table1(config, out=tmp_path / "table1.csv")):
        assert 0.0 <= float(row["min"]) <= float(row["max"]) < 1e-6


@pytest.mark.slow
def test_five_node_trace_changes_minimum(tmp_path):
    config = ExperimentConfig(
        preset="paper-n5", beta_start=0.0, beta_stop=10.0, beta_count=101, measures=["CII"], restarts=1
    )
    rows = read_rows(run_localmin_trace(config, out=tmp_path / "trace.csv"))
    assert any(r["segment"] == "1" for r in rows)
