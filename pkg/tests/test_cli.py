import io
import os

import numpy as np
import pytest

from qjump.cli import (
    ConfigError,
    ResultTable,
    main,
    parse_config,
    read_result_table,
    run,
    write_result_table,
)

MINIMAL = """
[scenario]
kind = vacuum_drive
rabi = 10

[task]
name = g2
"""


def test_parse_minimal_defaults():
    config = parse_config(MINIMAL)
    assert config.scenario == "vacuum_drive"
    assert config.rabi == 10.0
    assert config.task == "g2"
    assert config.dt == 1e-3
    assert config.seed == 0
    assert config.n_traj == 10_000
    assert config.steady_horizon == 30.0


def test_parse_unknown_key_named():
    with pytest.raises(ConfigError, match="unknown key 'omega'"):
        parse_config("[scenario]\nkind = vacuum_drive\nomega = 3\n")
    with pytest.raises(ConfigError, match=r"unknown section \[physics\]"):
        parse_config("[physics]\ngamma = 1\n")


def test_parse_error_has_line_number():
    with pytest.raises(ConfigError, match="line"):
        parse_config("[scenario\nkind = vacuum_drive\n")


def test_squeezed_positivity_rejected():
    text = """
[scenario]
kind = squeezed
n_photon = 0.5
epsilon = 2.0

[task]
name = expect
"""
    with pytest.raises(ConfigError, match="epsilon"):
        parse_config(text)


def test_squeezed_m_auto_set():
    text = """
[scenario]
kind = squeezed
n_photon = 0.25
epsilon = 1.0

[task]
name = expect
"""
    config = parse_config(text)
    from qjump.cli import build_config_model

    model = build_config_model(config)
    assert np.isclose(abs(model.env.m_squeeze), np.sqrt(0.3125))


def test_invalid_enum_values():
    with pytest.raises(ConfigError, match="task"):
        parse_config("[task]\nname = frobnicate\n")
    with pytest.raises(ConfigError, match="scenario"):
        parse_config("[scenario]\nkind = cavity\n")


def test_custom_matrices_scenario():
    text = """
[scenario]
kind = custom_matrices
h_sys = 0, 0; 0, 0.5
a_op = 0, 1; 0, 0

[task]
name = expect

[numerics]
n_traj = 16
tau_max = 0.5
dtau = 0.25
"""
    config = parse_config(text)
    table, status = run(config)
    assert status == 0
    assert table.data.shape[0] == 3


def test_result_table_roundtrip():
    rng = np.random.default_rng(0)
    table = ResultTable(
        ("a", "b", "c"),
        rng.normal(size=(7, 3)) * 10.0 ** rng.integers(-12, 12, size=(7, 3)),
        ("meta one", "seed = 5"),
    )
    buf = io.StringIO()
    write_result_table(table, buf)
    buf.seek(0)
    back = read_result_table(buf)
    assert back.columns == table.columns
    assert np.array_equal(back.data, table.data)
    assert back.metadata == table.metadata


def test_run_g2_deterministic(tmp_path):
    text = """
[scenario]
kind = vacuum_drive
rabi = 10

[task]
name = g2

[numerics]
n_traj = 64
tau_max = 0.5
dtau = 0.125
seed = 3
steady_horizon = 2.0
threads = 1
"""
    config = parse_config(text)
    out = []
    for _ in range(2):
        table, status = run(config)
        assert status == 0
        buf = io.StringIO()
        write_result_table(table, buf)
        out.append(buf.getvalue())
    assert out[0] == out[1]
    # tau = 0 value is exactly zero (nilpotency of the lowering operator)
    table = read_result_table(io.StringIO(out[0]))
    assert table.data[0, 1] == 0.0


def test_validate_task_passes(tmp_path):
    text = """
[scenario]
kind = vacuum_drive
initial = excited

[task]
name = validate

[numerics]
n_traj = 1500
tau_max = 2.0
dtau = 0.5
threads = 1
"""
    table, status = run(parse_config(text))
    assert status == 0
    assert "zscore" in table.columns
    z_col = table.columns.index("zscore")
    assert np.nanmax(table.data[:, z_col]) <= 5.0


def test_main_end_to_end(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        """
[scenario]
kind = vacuum_drive
rabi = 10

[task]
name = expect

[numerics]
n_traj = 32
tau_max = 0.5
dtau = 0.25
threads = 1
""",
        encoding="utf-8",
    )
    out = tmp_path / "result.csv"
    code = main(["--config", str(cfg), "--out", str(out), "--seed", "7"])
    assert code == 0
    table = read_result_table(out)
    assert table.columns[0] == "tau"
    assert any("seed = 7" in line for line in table.metadata)


def test_main_exit_codes(tmp_path):
    # 2: unreadable / invalid config
    assert main(["--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nkind = nope\n", encoding="utf-8")
    assert main(["--config", str(bad)]) == 2
    # 2: bad override
    ok = tmp_path / "ok.ini"
    ok.write_text(MINIMAL, encoding="utf-8")
    assert main(["--config", str(ok), "--task", "frobnicate"]) == 2
    # 3: unwritable output path
    cfg = tmp_path / "small.ini"
    cfg.write_text(
        MINIMAL + "\n[numerics]\nn_traj = 8\ntau_max = 0.25\ndtau = 0.25\n"
        "steady_horizon = 0.5\nthreads = 1\n",
        encoding="utf-8",
    )
    code = main(
        ["--config", str(cfg), "--out", str(tmp_path / "no_dir" / "x.csv")]
    )
    assert code == 3


def test_bench_task_small():
    text = """
[scenario]
kind = vacuum_drive
rabi = 10

[task]
name = bench

[numerics]
n_traj = 48
tau_max = 0.5
dtau = 0.25
steady_horizon = 1.0
threads = 1
"""
    table, status = run(parse_config(text))
    assert status == 0
    assert table.data.shape == (2, 5)
    assert np.all(table.data[:, 2] > 0)  # wall times
    assert any("cost_per_target_variance_ratio" in m for m in table.metadata)
