"""Command-line front end.

Runs the scenario tasks from a flat INI-style config (key = value entries in
a few fixed sections), writes CSV tables with a ``#``-prefixed metadata block
and returns conventional exit codes: 0 success, 1 validation failure, 2
config error, 3 runtime error.

All times in the config are in units of 1/gamma and all frequencies in units
of gamma; ``gamma`` itself sets the absolute scale.  Estimation tasks are
reproducible bit for bit given the same config and seed, independent of the
thread count (the bench task also reports wall times, which naturally vary).
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__
from .analysis import spectrum_from_correlation
from .correlators import (
    CorrelationPlan,
    InsertionEvent,
    SteadyPrep,
    UniformSphere,
    general_correlation,
    heisenberg_matrix_element,
    method1_correlation,
    symmetric_correlation,
)
from .linalg import PropagationError
from .model import (
    DriveParams,
    EnvironmentParams,
    ModelError,
    ModelSpec,
    build_model,
    excited_state,
    ground_state,
    scenario_squeezed,
    scenario_thermal,
    scenario_vacuum_drive,
    sigma_minus,
    sigma_plus,
)
from .oracle import rho_trajectory
from .pdp import RngStream

__all__ = [
    "ConfigError",
    "ResultTable",
    "RunConfig",
    "ValidationFailure",
    "main",
    "parse_config",
    "read_result_table",
    "run",
    "write_result_table",
]

SCENARIOS = ("vacuum_drive", "squeezed", "thermal", "custom_matrices")
TASKS = ("expect", "g2", "spectrum", "matelem", "validate", "bench")
INITIAL_STATES = ("ground", "excited", "plus", "uniform")
MATELEM_OPS = ("population", "lower", "raise", "identity")


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


class ValidationFailure(RuntimeError):
    """Stochastic result disagrees with the oracle beyond the z threshold."""


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "vacuum_drive"
    gamma: float = 1.0
    rabi: float = 0.0
    detuning: float = 0.0
    n_photon: float = 0.0
    epsilon: float = 1.0
    phi_rel: float = 0.0
    s0: float = 0.0
    s1: float = 0.0
    initial: str = "ground"
    h_sys: str = ""
    a_op: str = ""
    task: str = "expect"
    matelem_phi0: str = "excited"
    matelem_psi0: str = "excited"
    matelem_op: str = "population"
    dt: float = 1e-3
    tau_max: float = 8.0
    dtau: float = 0.0078125
    n_traj: int = 10000
    seed: int = 0
    steady_horizon: float = 30.0
    threads: int = 0
    out: str = "out.csv"


_SCHEMA = {
    "scenario": {
        "kind": ("scenario", str),
        "gamma": ("gamma", float),
        "rabi": ("rabi", float),
        "detuning": ("detuning", float),
        "n_photon": ("n_photon", float),
        "epsilon": ("epsilon", float),
        "phi_rel": ("phi_rel", float),
        "s0": ("s0", float),
        "s1": ("s1", float),
        "initial": ("initial", str),
        "h_sys": ("h_sys", str),
        "a_op": ("a_op", str),
    },
    "task": {
        "name": ("task", str),
        "matelem_phi0": ("matelem_phi0", str),
        "matelem_psi0": ("matelem_psi0", str),
        "matelem_op": ("matelem_op", str),
    },
    "numerics": {
        "dt": ("dt", float),
        "tau_max": ("tau_max", float),
        "dtau": ("dtau", float),
        "n_traj": ("n_traj", int),
        "seed": ("seed", int),
        "steady_horizon": ("steady_horizon", float),
        "threads": ("threads", int),
    },
    "output": {
        "path": ("out", str),
    },
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate the flat INI-style configuration text."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f" (line {lineno})" if lineno else ""
        raise ConfigError(f"config parse error{where}: {exc.message}") from exc

    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        schema = _SCHEMA[section]
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            name, typ = schema[key]
            try:
                values[name] = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"key '{key}' in [{section}]: {exc}") from exc
    config = RunConfig(**values)
    validate_config(config)
    return config


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc


def validate_config(config: RunConfig) -> None:
    scenario = config.scenario.replace("-", "_")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {config.scenario!r}")
    if config.task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {config.task!r}")
    if config.initial not in INITIAL_STATES:
        raise ConfigError(f"initial must be one of {INITIAL_STATES}, got {config.initial!r}")
    if config.matelem_op not in MATELEM_OPS:
        raise ConfigError(f"matelem_op must be one of {MATELEM_OPS}")
    for key in ("matelem_phi0", "matelem_psi0"):
        if getattr(config, key) not in INITIAL_STATES[:3] + ("minus",):
            raise ConfigError(f"{key} must be a pure-state name")
    if config.gamma <= 0:
        raise ConfigError("gamma must be positive")
    if config.dt <= 0:
        raise ConfigError("dt must be positive")
    if config.n_traj < 2:
        raise ConfigError("n_traj must be at least 2")
    if config.dtau <= 0 or config.tau_max <= 0 or config.tau_max < config.dtau:
        raise ConfigError("need 0 < dtau <= tau_max")
    if config.threads < 0:
        raise ConfigError("threads must be >= 0 (0 = auto)")
    try:
        build_config_model(config)
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_matrix(text: str, what: str) -> np.ndarray:
    """Parse ';'-separated rows of ','-separated complex entries."""
    try:
        rows = [
            [complex(entry.strip().replace(" ", "")) for entry in row.split(",")]
            for row in text.split(";")
        ]
        mat = np.array(rows, dtype=complex)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {what}: {exc}") from exc
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ConfigError(f"{what} must be square, got shape {mat.shape}")
    return mat


def build_config_model(config: RunConfig) -> ModelSpec:
    gamma = config.gamma
    scenario = config.scenario.replace("-", "_")
    if scenario == "vacuum_drive":
        return scenario_vacuum_drive(gamma, config.rabi * gamma, config.detuning * gamma)
    if scenario == "squeezed":
        return scenario_squeezed(
            gamma, config.n_photon, config.epsilon, config.phi_rel, config.rabi * gamma
        )
    if scenario == "thermal":
        return scenario_thermal(
            gamma, config.n_photon, config.rabi * gamma, config.detuning * gamma
        )
    if not config.h_sys or not config.a_op:
        raise ConfigError("custom_matrices scenario needs h_sys and a_op")
    h_sys = _parse_matrix(config.h_sys, "h_sys") * gamma
    a_op = _parse_matrix(config.a_op, "a_op")
    m_abs = np.sqrt(config.n_photon * (config.n_photon + config.epsilon))
    env = EnvironmentParams(
        gamma=gamma,
        n_photon=config.n_photon,
        m_squeeze=-m_abs * np.exp(-1j * config.phi_rel),
        epsilon=config.epsilon,
        s0=config.s0 * gamma,
        s1=config.s1 * gamma,
    )
    drive = DriveParams(amplitude=0.5 * config.rabi * gamma, detuning=config.detuning * gamma)
    return build_model(h_sys, a_op, env, drive)


def _initial_state(name: str, dim: int) -> np.ndarray:
    if dim != 2:
        raise ConfigError("named initial states require a two-level system")
    states = {
        "ground": ground_state(),
        "excited": excited_state(),
        "plus": (ground_state() + excited_state()) / np.sqrt(2.0),
        "minus": (ground_state() - excited_state()) / np.sqrt(2.0),
    }
    return states[name]


def _population_op(model: ModelSpec) -> np.ndarray:
    return model.a_op.conj().T @ model.a_op


# -- result table -------------------------------------------------------------


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[str, ...]
    data: np.ndarray
    metadata: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", data)
        if data.ndim != 2 or data.shape[1] != len(self.columns):
            raise ValueError("table data must be rectangular and match the header")
        if not np.all(np.isfinite(data)):
            raise ValueError("table entries must be finite")


def write_result_table(table: ResultTable, path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", encoding="utf-8", newline="\n") if own else path_or_buf
    try:
        for line in table.metadata:
            fh.write(f"# {line}\n")
        fh.write(",".join(table.columns) + "\n")
        for row in table.data:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
    finally:
        if own:
            fh.close()


def read_result_table(path_or_buf) -> ResultTable:
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "r", encoding="utf-8") if own else path_or_buf
    try:
        metadata = []
        header = None
        rows = []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                metadata.append(line[2:])
            elif line.startswith("#"):
                metadata.append(line[1:])
            elif header is None:
                header = tuple(line.split(","))
            else:
                rows.append([float(x) for x in line.split(",")])
        if header is None:
            raise ValueError("no header line found")
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        return ResultTable(header, data, tuple(metadata))
    finally:
        if own:
            fh.close()


def _config_echo(config: RunConfig) -> list[str]:
    lines = [f"qjump {__version__}"]
    for f in fields(RunConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)}")
    return lines


# -- tasks --------------------------------------------------------------------


def _estimator_table(grid, est, extra_cols=(), extra_data=()):
    cols = ["tau", "mean_re", "mean_im", "stderr_re", "stderr_im", *extra_cols]
    data = np.column_stack(
        [grid, est.values.real, est.values.imag, est.stderr_re, est.stderr_im, *extra_data]
    )
    return cols, data


def _threads(config: RunConfig) -> int:
    if config.threads > 0:
        return config.threads
    return os.cpu_count() or 1


def _tau_grid(config: RunConfig) -> np.ndarray:
    gamma = config.gamma
    n_steps = int(round(config.tau_max / config.dtau))
    return np.arange(n_steps + 1) * (config.dtau / gamma)


def _task_expect(config: RunConfig, model: ModelSpec):
    grid = _tau_grid(config)
    initial = UniformSphere() if config.initial == "uniform" else _initial_state(config.initial, model.dim)
    plan = CorrelationPlan(initial, grid[0], (), _population_op(model), grid)
    est = symmetric_correlation(
        model, plan, config.n_traj, RngStream(config.seed), config.dt / config.gamma, _threads(config)
    )
    cols, data = _estimator_table(grid, est)
    return ResultTable(tuple(cols), data), 0


def _task_validate(config: RunConfig, model: ModelSpec):
    grid = _tau_grid(config)
    initial = UniformSphere() if config.initial == "uniform" else _initial_state(config.initial, model.dim)
    plan = CorrelationPlan(initial, grid[0], (), _population_op(model), grid)
    est = symmetric_correlation(
        model, plan, config.n_traj, RngStream(config.seed), config.dt / config.gamma, _threads(config)
    )
    if isinstance(initial, np.ndarray):
        rho0 = np.outer(initial, initial.conj())
    else:
        rho0 = np.eye(model.dim, dtype=complex) / model.dim
    rhos = rho_trajectory(model, rho0, grid, config.dt / config.gamma)
    oracle_vals = np.einsum("ij,kji->k", _population_op(model), rhos)
    z = est.zscores(oracle_vals)
    cols, data = _estimator_table(
        grid, est, ("oracle_re", "oracle_im", "zscore"),
        (oracle_vals.real, oracle_vals.imag, z),
    )
    max_z = float(np.nanmax(z))
    status = 0 if max_z <= 5.0 else 1
    table = ResultTable(tuple(cols), data, (f"max_abs_zscore = {max_z:.6g}",))
    return table, status


def _g2_plan(config: RunConfig, model: ModelSpec, grid) -> CorrelationPlan:
    sm = model.a_op
    return CorrelationPlan(
        SteadyPrep(config.steady_horizon / config.gamma),
        grid[0],
        (InsertionEvent(grid[0], sm, sm),),
        _population_op(model),
        grid,
    )


def _task_g2(config: RunConfig, model: ModelSpec):
    grid = _tau_grid(config)
    plan = _g2_plan(config, model, grid)
    est = symmetric_correlation(
        model, plan, config.n_traj, RngStream(config.seed), config.dt / config.gamma, _threads(config)
    )
    cols, data = _estimator_table(grid, est)
    return ResultTable(tuple(cols), data), 0


def _spectrum_plan(config: RunConfig, model: ModelSpec, grid) -> CorrelationPlan:
    return CorrelationPlan(
        SteadyPrep(config.steady_horizon / config.gamma),
        grid[0],
        (InsertionEvent(grid[0], None, model.a_op),),
        model.a_op.conj().T,
        grid,
    )


def _task_spectrum(config: RunConfig, model: ModelSpec):
    grid = _tau_grid(config)
    plan = _spectrum_plan(config, model, grid)
    est = general_correlation(
        model, plan, config.n_traj, RngStream(config.seed), config.dt / config.gamma, _threads(config)
    )
    spec = spectrum_from_correlation(grid, est.values, subtract_coherent=True)
    data = np.column_stack([spec.frequencies / config.gamma, spec.intensities])
    meta = (f"subtracted_constant = {spec.metadata['subtracted_constant']}",)
    return ResultTable(("omega", "intensity"), data, meta), 0


def _task_matelem(config: RunConfig, model: ModelSpec):
    grid = _tau_grid(config)
    phi0 = _initial_state(config.matelem_phi0, model.dim)
    psi0 = _initial_state(config.matelem_psi0, model.dim)
    ops = {
        "population": _population_op(model),
        "lower": model.a_op,
        "raise": model.a_op.conj().T,
        "identity": np.eye(model.dim, dtype=complex),
    }
    est = heisenberg_matrix_element(
        model, phi0, psi0, ops[config.matelem_op], grid, config.n_traj,
        RngStream(config.seed), config.dt / config.gamma, _threads(config),
    )
    cols, data = _estimator_table(grid, est)
    return ResultTable(tuple(cols), data), 0


def _task_bench(config: RunConfig, model: ModelSpec):
    grid = _tau_grid(config)
    plan = _spectrum_plan(config, model, grid)
    rng = RngStream(config.seed)
    dt = config.dt / config.gamma

    t0 = time.perf_counter()
    est2 = general_correlation(model, plan, config.n_traj, rng, dt, n_workers=1)
    time2 = time.perf_counter() - t0
    t0 = time.perf_counter()
    est1 = method1_correlation(model, plan, config.n_traj, rng, dt, n_workers=1)
    time1 = time.perf_counter() - t0

    s1 = float(np.mean(est1.stderr))
    s2 = float(np.mean(est2.stderr))
    # cost to reach a fixed target stderr scales as wall_time * stderr^2
    cost1 = time1 * s1 * s1
    cost2 = time2 * s2 * s2
    per_real_ratio = (time1 / config.n_traj) / (time2 / config.n_traj)
    data = np.array(
        [
            [1.0, config.n_traj, time1, s1, cost1],
            [2.0, config.n_traj, time2, s2, cost2],
        ]
    )
    meta = (
        f"wall_time_ratio_method1_over_method2 = {time1 / time2:.6g}",
        f"per_realization_time_ratio = {per_real_ratio:.6g}",
        f"cost_per_target_variance_ratio_method2_over_method1 = {cost2 / cost1:.6g}",
    )
    table = ResultTable(
        ("method", "n_traj", "wall_time", "mean_stderr", "cost_per_target_variance"),
        data,
        meta,
    )
    for line in meta:
        print(line)
    return table, 0


_TASK_RUNNERS = {
    "expect": _task_expect,
    "g2": _task_g2,
    "spectrum": _task_spectrum,
    "matelem": _task_matelem,
    "validate": _task_validate,
    "bench": _task_bench,
}


def run(config: RunConfig) -> tuple[ResultTable, int]:
    """Execute the configured task; returns the table and an exit status."""
    model = build_config_model(config)
    table, status = _TASK_RUNNERS[config.task](config, model)
    table = replace(table, metadata=tuple(_config_echo(config)) + table.metadata)
    return table, status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qjump",
        description="Stochastic quantum-jump simulation of open systems: "
        "expectation values, photon correlations, fluorescence spectra, "
        "oracle validation and method benchmarks.",
    )
    parser.add_argument("--config", required=True, help="path to the INI-style config file")
    parser.add_argument("--task", help="override the configured task")
    parser.add_argument("--out", help="override the output CSV path")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--threads", type=int, help="worker count (default: all cores)")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        overrides = {}
        if args.task is not None:
            overrides["task"] = args.task
        if args.out is not None:
            overrides["out"] = args.out
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if overrides:
            config = replace(config, **overrides)
            validate_config(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        table, status = run(config)
        write_result_table(table, config.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 1
    except (PropagationError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    if status == 1:
        print("validation failure: max |z| exceeds 5", file=sys.stderr)
    return status
