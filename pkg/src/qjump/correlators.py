"""Trajectory estimators for matrix elements and multitime correlations.

Plans describe a correlation measurement: an initial condition, a
time-ordered list of operator insertions, a final (measured) operator and an
output time grid.  Symmetric plans (identical left/right insertion strings)
run in the single Hilbert space; general plans lift the state into a pair of
vectors at the first insertion and continue in the doubled space, where the
estimate is weight * <phi|W|psi>.

One stochastic path serves every grid point (states are recorded along the
way), so estimates at different tau share trajectories and only per-point
standard errors are reported.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import as_operator, as_state
from .model import ModelSpec
from .pdp import JumpEngine, RngStream, default_dt, uniform_sphere_state

__all__ = [
    "CorrelationPlan",
    "EstimatorResult",
    "FixedPair",
    "InsertionEvent",
    "RunningStats",
    "SteadyPrep",
    "UniformSphere",
    "ensemble_covariance",
    "general_correlation",
    "heisenberg_matrix_element",
    "method1_correlation",
    "mixed_initial_correlation",
    "naive_independent_matrix_element",
    "polarization_decompose",
    "symmetric_correlation",
]

BATCH_SIZE = 4096  # fixed so that results do not depend on the worker count


# -- statistics ------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorResult:
    """Monte Carlo estimate per grid point with componentwise standard errors."""

    values: np.ndarray
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("an estimator result needs at least 2 samples")
        if np.any(self.stderr_re < 0) or np.any(self.stderr_im < 0):
            raise ValueError("standard errors must be nonnegative")

    @property
    def stderr(self) -> np.ndarray:
        """Combined magnitude of the componentwise standard errors."""
        return np.hypot(self.stderr_re, self.stderr_im)

    def zscores(self, reference: np.ndarray) -> np.ndarray:
        """Largest componentwise |z| against a reference curve, per point."""
        reference = np.asarray(reference, dtype=complex)
        dre = np.abs(self.values.real - reference.real)
        dim = np.abs(self.values.imag - reference.imag)
        with np.errstate(divide="ignore", invalid="ignore"):
            zre = np.where(self.stderr_re > 0, dre / self.stderr_re, np.where(dre > 0, np.inf, 0.0))
            zim = np.where(self.stderr_im > 0, dim / self.stderr_im, np.where(dim > 0, np.inf, 0.0))
        return np.maximum(zre, zim)


class RunningStats:
    """Streaming accumulation of complex sample batches, shape-(m,) samples."""

    def __init__(self, size: int):
        self.count = 0
        self.sum = np.zeros(size, dtype=complex)
        self.sum_re2 = np.zeros(size)
        self.sum_im2 = np.zeros(size)

    def add_batch(self, values: np.ndarray) -> None:
        values = np.atleast_2d(values)
        self.count += values.shape[0]
        self.sum += values.sum(axis=0)
        self.sum_re2 += (values.real**2).sum(axis=0)
        self.sum_im2 += (values.imag**2).sum(axis=0)

    def merge(self, other: tuple) -> None:
        count, s, re2, im2 = other
        self.count += count
        self.sum += s
        self.sum_re2 += re2
        self.sum_im2 += im2

    def partial(self) -> tuple:
        return (self.count, self.sum, self.sum_re2, self.sum_im2)

    def result(self) -> EstimatorResult:
        n = self.count
        if n < 2:
            raise ValueError("at least 2 samples are needed")
        mean = self.sum / n
        var_re = np.maximum(self.sum_re2 - n * mean.real**2, 0.0) / (n - 1)
        var_im = np.maximum(self.sum_im2 - n * mean.imag**2, 0.0) / (n - 1)
        return EstimatorResult(mean, np.sqrt(var_re / n), np.sqrt(var_im / n), n)


# -- plans -----------------------------------------------------------------


@dataclass(frozen=True)
class UniformSphere:
    """Draw the initial state Haar-uniformly on the unit sphere."""


@dataclass(frozen=True)
class SteadyPrep:
    """Uniform initial draw followed by damped evolution for ``horizon``.

    The preparation segment runs on [t0 - horizon, t0] with the same jump
    process, so by t0 the ensemble has relaxed to the steady state.
    """

    horizon: float


@dataclass(frozen=True)
class FixedPair:
    """Start directly in the doubled space from the (unnormalized) pair."""

    phi: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True)
class InsertionEvent:
    """Operator insertion at one time.

    ``left_op`` is the operator whose adjoint acts from the left (a member of
    the X string), ``right_op`` acts from the right (a member of the Y
    string); ``None`` stands for the identity.
    """

    time: float
    left_op: np.ndarray | None = None
    right_op: np.ndarray | None = None

    def is_symmetric(self) -> bool:
        if self.left_op is None:
            return self.right_op is None
        return self.right_op is not None and np.array_equal(self.left_op, self.right_op)


@dataclass(frozen=True)
class CorrelationPlan:
    """A correlation measurement: initial condition, insertions, observable, grid."""

    initial: object
    t0: float
    events: tuple[InsertionEvent, ...]
    final_op: np.ndarray
    tau_grid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau_grid", np.asarray(self.tau_grid, dtype=float))
        object.__setattr__(self, "events", _merge_events(self.events, self.t0))
        if self.tau_grid.size == 0:
            raise ValueError("tau grid must be nonempty")
        if np.any(np.diff(self.tau_grid) <= 0):
            raise ValueError("tau grid must be strictly increasing")
        if self.tau_grid[0] < self.t0 - 1e-12:
            raise ValueError("tau grid must not precede t0")
        if self.events and self.tau_grid[0] < self.events[-1].time - 1e-12:
            raise ValueError("tau grid must not precede the last insertion event")


def _merge_events(events, t0) -> tuple[InsertionEvent, ...]:
    events = tuple(events)
    for ev in events:
        if ev.time < t0 - 1e-12:
            raise ValueError("insertion events must not precede t0")
    if any(events[i].time > events[i + 1].time for i in range(len(events) - 1)):
        raise ValueError("insertion events must be time-ordered")
    merged: list[InsertionEvent] = []
    for ev in events:
        if merged and ev.time == merged[-1].time:
            prev = merged[-1]
            merged[-1] = InsertionEvent(
                ev.time,
                _compose(ev.left_op, prev.left_op),
                _compose(ev.right_op, prev.right_op),
            )
        else:
            merged.append(ev)
    return tuple(merged)


def _compose(later, earlier):
    if later is None:
        return earlier
    if earlier is None:
        return later
    return np.asarray(later) @ np.asarray(earlier)


# -- batch driver ------------------------------------------------------------


def _make_generators(master_seed: int, i0: int, i1: int):
    return [RngStream(master_seed, i).generator() for i in range(i0, i1)]


def _initial_engine(model, plan, gens, dt, master_seed, i0):
    """Build the engine for one batch, including any preparation segment."""
    b = len(gens)
    init = plan.initial
    if isinstance(init, np.ndarray):
        psi = as_state(init, model.dim)
        norm = np.linalg.norm(psi)
        if norm == 0.0:
            raise ValueError("initial state must be nonzero")
        states = np.broadcast_to(psi / norm, (b, model.dim)).copy()[:, None, :]
        return JumpEngine(model, states, plan.t0, gens, dt)
    if isinstance(init, FixedPair):
        phi = as_state(init.phi, model.dim)
        psi = as_state(init.psi, model.dim)
        c0 = float(np.vdot(phi, phi).real + np.vdot(psi, psi).real)
        if c0 <= 0.0:
            raise ValueError("initial pair must be nonzero")
        pair = np.stack([phi, psi]) / np.sqrt(c0)
        states = np.broadcast_to(pair, (b, 2, model.dim)).copy()
        eng = JumpEngine(model, states, plan.t0, gens, dt)
        eng.weights[:] = c0
        return eng
    if isinstance(init, UniformSphere):
        states = np.stack([uniform_sphere_state(g, model.dim) for g in gens])
        return JumpEngine(model, states[:, None, :], plan.t0, gens, dt)
    if isinstance(init, SteadyPrep):
        states = np.stack([uniform_sphere_state(g, model.dim) for g in gens])
        eng = JumpEngine(model, states[:, None, :], plan.t0 - init.horizon, gens, dt)
        eng.advance(plan.t0)
        return eng
    raise TypeError(f"unsupported initial condition: {init!r}")


def _plan_batch(args) -> tuple:
    stats = RunningStats(args[1].tau_grid.size)
    stats.add_batch(_batch_values(args))
    return stats.partial()


def _run_plan(model, plan, mode, n_traj, rng, dt, n_workers) -> EstimatorResult:
    if n_traj < 2:
        raise ValueError("n_traj must be at least 2")
    dt = default_dt(model) if dt is None else float(dt)
    final_op = as_operator(plan.final_op, model.dim)
    plan = replace(plan, final_op=final_op)
    seed = rng.master_seed if isinstance(rng, RngStream) else int(rng)
    base = rng.stream_index if isinstance(rng, RngStream) else 0
    batches = [
        (model, plan, mode, seed, base + i, base + min(i + BATCH_SIZE, n_traj), dt)
        for i in range(0, n_traj, BATCH_SIZE)
    ]
    stats = RunningStats(plan.tau_grid.size)
    if n_workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for partial in pool.map(_plan_batch, batches):
                stats.merge(partial)
    else:
        for args in batches:
            stats.merge(_plan_batch(args))
    return stats.result()


# -- public estimators -------------------------------------------------------


def symmetric_correlation(
    model: ModelSpec,
    plan: CorrelationPlan,
    n_traj: int,
    rng: RngStream,
    dt: float | None = None,
    n_workers: int = 1,
) -> EstimatorResult:
    """Symmetric time-ordered correlation <X1^dag(t1)...Y(tau)...X1(t1)>.

    Every insertion event must carry the same operator in both slots; the
    run stays in the single Hilbert space, accumulating the squared-norm
    weights ||X_i psi||^2 and measuring <psi|Y|psi> on the tau grid.
    """
    for ev in plan.events:
        if not ev.is_symmetric():
            raise ValueError("symmetric plans need identical left/right operators")
    return _run_plan(model, plan, "symmetric", n_traj, rng, dt, n_workers)


def general_correlation(
    model: ModelSpec,
    plan: CorrelationPlan,
    n_traj: int,
    rng: RngStream,
    dt: float | None = None,
    n_workers: int = 1,
) -> EstimatorResult:
    """General time-ordered correlation via the doubled-space process.

    Evolution stays in the single space until the first insertion, which
    lifts the state to the normalized pair (L psi, R psi) with weight
    ||L psi||^2 + ||R psi||^2; later insertions act blockwise, and the
    estimate on the grid is weight * <phi|W|psi>.
    """
    return _run_plan(model, plan, "general", n_traj, rng, dt, n_workers)


def heisenberg_matrix_element(
    model: ModelSpec,
    phi0: np.ndarray,
    psi0: np.ndarray,
    x_op: np.ndarray,
    tau_grid,
    n_traj: int,
    rng: RngStream,
    dt: float | None = None,
    n_workers: int = 1,
) -> EstimatorResult:
    """Matrix element <phi0, t0| X(tau) |psi0, t0> of a reduced Heisenberg operator.

    The pair (phi0, psi0) evolves jointly in the doubled space; the estimator
    averages c0 * <phi(tau)|X|psi(tau)> with c0 = ||phi0||^2 + ||psi0||^2.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    plan = CorrelationPlan(
        initial=FixedPair(np.asarray(phi0, dtype=complex), np.asarray(psi0, dtype=complex)),
        t0=0.0,
        events=(),
        final_op=as_operator(x_op, model.dim),
        tau_grid=tau_grid,
    )
    return _run_plan(model, plan, "general", n_traj, rng, dt, n_workers)


def mixed_initial_correlation(
    model: ModelSpec,
    initial_sampler,
    plan: CorrelationPlan,
    n_traj: int,
    rng: RngStream,
    dt: float | None = None,
    n_workers: int = 1,
) -> EstimatorResult:
    """Correlation with the initial state drawn from a distribution.

    ``initial_sampler`` replaces the plan's initial condition (an array for a
    deterministic state, ``UniformSphere()`` or ``SteadyPrep(horizon)``);
    dispatches to the symmetric or doubled-space estimator depending on the
    plan's events.
    """
    plan = replace(plan, initial=initial_sampler)
    if all(ev.is_symmetric() for ev in plan.events):
        return symmetric_correlation(model, plan, n_traj, rng, dt, n_workers)
    return general_correlation(model, plan, n_traj, rng, dt, n_workers)


def polarization_decompose(x_op: np.ndarray, y_op: np.ndarray, n: int = 4):
    """Decompose X^dag M Y into N symmetric forms.

    Returns ``[(weight_k, X + e^{2 pi i k / N} Y)]`` with weights
    e^{-2 pi i k / N} / N, such that
    sum_k weight_k (X + e^{i theta_k} Y)^dag M (X + e^{i theta_k} Y)
    equals X^dag M Y for every M.  Requires N >= 3.
    """
    if n < 3:
        raise ValueError("the polarization identity requires N >= 3")
    x_op = np.asarray(x_op, dtype=complex)
    y_op = np.asarray(y_op, dtype=complex)
    out = []
    for k in range(1, n + 1):
        phase = np.exp(2j * np.pi * k / n)
        out.append((np.conj(phase) / n, x_op + phase * y_op))
    return out


def method1_correlation(
    model: ModelSpec,
    plan: CorrelationPlan,
    n_traj: int,
    rng: RngStream,
    dt: float | None = None,
    n_workers: int = 1,
    n_phases: int = 4,
) -> EstimatorResult:
    """Two-time correlation <X^dag(t+tau) Y(t)> via the polarization identity.

    ``plan`` must contain exactly one insertion event whose left slot is the
    identity (the Y(t) insertion); the method replaces it by the N symmetric
    insertions (I + e^{i theta_k} Y) and combines the runs per trajectory
    index, so the returned standard errors account for the combination.
    """
    if len(plan.events) != 1 or plan.events[0].left_op is not None:
        raise ValueError("method I expects a single right-slot insertion event")
    if plan.events[0].right_op is None:
        raise ValueError("the insertion operator must not be the identity")
    if n_traj < 2:
        raise ValueError("n_traj must be at least 2")
    dt = default_dt(model) if dt is None else float(dt)
    y_op = plan.events[0].right_op
    eye = np.eye(model.dim, dtype=complex)
    terms = polarization_decompose(eye, y_op, n_phases)
    seed = rng.master_seed
    base = rng.stream_index

    stats = RunningStats(plan.tau_grid.size)
    for i0 in range(0, n_traj, BATCH_SIZE):
        i1 = min(i0 + BATCH_SIZE, n_traj)
        combined = np.zeros((i1 - i0, plan.tau_grid.size), dtype=complex)
        for k, (weight, w_op) in enumerate(terms):
            sub = replace(
                plan, events=(InsertionEvent(plan.events[0].time, w_op, w_op),)
            )
            args = (model, sub, "symmetric", seed, base + k * n_traj + i0,
                    base + k * n_traj + i1, dt)
            vals = _batch_values(args)
            combined += weight * vals
        stats.add_batch(combined)
    return stats.result()


def _batch_values(args) -> np.ndarray:
    """Like _plan_batch but returning the raw per-trajectory values."""
    model, plan, mode, master_seed, i0, i1, dt = args
    gens = _make_generators(master_seed, i0, i1)
    eng = _initial_engine(model, plan, gens, dt, master_seed, i0)
    for ev in plan.events:
        eng.advance(ev.time)
        if mode == "general" and eng.k == 1:
            eng.lift_pair(ev.left_op, ev.right_op)
        else:
            eng.apply_insertion(ev.left_op, ev.right_op)
    vals = np.empty((i1 - i0, plan.tau_grid.size), dtype=complex)
    for j, tau in enumerate(plan.tau_grid):
        eng.advance(tau)
        vals[:, j] = eng.measure(plan.final_op)
    return vals


def naive_independent_matrix_element(
    model: ModelSpec,
    phi0: np.ndarray,
    psi0: np.ndarray,
    x_op: np.ndarray,
    tau_grid,
    n_traj: int,
    rng: RngStream,
    dt: float | None = None,
) -> EstimatorResult:
    """Biased control: propagate phi and psi independently and average <phi|X|psi>.

    This is the naive generalization of the closed-system scheme; it is wrong
    for open systems and is kept only to demonstrate the bias the doubled
    space construction removes.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    x_op = as_operator(x_op, model.dim)
    dt = default_dt(model) if dt is None else float(dt)
    phi0 = as_state(phi0, model.dim)
    psi0 = as_state(psi0, model.dim)
    phi0 = phi0 / np.linalg.norm(phi0)
    psi0 = psi0 / np.linalg.norm(psi0)
    seed = rng.master_seed
    stats = RunningStats(tau_grid.size)
    for i0 in range(0, n_traj, BATCH_SIZE):
        i1 = min(i0 + BATCH_SIZE, n_traj)
        b = i1 - i0
        gens_phi = _make_generators(seed, i0, i1)
        gens_psi = _make_generators(seed, n_traj + i0, n_traj + i1)
        eng_phi = JumpEngine(model, np.broadcast_to(phi0, (b, model.dim)).copy()[:, None, :],
                             0.0, gens_phi, dt)
        eng_psi = JumpEngine(model, np.broadcast_to(psi0, (b, model.dim)).copy()[:, None, :],
                             0.0, gens_psi, dt)
        vals = np.empty((b, tau_grid.size), dtype=complex)
        for j, tau in enumerate(tau_grid):
            eng_phi.advance(tau)
            eng_psi.advance(tau)
            phi = eng_phi.normalized_states()[:, 0, :]
            psi = eng_psi.normalized_states()[:, 0, :]
            vals[:, j] = np.einsum("nd,de,ne->n", phi.conj(), x_op, psi)
        stats.add_batch(vals)
    return stats.result()


# -- ensemble covariance ------------------------------------------------------


def _covariance_batch(args):
    model, initial, times, master_seed, i0, i1, dt = args
    gens = _make_generators(master_seed, i0, i1)
    plan_like = CorrelationPlan(
        initial=initial,
        t0=float(times[0]),
        events=(),
        final_op=np.eye(model.dim, dtype=complex),
        tau_grid=times,
    )
    eng = _initial_engine(model, plan_like, gens, dt, master_seed, i0)
    d = model.dim
    count = i1 - i0
    sum_outer = np.zeros((len(times), d, d), dtype=complex)
    sum_re2 = np.zeros((len(times), d, d))
    sum_im2 = np.zeros((len(times), d, d))
    for j, t in enumerate(times):
        eng.advance(t)
        psi = eng.normalized_states()[:, 0, :]
        outer = np.einsum("nd,ne->nde", psi, psi.conj())
        sum_outer[j] = outer.sum(axis=0)
        sum_re2[j] = (outer.real**2).sum(axis=0)
        sum_im2[j] = (outer.imag**2).sum(axis=0)
    return count, sum_outer, sum_re2, sum_im2


def ensemble_covariance(
    model: ModelSpec,
    initial,
    times,
    n_traj: int,
    rng: RngStream,
    dt: float | None = None,
    n_workers: int = 1,
):
    """Ensemble covariance matrix (the stochastic density matrix) on a grid.

    Returns ``(rho, stderr_re, stderr_im, n)`` where rho has shape
    (len(times), d, d) and the standard errors are componentwise.
    """
    times = np.asarray(times, dtype=float)
    dt = default_dt(model) if dt is None else float(dt)
    seed = rng.master_seed
    base = rng.stream_index
    batches = [
        (model, initial, times, seed, base + i, base + min(i + BATCH_SIZE, n_traj), dt)
        for i in range(0, n_traj, BATCH_SIZE)
    ]
    count = 0
    sum_outer = None
    sum_re2 = None
    sum_im2 = None
    if n_workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(_covariance_batch, batches))
    else:
        parts = [_covariance_batch(a) for a in batches]
    for c, s, r2, i2 in parts:
        count += c
        sum_outer = s if sum_outer is None else sum_outer + s
        sum_re2 = r2 if sum_re2 is None else sum_re2 + r2
        sum_im2 = i2 if sum_im2 is None else sum_im2 + i2
    mean = sum_outer / count
    var_re = np.maximum(sum_re2 - count * mean.real**2, 0.0) / (count - 1)
    var_im = np.maximum(sum_im2 - count * mean.imag**2, 0.0) / (count - 1)
    return mean, np.sqrt(var_re / count), np.sqrt(var_im / count), count
