"""Dense master-equation ground truth.

Propagates density matrices with the Lindblad generator built from the same
ModelSpec the trajectory engine uses, and evaluates two-time and multitime
correlation functions by nested application of the propagator (quantum
regression).  Everything here is deterministic and serves as the oracle the
stochastic estimators are validated against.
"""

from __future__ import annotations

import numpy as np

from .linalg import as_operator, taylor4_propagator
from .model import ModelError, ModelSpec

__all__ = [
    "DensityMatrix",
    "lindblad_rhs",
    "liouvillian_matrix",
    "propagate_rho",
    "regression_correlation",
    "regression_multitime",
    "rho_trajectory",
    "steady_state_rho",
    "validate_density_matrix",
]

#: alias documenting intent; density matrices are plain (d, d) complex arrays
DensityMatrix = np.ndarray


def validate_density_matrix(rho: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Check Hermiticity, unit trace and positivity of a density matrix."""
    rho = as_operator(rho)
    if np.abs(rho - rho.conj().T).max() > atol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > atol:
        raise ValueError(f"density matrix trace is {np.trace(rho):.12g}, not 1")
    if np.linalg.eigvalsh(rho).min() < -max(atol, 1e-8):
        raise ValueError("density matrix has a significantly negative eigenvalue")
    return rho


def _hermitian_part(model: ModelSpec) -> np.ndarray:
    return 0.5 * (model.h_eff + model.h_eff.conj().T)


def lindblad_rhs(model: ModelSpec, rho: np.ndarray) -> np.ndarray:
    """Right-hand side of the master equation for the given model.

    d(rho)/dt = -i[H, rho]
                + gamma sum_i lambda_i (J_i rho J_i^dag
                                        - {J_i^dag J_i, rho} / 2),
    with H the Hermitian part of the effective Hamiltonian.
    """
    h = _hermitian_part(model)
    out = -1j * (h @ rho - rho @ h)
    for c in model.channels:
        rate = model.gamma * c.rate_factor
        if rate == 0.0:
            continue
        j = c.op
        jdj = j.conj().T @ j
        out = out + rate * (j @ rho @ j.conj().T - 0.5 * (jdj @ rho + rho @ jdj))
    return out


def liouvillian_matrix(model: ModelSpec) -> np.ndarray:
    """Lindblad generator as a (d^2, d^2) matrix acting on row-major vec(rho)."""
    d = model.dim
    eye = np.eye(d, dtype=complex)
    h = _hermitian_part(model)
    # vec(A X B) = kron(A, B.T) @ vec(X) for row-major flattening
    liou = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c in model.channels:
        rate = model.gamma * c.rate_factor
        if rate == 0.0:
            continue
        j = c.op
        jdj = j.conj().T @ j
        liou = liou + rate * (
            np.kron(j, j.conj())
            - 0.5 * np.kron(jdj, eye)
            - 0.5 * np.kron(eye, jdj.T)
        )
    return liou


def _default_dt(model: ModelSpec, dt) -> float:
    return 1e-3 / model.gamma if dt is None else float(dt)


def _step_through(liou, mat, duration, dt):
    """March vec(mat) from 0 to duration with fixed 4th-order steps."""
    vec = mat.reshape(-1)
    full_step = taylor4_propagator(1j * liou, dt)  # exp(liou * dt), degree 4
    t = 0.0
    remaining = duration
    while remaining > dt * (1.0 + 1e-12):
        vec = full_step @ vec
        remaining -= dt
        t += dt
    if remaining > 1e-15 * max(1.0, abs(duration)):
        vec = taylor4_propagator(1j * liou, remaining) @ vec
    return vec.reshape(mat.shape)


def propagate_rho(
    model: ModelSpec, rho0: np.ndarray, t0: float, t1: float, dt: float | None = None
) -> np.ndarray:
    """Propagate a (generally non-positive) matrix by the master equation."""
    rho0 = as_operator(rho0, model.dim)
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if t1 == t0:
        return rho0.copy()
    dt = _default_dt(model, dt)
    return _step_through(liouvillian_matrix(model), rho0, t1 - t0, dt)


def rho_trajectory(
    model: ModelSpec, rho0: np.ndarray, times, dt: float | None = None
) -> np.ndarray:
    """Density matrix snapshots on a time grid, shape (len(times), d, d)."""
    times = np.asarray(times, dtype=float)
    rho0 = as_operator(rho0, model.dim)
    dt = _default_dt(model, dt)
    liou = liouvillian_matrix(model)
    out = np.empty((times.size, model.dim, model.dim), dtype=complex)
    current = rho0.copy()
    t = times[0]
    out[0] = current
    for k in range(1, times.size):
        if times[k] < t:
            raise ValueError("times must be nondecreasing")
        current = _step_through(liou, current, times[k] - t, dt)
        t = times[k]
        out[k] = current
    return out


def steady_state_rho(
    model: ModelSpec,
    horizon: float | None = None,
    dt: float | None = None,
    rho0: np.ndarray | None = None,
) -> np.ndarray:
    """Steady state reached by propagating for a long horizon (default 30/gamma).

    The default initial condition I/d is the mean of the uniform distribution
    on the unit sphere, matching the stochastic preparation procedure.
    """
    if horizon is None:
        horizon = 30.0 / model.gamma
    if rho0 is None:
        rho0 = np.eye(model.dim, dtype=complex) / model.dim
    return propagate_rho(model, rho0, 0.0, horizon, dt)


def regression_correlation(
    model: ModelSpec,
    rho0: np.ndarray,
    x_op: np.ndarray,
    y_op: np.ndarray,
    t1: float,
    tau_grid,
    dt: float | None = None,
) -> np.ndarray:
    """Two-time correlation <X^dag(t1) Y(t1+tau)> by quantum regression.

    Propagates rho0 to t1, right-multiplies by X^dag, propagates the result
    with the same (linear) generator and traces against Y on the tau grid.
    """
    x_op = as_operator(x_op, model.dim)
    y_op = as_operator(y_op, model.dim)
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.size == 0 or tau_grid[0] < 0.0:
        raise ValueError("tau grid must be nonempty with tau >= 0")
    rho_t1 = propagate_rho(model, rho0, 0.0, t1, dt) if t1 > 0 else np.array(rho0, dtype=complex)
    sandwich = rho_t1 @ x_op.conj().T
    mats = rho_trajectory(model, sandwich, np.concatenate([[0.0], tau_grid]), dt)[1:] \
        if tau_grid[0] > 0.0 else rho_trajectory(model, sandwich, tau_grid, dt)
    return np.einsum("ij,kji->k", y_op, mats)


def regression_multitime(
    model: ModelSpec, rho0: np.ndarray, plan, dt: float | None = None
) -> np.ndarray:
    """General time-ordered multitime correlation by nested regression.

    ``plan`` is a ``correlators.CorrelationPlan``; at each insertion event the
    propagated matrix is transformed as  m -> R m L^dag  (L, R the event's
    left/right operators), and the final operator is traced on the tau grid.
    """
    eye = np.eye(model.dim, dtype=complex)
    mat = np.array(rho0, dtype=complex)
    t = plan.t0
    for ev in plan.events:
        if ev.time > t:
            mat = propagate_rho(model, mat, t, ev.time, dt)
            t = ev.time
        left = eye if ev.left_op is None else ev.left_op
        right = eye if ev.right_op is None else ev.right_op
        mat = right @ mat @ left.conj().T
    grid = np.asarray(plan.tau_grid, dtype=float)
    if grid.size and grid[0] < t - 1e-12:
        raise ValueError("tau grid must not precede the last insertion event")
    times = np.concatenate([[t], grid])
    mats = rho_trajectory(model, mat, times, dt)[1:]
    return np.einsum("ij,kji->k", plan.final_op, mats)


def thermal_steady_population(n_photon: float) -> float:
    """Excited-state population N/(2N+1) of the undriven thermal fixed point."""
    if n_photon < 0:
        raise ModelError("n_photon must be >= 0")
    return n_photon / (2.0 * n_photon + 1.0)
