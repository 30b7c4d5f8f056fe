"""Physical model assembly.

Builds, from scenario parameters, the environment correlation matrix (in
units of the rate factor, i.e. with the gamma*tau prefactor divided out),
the two jump channels obtained from its eigendecomposition, and the
non-Hermitian effective Hamiltonian that generates the deterministic flow
between jumps.

Conventions: everything is expressed in the frame rotating at the drive
frequency.  The drive enters the effective Hamiltonian as E*A^dag + conj(E)*A,
so a real amplitude E = Omega/2 gives the usual Rabi coupling
(Omega/2)(sigma^+ + sigma^-).  The squeezing amplitude stored in
``EnvironmentParams.m_squeeze`` is the one seen in this frame; the scenario
constructor maps the drive/squeezing relative phase phi = 2*(phi_s - phi_L)
onto it (see ``scenario_squeezed``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import Herm2, as_operator, eig_herm2

__all__ = [
    "DriveParams",
    "EnvironmentParams",
    "Frame",
    "JumpChannel",
    "ModelError",
    "ModelSpec",
    "build_channels",
    "build_gamma",
    "build_h_eff",
    "build_model",
    "excited_state",
    "ground_state",
    "scenario_squeezed",
    "scenario_thermal",
    "scenario_vacuum_drive",
    "sigma_minus",
    "sigma_plus",
]

POSITIVITY_TOL = 1e-12


class ModelError(ValueError):
    """Invalid physical parameters or inconsistent model assembly."""


def sigma_minus() -> np.ndarray:
    """Two-level lowering operator, basis index 0 = ground."""
    return np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)


def sigma_plus() -> np.ndarray:
    return np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)


def ground_state() -> np.ndarray:
    return np.array([1.0, 0.0], dtype=complex)


def excited_state() -> np.ndarray:
    return np.array([0.0, 1.0], dtype=complex)


@dataclass(frozen=True)
class EnvironmentParams:
    """Bath constants: decay rate, mean photon number, squeezing, shifts."""

    gamma: float
    n_photon: float = 0.0
    m_squeeze: complex = 0.0
    epsilon: float = 1.0
    s0: float = 0.0  # Lamb shift
    s1: float = 0.0  # Stark shift

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ModelError(f"gamma must be positive, got {self.gamma}")
        if self.n_photon < 0.0:
            raise ModelError(f"mean photon number must be >= 0, got {self.n_photon}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ModelError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        bound = self.n_photon * (self.n_photon + self.epsilon)
        if abs(self.m_squeeze) ** 2 > bound + POSITIVITY_TOL:
            raise ModelError(
                "|M|^2 = {:.6g} violates the positivity constraint "
                "|M|^2 <= N(N+epsilon) = {:.6g}".format(abs(self.m_squeeze) ** 2, bound)
            )


@dataclass(frozen=True)
class DriveParams:
    """Coherent drive in the rotating frame."""

    amplitude: complex = 0.0  # E; Rabi frequency is 2|E|
    detuning: float = 0.0  # omega_s - omega_L
    phase: float = 0.0  # phi_L, already folded into `amplitude`


@dataclass(frozen=True)
class Frame:
    """Rotating frame in which all model operators are expressed."""

    rotation_frequency: float = 0.0


@dataclass(frozen=True)
class JumpChannel:
    """One decay channel: dimensionless rate factor and jump operator.

    The physical jump rate for a normalized state psi is
    gamma * rate_factor * ||op psi||^2.
    """

    rate_factor: float
    op: np.ndarray

    def __post_init__(self):
        if self.rate_factor < 0.0:
            raise ModelError(f"channel rate factor must be >= 0, got {self.rate_factor}")


@dataclass(frozen=True)
class ModelSpec:
    """Fully assembled open-system model (immutable, shareable)."""

    dim: int
    h_sys: np.ndarray
    a_op: np.ndarray
    env: EnvironmentParams
    drive: DriveParams
    channels: tuple[JumpChannel, ...]
    h_eff: np.ndarray
    frame: Frame = field(default_factory=Frame)

    @property
    def gamma(self) -> float:
        return self.env.gamma

    def jump_ops(self) -> np.ndarray:
        """Channel operators stacked along the first axis."""
        return np.stack([c.op for c in self.channels])

    def rate_factors(self) -> np.ndarray:
        return np.array([c.rate_factor for c in self.channels])


def build_gamma(env: EnvironmentParams, phase: float = 0.0) -> Herm2:
    """Environment correlation matrix divided by gamma*tau.

    The returned matrix is [[N+1, -M e^{i phase}], [-conj(M) e^{-i phase}, N]];
    ``phase`` carries the residual reference-time phase and is zero in the
    rotating frame on resonance.
    """
    m = env.m_squeeze * np.exp(1j * phase)
    return Herm2(env.n_photon + 1.0, env.n_photon, -m)


def build_channels(g: Herm2, a_op: np.ndarray) -> list[JumpChannel]:
    """Jump channels from the eigendecomposition of the correlation matrix.

    Channel i has rate factor lambda_i (eigenvalue of ``g``) and operator
    J_i = conj(mu_1i) A + conj(mu_2i) A^dag, sorted by descending rate.
    """
    a_op = as_operator(a_op)
    values, vectors = eig_herm2(g)
    if values[-1] < -1e-9 * max(1.0, values[0]):
        raise ModelError(f"correlation matrix is not positive semidefinite: {values}")
    a_dag = a_op.conj().T
    channels = []
    for i in range(2):
        lam = float(max(values[i], 0.0))
        op = np.conj(vectors[0, i]) * a_op + np.conj(vectors[1, i]) * a_dag
        channels.append(JumpChannel(lam, op))
    return channels


def build_h_eff(
    h_sys: np.ndarray,
    a_op: np.ndarray,
    env: EnvironmentParams,
    drive: DriveParams,
    channels: list[JumpChannel] | tuple[JumpChannel, ...],
) -> np.ndarray:
    """Non-Hermitian effective Hamiltonian.

    h_eff = h_sys + (E A^dag + conj(E) A) + H_LS + H_D with
    H_LS = -(S0+S1) A^dag A + S1 A A^dag and
    H_D  = -(i gamma / 2) sum_i lambda_i J_i^dag J_i.
    """
    h_sys = as_operator(h_sys)
    a_op = as_operator(a_op, h_sys.shape[0])
    a_dag = a_op.conj().T
    e = complex(drive.amplitude)
    h_dr = e * a_dag + np.conj(e) * a_op
    h_ls = -(env.s0 + env.s1) * (a_dag @ a_op) + env.s1 * (a_op @ a_dag)
    damp = np.zeros_like(h_sys)
    for c in channels:
        damp = damp + c.rate_factor * (c.op.conj().T @ c.op)
    h_d = -0.5j * env.gamma * damp
    return h_sys + h_dr + h_ls + h_d


def build_model(
    h_sys: np.ndarray,
    a_op: np.ndarray,
    env: EnvironmentParams,
    drive: DriveParams = DriveParams(),
    frame: Frame = Frame(),
) -> ModelSpec:
    """Assemble and validate a ModelSpec from its ingredients."""
    h_sys = as_operator(h_sys)
    dim = h_sys.shape[0]
    a_op = as_operator(a_op, dim)
    if abs(env.m_squeeze) > 0.0 and drive.detuning != 0.0:
        raise ModelError(
            "detuned drive with a squeezed environment is not supported: the "
            "squeezing phase would rotate at twice the detuning"
        )
    channels = tuple(build_channels(build_gamma(env), a_op))
    h_eff = build_h_eff(h_sys, a_op, env, drive, channels)

    # the anti-Hermitian part must reproduce the total damping operator
    anti = (h_eff - h_eff.conj().T) / 2.0
    damp = sum(c.rate_factor * (c.op.conj().T @ c.op) for c in channels)
    ref = -0.5j * env.gamma * damp
    scale = max(1.0, float(np.abs(h_eff).max()))
    if np.abs(anti - ref).max() > 1e-12 * scale:
        raise ModelError("internal inconsistency: anti-Hermitian part of h_eff")

    return ModelSpec(dim, h_sys, a_op, env, drive, channels, h_eff, frame)


def _two_level(detuning: float) -> tuple[np.ndarray, np.ndarray]:
    sm = sigma_minus()
    h_sys = detuning * (sigma_plus() @ sm)
    return h_sys, sm


def scenario_vacuum_drive(
    gamma: float, rabi_frequency: float = 0.0, detuning: float = 0.0
) -> ModelSpec:
    """Coherently driven two-level atom coupled to the vacuum."""
    env = EnvironmentParams(gamma=gamma)
    drive = DriveParams(amplitude=0.5 * rabi_frequency, detuning=detuning)
    h_sys, a_op = _two_level(detuning)
    return build_model(h_sys, a_op, env, drive)


def scenario_squeezed(
    gamma: float,
    n_photon: float,
    efficiency: float = 1.0,
    phi_rel: float = 0.0,
    rabi_frequency: float = 0.0,
) -> ModelSpec:
    """Two-level atom in a (possibly imperfect) squeezed vacuum, resonant drive.

    ``phi_rel`` is the relative phase 2*(phi_s - phi_L) between squeezing and
    drive; phi_rel = 0 narrows the central fluorescence peak below the natural
    linewidth, phi_rel = pi broadens it.  |M| is fixed to sqrt(N(N+epsilon)).
    The sign convention absorbs the basis rotation that makes the drive term
    real (see the module docstring).
    """
    m_abs = np.sqrt(n_photon * (n_photon + efficiency))
    m = -m_abs * np.exp(-1j * phi_rel)
    env = EnvironmentParams(
        gamma=gamma, n_photon=n_photon, m_squeeze=m, epsilon=efficiency
    )
    drive = DriveParams(amplitude=0.5 * rabi_frequency, detuning=0.0)
    h_sys, a_op = _two_level(0.0)
    return build_model(h_sys, a_op, env, drive)


def scenario_thermal(
    gamma: float, n_photon: float, rabi_frequency: float = 0.0, detuning: float = 0.0
) -> ModelSpec:
    """Two-level atom coupled to a thermal mixture (M = 0)."""
    env = EnvironmentParams(gamma=gamma, n_photon=n_photon)
    drive = DriveParams(amplitude=0.5 * rabi_frequency, detuning=detuning)
    h_sys, a_op = _two_level(detuning)
    return build_model(h_sys, a_op, env, drive)
