"""Piecewise deterministic jump-process engine.

Between jumps the engine integrates the unnormalized linear equation
dpsi/dt = -i H_eff psi with a fixed-step 4th-order scheme (precomputed as a
degree-4 Taylor propagator, which for a constant generator is algebraically
the same as RK4).  Waiting times are sampled by the norm-threshold rule:
draw u uniform in (0, 1) and jump when ||psi||^2 first reaches u, locating
the crossing by bisection inside the bracketing step.  At a jump, channel i
fires with probability proportional to lambda_i ||J_i psi||^2 and the state
is replaced by the normalized J_i psi.

The same machinery drives pairs of state vectors (the doubled space used for
matrix elements and general correlations): states carry a component axis of
size 1 or 2, the block propagator and block jump operators act
componentwise, and norms are taken over the whole stack.

Implementation note: along one Taylor step the squared norm is a degree-8
polynomial in the substep length, with coefficients obtained from the Gram
matrix of H^p psi (p = 0..4).  Jump times are bisected on that polynomial,
which keeps the per-jump cost small.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import PropagationError, as_state
from .model import ModelSpec

__all__ = [
    "JumpEngine",
    "PairedState",
    "RngStream",
    "Trajectory",
    "default_dt",
    "evolve_doubled",
    "evolve_single",
    "locate_jump_time",
    "uniform_sphere_state",
]

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_NORM_TOL = 1e-9
# phase factors i^p (-i)^q entering the squared-norm polynomial coefficients
_PHASE = [[(1j) ** p * (-1j) ** q for q in range(5)] for p in range(5)]
_INV_FACT = np.array([1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0])


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream, splittable by trajectory index.

    Identical (master_seed, stream_index) pairs yield identical sequences
    regardless of how trajectories are batched or scheduled.
    """

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        key = ((self.master_seed & _MASK64) << 64) | (self.stream_index & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, index)


def _draw_threshold(gen: np.random.Generator) -> float:
    """Uniform draw from the open interval (0, 1)."""
    u = gen.random()
    while not 0.0 < u < 1.0:
        u = gen.random()
    return u


def uniform_sphere_state(gen: np.random.Generator, dim: int) -> np.ndarray:
    """Haar-uniform normalized state vector."""
    z = gen.normal(size=2 * dim)
    v = z[:dim] + 1j * z[dim:]
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class PairedState:
    """Normalized pair of state vectors plus the scalar weight c.

    The stored pair satisfies ||phi||^2 + ||psi||^2 = 1; ``weight_c`` is the
    squared norm of the unnormalized pair it was built from.
    """

    phi: np.ndarray
    psi: np.ndarray
    weight_c: float

    def __post_init__(self):
        total = float(np.vdot(self.phi, self.phi).real + np.vdot(self.psi, self.psi).real)
        if abs(total - 1.0) > _NORM_TOL:
            raise ValueError(f"pair is not normalized: ||phi||^2+||psi||^2 = {total}")
        if not self.weight_c > 0.0:
            raise ValueError("weight_c must be positive")

    @classmethod
    def from_unnormalized(cls, phi, psi) -> "PairedState":
        phi = as_state(phi)
        psi = as_state(psi, phi.size)
        c = float(np.vdot(phi, phi).real + np.vdot(psi, psi).real)
        if c <= 0.0:
            raise ValueError("cannot normalize a zero pair")
        s = 1.0 / np.sqrt(c)
        return cls(phi * s, psi * s, c)

    def stacked(self) -> np.ndarray:
        return np.stack([self.phi, self.psi])


@dataclass
class Trajectory:
    """Sampled path: normalized snapshots on a time grid plus the jump log.

    ``states`` has shape (n_times, d) for a single-space path and
    (n_times, 2, d) for a doubled-space path.
    """

    times: np.ndarray
    states: np.ndarray
    jump_log: list = field(default_factory=list)
    weight_c: float = 1.0


def default_dt(model: ModelSpec) -> float:
    return 1e-3 / model.gamma


def _norm_polynomial(gram: np.ndarray) -> list[float]:
    """Coefficients a_s of ||psi(h)||^2 = sum_s a_s h^s, s = 0..8.

    ``gram`` is the 5x5 Gram matrix of (H^p / p!) psi; the phase factors
    i^p (-i)^q make every coefficient real.
    """
    g = gram.tolist()
    coeffs = [0.0] * 9
    for p in range(5):
        row = g[p]
        phases = _PHASE[p]
        for q in range(5):
            coeffs[p + q] += (phases[q] * row[q]).real
    return coeffs


def _poly_eval(coeffs, h: float) -> float:
    acc = 0.0
    for a in reversed(coeffs):
        acc = acc * h + a
    return acc


class JumpEngine:
    """Lock-step batch integrator for n trajectories with k components each.

    ``states`` is (n, k, d); each trajectory's total squared norm starts at 1
    and decays under the linear flow until its private threshold is hit.
    ``gens`` must contain one Generator per trajectory; all randomness for
    trajectory j is drawn from gens[j] only, which makes results independent
    of batching and thread count.
    """

    def __init__(
        self,
        model: ModelSpec,
        states: np.ndarray,
        t0: float,
        gens,
        dt: float | None = None,
        track_jumps: bool = False,
        track_first_jump: bool = False,
    ):
        states = np.array(states, dtype=complex)
        if states.ndim == 2:
            states = states[:, None, :]
        if states.ndim != 3 or states.shape[2] != model.dim:
            raise ValueError(f"states must be (n, k, {model.dim}), got {states.shape}")
        self.model = model
        self.t = float(t0)
        self.gens = list(gens)
        if len(self.gens) != states.shape[0]:
            raise ValueError("need exactly one generator per trajectory")
        self.dt = default_dt(model) if dt is None else float(dt)
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

        n, k, d = states.shape
        self._k = k
        self._d = d
        self.flat = np.ascontiguousarray(states.reshape(n, k * d))

        self.gamma = model.gamma
        self.lam = model.rate_factors()
        self.jops = model.jump_ops()
        h = model.h_eff
        hpows = [np.eye(d, dtype=complex)]
        for _ in range(4):
            hpows.append(hpows[-1] @ h)
        # scaled by 1/p! so that psi(h) = sum_p (-i h)^p hstack[p] psi
        self._hstack = np.stack([_INV_FACT[p] * hpows[p] for p in range(5)])
        self._prop_cache: dict[float, np.ndarray] = {}

        self.weights = np.ones(n)
        self.u = np.array([_draw_threshold(g) for g in self.gens])
        self.jump_log: list[tuple[float, int, int]] | None = [] if track_jumps else None
        self.first_jump = np.full(n, np.nan) if track_first_jump else None
        self.underflow_events = 0
        self._jump_counts = np.zeros(n, dtype=np.int64)

    # -- basic queries ---------------------------------------------------

    @property
    def n(self) -> int:
        return self.flat.shape[0]

    @property
    def k(self) -> int:
        return self._k

    @property
    def states(self) -> np.ndarray:
        return self.flat.reshape(self.n, self._k, self._d)

    def sq_norms(self) -> np.ndarray:
        f = self.flat
        return np.einsum("nm,nm->n", f.real, f.real) + np.einsum(
            "nm,nm->n", f.imag, f.imag
        )

    def normalized_states(self) -> np.ndarray:
        norms = np.sqrt(self.sq_norms())
        return self.states / norms[:, None, None]

    def measure(self, op: np.ndarray) -> np.ndarray:
        """Weighted estimator value per trajectory at the current time.

        Single space: weight * <psi|op|psi>.  Doubled space: weight *
        <phi|op|psi>, evaluated on the normalized pair.
        """
        norms = self.sq_norms()
        s = self.states
        if self._k == 1:
            psi = s[:, 0, :]
            raw = np.einsum("ne,ne->n", psi.conj() @ op, psi)
        else:
            raw = np.einsum("ne,ne->n", s[:, 0, :].conj() @ op, s[:, 1, :])
        return self.weights * raw / norms

    # -- propagation -----------------------------------------------------

    def _step_matrix(self, h: float) -> np.ndarray:
        p = self._prop_cache.get(h)
        if p is None:
            x = -1j * h * self.model.h_eff
            p = np.eye(self._d, dtype=complex)
            term = np.eye(self._d, dtype=complex)
            for k in range(1, 5):
                term = term @ x / k
                p = p + term
            self._prop_cache[h] = p
        return p

    def advance(self, t_target: float) -> None:
        """Integrate all trajectories to t_target, resolving jumps on the way."""
        if t_target < self.t - 1e-12 * max(1.0, abs(self.t)):
            raise ValueError(f"cannot advance backwards: {self.t} -> {t_target}")
        n, k, d = self.n, self._k, self._d
        dt = self.dt
        eps = 1e-12 * dt
        u = self.u
        while True:
            remaining = t_target - self.t
            if remaining <= eps:
                break
            h = dt if remaining > dt else remaining
            prop_t = self._step_matrix(h).T
            flat = self.flat
            new = (flat.reshape(n * k, d) @ prop_t).reshape(n, k * d)
            norms = np.einsum("nm,nm->n", new.real, new.real) + np.einsum(
                "nm,nm->n", new.imag, new.imag
            )
            if not np.all(np.isfinite(norms)):
                bad = int(np.nonzero(~np.isfinite(norms))[0][0])
                raise PropagationError(
                    f"non-finite amplitudes in trajectory {bad} near t={self.t}",
                    t=self.t,
                )
            crossed = norms <= u
            if crossed.any():
                for j in np.nonzero(crossed)[0]:
                    new[j] = self._resolve_step(int(j), self.t, h).reshape(-1)
            self.flat = new
            self.t += h
        self.t = t_target

    def _state_stack(self, psi: np.ndarray) -> np.ndarray:
        """(H^p / p!) psi for p = 0..4; psi is (k, d), result (5, k, d)."""
        return np.einsum("pde,ke->pkd", self._hstack, psi)

    def _resolve_step(self, j: int, t0: float, h: float) -> np.ndarray:
        """Carry trajectory j across [t0, t0+h] through one or more jumps.

        Called when the trajectory's norm crosses its threshold somewhere in
        the step; returns the state at t0 + h.
        """
        psi = self.flat[j].reshape(self._k, self._d)
        t_off = 0.0
        while True:
            stack = self._state_stack(psi)
            flat_stack = stack.reshape(5, -1)
            gram = flat_stack.conj() @ flat_stack.T
            coeffs = _norm_polynomial(gram)
            span = h - t_off
            u = self.u[j]
            if _poly_eval(coeffs, span) > u:
                # no (further) crossing inside this step
                c = self._taylor_coeffs(span)
                return c @ flat_stack
            lo, hi = 0.0, span
            tol = 1e-6 * self.dt
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if _poly_eval(coeffs, mid) > u:
                    lo = mid
                else:
                    hi = mid
            t_star = 0.5 * (lo + hi)
            psi_jump = (self._taylor_coeffs(t_star) @ flat_stack).reshape(
                self._k, self._d
            )
            jumped = self._apply_jump(j, t0 + t_off + t_star, psi_jump)
            if jumped is None:
                # roundoff crossing with zero total rate: finish the step
                # deterministically (the exact flow cannot reach u here)
                stack2 = self._state_stack(psi_jump).reshape(5, -1)
                return self._taylor_coeffs(span - t_star) @ stack2
            psi = jumped
            t_off += t_star
            if h - t_off <= 1e-12 * self.dt:
                return psi.reshape(-1)

    @staticmethod
    def _taylor_coeffs(h: float) -> np.ndarray:
        x = -1j * h
        c = np.empty(5, dtype=complex)
        c[0] = 1.0
        for p in range(1, 5):
            c[p] = c[p - 1] * x
        return c

    def _apply_jump(self, j: int, t_jump: float, psi: np.ndarray):
        """Channel selection and state replacement for one trajectory.

        Returns the normalized post-jump state, or None when every channel
        rate underflowed to zero (pure roundoff crossing, no jump applied).
        """
        jp = np.einsum("mde,ke->mkd", self.jops, psi).reshape(len(self.lam), -1)
        sq = np.einsum("mx,mx->m", jp.real, jp.real) + np.einsum(
            "mx,mx->m", jp.imag, jp.imag
        )
        rates = self.lam * sq
        total = rates.sum()
        if total <= 0.0:
            self.underflow_events += 1
            log.debug(
                "zero total jump rate at t=%.9g (trajectory %d); continuing", t_jump, j
            )
            return None
        r = self.gens[j].random() * total
        acc = 0.0
        ch = rates.size - 1
        for i, rate in enumerate(rates):
            acc += rate
            if r < acc:
                ch = i
                break
        new = jp[ch].reshape(self._k, self._d)
        new = new / np.sqrt(sq[ch])
        if self.jump_log is not None:
            self.jump_log.append((t_jump, j, ch))
        if self.first_jump is not None and self._jump_counts[j] == 0:
            self.first_jump[j] = t_jump
        self._jump_counts[j] += 1
        self.u[j] = _draw_threshold(self.gens[j])
        return new

    # -- insertions and the doubled-space lift -----------------------------

    def _renormalize_and_redraw(self, zero_mask: np.ndarray) -> None:
        norms = self.sq_norms()
        safe = np.where(zero_mask, 1.0, norms)
        self.flat /= np.sqrt(safe)[:, None]
        for j in range(self.n):
            self.u[j] = _draw_threshold(self.gens[j])

    def apply_insertion(self, left_op: np.ndarray | None, right_op: np.ndarray | None) -> np.ndarray:
        """Apply insertion operators at the current time.

        Single space: both slots must carry the same operator X (symmetric
        insertion); the weight is ||X psi||^2 on the normalized state.
        Doubled space: phi <- L phi, psi <- R psi with weight
        ||L phi||^2 + ||R psi||^2.  Weights multiply into the running
        per-trajectory weight; zero-weight trajectories keep a placeholder
        state so sample counts stay equal.  Thresholds are redrawn.
        """
        eye = np.eye(self._d, dtype=complex)
        left = eye if left_op is None else np.asarray(left_op, dtype=complex)
        right = eye if right_op is None else np.asarray(right_op, dtype=complex)
        if self._k == 1:
            if left_op is None and right_op is not None:
                left = right
            elif right_op is not None and not np.array_equal(left, right):
                raise ValueError("single-space insertions require identical left/right operators")
            ops = (left,)
        else:
            ops = (left, right)
        before = self.sq_norms()
        old = self.flat.copy()
        s = self.states
        for comp, op in enumerate(ops):
            s[:, comp, :] = s[:, comp, :] @ op.T
        after = self.sq_norms()
        w = after / before
        zero = after == 0.0
        if zero.any():
            # contribution is exactly zero; keep the pre-insertion state so
            # the trajectory can still be propagated
            self.flat[zero] = old[zero]
            w = np.where(zero, 0.0, w)
        self.weights *= w
        self._renormalize_and_redraw(zero)
        return w

    def lift_pair(self, left_op: np.ndarray | None, right_op: np.ndarray | None) -> np.ndarray:
        """Lift single-space states to pairs (L psi, R psi) with weight
        ||L psi||^2 + ||R psi||^2 (on the normalized state)."""
        if self._k != 1:
            raise ValueError("lift_pair requires single-component states")
        eye = np.eye(self._d, dtype=complex)
        left = eye if left_op is None else np.asarray(left_op, dtype=complex)
        right = eye if right_op is None else np.asarray(right_op, dtype=complex)
        before = self.sq_norms()
        psi = self.flat
        pair = np.empty((self.n, 2, self._d), dtype=complex)
        pair[:, 0, :] = psi @ left.T
        pair[:, 1, :] = psi @ right.T
        flat = pair.reshape(self.n, 2 * self._d)
        after = np.einsum("nm,nm->n", flat.real, flat.real) + np.einsum(
            "nm,nm->n", flat.imag, flat.imag
        )
        c = after / before
        zero = after == 0.0
        if zero.any():
            pair[zero, 0, :] = psi[zero]
            pair[zero, 1, :] = psi[zero]
            c = np.where(zero, 0.0, c)
        self._k = 2
        self.flat = np.ascontiguousarray(pair.reshape(self.n, 2 * self._d))
        self.weights *= c
        self._renormalize_and_redraw(zero)
        return c


def locate_jump_time(
    h_eff: np.ndarray,
    psi_start: np.ndarray,
    t_start: float,
    dt: float,
    u: float,
    rel_tol: float = 1e-6,
):
    """Locate the norm-threshold crossing inside one step, by bisection.

    ``psi_start`` is the (possibly unnormalized) state at ``t_start`` with
    ||psi||^2 > u.  Returns ``(t_jump, psi_at_jump)`` with the crossing time
    resolved to ``rel_tol * dt``, or ``None`` when the norm at the end of the
    step is still above u (no jump in this step).
    """
    if not 0.0 < u < 1.0:
        raise ValueError("threshold u must lie in the open interval (0, 1)")
    psi_start = np.asarray(psi_start, dtype=complex)
    squeeze = psi_start.ndim == 1
    psi = psi_start[None, :] if squeeze else psi_start
    h_eff = np.asarray(h_eff, dtype=complex)
    hp = np.eye(h_eff.shape[0], dtype=complex)
    stack = [psi.reshape(-1)]
    for p in range(1, 5):
        hp = hp @ h_eff
        stack.append(_INV_FACT[p] * (psi @ hp.T).reshape(-1))
    flat_stack = np.stack(stack)
    gram = flat_stack.conj() @ flat_stack.T
    coeffs = _norm_polynomial(gram)

    if _poly_eval(coeffs, 0.0) <= u:
        raise ValueError("bracket invalid: starting norm already at or below u")
    if _poly_eval(coeffs, dt) > u:
        return None
    lo, hi = 0.0, dt
    tol = rel_tol * dt
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _poly_eval(coeffs, mid) > u:
            lo = mid
        else:
            hi = mid
    t_star = 0.5 * (lo + hi)
    psi_jump = (JumpEngine._taylor_coeffs(t_star) @ flat_stack).reshape(psi.shape)
    if squeeze:
        psi_jump = psi_jump[0]
    return t_start + t_star, psi_jump


def _collect(model, engine, times, component_axis: bool):
    times = np.asarray(times, dtype=float)
    n_out = times.size
    shape = (n_out, 2, model.dim) if component_axis else (n_out, model.dim)
    states = np.empty(shape, dtype=complex)
    for i, t in enumerate(times):
        engine.advance(t)
        snap = engine.normalized_states()[0]
        states[i] = snap if component_axis else snap[0]
    jump_log = [(t, ch) for (t, _j, ch) in engine.jump_log]
    return states, jump_log


def evolve_single(
    model: ModelSpec,
    psi0: np.ndarray,
    times,
    rng: RngStream,
    dt: float | None = None,
) -> Trajectory:
    """Simulate one single-space trajectory, sampled on ``times``.

    ``psi0`` must be normalized; snapshots are renormalized at the sample
    points while the running state stays unnormalized between jumps.
    """
    psi0 = as_state(psi0, model.dim)
    if abs(np.vdot(psi0, psi0).real - 1.0) > _NORM_TOL:
        raise ValueError("psi0 must be normalized")
    times = np.asarray(times, dtype=float)
    engine = JumpEngine(
        model, psi0[None, None, :], times[0], [rng.generator()], dt, track_jumps=True
    )
    states, jump_log = _collect(model, engine, times, component_axis=False)
    return Trajectory(times, states, jump_log)


def evolve_doubled(
    model: ModelSpec,
    theta0: PairedState,
    times,
    rng: RngStream,
    dt: float | None = None,
) -> Trajectory:
    """Simulate one doubled-space trajectory from a normalized pair.

    Both components follow the same linear flow and the same jumps; the pair
    weight is set once at construction and never changed by jumps.
    """
    times = np.asarray(times, dtype=float)
    engine = JumpEngine(
        model, theta0.stacked()[None], times[0], [rng.generator()], dt, track_jumps=True
    )
    states, jump_log = _collect(model, engine, times, component_axis=True)
    return Trajectory(times, states, jump_log, weight_c=theta0.weight_c)
