"""Dense complex linear algebra for small Hilbert spaces.

State vectors and operators are plain ``complex128`` numpy arrays; the
dimensions in play are tiny (d = 2..32), so everything is dense and
row-major.  The only eigenproblem the physics needs is the 2x2 Hermitian
one (the environment correlation matrix), which is solved in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Herm2",
    "PropagationError",
    "as_operator",
    "as_state",
    "eig_herm2",
    "matvec",
    "rk4_step",
    "taylor4_propagator",
]


class PropagationError(RuntimeError):
    """Raised when numerical propagation produces non-finite amplitudes."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


def as_state(v, dim=None) -> np.ndarray:
    """Validate and return a complex state vector."""
    v = np.asarray(v, dtype=complex)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"state vector must be 1-d and nonempty, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise ValueError(f"state vector has dim {v.size}, expected {dim}")
    if not (np.all(np.isfinite(v.real)) and np.all(np.isfinite(v.imag))):
        raise ValueError("state vector contains non-finite entries")
    return v


def as_operator(m, dim=None) -> np.ndarray:
    """Validate and return a square complex matrix."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"operator must be square, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise ValueError(f"operator has dim {m.shape[0]}, expected {dim}")
    if not (np.all(np.isfinite(m.real)) and np.all(np.isfinite(m.imag))):
        raise ValueError("operator contains non-finite entries")
    return m


def matvec(m, v) -> np.ndarray:
    """Matrix-vector product with dimension checking."""
    m = np.asarray(m, dtype=complex)
    v = np.asarray(v, dtype=complex)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {m.shape} times vector {v.shape}")
    return m @ v


@dataclass(frozen=True)
class Herm2:
    """A 2x2 Hermitian matrix [[a11, a12], [conj(a12), a22]]."""

    a11: float
    a22: float
    a12: complex

    def __post_init__(self):
        for x in (self.a11, self.a22, self.a12):
            if not np.all(np.isfinite([np.real(x), np.imag(x)])):
                raise ValueError("Herm2 entries must be finite")

    @classmethod
    def from_matrix(cls, m) -> "Herm2":
        m = np.asarray(m, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
        if abs(m[0, 1] - np.conj(m[1, 0])) > 1e-12 * (1.0 + np.abs(m).max()):
            raise ValueError("matrix is not Hermitian")
        if abs(np.imag(m[0, 0])) > 1e-14 or abs(np.imag(m[1, 1])) > 1e-14:
            raise ValueError("diagonal of a Hermitian matrix must be real")
        return cls(float(np.real(m[0, 0])), float(np.real(m[1, 1])), complex(m[0, 1]))

    def to_matrix(self) -> np.ndarray:
        return np.array(
            [[self.a11, self.a12], [np.conj(self.a12), self.a22]], dtype=complex
        )

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - abs(self.a12) ** 2


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate a global phase so the largest-magnitude entry is real positive.

    Deterministic tie-break: ``argmax`` picks the first maximal entry.
    """
    k = int(np.argmax(np.abs(v)))
    z = v[k]
    a = abs(z)
    if a == 0.0:
        return v
    return v * (np.conj(z) / a)


def eig_herm2(g) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigendecomposition of a 2x2 Hermitian matrix.

    Returns ``(values, vectors)`` with the eigenvalues sorted descending and
    the orthonormal eigenvectors stored as columns of ``vectors``.  In the
    degenerate case the standard basis vectors are returned, which keeps
    downstream channel indexing reproducible.
    """
    if not isinstance(g, Herm2):
        g = Herm2.from_matrix(g)
    a, d, b = g.a11, g.a22, g.a12
    mean = 0.5 * (a + d)
    delta = 0.5 * (a - d)
    absb = abs(b)
    r = float(np.hypot(delta, absb))
    values = np.array([mean + r, mean - r])

    if absb == 0.0:
        vectors = np.eye(2, dtype=complex)
        if d > a:
            vectors = vectors[:, ::-1].copy()
        return values, vectors

    # lambda_1 eigenvector is (b, lambda_1 - a); rewrite the difference via
    # the characteristic equation when it would cancel catastrophically
    if delta >= 0.0:
        mu1 = absb * absb / (r + delta)
    else:
        mu1 = r - delta
    v1 = np.array([b, mu1], dtype=complex)
    v1 /= np.linalg.norm(v1)
    # orthogonal complement is exactly the second eigenvector in 2 dims
    v2 = np.array([-np.conj(v1[1]), np.conj(v1[0])])
    return values, np.column_stack([_fix_phase(v1), _fix_phase(v2)])


def rk4_step(deriv, v: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of dv/dt = deriv(t, v)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    k1 = deriv(t, v)
    k2 = deriv(t + 0.5 * dt, v + (0.5 * dt) * k1)
    k3 = deriv(t + 0.5 * dt, v + (0.5 * dt) * k2)
    k4 = deriv(t + dt, v + dt * k3)
    out = np.asarray(v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    if not (np.all(np.isfinite(out.real)) and np.all(np.isfinite(out.imag))):
        raise PropagationError(f"non-finite state after RK4 step at t={t}", t=t)
    return out


def taylor4_propagator(h_eff: np.ndarray, dt: float) -> np.ndarray:
    """Degree-4 Taylor polynomial of exp(-i*dt*H).

    For a constant generator this is algebraically identical to one RK4 step
    of dv/dt = -i H v, so the trajectory engine can precompute it once and
    replace repeated derivative evaluations by a single matrix product.
    """
    h_eff = as_operator(h_eff)
    x = -1j * dt * h_eff
    p = np.eye(h_eff.shape[0], dtype=complex)
    term = np.eye(h_eff.shape[0], dtype=complex)
    for k in range(1, 5):
        term = term @ x / k
        p = p + term
    return p
