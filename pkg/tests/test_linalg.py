import numpy as np
import pytest

from qjump.linalg import (
    Herm2,
    PropagationError,
    eig_herm2,
    matvec,
    rk4_step,
    taylor4_propagator,
)

SM = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # lowering, index 0 = ground


def test_matvec_identity():
    v = np.array([1.0, 0.0], dtype=complex)
    assert np.array_equal(matvec(np.eye(2), v), v)


def test_matvec_lowering_action():
    excited = np.array([0.0, 1.0], dtype=complex)
    assert np.array_equal(matvec(SM, excited), np.array([1.0, 0.0], dtype=complex))


def test_matvec_pauli_y():
    sy = np.array([[0.0, -1j], [1j, 0.0]])
    out = matvec(sy, np.array([1.0, 0.0], dtype=complex))
    assert np.allclose(out, np.array([0.0, 1j]))


def test_matvec_dimension_mismatch():
    with pytest.raises(ValueError):
        matvec(np.eye(3), np.ones(2, dtype=complex))


def test_eig_diagonal():
    values, vectors = eig_herm2(Herm2(3.0, 2.0, 0.0))
    assert np.allclose(values, [3.0, 2.0])
    assert np.allclose(vectors, np.eye(2))


def test_eig_vacuum_case():
    values, vectors = eig_herm2(np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert np.allclose(values, [1.0, 0.0])
    assert np.allclose(vectors[:, 0], [1.0, 0.0])


def test_eig_squeezed_case():
    # N=1, eps=1, M=sqrt(2): eigenvalues N + 1/2 +- sqrt(N(N+eps) + 1/4)
    g = np.array([[2.0, -np.sqrt(2.0)], [-np.sqrt(2.0), 1.0]])
    values, vectors = eig_herm2(g)
    assert np.allclose(values, [3.0, 0.0], atol=1e-14)
    theta = 0.5 * np.arctan(2.0 * np.sqrt(2.0))
    assert np.allclose(vectors[:, 0], [np.cos(theta), -np.sin(theta)])


def test_eig_reconstruction_many_random():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(10_000):
        a, d = rng.normal(size=2) * 3.0
        b = (rng.normal() + 1j * rng.normal()) * rng.choice([1e-8, 1e-3, 1.0, 1e3])
        g = Herm2(a, d, b)
        values, vectors = eig_herm2(g)
        assert values[0] >= values[1]
        recon = vectors @ np.diag(values) @ vectors.conj().T
        scale = max(1.0, np.abs(g.to_matrix()).max())
        worst = max(worst, np.abs(recon - g.to_matrix()).max() / scale)
        overlap = vectors.conj().T @ vectors
        assert np.abs(overlap - np.eye(2)).max() < 1e-12
    assert worst < 1e-12


def test_eig_degenerate_returns_basis():
    values, vectors = eig_herm2(Herm2(1.5, 1.5, 0.0))
    assert np.allclose(values, [1.5, 1.5])
    assert np.allclose(vectors, np.eye(2))


def test_rk4_null_generator():
    v = np.array([0.3 + 0.1j, 0.9j])
    out = rk4_step(lambda t, x: np.zeros_like(x), v, 0.0, 0.01)
    assert np.array_equal(out, v)


def test_rk4_hermitian_norm_preserved_to_order5():
    h = np.array([[1.0, 2.0 - 1j], [2.0 + 1j, -0.5]])
    v = np.array([1.0, 0.0], dtype=complex)
    dt = 1e-2
    out = rk4_step(lambda t, x: -1j * (h @ x), v, 0.0, dt)
    drift = abs(np.vdot(out, out).real - 1.0)
    assert drift < 10 * dt**5


def _decay_h(gamma, omega=0.0):
    n_op = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
    return (omega - 0.5j * gamma) * n_op


def test_rk4_matches_analytic_decay():
    gamma = 1.0
    h = _decay_h(gamma, omega=2.0)
    deriv = lambda t, x: -1j * (h @ x)
    v = np.array([0.0, 1.0], dtype=complex)
    dt = 1e-3
    t = 0.0
    for _ in range(1000):
        v = rk4_step(deriv, v, t, dt)
        t += dt
    assert abs(np.vdot(v, v).real - np.exp(-gamma * t)) < 1e-12


def test_rk4_order():
    # halving dt should reduce the error against the analytic decay ~16x
    gamma = 2.0
    h = _decay_h(gamma)
    deriv = lambda t, x: -1j * (h @ x)

    def norm_error(dt, t_end=1.0):
        v = np.array([0.0, 1.0], dtype=complex)
        steps = int(round(t_end / dt))
        for i in range(steps):
            v = rk4_step(deriv, v, i * dt, dt)
        return abs(np.vdot(v, v).real - np.exp(-gamma * t_end))

    ratio = norm_error(0.02) / norm_error(0.01)
    assert 12.0 < ratio < 20.0


def test_rk4_nonfinite_raises():
    v = np.array([1.0, 0.0], dtype=complex)
    with np.errstate(invalid="ignore"), pytest.raises(PropagationError):
        rk4_step(lambda t, x: x * np.inf, v, 0.5, 0.01)


def test_taylor4_equals_rk4_for_linear_flow():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    dt = 0.01
    via_rk4 = rk4_step(lambda t, x: -1j * (h @ x), v, 0.0, dt)
    via_taylor = taylor4_propagator(h, dt) @ v
    assert np.allclose(via_rk4, via_taylor, atol=1e-14)
