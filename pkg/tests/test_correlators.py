import numpy as np
import pytest

from qjump.correlators import (
    CorrelationPlan,
    InsertionEvent,
    SteadyPrep,
    UniformSphere,
    ensemble_covariance,
    general_correlation,
    heisenberg_matrix_element,
    method1_correlation,
    mixed_initial_correlation,
    naive_independent_matrix_element,
    polarization_decompose,
    symmetric_correlation,
)
from qjump.model import (
    excited_state,
    ground_state,
    scenario_vacuum_drive,
    sigma_minus,
    sigma_plus,
)
from qjump.oracle import (
    regression_correlation,
    regression_multitime,
    rho_trajectory,
    steady_state_rho,
)
from qjump.pdp import RngStream

SM = sigma_minus()
SP = sigma_plus()
POP = SP @ SM
EYE = np.eye(2, dtype=complex)


def test_matrix_element_tau_zero_exact():
    model = scenario_vacuum_drive(1.0, 3.0)
    phi0 = (ground_state() + excited_state()) / np.sqrt(2.0)
    psi0 = excited_state()
    est = heisenberg_matrix_element(model, phi0, psi0, SP, [0.0], 50, RngStream(0))
    assert est.stderr_re[0] < 1e-14 and est.stderr_im[0] < 1e-14
    assert np.isclose(est.values[0], np.vdot(phi0, SP @ psi0))


def test_matrix_element_unitary_overlap_constant():
    model = scenario_vacuum_drive(1e-9, rabi_frequency=6e-9)
    phi0 = (ground_state() + 1j * excited_state()) / np.sqrt(2.0)
    psi0 = excited_state()
    est = heisenberg_matrix_element(
        model, phi0, psi0, EYE, [0.0, 1.0, 2.0], 50, RngStream(1), dt=1e-3
    )
    assert np.allclose(est.values, np.vdot(phi0, psi0), atol=1e-6)


def test_matrix_element_decay_vs_adjoint_oracle():
    model = scenario_vacuum_drive(1.0)
    est = heisenberg_matrix_element(
        model, excited_state(), excited_state(), POP, [1.0], 10_000, RngStream(2)
    )
    assert abs(est.values[0].real - np.exp(-1.0)) <= 3.0 * est.stderr_re[0]
    assert est.stderr_re[0] < 0.01


def test_symmetric_intensity_correlation_zero_at_tau_zero():
    model = scenario_vacuum_drive(1.0, 10.0)
    plan = CorrelationPlan(
        SteadyPrep(10.0), 0.0, (InsertionEvent(0.0, SM, SM),), POP, [0.0]
    )
    est = symmetric_correlation(model, plan, 64, RngStream(3))
    assert est.values[0] == 0.0
    assert est.stderr_re[0] == 0.0


def test_symmetric_identity_insertion_reduces_to_expectation():
    model = scenario_vacuum_drive(1.0, 8.0)
    taus = np.array([0.5, 1.0])
    plan_with = CorrelationPlan(
        ground_state(), 0.0, (InsertionEvent(0.25, EYE, EYE),), POP, taus
    )
    plan_without = CorrelationPlan(ground_state(), 0.0, (), POP, taus)
    a = symmetric_correlation(model, plan_with, 400, RngStream(4))
    b = symmetric_correlation(model, plan_without, 400, RngStream(4))
    # identity insertion only renormalizes and redraws the threshold; the
    # estimates agree statistically (same physics, different jump times)
    z = np.abs(a.values - b.values) / np.hypot(a.stderr, b.stderr)
    assert np.all(z < 4.0)


def test_symmetric_matches_one_time_oracle():
    model = scenario_vacuum_drive(1.0, 10.0)
    taus = np.linspace(0.0, 2.0, 9)
    plan = CorrelationPlan(ground_state(), 0.0, (), POP, taus)
    est = symmetric_correlation(model, plan, 4000, RngStream(5))
    rho0 = np.outer(ground_state(), ground_state().conj())
    oracle = rho_trajectory(model, rho0, taus)[:, 1, 1]
    assert np.all(est.zscores(oracle) < 4.0)


def test_symmetric_requires_symmetric_events():
    model = scenario_vacuum_drive(1.0)
    plan = CorrelationPlan(
        ground_state(), 0.0, (InsertionEvent(0.0, SM, None),), POP, [1.0]
    )
    with pytest.raises(ValueError, match="identical left/right"):
        symmetric_correlation(model, plan, 10, RngStream(0))


def test_general_correlation_undriven_exponential():
    model = scenario_vacuum_drive(1.0)
    taus = np.linspace(0.0, 2.0, 5)
    plan = CorrelationPlan(
        excited_state(), 0.0, (InsertionEvent(0.0, None, SM),), SP, taus
    )
    est = general_correlation(model, plan, 4000, RngStream(6))
    # <sigma^+(tau) sigma^-(0)> from |e>: exactly e^{-tau/2}, equal to 1 at tau=0
    assert np.isclose(est.values[0], 1.0)
    oracle = np.exp(-taus / 2.0)
    assert np.all(est.zscores(oracle) < 4.0)


def test_general_matches_symmetric_for_symmetric_plan():
    model = scenario_vacuum_drive(1.0, 10.0)
    taus = np.linspace(0.0, 1.5, 7)
    events = (InsertionEvent(0.0, SM, SM),)
    plan = CorrelationPlan(SteadyPrep(10.0), 0.0, events, POP, taus)
    a = symmetric_correlation(model, plan, 3000, RngStream(7))
    b = general_correlation(model, plan, 3000, RngStream(7))
    z = np.abs(a.values - b.values) / np.maximum(np.hypot(a.stderr, b.stderr), 1e-12)
    assert np.mean(z < 3.0) >= 0.95


def test_general_tau_zero_consistency():
    # <X^dag(t) Y(t)> via a merged doubled-space event equals the one-time
    # expectation of X^dag Y per trajectory
    model = scenario_vacuum_drive(1.0, 6.0)
    psi0 = (ground_state() + excited_state()) / np.sqrt(2.0)
    plan_general = CorrelationPlan(
        psi0, 0.0, (InsertionEvent(0.4, SM, SM @ SM + EYE),), EYE, [0.4]
    )
    # left X = sigma^-, right Y = I (sigma^- sigma^- = 0): <sigma^+ (t)>
    plan_sym = CorrelationPlan(psi0, 0.0, (), SP, [0.4])
    a = general_correlation(model, plan_general, 600, RngStream(8))
    b = symmetric_correlation(model, plan_sym, 600, RngStream(8))
    assert np.allclose(a.values, b.values, atol=1e-12)


def test_polarization_identity_examples():
    rng = np.random.default_rng(9)
    # N=4, X=I, Y=sigma^-, M=sigma^+: reconstructs sigma^+ sigma^-
    terms = polarization_decompose(EYE, SM, 4)
    recon = sum(w * (op.conj().T @ SP @ op) for w, op in terms)
    assert np.abs(recon - SP @ SM).max() < 1e-12
    # X = Y reduces to X^dag M X for any N
    x = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    m = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    for n in (3, 4, 7):
        terms = polarization_decompose(x, x, n)
        recon = sum(w * (op.conj().T @ m @ op) for w, op in terms)
        assert np.abs(recon - x.conj().T @ m @ x).max() < 1e-12
    # random 3x3, N=5
    x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    y = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    terms = polarization_decompose(x, y, 5)
    recon = sum(w * (op.conj().T @ m @ op) for w, op in terms)
    assert np.abs(recon - x.conj().T @ m @ y).max() < 1e-12


def test_polarization_rejects_small_n():
    with pytest.raises(ValueError):
        polarization_decompose(EYE, SM, 2)


def test_method1_agrees_with_method2():
    model = scenario_vacuum_drive(1.0, 10.0)
    taus = np.linspace(0.0, 1.5, 13)
    plan = CorrelationPlan(
        SteadyPrep(10.0), 0.0, (InsertionEvent(0.0, None, SM),), SP, taus
    )
    m2 = general_correlation(model, plan, 4000, RngStream(10))
    m1 = method1_correlation(model, plan, 4000, RngStream(11))
    z = np.abs(m1.values - m2.values) / np.hypot(m1.stderr, m2.stderr)
    assert np.mean(z < 3.0) >= 0.95


def test_method1_zero_operator():
    model = scenario_vacuum_drive(1.0, 10.0)
    plan = CorrelationPlan(
        excited_state(), 0.0, (InsertionEvent(0.0, None, np.zeros((2, 2))),), SP, [0.5]
    )
    with pytest.raises(ValueError):
        # zero operator is the identity case excluded by the contract
        method1_correlation(model, plan, 16, RngStream(0), n_phases=2)
    est = method1_correlation(model, plan, 64, RngStream(12))
    assert abs(est.values[0]) <= 3.0 * max(est.stderr[0], 1e-12)


def test_mixed_initial_delta_equals_fixed():
    model = scenario_vacuum_drive(1.0, 5.0)
    taus = [0.5, 1.0]
    plan = CorrelationPlan(ground_state(), 0.0, (), POP, taus)
    a = symmetric_correlation(model, plan, 256, RngStream(13))
    b = mixed_initial_correlation(model, ground_state(), plan, 256, RngStream(13))
    assert np.array_equal(a.values, b.values)


def test_uniform_sphere_covariance():
    model = scenario_vacuum_drive(1.0)
    rho, se_re, se_im, n = ensemble_covariance(
        model, UniformSphere(), [0.0], 4000, RngStream(14)
    )
    se = np.sqrt(se_re**2 + se_im**2)
    assert np.all(np.abs(rho[0] - EYE / 2.0) <= 5.0 * np.maximum(se[0], 1e-12))


def test_steady_prep_matches_oracle_correlation():
    model = scenario_vacuum_drive(1.0, 10.0)
    taus = np.linspace(0.0, 1.0, 5)
    plan = CorrelationPlan(
        SteadyPrep(30.0), 0.0, (InsertionEvent(0.0, SM, SM),), POP, taus
    )
    est = mixed_initial_correlation(model, SteadyPrep(30.0), plan, 4000, RngStream(15))
    oracle = regression_multitime(model, steady_state_rho(model), plan)
    assert np.mean(est.zscores(oracle) < 3.0) >= 0.8
    assert np.all(est.zscores(oracle) < 5.0)


def test_unitary_insertion_weights_are_one():
    from qjump.correlators import _make_generators
    from qjump.pdp import JumpEngine

    model = scenario_vacuum_drive(1.0, 4.0)
    u = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)  # sigma_x: permutation
    gens = _make_generators(16, 0, 64)
    states = np.tile(ground_state(), (64, 1))[:, None, :]
    eng = JumpEngine(model, states, 0.0, gens, 1e-3)
    eng.advance(0.3)
    w = eng.apply_insertion(u, u)
    assert np.all(w == 1.0)
    assert np.all(eng.weights == 1.0)


def test_hermitian_observable_imaginary_part_consistent():
    model = scenario_vacuum_drive(1.0, 10.0)
    taus = np.linspace(0.0, 2.0, 5)
    plan = CorrelationPlan(
        SteadyPrep(10.0), 0.0, (InsertionEvent(0.0, SM, SM),), POP, taus
    )
    est = symmetric_correlation(model, plan, 2000, RngStream(17))
    bound = 3.0 * np.maximum(est.stderr_im, 1e-14)
    assert np.all(np.abs(est.values.imag) <= bound)


def test_stderr_scaling_with_n():
    model = scenario_vacuum_drive(1.0, 10.0)
    plan = CorrelationPlan(ground_state(), 0.0, (), POP, [1.0])
    sizes = [100, 1000, 10_000]
    errs = [
        symmetric_correlation(model, plan, n, RngStream(18)).stderr_re[0]
        for n in sizes
    ]
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.6 < slope < -0.4


def test_naive_scheme_is_biased():
    model = scenario_vacuum_drive(1.0, 10.0)
    taus = np.linspace(0.0, 3.0, 13)
    psi0 = ground_state()
    naive = naive_independent_matrix_element(
        model, psi0, psi0, POP, taus, 4000, RngStream(19)
    )
    oracle = rho_trajectory(model, np.outer(psi0, psi0.conj()), taus)[:, 1, 1]
    assert np.max(naive.zscores(oracle)) > 5.0


def test_plan_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        CorrelationPlan(ground_state(), 0.0, (), POP, [0.0, 0.0])
    with pytest.raises(ValueError, match="precede"):
        CorrelationPlan(ground_state(), 0.0, (InsertionEvent(2.0, SM, SM),), POP, [1.0])
    with pytest.raises(ValueError, match="time-ordered"):
        CorrelationPlan(
            ground_state(),
            0.0,
            (InsertionEvent(1.0, SM, SM), InsertionEvent(0.5, SM, SM)),
            POP,
            [2.0],
        )


def test_coinciding_events_merge():
    plan = CorrelationPlan(
        ground_state(),
        0.0,
        (InsertionEvent(0.5, SM, None), InsertionEvent(0.5, SP, None)),
        POP,
        [1.0],
    )
    assert len(plan.events) == 1
    assert np.array_equal(plan.events[0].left_op, SP @ SM)
    assert plan.events[0].right_op is None


def test_results_independent_of_worker_count():
    model = scenario_vacuum_drive(1.0, 8.0)
    plan = CorrelationPlan(ground_state(), 0.0, (), POP, [0.5, 1.0])
    import qjump.correlators as mod

    old = mod.BATCH_SIZE
    try:
        mod.BATCH_SIZE = 64  # force several batches
        serial = symmetric_correlation(model, plan, 256, RngStream(20), n_workers=1)
        parallel = symmetric_correlation(model, plan, 256, RngStream(20), n_workers=2)
    finally:
        mod.BATCH_SIZE = old
    assert np.array_equal(serial.values, parallel.values)
    assert np.array_equal(serial.stderr_re, parallel.stderr_re)
