"""Ground-truth dynamics: energies, gradients, and the leapfrog integrator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symplectic_ml import (
    BadFactor,
    HH_FIELD,
    IntegrationDiverged,
    PhaseState,
    PotentialParams,
    ShapeMismatch,
    Trajectory,
    coarse_grain,
    hh_energy,
    hh_energy_batch,
    hh_grad_v,
    hh_potential,
    integrate,
    integrate_batch,
    kinetic_grad,
    leapfrog_batch,
    leapfrog_step,
)

from helpers import numeric_jacobian

UNIT = PotentialParams.single(1.0)


def test_potential_value_at_sample_point():
    # 0.5*(0.01+0.04) + 0.01*0.2 - 0.008/3 = 73/3000
    assert hh_potential(np.array([0.1, 0.2]), UNIT) == pytest.approx(73 / 3000, rel=1e-14)


def test_energy_adds_kinetic_term():
    state = PhaseState(q=[0.1, 0.2], p=[0.3, 0.4])
    assert hh_energy(state, UNIT) == pytest.approx(73 / 3000 + 0.125, rel=1e-14)


def test_energy_batch_matches_scalar():
    rng = np.random.default_rng(0)
    rows = rng.uniform(-0.5, 0.5, size=(6, 4))
    pot = PotentialParams(alpha=0.7, beta=1.3)
    batch = hh_energy_batch(rows, pot)
    for i in range(6):
        assert batch[i] == pytest.approx(
            hh_energy(PhaseState(q=rows[i, :2], p=rows[i, 2:]), pot), rel=1e-14
        )


def test_potential_gradient_symmetric_couplings():
    g = hh_grad_v(np.array([0.1, 0.2]), UNIT)
    assert g == pytest.approx([0.14, 0.17], rel=1e-14)


def test_potential_gradient_independent_couplings():
    g = hh_grad_v(np.array([0.1, 0.2]), PotentialParams(alpha=0.5, beta=2.0))
    assert g == pytest.approx([0.12, 0.125], rel=1e-14)


def test_potential_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    pot = PotentialParams(alpha=0.8, beta=1.1)
    for _ in range(5):
        q = rng.uniform(-0.8, 0.8, size=2)
        eps = 1e-6
        for i in range(2):
            d = np.zeros(2)
            d[i] = eps
            fd = (hh_potential(q + d, pot) - hh_potential(q - d, pot)) / (2 * eps)
            assert hh_grad_v(q, pot)[i] == pytest.approx(fd, abs=1e-8)


def test_kinetic_gradient_is_momentum():
    p = np.array([0.3, -0.4])
    assert np.array_equal(kinetic_grad(p), p)


def test_leapfrog_step_decoupled_oscillator():
    # alpha = beta = 0, q = (1, 0), p = (0, 0), dt = 0.1:
    # p_half = -0.05, q' = 0.995, p' = -0.09975
    state = leapfrog_step(
        PhaseState(q=[1.0, 0.0], p=[0.0, 0.0]), 0.1, HH_FIELD,
        PotentialParams.single(0.0),
    )
    assert state.q == pytest.approx([0.995, 0.0], abs=1e-15)
    assert state.p == pytest.approx([-0.09975, 0.0], abs=1e-15)


def test_integrate_matches_harmonic_solution():
    pot = PotentialParams.single(0.0)
    traj = integrate(PhaseState(q=[1.0, 0.0], p=[0.0, 0.5]), 0.001, 1000, HH_FIELD, pot)
    t = traj.times
    assert np.allclose(traj.q[:, 0], np.cos(t), atol=1e-5)
    assert np.allclose(traj.p[:, 0], -np.sin(t), atol=1e-5)
    assert np.allclose(traj.q[:, 1], 0.5 * np.sin(t), atol=1e-5)


def test_halving_dt_quarters_global_error():
    pot = PotentialParams.single(0.0)
    exact = np.array([np.cos(0.1), 0.0, -np.sin(0.1), 0.0])

    def error_at_fixed_horizon(dt):
        steps = int(round(0.1 / dt))
        traj = integrate(PhaseState(q=[1.0, 0.0], p=[0.0, 0.0]), dt, steps, HH_FIELD, pot)
        return np.max(np.abs(traj.data[-1] - exact))

    ratio = error_at_fixed_horizon(0.01) / error_at_fixed_horizon(0.005)
    assert 3.5 < ratio < 4.5


def test_step_reversibility_with_negated_dt():
    pot = PotentialParams.single(1.0)
    state0 = PhaseState(q=[0.2, -0.1], p=[0.3, 0.15])
    forward = leapfrog_step(state0, 0.05, HH_FIELD, pot)
    back = leapfrog_step(forward, -0.05, HH_FIELD, pot)
    assert np.max(np.abs(back.vec() - state0.vec())) < 1e-14


def test_trajectory_reversibility_via_momentum_flip():
    pot = PotentialParams.single(1.0)
    state0 = PhaseState(q=[0.2, -0.1], p=[0.3, 0.15])
    forward = integrate(state0, 0.05, 100, HH_FIELD, pot)
    last = forward.state(-1)
    flipped = PhaseState(q=last.q, p=-last.p)
    back = integrate(flipped, 0.05, 100, HH_FIELD, pot)
    final = back.state(-1)
    assert np.max(np.abs(final.q - state0.q)) < 1e-10
    assert np.max(np.abs(-final.p - state0.p)) < 1e-10


def test_step_jacobian_determinant_is_one():
    pot = PotentialParams.single(1.0)

    def step(vec):
        out = leapfrog_step(PhaseState(q=vec[:2], p=vec[2:]), 0.1, HH_FIELD, pot)
        return out.vec()

    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.uniform(-0.5, 0.5, size=4)
        det = np.linalg.det(numeric_jacobian(step, x))
        assert det == pytest.approx(1.0, abs=1e-6)


def test_energy_stays_bounded_over_long_run():
    pot = PotentialParams.single(1.0)
    traj = integrate(PhaseState(q=[0.1, -0.15], p=[0.3, 0.2]), 0.01, 20000, HH_FIELD, pot)
    energies = traj.energies()
    drift = np.max(np.abs(energies - energies[0]) / abs(energies[0]))
    assert drift < 1e-4


def test_escape_raises_with_step_index():
    pot = PotentialParams.single(1.0)
    with pytest.raises(IntegrationDiverged) as exc:
        integrate(PhaseState(q=[0.0, 0.0], p=[1000.0, 0.0]), 0.1, 5, HH_FIELD, pot)
    assert exc.value.step == 1


def test_integrate_rejects_zero_steps():
    with pytest.raises(ValueError):
        integrate(PhaseState(q=[0.1, 0.0], p=[0.0, 0.0]), 0.1, 0, HH_FIELD, UNIT)


def test_coarse_grain_keeps_every_factor_th_sample():
    pot = PotentialParams.single(0.0)
    traj = integrate(PhaseState(q=[0.5, 0.0], p=[0.0, 0.1]), 0.001, 3000, HH_FIELD, pot)
    coarse = coarse_grain(traj, 100)
    assert len(coarse) == 31
    assert coarse.dt == pytest.approx(0.1)
    assert np.array_equal(coarse.data, traj.data[::100])


def test_coarse_grain_factor_one_is_identity():
    pot = PotentialParams.single(0.0)
    traj = integrate(PhaseState(q=[0.5, 0.0], p=[0.0, 0.1]), 0.01, 10, HH_FIELD, pot)
    coarse = coarse_grain(traj, 1)
    assert np.array_equal(coarse.data, traj.data)
    assert coarse.dt == traj.dt


@pytest.mark.parametrize("factor", [0, -3, 2.5, "2"])
def test_coarse_grain_rejects_bad_factor(factor):
    pot = PotentialParams.single(0.0)
    traj = integrate(PhaseState(q=[0.5, 0.0], p=[0.0, 0.1]), 0.01, 10, HH_FIELD, pot)
    with pytest.raises(BadFactor):
        coarse_grain(traj, factor)


def test_phase_state_validation():
    with pytest.raises(ShapeMismatch):
        PhaseState(q=[1.0, 2.0, 3.0], p=[0.0, 0.0])
    with pytest.raises(ValueError):
        PhaseState(q=[np.nan, 0.0], p=[0.0, 0.0])
    v = PhaseState(q=[1.0, 2.0], p=[3.0, 4.0]).vec()
    assert np.array_equal(v, [1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(PhaseState.from_vec(v).vec(), v)
    with pytest.raises(ShapeMismatch):
        PhaseState.from_vec(np.ones(5))


def test_potential_params_channels():
    pot = PotentialParams(alpha=0.3, beta=0.9)
    assert np.array_equal(pot.channels(1), [0.3])
    assert np.array_equal(pot.channels(2), [0.3, 0.9])
    with pytest.raises(ShapeMismatch):
        pot.channels(3)
    single = PotentialParams.single(0.4)
    assert single.alpha == single.beta == 0.4
    with pytest.raises(ValueError):
        PotentialParams(alpha=np.inf, beta=0.0)


def test_trajectory_validation_and_views():
    pot = PotentialParams.single(1.0)
    data = np.array([[0.1, 0.0, 0.0, 0.2], [0.1, 0.0, 0.0, 0.19]])
    traj = Trajectory(dt=0.1, data=data, params=pot)
    assert len(traj) == 2
    assert np.array_equal(traj.q, data[:, :2])
    assert np.array_equal(traj.p, data[:, 2:])
    assert np.allclose(traj.times, [0.0, 0.1])
    assert traj.energy0 == pytest.approx(hh_energy(traj.state(0), pot))
    with pytest.raises(ValueError):
        Trajectory(dt=0.1, data=data, params=pot, energy0=traj.energy0 + 1.0)
    with pytest.raises(ShapeMismatch):
        Trajectory(dt=0.1, data=np.zeros((0, 4)), params=pot)
    with pytest.raises(ValueError):
        Trajectory(dt=-0.1, data=data, params=pot)


def test_batch_step_matches_scalar_step_bitwise():
    rng = np.random.default_rng(3)
    states = rng.uniform(-0.5, 0.5, size=(8, 4))
    alphas = rng.uniform(0.0, 1.0, size=8)
    betas = rng.uniform(0.0, 1.0, size=8)
    out = leapfrog_batch(states, alphas, betas, 0.07)
    for i in range(8):
        pot = PotentialParams(alpha=alphas[i], beta=betas[i])
        ref = leapfrog_step(
            PhaseState(q=states[i, :2], p=states[i, 2:]), 0.07, HH_FIELD, pot
        )
        assert np.array_equal(out[i], ref.vec())


def test_integrate_batch_matches_scalar_integrate_bitwise():
    rng = np.random.default_rng(4)
    states = rng.uniform(-0.4, 0.4, size=(3, 4))
    coarse, escaped = integrate_batch(states, 0.6, 0.6, 0.05, 40, stride=1)
    assert np.array_equal(escaped, [-1, -1, -1])
    pot = PotentialParams.single(0.6)
    for i in range(3):
        ref = integrate(PhaseState(q=states[i, :2], p=states[i, 2:]), 0.05, 40,
                        HH_FIELD, pot)
        assert np.array_equal(coarse[i], ref.data)


def test_integrate_batch_stride_subsamples():
    rng = np.random.default_rng(5)
    states = rng.uniform(-0.4, 0.4, size=(2, 4))
    full, _ = integrate_batch(states, 1.0, 1.0, 0.02, 40, stride=1)
    sub, _ = integrate_batch(states, 1.0, 1.0, 0.02, 40, stride=10)
    assert np.array_equal(sub, full[:, ::10])
    with pytest.raises(BadFactor):
        integrate_batch(states, 1.0, 1.0, 0.02, 41, stride=10)


def test_integrate_batch_flags_escaped_rows_and_freezes_them():
    states = np.array(
        [[0.0, 0.0, 200.0, 0.0], [0.1, 0.0, 0.0, 0.1]]  # row 0 escapes at once
    )
    coarse, escaped = integrate_batch(states, 1.0, 1.0, 0.1, 3, stride=1)
    assert escaped[0] == 1
    assert escaped[1] == -1
    # the bounded row is unaffected by its escaped neighbour
    pot = PotentialParams.single(1.0)
    ref = integrate(PhaseState(q=[0.1, 0.0], p=[0.0, 0.1]), 0.1, 3, HH_FIELD, pot)
    assert np.array_equal(coarse[1], ref.data)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.floats(0.005, 0.15),
)
def test_leapfrog_reversibility_property(seed, dt):
    rng = np.random.default_rng(seed)
    state0 = PhaseState(q=rng.uniform(-0.4, 0.4, 2), p=rng.uniform(-0.4, 0.4, 2))
    pot = PotentialParams(alpha=rng.uniform(0, 1), beta=rng.uniform(0, 1))
    forward = leapfrog_step(state0, dt, HH_FIELD, pot)
    back = leapfrog_step(forward, -dt, HH_FIELD, pot)
    assert np.max(np.abs(back.vec() - state0.vec())) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_leapfrog_volume_preservation_property(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 0.5, size=4)
    pot = PotentialParams(alpha=rng.uniform(0, 1), beta=rng.uniform(0, 1))

    def step(vec):
        return leapfrog_step(
            PhaseState(q=vec[:2], p=vec[2:]), 0.08, HH_FIELD, pot
        ).vec()

    det = np.linalg.det(numeric_jacobian(step, x))
    assert det == pytest.approx(1.0, abs=1e-5)
