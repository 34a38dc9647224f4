import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from core.dynamics import (ControlSequence, LinearDynamics, Trajectory, double_integrator,
                           prediction_matrices, recover_controls, rollout)
from core.errors import DimensionMismatch, NonPositive, UnreachableTrajectory


def test_double_integrator_matrices():
    dyn = double_integrator(0.04, mass=2.0)
    assert dyn.A[0, 1] == 0.04 and dyn.A[2, 3] == 0.04
    assert dyn.B[1, 0] == pytest.approx(0.02) and dyn.B[3, 1] == pytest.approx(0.02)
    assert (dyn.state_dim, dyn.control_dim) == (4, 2)


@pytest.mark.parametrize("dt, mass", [(0.0, 1.0), (-0.1, 1.0), (0.1, 0.0)])
def test_double_integrator_rejects_non_positive(dt, mass):
    with pytest.raises(NonPositive):
        double_integrator(dt, mass)


def test_rollout_matches_condensed_form(rng):
    dyn = double_integrator(0.1)
    x0 = rng.standard_normal(4)
    u = rng.standard_normal((7, 2))
    traj = rollout(dyn, x0, ControlSequence(u))
    Phi, Gamma = prediction_matrices(dyn, 7)
    np.testing.assert_allclose(traj.states[1:].reshape(-1), Phi @ u.reshape(-1) + Gamma @ x0,
                               atol=1e-12)
    assert traj.horizon == 7


def test_recover_controls_inverts_rollout(rng):
    dyn = double_integrator(0.04)
    u = rng.standard_normal((12, 2))
    traj = rollout(dyn, rng.standard_normal(4), u)
    recovered = recover_controls(dyn, traj, residual_tol=1e-9)
    np.testing.assert_allclose(recovered.controls, u, atol=1e-9)


def test_recover_controls_flags_unreachable_trajectory():
    dyn = double_integrator(0.1)
    states = np.zeros((3, 4))
    states[1, 0] = 1.0  # position jump with zero velocity
    with pytest.raises(UnreachableTrajectory) as info:
        recover_controls(dyn, Trajectory(states, dt=0.1, id="jump"), residual_tol=1e-9)
    assert info.value.traj_id == "jump"
    assert info.value.residual > 1e-9
    assert info.value.stage == "dynamics"
    assert not isinstance(info.value, DimensionMismatch)


def test_lifted_model_is_realizable_at_native_rate(rng):
    dyn = double_integrator(0.04)
    x0 = rng.standard_normal(4)
    u = rng.standard_normal((5, 2))
    coarse = rollout(dyn.lifted(3), x0, u)
    fine = rollout(dyn, x0, np.repeat(u, 3, axis=0))
    np.testing.assert_allclose(coarse.states, fine.states[::3], atol=1e-12)
    assert coarse.dt == pytest.approx(0.12)
    assert dyn.lifted(1) is dyn


def test_trajectory_validation_and_downsample():
    with pytest.raises(DimensionMismatch):
        Trajectory(np.zeros((1, 4)), dt=0.1)
    with pytest.raises(NonPositive):
        Trajectory(np.zeros((3, 4)), dt=0.0)
    traj = Trajectory(np.arange(40, dtype=float).reshape(10, 4), dt=0.1, id="a", start_frame=5)
    down = traj.downsample(3)
    assert len(down) == 4 and down.dt == pytest.approx(0.3)
    np.testing.assert_array_equal(down.states, traj.states[[0, 3, 6, 9]])
    trimmed = traj.trimmed(2)
    assert trimmed.start_frame == 7 and trimmed.horizon == 7


def test_dimension_errors():
    with pytest.raises(DimensionMismatch):
        LinearDynamics(A=np.eye(3), B=np.zeros((2, 1)), dt=0.1)
    dyn = double_integrator(0.1)
    with pytest.raises(DimensionMismatch):
        rollout(dyn, np.zeros(3), np.zeros((2, 2)))
    with pytest.raises(DimensionMismatch):
        rollout(dyn, np.zeros(4), np.zeros((2, 3)))


def test_rollout_by_hand():
    dyn = double_integrator(1.0, mass=1.0)
    traj = rollout(dyn, np.zeros(4), np.tile([1.0, 0.0], (3, 1)))
    np.testing.assert_allclose(traj.states[:, 1], [0, 1, 2, 3])
    np.testing.assert_allclose(traj.states[:, 0], [0, 0, 1, 3])
    np.testing.assert_allclose(traj.states[:, [2, 3]], 0.0)

    coasting = rollout(double_integrator(0.04), [0.0, 1.0, 0.0, 0.0], np.zeros((3, 2)))
    np.testing.assert_allclose(coasting.states[:, 0], [0, 0.04, 0.08, 0.12], atol=1e-15)


@hsettings(max_examples=40)
@given(st.integers(0, 100_000), st.integers(1, 12))
def test_rollout_superposition(seed, horizon):
    rng = np.random.default_rng(seed)
    dyn = double_integrator(float(rng.uniform(0.01, 1.0)), mass=float(rng.uniform(0.5, 3.0)))
    x0 = rng.standard_normal(4)
    u, v = rng.standard_normal((2, horizon, 2))
    zero = np.zeros(4)
    lhs = rollout(dyn, x0, u + v).states - rollout(dyn, x0, u).states
    rhs = rollout(dyn, zero, v).states - rollout(dyn, zero, np.zeros_like(v)).states
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)
    assert len(rollout(dyn, x0, u)) == horizon + 1
