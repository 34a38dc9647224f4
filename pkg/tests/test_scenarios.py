from collections import Counter

import numpy as np
import pytest
from pydantic import ValidationError

from api.models import ScenarioSpec
from core.dynamics import double_integrator, recover_controls
from core.errors import BadProportion
from core.scenarios import generate_scenario, synth_scenario


@pytest.mark.parametrize("kind", ["curved_road", "stop_go_lane", "fork"])
def test_trajectories_are_dynamically_feasible(kind):
    spec = ScenarioSpec(kind=kind, n_trajectories=6, horizon=80, split_frame=20, seed=2)
    dyn = double_integrator(spec.dt)
    for traj in generate_scenario(spec).trajectories:
        assert traj.horizon == 80
        recover_controls(dyn, traj, residual_tol=1e-8)


def test_same_seed_same_scene():
    a = synth_scenario("fork", n_trajectories=9, seed=4, horizon=30)
    b = synth_scenario("fork", n_trajectories=9, seed=4, horizon=30)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.states, y.states)
    c = synth_scenario("fork", n_trajectories=9, seed=5, horizon=30)
    assert not np.array_equal(a[0].states, c[0].states)


def test_zero_noise_makes_branches_identical():
    scene = generate_scenario(ScenarioSpec(kind="fork", n_trajectories=9, noise_sigma=0.0,
                                           horizon=100, split_frame=10, n_branches=3))
    by_branch = {}
    for traj, label in zip(scene.trajectories, scene.labels):
        by_branch.setdefault(label, []).append(traj.states)
    assert len(by_branch) == 3
    for states in by_branch.values():
        for other in states[1:]:
            np.testing.assert_array_equal(states[0], other)
    ends = [states[0][-1, [0, 2]] for states in by_branch.values()]
    assert np.linalg.norm(ends[0] - ends[1]) > 1.0


def test_branch_counts_use_largest_remainder():
    scene = generate_scenario(ScenarioSpec(kind="fork", n_trajectories=63))
    assert Counter(scene.labels) == {0: 21, 1: 21, 2: 21}
    scene = generate_scenario(ScenarioSpec(kind="fork", n_trajectories=10,
                                           proportions=[0.5, 0.25, 0.25]))
    assert Counter(scene.labels) == {0: 5, 1: 3, 2: 2}


def test_fork_kind_with_branch_count():
    scene = synth_scenario("fork(2)", n_trajectories=6, horizon=10, split_frame=2)
    assert len(scene) == 6


@pytest.mark.parametrize("proportions", [[0.5, 0.5], [0.6, 0.6, -0.2], [0.2, 0.2, 0.2]])
def test_bad_proportions(proportions):
    with pytest.raises(BadProportion):
        generate_scenario(ScenarioSpec(kind="fork", n_trajectories=12, proportions=proportions))


def test_too_few_trajectories():
    with pytest.raises(ValidationError):
        synth_scenario("fork", n_trajectories=5)
