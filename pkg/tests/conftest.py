import os
from typing import Sequence, Tuple

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from core.dynamics import double_integrator, rollout
from core.geometry import ConvexPolytope
from core.natset import HullStateMap, NaturalisticSet, NaturalisticSubset

# Slow property tests (node QPs, clustering) trip the too_slow health check on CI runners.
settings.register_profile("ci", suppress_health_check=(HealthCheck.too_slow,), deadline=None)
settings.register_profile("dev", deadline=None)
settings.load_profile("ci" if "CI" in os.environ else "dev")

Box = Tuple[float, float, float, float]  # xmin, xmax, ymin, ymax


def box(xmin: float, xmax: float, ymin: float, ymax: float) -> ConvexPolytope:
    return ConvexPolytope.from_vertices(
        [[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])


def box_natset(frames: Sequence[Sequence[Box]], dt: float) -> NaturalisticSet:
    """Naturalistic set with axis-aligned boxes as polytopes, one list per frame."""
    subsets = tuple(
        NaturalisticSubset(t=t, polytopes=tuple(box(*b) for b in boxes))
        for t, boxes in enumerate(frames))
    return NaturalisticSet(subsets=subsets, dt=dt, hull_map=HullStateMap.position())


def straight_trajectory(horizon: int, dt: float, speed: float = 1.0):
    """Constant-velocity rollout along +x from the origin."""
    dyn = double_integrator(dt)
    return rollout(dyn, np.array([0.0, speed, 0.0, 0.0]), np.zeros((horizon, 2)), traj_id="auto")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
