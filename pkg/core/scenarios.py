"""Seeded synthetic driving scenes.

Every trajectory is a double-integrator rollout: a nominal speed and heading
profile is turned into per-step forces, so the generated states are exactly
reachable under double_integrator(dt, mass).
"""
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from api.models import ScenarioSpec
from .dynamics import DEFAULT_MASS, Trajectory, double_integrator, rollout
from .errors import BadProportion

STOP_GO_MODES = 3
FORK_MAX_ANGLE = np.pi / 6
SPEED_JITTER = 0.1  # m/s of speed spread per metre of noise_sigma


@dataclass(frozen=True)
class Scenario:
    trajectories: Tuple[Trajectory, ...]
    # Branch (fork) or behaviour mode (stop_go_lane) of each trajectory
    labels: Tuple[int, ...]


def _allocate(n: int, proportions: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """Largest-remainder split of n items, shuffled."""
    shares = np.asarray(proportions, dtype=float) * n
    counts = np.floor(shares).astype(int)
    remainder = n - counts.sum()
    order = np.argsort(-(shares - counts), kind="stable")
    counts[order[:remainder]] += 1
    labels = np.repeat(np.arange(len(counts)), counts)
    return rng.permutation(labels)


def _check_proportions(proportions: Optional[Sequence[float]], n_groups: int) -> List[float]:
    if proportions is None:
        return [1.0 / n_groups] * n_groups
    if len(proportions) != n_groups:
        raise BadProportion(f"expected {n_groups} proportions, got {len(proportions)}")
    if any(p < 0 for p in proportions):
        raise BadProportion("proportions must be non-negative")
    if abs(sum(proportions) - 1.0) > 1e-9:
        raise BadProportion(f"proportions must sum to 1, got {sum(proportions)}")
    return list(proportions)


def _ramp(horizon: int, start: int, length: int, target: float) -> np.ndarray:
    """0 before `start`, linear to `target` over `length` frames, then held."""
    t = np.arange(horizon + 1, dtype=float)
    frac = np.clip((t - start) / max(length, 1), 0.0, 1.0)
    return target * frac


def _profiles(spec: ScenarioSpec, label: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nominal (speed scale, heading) per frame for one group."""
    H = spec.horizon
    speed = np.ones(H + 1)
    heading = np.zeros(H + 1)
    if spec.kind == "curved_road":
        heading = _ramp(H, H // 4, H // 2, np.pi / 2)
    elif spec.kind == "stop_go_lane":
        phase = max(H // 5, 1)
        if label == 1:
            # brake to a halt, wait, pull away again
            speed = 1.0 - _ramp(H, phase, phase, 1.0) + _ramp(H, 3 * phase, phase, 1.0)
        elif label == 2:
            speed = 1.0 - _ramp(H, phase, phase, 0.5)
    else:
        angles = np.linspace(-FORK_MAX_ANGLE, FORK_MAX_ANGLE, spec.n_branches) \
            if spec.n_branches > 1 else np.zeros(1)
        turn = min(50, max(H - spec.split_frame, 1))
        heading = _ramp(H, spec.split_frame, turn, float(angles[label]))
    return speed, heading


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    n_groups = {"curved_road": 1, "stop_go_lane": STOP_GO_MODES}.get(spec.kind, spec.n_branches)
    proportions = _check_proportions(spec.proportions, n_groups)
    rng = np.random.default_rng(spec.seed)
    labels = _allocate(spec.n_trajectories, proportions, rng)
    dyn = double_integrator(spec.dt, DEFAULT_MASS)

    trajectories = []
    for i, label in enumerate(labels):
        lon, lat, z = rng.normal(size=3)
        speed_scale, heading = _profiles(spec, int(label))
        cruise = spec.speed + SPEED_JITTER * spec.noise_sigma * z
        vel = (cruise * speed_scale)[:, None] * np.column_stack([np.cos(heading), np.sin(heading)])
        controls = DEFAULT_MASS * np.diff(vel, axis=0) / spec.dt
        x0 = np.array([spec.noise_sigma * lon, vel[0, 0], spec.noise_sigma * lat, vel[0, 1]])
        traj = rollout(dyn, x0, controls, traj_id=f"{spec.kind}-{i:03d}")
        trajectories.append(traj)
    return Scenario(trajectories=tuple(trajectories), labels=tuple(int(b) for b in labels))


def synth_scenario(kind: str, n_trajectories: int = 63, noise_sigma: float = 0.3,
                   seed: int = 0, **options) -> List[Trajectory]:
    """`kind` is curved_road, stop_go_lane, fork or fork(n)."""
    match = re.fullmatch(r"fork\((\d+)\)", kind)
    if match:
        kind = "fork"
        options["n_branches"] = int(match.group(1))
    spec = ScenarioSpec(kind=kind, n_trajectories=n_trajectories,
                        noise_sigma=noise_sigma, seed=seed, **options)
    return list(generate_scenario(spec).trajectories)
