"""inD/rounD-style trajectory CSV I/O and start/end-set task filtering.

CSV header, in this exact order:
    actor_id,frame,x,y,vx,vy,ax,ay,heading,class
Rows are grouped per actor into trajectories with states [p_x, v_x, p_y, v_y].
"""
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from api.models import FilterSpec, RegionSpec
from .config import settings
from .dynamics import Trajectory
from .errors import NonContiguousFrames, ParseError
from .geometry import point_in_polygon

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["actor_id", "frame", "x", "y", "vx", "vy", "ax", "ay", "heading", "class"]
NUMERIC_COLUMNS = ["x", "y", "vx", "vy", "ax", "ay", "heading"]
MOVING_CLASS = "car"


@dataclass(frozen=True)
class RawActorState:
    actor_id: str
    frame: int
    position: tuple
    velocity: tuple
    acceleration: tuple
    heading: float
    actor_class: str


def _read_frame(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError(str(e), line=int(match.group(1)) if match else None) from e
    except pd.errors.EmptyDataError as e:
        raise ParseError("file is empty", line=1) from e
    if list(df.columns) != CSV_COLUMNS:
        raise ParseError(
            f"header must be {','.join(CSV_COLUMNS)}, got {','.join(map(str, df.columns))}",
            line=1)
    # Short rows come back as NaN; treat them like empty fields
    return df.fillna("")


def read_raw_states(path) -> List[RawActorState]:
    df = _read_frame(path)
    numeric = {}
    for col in NUMERIC_COLUMNS + ["frame"]:
        values = pd.to_numeric(df[col], errors="coerce")
        bad = values.isna() | ~np.isfinite(values.fillna(0.0))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            # +2: header is line 1 and rows are 1-based
            raise ParseError(f"column {col!r} has non-numeric value {df[col].iloc[row]!r}",
                             line=row + 2)
        numeric[col] = values.to_numpy(dtype=float)
    frames = numeric["frame"]
    if np.any(frames != np.round(frames)):
        row = int(np.flatnonzero(frames != np.round(frames))[0])
        raise ParseError("frame must be an integer", line=row + 2)
    for col in ("actor_id", "class"):
        empty = (df[col].str.strip() == "").to_numpy()
        if empty.any():
            raise ParseError(f"{col} is empty", line=int(np.flatnonzero(empty)[0]) + 2)

    return [
        RawActorState(
            actor_id=df["actor_id"].iloc[i],
            frame=int(frames[i]),
            position=(numeric["x"][i], numeric["y"][i]),
            velocity=(numeric["vx"][i], numeric["vy"][i]),
            acceleration=(numeric["ax"][i], numeric["ay"][i]),
            heading=numeric["heading"][i],
            actor_class=df["class"].iloc[i],
        )
        for i in range(len(df))
    ]


def load_csv(path, dt: Optional[float] = None) -> List[Trajectory]:
    """One trajectory per actor, in order of first appearance."""
    dt = settings.sample_period if dt is None else dt
    per_actor: Dict[str, List[RawActorState]] = {}
    for state in read_raw_states(path):
        per_actor.setdefault(state.actor_id, []).append(state)

    trajectories = []
    for actor_id, states in per_actor.items():
        states = sorted(states, key=lambda s: s.frame)
        frames = np.array([s.frame for s in states])
        if np.any(np.diff(frames) != 1):
            raise NonContiguousFrames(actor_id)
        if len(states) < 2:
            logger.warning("Skipping actor %s: a single frame is not a trajectory", actor_id)
            continue
        arr = np.array([[s.position[0], s.velocity[0], s.position[1], s.velocity[1]]
                        for s in states])
        trajectories.append(Trajectory(
            states=arr, dt=dt, id=actor_id,
            actor_class=states[0].actor_class, start_frame=int(frames[0])))
    logger.info("Loaded %d trajectories from %s", len(trajectories), path)
    return trajectories


def write_csv(trajectories: Sequence[Trajectory], path) -> Path:
    """Acceleration by finite differences of velocity; heading from velocity."""
    records = []
    for traj in trajectories:
        x = traj.states
        vel = x[:, [1, 3]]
        acc = np.zeros_like(vel)
        acc[:-1] = np.diff(vel, axis=0) / traj.dt
        acc[-1] = acc[-2]
        heading = np.arctan2(vel[:, 1], vel[:, 0])
        for t in range(len(x)):
            records.append((traj.id, traj.start_frame + t, x[t, 0], x[t, 2], x[t, 1], x[t, 3],
                            acc[t, 0], acc[t, 1], heading[t], traj.actor_class))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(records, columns=CSV_COLUMNS).to_csv(path, index=False, float_format="%.17g")
    return path


def region_contains(region: RegionSpec, p) -> bool:
    if region.shape == "circle":
        return float(np.hypot(p[0] - region.center[0], p[1] - region.center[1])) <= region.radius
    return point_in_polygon(region.vertices, p)


def _position(state: np.ndarray) -> np.ndarray:
    return state[[0, 2]]


def mean_speed(traj: Trajectory) -> float:
    return float(np.mean(np.hypot(traj.states[:, 1], traj.states[:, 3])))


def align_to_start(traj: Trajectory, region: RegionSpec) -> Optional[Trajectory]:
    """Trim so the first frame inside `region` becomes t = 0."""
    for t, state in enumerate(traj.states):
        if region_contains(region, _position(state)):
            if len(traj) - t < 2:
                return None
            return traj.trimmed(t) if t else traj
    return None


def filter_tasks(trajectories: Sequence[Trajectory], spec: FilterSpec) -> List[Trajectory]:
    """Moving vehicles whose recorded first state lies in the start set and, if given,
    whose last state lies in the end set. Actors entering the start set later are dropped."""
    kept = []
    for traj in trajectories:
        if not region_contains(spec.start, _position(traj.states[0])):
            continue
        candidate = traj
        if spec.align:
            candidate = replace(align_to_start(traj, spec.start), start_frame=0)
        if spec.moving_only and (candidate.actor_class != MOVING_CLASS
                                 or mean_speed(candidate) < spec.min_speed):
            continue
        if spec.end is not None and not region_contains(spec.end, _position(candidate.states[-1])):
            continue
        kept.append(candidate)
    logger.info("Task filter kept %d of %d trajectories", len(kept), len(trajectories))
    return kept
