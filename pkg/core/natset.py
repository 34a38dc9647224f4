"""Naturalistic sets: one union of convex polytopes per timestep.

For every frame t the dataset is sliced, mapped to hull states, clustered, and
each non-noise cluster is wrapped in its convex hull. Generation stops at the
first frame whose clustering cannot give every cluster enough points for a
hull; the last good frame is the horizon H.
"""
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from api.models import ClustererConfig, NaturalisticSetModel, PolytopeModel, SubsetModel
from .clustering import cluster
from .config import settings
from .dynamics import Trajectory
from .errors import DimensionMismatch, DtMismatch, EmptyDataset, HorizonZero
from .geometry import CONTAINMENT_TOL, ConvexPolytope, contains, convex_hull, total_area

logger = logging.getLogger(__name__)

DT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class HullStateMap:
    selector: np.ndarray  # (n_y, n)

    def __post_init__(self):
        selector = np.atleast_2d(np.asarray(self.selector, dtype=float))
        n_y, n = selector.shape
        if n_y > n or np.linalg.matrix_rank(selector) != n_y:
            raise DimensionMismatch("hull-state selector rows must be linearly independent")
        object.__setattr__(self, "selector", selector)

    @classmethod
    def position(cls) -> "HullStateMap":
        """Planar position out of [p_x, v_x, p_y, v_y]."""
        return cls(np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]))

    @property
    def hull_dim(self) -> int:
        return self.selector.shape[0]

    @property
    def state_dim(self) -> int:
        return self.selector.shape[1]

    def apply(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.shape[-1] != self.state_dim:
            raise DimensionMismatch(
                f"states have dimension {states.shape[-1]}, map expects {self.state_dim}")
        return states @ self.selector.T


HULL_STATE_MAPS = {"position": HullStateMap.position}


@dataclass(frozen=True, eq=False)
class NaturalisticSubset:
    t: int
    polytopes: Tuple[ConvexPolytope, ...]
    outlier_count: int = 0

    def contains(self, y, tol: float = CONTAINMENT_TOL) -> bool:
        return any(contains(p, y, tol) for p in self.polytopes)


@dataclass(frozen=True, eq=False)
class NaturalisticSet:
    subsets: Tuple[NaturalisticSubset, ...]
    dt: float
    hull_map: HullStateMap
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.subsets) - 1

    @property
    def hull_state_dim(self) -> int:
        return self.hull_map.hull_dim

    def downsample(self, factor: int) -> "NaturalisticSet":
        if factor == 1:
            return self
        kept = self.subsets[::factor]
        subsets = tuple(
            NaturalisticSubset(t=i, polytopes=s.polytopes, outlier_count=s.outlier_count)
            for i, s in enumerate(kept))
        provenance = dict(self.provenance)
        provenance["downsample"] = factor * int(self.provenance.get("downsample", 1))
        return NaturalisticSet(subsets=subsets, dt=self.dt * factor,
                               hull_map=self.hull_map, provenance=provenance)


@dataclass(frozen=True)
class MetricsRow:
    t: int
    k: int
    area: float
    points: int
    outliers: int


@dataclass(frozen=True)
class SetMetrics:
    rows: Tuple[MetricsRow, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.t, r.k, r.area, r.points, r.outliers) for r in self.rows],
            columns=["t", "k", "area", "points", "outliers"])


def slice_dataset(dataset: Sequence[Trajectory], t: int) -> np.ndarray:
    """States at frame t of every trajectory long enough to have one."""
    if t < 0:
        raise ValueError(f"frame index must be non-negative, got {t}")
    rows = [traj.states[t] for traj in dataset if len(traj) > t]
    if not rows:
        dim = dataset[0].state_dim if len(dataset) else 0
        return np.zeros((0, dim))
    return np.vstack(rows)


def dataset_hash(dataset: Sequence[Trajectory]) -> str:
    digest = hashlib.sha256()
    for traj in dataset:
        digest.update(traj.id.encode("utf-8"))
        digest.update(np.float64(traj.dt).tobytes())
        digest.update(np.ascontiguousarray(traj.states, dtype=np.float64).tobytes())
    return digest.hexdigest()


def _order_key(points: np.ndarray, members: Sequence[int]) -> Tuple:
    centroid = points[list(members)].mean(axis=0)
    return (-len(members),) + tuple(float(c) for c in centroid)


def _subset_at(t: int, dataset: Sequence[Trajectory], hull_map: HullStateMap,
               config: ClustererConfig) -> Optional[Tuple[NaturalisticSubset, MetricsRow]]:
    """Cluster and hull frame t; None when the frame fails the size condition."""
    points = hull_map.apply(slice_dataset(dataset, t))
    m = len(points)
    if config.algorithm in ("kmeans", "kmeans_constrained"):
        if m < config.k * config.min_cluster_size:
            return None
    elif m == 0:
        return None

    assignment = cluster(points, config)
    if assignment.k == 0 or min(assignment.sizes) < config.min_cluster_size:
        return None

    members = sorted(assignment.index_sets, key=lambda idx: _order_key(points, idx))
    polytopes = tuple(convex_hull(points[list(idx)], config.min_cluster_size) for idx in members)
    subset = NaturalisticSubset(t=t, polytopes=polytopes,
                                outlier_count=len(assignment.noise_indices))
    row = MetricsRow(t=t, k=len(polytopes), area=total_area(polytopes),
                     points=m, outliers=len(assignment.noise_indices))
    return subset, row


def _provenance_time() -> str:
    stamp = datetime.fromtimestamp(settings.source_date_epoch, tz=timezone.utc)
    return stamp.isoformat()


def generate(dataset: Sequence[Trajectory], hull_map: HullStateMap, config: ClustererConfig,
             workers: Optional[int] = None, max_frames: Optional[int] = None,
             ) -> Tuple[NaturalisticSet, SetMetrics]:
    if not dataset:
        raise EmptyDataset("cannot build a naturalistic set from an empty dataset")
    dt = dataset[0].dt
    for traj in dataset:
        if abs(traj.dt - dt) > DT_TOL * max(1.0, dt):
            raise DtMismatch(dt, traj.dt)
        if traj.state_dim != hull_map.state_dim:
            raise DimensionMismatch(
                f"trajectory {traj.id!r} has state dimension {traj.state_dim}, "
                f"hull map expects {hull_map.state_dim}")

    workers = settings.workers if workers is None else workers
    last_frame = max(len(traj) for traj in dataset) - 1
    if max_frames is not None:
        last_frame = min(last_frame, max_frames - 1)

    def build(t: int):
        return _subset_at(t, dataset, hull_map, config)

    subsets: List[NaturalisticSubset] = []
    rows: List[MetricsRow] = []
    t = 0
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        stopped = False
        while not stopped and t <= last_frame:
            batch = list(range(t, min(t + workers, last_frame + 1)))
            results = list(executor.map(build, batch)) if executor else [build(batch[0])]
            for res in results:
                if res is None:
                    stopped = True
                    break
                subsets.append(res[0])
                rows.append(res[1])
            t = batch[-1] + 1
    finally:
        if executor:
            executor.shutdown()

    if not subsets:
        raise HorizonZero(
            f"frame 0 fails the cluster size condition for {config.algorithm} "
            f"(k={config.k}, min_cluster_size={config.min_cluster_size})")

    logger.info("Naturalistic set: horizon H=%d, %d-%d polytopes per frame",
                len(subsets) - 1, min(r.k for r in rows), max(r.k for r in rows))
    provenance = {
        "dataset_hash": dataset_hash(dataset),
        "clusterer": config.model_dump(),
        "generated_at": _provenance_time(),
    }
    nset = NaturalisticSet(subsets=tuple(subsets), dt=dt, hull_map=hull_map,
                           provenance=provenance)
    return nset, SetMetrics(rows=tuple(rows))


def membership(nset: NaturalisticSet, traj: Trajectory, hull_map: Optional[HullStateMap] = None,
               tol: float = CONTAINMENT_TOL) -> List[bool]:
    """Per-frame membership for t = 0..min(H, trajectory horizon)."""
    if abs(traj.dt - nset.dt) > DT_TOL * max(1.0, nset.dt):
        raise DtMismatch(nset.dt, traj.dt)
    hull_map = nset.hull_map if hull_map is None else hull_map
    ys = hull_map.apply(traj.states)
    last = min(nset.horizon, traj.horizon)
    return [nset.subsets[t].contains(ys[t], tol) for t in range(last + 1)]


# --- serialization ---

def to_model(nset: NaturalisticSet) -> NaturalisticSetModel:
    return NaturalisticSetModel(
        dt=nset.dt,
        horizon=nset.horizon,
        hull_state_dim=nset.hull_state_dim,
        hull_state_map=nset.hull_map.selector.tolist(),
        subsets=[
            SubsetModel(t=s.t, outliers=s.outlier_count,
                        polytopes=[PolytopeModel(**p.to_dict()) for p in s.polytopes])
            for s in nset.subsets
        ],
        provenance=nset.provenance,
    )


def from_model(model: NaturalisticSetModel) -> NaturalisticSet:
    hull_map = HullStateMap(np.array(model.hull_state_map))
    if hull_map.hull_dim != model.hull_state_dim:
        raise DimensionMismatch("hull_state_dim disagrees with hull_state_map")
    subsets = tuple(
        NaturalisticSubset(
            t=s.t,
            polytopes=tuple(ConvexPolytope.from_dict(p.model_dump()) for p in s.polytopes),
            outlier_count=s.outliers,
        )
        for s in model.subsets)
    return NaturalisticSet(subsets=subsets, dt=model.dt, hull_map=hull_map,
                           provenance=dict(model.provenance))


def dumps(nset: NaturalisticSet) -> str:
    return json.dumps(to_model(nset).model_dump(mode="json"), indent=2) + "\n"


def write_natset(nset: NaturalisticSet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(nset), encoding="utf-8")
    return path


def read_natset(path) -> NaturalisticSet:
    text = Path(path).read_text(encoding="utf-8")
    return from_model(NaturalisticSetModel.model_validate_json(text))


def write_metrics_csv(metrics: SetMetrics, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics.to_frame().to_csv(path, index=False, float_format="%.10g")
    return path
