from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional


# --- configuration fragments ---

class ClustererConfig(BaseModel):
    algorithm: Literal["kmeans", "kmeans_constrained", "density"] = "kmeans_constrained"
    k: int = Field(default=1, ge=1)
    # n_y + 1 points are needed for a planar hull
    min_cluster_size: int = Field(default=3, ge=3)
    epsilon: float = Field(default=1.0, gt=0)
    seed: int = 0
    max_iterations: int = Field(default=100, ge=1)
    # k-means restarts; the lowest within-cluster sum of squares wins
    n_init: int = Field(default=10, ge=1)


class RegionSpec(BaseModel):
    shape: Literal["circle", "polygon"]
    center: Optional[List[float]] = None
    radius: Optional[float] = None
    vertices: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def check_shape(self) -> "RegionSpec":
        if self.shape == "circle":
            if self.center is None or len(self.center) != 2:
                raise ValueError("circle region needs a 2-D center")
            if self.radius is None or self.radius <= 0:
                raise ValueError("circle region needs a positive radius")
        else:
            if not self.vertices or len(self.vertices) < 3:
                raise ValueError("polygon region needs at least 3 vertices")
            xs = [v[0] for v in self.vertices]
            ys = [v[1] for v in self.vertices]
            n = len(self.vertices)
            signed = 0.5 * sum(xs[i] * ys[(i + 1) % n] - xs[(i + 1) % n] * ys[i] for i in range(n))
            if signed <= 0:
                raise ValueError("polygon region must be counter-clockwise and non-degenerate")
        return self


class FilterSpec(BaseModel):
    start: RegionSpec
    end: Optional[RegionSpec] = None
    moving_only: bool = True
    min_speed: float = Field(default=0.5, ge=0)
    # Restart the clock of each kept trajectory at frame 0
    align: bool = True


class ScenarioSpec(BaseModel):
    kind: Literal["curved_road", "stop_go_lane", "fork"] = "fork"
    n_trajectories: int = Field(default=63, ge=6)
    noise_sigma: float = Field(default=0.3, ge=0)
    seed: int = 0
    horizon: int = Field(default=300, ge=1)
    split_frame: int = Field(default=50, ge=0)
    n_branches: int = Field(default=3, ge=1)
    proportions: Optional[List[float]] = None
    dt: float = Field(default=0.04, gt=0)
    speed: float = Field(default=8.0, gt=0)


class ProjectionConfig(BaseModel):
    gamma: float = Field(default=0.1, ge=0)
    frame_skip: int = Field(default=1, ge=1)
    downsample: int = Field(default=1, ge=1)
    big_m_mode: Literal["auto", "fixed"] = "auto"
    big_m: float = Field(default=1000.0, gt=0)
    binary_mode: Literal["exactly_one", "at_least_one"] = "exactly_one"
    mip_gap: float = Field(default=1e-6, ge=0)
    node_limit: int = Field(default=100000, ge=1)
    time_limit: float = Field(default=600.0, gt=0)
    workers: int = Field(default=1, ge=1)
    mass: float = Field(default=1.0, gt=0)


class DatasetSource(BaseModel):
    csv: Optional[str] = None
    synth: Optional[ScenarioSpec] = None

    @model_validator(mode="after")
    def exactly_one_source(self) -> "DatasetSource":
        if (self.csv is None) == (self.synth is None):
            raise ValueError("dataset needs exactly one of 'csv' or 'synth'")
        return self


class PipelineConfig(BaseModel):
    dataset: DatasetSource
    filter: Optional[FilterSpec] = None
    clusterer: ClustererConfig = Field(default_factory=ClustererConfig)
    hull_state_map: Literal["position"] = "position"
    projection: ProjectionConfig = Field(default_factory=ProjectionConfig)
    output_dir: Optional[str] = None
    max_frames: Optional[int] = Field(default=None, ge=1)


# --- file formats ---

class PolytopeModel(BaseModel):
    vertices: List[List[float]]
    G: List[List[float]]
    h: List[float]


class SubsetModel(BaseModel):
    t: int
    outliers: int
    polytopes: List[PolytopeModel]

    @field_validator("polytopes")
    @classmethod
    def non_empty(cls, value: List[PolytopeModel]) -> List[PolytopeModel]:
        if not value:
            raise ValueError("a naturalistic subset needs at least one polytope")
        return value


class NaturalisticSetModel(BaseModel):
    dt: float
    horizon: int
    hull_state_dim: int
    hull_state_map: List[List[float]]
    subsets: List[SubsetModel]
    provenance: Dict[str, Any]

    @model_validator(mode="after")
    def contiguous(self) -> "NaturalisticSetModel":
        if [s.t for s in self.subsets] != list(range(len(self.subsets))):
            raise ValueError("subsets must be indexed contiguously from 0")
        if self.horizon != len(self.subsets) - 1:
            raise ValueError("horizon must equal the number of subsets minus one")
        return self


class ProjectionResultModel(BaseModel):
    status: Literal["Optimal", "GapReached", "Infeasible", "Limit"]
    objective: Optional[float]
    bound: Optional[float]
    nodes: int
    wall_time_s: float
    active_clusters: List[int]
    states: List[List[float]]
    controls: List[List[float]]
    dt: float
    enforced_frames: List[int]
    provenance: Dict[str, Any] = Field(default_factory=dict)


class FramePolygonsModel(BaseModel):
    t: int
    dt: float
    polytopes: List[PolytopeModel]


class TrajectoryPolylineModel(BaseModel):
    source: str
    status: str
    dt: float
    points: List[List[float]]


class PlotTrajectoriesModel(BaseModel):
    trajectories: List[TrajectoryPolylineModel]
