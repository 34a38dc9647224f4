"""Command handlers behind main.py.

Each handler returns a process exit code. Typed pipeline failures map onto the
codes below, the way HTTP handlers map failures onto status codes:

    0 success, 2 usage/config, 3 generation, 4 infeasible, 5 limit
"""
import dataclasses
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import networkx
import numpy as np
import pandas as pd
import pydantic
import scipy
from pydantic import BaseModel, ValidationError

from core import __version__
from core.config import settings
from core.dynamics import Trajectory, double_integrator
from core.errors import ConfigError, NatsetError, ProjectionInfeasible
from core.geometry import ConvexPolytope
from core.ingest import filter_tasks, load_csv
from core.middleware import tracked_command
from core.natset import (HULL_STATE_MAPS, NaturalisticSet, generate, read_natset,
                         write_metrics_csv, write_natset)
from core.projector import ProjectionResult, ProjectionStatus, project
from core.scenarios import generate_scenario
from .models import (FramePolygonsModel, PipelineConfig, PlotTrajectoriesModel, PolytopeModel,
                     ProjectionConfig, ProjectionResultModel, ScenarioSpec,
                     TrajectoryPolylineModel)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 4
EXIT_LIMIT = 5


# --- shared plumbing ---

def _fail(e: Exception) -> int:
    if isinstance(e, NatsetError):
        logger.error("%s failed (%s): %s", e.stage, type(e).__name__, e)
        return e.exit_code
    if isinstance(e, ValidationError):
        logger.error("config failed validation:\n%s", e)
        return EXIT_CONFIG
    raise e


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _load_model(path, model_cls, what: str):
    text = _require_file(path, what).read_text(encoding="utf-8")
    return model_cls.model_validate_json(text)


def _write_json(path: Path, model: BaseModel) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    return path


def _versions() -> Dict[str, str]:
    return {
        "natset": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "networkx": networkx.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


def provenance(config: Dict[str, Any], seed: Optional[int] = None) -> Dict[str, Any]:
    """Config hash and library versions stamped on every output file."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    block = {
        "config_hash": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "versions": _versions(),
    }
    if seed is not None:
        block["seed"] = seed
    return block


def _parse_ints(text: Optional[str], what: str) -> List[int]:
    if text is None or not text.strip():
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of integers, got {text!r}")


def _out_dir(out_dir: Optional[str]) -> Path:
    path = Path(out_dir or settings.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_trajectories(nset: NaturalisticSet, traj: Optional[str] = None,
                       synth: Optional[str] = None) -> List[Trajectory]:
    if (traj is None) == (synth is None):
        raise ConfigError("give exactly one trajectory source: --traj or --synth")
    if traj is not None:
        trajectories = []
        for path in traj.split(","):
            # CSV frames carry no period of their own; they share the set's rate
            trajectories.extend(load_csv(_require_file(path, "trajectory file"), dt=nset.dt))
        return trajectories
    spec = _load_model(synth, ScenarioSpec, "scenario file")
    return list(generate_scenario(spec).trajectories)


def _select(trajectories: Sequence[Trajectory], traj_id: Optional[str], index: int) -> Trajectory:
    if traj_id is not None:
        for traj in trajectories:
            if traj.id == traj_id:
                return traj
        raise ConfigError(f"no trajectory with id {traj_id!r}")
    if not 0 <= index < len(trajectories):
        raise ConfigError(f"trajectory index {index} out of range (have {len(trajectories)})")
    return trajectories[index]


def _projection_config(base: Optional[ProjectionConfig] = None, **overrides) -> ProjectionConfig:
    values = (base or ProjectionConfig()).model_dump()
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ProjectionConfig(**values)


def _result_model(result: Optional[ProjectionResult], cfg: ProjectionConfig,
                  extra: Dict[str, Any]) -> ProjectionResultModel:
    block = provenance(cfg.model_dump())
    block.update(extra)
    block["projection"] = cfg.model_dump()
    if result is None:
        return ProjectionResultModel(
            status=ProjectionStatus.INFEASIBLE.value, objective=None, bound=None, nodes=0,
            wall_time_s=0.0, active_clusters=[], states=[], controls=[], dt=0.0,
            enforced_frames=[], provenance=block)
    return ProjectionResultModel(
        status=result.status.value,
        objective=result.objective,
        bound=result.bound,
        nodes=result.nodes_explored,
        wall_time_s=result.wall_time,
        active_clusters=list(result.active_clusters),
        states=result.trajectory.states.tolist() if result.trajectory else [],
        controls=result.controls.controls.tolist() if result.controls else [],
        dt=result.dynamics.dt,
        enforced_frames=list(result.enforced_frames),
        provenance=block,
    )


def _run_projection(nset: NaturalisticSet, traj: Trajectory,
                    cfg: ProjectionConfig) -> Tuple[Optional[ProjectionResult], int]:
    dyn = double_integrator(nset.dt, cfg.mass)
    try:
        result = project(nset, dyn, traj, cfg)
    except ProjectionInfeasible as e:
        logger.error("Trajectory %r: %s. A projection exists only when the naturalistic set "
                     "contains a trajectory that is dynamically reachable from x_init.",
                     traj.id, e)
        return e.result, EXIT_INFEASIBLE
    if result.status == ProjectionStatus.LIMIT:
        logger.warning("Trajectory %r: node or time limit hit after %d nodes",
                       traj.id, result.nodes_explored)
        return result, EXIT_LIMIT
    return result, EXIT_OK


# --- commands ---

@tracked_command("gen-natset")
def cmd_gen_natset(config_path: str, out_dir: Optional[str] = None,
                   seed: Optional[int] = None, workers: Optional[int] = None) -> int:
    """Build natset.json and metrics.csv from a pipeline config."""
    try:
        config = _load_model(config_path, PipelineConfig, "config file")
        if seed is not None:
            config.clusterer.seed = seed
            if config.dataset.synth is not None:
                config.dataset.synth.seed = seed
        out = _out_dir(out_dir or config.output_dir)

        if config.dataset.csv is not None:
            dataset = load_csv(_require_file(config.dataset.csv, "dataset file"))
        else:
            dataset = list(generate_scenario(config.dataset.synth).trajectories)
        if config.filter is not None:
            dataset = filter_tasks(dataset, config.filter)

        hull_map = HULL_STATE_MAPS[config.hull_state_map]()
        nset, metrics = generate(dataset, hull_map, config.clusterer,
                                 workers=workers, max_frames=config.max_frames)
        block = dict(nset.provenance)
        block.update(provenance(config.model_dump(mode="json"), seed=config.clusterer.seed))
        nset = dataclasses.replace(nset, provenance=block)

        write_natset(nset, out / "natset.json")
        write_metrics_csv(metrics, out / "metrics.csv")
        logger.info("Wrote %s and %s (H=%d)", out / "natset.json", out / "metrics.csv",
                    nset.horizon)
        return EXIT_OK
    except (NatsetError, ValidationError) as e:
        return _fail(e)


@tracked_command("project")
def cmd_project(natset_path: str, traj: Optional[str] = None, synth: Optional[str] = None,
                traj_id: Optional[str] = None, index: int = 0,
                config_path: Optional[str] = None, out_dir: Optional[str] = None,
                **overrides) -> int:
    """Project one trajectory; writes result.json and distances.csv.

    `overrides` are ProjectionConfig fields (gamma, frame_skip, downsample,
    mip_gap, time_limit, ...); None values are ignored.
    """
    try:
        nset = read_natset(_require_file(natset_path, "natset file"))
        base = _load_model(config_path, PipelineConfig, "config file").projection \
            if config_path else None
        cfg = _projection_config(base, **overrides)
        target = _select(_load_trajectories(nset, traj, synth), traj_id, index)
        out = _out_dir(out_dir)

        result, code = _run_projection(nset, target, cfg)
        extra = {"natset_hash": nset.provenance.get("dataset_hash"), "trajectory": target.id}
        _write_json(out / "result.json", _result_model(result, cfg, extra))
        if result is not None and result.distances is not None:
            frame = pd.DataFrame({"t": np.arange(len(result.distances)),
                                  "distance": result.distances})
            frame.to_csv(out / "distances.csv", index=False, float_format="%.10g")
        return code
    except (NatsetError, ValidationError) as e:
        return _fail(e)


@tracked_command("export-plot")
def cmd_export_plot(natset_path: str, frames: Optional[str] = None,
                    results: Optional[str] = None, out_dir: Optional[str] = None) -> int:
    """Per-frame polygon JSON plus one trajectory polyline file."""
    try:
        nset = read_natset(_require_file(natset_path, "natset file"))
        wanted = _parse_ints(frames, "--frames")
        bad = [t for t in wanted if not 0 <= t <= nset.horizon]
        if bad:
            raise ConfigError(f"frames {bad} outside 0..{nset.horizon}")
        result_paths = [p for p in (results or "").split(",") if p.strip()]
        polylines = []
        for path in result_paths:
            model = _load_model(path, ProjectionResultModel, "result file")
            states = np.array(model.states).reshape(-1, nset.hull_map.state_dim)
            polylines.append(TrajectoryPolylineModel(
                source=str(path), status=model.status, dt=model.dt,
                points=nset.hull_map.apply(states).tolist()))
        if not wanted and not polylines:
            return EXIT_OK

        out = _out_dir(out_dir)
        for t in wanted:
            polys = [PolytopeModel(**p.to_dict()) for p in nset.subsets[t].polytopes]
            _write_json(out / f"frame_{t:04d}.json",
                        FramePolygonsModel(t=t, dt=nset.dt, polytopes=polys))
        if polylines:
            _write_json(out / "trajectories.json", PlotTrajectoriesModel(trajectories=polylines))
        logger.info("Exported %d frames and %d trajectories to %s", len(wanted), len(polylines), out)
        return EXIT_OK
    except (NatsetError, ValidationError) as e:
        return _fail(e)


def read_frame_polygons(path) -> List[ConvexPolytope]:
    """Re-parse an exported frame file, validating every polytope."""
    model = _load_model(path, FramePolygonsModel, "frame file")
    return [ConvexPolytope.from_dict(p.model_dump()) for p in model.polytopes]


def _clusterer_label(nset: NaturalisticSet) -> str:
    clusterer = nset.provenance.get("clusterer") or {}
    algorithm = clusterer.get("algorithm", "unknown")
    if algorithm == "density":
        return f"density(eps={clusterer.get('epsilon')})"
    return f"{algorithm}(k={clusterer.get('k')})"


def _markdown_table(frame: pd.DataFrame) -> str:
    header = "| " + " | ".join(frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    rows = []
    for record in frame.itertuples(index=False):
        cells = [f"{v:.6g}" if isinstance(v, float) else str(v) for v in record]
        rows.append("| " + " | ".join(cells) + " |")
    return "\n".join([header, rule] + rows) + "\n"


@tracked_command("benchmark")
def cmd_benchmark(natset_path: str, trajs: Optional[str] = None, synth: Optional[str] = None,
                  count: Optional[int] = None, frame_skips: str = "1,2,4,8",
                  downsamples: str = "1", out_dir: Optional[str] = None,
                  **overrides) -> int:
    """Runtime/objective sweep over frame skip and downsample rate.

    Writes benchmark.csv, benchmark.md and quality.csv. The runtime column is
    wall-clock time and differs between reruns.
    """
    try:
        nset = read_natset(_require_file(natset_path, "natset file"))
        skips = _parse_ints(frame_skips, "--frame-skips")
        rates = _parse_ints(downsamples, "--downsamples")
        if not skips or not rates or min(skips + rates) < 1:
            raise ConfigError("sweeps need at least one positive frame skip and downsample rate")
        trajectories = _load_trajectories(nset, trajs, synth)
        if count is not None:
            trajectories = trajectories[:count]
        out = _out_dir(out_dir)
        label = _clusterer_label(nset)

        rows, quality = [], []
        worst = EXIT_OK
        for traj in trajectories:
            for rate in rates:
                # Quality is measured against the smallest requested skip only
                reference = None
                densest = min(skips)
                for skip in sorted(skips):
                    cfg = _projection_config(downsample=rate, frame_skip=skip, **overrides)
                    result, code = _run_projection(nset, traj, cfg)
                    if code == EXIT_INFEASIBLE or (code == EXIT_LIMIT and worst == EXIT_OK):
                        worst = code
                    rows.append({
                        "trajectory": traj.id, "clusterer": label, "downsample": rate,
                        "frame_skip": skip,
                        "runtime_s": result.wall_time if result else float("nan"),
                        "objective": result.objective if result and result.objective is not None
                        else float("nan"),
                        "nodes": result.nodes_explored if result else 0,
                        "status": result.status.value if result else "Infeasible",
                    })
                    states = result.trajectory.states if result and result.trajectory else None
                    if skip == densest:
                        reference = states
                        if reference is None:
                            logger.warning(
                                "Trajectory %r: no projection at frame skip %d, so no quality "
                                "rows for downsample %d", traj.id, skip, rate)
                    if reference is not None and states is not None:
                        diff = np.linalg.norm(states - reference, axis=1)
                        quality.extend({"trajectory": traj.id, "downsample": rate,
                                        "frame_skip": skip, "t": t, "distance": float(d)}
                                       for t, d in enumerate(diff))

        table = pd.DataFrame(rows, columns=["trajectory", "clusterer", "downsample", "frame_skip",
                                            "runtime_s", "objective", "nodes", "status"])
        table.to_csv(out / "benchmark.csv", index=False, float_format="%.10g")
        (out / "benchmark.md").write_text(_markdown_table(table), encoding="utf-8")
        pd.DataFrame(quality, columns=["trajectory", "downsample", "frame_skip", "t", "distance"]) \
            .to_csv(out / "quality.csv", index=False, float_format="%.10g")
        logger.info("Benchmark: %d projections written to %s", len(rows), out)
        return worst
    except (NatsetError, ValidationError) as e:
        return _fail(e)
