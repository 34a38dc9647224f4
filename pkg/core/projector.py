"""Projection of a candidate trajectory into a naturalistic set.

The decision variables are the controls u_0..u_{H_a-1}; states are substituted
out through the condensed dynamics X = Phi U + Gamma x_init. At every enforced
frame the hull state must lie in one of that frame's polytopes, selected by
binary flags with big-M deactivation of the other polytopes' rows:

    G_j y_t <= h_j + S_j (1 - s_t^j),    sum_j s_t^j = 1   (or >= 1)

The mixed-integer problem is solved exactly by best-first branch-and-bound over
the flags, each node being a convex QP relaxation.
"""
import heapq
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from api.models import ProjectionConfig
from .dynamics import ControlSequence, LinearDynamics, Trajectory, prediction_matrices, rollout
from .errors import DimensionMismatch, DtMismatch, EmptyEnforcementSet, ProjectionInfeasible
from .geometry import bounding_box, distance
from .natset import DT_TOL, HullStateMap, NaturalisticSet
from .qpsolver import QpSolution, QpStatus, QuadraticProgram, solve_qp
from .solve_tracker import SolveRecord, current_run_id, solve_tracker

logger = logging.getLogger(__name__)

BIG_M_MARGIN = 1.1
BIG_M_FLOOR = 1.0
BINARY_REG = 1e-10    # curvature on relaxed flags so node QPs stay strictly convex
INTEGRALITY_TOL = 1e-6
TIE_TOL = 1e-9


class ProjectionStatus(str, Enum):
    OPTIMAL = "Optimal"
    GAP_REACHED = "GapReached"
    INFEASIBLE = "Infeasible"
    LIMIT = "Limit"


@dataclass(frozen=True, eq=False)
class FrameBlock:
    """Naturalistic rows of one enforced frame, already expressed in U.

    Polytope j contributes A[j] U <= b[j], with per-row big-M S[j].
    """
    t: int
    A: Tuple[np.ndarray, ...]
    b: Tuple[np.ndarray, ...]
    S: Tuple[np.ndarray, ...]

    @property
    def k(self) -> int:
        return len(self.A)


@dataclass(frozen=True, eq=False)
class MiqpModel:
    P: np.ndarray            # (N, N), N = H_a * m
    q: np.ndarray
    r: float
    frames: Tuple[FrameBlock, ...]
    dynamics: LinearDynamics  # after downsampling
    x_init: np.ndarray
    auto_traj: Trajectory     # after downsampling
    nset: NaturalisticSet     # after downsampling
    hull_map: HullStateMap
    config: ProjectionConfig

    @property
    def horizon(self) -> int:
        return self.auto_traj.horizon

    @property
    def n_controls(self) -> int:
        return len(self.q)

    @property
    def enforced_frames(self) -> Tuple[int, ...]:
        return tuple(f.t for f in self.frames)

    @property
    def binary_layout(self) -> List[Tuple[int, int]]:
        """(t, j) of every binary flag; single-polytope frames carry none."""
        return [(f.t, j) for f in self.frames if f.k > 1 for j in range(f.k)]

    @property
    def n_binaries(self) -> int:
        return len(self.binary_layout)


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    trajectory: Optional[Trajectory]
    controls: Optional[ControlSequence]
    active_clusters: Tuple[int, ...]
    enforced_frames: Tuple[int, ...]
    objective: Optional[float]
    bound: Optional[float]
    nodes_explored: int
    wall_time: float
    status: ProjectionStatus
    dynamics: LinearDynamics
    distances: Optional[np.ndarray] = None  # ||x_t - x_t^a|| for t = 0..H_a

    @property
    def gap(self) -> Optional[float]:
        if self.objective is None or self.bound is None:
            return None
        return self.objective - self.bound


# --- model construction ---

def _check_dt(expected: float, found: float):
    if abs(expected - found) > DT_TOL * max(1.0, expected):
        raise DtMismatch(expected, found)


def _big_m(frames_rows, lo: np.ndarray, hi: np.ndarray,
           cfg: ProjectionConfig) -> List[List[np.ndarray]]:
    """Per-row big-M: the worst row violation over the corners of the box [lo, hi]."""
    if cfg.big_m_mode == "fixed":
        return [[np.full(len(h), cfg.big_m) for _, h in polys] for polys in frames_rows]
    corners = np.array(list(itertools.product(*zip(lo, hi))))
    big_m = []
    for polys in frames_rows:
        per_frame = []
        for G, h in polys:
            slack = np.max(corners @ G.T - h, axis=0)
            per_frame.append(np.maximum(BIG_M_MARGIN * slack, BIG_M_FLOOR))
        big_m.append(per_frame)
    return big_m


def build_model(nset: NaturalisticSet, dyn: LinearDynamics, auto_traj: Trajectory,
                x_init=None, cfg: Optional[ProjectionConfig] = None) -> MiqpModel:
    cfg = cfg or ProjectionConfig()
    _check_dt(nset.dt, auto_traj.dt)
    _check_dt(nset.dt, dyn.dt)
    hull_map = nset.hull_map
    if auto_traj.state_dim != dyn.state_dim or dyn.state_dim != hull_map.state_dim:
        raise DimensionMismatch(
            f"state dimensions differ: trajectory {auto_traj.state_dim}, "
            f"dynamics {dyn.state_dim}, hull map {hull_map.state_dim}")

    factor = cfg.downsample
    nset_d = nset.downsample(factor)
    auto_d = auto_traj.downsample(factor)
    dyn_d = dyn.lifted(factor)

    x_init = auto_d.states[0] if x_init is None else np.asarray(x_init, dtype=float)
    if x_init.shape != (dyn_d.state_dim,):
        raise DimensionMismatch(f"x_init must have shape ({dyn_d.state_dim},), got {x_init.shape}")

    H_a = auto_d.horizon
    enforced = list(range(cfg.frame_skip, min(nset_d.horizon, H_a) + 1, cfg.frame_skip))
    if not enforced:
        raise EmptyEnforcementSet(
            f"no frame in {{{cfg.frame_skip}, {2 * cfg.frame_skip}, ...}} lies within "
            f"min(H={nset_d.horizon}, H_a={H_a})")

    n = dyn_d.state_dim
    Phi, Gamma = prediction_matrices(dyn_d, H_a)
    offset = Gamma @ x_init
    residual = offset - auto_d.states[1:].reshape(-1)
    P = Phi.T @ Phi + cfg.gamma * np.eye(Phi.shape[1])
    P = (P + P.T)  # 2 (Phi'Phi + gamma I), exactly symmetric
    q = 2.0 * Phi.T @ residual
    r = float(residual @ residual + np.sum((x_init - auto_d.states[0]) ** 2))

    C = hull_map.selector
    frames_rows = []
    for t in enforced:
        frames_rows.append([(p.G, p.h) for p in nset_d.subsets[t].polytopes])

    lo, hi = bounding_box(p for t in enforced for p in nset_d.subsets[t].polytopes)
    ys = hull_map.apply(auto_d.states)
    big_m = _big_m(frames_rows, np.minimum(lo, ys.min(axis=0)), np.maximum(hi, ys.max(axis=0)),
                   cfg)

    frames = []
    for t, polys, S in zip(enforced, frames_rows, big_m):
        Phi_t = C @ Phi[(t - 1) * n:t * n]
        y_off = C @ offset[(t - 1) * n:t * n]
        frames.append(FrameBlock(
            t=t,
            A=tuple(G @ Phi_t for G, _ in polys),
            b=tuple(h - G @ y_off for G, h in polys),
            S=tuple(S),
        ))
    logger.debug("MIQP model: H_a=%d, %d enforced frames, %d controls, %d binaries",
                 H_a, len(frames), Phi.shape[1],
                 sum(f.k for f in frames if f.k > 1))
    return MiqpModel(P=P, q=q, r=r, frames=tuple(frames), dynamics=dyn_d, x_init=x_init,
                     auto_traj=auto_d, nset=nset_d, hull_map=hull_map, config=cfg)


# --- node problems ---

@dataclass(frozen=True)
class _Node:
    # Per enforced frame: chosen polytope, or None while the frame is still free
    choice: Tuple[Optional[int], ...]
    excluded: Tuple[FrozenSet[int], ...]


@dataclass
class _NodeResult:
    node: _Node
    bound: float
    feasible: bool
    x: Optional[np.ndarray] = None
    layout: List[Tuple[int, int]] = field(default_factory=list)
    optimal: bool = True


def _settle(model: MiqpModel, choice: List[Optional[int]],
            excluded: List[FrozenSet[int]]) -> Optional[_Node]:
    """Fix frames left with a single option; None when a frame has none."""
    for i, frame in enumerate(model.frames):
        if choice[i] is not None:
            continue
        options = [j for j in range(frame.k) if j not in excluded[i]]
        if not options:
            return None
        if len(options) == 1:
            choice[i] = options[0]
    return _Node(choice=tuple(choice), excluded=tuple(excluded))


def _root(model: MiqpModel) -> _Node:
    return _settle(model, [None] * len(model.frames), [frozenset()] * len(model.frames))


def _track(kind: str, sol: QpSolution, started: float, run_id: Optional[str], nodes: int = 0):
    solve_tracker.track_solve(SolveRecord(
        kind=kind, status=sol.status.value,
        objective=sol.objective if sol.status != QpStatus.INFEASIBLE else None,
        iterations=sol.iterations, nodes=nodes,
        duration_ms=(time.perf_counter() - started) * 1000.0), run_id=run_id)


def _fixed_qp(model: MiqpModel, assignment: Sequence[int]) -> QuadraticProgram:
    rows = [model.frames[i].A[j] for i, j in enumerate(assignment)]
    rhs = [model.frames[i].b[j] for i, j in enumerate(assignment)]
    return QuadraticProgram(P=model.P, q=model.q, A_in=np.vstack(rows),
                            b_in=np.concatenate(rhs), r=model.r)


def _solve_assignment(model: MiqpModel, assignment: Sequence[int], kind: str,
                      run_id: Optional[str]) -> QpSolution:
    if len(assignment) != len(model.frames):
        raise DimensionMismatch(
            f"assignment has {len(assignment)} entries for {len(model.frames)} enforced frames")
    for i, j in enumerate(assignment):
        if not 0 <= j < model.frames[i].k:
            raise DimensionMismatch(
                f"frame {model.frames[i].t} has {model.frames[i].k} polytopes, got index {j}")
    started = time.perf_counter()
    sol = solve_qp(_fixed_qp(model, assignment))
    _track(kind, sol, started, run_id, nodes=1 if kind == "leaf" else 0)
    return sol


def solve_fixed(model: MiqpModel, assignment: Sequence[int]
                ) -> Tuple[float, Optional[ControlSequence]]:
    """QP for one tube selection; (inf, None) when the tube is unreachable."""
    sol = _solve_assignment(model, assignment, "fixed", current_run_id.get())
    if sol.status == QpStatus.INFEASIBLE:
        return float("inf"), None
    controls = sol.x.reshape(model.horizon, model.dynamics.control_dim)
    return sol.objective, ControlSequence(controls=controls)


def _relaxation_qp(model: MiqpModel, node: _Node, binary_mode: Optional[str] = None
                   ) -> Tuple[QuadraticProgram, List[Tuple[int, int]]]:
    binary_mode = binary_mode or model.config.binary_mode
    N = model.n_controls
    layout = [(i, j) for i, frame in enumerate(model.frames) if node.choice[i] is None
              for j in range(frame.k) if j not in node.excluded[i]]
    n_s = len(layout)
    col = {key: N + c for c, key in enumerate(layout)}

    rows, rhs = [], []
    for i, frame in enumerate(model.frames):
        j = node.choice[i]
        if j is not None:
            rows.append(np.hstack([frame.A[j], np.zeros((len(frame.b[j]), n_s))]))
            rhs.append(frame.b[j])
    eq_rows, eq_rhs = [], []
    for i, frame in enumerate(model.frames):
        if node.choice[i] is not None:
            continue
        flags = np.zeros(N + n_s)
        for j in range(frame.k):
            if j in node.excluded[i]:
                continue
            block = np.zeros((len(frame.b[j]), N + n_s))
            block[:, :N] = frame.A[j]
            block[:, col[(i, j)]] = frame.S[j]
            rows.append(block)
            rhs.append(frame.b[j] + frame.S[j])
            flags[col[(i, j)]] = 1.0
        if binary_mode == "exactly_one":
            eq_rows.append(flags)
            eq_rhs.append(1.0)
        else:
            rows.append(-flags[None, :])
            rhs.append(np.array([-1.0]))
    if n_s:
        # 0 <= s <= 1
        eye = np.eye(N + n_s)[N:]
        rows.extend([-eye, eye])
        rhs.extend([np.zeros(n_s), np.ones(n_s)])

    P = np.zeros((N + n_s, N + n_s))
    P[:N, :N] = model.P
    P[N:, N:] = 2.0 * BINARY_REG * np.eye(n_s)
    q = np.concatenate([model.q, np.zeros(n_s)])
    qp = QuadraticProgram(
        P=P, q=q,
        A_eq=np.vstack(eq_rows) if eq_rows else None,
        b_eq=np.array(eq_rhs) if eq_rhs else None,
        A_in=np.vstack(rows), b_in=np.concatenate(rhs), r=model.r)
    return qp, layout


def _relax(model: MiqpModel, node: _Node, parent_bound: float, run_id: Optional[str],
           binary_mode: Optional[str] = None) -> _NodeResult:
    qp, layout = _relaxation_qp(model, node, binary_mode)
    started = time.perf_counter()
    sol = solve_qp(qp)
    _track("relaxation", sol, started, run_id, nodes=1)
    if sol.status == QpStatus.INFEASIBLE:
        return _NodeResult(node=node, bound=float("inf"), feasible=False)
    # The flag curvature adds at most BINARY_REG per flag to the true relaxed optimum
    bound = sol.objective - BINARY_REG * len(layout)
    if sol.status != QpStatus.OPTIMAL:
        logger.warning("Node relaxation stopped early (%s); keeping the parent bound",
                       sol.message)
        bound = parent_bound
    return _NodeResult(node=node, bound=max(bound, parent_bound), feasible=True,
                       x=sol.x, layout=layout, optimal=sol.optimal)


def _flags(model: MiqpModel, res: _NodeResult) -> Dict[int, Dict[int, float]]:
    N = model.n_controls
    flags: Dict[int, Dict[int, float]] = {}
    for c, (i, j) in enumerate(res.layout):
        flags.setdefault(i, {})[j] = float(res.x[N + c])
    return flags


def _integral_assignment(model: MiqpModel, res: _NodeResult) -> Optional[List[int]]:
    flags = _flags(model, res)
    assignment = []
    for i in range(len(model.frames)):
        if res.node.choice[i] is not None:
            assignment.append(res.node.choice[i])
            continue
        values = flags[i]
        if any(INTEGRALITY_TOL < v < 1.0 - INTEGRALITY_TOL for v in values.values()):
            return None
        active = sorted(j for j, v in values.items() if v >= 1.0 - INTEGRALITY_TOL)
        if not active:
            return None
        assignment.append(active[0])
    return assignment


def _branch(model: MiqpModel, res: _NodeResult) -> List[_Node]:
    """Earliest fractional frame, most fractional flag; (choose j, exclude j)."""
    flags = _flags(model, res)
    for i in sorted(flags):
        values = flags[i]
        js = sorted(values)
        frac = np.array([abs(values[j] - 0.5) for j in js])
        if np.all(frac >= 0.5 - INTEGRALITY_TOL):
            continue
        return _split(model, res.node, i, js[int(np.argmin(frac))])
    return []


def _split(model: MiqpModel, node: _Node, i: int, j: int) -> List[_Node]:
    choose = list(node.choice)
    choose[i] = j
    excluded = list(node.excluded)
    excluded[i] = node.excluded[i] | {j}
    children = [_settle(model, choose, list(node.excluded)),
                _settle(model, list(node.choice), excluded)]
    return [c for c in children if c is not None]


def _branch_on_assignment(model: MiqpModel, node: _Node,
                          assignment: Sequence[int]) -> List[_Node]:
    """Split an integral node on its first free frame, at the polytope it selected."""
    for i, chosen in enumerate(node.choice):
        if chosen is None:
            return _split(model, node, i, assignment[i])
    return []


def _may_precede(model: MiqpModel, node: _Node, target: Sequence[int]) -> bool:
    """Whether some assignment under `node` is lexicographically smaller than `target`."""
    for i, frame in enumerate(model.frames):
        if node.choice[i] is not None:
            options = [node.choice[i]]
        else:
            options = [j for j in range(frame.k) if j not in node.excluded[i]]
        if min(options) < target[i]:
            return True
        if target[i] not in options:
            return False
    return False


def _nearest_assignment(model: MiqpModel) -> List[int]:
    ys = model.hull_map.apply(model.auto_traj.states)
    assignment = []
    for frame in model.frames:
        polys = model.nset.subsets[frame.t].polytopes
        dists = [distance(p, ys[frame.t]) for p in polys]
        assignment.append(int(np.argmin(dists)))
    return assignment


# --- branch-and-bound ---

class _Incumbent:
    def __init__(self):
        self.objective = float("inf")
        self.assignment: Optional[Tuple[int, ...]] = None
        self.x: Optional[np.ndarray] = None

    def offer(self, objective: float, assignment: Sequence[int], x: np.ndarray) -> bool:
        assignment = tuple(assignment)
        scale = TIE_TOL * max(1.0, abs(self.objective)) if self.assignment else 0.0
        better = objective < self.objective - scale
        tie = self.assignment is not None and abs(objective - self.objective) <= scale \
            and assignment < self.assignment
        if better or tie:
            self.objective, self.assignment, self.x = objective, assignment, x
            return True
        return False


def _result(model: MiqpModel, inc: _Incumbent, bound: Optional[float], nodes: int,
            started: float, status: ProjectionStatus) -> ProjectionResult:
    trajectory = controls = distances = None
    objective = None
    if inc.assignment is not None:
        U = inc.x[:model.n_controls].reshape(model.horizon, model.dynamics.control_dim)
        controls = ControlSequence(controls=U)
        trajectory = rollout(model.dynamics, model.x_init, controls,
                             traj_id=f"{model.auto_traj.id}-projected" if model.auto_traj.id else "projected")
        distances = np.linalg.norm(trajectory.states - model.auto_traj.states, axis=1)
        objective = inc.objective
        bound = objective if bound is None else min(bound, objective)
    return ProjectionResult(
        trajectory=trajectory, controls=controls,
        active_clusters=tuple(inc.assignment) if inc.assignment else (),
        enforced_frames=model.enforced_frames, objective=objective, bound=bound,
        nodes_explored=nodes, wall_time=time.perf_counter() - started, status=status,
        dynamics=model.dynamics, distances=distances)


def solve(model: MiqpModel, cfg: Optional[ProjectionConfig] = None) -> ProjectionResult:
    cfg = cfg or model.config
    run_id = current_run_id.get()
    started = time.perf_counter()
    inc = _Incumbent()

    root = _root(model)
    res = _relax(model, root, -float("inf"), run_id, cfg.binary_mode)
    nodes = 1
    if not res.feasible:
        result = _result(model, inc, None, nodes, started, ProjectionStatus.INFEASIBLE)
        raise ProjectionInfeasible(
            "root relaxation is infeasible: the naturalistic set has no tube reachable "
            "from x_init", result)
    if not res.layout:
        # Every frame has a single option: the relaxation is the problem itself
        inc.offer(model_objective(model, res.x), list(root.choice), res.x)
        status = ProjectionStatus.OPTIMAL if res.optimal else ProjectionStatus.GAP_REACHED
        return _result(model, inc, inc.objective, nodes, started, status)

    # False once an incumbent comes from a QP that stopped before optimality
    certified = True

    def accept(sol: QpSolution, assignment: Sequence[int]) -> bool:
        nonlocal certified
        if sol.status == QpStatus.INFEASIBLE:
            return False
        if not sol.optimal:
            logger.warning("QP for assignment %s stopped early (%s); the result will not be "
                           "certified optimal", tuple(assignment), sol.message)
            certified = False
        return inc.offer(sol.objective, assignment, sol.x)

    heuristic = _nearest_assignment(model)
    sol = _solve_assignment(model, heuristic, "heuristic", run_id)
    if accept(sol, heuristic):
        logger.debug("Nearest-cluster incumbent %.6g", sol.objective)

    def gap_tol() -> float:
        return cfg.mip_gap * max(1.0, abs(inc.objective))

    def worth_exploring(bound: float, res: _NodeResult) -> bool:
        if inc.assignment is None or bound < inc.objective - gap_tol():
            return True
        # Equal objectives: only a lexicographically smaller selection can still win
        tie = TIE_TOL * max(1.0, abs(inc.objective))
        within = inc.objective - tie - BINARY_REG * len(res.layout) <= bound \
            <= inc.objective + tie
        return within and _may_precede(model, res.node, inc.assignment)

    counter = itertools.count()
    heap = [(res.bound, next(counter), res)]
    min_pruned = float("inf")
    status: Optional[ProjectionStatus] = None
    executor = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        while heap:
            bound, _, res = heap[0]
            if bound > inc.objective + TIE_TOL * max(1.0, abs(inc.objective)):
                break
            if nodes >= cfg.node_limit or time.perf_counter() - started > cfg.time_limit:
                status = ProjectionStatus.LIMIT
                break
            heapq.heappop(heap)
            if not worth_exploring(bound, res):
                min_pruned = min(min_pruned, bound)
                continue

            assignment = _integral_assignment(model, res)
            if assignment is not None:
                sol = _solve_assignment(model, assignment, "leaf", run_id)
                nodes += 1
                if accept(sol, assignment):
                    logger.debug("New incumbent %.10g at node %d", sol.objective, nodes)
                if sol.status == QpStatus.INFEASIBLE or not worth_exploring(sol.objective, res):
                    continue
                children = _branch_on_assignment(model, res.node, assignment)
            else:
                children = _branch(model, res)
            if executor:
                results = list(executor.map(
                    lambda c: _relax(model, c, bound, run_id, cfg.binary_mode), children))
            else:
                results = [_relax(model, c, bound, run_id, cfg.binary_mode) for c in children]
            nodes += len(children)
            for child in results:
                if not child.feasible:
                    continue
                if not worth_exploring(child.bound, child):
                    min_pruned = min(min_pruned, child.bound)
                    continue
                heapq.heappush(heap, (child.bound, next(counter), child))
    finally:
        if executor:
            executor.shutdown()

    open_bound = min((b for b, _, _ in heap), default=float("inf"))
    bound = min(open_bound, min_pruned)
    if inc.assignment is None:
        if status == ProjectionStatus.LIMIT:
            logger.warning("Projection hit its limit after %d nodes without a feasible tube", nodes)
            return _result(model, inc, None if np.isinf(bound) else bound, nodes, started, status)
        result = _result(model, inc, None, nodes, started, ProjectionStatus.INFEASIBLE)
        raise ProjectionInfeasible(
            "every branch is infeasible: no naturalistic tube is reachable from x_init", result)

    if status is None:
        bound = min(bound, inc.objective)
        exact = inc.objective - bound <= TIE_TOL * max(1.0, abs(inc.objective))
        status = ProjectionStatus.OPTIMAL if exact and certified else ProjectionStatus.GAP_REACHED
    result = _result(model, inc, bound, nodes, started, status)
    logger.info("Projection %s: objective %.10g, bound %.10g, %d nodes, %.3fs",
                status.value, result.objective, result.bound, nodes, result.wall_time)
    return result


def model_objective(model: MiqpModel, x: np.ndarray) -> float:
    """Projection objective of a control vector, flags ignored."""
    U = x[:model.n_controls]
    return float(0.5 * U @ model.P @ U + model.q @ U + model.r)


def project(nset: NaturalisticSet, dyn: LinearDynamics, auto_traj: Trajectory,
            cfg: Optional[ProjectionConfig] = None, x_init=None) -> ProjectionResult:
    """Closest dynamically feasible trajectory to `auto_traj` that stays naturalistic."""
    cfg = cfg or ProjectionConfig()
    started = time.perf_counter()
    model = build_model(nset, dyn, auto_traj, x_init=x_init, cfg=cfg)
    try:
        result = solve(model, cfg)
    except ProjectionInfeasible:
        solve_tracker.track_solve(SolveRecord(
            kind="projection", status=ProjectionStatus.INFEASIBLE.value,
            duration_ms=(time.perf_counter() - started) * 1000.0))
        raise
    solve_tracker.track_solve(SolveRecord(
        kind="projection", status=result.status.value, objective=result.objective,
        duration_ms=(time.perf_counter() - started) * 1000.0))
    return result
