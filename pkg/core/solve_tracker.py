import uuid
from contextvars import ContextVar
from dataclasses import dataclass, field
from datetime import datetime, timezone
from threading import Lock
from typing import Dict, List, Optional

# Run the current thread/task reports solves to; set by tracked_command
current_run_id: ContextVar[Optional[str]] = ContextVar("current_run_id", default=None)


def _now() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class SolveRecord:
    """One optimization call: a node QP, a leaf QP or a whole projection."""
    kind: str  # 'relaxation', 'leaf', 'heuristic', 'projection'
    status: str
    objective: Optional[float] = None
    iterations: int = 0
    nodes: int = 0
    duration_ms: float = 0.0
    timestamp: datetime = field(default_factory=_now)


@dataclass
class RunSummary:
    """Everything one command did, for the end-of-run report."""
    run_id: str
    command: str
    start_time: datetime = field(default_factory=_now)
    end_time: Optional[datetime] = None
    solves: List[SolveRecord] = field(default_factory=list)
    total_qp_iterations: int = 0
    total_nodes: int = 0
    success: bool = True
    error_message: Optional[str] = None

    def add_solve(self, record: SolveRecord):
        self.solves.append(record)
        self.total_qp_iterations += record.iterations
        self.total_nodes += record.nodes

    def count(self, kind: str) -> int:
        return sum(1 for s in self.solves if s.kind == kind)

    def finish(self, success: bool = True, error_message: Optional[str] = None):
        self.end_time = _now()
        if not success:
            self.success = False
            self.error_message = error_message

    @property
    def duration_ms(self) -> float:
        end = self.end_time or _now()
        return (end - self.start_time).total_seconds() * 1000.0


class SolveTracker:
    """
    Collects solver activity per command run. Safe to call from the worker
    threads of set generation and branch-and-bound.
    """

    MAX_COMPLETED = 1000

    def __init__(self):
        self.active_runs: Dict[str, RunSummary] = {}
        self.completed_runs: List[RunSummary] = []
        self._lock = Lock()

    def start_run(self, command: str) -> str:
        run_id = str(uuid.uuid4())
        with self._lock:
            self.active_runs[run_id] = RunSummary(run_id=run_id, command=command)
        return run_id

    def track_solve(self, record: SolveRecord, run_id: Optional[str] = None) -> None:
        """Attach to `run_id`, or the context's run; dropped when neither is active."""
        run_id = run_id or current_run_id.get()
        if run_id is None:
            return
        with self._lock:
            if run_id in self.active_runs:
                self.active_runs[run_id].add_solve(record)

    def finish_run(self, run_id: str, success: bool = True,
                   error_message: Optional[str] = None) -> Optional[RunSummary]:
        with self._lock:
            if run_id not in self.active_runs:
                return None
            summary = self.active_runs.pop(run_id)
            summary.finish(success, error_message)
            self.completed_runs.append(summary)
            if len(self.completed_runs) > self.MAX_COMPLETED:
                self.completed_runs = self.completed_runs[-self.MAX_COMPLETED:]
            return summary

    def get_run_summary(self, run_id: str) -> Optional[RunSummary]:
        with self._lock:
            if run_id in self.active_runs:
                return self.active_runs[run_id]
            for run in self.completed_runs:
                if run.run_id == run_id:
                    return run
        return None

    def totals(self) -> Dict:
        """Aggregate over completed runs, broken down by solve kind."""
        with self._lock:
            runs = list(self.completed_runs)
        breakdown: Dict[str, Dict] = {}
        for run in runs:
            for solve in run.solves:
                entry = breakdown.setdefault(solve.kind, {"solves": 0, "iterations": 0,
                                                          "duration_ms": 0.0})
                entry["solves"] += 1
                entry["iterations"] += solve.iterations
                entry["duration_ms"] += solve.duration_ms
        return {
            "runs": len(runs),
            "failed_runs": sum(1 for r in runs if not r.success),
            "nodes": sum(r.total_nodes for r in runs),
            "qp_iterations": sum(r.total_qp_iterations for r in runs),
            "kind_breakdown": breakdown,
        }


# Global solve tracker instance
solve_tracker = SolveTracker()
