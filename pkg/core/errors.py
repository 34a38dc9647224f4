"""Typed failures for every pipeline stage.

Each error knows the stage it belongs to and the process exit code the command
line reports for it: 2 usage/config, 3 generation, 4 infeasible, 5 limit.
"""
from typing import Optional


class NatsetError(Exception):
    stage = "pipeline"
    exit_code = 3


class ConfigError(NatsetError):
    stage = "config"
    exit_code = 2


# --- geometry ---

class GeometryError(NatsetError):
    stage = "geometry"


class TooFewPoints(GeometryError):
    def __init__(self, found: int, required: int):
        super().__init__(f"need at least {required} points, got {found}")
        self.found = found
        self.required = required


class NonFinite(GeometryError):
    pass


class DegenerateInput(GeometryError):
    pass


# --- clustering ---

class ClusteringError(NatsetError):
    stage = "clustering"


class ClusteringInfeasible(ClusteringError):
    pass


# --- dynamics ---

class DynamicsError(NatsetError):
    stage = "dynamics"


class NonPositive(DynamicsError):
    pass


class DimensionMismatch(DynamicsError):
    pass


class UnreachableTrajectory(DynamicsError):
    """No control sequence reproduces the trajectory's transitions."""

    def __init__(self, traj_id: str, residual: float):
        super().__init__(
            f"trajectory {traj_id!r} is not reachable under these dynamics "
            f"(residual {residual:.3e})")
        self.traj_id = traj_id
        self.residual = residual


class DtMismatch(NatsetError):
    stage = "timing"

    def __init__(self, expected: float, found: float):
        super().__init__(
            f"sampling period mismatch: expected dt={expected!r}, got dt={found!r}")
        self.expected = expected
        self.found = found


# --- set generation ---

class SetGenerationError(NatsetError):
    stage = "natset"


class EmptyDataset(SetGenerationError):
    pass


class HorizonZero(SetGenerationError):
    pass


# --- QP / projection ---

class QpError(NatsetError):
    stage = "qp"


class NotPSD(QpError):
    pass


class ProjectionError(NatsetError):
    stage = "projection"


class EmptyEnforcementSet(ProjectionError):
    pass


class ProjectionInfeasible(ProjectionError):
    exit_code = 4

    def __init__(self, message: str, result: Optional[object] = None):
        super().__init__(message)
        self.result = result


# --- ingestion ---

class IngestError(NatsetError):
    stage = "ingest"


class ParseError(IngestError):
    def __init__(self, message: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class NonContiguousFrames(IngestError):
    def __init__(self, actor_id: str):
        super().__init__(actor_id)
        self.actor_id = actor_id

    def __str__(self) -> str:
        return f"NonContiguousFrames({self.actor_id!r})"


class BadProportion(IngestError):
    pass
