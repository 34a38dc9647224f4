"""Planar convex polytopes: hull construction, H/V representations, metrics.

Hull states are 2-D (planar position). Polytopes keep both representations:
the counter-clockwise extreme vertices and the halfspace form G x <= h with
unit-norm rows, so a single big-M value has the same units on every row.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import DegenerateInput, DimensionMismatch, NonFinite, TooFewPoints

HULL_DIM = 2
CONTAINMENT_TOL = 1e-9
# Offset used to give collinear or coincident clusters a non-empty interior
EPS_DEGENERATE = 1e-6


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    vertices: np.ndarray  # (n_f, 2), counter-clockwise
    G: np.ndarray  # (n_f, 2), unit-norm outward normals
    h: np.ndarray  # (n_f,)

    @classmethod
    def from_vertices(cls, vertices) -> "ConvexPolytope":
        verts = np.array(vertices, dtype=float).reshape(-1, HULL_DIM)
        if len(verts) >= 3 and _signed_area(verts) < 0:
            verts = verts[::-1].copy()
        G, h = to_halfspaces(verts)
        verts.setflags(write=False)
        G.setflags(write=False)
        h.setflags(write=False)
        return cls(vertices=verts, G=G, h=h)

    @property
    def n_facets(self) -> int:
        return self.G.shape[0]

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    def to_dict(self) -> Dict[str, list]:
        return {
            "vertices": self.vertices.tolist(),
            "G": self.G.tolist(),
            "h": self.h.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, list]) -> "ConvexPolytope":
        """Rebuild from the polytope JSON object, checking it is a valid hull."""
        poly = cls.from_vertices(data["vertices"])
        if len(_monotone_chain(poly.vertices)) != len(poly.vertices):
            raise DegenerateInput(
                "stored vertices are not the extreme points of a convex polygon")
        G = np.asarray(data.get("G", poly.G), dtype=float)
        h = np.asarray(data.get("h", poly.h), dtype=float)
        if G.shape != poly.G.shape or h.shape != poly.h.shape:
            raise DegenerateInput(
                "stored halfspaces do not match the vertex polygon")
        if not (np.allclose(G, poly.G, atol=1e-9) and np.allclose(h, poly.h, atol=1e-9)):
            raise DegenerateInput(
                "stored halfspaces disagree with the vertex polygon")
        return poly


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, HULL_DIM)
    if arr.ndim != 2 or arr.shape[1] != HULL_DIM:
        raise DimensionMismatch(
            f"expected points of dimension {HULL_DIM}, got array of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite("hull input contains non-finite coordinates")
    return arr


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _monotone_chain(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; CCW extreme points, collinear points dropped."""
    pts = np.unique(pts, axis=0)  # lexicographic sort, duplicates removed
    if len(pts) <= 2:
        return pts

    lower: List[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)

    upper: List[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)

    return np.array(lower[:-1] + upper[:-1])


def _inflate(pts: np.ndarray) -> np.ndarray:
    """Surround the extreme points of a flat point set with axis offsets."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    ends = pts[[order[0], order[-1]]]
    offsets = EPS_DEGENERATE * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    padded = (ends[:, None, :] + offsets[None, :, :]).reshape(-1, HULL_DIM)
    return np.vstack([pts, padded])


def convex_hull(points, min_points: int = HULL_DIM + 1) -> ConvexPolytope:
    """Exact convex hull of a planar point set.

    A set whose hull has no interior (all points collinear or coincident) is
    inflated by EPS_DEGENERATE around the ends of its segment so the result is
    always full-dimensional.
    """
    if min_points < HULL_DIM + 1:
        raise ValueError(
            f"min_points must be at least {HULL_DIM + 1}, got {min_points}")
    pts = as_points(points)
    if len(pts) < min_points:
        raise TooFewPoints(len(pts), min_points)

    hull = _monotone_chain(pts)
    if len(hull) < 3 or _signed_area(hull) <= 0.0:
        hull = _monotone_chain(_inflate(pts))
    return ConvexPolytope.from_vertices(hull)


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def to_halfspaces(vertices) -> Tuple[np.ndarray, np.ndarray]:
    """One row per edge: outward unit normal n with n . x <= n . v_i."""
    verts = as_points(vertices)
    if len(verts) < 3:
        raise DegenerateInput(
            f"a polygon needs at least 3 vertices, got {len(verts)}")
    signed = _signed_area(verts)
    if abs(signed) <= 1e-300:
        raise DegenerateInput("vertices are collinear")
    if signed < 0:
        verts = verts[::-1]

    edges = np.roll(verts, -1, axis=0) - verts
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths == 0.0):
        raise DegenerateInput("polygon has repeated consecutive vertices")
    normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
    h = np.einsum("ij,ij->i", normals, verts)
    return normals, h


def contains(p: ConvexPolytope, x, tol: float = 0.0) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (p.dim,):
        raise DimensionMismatch(
            f"point of shape {x.shape} tested against a {p.dim}-D polytope")
    return bool(np.all(p.G @ x <= p.h + tol))


def area(p: ConvexPolytope) -> float:
    """Shoelace area of the vertex polygon."""
    return abs(_signed_area(p.vertices))


def total_area(polytopes: Iterable[ConvexPolytope]) -> float:
    return float(sum(area(p) for p in polytopes))


def distance(p: ConvexPolytope, x) -> float:
    """Euclidean distance from x to the polygon; zero inside."""
    x = np.asarray(x, dtype=float)
    if contains(p, x, CONTAINMENT_TOL):
        return 0.0
    a = p.vertices
    b = np.roll(p.vertices, -1, axis=0)
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", x - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(closest - x, axis=1)))


def point_in_polygon(vertices: Sequence[Sequence[float]], x) -> bool:
    """Even-odd rule; the polygon need not be convex."""
    verts = as_points(vertices)
    px, py = float(x[0]), float(x[1])
    xi, yi = verts[:, 0], verts[:, 1]
    xj, yj = np.roll(xi, 1), np.roll(yi, 1)
    straddles = (yi > py) != (yj > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = (xj - xi) * (py - yi) / (yj - yi) + xi
    crossings = np.count_nonzero(straddles & (px < x_cross))
    return bool(crossings % 2 == 1)


def bounding_box(polytopes: Iterable[ConvexPolytope]) -> Tuple[np.ndarray, np.ndarray]:
    verts = np.vstack([p.vertices for p in polytopes])
    return verts.min(axis=0), verts.max(axis=0)
