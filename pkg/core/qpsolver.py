"""Dense convex QP solver used at every branch-and-bound node.

    minimize    1/2 x'Px + q'x + r
    subject to  A_eq x  = b_eq
                A_in x <= b_in

Primal active-set method. A feasible starting point comes from an elastic LP
(scipy's HiGHS): minimize the largest constraint violation t. When the optimal
t is above tolerance the problem is infeasible and t is reported as the
infeasibility measure.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from .config import settings
from .errors import DimensionMismatch, NotPSD

logger = logging.getLogger(__name__)

PSD_SHIFT = 1e-10
SYMMETRY_TOL = 1e-10


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    r: float = 0.0

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = len(q)
        if P.shape != (n, n):
            raise DimensionMismatch(f"P has shape {P.shape}, expected ({n}, {n})")
        A_eq, b_eq = _block(self.A_eq, self.b_eq, n, "equality")
        A_in, b_in = _block(self.A_in, self.b_in, n, "inequality")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)
        object.__setattr__(self, "A_in", A_in)
        object.__setattr__(self, "b_in", b_in)

    @property
    def n(self) -> int:
        return len(self.q)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x + self.r)

    def max_violation(self, x: np.ndarray) -> float:
        viol = 0.0
        if len(self.b_eq):
            viol = max(viol, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        if len(self.b_in):
            viol = max(viol, float(np.max(self.A_in @ x - self.b_in)))
        return viol


def _block(A, b, n: int, name: str) -> Tuple[np.ndarray, np.ndarray]:
    if A is None or (np.asarray(A).size == 0 and (b is None or np.asarray(b).size == 0)):
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[1] != n or A.shape[0] != len(b):
        raise DimensionMismatch(
            f"{name} block has A {A.shape} and b {b.shape} for {n} variables")
    return A, b


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    kkt_residual: float
    infeasibility: float = 0.0
    multipliers_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multipliers_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == QpStatus.OPTIMAL


def check_psd(P: np.ndarray) -> None:
    n = P.shape[0]
    if n == 0:
        return
    magnitude = max(1.0, float(np.max(np.abs(P))))
    if not np.allclose(P, P.T, atol=SYMMETRY_TOL * magnitude, rtol=0.0):
        raise NotPSD("P is not symmetric")
    shift = PSD_SHIFT * magnitude
    try:
        np.linalg.cholesky(P + shift * np.eye(n))
    except np.linalg.LinAlgError:
        raise NotPSD("P is not positive semidefinite")


def _phase_one(qp: QuadraticProgram, tol: float) -> Tuple[Optional[np.ndarray], float, str]:
    """Elastic LP: min t s.t. A_in x - t <= b_in, |A_eq x - b_eq| <= t, t >= 0."""
    n = qp.n
    m_in, m_eq = len(qp.b_in), len(qp.b_eq)
    if m_in + m_eq == 0:
        return np.zeros(n), 0.0, ""
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.vstack([
        np.hstack([qp.A_in, -np.ones((m_in, 1))]),
        np.hstack([qp.A_eq, -np.ones((m_eq, 1))]),
        np.hstack([-qp.A_eq, -np.ones((m_eq, 1))]),
    ])
    b_ub = np.concatenate([qp.b_in, qp.b_eq, -qp.b_eq])
    bounds = [(None, None)] * n + [(0, None)]
    res = linprog(
        c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        return None, float("inf"), f"phase one failed: {res.message}"
    x = res.x[:n]
    violation = qp.max_violation(x)
    if violation > tol:
        return None, violation, f"constraints are infeasible (max violation {violation:.3e})"
    return x, violation, ""


def _solve_kkt(P: np.ndarray, g: np.ndarray, Aw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Step p and multipliers lam with P p + Aw' lam = -g, Aw p = 0."""
    n, m = P.shape[0], Aw.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = P
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    rhs = np.concatenate([-g, np.zeros(m)])
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)) or \
                np.max(np.abs(K @ sol - rhs)) > 1e-9 * (1.0 + np.max(np.abs(rhs))):
            raise np.linalg.LinAlgError("inaccurate KKT solve")
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:n], sol[n:]


def kkt_residual(qp: QuadraticProgram, x: np.ndarray, nu: np.ndarray, mu: np.ndarray) -> float:
    """Scaled max of stationarity, primal infeasibility and complementarity."""
    grad = qp.P @ x + qp.q
    dual = qp.A_eq.T @ nu + qp.A_in.T @ mu
    scale = 1.0 + max(np.max(np.abs(grad), initial=0.0), np.max(np.abs(dual), initial=0.0))
    stationarity = np.max(np.abs(grad + dual), initial=0.0) / scale
    primal = max(qp.max_violation(x), 0.0)
    dual_infeas = max(0.0, -float(np.min(mu, initial=0.0)))
    slack = qp.A_in @ x - qp.b_in
    complementarity = np.max(np.abs(mu * slack), initial=0.0) / scale
    return float(max(stationarity, primal, dual_infeas, complementarity))


def solve_qp(qp: QuadraticProgram, tol: Optional[float] = None,
             max_iter: Optional[int] = None, x0: Optional[np.ndarray] = None) -> QpSolution:
    tol = settings.qp_tolerance if tol is None else tol
    max_iter = settings.qp_max_iterations if max_iter is None else max_iter
    check_psd(qp.P)

    n = qp.n
    m_eq, m_in = len(qp.b_eq), len(qp.b_in)
    x: Optional[np.ndarray] = None
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape == (n,) and qp.max_violation(x0) <= tol:
            x = x0.copy()
    if x is None:
        x, infeasibility, message = _phase_one(qp, tol)
        if x is None:
            logger.debug("QP infeasible: %s", message)
            return QpSolution(
                x=np.full(n, np.nan), objective=float("nan"), status=QpStatus.INFEASIBLE,
                iterations=0, kkt_residual=float("inf"), infeasibility=infeasibility,
                message=message)

    working: List[int] = []
    in_working = np.zeros(m_in, dtype=bool)
    lam = np.zeros(m_eq)
    step_tol = 1e-12
    # True once x minimises the objective on the current working set
    at_subspace_min = False
    status = QpStatus.ITER_LIMIT
    iterations = 0
    for iterations in range(1, max_iter + 1):
        g = qp.P @ x + qp.q
        Aw = np.vstack([qp.A_eq, qp.A_in[working]]) if working else qp.A_eq
        p, lam = _solve_kkt(qp.P, g, Aw)

        small_step = np.max(np.abs(p), initial=0.0) <= step_tol * (1.0 + np.max(np.abs(x), initial=0.0))
        if at_subspace_min or small_step:
            mu_w = lam[m_eq:]
            dual_tol = tol * (1.0 + np.max(np.abs(g), initial=0.0))
            if len(mu_w) == 0 or float(np.min(mu_w)) >= -dual_tol:
                status = QpStatus.OPTIMAL
                break
            # Drop the constraint with the most negative multiplier
            dropped = working.pop(int(np.argmin(mu_w)))
            in_working[dropped] = False
            at_subspace_min = False
            continue

        alpha, blocking = 1.0, None
        if m_in:
            Ap = qp.A_in @ p
            slack = np.maximum(qp.b_in - qp.A_in @ x, 0.0)
            candidates = np.flatnonzero((Ap > 1e-14 * (1.0 + np.abs(qp.b_in))) & ~in_working)
            if len(candidates):
                ratios = slack[candidates] / Ap[candidates]
                best = int(np.argmin(ratios))
                if ratios[best] < 1.0:
                    alpha, blocking = float(ratios[best]), int(candidates[best])
        x = x + alpha * p
        if blocking is not None:
            working.append(blocking)
            in_working[blocking] = True
        at_subspace_min = blocking is None

    nu = lam[:m_eq] if len(lam) >= m_eq else np.zeros(m_eq)
    mu = np.zeros(m_in)
    if working and len(lam) == m_eq + len(working):
        mu[working] = np.maximum(lam[m_eq:], 0.0)
    residual = kkt_residual(qp, x, nu, mu)
    if status == QpStatus.OPTIMAL and residual > tol:
        status = QpStatus.ITER_LIMIT
    return QpSolution(
        x=x,
        objective=qp.objective(x),
        status=status,
        iterations=iterations,
        kkt_residual=residual,
        multipliers_eq=nu,
        multipliers_in=mu,
        message="" if status == QpStatus.OPTIMAL else "iteration limit or tolerance not met",
    )
