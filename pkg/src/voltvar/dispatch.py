"""Inverter reactive-power policies for the feeder.

Three ways to pick the per-node setpoints:

* ``zero_dispatch`` - the do-nothing baseline, every inverter idle.
* ``local_dispatch`` - communication-free rule: each PV node cancels its
  own reactive consumption, clamped to the inverter's reactive limit.
* ``optimal_dispatch`` - minimize total resistive dissipation of the
  linear flow model over all setpoints, subject to the inverter limits
  and the voltage regulation band.  Because real flows do not depend on
  the reactive setpoints in the linear model, the problem reduces to a
  strictly convex QP in the PV coordinates alone; voltage limits enter as
  affine inequalities.  Denominators in the dissipation objective are
  frozen at the substation voltage, which keeps the problem exactly
  quadratic (voltage stays within a few percent of nominal, so the
  distortion is of that order).

A grid-search oracle and a KKT verifier are included so the QP path can
be cross-checked end to end on small instances.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .circuit import Circuit
from .powerflow import (
    POLICY_CUSTOM,
    POLICY_LOCAL,
    POLICY_OPTIMAL,
    POLICY_ZERO,
    Dispatch,
    losses,
    solve_ac,
    solve_lin,
)
from .qp import find_feasible_point, solve_qp

__all__ = [
    "STATUS_OPTIMAL",
    "STATUS_INFEASIBLE",
    "STATUS_MAX_ITER",
    "QP_TOL",
    "GRID_STEPS",
    "InfeasibleError",
    "SavingsUndefinedError",
    "QpProblem",
    "DispatchSolution",
    "KktReport",
    "build_qp",
    "zero_dispatch",
    "local_dispatch",
    "optimal_dispatch",
    "kkt_check",
    "brute_force_oracle",
    "lin_objective",
    "savings",
]

logger = logging.getLogger(__name__)

STATUS_OPTIMAL = "OPTIMAL"
STATUS_INFEASIBLE = "INFEASIBLE"
STATUS_MAX_ITER = "MAX_ITER"

QP_TOL = 1e-8  # KKT residual accepted as optimal (per-unit gradient scale)
GRID_STEPS = 101  # default oracle grid resolution per PV coordinate
FEAS_TOL = 1e-9  # constraint satisfaction required of solutions


class InfeasibleError(RuntimeError):
    """No setpoint within the inverter limits satisfies the voltage band."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class SavingsUndefinedError(RuntimeError):
    """Baseline losses are zero, so percentage savings are undefined."""

    def __init__(self, baseline_losses: float, dispatch_losses: float):
        super().__init__(
            "baseline losses are zero; absolute losses instead: "
            f"baseline={baseline_losses} dispatch={dispatch_losses} (per-unit)"
        )
        self.baseline_losses = baseline_losses
        self.dispatch_losses = dispatch_losses


@dataclass(frozen=True)
class QpProblem:
    """Reduced dispatch QP: variables are the PV-node setpoints only.

    Objective ``const + c.y + 0.5 y.H.y`` equals the linear-model
    dissipation with denominators frozen at the substation voltage.
    Rows of ``G y <= h`` stack the inverter boxes and both sides of the
    voltage band; ``row_labels`` tags each row ``(kind, node)`` with kind
    in {box_lo, box_hi, v_lo, v_hi}.
    """

    pv_positions: np.ndarray  # 0-based positions into the node arrays
    bounds: np.ndarray  # reactive limit per PV coordinate
    H: np.ndarray
    c: np.ndarray
    const: float
    G: np.ndarray
    h: np.ndarray
    row_labels: tuple[tuple[str, int], ...]
    v2_base: np.ndarray  # linear-model squared voltages at zero dispatch
    epsilon: float
    v0_squared: float

    @property
    def dim(self) -> int:
        return len(self.pv_positions)

    def objective(self, y: np.ndarray) -> float:
        y = np.asarray(y, dtype=float)
        return float(self.const + self.c @ y + 0.5 * y @ self.H @ y)

    def reduce(self, dispatch: Dispatch) -> np.ndarray:
        return np.asarray(dispatch.q_g, dtype=float)[self.pv_positions]

    def expand(self, y: np.ndarray, n: int, policy_tag: str) -> Dispatch:
        q_g = np.zeros(n)
        q_g[self.pv_positions] = y
        return Dispatch(q_g=q_g, policy_tag=policy_tag)


@dataclass
class DispatchSolution:
    dispatch: Dispatch
    objective_value: float
    kkt_residual: float
    status: str
    iterations: int = 0
    active_labels: tuple[tuple[str, int], ...] = ()
    certificate_node: int | None = None

    @property
    def active_voltage_count(self) -> int:
        return sum(1 for kind, _ in self.active_labels if kind in ("v_lo", "v_hi"))


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    feasibility: float
    complementarity: float

    @property
    def residual(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


def zero_dispatch(circuit: Circuit) -> Dispatch:
    return Dispatch(q_g=np.zeros(circuit.n), policy_tag=POLICY_ZERO)


def local_dispatch(circuit: Circuit) -> Dispatch:
    """Cancel each PV node's own reactive consumption, within its limit.

    This needs no information beyond the node itself: the setpoint is the
    local reactive demand, clamped to the inverter margin (symmetric
    clamp, so hypothetical negative demands are handled the same way).
    Nodes without PV have zero margin and stay at zero.
    """
    bound = circuit.q_bound
    q_g = np.clip(circuit.q_c, -bound, bound)
    return Dispatch(q_g=q_g, policy_tag=POLICY_LOCAL)


def _suffix_sum(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a[::-1])[::-1]


def build_qp(circuit: Circuit, epsilon: float) -> QpProblem:
    """Assemble the reduced QP for a circuit and voltage half-band."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    n = circuit.n
    r, x = circuit.r, circuit.x
    v0sq = circuit.v0_squared
    pv = np.flatnonzero(circuit.pv_mask)
    m = pv.size
    bounds = circuit.q_bound[pv]

    P = _suffix_sum(circuit.p_c - circuit.p_g)
    Q0 = _suffix_sum(circuit.q_c)

    # setpoint at node position k relieves the reactive flow on links 0..k
    A = (pv[None, :] >= np.arange(n)[:, None]).astype(float)  # (links, m)
    rA = r[:, None] * A
    H = 2.0 * A.T @ rA / v0sq
    c = -2.0 * rA.T @ Q0 / v0sq
    const = float(np.sum(r * (P * P + Q0 * Q0)) / v0sq)

    v2_base = np.empty(n + 1)
    v2_base[0] = v0sq
    v2_base[1:] = v0sq - 2.0 * np.cumsum(r * P + x * Q0)

    # voltage lift at node t per unit of setpoint at position k:
    # twice the reactance accumulated up to the nearer of t and k+1
    x_cum = np.concatenate([[0.0], np.cumsum(x)])
    lift = 2.0 * x_cum[np.minimum(np.arange(1, n + 1)[:, None], pv[None, :] + 1)]  # (n, m)

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    labels: list[tuple[str, int]] = []
    eye = np.eye(m)
    for i in range(m):
        rows.append(eye[i])
        rhs.append(bounds[i])
        labels.append(("box_hi", int(pv[i]) + 1))
    for i in range(m):
        rows.append(-eye[i])
        rhs.append(bounds[i])
        labels.append(("box_lo", int(pv[i]) + 1))
    for t in range(n):
        rows.append(-lift[t])
        rhs.append(v2_base[t + 1] - (1.0 - epsilon))
        labels.append(("v_lo", t + 1))
    for t in range(n):
        rows.append(lift[t])
        rhs.append((1.0 + epsilon) - v2_base[t + 1])
        labels.append(("v_hi", t + 1))

    G = np.vstack(rows) if rows else np.empty((0, m))
    return QpProblem(
        pv_positions=pv,
        bounds=bounds,
        H=H,
        c=c,
        const=const,
        G=G,
        h=np.array(rhs),
        row_labels=tuple(labels),
        v2_base=v2_base,
        epsilon=epsilon,
        v0_squared=v0sq,
    )


def _feasible(problem: QpProblem, y: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(problem.G @ y - problem.h, initial=0.0) <= tol)


def optimal_dispatch(
    circuit: Circuit, epsilon: float = 0.05, qp_tol: float = QP_TOL
) -> DispatchSolution:
    """Globally optimal setpoints for the linear-model dissipation.

    Solves the reduced QP with an active-set method, then verifies the
    result through the independent KKT checker.  Returns INFEASIBLE with a
    certificate node when no setpoint can hold the voltage band, and
    MAX_ITER with the best iterate if the active-set loop is cut short.
    """
    problem = build_qp(circuit, epsilon)
    n = circuit.n
    m = problem.dim

    if m == 0:
        dispatch = problem.expand(np.empty(0), n, POLICY_OPTIMAL)
        return DispatchSolution(
            dispatch=dispatch,
            objective_value=problem.const,
            kkt_residual=0.0,
            status=STATUS_OPTIMAL,
        )

    # fix coordinates with no reactive headroom at zero and solve the rest
    free = problem.bounds > 0.0
    y0, active0 = _starting_point(circuit, problem)
    if y0 is None:
        cand, violation = find_feasible_point(
            problem.G, problem.h, np.zeros(m), soft=_voltage_rows(problem)
        )
        if violation > FEAS_TOL:
            worst = _worst_voltage_row(problem, cand)
            logger.info("voltage band infeasible at node %d (violation %.3e)", worst, violation)
            dispatch = problem.expand(cand, n, POLICY_OPTIMAL)
            return DispatchSolution(
                dispatch=dispatch,
                objective_value=problem.objective(cand),
                kkt_residual=float("nan"),
                status=STATUS_INFEASIBLE,
                certificate_node=worst,
            )
        y0, active0 = cand, ()

    y, iterations, solver_ok, active_rows = _solve_reduced(problem, free, y0, active0)
    dispatch = problem.expand(y, n, POLICY_OPTIMAL)
    report = kkt_check(problem, dispatch)
    active_labels = tuple(problem.row_labels[i] for i in active_rows)
    status = STATUS_OPTIMAL
    if not solver_ok or report.residual > max(qp_tol, FEAS_TOL):
        status = STATUS_MAX_ITER
    logger.debug(
        "dispatch QP: %d vars, %d iterations, %d active voltage rows, kkt %.2e",
        m,
        iterations,
        sum(1 for kind, _ in active_labels if kind.startswith("v_")),
        report.residual,
    )
    return DispatchSolution(
        dispatch=dispatch,
        objective_value=problem.objective(y),
        kkt_residual=report.residual,
        status=status,
        iterations=iterations,
        active_labels=active_labels,
    )


def _voltage_rows(problem: QpProblem) -> np.ndarray:
    return np.array(
        [i for i, (kind, _) in enumerate(problem.row_labels) if kind in ("v_lo", "v_hi")],
        dtype=int,
    )


def _worst_voltage_row(problem: QpProblem, y: np.ndarray) -> int:
    slack = problem.G @ y - problem.h
    rows = _voltage_rows(problem)
    worst = rows[int(np.argmax(slack[rows]))]
    return problem.row_labels[worst][1]


def _starting_point(circuit: Circuit, problem: QpProblem):
    """Cheap feasible starts: clamped local policy, idle, full injection.

    The returned working-set hint holds the box_hi rows (global row index
    equals the coordinate index) where the start sits exactly on its bound.
    """
    pv = problem.pv_positions
    local = np.clip(circuit.q_c[pv], -problem.bounds, problem.bounds)
    if _feasible(problem, local):
        m = problem.dim
        active = tuple(
            i for i in range(m) if problem.bounds[i] > 0.0 and local[i] == problem.bounds[i]
        )
        return local, active
    for cand in (np.zeros(problem.dim), problem.bounds.copy()):
        if _feasible(problem, cand):
            return cand, ()
    return None, ()


def _solve_reduced(problem: QpProblem, free: np.ndarray, y0: np.ndarray, active0):
    """Run the active-set solver on the free coordinates only.

    Zero-headroom coordinates are pinned at zero, which keeps the Hessian
    positive definite and the box nondegenerate.
    """
    m = problem.dim
    if not free.any():
        return np.zeros(m), 0, True, ()
    fi = np.flatnonzero(free)
    col_keep = np.zeros(m, dtype=bool)
    col_keep[fi] = True

    # keep rows that involve free coordinates; fixed coordinates contribute
    # nothing to box rows and zero to voltage rows
    row_keep = []
    for idx, (kind, _) in enumerate(problem.row_labels):
        g = problem.G[idx]
        if kind.startswith("box"):
            if np.any(g[col_keep] != 0.0):
                row_keep.append(idx)
        else:
            row_keep.append(idx)
    row_keep = np.array(row_keep, dtype=int)

    Gf = problem.G[np.ix_(row_keep, fi)]
    hf = problem.h[row_keep]
    Hf = problem.H[np.ix_(fi, fi)]
    cf = problem.c[fi]  # fixed coordinates sit at zero, no cross term

    row_pos = {int(r): k for k, r in enumerate(row_keep)}
    active_f = tuple(row_pos[int(a)] for a in active0 if int(a) in row_pos)

    result = solve_qp(Hf, cf, Gf, hf, y0[fi], active0=active_f)
    y = np.zeros(m)
    y[fi] = result.x
    active_global = tuple(int(row_keep[a]) for a in result.active)
    return y, result.iterations, result.status == "optimal", active_global


def kkt_check(problem: QpProblem, candidate: Dispatch, act_tol: float = 1e-9) -> KktReport:
    """First-order optimality report for a candidate setpoint.

    Multipliers for the rows active at the candidate are fit by nonnegative
    least squares, so the stationarity figure is the smallest projected
    gradient any valid multiplier assignment leaves behind.  Independent of
    the active-set path: only the problem data enter.
    """
    y = problem.reduce(candidate)
    if problem.dim == 0:
        return KktReport(0.0, 0.0, 0.0)
    grad = problem.H @ y + problem.c
    slack = problem.h - problem.G @ y
    feasibility = float(max(0.0, -np.min(slack, initial=0.0)))

    active = np.flatnonzero(slack <= act_tol)
    if active.size == 0:
        return KktReport(float(np.max(np.abs(grad))), feasibility, 0.0)

    A = problem.G[active].T  # (m, k)
    lam, _ = nnls(A, -grad)
    residual_vec = grad + A @ lam
    stationarity = float(np.max(np.abs(residual_vec)))
    complementarity = float(np.max(np.abs(lam * slack[active]), initial=0.0))
    return KktReport(stationarity, feasibility, complementarity)


def brute_force_oracle(
    circuit: Circuit, epsilon: float = 0.05, grid_steps: int = GRID_STEPS
) -> Dispatch:
    """Exhaustive grid search over the PV setpoints; small instances only.

    Enumerates ``grid_steps`` points per PV coordinate, evaluates the exact
    linear-model objective from suffix-summed flows (no reuse of the QP
    matrices), discards grid points that break the voltage band, and
    returns the best survivor.  Cost grows as ``grid_steps**pv_count``, so
    at most four PV nodes are accepted.
    """
    pv = np.flatnonzero(circuit.pv_mask)
    m = pv.size
    if m > 4:
        raise ValueError(f"grid oracle limited to 4 PV nodes, circuit has {m}")
    if grid_steps < 2:
        raise ValueError(f"grid_steps must be at least 2, got {grid_steps}")
    n = circuit.n
    if m == 0:
        return Dispatch(q_g=np.zeros(n), policy_tag=POLICY_CUSTOM)

    r, x = circuit.r, circuit.x
    v0sq = circuit.v0_squared
    bounds = circuit.q_bound[pv]
    grids = [np.linspace(-b, b, grid_steps) for b in bounds]

    P = _suffix_sum(circuit.p_c - circuit.p_g)
    p_part = float(np.sum(r * P * P))
    rP_xQ_base = r * P  # real part of the voltage-drop accumulator

    lo = (1.0 - epsilon) * np.ones(n)
    hi = (1.0 + epsilon) * np.ones(n)

    best_obj = np.inf
    best_y: np.ndarray | None = None

    # vectorize the last two coordinates, enumerate the rest
    outer = itertools.product(*grids[:-2])
    mesh = np.meshgrid(*grids[-2:], indexing="ij")
    Y_inner = np.stack([g.ravel() for g in mesh], axis=1)  # (rows, len(inner_grids))

    for head in outer:
        Y = np.empty((Y_inner.shape[0], m))
        if head:
            Y[:, : len(head)] = np.array(head)
        Y[:, m - Y_inner.shape[1]:] = Y_inner

        q_g = np.zeros((Y.shape[0], n))
        q_g[:, pv] = Y
        net_q = circuit.q_c[None, :] - q_g
        Q = np.flip(np.cumsum(np.flip(net_q, axis=1), axis=1), axis=1)
        v2 = v0sq - 2.0 * np.cumsum(rP_xQ_base[None, :] + x[None, :] * Q, axis=1)
        feasible = np.all((v2 >= lo[None, :]) & (v2 <= hi[None, :]), axis=1)
        if not feasible.any():
            continue
        obj = (p_part + (Q * Q) @ r) / v0sq
        obj[~feasible] = np.inf
        k = int(np.argmin(obj))
        if obj[k] < best_obj:
            best_obj = float(obj[k])
            best_y = Y[k].copy()

    if best_y is None:
        raise InfeasibleError("every grid point violates the voltage band")
    q_g = np.zeros(n)
    q_g[pv] = best_y
    return Dispatch(q_g=q_g, policy_tag=POLICY_CUSTOM)


def lin_objective(circuit: Circuit, dispatch: Dispatch) -> float:
    """Linear-model dissipation with denominators frozen at the substation.

    This is the quantity the dispatch QP minimizes; it orders policies the
    same way on any fixed circuit.
    """
    state = solve_lin(circuit, dispatch)
    return float(np.sum(circuit.r * (state.P**2 + state.Q**2)) / circuit.v0_squared)


def savings(
    circuit: Circuit,
    dispatch: Dispatch,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> float:
    """Percent reduction of AC losses against the all-idle baseline.

    Both operating points are solved with the exact AC sweep so the QP's
    linearization cannot flatter the result.
    """
    base = losses(circuit, solve_ac(circuit, zero_dispatch(circuit), tol=tol, max_iter=max_iter))
    got = losses(circuit, solve_ac(circuit, dispatch, tol=tol, max_iter=max_iter))
    if base == 0.0:
        raise SavingsUndefinedError(baseline_losses=base, dispatch_losses=got)
    return 100.0 * (base - got) / base
