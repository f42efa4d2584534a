"""Branch power flow on the radial feeder: exact AC sweep and linear model.

Both solvers work on the branch-flow variables of the chain: ``P[j]`` and
``Q[j]`` are the real/reactive power entering link ``j`` (from node ``j``
toward node ``j+1``, with ``P[0]``/``Q[0]`` the substation injection) and
``v_squared[j]`` is the squared voltage at node ``j``.  Flow past the last
node is zero, which closes the recursion.

The exact AC branch equations are, for each link ``j``::

    P[j+1] = P[j] - r[j] * (P[j]^2 + Q[j]^2) / v_squared[j] - p[j+1]
    Q[j+1] = Q[j] - x[j] * (P[j]^2 + Q[j]^2) / v_squared[j] - q[j+1]
    v_squared[j+1] = v_squared[j] - 2 * (r[j]*P[j] + x[j]*Q[j])
                     + (r[j]^2 + x[j]^2) * (P[j]^2 + Q[j]^2) / v_squared[j]

where ``p``/``q`` are the net nodal extractions (consumption minus
generation).  The linear model drops the quadratic loss terms, which makes
the flows plain suffix sums of the net loads and the voltage drop affine in
the flows.  On lightly loaded feeders the dropped terms are orders of
magnitude below the linear ones, so the two models nearly agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .circuit import Circuit

__all__ = [
    "MODEL_AC",
    "MODEL_LIN",
    "POLICY_ZERO",
    "POLICY_LOCAL",
    "POLICY_OPTIMAL",
    "POLICY_CUSTOM",
    "ConvergenceError",
    "VoltageCollapseError",
    "Dispatch",
    "FlowState",
    "Residuals",
    "VoltageBandReport",
    "net_loads",
    "solve_lin",
    "solve_ac",
    "residuals",
    "losses",
    "voltage_band_ok",
    "write_flow_csv",
]

MODEL_AC = "AC"
MODEL_LIN = "LIN"

POLICY_ZERO = "ZERO"
POLICY_LOCAL = "LOCAL"
POLICY_OPTIMAL = "OPTIMAL"
POLICY_CUSTOM = "CUSTOM"

# Default iteration budget for the AC sweep.  The loss terms are tiny
# relative to the flows, so the fixed point contracts fast; 50 sweeps is a
# generous ceiling.
AC_TOL = 1e-10
AC_MAX_ITER = 50

BOUND_SLACK = 1e-9  # tolerated overshoot of the inverter reactive limit


class ConvergenceError(RuntimeError):
    """AC sweep did not meet the residual tolerance within the iteration cap."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class VoltageCollapseError(RuntimeError):
    """AC sweep produced a non-positive squared voltage; no operating point."""


@dataclass
class Dispatch:
    """Per-node inverter reactive setpoints (per-unit, positive = generation).

    ``q_g[i]`` belongs to load node ``i+1``; entries at nodes without PV
    must be zero and every entry must respect the node's reactive limit.
    """

    q_g: np.ndarray
    policy_tag: str = POLICY_CUSTOM

    def __post_init__(self):
        self.q_g = np.asarray(self.q_g, dtype=float)

    def check(self, circuit: Circuit, slack: float = BOUND_SLACK) -> None:
        """Raise ValueError if the setpoints violate the inverter limits."""
        if self.q_g.shape != (circuit.n,):
            raise ValueError(
                f"dispatch has {self.q_g.shape} entries for a {circuit.n}-node circuit"
            )
        bound = circuit.q_bound
        over = np.abs(self.q_g) - bound
        worst = int(np.argmax(over))
        if over[worst] > slack:
            raise ValueError(
                f"node {worst + 1}: setpoint {self.q_g[worst]} exceeds reactive "
                f"limit {bound[worst]}"
            )


@dataclass
class FlowState:
    """One solved operating point.

    ``P``/``Q`` have one entry per link and ``v_squared`` one entry per node
    including the substation, so ``len(v_squared) == len(P) + 1``.
    """

    P: np.ndarray
    Q: np.ndarray
    v_squared: np.ndarray
    model_tag: str
    iterations: int = 0

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.v_squared = np.asarray(self.v_squared, dtype=float)

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(self.v_squared)


@dataclass(frozen=True)
class Residuals:
    """Max absolute defect of each branch equation, evaluated on a state."""

    real: float
    reactive: float
    voltage: float

    @property
    def worst(self) -> float:
        return max(self.real, self.reactive, self.voltage)


@dataclass(frozen=True)
class VoltageBandReport:
    ok: bool
    worst_node: int
    worst_v_squared: float


def net_loads(circuit: Circuit, dispatch: Dispatch) -> tuple[np.ndarray, np.ndarray]:
    """Net nodal extractions (consumption minus generation), node order 1..n."""
    return circuit.p_c - circuit.p_g, circuit.q_c - dispatch.q_g


def _suffix_sum(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a[::-1])[::-1]


def solve_lin(circuit: Circuit, dispatch: Dispatch) -> FlowState:
    """Linear branch flow in closed form (no iteration).

    Flows are suffix sums of the net loads; squared voltage drops by
    ``2 * (r*P + x*Q)`` across every link.
    """
    dispatch.check(circuit)
    net_p, net_q = net_loads(circuit, dispatch)
    P = _suffix_sum(net_p)
    Q = _suffix_sum(net_q)
    v2 = np.empty(circuit.n + 1)
    v2[0] = circuit.v0_squared
    v2[1:] = circuit.v0_squared - 2.0 * np.cumsum(circuit.r * P + circuit.x * Q)
    return FlowState(P=P, Q=Q, v_squared=v2, model_tag=MODEL_LIN)


def solve_ac(
    circuit: Circuit,
    dispatch: Dispatch,
    tol: float = AC_TOL,
    max_iter: int = AC_MAX_ITER,
    callback: Callable[[int, Residuals], None] | None = None,
) -> FlowState:
    """Solve the exact AC branch equations by backward/forward sweep.

    Each pass accumulates downstream power including the loss terms
    evaluated at the previous iterate (backward), then propagates squared
    voltages from the substation with the full quadratic update (forward).
    Iterates until all three equation residuals fall below ``tol``.

    Raises :class:`ConvergenceError` after ``max_iter`` sweeps and
    :class:`VoltageCollapseError` if a squared voltage goes non-positive.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    dispatch.check(circuit)
    net_p, net_q = net_loads(circuit, dispatch)
    r, x = circuit.r, circuit.x
    z2 = r * r + x * x
    n = circuit.n

    # first backward pass with zero loss terms == linear flows
    P = _suffix_sum(net_p)
    Q = _suffix_sum(net_q)
    v2 = np.full(n + 1, circuit.v0_squared)

    last = Residuals(np.inf, np.inf, np.inf)
    # divergence shows up as overflow before the guards below catch it
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            flow2 = (P * P + Q * Q) / v2[:-1]
            P = _suffix_sum(net_p + r * flow2)
            Q = _suffix_sum(net_q + x * flow2)
            if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
                raise VoltageCollapseError(
                    "flows diverged during the sweep: loading beyond the solvable "
                    "limit, no feasible operating point"
                )
            v2_new = np.empty(n + 1)
            v2_new[0] = circuit.v0_squared
            for j in range(n):
                sq = (P[j] * P[j] + Q[j] * Q[j]) / v2_new[j]
                v2_new[j + 1] = v2_new[j] - 2.0 * (r[j] * P[j] + x[j] * Q[j]) + z2[j] * sq
                if not v2_new[j + 1] > 0.0:  # catches zero, negative and nan
                    raise VoltageCollapseError(
                        f"squared voltage non-positive at node {j + 1}: no feasible "
                        "operating point for this loading"
                    )
            v2 = v2_new
            state = FlowState(P=P, Q=Q, v_squared=v2, model_tag=MODEL_AC, iterations=it)
            last = residuals(circuit, dispatch, state)
            if callback is not None:
                callback(it, last)
            if last.worst <= tol:
                return state
    raise ConvergenceError(
        f"AC sweep stalled at residual {last.worst:.3e} after {max_iter} iterations "
        f"(tol {tol:.1e})",
        residual=last.worst,
    )


def residuals(circuit: Circuit, dispatch: Dispatch, state: FlowState) -> Residuals:
    """Defect of each branch equation under the state's own voltages.

    Flow past the last node is taken as zero.  A converged AC state has all
    three residuals at solver tolerance; a linear state shows defects on
    the order of the dropped loss terms.
    """
    net_p, net_q = net_loads(circuit, dispatch)
    r, x = circuit.r, circuit.x
    P, Q, v2 = state.P, state.Q, state.v_squared
    n = circuit.n
    if P.shape != (n,) or Q.shape != (n,) or v2.shape != (n + 1,):
        raise ValueError("state arrays not sized for this circuit")

    flow2 = (P * P + Q * Q) / v2[:-1]
    P_next = np.append(P[1:], 0.0)
    Q_next = np.append(Q[1:], 0.0)
    res_p = P_next - (P - r * flow2 - net_p)
    res_q = Q_next - (Q - x * flow2 - net_q)
    res_v = v2[1:] - (v2[:-1] - 2.0 * (r * P + x * Q) + (r * r + x * x) * flow2)
    return Residuals(
        real=float(np.max(np.abs(res_p))),
        reactive=float(np.max(np.abs(res_q))),
        voltage=float(np.max(np.abs(res_v))),
    )


def losses(circuit: Circuit, state: FlowState) -> float:
    """Total resistive dissipation, per-unit: sum of r*(P^2+Q^2)/v^2 over links.

    Evaluated with the state's own voltages, so it applies to both AC and
    linear states.
    """
    flow2 = (state.P**2 + state.Q**2) / state.v_squared[:-1]
    return float(np.sum(circuit.r * flow2))


def voltage_band_ok(state: FlowState, epsilon: float) -> VoltageBandReport:
    """Check ``1 - epsilon <= v_squared <= 1 + epsilon`` at every node.

    The report always carries the node whose squared voltage deviates most
    from 1.0; it is the offender whenever ``ok`` is false.
    """
    dev = np.abs(state.v_squared - 1.0)
    worst = int(np.argmax(dev))
    ok = bool(dev[worst] <= epsilon)
    return VoltageBandReport(ok=ok, worst_node=worst, worst_v_squared=float(state.v_squared[worst]))


def write_flow_csv(state: FlowState, path: str | Path) -> None:
    """Export a state as CSV: node, v_squared, v, P_out, Q_out.

    ``P_out``/``Q_out`` are the flows leaving the node toward the next one;
    the last node has no outgoing link and reports zero.
    """
    lines = ["node,v_squared,v,P_out,Q_out"]
    n = len(state.P)
    for j in range(n + 1):
        p_out = float(state.P[j]) if j < n else 0.0
        q_out = float(state.Q[j]) if j < n else 0.0
        v2 = float(state.v_squared[j])
        lines.append(f"{j},{v2!r},{float(np.sqrt(v2))!r},{p_out!r},{q_out!r}")
    Path(path).write_text("\n".join(lines) + "\n")
