"""Seeded Monte Carlo sweeps over inverter capacity and PV penetration.

Each sweep cell (one ``s`` value, one penetration ``r``) draws
``n_realizations`` circuits with seeds ``base_seed + k``, so the same
realization index always maps to the same circuit draws; varying ``s``
only widens the inverter boxes of an otherwise identical realization.
Every policy is evaluated against the exact AC losses of that circuit's
all-idle baseline.  Individual failures (voltage band infeasible, solver
breakdown) are recorded on their row and never abort the sweep.
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__ as _package_version
from .circuit import Circuit, ScenarioParams, generate_circuit
from .dispatch import (
    STATUS_OPTIMAL,
    InfeasibleError,
    lin_objective,
    local_dispatch,
    optimal_dispatch,
    zero_dispatch,
)
from .powerflow import (
    POLICY_LOCAL,
    POLICY_OPTIMAL,
    POLICY_ZERO,
    ConvergenceError,
    Dispatch,
    FlowState,
    VoltageCollapseError,
    losses,
    solve_ac,
)

__all__ = [
    "ALL_POLICIES",
    "SweepSpec",
    "SweepRow",
    "CellStats",
    "SweepResult",
    "ProfileCase",
    "run_sweep",
    "summarize",
    "voltage_profile_case",
    "write_manifest",
]

ALL_POLICIES = (POLICY_ZERO, POLICY_LOCAL, POLICY_OPTIMAL)

RAW_HEADER = "s,r,policy,seed,feasible,savings_pct,losses_kw,lin_objective,error"
SUMMARY_HEADER = (
    "s,r,policy,realizations,feasible_count,infeasible_count,"
    "mean_savings_pct,min_savings_pct,max_savings_pct,mean_losses_kw,local_over_optimal"
)
PROFILE_HEADER = "node,v_over_v0_baseline,v_over_v0_optimal,q_g_kvar"


@dataclass(frozen=True)
class SweepSpec:
    base_params: ScenarioParams
    s_values: tuple[float, ...]
    r_values: tuple[float, ...]
    n_realizations: int = 20
    policies: tuple[str, ...] = ALL_POLICIES
    ac_tol: float = 1e-10
    qp_tol: float = 1e-8

    def validate(self) -> None:
        if not self.s_values:
            raise ValueError("s_values must be nonempty")
        if not self.r_values:
            raise ValueError("r_values must be nonempty")
        if self.n_realizations < 1:
            raise ValueError(f"n_realizations must be >= 1, got {self.n_realizations}")
        unknown = set(self.policies) - set(ALL_POLICIES)
        if not self.policies or unknown:
            raise ValueError(f"policies must be a nonempty subset of {ALL_POLICIES}")
        if self.ac_tol <= 0 or self.qp_tol <= 0:
            raise ValueError("tolerances must be positive")
        self.base_params.validate()


@dataclass(frozen=True)
class SweepRow:
    s: float
    r: float
    policy: str
    seed: int
    feasible: bool
    savings_pct: float
    losses_kw: float
    lin_objective: float
    error: str = ""

    def as_csv(self) -> str:
        return ",".join(
            [
                repr(float(self.s)),
                repr(float(self.r)),
                self.policy,
                str(self.seed),
                str(int(self.feasible)),
                repr(float(self.savings_pct)),
                repr(float(self.losses_kw)),
                repr(float(self.lin_objective)),
                self.error.replace(",", ";"),
            ]
        )


@dataclass(frozen=True)
class CellStats:
    s: float
    r: float
    policy: str
    realizations: int
    feasible_count: int
    infeasible_count: int
    mean_savings_pct: float
    min_savings_pct: float
    max_savings_pct: float
    mean_losses_kw: float


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow] = field(default_factory=list)

    def sorted_rows(self) -> list[SweepRow]:
        return sorted(self.rows, key=lambda row: (row.s, row.r, row.policy, row.seed))

    def to_csv(self) -> str:
        lines = [RAW_HEADER] + [row.as_csv() for row in self.sorted_rows()]
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def cells(self) -> list[CellStats]:
        grouped: dict[tuple[float, float, str], list[SweepRow]] = {}
        for row in self.sorted_rows():
            grouped.setdefault((row.s, row.r, row.policy), []).append(row)
        out = []
        for (s, r, policy), rows in sorted(grouped.items()):
            ok = [row for row in rows if row.feasible]
            sav = np.array([row.savings_pct for row in ok])
            loss = np.array([row.losses_kw for row in ok])
            out.append(
                CellStats(
                    s=s,
                    r=r,
                    policy=policy,
                    realizations=len(rows),
                    feasible_count=len(ok),
                    infeasible_count=len(rows) - len(ok),
                    mean_savings_pct=float(sav.mean()) if ok else float("nan"),
                    min_savings_pct=float(sav.min()) if ok else float("nan"),
                    max_savings_pct=float(sav.max()) if ok else float("nan"),
                    mean_losses_kw=float(loss.mean()) if ok else float("nan"),
                )
            )
        return out


def _evaluate_policy(
    circuit: Circuit, policy: str, epsilon: float, qp_tol: float
) -> tuple[Dispatch | None, bool, str]:
    """Build the dispatch for one policy; returns (dispatch, feasible, error)."""
    if policy == POLICY_ZERO:
        return zero_dispatch(circuit), True, ""
    if policy == POLICY_LOCAL:
        return local_dispatch(circuit), True, ""
    solution = optimal_dispatch(circuit, epsilon=epsilon, qp_tol=qp_tol)
    if solution.status != STATUS_OPTIMAL:
        detail = f"status={solution.status}"
        if solution.certificate_node is not None:
            detail += f" node={solution.certificate_node}"
        return None, False, detail
    return solution.dispatch, True, ""


def _eval_cell(spec: SweepSpec, s: float, r: float) -> list[SweepRow]:
    rows: list[SweepRow] = []
    for k in range(spec.n_realizations):
        seed = spec.base_params.seed + k
        params = replace(spec.base_params, s_value=s, penetration_r=r, seed=seed)
        circuit = generate_circuit(params)
        kw = circuit.s_base / 1e3
        try:
            base_state = solve_ac(circuit, zero_dispatch(circuit), tol=spec.ac_tol)
        except (ConvergenceError, VoltageCollapseError) as exc:
            for policy in spec.policies:
                rows.append(
                    SweepRow(s, r, policy, seed, False, float("nan"), float("nan"),
                             float("nan"), f"baseline: {exc}")
                )
            continue
        base_losses = losses(circuit, base_state)
        for policy in spec.policies:
            dispatch, feasible, error = _evaluate_policy(
                circuit, policy, params.epsilon, spec.qp_tol
            )
            if not feasible:
                rows.append(
                    SweepRow(s, r, policy, seed, False, float("nan"), float("nan"),
                             float("nan"), error)
                )
                continue
            try:
                state = solve_ac(circuit, dispatch, tol=spec.ac_tol)
            except (ConvergenceError, VoltageCollapseError) as exc:
                rows.append(
                    SweepRow(s, r, policy, seed, False, float("nan"), float("nan"),
                             float("nan"), str(exc))
                )
                continue
            loss_pu = losses(circuit, state)
            if base_losses == 0.0:
                rows.append(
                    SweepRow(s, r, policy, seed, False, float("nan"), loss_pu * kw,
                             lin_objective(circuit, dispatch), "zero baseline losses")
                )
                continue
            rows.append(
                SweepRow(
                    s=s,
                    r=r,
                    policy=policy,
                    seed=seed,
                    feasible=True,
                    savings_pct=100.0 * (base_losses - loss_pu) / base_losses,
                    losses_kw=loss_pu * kw,
                    lin_objective=lin_objective(circuit, dispatch),
                )
            )
    return rows


def _eval_cell_packed(args: tuple[SweepSpec, float, float]) -> list[SweepRow]:
    return _eval_cell(*args)


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Evaluate every (s, r, policy, realization) combination.

    Deterministic for a given spec, including across ``workers`` settings:
    cells are independent and rows are sorted before any output.
    """
    spec.validate()
    cells = [(spec, s, r) for s in spec.s_values for r in spec.r_values]
    result = SweepResult(spec=spec)
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for rows in pool.map(_eval_cell_packed, cells):
                result.rows.extend(rows)
    else:
        for args in cells:
            result.rows.extend(_eval_cell_packed(args))
    return result


def summarize(result: SweepResult) -> str:
    """Per-cell statistics as CSV with a stable column order.

    The LOCAL rows carry the ratio of mean LOCAL to mean OPTIMAL savings
    in the same (s, r) cell when both are present, the column used for
    local-vs-global comparisons.
    """
    cells = result.cells()
    optimal_mean = {
        (c.s, c.r): c.mean_savings_pct for c in cells if c.policy == POLICY_OPTIMAL
    }
    lines = [SUMMARY_HEADER]
    for cell in cells:
        ratio = float("nan")
        if cell.policy == POLICY_LOCAL:
            opt = optimal_mean.get((cell.s, cell.r))
            if opt is not None and opt != 0.0 and np.isfinite(opt):
                ratio = cell.mean_savings_pct / opt
        lines.append(
            ",".join(
                [
                    repr(float(cell.s)),
                    repr(float(cell.r)),
                    cell.policy,
                    str(cell.realizations),
                    str(cell.feasible_count),
                    str(cell.infeasible_count),
                    repr(float(cell.mean_savings_pct)),
                    repr(float(cell.min_savings_pct)),
                    repr(float(cell.max_savings_pct)),
                    repr(float(cell.mean_losses_kw)),
                    repr(float(ratio)),
                ]
            )
        )
    return "\n".join(lines) + "\n"


@dataclass
class ProfileCase:
    """Baseline and optimally dispatched operating points of one realization."""

    circuit: Circuit
    baseline: FlowState
    optimal: FlowState
    dispatch: Dispatch
    status: str

    def to_csv(self) -> str:
        v0 = float(np.sqrt(self.circuit.v0_squared))
        kvar = self.circuit.s_base / 1e3
        lines = [PROFILE_HEADER]
        n = self.circuit.n
        for node in range(n + 1):
            q_g = float(self.dispatch.q_g[node - 1]) * kvar if node > 0 else 0.0
            lines.append(
                ",".join(
                    [
                        str(node),
                        repr(float(self.baseline.v[node]) / v0),
                        repr(float(self.optimal.v[node]) / v0),
                        repr(q_g),
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def voltage_profile_case(params: ScenarioParams) -> ProfileCase:
    """Solve one realization with and without optimal reactive dispatch.

    Solver and infeasibility errors propagate: a profile of a broken case
    is not a dataset worth writing.
    """
    params.validate()
    circuit = generate_circuit(params)
    baseline = solve_ac(circuit, zero_dispatch(circuit))
    solution = optimal_dispatch(circuit, epsilon=params.epsilon)
    if solution.status != STATUS_OPTIMAL:
        node = solution.certificate_node
        raise InfeasibleError(
            f"optimal dispatch unavailable (status {solution.status}"
            + (f", certificate node {node}" if node is not None else "")
            + ")",
            node=node,
        )
    optimal_state = solve_ac(circuit, solution.dispatch)
    return ProfileCase(
        circuit=circuit,
        baseline=baseline,
        optimal=optimal_state,
        dispatch=solution.dispatch,
        status=solution.status,
    )


def write_manifest(spec: SweepSpec, path: str | Path, command: str | None = None) -> None:
    """Record what produced a dataset: spec, package version, timestamp."""
    doc = {
        "package": "voltvar",
        "version": _package_version,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "command": command,
        "spec": {
            "base_params": vars(spec.base_params) | {},
            "s_values": list(spec.s_values),
            "r_values": list(spec.r_values),
            "n_realizations": spec.n_realizations,
            "policies": list(spec.policies),
            "ac_tol": spec.ac_tol,
            "qp_tol": spec.qp_tol,
        },
    }
    # dataclass vars() keeps tuples; JSON needs lists
    doc["spec"]["base_params"] = {
        key: list(val) if isinstance(val, tuple) else val
        for key, val in doc["spec"]["base_params"].items()
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
