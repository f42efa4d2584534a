"""Dispatch policies, the reduced QP, KKT verification, and the grid oracle."""

import numpy as np
import pytest

from voltvar import (
    Circuit,
    Dispatch,
    InfeasibleError,
    LinkImpedance,
    NodeLoad,
    SavingsUndefinedError,
    ScenarioParams,
    brute_force_oracle,
    build_qp,
    generate_circuit,
    kkt_check,
    lin_objective,
    local_dispatch,
    optimal_dispatch,
    savings,
    solve_lin,
    voltage_band_ok,
    zero_dispatch,
)
from voltvar.dispatch import STATUS_INFEASIBLE, STATUS_OPTIMAL
from voltvar.qp import solve_qp


def _chain(loads, pv, p_g=0.01, s=0.02, r=1.5e-4, x=1.8e-4):
    """Small hand-built feeder; loads are (p_c, q_c) pairs in per-unit."""
    nodes = []
    for i, (p_c, q_c) in enumerate(loads):
        if i in pv:
            nodes.append(NodeLoad(p_c=p_c, q_c=q_c, p_g=p_g, s=s, has_pv=True))
        else:
            nodes.append(NodeLoad(p_c=p_c, q_c=q_c))
    links = tuple(LinkImpedance(r=r, x=x, length=250.0) for _ in loads)
    return Circuit(nodes=tuple(nodes), links=links)


# -- zero and local policies --------------------------------------------------


def test_zero_dispatch_is_all_zero():
    circuit = generate_circuit(ScenarioParams(seed=1))
    d = zero_dispatch(circuit)
    assert np.all(d.q_g == 0.0)
    assert d.policy_tag == "ZERO"
    d.check(circuit)  # bounds hold trivially


def test_local_dispatch_unclamped_and_clamped():
    # bound is sqrt(0.02^2 - 0.01^2) ~ 0.01732
    circuit = _chain([(0.03, 0.002), (0.06, 0.03)], pv={0, 1})
    d = local_dispatch(circuit)
    assert d.policy_tag == "LOCAL"
    assert d.q_g[0] == pytest.approx(0.002, abs=1e-15)  # full compensation
    assert d.q_g[1] == pytest.approx(np.sqrt(0.02**2 - 0.01**2), abs=1e-12)  # clamped
    assert d.q_g[1] < 0.03


def test_local_dispatch_zero_without_pv():
    circuit = _chain([(0.03, 0.008)], pv=set())
    assert np.all(local_dispatch(circuit).q_g == 0.0)


def test_local_cancels_all_reactive_load_with_generous_capacity():
    params = ScenarioParams(n=40, penetration_r=1.0, s_value=2.5, seed=9)
    circuit = generate_circuit(params)
    state = solve_lin(circuit, local_dispatch(circuit))
    assert np.max(np.abs(state.Q)) < 1e-15


# -- QP construction ---------------------------------------------------------


def test_qp_hessian_positive_definite():
    circuit = generate_circuit(ScenarioParams(n=30, penetration_r=0.5, seed=14))
    problem = build_qp(circuit, epsilon=0.05)
    eigvals = np.linalg.eigvalsh(problem.H)
    assert eigvals.min() > 0.0  # distinct PV positions give a PD Hessian


def test_qp_objective_matches_flow_evaluation():
    circuit = generate_circuit(ScenarioParams(n=25, penetration_r=0.6, s_value=1.5, seed=15))
    problem = build_qp(circuit, epsilon=0.05)
    rng = np.random.default_rng(0)
    for _ in range(5):
        y = rng.uniform(-problem.bounds, problem.bounds)
        d = problem.expand(y, circuit.n, "CUSTOM")
        assert problem.objective(y) == pytest.approx(lin_objective(circuit, d), rel=1e-12)


def test_qp_rejects_nonpositive_epsilon():
    circuit = generate_circuit(ScenarioParams(n=5, seed=1))
    with pytest.raises(ValueError):
        build_qp(circuit, epsilon=0.0)


# -- optimal dispatch ---------------------------------------------------------


def test_degenerate_box_returns_zero():
    # apparent power equal to the PV output leaves no reactive headroom
    params = ScenarioParams(n=20, penetration_r=0.5, s_value=1.0, p_g_value=1.0, seed=4)
    circuit = generate_circuit(params)
    solution = optimal_dispatch(circuit)
    assert solution.status == STATUS_OPTIMAL
    assert np.all(solution.dispatch.q_g == 0.0)
    assert solution.objective_value == pytest.approx(
        lin_objective(circuit, zero_dispatch(circuit)), rel=1e-12
    )


def test_no_pv_circuit_returns_empty_optimal():
    circuit = generate_circuit(ScenarioParams(n=10, penetration_r=0.0, seed=4))
    solution = optimal_dispatch(circuit)
    assert solution.status == STATUS_OPTIMAL
    assert np.all(solution.dispatch.q_g == 0.0)
    assert solution.kkt_residual == 0.0


def test_three_node_instance_matches_oracle():
    circuit = _chain(
        [(0.02, 0.006), (0.015, 0.004), (0.025, 0.007)],
        pv={0, 1, 2},
        p_g=0.01,
        s=0.012,
    )
    solution = optimal_dispatch(circuit, epsilon=0.05)
    assert solution.status == STATUS_OPTIMAL
    oracle = brute_force_oracle(circuit, epsilon=0.05, grid_steps=101)
    f_qp = lin_objective(circuit, solution.dispatch)
    f_oracle = lin_objective(circuit, oracle)
    assert abs(f_qp - f_oracle) <= 1e-3 * f_oracle
    assert f_qp <= f_oracle + 1e-12  # the grid point can never beat the QP


def test_optimal_beats_local_on_prototype():
    circuit = generate_circuit(ScenarioParams(penetration_r=0.8, s_value=1.1, seed=77))
    solution = optimal_dispatch(circuit)
    assert solution.status == STATUS_OPTIMAL
    assert solution.kkt_residual <= 1e-8
    f_opt = lin_objective(circuit, solution.dispatch)
    f_loc = lin_objective(circuit, local_dispatch(circuit))
    f_zero = lin_objective(circuit, zero_dispatch(circuit))
    assert f_opt <= f_loc <= f_zero


def test_optimal_respects_bounds_with_slack():
    circuit = generate_circuit(ScenarioParams(penetration_r=1.0, s_value=1.1, seed=5))
    solution = optimal_dispatch(circuit)
    over = np.abs(solution.dispatch.q_g) - circuit.q_bound
    assert np.max(over) <= 1e-9


def test_two_starting_points_agree():
    circuit = generate_circuit(ScenarioParams(n=40, penetration_r=0.7, s_value=1.3, seed=19))
    problem = build_qp(circuit, epsilon=0.05)
    a = solve_qp(problem.H, problem.c, problem.G, problem.h, np.zeros(problem.dim))
    b = solve_qp(problem.H, problem.c, problem.G, problem.h, problem.bounds.copy())
    assert a.x == pytest.approx(b.x, abs=1e-6)


def test_monotone_in_capacity():
    # wider boxes can only improve the optimal objective
    base = ScenarioParams(n=30, penetration_r=0.8, seed=23)
    prev = np.inf
    for s in (1.05, 1.1, 1.3, 1.8):
        circuit = generate_circuit(base.with_overrides(s_value=s))
        sol = optimal_dispatch(circuit)
        assert sol.status == STATUS_OPTIMAL
        assert sol.objective_value <= prev + 1e-15
        prev = sol.objective_value


def test_voltage_constraint_active_case():
    # pick a band whose floor sits just above the unconstrained optimum's
    # lowest voltage, so the lower band must bind
    circuit = _chain(
        [(0.05, 0.012), (0.04, 0.01), (0.05, 0.013), (0.04, 0.011)],
        pv={1, 3},
        p_g=0.01,
        s=0.03,
        r=2e-3,
        x=2.4e-3,
    )
    wide = optimal_dispatch(circuit, epsilon=0.5)
    assert wide.status == STATUS_OPTIMAL
    v2_min = solve_lin(circuit, wide.dispatch).v_squared.min()
    eps = 1.0 - (v2_min + 2e-4)
    tight = optimal_dispatch(circuit, epsilon=eps)
    assert tight.status == STATUS_OPTIMAL
    assert tight.active_voltage_count >= 1
    assert tight.kkt_residual <= 1e-8
    state = solve_lin(circuit, tight.dispatch)
    assert state.v_squared.min() >= 1.0 - eps - 1e-9
    # constrained optimum cannot beat the unconstrained one
    assert tight.objective_value >= wide.objective_value - 1e-15
    oracle = brute_force_oracle(circuit, epsilon=eps, grid_steps=201)
    f_oracle = lin_objective(circuit, oracle)
    assert tight.objective_value <= f_oracle + 1e-12


def test_infeasible_band_reports_certificate():
    circuit = generate_circuit(ScenarioParams(penetration_r=0.3, s_value=1.1, seed=3))
    solution = optimal_dispatch(circuit, epsilon=0.001)
    assert solution.status == STATUS_INFEASIBLE
    assert solution.certificate_node is not None
    assert 1 <= solution.certificate_node <= circuit.n


# -- KKT checker --------------------------------------------------------------


def test_kkt_accepts_solver_output():
    circuit = generate_circuit(ScenarioParams(penetration_r=0.6, s_value=1.2, seed=31))
    problem = build_qp(circuit, epsilon=0.05)
    solution = optimal_dispatch(circuit)
    report = kkt_check(problem, solution.dispatch)
    assert report.residual <= 1e-8


def test_kkt_flags_interior_suboptimal_point():
    circuit = generate_circuit(ScenarioParams(penetration_r=0.6, s_value=1.2, seed=31))
    problem = build_qp(circuit, epsilon=0.05)
    report = kkt_check(problem, zero_dispatch(circuit))
    assert report.stationarity > 1e-4
    assert report.feasibility == 0.0


def test_kkt_feasibility_equals_violation():
    circuit = _chain([(0.02, 0.005), (0.03, 0.008)], pv={0}, s=0.02)
    problem = build_qp(circuit, epsilon=0.05)
    bound = float(circuit.q_bound[0])
    q_g = np.zeros(circuit.n)
    q_g[0] = bound + 0.004
    report = kkt_check(problem, Dispatch(q_g=q_g))
    assert report.feasibility == pytest.approx(0.004, abs=1e-12)


# -- brute-force oracle --------------------------------------------------------


def test_oracle_zero_load_returns_zero():
    circuit = _chain([(0.0, 0.0), (0.0, 0.0)], pv={0, 1})
    oracle = brute_force_oracle(circuit, epsilon=0.05, grid_steps=3)
    assert np.all(oracle.q_g == 0.0)


def test_oracle_single_pv_matches_local_rule_when_interior():
    # reactive load only at the PV node itself: cancelling it exactly is optimal
    q_c = 0.009
    circuit = _chain([(0.02, 0.0), (0.015, q_c), (0.01, 0.0)], pv={1}, s=0.03)
    oracle = brute_force_oracle(circuit, epsilon=0.05, grid_steps=301)
    bound = circuit.q_bound[1]
    cell = 2 * bound / 300
    assert abs(oracle.q_g[1] - q_c) <= cell  # within one grid cell of q_c
    solution = optimal_dispatch(circuit)
    assert solution.dispatch.q_g[1] == pytest.approx(q_c, abs=1e-10)
    local = local_dispatch(circuit)
    assert solution.dispatch.q_g == pytest.approx(local.q_g, abs=1e-10)


def test_oracle_rejects_large_instances():
    circuit = generate_circuit(ScenarioParams(n=20, penetration_r=0.5, seed=2))
    with pytest.raises(ValueError):
        brute_force_oracle(circuit)


def test_oracle_reports_infeasible_band():
    circuit = _chain([(0.05, 0.015), (0.06, 0.018)], pv={0}, s=0.011)
    with pytest.raises(InfeasibleError):
        brute_force_oracle(circuit, epsilon=1e-6, grid_steps=11)


def test_oracle_within_cell_of_qp_on_three_pv():
    rng = np.random.default_rng(123)
    for _ in range(3):
        loads = [(rng.uniform(0, 0.04), rng.uniform(0, 0.01)) for _ in range(7)]
        pv = set(rng.choice(7, size=3, replace=False).tolist())
        circuit = _chain(loads, pv=pv, p_g=0.01, s=rng.uniform(0.012, 0.03))
        solution = optimal_dispatch(circuit)
        assert solution.status == STATUS_OPTIMAL
        oracle = brute_force_oracle(circuit, epsilon=0.05, grid_steps=101)
        f_qp = lin_objective(circuit, solution.dispatch)
        f_oracle = lin_objective(circuit, oracle)
        assert abs(f_qp - f_oracle) <= 1e-3 * max(f_oracle, 1e-12)


# -- savings -------------------------------------------------------------------


def test_savings_zero_dispatch_is_zero():
    circuit = generate_circuit(ScenarioParams(n=30, seed=8))
    assert savings(circuit, zero_dispatch(circuit)) == 0.0


def test_savings_positive_for_optimal():
    circuit = generate_circuit(ScenarioParams(penetration_r=0.9, s_value=1.1, seed=50))
    solution = optimal_dispatch(circuit)
    assert savings(circuit, solution.dispatch) > 5.0


def test_savings_undefined_for_zero_baseline():
    circuit = _chain([(0.0, 0.0), (0.0, 0.0)], pv=set())
    with pytest.raises(SavingsUndefinedError) as err:
        savings(circuit, zero_dispatch(circuit))
    assert err.value.baseline_losses == 0.0


# -- ordering property ---------------------------------------------------------


def test_objective_ordering_on_random_instances():
    rng = np.random.default_rng(777)
    skipped = 0
    for trial in range(40):
        n = int(rng.integers(5, 35))
        params = ScenarioParams(
            n=n,
            penetration_r=float(rng.uniform(0.2, 1.0)),
            s_value=float(rng.uniform(1.0, 2.0)),
            seed=int(rng.integers(0, 2**31)),
        )
        circuit = generate_circuit(params)
        zero_d, local_d = zero_dispatch(circuit), local_dispatch(circuit)
        in_band = all(
            voltage_band_ok(solve_lin(circuit, d), params.epsilon).ok
            for d in (zero_d, local_d)
        )
        if not in_band:
            skipped += 1
            continue
        solution = optimal_dispatch(circuit, epsilon=params.epsilon)
        assert solution.status == STATUS_OPTIMAL
        f_opt = lin_objective(circuit, solution.dispatch)
        f_loc = lin_objective(circuit, local_d)
        f_zero = lin_objective(circuit, zero_d)
        assert f_opt <= f_loc <= f_zero
    assert skipped < 40
