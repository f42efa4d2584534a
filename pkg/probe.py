"""Scratch probe of key magnitudes before freezing tests. Not part of the package."""
import time

import numpy as np

from voltvar import (
    ScenarioParams,
    generate_circuit,
    solve_ac,
    solve_lin,
    zero_dispatch,
    local_dispatch,
    optimal_dispatch,
    brute_force_oracle,
    lin_objective,
    losses,
    residuals,
    savings,
    kkt_check,
    build_qp,
)

# --- generation sanity
p = ScenarioParams(penetration_r=0.5, seed=7)
c = generate_circuit(p)
pf = c.p_c / np.sqrt(c.p_c**2 + c.q_c**2)
print("pv count:", c.pv_mask.sum(), " pf range:", pf.min(), pf.max())
print("total p_c kW:", c.p_c.sum() * c.s_base / 1e3, " total q_c:", c.q_c.sum() * c.s_base / 1e3)

# --- AC vs LIN at r=0 (criterion 4 magnitudes)
rel_diffs, med_ratios, iters = [], [], []
for k in range(20):
    c0 = generate_circuit(ScenarioParams(penetration_r=0.0, seed=100 + k))
    d0 = zero_dispatch(c0)
    lin = solve_lin(c0, d0)
    ac = solve_ac(c0, d0)
    L_ac, L_lin = losses(c0, ac), losses(c0, lin)
    rel_diffs.append(abs(L_ac - L_lin) / L_ac)
    corr = c0.r * (ac.P**2 + ac.Q**2) / ac.v_squared[:-1]
    ratio = corr / np.abs(ac.P)
    med_ratios.append(np.median(ratio))
    iters.append(ac.iterations)
    if k == 0:
        print("losses pu: ac", L_ac, "lin", L_lin, " v2 end:", ac.v_squared[-1])
        print("residuals of lin state:", residuals(c0, d0, lin))
print("AC iters:", min(iters), max(iters))
print("rel loss diff AC vs LIN: min %.4g mean %.4g max %.4g" % (min(rel_diffs), np.mean(rel_diffs), max(rel_diffs)))
print("median corr/linear ratio: min %.3g max %.3g" % (min(med_ratios), max(med_ratios)))

# --- savings at s=1.1, r in {0.9, 1.0} (criterion 1-2)
t0 = time.time()
for r in (0.9, 1.0):
    sav_opt, sav_loc, its = [], [], []
    for k in range(20):
        ck = generate_circuit(ScenarioParams(penetration_r=r, s_value=1.1, seed=200 + k))
        sol = optimal_dispatch(ck, epsilon=0.05)
        assert sol.status == "OPTIMAL", sol.status
        sav_opt.append(savings(ck, sol.dispatch))
        sav_loc.append(savings(ck, local_dispatch(ck)))
        its.append(sol.iterations)
    print(f"r={r}: mean opt savings {np.mean(sav_opt):.2f}% loc {np.mean(sav_loc):.2f}% "
          f"ratio {np.mean(sav_loc)/np.mean(sav_opt):.3f} qp iters {min(its)}-{max(its)}")
print("elapsed criterion-1 style: %.2f s" % (time.time() - t0))

# --- saturation in s (criterion 3)
t0 = time.time()
means_ac, means_lin = [], []
for s in (1.0, 1.1, 1.5, 2.0):
    vals_ac, vals_lin = [], []
    for k in range(20):
        ck = generate_circuit(ScenarioParams(penetration_r=1.0, s_value=s, seed=300 + k))
        sol = optimal_dispatch(ck, epsilon=0.05)
        vals_ac.append(savings(ck, sol.dispatch))
        base = lin_objective(ck, zero_dispatch(ck))
        vals_lin.append(100 * (base - sol.objective_value) / base)
    means_ac.append(np.mean(vals_ac))
    means_lin.append(np.mean(vals_lin))
print("mean AC savings vs s:", ["%.3f" % v for v in means_ac])
print("mean LIN savings vs s:", ["%.3f" % v for v in means_lin])
print("elapsed criterion-3 style: %.2f s" % (time.time() - t0))

# --- small instance oracle vs QP
rng = np.random.default_rng(5)
from voltvar import Circuit, NodeLoad, LinkImpedance
t0 = time.time()
worst = 0.0
for trial in range(10):
    n = 8
    pvpos = sorted(rng.choice(n, size=3, replace=False))
    nodes = []
    for i in range(n):
        pc = rng.uniform(0.0, 0.04)
        qc = rng.uniform(0.2, 0.3) * pc
        if i in pvpos:
            nodes.append(NodeLoad(p_c=pc, q_c=qc, p_g=0.01, s=0.011, has_pv=True))
        else:
            nodes.append(NodeLoad(p_c=pc, q_c=qc))
    links = tuple(LinkImpedance(r=rng.uniform(1e-4, 2e-4), x=rng.uniform(1e-4, 2e-4), length=250.0) for _ in range(n))
    cc = Circuit(nodes=tuple(nodes), links=links)
    sol = optimal_dispatch(cc, epsilon=0.05)
    oracle = brute_force_oracle(cc, epsilon=0.05, grid_steps=101)
    fo, fq = lin_objective(cc, oracle), lin_objective(cc, sol.dispatch)
    rel = abs(fq - fo) / fo
    worst = max(worst, rel)
    assert sol.kkt_residual <= 1e-8, sol.kkt_residual
print("oracle vs qp worst rel gap: %.3g, elapsed %.2f s" % (worst, time.time() - t0))
