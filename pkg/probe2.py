"""Second probe: ratio stability, voltage profile, contraction, infeasible path."""
import numpy as np

from voltvar import (
    ScenarioParams, generate_circuit, solve_ac, solve_lin, zero_dispatch,
    local_dispatch, optimal_dispatch, losses, savings, voltage_band_ok,
)
from voltvar.dispatch import build_qp

# criterion 2 pooled ratio across base seeds
for base in (0, 7, 42, 1000):
    opt_all, loc_all = [], []
    for r in (0.9, 1.0):
        for k in range(20):
            ck = generate_circuit(ScenarioParams(penetration_r=r, s_value=1.1, seed=base + k))
            sol = optimal_dispatch(ck)
            opt_all.append(savings(ck, sol.dispatch))
            loc_all.append(savings(ck, local_dispatch(ck)))
    print(f"base seed {base}: pooled ratio {np.mean(loc_all)/np.mean(opt_all):.4f} "
          f"(opt {np.mean(opt_all):.2f} loc {np.mean(loc_all):.2f})")

# criterion 5: voltage profile r=0.9 s=2.0
c = generate_circuit(ScenarioParams(penetration_r=0.9, s_value=2.0, seed=7))
base_state = solve_ac(c, zero_dispatch(c))
sol = optimal_dispatch(c)
opt_state = solve_ac(c, sol.dispatch)
v0 = np.sqrt(c.v0_squared)
print("min V/V0 baseline %.5f optimal %.5f" % (base_state.v.min()/v0, opt_state.v.min()/v0))
print("band baseline:", voltage_band_ok(base_state, 0.05), )
print("band optimal:", voltage_band_ok(opt_state, 0.05))
print("active voltage rows:", sol.active_voltage_count, "status", sol.status)

# contraction: residual history
hist = []
c0 = generate_circuit(ScenarioParams(penetration_r=0.0, seed=11))
solve_ac(c0, zero_dispatch(c0), callback=lambda it, res: hist.append(res.worst))
print("residual history:", ["%.3e" % h for h in hist],
      "monotone:", all(hist[i+1] < hist[i] for i in range(len(hist)-1)))

# how often is the local start voltage-feasible at defaults? worst v2 at baseline
worst = 1.0
for k in range(40):
    ck = generate_circuit(ScenarioParams(penetration_r=0.5, s_value=1.1, seed=k))
    st = solve_lin(ck, zero_dispatch(ck))
    worst = min(worst, st.v_squared.min())
print("worst baseline lin v2 over 40 seeds at r=0.5:", worst)

# infeasible construction: tiny epsilon so band cannot hold
cbad = generate_circuit(ScenarioParams(penetration_r=0.3, s_value=1.1, seed=3))
solbad = optimal_dispatch(cbad, epsilon=0.001)
print("tiny-band status:", solbad.status, "certificate node:", solbad.certificate_node)

# QP where voltage constraint is ACTIVE: heavy loads, generous s
cheavy = generate_circuit(ScenarioParams(p_c_range=(0.0, 5.0), penetration_r=0.8, s_value=2.5, seed=1))
stb = solve_lin(cheavy, zero_dispatch(cheavy))
print("heavy baseline min v2:", stb.v_squared.min())
solh = optimal_dispatch(cheavy, epsilon=0.05)
print("heavy status:", solh.status, "active v rows:", solh.active_voltage_count,
      "kkt %.2e" % solh.kkt_residual)
sth = solve_lin(cheavy, solh.dispatch)
print("heavy optimal min v2:", sth.v_squared.min())
