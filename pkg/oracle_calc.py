"""Independent fixed-point oracle for the 2-node AC case; values to freeze."""
import numpy as np

# 2-node circuit, per-unit
r = np.array([0.01, 0.02])
x = np.array([0.01, 0.015])
p = np.array([0.3, 0.2])   # net real extraction at nodes 1, 2
q = np.array([0.1, 0.05])
v0sq = 1.0
n = 2


def forward(P0, Q0):
    """Integrate the exact branch recursion from the head; return trajectory."""
    P, Q, v2 = [P0], [Q0], [v0sq]
    for j in range(n):
        flow2 = (P[j] ** 2 + Q[j] ** 2) / v2[j]
        P.append(P[j] - r[j] * flow2 - p[j])
        Q.append(Q[j] - x[j] * flow2 - q[j])
        v2.append(v2[j] - 2 * (r[j] * P[j] + x[j] * Q[j]) + (r[j] ** 2 + x[j] ** 2) * flow2)
    return np.array(P), np.array(Q), np.array(v2)


# shooting: adjust head flows until the terminal flow vanishes
P0, Q0 = p.sum(), q.sum()
for it in range(200):
    P, Q, v2 = forward(P0, Q0)
    if max(abs(P[-1]), abs(Q[-1])) < 1e-16:
        break
    P0 -= P[-1]
    Q0 -= Q[-1]
print("iterations:", it)
print("P0 =", repr(P0))
print("Q0 =", repr(Q0))
print("P traj:", [repr(v) for v in P])
print("Q traj:", [repr(v) for v in Q])
print("v2 nodes:", [repr(v) for v in v2])
# residual check against the raw equations
flow2 = (P[:-1] ** 2 + Q[:-1] ** 2) / v2[:-1]
res_p = P[1:] - (P[:-1] - r * flow2 - p)
res_q = Q[1:] - (Q[:-1] - x * flow2 - q)
res_v = v2[1:] - (v2[:-1] - 2 * (r * P[:-1] + x * Q[:-1]) + (r**2 + x**2) * flow2)
print("max residuals:", abs(res_p).max(), abs(res_q).max(), abs(res_v).max())
losses = float(np.sum(r * flow2))
print("losses =", repr(losses), " balance check:", repr(P0 - p.sum()))

# 1-node closed-form cross-check via quadratic solve
import sympy as sp

P0s, Q0s = sp.symbols("P0 Q0", positive=True)
rr, xx, pp, qq = sp.Rational(1, 100), sp.Rational(1, 100), sp.Rational(3, 10), sp.Rational(1, 10)
eqs = [P0s - rr * (P0s**2 + Q0s**2) - pp, Q0s - xx * (P0s**2 + Q0s**2) - qq]
sol = sp.nsolve(eqs, (P0s, Q0s), (0.3, 0.1), prec=30)
print("1-node sympy P0,Q0:", sol[0], sol[1])
