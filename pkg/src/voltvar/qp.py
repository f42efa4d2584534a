"""Dense primal active-set solver for small strictly convex QPs.

Solves ``min 0.5*x'Hx + c'x  s.t.  Gx <= h`` with H symmetric positive
definite, starting from a feasible point.  The working set of boundary
rows is grown/shrunk one row at a time; every iterate solves the
equality-constrained subproblem through its KKT system, so the returned
point is exact up to linear-algebra precision (no tolerance tuning on the
way to the optimum).

Problems here have at most a few hundred variables and constraint rows,
so dense factorizations per iteration are the simple and fast choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["QpResult", "solve_qp", "find_feasible_point"]

# Row-normalized constraints make these thresholds scale-free.
_RATIO_EPS = 1e-12  # minimum directional derivative for a row to block
_STEP_EPS = 1e-12  # step considered zero relative to iterate size
_DUAL_EPS = 1e-9  # multiplier considered nonnegative


@dataclass
class QpResult:
    x: np.ndarray
    multipliers: np.ndarray  # one per constraint row, zero off the active set
    active: tuple[int, ...]
    iterations: int
    status: str  # "optimal" or "max_iter"


def _kkt_solve(H: np.ndarray, c: np.ndarray, A: np.ndarray, b: np.ndarray):
    """Minimize the quadratic subject to A x = b; returns (x, multipliers)."""
    n = H.shape[0]
    w = A.shape[0]
    if w == 0:
        return np.linalg.solve(H, -c), np.empty(0)
    K = np.zeros((n + w, n + w))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-c, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_qp(
    H: np.ndarray,
    c: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    x0: np.ndarray,
    active0: tuple[int, ...] = (),
    max_iter: int | None = None,
) -> QpResult:
    """Active-set minimization from a feasible ``x0``.

    ``active0`` may carry a warm-start working set; its rows must hold with
    equality at ``x0``.  Returned multipliers refer to the rows of ``G`` as
    given (internal row normalization is undone).
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    if n == 0:
        return QpResult(x=x, multipliers=np.zeros(len(h)), active=(), iterations=0, status="optimal")

    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    m_rows = G.shape[0]
    if m_rows:
        scale = np.maximum(np.abs(G).max(axis=1), 1e-300)
        Gs = G / scale[:, None]
        hs = h / scale
    else:
        scale = np.empty(0)
        Gs, hs = G, h

    if max_iter is None:
        max_iter = 50 * (n + m_rows) + 100

    work = list(active0)
    in_work = np.zeros(m_rows, dtype=bool)
    in_work[list(active0)] = True

    status = "max_iter"
    it = 0
    mu = np.empty(0)
    for it in range(1, max_iter + 1):
        A = Gs[work] if work else np.empty((0, n))
        x_eq, mu = _kkt_solve(H, c, A, hs[work])
        p = x_eq - x
        if np.max(np.abs(p), initial=0.0) <= _STEP_EPS * (1.0 + np.max(np.abs(x), initial=0.0)):
            if mu.size == 0 or mu.min() >= -_DUAL_EPS:
                x = x_eq
                status = "optimal"
                break
            drop = work[int(np.argmin(mu))]
            work.remove(drop)
            in_work[drop] = False
            continue
        # ratio test against rows outside the working set
        alpha = 1.0
        blocking = -1
        if m_rows:
            Gp = Gs @ p
            outside = ~in_work & (Gp > _RATIO_EPS)
            if outside.any():
                slack = hs[outside] - Gs[outside] @ x
                ratios = np.maximum(slack, 0.0) / Gp[outside]
                k = int(np.argmin(ratios))
                if ratios[k] < alpha:
                    alpha = float(ratios[k])
                    blocking = int(np.flatnonzero(outside)[k])
        x = x + alpha * p
        if blocking >= 0:
            work.append(blocking)
            in_work[blocking] = True

    lam = np.zeros(m_rows)
    if work:
        lam[work] = mu / scale[work]
    return QpResult(x=x, multipliers=lam, active=tuple(work), iterations=it, status=status)


def find_feasible_point(
    G: np.ndarray,
    h: np.ndarray,
    x0: np.ndarray,
    soft: np.ndarray,
    reg: float = 1e-10,
    margin: float = 1e-7,
) -> tuple[np.ndarray, float]:
    """Seek ``x`` with ``Gx <= h`` when ``x0`` violates only the ``soft`` rows.

    Minimizes the squared slack needed on the soft rows (hard rows stay
    hard), which is itself a strictly convex QP solved by
    :func:`solve_qp`.  The soft rows are tightened by ``margin`` so the
    tiny regularization bias on ``x`` cannot leave the answer marginally
    outside; feasible sets thinner than ``margin`` are reported as empty.
    Returns the candidate point and its worst violation of the original
    rows; a violation meaningfully above zero certifies an empty set.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    soft = np.asarray(soft, dtype=int)
    n = x0.size
    k = soft.size
    hard = np.setdiff1d(np.arange(G.shape[0]), soft)
    h_soft = h[soft] - margin

    H_aug = np.zeros((n + k, n + k))
    H_aug[:n, :n] = reg * np.eye(n)
    H_aug[n:, n:] = np.eye(k)
    c_aug = np.zeros(n + k)

    # rows: hard on x alone, soft with one slack each, then s >= 0
    G_aug = np.zeros((len(hard) + k + k, n + k))
    h_aug = np.empty(len(hard) + k + k)
    G_aug[: len(hard), :n] = G[hard]
    h_aug[: len(hard)] = h[hard]
    G_aug[len(hard) : len(hard) + k, :n] = G[soft]
    G_aug[len(hard) : len(hard) + k, n:] = -np.eye(k)
    h_aug[len(hard) : len(hard) + k] = h_soft
    G_aug[len(hard) + k :, n:] = -np.eye(k)
    h_aug[len(hard) + k :] = 0.0

    s0 = np.maximum(G[soft] @ x0 - h_soft, 0.0)
    z0 = np.concatenate([x0, s0])
    result = solve_qp(H_aug, c_aug, G_aug, h_aug, z0)
    x = result.x[:n]
    violation = float(np.max(G @ x - h, initial=0.0))
    return x, violation
