"""Reference QP minimizers, kept independent of shepherd.qp.

Two routes of different rigor/cost:

* `enumerate_active_sets` brute-forces candidate active sets by increasing
  size. For a strictly convex QP the KKT conditions are sufficient, so the
  first candidate whose equality-constrained stationary point is primal
  feasible with non-negative multipliers is the unique global minimizer,
  regardless of enumeration order. Exponential in the optimal active-set
  size; only affordable on small problems.

* `active_set_walk` is a textbook primal active-set method (Bland-style
  smallest-index tie breaking, exact KKT termination). Finite and exact for
  strictly convex QPs; needs a feasible start. The test suite cross-checks
  it against the enumeration on small problems, then uses it as the oracle
  for the large sweep.
"""
from itertools import combinations

import numpy as np


def stack_constraints(A, b, lower, upper, d):
    rows = [np.zeros((0, d)) if A is None else np.asarray(A, float).reshape(-1, d)]
    rhs = [np.zeros(0) if b is None else np.asarray(b, float).ravel()]
    eye = np.eye(d)
    if upper is not None:
        finite = np.isfinite(upper)
        rows.append(eye[finite])
        rhs.append(np.asarray(upper, float)[finite])
    if lower is not None:
        finite = np.isfinite(lower)
        rows.append(-eye[finite])
        rhs.append(-np.asarray(lower, float)[finite])
    return np.vstack(rows), np.concatenate(rhs)


def enumerate_active_sets(H, g, A, b, lower, upper, tol=1e-9):
    H = np.asarray(H, float)
    g = np.asarray(g, float).ravel()
    d = g.shape[0]
    G, h = stack_constraints(A, b, lower, upper, d)
    total = G.shape[0]

    def feasible(x):
        return total == 0 or np.max(G @ x - h) <= tol

    x_free = np.linalg.solve(H, -g)
    if feasible(x_free):
        return x_free

    for size in range(1, d + 1):
        for subset in combinations(range(total), size):
            idx = list(subset)
            kkt = np.block([[H, G[idx].T],
                            [G[idx], np.zeros((size, size))]])
            rhs = np.concatenate([-g, h[idx]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:d], sol[d:]
            if np.all(lam >= -tol) and feasible(x):
                return x
    raise RuntimeError("active-set enumeration exhausted without a KKT point")


def active_set_walk(H, g, A, b, lower, upper, x_feasible, tol=1e-9,
                    max_changes=500):
    H = np.asarray(H, float)
    g = np.asarray(g, float).ravel()
    d = g.shape[0]
    G, h = stack_constraints(A, b, lower, upper, d)
    total = G.shape[0]
    x = np.asarray(x_feasible, float).copy()
    if total and np.max(G @ x - h) > 1e-8:
        raise ValueError("starting point is not feasible")

    working: list[int] = sorted(np.nonzero(h - G @ x <= tol)[0].tolist()) if total else []

    for _ in range(max_changes):
        k = len(working)
        Gw = G[working] if k else np.zeros((0, d))
        kkt = np.block([[H, Gw.T], [Gw, np.zeros((k, k))]])
        rhs = np.concatenate([-(H @ x + g), np.zeros(k)])
        sol = np.linalg.solve(kkt, rhs)
        p, lam = sol[:d], sol[d:]

        if np.max(np.abs(p), initial=0.0) <= 1e-11 * (1.0 + np.linalg.norm(x)):
            if k == 0 or np.all(lam >= -tol):
                return x
            drop = min(i for i, l in zip(working, lam) if l < -tol)
            working.remove(drop)
            continue

        alpha = 1.0
        blocking = -1
        if total:
            others = [i for i in range(total) if i not in working]
            for i in others:
                gp = float(G[i] @ p)
                if gp > 1e-13:
                    step = float(h[i] - G[i] @ x) / gp
                    if step < alpha - 1e-13:
                        alpha, blocking = step, i
                    elif abs(step - alpha) <= 1e-13 and blocking >= 0:
                        blocking = min(blocking, i)
        x = x + max(alpha, 0.0) * p
        if blocking >= 0:
            working.append(blocking)
            working.sort()
    raise RuntimeError("active-set walk did not terminate")
