"""Independent reference computations shared by the tests."""

import itertools
import math

import numpy as np

from cellfree_e2e.conic import Affine, ConicProgram
from cellfree_e2e.problem import _sinr_cones, fixed_integer_solution


def sinr_cone_margins(inputs, M, rho):
    """Per-UE ``(head^2, ||rows||^2)`` of the SINR cones at ``x = sqrt(rho)``."""
    L, K = inputs.L, inputs.K
    g = np.where(M > 0, M - inputs.tau_S, 0.0)
    prog = ConicProgram()
    idx = prog.add_variables(L * K, "rho_bar", lb=0.0).reshape(L, K)
    live = -np.ones((L, K), dtype=int)
    live[M > 0] = idx[M > 0]

    def signal(l, t):
        if M[l] <= 0:
            return None
        return idx[l, t], math.sqrt(g[l])

    _sinr_cones(prog, inputs, signal, live)
    x = np.sqrt(rho).ravel()
    out = []
    for cone in prog.cones:
        if not cone.label.startswith("sinr["):
            continue
        vals = np.array([e.value(x) for e in cone.exprs])
        out.append((vals[0] ** 2, float(np.sum(vals[1:] ** 2)), vals[0] >= np.linalg.norm(vals[1:])))
    return out


def bisect_root(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _fixed_cost(inputs, M, n):
    c = inputs.coeffs
    return c.c1 * M.sum() + c.c2 * (M > 0).sum() + c.c3 * n.sum() + c.c4 * float(M @ n)


def brute_force(inputs):
    """Exhaustive search over active sets and antenna counts, with a convex power solve each.

    Candidates are visited by increasing fixed (power-independent) cost and
    the search stops once that alone cannot beat the incumbent. Every active
    AP serves every UE; an active AP that serves nobody is dominated by
    switching it off.
    """
    L, K = inputs.L, inputs.K
    cands = []
    for on in itertools.product([False, True], repeat=L):
        on = np.array(on)
        if not on.any():
            continue
        ranges = [range(int(inputs.tau_S[l]) + 1, inputs.M_ac + 1) if on[l] else [0] for l in range(L)]
        for Ms in itertools.product(*ranges):
            M = np.array(Ms, dtype=float)
            n = np.where(on, K, 0).astype(float)
            cands.append((_fixed_cost(inputs, M, n), Ms))
    cands.sort()
    best, best_M = math.inf, None
    for fc, Ms in cands:
        if fc + inputs.coeffs.P_fixed_bar >= best:
            break
        M = np.array(Ms, dtype=float)
        r = np.repeat((M > 0)[:, None], K, axis=1)
        _, sol = fixed_integer_solution(inputs, M, r)
        if sol is not None and sol.total_power < best:
            best, best_M = sol.total_power, sol.M
    return best, best_M
