"""Integer refinement by local search with exact convex evaluation.

Every candidate integer point (antenna counts plus a single-link UE-AP
association) is scored by solving the fixed-integer convex problem, so the
search only ever moves between audited-feasible solutions.
"""

from __future__ import annotations

import math
from dataclasses import replace
from itertools import combinations

import numpy as np

from .access_channel import effective_sinr
from .conic import OPTIMAL
from .fronthaul import group_time_share
from .problem import NetworkSolution, ProblemInputs, fixed_integer_solution, solve_fixed

ANTENNAS = "antennas"
ONOFF = "onoff"


class Evaluator:
    """Caches fronthaul time shares, associations and exact solves for one instance."""

    def __init__(self, inputs: ProblemInputs, rel_quality: float = 0.01):
        self.inputs = inputs
        self.rel_quality = rel_quality
        self.group_of = inputs.group_of
        self.members = [np.array(g) for g in inputs.grouping.groups]
        self._times: dict = {}
        self._assoc: dict = {}
        self._solved: dict = {}
        self.solves = 0

    # -- fronthaul ---------------------------------------------------------
    def group_time(self, i: int, loads: tuple) -> float:
        key = (i, loads)
        t = self._times.get(key)
        if t is None:
            inp = self.inputs
            t = group_time_share(inp.Lambda[self.members[i]], np.array(loads), inp.o72, inp.B_frh, inp.P_f)
            self._times[key] = t
        return t

    def total_time(self, ap_of_ue: np.ndarray) -> float:
        load = np.bincount(ap_of_ue, minlength=self.inputs.L)
        return sum(self.group_time(i, tuple(load[m].tolist())) for i, m in enumerate(self.members))

    # -- association -------------------------------------------------------
    def associate(self, M) -> np.ndarray | None:
        """Single-link association that the fronthaul can carry, or None.

        Every subset of the fronthaul groups holding active APs is tried. In
        each, UEs start on their best AP (largest ``(M - tau_S) gamma``) and
        are moved one at a time while that shortens the total airtime; among
        subsets that fit in the frame the one with the best summed log link
        quality wins.
        """
        M = np.asarray(M, dtype=float)
        key = tuple(M.tolist())
        if key in self._assoc:
            return self._assoc[key]
        inp = self.inputs
        active = M > 0
        if not active.any():
            self._assoc[key] = None
            return None
        q = np.where(active[:, None], (M - inp.tau_S)[:, None] * inp.access.gamma, 0.0)
        # a lone serving AP must at least beat the noise at full power
        q = np.where(q * inp.P_t >= inp.upsilon[None, :] * inp.sigma2_ac, q, 0.0)
        used = sorted({int(self.group_of[l]) for l in np.flatnonzero(active)})
        best_score, best = -math.inf, None
        for size in range(len(used), 0, -1):
            for groups in combinations(used, size):
                allowed = active & np.isin(self.group_of, groups)
                a = self._balanced(q, allowed)
                if a is None:
                    continue
                score = float(np.sum(np.log(q[a, np.arange(inp.K)])))
                if score > best_score:
                    best_score, best = score, a
        r = None
        if best is not None:
            r = np.zeros((inp.L, inp.K), dtype=bool)
            r[best, np.arange(inp.K)] = True
        self._assoc[key] = r
        return r

    def _balanced(self, q: np.ndarray, allowed: np.ndarray) -> np.ndarray | None:
        qa = np.where(allowed[:, None], q, 0.0)
        top = qa.max(axis=0)
        if np.any(top <= 0):
            return None
        a = qa.argmax(axis=0)
        options = [np.flatnonzero(qa[:, k] >= self.rel_quality * top[k]) for k in range(q.shape[1])]
        cur = self.total_time(a)
        while cur > 1.0:
            best_t, move = cur, None
            for k, opts in enumerate(options):
                for b in opts:
                    if b == a[k]:
                        continue
                    old = a[k]
                    a[k] = b
                    t = self.total_time(a)
                    a[k] = old
                    if t < best_t - 1e-12 or (move is not None and t == best_t and qa[b, k] > qa[move[1], move[0]]):
                        best_t, move = t, (k, b)
            if move is None:
                return None
            a[move[0]] = move[1]
            cur = best_t
        return a

    def link_time(self, r: np.ndarray) -> float:
        load = r.sum(axis=1)
        return sum(self.group_time(i, tuple(load[m].tolist())) for i, m in enumerate(self.members))

    def target_scale(self, M, r, hi: float = 1.5, iters: int = 10) -> tuple[float, np.ndarray | None]:
        """Largest common scaling of the SINR targets that the access side can meet.

        Fronthaul is ignored. Returns the scale and the SINRs reached at it.
        """
        inp = self.inputs
        free = replace(inp, P_f=math.inf, o72=0.0)
        lo, sinr = 0.0, None
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            status, rho, _, _ = solve_fixed(free.with_targets(mid * inp.upsilon), M, r, weights=(1.0, 0.0))
            if status == OPTIMAL:
                lo = mid
                sinr = effective_sinr(inp.access, M, rho, inp.sigma2_ac)
            else:
                hi = mid
        return lo, sinr

    def rescue(self, M, max_links: int = 3) -> NetworkSolution | None:
        """Add secondary links to the single-link association until the targets are met.

        Only links to the UEs limiting the common target scale are tried, and
        only those the fronthaul frame still has room for.
        """
        M = np.asarray(M, dtype=float)
        r = self.associate(M)
        if r is None:
            r = self._strongest_links(M)
            if r is None:
                return None
        sol = self.evaluate(M, r)
        if sol is not None:
            return sol
        active = np.flatnonzero(M > 0)
        scale, sinr = self.target_scale(M, r)
        for _ in range(max_links):
            if sinr is None:
                return None
            ratio = sinr / self.inputs.upsilon
            weak = np.flatnonzero(ratio <= ratio.min() * 1.01)
            best_scale, best_r = scale, None
            for k in weak:
                for l in active:
                    if r[l, k]:
                        continue
                    cand = r.copy()
                    cand[l, k] = True
                    if self.link_time(cand) > 1.0:
                        continue
                    sc, s2 = self.target_scale(M, cand)
                    if sc > best_scale + 1e-3:
                        best_scale, best_r, sinr_best = sc, cand, s2
            if best_r is None:
                return None
            r, scale, sinr = best_r, best_scale, sinr_best
            if scale >= 1.0:
                return self.evaluate(M, r)
        return None

    def _strongest_links(self, M) -> np.ndarray | None:
        # each UE on its best AP, even when no single AP can carry it alone
        inp = self.inputs
        q = np.where((M > 0)[:, None], (M - inp.tau_S)[:, None] * inp.access.gamma, 0.0)
        if np.any(q.max(axis=0) <= 0):
            return None
        r = np.zeros((inp.L, inp.K), dtype=bool)
        r[q.argmax(axis=0), np.arange(inp.K)] = True
        return r if self.link_time(r) <= 1.0 else None

    # -- exact evaluation --------------------------------------------------
    def evaluate(self, M, r=None) -> NetworkSolution | None:
        M = np.asarray(M, dtype=float)
        if r is None:
            r = self.associate(M)
            if r is None:
                return None
        key = (tuple(M.tolist()), np.packbits(r).tobytes())
        if key not in self._solved:
            self.solves += 1
            _, sol = fixed_integer_solution(self.inputs, M, r)
            self._solved[key] = sol if sol is not None and sol.audit.passed else None
        return self._solved[key]


def _better(a: NetworkSolution | None, b: NetworkSolution | None) -> NetworkSolution | None:
    if a is None:
        return b
    if b is None:
        return a
    return b if b.total_power < a.total_power - 1e-9 else a


def _full(inputs: ProblemInputs, active) -> np.ndarray:
    return np.where(active, float(inputs.M_ac), 0.0)


def prune_aps(ev: Evaluator, sol: NetworkSolution) -> NetworkSolution:
    """Greedily switch APs off, at full antennas, while that lowers the power."""
    inputs = ev.inputs
    while True:
        best = sol
        for l in np.flatnonzero(sol.M > 0):
            M = _full(inputs, sol.M > 0)
            M[l] = 0.0
            cand = ev.evaluate(M)
            if cand is None:
                # keep the remaining links of a jointly served solution
                r = sol.r.astype(bool) & (M > 0)[:, None]
                if r.any(axis=0).all():
                    cand = ev.evaluate(M, r)
            best = _better(best, cand)
        if best is sol:
            return sol
        sol = best


def trim_antennas(ev: Evaluator, sol: NetworkSolution, max_sweeps: int = 3) -> NetworkSolution:
    """Lower each active AP's antenna count to the smallest feasible value.

    The association is held fixed inside a sweep, which makes feasibility
    monotone in every ``M_l`` and allows a binary search per AP.
    """
    inputs = ev.inputs
    for _ in range(max_sweeps):
        changed = False
        r = sol.r.astype(bool)
        order = np.argsort(-(sol.M - inputs.tau_S), kind="stable")
        for l in order:
            if sol.M[l] == 0:
                continue
            lo, hi = int(inputs.tau_S[l]) + 1, int(sol.M[l])
            best = sol
            while lo < hi:
                mid = (lo + hi) // 2
                M = sol.M.astype(float).copy()
                M[l] = mid
                cand = ev.evaluate(M, r)
                if cand is not None:
                    hi = mid
                    best = cand if cand.total_power <= best.total_power + 1e-9 else best
                else:
                    lo = mid + 1
            if best is not sol:
                sol, changed = best, True
        # the best association may change with the antenna counts
        sol = _better(sol, ev.evaluate(sol.M))
        if not changed:
            break
    return sol


def _descend(ev: Evaluator, sol: NetworkSolution | None, granularity: str) -> NetworkSolution | None:
    if sol is None:
        return None
    sol = prune_aps(ev, sol)
    if granularity == ANTENNAS:
        sol = trim_antennas(ev, sol)
    return sol


def local_search(
    inputs: ProblemInputs,
    active,
    granularity: str = ANTENNAS,
    max_rounds: int = 10,
    evaluator: Evaluator | None = None,
) -> NetworkSolution | None:
    """Search integer solutions starting from the APs in ``active`` at full antennas.

    Phase one prunes APs greedily and, with antenna granularity, trims
    antenna counts. Phase two repeatedly tries switching one AP off or on
    (followed by the same descent) and keeps the best improvement.
    """
    ev = evaluator or Evaluator(inputs)
    active = np.asarray(active, dtype=bool)
    sol = _descend(ev, ev.evaluate(_full(inputs, active)), granularity)
    if sol is None and not active.all():
        sol = _descend(ev, ev.evaluate(_full(inputs, np.ones(inputs.L, dtype=bool))), granularity)
    if sol is None:
        # no single-link association works, so let some UEs be served jointly
        sol = _descend(ev, ev.rescue(_full(inputs, np.ones(inputs.L, dtype=bool))), granularity)
    if sol is None:
        return None
    for _ in range(max_rounds):
        on = sol.M > 0
        best = sol
        for l in range(inputs.L):
            flip = on.copy()
            flip[l] = not on[l]
            if not flip.any():
                continue
            start = ev.evaluate(_full(inputs, flip))
            if start is None:
                continue
            if on[l]:
                cand = _descend(ev, start, granularity)
            else:
                # a newly switched-on AP should lower the others' antenna needs, not be pruned away again
                cand = trim_antennas(ev, start) if granularity == ANTENNAS else start
            best = _better(best, cand)
        if best is sol:
            break
        sol = best
    return sol
