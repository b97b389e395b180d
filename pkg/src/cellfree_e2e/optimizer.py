"""End-to-end power minimisation: penalty block-coordinate descent and baselines.

The mixed-integer problem chooses, per AP, the number of active access
antennas, the per-UE powers, the fronthaul power and the TDMA time shares.
:func:`solve_e2e` relaxes the integers, alternates three blocks

1. a convex conic program in the continuous variables,
2. a closed-form cubic root for the power auxiliaries ``v``,
3. a sign rule for the binaries ``m`` (AP on) and ``r`` (AP serves UE),

and finally rounds the antenna counts and re-solves the exact convex problem
for the fixed integers.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic, search
from .conic import Affine, ConicProgram
from .problem import (
    RHO_EPS,
    AuditReport,
    InfeasibleProblem,
    NetworkSolution,
    NumericalError,
    ProblemInputs,
    RoundingFailure,
    _fronthaul_cones,
    _sinr_cones,
    audit_feasibility,
    build_problem,
    finish_solution,
    fixed_integer_solution,
    infeasible_solution,
    problem_from_deployment,
    solve_fixed,
)

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# state and options


@dataclass
class BcdOptions:
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float = 1.0
    lambda4: float = 1.0
    ramp: float = 2.0
    ramp_cap: float = 1e4
    max_iter: int = 50
    rel_tol: float = 1e-4
    seed: int = 0
    tol: float = 1e-8
    trace_path: str | None = None


@dataclass
class BcdState:
    Mt: np.ndarray  # continuous antennas beyond tau_S, L
    rho_bar: np.ndarray  # L x K amplitudes
    p_bar: np.ndarray  # L
    t: np.ndarray  # I
    z: np.ndarray  # L x K
    r_t: np.ndarray  # relaxed association, L x K
    m_t: np.ndarray  # relaxed activation, L
    u: np.ndarray  # L x K
    v: np.ndarray  # L x K
    r: np.ndarray  # binary association, L x K
    m: np.ndarray  # binary activation, L
    lambdas: np.ndarray  # (lambda1..lambda4)
    iteration: int = 0
    history: list = field(default_factory=list)
    status: str = ""


# ---------------------------------------------------------------------------
# block 1: continuous sub-problem


@dataclass
class _Sub1Index:
    Mt: np.ndarray
    rho_bar: np.ndarray
    p_bar: np.ndarray
    t: np.ndarray
    z: np.ndarray
    r_t: np.ndarray
    m_t: np.ndarray
    u: np.ndarray
    s: np.ndarray


def assemble_subproblem1(state: BcdState, inputs: ProblemInputs, *, tie_antennas: bool = False):
    """Convex program for the continuous block with ``r``, ``m``, ``v`` held fixed.

    With ``tie_antennas`` the antenna count follows the AP activation,
    ``Mt = m_t (M_ac - tau_S)``, which gives the AP on/off baseline.
    Returns ``(program, index)``.
    """
    L, K, I = inputs.L, inputs.K, inputs.I
    c = inputs.coeffs
    lam1, lam2, lam3, lam4 = state.lambdas
    Mt_max = inputs.M_ac - inputs.tau_S
    prog = ConicProgram()
    Mt = prog.add_variables(L, "Mt", lb=0.0, ub=Mt_max)
    rho_bar = prog.add_variables(L * K, "rho_bar", lb=0.0, ub=(state.r.ravel() * math.sqrt(inputs.P_t))).reshape(L, K)
    p_bar = prog.add_variables(L, "p_bar", lb=0.0)
    t = prog.add_variables(I, "t", lb=0.0)
    z = prog.add_variables(L * K, "z", lb=0.0).reshape(L, K)
    r_t = prog.add_variables(L * K, "r_t", lb=0.0, ub=1.0).reshape(L, K)
    m_t = prog.add_variables(L, "m_t", lb=0.0, ub=1.0)
    u = prog.add_variables(L * K, "u", lb=0.0).reshape(L, K)
    s = prog.add_variables(L, "s", lb=0.0)
    idx = _Sub1Index(Mt, rho_bar, p_bar, t, z, r_t, m_t, u, s)

    n_r = state.r.sum(axis=1)
    prog.add_objective(Affine.lin(Mt, c.c1 + c.c4 * n_r))
    prog.add_objective(Affine.lin(p_bar, c.c5))
    for l in range(L):
        prog.add_square(Affine.constant(state.m[l]) - Affine.var(m_t[l]), lam2)
        for k in range(K):
            prog.add_square(Affine.var(rho_bar[l, k]), c.c0)
            prog.add_square(Affine.constant(state.r[l, k]) - Affine.var(r_t[l, k]), lam1)
            prog.add_square(Affine.var(u[l, k]) - state.v[l, k] ** 2, lam3)
            prog.add_square(Affine.var(rho_bar[l, k]) - state.v[l, k], lam4)

    def signal(l, k):
        return z[l, k], 1.0

    _sinr_cones(prog, inputs, signal, rho_bar)
    sqrt2 = math.sqrt(2.0)
    for l in range(L):
        prog.add_soc(Affine.constant(math.sqrt(inputs.P_t)), [Affine.var(i) for i in rho_bar[l]], label=f"ap-power[{l}]")
        for k in range(K):
            prog.add_soc(
                Affine.var(Mt[l]) + Affine.var(u[l, k]),
                [Affine.var(z[l, k], sqrt2), Affine.var(Mt[l]), Affine.var(u[l, k])],
                label=f"z-cone[{l},{k}]",
            )
            prog.add_le(Affine.var(u[l, k]) - Affine.var(r_t[l, k], inputs.P_t), label="u-assoc")
        if tie_antennas:
            prog.add_eq(Affine.var(Mt[l]) - Affine.var(m_t[l], float(Mt_max[l])), label="ap-onoff")
        else:
            prog.add_le(Affine.var(m_t[l]) - Affine.var(Mt[l]), label="m-lower")
            prog.add_le(Affine.var(Mt[l]) - Affine.var(m_t[l], float(inputs.M_ac)), label="m-upper")
        prog.add_le(Affine.lin(r_t[l], 1.0) - Affine.var(m_t[l], float(K)), label="assoc-activation")

    def load_sq(l):
        return [Affine.var(r_t[l, k], sqrt2) for k in range(K)]

    _fronthaul_cones(prog, inputs, load_sq, p_bar, t, s)
    return prog, idx


def _read_sub1(state: BcdState, x: np.ndarray, idx: _Sub1Index) -> BcdState:
    clip = lambda a: np.maximum(x[a], 0.0)
    return replace(
        state,
        Mt=clip(idx.Mt),
        rho_bar=clip(idx.rho_bar),
        p_bar=clip(idx.p_bar),
        t=clip(idx.t),
        z=clip(idx.z),
        r_t=np.clip(x[idx.r_t], 0.0, 1.0),
        m_t=np.clip(x[idx.m_t], 0.0, 1.0),
        u=clip(idx.u),
    )


# ---------------------------------------------------------------------------
# block 2: cubic


def _cubic(v, u, rho_bar, lam3, lam4):
    return 4 * lam3 * v**3 - (4 * lam3 * u - 2 * lam4) * v - 2 * lam4 * rho_bar


def update_v(u, rho_bar, lam3: float, lam4: float):
    """Minimiser over ``v >= 0`` of ``lam3 (u - v^2)^2 + lam4 (rho_bar - v)^2``.

    This is the non-negative real root of
    ``4 lam3 v^3 - (4 lam3 u - 2 lam4) v - 2 lam4 rho_bar = 0``. The root is
    computed in closed form and then polished with Newton steps inside a
    bracket; a bisection fallback guards against round-off.
    """
    if lam3 <= 0 or lam4 <= 0:
        raise ValueError("lambda3 and lambda4 must be positive")
    u_arr = np.asarray(u, dtype=float)
    r_arr = np.asarray(rho_bar, dtype=float)
    u_b, r_b = np.broadcast_arrays(u_arr, r_arr)
    out = np.empty(u_b.shape)
    for i, (uu, rr) in enumerate(zip(u_b.ravel(), r_b.ravel())):
        out.flat[i] = _cubic_root(float(uu), float(rr), lam3, lam4)
    return out if out.shape else float(out)


def _cubic_root(u: float, rb: float, lam3: float, lam4: float) -> float:
    if u < 0 or rb < 0:
        raise ValueError("u and rho_bar must be non-negative")
    # depressed cubic v^3 + p v + q = 0
    p = -(4 * lam3 * u - 2 * lam4) / (4 * lam3)
    q = -2 * lam4 * rb / (4 * lam3)
    if q == 0.0:
        v = math.sqrt(-p) if p < 0 else 0.0
    else:
        disc = (q / 2) ** 2 + (p / 3) ** 3
        if disc >= 0:
            sd = math.sqrt(disc)
            v = math.copysign(abs(-q / 2 + sd) ** (1 / 3), -q / 2 + sd) + math.copysign(
                abs(-q / 2 - sd) ** (1 / 3), -q / 2 - sd
            )
        else:
            rr = math.sqrt(-p / 3)
            phi = math.acos(max(-1.0, min(1.0, (-q / 2) / rr**3)))
            v = 2 * rr * math.cos(phi / 3)  # largest real root
    # the cubic is <= 0 at 0 and increasing beyond its positive root: bracket it
    f = lambda w: _cubic(w, u, rb, lam3, lam4)
    lo, hi = 0.0, max(1.0, math.sqrt(max(u, 0.0)) + rb + 1.0)
    while f(hi) < 0:
        hi *= 2.0
    if not (lo <= v <= hi) or not math.isfinite(v):
        v = 0.5 * (lo + hi)
    scale = max(1.0, 4 * lam3, abs(4 * lam3 * u - 2 * lam4), 2 * lam4 * rb)
    for _ in range(100):
        fv = f(v)
        if fv > 0:
            hi = min(hi, v)
        else:
            lo = max(lo, v)
        if abs(fv) <= 1e-13 * scale:
            break
        d = 12 * lam3 * v**2 - (4 * lam3 * u - 2 * lam4)
        step = v - fv / d if d > 0 else math.nan
        v = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    if v < 0 or not math.isfinite(v):
        raise NumericalError("no non-negative root of the v-update cubic")
    return v


# ---------------------------------------------------------------------------
# block 3: binaries


def _sign(x):
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def update_binaries(M_tilde, r_tilde, m_tilde, c2, c3, c4, lambda1: float, lambda2: float):
    """Closed-form minimiser of the binary sub-problem.

    ``c2`` may be a per-AP array. Ties (zero argument) resolve to 0.
    """
    M_tilde = np.asarray(M_tilde, dtype=float)
    m = 0.5 - 0.5 * _sign(np.asarray(c2) + lambda2 * (1 - 2 * np.asarray(m_tilde)))
    arg = (c3 + c4 * M_tilde)[:, None] + lambda1 * (1 - 2 * np.asarray(r_tilde))
    r = 0.5 - 0.5 * _sign(arg)
    return m.astype(int), r.astype(int)


# ---------------------------------------------------------------------------
# BCD driver


def _activation_cost(inputs: ProblemInputs) -> np.ndarray:
    # switching an AP on also commits its tau_S zero-forcing antennas
    c = inputs.coeffs
    return c.c2 + c.c1 * inputs.tau_S


def _penalty_objective(state: BcdState, inputs: ProblemInputs) -> float:
    c = inputs.coeffs
    lam1, lam2, lam3, lam4 = state.lambdas
    n = state.r.sum(axis=1)
    val = (
        c.c0 * np.sum(state.rho_bar**2)
        + c.c1 * state.Mt.sum()
        + float(_activation_cost(inputs) @ state.m)
        + c.c3 * n.sum()
        + c.c4 * float((state.Mt + inputs.tau_S * state.m) @ n)
        + c.c5 * state.p_bar.sum()
        + lam1 * np.sum((state.r - state.r_t) ** 2)
        + lam2 * np.sum((state.m - state.m_t) ** 2)
        + lam3 * np.sum((state.u - state.v**2) ** 2)
        + lam4 * np.sum((state.rho_bar - state.v) ** 2)
    )
    return float(val)


def initial_state(inputs: ProblemInputs, options: BcdOptions) -> BcdState:
    L, K, I = inputs.L, inputs.K, inputs.I
    c = inputs.coeffs
    lam12 = 10.0 * max(float(np.max(_activation_cost(inputs))), c.c3 + c.c4 * inputs.M_ac)
    lambdas = np.array(
        [
            options.lambda1 if options.lambda1 is not None else lam12,
            options.lambda2 if options.lambda2 is not None else lam12,
            options.lambda3,
            options.lambda4,
        ],
        dtype=float,
    )
    rng = np.random.default_rng(options.seed)
    v = rng.uniform(0.0, math.sqrt(inputs.P_t), size=(L, K))
    return BcdState(
        Mt=(inputs.M_ac - inputs.tau_S).astype(float),
        rho_bar=np.zeros((L, K)),
        p_bar=np.zeros(L),
        t=np.full(I, 1.0 / I),
        z=np.zeros((L, K)),
        r_t=np.ones((L, K)),
        m_t=np.ones(L),
        u=v**2,
        v=v,
        r=np.ones((L, K), dtype=int),
        m=np.ones(L, dtype=int),
        lambdas=lambdas,
    )


def run_bcd(inputs: ProblemInputs, options: BcdOptions | None = None, *, tie_antennas: bool = False) -> BcdState:
    """Alternate the three blocks until the penalised objective settles."""
    options = options or BcdOptions()
    state = initial_state(inputs, options)
    lam0 = state.lambdas.copy()
    c = inputs.coeffs
    c2 = _activation_cost(inputs)
    trace = open(options.trace_path, "w") if options.trace_path else None
    if trace:
        trace.write("iteration,objective,res_r,res_m,res_u,res_rho,active_aps\n")
    try:
        streak = 0
        for it in range(1, options.max_iter + 1):
            prog, idx = assemble_subproblem1(state, inputs, tie_antennas=tie_antennas)
            res = conic.solve(prog, tol=options.tol)
            if res.x is None:
                if it == 1:
                    raise InfeasibleProblem(f"continuous sub-problem is {res.status} with every AP on")
                log.warning("sub-problem 1 %s at iteration %d; keeping previous iterate", res.status, it)
                state.status = res.status
                break
            state = _read_sub1(state, res.x, idx)
            lam1, lam2, lam3, lam4 = state.lambdas
            state.v = update_v(state.u, state.rho_bar, lam3, lam4)
            Mhat = state.Mt + inputs.tau_S
            state.m, state.r = update_binaries(Mhat, state.r_t, state.m_t, c2, c.c3, c.c4, lam1, lam2)
            state.iteration = it
            obj = _penalty_objective(state, inputs)
            residuals = _penalty_residuals(state)
            state.history.append(obj)
            if trace:
                trace.write(f"{it},{obj!r}," + ",".join(repr(x) for x in residuals) + f",{int(state.m.sum())}\n")
            if len(state.history) >= 2:
                prev = state.history[-2]
                change = abs(obj - prev) / max(abs(prev), 1e-12)
                streak = streak + 1 if change < options.rel_tol else 0
                if streak >= 2:
                    state.status = "converged"
                    break
            state.lambdas = np.minimum(state.lambdas * options.ramp, lam0 * options.ramp_cap)
        else:
            state.status = "max-iter"
    finally:
        if trace:
            trace.close()
    return state


def _penalty_residuals(state: BcdState):
    return (
        float(np.sum((state.r - state.r_t) ** 2)),
        float(np.sum((state.m - state.m_t) ** 2)),
        float(np.sum((state.u - state.v**2) ** 2)),
        float(np.sum((state.rho_bar - state.v) ** 2)),
    )


# ---------------------------------------------------------------------------
# post-processing


def rounding_options(M_hat) -> list[np.ndarray]:
    M_hat = np.asarray(M_hat, dtype=float)
    opts = [np.floor(M_hat), np.floor(M_hat + 0.5), np.ceil(M_hat)]
    out: list[np.ndarray] = []
    for o in opts:
        if not any(np.array_equal(o, p) for p in out):
            out.append(o)
    return out


def postprocess_round(state: BcdState, inputs: ProblemInputs, *, onoff: bool = False) -> NetworkSolution:
    """Round the relaxed antenna counts and re-solve the exact problem.

    Floor, nearest and ceiling roundings of ``M_hat = Mt + tau_S`` are tried
    in that order on the APs the binaries keep on; the first feasible one
    wins. With ``onoff`` only the activation is rounded and active APs use all
    antennas.
    """
    active = state.m.astype(bool)
    if onoff:
        frac = state.m_t
        candidates = [np.floor(frac), np.floor(frac + 0.5), np.ceil(frac)]
        options = []
        for on in candidates:
            on = on.astype(bool) & (active | (state.m_t > 0))
            M = np.where(on, inputs.M_ac, 0).astype(float)
            if not any(np.array_equal(M, o) for o in options):
                options.append(M)
    else:
        M_hat = np.where(active, state.Mt + inputs.tau_S, 0.0)
        options = []
        for M in rounding_options(M_hat):
            M = np.where(active, np.clip(M, inputs.tau_S + 1, inputs.M_ac), 0.0)
            if not any(np.array_equal(M, o) for o in options):
                options.append(M)
    r = (state.r_t > 0.5) & (state.r.astype(bool) | (state.r_t > 0.5))
    statuses = []
    for M in options:
        rr = r & (M > 0)[:, None]
        status, sol = fixed_integer_solution(inputs, M, rr, iterations=state.iteration)
        statuses.append(status)
        if sol is not None:
            return sol
    raise RoundingFailure(statuses)


# ---------------------------------------------------------------------------
# algorithms


def solve_e2e(inputs: ProblemInputs, options: BcdOptions | None = None, *, refine: bool = True) -> NetworkSolution:
    """Joint antenna activation and power allocation.

    Runs the penalty BCD, rounds its antenna counts, and then refines the
    integer decisions by local search started from the rounded activation
    pattern (or from every AP when rounding fails).
    """
    return _bcd_then_search(inputs, options, search.ANTENNAS, refine)


def baseline_ap_shutdown(
    inputs: ProblemInputs, options: BcdOptions | None = None, *, refine: bool = True
) -> NetworkSolution:
    """Same machinery with all-or-nothing antennas per AP."""
    return _bcd_then_search(inputs, options, search.ONOFF, refine)


def _bcd_then_search(inputs, options, granularity, refine) -> NetworkSolution:
    options = options or BcdOptions()
    onoff = granularity == search.ONOFF
    t0 = time.perf_counter()
    try:
        state = run_bcd(inputs, options, tie_antennas=onoff)
    except InfeasibleProblem as exc:
        return infeasible_solution(inputs, conic.INFEASIBLE, str(exc))
    try:
        rounded = postprocess_round(state, inputs, onoff=onoff)
    except RoundingFailure as exc:
        log.info("rounding failed: %s", exc)
        rounded = None
    sol = rounded
    if refine:
        start = rounded.M > 0 if rounded is not None else np.ones(inputs.L, dtype=bool)
        ev = search.Evaluator(inputs)
        found = search.local_search(inputs, start, granularity, evaluator=ev)
        if found is not None and (sol is None or found.total_power < sol.total_power):
            sol = found
    if sol is None:
        sol = infeasible_solution(inputs, conic.INFEASIBLE, "no feasible integer solution found")
    sol.iterations = state.iteration
    sol.info.update(
        bcd_status=state.status,
        bcd_power=rounded.total_power if rounded is not None else math.nan,
        solve_time=time.perf_counter() - t0,
    )
    return sol


def baseline_txmin(inputs: ProblemInputs) -> NetworkSolution:
    """Minimum access transmit power with every AP on at full antennas.

    The access powers are minimised over all links first and the fronthaul
    is then settled for the resulting service pattern with equal time
    shares. When the fronthaul cannot carry that pattern (the usual case
    once several UEs share the fronthaul), every UE is instead served by a
    single AP chosen so that the fronthaul fits (with a few extra links for
    UEs that one AP cannot carry), and the transmit powers are minimised for
    that association.
    """
    t0 = time.perf_counter()
    L, K = inputs.L, inputs.K
    M = np.full(L, float(inputs.M_ac))
    status, rho, _, _ = _access_only(inputs, M, np.ones((L, K), dtype=bool))
    if status != conic.OPTIMAL:
        return infeasible_solution(inputs, status, "access")
    support = rho > RHO_EPS * 1e3
    status, rho, _, _ = _access_only(inputs, M, support)
    if status != conic.OPTIMAL:
        return infeasible_solution(inputs, status, "access")
    r = rho > RHO_EPS
    uniform = np.full(inputs.I, 1.0 / inputs.I)
    status, _, p_bar, t = solve_fixed(inputs, M, r, weights=(0.0, 1.0), fixed_t=uniform)
    settled = "post-hoc"
    if status != conic.OPTIMAL:
        ev = search.Evaluator(inputs)
        r, settled = ev.associate(M), "single-link"
        if r is not None:
            status, rho, p_bar, t = solve_fixed(inputs, M, r, weights=(inputs.coeffs.c0, inputs.coeffs.c5))
        if r is None or status != conic.OPTIMAL:
            rescued = ev.rescue(M)
            if rescued is None:
                return infeasible_solution(inputs, conic.INFEASIBLE, "association")
            r, settled = rescued.r.astype(bool), "multi-link"
            status, rho, p_bar, t = solve_fixed(inputs, M, r, weights=(inputs.coeffs.c0, inputs.coeffs.c5))
    sol = finish_solution(inputs, M, rho, p_bar, t, keep_idle=True, info={"fronthaul": settled})
    sol.info.update(solve_time=time.perf_counter() - t0)
    return sol


def _access_only(inputs, M, r):
    """Transmit-power minimisation without the fronthaul constraints."""
    relaxed = replace(inputs, P_f=math.inf, o72=0.0)
    return solve_fixed(relaxed, M, r, weights=(1.0, 0.0))
