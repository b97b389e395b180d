"""The mixed-integer power-minimisation problem: inputs, exact fixed-integer
solve and a feasibility auditor shared by every algorithm."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import conic
from .access_channel import AccessState, build_access_state, effective_sinr
from .conic import Affine, ConicProgram
from .fronthaul import ApGrouping, FronthaulPlan, build_fronthaul_plan, fronthaul_rate
from .power_model import PowerCoefficients, coefficients, total_power
from .scenario import Deployment, ScenarioConfig

LN2 = math.log(2.0)
RHO_EPS = 1e-9


class InfeasibleProblem(RuntimeError):
    """The QoS targets cannot be met even with every AP fully on."""


class RoundingFailure(RuntimeError):
    def __init__(self, statuses):
        super().__init__(f"no rounding option is feasible (statuses: {statuses})")
        self.statuses = statuses


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ProblemInputs:
    access: AccessState
    grouping: ApGrouping
    Lambda: np.ndarray
    coeffs: PowerCoefficients
    upsilon: np.ndarray
    sigma2_ac: float
    P_t: float
    P_f: float
    B_frh: float
    o72: float
    M_ac: int
    config: ScenarioConfig

    @property
    def L(self) -> int:
        return self.access.L

    @property
    def K(self) -> int:
        return self.access.K

    @property
    def I(self) -> int:
        return self.grouping.I

    @property
    def tau_S(self) -> np.ndarray:
        return self.access.tau_S

    @property
    def group_of(self) -> np.ndarray:
        return self.grouping.group_of()

    def with_targets(self, upsilon) -> "ProblemInputs":
        return replace(self, upsilon=np.broadcast_to(np.asarray(upsilon, float), (self.K,)).copy())


def build_problem(
    config: ScenarioConfig,
    access: AccessState,
    plan: FronthaulPlan | None,
) -> ProblemInputs:
    if plan is None or plan.grouping is None or plan.Lambda is None:
        raise ValueError("the fronthaul grouping and ZF gains are required")
    return ProblemInputs(
        access=access,
        grouping=plan.grouping,
        Lambda=np.asarray(plan.Lambda, dtype=float),
        coeffs=coefficients(config),
        upsilon=config.upsilon(),
        sigma2_ac=config.sigma2_ac,
        P_t=config.P_t,
        P_f=config.P_f,
        B_frh=config.B_frh,
        o72=config.o72,
        M_ac=config.M_ac,
        config=config,
    )


def problem_from_deployment(config: ScenarioConfig, deployment: Deployment) -> ProblemInputs:
    access = build_access_state(deployment, config)
    plan = build_fronthaul_plan(deployment, config)
    return build_problem(config, access, plan)


@dataclass
class NetworkSolution:
    M: np.ndarray
    rho: np.ndarray
    p_bar: np.ndarray
    t: np.ndarray
    r: np.ndarray
    m: np.ndarray
    total_power: float
    radio_power: float
    cloud_power: float
    status: str = conic.OPTIMAL
    iterations: int = 0
    audit: "AuditReport | None" = None
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == conic.OPTIMAL


# ---------------------------------------------------------------------------
# shared constraint builders


def _sinr_cones(prog, inputs: ProblemInputs, signal, rho_idx, label="sinr"):
    """Add the SOC form of every UE's SINR constraint.

    ``signal(l, t)`` returns ``(index, scale)`` such that ``scale * x[index]``
    stands for ``sqrt((M_l - tau_S) rho[l, t])``, or None for a dead link; ``rho_idx[l, t]`` indexes the power
    amplitudes (-1 where fixed to zero). Rows are scaled by ``1/sigma``.
    """
    acc = inputs.access
    sigma = math.sqrt(inputs.sigma2_ac)
    gbar = np.sqrt(acc.gamma) / sigma
    psi = np.sqrt(np.maximum(acc.beta - acc.delta * acc.gamma, 0.0)) / sigma
    iota = acc.copilot()
    L, K = acc.beta.shape
    for k in range(K):
        sq = math.sqrt(inputs.upsilon[k])

        def coherent(t):
            idx, coef = [], []
            for l in range(L):
                term = signal(l, t)
                if term is not None:
                    idx.append(term[0])
                    coef.append(term[1] * gbar[l, k])
            return Affine.lin(np.array(idx, dtype=int), np.array(coef, dtype=float))

        rows = []
        for t in np.flatnonzero(iota[:, k]):
            rows.append(coherent(t) * sq)
        live = rho_idx >= 0
        ll, tt = np.nonzero(live & (psi[:, [k]] > 0))
        if len(ll):
            for l, t in zip(ll, tt):
                rows.append(Affine.var(rho_idx[l, t], sq * psi[l, k]))
        rows.append(Affine.constant(sq))
        prog.add_soc(coherent(k), rows, label=f"{label}[{k}]")


def _fronthaul_cones(prog, inputs, load_sq, p_idx, t_idx, s_idx, label="frh"):
    """``B log2(1 + Lambda p) >= O * s`` and ``load_sq(l) <= s * t``."""
    gof = inputs.group_of
    scale = LN2 * inputs.o72 / inputs.B_frh
    for l in range(inputs.L):
        ws = load_sq(l)
        if ws is None:
            prog.add_le(Affine.var(s_idx[l]) * -1.0, label=f"{label}-s[{l}]")
        else:
            prog.add_rotated_soc(Affine.var(s_idx[l]), Affine.var(t_idx[gof[l]]), ws, label=f"{label}-load[{l}]")
        prog.add_exp(
            Affine.var(s_idx[l], scale),
            Affine.constant(1.0),
            Affine.var(p_idx[l], inputs.Lambda[l]) + 1.0,
            label=f"{label}-rate[{l}]",
        )
    for i, group in enumerate(inputs.grouping.groups):
        prog.add_le(Affine.lin(p_idx[list(group)], 1.0) - inputs.P_f, label=f"frh-power[{i}]")
    prog.add_le(Affine.lin(t_idx, 1.0) - 1.0, label="tdma")


# ---------------------------------------------------------------------------
# fixed-integer convex problem


def solve_fixed(
    inputs: ProblemInputs,
    M,
    r,
    *,
    weights: tuple[float, float] | None = None,
    fixed_t=None,
    tol: float = 1e-8,
):
    """Optimal powers and time shares for fixed antenna counts ``M`` and association ``r``.

    Minimises ``c0 sum(rho) + c5 sum(p_bar)`` (or the given ``weights``)
    subject to every constraint of the original problem. Returns
    ``(status, rho, p_bar, t)``.
    """
    L, K, I = inputs.L, inputs.K, inputs.I
    M = np.asarray(M, dtype=float)
    r = np.asarray(r, dtype=bool) & (M > 0)[:, None]
    w_rho, w_p = weights if weights is not None else (inputs.coeffs.c0, inputs.coeffs.c5)
    g = np.where(M > 0, M - inputs.tau_S, 0.0)
    if np.any(g[M > 0] < 1 - 1e-9):
        raise ValueError("active APs need at least tau_S + 1 antennas")

    prog = ConicProgram()
    rho_idx = -np.ones((L, K), dtype=int)
    links = np.argwhere(r)
    if len(links):
        ids = prog.add_variables(len(links), "rho_bar", lb=0.0, ub=math.sqrt(inputs.P_t))
        rho_idx[links[:, 0], links[:, 1]] = ids
    p_idx = prog.add_variables(L, "p_bar", lb=0.0)
    t_idx = prog.add_variables(I, "t", lb=0.0)
    s_idx = prog.add_variables(L, "s", lb=0.0)

    for l, k in links:
        prog.add_square(Affine.var(rho_idx[l, k]), w_rho)
    prog.add_objective(Affine.lin(p_idx, w_p))

    def signal(l, t):
        if rho_idx[l, t] < 0:
            return None
        return rho_idx[l, t], math.sqrt(g[l])

    _sinr_cones(prog, inputs, signal, rho_idx)
    for l in range(L):
        ids = rho_idx[l][rho_idx[l] >= 0]
        if len(ids):
            prog.add_soc(Affine.constant(math.sqrt(inputs.P_t)), [Affine.var(i) for i in ids], label=f"ap-power[{l}]")
    n = r.sum(axis=1)

    def load_sq(l):
        return [Affine.constant(math.sqrt(2.0 * n[l]))] if n[l] > 0 else None

    _fronthaul_cones(prog, inputs, load_sq, p_idx, t_idx, s_idx)
    if fixed_t is not None:
        for i in range(I):
            prog.add_eq(Affine.var(t_idx[i]) - float(fixed_t[i]), label="fixed-t")

    res = conic.solve(prog, tol=tol)
    if res.x is None:
        return res.status, None, None, None
    x = res.x
    rho = np.zeros((L, K))
    rho[links[:, 0], links[:, 1]] = np.maximum(x[rho_idx[links[:, 0], links[:, 1]]], 0.0) ** 2 if len(links) else 0.0
    p_bar = np.maximum(x[p_idx], 0.0)
    t = np.maximum(x[t_idx], 0.0)
    status = res.status
    if status != conic.OPTIMAL and res.residuals.get("violation", 1.0) <= 1e-7:
        status = conic.OPTIMAL
    return status, rho, p_bar, t


def finish_solution(
    inputs, M, rho, p_bar, t, status="optimal", iterations=0, info=None, keep_idle: bool = False
) -> NetworkSolution:
    """Package a fixed-integer solve as a :class:`NetworkSolution` and audit it.

    Powers below ``RHO_EPS`` count as zero. Unless ``keep_idle`` is set, an
    AP that ends up serving nobody is switched off.
    """
    rho = np.where(rho > RHO_EPS, rho, 0.0)
    r = (rho > 0).astype(int)
    M = np.asarray(M, dtype=float)
    if not keep_idle:
        M = np.where(r.any(axis=1), M, 0.0)
    m = (M > 0).astype(int)
    p_bar = np.where(r.any(axis=1), p_bar, 0.0)
    rep = total_power(M, rho, p_bar, inputs.config, served=r.astype(bool))
    sol = NetworkSolution(
        M=M.astype(int), rho=rho, p_bar=p_bar, t=t, r=r, m=m,
        total_power=rep.total, radio_power=rep.radio, cloud_power=rep.cloud,
        status=status, iterations=iterations, info=info or {},
    )
    sol.audit = audit_feasibility(sol, inputs)
    return sol


def fixed_integer_solution(inputs, M, r, iterations=0, info=None):
    """Solve for fixed integers, then drop links that carry no power and re-solve."""
    status, rho, p_bar, t = solve_fixed(inputs, M, r)
    if status != conic.OPTIMAL:
        return status, None
    support = rho > RHO_EPS * 1e3
    if support.sum() < np.asarray(r, dtype=bool).sum():
        M2 = np.where(support.any(axis=1), M, 0)
        status2, rho2, p2, t2 = solve_fixed(inputs, M2, support)
        if status2 == conic.OPTIMAL:
            M, rho, p_bar, t = M2, rho2, p2, t2
    return conic.OPTIMAL, finish_solution(inputs, M, rho, p_bar, t, iterations=iterations, info=info)


# ---------------------------------------------------------------------------
# feasibility audit


def infeasible_solution(inputs, status, where) -> NetworkSolution:
    L, K, I = inputs.L, inputs.K, inputs.I
    return NetworkSolution(
        M=np.zeros(L, dtype=int), rho=np.zeros((L, K)), p_bar=np.zeros(L), t=np.zeros(I),
        r=np.zeros((L, K), dtype=int), m=np.zeros(L, dtype=int),
        total_power=math.nan, radio_power=math.nan, cloud_power=math.nan,
        status=conic.INFEASIBLE, info={"reason": f"{where}: {status}"},
    )


@dataclass
class AuditReport:
    slacks: dict
    violations: list
    passed: bool

    def __bool__(self) -> bool:
        return self.passed


def audit_feasibility(solution: NetworkSolution, inputs: ProblemInputs, tol: float = 1e-6) -> AuditReport:
    """Re-evaluate every original constraint on ``solution``.

    Slacks are reported per constraint family; a constraint fails when its
    slack is below ``-tol`` times its natural scale.
    """
    M = np.asarray(solution.M, dtype=float)
    rho = np.asarray(solution.rho, dtype=float)
    p_bar = np.asarray(solution.p_bar, dtype=float)
    t = np.asarray(solution.t, dtype=float)
    violations = []
    slacks = {}

    try:
        sinr = effective_sinr(inputs.access, M, rho, inputs.sigma2_ac)
    except ValueError as exc:
        return AuditReport({}, [f"sinr: {exc}"], False)
    slacks["sinr"] = (sinr - inputs.upsilon) / np.maximum(inputs.upsilon, 1.0)
    for k in np.flatnonzero(slacks["sinr"] < -tol):
        violations.append(f"sinr[{k}] {sinr[k]:.6g} < {inputs.upsilon[k]:.6g}")

    served = (rho > 0).sum(axis=1)
    gof = inputs.group_of
    rate = fronthaul_rate(inputs.Lambda, p_bar, t[gof], inputs.B_frh)
    need = inputs.o72 * served
    slacks["fronthaul_rate"] = (rate - need) / np.maximum(need, inputs.o72)
    for l in np.flatnonzero(slacks["fronthaul_rate"] < -tol):
        violations.append(f"fronthaul_rate[{l}] {rate[l]:.6g} < {need[l]:.6g}")

    group_p = np.array([p_bar[list(g)].sum() for g in inputs.grouping.groups])
    slacks["fronthaul_power"] = (inputs.P_f - group_p) / inputs.P_f
    for i in np.flatnonzero(slacks["fronthaul_power"] < -tol):
        violations.append(f"fronthaul_power[{i}] {group_p[i]:.6g} > {inputs.P_f}")

    slacks["tdma"] = np.array([1.0 - t.sum()])
    if t.sum() > 1 + tol:
        violations.append(f"tdma: sum(t) = {t.sum():.6g} > 1")
    if np.any(t < -tol):
        violations.append("tdma: negative time share")

    ap_p = rho.sum(axis=1)
    slacks["access_power"] = (inputs.P_t - ap_p) / inputs.P_t
    for l in np.flatnonzero(slacks["access_power"] < -tol):
        violations.append(f"access_power[{l}] {ap_p[l]:.6g} > {inputs.P_t}")

    active = M > 0
    lo = np.where(active, M - (inputs.tau_S + 1), 0.0)
    hi = np.where(active, inputs.M_ac - M, 0.0)
    slacks["antennas"] = np.minimum(lo, hi)
    bad = (slacks["antennas"] < 0) | (M != np.round(M))
    for l in np.flatnonzero(bad):
        violations.append(f"antennas[{l}] M={M[l]} outside {{0, {inputs.tau_S[l] + 1}..{inputs.M_ac}}}")
    if np.any((rho > 0) & ~active[:, None]):
        violations.append("power on a switched-off AP")
    return AuditReport(slacks, violations, not violations)
