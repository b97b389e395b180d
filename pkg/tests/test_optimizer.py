import math
from dataclasses import replace

import numpy as np
import pytest

from cellfree_e2e import conic
from cellfree_e2e.access_channel import effective_sinr
from cellfree_e2e.optimizer import (
    BcdOptions,
    _penalty_residuals,
    assemble_subproblem1,
    baseline_ap_shutdown,
    baseline_txmin,
    initial_state,
    postprocess_round,
    rounding_options,
    run_bcd,
    solve_e2e,
    update_binaries,
    update_v,
)
from cellfree_e2e.power_model import coefficients, total_power
from cellfree_e2e.problem import (
    audit_feasibility,
    problem_from_deployment,
    solve_fixed,
)
from cellfree_e2e.scenario import Deployment, ScenarioConfig, build_deployment, grid_positions

from oracles import bisect_root, sinr_cone_margins


@pytest.fixture(scope="module")
def small():
    cfg = ScenarioConfig(K=2, L=4, area_side=500.0)
    return problem_from_deployment(cfg, build_deployment(cfg, 0))


def _at_aps(cfg, ue_offsets):
    aps = grid_positions(cfg.L, cfg.area_side)
    ues = aps[: len(ue_offsets)] + np.asarray(ue_offsets, float)
    centre = np.full(2, cfg.area_side / 2)
    return Deployment(aps, ues, centre)


def test_build_problem_plumbing(small):
    assert small.o72 == pytest.approx(2 * 1024 * 12 / 71.4e-6)
    assert small.o72 == pytest.approx(3.442e8, rel=1e-3)
    assert small.config.tau_d == 184
    assert small.coeffs == coefficients(small.config)


def test_sinr_cone_equivalence(small):
    rng = np.random.default_rng(4)
    M = np.full(small.L, 16.0)
    for _ in range(100):
        rho = rng.uniform(0, 0.3, (small.L, small.K))
        sinr = effective_sinr(small.access, M, rho, small.sigma2_ac)
        ups = sinr * rng.uniform(0.5, 1.5, small.K)
        inp = small.with_targets(ups)
        for k, (head2, rows2, member) in enumerate(sinr_cone_margins(inp, M, rho)):
            assert head2 / rows2 == pytest.approx(sinr[k] / ups[k], rel=1e-9)
            assert member == (sinr[k] >= ups[k])


def test_subproblem_single_link_reduction():
    cfg = ScenarioConfig(K=1, L=1, area_side=200.0, ap_positions=((50.0, 50.0),))
    inp = problem_from_deployment(cfg, build_deployment(cfg, 0))
    state = initial_state(inp, BcdOptions())
    prog, idx = assemble_subproblem1(state, inp)
    cone = next(c for c in prog.cones if c.label == "sinr[0]")
    rng = np.random.default_rng(0)
    acc = inp.access
    psi2 = acc.beta[0, 0] - acc.delta[0, 0] * acc.gamma[0, 0]
    for _ in range(20):
        x = rng.uniform(0, 2, prog.n)
        head = cone.exprs[0].value(x)
        rows = np.array([e.value(x) for e in cone.exprs[1:]])
        z, rb = x[idx.z[0, 0]], x[idx.rho_bar[0, 0]]
        # upsilon (psi^2 rho_bar^2 + sigma^2) <= (gamma_bar z)^2, rows scaled by 1/sigma
        lhs = inp.upsilon[0] * (psi2 * rb**2 + inp.sigma2_ac) / inp.sigma2_ac
        rhs = (math.sqrt(acc.gamma[0, 0]) * z) ** 2 / inp.sigma2_ac
        assert float(rows @ rows) == pytest.approx(lhs, rel=1e-12)
        assert head**2 == pytest.approx(rhs, rel=1e-12)


def test_z_cone_boundary(small):
    state = initial_state(small, BcdOptions())
    prog, idx = assemble_subproblem1(state, small)
    cone = next(c for c in prog.cones if c.label == "z-cone[0,0]")
    x = np.zeros(prog.n)
    x[idx.z[0, 0]] = x[idx.Mt[0]] = x[idx.u[0, 0]] = 1.0
    vals = [e.value(x) for e in cone.exprs]
    assert vals[0] == pytest.approx(2.0)
    assert np.linalg.norm(vals[1:]) == pytest.approx(2.0)
    x[idx.z[0, 0]] = 0.9
    assert np.linalg.norm([e.value(x) for e in cone.exprs[1:]]) < 2.0


def test_subproblem_solution_respects_rotated_cone(small):
    state = initial_state(small, BcdOptions())
    prog, idx = assemble_subproblem1(state, small)
    res = conic.solve(prog)
    assert res.status == conic.OPTIMAL
    z, Mt, u = res.x[idx.z], res.x[idx.Mt], res.x[idx.u]
    scale = max(1.0, float(np.max(Mt[:, None] * u)))
    assert np.all(z**2 <= Mt[:, None] * u + 1e-8 * scale)


def test_zero_targets_make_sinr_vacuous(small):
    inp = small.with_targets(np.zeros(small.K))
    prog, _ = assemble_subproblem1(initial_state(inp, BcdOptions()), inp)
    assert conic.solve(prog).status == conic.OPTIMAL


def test_update_v_examples():
    assert update_v(1.0, 1.0, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert update_v(0.0, 0.0, 1.0, 1.0) == 0.0
    v = update_v(1.0, 2.0, 1.0, 1.0)
    assert v == pytest.approx(bisect_root(lambda w: 2 * w**3 - w - 2, 1.0, 1.2), abs=1e-12)
    assert v == pytest.approx(1.1654, abs=1e-4)


def test_update_v_oracle():
    rng = np.random.default_rng(1)
    for _ in range(2000):
        u, rb = rng.uniform(0, 4), rng.uniform(0, 2)
        lam3, lam4 = 10 ** rng.uniform(-2, 3), 10 ** rng.uniform(-2, 3)
        f = lambda w: 4 * lam3 * w**3 - (4 * lam3 * u - 2 * lam4) * w - 2 * lam4 * rb
        v = update_v(u, rb, lam3, lam4)
        scale = max(1.0, 4 * lam3, abs(4 * lam3 * u - 2 * lam4), 2 * lam4 * rb)
        assert abs(f(v)) <= 1e-10 * scale
        hi = 1.0
        while f(hi) < 0:
            hi *= 2
        assert v == pytest.approx(bisect_root(f, 0.0, hi), abs=1e-9)


def test_update_binaries_examples():
    m, _ = update_binaries(np.zeros(1), np.zeros((1, 1)), np.array([1.0]), 1.0, 0.0, 0.0, 1.0, 2.0)
    assert m[0] == 1
    m, _ = update_binaries(np.zeros(1), np.zeros((1, 1)), np.array([0.0]), 1.0, 0.0, 0.0, 1.0, 2.0)
    assert m[0] == 0


def test_update_binaries_oracle():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        c2, c3, c4 = rng.uniform(-5, 30, 3)
        lam1, lam2 = 10 ** rng.uniform(-1, 3, 2)
        Mt = rng.uniform(0, 16, 3)
        rt = rng.uniform(0, 1, (3, 2))
        mt = rng.uniform(0, 1, 3)
        m, r = update_binaries(Mt, rt, mt, c2, c3, c4, lam1, lam2)
        for l in range(3):
            costs = [c2 * b + lam2 * (b - mt[l]) ** 2 for b in (0, 1)]
            assert m[l] == int(costs[1] < costs[0])
            for k in range(2):
                costs = [(c3 + c4 * Mt[l]) * b + lam1 * (b - rt[l, k]) ** 2 for b in (0, 1)]
                assert r[l, k] == int(costs[1] < costs[0])


def test_bcd_deterministic(small, tmp_path):
    a = run_bcd(small, BcdOptions(seed=3, max_iter=5, trace_path=str(tmp_path / "a.csv")))
    b = run_bcd(small, BcdOptions(seed=3, max_iter=5, trace_path=str(tmp_path / "b.csv")))
    assert a.history == b.history
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "iteration,objective,res_r,res_m,res_u,res_rho,active_aps"


def test_bcd_residuals_at_convergence(small):
    state = run_bcd(small)
    assert state.status == "converged"
    assert all(r < 1e-3 for r in _penalty_residuals(state))


@pytest.mark.xfail(strict=True, reason="random v start keeps rho_bar away from zero for several iterations")
def test_bcd_trivial_targets_converge_fast(small):
    state = run_bcd(small.with_targets(np.full(small.K, 1e-9)))
    assert state.iteration <= 2 and state.rho_bar.max() < 1e-3


def test_trivial_targets_give_negligible_power(small):
    sol = solve_e2e(small.with_targets(np.full(small.K, 1e-9)))
    assert sol.feasible and sol.rho.max() < 1e-3


def test_rounding_options():
    opts = rounding_options(np.array([7.4]))
    assert [o.tolist() for o in opts] == [[7.0], [8.0]]  # floor, nearest, ceil = 7, 7, 8
    assert len(rounding_options(np.array([3.0, 16.0]))) == 1
    assert rounding_options(np.array([2.5]))[1].tolist() == [3.0]


def test_postprocess_passes_audit(small):
    state = run_bcd(small)
    sol = postprocess_round(state, small)
    assert audit_feasibility(sol, small, tol=1e-6).passed
    M = sol.M[sol.M > 0]
    assert np.all(M == np.round(M)) and np.all(M <= small.M_ac)


def test_single_ue_next_to_ap():
    cfg = ScenarioConfig(K=1, L=4, area_side=500.0, se_target=1.0)
    inp = problem_from_deployment(cfg, _at_aps(cfg, [[5.0, 5.0]]))
    sol = solve_e2e(inp)
    assert sol.feasible and sol.m.sum() == 1 and sol.M[0] > 0


def test_unreachable_target_is_infeasible(small):
    sol = solve_e2e(small.with_targets(np.full(small.K, 1e9)))
    assert sol.status == conic.INFEASIBLE


def test_reported_power_matches_model(small):
    sol = solve_e2e(small)
    rep = total_power(sol.M, sol.rho, sol.p_bar, small.config)
    assert sol.total_power == pytest.approx(rep.total, rel=1e-12)
    assert sol.radio_power + sol.cloud_power == pytest.approx(sol.total_power, rel=1e-12)


def test_txmin_matches_access_power_minimum():
    cfg = ScenarioConfig(K=1, L=4, area_side=500.0)
    inp = problem_from_deployment(cfg, build_deployment(cfg, 2))
    sol = baseline_txmin(inp)
    assert sol.feasible and np.all(sol.M == inp.M_ac)
    relaxed = replace(inp, P_f=math.inf, o72=0.0)
    _, rho, _, _ = solve_fixed(relaxed, np.full(inp.L, float(inp.M_ac)), np.ones((inp.L, inp.K), bool), weights=(1.0, 0.0))
    # links below 1e-6 W are dropped before the final re-solve, which moves the optimum slightly
    assert sol.rho.sum() == pytest.approx(rho.sum(), rel=1e-3)
    assert np.all(sol.rho.sum(axis=1) <= inp.P_t + 1e-9)


def test_ordering_on_small_instances():
    cfg = ScenarioConfig(K=2, L=4, area_side=500.0)
    for seed in range(3):
        inp = problem_from_deployment(cfg, build_deployment(cfg, seed))
        e2e, onoff, tx = solve_e2e(inp), baseline_ap_shutdown(inp), baseline_txmin(inp)
        for sol in (e2e, onoff, tx):
            assert sol.feasible and audit_feasibility(sol, inp).passed
        assert e2e.total_power <= onoff.total_power + 1e-6
        assert onoff.total_power <= tx.total_power + 1e-6


def test_ap_shutdown_keeps_every_needed_ap():
    cfg = ScenarioConfig(K=4, L=4, area_side=1000.0)
    inp = problem_from_deployment(cfg, _at_aps(cfg, [[3.0, 3.0]] * 4))
    sol = baseline_ap_shutdown(inp)
    assert sol.feasible
    assert np.all(sol.M == inp.M_ac)
    assert np.all(sol.p_bar.sum() <= inp.P_f * inp.I + 1e-9)


def test_audit_flags_violations(small):
    sol = solve_e2e(small)
    silent = replace(sol, rho=np.zeros_like(sol.rho))
    report = audit_feasibility(silent, small)
    assert not report.passed
    assert sum(v.startswith("sinr[") for v in report.violations) == small.K
    long_frame = replace(sol, t=np.full(small.I, 1.2 / small.I))
    assert any(v.startswith("tdma") for v in audit_feasibility(long_frame, small).violations)
