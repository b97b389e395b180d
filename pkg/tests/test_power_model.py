import math

import numpy as np
import pytest

from cellfree_e2e.power_model import ap_power, cloud_power, coefficients, gops, total_power
from cellfree_e2e.scenario import ScenarioConfig


def test_gops_rows():
    cfg = ScenarioConfig(K=2, L=1)
    g = gops(np.array([16.0]), np.array([[1, 1]]), cfg)
    assert g.filter[0] == pytest.approx(19.6608, rel=1e-12)
    assert g.dft[0] == pytest.approx(8 * 16 * 2048 * 11 / (71.4e-6 * 1e9), rel=1e-12)
    assert g.dft[0] == pytest.approx(40.39, abs=5e-3)
    off = gops(np.array([0.0]), np.array([[0, 0]]), cfg)
    assert off.ap[0] == 0 and off.mod[0] == 0
    assert g.ap[0] == pytest.approx(g.filter[0] + g.dft[0] + g.map[0] + g.prec[0])


def test_ap_and_cloud_power():
    cfg = ScenarioConfig(K=1)
    assert ap_power(0, [0.0], 0.0, cfg) == 0.0
    assert ap_power(16, [0.0], 0.0, cfg) == pytest.approx(129.6)
    assert ap_power(16, [1.0], 0.0, cfg) - ap_power(16, [0.0], 0.0, cfg) == pytest.approx(4.0)
    assert cloud_power(np.zeros(4), 0.0, cfg) == pytest.approx(143.11, abs=5e-3)
    assert cloud_power(np.zeros(4), 180.0, cfg) - cloud_power(np.zeros(4), 0.0, cfg) == pytest.approx(82.22, abs=5e-3)
    p = np.array([0.2, 0.3])
    assert cloud_power(2 * p, 0.0, cfg) - cloud_power(p, 0.0, cfg) == pytest.approx(4.0 * p.sum())


def test_coefficients_reference_values():
    c = coefficients(ScenarioConfig(K=1, se_target=6.0))
    expected_c1 = 6.8 + 1.3 * 74 / (180 * 0.9) + (74 / 180) * (40 * 30.72e6 / 1e9 + 8 * 2048 * 11 / 71.4e3)
    assert c.c1 == pytest.approx(expected_c1, rel=1e-12)
    assert round(c.c1, 2) == 8.94
    assert c.c2 == pytest.approx(74 / 162 * 8 + 20.8, rel=1e-12)
    assert round(c.c2, 2) == 24.45
    assert c.c0 == c.c5 == 4.0


def test_all_off_power():
    cfg = ScenarioConfig(K=3)
    rep = total_power(np.zeros(16), np.zeros((16, 3)), np.zeros(16), cfg)
    assert rep.total == pytest.approx(120 + 20.8 / 0.9)


def _random_solution(rng, cfg):
    M = np.where(rng.random(cfg.L) < 0.6, rng.integers(1, cfg.M_ac + 1, cfg.L), 0).astype(float)
    served = (rng.random((cfg.L, cfg.K)) < 0.5) & (M > 0)[:, None]
    rho = np.where(served, rng.uniform(0, 1.0 / cfg.K, (cfg.L, cfg.K)), 0.0)
    p_bar = rng.uniform(0, 1.0, cfg.L)
    return M, rho, p_bar, served


def test_identity_and_decomposition():
    rng = np.random.default_rng(0)
    for _ in range(200):
        cfg = ScenarioConfig(K=int(rng.integers(1, 12)), se_target=float(rng.uniform(0.5, 6)))
        M, rho, p_bar, served = _random_solution(rng, cfg)
        rep = total_power(M, rho, p_bar, cfg, served=served)
        assert abs(rep.total - rep.coefficient_form) <= 1e-12 * rep.total
        assert rep.radio + rep.cloud == pytest.approx(rep.total, rel=1e-12)


def test_monotone_and_antenna_slope():
    cfg = ScenarioConfig(K=4)
    rng = np.random.default_rng(2)
    M, rho, p_bar, served = _random_solution(rng, cfg)
    M[0] = 8.0
    served[0, :2] = True
    rho[0, :2] = 0.1
    base = total_power(M, rho, p_bar, cfg, served=served).total
    c = coefficients(cfg)
    M2 = M.copy()
    M2[0] += 1
    assert total_power(M2, rho, p_bar, cfg, served=served).total - base == pytest.approx(
        c.c1 + c.c4 * served[0].sum(), rel=1e-9
    )
    rho2 = rho.copy()
    rho2[0, 0] += 0.01
    assert total_power(M, rho2, p_bar, cfg, served=served).total >= base
    p2 = p_bar.copy()
    p2[1] += 0.01
    assert total_power(M, rho, p2, cfg, served=served).total >= base


def test_served_by_off_ap_rejected():
    cfg = ScenarioConfig(K=1, L=4)
    with pytest.raises(ValueError):
        total_power(np.zeros(4), np.array([[0.1], [0], [0], [0]]), np.zeros(4), cfg)


def test_overload_warns():
    cfg = ScenarioConfig(K=1)
    with pytest.warns(UserWarning):
        ap_power(16, [0.0], 500.0, cfg)
    assert not math.isnan(ap_power(16, [0.0], 10.0, cfg))
