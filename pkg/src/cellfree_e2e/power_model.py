"""GOPS-based end-to-end power model (radio units plus cloud).

A switched-off AP (``M_l = 0``) draws nothing, including its idle processing
and its per-AP network load at the cloud, so the linear-coefficient form of
the total power and the component sum agree exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig


class PowerModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class GopsBreakdown:
    filter: np.ndarray
    dft: np.ndarray
    map: np.ndarray
    prec: np.ndarray
    mod: np.ndarray
    coding: np.ndarray
    network: np.ndarray

    @property
    def ap(self) -> np.ndarray:
        return self.filter + self.dft + self.map + self.prec

    @property
    def gpp(self) -> float:
        return float(np.sum(self.mod + self.coding + self.network))


@dataclass(frozen=True)
class PowerCoefficients:
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    P_fixed_bar: float

    def as_tuple(self):
        return (self.c0, self.c1, self.c2, self.c3, self.c4, self.c5)


def gops(M, served, config: ScenarioConfig) -> GopsBreakdown:
    """Per-AP baseband load (GOPS) for antenna counts ``M`` and service matrix ``served[l, k]``."""
    M = np.asarray(M, dtype=float)
    n_served = np.asarray(served, dtype=float).sum(axis=1)
    active = (M > 0).astype(float)
    W_r, SE_r = config.bandwidth_ratio, config.se_ratio
    N = config.N_DFT
    return GopsBreakdown(
        filter=40.0 * M * config.f_s / 1e9,
        dft=8.0 * M * N * math.log2(N) / (config.T_s * 1e9),
        map=1.3 * W_r * SE_r**1.5 * n_served,
        prec=8.0 * M * config.tau_d * config.N_used / (config.T_s * 1e9 * config.tau_c) * n_served,
        mod=1.3 * W_r * M,
        coding=5.2 * W_r * SE_r * n_served,
        network=8.0 * W_r * SE_r * active,
    )


def ap_power(M_l: float, rho_row, gops_ap: float, config: ScenarioConfig) -> float:
    """Power drawn by one AP in W; zero when it is switched off."""
    rho_row = np.asarray(rho_row, dtype=float)
    if np.any(rho_row < 0):
        raise ValueError("transmit powers must be non-negative")
    if M_l <= 0:
        if np.any(rho_row > 0):
            raise ValueError("a switched-off AP cannot transmit")
        return 0.0
    if gops_ap > config.C_ap_max:
        warnings.warn(f"AP load {gops_ap:.1f} GOPS exceeds capacity {config.C_ap_max}", stacklevel=2)
    proc = config.P0_proc + config.delta_ap_proc * gops_ap / config.C_ap_max
    return M_l * config.P_st + config.delta_tr * rho_row.sum() + proc


def cloud_power(p_bar, gops_gpp: float, config: ScenarioConfig) -> float:
    p_bar = np.asarray(p_bar, dtype=float)
    if np.any(p_bar < 0):
        raise ValueError("fronthaul powers must be non-negative")
    compute = config.P_comp + config.delta_gpp_proc * gops_gpp / config.C_gpp_max
    return config.P_fixed + config.delta_tr * p_bar.sum() + compute / config.sigma_cool


def coefficients(config: ScenarioConfig) -> PowerCoefficients:
    W_r, SE_r = config.bandwidth_ratio, config.se_ratio
    gpp = config.delta_gpp_proc / (config.C_gpp_max * config.sigma_cool)
    ap = config.delta_ap_proc / config.C_ap_max
    N = config.N_DFT
    per_antenna = 40.0 * config.f_s / 1e9 + 8.0 * N * math.log2(N) / (config.T_s * 1e9)
    prec = 8.0 * config.tau_d * config.N_used / (config.T_s * 1e9 * config.tau_c)
    return PowerCoefficients(
        c0=config.delta_tr,
        c1=config.P_st + 1.3 * W_r * gpp + ap * per_antenna,
        c2=gpp * 8.0 * W_r * SE_r + config.P0_proc,
        c3=ap * 1.3 * W_r * SE_r**1.5 + gpp * 5.2 * W_r * SE_r,
        c4=ap * prec,
        c5=config.delta_tr,
        P_fixed_bar=config.P_fixed + config.P_comp / config.sigma_cool,
    )


@dataclass(frozen=True)
class PowerReport:
    total: float
    coefficient_form: float
    radio: float
    cloud: float


def total_power(M, rho, p_bar, config: ScenarioConfig, served=None, rtol: float = 1e-12) -> PowerReport:
    """Total end-to-end power, evaluated both from the coefficients and per component.

    ``served`` defaults to ``rho > 0``. Raises :class:`PowerModelError` when
    the two evaluations disagree by more than ``rtol`` (relative).
    """
    M = np.asarray(M, dtype=float)
    rho = np.asarray(rho, dtype=float)
    p_bar = np.asarray(p_bar, dtype=float)
    served = (rho > 0) if served is None else np.asarray(served, dtype=bool)
    active = M > 0
    if np.any(served & ~active[:, None]):
        raise ValueError("a UE is served by a switched-off AP")

    c = coefficients(config)
    n = served.sum(axis=1)
    coeff_form = (
        c.P_fixed_bar
        + c.c0 * rho.sum()
        + c.c1 * M.sum()
        + c.c2 * active.sum()
        + c.c3 * n.sum()
        + c.c4 * float(M @ n)
        + c.c5 * p_bar.sum()
    )

    load = gops(M, served, config)
    ap_load = load.ap
    radio = 0.0
    for l in range(len(M)):
        if active[l]:
            proc = config.P0_proc + config.delta_ap_proc * ap_load[l] / config.C_ap_max
            radio += M[l] * config.P_st + config.delta_tr * rho[l].sum() + proc
    cloud = cloud_power(p_bar, load.gpp, config)
    component = radio + cloud
    if abs(component - coeff_form) > rtol * max(abs(component), 1.0):
        raise PowerModelError(f"power forms disagree: {coeff_form!r} vs {component!r}")
    return PowerReport(component, coeff_form, radio, cloud)
