"""Large-scale statistics and closed-form downlink SINR of the access channel.

Everything here works on statistics (large-scale fading, estimate quality,
PPZF membership); no small-scale fading is ever drawn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Deployment, ScenarioConfig


class ContractError(ValueError):
    """An input violates the documented pre-conditions of an operation."""


@dataclass(frozen=True)
class AccessState:
    """Channel statistics of one deployment (arrays indexed ``[l, k]``)."""

    beta: np.ndarray
    pilot_of: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    tau_S: np.ndarray

    @property
    def L(self) -> int:
        return self.beta.shape[0]

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    @property
    def pilot_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.pilot_of == self.pilot_of[k]) for k in range(self.K)]

    def copilot(self) -> np.ndarray:
        """``iota[t, k] = 1`` when UE ``t`` shares UE ``k``'s pilot and ``t != k``."""
        same = self.pilot_of[:, None] == self.pilot_of[None, :]
        np.fill_diagonal(same, False)
        return same.astype(float)


def compute_large_scale(
    deployment: Deployment, config: ScenarioConfig, *, min_distance: float = 1.0
) -> np.ndarray:
    """Log-distance path loss, ``L x K`` linear gains.

    Distances below ``min_distance`` are clamped to it. Optional log-normal
    shadowing (``config.shadowing_db > 0``) is drawn from the deployment seed.
    """
    diff = deployment.ap_positions[:, None, :] - deployment.ue_positions[None, :, :]
    dist = np.maximum(np.linalg.norm(diff, axis=-1), min_distance)
    gain_db = config.pathloss_intercept_db - 10.0 * config.pathloss_exponent * np.log10(dist)
    if config.shadowing_db > 0:
        rng = np.random.default_rng([deployment.seed % 2**64, 1])
        gain_db = gain_db + config.shadowing_db * rng.standard_normal(gain_db.shape)
    return 10.0 ** (gain_db / 10.0)


def assign_pilots(beta: np.ndarray, tau_p: int) -> np.ndarray:
    """Balanced greedy pilot assignment (0-based pilot indices).

    UEs are visited by decreasing best-AP gain. Each takes, among the least
    loaded pilots, the one whose current users are weakest at the UE's best
    AP; ties go to the lowest index.
    """
    L, K = beta.shape
    pilot_of = np.full(K, -1, dtype=int)
    load = np.zeros(tau_p, dtype=int)
    master = np.argmax(beta, axis=0)
    order = sorted(range(K), key=lambda k: (-beta[master[k], k], k))
    for k in order:
        users = [np.flatnonzero(pilot_of == p) for p in range(tau_p)]
        contamination = np.array([beta[master[k], u].sum() for u in users])
        candidates = np.flatnonzero(load == load.min())
        best = candidates[np.argmin(contamination[candidates])]
        pilot_of[k] = best
        load[best] += 1
    return pilot_of


def estimate_quality(
    beta: np.ndarray, pilot_of: np.ndarray, pilot_power: float, tau_p: int, sigma2: float
) -> np.ndarray:
    """MMSE estimate mean-square ``gamma[l, k]``."""
    same = pilot_of[:, None] == pilot_of[None, :]
    denom = tau_p * pilot_power * beta @ same.astype(float) + sigma2
    return tau_p * pilot_power * beta**2 / denom


def classify_ppzf(
    beta: np.ndarray, pilot_of: np.ndarray, nu: float, M_ac: int, tau_p: int
) -> tuple[np.ndarray, np.ndarray]:
    """Split UEs into strong (ZF) and weak (protective MRT) sets per AP.

    Strong UEs are taken by decreasing gain until their share of the AP's
    total gain reaches ``nu``. The number of distinct strong pilots is kept
    below ``min(tau_p, M_ac - 1) + 1`` so that an active AP always has at least
    one antenna left after zero-forcing.
    """
    L, K = beta.shape
    cap = min(tau_p, M_ac - 1)
    delta = np.zeros((L, K), dtype=int)
    tau_S = np.zeros(L, dtype=int)
    for l in range(L):
        total = beta[l].sum()
        acc = 0.0
        pilots: set[int] = set()
        for k in sorted(range(K), key=lambda k: (-beta[l, k], k)):
            if acc >= nu * total:
                break
            p = int(pilot_of[k])
            if p not in pilots:
                if len(pilots) >= cap:
                    break
                pilots.add(p)
            delta[l, k] = 1
            acc += beta[l, k]
        tau_S[l] = len(pilots)
    return delta, tau_S


def build_access_state(deployment: Deployment, config: ScenarioConfig) -> AccessState:
    beta = compute_large_scale(deployment, config)
    pilot_of = assign_pilots(beta, config.tau_p)
    gamma = estimate_quality(beta, pilot_of, config.pilot_power, config.tau_p, config.sigma2_ac)
    delta, tau_S = classify_ppzf(beta, pilot_of, config.nu, config.M_ac, config.tau_p)
    return AccessState(beta, pilot_of, gamma, delta, tau_S)


def _coherent_gain(state: AccessState, M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return np.where(M > 0, np.maximum(M - state.tau_S, 0.0), 0.0)


def effective_sinr(state: AccessState, M, rho, sigma2: float) -> np.ndarray:
    """Closed-form effective SINR of every UE.

    ``M`` holds active antennas per AP (0 = AP off), ``rho[l, k]`` the power
    AP ``l`` spends on UE ``k`` in W.
    """
    M = np.asarray(M, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ContractError("transmit powers must be non-negative")
    off = M <= 0
    if np.any(rho[off] > 0):
        bad = np.flatnonzero(off & (rho.sum(axis=1) > 0))
        raise ContractError(f"APs {bad.tolist()} transmit with zero active antennas")
    g = _coherent_gain(state, M)
    # amp[l, t, k] = sqrt(g_l * rho[l, t] * gamma[l, k])
    amp = np.sqrt(g[:, None] * rho)
    coherent = (amp.T @ np.sqrt(state.gamma)) ** 2  # [t, k]
    signal = np.diag(coherent)
    contamination = (state.copilot() * coherent).sum(axis=0)
    leak = state.beta - state.delta * state.gamma
    noncoherent = (rho.sum(axis=1)[:, None] * leak).sum(axis=0)
    return signal / (contamination + noncoherent + sigma2)


def spectral_efficiency(sinr, tau_c: int, tau_p: int) -> np.ndarray:
    sinr = np.asarray(sinr, dtype=float)
    return (tau_c - tau_p) / tau_c * np.log2(1.0 + sinr)
