"""mmWave LOS fronthaul: channels, AP grouping and zero-forcing gains."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .scenario import Deployment, ScenarioConfig

SPEED_OF_LIGHT = 299_792_458.0


class GroupingError(ValueError):
    pass


class RankDeficientGroup(np.linalg.LinAlgError):
    pass


def ula_response(angle: float, n: int) -> np.ndarray:
    """Half-wavelength ULA response, unit-modulus entries, broadside at 0 rad."""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def free_space_gain(distance, fc: float):
    return (SPEED_OF_LIGHT / (4.0 * np.pi * np.asarray(distance, dtype=float) * fc)) ** 2


@dataclass(frozen=True)
class FronthaulChannels:
    angle: np.ndarray  # azimuth of each AP seen from the cloud, relative to the array broadside (rad)
    beta: np.ndarray  # LOS gain per AP (linear)
    a_cloud: np.ndarray  # L x M_c
    a_ap: np.ndarray  # L x M_frh
    sigma2: float

    @property
    def L(self) -> int:
        return len(self.beta)

    def channel(self, l: int) -> np.ndarray:
        """``G_l`` (M_frh x M_c), rank one."""
        return np.sqrt(self.beta[l]) * np.outer(self.a_ap[l], self.a_cloud[l].conj())

    def cloud_vectors(self) -> np.ndarray:
        """Gain-scaled cloud-side directions, the input to grouping."""
        return np.sqrt(self.beta)[:, None] * self.a_cloud


@dataclass(frozen=True)
class ApGrouping:
    groups: tuple[tuple[int, ...], ...]
    objective: float
    L: int

    @property
    def I(self) -> int:
        return len(self.groups)

    @property
    def alpha(self) -> np.ndarray:
        a = np.zeros((self.L, self.I), dtype=int)
        for i, g in enumerate(self.groups):
            a[list(g), i] = 1
        return a

    def group_of(self) -> np.ndarray:
        out = np.empty(self.L, dtype=int)
        for i, g in enumerate(self.groups):
            out[list(g)] = i
        return out


@dataclass(frozen=True)
class FronthaulPlan:
    grouping: ApGrouping
    Lambda: np.ndarray
    equivalent: dict
    t: np.ndarray | None = None


def synthesize_channels(deployment: Deployment, config: ScenarioConfig) -> FronthaulChannels:
    offset = deployment.ap_positions - deployment.cloud_position
    dist = np.linalg.norm(offset, axis=1)
    if np.any(dist <= 0):
        raise ValueError("an AP coincides with the cloud")
    angle = np.arctan2(offset[:, 1], offset[:, 0]) - config.cloud_array_azimuth
    beta = free_space_gain(dist, config.fc_frh)
    a_cloud = np.array([ula_response(phi, config.M_c) for phi in angle])
    a_ap = np.array([ula_response(phi + np.pi, config.M_frh) for phi in angle])
    return FronthaulChannels(angle, beta, a_cloud, a_ap, config.sigma2_frh)


def equivalent_channels(channels: FronthaulChannels, grouping: ApGrouping) -> dict:
    """Per-AP equivalent channel row after analog beamforming at both ends.

    Entry ``j`` of AP ``l``'s vector is ``v_l^H G_l f_j`` where ``f_j`` is the
    matched cloud beam of the ``j``-th member of ``l``'s group. Combiner and
    beams are steering vectors scaled by ``1/sqrt(antennas)``.
    """
    M_frh = channels.a_ap.shape[1]
    M_c = channels.a_cloud.shape[1]
    out = {}
    for group in grouping.groups:
        F = channels.a_cloud[list(group)].T / np.sqrt(M_c)
        for l in group:
            v = channels.a_ap[l] / np.sqrt(M_frh)
            out[l] = v.conj() @ channels.channel(l) @ F
    return out


def chordal_matrix(vectors) -> np.ndarray:
    """Normalised inner-product magnitudes with a zero diagonal."""
    vectors = np.asarray(vectors)
    norms = np.linalg.norm(vectors, axis=1)
    for l in np.flatnonzero(norms == 0):
        raise ValueError(f"AP {l} has a zero-norm channel vector")
    unit = vectors / norms[:, None]
    zeta = np.clip(np.abs(unit.conj() @ unit.T), 0.0, 1.0)
    zeta = 0.5 * (zeta + zeta.T)
    np.fill_diagonal(zeta, 0.0)
    return zeta


def group_cost(zeta: np.ndarray, group) -> float:
    """``Tr(zeta A)`` for one group: both orientations of every pair."""
    total = 0.0
    for a, b in combinations(sorted(group), 2):
        total += 2.0 * zeta[a, b]
    return total


def grouping_objective(zeta: np.ndarray, groups) -> float:
    return max((group_cost(zeta, g) for g in groups), default=0.0)


def group_aps(zeta: np.ndarray, N_c: int, I: int | None = None) -> ApGrouping:
    """Exact min-max grouping by depth-first branch-and-bound.

    APs are placed in index order. A new group may only be opened in the
    lowest empty slot, which removes label symmetry. A branch is cut when the
    largest group cost it can still reach is no better than the incumbent.
    """
    zeta = np.asarray(zeta, dtype=float)
    L = zeta.shape[0]
    if I is None:
        I = math.ceil(L / N_c)
    if I * N_c < L:
        raise GroupingError(f"{I} groups of at most {N_c} APs cannot hold {L} APs")

    best_groups = _greedy_grouping(zeta, N_c, I)
    best = grouping_objective(zeta, best_groups)

    members: list[list[int]] = [[] for _ in range(I)]
    cost = [0.0] * I
    # 2 * zeta, precomputed as python lists for speed
    z2 = (2.0 * zeta).tolist()

    def lower_bound(nxt: int) -> float:
        bound = max(cost)
        for a in range(nxt, L):
            za = z2[a]
            cheapest = math.inf
            for g in range(I):
                if len(members[g]) < N_c:
                    c = cost[g] + sum(za[b] for b in members[g])
                    if c < cheapest:
                        cheapest = c
            if cheapest > bound:
                bound = cheapest
        return bound

    def search(a: int) -> None:
        nonlocal best, best_groups
        if a == L:
            value = max(cost)
            if value < best:
                best = value
                best_groups = [tuple(m) for m in members]
            return
        if lower_bound(a) >= best:
            return
        # remaining APs must fit in the remaining capacity
        za = z2[a]
        options = []
        opened_empty = False
        for g in range(I):
            if len(members[g]) >= N_c:
                continue
            if not members[g]:
                if opened_empty:
                    continue
                opened_empty = True
            added = sum(za[b] for b in members[g])
            options.append((cost[g] + added, g, added))
        options.sort()
        for new_cost, g, added in options:
            if new_cost >= best:
                break
            members[g].append(a)
            cost[g] += added
            search(a + 1)
            cost[g] -= added
            members[g].pop()

    search(0)
    groups = tuple(tuple(sorted(g)) for g in best_groups if g)
    groups = tuple(sorted(groups))
    return ApGrouping(groups, grouping_objective(zeta, groups), L)


def _greedy_grouping(zeta: np.ndarray, N_c: int, I: int) -> list[tuple[int, ...]]:
    """Feasible starting incumbent: each AP joins the group it disturbs least."""
    L = zeta.shape[0]
    members: list[list[int]] = [[] for _ in range(I)]
    cost = np.zeros(I)
    order = np.argsort(-zeta.sum(axis=1), kind="stable")
    for a in order:
        best_g, best_c = None, math.inf
        for g in range(I):
            if len(members[g]) >= N_c:
                continue
            c = cost[g] + 2.0 * zeta[a, members[g]].sum()
            if c < best_c:
                best_g, best_c = g, c
        members[best_g].append(int(a))
        cost[best_g] = best_c
    return [tuple(sorted(m)) for m in members]


def enumerate_groupings(L: int, N_c: int, I: int):
    """Yield every partition of ``range(L)`` into at most ``I`` groups of size <= ``N_c``."""

    def rec(a, groups):
        if a == L:
            yield [tuple(g) for g in groups]
            return
        for g in groups:
            if len(g) < N_c:
                g.append(a)
                yield from rec(a + 1, groups)
                g.pop()
        if len(groups) < I:
            groups.append([a])
            yield from rec(a + 1, groups)
            groups.pop()

    yield from rec(0, [])


def zf_gains(channels: FronthaulChannels, grouping: ApGrouping, sigma2: float | None = None):
    """Zero-forcing SNR per unit power, ``1 / (sigma2 [(G G^H)^-1]_ll)``."""
    sigma2 = channels.sigma2 if sigma2 is None else sigma2
    eq = equivalent_channels(channels, grouping)
    Lambda = np.zeros(channels.L)
    for i, group in enumerate(grouping.groups):
        G = np.array([eq[l] for l in group])
        gram = G @ G.conj().T
        if np.linalg.cond(gram) > 1e10:
            raise RankDeficientGroup(f"group {i} {list(group)} has linearly dependent channels")
        inv = np.linalg.inv(gram)
        Lambda[list(group)] = 1.0 / (sigma2 * np.real(np.diag(inv)))
    return Lambda


def fronthaul_rate(Lambda, p, t, B_frh: float):
    """Achievable fronthaul bit rate ``t B log2(1 + Lambda p)``."""
    return np.asarray(t) * B_frh * np.log2(1.0 + np.asarray(Lambda) * np.asarray(p))


def check_time_shares(t, tol: float = 1e-9) -> None:
    t = np.asarray(t, dtype=float)
    if np.any(t < -tol) or t.sum() > 1 + tol:
        raise ValueError(f"time shares must be >= 0 and sum to <= 1, got {t.tolist()}")


def build_fronthaul_plan(deployment: Deployment, config: ScenarioConfig) -> FronthaulPlan:
    channels = synthesize_channels(deployment, config)
    zeta = chordal_matrix(channels.cloud_vectors())
    grouping = group_aps(zeta, config.N_c, config.n_groups)
    Lambda = zf_gains(channels, grouping)
    return FronthaulPlan(grouping, Lambda, equivalent_channels(channels, grouping))


def min_power(Lambda, load, t, o72: float, B_frh: float):
    """Smallest ``p`` with ``t B log2(1 + Lambda p) >= o72 * load`` (inf when ``t = 0`` and load > 0)."""
    Lambda = np.asarray(Lambda, dtype=float)
    load = np.asarray(load, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        bits = np.where(load > 0, o72 * load / (np.asarray(t, dtype=float) * B_frh), 0.0)
        p = np.expm1(np.log(2.0) * bits) / Lambda
    return np.where(load > 0, p, 0.0)


def group_time_share(Lambda, load, o72: float, B_frh: float, P_f: float) -> float:
    """Shortest time share for which one group carries ``load`` within power ``P_f``.

    The group power needed is convex and decreasing in ``t``; Newton's method
    started left of the root (every AP alone on the full budget) climbs to it
    monotonically. Returns ``inf`` when even ``t = 1`` is not enough.
    """
    Lambda = np.asarray(Lambda, dtype=float)
    bits = o72 * np.asarray(load, dtype=float) / B_frh
    keep = bits > 0
    if not keep.any():
        return 0.0
    a = bits[keep] * math.log(2.0)
    lam = Lambda[keep]
    excess = lambda t: float(np.sum(np.expm1(a / t) / lam)) - P_f
    with np.errstate(over="ignore"):
        if excess(1.0) > 0:
            return math.inf
        t = float(np.max(a / np.log1p(lam * P_f)))
        for _ in range(100):
            f = excess(t)
            if f <= 1e-12 * P_f:
                break
            slope = float(np.sum(np.exp(a / t) * a / (lam * t * t)))
            step = f / slope
            t = min(t + step, 1.0)
            if step <= 1e-15 * t:
                break
    return t


def min_time_shares(Lambda, load, grouping: ApGrouping, o72: float, B_frh: float, P_f: float) -> np.ndarray:
    """Shortest time share per group that carries ``load`` (``inf`` where impossible)."""
    Lambda = np.asarray(Lambda, dtype=float)
    load = np.asarray(load, dtype=float)
    return np.array(
        [group_time_share(Lambda[list(g)], load[list(g)], o72, B_frh, P_f) for g in grouping.groups]
    )
