"""Physical constants and reproducible network deployments."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised when a scenario configuration cannot be used."""


# Defaults that do not come from the published parameter table. They are
# reported in every run manifest.
ASSUMED_DEFAULTS = (
    "delta_tr",
    "N_DFT",
    "noise_figure_ac_db",
    "noise_figure_frh_db",
    "nu",
    "pathloss_exponent",
    "pathloss_intercept_db",
    "se_target",
    "cloud_array_azimuth",
)


@dataclass(frozen=True)
class ScenarioConfig:
    """All constants of one simulated network.

    ``K`` has no published default and must always be given. Everything else
    defaults to the simulation-parameter table, or to a documented
    engineering choice listed in :data:`ASSUMED_DEFAULTS`.
    """

    K: int
    L: int = 16
    M_ac: int = 16
    M_frh: int = 64
    M_c: int = 128
    N_c: int = 4
    B_ac: float = 20e6
    B_frh: float = 100e6
    f_s: float = 30.72e6
    T_s: float = 71.4e-6
    tau_c: int = 192
    tau_p: int = 8
    N_used: int = 1024
    N_DFT: int = 2048
    N_bits: int = 12
    P_t: float = 1.0
    P_f: float = 5.0
    pilot_power: float = 0.1
    noise_psd_dbm_hz: float = -174.0
    noise_figure_ac_db: float = 7.0
    noise_figure_frh_db: float = 7.0
    fc_ac: float = 2.5e9
    fc_frh: float = 28e9
    area_side: float = 1000.0
    P_st: float = 6.8
    delta_tr: float = 4.0
    P0_proc: float = 20.8
    delta_ap_proc: float = 74.0
    C_ap_max: float = 180.0
    delta_gpp_proc: float = 74.0
    C_gpp_max: float = 180.0
    P_fixed: float = 120.0
    P_comp: float = 20.8
    sigma_cool: float = 0.9
    se_target: float = 2.0
    sinr_targets: tuple[float, ...] | None = None
    nu: float = 0.95
    pathloss_exponent: float = 3.76
    pathloss_intercept_db: float = -34.53
    shadowing_db: float = 0.0
    # broadside of the cloud ULA; tilted so that mirror-image grid APs do not alias
    cloud_array_azimuth: float = math.pi / 8
    ap_positions: tuple[tuple[float, float], ...] | None = None

    @property
    def tau_d(self) -> int:
        return self.tau_c - self.tau_p

    @property
    def n_groups(self) -> int:
        return math.ceil(self.L / self.N_c)

    @property
    def sigma2_ac(self) -> float:
        return noise_power(self.noise_psd_dbm_hz, self.noise_figure_ac_db, self.B_ac)

    @property
    def sigma2_frh(self) -> float:
        return noise_power(self.noise_psd_dbm_hz, self.noise_figure_frh_db, self.B_frh)

    @property
    def o72(self) -> float:
        """Fronthaul bit rate (bit/s) carried per served UE under split 7.2."""
        return 2.0 * self.N_used * self.N_bits / self.T_s

    @property
    def bandwidth_ratio(self) -> float:
        return self.B_ac / 20e6

    @property
    def se_ratio(self) -> float:
        return self.se_target / 6.0

    def upsilon(self) -> np.ndarray:
        """Per-UE SINR targets (linear)."""
        if self.sinr_targets is not None:
            return np.asarray(self.sinr_targets, dtype=float)
        return np.full(self.K, sinr_for_se(self.se_target, self.tau_c, self.tau_p))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def noise_power(psd_dbm_hz: float, noise_figure_db: float, bandwidth: float) -> float:
    """Thermal noise power in W over ``bandwidth``."""
    dbm = psd_dbm_hz + noise_figure_db + 10.0 * math.log10(bandwidth)
    return 10.0 ** ((dbm - 30.0) / 10.0)


def sinr_for_se(se: float, tau_c: int, tau_p: int) -> float:
    """SINR needed to reach spectral efficiency ``se`` (bit/s/Hz) after pilot overhead."""
    return 2.0 ** (se * tau_c / (tau_c - tau_p)) - 1.0


def validate_config(config: ScenarioConfig) -> list[str]:
    """Return the invariants violated by ``config`` (empty when valid)."""
    problems = []
    for name in ("L", "K", "M_ac", "M_frh", "M_c", "N_c"):
        if getattr(config, name) < 1:
            problems.append(f"{name} >= 1")
    if config.N_c > config.M_c:
        problems.append("N_c <= M_c")
    if config.tau_p < 1:
        problems.append("tau_p >= 1")
    if config.tau_p >= config.tau_c:
        problems.append("tau_p < tau_c")
    for name in (
        "B_ac", "B_frh", "f_s", "T_s", "P_t", "P_f", "pilot_power", "fc_ac", "fc_frh",
        "area_side", "P_st", "delta_tr", "P0_proc", "delta_ap_proc", "C_ap_max",
        "delta_gpp_proc", "C_gpp_max", "P_fixed", "P_comp", "se_target",
    ):
        if not getattr(config, name) > 0:
            problems.append(f"{name} > 0")
    if not 0 < config.sigma_cool <= 1:
        problems.append("σ_cool ∈ (0,1]")
    if not 0 < config.nu <= 1:
        problems.append("nu ∈ (0,1]")
    if config.N_used > config.N_DFT:
        problems.append("N_used <= N_DFT")
    if config.sinr_targets is not None:
        if len(config.sinr_targets) != config.K:
            problems.append("len(sinr_targets) == K")
        if any(not v >= 0 for v in config.sinr_targets):
            problems.append("sinr_targets >= 0")
    if config.ap_positions is not None:
        if len(config.ap_positions) != config.L:
            problems.append("len(ap_positions) == L")
        elif any(not (0 <= c <= config.area_side) for p in config.ap_positions for c in p):
            problems.append("ap_positions inside the area")
    elif math.isqrt(config.L) ** 2 != config.L:
        problems.append("L is a perfect square (grid layout)")
    return problems


def load_config(path: str | Path, **overrides) -> ScenarioConfig:
    """Read a TOML config file.

    Keys are ``ScenarioConfig`` field names, either at top level or inside any
    one-level section (``[access]``, ``[power]``, ...). Sections named
    ``optimizer`` or ``experiment`` are ignored here.
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_mapping(raw, **overrides)


def config_from_mapping(raw: dict, **overrides) -> ScenarioConfig:
    names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    flat: dict = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key in ("optimizer", "experiment"):
                continue
            for sub, v in value.items():
                flat[sub] = v
        else:
            flat[key] = value
    flat.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(flat) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "K" not in flat:
        raise ConfigError("K (number of UEs) must be given; it has no default")
    if flat.get("sinr_targets") is not None:
        flat["sinr_targets"] = tuple(float(v) for v in flat["sinr_targets"])
    if flat.get("ap_positions") is not None:
        flat["ap_positions"] = tuple((float(x), float(y)) for x, y in flat["ap_positions"])
    return ScenarioConfig(**flat)


@dataclass(frozen=True)
class Deployment:
    ap_positions: np.ndarray
    ue_positions: np.ndarray
    cloud_position: np.ndarray
    seed: int = field(default=0)

    def __post_init__(self):
        for name in ("ap_positions", "ue_positions", "cloud_position"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def grid_positions(L: int, side: float) -> np.ndarray:
    n = math.isqrt(L)
    if n * n != L:
        raise ConfigError(f"grid AP layout needs L to be a perfect square, got L={L}")
    ticks = (np.arange(n) + 0.5) * side / n
    xx, yy = np.meshgrid(ticks, ticks, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def build_deployment(config: ScenarioConfig, seed: int) -> Deployment:
    """Grid (or explicit) APs, i.i.d. uniform UEs and a centred cloud."""
    if config.ap_positions is not None:
        aps = np.asarray(config.ap_positions, dtype=float)
    else:
        aps = grid_positions(config.L, config.area_side)
    rng = np.random.default_rng(seed % 2**64)
    ues = rng.uniform(0.0, config.area_side, size=(config.K, 2))
    cloud = np.array([config.area_side / 2, config.area_side / 2])
    return Deployment(aps, ues, cloud, int(seed))
