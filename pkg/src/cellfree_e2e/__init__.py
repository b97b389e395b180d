"""Joint antenna activation and power allocation for cell-free massive MIMO
with a mmWave fronthaul."""

from .scenario import ScenarioConfig, build_deployment, load_config
from .access_channel import build_access_state, effective_sinr
from .fronthaul import build_fronthaul_plan, group_aps
from .power_model import coefficients, total_power
from .optimizer import (
    baseline_ap_shutdown,
    baseline_txmin,
    problem_from_deployment,
    solve_e2e,
)

__all__ = [
    "ScenarioConfig",
    "build_deployment",
    "load_config",
    "build_access_state",
    "effective_sinr",
    "build_fronthaul_plan",
    "group_aps",
    "coefficients",
    "total_power",
    "problem_from_deployment",
    "solve_e2e",
    "baseline_txmin",
    "baseline_ap_shutdown",
]
