"""Seeded Monte-Carlo comparison of the three algorithms, with CSV output."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .access_channel import effective_sinr, spectral_efficiency
from .optimizer import BcdOptions, baseline_ap_shutdown, baseline_txmin, solve_e2e
from .problem import InfeasibleProblem, NetworkSolution, problem_from_deployment
from .scenario import ASSUMED_DEFAULTS, ScenarioConfig, build_deployment

log = logging.getLogger(__name__)

ALGORITHMS = ("e2e", "ap_shutdown", "txmin")

TRIAL_COLUMNS = (
    "trial",
    "seed",
    "algorithm",
    "status",
    "total_power_w",
    "radio_power_w",
    "cloud_power_w",
    "active_aps",
    "active_antennas",
    "mean_se",
    "audit_passed",
)

SUMMARY_STATS = ("total_power_w", "radio_power_w", "cloud_power_w", "active_aps", "active_antennas", "mean_se")


@dataclass(frozen=True)
class ExperimentSpec:
    config: ScenarioConfig
    trials: int = 200
    base_seed: int = 0
    algorithms: tuple[str, ...] = ALGORITHMS
    out_dir: Path | None = None
    options: BcdOptions = field(default_factory=BcdOptions)
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("at least one trial is needed")
        if not self.algorithms:
            raise ValueError("select at least one algorithm")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")
        if self.workers < 1:
            raise ValueError("workers >= 1")


@dataclass
class AlgorithmResult:
    status: str
    total_power_w: float = math.nan
    radio_power_w: float = math.nan
    cloud_power_w: float = math.nan
    active_aps: int = 0
    active_antennas: int = 0
    mean_se: float = math.nan
    solve_time_s: float = 0.0
    audit_passed: bool = False

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


@dataclass
class TrialRecord:
    trial: int
    seed: int
    results: dict[str, AlgorithmResult]

    def rows(self) -> list[dict]:
        out = []
        for name, res in self.results.items():
            row = {"trial": self.trial, "seed": self.seed, "algorithm": name}
            row.update({c: getattr(res, c) for c in TRIAL_COLUMNS[3:]})
            out.append(row)
        return out


def _summarise(sol: NetworkSolution, inputs, config: ScenarioConfig, elapsed: float) -> AlgorithmResult:
    if not sol.feasible:
        return AlgorithmResult(status=sol.status, solve_time_s=elapsed)
    if abs(sol.radio_power + sol.cloud_power - sol.total_power) > 1e-9 * abs(sol.total_power):
        raise ArithmeticError("radio and cloud power do not add up to the total")
    sinr = effective_sinr(inputs.access, sol.M, sol.rho, inputs.sigma2_ac)
    se = spectral_efficiency(sinr, config.tau_c, config.tau_p)
    return AlgorithmResult(
        status=sol.status,
        total_power_w=float(sol.total_power),
        radio_power_w=float(sol.radio_power),
        cloud_power_w=float(sol.cloud_power),
        active_aps=int(np.count_nonzero(sol.M)),
        active_antennas=int(round(float(np.sum(sol.M)))),
        mean_se=float(np.mean(se)),
        solve_time_s=elapsed,
        audit_passed=bool(sol.audit is not None and sol.audit.passed),
    )


def run_trial(config: ScenarioConfig, trial: int, seed: int, algorithms, options: BcdOptions) -> TrialRecord:
    """Build one deployment and run every requested algorithm on it."""
    inputs = problem_from_deployment(config, build_deployment(config, seed))
    runners = {
        "e2e": lambda: solve_e2e(inputs, options),
        "ap_shutdown": lambda: baseline_ap_shutdown(inputs, options),
        "txmin": lambda: baseline_txmin(inputs),
    }
    results = {}
    for name in algorithms:
        t0 = time.perf_counter()
        try:
            sol = runners[name]()
        except InfeasibleProblem:
            results[name] = AlgorithmResult(status="infeasible", solve_time_s=time.perf_counter() - t0)
            continue
        results[name] = _summarise(sol, inputs, config, time.perf_counter() - t0)
        log.info("trial %d %s: %s %.1f W", trial, name, results[name].status, results[name].total_power_w)
    return TrialRecord(trial, seed, results)


def _run_indexed(args):
    return run_trial(*args)


def summarise(records: list[TrialRecord], algorithms) -> list[dict]:
    """Per-algorithm means and standard deviations over the trials every algorithm solved.

    A trial that any algorithm fails is excluded for all of them, so the
    savings compare the same deployments.
    """
    kept = [rec for rec in records if all(rec.results[a].feasible for a in algorithms)]
    excluded = len(records) - len(kept)
    means = {}
    rows = []
    for name in algorithms:
        row = {"algorithm": name, "trials": len(records), "included": len(kept), "excluded": excluded}
        for stat in SUMMARY_STATS:
            vals = np.array([getattr(rec.results[name], stat) for rec in kept], dtype=float)
            row[f"mean_{stat}"] = float(vals.mean()) if len(vals) else math.nan
            row[f"std_{stat}"] = float(vals.std(ddof=1)) if len(vals) > 1 else math.nan
        means[name] = row["mean_total_power_w"]
        rows.append(row)
    for row in rows:
        for base in algorithms:
            row[f"savings_vs_{base}_pct"] = savings(means[row["algorithm"]], means[base])
    return rows


def savings(p_new: float, p_base: float) -> float:
    """Percentage power saved relative to a baseline."""
    if not p_base > 0:
        return math.nan
    return 100.0 * (1.0 - p_new / p_base)


def _check_writable(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write-test"
    with open(probe, "w") as fh:
        fh.write("")
    probe.unlink()


def run_experiment(spec: ExperimentSpec) -> tuple[list[TrialRecord], list[dict]]:
    """Run ``spec.trials`` trials (trial ``i`` uses seed ``base_seed + i``)."""
    if spec.out_dir is not None:
        _check_writable(Path(spec.out_dir))
    jobs = [(spec.config, i, spec.base_seed + i, spec.algorithms, spec.options) for i in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            records = list(pool.map(_run_indexed, jobs))
    else:
        records = [_run_indexed(job) for job in jobs]
    records.sort(key=lambda rec: rec.trial)
    summary = summarise(records, spec.algorithms)
    if spec.out_dir is not None:
        emit_outputs(records, summary, spec)
    return records, summary


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, columns, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def manifest_lines(spec: ExperimentSpec) -> list[str]:
    lines = ["[scenario]"]
    for f in dataclasses.fields(ScenarioConfig):
        note = " (assumed default)" if f.name in ASSUMED_DEFAULTS else ""
        lines.append(f"{f.name}={getattr(spec.config, f.name)}{note}")
    lines.append("[optimizer]")
    for f in dataclasses.fields(BcdOptions):
        value = getattr(spec.options, f.name)
        note = " (assumed default)" if f.name != "trace_path" else ""
        if value is None and f.name in ("lambda1", "lambda2"):
            value = "10*max(c2+c1*tau_S, c3+c4*M_ac)"
        lines.append(f"{f.name}={value}{note}")
    lines.append("[experiment]")
    lines.append(f"trials={spec.trials}")
    lines.append(f"base_seed={spec.base_seed}")
    lines.append(f"algorithms={','.join(spec.algorithms)}")
    lines.append("cloud_power_includes=fronthaul transmit power delta_tr*sum(p_bar)")
    lines.append("solve times are in timings.csv; trials.csv is reproducible byte for byte")
    return lines


def emit_outputs(records: list[TrialRecord], summary: list[dict], spec: ExperimentSpec) -> dict[str, Path]:
    """Write trials.csv, summary.csv, timings.csv and manifest.txt into ``spec.out_dir``."""
    if not records:
        raise ValueError("no records to write")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("trials.csv", "summary.csv", "timings.csv", "manifest.txt")}

    rows = [row for rec in records for row in rec.rows()]
    _write_csv(paths["trials.csv"], TRIAL_COLUMNS, rows)
    _write_csv(paths["summary.csv"], list(summary[0].keys()), summary)
    timing = [
        {"trial": rec.trial, "algorithm": name, "solve_time_s": res.solve_time_s}
        for rec in records
        for name, res in rec.results.items()
    ]
    _write_csv(paths["timings.csv"], ("trial", "algorithm", "solve_time_s"), timing)
    try:
        paths["manifest.txt"].write_text("\n".join(manifest_lines(spec)) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {paths['manifest.txt']}: {exc}") from exc
    return paths


def read_trials(path) -> list[dict]:
    """Parse a trials.csv back into typed rows."""
    ints = {"trial", "seed", "active_aps", "active_antennas"}
    floats = {"total_power_w", "radio_power_w", "cloud_power_w", "mean_se"}
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for key, value in raw.items():
                if key in ints:
                    row[key] = int(value)
                elif key in floats:
                    row[key] = float(value)
                elif key == "audit_passed":
                    row[key] = value == "true"
                else:
                    row[key] = value
            rows.append(row)
    return rows
