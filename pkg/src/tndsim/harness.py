"""Replicated Monte Carlo experiment runner and Table-1-style reporting.

Each replicate regenerates a population (unless a fixed population is
requested), draws one case-control sample and one TND sample, runs the
configured analyses, and records one CSV row per method. Seeds for every
stage derive deterministically from (base_seed, replicate index, method), so
reports are bitwise reproducible for any thread count.
"""

from __future__ import annotations

import csv
import io
import json
import zlib

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import estimators as est
from .sampling import sample_case_control, sample_proper_tnd
from .scenarios import ScenarioSpec, build_scenario
from .simulate import (
    Population,
    generate_population,
    true_prospective_or,
    true_relative_or,
)

ALL_METHODS = (
    "proper-tnd",
    "testpos-vs-controls",
    "tested-only",
    "ipw-correct",
    "ipw-missing-interaction",
    "ipw-omitted-w",
    "ipw-omit-hcsb",
    "ipw-adjust-hcsb",
)

DEFAULT_METHODS = {
    1: (
        "proper-tnd",
        "testpos-vs-controls",
        "tested-only",
        "ipw-correct",
        "ipw-missing-interaction",
        "ipw-omitted-w",
    ),
    2: (
        "proper-tnd",
        "testpos-vs-controls",
        "tested-only",
        "ipw-correct",
        "ipw-missing-interaction",
        "ipw-omitted-w",
    ),
    3: (
        "proper-tnd",
        "testpos-vs-controls",
        "tested-only",
        "ipw-omit-hcsb",
        "ipw-adjust-hcsb",
    ),
}

PROFILES = {
    "desk": dict(
        population_size=200_000,
        n_tested_sample=400,
        n_controls=400,
        replicates=300,
        bootstrap_b=200,
    ),
    "paper": dict(
        population_size=1_000_000,
        n_tested_sample=2000,
        n_controls=2000,
        replicates=1000,
        bootstrap_b=500,
    ),
}

CSV_COLUMNS = (
    "replicate",
    "method",
    "status",
    "log_or",
    "odds_ratio",
    "ci_lower",
    "ci_upper",
    "interval_method",
    "n_tested",
    "n_controls",
    "q0_assumed",
    "bootstrap_failures",
    "floored_weights",
    "error",
)

TRUTH_POPULATION_SIZE = 1_000_000


@dataclass(frozen=True)
class ExperimentConfig:
    """Full specification of one Monte Carlo experiment."""

    scenario: int = 1
    scenario_overrides: dict = field(default_factory=dict)
    population_size: int = 200_000
    n_tested_sample: int = 400
    n_controls: int = 400
    replicates: int = 300
    bootstrap_b: int = 200
    ci_level: float = 0.95
    methods: tuple[str, ...] | None = None
    base_seed: int = 20200317
    fixed_population: bool = False
    q0_assumed: float | None = None
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scenario_overrides", dict(self.scenario_overrides))
        if self.methods is not None:
            object.__setattr__(self, "methods", tuple(self.methods))

    def validate(self) -> None:
        counts = (
            self.population_size,
            self.n_tested_sample,
            self.n_controls,
            self.replicates,
            self.bootstrap_b,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all experiment counts must be positive")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must be in (0, 1)")
        if not self.method_list():
            raise ValueError("method list must be nonempty")
        unknown = set(self.method_list()) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    def method_list(self) -> tuple[str, ...]:
        if self.methods is not None:
            return self.methods
        return DEFAULT_METHODS[self.scenario]

    def resolved_spec(self) -> ScenarioSpec:
        return build_scenario(self.scenario, self.scenario_overrides)


def config_from_profile(
    scenario: int, profile: str = "desk", **overrides
) -> ExperimentConfig:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    settings = dict(PROFILES[profile])
    settings.update(overrides)
    return ExperimentConfig(scenario=scenario, **settings)


def load_config(buffer) -> ExperimentConfig:
    """Read an ExperimentConfig from TOML (nested sections mirror the fields)."""
    if isinstance(buffer, (str, bytes)):
        data = tomllib.loads(buffer if isinstance(buffer, str) else buffer.decode())
    else:
        data = tomllib.load(buffer)
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(data) - known - {"profile"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    profile = data.pop("profile", None)
    if "methods" in data:
        data["methods"] = tuple(data["methods"])
    if profile is not None:
        scenario = data.pop("scenario", 1)
        return config_from_profile(scenario, profile, **data)
    return ExperimentConfig(**data)


@dataclass(frozen=True)
class ReplicateRecord:
    """Outcome of one method on one replicate."""

    replicate: int
    method: str
    estimate: est.Estimate | None
    error: str | None
    n_tested: int
    n_controls: int
    q0_assumed: float | None
    bootstrap_failures: int = 0

    @property
    def ok(self) -> bool:
        return self.estimate is not None


def _method_seed(base_seed: int, replicate_index: int, method: str, purpose: str) -> np.random.SeedSequence:
    tag = zlib.crc32(f"{method}:{purpose}".encode())
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(replicate_index, tag))


def _replicate_seed(base_seed: int, replicate_index: int, purpose: str) -> np.random.SeedSequence:
    tag = zlib.crc32(purpose.encode())
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(replicate_index, tag))


_IPW_VARIANTS = {
    "ipw-correct": "correct",
    "ipw-missing-interaction": "missing-interaction",
    "ipw-omitted-w": "omitted-w",
    "ipw-omit-hcsb": "omit-hcsb",
    "ipw-adjust-hcsb": "adjust-hcsb",
}


def run_replicate(
    config: ExperimentConfig,
    replicate_index: int,
    spec: ScenarioSpec | None = None,
    population: Population | None = None,
) -> list[ReplicateRecord]:
    """Run every configured method once; failures are recorded, not raised."""
    if spec is None:
        spec = config.resolved_spec()
    if population is None:
        pop_seed = _replicate_seed(config.base_seed, replicate_index, "population")
        population = generate_population(
            spec, config.population_size, int(pop_seed.generate_state(1)[0])
        )
    cols = population.columns
    tested_avail = int(np.sum(cols["t"] == 1))
    tnd_avail = int(np.sum((cols["t"] == 1) & (cols["w"] == 1)))

    methods = config.method_list()
    needs_cc = any(m == "tested-only" or m in _IPW_VARIANTS for m in methods)
    needs_tnd = any(m in ("proper-tnd", "testpos-vs-controls") for m in methods)

    cc = tnd = None
    if needs_cc:
        cc = sample_case_control(
            population,
            min(config.n_tested_sample, tested_avail),
            config.n_controls,
            _replicate_seed(config.base_seed, replicate_index, "case-control"),
        )
    if needs_tnd:
        tnd = sample_proper_tnd(
            population,
            min(config.n_tested_sample, tnd_avail),
            config.n_controls,
            _replicate_seed(config.base_seed, replicate_index, "proper-tnd"),
        )

    records = []
    for method in methods:
        sample = tnd if method in ("proper-tnd", "testpos-vs-controls") else cc
        bootstrap_failures = 0
        error = None
        estimate = None
        try:
            if method == "proper-tnd":
                estimate = est.estimate_proper_tnd(sample, config.ci_level)
            elif method == "testpos-vs-controls":
                estimate = est.estimate_testpos_vs_controls(sample, config.ci_level)
            elif method == "tested-only":
                estimate = est.estimate_tested_only(sample, config.ci_level)
            else:
                ipw = est.ipw_spec(_IPW_VARIANTS[method], q0=config.q0_assumed)
                estimate = est.estimate_ipw(sample, ipw)
                ci_seed = _method_seed(
                    config.base_seed, replicate_index, method, "bootstrap"
                )
                lower, upper, bootstrap_failures = est.bootstrap_ci(
                    sample,
                    ipw,
                    b=config.bootstrap_b,
                    level=config.ci_level,
                    seed=ci_seed,
                )
                estimate = replace(
                    estimate,
                    interval=(lower, upper),
                    interval_method="percentile-bootstrap",
                )
        except Exception as exc:
            estimate = None
            error = f"{type(exc).__name__}: {exc}"
        records.append(
            ReplicateRecord(
                replicate=replicate_index,
                method=method,
                estimate=estimate,
                error=error,
                n_tested=sample.n_tested if sample is not None else 0,
                n_controls=sample.n_controls if sample is not None else 0,
                q0_assumed=sample.q0_assumed if sample is not None else None,
                bootstrap_failures=bootstrap_failures,
            )
        )
    return records


@dataclass(frozen=True)
class MethodSummary:
    method: str
    n_ok: int
    failures: int
    mean_est: float | None
    mc_se: float | None
    coverage_beta: float | None
    coverage_beta_star: float | None
    mean_bootstrap_failures: float = 0.0


@dataclass(frozen=True)
class ExperimentReport:
    scenario: int
    true_or: float
    true_relative_or: float
    q0: float
    replicates: int
    methods: tuple[MethodSummary, ...]
    config: dict
    metadata: dict


REPORT_NOTES = {
    "intervals": "Wald intervals from the model covariance for the logistic "
    "analyses; stratified percentile bootstrap for IPW.",
    "coverage": "Coverage is reported against both the prospective and the "
    "symptom-conditional (relative) parameter for every method.",
    "testing_model_interaction": "The misspecified testing model omits the "
    "W*X product term.",
    "mc_se": "MC SE is the standard deviation of the log odds ratio across "
    "successful replicates.",
}


def summarize_records(
    records: list[ReplicateRecord],
    true_or: float,
    true_relative_or: float,
    methods: tuple[str, ...],
) -> tuple[MethodSummary, ...]:
    log_beta = float(np.log(true_or))
    log_beta_star = float(np.log(true_relative_or))
    summaries = []
    for method in methods:
        rows = [r for r in records if r.method == method]
        ok = [r for r in rows if r.ok]
        failures = len(rows) - len(ok)
        if not ok:
            summaries.append(
                MethodSummary(method, 0, failures, None, None, None, None)
            )
            continue
        log_ors = np.array([r.estimate.log_or for r in ok])
        intervals = [r.estimate.interval for r in ok if r.estimate.interval]
        cov_b = cov_s = None
        if intervals:
            arr = np.array(intervals)
            cov_b = float(
                100.0 * np.mean((arr[:, 0] <= log_beta) & (log_beta <= arr[:, 1]))
            )
            cov_s = float(
                100.0
                * np.mean((arr[:, 0] <= log_beta_star) & (log_beta_star <= arr[:, 1]))
            )
        summaries.append(
            MethodSummary(
                method=method,
                n_ok=len(ok),
                failures=failures,
                mean_est=float(np.exp(np.mean(log_ors))),
                mc_se=float(np.std(log_ors, ddof=1)) if len(ok) > 1 else 0.0,
                coverage_beta=cov_b,
                coverage_beta_star=cov_s,
                mean_bootstrap_failures=float(
                    np.mean([r.bootstrap_failures for r in ok])
                ),
            )
        )
    return tuple(summaries)


def run_experiment(config: ExperimentConfig) -> tuple[ExperimentReport, list[ReplicateRecord]]:
    """Run all replicates and aggregate; returns the report and raw records."""
    config.validate()
    spec = config.resolved_spec()

    true_or = true_prospective_or(spec)
    truth_seed = _replicate_seed(config.base_seed, 0, "truth-population")
    truth_pop = generate_population(
        spec,
        max(config.population_size, TRUTH_POPULATION_SIZE),
        int(truth_seed.generate_state(1)[0]),
    )
    true_rel_or = true_relative_or(truth_pop)
    realized_q0 = float(np.mean(truth_pop.columns["t"] == 1))

    shared_population = None
    if config.fixed_population:
        pop_seed = _replicate_seed(config.base_seed, 0, "fixed-population")
        shared_population = generate_population(
            spec, config.population_size, int(pop_seed.generate_state(1)[0])
        )
    del truth_pop

    def one(i: int) -> list[ReplicateRecord]:
        return run_replicate(config, i, spec=spec, population=shared_population)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            per_replicate = list(pool.map(one, range(config.replicates)))
    else:
        per_replicate = [one(i) for i in range(config.replicates)]
    records = [rec for sub in per_replicate for rec in sub]

    methods = config.method_list()
    summaries = summarize_records(records, true_or, true_rel_or, methods)
    all_failed = [s.method for s in summaries if s.n_ok == 0]
    if all_failed:
        raise est.EstimationError(
            f"every replicate failed for methods: {all_failed}"
        )
    config_echo = asdict(config)
    config_echo["methods"] = list(methods)
    report = ExperimentReport(
        scenario=config.scenario,
        true_or=true_or,
        true_relative_or=true_rel_or,
        q0=realized_q0,
        replicates=config.replicates,
        methods=summaries,
        config=config_echo,
        metadata=dict(REPORT_NOTES),
    )
    return report, records


# ---------------------------------------------------------------------------
# Persistence and rendering


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_replicates_csv(buffer, records: list[ReplicateRecord]) -> None:
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sorted(records, key=lambda r: (r.replicate, r.method)):
        e = r.estimate
        writer.writerow(
            [
                r.replicate,
                r.method,
                "ok" if r.ok else "failed",
                _fmt(e.log_or if e else None),
                _fmt(e.odds_ratio if e else None),
                _fmt(e.interval[0] if e and e.interval else None),
                _fmt(e.interval[1] if e and e.interval else None),
                (e.interval_method if e and e.interval_method else ""),
                r.n_tested,
                r.n_controls,
                _fmt(r.q0_assumed),
                r.bootstrap_failures,
                (e.diagnostics.get("floored_weights", 0) if e else 0),
                r.error or "",
            ]
        )


def replicates_csv_text(records: list[ReplicateRecord]) -> str:
    out = io.StringIO()
    write_replicates_csv(out, records)
    return out.getvalue()


def read_replicates_csv(buffer) -> list[ReplicateRecord]:
    reader = csv.DictReader(buffer)
    records = []
    for row in reader:
        ok = row["status"] == "ok"
        estimate = None
        if ok:
            interval = None
            if row["ci_lower"] != "" and row["ci_upper"] != "":
                interval = (float(row["ci_lower"]), float(row["ci_upper"]))
            estimate = est.Estimate(
                method_tag=row["method"],
                log_or=float(row["log_or"]),
                all_coefficients=np.array([]),
                interval=interval,
                interval_method=row["interval_method"] or None,
                diagnostics={"floored_weights": int(row["floored_weights"] or 0)},
            )
        records.append(
            ReplicateRecord(
                replicate=int(row["replicate"]),
                method=row["method"],
                estimate=estimate,
                error=row["error"] or None,
                n_tested=int(row["n_tested"]),
                n_controls=int(row["n_controls"]),
                q0_assumed=float(row["q0_assumed"]) if row["q0_assumed"] else None,
                bootstrap_failures=int(row["bootstrap_failures"] or 0),
            )
        )
    return records


def render_table(report: ExperimentReport) -> str:
    """Fixed-width summary table in the style of the simulation-study results."""
    lines = [
        f"Scenario {report.scenario} ({report.replicates} replicates, "
        f"population {report.config['population_size']:,})",
        f"True OR exp(beta)           = {report.true_or:.2f}",
        f"True relative OR exp(beta*) = {report.true_relative_or:.2f}",
        f"Realized testing prevalence = {report.q0:.6f}",
        "",
        f"{'Method':<26}{'Mean est':>10}{'MC SE':>8}{'% Cov b':>9}{'% Cov b*':>10}"
        f"{'Fail':>6}",
    ]
    for s in report.methods:
        mean = f"{s.mean_est:.2f}" if s.mean_est is not None else "-"
        se = f"{s.mc_se:.2f}" if s.mc_se is not None else "-"
        cb = f"{round(s.coverage_beta)}" if s.coverage_beta is not None else "-"
        cs = (
            f"{round(s.coverage_beta_star)}"
            if s.coverage_beta_star is not None
            else "-"
        )
        lines.append(
            f"{s.method:<26}{mean:>10}{se:>8}{cb:>9}{cs:>10}{s.failures:>6}"
        )
    return "\n".join(lines) + "\n"


def report_to_json(report: ExperimentReport) -> str:
    payload = {
        "scenario": report.scenario,
        "truth": {
            "true_or": report.true_or,
            "true_relative_or": report.true_relative_or,
            "realized_q0": report.q0,
        },
        "replicates": report.replicates,
        "methods": [asdict(s) for s in report.methods],
        "config": report.config,
        "metadata": report.metadata,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
