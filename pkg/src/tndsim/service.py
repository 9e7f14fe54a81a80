"""HTTP service exposing the simulator, estimators, and experiment runner.

The core package does all the work; this module only maps pydantic request
models onto it. The CLI is a thin client of these endpoints, either against a
running server or in-process.
"""

from __future__ import annotations

import io
import json
from dataclasses import replace

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from . import __version__
from .estimators import (
    EstimationError,
    bootstrap_ci,
    estimate_ipw,
    estimate_proper_tnd,
    estimate_tested_only,
    estimate_testpos_vs_controls,
    ipw_spec,
)
from .glm import GlmError
from .harness import (
    PROFILES,
    ExperimentConfig,
    ExperimentReport,
    read_replicates_csv,
    render_table,
    replicates_csv_text,
    report_to_json,
    run_experiment,
    summarize_records,
)
from .records import read_records_csv, records_csv_text, sample_from_records_csv
from .sampling import InsufficientStratumError, sample_case_control, sample_proper_tnd
from .scenarios import build_scenario
from .simulate import Population, generate_population

IPW_METHODS = {
    "ipw-correct": "correct",
    "ipw-missing-interaction": "missing-interaction",
    "ipw-omitted-w": "omitted-w",
    "ipw-omit-hcsb": "omit-hcsb",
    "ipw-adjust-hcsb": "adjust-hcsb",
}


class SimulateRequest(BaseModel):
    scenario: int = Field(1, ge=1, le=3)
    population_size: int = Field(200_000, ge=1)
    seed: int = 0
    scenario_overrides: dict[str, float] = Field(default_factory=dict)


class EstimateRequest(BaseModel):
    """One analysis on one sample.

    Provide either ``sample_csv`` (a pre-drawn study sample) or
    ``population_csv`` plus sampling sizes and a seed, in which case the
    design matching the method is drawn first.
    """

    method: str
    sample_csv: str | None = None
    population_csv: str | None = None
    n_tested: int = Field(400, ge=0)
    n_controls: int = Field(400, ge=0)
    seed: int = 0
    q0: float | None = None
    ci_level: float = Field(0.95, gt=0.0, lt=1.0)
    bootstrap_b: int = Field(0, ge=0, description="0 skips the bootstrap interval")


class EstimateResponse(BaseModel):
    method: str
    log_or: float
    odds_ratio: float
    coefficients: list[float]
    interval: tuple[float, float] | None
    interval_method: str | None
    diagnostics: dict


class ExperimentRequest(BaseModel):
    scenario: int = Field(1, ge=1, le=3)
    profile: str | None = None
    scenario_overrides: dict[str, float] = Field(default_factory=dict)
    population_size: int | None = None
    n_tested_sample: int | None = None
    n_controls: int | None = None
    replicates: int | None = None
    bootstrap_b: int | None = None
    ci_level: float = Field(0.95, gt=0.0, lt=1.0)
    methods: list[str] | None = None
    base_seed: int = 20200317
    fixed_population: bool = False
    q0_assumed: float | None = None
    threads: int = Field(1, ge=1)

    def to_config(self) -> ExperimentConfig:
        if self.profile is not None and self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        base = dict(PROFILES[self.profile]) if self.profile else {}
        for name in (
            "population_size",
            "n_tested_sample",
            "n_controls",
            "replicates",
            "bootstrap_b",
        ):
            value = getattr(self, name)
            if value is not None:
                base[name] = value
        return ExperimentConfig(
            scenario=self.scenario,
            scenario_overrides=self.scenario_overrides,
            ci_level=self.ci_level,
            methods=tuple(self.methods) if self.methods else None,
            base_seed=self.base_seed,
            fixed_population=self.fixed_population,
            q0_assumed=self.q0_assumed,
            threads=self.threads,
            **base,
        )


class ExperimentResponse(BaseModel):
    table: str
    report: dict
    replicates_csv: str


class ReportRequest(BaseModel):
    replicates_csv: str
    true_or: float
    true_relative_or: float
    scenario: int = 0
    realized_q0: float = 0.0


def _jsonable(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


app = FastAPI(title="tndsim", version=__version__)


@app.get("/healthz")
def healthz() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/simulate", response_class=PlainTextResponse)
def simulate(request: SimulateRequest) -> str:
    """Generate a population and return its complete-data CSV."""
    try:
        spec = build_scenario(request.scenario, request.scenario_overrides)
        population = generate_population(spec, request.population_size, request.seed)
    except ValueError as err:
        raise HTTPException(status_code=422, detail=str(err)) from err
    return records_csv_text(population.columns)


def _sample_for(request: EstimateRequest):
    if (request.sample_csv is None) == (request.population_csv is None):
        raise HTTPException(
            status_code=422,
            detail="provide exactly one of sample_csv or population_csv",
        )
    if request.sample_csv is not None:
        return sample_from_records_csv(
            io.StringIO(request.sample_csv), q0_assumed=request.q0
        )
    columns = read_records_csv(io.StringIO(request.population_csv))
    if np.any(np.isnan(columns["y1"])):
        raise HTTPException(
            status_code=422, detail="population CSV must carry complete outcomes"
        )
    columns["y1"] = columns["y1"].astype(np.int8)
    population = Population(columns=columns, spec=None, seed=0)
    try:
        if request.method in ("proper-tnd", "testpos-vs-controls"):
            return sample_proper_tnd(
                population, request.n_tested, request.n_controls, request.seed
            )
        return sample_case_control(
            population, request.n_tested, request.n_controls, request.seed
        )
    except (InsufficientStratumError, ValueError) as err:
        raise HTTPException(status_code=400, detail=str(err)) from err


KNOWN_METHODS = ("proper-tnd", "testpos-vs-controls", "tested-only", *IPW_METHODS)


@app.post("/estimate", response_model=EstimateResponse)
def estimate(request: EstimateRequest) -> EstimateResponse:
    """Run one analysis method on one sample."""
    if request.method not in KNOWN_METHODS:
        raise HTTPException(
            status_code=422, detail=f"unknown method {request.method!r}"
        )
    sample = _sample_for(request)
    try:
        if request.method == "proper-tnd":
            result = estimate_proper_tnd(sample, request.ci_level)
        elif request.method == "testpos-vs-controls":
            result = estimate_testpos_vs_controls(sample, request.ci_level)
        elif request.method == "tested-only":
            result = estimate_tested_only(sample, request.ci_level)
        elif request.method in IPW_METHODS:
            spec = ipw_spec(IPW_METHODS[request.method], q0=request.q0)
            result = estimate_ipw(sample, spec)
            if request.bootstrap_b:
                lower, upper, n_failed = bootstrap_ci(
                    sample,
                    spec,
                    b=request.bootstrap_b,
                    level=request.ci_level,
                    seed=request.seed,
                )
                result = replace(
                    result,
                    interval=(lower, upper),
                    interval_method="percentile-bootstrap",
                    diagnostics={**result.diagnostics, "bootstrap_failures": n_failed},
                )
    except (EstimationError, GlmError, InsufficientStratumError, ValueError) as err:
        raise HTTPException(status_code=400, detail=str(err)) from err
    return EstimateResponse(
        method=request.method,
        log_or=result.log_or,
        odds_ratio=result.odds_ratio,
        coefficients=[float(v) for v in result.all_coefficients],
        interval=result.interval,
        interval_method=result.interval_method,
        diagnostics={k: _jsonable(v) for k, v in result.diagnostics.items()},
    )


@app.post("/experiment", response_model=ExperimentResponse)
def experiment(request: ExperimentRequest) -> ExperimentResponse:
    """Run a full Monte Carlo experiment; may take minutes at desk scale."""
    try:
        config = request.to_config()
        config.validate()
        report, records = run_experiment(config)
    except (ValueError, EstimationError) as err:
        raise HTTPException(status_code=400, detail=str(err)) from err
    return ExperimentResponse(
        table=render_table(report),
        report=json.loads(report_to_json(report)),
        replicates_csv=replicates_csv_text(records),
    )


@app.post("/report", response_model=ExperimentResponse)
def rerender(request: ReportRequest) -> ExperimentResponse:
    """Re-aggregate and re-render a report from a per-replicate CSV."""
    try:
        records = read_replicates_csv(io.StringIO(request.replicates_csv))
        if not records:
            raise ValueError("replicates CSV contains no rows")
        methods = tuple(dict.fromkeys(r.method for r in records))
        summaries = summarize_records(
            records, request.true_or, request.true_relative_or, methods
        )
    except (ValueError, KeyError) as err:
        raise HTTPException(status_code=400, detail=str(err)) from err
    report = ExperimentReport(
        scenario=request.scenario,
        true_or=request.true_or,
        true_relative_or=request.true_relative_or,
        q0=request.realized_q0,
        replicates=len({r.replicate for r in records}),
        methods=summaries,
        config={"population_size": 0, "rerendered": True},
        metadata={"source": "re-rendered from per-replicate CSV"},
    )
    return ExperimentResponse(
        table=render_table(report),
        report=json.loads(report_to_json(report)),
        replicates_csv=request.replicates_csv,
    )
