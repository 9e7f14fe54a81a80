"""The four analysis methods compared in the study-design experiment.

Three logistic analyses (tested-only, proper TND, symptomatic test-positives
vs population controls) and the three-stage inverse-probability-weighted
estimator of the prospective risk-factor parameter, with case-control weights
for its testing model and a stratified percentile bootstrap for its interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import glm
from .records import Formula, StudySample, build_design, subset, _term_column
from .sampling import bootstrap_resample

POSITIVITY_FLOOR = 1e-6

IPW_VARIANTS = (
    "correct",
    "missing-interaction",
    "omitted-w",
    "omit-hcsb",
    "adjust-hcsb",
)

# Nuisance terms of the correctly specified implementation: the infection
# model is main-effects in (X, C, W); the testing model carries the W*X
# product present in the generating process.
_NUM_TERMS = ("x", "c", "w")
_DEN_TERMS = ("x", "c", "w", "w*x")


class EstimationError(Exception):
    """An analysis failed; ``stage`` identifies the nuisance fit for IPW."""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class Estimate:
    """One analysis result on the log-odds-ratio scale."""

    method_tag: str
    log_or: float
    all_coefficients: np.ndarray
    interval: tuple[float, float] | None = None
    interval_method: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def odds_ratio(self) -> float:
        return float(np.exp(self.log_or))


@dataclass(frozen=True)
class IpwSpec:
    """Model specification for one IPW implementation.

    ``q0`` is the assumed testing prevalence; left ``None`` it falls back to
    the prevalence recorded on the sample at recruitment time.
    """

    numerator_formula: Formula
    denominator_formula: Formula
    q0: float | None = None
    variant_tag: str = "correct"

    def __post_init__(self):
        if self.variant_tag not in IPW_VARIANTS:
            raise ValueError(f"unknown IPW variant {self.variant_tag!r}")
        num, den = self.numerator_formula.terms, self.denominator_formula.terms
        uses_w = any("w" in t.split("*") for t in num + den)
        if self.variant_tag == "omitted-w" and uses_w:
            raise ValueError("omitted-w variant must exclude W from both models")
        if self.variant_tag == "missing-interaction" and "w*x" in den:
            raise ValueError("missing-interaction variant must drop w*x from the testing model")

    def stage3_terms(self) -> tuple[str, ...]:
        if self.variant_tag == "adjust-hcsb":
            return ("x", "c", "h")
        return ("x", "c")


def ipw_spec(variant_tag: str = "correct", q0: float | None = None) -> IpwSpec:
    """Build the model specification for a named IPW implementation."""
    num, den = list(_NUM_TERMS), list(_DEN_TERMS)
    if variant_tag == "missing-interaction":
        den.remove("w*x")
    elif variant_tag == "omitted-w":
        num, den = ["x", "c"], ["x", "c"]
    elif variant_tag == "adjust-hcsb":
        num.insert(3, "h")
        den.append("h")
    elif variant_tag not in ("correct", "omit-hcsb"):
        raise ValueError(f"unknown IPW variant {variant_tag!r}")
    return IpwSpec(
        numerator_formula=Formula(outcome="y1", terms=tuple(num)),
        denominator_formula=Formula(outcome="t", terms=tuple(den)),
        q0=q0,
        variant_tag=variant_tag,
    )


def _fit_logistic_analysis(
    analysis: StudySample, method_tag: str, outcome: str, level: float
) -> Estimate:
    design, response = build_design(
        analysis, Formula(outcome=outcome, terms=("x", "c"))
    )
    fit = glm.fit_weighted_logistic(design, response)
    interval = glm.wald_interval(fit, design.column_labels.index("x"), level)
    return Estimate(
        method_tag=method_tag,
        log_or=fit.coefficient("x"),
        all_coefficients=fit.coefficients,
        interval=interval,
        interval_method="wald",
        diagnostics={"iterations": fit.iterations},
    )


def estimate_tested_only(sample: StudySample, level: float = 0.95) -> Estimate:
    """Naive logistic fit of Y1 on (X, C) among the tested; shows the collider bias."""
    analysis = subset(sample, lambda cols: cols["t"] == 1, design_tag="tested-only")
    if len(analysis) == 0:
        raise EstimationError("no tested records in sample")
    return _fit_logistic_analysis(analysis, "tested-only", "y1", level)


def estimate_proper_tnd(sample: StudySample, level: float = 0.95) -> Estimate:
    """Logistic fit of Y1 on (X, C) among the tested symptomatic (targets beta*)."""
    analysis = subset(
        sample,
        lambda cols: (cols["t"] == 1) & (cols["w"] == 1),
        design_tag="proper-tnd",
    )
    if len(analysis) == 0:
        raise EstimationError("no tested symptomatic records in sample")
    return _fit_logistic_analysis(analysis, "proper-tnd", "y1", level)


def estimate_testpos_vs_controls(sample: StudySample, level: float = 0.95) -> Estimate:
    """Symptomatic test-positives (1) vs untested controls (0) on (X, C)."""
    def keep(cols):
        positives = (cols["t"] == 1) & (cols["w"] == 1) & (
            np.nan_to_num(cols["y1"], nan=0.0) == 1.0
        )
        return positives | (cols["t"] == 0)

    analysis = subset(sample, keep)
    tested = analysis.columns["t"]
    if not (np.any(tested == 1) and np.any(tested == 0)):
        raise EstimationError("need both symptomatic test-positives and controls")
    # group membership coincides with tested status inside this subset
    return _fit_logistic_analysis(analysis, "testpos-vs-controls", "t", level)


def case_control_weights(sample: StudySample, q0: float) -> np.ndarray:
    """Weight q0 per tested record and (1-q0)/J per control, J = controls/tested.

    The weight total equals the number of tested records, and weighted fits of
    tested status recover population-scale testing probabilities.
    """
    if not 0.0 < q0 < 1.0:
        raise ValueError("q0 must be in (0, 1)")
    if sample.n_tested == 0 or sample.n_controls == 0:
        raise EstimationError("case-control weights need both strata present")
    ratio = sample.n_controls / sample.n_tested
    t = sample.columns["t"]
    return np.where(t == 1, q0, (1.0 - q0) / ratio)


def _staged(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except glm.GlmError as err:
        raise EstimationError(f"{stage} failed: {err}", stage=stage) from err


_PATTERN_BITS = ("y1", "t", "x", "c", "w", "h", "u")


def _pattern_table(sample: StudySample) -> dict[str, np.ndarray]:
    """Collapse the sample onto its distinct binary patterns.

    Every design a nuisance fit can build is constant within a pattern, so a
    fit on patterns weighted by their multiplicities equals the row-wise fit
    exactly. Masked outcomes enter the key as zero; only tested patterns ever
    have their outcome read.
    """
    cols = sample.columns
    key = np.nan_to_num(cols["y1"], nan=0.0).astype(np.int64)
    for bit, name in enumerate(_PATTERN_BITS[1:], start=1):
        key = key + (np.asarray(cols[name], dtype=np.int64) << bit)
    counts = np.bincount(key, minlength=1 << len(_PATTERN_BITS))
    present = np.flatnonzero(counts)
    table = {
        name: ((present >> bit) & 1).astype(float)
        for bit, name in enumerate(_PATTERN_BITS)
    }
    table["count"] = counts[present].astype(float)
    return table


def _pattern_design(
    table: dict[str, np.ndarray], terms: tuple[str, ...], rows: np.ndarray | None = None
) -> glm.DesignMatrix:
    select = slice(None) if rows is None else rows
    parts = [np.ones_like(table["count"][select])]
    labels = ["intercept"]
    for term in terms:
        parts.append(_term_column(table, term)[select])
        labels.append(term)
    return glm.DesignMatrix(np.column_stack(parts), tuple(labels))


def estimate_ipw(sample: StudySample, spec: IpwSpec) -> Estimate:
    """Three-stage IPW estimate of the prospective parameter.

    1. Fit the infection model among the tested (numerator).
    2. Fit the testing model on the full sample with case-control weights.
    3. Solve the inverse-probability-weighted score on the tested records,
       using the fitted infection probabilities as fractional responses and
       inverse fitted testing probabilities as weights.

    Internally the fits run on the sample's distinct binary patterns with
    multiplicity weights, which is exactly equivalent to row-wise fits. The
    interval is attached separately via :func:`bootstrap_ci`.
    """
    if sample.design_tag != "all-tested-plus-controls":
        raise EstimationError(
            f"IPW needs an all-tested-plus-controls sample, got {sample.design_tag!r}"
        )
    q0 = sample.q0_assumed if spec.q0 is None else spec.q0
    if q0 is None or not 0.0 < q0 < 1.0:
        raise ValueError("assumed testing prevalence q0 must be in (0, 1)")
    if sample.n_tested == 0 or sample.n_controls == 0:
        raise EstimationError("IPW needs both tested records and controls")

    table = _pattern_table(sample)
    tested = table["t"] == 1.0
    counts = table["count"]

    num_design = _pattern_design(table, spec.numerator_formula.terms, tested)
    num_fit = _staged(
        "numerator",
        glm.fit_weighted_logistic,
        num_design,
        table["y1"][tested],
        counts[tested],
    )
    q_hat = glm.predict(num_fit, num_design)

    den_design = _pattern_design(table, spec.denominator_formula.terms)
    ratio = sample.n_controls / sample.n_tested
    cc_weights = np.where(tested, q0, (1.0 - q0) / ratio) * counts
    den_fit = _staged(
        "denominator",
        glm.fit_weighted_logistic,
        den_design,
        table["t"],
        cc_weights,
    )
    p_hat = glm.predict(den_fit, _pattern_design(table, spec.denominator_formula.terms, tested))
    floored = int(np.sum(counts[tested][p_hat < POSITIVITY_FLOOR]))
    p_hat = np.maximum(p_hat, POSITIVITY_FLOOR)

    score_design = _pattern_design(table, spec.stage3_terms(), tested)
    ipw_weights = counts[tested] / p_hat
    score_fit = _staged(
        "score",
        glm.fit_weighted_logistic,
        score_design,
        q_hat,
        ipw_weights / np.mean(ipw_weights),
    )
    return Estimate(
        method_tag="ipw",
        log_or=score_fit.coefficient("x"),
        all_coefficients=score_fit.coefficients,
        diagnostics={
            "variant": spec.variant_tag,
            "q0": float(q0),
            "floored_weights": floored,
            "stage_iterations": (
                num_fit.iterations,
                den_fit.iterations,
                score_fit.iterations,
            ),
        },
    )


class BootstrapInterval(NamedTuple):
    lower: float
    upper: float
    n_failed: int


def bootstrap_ci(
    sample: StudySample,
    spec: IpwSpec,
    b: int = 500,
    level: float = 0.95,
    seed: int | np.random.SeedSequence = 0,
) -> BootstrapInterval:
    """Case-control percentile bootstrap interval for the IPW log odds ratio.

    Resampling is stratified on tested status. Replicates whose nuisance or
    score fits fail are dropped and counted; more than 10% failures aborts.
    Quantiles use linear interpolation between order statistics.
    """
    if b < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    children = seed.spawn(b)
    estimates = []
    n_failed = 0
    for child in children:
        resample = bootstrap_resample(sample, child)
        try:
            estimates.append(estimate_ipw(resample, spec).log_or)
        except (EstimationError, glm.GlmError):
            n_failed += 1
    if n_failed > 0.1 * b:
        raise EstimationError(
            f"{n_failed}/{b} bootstrap replicates failed; sample too unstable"
        )
    alpha = (1.0 - level) / 2.0
    lower, upper = np.percentile(estimates, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapInterval(float(lower), float(upper), n_failed)
