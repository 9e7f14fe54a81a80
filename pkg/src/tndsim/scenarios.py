"""Scenario specifications: structural-equation coefficients for the generator.

A scenario fixes one data-generating process over binary variables
(C, X, U, H, Y1, Y_other, W, T) in topological order. All variables are
Bernoulli so that every population-level quantity can be computed exactly by
enumerating the finite joint support; intercepts are calibrated against those
exact prevalences by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, NamedTuple


class InfectionCoeffs(NamedTuple):
    """Logit-scale coefficients for the target infection Y1."""

    intercept: float
    x: float
    c: float
    u: float
    h: float


class OtherInfectionCoeffs(NamedTuple):
    """Logit-scale coefficients for the competing (other) infection."""

    intercept: float
    x: float
    c: float
    u: float


class SymptomProbs(NamedTuple):
    """P(W=1) by infection state; both infections combine as a noisy-OR."""

    baseline: float
    if_y1: float
    if_other: float


class TestingCoeffs(NamedTuple):
    """Logit-scale coefficients for being tested."""

    intercept: float
    w: float
    x: float
    c: float
    wx: float
    h: float


@dataclass(frozen=True)
class ScenarioSpec:
    """One data-generating process for the comparison of study designs."""

    scenario_id: int
    p_c: float
    p_x_given_c: tuple[float, float]
    p_u: float
    p_h: float
    coef_y1: InfectionCoeffs
    coef_y_other: OtherInfectionCoeffs
    coef_w: SymptomProbs
    coef_t: TestingCoeffs

    def __post_init__(self):
        object.__setattr__(self, "coef_y1", InfectionCoeffs(*self.coef_y1))
        object.__setattr__(
            self, "coef_y_other", OtherInfectionCoeffs(*self.coef_y_other)
        )
        object.__setattr__(self, "coef_w", SymptomProbs(*self.coef_w))
        object.__setattr__(self, "coef_t", TestingCoeffs(*self.coef_t))
        object.__setattr__(self, "p_x_given_c", tuple(self.p_x_given_c))

    def validate(self) -> None:
        probs = (
            self.p_c,
            *self.p_x_given_c,
            self.p_u,
            self.p_h,
            *self.coef_w,
        )
        for p in probs:
            if not 0.0 <= p <= 1.0 or not math.isfinite(p):
                raise ValueError(f"probability {p!r} outside [0, 1]")
        if self.scenario_id not in (1, 2, 3):
            raise ValueError("scenario_id must be 1, 2, or 3")
        if self.scenario_id == 2 and not math.isclose(
            self.coef_y1.x, self.coef_y_other.x, rel_tol=0.0, abs_tol=1e-12
        ):
            raise ValueError(
                "scenario 2 requires equal X effects on both infections"
            )
        if self.scenario_id in (1, 2):
            if self.coef_y1.h != 0.0 or self.coef_t.h != 0.0:
                raise ValueError("scenarios 1-2 must have zero H loadings")
        else:
            if self.coef_y1.h == 0.0 or self.coef_t.h == 0.0:
                raise ValueError("scenario 3 needs nonzero H loadings on Y1 and T")
            if not 0.0 < self.p_h < 1.0:
                raise ValueError("scenario 3 needs P(H=1) strictly inside (0, 1)")

    def symptom_table(self) -> tuple[float, float, float, float]:
        """P(W=1 | y1, y_other) for states (0,0), (1,0), (0,1), (1,1).

        The target infection dominates symptomatology when both infections
        are present, so the (1,1) cell reuses the Y1 probability.
        """
        b, p1, p2 = self.coef_w
        return (b, p1, p2, p1)


def _bisect_intercept(
    prevalence: Callable[[float], float],
    target: float,
    lo: float = -40.0,
    hi: float = 10.0,
    tol: float = 1e-6,
) -> float:
    """Intercept at which an exact, increasing prevalence function hits target."""
    f_lo = prevalence(lo) - target
    f_hi = prevalence(hi) - target
    if f_lo > 0.0 or f_hi < 0.0:
        raise ValueError("target prevalence is not bracketed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = prevalence(mid) - target
        if abs(f_mid) < 1e-9 or hi - lo < 1e-13:
            return mid
        if f_mid < 0.0:
            lo = mid
        else:
            hi = mid
    if abs(prevalence(0.5 * (lo + hi)) - target) > tol:
        raise RuntimeError("intercept calibration did not reach tolerance")
    return 0.5 * (lo + hi)


# Default generator settings. The named scenarios share this base; scenario 2
# equalizes the X effects and scenario 3 switches on health-care seeking.
# Magnitudes matter: the risk factor drives testing mainly among the
# asymptomatic (t_wx ~ -t_x), which attenuates the tested-only analysis while
# keeping the test-positives-vs-controls comparison honest, and keeps enough
# asymptomatic test-positives for stable nuisance fits at small sample sizes.
# Scenario 3's health-care-seeking group is small but so heavily tested that
# its testing probability saturates; a common, mildly over-tested group would
# leave every coefficient almost unbiased at a 0.2% testing prevalence.
_BASE = dict(
    p_c=0.5,
    p_x_given_c_0=0.3775406687981454,  # expit(-0.5)
    p_x_given_c_1=0.6224593312018546,  # expit(+0.5)
    p_u=0.3,
    p_h=0.0,
    or_x=2.5,
    or_c=1.5,
    u_on_y1=0.0,
    h_on_y1=0.0,
    or_x_other=1.1,
    or_c_other=1.0,
    u_on_y_other=0.5,
    w_baseline=0.03,
    w_if_y1=0.55,
    w_if_other=0.25,
    t_w=2.8,
    t_x=1.5,
    t_c=0.5,
    t_wx=-1.5,
    prev_y1=0.05,
    prev_y_other=0.05,
    q0=0.002,
)

_SCENARIO_OVERRIDES: dict[int, dict[str, float]] = {
    1: {},
    2: {"or_x": 1.5, "or_x_other": 1.5},
    3: {
        "p_h": 0.0025,
        "h_on_y1": 3.0,
        "h_on_t": 6.3,
        "t_x": 2.4,
        "t_wx": -0.4,
        "prev_y1": 0.03,
        "prev_y_other": 0.045,
        "or_x_other": 1.8,
    },
}


def build_scenario(
    scenario_id: int, overrides: Mapping[str, float] | None = None
) -> ScenarioSpec:
    """Build a calibrated scenario; ``overrides`` replace any base setting.

    Recognized keys are the entries of the base settings table plus ``h_on_t``;
    intercepts are always recalibrated so that the exact prevalences of Y1,
    the other infection, and testing hit ``prev_y1``, ``prev_y_other``, and
    ``q0``.
    """
    from . import exact

    if scenario_id not in (1, 2, 3):
        raise ValueError("scenario_id must be 1, 2, or 3")
    settings = dict(_BASE, h_on_t=0.0)
    settings.update(_SCENARIO_OVERRIDES[scenario_id])
    if overrides:
        unknown = set(overrides) - set(settings)
        if unknown:
            raise ValueError(f"unknown scenario settings: {sorted(unknown)}")
        settings.update(overrides)
    s = settings

    spec = ScenarioSpec(
        scenario_id=scenario_id,
        p_c=s["p_c"],
        p_x_given_c=(s["p_x_given_c_0"], s["p_x_given_c_1"]),
        p_u=s["p_u"],
        p_h=s["p_h"],
        coef_y1=InfectionCoeffs(
            intercept=0.0,
            x=math.log(s["or_x"]),
            c=math.log(s["or_c"]),
            u=s["u_on_y1"],
            h=s["h_on_y1"],
        ),
        coef_y_other=OtherInfectionCoeffs(
            intercept=0.0,
            x=math.log(s["or_x_other"]),
            c=math.log(s["or_c_other"]),
            u=s["u_on_y_other"],
        ),
        coef_w=SymptomProbs(s["w_baseline"], s["w_if_y1"], s["w_if_other"]),
        coef_t=TestingCoeffs(
            intercept=0.0,
            w=s["t_w"],
            x=s["t_x"],
            c=s["t_c"],
            wx=s["t_wx"],
            h=s["h_on_t"],
        ),
    )

    b_y1 = _bisect_intercept(
        lambda b: exact.infection_prevalence(
            replace(spec, coef_y1=spec.coef_y1._replace(intercept=b))
        ),
        s["prev_y1"],
    )
    spec = replace(spec, coef_y1=spec.coef_y1._replace(intercept=b_y1))
    b_other = _bisect_intercept(
        lambda b: exact.other_infection_prevalence(
            replace(spec, coef_y_other=spec.coef_y_other._replace(intercept=b))
        ),
        s["prev_y_other"],
    )
    spec = replace(spec, coef_y_other=spec.coef_y_other._replace(intercept=b_other))
    b_t = _bisect_intercept(
        lambda b: exact.testing_prevalence_exact(
            replace(spec, coef_t=spec.coef_t._replace(intercept=b))
        ),
        s["q0"],
    )
    spec = replace(spec, coef_t=spec.coef_t._replace(intercept=b_t))
    spec.validate()
    return spec
