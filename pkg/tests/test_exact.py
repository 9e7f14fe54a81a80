"""Enumeration identifiability checks for the IPW construction."""

import math

import numpy as np
import pytest

from tndsim import exact
from tndsim.scenarios import (
    ScenarioSpec,
    build_scenario,
)
from tndsim.scenarios import InfectionCoeffs as _Y1
from tndsim.scenarios import OtherInfectionCoeffs as _YO
from tndsim.scenarios import SymptomProbs as _W
from tndsim.scenarios import TestingCoeffs as _T


def random_independence_spec(rng: np.random.Generator) -> ScenarioSpec:
    """A random all-binary process in which T never depends on Y1 directly.

    U and H do not load on Y1, so the construction X coefficient is the
    prospective parameter and the independence condition holds by structure.
    """
    spec = ScenarioSpec(
        scenario_id=1,
        p_c=rng.uniform(0.2, 0.8),
        p_x_given_c=(rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)),
        p_u=rng.uniform(0.1, 0.9),
        p_h=0.0,
        coef_y1=_Y1(
            intercept=rng.uniform(-4.0, -1.0),
            x=rng.uniform(-1.5, 1.5),
            c=rng.uniform(-1.0, 1.0),
            u=0.0,
            h=0.0,
        ),
        coef_y_other=_YO(
            intercept=rng.uniform(-4.0, -1.0),
            x=rng.uniform(-1.0, 1.0),
            c=rng.uniform(-1.0, 1.0),
            u=rng.uniform(0.0, 1.0),
        ),
        coef_w=_W(
            baseline=rng.uniform(0.005, 0.08),
            if_y1=rng.uniform(0.25, 0.9),
            if_other=rng.uniform(0.2, 0.8),
        ),
        coef_t=_T(
            intercept=rng.uniform(-8.0, -4.0),
            w=rng.uniform(1.0, 4.0),
            x=rng.uniform(-1.5, 1.5),
            c=rng.uniform(-1.0, 1.0),
            wx=rng.uniform(-1.5, 1.5),
            h=0.0,
        ),
    )
    spec.validate()
    return spec


class TestIpwOracle:
    def test_recovers_construction_beta_on_randomized_specs(self):
        rng = np.random.default_rng(2027)
        for _ in range(60):
            spec = random_independence_spec(rng)
            fit = exact.exact_ipw_fit(spec)
            assert abs(fit.coefficient("x") - spec.coef_y1.x) < 1e-6
            assert abs(fit.coefficient("c") - spec.coef_y1.c) < 1e-6
            assert abs(fit.coefficient("intercept") - spec.coef_y1.intercept) < 1e-6

    def test_oracle_sees_violation_in_scenario3(self, scenario3):
        # with a common cause of testing and infection the independence
        # condition fails, and the oracle no longer recovers the truth
        fit = exact.exact_ipw_fit(scenario3)
        assert abs(fit.coefficient("x") - scenario3.coef_y1.x) > 0.05


class TestPlims:
    def test_omitted_w_equals_tested_only(self, scenario1):
        ow = exact.plim_ipw(scenario1, ("x", "c"), ("x", "c"))
        tested = exact.plim_tested_only(scenario1)
        assert ow.coefficient("x") == pytest.approx(
            tested.coefficient("x"), abs=1e-6
        )

    def test_proper_tnd_targets_relative_parameter(self, scenario1):
        tnd = exact.plim_proper_tnd(scenario1)
        rel = exact.exact_relative_fit(scenario1)
        assert tnd.coefficient("x") == pytest.approx(rel.coefficient("x"), abs=5e-3)

    def test_correct_ipw_plim_near_truth(self, scenario1):
        fit = exact.plim_ipw(scenario1, ("x", "c", "w", "w*x"), ("x", "c", "w", "w*x"))
        assert math.exp(fit.coefficient("x")) == pytest.approx(2.5, rel=0.02)

    def test_estimator_target_separation_scenario2(self, scenario2):
        beta = math.log(1.5)
        beta_star = math.log(exact.exact_relative_or(scenario2))
        tnd = exact.plim_proper_tnd(scenario2).coefficient("x")
        tpc = exact.plim_testpos_vs_controls(scenario2).coefficient("x")
        ipw = exact.plim_ipw(
            scenario2, ("x", "c", "w", "w*x"), ("x", "c", "w", "w*x")
        ).coefficient("x")
        assert abs(tnd - beta_star) < 0.02
        assert abs(tpc - beta) < 0.05
        assert abs(ipw - beta) < 0.05
        assert beta_star < beta  # the two targets genuinely differ

    def test_q0_sensitivity_direction_and_saturated_invariance(self, scenario1):
        """Stage-2 intercept rises with assumed q0; with a saturated testing
        model the stage-3 coefficients are nearly invariant to it."""
        saturated = ("x", "c", "w", "w*x", "w*c", "x*c")
        q0_true = exact.testing_prevalence_exact(scenario1)
        results = {}
        for factor in (0.5, 1.0, 2.0):
            fit = exact.plim_ipw(
                scenario1,
                ("x", "c", "w", "w*x"),
                saturated,
                q0_assumed=q0_true * factor,
            )
            results[factor] = fit.coefficient("x")
        spread = max(results.values()) - min(results.values())
        assert spread < 0.01

    def test_stage2_intercept_increases_with_q0(self, scenario1):
        from tndsim.glm import fit_weighted_logistic

        q0_true = exact.testing_prevalence_exact(scenario1)
        cells = exact.cell_distribution(scenario1, ("x", "c", "w", "h"))
        tested = exact.cell_distribution(scenario1, ("x", "c", "w", "h"), tested=True)
        f1 = tested["mass"] / q0_true
        f0 = (cells["mass"] - tested["mass"]) / (1.0 - q0_true)
        intercepts = []
        for q0 in (q0_true * 0.5, q0_true, q0_true * 2.0):
            mass = q0 * f1 + (1 - q0) * f0
            response = np.where(mass > 0, q0 * f1 / np.where(mass > 0, mass, 1.0), 0.0)
            design = exact._cell_design(cells, ("x", "c", "w", "w*x"))
            fit = fit_weighted_logistic(design, response, mass)
            intercepts.append(fit.coefficient("intercept"))
        assert intercepts[0] < intercepts[1] < intercepts[2]
