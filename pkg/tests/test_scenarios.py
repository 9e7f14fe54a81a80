import math

import numpy as np
import pytest

from tndsim import exact
from tndsim.scenarios import ScenarioSpec, build_scenario


class TestCalibration:
    @pytest.mark.parametrize("scenario_id", [1, 2, 3])
    def test_targets_hit_exactly(self, scenario_id):
        spec = build_scenario(scenario_id)
        q_target = 0.002
        assert exact.testing_prevalence_exact(spec) == pytest.approx(
            q_target, abs=1e-6
        )
        prev = 0.03 if scenario_id == 3 else 0.05
        assert exact.infection_prevalence(spec) == pytest.approx(prev, abs=1e-6)

    def test_construction_or(self, scenario1, scenario2):
        assert math.exp(scenario1.coef_y1.x) == pytest.approx(2.5, abs=1e-12)
        assert math.exp(scenario2.coef_y1.x) == pytest.approx(1.5, abs=1e-12)

    def test_overrides_respected(self):
        spec = build_scenario(1, {"or_x": 2.0, "q0": 0.004})
        assert math.exp(spec.coef_y1.x) == pytest.approx(2.0)
        assert exact.testing_prevalence_exact(spec) == pytest.approx(0.004, abs=1e-6)

    def test_unknown_override_rejected(self):
        with pytest.raises(ValueError):
            build_scenario(1, {"nonsense": 1.0})

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError):
            build_scenario(4)


class TestValidation:
    def test_scenario2_requires_equal_x_effects(self, scenario2):
        bad = ScenarioSpec(
            scenario_id=2,
            p_c=scenario2.p_c,
            p_x_given_c=scenario2.p_x_given_c,
            p_u=scenario2.p_u,
            p_h=scenario2.p_h,
            coef_y1=scenario2.coef_y1._replace(x=math.log(2.0)),
            coef_y_other=scenario2.coef_y_other,
            coef_w=scenario2.coef_w,
            coef_t=scenario2.coef_t,
        )
        with pytest.raises(ValueError):
            bad.validate()

    def test_scenario1_rejects_h_loadings(self, scenario1):
        bad = ScenarioSpec(
            scenario_id=1,
            p_c=scenario1.p_c,
            p_x_given_c=scenario1.p_x_given_c,
            p_u=scenario1.p_u,
            p_h=scenario1.p_h,
            coef_y1=scenario1.coef_y1._replace(h=0.5),
            coef_y_other=scenario1.coef_y_other,
            coef_w=scenario1.coef_w,
            coef_t=scenario1.coef_t,
        )
        with pytest.raises(ValueError):
            bad.validate()

    def test_scenario3_requires_h_loadings(self, scenario3):
        bad = ScenarioSpec(
            scenario_id=3,
            p_c=scenario3.p_c,
            p_x_given_c=scenario3.p_x_given_c,
            p_u=scenario3.p_u,
            p_h=scenario3.p_h,
            coef_y1=scenario3.coef_y1._replace(h=0.0),
            coef_y_other=scenario3.coef_y_other,
            coef_w=scenario3.coef_w,
            coef_t=scenario3.coef_t,
        )
        with pytest.raises(ValueError):
            bad.validate()

    def test_probability_bounds(self, scenario1):
        bad = ScenarioSpec(
            scenario_id=1,
            p_c=1.5,
            p_x_given_c=scenario1.p_x_given_c,
            p_u=scenario1.p_u,
            p_h=scenario1.p_h,
            coef_y1=scenario1.coef_y1,
            coef_y_other=scenario1.coef_y_other,
            coef_w=scenario1.coef_w,
            coef_t=scenario1.coef_t,
        )
        with pytest.raises(ValueError):
            bad.validate()

    def test_symptom_table_dominant_infection(self, scenario1):
        b, p1, p2, both = scenario1.symptom_table()
        assert (b, p1, p2) == tuple(scenario1.coef_w)
        assert both == p1


class TestExactEnumeration:
    def test_joint_probabilities_sum_to_one(self, scenario3):
        table = exact.joint_table(scenario3)
        assert float(np.sum(table["p"])) == pytest.approx(1.0, abs=1e-12)

    def test_brute_force_joint_agrees(self, scenario1):
        # independent check of the enumeration: brute-force sum over all
        # states computed with plain Python floats
        from itertools import product

        spec = scenario1
        table = spec.symptom_table()

        def bern(v, p):
            return p if v == 1 else 1.0 - p

        total_y1 = 0.0
        total_t = 0.0
        for c, x, u, h, y1, yo, w in product((0, 1), repeat=7):
            p = bern(c, spec.p_c)
            p *= bern(x, spec.p_x_given_c[c])
            p *= bern(u, spec.p_u)
            p *= bern(h, spec.p_h)
            b1 = spec.coef_y1
            p_y1 = 1.0 / (1.0 + math.exp(-(b1.intercept + b1.x * x + b1.c * c + b1.u * u + b1.h * h)))
            p *= bern(y1, p_y1)
            bo = spec.coef_y_other
            p_yo = 1.0 / (1.0 + math.exp(-(bo.intercept + bo.x * x + bo.c * c + bo.u * u)))
            p *= bern(yo, p_yo)
            p_w = table[y1 + 2 * yo]
            p *= bern(w, p_w)
            bt = spec.coef_t
            p_t = 1.0 / (1.0 + math.exp(-(bt.intercept + bt.w * w + bt.x * x + bt.c * c + bt.wx * w * x + bt.h * h)))
            total_y1 += p * y1
            total_t += p * p_t
        assert exact.infection_prevalence(spec) == pytest.approx(total_y1, abs=1e-12)
        assert exact.testing_prevalence_exact(spec) == pytest.approx(total_t, abs=1e-12)

    def test_prospective_or_equals_construction_when_collapsible(self, scenario1):
        assert exact.exact_prospective_or(scenario1) == pytest.approx(2.5, abs=1e-6)

    def test_relative_or_pattern(self, scenario1, scenario2):
        rel1 = exact.exact_relative_or(scenario1)
        rel2 = exact.exact_relative_or(scenario2)
        assert 1.0 < rel1 < 2.5
        assert 1.0 < rel2 < 1.5

    def test_scenario3_truth_not_collapsible(self, scenario3):
        value = exact.exact_prospective_or(scenario3)
        assert value != pytest.approx(math.exp(scenario3.coef_y1.x), abs=1e-6)
        assert 1.0 < value < math.exp(scenario3.coef_y1.x)
