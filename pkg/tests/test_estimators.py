import numpy as np
import pytest

from tndsim import estimators as est
from tndsim import exact, glm
from tndsim.records import Formula, StudySample, build_design, subset
from tndsim.sampling import sample_case_control, sample_proper_tnd
from tndsim.scenarios import build_scenario
from tndsim.simulate import generate_population


@pytest.fixture(scope="module")
def population(scenario1):
    return generate_population(scenario1, 400_000, seed=202)


@pytest.fixture(scope="module")
def cc_sample(population):
    return sample_case_control(population, 600, 600, seed=203)


@pytest.fixture(scope="module")
def tnd_sample(population):
    return sample_proper_tnd(population, 250, 600, seed=204)


class TestLogisticAnalyses:
    def test_tested_only_matches_kernel_on_subset(self, cc_sample):
        result = est.estimate_tested_only(cc_sample)
        tested = subset(cc_sample, lambda cols: cols["t"] == 1)
        design, response = build_design(tested, Formula("y1", ("x", "c")))
        direct = glm.fit_weighted_logistic(design, response)
        assert result.log_or == pytest.approx(direct.coefficient("x"), abs=1e-10)
        assert result.interval_method == "wald"
        assert result.interval[0] < result.log_or < result.interval[1]

    def test_tested_only_no_selection_no_effect(self):
        spec = build_scenario(
            1, {"or_x": 1.0, "t_x": 0.0, "t_w": 0.0, "t_wx": 0.0, "t_c": 0.0}
        )
        pop = generate_population(spec, 2_000_000, seed=205)
        sample = sample_case_control(pop, 3000, 1000, seed=206)
        result = est.estimate_tested_only(sample)
        assert abs(result.log_or) < 0.2

    def test_proper_tnd_fixed_fixture(self, tnd_sample):
        result = est.estimate_proper_tnd(tnd_sample)
        analysis = subset(
            tnd_sample, lambda cols: (cols["t"] == 1) & (cols["w"] == 1)
        )
        design, response = build_design(analysis, Formula("y1", ("x", "c")))
        direct = glm.fit_weighted_logistic(design, response)
        assert result.log_or == pytest.approx(direct.coefficient("x"), abs=1e-10)

    def test_proper_tnd_degenerate_sample_errors(self, scenario1):
        spec = build_scenario(
            1,
            {
                "prev_y_other": 1e-06,
                "w_baseline": 0.0,
                "w_if_y1": 1.0,
                "w_if_other": 0.0,
            },
        )
        pop = generate_population(spec, 100_000, seed=207)
        sample = sample_proper_tnd(pop, 50, 0, seed=208)
        with pytest.raises((glm.SeparationError, est.EstimationError)):
            est.estimate_proper_tnd(sample)

    def test_testpos_vs_controls_group_outcome(self, tnd_sample):
        result = est.estimate_testpos_vs_controls(tnd_sample)
        cols = tnd_sample.columns
        positives = (
            (cols["t"] == 1)
            & (cols["w"] == 1)
            & (np.nan_to_num(cols["y1"], nan=0.0) == 1)
        )
        # direct kernel fit of the group indicator over the same rows
        keep = positives | (cols["t"] == 0)
        group = cols["t"][keep].astype(float)
        design = glm.DesignMatrix(
            np.column_stack(
                [np.ones(int(keep.sum())), cols["x"][keep], cols["c"][keep]]
            ),
            ("intercept", "x", "c"),
        )
        direct = glm.fit_weighted_logistic(design, group)
        assert result.method_tag == "testpos-vs-controls"
        assert result.log_or == pytest.approx(direct.coefficient("x"), abs=1e-10)

    def test_testpos_vs_controls_null_when_identical_distributions(self):
        rng = np.random.default_rng(209)
        n = 4000
        x = rng.integers(0, 2, n).astype(np.int8)
        c = rng.integers(0, 2, n).astype(np.int8)
        t = np.concatenate([np.ones(n // 2, dtype=np.int8), np.zeros(n // 2, dtype=np.int8)])
        y1 = np.where(t == 1, 1.0, np.nan)
        sample = StudySample(
            columns={
                "c": c,
                "x": x,
                "u": np.zeros(n, dtype=np.int8),
                "y1": y1,
                "y_other": np.zeros(n, dtype=np.int8),
                "w": np.ones(n, dtype=np.int8),
                "h": np.zeros(n, dtype=np.int8),
                "t": t,
            },
            design_tag="proper-tnd-plus-controls",
            n_tested=n // 2,
            n_controls=n // 2,
        )
        result = est.estimate_testpos_vs_controls(sample)
        assert abs(result.log_or) < 0.15


class TestCaseControlWeights:
    def test_formula_substitution(self, population):
        sample = sample_case_control(population, 100, 300, seed=210)
        weights = est.case_control_weights(sample, 0.2)
        tested = sample.columns["t"] == 1
        assert np.allclose(weights[tested], 0.2)
        assert np.allclose(weights[~tested], 0.8 / 3.0)

    def test_symmetric_case(self, population):
        sample = sample_case_control(population, 200, 200, seed=211)
        weights = est.case_control_weights(sample, 0.5)
        assert np.allclose(weights, 0.5)

    def test_weight_sum_identity(self, population):
        sample = sample_case_control(population, 137, 411, seed=212)
        for q0 in (0.001, 0.02, 0.4):
            weights = est.case_control_weights(sample, q0)
            assert float(np.sum(weights)) == pytest.approx(137.0, rel=1e-12)

    def test_q0_bounds(self, cc_sample):
        with pytest.raises(ValueError):
            est.case_control_weights(cc_sample, 0.0)

    def test_needs_both_strata(self, population):
        sample = sample_case_control(population, 50, 0, seed=213)
        with pytest.raises(est.EstimationError):
            est.case_control_weights(sample, 0.1)


class TestIpwSpecs:
    def test_variant_construction(self):
        correct = est.ipw_spec("correct")
        assert correct.numerator_formula.terms == ("x", "c", "w")
        assert correct.denominator_formula.terms == ("x", "c", "w", "w*x")
        missing = est.ipw_spec("missing-interaction")
        assert "w*x" not in missing.denominator_formula.terms
        assert missing.numerator_formula.terms == correct.numerator_formula.terms
        omitted = est.ipw_spec("omitted-w")
        for formula in (omitted.numerator_formula, omitted.denominator_formula):
            assert all("w" not in t.split("*") for t in formula.terms)
        adjust = est.ipw_spec("adjust-hcsb")
        assert "h" in adjust.numerator_formula.terms
        assert "h" in adjust.denominator_formula.terms
        assert adjust.stage3_terms() == ("x", "c", "h")

    def test_invalid_variant_rejected(self):
        with pytest.raises(ValueError):
            est.ipw_spec("nonsense")

    def test_invariant_enforcement(self):
        with pytest.raises(ValueError):
            est.IpwSpec(
                numerator_formula=Formula("y1", ("x", "c", "w")),
                denominator_formula=Formula("t", ("x", "c")),
                variant_tag="omitted-w",
            )
        with pytest.raises(ValueError):
            est.IpwSpec(
                numerator_formula=Formula("y1", ("x", "c")),
                denominator_formula=Formula("t", ("x", "c", "w", "w*x")),
                variant_tag="missing-interaction",
            )


class TestIpwEstimate:
    def test_score_equation_residual_zero(self, cc_sample):
        spec = est.ipw_spec("correct")
        result = est.estimate_ipw(cc_sample, spec)
        tested = subset(cc_sample, lambda cols: cols["t"] == 1)
        num_design, _ = build_design(tested, spec.numerator_formula)
        den_design, _ = build_design(tested, spec.denominator_formula)
        full_design, full_response = build_design(cc_sample, spec.denominator_formula)
        weights = est.case_control_weights(cc_sample, cc_sample.q0_assumed)
        den_fit = glm.fit_weighted_logistic(full_design, full_response, weights)
        p_hat = np.maximum(glm.predict(den_fit, den_design), est.POSITIVITY_FLOOR)
        num_fit = glm.fit_weighted_logistic(num_design, build_design(tested, spec.numerator_formula)[1])
        q_hat = glm.predict(num_fit, num_design)
        score_design, _ = build_design(tested, Formula("t", ("x", "c")))
        inv = (1.0 / p_hat) / np.mean(1.0 / p_hat)
        residual = score_design.values.T @ (
            inv * (q_hat - glm.expit(score_design.values @ result.all_coefficients))
        )
        assert np.max(np.abs(residual)) < 1e-6

    def test_requires_case_control_design(self, tnd_sample):
        with pytest.raises(est.EstimationError):
            est.estimate_ipw(tnd_sample, est.ipw_spec("correct"))

    def test_no_selection_matches_tested_only(self):
        spec = build_scenario(
            1, {"t_x": 0.0, "t_w": 0.0, "t_wx": 0.0, "t_c": 0.0, "q0": 0.01}
        )
        pop = generate_population(spec, 1_000_000, seed=214)
        sample = sample_case_control(pop, 6000, 6000, seed=215)
        naive = est.estimate_tested_only(sample)
        ipw = est.estimate_ipw(sample, est.ipw_spec("correct"))
        assert ipw.log_or == pytest.approx(naive.log_or, abs=0.12)

    def test_q0_override_recorded(self, cc_sample):
        result = est.estimate_ipw(cc_sample, est.ipw_spec("correct", q0=0.004))
        assert result.diagnostics["q0"] == 0.004

    def test_weight_scale_invariance_of_score_stage(self, cc_sample):
        # the score fit normalizes inverse-probability weights internally, so
        # rescaling q0's effect on absolute weights cannot leak into scale
        result = est.estimate_ipw(cc_sample, est.ipw_spec("correct"))
        assert np.all(np.isfinite(result.all_coefficients))

    def test_stage_tagging(self, population):
        sample = sample_case_control(population, 8, 8, seed=216)
        with pytest.raises(est.EstimationError) as excinfo:
            est.estimate_ipw(sample, est.ipw_spec("correct"))
        assert excinfo.value.stage in ("numerator", "denominator", "score")


class TestBootstrap:
    def test_zero_width_interval_for_constant_estimates(self, cc_sample, monkeypatch):
        calls = {"n": 0}

        def fake_estimate(sample, spec):
            calls["n"] += 1
            return est.Estimate(
                method_tag="ipw", log_or=0.7, all_coefficients=np.array([0.7])
            )

        monkeypatch.setattr(est, "estimate_ipw", fake_estimate)
        result = est.bootstrap_ci(cc_sample, est.ipw_spec("correct"), b=25, seed=1)
        assert result.lower == pytest.approx(0.7)
        assert result.upper == pytest.approx(0.7)
        assert result.n_failed == 0

    def test_documented_quantile_rule(self, cc_sample, monkeypatch):
        values = iter([1.0, 2.0, 3.0, 4.0])

        def fake_estimate(sample, spec):
            return est.Estimate(
                method_tag="ipw", log_or=next(values), all_coefficients=np.array([])
            )

        monkeypatch.setattr(est, "estimate_ipw", fake_estimate)
        result = est.bootstrap_ci(
            cc_sample, est.ipw_spec("correct"), b=4, level=0.5, seed=2
        )
        # numpy linear-interpolation percentiles of (1,2,3,4) at 25% and 75%
        assert result.lower == pytest.approx(1.75)
        assert result.upper == pytest.approx(3.25)

    def test_failure_threshold(self, cc_sample, monkeypatch):
        counter = {"n": 0}

        def flaky(sample, spec):
            counter["n"] += 1
            if counter["n"] % 3 == 0:
                raise est.EstimationError("boom", stage="numerator")
            return est.Estimate(
                method_tag="ipw", log_or=0.5, all_coefficients=np.array([])
            )

        monkeypatch.setattr(est, "estimate_ipw", flaky)
        with pytest.raises(est.EstimationError):
            est.bootstrap_ci(cc_sample, est.ipw_spec("correct"), b=30, seed=3)

    def test_deterministic_given_seed(self, cc_sample):
        spec = est.ipw_spec("correct")
        a = est.bootstrap_ci(cc_sample, spec, b=40, seed=77)
        b = est.bootstrap_ci(cc_sample, spec, b=40, seed=77)
        assert a == b

    def test_parameter_validation(self, cc_sample):
        with pytest.raises(ValueError):
            est.bootstrap_ci(cc_sample, est.ipw_spec("correct"), b=1, seed=1)
        with pytest.raises(ValueError):
            est.bootstrap_ci(cc_sample, est.ipw_spec("correct"), b=10, level=1.2, seed=1)
