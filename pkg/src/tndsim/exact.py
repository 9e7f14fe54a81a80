"""Exact finite-support computations for the all-binary generating process.

Everything here enumerates the joint distribution in closed form; nothing is
simulated. These functions back intercept calibration, the exact truth values
for scenarios whose Y1 model is not collapsible, and the enumeration IPW
oracle used to check identifiability of the prospective parameter.
"""

from __future__ import annotations

import itertools

import numpy as np

from .glm import DesignMatrix, FitResult, expit, fit_weighted_logistic
from .scenarios import ScenarioSpec

_JOINT_VARS = ("c", "x", "u", "h", "y1", "y_other", "w")


def joint_table(spec: ScenarioSpec) -> dict[str, np.ndarray]:
    """Joint probability of every (c, x, u, h, y1, y_other, w) state.

    Returns the state columns, their probability ``p``, and the testing
    probability ``p_t1`` = P(T=1 | w, x, c, h) for each state.
    """
    states = np.array(list(itertools.product((0, 1), repeat=len(_JOINT_VARS))))
    cols = {name: states[:, i].astype(float) for i, name in enumerate(_JOINT_VARS)}
    c, x, u, h = cols["c"], cols["x"], cols["u"], cols["h"]
    y1, yo, w = cols["y1"], cols["y_other"], cols["w"]

    def bern(value, p1):
        return np.where(value == 1, p1, 1.0 - p1)

    p = bern(c, spec.p_c)
    px1 = np.where(c == 1, spec.p_x_given_c[1], spec.p_x_given_c[0])
    p = p * np.where(x == 1, px1, 1.0 - px1)
    p = p * bern(u, spec.p_u)
    p = p * bern(h, spec.p_h)
    b1 = spec.coef_y1
    p_y1 = expit(b1.intercept + b1.x * x + b1.c * c + b1.u * u + b1.h * h)
    p = p * np.where(y1 == 1, p_y1, 1.0 - p_y1)
    bo = spec.coef_y_other
    p_yo = expit(bo.intercept + bo.x * x + bo.c * c + bo.u * u)
    p = p * np.where(yo == 1, p_yo, 1.0 - p_yo)
    table = spec.symptom_table()
    p_w = np.select(
        [
            (y1 == 0) & (yo == 0),
            (y1 == 1) & (yo == 0),
            (y1 == 0) & (yo == 1),
        ],
        [table[0], table[1], table[2]],
        default=table[3],
    )
    p = p * np.where(w == 1, p_w, 1.0 - p_w)
    bt = spec.coef_t
    p_t1 = expit(
        bt.intercept + bt.w * w + bt.x * x + bt.c * c + bt.wx * w * x + bt.h * h
    )
    out = dict(cols)
    out["p"] = p
    out["p_t1"] = p_t1
    return out


def infection_prevalence(spec: ScenarioSpec) -> float:
    t = joint_table(spec)
    return float(np.sum(t["p"] * t["y1"]))


def other_infection_prevalence(spec: ScenarioSpec) -> float:
    t = joint_table(spec)
    return float(np.sum(t["p"] * t["y_other"]))


def symptom_prevalence(spec: ScenarioSpec) -> float:
    t = joint_table(spec)
    return float(np.sum(t["p"] * t["w"]))


def testing_prevalence_exact(spec: ScenarioSpec) -> float:
    t = joint_table(spec)
    return float(np.sum(t["p"] * t["p_t1"]))


def _group_sums(
    table: dict[str, np.ndarray], by: tuple[str, ...], mass: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Sum ``mass`` over joint states within each configuration of ``by``."""
    cells = np.array(list(itertools.product((0, 1), repeat=len(by))), dtype=float)
    sums = np.zeros(cells.shape[0])
    for i, cell in enumerate(cells):
        mask = np.ones(mass.shape[0], dtype=bool)
        for name, value in zip(by, cell):
            mask &= table[name] == value
        sums[i] = float(np.sum(mass[mask]))
    out = {name: cells[:, j] for j, name in enumerate(by)}
    return out, sums


def cell_distribution(
    spec: ScenarioSpec, by: tuple[str, ...], tested: bool | None = None
) -> dict[str, np.ndarray]:
    """Cell masses and conditional infection/testing probabilities.

    Returns one row per configuration of ``by`` with columns: the cell
    coordinates, ``mass`` (P of cell, intersected with T=1 or T=0 when
    ``tested`` is set), ``p_y1`` = P(Y1=1 | cell[, T]) and ``p_t1`` =
    P(T=1 | cell).
    """
    t = joint_table(spec)
    if tested is None:
        sel = np.ones_like(t["p"])
    elif tested:
        sel = t["p_t1"]
    else:
        sel = 1.0 - t["p_t1"]
    cells, mass = _group_sums(t, by, t["p"] * sel)
    _, mass_y1 = _group_sums(t, by, t["p"] * sel * t["y1"])
    _, mass_t1 = _group_sums(t, by, t["p"] * t["p_t1"])
    _, mass_all = _group_sums(t, by, t["p"])
    out = dict(cells)
    out["mass"] = mass
    with np.errstate(invalid="ignore", divide="ignore"):
        out["p_y1"] = np.where(mass > 0, mass_y1 / np.where(mass > 0, mass, 1.0), 0.0)
        out["p_t1"] = np.where(
            mass_all > 0, mass_t1 / np.where(mass_all > 0, mass_all, 1.0), 0.0
        )
    return out


def _cell_design(
    cells: dict[str, np.ndarray], terms: tuple[str, ...]
) -> DesignMatrix:
    parts = [np.ones(cells[next(iter(cells))].shape[0])]
    labels = ["intercept"]
    for term in terms:
        col = np.ones_like(parts[0])
        for name in term.split("*"):
            col = col * cells[name]
        parts.append(col)
        labels.append(term)
    return DesignMatrix(np.column_stack(parts), tuple(labels))


def exact_prospective_fit(spec: ScenarioSpec) -> FitResult:
    """Population ML fit of Y1 on (intercept, X, C), computed on the joint."""
    cells = cell_distribution(spec, ("x", "c"))
    design = _cell_design(cells, ("x", "c"))
    return fit_weighted_logistic(design, cells["p_y1"], cells["mass"])


def exact_prospective_or(spec: ScenarioSpec) -> float:
    return float(np.exp(exact_prospective_fit(spec).coefficient("x")))


def exact_relative_fit(spec: ScenarioSpec) -> FitResult:
    """Population ML fit of Y1 on (intercept, X, C) among the symptomatic."""
    t = joint_table(spec)
    keep = t["w"] == 1
    sub = {k: v[keep] for k, v in t.items()}
    cells, mass = _group_sums(sub, ("x", "c"), sub["p"])
    _, mass_y1 = _group_sums(sub, ("x", "c"), sub["p"] * sub["y1"])
    design = _cell_design(cells, ("x", "c"))
    response = np.where(mass > 0, mass_y1 / np.where(mass > 0, mass, 1.0), 0.0)
    return fit_weighted_logistic(design, response, mass)


def exact_relative_or(spec: ScenarioSpec) -> float:
    return float(np.exp(exact_relative_fit(spec).coefficient("x")))


def exact_ipw_fit(spec: ScenarioSpec) -> FitResult:
    """Enumeration IPW oracle: closed-form Q and P, deterministic score solve.

    Q(x,c,w) = P(Y1=1 | X, C, W, T=1) and P(x,c,w) = P(T=1 | X, C, W) are read
    off the joint distribution; the inverse-probability-weighted score for the
    prospective model is then solved over the tested cells. Under the
    T-independence structure this recovers the construction coefficients.
    """
    cells = cell_distribution(spec, ("x", "c", "w"), tested=True)
    keep = cells["mass"] > 0
    design = _cell_design({k: v[keep] for k, v in cells.items()}, ("x", "c"))
    weights = cells["mass"][keep] / cells["p_t1"][keep]
    return fit_weighted_logistic(design, cells["p_y1"][keep], weights)


def exact_ipw_or(spec: ScenarioSpec) -> float:
    return float(np.exp(exact_ipw_fit(spec).coefficient("x")))


# ---------------------------------------------------------------------------
# Probability limits of the sample analyses. Unlike the oracle above, these
# mirror each analysis including its (possibly misspecified) working models,
# so they give the large-sample value each method converges to.


def plim_tested_only(spec: ScenarioSpec) -> FitResult:
    cells = cell_distribution(spec, ("x", "c"), tested=True)
    design = _cell_design(cells, ("x", "c"))
    return fit_weighted_logistic(design, cells["p_y1"], cells["mass"])


def plim_proper_tnd(spec: ScenarioSpec) -> FitResult:
    cells = cell_distribution(spec, ("x", "c", "w"), tested=True)
    keep = cells["w"] == 1
    sub = {k: v[keep] for k, v in cells.items()}
    design = _cell_design(sub, ("x", "c"))
    return fit_weighted_logistic(design, sub["p_y1"], sub["mass"])


def plim_testpos_vs_controls(spec: ScenarioSpec) -> FitResult:
    """Symptomatic test-positives (group 1) vs untested controls (group 0)."""
    t = joint_table(spec)
    cells, case_mass = _group_sums(
        t, ("x", "c"), t["p"] * t["p_t1"] * t["y1"] * t["w"]
    )
    _, control_mass = _group_sums(t, ("x", "c"), t["p"] * (1.0 - t["p_t1"]))
    case_mass = case_mass / np.sum(case_mass)
    control_mass = control_mass / np.sum(control_mass)
    design_cells = {k: np.concatenate([v, v]) for k, v in cells.items()}
    design = _cell_design(design_cells, ("x", "c"))
    response = np.concatenate([np.ones(case_mass.size), np.zeros(control_mass.size)])
    weights = np.concatenate([case_mass, control_mass])
    return fit_weighted_logistic(design, response, weights)


def plim_ipw(
    spec: ScenarioSpec,
    numerator_terms: tuple[str, ...],
    denominator_terms: tuple[str, ...],
    stage3_terms: tuple[str, ...] = ("x", "c"),
    q0_assumed: float | None = None,
) -> FitResult:
    """Large-sample value of the three-stage IPW analysis.

    Stage 1 projects P(Y1 | cell, T=1) onto the numerator terms over the
    tested cell distribution; stage 2 projects tested status onto the
    denominator terms over the case-control pseudo-population implied by the
    assumed testing prevalence; stage 3 solves the inverse-probability
    weighted score over the tested cells.
    """
    q0_true = testing_prevalence_exact(spec)
    q0 = q0_true if q0_assumed is None else q0_assumed
    cells = cell_distribution(spec, ("x", "c", "w", "h"), tested=True)
    mass_t1 = cells["mass"]
    all_cells = cell_distribution(spec, ("x", "c", "w", "h"))
    mass_t0 = all_cells["mass"] - mass_t1

    keep = mass_t1 > 0
    tested_cells = {k: v[keep] for k, v in cells.items()}
    num_design = _cell_design(tested_cells, numerator_terms)
    num_fit = fit_weighted_logistic(
        num_design, tested_cells["p_y1"], mass_t1[keep]
    )
    q_hat = expit(num_design.values @ num_fit.coefficients)

    f1 = mass_t1 / q0_true
    f0 = mass_t0 / (1.0 - q0_true)
    den_mass = q0 * f1 + (1.0 - q0) * f0
    den_response = np.where(den_mass > 0, q0 * f1 / np.where(den_mass > 0, den_mass, 1.0), 0.0)
    den_design = _cell_design(cells, denominator_terms)
    den_fit = fit_weighted_logistic(den_design, den_response, den_mass)
    p_hat = expit(den_design.values[keep] @ den_fit.coefficients)

    stage3_design = _cell_design(tested_cells, stage3_terms)
    return fit_weighted_logistic(stage3_design, q_hat, mass_t1[keep] / p_hat)
