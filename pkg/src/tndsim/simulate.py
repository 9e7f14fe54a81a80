"""Population generation from the structural equations, plus true parameters.

Records are drawn in topological order C; X|C; U; H; Y1|X,C,U,H;
Y_other|X,C,U; W|Y1,Y_other; T|W,X,C,H. Testing never reads the infection
directly: the only path from Y1 to T runs through symptoms. Each variable in
each block draws from its own seeded stream, so regenerating any one variable
(or block) is reproducible in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import exact
from .glm import DesignMatrix, expit, fit_weighted_logistic
from .records import COLUMN_ORDER, IndividualRecord
from .scenarios import ScenarioSpec

BLOCK_SIZE = 1 << 16

_STREAM_CODES = {name: i for i, name in enumerate(COLUMN_ORDER)}


def variable_stream(seed: int, block_index: int, name: str) -> np.random.Generator:
    """Independent RNG stream for one variable of one generation block."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(block_index, _STREAM_CODES[name]))
    return np.random.Generator(np.random.PCG64(ss))


def _generate_block(
    spec: ScenarioSpec, seed: int, block_index: int, n: int
) -> dict[str, np.ndarray]:
    def draws(name):
        return variable_stream(seed, block_index, name).random(n)

    c = (draws("c") < spec.p_c).astype(np.int8)
    p_x = np.where(c == 1, spec.p_x_given_c[1], spec.p_x_given_c[0])
    x = (draws("x") < p_x).astype(np.int8)
    u = (draws("u") < spec.p_u).astype(np.int8)
    h = (draws("h") < spec.p_h).astype(np.int8)

    b1 = spec.coef_y1
    y1 = (
        draws("y1") < expit(b1.intercept + b1.x * x + b1.c * c + b1.u * u + b1.h * h)
    ).astype(np.int8)
    bo = spec.coef_y_other
    y_other = (
        draws("y_other") < expit(bo.intercept + bo.x * x + bo.c * c + bo.u * u)
    ).astype(np.int8)

    table = np.array(spec.symptom_table())
    w = (draws("w") < table[y1 + 2 * y_other]).astype(np.int8)

    bt = spec.coef_t
    p_t = expit(
        bt.intercept + bt.w * w + bt.x * x + bt.c * c + bt.wx * (w * x) + bt.h * h
    )
    t = (draws("t") < p_t).astype(np.int8)
    return {"c": c, "x": x, "u": u, "y1": y1, "y_other": y_other, "w": w, "h": h, "t": t}


@dataclass(frozen=True)
class Population:
    """Complete simulated data for one generated population.

    ``spec`` is None for populations rebuilt from CSV rather than generated.
    """

    columns: dict[str, np.ndarray]
    spec: ScenarioSpec | None
    seed: int

    @property
    def n(self) -> int:
        return self.columns["t"].shape[0]

    def record(self, i: int) -> IndividualRecord:
        cols = self.columns
        return IndividualRecord(**{name: int(cols[name][i]) for name in COLUMN_ORDER})


def generate_population(spec: ScenarioSpec, n: int, seed: int) -> Population:
    """Draw ``n`` independent records; deterministic given (spec, n, seed)."""
    spec.validate()
    if n < 1:
        raise ValueError("population size must be at least 1")
    blocks = []
    for block_index, start in enumerate(range(0, n, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n - start)
        blocks.append(_generate_block(spec, seed, block_index, size))
    columns = {
        name: np.concatenate([b[name] for b in blocks]) for name in COLUMN_ORDER
    }
    return Population(columns=columns, spec=spec, seed=seed)


def testing_prevalence(population: Population) -> float:
    """Fraction of the population that was tested."""
    return float(np.mean(population.columns["t"] == 1))


def true_prospective_or(spec: ScenarioSpec) -> float:
    """exp(beta_x) of the population infection model.

    Equals the construction coefficient when Y1 depends on (X, C) only.
    When U or H loads on Y1 the coefficient is not collapsible over them, so
    the value is the exact maximum-likelihood fit on the enumerated joint.
    """
    if spec.coef_y1.u == 0.0 and spec.coef_y1.h == 0.0:
        return float(np.exp(spec.coef_y1.x))
    return exact.exact_prospective_or(spec)


def true_relative_or(population: Population) -> float:
    """exp(beta*_x): complete-data ML fit of Y1 on (X, C) among the symptomatic."""
    cols = population.columns
    keep = cols["w"] == 1
    if not np.any(keep):
        raise ValueError("population has no symptomatic members")
    x = cols["x"][keep].astype(float)
    c = cols["c"][keep].astype(float)
    y1 = cols["y1"][keep].astype(float)
    design = DesignMatrix(
        np.column_stack([np.ones(x.size), x, c]), ("intercept", "x", "c")
    )
    fit = fit_weighted_logistic(design, y1)
    return float(np.exp(fit.coefficient("x")))
