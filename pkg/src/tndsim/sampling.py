"""Recruitment designs over a simulated population, and stratified bootstrap.

All draws are simple random samples without replacement from the finite
population; the bootstrap resamples with replacement separately within the
tested and untested strata, preserving both stratum sizes.
"""

from __future__ import annotations

import numpy as np

from .records import StudySample
from .simulate import Population, testing_prevalence


class InsufficientStratumError(Exception):
    """A recruitment stratum is smaller than the requested sample size."""


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _take(population: Population, idx: np.ndarray, mask_y1: np.ndarray) -> dict:
    cols = {}
    for name, arr in population.columns.items():
        if name == "y1":
            y1 = arr[idx].astype(float)
            y1[mask_y1] = np.nan
            cols[name] = y1
        else:
            cols[name] = arr[idx].copy()
    return cols


def sample_case_control(
    population: Population, n_tested: int, n_controls: int, seed
) -> StudySample:
    """Recruit tested people and untested population controls.

    Controls are drawn from the untested subpopulation and their infection
    outcome is masked. With ``n_controls`` zero the design degrades to a
    tested-only sample.
    """
    t = population.columns["t"]
    tested_idx = np.flatnonzero(t == 1)
    untested_idx = np.flatnonzero(t == 0)
    if tested_idx.size < n_tested:
        raise InsufficientStratumError(
            f"population has {tested_idx.size} tested members; need {n_tested}"
        )
    if untested_idx.size < n_controls:
        raise InsufficientStratumError(
            f"population has {untested_idx.size} untested members; need {n_controls}"
        )
    rng = _rng(seed)
    take_tested = rng.choice(tested_idx, size=n_tested, replace=False)
    take_controls = rng.choice(untested_idx, size=n_controls, replace=False)
    idx = np.concatenate([take_tested, take_controls])
    mask = np.zeros(idx.size, dtype=bool)
    mask[n_tested:] = True
    return StudySample(
        columns=_take(population, idx, mask),
        design_tag="tested-only" if n_controls == 0 else "all-tested-plus-controls",
        n_tested=n_tested,
        n_controls=n_controls,
        q0_assumed=testing_prevalence(population),
    )


def sample_proper_tnd(
    population: Population, n: int, with_controls: int, seed
) -> StudySample:
    """Recruit tested symptomatic people, optionally plus untested controls."""
    cols = population.columns
    stratum_idx = np.flatnonzero((cols["t"] == 1) & (cols["w"] == 1))
    untested_idx = np.flatnonzero(cols["t"] == 0)
    if stratum_idx.size < n:
        raise InsufficientStratumError(
            f"population has {stratum_idx.size} tested symptomatic members; need {n}"
        )
    if untested_idx.size < with_controls:
        raise InsufficientStratumError(
            f"population has {untested_idx.size} untested members; need {with_controls}"
        )
    rng = _rng(seed)
    take_tnd = rng.choice(stratum_idx, size=n, replace=False)
    take_controls = rng.choice(untested_idx, size=with_controls, replace=False)
    idx = np.concatenate([take_tnd, take_controls])
    mask = np.zeros(idx.size, dtype=bool)
    mask[n:] = True
    return StudySample(
        columns=_take(population, idx, mask),
        design_tag="proper-tnd" if with_controls == 0 else "proper-tnd-plus-controls",
        n_tested=n,
        n_controls=with_controls,
        q0_assumed=testing_prevalence(population),
    )


def bootstrap_resample(sample: StudySample, seed) -> StudySample:
    """Resample with replacement separately within the tested and untested strata."""
    if len(sample) == 0:
        raise ValueError("cannot resample an empty sample")
    t = sample.columns["t"]
    rng = _rng(seed)
    parts = []
    for stratum in (1, 0):
        positions = np.flatnonzero(t == stratum)
        if positions.size:
            parts.append(rng.choice(positions, size=positions.size, replace=True))
    take = np.concatenate(parts)
    cols = {name: arr[take] for name, arr in sample.columns.items()}
    return StudySample(
        columns=cols,
        design_tag=sample.design_tag,
        n_tested=sample.n_tested,
        n_controls=sample.n_controls,
        q0_assumed=sample.q0_assumed,
    )
