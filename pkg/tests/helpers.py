"""Small constructors shared by the unit tests."""

import numpy as np

from prospective.core import Population


def tiny_population(n: int = 10, seed: int = 0, decisions=None, outcomes=None) -> Population:
    rng = np.random.default_rng(seed)
    columns = {
        "female": rng.integers(0, 2, n),
        "non_citizen": rng.integers(0, 2, n),
        "age": rng.uniform(24, 55, n).round(1),
        "married": rng.integers(0, 2, n),
        "past_income": rng.uniform(10_000, 90_000, n).round(0),
        "employability": rng.integers(1, 4, n),
        "emp_frac_2y": rng.uniform(0, 1, n).round(3),
        "ue_spells_2y": rng.integers(0, 4, n),
    }
    if decisions is None:
        decisions = rng.integers(0, 7, n)
    if outcomes is None:
        outcomes = rng.integers(0, 2, n)
    return Population(columns, np.asarray(decisions), np.asarray(outcomes))
