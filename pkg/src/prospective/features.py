"""Fixed (data-independent) feature transforms shared by the SCM and the models."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import Population

AGE_CENTER, AGE_SCALE = 36.8, 8.0
INCOME_MEAN, LOG_INCOME_SD = 43_461.0, 0.5
LOG_INCOME_MU = math.log(INCOME_MEAN) - 0.5 * LOG_INCOME_SD**2
EMP_FRAC_CENTER = 2.0 / 3.2  # Beta(2, 1.2) mean
UE_SPELLS_CENTER = 0.8

# employability is a caseworker assessment, so risk scores never see it
NUISANCE_FEATURES: tuple[str, ...] = (
    "female",
    "non_citizen",
    "age_z",
    "married",
    "log_income_z",
    "employability_c",
    "emp_frac_c",
    "ue_spells_c",
    "female_married",
)
RISK_FEATURES: tuple[str, ...] = (
    "female",
    "non_citizen",
    "age_z",
    "married",
    "log_income_z",
    "emp_frac_c",
    "ue_spells_c",
)


def derived_columns(columns: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    c = {k: np.asarray(v, dtype=float) for k, v in columns.items()}
    out = dict(c)
    out["age_z"] = (c["age"] - AGE_CENTER) / AGE_SCALE
    out["log_income_z"] = (np.log(np.maximum(c["past_income"], 1.0)) - LOG_INCOME_MU) / LOG_INCOME_SD
    out["employability_c"] = c["employability"] - 2.0
    out["emp_frac_c"] = c["emp_frac_2y"] - EMP_FRAC_CENTER
    out["ue_spells_c"] = c["ue_spells_2y"] - UE_SPELLS_CENTER
    out["female_married"] = c["female"] * c["married"]
    return out


def feature_matrix(pop: Population | dict[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    columns = pop.columns if isinstance(pop, Population) else pop
    cols = derived_columns(columns)
    if not names:
        return np.empty((len(next(iter(columns.values()))), 0))
    return np.column_stack([cols[name] for name in names])


def with_extras(pop: Population, names: Sequence[str]) -> tuple[str, ...]:
    return (*names, *pop.extra_columns)
