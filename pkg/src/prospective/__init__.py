"""Prospective evaluation of algorithmically informed allocation policies.

Submodules: ``core`` (data model and I/O), ``synth`` (calibrated synthetic
populations), ``causal`` (doubly-robust potential-outcome estimation),
``risk`` (fairness-constrained risk scores), ``policy`` (prioritization,
assignment and evaluation), ``identification`` (exact post-deployment
distributions for discrete tables), ``metrics``, ``report``, ``pipeline`` and
``cli``.
"""

from .core import Population, Program, SplitSpec, load_population, train_test_split, validate_population, write_population

__version__ = "0.1.0"

__all__ = ["Population", "Program", "SplitSpec", "load_population", "train_test_split", "validate_population", "write_population"]
