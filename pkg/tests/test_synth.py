import numpy as np
import pytest
from scipy.special import expit

from prospective.core import ARM_NAMES, N_ARMS, Program
from prospective.features import NUISANCE_FEATURES, feature_matrix
from prospective.logistic import add_intercept, fit_binary, BinaryObjective
from prospective.synth import (
    ConfigError,
    GroundTruth,
    ScmConfig,
    default_config,
    draw_covariates,
    generate_population,
    randomized_trial,
    read_ground_truth,
    status_quo_assign,
    true_potential_outcome,
    write_ground_truth,
)


def null_config(n: int, seed: int = 0) -> ScmConfig:
    """Default covariate structure with no program effects and uniform selection."""
    cfg = default_config().replace(n=n, seed=seed)
    cfg.program_effects = {arm: {"shift": 0.0} for arm in ARM_NAMES}
    cfg.selection_coefficients = {arm: {"intercept": 0.0} for arm in ARM_NAMES[1:]}
    return cfg


def test_default_marginals(default_population):
    pop, _ = default_population
    assert abs(pop.columns["female"].mean() - 0.44) <= 0.02
    assert abs(pop.columns["non_citizen"].mean() - 0.36) <= 0.02
    assert abs(pop.outcomes.mean() - 0.41) <= 0.02


def test_default_gender_rates(default_population):
    pop, _ = default_population
    female = pop.columns["female"] == 1
    women, men = pop.outcomes[female].mean(), pop.outcomes[~female].mean()
    assert abs((women - men) - 0.039) <= 0.01
    assert abs(women - 0.436) <= 0.02 and abs(men - 0.397) <= 0.02


def test_default_arm_shares(default_population):
    pop, _ = default_population
    shares = np.bincount(pop.decisions, minlength=N_ARMS) / len(pop)
    assert shares[Program.NO_PROGRAM] == pytest.approx(0.74, abs=0.02)
    assert shares[Program.JOB_SEARCH] == pytest.approx(0.183, abs=0.02)
    assert shares[Program.LANGUAGE] == pytest.approx(0.022, abs=0.02)


def test_null_effects_give_equal_arm_means():
    pop, gt = generate_population(null_config(70_000, seed=5))
    assert np.allclose(gt.true_propensity, 1 / N_ARMS)
    y, d = pop.outcomes, pop.decisions
    means = np.array([y[d == k].mean() for k in range(N_ARMS)])
    ses = np.array([y[d == k].std(ddof=1) / np.sqrt(np.sum(d == k)) for k in range(N_ARMS)])
    pooled = y.mean()
    assert np.all(np.abs(means - pooled) <= 3 * np.sqrt(ses**2 + (y.std() / np.sqrt(len(y))) ** 2))


def test_null_effects_make_arms_identical():
    _, gt = generate_population(null_config(200))
    for i in (0, 57, 199):
        values = {true_potential_outcome(gt, i, arm) for arm in ARM_NAMES}
        assert len(values) == 1


def test_potential_outcome_formula():
    cfg = null_config(5).replace(base_intercept=0.0, covariate_effects={}, gender_penalty=0.0, citizen_penalty=0.0)
    cfg.program_effects["vocational"]["shift"] = -0.5
    _, gt = generate_population(cfg)
    assert true_potential_outcome(gt, 3, "vocational") == pytest.approx(0.3775406687981454, abs=1e-15)
    assert true_potential_outcome(gt, 3, "no_program") == 0.5
    with pytest.raises(IndexError):
        true_potential_outcome(gt, 5, "vocational")


def test_calibrated_vocational_effect(default_population):
    _, gt = default_population
    effect = np.mean(gt.po_table[:, Program.VOCATIONAL] - gt.po_table[:, Program.NO_PROGRAM])
    assert effect == pytest.approx(-0.111, abs=0.01)


def test_degenerate_propensity_row():
    P = np.zeros((50, N_ARMS))
    P[:, 0] = 1.0
    assert np.all(status_quo_assign(GroundTruth(np.full((50, N_ARMS), 0.5), P), seed=1) == 0)


def test_uniform_propensities_give_uniform_shares():
    n = 70_000
    gt = GroundTruth(np.full((n, N_ARMS), 0.5), np.full((n, N_ARMS), 1 / N_ARMS))
    shares = np.bincount(status_quo_assign(gt, seed=9), minlength=N_ARMS) / n
    assert np.all(np.abs(shares - 1 / N_ARMS) <= 0.01)


def test_consistency_forced_decision_is_bernoulli_po():
    pop, gt = generate_population(default_config().replace(n=100_000, seed=11))
    realized = gt.potential_outcomes()
    for d in range(N_ARMS):
        p = gt.po_table[:, d]
        band = 2.576 * np.sqrt(np.sum(p * (1 - p))) / len(p)
        assert abs(realized[:, d].mean() - p.mean()) <= band
    assert np.array_equal(pop.outcomes, realized[np.arange(len(pop)), pop.decisions])


def test_selection_ignores_outcome_noise():
    worst = 0.0
    for seed in range(20):
        pop, gt = generate_population(default_config().replace(n=6000, seed=seed))
        arm = Program.JOB_SEARCH
        X = np.column_stack([feature_matrix(pop, NUISANCE_FEATURES), gt.outcome_noise[:, arm] - 0.5])
        y = (pop.decisions == arm).astype(float)
        w = fit_binary(X, y, lam=0.0)
        H = BinaryObjective(add_intercept(X), y).hessian(w) * len(y)
        se = np.sqrt(np.diag(np.linalg.inv(H)))
        worst = max(worst, abs(w[-1] / se[-1]))
    assert worst < 3


def test_generation_is_deterministic():
    cfg = default_config().replace(n=3000, seed=4)
    (p1, g1), (p2, g2) = generate_population(cfg), generate_population(cfg)
    assert np.array_equal(p1.decisions, p2.decisions) and np.array_equal(p1.outcomes, p2.outcomes)
    assert np.array_equal(g1.po_table, g2.po_table) and np.array_equal(g1.outcome_noise, g2.outcome_noise)
    for k in p1.columns:
        assert np.array_equal(p1.columns[k], p2.columns[k])


def test_covariate_ranges_regenerate_independently():
    cfg = default_config().replace(n=10_000)
    full = draw_covariates(cfg)
    part = draw_covariates(cfg, 5000, 9000)
    for k in full:
        assert np.array_equal(full[k][5000:9000], part[k])


def test_ground_truth_invariants(default_population):
    _, gt = default_population
    assert np.all((gt.po_table >= 0) & (gt.po_table <= 1))
    assert np.allclose(gt.true_propensity.sum(axis=1), 1.0, atol=1e-12)


def test_config_round_trip(tmp_path):
    cfg = default_config().replace(n=123, seed=9)
    cfg.dump(tmp_path / "cfg.json")
    assert ScmConfig.load(tmp_path / "cfg.json") == cfg


def test_config_rejects_nonzero_reference_shift():
    cfg = default_config()
    cfg.program_effects["no_program"]["shift"] = 0.2
    with pytest.raises(ConfigError):
        cfg.validate()


def test_ground_truth_file_round_trip(tmp_path):
    _, gt = generate_population(default_config().replace(n=50))
    back = read_ground_truth(write_ground_truth(gt, tmp_path / "gt.csv"))
    assert np.array_equal(back.po_table, gt.po_table)
    assert np.array_equal(back.true_propensity, gt.true_propensity)


def test_randomized_trial_has_constant_effect():
    pop, gt = randomized_trial(n=2000, effect=-0.1, seed=3)
    effect = gt.po_table[:, Program.VOCATIONAL] - gt.po_table[:, Program.NO_PROGRAM]
    assert np.allclose(effect, -0.1, atol=1e-15)
    assert np.all(gt.po_table[:, [0, 2, 3, 4, 5, 6]] == gt.po_table[:, [0]])
    assert np.all((gt.po_table >= 0.05) & (gt.po_table <= 0.75))
    assert set(np.unique(pop.decisions)) == set(range(N_ARMS))
