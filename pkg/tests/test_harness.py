import csv
import io
import json
import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from sdrgraph.harness import (
    CSV_COLUMNS,
    REFERENCE_SPEC,
    ScaledLambda,
    loglog_slope,
    phi_errors,
    predictive_loglik,
    reference_rule,
    run_experiment,
    run_trial,
    select_by_complexity,
    structural_match,
    trial_seed,
)
from sdrgraph.model import LOG_2PI, RegConfig, Variant, sample_covariance
from sdrgraph.solver import SolverOptions, fit
from sdrgraph.synth import PopulationSpec, make_population, sample

SMALL = PopulationSpec(p=6, q=2, k=1, h=1, max_degree=1, s_magnitude=(0.4, 0.6), s_margin=1.5,
                       latent_scale=1.0, cross_singular=(0.6, 0.6), seed=3)


@pytest.fixture(scope="module")
def ref_pop():
    return make_population(REFERENCE_SPEC)


@pytest.fixture(scope="module")
def exact_fit(ref_pop):
    # fitting the population covariance itself recovers the structure
    return fit(RegConfig("sdr-lvgm", 0.03, 1.0, 0.4, False), ref_pop.sigma_star, 20, 4)


def test_population_fit_matches(exact_fit, ref_pop):
    flags = structural_match(exact_fit, ref_pop)
    assert flags.success and flags.support_match


def test_flipped_sign_fails(exact_fit, ref_pop):
    s = exact_fit.params_hat.s_Y.copy()
    i, j = np.argwhere(np.triu(s, 1) != 0)[0]
    s[i, j] = s[j, i] = -s[i, j]
    bad = replace(exact_fit, params_hat=replace(exact_fit.params_hat, s_Y=s), sign_pattern=np.sign(s))
    flags = structural_match(bad, ref_pop)
    assert not flags.sign_match and flags.support_match and not flags.success


def test_wrong_latent_rank_fails(exact_fit, ref_pop):
    flags = structural_match(replace(exact_fit, latent_rank=1), ref_pop)
    assert not flags.latent_rank_match and not flags.success
    flags = structural_match(replace(exact_fit, cross_rank=1), ref_pop)
    assert not flags.cross_match


def test_column_support_flag(exact_fit, ref_pop):
    want = ref_pop.column_support
    ok = structural_match(replace(exact_fit, column_support=want), ref_pop, "cs-lvgm")
    assert ok.cross_match
    bad = structural_match(replace(exact_fit, column_support=want[:-1]), ref_pop, "cs-lvgm")
    assert not bad.cross_match


def test_dimension_mismatch(exact_fit):
    with pytest.raises(ValueError):
        structural_match(exact_fit, make_population(SMALL))


def test_phi_errors_zero_at_truth(exact_fit, ref_pop):
    perfect = replace(exact_fit, params_hat=ref_pop.params)
    assert phi_errors(perfect, ref_pop) == (0.0, 0.0, 0.0, 0.0)
    errs = phi_errors(exact_fit, ref_pop)
    assert errs[0] == pytest.approx(np.abs(exact_fit.params_hat.s_Y - ref_pop.s_Y_star).max() / 0.4)


def test_scaled_lambda():
    rule = ScaledLambda(Variant.SDR_LVGM, 2.0, 20, 5, 1.5, 0.5, False)
    reg = rule(100)
    assert reg.lambda_n == pytest.approx(2.0 * math.sqrt(25 / 100))
    assert (reg.gamma, reg.delta, reg.penalize_diagonal) == (1.5, 0.5, False)
    ref = reference_rule()
    assert (ref.p, ref.q, ref.variant) == (20, 4, Variant.SDR_LVGM)


def test_trial_seed_stable():
    assert trial_seed(0, 1, 2) == trial_seed(0, 1, 2)
    assert len({trial_seed(0, i, t) for i in range(3) for t in range(10)}) == 30


def test_run_trial_deterministic():
    pop = make_population(SMALL)
    rule = ScaledLambda("sdr-lvgm", 1.0, 6, 2, 1.0, 0.5, False)
    a = run_trial(pop, 2000, rule(2000), None, 11)
    b = run_trial(pop, 2000, rule(2000), None, 11)
    assert a == b
    assert a.phi_error == max(a.err_S, a.err_L, a.err_K, a.err_O)


def test_experiment_parallel_invariance():
    pop = make_population(SMALL)
    rule = ScaledLambda("sdr-lvgm", 1.0, 6, 2, 1.0, 0.5, False)
    one = run_experiment(pop, [500, 1000], 3, rule, base_seed=5)
    two = run_experiment(pop, [500, 1000], 3, rule, parallelism=2, base_seed=5)
    assert one.outcomes == two.outcomes
    assert one.to_csv() == two.to_csv()
    assert [o.n for o in one.outcomes] == [500] * 3 + [1000] * 3


def test_experiment_outputs_schema():
    pop = make_population(SMALL)
    rule = ScaledLambda("sdr-lvgm", 1.0, 6, 2, 1.0, 0.5, False)
    s = run_experiment(pop, [400, 800], 2, rule)
    rows = list(csv.reader(io.StringIO(s.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 5
    assert [r[1] for r in rows[1:]] == ["0", "1", "0", "1"]
    d = json.loads(s.to_json())
    assert d["format_version"] == 1 and "wall_time" in d["metadata"]
    assert d["n_grid"] == [400, 800] and len(d["outcomes"]) == 4
    assert s.rate_at(400) == d["success_rate"][0]
    assert d["slope"] == pytest.approx(loglog_slope([400, 800], s.median_phi_error))


def test_experiment_validation():
    pop = make_population(SMALL)
    rule = ScaledLambda("sdr-lvgm", 1.0, 6, 2)
    with pytest.raises(ValueError):
        run_experiment(pop, [1000, 500], 1, rule)
    with pytest.raises(ValueError):
        run_experiment(pop, [500], 0, rule)


def test_loglog_slope():
    ns = np.array([100, 400, 1600])
    assert loglog_slope(ns, 3.0 * ns**-0.5) == pytest.approx(-0.5)
    assert math.isnan(loglog_slope([10], [1.0]))


def _fake(variant, total, lam):
    return SimpleNamespace(variant=variant, complexity=SimpleNamespace(total=total),
                           reg=SimpleNamespace(lambda_n=lam))


def test_select_by_complexity():
    v = Variant.SDR_LVGM
    got = select_by_complexity([_fake(v, 900, 0.2), _fake(v, 910, 0.1)], 908)
    assert got[v].complexity.total == 910
    got = select_by_complexity([_fake(v, 913, 0.1), _fake(v, 905, 0.2)], 909)
    assert got[v].complexity.total == 905
    got = select_by_complexity([_fake(v, 905, 0.3), _fake(v, 905, 0.1)], 905)
    assert got[v].reg.lambda_n == 0.1
    single = _fake(Variant.SDR_GM, 1, 1.0)
    assert select_by_complexity([single], 908)[Variant.SDR_GM] is single
    with pytest.raises(ValueError):
        select_by_complexity([], 908)


def test_predictive_loglik_identity():
    res = fit(RegConfig("sdr-gm", 0.0, 1.0, 1.0), np.eye(3), 2, 1)
    val = predictive_loglik(res, np.zeros((5, 3)), 2, 1)
    assert val == pytest.approx(-LOG_2PI, abs=1e-6)


@pytest.mark.parametrize("rows", [40, 300])
def test_predictive_loglik_mle_oracle(rows):
    pop = make_population(SMALL)
    data = sample(pop, rows, 1)
    sig = sample_covariance(data)
    res = fit(RegConfig("sdr-lvgm", 0.0, 1.0, 1.0), sig, 6, 2, SolverOptions(tol_primal=1e-10, tol_dual=1e-10))
    joint = multivariate_normal(np.zeros(8), sig).logpdf(data)
    marg = multivariate_normal(np.zeros(2), sig[6:, 6:]).logpdf(data[:, 6:])
    assert predictive_loglik(res, data, 6, 2) == pytest.approx(np.mean(joint - marg), abs=1e-6)


def test_predictive_loglik_beats_identity():
    pop = make_population(SMALL)
    train, test = sample(pop, 2000, 1), sample(pop, 2000, 2)
    good = fit(RegConfig("sdr-lvgm", 0.1, 1.0, 0.5, False), sample_covariance(train), 6, 2)
    base = fit(RegConfig("sdr-gm", 0.0, 1.0, 1.0), np.eye(8), 6, 2)
    assert predictive_loglik(good, test, 6, 2) > predictive_loglik(base, test, 6, 2)
    with pytest.raises(ValueError):
        predictive_loglik(good, test[:, :5], 6, 2)
