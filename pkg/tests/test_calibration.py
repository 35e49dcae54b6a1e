import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from invprob.calibration import (
    CalibrationReport,
    ConfidenceInterval,
    Truth,
    confidence_interval,
    coverage_curve,
    coverage_experiment,
    fiducial_curves,
    fiducial_residual,
    ks_critical,
    pit_values,
    predictive_pit_check,
)
from invprob.errors import InferenceError, NonMonotoneInParameter
from invprob.families import GenericFamily, MonotoneMap, get_family
from invprob.numerics import REAL_LINE, RandomStream
from invprob.posterior import (
    build_posterior,
    consistency_factor,
    sequential_update,
    sigma_power_factor,
    transform_posterior,
)

LOC = consistency_factor("location")
SCALE = consistency_factor("scale")
NL = get_family("normal-location")
ES = get_family("exponential-scale")


def test_interval_examples():
    ci = confidence_interval(build_posterior(ES, SCALE, [1.0]), 0.05, 0.9)
    assert ci.theta1 == pytest.approx(-1 / math.log(0.05), rel=1e-9)
    assert ci.theta2 == pytest.approx(-1 / math.log(0.95), rel=1e-9)
    ci = confidence_interval(build_posterior(NL, LOC, [0.0]), 0.025, 0.95)
    assert ci.theta1 == pytest.approx(-1.959963984540054, abs=1e-9)
    assert ci.theta2 == pytest.approx(1.959963984540054, abs=1e-9)


def test_full_interval():
    post = build_posterior(ES, SCALE, [1.0])
    ci = confidence_interval(post, 0.0, 1.0)
    assert post.cdf(ci.theta1) == 0.0 and post.cdf(ci.theta2) == pytest.approx(1.0, abs=1e-12)


def test_interval_level_checks():
    post = build_posterior(NL, LOC, [0.0])
    with pytest.raises(ValueError):
        confidence_interval(post, 0.2, 0.9)
    with pytest.raises(ValueError):
        confidence_interval(post, 0.0, 1.2)


def test_open_interval():
    ci = ConfidenceInterval(0.0, 1.0, 0.0, 0.5)
    assert ci.contains(0.5) and not ci.contains(0.0) and not ci.contains(1.0)


@given(label=st.sampled_from(["normal-location", "cauchy-scale", "exponential-scale", "logistic-location"]),
       x=st.floats(0.1, 5), alpha=st.floats(0, 0.5), delta=st.floats(0.01, 0.5))
def test_interval_mass_identity(label, x, alpha, delta):
    fam = get_family(label)
    zeta = LOC if label.endswith("location") else SCALE
    post = build_posterior(fam, zeta, [x])
    ci = confidence_interval(post, alpha, delta)
    assert ci.theta1 < ci.theta2
    assert post.prob(ci.theta1, ci.theta2) == pytest.approx(delta, abs=1e-6)
    assert post.cdf(ci.theta1) == pytest.approx(alpha, abs=1e-6)


@given(alpha=st.floats(0.001, 0.4), delta=st.floats(0.05, 0.59), x=st.floats(0.2, 5))
def test_interval_transformation_equivariance(alpha, delta, x):
    post = build_posterior(ES, SCALE, [x])
    pushed = transform_posterior(post, MonotoneMap.log())
    a = confidence_interval(post, alpha, delta)
    b = confidence_interval(pushed, alpha, delta)
    assert b.theta1 == pytest.approx(math.log(a.theta1), abs=1e-6)
    assert b.theta2 == pytest.approx(math.log(a.theta2), abs=1e-6)


def test_fiducial_examples():
    assert fiducial_residual(NL, LOC, 0.0, np.linspace(-6, 6, 512)) < 1e-6
    assert fiducial_residual(ES, SCALE, 1.0, np.geomspace(0.05, 50, 512)) < 1e-6
    wrong = sigma_power_factor(-2, dim=1)
    assert fiducial_residual(ES, wrong, 1.0, np.geomspace(0.05, 50, 512), mode="unchecked") > 0.01


def test_fiducial_curves_match_closed_form():
    grid, dens, deriv = fiducial_curves(ES, SCALE, 1.0, np.geomspace(0.1, 10, 64))
    want = grid ** -2 * np.exp(-1 / grid)
    assert np.allclose(dens, want, atol=1e-9) and np.allclose(deriv, want, atol=1e-8)


def test_fiducial_requires_monotone_cdf():
    # F(x | t) = Phi(x - t^2) turns around at t = 0
    fam = GenericFamily(lambda x, t: stats.norm.logpdf(x - t * t), lambda x, t: stats.norm.cdf(x - t * t),
                        lambda t: REAL_LINE, REAL_LINE, check=False)
    post = build_posterior(NL, LOC, [0.0])
    with pytest.raises(NonMonotoneInParameter):
        fiducial_curves(fam, LOC, 0.0, np.linspace(-2, 2, 41), posterior=post)


def test_fiducial_preserved_under_updating():
    x1, x2 = 0.3, 1.9
    post = sequential_update(build_posterior(NL, LOC, [x1]), NL, x2)
    # the mean of two unit normals has scale 1/sqrt(2)
    mean_fam = get_family("normal").pin(sigma=1 / math.sqrt(2))
    grid = np.linspace(-2, 4, 512)
    assert fiducial_residual(mean_fam, LOC, (x1 + x2) / 2, grid, posterior=post) < 1e-5


def test_truth_generators():
    s = RandomStream(0, 0)
    cyc = Truth.cycle([-5, 0, 12])
    assert [cyc.draw(i, s) for i in range(5)] == [-5, 0, 12, -5, 0]
    assert Truth.fixed(3).draw(99, s) == 3.0
    u = Truth.uniform(1, 2)
    vals = [u.draw(i, RandomStream(1, i)) for i in range(100)]
    assert min(vals) > 1 and max(vals) < 2
    with pytest.raises(ValueError):
        Truth("normal", (1.0,))


def test_coverage_counts_against_direct_oracle():
    trials, seed, mu = 3000, 17, 3.0
    rep = coverage_experiment(NL, LOC, mu, alpha=0.05, delta=0.9, trials=trials, seed=seed)
    z = stats.norm.ppf(0.95)
    x = np.array([NL.sample(mu, RandomStream(seed, i), 1)[0] for i in range(trials)])
    assert rep.covered == int(np.sum(np.abs(x - mu) < z))
    assert rep.trials == trials and rep.coverage == rep.covered / rep.trials
    assert rep.std_error == math.sqrt(0.9 * (1 - 0.9) / trials)
    assert rep.failed_trials == []


def test_report_serialization():
    rep = coverage_experiment(ES, SCALE, 2.0, delta=0.5, alpha=0.25, trials=200, seed=3)
    assert rep.covered <= rep.trials
    row = rep.csv_row().split(",")
    assert len(row) == len(CalibrationReport.CSV_HEADER.split(","))
    assert float(row[2]) == rep.coverage and int(row[5]) == 3
    d = rep.to_dict()
    assert d["config_echo"]["requested_trials"] == 200
    assert '"covered"' in rep.to_json()


def test_results_independent_of_jobs_and_batch():
    args = dict(trials=2400, seed=8)
    a = coverage_experiment(NL, LOC, Truth.cycle([-5, 0, 12]), jobs=1, batch=2400, **args)
    b = coverage_experiment(NL, LOC, Truth.cycle([-5, 0, 12]), jobs=2, batch=300, **args)
    assert a.csv_row() == b.csv_row()
    u1 = pit_values(NL, LOC, 1.0, 500, seed=4, jobs=1, batch=500)
    u2 = pit_values(NL, LOC, 1.0, 500, seed=4, jobs=3, batch=70)
    assert np.array_equal(u1, u2)


def test_stream_and_seed_agree():
    a = coverage_experiment(NL, LOC, 0.0, trials=300, seed=5)
    b = coverage_experiment(NL, LOC, 0.0, trials=300, stream=RandomStream(5, 0))
    c = coverage_experiment(NL, LOC, 0.0, trials=300, stream=RandomStream(5, 1))
    assert a.covered == b.covered
    assert c.config_echo["stream_id"] == 1


def test_coverage_curve_levels_share_trials():
    reps = coverage_curve(NL, LOC, 0.0, [(0.05, 0.9), (0.25, 0.5)], trials=500, seed=2)
    single = coverage_experiment(NL, LOC, 0.0, alpha=0.25, delta=0.5, trials=500, seed=2)
    assert reps[1].covered == single.covered
    assert reps[0].target_delta == 0.9


def test_failed_trials_recorded_or_raised():
    # a flat factor on a scale parameter never normalizes
    rep = coverage_experiment(ES, LOC, 2.0, trials=20, seed=1)
    assert len(rep.failed_trials) == 20 and rep.trials == 0
    with pytest.raises(InferenceError):
        coverage_experiment(ES, LOC, 2.0, trials=20, seed=1, raise_on_failure=True)


def test_bad_arguments():
    with pytest.raises(ValueError):
        coverage_experiment(NL, LOC, 0.0, trials=0, seed=1)
    with pytest.raises(ValueError):
        coverage_experiment(NL, LOC, 0.0, trials=10)


def test_ks_critical_value():
    assert ks_critical(10**4) == pytest.approx(0.0163, abs=5e-5)


def test_pit_uniform_for_consistent_factor():
    n = 4000
    assert predictive_pit_check(NL, LOC, 3.0, n, seed=11) < ks_critical(n)
    assert predictive_pit_check(ES, SCALE, 2.0, n, seed=12) < ks_critical(n)


def test_pit_degenerate_predictive():
    n = 4000
    u = pit_values(NL, LOC, 3.0, n, seed=11, degenerate=True)
    assert stats.kstest(u, "uniform").statistic < ks_critical(n)


def test_pit_detects_wrong_factor():
    n = 4000
    wrong = sigma_power_factor(-2, dim=1)
    assert predictive_pit_check(ES, wrong, 2.0, n, seed=12) > ks_critical(n)
