import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import gamma, pbdv

from invprob.errors import SingularInformation
from invprob.families import GenericFamily, MonotoneMap, get_family
from invprob.invariance import translation
from invprob.numerics import REAL_LINE
from invprob.posterior import factor_functional_residual, transform_factor
from invprob.rivals import (
    SQRT_FACTOR,
    U_POWER,
    compare_rules,
    consistency_marginal_lambda,
    factor_discrepancy,
    fisher_information,
    jeffreys_factor,
    l1_distance,
    lambda_limit,
    lambda_marginal_via_joint,
    log_u_integral,
    reference_marginal_lambda,
    rule_joint_factor,
    uniform_factor,
)

NORMAL = get_family("normal")


@pytest.fixture(scope="module")
def jeffreys_normal():
    return jeffreys_factor(NORMAL)


def test_fisher_examples():
    assert np.allclose(fisher_information(NORMAL, [0.3, 1.0]).entries, [[1, 0], [0, 2]], atol=1e-5)
    assert np.allclose(fisher_information(NORMAL, [0.3, 2.0]).entries, [[0.25, 0], [0, 0.5]], atol=1e-5)
    assert np.allclose(fisher_information(get_family("exponential-scale"), [2.0]).entries, [[0.25]], atol=1e-5)


def test_fisher_random_parameters():
    rng = np.random.default_rng(6)
    es = get_family("exponential-scale")
    for _ in range(10):
        mu, sigma = rng.uniform(-5, 5), math.exp(rng.uniform(-1.5, 1.5))
        fm = fisher_information(NORMAL, [mu, sigma])
        assert np.allclose(fm.entries, np.diag([1, 2]) / sigma ** 2, atol=1e-5)
        assert np.allclose(fm.entries, fm.entries.T, atol=1e-7)
        assert np.min(np.linalg.eigvalsh(fm.entries)) >= -1e-9
        s = math.exp(rng.uniform(-1.5, 1.5))
        assert fisher_information(es, [s]).entries[0, 0] == pytest.approx(s ** -2, abs=1e-5)


def test_fisher_dimension_check():
    with pytest.raises(ValueError):
        fisher_information(NORMAL, [0.0])


def test_jeffreys_joint_ratio(jeffreys_normal):
    j = jeffreys_normal
    assert j(np.array([0.5, 1.0])) / j(np.array([-2.0, 2.0])) == pytest.approx(4.0, rel=1e-4)


def test_jeffreys_pinned_families():
    loc = jeffreys_factor(get_family("normal-location"))
    assert loc(0.3) / loc(2.1) == pytest.approx(1.0, abs=1e-5)
    scale = jeffreys_factor(get_family("normal-scale"))
    assert scale(1.0) / scale(2.0) == pytest.approx(2.0, rel=1e-4)


def test_jeffreys_is_reparameterization_covariant():
    fam = get_family("normal-scale")
    log = MonotoneMap.log()
    in_lambda = GenericFamily(
        lambda x, lam: fam.logpdf(x, np.exp(lam)),
        lambda x, lam: fam.cdf(x, np.exp(lam)),
        lambda lam: fam.support(math.exp(lam)),
        REAL_LINE,
    )
    lam = np.linspace(-2, 2, 21)
    pushed = transform_factor(jeffreys_factor(fam), log)
    direct = jeffreys_factor(in_lambda)
    assert factor_discrepancy(pushed, direct, lam) < 1e-5


def test_singular_information():
    # F(x | t) = Phi(x - t^3) carries no information at t = 0
    fam = GenericFamily(lambda x, t: stats.norm.logpdf(x - t ** 3), lambda x, t: stats.norm.cdf(x - t ** 3),
                        lambda t: REAL_LINE, REAL_LINE)
    with pytest.raises(SingularInformation):
        jeffreys_factor(fam)


def test_uniform_factor():
    u = uniform_factor()
    assert u(3.7) == 1.0 and u(-100.0) == 1.0
    pushed = transform_factor(u, MonotoneMap.log())
    lam = np.linspace(-2, 2, 9)
    assert np.allclose(pushed(lam), np.exp(lam))
    assert factor_discrepancy(pushed, u, lam) > 0.01
    assert factor_functional_residual(u, translation()) == 0.0


def test_log_u_integral_matches_parabolic_cylinder():
    b = np.array([-3.0, 0.0, 1.4142135623730951, 2.0, 7.4])
    for p in (0, 1, 2, 3, 5):
        oracle = np.log(gamma(p + 1) * np.exp(b * b / 4) * pbdv(-p - 1, -b)[0])
        assert np.max(np.abs(log_u_integral(p, b) - oracle)) < 1e-12


def test_reference_marginal_examples():
    ref = reference_marginal_lambda([1.0, 1.0])
    assert ref.mass == pytest.approx(1.0, abs=1e-6)
    L = lambda_limit(2)
    grid = np.linspace(-L, L, 401)
    assert np.max(np.abs(reference_marginal_lambda([2.0, 2.0]).density(grid) - ref.density(grid))) < 1e-8
    sym = reference_marginal_lambda([1.0, -1.0])
    assert np.max(np.abs(sym.density(grid) - sym.density(-grid))) < 1e-7


def test_lambda_limit():
    L = lambda_limit(4)
    assert math.exp(-4 * L * L / 2) == pytest.approx(1e-12, rel=1e-9)


def test_consistency_marginal_examples():
    post = consistency_marginal_lambda([1.0, 1.0])
    assert post.mass == pytest.approx(1.0, abs=1e-6)
    # either u power sits one step away from the reference rule
    for n in (2, 3, 7):
        assert abs(U_POWER["consistency"](n) - U_POWER["reference"](n)) == 1
        assert abs(U_POWER["consistency-un"](n) - U_POWER["reference"](n)) == 1
    assert SQRT_FACTOR["reference"] and not SQRT_FACTOR["consistency"]


@pytest.mark.parametrize("data", [[1.0, 1.0], [0.0, 2.0], [0.0, 1.0, 3.0]])
def test_consistency_marginal_matches_joint_route(data):
    grid, dens = lambda_marginal_via_joint(NORMAL, data)
    closed = consistency_marginal_lambda(data)
    assert l1_distance(grid, closed.density(grid), dens) < 1e-4


def test_u_power_n_disagrees_with_joint_route():
    grid, dens = lambda_marginal_via_joint(NORMAL, [1.0, 1.0])
    un = consistency_marginal_lambda([1.0, 1.0], exponent="n")
    assert l1_distance(grid, un.density(grid), dens) > 0.1
    # and matches the joint route with a sigma^-3 factor
    grid, dens3 = lambda_marginal_via_joint(NORMAL, [1.0, 1.0], rule_joint_factor("consistency-un"))
    assert l1_distance(grid, un.density(grid), dens3) < 1e-4


@settings(max_examples=10)
@given(c=st.floats(0.05, 20), data=st.lists(st.floats(-3, 3), min_size=2, max_size=4))
def test_marginals_invariant_to_data_scale(c, data):
    if sum(x * x for x in data) < 1e-2:
        data = [x + 1 for x in data]
    L = lambda_limit(len(data))
    grid = np.linspace(-L, L, 101)
    scaled = [c * x for x in data]
    for make in (reference_marginal_lambda, consistency_marginal_lambda):
        assert np.max(np.abs(make(data).density(grid) - make(scaled).density(grid))) < 1e-7


def test_compare_rules_examples():
    incompatible = compare_rules("consistency", "reference", NORMAL, [1.0, 1.0], product_residuals=False)
    assert incompatible.l1_distance > 0.01
    same = compare_rules("consistency", "consistency", NORMAL, [1.0, 1.0], product_residuals=False)
    assert same.l1_distance < 1e-9


def test_compare_rules_product_residuals():
    cmp = compare_rules("jeffreys", "consistency", NORMAL, [0.0, 2.0])
    assert cmp.product_rule_residual_a > 0.01
    assert cmp.product_rule_residual_b < 1e-5
    d = cmp.to_dict(arrays=False)
    assert d["rule_a"] == "jeffreys" and "grid" not in d
    assert cmp.l1_distance >= 0


def test_compare_rules_improper_joint_is_noted():
    cmp = compare_rules("consistency", "uniform", NORMAL, [1.0, 1.0])
    assert cmp.product_rule_residual_a is None and cmp.notes


def test_unknown_rule():
    with pytest.raises(ValueError, match="reference"):
        rule_joint_factor("maxent")
