import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from invprob.errors import TrivialLocusCrossed
from invprob.families import GenericFamily, get_family
from invprob.invariance import (
    GroupAction,
    action_derivative,
    affine,
    check_H_form,
    check_invariance,
    get_group,
    group_for,
    param_action_derivative,
    reduction_maps,
    scaling,
    translation,
    trivial_locus,
)
from invprob.numerics import POSITIVE, REAL_LINE, Interval


def test_affine_invariance_of_normal():
    fam = get_family("normal")
    assert check_invariance(fam, affine(), [np.array([1.0, 2.0])], n_grid=64) < 1e-10


@pytest.mark.parametrize("label", ["normal", "cauchy-location", "exponential-scale", "logistic"])
def test_identity_element_gives_zero(label):
    fam = get_family(label)
    grp = group_for(fam)
    assert check_invariance(fam, grp, [grp.identity]) == 0.0


def test_cubic_pseudo_action_rejected():
    fam = get_family("normal")
    cube = GroupAction(
        label="cube",
        dim=2,
        act=lambda a, x: a[1] * np.asarray(x, float) ** 3 + a[0],
        act_param=affine().act_param,
        compose=affine().compose,
        inverse=affine().inverse,
        identity=np.array([0.0, 1.0]),
        element_space=(REAL_LINE, POSITIVE),
    )
    assert check_invariance(fam, cube, [np.array([0.5, 1.5])]) > 0.01


def test_exponential_scale_invariance():
    fam = get_family("exponential-scale")
    assert check_invariance(fam, scaling(), [0.3, 2.0, 7.5]) < 1e-12


def test_action_derivative_examples():
    x = np.linspace(-5, 5, 11)
    assert np.allclose(action_derivative(translation(), x), -1.0, atol=1e-9)
    assert action_derivative(scaling(), 0.0) == 0.0
    assert action_derivative(scaling(), 3.0) == pytest.approx(-3.0, rel=1e-9)


def test_trivial_locus_examples():
    assert trivial_locus(translation(), REAL_LINE) == []
    locus = trivial_locus(scaling(), REAL_LINE)
    assert len(locus) == 1 and abs(locus[0]) < 1e-12
    assert trivial_locus(scaling(), POSITIVE) == []


def test_trivial_locus_off_grid_center():
    # the zero is found by root refinement even when no node hits it
    locus = trivial_locus(scaling(center=0.123), REAL_LINE)
    assert len(locus) == 1 and locus[0] == pytest.approx(0.123, abs=1e-9)


@pytest.mark.parametrize("x", [0.0, 2.0, -2.0])
def test_derivative_vanishes_iff_fixed_point(x):
    grp = scaling()
    probes = [0.2, 0.5, 1.7, 4.0]
    fixed = all(grp.act(a, x) == x for a in probes)
    assert (abs(action_derivative(grp, x)) < 1e-12) == fixed


def test_parameter_derivative_bounded_away_from_zero():
    grp = scaling()
    sigma = np.geomspace(1e-3, 1e3, 200)
    d = np.abs(param_action_derivative(grp, sigma))
    assert np.all(d / sigma > 0.99)
    assert np.all(np.abs(param_action_derivative(translation(), np.linspace(-50, 50, 101))) > 0.99)


def test_reduction_translation():
    maps = reduction_maps(translation(), get_family("normal-location"), x0=0.0, theta0=0.0)
    x = np.array([-3.0, -0.2, 1.0, 4.5])
    assert np.allclose(maps.s(x), x, atol=1e-12)
    assert np.allclose(maps.s_bar(x), x, atol=1e-12)


def test_reduction_scaling_is_log():
    maps = reduction_maps(scaling(), get_family("exponential-scale"), x0=1.0, theta0=1.0)
    x = np.array([0.01, 0.5, 2.0, 40.0])
    assert np.allclose(maps.s(x), np.log(x), atol=1e-9)
    assert np.allclose(maps.s_bar(x), np.log(x), atol=1e-9)
    assert maps.s_inverse(math.log(3.0)) == pytest.approx(3.0, rel=1e-10)


def test_reduction_negative_branch():
    # normal-scale has support on both sides of the locus at 0
    maps = reduction_maps(scaling(), get_family("normal-scale"), x0=-1.0, theta0=1.0)
    assert maps.side == -1
    xs = np.array([-5.0, -1.0, -0.1])
    assert np.all(np.diff(maps.s(xs)) > 0)
    with pytest.raises(TrivialLocusCrossed):
        maps.s(1.0)


def test_anchor_on_locus_refused():
    with pytest.raises(TrivialLocusCrossed):
        reduction_maps(scaling(), get_family("normal-scale"), x0=0.0, theta0=1.0)


def test_reduction_maps_increasing_random_pairs():
    maps = reduction_maps(scaling(), get_family("exponential-scale"), x0=1.0, theta0=1.0)
    rng = np.random.default_rng(3)
    pairs = np.sort(np.exp(rng.uniform(-5, 5, (1000, 2))), axis=1)
    pairs = pairs[pairs[:, 0] < pairs[:, 1]]
    # ln is the oracle; checking it pointwise covers every pair at once
    grid = np.unique(pairs)
    s = maps.s(grid[::20])
    assert np.all(np.diff(s) > 0)
    assert np.allclose(s, np.log(grid[::20]), atol=1e-9)


def test_h_form_location():
    fam = get_family("normal-location")
    maps = reduction_maps(translation(), fam)
    assert check_H_form(fam, maps) < 1e-9


def test_h_form_exponential_scale():
    fam = get_family("exponential-scale")
    maps = reduction_maps(scaling(), fam)
    assert check_H_form(fam, maps) < 1e-8


def test_h_form_rejects_broken_family():
    # Weibull whose shape moves with sigma is not scale invariant
    fam = GenericFamily(
        lambda x, s: stats.weibull_min.logpdf(x, 1 + s, scale=s),
        lambda x, s: stats.weibull_min.cdf(x, 1 + s, scale=s),
        lambda s: POSITIVE,
        POSITIVE,
        group_spec=("scaling", {}),
    )
    maps = reduction_maps(scaling(), fam)
    assert check_H_form(fam, maps) > 0.01


def _affine_elements(rng, k):
    return [np.array([rng.uniform(-5, 5), math.exp(rng.uniform(-2, 2))]) for _ in range(k)]


def test_group_axioms_random_triples():
    rng = np.random.default_rng(11)
    x = rng.uniform(-10, 10, 1000)
    grp = translation()
    a, b = rng.uniform(-5, 5, 1000), rng.uniform(-5, 5, 1000)
    assert np.max(np.abs(grp.act(grp.compose(a, b), x) - grp.act(a, grp.act(b, x)))) < 1e-10
    assert np.max(np.abs(grp.act(grp.identity, x) - x)) == 0.0
    assert np.max(np.abs(grp.act(grp.inverse(a), grp.act(a, x)) - x)) < 1e-10

    grp = scaling()
    a, b = np.exp(rng.uniform(-2, 2, 1000)), np.exp(rng.uniform(-2, 2, 1000))
    assert np.max(np.abs(grp.act(grp.compose(a, b), x) - grp.act(a, grp.act(b, x)))) < 1e-10
    assert np.max(np.abs(grp.act(grp.identity, x) - x)) == 0.0
    assert np.max(np.abs(grp.act(grp.inverse(a), grp.act(a, x)) - x)) < 1e-10
    s = np.exp(rng.uniform(-2, 2, 1000))
    assert np.max(np.abs(grp.act_param(grp.compose(a, b), s) - grp.act_param(a, grp.act_param(b, s)))) < 1e-10

    grp = affine()
    worst = 0.0
    ea, eb = _affine_elements(rng, 1000), _affine_elements(rng, 1000)
    theta = np.stack([rng.uniform(-5, 5, 1000), np.exp(rng.uniform(-2, 2, 1000))], axis=-1)
    for i in range(1000):
        a, b = ea[i], eb[i]
        ab = grp.compose(a, b)
        worst = max(worst, abs(grp.act(ab, x[i]) - grp.act(a, grp.act(b, x[i]))))
        worst = max(worst, np.max(np.abs(grp.act_param(ab, theta[i]) - grp.act_param(a, grp.act_param(b, theta[i])))))
        worst = max(worst, abs(grp.act(grp.inverse(a), grp.act(a, x[i])) - x[i]))
    assert worst < 1e-10
    assert np.allclose(grp.act_param(grp.identity, theta), theta, rtol=0, atol=0)


def test_affine_composition_law():
    grp = affine()
    a, b = np.array([1.5, 2.0]), np.array([-0.5, 3.0])
    assert np.allclose(grp.compose(a, b), [2.0 * -0.5 + 1.5, 6.0])


@given(a=st.floats(-20, 20), mu=st.floats(-5, 5))
def test_location_invariance_property(a, mu):
    fam = get_family("cauchy-location")
    xs = np.linspace(-10, 10, 33)
    assert check_invariance(fam, translation(), [a], grid=xs, thetas=[[mu]]) < 1e-12


def test_registry():
    assert get_group("scaling", center=2.0).act(3.0, 3.0) == pytest.approx(5.0)
    with pytest.raises(KeyError, match="affine"):
        get_group("rotation")
    assert isinstance(trivial_locus(scaling(), Interval(1.0, 2.0)), list)
