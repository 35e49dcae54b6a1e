import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from invprob.errors import NoSignChange, NonConvergence, NonFinite
from invprob.numerics import (
    POSITIVE,
    REAL_LINE,
    UNIT,
    Interval,
    RandomStream,
    Tolerance,
    build_grid,
    find_root,
    integrate,
)


def test_interval_rejects_empty():
    with pytest.raises(ValueError):
        Interval(1.0, 1.0)


def test_normal_pdf_integrates_to_one():
    f = lambda t: np.exp(-t * t / 2) / math.sqrt(2 * math.pi)
    assert integrate(f, REAL_LINE) == pytest.approx(1.0, abs=1e-12)


def test_half_line_scale_density():
    f = lambda s: s ** -2.0 * np.exp(-1.0 / s)
    assert integrate(f, POSITIVE) == pytest.approx(1.0, abs=1e-10)


def test_constant_on_unit():
    assert integrate(lambda t: np.ones_like(t), UNIT) == pytest.approx(1.0, abs=1e-15)


def test_heavy_tail_cauchy():
    f = lambda t: 1.0 / (math.pi * (1 + t * t))
    assert integrate(f, REAL_LINE) == pytest.approx(1.0, abs=1e-9)


def test_nonfinite_integrand():
    def f(t):
        return np.where(np.abs(t - 0.3) < 0.2, np.nan, 1.0)

    with pytest.raises(NonFinite):
        integrate(f, UNIT)


def test_budget_exhausted():
    # oscillation too fine for a tiny budget
    f = lambda t: np.sin(400 * t) ** 2
    with pytest.raises(NonConvergence):
        integrate(f, Interval(0.0, 50.0), Tolerance(rel=1e-13, abs=1e-15, max_subdivisions=2))


@given(
    a=st.floats(-3, 3), b=st.floats(-3, 3),
    m1=st.floats(-2, 2), m2=st.floats(-2, 2),
    w1=st.floats(0.3, 3), w2=st.floats(0.3, 3),
)
def test_integrate_is_linear(a, b, m1, m2, w1, w2):
    f = lambda t: np.exp(-((t - m1) / w1) ** 2)
    g = lambda t: 1.0 / (1.0 + ((t - m2) / w2) ** 2) ** 2
    lhs = integrate(lambda t: a * f(t) + b * g(t), REAL_LINE)
    rhs = a * integrate(f, REAL_LINE) + b * integrate(g, REAL_LINE)
    scale = abs(a) * 5 + abs(b) * 5
    assert abs(lhs - rhs) <= 1e-9 * scale + 1e-12


def test_roots_examples():
    assert find_root(lambda x: x - 2, (0.0, 5.0)) == pytest.approx(2.0, abs=1e-12)
    g = lambda s: math.exp(-1 / s) - 0.05
    assert find_root(g, (0.01, 100.0)) == pytest.approx(-1 / math.log(0.05), rel=1e-9)
    g = lambda s: math.exp(-1 / s) - 0.95
    assert find_root(g, (0.01, 100.0)) == pytest.approx(19.4957257462238, rel=1e-9)


def test_root_without_sign_change():
    with pytest.raises(NoSignChange):
        find_root(lambda x: x * x + 1, (-1.0, 1.0))


@given(
    root=st.floats(-50, 50),
    kind=st.sampled_from(["cubic", "exp", "atan", "linear"]),
    scale=st.floats(0.01, 100),
)
def test_root_brackets_monotone_functions(root, kind, scale):
    fns = {
        "cubic": lambda x: (x - root) ** 3 + (x - root),
        "exp": lambda x: math.expm1(min((x - root) / scale, 700)),
        "atan": lambda x: math.atan((x - root) * scale),
        "linear": lambda x: scale * (x - root),
    }
    g = fns[kind]
    tol = Tolerance()
    x = find_root(g, (-100.0, 100.0), tol)
    assert abs(g(x)) <= tol.abs or abs(x - root) <= 1e-8 * max(1.0, abs(root))


def test_grid_unit_three_nodes():
    assert np.allclose(build_grid(UNIT, 3), [0.0, 0.5, 1.0])


def test_grid_normal_hint_is_bounded():
    hint = lambda t: np.exp(-t * t / 2)
    nodes = build_grid(REAL_LINE, 200, hint)
    assert np.all(np.diff(nodes) > 0)
    assert nodes.min() >= -9 and nodes.max() <= 9


def test_grid_half_line_two_nodes():
    nodes = build_grid(POSITIVE, 2)
    assert len(nodes) == 2 and np.all(np.isfinite(nodes)) and nodes[0] < nodes[1]


@given(n=st.integers(2, 300), lo=st.floats(-10, 10), width=st.floats(0.1, 10))
def test_grid_strictly_increasing(n, lo, width):
    nodes = build_grid(Interval(lo, lo + width), n)
    assert len(nodes) == n
    assert np.all(np.diff(nodes) > 0)


def test_stream_reproducible_million():
    a = RandomStream(42, 7).uniform(10**6)
    b = RandomStream(42, 7).uniform(10**6)
    assert np.array_equal(a, b)


def test_streams_differ_by_id():
    a = RandomStream(42, 7).uniform(1000)
    b = RandomStream(42, 8).uniform(1000)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.15
