"""Group actions on sample and parameter space.

Group elements are floats for one-dimensional groups and length-2 sequences
``(a1, a2)`` for the affine group, acting as ``x -> a2 * x + a1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NoSignChange, NonDifferentiable, TrivialLocusCrossed
from .families import DirectFamily
from .numerics import (
    DEFAULT_TOL,
    FD_STEP,
    POSITIVE,
    REAL_LINE,
    Interval,
    Tolerance,
    bracket_increasing,
    build_grid,
    find_root,
    integrate,
)

__all__ = [
    "GroupAction",
    "ReductionMaps",
    "translation",
    "scaling",
    "affine",
    "get_group",
    "group_labels",
    "group_for",
    "action_derivative",
    "param_action_derivative",
    "param_jacobian",
    "trivial_locus",
    "reduction_maps",
    "check_invariance",
    "check_H_form",
]

# one-sided difference mismatch tolerated before declaring a kink
_KINK_REL = 1e-3


@dataclass(frozen=True)
class GroupAction:
    """Left action ``act`` on the sample space with induced ``act_param``.

    ``d_identity`` and ``d_identity_param`` may give the derivative of
    ``a -> act(inverse(a), x)`` at the identity in closed form, and
    ``jacobian`` the absolute Jacobian determinant of ``theta -> act_param(a, theta)``.
    They are optional; finite differences are used otherwise.
    """

    label: str
    dim: int
    act: Callable
    act_param: Callable
    compose: Callable
    inverse: Callable
    identity: object
    element_space: tuple[Interval, ...]
    d_identity: Callable | None = None
    d_identity_param: Callable | None = None
    jacobian: Callable | None = None
    params: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {"label": self.label, **self.params}


def translation() -> GroupAction:
    return GroupAction(
        label="translation",
        dim=1,
        act=lambda a, x: np.asarray(x, dtype=float) + a,
        act_param=lambda a, t: np.asarray(t, dtype=float) + a,
        compose=lambda a, b: a + b,
        inverse=lambda a: -a,
        identity=0.0,
        element_space=(REAL_LINE,),
        d_identity=lambda x: -np.ones_like(np.asarray(x, dtype=float)),
        d_identity_param=lambda t: -np.ones_like(np.asarray(t, dtype=float)),
        jacobian=lambda a, t: np.ones_like(np.asarray(t, dtype=float)),
    )


def scaling(center: float = 0.0) -> GroupAction:
    """Dilations ``x -> center + a (x - center)``; the parameter scales as ``a * sigma``."""
    c = float(center)
    return GroupAction(
        label="scaling",
        dim=1,
        act=lambda a, x: c + a * (np.asarray(x, dtype=float) - c),
        act_param=lambda a, t: a * np.asarray(t, dtype=float),
        compose=lambda a, b: a * b,
        inverse=lambda a: 1.0 / a,
        identity=1.0,
        element_space=(POSITIVE,),
        d_identity=lambda x: -(np.asarray(x, dtype=float) - c),
        d_identity_param=lambda t: -np.asarray(t, dtype=float),
        jacobian=lambda a, t: np.full(np.shape(t), abs(a), dtype=float),
        params={"center": c},
    )


def _affine_act(a, x):
    return a[1] * np.asarray(x, dtype=float) + a[0]


def _affine_act_param(a, t):
    t = np.asarray(t, dtype=float)
    return np.stack([a[1] * t[..., 0] + a[0], a[1] * t[..., 1]], axis=-1)


def affine() -> GroupAction:
    return GroupAction(
        label="affine",
        dim=2,
        act=_affine_act,
        act_param=_affine_act_param,
        compose=lambda a, b: np.array([a[1] * b[0] + a[0], a[1] * b[1]]),
        inverse=lambda a: np.array([-a[0] / a[1], 1.0 / a[1]]),
        identity=np.array([0.0, 1.0]),
        element_space=(REAL_LINE, POSITIVE),
        jacobian=lambda a, t: np.full(np.shape(t)[:-1], a[1] ** 2, dtype=float),
    )


_GROUPS = {"translation": translation, "scaling": scaling, "affine": affine}


def group_labels() -> list[str]:
    return sorted(_GROUPS)


def get_group(label: str, **kwargs) -> GroupAction:
    try:
        maker = _GROUPS[label]
    except KeyError:
        raise KeyError(f"unknown group {label!r}; available: {', '.join(group_labels())}") from None
    return maker(**kwargs)


def group_for(fam: DirectFamily) -> GroupAction | None:
    """The invariance group a family declares, or None."""
    spec = getattr(fam, "group_spec", None)
    if spec is None:
        return None
    label, kwargs = spec
    return get_group(label, **kwargs)


# ---------------------------------------------------------------------------
# derivatives at the identity


def _identity_derivative(grp: GroupAction, fn: Callable, x) -> np.ndarray:
    if grp.dim != 1:
        raise ValueError("derivatives at the identity need a one-dimensional group")
    e = float(grp.identity)
    h = FD_STEP * max(1.0, abs(e))
    x = np.asarray(x, dtype=float)
    f_plus = fn(grp.inverse(e + h), x)
    f_zero = fn(grp.inverse(e), x)
    f_minus = fn(grp.inverse(e - h), x)
    central = (f_plus - f_minus) / (2 * h)
    fwd = (f_plus - f_zero) / h
    bwd = (f_zero - f_minus) / h
    scale = np.maximum(1.0, np.maximum(np.abs(central), np.abs(x)))
    if np.any(np.abs(fwd - bwd) > _KINK_REL * scale):
        raise NonDifferentiable(f"{grp.label} action is not differentiable at the identity")
    return central


def _cross_check(grp: GroupAction, numeric, exact) -> None:
    exact = np.asarray(exact, dtype=float)
    if np.any(np.abs(numeric - exact) > 1e-5 * np.maximum(1.0, np.abs(exact))):
        raise NonDifferentiable(f"{grp.label}: supplied derivative disagrees with finite differences")


def action_derivative(grp: GroupAction, x):
    """d/da act(inverse(a), x) at the identity, by central differences."""
    d = _identity_derivative(grp, grp.act, x)
    if grp.d_identity is not None:
        _cross_check(grp, d, grp.d_identity(x))
    return d if np.ndim(d) else float(d)


def param_action_derivative(grp: GroupAction, theta):
    """Parameter-side counterpart of :func:`action_derivative`."""
    d = _identity_derivative(grp, grp.act_param, theta)
    if grp.d_identity_param is not None:
        _cross_check(grp, d, grp.d_identity_param(theta))
    return d if np.ndim(d) else float(d)


def param_jacobian(grp: GroupAction, a, theta) -> np.ndarray:
    """|det d act_param(a, theta) / d theta| at each parameter point."""
    theta = np.asarray(theta, dtype=float)
    if grp.jacobian is not None:
        return np.asarray(grp.jacobian(a, theta), dtype=float)
    if grp.dim == 1 and (theta.ndim == 0 or theta.shape[-1] != 1):
        h = FD_STEP * np.maximum(1.0, np.abs(theta))
        return np.abs((grp.act_param(a, theta + h) - grp.act_param(a, theta - h)) / (2 * h))
    m = theta.shape[-1]
    jac = np.empty(theta.shape[:-1] + (m, m))
    for j in range(m):
        h = FD_STEP * np.maximum(1.0, np.abs(theta[..., j]))
        step = np.zeros_like(theta)
        step[..., j] = h
        diff = grp.act_param(a, theta + step) - grp.act_param(a, theta - step)
        jac[..., :, j] = diff / (2 * h)[..., None]
    return np.abs(np.linalg.det(jac))


# ---------------------------------------------------------------------------
# trivial locus


def trivial_locus(grp: GroupAction, support: Interval, grid=None,
                  tol: Tolerance = DEFAULT_TOL) -> list[float]:
    """Points of ``support`` where the action derivative vanishes."""
    if grid is None:
        grid = build_grid(support, 257)
    grid = np.asarray(grid, dtype=float)
    grid = grid[support.contains(grid)]
    if len(grid) == 0:
        return []
    d = np.asarray(action_derivative(grp, grid), dtype=float)
    found = list(grid[np.abs(d) < tol.abs])
    flips = np.flatnonzero((np.sign(d[:-1]) * np.sign(d[1:])) < 0)
    g = lambda x: float(action_derivative(grp, x))  # noqa: E731
    for i in flips:
        root = find_root(g, (grid[i], grid[i + 1]), Tolerance(rel=1e-14, abs=tol.abs))
        if abs(g(root)) < max(tol.abs, 1e-9 * max(1.0, abs(root))):
            found.append(root)
    found.sort()
    out: list[float] = []
    for x in found:
        if not out or abs(x - out[-1]) > 1e-9 * max(1.0, abs(x)):
            out.append(float(x))
    return out


def _branch(domain: Interval, locus: Sequence[float], x0: float) -> Interval:
    lo, hi = domain.lo, domain.hi
    for z in locus:
        if z <= x0:
            lo = max(lo, z)
        else:
            hi = min(hi, z)
    return Interval(lo, hi)


# ---------------------------------------------------------------------------
# reduction maps

_ANCHORS = (0.0, 1.0, -1.0, 0.5, 2.0, -0.5, -2.0)


def _default_anchor(domain: Interval, deriv: Callable) -> float:
    for c in _ANCHORS:
        if domain.contains(c) and abs(float(deriv(c))) > 1e-6:
            return c
    for c in build_grid(domain, 9)[1:-1]:
        if abs(float(deriv(c))) > 1e-6:
            return float(c)
    raise ValueError("no admissible anchor point found")


@dataclass(frozen=True)
class _Coordinate:
    """Monotone coordinate u(x) = sign * integral from x0 of 1/D."""

    deriv: Callable
    anchor: float
    branch: Interval
    sign: float
    tol: Tolerance

    def rate(self, x):
        return self.sign / np.asarray(self.deriv(x), dtype=float)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.array([self._one(float(v)) for v in np.ravel(x)])
        return out.reshape(x.shape) if x.ndim else float(out[0])

    def _one(self, x: float) -> float:
        if not (self.branch.lo < x < self.branch.hi):
            raise TrivialLocusCrossed(
                f"{x} lies outside the branch ({self.branch.lo}, {self.branch.hi}) of the anchor {self.anchor}")
        if x == self.anchor:
            return 0.0
        lo, hi = min(x, self.anchor), max(x, self.anchor)
        val = integrate(self.rate, Interval(lo, hi), self.tol)
        return val if x > self.anchor else -val

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        out = np.array([self._inv_one(float(v)) for v in np.ravel(y)])
        return out.reshape(y.shape) if y.ndim else float(out[0])

    def _inv_one(self, y: float) -> float:
        if y == 0.0:
            return self.anchor
        g = lambda x: self._one(x) - y  # noqa: E731
        inner = _shrink(self.branch)
        lo, hi = bracket_increasing(g, inner, start=self.anchor)
        return find_root(g, (lo, hi), Tolerance(rel=1e-13, abs=1e-13))


def _shrink(b: Interval) -> Interval:
    # keep root-finding brackets strictly inside the branch
    lo = b.lo if math.isinf(b.lo) else b.lo + 1e-12 * max(1.0, abs(b.lo))
    hi = b.hi if math.isinf(b.hi) else b.hi - 1e-12 * max(1.0, abs(b.hi))
    return Interval(lo, hi)


@dataclass(frozen=True)
class ReductionMaps:
    """Coordinates ``s`` (sample side) and ``s_bar`` (parameter side).

    Both are increasing on their branches and vanish at the anchors.  ``side``
    is +1 or -1 according to where the sample anchor sits relative to the
    trivial locus (+1 when there is none).
    """

    group: GroupAction
    x_anchor: float
    theta_anchor: float
    branch: Interval
    param_branch: Interval
    side: int
    _s: _Coordinate
    _s_bar: _Coordinate

    def s(self, x):
        return self._s(x)

    def ds(self, x):
        return self._s.rate(x)

    def s_inverse(self, y):
        return self._s.inverse(y)

    def s_bar(self, theta):
        return self._s_bar(theta)

    def ds_bar(self, theta):
        return self._s_bar.rate(theta)

    def s_bar_inverse(self, y):
        return self._s_bar.inverse(y)


def reduction_maps(grp: GroupAction, fam: DirectFamily, x0: float | None = None,
                   theta0: float | None = None, tol: Tolerance = DEFAULT_TOL) -> ReductionMaps:
    """Build s and s_bar with s' = 1/|D| and s_bar' sharing the sign change.

    D is the action derivative at the identity on each side.  Flipping both
    coordinates together keeps F as a function of s(x) - s_bar(theta).
    """
    if grp.dim != 1 or fam.dim != 1:
        raise ValueError("reduction maps need a one-dimensional group and parameter")
    d_x = lambda x: action_derivative(grp, x)  # noqa: E731
    d_t = lambda t: param_action_derivative(grp, t)  # noqa: E731
    pspace = fam.param_space[0]
    if theta0 is None:
        theta0 = _default_anchor(pspace, d_t)
    support = fam.support(theta0)
    if x0 is None:
        x0 = _default_anchor(support, d_x)
    x0, theta0 = float(x0), float(theta0)
    if not support.contains(x0):
        raise ValueError(f"anchor x0={x0} lies outside the support")
    dx0 = float(d_x(x0))
    if abs(dx0) < tol.abs:
        raise TrivialLocusCrossed(f"anchor x0={x0} sits on the trivial locus")
    locus = trivial_locus(grp, support, tol=tol)
    branch = _branch(support, locus, x0)
    p_locus = _param_locus(grp, pspace, tol)
    p_branch = _branch(pspace, p_locus, theta0)
    sign = math.copysign(1.0, dx0)
    side = 1 if not locus or x0 > locus[0] else -1
    s = _Coordinate(d_x, x0, branch, sign, tol)
    s_bar = _Coordinate(d_t, theta0, p_branch, sign, tol)
    return ReductionMaps(grp, x0, theta0, branch, p_branch, side, s, s_bar)


def _param_locus(grp: GroupAction, space: Interval, tol: Tolerance) -> list[float]:
    grid = build_grid(space, 257)
    grid = grid[space.contains(grid)]
    d = np.asarray(param_action_derivative(grp, grid), dtype=float)
    return sorted(float(z) for z in grid[np.abs(d) < tol.abs])


# ---------------------------------------------------------------------------
# residual checks


def _x_grid(fam: DirectFamily, theta, n: int) -> np.ndarray:
    hint = lambda x: fam.logpdf(x, theta)  # noqa: E731
    nodes = build_grid(fam.support(theta), n, hint, log_hint=True, n_scan=257)
    return nodes[fam.support(theta).contains(nodes)]


def check_invariance(fam: DirectFamily, grp: GroupAction, elements, grid=None,
                     thetas=None, n_grid: int = 64) -> float:
    """Largest cdf mismatch between (x, theta) and its image under each element.

    Decreasing actions compare against the complementary probability.
    ``grid`` fixes the sample points; by default a 64-node grid covering the
    mass of each probe distribution is used.
    """
    if thetas is None:
        thetas = fam.param_probe(3)
    thetas = np.asarray(thetas, dtype=float).reshape(-1, fam.dim)
    worst = 0.0
    for a in elements:
        for theta in thetas:
            t_arg = theta if fam.dim > 1 else theta[0]
            xs = np.asarray(grid, dtype=float) if grid is not None else _x_grid(fam, t_arg, n_grid)
            gx = np.asarray(grp.act(a, xs), dtype=float)
            gt = np.asarray(grp.act_param(a, t_arg), dtype=float)
            f_orig = fam.cdf(xs, t_arg)
            with np.errstate(invalid="ignore", over="ignore"):
                f_img = fam.cdf(gx, gt)
            increasing = np.asarray(grp.act(a, xs.max()), dtype=float) >= np.asarray(grp.act(a, xs.min()), dtype=float)
            if not increasing:
                f_img = 1.0 - f_img
            r = np.abs(f_img - f_orig)
            r = np.where(np.isfinite(r), r, 1.0)
            worst = max(worst, float(np.max(r)))
    return worst


def check_H_form(fam: DirectFamily, maps: ReductionMaps, x_grid=None, theta_grid=None,
                 shifts: Sequence[float] = (-0.7, 0.4, 1.3)) -> float:
    """Largest |F(x|t) - F(x'|t')| over pairs with equal s(x) - s_bar(t).

    Pairs are formed by moving both coordinates by the same shift.  Shifts that
    leave the range of s or s_bar are skipped.
    """
    if theta_grid is None:
        theta_grid = _inner_grid(maps.param_branch, maps.theta_anchor, 12)
    if x_grid is None:
        x_grid = _inner_grid(maps.branch, maps.x_anchor, 12)
    xs = np.asarray(x_grid, dtype=float)
    ts = np.asarray(theta_grid, dtype=float)
    sx = maps.s(xs)
    st = maps.s_bar(ts)
    worst = 0.0
    for c in shifts:
        x_new = _shifted(maps.s_inverse, sx + c)
        t_new = _shifted(maps.s_bar_inverse, st + c)
        kx = np.isfinite(x_new)
        kt = np.isfinite(t_new)
        if not kx.any() or not kt.any():
            continue
        X, T = np.meshgrid(xs[kx], ts[kt], indexing="ij")
        X2, T2 = np.meshgrid(x_new[kx], t_new[kt], indexing="ij")
        r = np.abs(fam.cdf(X, T) - fam.cdf(X2, T2))
        worst = max(worst, float(np.max(r)))
    return worst


def _shifted(inverse: Callable, targets: np.ndarray) -> np.ndarray:
    out = np.full(targets.shape, np.nan)
    for i, y in enumerate(targets):
        try:
            out[i] = inverse(float(y))
        except (NoSignChange, TrivialLocusCrossed, ValueError):
            pass
    return out


def _inner_grid(branch: Interval, anchor: float, n: int) -> np.ndarray:
    """Nodes around the anchor spread over a few natural units of the branch."""
    if branch.is_finite:
        return np.linspace(branch.lo, branch.hi, n + 2)[1:-1]
    if branch.kind == "line":
        return anchor + np.linspace(-3.0, 3.0, n)
    edge = branch.lo if branch.kind == "upper" else branch.hi
    d = abs(anchor - edge) or 1.0
    offsets = d * np.geomspace(0.1, 10.0, n)
    return edge + offsets if branch.kind == "upper" else edge - offsets[::-1]
