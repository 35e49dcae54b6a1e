"""Numerical kernel: adaptive quadrature, bracketed roots, grids and seeded streams.

Everything here is pure except :class:`RandomStream`, whose draws advance only
its own generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NoSignChange, NonConvergence, NonFinite

ArrayFn = Callable[[np.ndarray], np.ndarray]

# finite-difference step factor, cbrt(machine epsilon)
FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi) or not self.lo < self.hi:
            raise ValueError(f"invalid interval ({self.lo}, {self.hi})")

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    @property
    def kind(self) -> str:
        lo_inf, hi_inf = math.isinf(self.lo), math.isinf(self.hi)
        if lo_inf and hi_inf:
            return "line"
        if hi_inf:
            return "upper"
        if lo_inf:
            return "lower"
        return "finite"

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x < self.hi)

    def clip(self, x):
        return np.clip(x, self.lo, self.hi)

    def to_list(self) -> list[float]:
        return [self.lo, self.hi]

    @classmethod
    def from_list(cls, pair: Sequence[float]) -> "Interval":
        return cls(float(pair[0]), float(pair[1]))


REAL_LINE = Interval(-math.inf, math.inf)
POSITIVE = Interval(0.0, math.inf)
UNIT = Interval(0.0, 1.0)


@dataclass(frozen=True)
class Tolerance:
    rel: float = 1e-9
    abs: float = 1e-12
    max_subdivisions: int = 60

    def __post_init__(self):
        if not (self.rel > 0 and self.abs > 0):
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be positive")


DEFAULT_TOL = Tolerance()


# Gauss-Kronrod 21-point rule (QUADPACK qk21), nodes in decreasing order on [0, 1].
_XGK = np.array([
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208745329770,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
])
_WG10 = np.array([
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
])

GK21_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK21_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_g = np.zeros(11)
_g[1::2] = _WG10
G10_WEIGHTS = np.concatenate([_g[:-1], _g[::-1]])
del _g

# 15-point Kronrod companion used for fixed-rule panel integration
_XK15 = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK15 = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
GK15_NODES = np.concatenate([-_XK15[:-1], _XK15[::-1]])
GK15_WEIGHTS = np.concatenate([_WK15[:-1], _WK15[::-1]])


def panel_rule(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """15-point Kronrod nodes and weights on every panel between consecutive edges.

    Returns arrays of shape ``(len(edges) - 1, 15)``.
    """
    edges = np.asarray(edges, dtype=float)
    c = 0.5 * (edges[1:] + edges[:-1])
    h = 0.5 * (edges[1:] - edges[:-1])
    nodes = c[:, None] + h[:, None] * GK15_NODES[None, :]
    weights = h[:, None] * GK15_WEIGHTS[None, :]
    return nodes, weights


class _Substitution:
    """Map from a bounded variable t to x covering the integration domain."""

    def __init__(self, domain: Interval):
        self.kind = domain.kind
        self.lo, self.hi = domain.lo, domain.hi
        if self.kind == "finite":
            self.t_range = (self.lo, self.hi)
        elif self.kind == "line":
            self.t_range = (-1.0, 1.0)
        else:
            self.t_range = (0.0, 1.0)

    def __call__(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "finite":
            return t, np.ones_like(t)
        if self.kind == "line":
            d = 1.0 - t * t
            return t / d, (1.0 + t * t) / (d * d)
        u = 1.0 - t
        x = t / u
        jac = 1.0 / (u * u)
        if self.kind == "upper":
            return self.lo + x, jac
        return self.hi - x, jac

    def inverse(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "finite":
            return x
        if self.kind == "line":
            # t / (1 - t^2) = x
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(x == 0, 0.0, (np.sqrt(1 + 4 * x * x) - 1) / (2 * x))
            return t
        y = x - self.lo if self.kind == "upper" else self.hi - x
        return y / (1.0 + y)


class _QuadMap:
    """Quadrature substitution with exponential end decay.

    Half lines use x = lo + exp(s), the whole line x = sinh(s), and s itself
    comes from s = t / (1 - t^2) on (-1, 1).  Algebraic tails and endpoint
    singularities then decay exponentially in s, so the integrand in t
    vanishes smoothly at both ends.
    """

    _S_MAX = 700.0
    # beyond this |s| the point sits within e^-300 of an end; overflowing
    # integrand values there are taken as zero
    _S_EDGE = 300.0

    def __init__(self, domain: Interval):
        self.kind = domain.kind
        self.lo, self.hi = domain.lo, domain.hi
        self.t_range = (self.lo, self.hi) if self.kind == "finite" else (-1.0, 1.0)

    def __call__(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "finite":
            return t, np.ones_like(t)
        d = 1.0 - t * t
        with np.errstate(divide="ignore", over="ignore"):
            s = np.clip(t / d, -self._S_MAX, self._S_MAX)
            ds = (1.0 + t * t) / (d * d)
            if self.kind == "line":
                return np.sinh(s), np.cosh(s) * ds
            e = np.exp(s)
            if self.kind == "upper":
                return self.lo + e, e * ds
            return self.hi - e, e * ds

    def at_edge(self, t: np.ndarray) -> np.ndarray:
        if self.kind == "finite":
            return np.zeros(np.shape(t), dtype=bool)
        with np.errstate(divide="ignore"):
            return np.abs(t / (1.0 - t * t)) > self._S_EDGE

    def inverse(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "finite":
            return x
        with np.errstate(divide="ignore"):
            if self.kind == "line":
                s = np.arcsinh(x)
            elif self.kind == "upper":
                s = np.log(x - self.lo)
            else:
                s = np.log(self.hi - x)
        s = np.clip(s, -self._S_MAX, self._S_MAX)
        # t / (1 - t^2) = s
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s == 0, 0.0, (np.sqrt(1 + 4 * s * s) - 1) / (2 * s))


def _gk21(g: ArrayFn, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    t = c[:, None] + h[:, None] * GK21_NODES[None, :]
    gt = g(t.ravel()).reshape(t.shape)
    k = h * (gt @ GK21_WEIGHTS)
    gauss = h * (gt @ G10_WEIGHTS)
    return k, np.abs(k - gauss)


def integrate(
    f: ArrayFn,
    domain: Interval,
    tol: Tolerance = DEFAULT_TOL,
    points: Sequence[float] | None = None,
) -> float:
    """Adaptive Gauss-Kronrod quadrature of a vectorized ``f`` over ``domain``.

    Infinite endpoints are removed by substitution (``x = lo + exp(s)`` on
    half lines, ``x = sinh(s)`` on the whole line, ``s = t/(1-t^2)``), never
    by truncation.
    ``points`` are optional breakpoints in x that seed the initial partition.
    """
    return integrate_with_error(f, domain, tol, points)[0]


def integrate_with_error(
    f: ArrayFn,
    domain: Interval,
    tol: Tolerance = DEFAULT_TOL,
    points: Sequence[float] | None = None,
) -> tuple[float, float]:
    sub = _QuadMap(domain)

    def g(t):
        x, jac = sub(t)
        # far-end evaluations may overflow; the result is checked below
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            fx = np.asarray(f(x), dtype=float)
        if fx.shape != x.shape:
            fx = np.broadcast_to(fx, x.shape)
        with np.errstate(invalid="ignore", over="ignore"):
            out = fx * jac
        # far ends of the map: zero density times huge jacobian, or a
        # singular endpoint value times a vanishing one
        out = np.where((fx == 0.0) | (jac == 0.0), 0.0, out)
        bad = ~np.isfinite(out)
        if bad.any():
            if np.any(bad & ~sub.at_edge(t)):
                raise NonFinite("integrand is not finite inside the domain")
            out = np.where(bad, 0.0, out)
        return out

    t0, t1 = sub.t_range
    cuts = np.linspace(t0, t1, 9)
    if points:
        extra = sub.inverse(np.asarray([p for p in points if domain.contains(p)], dtype=float))
        cuts = np.unique(np.concatenate([cuts, np.atleast_1d(extra)]))
    a, b = cuts[:-1], cuts[1:]
    vals, errs = _gk21(g, a, b)
    done_val, done_err = 0.0, 0.0
    for _ in range(tol.max_subdivisions):
        total = done_val + vals.sum()
        err = done_err + errs.sum()
        allowed = max(tol.abs, tol.rel * abs(total))
        if err <= allowed:
            return float(total), float(err)
        share = allowed / max(len(vals), 1)
        bad = errs > share
        # retire intervals that are already good enough
        done_val += vals[~bad].sum()
        done_err += errs[~bad].sum()
        a, b = a[bad], b[bad]
        if len(a) > 20000:
            break
        mid = 0.5 * (a + b)
        if np.any((mid <= a) | (mid >= b)):
            break
        a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
        vals, errs = _gk21(g, a, b)
    total = done_val + vals.sum()
    err = done_err + errs.sum()
    if err <= max(tol.abs, tol.rel * abs(total)):
        return float(total), float(err)
    raise NonConvergence(
        f"quadrature did not converge: estimate {total:.6g}, error {err:.3g}"
    )


_EPS4 = 4 * np.finfo(float).eps


def find_root(
    g: Callable[[float], float],
    bracket: Interval | tuple[float, float],
    tol: Tolerance = DEFAULT_TOL,
    max_iter: int = 200,
    fprime: Callable[[float], float] | None = None,
) -> float:
    """Bracketed root of a continuous scalar function.

    Illinois-modified regula falsi; a bisection step is forced whenever three
    secant steps fail to halve the bracket.  With ``fprime`` a Newton step
    from the latest iterate is tried first and kept if it stays inside the
    bracket.
    """
    a, b = (bracket.lo, bracket.hi) if isinstance(bracket, Interval) else bracket
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("find_root needs a finite bracket")
    fa, fb = float(g(a)), float(g(b))
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if not (math.isfinite(fa) and math.isfinite(fb)) or fa * fb > 0:
        raise NoSignChange(f"g({a})={fa:.4g} and g({b})={fb:.4g} do not bracket a root")
    width = abs(b - a)
    stale = 0
    for _ in range(max_iter):
        if stale >= 3:
            c = 0.5 * (a + b)
            stale = 0
        else:
            c = math.nan
            if fprime is not None:
                d = float(fprime(b))
                if d != 0.0 and math.isfinite(d):
                    c = b - fb / d
            if not min(a, b) < c < max(a, b):
                c = b - fb * (b - a) / (fb - fa)
            if not min(a, b) < c < max(a, b):
                c = 0.5 * (a + b)
        fc = float(g(c))
        if abs(fc) <= tol.abs:
            return c
        if fc * fb < 0:
            a, fa = b, fb
        else:
            fa *= 0.5
        b, fb = c, fc
        new_width = abs(b - a)
        if new_width <= tol.rel * abs(c) or new_width <= _EPS4 * max(1.0, abs(c)):
            return c
        stale = stale + 1 if new_width > 0.5 * width else 0
        if stale == 0:
            width = new_width
    raise NonConvergence("find_root exceeded its iteration budget")


def bracket_increasing(g: Callable[[float], float], domain: Interval,
                       start: float | None = None) -> tuple[float, float]:
    """Finite bracket around the sign change of an increasing ``g`` on ``domain``.

    Infinite ends are approached by doubling steps away from ``start``.
    """
    lo, hi = domain.lo, domain.hi
    if start is None:
        if domain.is_finite:
            return lo, hi
        start = 0.0 if domain.kind == "line" else (lo + 1.0 if domain.kind == "upper" else hi - 1.0)
    step = max(1.0, abs(start)) * 0.5
    if math.isinf(lo):
        a = start
        while g(a) > 0:
            a -= step
            step *= 2.0
            if step > 1e300:
                break
        lo = a
    elif g(start) > 0:
        hi = start
    if math.isinf(hi):
        b = start
        step = max(1.0, abs(start)) * 0.5
        while g(b) < 0:
            b += step
            step *= 2.0
            if step > 1e300:
                break
        hi = b
    elif g(start) < 0 and start > lo:
        lo = start
    return lo, hi


def derivative(f: Callable[[float], float], x: float, h: float | None = None) -> float:
    """Central finite difference with step cbrt(eps)*max(1, |x|)."""
    if h is None:
        h = FD_STEP * max(1.0, abs(x))
    return (f(x + h) - f(x - h)) / (2 * h)


def build_grid(
    domain: Interval,
    n: int,
    density_hint: ArrayFn | None = None,
    *,
    log_hint: bool = False,
    tol: Tolerance = DEFAULT_TOL,
    n_scan: int = 1025,
) -> np.ndarray:
    """Strictly increasing nodes on ``domain``.

    Without a hint the nodes are uniform under the improper-domain map.  With a
    hint they cover the region where the hint exceeds ``tol.abs`` times its
    peak, spaced uniformly in a coordinate centred on the peak (sinh-stretched
    on the line and on finite domains, logarithmic on half lines).  Pass
    ``log_hint=True`` when the hint returns log densities.
    """
    if n < 2:
        raise ValueError("a grid needs at least two nodes")
    if density_hint is None:
        return _uniform_nodes(domain, n)
    coord, v_lo, v_hi = peak_coordinate(domain, density_hint, log_hint=log_hint, tol=tol, n_scan=n_scan)
    nodes = coord.to_theta(np.linspace(v_lo, v_hi, n)[None, :])[0]
    nodes = domain.clip(nodes)
    nodes = np.unique(nodes)
    if len(nodes) < n:
        extra = coord.to_theta(np.linspace(v_lo, v_hi, 2 * n)[None, :])[0]
        nodes = np.unique(np.concatenate([nodes, domain.clip(extra)]))
    return nodes


def peak_coordinate(domain: Interval, hint: ArrayFn, *, log_hint: bool = False,
                    tol: Tolerance = DEFAULT_TOL, n_scan: int = 1025, rows: int | None = None):
    """Peak-centred coordinate for ``hint`` and the v-range holding its mass.

    Returns ``(coord, v_lo, v_hi)`` where ``coord.to_theta`` maps v to the
    domain and ``[v_lo, v_hi]`` is where the hint exceeds ``tol.abs`` times its
    peak.  With ``rows`` the hint is a batch of densities called as
    ``hint(theta, rows)`` (see :meth:`PeakCoordinate.locate`) and every output
    has one entry per row; otherwise the hint is an ordinary vectorized
    function and scalars are returned.
    """
    batch = rows is not None
    fn = hint if batch else RowWise(hint)
    coord = PeakCoordinate.locate(domain, fn, log_hint, n_scan, rows or 1)
    v_lo, v_hi = coord.mass_region(fn, log_hint, math.log(tol.abs), n_scan)
    if batch:
        return coord, v_lo, v_hi
    return coord, float(v_lo[0]), float(v_hi[0])


class RowWise:
    """Batch-hint adapter for a plain vectorized function (ignores ``rows``)."""

    def __init__(self, fn: ArrayFn):
        self.fn = fn

    def __call__(self, theta, rows=None):
        theta = np.asarray(theta, dtype=float)
        return np.asarray(self.fn(theta.ravel()), dtype=float).reshape(theta.shape)


def _uniform_nodes(domain: Interval, n: int) -> np.ndarray:
    kind = domain.kind
    if kind == "finite":
        return np.linspace(domain.lo, domain.hi, n)
    sub = _Substitution(domain)
    if kind == "line":
        t = np.linspace(-1.0, 1.0, n + 2)[1:-1]
    else:
        t = np.linspace(0.0, 1.0, n + 1)[:-1]
    x, _ = sub(t)
    return np.sort(x)


def _log_values(hint, theta: np.ndarray, log_hint: bool, rows) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = np.asarray(hint(theta, rows), dtype=float)
        if not log_hint:
            vals = np.log(vals)
    return np.where(np.isnan(vals), -np.inf, vals)


_SPAN = 80.0
_LOG_HALF = math.log(2.0)


class PeakCoordinate:
    """Batch of peak-centred coordinates, one row per density.

    theta = centre + width*sinh(v) on the line and finite intervals and
    anchor +- exp(centre + v) on half lines.  ``v_min``/``v_max`` bound the
    scanned range (per row on finite intervals).
    """

    def __init__(self, domain: Interval, centre, width, v_min, v_max):
        self.domain = domain
        self.centre = np.asarray(centre, dtype=float)
        self.width = np.asarray(width, dtype=float)
        self.v_min = np.broadcast_to(np.asarray(v_min, dtype=float), self.centre.shape).copy()
        self.v_max = np.broadcast_to(np.asarray(v_max, dtype=float), self.centre.shape).copy()

    def to_theta(self, v):
        """Map ``v`` of shape (rows, m) to the domain."""
        v = np.asarray(v, dtype=float)
        c = self.centre.reshape((-1,) + (1,) * (v.ndim - 1))
        w = self.width.reshape(c.shape)
        kind = self.domain.kind
        with np.errstate(over="ignore"):
            if kind == "upper":
                return self.domain.lo + np.exp(c + v)
            if kind == "lower":
                return self.domain.hi - np.exp(c - v)
            return c + w * np.sinh(v)

    def take(self, rows) -> "PeakCoordinate":
        return PeakCoordinate(self.domain, self.centre[rows], self.width[rows], self.v_min[rows], self.v_max[rows])

    @classmethod
    def initial(cls, domain: Interval, rows: int) -> "PeakCoordinate":
        ones = np.ones(rows)
        if domain.kind == "finite":
            mid = 0.5 * (domain.lo + domain.hi)
            half = 0.5 * (domain.hi - domain.lo)
            return cls(domain, mid * ones, half * ones, math.asinh(-1.0), math.asinh(1.0))
        return cls(domain, 0.0 * ones, ones, -_SPAN, _SPAN)

    @classmethod
    def locate(cls, domain: Interval, hint: ArrayFn, log_hint: bool, n_scan: int, rows: int = 1) -> "PeakCoordinate":
        """Scan and zoom onto the peak of each row of ``hint``.

        ``hint(theta, rows)`` receives a (len(rows), m) array of parameters for
        the batch rows listed in ``rows`` and returns values of the same shape.
        """
        coord = cls.initial(domain, rows)
        lo, hi = coord.v_min.copy(), coord.v_max.copy()
        unit = np.linspace(0.0, 1.0, n_scan)
        active = np.ones(rows, dtype=bool)
        v_peak = np.zeros(rows)
        half_lo = np.zeros(rows)
        half_hi = np.zeros(rows)
        idx = np.arange(rows)
        for it in range(12):
            rs = idx[active]
            v = lo[rs, None] + (hi - lo)[rs, None] * unit[None, :]
            sub = coord.take(rs)
            th = sub.to_theta(v)
            lv = _log_values(hint, th, log_hint, rs)
            if it == 0 and np.any(np.all(~np.isfinite(lv), axis=1)):
                raise NonFinite("density hint vanishes everywhere on the scan")
            k = np.argmax(lv, axis=1)
            r = np.arange(len(rs))
            peak = lv[r, k]
            above = lv >= (peak - _LOG_HALF)[:, None]
            first = np.argmax(above, axis=1)
            last = n_scan - 1 - np.argmax(above[:, ::-1], axis=1)
            v_peak[rs] = v[r, k]
            half_lo[rs] = th[r, first]
            half_hi[rs] = th[r, last]
            wide = above.sum(axis=1) >= 16
            new_lo = np.maximum(sub.v_min, v[r, np.maximum(k - 2, 0)])
            new_hi = np.minimum(sub.v_max, v[r, np.minimum(k + 2, n_scan - 1)])
            tiny = (new_hi - new_lo) < 1e-12 * np.maximum(1.0, np.abs(v[r, k]))
            done = wide | tiny
            lo[rs] = np.where(done, lo[rs], new_lo)
            hi[rs] = np.where(done, hi[rs], new_hi)
            active[rs[done]] = False
            if not active.any():
                break
        theta_peak = coord.to_theta(v_peak[:, None])[:, 0]
        kind = domain.kind
        if kind in ("upper", "lower"):
            anchor = domain.lo if kind == "upper" else domain.hi
            d_peak = np.abs(theta_peak - anchor)
            fallback = np.abs(half_hi - anchor)
            d_peak = np.where(d_peak > 0, d_peak, np.where(fallback > 0, fallback, 1.0))
            return cls(domain, np.log(d_peak), np.ones(rows), -_SPAN, _SPAN)
        width = 0.5 * (half_hi - half_lo)
        width = np.where(width > 0, width, np.maximum(np.abs(theta_peak), 1.0) * 1e-8)
        if kind == "finite":
            v_min = np.arcsinh((domain.lo - theta_peak) / width)
            v_max = np.arcsinh((domain.hi - theta_peak) / width)
            return cls(domain, theta_peak, width, v_min, v_max)
        return cls(domain, theta_peak, width, -_SPAN, _SPAN)

    def mass_region(self, hint: ArrayFn, log_hint: bool, log_floor: float, n_scan: int):
        """Per-row v-range where the hint exceeds exp(log_floor) times its peak."""
        rows = len(self.centre)
        m = 4 * n_scan
        unit = np.linspace(0.0, 1.0, m)
        v = self.v_min[:, None] + (self.v_max - self.v_min)[:, None] * unit[None, :]
        every = np.arange(rows)
        lv = _log_values(hint, self.to_theta(v), log_hint, every)
        has_zero = (self.v_min <= 0.0) & (self.v_max >= 0.0)
        at_zero = _log_values(hint, self.to_theta(np.zeros((rows, 1))), log_hint, every)[:, 0]
        peak = np.maximum(np.max(lv, axis=1), np.where(has_zero, at_zero, -np.inf))
        keep = lv >= (peak + log_floor)[:, None]
        any_keep = keep.any(axis=1)
        first = np.argmax(keep, axis=1)
        last = m - 1 - np.argmax(keep[:, ::-1], axis=1)
        step = v[:, 1] - v[:, 0]
        r = np.arange(rows)
        lo = np.where(any_keep, np.maximum(self.v_min, v[r, first] - step), self.v_min)
        hi = np.where(any_keep, np.minimum(self.v_max, v[r, last] + step), self.v_max)
        lo = np.where(has_zero, np.minimum(lo, -step), lo)
        hi = np.where(has_zero, np.maximum(hi, step), hi)
        return lo, hi


class RandomStream:
    """Seeded generator identified by ``(seed, stream_id)``.

    Equal pairs give identical draw sequences; distinct stream ids are spawned
    as independent children of the same seed sequence.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"

    def uniform(self, size=None):
        return self._gen.random(size)

    def derive(self, stream_id: int) -> "RandomStream":
        return RandomStream(self.seed, stream_id)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen
