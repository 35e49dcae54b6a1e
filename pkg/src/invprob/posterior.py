"""Consistency factors and inverse distributions over parameters.

A one-parameter :class:`Posterior` is stored as Gauss-Kronrod panels: edges
plus log-density values at the 15 Kronrod nodes of every panel.  Inside a
panel the density is the degree-14 interpolant through those values, which
integrates exactly to the panel's Kronrod sum, so cdf and quantile come from
the same polynomial.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as leg

from .errors import (
    DerivativeVanishes,
    FactorRejected,
    NoSignChange,
    NonFinite,
    PosteriorNotNormalizable,
    TrivialLocusDatum,
    ZeroMarginal,
)
from .families import DirectFamily, LocationScaleFamily, MonotoneMap
from .invariance import GroupAction, action_derivative, get_group, group_for, param_jacobian
from .numerics import (
    DEFAULT_TOL,
    GK15_NODES,
    GK15_WEIGHTS,
    POSITIVE,
    REAL_LINE,
    Interval,
    RowWise,
    Tolerance,
    find_root,
    panel_rule,
    peak_coordinate,
)

__all__ = [
    "ConsistencyFactor",
    "consistency_factor",
    "custom_factor",
    "tabulated_factor",
    "Posterior",
    "Posterior2D",
    "build_posterior",
    "build_posteriors",
    "sequential_update",
    "transform_posterior",
    "transform_factor",
    "build_posterior_2d",
    "marginalize",
    "conditional_from_joint",
    "product_rule_residual",
    "predictive_density",
    "predictive_cdf",
    "factor_functional_residual",
    "check_factor",
]

FACTOR_KINDS = ("location", "scale", "joint-location-scale", "custom")


# ---------------------------------------------------------------------------
# consistency factors


class _Constant:
    def __init__(self, value: float, dim: int = 1):
        self.log_value = math.log(value)
        self.dim = dim

    def __call__(self, theta):
        shape = np.shape(theta)
        # joint parameters carry their components on the last axis
        return np.full(shape[:-1] if self.dim == 2 else shape, self.log_value)


class _SigmaPower:
    """log(c * sigma**power); ``component`` picks sigma out of a joint vector."""

    def __init__(self, power: float, component: int | None, const: float = 1.0):
        self.power = power
        self.component = component
        self.log_const = math.log(const)

    def __call__(self, theta):
        t = np.asarray(theta, dtype=float)
        sigma = t if self.component is None else t[..., self.component]
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.power * np.log(sigma) + self.log_const


class _Scaled:
    def __init__(self, inner, const: float):
        self.inner = inner
        self.log_const = math.log(const)

    def __call__(self, theta):
        return self.inner(theta) + self.log_const


class _FromZeta:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, theta):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.fn(theta), dtype=float))


@dataclass(frozen=True)
class ConsistencyFactor:
    """Positive weight zeta(theta), meaningful up to a positive constant.

    ``log_zeta`` maps parameter arrays (trailing axis = components when
    ``dim`` is 2) to log zeta.
    """

    log_zeta: Callable
    label: str
    kind: str
    dim: int = 1

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise ValueError(f"unknown factor kind {self.kind!r}")

    def log(self, theta):
        return self.log_zeta(theta)

    def zeta(self, theta):
        z = np.exp(self.log_zeta(theta))
        return z if np.ndim(z) else float(z)

    __call__ = zeta

    def scaled(self, const: float) -> "ConsistencyFactor":
        """The same factor multiplied by a positive constant."""
        if not const > 0:
            raise ValueError("factors may only be rescaled by positive constants")
        return ConsistencyFactor(_Scaled(self.log_zeta, const), f"{self.label}*{const:g}", self.kind, self.dim)


def consistency_factor(kind: str) -> ConsistencyFactor:
    """Factor for location (1), scale (1/sigma) or joint location-scale (1/sigma)."""
    if kind == "location":
        return ConsistencyFactor(_Constant(1.0), "location", "location", 1)
    if kind == "scale":
        return ConsistencyFactor(_SigmaPower(-1.0, None), "scale", "scale", 1)
    if kind in ("joint-location-scale", "joint"):
        return ConsistencyFactor(_SigmaPower(-1.0, 1), "joint-location-scale", "joint-location-scale", 2)
    raise ValueError(f"unknown factor kind {kind!r}; expected one of location, scale, joint-location-scale")


def custom_factor(zeta: Callable, label: str = "custom", dim: int = 1, *, log: bool = False) -> ConsistencyFactor:
    """Wrap a user function; pass ``log=True`` if it already returns log zeta."""
    fn = zeta if log else _FromZeta(zeta)
    return ConsistencyFactor(fn, label, "custom", dim)


def sigma_power_factor(power: float, label: str | None = None, dim: int = 2) -> ConsistencyFactor:
    """zeta = sigma**power, on the joint (dim 2) or pure scale (dim 1) parameter."""
    component = 1 if dim == 2 else None
    return ConsistencyFactor(_SigmaPower(power, component), label or f"sigma^{power:g}", "custom", dim)


class _Table:
    """Log-linear interpolation of a tabulated factor on a 1-D grid."""

    def __init__(self, theta, zeta, log_axis: bool):
        order = np.argsort(theta)
        self.x = np.asarray(theta, dtype=float)[order]
        self.y = np.log(np.asarray(zeta, dtype=float)[order])
        self.log_axis = log_axis
        if log_axis:
            self.x = np.log(self.x)

    def __call__(self, theta):
        t = np.asarray(theta, dtype=float)
        u = np.log(t) if self.log_axis else t
        # linear extrapolation keeps power laws exact on a log axis
        slope_lo = (self.y[1] - self.y[0]) / (self.x[1] - self.x[0])
        slope_hi = (self.y[-1] - self.y[-2]) / (self.x[-1] - self.x[-2])
        out = np.interp(u, self.x, self.y)
        out = np.where(u < self.x[0], self.y[0] + slope_lo * (u - self.x[0]), out)
        return np.where(u > self.x[-1], self.y[-1] + slope_hi * (u - self.x[-1]), out)


def tabulated_factor(theta: Sequence[float], zeta: Sequence[float], label: str = "custom",
                     log_axis: bool | None = None) -> ConsistencyFactor:
    """One-parameter factor interpolated from a table of positive values.

    Interpolation is linear in log zeta against theta, or against log theta when
    every node is positive (the default in that case).
    """
    theta = np.asarray(theta, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if len(theta) < 2 or theta.shape != zeta.shape:
        raise ValueError("a factor table needs at least two (theta, zeta) pairs")
    if np.any(zeta <= 0):
        raise ValueError("factor values must be positive")
    if len(np.unique(theta)) != len(theta):
        raise ValueError("factor table nodes must be distinct")
    if log_axis is None:
        log_axis = bool(np.all(theta > 0))
    return ConsistencyFactor(_Table(theta, zeta, log_axis), label, "custom", 1)


# ---------------------------------------------------------------------------
# panel tabulation of a log density

_SEG_SUB = 4  # sub-panels per tail segment
_SEG_FIRST = 4  # first batch of tail segments; later batches double
_V_LIMIT = 700.0
_DIVERGE_RATIO = 0.95
_DIVERGE_RUN = 3
_TAIL_NEGLIGIBLE = 1e-17
_TAIL_RELEVANT = 1e-14


def _eval_log(log_fn: Callable, theta: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Batch log density at ``theta`` (one row per batch entry in ``rows``)."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        out = np.asarray(log_fn(theta, rows), dtype=float)
    out = np.broadcast_to(out, theta.shape)
    if np.any(np.isnan(out)) or np.any(out == np.inf):
        raise NonFinite("log density evaluated to NaN or +inf")
    return out


def _rule_ab(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kronrod nodes and weights for panels [a, b] of any shape (extra trailing axis)."""
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    return c[..., None] + h[..., None] * GK15_NODES, h[..., None] * GK15_WEIGHTS


class _TailState:
    """Grid pieces collected for one row's tail, outward order."""

    __slots__ = ("edges", "values")

    def __init__(self):
        self.edges: list[np.ndarray] = []
        self.values: list[np.ndarray] = []


def _tails(log_fn, coord, v_start: np.ndarray, direction: int, log_ref: np.ndarray,
           body_mass: np.ndarray, space: Interval, errors: dict) -> list[_TailState]:
    """Extend every row's grid outward from ``v_start`` until its mass is negligible.

    Segments are one unit long in the peak coordinate, a log-distance on half
    lines and the line.  Three successive segments whose mass fails to drop
    below 0.95 of its predecessor while still relevant mean the density is not
    integrable; such rows are recorded in ``errors``.
    """
    rows = len(v_start)
    states = [_TailState() for _ in range(rows)]
    live = np.array([r for r in range(rows) if r not in errors], dtype=int)
    if space.kind == "finite":
        # bounded coordinate: close the gap to the endpoint with uniform panels
        v_end = coord.v_max if direction > 0 else coord.v_min
        unit = np.linspace(0.0, 1.0, 16 * _SEG_SUB + 1)
        v = v_start[live, None] + (v_end - v_start)[live, None] * unit
        th = np.clip(coord.take(live).to_theta(v), space.lo, space.hi)
        th[:, -1] = space.hi if direction > 0 else space.lo
        if direction < 0:
            th = th[:, ::-1]
        nodes, _ = _rule_ab(th[:, :-1], th[:, 1:])
        lv = _eval_log(log_fn, nodes.reshape(len(live), -1), live).reshape(nodes.shape)
        for i, r in enumerate(live):
            states[r].edges.append(th[i])
            states[r].values.append(lv[i])
        return states
    sub = np.linspace(0.0, 1.0, _SEG_SUB + 1)
    total_all = np.asarray(body_mass, dtype=float).copy()
    prev_all = np.full(rows, np.nan)
    run_all = np.zeros(rows, dtype=int)
    k0 = 0
    batch = _SEG_FIRST
    while live.size:
        starts = v_start[live, None] + direction * (k0 + np.arange(batch))[None, :]
        over = np.any(np.abs(starts) > _V_LIMIT, axis=1)
        for r in live[over]:
            errors[r] = PosteriorNotNormalizable("tail mass did not settle before the coordinate limit")
        live, starts = live[~over], starts[~over]
        if not live.size:
            break
        v = starts[:, :, None] + direction * sub
        th = coord.take(live).to_theta(v.reshape(len(live), -1)).reshape(v.shape)
        if direction < 0:
            th = th[..., ::-1]
        a, b = th[..., :-1], th[..., 1:]
        valid = (b > a) & np.isfinite(a) & np.isfinite(b)
        nodes, weights = _rule_ab(np.where(valid, a, 0.0), np.where(valid, b, 0.0))
        safe = np.where(valid[..., None], nodes, coord.take(live).to_theta(v_start[live, None])[:, :, None, None])
        lv = _eval_log(log_fn, safe.reshape(len(live), -1), live).reshape(safe.shape)
        lv = np.where(valid[..., None], lv, -np.inf)
        with np.errstate(under="ignore", invalid="ignore"):
            contrib = np.where(valid[..., None], weights * np.exp(lv - log_ref[live, None, None, None]), 0.0)
        mass = contrib.sum(axis=(2, 3))
        total, prev, run = total_all[live], prev_all[live], run_all[live]
        active = np.ones(len(live), dtype=bool)
        count = np.zeros(len(live), dtype=int)
        for j in range(batch):
            m = mass[:, j]
            bad = active & ~np.isfinite(m)
            for r in live[bad]:
                errors[int(r)] = PosteriorNotNormalizable("tail mass overflowed")
            active &= ~bad
            total = np.where(active, total + m, total)
            with np.errstate(invalid="ignore"):
                grows = active & (m >= _DIVERGE_RATIO * prev) & (m > _TAIL_RELEVANT * total)
                run = np.where(grows, run + 1, np.where(active, 0, run))
                diverged = active & (run >= _DIVERGE_RUN)
                for r in live[diverged]:
                    errors[int(r)] = PosteriorNotNormalizable(
                        "density does not decay toward the "
                        + ("upper" if direction > 0 else "lower") + " end of the parameter space")
                active &= ~diverged
                count = np.where(active, j + 1, count)
                settled = active & (m <= _TAIL_NEGLIGIBLE * total) & (np.isnan(prev) | (m <= prev))
            active &= ~settled
            prev = np.where(active, m, prev)
            if not active.any():
                break
        total_all[live], prev_all[live], run_all[live] = total, prev, run
        for i, r in enumerate(live):
            c = count[i]
            if c == 0:
                continue
            if direction > 0:
                seg_e, seg_v = th[i, :c], lv[i, :c]
            else:
                seg_e, seg_v = th[i, c - 1::-1], lv[i, c - 1::-1]
            states[r].edges.append(np.concatenate([seg_e[0], seg_e[1:, 1:].ravel()]))
            states[r].values.append(seg_v.reshape(-1, 15))
        live = live[active]
        k0 += batch
        batch = min(2 * batch, 64)
    return states


def _assemble(left: _TailState, body_edges, body_values, right: _TailState):
    edge_parts = left.edges[::-1] + [body_edges] + right.edges
    val_parts = left.values[::-1] + [body_values] + right.values
    edges = np.concatenate([edge_parts[0]] + [e[1:] for e in edge_parts[1:]])
    values = np.concatenate(val_parts, axis=0)
    # drop panels narrower than rounding noise; clipping to an endpoint can make them
    scale = np.maximum(np.abs(edges[:-1]), np.abs(edges[1:]))
    keep = np.diff(edges) > 8 * np.finfo(float).eps * scale
    if not keep.all():
        edges = np.concatenate([edges[:1], edges[1:][keep]])
        values = values[keep]
    return edges, values


def _tabulate_batch(log_fn: Callable, space: Interval, rows: int, n: int, tol: Tolerance,
                    n_scan: int) -> list:
    """Tabulate ``rows`` unnormalized log densities given as a batch function.

    ``log_fn(theta, rows)`` evaluates the densities of the listed batch rows on
    a (len(rows), m) array.  Returns one ``(edges, log_values, log_eta)``
    triple per row, or the exception that row raised.
    """
    coord, v_lo, v_hi = peak_coordinate(space, log_fn, log_hint=True, tol=tol, n_scan=n_scan, rows=rows)
    every = np.arange(rows)
    body = coord.to_theta(v_lo[:, None] + (v_hi - v_lo)[:, None] * np.linspace(0.0, 1.0, n))
    body = np.clip(body, space.lo, space.hi)
    nodes, weights = _rule_ab(body[:, :-1], body[:, 1:])
    lv = _eval_log(log_fn, nodes.reshape(rows, -1), every).reshape(nodes.shape)
    log_ref = np.max(lv, axis=(1, 2))
    errors: dict = {}
    for r in np.flatnonzero(~np.isfinite(log_ref)):
        errors[int(r)] = PosteriorNotNormalizable("density vanishes on the whole grid")
    safe_ref = np.where(np.isfinite(log_ref), log_ref, 0.0)
    with np.errstate(under="ignore"):
        body_mass = np.sum(weights * np.exp(lv - safe_ref[:, None, None]), axis=(1, 2))
    left = _tails(log_fn, coord, v_lo, -1, safe_ref, body_mass, space, errors)
    right = _tails(log_fn, coord, v_hi, +1, safe_ref, body_mass, space, errors)
    out: list = []
    for r in range(rows):
        if r in errors:
            out.append(errors[r])
            continue
        edges, values = _assemble(left[r], body[r], lv[r], right[r])
        if len(edges) < 2:
            out.append(PosteriorNotNormalizable("density mass collapsed to a point"))
            continue
        half = 0.5 * np.diff(edges)
        with np.errstate(under="ignore"):
            eta_rel = float(half @ (np.exp(values - log_ref[r]) @ GK15_WEIGHTS))
        if not (eta_rel > 0 and math.isfinite(eta_rel)):
            out.append(PosteriorNotNormalizable("normalization integral is not finite and positive"))
            continue
        out.append((edges, values, float(log_ref[r]) + math.log(eta_rel)))
    return out


def _tabulate(log_fn: Callable, space: Interval, n: int, tol: Tolerance, n_scan: int):
    """Single-density version of :func:`_tabulate_batch`; raises on failure."""
    res = _tabulate_batch(RowWise(log_fn), space, 1, n, tol, n_scan)[0]
    if isinstance(res, Exception):
        raise res
    return res


# ---------------------------------------------------------------------------
# one-parameter posterior

_VANDER_INV = np.linalg.inv(leg.legvander(GK15_NODES, 14))
# node values -> Legendre coefficients of the antiderivative vanishing at -1
_INTEGRATE = _VANDER_INV.T @ leg.legint(np.eye(15), axis=1, lbnd=-1)


# Clenshaw recurrence constants for Legendre series of up to 16 terms
_ALPHA = tuple((2 * k + 1) / (k + 1) for k in range(16))
_BETA = tuple((k + 1) / (k + 2) for k in range(16))


def _clenshaw(t: float, c: list) -> float:
    """Legendre series at a scalar point; cheaper than legval for one value."""
    b1 = b2 = 0.0
    for k in range(len(c) - 1, 0, -1):
        b1, b2 = c[k] + _ALPHA[k] * t * b1 - _BETA[k] * b2, b1
    return c[0] + t * b1 - 0.5 * b2


def _invert_panel(c_int: list, c_dens: list, target: float):
    """Solve antiderivative(t) = target on [-1, 1] by bracketed Newton.

    Both series are summed in one Clenshaw pass.  Returns None when the
    target is not bracketed or the iteration stalls.
    """
    top = _clenshaw(1.0, c_int)
    if not 0.0 <= target <= top or top <= 0.0:
        return None
    a, b = -1.0, 1.0
    t = 2.0 * target / top - 1.0
    n = len(c_int)
    for _ in range(60):
        b1 = b2 = d1 = d2 = 0.0
        for k in range(n - 1, 0, -1):
            s = _ALPHA[k] * t
            b1, b2 = c_int[k] + s * b1 - _BETA[k] * b2, b1
            d1, d2 = c_dens[k] + s * d1 - _BETA[k] * d2, d1
        f = c_int[0] + t * b1 - 0.5 * b2 - target
        slope = c_dens[0] + t * d1 - 0.5 * d2
        if f == 0.0:
            return t
        if f < 0.0:
            a = t
        else:
            b = t
        new = t - f / slope if slope > 0.0 else 0.5 * (a + b)
        if not a < new < b:
            new = 0.5 * (a + b)
        if abs(new - t) <= 1e-15:
            return new
        t = new
    return None


_LOG_FLOOR = -700.0


def _json_float(x: float):
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def _from_json_float(x) -> float:
    if x is None:
        return -math.inf
    if isinstance(x, str):
        return float(x)
    return float(x)


class Posterior:
    """Normalized density over a one-dimensional parameter space."""

    def __init__(self, edges, log_values, log_eta: float, param_space: Interval,
                 provenance: dict | None = None):
        self.edges = np.asarray(edges, dtype=float)
        self.log_values = np.asarray(log_values, dtype=float).reshape(len(self.edges) - 1, 15)
        self.log_eta = float(log_eta)
        self.param_space = param_space
        self.provenance = dict(provenance or {})
        with np.errstate(under="ignore"):
            self.values = np.exp(self.log_values)
        self._half = 0.5 * np.diff(self.edges)
        self._mid = 0.5 * (self.edges[:-1] + self.edges[1:])
        masses = self._half * (self.values @ GK15_WEIGHTS)
        self._cum = np.concatenate([[0.0], np.cumsum(masses)])
        self.mass = float(self._cum[-1])
        self._coeff_cache: dict = {}

    @cached_property
    def nodes(self) -> np.ndarray:
        """Kronrod nodes, shape (panels, 15)."""
        return self._mid[:, None] + self._half[:, None] * GK15_NODES

    @cached_property
    def weights(self) -> np.ndarray:
        return self._half[:, None] * GK15_WEIGHTS

    # interpolation coefficients are only formed when first needed

    @cached_property
    def _c_dens(self):
        return self.values @ _VANDER_INV.T

    @cached_property
    def _c_int(self):
        return self.values @ _INTEGRATE

    @cached_property
    def _log_ok(self):
        return self.log_values.min(axis=1) > _LOG_FLOOR

    @cached_property
    def _c_log(self):
        clean = self._log_ok
        return np.where(clean[:, None], np.maximum(self.log_values, _LOG_FLOOR), 0.0) @ _VANDER_INV.T

    # -- construction

    @classmethod
    def from_log_density(cls, log_fn: Callable, param_space: Interval, *, n: int = 1024,
                         tol: Tolerance = DEFAULT_TOL, n_scan: int = 1025,
                         provenance: dict | None = None, log_eta: float | None = None) -> "Posterior":
        """Tabulate and normalize an unnormalized log density.

        With ``log_eta`` given, that normalizer is used instead of the computed
        one (the result then integrates to 1 only if it is right).
        """
        edges, values, eta = _tabulate(log_fn, param_space, n, tol, n_scan)
        if log_eta is not None:
            eta = float(log_eta)
        return cls(edges, values - eta, eta, param_space, provenance)

    # -- evaluation

    def _locate(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = np.clip(np.searchsorted(self.edges, theta, side="right") - 1, 0, len(self.edges) - 2)
        # points off the grid are masked by the callers; clipping keeps them finite
        t = np.clip((theta - self._mid[k]) / self._half[k], -1.0, 1.0)
        inside = (theta >= self.edges[0]) & (theta <= self.edges[-1])
        return theta, k, t, inside

    def density(self, theta):
        theta, k, t, inside = self._locate(theta)
        flat_k, flat_t = np.ravel(k), np.ravel(t)
        via_log = np.exp(leg.legval(flat_t, self._c_log[flat_k].T, tensor=False))
        direct = np.maximum(leg.legval(flat_t, self._c_dens[flat_k].T, tensor=False), 0.0)
        out = np.where(self._log_ok[flat_k], via_log, direct).reshape(np.shape(theta))
        out = np.where(inside, out, 0.0)
        return out if np.ndim(out) else float(out)

    def log_density(self, theta):
        with np.errstate(divide="ignore"):
            return np.log(self.density(theta))

    def cdf(self, theta):
        theta, k, t, inside = self._locate(theta)
        flat_k, flat_t = np.ravel(k), np.ravel(t)
        part = leg.legval(flat_t, self._c_int[flat_k].T, tensor=False) * self._half[flat_k]
        out = ((self._cum[flat_k] + part) / self.mass).reshape(np.shape(theta))
        out = np.where(theta < self.edges[0], 0.0, np.where(theta > self.edges[-1], 1.0, out))
        out = np.clip(out, 0.0, 1.0)
        return out if np.ndim(out) else float(out)

    def _panel_cdf(self, k: int, theta: float) -> float:
        t = float((theta - self._mid[k]) / self._half[k])
        return (self._cum[k] + _clenshaw(t, self._panel_coeffs(k)[0]) * self._half[k]) / self.mass

    def _panel_density(self, k: int, theta: float) -> float:
        t = float((theta - self._mid[k]) / self._half[k])
        return _clenshaw(t, self._panel_coeffs(k)[1]) / self.mass

    def _panel_coeffs(self, k: int) -> tuple[list, list]:
        """Antiderivative and density coefficients of one panel, as float lists."""
        got = self._coeff_cache.get(k)
        if got is None:
            row = self.values[k]
            got = ((row @ _INTEGRATE).tolist(), (row @ _VANDER_INV.T).tolist() + [0.0])
            self._coeff_cache[k] = got
        return got

    def quantile(self, p: float, tol: Tolerance | None = None) -> float:
        """Parameter value with cdf equal to ``p``, found inside one panel."""
        if not 0.0 <= p <= 1.0:
            raise ValueError("probability level must lie in [0, 1]")
        if p == 0.0:
            return self.param_space.lo
        if p == 1.0:
            return self.param_space.hi
        target = p * self.mass
        k = min(max(int(np.searchsorted(self._cum, target, side="right")) - 1, 0), len(self.edges) - 2)
        half, mid = float(self._half[k]), float(self._mid[k])
        t = _invert_panel(*self._panel_coeffs(k), (target - float(self._cum[k])) / half)
        if t is not None:
            return mid + half * t
        lo, hi = float(self.edges[k]), float(self.edges[k + 1])
        g = lambda x: self._panel_cdf(k, x) - p  # noqa: E731
        tol = tol or Tolerance(rel=1e-13, abs=1e-15)
        try:
            return find_root(g, (lo, hi), tol)
        except NoSignChange:
            # rounding put p just outside this panel's cdf range
            return lo if abs(g(lo)) < abs(g(hi)) else hi

    def expect(self, fn: Callable) -> float:
        """Posterior expectation of ``fn`` using the stored quadrature."""
        vals = np.asarray(fn(self.nodes), dtype=float)
        return float(np.sum(self.weights * self.values * vals) / self.mass)

    def mean(self) -> float:
        return self.expect(lambda t: t)

    def prob(self, a: float, b: float) -> float:
        return float(self.cdf(b) - self.cdf(a))

    def mode(self) -> float:
        k = np.unravel_index(np.argmax(self.log_values), self.log_values.shape)
        return float(self.nodes[k])

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "family": self.provenance.get("family"),
            "factor": self.provenance.get("factor"),
            "data": self.provenance.get("data"),
            "provenance": self.provenance,
            "param_space": [_json_float(self.param_space.lo), _json_float(self.param_space.hi)],
            "grid": [float(x) for x in self.edges],
            "log_density": [[_json_float(v) for v in row] for row in self.log_values],
            "log_eta": _json_float(self.log_eta),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "Posterior":
        space = Interval(_from_json_float(d["param_space"][0]), _from_json_float(d["param_space"][1]))
        logs = np.array([[_from_json_float(v) for v in row] for row in d["log_density"]])
        prov = d.get("provenance") or {"family": d.get("family"), "factor": d.get("factor"), "data": d.get("data")}
        return cls(np.array(d["grid"], dtype=float), logs, _from_json_float(d["log_eta"]), space, prov)

    @classmethod
    def from_json(cls, text: str) -> "Posterior":
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:
        return f"<Posterior {self.provenance.get('family')} panels={len(self.edges) - 1} log_eta={self.log_eta:.6g}>"


# ---------------------------------------------------------------------------
# factor checks

_DEFAULT_ELEMENTS = {
    "translation": (-1.3, 0.7, 2.5),
    "scaling": (0.5, 1.7, 3.0),
    "affine": ((1.0, 2.0), (-0.5, 0.6), (2.0, 1.3)),
}


def _param_grid(space: tuple[Interval, ...], n: int = 9) -> np.ndarray:
    axes = []
    for s in space:
        if s.kind == "line":
            axes.append(np.linspace(-3.0, 3.0, n))
        elif s.kind == "upper":
            axes.append(s.lo + np.geomspace(0.25, 4.0, n))
        elif s.kind == "lower":
            axes.append(s.hi - np.geomspace(4.0, 0.25, n))
        else:
            axes.append(np.linspace(s.lo, s.hi, n + 2)[1:-1])
    if len(axes) == 1:
        return axes[0]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _group_param_space(grp: GroupAction) -> tuple[Interval, ...]:
    return {"translation": (REAL_LINE,), "scaling": (POSITIVE,), "affine": (REAL_LINE, POSITIVE)}.get(
        grp.label, grp.element_space)


def factor_functional_residual(zeta: ConsistencyFactor, grp: GroupAction, elements=None,
                               thetas=None) -> float:
    """How far ``zeta`` is from being relatively invariant under the induced group.

    For each element the multiplier chi(a) is read off at the first grid
    point; the residual is the largest mismatch of
    zeta(theta) = chi(a) zeta(g_a^-1 theta) |d g_a^-1 theta / d theta| over the grid.
    """
    if elements is None:
        elements = _DEFAULT_ELEMENTS.get(grp.label, (grp.identity,))
    if thetas is None:
        thetas = _param_grid(_group_param_space(grp))
    thetas = np.asarray(thetas, dtype=float)
    worst = 0.0
    for a in elements:
        a = np.asarray(a, dtype=float) if np.ndim(a) else float(a)
        inv = grp.inverse(a)
        moved = np.asarray(grp.act_param(inv, thetas), dtype=float)
        jac = param_jacobian(grp, inv, thetas)
        lhs = np.asarray(zeta.zeta(thetas), dtype=float)
        rhs = np.asarray(zeta.zeta(moved), dtype=float) * jac
        chi = lhs.flat[0] / rhs.flat[0]
        r = np.abs(lhs - chi * rhs)
        worst = max(worst, float(np.max(np.where(np.isfinite(r), r, np.inf))))
    return worst


def check_factor(fam: DirectFamily, zeta: ConsistencyFactor, threshold: float = 1e-6) -> None:
    """Reject a custom factor that is not relatively invariant under the family's group."""
    if zeta.kind != "custom":
        return
    grp = group_for(fam)
    if grp is None:
        raise FactorRejected(f"family {fam.label} declares no group to check factor {zeta.label} against")
    r = factor_functional_residual(zeta, grp)
    if not r < threshold:
        raise FactorRejected(
            f"factor {zeta.label} fails relative invariance under {grp.label} (residual {r:.3g} >= {threshold:g})")


# ---------------------------------------------------------------------------
# builders


def _trivial_data(fam: DirectFamily, data: np.ndarray, tol: Tolerance) -> np.ndarray:
    """Boolean mask of data sitting on the trivial locus of the family's group."""
    grp = group_for(fam)
    if grp is None or grp.dim != 1:
        return np.zeros(data.shape, dtype=bool)
    return np.abs(np.asarray(action_derivative(grp, data), dtype=float)) < tol.abs


def _locus_error(fam: DirectFamily, x: float) -> TrivialLocusDatum:
    grp = group_for(fam)
    return TrivialLocusDatum(
        f"datum {float(x)!r} lies where the {grp.label} action is trivial; no inverse distribution exists")


def _check_data(fam: DirectFamily, data, tol: Tolerance) -> np.ndarray:
    data = np.atleast_1d(np.asarray(data, dtype=float))
    if data.ndim != 1 or len(data) == 0:
        raise ValueError("data must be a non-empty list of reals")
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    bad = _trivial_data(fam, data, tol)
    if bad.any():
        raise _locus_error(fam, data[bad][0])
    return data


def _provenance(fam, zeta, data, **extra) -> dict:
    return {"family": fam.label, "factor": zeta.label, "data": [float(x) for x in np.ravel(data)], **extra}


class _BatchLog:
    """log zeta + log likelihood for a batch of equally sized data sets."""

    def __init__(self, fam, zeta, data):
        self.fam, self.zeta, self.data = fam, zeta, np.asarray(data, dtype=float)

    def __call__(self, theta, rows):
        out = self.zeta.log(theta)
        for x in self.data[rows].T:
            out = out + self.fam._logpdf(x[:, None], theta)
        return out


def build_posterior(fam: DirectFamily, zeta: ConsistencyFactor, data, *, mode: str = "strict",
                    n: int = 1024, tol: Tolerance = DEFAULT_TOL, n_scan: int = 1025) -> Posterior:
    """Normalized zeta(theta) * prod f(x_i | theta) over a one-parameter space.

    ``mode="strict"`` refuses custom factors that are not relatively invariant
    under the family's group; ``"unchecked"`` skips that gate.
    """
    res = build_posteriors(fam, zeta, [data], mode=mode, n=n, tol=tol, n_scan=n_scan)[0]
    if isinstance(res, Exception):
        raise res
    return res


def build_posteriors(fam: DirectFamily, zeta: ConsistencyFactor, datasets, *, mode: str = "strict",
                     n: int = 1024, tol: Tolerance = DEFAULT_TOL, n_scan: int = 1025) -> list:
    """:func:`build_posterior` for many data sets of equal length at once.

    Every data set goes through the same construction, vectorized across the
    batch.  Entries that fail come back as the exception instead of a Posterior.
    """
    if fam.dim != 1:
        raise ValueError("build_posterior handles one-parameter families; use build_posterior_2d")
    if zeta.dim != 1:
        raise ValueError(f"factor {zeta.label} is for {zeta.dim} parameters")
    if mode not in ("strict", "unchecked"):
        raise ValueError("mode must be 'strict' or 'unchecked'")
    if mode == "strict":
        check_factor(fam, zeta)
    data = np.asarray(datasets, dtype=float)
    if data.ndim != 2 or data.shape[1] == 0:
        raise ValueError("data sets must be non-empty lists of equal length")
    if not np.all(np.isfinite(data)):
        raise ValueError("data must be finite")
    out: list = [None] * len(data)
    on_locus = _trivial_data(fam, data, tol)
    for i in np.flatnonzero(on_locus.any(axis=1)):
        out[i] = _locus_error(fam, data[i][on_locus[i]][0])
    idx = np.flatnonzero(~on_locus.any(axis=1))
    if len(idx):
        tabs = _tabulate_batch(_BatchLog(fam, zeta, data[idx]), fam.param_space[0], len(idx), n, tol, n_scan)
        for i, res in zip(idx, tabs):
            if isinstance(res, Exception):
                out[i] = res
            else:
                edges, values, eta = res
                out[i] = Posterior(edges, values - eta, eta, fam.param_space[0],
                                   _provenance(fam, zeta, data[i], mode=mode))
    return out


class _Updated:
    def __init__(self, prior: Posterior, fam: DirectFamily, x: float):
        self.prior, self.fam, self.x = prior, fam, x

    def __call__(self, theta):
        return self.prior.log_density(theta) + self.fam.logpdf(self.x, theta)


def sequential_update(prior: Posterior, fam: DirectFamily, x_new: float, *, n: int | None = None,
                      tol: Tolerance = DEFAULT_TOL, n_scan: int = 1025) -> Posterior:
    """Fold one more observation into ``prior`` and renormalize."""
    x_new = float(_check_data(fam, [x_new], tol)[0])
    prov = dict(prior.provenance)
    prov["data"] = list(prov.get("data") or []) + [x_new]
    n = n or max(len(prior.edges), 64)
    return Posterior.from_log_density(_Updated(prior, fam, x_new), prior.param_space, n=n, tol=tol,
                                      n_scan=n_scan, provenance=prov)


def _check_map(mapping: MonotoneMap, theta: np.ndarray, tol: Tolerance) -> None:
    # compare on the scale of theta so that e.g. log stays admissible far out
    d = np.asarray(mapping.d_forward(theta), dtype=float) * np.maximum(1.0, np.abs(theta))
    if np.any(~np.isfinite(d)) or np.any(np.abs(d) < tol.abs):
        raise DerivativeVanishes(f"map {mapping.label} has a vanishing derivative on the grid")


class _Pushed:
    def __init__(self, post: Posterior, mapping: MonotoneMap):
        self.post, self.mapping = post, mapping

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            theta = self.mapping.inverse(lam)
            jac = np.abs(self.mapping.d_inverse(lam))
            out = self.post.log_density(theta) + np.log(jac)
        return np.where(np.isfinite(theta) & (jac > 0), out, -np.inf)


def transform_posterior(post: Posterior, mapping: MonotoneMap, *, n: int | None = None,
                        tol: Tolerance = DEFAULT_TOL) -> Posterior:
    """Push a posterior forward through a monotone reparameterization."""
    _check_map(mapping, post.nodes.ravel(), tol)
    space = mapping.image(post.param_space)
    prov = dict(post.provenance)
    prov["transform"] = mapping.label
    return Posterior.from_log_density(_Pushed(post, mapping), space, n=n or len(post.edges), tol=tol,
                                      provenance=prov)


class _FactorPushed:
    def __init__(self, zeta: ConsistencyFactor, mapping: MonotoneMap):
        self.zeta, self.mapping = zeta, mapping

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            theta = np.asarray(self.mapping.inverse(lam), dtype=float)
            jac = np.abs(self.mapping.d_inverse(lam))
            out = self.zeta.log(theta) + np.log(jac)
        # an overflowing inverse lies outside the parameter space
        return np.where(np.isfinite(theta) & (jac > 0) & np.isfinite(jac), out, -np.inf)


def transform_factor(zeta: ConsistencyFactor, mapping: MonotoneMap) -> ConsistencyFactor:
    """Factor in new coordinates: zeta(s^-1(lam)) |d s^-1 / d lam|."""
    if zeta.dim != 1:
        raise ValueError("only one-parameter factors can be transformed")
    return ConsistencyFactor(_FactorPushed(zeta, mapping), f"{zeta.label}@{mapping.label}", "custom", 1)


# ---------------------------------------------------------------------------
# predictive


def predictive_density(post: Posterior, fam: DirectFamily) -> Callable:
    """x -> integral of f(x | theta) against the posterior."""
    nodes = post.nodes.ravel()
    w = (post.weights * post.values).ravel() / post.mass
    keep = w > 0
    nodes, w = nodes[keep], w[keep]

    def pdf(x):
        x = np.asarray(x, dtype=float)
        vals = fam.pdf(x[..., None], nodes)
        out = np.sum(vals * w, axis=-1)
        return out if np.ndim(out) else float(out)

    return pdf


def predictive_cdf(post: Posterior, fam: DirectFamily) -> Callable:
    nodes = post.nodes.ravel()
    w = (post.weights * post.values).ravel() / post.mass
    keep = w > 0
    nodes, w = nodes[keep], w[keep]

    def cdf(x):
        x = np.asarray(x, dtype=float)
        out = np.sum(fam.cdf(x[..., None], nodes) * w, axis=-1)
        return out if np.ndim(out) else float(out)

    return cdf


# ---------------------------------------------------------------------------
# two-parameter posteriors

def _z_rule(panels: int = 48) -> tuple[np.ndarray, np.ndarray]:
    # composite Kronrod rule on (-1, 1) pushed to the line by z = t / (1 - t^2)
    t, w = panel_rule(np.linspace(-1.0, 1.0, panels + 1))
    t, w = t.ravel(), w.ravel()
    z = t / (1.0 - t * t)
    dz = (1.0 + t * t) / (1.0 - t * t) ** 2
    return z, w * dz


_Z_NODES, _Z_WEIGHTS = _z_rule()
_SCAN_2D = 257
_NEGLIGIBLE_2D = 1e-22


class _JointLog:
    def __init__(self, fam: LocationScaleFamily, zeta: ConsistencyFactor, data: np.ndarray):
        self.fam, self.zeta, self.data = fam, zeta, np.asarray(data, dtype=float)

    def __call__(self, mu, sigma):
        mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
        theta = np.stack([mu, sigma], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.zeta.log(theta) + self.fam.loglik(self.data, theta)


class _SigmaMarginalLog:
    """log of the joint integrated over mu, with mu = centre + sigma * z."""

    def __init__(self, joint: _JointLog, centre: float):
        self.joint, self.centre = joint, centre

    def __call__(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        flat = sigma.ravel()
        out = np.empty(flat.shape)
        for i in range(0, len(flat), 256):
            s = flat[i:i + 256, None]
            lj = self.joint(self.centre + s * _Z_NODES[None, :], s)
            m = np.max(lj, axis=1, keepdims=True)
            finite = np.isfinite(m[:, 0])
            with np.errstate(under="ignore", invalid="ignore", divide="ignore"):
                acc = np.sum(_Z_WEIGHTS * np.exp(lj - np.where(finite[:, None], m, 0.0)), axis=1)
                out[i:i + 256] = np.where(finite, m[:, 0] + np.log(acc) + np.log(s[:, 0]), -np.inf)
        return out.reshape(sigma.shape)


class _MuMarginalLog:
    """log of the joint integrated over sigma with a fixed Kronrod rule."""

    def __init__(self, joint: _JointLog, sigma_nodes: np.ndarray, sigma_weights: np.ndarray):
        self.joint = joint
        keep = sigma_weights > 0
        self.s, self.w = sigma_nodes[keep], sigma_weights[keep]

    def __call__(self, mu):
        mu = np.asarray(mu, dtype=float)
        flat = mu.ravel()
        out = np.empty(flat.shape)
        step = max(1, 2_000_000 // max(len(self.s), 1))
        for i in range(0, len(flat), step):
            lj = self.joint(flat[i:i + step, None], self.s[None, :])
            m = np.max(lj, axis=1, keepdims=True)
            finite = np.isfinite(m[:, 0])
            with np.errstate(under="ignore", invalid="ignore", divide="ignore"):
                acc = np.sum(self.w * np.exp(lj - np.where(finite[:, None], m, 0.0)), axis=1)
                out[i:i + step] = np.where(finite, m[:, 0] + np.log(acc), -np.inf)
        return out.reshape(mu.shape)


@dataclass
class Posterior2D:
    """Normalized density over (mu, sigma) with its two marginals.

    ``mu_nodes``/``sigma_nodes`` and their weights form a tensor-product rule;
    ``grid_density`` holds the normalized density on it.
    """

    log_joint: Callable
    log_eta: float
    marginal_mu: Posterior
    marginal_sigma: Posterior
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mu_nodes = self.marginal_mu.nodes.ravel()
        self.mu_weights = self.marginal_mu.weights.ravel()
        self.sigma_nodes = self.marginal_sigma.nodes.ravel()
        self.sigma_weights = self.marginal_sigma.weights.ravel()

    @cached_property
    def grid_density(self) -> np.ndarray:
        return self.density(self.mu_nodes[:, None], self.sigma_nodes[None, :])

    def density(self, mu, sigma):
        with np.errstate(under="ignore"):
            out = np.exp(self.log_joint(mu, sigma) - self.log_eta)
        return out if np.ndim(out) else float(out)

    def total_mass(self) -> float:
        return float(self.mu_weights @ self.grid_density @ self.sigma_weights)


def build_posterior_2d(fam: LocationScaleFamily, data, zeta: ConsistencyFactor | None = None, *,
                       mode: str = "strict", n: int = 96, tol: Tolerance = DEFAULT_TOL) -> Posterior2D:
    """Joint inverse density of (mu, sigma); 1/sigma unless another factor is given.

    The sigma-marginal is obtained by integrating mu out exactly at each sigma
    and carries the normalization; a non-integrable joint shows up there.
    """
    if fam.dim != 2:
        raise ValueError("build_posterior_2d needs a two-parameter location-scale family")
    zeta = zeta or consistency_factor("joint-location-scale")
    if zeta.dim != 2:
        raise ValueError(f"factor {zeta.label} is not a joint factor")
    data = _check_data(fam, data, tol)
    if mode == "strict" and zeta.kind == "custom":
        r = factor_functional_residual(zeta, get_group("affine"))
        if not r < 1e-6:
            raise FactorRejected(f"factor {zeta.label} fails relative invariance under affine (residual {r:.3g})")
    joint = _JointLog(fam, zeta, data)
    centre = float(np.median(data))
    sig = Posterior.from_log_density(_SigmaMarginalLog(joint, centre), POSITIVE, n=n, tol=tol, n_scan=_SCAN_2D,
                                     provenance=_provenance(fam, zeta, data, component="sigma"))
    # sigma nodes holding a negligible share of the marginal add nothing to the mu-marginal
    share = (sig.weights * sig.values).ravel()
    keep = share > _NEGLIGIBLE_2D * share.max()
    mu_log = _MuMarginalLog(joint, sig.nodes.ravel()[keep], sig.weights.ravel()[keep])
    mu = Posterior.from_log_density(mu_log, REAL_LINE, n=n, tol=tol, n_scan=_SCAN_2D,
                                    provenance=_provenance(fam, zeta, data, component="mu"))
    return Posterior2D(joint, sig.log_eta, mu, sig, _provenance(fam, zeta, data, mode=mode))


def marginalize(post2d: Posterior2D, component: str) -> Posterior:
    """Marginal over ``mu`` or ``sigma``."""
    if component == "mu":
        return post2d.marginal_mu
    if component == "sigma":
        return post2d.marginal_sigma
    raise ValueError("component must be 'mu' or 'sigma'")


class _Slice:
    def __init__(self, joint, fixed: str, value: float):
        self.joint, self.fixed, self.value = joint, fixed, value

    def __call__(self, t):
        if self.fixed == "mu":
            return self.joint(self.value, t)
        return self.joint(t, self.value)


def conditional_from_joint(post2d: Posterior2D, fix: tuple[str, float], *, n: int = 256,
                           tol: Tolerance = DEFAULT_TOL) -> Posterior:
    """Slice of the joint at a fixed component divided by that component's marginal."""
    name, value = fix
    value = float(value)
    marginal = marginalize(post2d, name)
    m = float(marginal.density(value))
    if not m > tol.abs:
        raise ZeroMarginal(f"marginal density of {name} at {value} is {m:.3g}")
    space = POSITIVE if name == "mu" else REAL_LINE
    log_eta = post2d.log_eta + math.log(m)
    prov = dict(post2d.provenance)
    prov["given"] = {name: value}
    return Posterior.from_log_density(_Slice(post2d.log_joint, name, value), space, n=n, tol=tol,
                                      provenance=prov, log_eta=log_eta)


def product_rule_residual(fam: LocationScaleFamily, data, joint_factor: ConsistencyFactor | None = None,
                          *, points: int = 9, tol: Tolerance = DEFAULT_TOL) -> float:
    """Largest |f(mu, sigma | x) - f(sigma | mu, x) f(mu | x)| on a grid.

    The conditional is built on its own from the mu-pinned family with the
    scale factor 1/sigma; the marginal comes from the joint built with
    ``joint_factor``.
    """
    joint = build_posterior_2d(fam, data, joint_factor, mode="unchecked", tol=tol)
    scale = consistency_factor("scale")
    levels = np.linspace(0.05, 0.95, points)
    mus = [joint.marginal_mu.quantile(p) for p in levels]
    sigmas = np.array([joint.marginal_sigma.quantile(p) for p in levels])
    worst = 0.0
    for mu in mus:
        cond = build_posterior(fam.pin(mu=mu), scale, data, n=256, tol=tol)
        product = cond.density(sigmas) * joint.marginal_mu.density(mu)
        r = np.abs(joint.density(mu, sigmas) - product)
        worst = max(worst, float(np.max(r)))
    return worst
