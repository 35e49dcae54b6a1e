"""Alternative factor-selection rules and tools for comparing them.

Covers the uniform factor, Jeffreys' rule built from a numerically computed
Fisher information, and the marginal density of lambda = mu / sigma for normal
data under the consistency factor and under the reference-prior recipe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import RegularGridInterpolator

from .errors import InferenceError, SingularInformation
from .families import DirectFamily, LocationScaleFamily, NormalBase
from .numerics import DEFAULT_TOL, FD_STEP, POSITIVE, Interval, Tolerance, integrate, panel_rule
from .posterior import (ConsistencyFactor, Posterior, _Constant, consistency_factor, custom_factor,
                        product_rule_residual, sigma_power_factor, tabulated_factor)

# ---------------------------------------------------------------------------
# Fisher information


@dataclass(frozen=True)
class FisherMatrix:
    entries: np.ndarray
    theta: tuple

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.entries))

    def to_dict(self) -> dict:
        return {"entries": self.entries.tolist(), "theta": list(self.theta)}


def _score(fam: DirectFamily, x: np.ndarray, theta: np.ndarray, i: int) -> np.ndarray:
    h = FD_STEP * max(1.0, abs(theta[i]))
    up, down = theta.copy(), theta.copy()
    up[i] += h
    down[i] -= h
    with np.errstate(divide="ignore", invalid="ignore"):
        return (fam.logpdf(x, up) - fam.logpdf(x, down)) / (2.0 * h)


def fisher_information(fam: DirectFamily, theta, tol: Tolerance = Tolerance(rel=1e-10, abs=1e-10)) -> FisherMatrix:
    """Expected outer product of the score, by quadrature over the sample space.

    Scores are central differences of the log density in each parameter.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    m = len(theta)
    if m != fam.dim:
        raise ValueError(f"{fam.label} has {fam.dim} parameters, got {m}")
    support = fam.support(theta)
    try:
        centre = [fam.quantile(0.5, theta)]
    except InferenceError:
        centre = None

    def entry(i, j):
        def g(x):
            with np.errstate(under="ignore", invalid="ignore"):
                f = fam.pdf(x, theta)
                v = f * _score(fam, x, theta, i) * _score(fam, x, theta, j)
            return np.where(f > 0, v, 0.0)
        return integrate(g, support, tol, points=centre)

    out = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            out[i, j] = out[j, i] = entry(i, j)
    return FisherMatrix(out, tuple(float(t) for t in theta))


# ---------------------------------------------------------------------------
# Jeffreys and uniform factors


def _axis(space: Interval, n: int) -> np.ndarray:
    if space.kind == "line":
        return np.linspace(-4.0, 4.0, n)
    if space.kind == "upper":
        return space.lo + np.geomspace(0.05, 20.0, n)
    if space.kind == "lower":
        return space.hi - np.geomspace(20.0, 0.05, n)
    return np.linspace(space.lo, space.hi, n + 2)[1:-1]


class _LogTable2D:
    """Linear interpolation of log zeta on (mu, log sigma).

    Extrapolates linearly in log sigma.  mu is held at the table edge outside
    its range: Fisher information of a location-scale family does not depend
    on mu, and extrapolating rounding-level slopes would blow up far out.
    """

    def __init__(self, mu, sigma, log_zeta):
        self.mu_range = (float(np.min(mu)), float(np.max(mu)))
        self.interp = RegularGridInterpolator((mu, np.log(sigma)), log_zeta, method="linear",
                                              bounds_error=False, fill_value=None)

    def __call__(self, theta):
        t = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            pts = np.stack([np.clip(t[..., 0], *self.mu_range), np.log(t[..., 1])], axis=-1)
        flat = pts.reshape(-1, 2)
        ok = np.all(np.isfinite(flat), axis=1)
        out = np.full(len(flat), -np.inf)
        if ok.any():
            out[ok] = self.interp(flat[ok])
        return out.reshape(t.shape[:-1])


def jeffreys_factor(fam: DirectFamily, grid=None, tol: Tolerance = DEFAULT_TOL) -> ConsistencyFactor:
    """zeta(theta) = sqrt(det I(theta)), tabulated on a grid and interpolated.

    One-parameter families use log-linear interpolation (on log theta for a
    positive parameter); two-parameter location-scale families interpolate
    log zeta linearly in (mu, log sigma).  Power laws are reproduced exactly.
    """
    if fam.dim == 1:
        axis = _axis(fam.param_space[0], 17) if grid is None else np.asarray(grid, dtype=float)
        dets = np.array([fisher_information(fam, [t]).det for t in axis])
        _check_dets(dets, axis, tol)
        return tabulated_factor(axis, np.sqrt(dets), label=f"jeffreys({fam.label})")
    if fam.dim == 2 and tuple(s.kind for s in fam.param_space) == ("line", "upper"):
        mu, sigma = (_axis(fam.param_space[0], 5), _axis(fam.param_space[1], 17)) if grid is None else grid
        mu, sigma = np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float)
        dets = np.array([[fisher_information(fam, [m, s]).det for s in sigma] for m in mu])
        _check_dets(dets, None, tol)
        return custom_factor(_LogTable2D(mu, sigma, 0.5 * np.log(dets)), label=f"jeffreys({fam.label})",
                             dim=2, log=True)
    raise ValueError("jeffreys_factor handles one-parameter families and (mu, sigma) families")


def _check_dets(dets, axis, tol):
    bad = ~(dets > tol.abs)
    if bad.any():
        where = "" if axis is None else f" at theta={axis[np.argmax(bad)]:.6g}"
        raise SingularInformation(f"Fisher information determinant {dets[bad].flat[0]:.3g} is not positive{where}")


def uniform_factor(dim: int = 1) -> ConsistencyFactor:
    """zeta = 1 everywhere."""
    return ConsistencyFactor(_Constant(1.0, dim), "uniform", "custom", dim)


def factor_discrepancy(a: ConsistencyFactor, b: ConsistencyFactor, grid) -> float:
    """Largest difference of the two factors on ``grid`` once each is scaled to 1 at grid[0]."""
    grid = np.asarray(grid, dtype=float)
    la, lb = np.asarray(a.log(grid), dtype=float), np.asarray(b.log(grid), dtype=float)
    ra = np.exp(la - la.flat[0])
    rb = np.exp(lb - lb.flat[0])
    return float(np.max(np.abs(ra - rb)))


# ---------------------------------------------------------------------------
# marginal of lambda = mu / sigma for normal data

# power of u in the inner integral for each closed-form route, as a function of n
U_POWER = {
    "reference": lambda n: n - 1,
    "consistency": lambda n: n - 2,
    "consistency-un": lambda n: n,
}
# whether the route carries the 1/sqrt(1 + lambda^2/2) factor
SQRT_FACTOR = {"reference": True, "consistency": False, "consistency-un": False}

_ENVELOPE = 1e-12
_U_HALF_WINDOW = 12.0
_U_PANELS = 48


def lambda_limit(n: int) -> float:
    """Half-width L of the lambda range, where exp(-n L^2 / 2) = 1e-12."""
    return math.sqrt(-2.0 * math.log(_ENVELOPE) / n)


def _summaries(data) -> tuple[int, float]:
    x = np.asarray(data, dtype=float).ravel()
    n = len(x)
    if n < 2:
        raise ValueError("the lambda marginal needs at least two observations")
    ss = float(np.sum(x * x))
    if not ss > 0:
        raise ValueError("the lambda marginal needs data with a positive sum of squares")
    return n, float(np.sum(x)) / math.sqrt(ss)


def log_u_integral(p: int, b) -> np.ndarray:
    """log of the integral over u > 0 of u**p exp(-u^2/2 + b u), for an array of b.

    The log integrand is concave with curvature at most -1, so a window of
    12 units either side of its peak holds everything above exp(-72) of the
    peak; it is covered by a composite Kronrod rule.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if p < 0:
        raise ValueError("u power must be non-negative")
    peak = 0.5 * (b + np.sqrt(b * b + 4.0 * p)) if p > 0 else np.maximum(b, 0.0)
    lo = np.maximum(peak - _U_HALF_WINDOW, 0.0)
    hi = peak + _U_HALF_WINDOW
    unit_nodes, unit_weights = panel_rule(np.linspace(0.0, 1.0, _U_PANELS + 1))
    unit_nodes, unit_weights = unit_nodes.ravel(), unit_weights.ravel()
    u = lo[:, None] + (hi - lo)[:, None] * unit_nodes
    w = (hi - lo)[:, None] * unit_weights

    def g(u):
        with np.errstate(divide="ignore"):
            pw = p * np.log(u) if p > 0 else 0.0
        return pw - 0.5 * u * u + b[:, None] * u

    top = g(peak[:, None])
    with np.errstate(under="ignore"):
        acc = np.sum(w * np.exp(g(u) - top), axis=1)
    return top[:, 0] + np.log(acc)


class _LambdaLog:
    def __init__(self, n: int, r: float, power: int, sqrt_factor: bool):
        self.n, self.r, self.power, self.sqrt_factor = n, r, power, sqrt_factor

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        flat = lam.ravel()
        out = -0.5 * self.n * flat * flat + log_u_integral(self.power, self.r * flat)
        if self.sqrt_factor:
            out = out - 0.5 * np.log1p(0.5 * flat * flat)
        return out.reshape(lam.shape)


def _lambda_posterior(rule: str, data, n_panels: int) -> Posterior:
    n, r = _summaries(data)
    L = lambda_limit(n)
    log_fn = _LambdaLog(n, r, U_POWER[rule](n), SQRT_FACTOR[rule])
    prov = {"family": "normal", "factor": rule, "data": [float(x) for x in np.ravel(data)],
            "parameter": "lambda = mu / sigma", "r": r, "u_power": U_POWER[rule](n), "limit": L}
    return Posterior.from_log_density(log_fn, Interval(-L, L), n=n_panels, provenance=prov)


def reference_marginal_lambda(data, *, n_panels: int = 128) -> Posterior:
    """Reference-prior marginal of lambda for normal data, on [-L, L]."""
    return _lambda_posterior("reference", data, n_panels)


def consistency_marginal_lambda(data, *, exponent: str = "n-2", n_panels: int = 128) -> Posterior:
    """Marginal of lambda under the joint factor 1/sigma, on [-L, L].

    ``exponent="n-2"`` uses the inner power u**(n-2) that the change of
    variables actually produces.  ``"n"`` uses u**n instead and does not
    agree with marginalizing the joint posterior; it is kept for comparison.
    """
    if exponent not in ("n-2", "n"):
        raise ValueError("exponent must be 'n-2' or 'n'")
    return _lambda_posterior("consistency" if exponent == "n-2" else "consistency-un", data, n_panels)


def lambda_marginal_via_joint(fam: LocationScaleFamily, data, joint_factor: ConsistencyFactor | None = None,
                              grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Marginal of lambda obtained directly from the joint factor and likelihood.

    For each grid value the density of (lambda, sigma), which is
    sigma * zeta(lambda sigma, sigma) * prod f(x | lambda sigma, sigma), is
    integrated over sigma by adaptive quadrature.  Returns ``(grid, density)``
    with the density normalized on the grid.
    """
    zeta = joint_factor or consistency_factor("joint-location-scale")
    x = np.asarray(data, dtype=float).ravel()
    if grid is None:
        L = lambda_limit(len(x))
        grid = np.linspace(-L, L, 1025)
    grid = np.asarray(grid, dtype=float)

    def log_g(lam, sigma):
        theta = np.stack(np.broadcast_arrays(lam * sigma, sigma), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(sigma) + zeta.log(theta) + fam.loglik(x, theta)

    scan = np.exp(np.linspace(-12.0, 12.0, 481)) * max(float(np.sqrt(np.mean(x * x))), 1e-300)
    ref = log_g(grid[:, None], scan[None, :])
    peaks = scan[np.argmax(ref, axis=1)]
    tops = np.max(ref, axis=1)
    tol = Tolerance(rel=1e-11, abs=1e-300)
    vals = np.empty(len(grid))
    for i, lam in enumerate(grid):
        top = tops[i]

        def g(s, lam=lam, top=top):
            with np.errstate(under="ignore"):
                return np.exp(log_g(lam, s) - top)

        vals[i] = top + math.log(integrate(g, POSITIVE, tol, points=[float(peaks[i])]))
    dens = np.exp(vals - vals.max())
    return grid, dens / simpson(dens, x=grid)


def _normalized_on(grid, dens):
    dens = np.asarray(dens, dtype=float)
    return dens / simpson(dens, x=grid)


def l1_distance(grid, dens_a, dens_b) -> float:
    """Integral of |a - b| on ``grid`` after normalizing each density there."""
    a, b = _normalized_on(grid, dens_a), _normalized_on(grid, dens_b)
    return float(simpson(np.abs(a - b), x=grid))


# ---------------------------------------------------------------------------
# rule comparison

RULES = ("consistency", "consistency-un", "reference", "jeffreys", "uniform")


class _ReferenceJoint:
    # 1/sigma^2 * (1 + mu^2 / (2 sigma^2))^(-1/2)
    def __call__(self, theta):
        t = np.asarray(theta, dtype=float)
        mu, sigma = t[..., 0], t[..., 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            return -2.0 * np.log(sigma) - 0.5 * np.log1p(0.5 * (mu / sigma) ** 2)


def rule_joint_factor(rule, fam: DirectFamily | None = None) -> ConsistencyFactor:
    """Joint (mu, sigma) factor that each rule implies."""
    if isinstance(rule, ConsistencyFactor):
        return rule
    if rule == "consistency":
        return consistency_factor("joint-location-scale")
    if rule == "consistency-un":
        return sigma_power_factor(-3.0, label="sigma^-3")
    if rule == "reference":
        return custom_factor(_ReferenceJoint(), label="reference", dim=2, log=True)
    if rule == "jeffreys":
        if fam is None:
            raise ValueError("the jeffreys rule needs a family")
        return jeffreys_factor(fam)
    if rule == "uniform":
        return uniform_factor(dim=2)
    raise ValueError(f"unknown rule {rule!r}; available: {', '.join(RULES)}")


def _rule_label(rule) -> str:
    return rule.label if isinstance(rule, ConsistencyFactor) else str(rule)


def _is_normal(fam) -> bool:
    return isinstance(fam, LocationScaleFamily) and isinstance(fam.base, NormalBase)


def _lambda_density(rule, fam, data, grid):
    if isinstance(rule, str) and rule in U_POWER:
        if not _is_normal(fam):
            raise ValueError(f"the closed-form {rule} marginal is for normal data only")
        return _lambda_posterior(rule, data, 128).density(grid)
    return lambda_marginal_via_joint(fam, data, rule_joint_factor(rule, fam), grid)[1]


@dataclass
class RuleComparison:
    rule_a: str
    rule_b: str
    l1_distance: float
    product_rule_residual_a: float | None
    product_rule_residual_b: float | None
    grid_echo: dict
    grid: np.ndarray = field(repr=False)
    density_a: np.ndarray = field(repr=False)
    density_b: np.ndarray = field(repr=False)
    notes: list = field(default_factory=list)

    def to_dict(self, arrays: bool = True) -> dict:
        out = {
            "rule_a": self.rule_a, "rule_b": self.rule_b, "l1_distance": self.l1_distance,
            "product_rule_residual_a": self.product_rule_residual_a,
            "product_rule_residual_b": self.product_rule_residual_b,
            "grid_echo": self.grid_echo, "notes": list(self.notes),
        }
        if arrays:
            out.update(grid=self.grid.tolist(), density_a=self.density_a.tolist(),
                       density_b=self.density_b.tolist())
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _residual(fam, data, rule, notes):
    try:
        return product_rule_residual(fam, data, rule_joint_factor(rule, fam))
    except (InferenceError, ValueError) as exc:
        notes.append(f"product rule residual for {_rule_label(rule)} unavailable: {type(exc).__name__}: {exc}")
        return None


def compare_rules(rule_a, rule_b, fam: LocationScaleFamily, data, grid=None, *,
                  product_residuals: bool = True) -> RuleComparison:
    """Compare two rules through their lambda marginals and product-rule residuals.

    A rule is a name from ``RULES`` or a joint ConsistencyFactor.  Marginals
    are normalized on the grid before the L1 distance is taken.  A residual
    that cannot be computed (improper joint, say) is reported as None with a
    note.
    """
    x = np.asarray(data, dtype=float).ravel()
    if grid is None:
        L = lambda_limit(len(x))
        grid = np.linspace(-L, L, 1025)
    grid = np.asarray(grid, dtype=float)
    a = _normalized_on(grid, _lambda_density(rule_a, fam, x, grid))
    b = _normalized_on(grid, _lambda_density(rule_b, fam, x, grid))
    notes: list = []
    ra = _residual(fam, x, rule_a, notes) if product_residuals else None
    rb = _residual(fam, x, rule_b, notes) if product_residuals else None
    return RuleComparison(
        rule_a=_rule_label(rule_a), rule_b=_rule_label(rule_b),
        l1_distance=float(simpson(np.abs(a - b), x=grid)),
        product_rule_residual_a=ra, product_rule_residual_b=rb,
        grid_echo={"lo": float(grid[0]), "hi": float(grid[-1]), "n": int(len(grid))},
        grid=grid, density_a=a, density_b=b, notes=notes,
    )
