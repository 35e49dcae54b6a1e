"""Parametric families of direct distributions.

Parameters travel as arrays whose trailing axis holds the components, in the
fixed order ``(mu,)``, ``(sigma,)`` or ``(mu, sigma)``.  A scalar is accepted
for one-parameter families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from .errors import DerivativeVanishes, EmptySide, NotIdentifiable
from .numerics import (
    DEFAULT_TOL,
    POSITIVE,
    REAL_LINE,
    Interval,
    RandomStream,
    Tolerance,
    bracket_increasing,
    build_grid,
    find_root,
    integrate,
)

__all__ = [
    "Base",
    "DirectFamily",
    "LocationScaleFamily",
    "PinnedFamily",
    "GenericFamily",
    "TransformedFamily",
    "MonotoneMap",
    "SignedSplit",
    "transform_variable",
    "sample",
    "signed_split",
    "reduce_scale_to_location",
    "get_family",
    "family_labels",
]


# ---------------------------------------------------------------------------
# standardized bases


class Base:
    """Standardized distribution Phi/phi behind a location-scale family."""

    name = "base"
    support = REAL_LINE

    def logpdf(self, u):
        raise NotImplementedError

    def pdf(self, u):
        return np.exp(self.logpdf(u))

    def cdf(self, u):
        raise NotImplementedError

    def sf(self, u):
        return 1.0 - self.cdf(u)

    # optional closed-form quantile; None means "invert the cdf numerically"
    ppf = None

    def __reduce__(self):
        return (type(self), ())


class NormalBase(Base):
    name = "normal"

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        return -0.5 * u * u - 0.5 * math.log(2 * math.pi)

    def cdf(self, u):
        return special.ndtr(u)

    def sf(self, u):
        return special.ndtr(-np.asarray(u, dtype=float))

    def ppf(self, p):
        return special.ndtri(p)


class CauchyBase(Base):
    name = "cauchy"

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        return -math.log(math.pi) - np.log1p(u * u)

    def cdf(self, u):
        return 0.5 + np.arctan(u) / math.pi

    def sf(self, u):
        return 0.5 - np.arctan(u) / math.pi

    def ppf(self, p):
        return np.tan(math.pi * (np.asarray(p, dtype=float) - 0.5))


class LogisticBase(Base):
    name = "logistic"

    def logpdf(self, u):
        u = np.abs(np.asarray(u, dtype=float))
        return -u - 2.0 * np.log1p(np.exp(-u))

    def cdf(self, u):
        return special.expit(u)

    def sf(self, u):
        return special.expit(-np.asarray(u, dtype=float))

    def ppf(self, p):
        return special.logit(p)


class ExponentialBase(Base):
    """phi(u) = exp(-u) on u > 0."""

    name = "exponential"
    support = POSITIVE

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(invalid="ignore"):
            return np.where(u > 0, -u, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > 0, -np.expm1(-np.maximum(u, 0.0)), 0.0)

    def sf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u > 0, np.exp(-np.maximum(u, 0.0)), 1.0)

    def ppf(self, p):
        return -np.log1p(-np.asarray(p, dtype=float))


class MirroredExponentialBase(Base):
    """phi(u) = exp(u) on u < 0."""

    name = "mirrored-exponential"
    support = Interval(-math.inf, 0.0)

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < 0, u, -np.inf)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < 0, np.exp(np.minimum(u, 0.0)), 1.0)

    def ppf(self, p):
        return np.log(np.asarray(p, dtype=float))


class ReducedBase(Base):
    """Base of the location family obtained from one side of a scale family.

    With v = y - lambda_1 the density is exp(v) * phi(sign * exp(v)) / c.
    """

    def __init__(self, parent: Base, sign: int, c: float):
        self.parent = parent
        self.sign = sign
        self.c = c
        self.name = f"reduced{'+' if sign > 0 else '-'}({parent.name})"
        self._log_c = math.log(c)

    def __reduce__(self):
        return (ReducedBase, (self.parent, self.sign, self.c))

    def logpdf(self, v):
        v = np.asarray(v, dtype=float)
        with np.errstate(over="ignore"):
            return v + self.parent.logpdf(self.sign * np.exp(v)) - self._log_c

    def cdf(self, v):
        with np.errstate(over="ignore"):
            e = np.exp(np.asarray(v, dtype=float))
        if self.sign > 0:
            return (self.parent.cdf(e) - self.parent.cdf(0.0)) / self.c
        return (self.parent.cdf(0.0) - self.parent.cdf(-e)) / self.c


BASES: dict[str, Base] = {
    b.name: b
    for b in (NormalBase(), CauchyBase(), LogisticBase(), ExponentialBase(), MirroredExponentialBase())
}


# ---------------------------------------------------------------------------
# families


def _split_theta(theta, dim: int) -> tuple[np.ndarray, ...]:
    theta = np.asarray(theta, dtype=float)
    if dim == 1:
        if theta.ndim >= 1 and theta.shape[-1] == 1:
            theta = theta[..., 0]
        return (theta,)
    if theta.shape[-1] != dim:
        raise ValueError(f"expected {dim} parameter components, got shape {theta.shape}")
    return tuple(theta[..., k] for k in range(dim))


class DirectFamily:
    """Interface shared by all families of direct distributions f(x | theta)."""

    label: str = "family"
    dim: int = 1
    param_space: tuple[Interval, ...] = (REAL_LINE,)
    param_names: tuple[str, ...] = ("theta",)
    # (group label, keyword arguments) of the declared invariance group, if any
    group_spec: tuple[str, dict] | None = None

    # subclasses implement these on broadcast component arrays
    def _logpdf(self, x, *comp):
        raise NotImplementedError

    def _cdf(self, x, *comp):
        raise NotImplementedError

    def _support(self, *comp) -> Interval:
        raise NotImplementedError

    def logpdf(self, x, theta):
        return self._logpdf(np.asarray(x, dtype=float), *_split_theta(theta, self.dim))

    def pdf(self, x, theta):
        return np.exp(self.logpdf(x, theta))

    def cdf(self, x, theta):
        return self._cdf(np.asarray(x, dtype=float), *_split_theta(theta, self.dim))

    def support(self, theta) -> Interval:
        comp = [float(c) for c in _split_theta(theta, self.dim)]
        return self._support(*comp)

    def loglik(self, data, theta) -> np.ndarray:
        """Summed log density of ``data`` at every parameter in ``theta``."""
        comp = _split_theta(theta, self.dim)
        data = np.asarray(data, dtype=float).reshape((-1,) + (1,) * np.ndim(comp[0]))
        return np.sum(self._logpdf(data, *comp), axis=0)

    def quantile(self, p: float, theta, tol: Tolerance = DEFAULT_TOL) -> float:
        """Invert the cdf by bracketed root finding."""
        if not 0.0 < p < 1.0:
            raise ValueError("quantile level must lie strictly between 0 and 1")
        sup = self.support(theta)
        cdf = lambda x: float(self.cdf(x, theta)) - p  # noqa: E731
        lo, hi = bracket_increasing(cdf, sup)
        return find_root(cdf, (lo, hi), Tolerance(rel=1e-14, abs=1e-15, max_subdivisions=tol.max_subdivisions))

    def sample(self, theta, stream: RandomStream, size=None):
        u = stream.uniform(size)
        if size is None:
            return self.quantile(float(u), theta)
        return np.array([self.quantile(float(p), theta) for p in np.ravel(u)]).reshape(np.shape(u))

    def param_probe(self, n: int = 9) -> np.ndarray:
        """A small set of admissible parameter vectors, shape (m, dim)."""
        axes = [_probe_axis(space, n) for space in self.param_space]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.label}>"


def _probe_axis(space: Interval, n: int) -> np.ndarray:
    kind = space.kind
    if kind == "line":
        return np.linspace(-3.0, 3.0, n)
    if kind == "upper":
        return space.lo + np.geomspace(0.25, 4.0, n)
    if kind == "lower":
        return space.hi - np.geomspace(4.0, 0.25, n)
    return np.linspace(space.lo, space.hi, n + 2)[1:-1]


class LocationScaleFamily(DirectFamily):
    """F(x | mu, sigma) = Phi((x - mu) / sigma) for a standardized base."""

    dim = 2
    param_space = (REAL_LINE, POSITIVE)
    param_names = ("mu", "sigma")

    def __init__(self, base: Base, label: str | None = None):
        self.base = base
        self.label = label or base.name
        self.group_spec = ("affine", {})

    def __reduce__(self):
        return (LocationScaleFamily, (self.base, self.label))

    def base_cdf(self, u):
        return self.base.cdf(u)

    def base_pdf(self, u):
        return self.base.pdf(u)

    def _logpdf(self, x, mu, sigma):
        return self.base.logpdf((x - mu) / sigma) - np.log(sigma)

    def _cdf(self, x, mu, sigma):
        return self.base.cdf((x - mu) / sigma)

    def _support(self, mu, sigma):
        return Interval(mu + sigma * self.base.support.lo, mu + sigma * self.base.support.hi)

    def quantile(self, p, theta, tol=DEFAULT_TOL):
        if self.base.ppf is None:
            return super().quantile(p, theta, tol)
        mu, sigma = _split_theta(theta, 2)
        return float(mu + sigma * self.base.ppf(p))

    def sample(self, theta, stream, size=None):
        if self.base.ppf is None:
            return super().sample(theta, stream, size)
        mu, sigma = (float(c) for c in _split_theta(theta, 2))
        u = stream.uniform(size)
        out = mu + sigma * self.base.ppf(u)
        return float(out) if size is None else out

    def pin(self, *, mu: float | None = None, sigma: float | None = None,
            label: str | None = None) -> "PinnedFamily":
        return PinnedFamily(self, mu=mu, sigma=sigma, label=label)


class PinnedFamily(DirectFamily):
    """A location-scale family with one component held fixed.

    ``sigma`` pinned gives a pure location family in mu; ``mu`` pinned gives a
    pure scale family in sigma.
    """

    dim = 1

    def __init__(self, parent: LocationScaleFamily, *, mu: float | None = None,
                 sigma: float | None = None, label: str | None = None):
        if (mu is None) == (sigma is None):
            raise ValueError("pin exactly one of mu, sigma")
        self.parent = parent
        self.mu = mu
        self.sigma = sigma
        self.base = parent.base
        if sigma is not None:
            if not sigma > 0:
                raise ValueError("pinned sigma must be positive")
            self.kind = "location"
            self.param_space = (REAL_LINE,)
            self.param_names = ("mu",)
            self.group_spec = ("translation", {})
            self.label = label or f"{parent.label}-location"
        else:
            self.kind = "scale"
            self.param_space = (POSITIVE,)
            self.param_names = ("sigma",)
            self.group_spec = ("scaling", {"center": float(mu)})
            self.label = label or f"{parent.label}-scale"

    def __reduce__(self):
        return (_rebuild_pinned, (self.parent, self.mu, self.sigma, self.label))

    def _full(self, t):
        if self.kind == "location":
            return t, self.sigma
        return self.mu, t

    def _logpdf(self, x, t):
        return self.parent._logpdf(x, *self._full(t))

    def _cdf(self, x, t):
        return self.parent._cdf(x, *self._full(t))

    def _support(self, t):
        return self.parent._support(*self._full(t))

    def quantile(self, p, theta, tol=DEFAULT_TOL):
        (t,) = _split_theta(theta, 1)
        return self.parent.quantile(p, np.array(self._full(float(t))), tol)

    def sample(self, theta, stream, size=None):
        (t,) = _split_theta(theta, 1)
        return self.parent.sample(np.array(self._full(float(t))), stream, size)


def _rebuild_pinned(parent, mu, sigma, label):
    return PinnedFamily(parent, mu=mu, sigma=sigma, label=label)


class GenericFamily(DirectFamily):
    """User-supplied one-parameter family given by vectorized callables.

    ``logpdf(x, t)`` and ``cdf(x, t)`` receive broadcast arrays, ``support(t)``
    a float.  Non-identifiable families are rejected at construction.
    """

    def __init__(
        self,
        logpdf: Callable,
        cdf: Callable,
        support: Callable[[float], Interval],
        param_space: Interval,
        label: str = "custom",
        group_spec: tuple[str, dict] | None = None,
        check: bool = True,
    ):
        self._logpdf_fn = logpdf
        self._cdf_fn = cdf
        self._support_fn = support
        self.param_space = (param_space,)
        self.label = label
        self.group_spec = group_spec
        if check:
            check_identifiable(self)

    def _logpdf(self, x, t):
        return self._logpdf_fn(x, t)

    def _cdf(self, x, t):
        return self._cdf_fn(x, t)

    def _support(self, t):
        return self._support_fn(t)


def check_identifiable(fam: DirectFamily, n_probe: int = 7, threshold: float = 1e-9) -> None:
    """Reject families in which neighbouring probe parameters share a cdf."""
    probe = fam.param_probe(n_probe)
    xs = []
    for theta in probe:
        xs.append(build_grid(fam.support(theta), 33))
    xs = np.unique(np.concatenate(xs))
    cdfs = np.array([fam.cdf(xs, theta) for theta in probe])
    for i in range(len(probe) - 1):
        if np.max(np.abs(cdfs[i + 1] - cdfs[i])) <= threshold:
            raise NotIdentifiable(
                f"{fam.label}: parameters {probe[i]} and {probe[i + 1]} give the same distribution"
            )


# ---------------------------------------------------------------------------
# variable transformations


@dataclass(frozen=True)
class MonotoneMap:
    """A one-to-one differentiable map y = forward(x) with its inverse.

    Missing derivatives are obtained by central differences.
    """

    forward: Callable
    inverse: Callable
    derivative: Callable | None = None
    inverse_derivative: Callable | None = None
    label: str = "map"

    def d_forward(self, x):
        if self.derivative is not None:
            return np.asarray(self.derivative(x), dtype=float)
        return _central(self.forward, x)

    def d_inverse(self, y):
        if self.inverse_derivative is not None:
            return np.asarray(self.inverse_derivative(y), dtype=float)
        return _central(self.inverse, y)

    def image(self, domain: Interval) -> Interval:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            a, b = float(self.forward(domain.lo)), float(self.forward(domain.hi))
        if math.isnan(a):
            a = -math.inf if b > 0 else math.inf
        return Interval(min(a, b), max(a, b))

    @classmethod
    def identity(cls) -> "MonotoneMap":
        one = lambda x: np.ones_like(np.asarray(x, dtype=float))  # noqa: E731
        return cls(lambda x: np.asarray(x, dtype=float), lambda y: np.asarray(y, dtype=float), one, one, "identity")

    @classmethod
    def affine(cls, a: float, b: float) -> "MonotoneMap":
        if a == 0:
            raise DerivativeVanishes("affine map with zero slope")
        return cls(
            lambda x: a * np.asarray(x, dtype=float) + b,
            lambda y: (np.asarray(y, dtype=float) - b) / a,
            lambda x: np.full_like(np.asarray(x, dtype=float), a),
            lambda y: np.full_like(np.asarray(y, dtype=float), 1.0 / a),
            f"affine({a},{b})",
        )

    @classmethod
    def log(cls) -> "MonotoneMap":
        return cls(_safe_log, np.exp, _reciprocal, np.exp, "log")

    @classmethod
    def exp(cls) -> "MonotoneMap":
        return cls(np.exp, _safe_log, np.exp, _reciprocal, "exp")


def _safe_log(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.asarray(x, dtype=float))


def _reciprocal(x):
    with np.errstate(divide="ignore"):
        return 1.0 / np.asarray(x, dtype=float)


def _central(fn, x):
    x = np.asarray(x, dtype=float)
    h = (np.finfo(float).eps ** (1 / 3)) * np.maximum(1.0, np.abs(x))
    return (np.asarray(fn(x + h)) - np.asarray(fn(x - h))) / (2 * h)


class TransformedFamily(DirectFamily):
    """Family of Y = s(X) for X from ``source``."""

    def __init__(self, source: DirectFamily, mapping: MonotoneMap):
        self.source = source
        self.mapping = mapping
        self.dim = source.dim
        self.param_space = source.param_space
        self.param_names = source.param_names
        self.label = f"{mapping.label}[{source.label}]"
        self.group_spec = None
        probe = source.param_probe(3)[0]
        sample_x = source.support(probe)
        self._increasing = bool(np.all(mapping.d_forward(build_grid(sample_x, 17)[1:-1]) > 0))

    def _logpdf(self, y, *comp):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            x = self.mapping.inverse(y)
            lp = self.source._logpdf(x, *comp)
            out = lp + np.log(np.abs(self.mapping.d_inverse(y)))
        return np.where(lp == -np.inf, -np.inf, out)

    def _cdf(self, y, *comp):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            F = self.source._cdf(self.mapping.inverse(y), *comp)
        return F if self._increasing else 1.0 - F

    def _support(self, *comp):
        return self.mapping.image(self.source._support(*comp))


def transform_variable(fam: DirectFamily, mapping: MonotoneMap, tol: Tolerance = DEFAULT_TOL) -> DirectFamily:
    """Family of Y = s(X); pdf picks up |(s^-1)'(y)|, cdf flips when s decreases."""
    for theta in fam.param_probe(3):
        nodes = build_grid(fam.support(theta), 65)
        nodes = nodes[np.isfinite(nodes)]
        inner = nodes[(nodes > fam.support(theta).lo) & (nodes < fam.support(theta).hi)]
        d = mapping.d_forward(inner)
        if np.any(~np.isfinite(d)) or np.any(np.abs(d) < tol.abs):
            raise DerivativeVanishes(f"{mapping.label} has a vanishing derivative on the support")
        if not (np.all(d > 0) or np.all(d < 0)):
            raise DerivativeVanishes(f"{mapping.label} is not monotone on the support")
    return TransformedFamily(fam, mapping)


def sample(fam: DirectFamily, theta, stream: RandomStream, size=None):
    """Inverse-cdf draw(s) from ``fam`` at ``theta``."""
    return fam.sample(theta, stream, size)


# ---------------------------------------------------------------------------
# signed split and scale-to-location reduction


class OneSidedFamily(DirectFamily):
    """c_sign * f_sign(x | mu, sigma): the part of f on one side of mu, renormalized."""

    dim = 2
    param_space = (REAL_LINE, POSITIVE)
    param_names = ("mu", "sigma")

    def __init__(self, parent: LocationScaleFamily, sign: int, c: float):
        self.parent = parent
        self.sign = sign
        self.c = c
        self.label = f"{parent.label}{'+' if sign > 0 else '-'}"
        self._log_c = math.log(c)

    def _logpdf(self, x, mu, sigma):
        u = (x - mu) / sigma
        inside = u > 0 if self.sign > 0 else u < 0
        return np.where(inside, self.parent._logpdf(x, mu, sigma) - self._log_c, -np.inf)

    def _cdf(self, x, mu, sigma):
        u = (x - mu) / sigma
        b = self.parent.base
        if self.sign > 0:
            return np.where(u > 0, (b.cdf(u) - b.cdf(0.0)) / self.c, 0.0)
        return np.where(u < 0, b.cdf(u) / self.c, 1.0)

    def _support(self, mu, sigma):
        return Interval(mu, math.inf) if self.sign > 0 else Interval(-math.inf, mu)


@dataclass(frozen=True)
class SignedSplit:
    c_plus: float
    c_minus: float
    family_plus: OneSidedFamily | None
    family_minus: OneSidedFamily | None


def signed_split(fam: LocationScaleFamily, tol: Tolerance = DEFAULT_TOL) -> SignedSplit:
    """Split phi at zero: c_plus, c_minus and the renormalized one-sided families."""
    base = fam.base
    sup = base.support
    c_plus = integrate(base.pdf, Interval(0.0, sup.hi), tol) if sup.hi > 0 else 0.0
    c_minus = integrate(base.pdf, Interval(sup.lo, 0.0), tol) if sup.lo < 0 else 0.0
    return SignedSplit(
        c_plus,
        c_minus,
        OneSidedFamily(fam, +1, c_plus) if c_plus > 0 else None,
        OneSidedFamily(fam, -1, c_minus) if c_minus > 0 else None,
    )


def reduce_scale_to_location(split: SignedSplit, sign: int) -> PinnedFamily:
    """Location family in y = ln(+-(x - mu)) with location ln(sigma).

    The density is exp(y - l) * phi(+-exp(y - l)) / c_+-, so it integrates to
    one over the real line.
    """
    side = split.family_plus if sign > 0 else split.family_minus
    c = split.c_plus if sign > 0 else split.c_minus
    if side is None or c <= 0:
        raise EmptySide(f"no probability mass on the {'positive' if sign > 0 else 'negative'} side")
    parent = side.parent
    reduced = LocationScaleFamily(ReducedBase(parent.base, sign, c), label=f"{parent.label}{'+' if sign > 0 else '-'}-log")
    return reduced.pin(sigma=1.0, label=f"{reduced.label}-location")


# ---------------------------------------------------------------------------
# registry


def _ls(name: str) -> LocationScaleFamily:
    return LocationScaleFamily(BASES[name], label=name)


_REGISTRY: dict[str, Callable[[], DirectFamily]] = {}
for _name in ("normal", "cauchy", "logistic"):
    _REGISTRY[_name] = (lambda n=_name: _ls(n))
    _REGISTRY[f"{_name}-location"] = (lambda n=_name: _ls(n).pin(sigma=1.0))
    _REGISTRY[f"{_name}-scale"] = (lambda n=_name: _ls(n).pin(mu=0.0))
_REGISTRY["exponential"] = lambda: _ls("exponential")
_REGISTRY["exponential-scale"] = lambda: _ls("exponential").pin(mu=0.0)


def family_labels() -> list[str]:
    return sorted(_REGISTRY)


def get_family(label: str) -> DirectFamily:
    try:
        return _REGISTRY[label]()
    except KeyError:
        raise KeyError(f"unknown family {label!r}; available: {', '.join(family_labels())}") from None
