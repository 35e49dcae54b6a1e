"""Confidence intervals, the fiducial residual and Monte Carlo calibration."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import InferenceError, NonMonotoneInParameter
from .families import DirectFamily
from .numerics import FD_STEP, RandomStream
from .posterior import (ConsistencyFactor, Posterior, build_posterior, build_posteriors, check_factor,
                        predictive_cdf)


@dataclass(frozen=True)
class ConfidenceInterval:
    theta1: float
    theta2: float
    alpha: float
    delta: float

    def contains(self, theta: float) -> bool:
        # open interval: endpoint hits do not count
        return self.theta1 < theta < self.theta2


def _check_levels(alpha: float, delta: float) -> None:
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    if not 0.0 <= alpha <= 1.0 - delta + 1e-15:
        raise ValueError(f"alpha must lie in [0, 1 - delta] = [0, {1.0 - delta:.6g}], got {alpha}")


def confidence_interval(post: Posterior, alpha: float, delta: float) -> ConfidenceInterval:
    """Interval with posterior mass ``alpha`` below it and ``delta`` inside."""
    _check_levels(alpha, delta)
    upper = min(alpha + delta, 1.0)
    return ConfidenceInterval(post.quantile(alpha), post.quantile(upper), alpha, delta)


# ---------------------------------------------------------------------------
# fiducial condition

def _default_grid(post: Posterior, n: int = 512) -> np.ndarray:
    return np.linspace(post.quantile(1e-4), post.quantile(1.0 - 1e-4), n)


def fiducial_curves(fam: DirectFamily, zeta: ConsistencyFactor, x, grid=None, *,
                    posterior: Posterior | None = None, mode: str = "strict"):
    """Grid, posterior density and |dF(x | theta)/dtheta| side by side.

    ``x`` may be a single datum or, together with ``posterior``, the value of a
    statistic whose distribution is ``fam``.
    """
    if posterior is None:
        posterior = build_posterior(fam, zeta, np.atleast_1d(x), mode=mode)
    x = float(np.ravel(x)[0]) if np.ndim(x) else float(x)
    grid = _default_grid(posterior) if grid is None else np.asarray(grid, dtype=float)

    h = FD_STEP * np.maximum(1.0, np.abs(grid))
    space = fam.param_space[0]
    lo = np.maximum(grid - h, space.lo)
    hi = np.minimum(grid + h, space.hi)
    deriv = (fam.cdf(x, hi) - fam.cdf(x, lo)) / (hi - lo)

    steps = np.diff(fam.cdf(x, grid))
    noise = 1e-12
    if (steps > noise).any() and (steps < -noise).any():
        raise NonMonotoneInParameter(f"F({x} | theta) is not monotone in theta on the grid")
    if (deriv > noise).any() and (deriv < -noise).any():
        raise NonMonotoneInParameter(f"dF({x} | theta)/dtheta changes sign on the grid")
    return grid, posterior.density(grid), np.abs(deriv)


def fiducial_residual(fam: DirectFamily, zeta: ConsistencyFactor, x, grid=None, *,
                      posterior: Posterior | None = None, mode: str = "strict") -> float:
    """max |f(theta | x) - |dF(x | theta)/dtheta|| over ``grid``."""
    _, dens, deriv = fiducial_curves(fam, zeta, x, grid, posterior=posterior, mode=mode)
    return float(np.max(np.abs(dens - deriv)))


# ---------------------------------------------------------------------------
# truth generators

@dataclass(frozen=True)
class Truth:
    """How each trial picks its true parameter value.

    ``fixed`` uses ``values[0]`` every time, ``cycle`` walks through
    ``values`` by trial index and ``uniform`` draws from the trial's own
    stream on ``(values[0], values[1])``.
    """

    kind: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("fixed", "cycle", "uniform"):
            raise ValueError(f"unknown truth kind {self.kind!r}; use fixed, cycle or uniform")
        if not self.values:
            raise ValueError("truth needs at least one value")
        if self.kind == "uniform" and not (len(self.values) == 2 and self.values[0] < self.values[1]):
            raise ValueError("uniform truth needs (lo, hi) with lo < hi")

    @classmethod
    def fixed(cls, value: float) -> "Truth":
        return cls("fixed", (float(value),))

    @classmethod
    def cycle(cls, values: Sequence[float]) -> "Truth":
        return cls("cycle", tuple(float(v) for v in values))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "Truth":
        return cls("uniform", (float(lo), float(hi)))

    def draw(self, index: int, stream: RandomStream) -> float:
        if self.kind == "fixed":
            return self.values[0]
        if self.kind == "cycle":
            return self.values[index % len(self.values)]
        lo, hi = self.values
        return lo + (hi - lo) * float(stream.uniform())

    def describe(self) -> dict:
        return {"kind": self.kind, "values": list(self.values)}


def _as_truth(truth) -> Truth:
    if isinstance(truth, Truth):
        return truth
    if np.ndim(truth) == 0:
        return Truth.fixed(float(truth))
    return Truth.cycle(truth)


# ---------------------------------------------------------------------------
# coverage

@dataclass
class CalibrationReport:
    trials: int
    covered: int
    coverage: float
    target_delta: float
    std_error: float
    alpha: float
    seed: int
    failed_trials: list = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)

    CSV_HEADER = "trials,covered,coverage,target,std_error,seed"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def csv_row(self) -> str:
        return (f"{self.trials},{self.covered},{self.coverage:.17g},{self.target_delta:.17g},"
                f"{self.std_error:.17g},{self.seed}")


def _trial_data(fam, truth, n_obs, seed, base_id, trials, start, stop):
    thetas = np.empty(stop - start)
    data = np.empty((stop - start, n_obs))
    for j, i in enumerate(range(start, stop)):
        s = RandomStream(seed, base_id * trials + i)
        thetas[j] = truth.draw(i, s)
        data[j] = fam.sample(thetas[j], s, n_obs)
    return thetas, data


# tabulation resolution for Monte Carlo use; intervals agree with the default
# resolution far below the Monte Carlo error
_MC_PANELS = 64
_MC_SCAN = 65


def _coverage_chunk(fam, zeta, truth, n_obs, levels, seed, base_id, trials, start, stop):
    thetas, data = _trial_data(fam, truth, n_obs, seed, base_id, trials, start, stop)
    posts = build_posteriors(fam, zeta, data, mode="unchecked", n=_MC_PANELS, n_scan=_MC_SCAN)
    covered, failed = [0] * len(levels), []
    for j, post in enumerate(posts):
        if isinstance(post, Exception):
            failed.append((start + j, f"{type(post).__name__}: {post}"))
            continue
        try:
            hits = [confidence_interval(post, a, d).contains(thetas[j]) for a, d in levels]
        except InferenceError as exc:
            failed.append((start + j, f"{type(exc).__name__}: {exc}"))
            continue
        for k, hit in enumerate(hits):
            covered[k] += bool(hit)
    return covered, failed


def _chunks(trials: int, batch: int):
    return [(s, min(s + batch, trials)) for s in range(0, trials, batch)]


def _run_chunks(fn, args, trials, batch, jobs):
    spans = _chunks(trials, batch)
    jobs = (os.cpu_count() or 1) if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(spans) == 1:
        return [fn(*args, s, e) for s, e in spans]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *args, s, e) for s, e in spans]
        return [f.result() for f in futures]


def _stream_args(stream, seed):
    if stream is not None:
        return stream.seed, stream.stream_id
    if seed is None:
        raise ValueError("give either a RandomStream or a seed")
    return int(seed), 0


def coverage_experiment(fam: DirectFamily, zeta: ConsistencyFactor, truth, n_obs: int = 1, alpha: float = 0.05,
                        delta: float = 0.9, trials: int = 1000, stream: RandomStream | None = None, *,
                        seed: int | None = None, mode: str = "strict", jobs: int | None = 1,
                        batch: int = 2000, raise_on_failure: bool = False) -> CalibrationReport:
    """Fraction of trials whose interval strictly contains the true value.

    Trial ``i`` draws everything from stream ``base_id * trials + i`` of the
    seed, so the result does not depend on ``jobs`` or ``batch``.  Trials
    whose posterior cannot be built are listed in ``failed_trials`` and left
    out of the counts, unless ``raise_on_failure`` is set.
    """
    return coverage_curve(fam, zeta, truth, [(alpha, delta)], n_obs, trials, stream, seed=seed, mode=mode,
                          jobs=jobs, batch=batch, raise_on_failure=raise_on_failure)[0]


def coverage_curve(fam: DirectFamily, zeta: ConsistencyFactor, truth, levels, n_obs: int = 1,
                   trials: int = 1000, stream: RandomStream | None = None, *, seed: int | None = None,
                   mode: str = "strict", jobs: int | None = 1, batch: int = 2000,
                   raise_on_failure: bool = False) -> list[CalibrationReport]:
    """:func:`coverage_experiment` for several ``(alpha, delta)`` pairs on the same trials."""
    levels = [(float(a), float(d)) for a, d in levels]
    for a, d in levels:
        _check_levels(a, d)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if n_obs < 1:
        raise ValueError("n_obs must be at least 1")
    if mode == "strict":
        check_factor(fam, zeta)
    truth = _as_truth(truth)
    seed, base_id = _stream_args(stream, seed)

    args = (fam, zeta, truth, n_obs, levels, seed, base_id, trials)
    parts = _run_chunks(_coverage_chunk, args, trials, batch, jobs)
    failed = [f for _, fs in parts for f in fs]
    if failed and raise_on_failure:
        raise InferenceError(f"{len(failed)} trials failed; first: trial {failed[0][0]}: {failed[0][1]}")
    done = trials - len(failed)
    reports = []
    for k, (alpha, delta) in enumerate(levels):
        covered = int(sum(c[k] for c, _ in parts))
        reports.append(CalibrationReport(
            trials=done,
            covered=int(covered),
            coverage=covered / done if done else math.nan,
            target_delta=delta,
            std_error=math.sqrt(delta * (1.0 - delta) / done) if done else math.nan,
            alpha=alpha,
            seed=seed,
            failed_trials=failed,
            config_echo={"family": fam.label, "factor": zeta.label, "truth": truth.describe(), "n_obs": n_obs,
                         "alpha": alpha, "delta": delta, "requested_trials": trials, "stream_id": base_id,
                         "mode": mode},
        ))
    return reports


# ---------------------------------------------------------------------------
# predictive probability integral transform

def _pit_chunk(fam, zeta, truth, n_obs, degenerate, seed, base_id, trials, start, stop):
    thetas, data = _trial_data(fam, truth, n_obs + 1, seed, base_id, trials, start, stop)
    past, future = data[:, :n_obs], data[:, n_obs]
    if degenerate:
        return [float(fam.cdf(x, t)) for x, t in zip(future, thetas)], []
    posts = build_posteriors(fam, zeta, past, mode="unchecked", n=_MC_PANELS, n_scan=_MC_SCAN)
    values, failed = [], []
    for j, post in enumerate(posts):
        if isinstance(post, Exception):
            failed.append((start + j, f"{type(post).__name__}: {post}"))
            continue
        values.append(predictive_cdf(post, fam)(future[j]))
    return values, failed


def pit_values(fam: DirectFamily, zeta: ConsistencyFactor, truth, trials: int, stream: RandomStream | None = None,
               *, seed: int | None = None, n_obs: int = 1, degenerate: bool = False, jobs: int | None = 1,
               batch: int = 2000) -> np.ndarray:
    """Predictive cdf of a fresh observation, one value per trial.

    With ``degenerate`` the posterior is replaced by a point mass at the truth,
    so the values are plain cdf values of the sampling distribution.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    truth = _as_truth(truth)
    seed, base_id = _stream_args(stream, seed)
    args = (fam, zeta, truth, n_obs, degenerate, seed, base_id, trials)
    parts = _run_chunks(_pit_chunk, args, trials, batch, jobs)
    failed = [f for _, fs in parts for f in fs]
    if failed:
        raise InferenceError(f"{len(failed)} trials failed; first: trial {failed[0][0]}: {failed[0][1]}")
    return np.array([v for vs, _ in parts for v in vs])


def predictive_pit_check(fam: DirectFamily, zeta: ConsistencyFactor, truth, trials: int,
                         stream: RandomStream | None = None, **kwargs) -> float:
    """Kolmogorov-Smirnov distance of the predictive PIT values from uniform."""
    u = pit_values(fam, zeta, truth, trials, stream, **kwargs)
    return float(stats.kstest(u, "uniform").statistic)


def ks_critical(trials: int, level: float = 0.01) -> float:
    """One-sample two-sided KS critical value from the exact finite-sample law."""
    return float(stats.kstwo(trials).isf(level))
