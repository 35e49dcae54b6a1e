"""Command-line experiment runner.

A run is described by a JSON config; scalar fields can be overridden on the
command line.  Each run writes ``<prefix>.json``, ``<prefix>.csv``, an
optional ``<prefix>.svg`` and ``<prefix>.manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time
import traceback
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .calibration import (CalibrationReport, coverage_curve, fiducial_curves, ks_critical, pit_values)
from .errors import InferenceError
from .families import family_labels, get_family
from .invariance import check_H_form, get_group, group_for, group_labels, reduction_maps, trivial_locus
from .numerics import RandomStream, build_grid
from .posterior import (ConsistencyFactor, build_posterior, build_posterior_2d, consistency_factor,
                        sigma_power_factor, tabulated_factor)
from .rivals import RULES, compare_rules, jeffreys_factor, uniform_factor

log = logging.getLogger("invprob")

COMMANDS = ("posterior", "coverage", "fiducial", "compare-priors", "pit", "reduce")
FACTOR_LABELS = ("auto", "location", "scale", "joint-location-scale", "joint", "uniform", "jeffreys",
                 "sigma^<power>", "custom:<theta>=<zeta>,...")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class ConfigInvalid(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# ---------------------------------------------------------------------------
# configuration


class DataSpec(BaseModel):
    """Data drawn from the family itself at parameter ``theta``."""

    model_config = ConfigDict(extra="forbid")
    theta: Union[float, list[float]]
    n: int = Field(ge=1)


def _parse_custom(text: str) -> tuple[list[float], list[float]]:
    body = text[len("custom:"):]
    thetas, zetas = [], []
    for item in body.split(","):
        if "=" not in item:
            raise ValueError(f"custom factor entry {item!r} is not of the form theta=zeta")
        t, z = item.split("=", 1)
        thetas.append(float(t))
        zetas.append(float(z))
    if len(thetas) < 2:
        raise ValueError("a custom factor table needs at least two entries")
    if any(not z > 0 for z in zetas):
        raise ValueError("custom factor values must be positive")
    return thetas, zetas


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Literal["posterior", "coverage", "fiducial", "compare-priors", "pit", "reduce"]
    family: str
    group: Optional[str] = None
    factor: str = "auto"
    mode: Literal["strict", "unchecked"] = "strict"
    data: Union[list[float], DataSpec, None] = None
    truth: Union[float, list[float], None] = None
    alpha: float = 0.05
    delta: float = 0.9
    trials: int = 1000
    n_obs: int = 1
    seed: int = 0
    output: str = "invprob-run"
    emit_plot: bool = False
    jobs: Optional[int] = None
    rule_a: str = "consistency"
    rule_b: str = "reference"
    grid_points: int = 512

    @field_validator("family")
    @classmethod
    def _family_known(cls, v):
        if v not in family_labels():
            raise ValueError(f"unknown family {v!r}; available: {', '.join(family_labels())}")
        return v

    @field_validator("group")
    @classmethod
    def _group_known(cls, v):
        if v is not None and v not in group_labels():
            raise ValueError(f"unknown group {v!r}; available: {', '.join(group_labels())}")
        return v

    @field_validator("factor")
    @classmethod
    def _factor_known(cls, v):
        if v.startswith("custom:"):
            _parse_custom(v)
        elif v.startswith("sigma^"):
            float(v[len("sigma^"):])
        elif v not in FACTOR_LABELS:
            raise ValueError(f"unknown factor {v!r}; available: {', '.join(FACTOR_LABELS)}")
        return v

    @field_validator("alpha", "delta")
    @classmethod
    def _probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"must lie in [0, 1], got {v}")
        return v

    @field_validator("trials", "n_obs")
    @classmethod
    def _count(cls, v):
        if v < 1:
            raise ValueError(f"must be at least 1, got {v}")
        return v

    @field_validator("jobs")
    @classmethod
    def _jobs(cls, v):
        if v is not None and v < 1:
            raise ValueError(f"must be at least 1, got {v}")
        return v

    @field_validator("grid_points")
    @classmethod
    def _grid(cls, v):
        if v < 3:
            raise ValueError(f"must be at least 3, got {v}")
        return v

    @field_validator("rule_a", "rule_b")
    @classmethod
    def _rule_known(cls, v):
        if v not in RULES:
            raise ValueError(f"unknown rule {v!r}; available: {', '.join(RULES)}")
        return v

    @model_validator(mode="after")
    def _cross(self):
        problems = []
        if self.alpha > 1.0 - self.delta + 1e-15:
            problems.append(f"alpha: must not exceed 1 - delta = {1.0 - self.delta:.6g}, got {self.alpha}")
        dim = get_family(self.family).dim
        if self.command in ("posterior", "fiducial", "compare-priors") and self.data is None:
            problems.append(f"data: required by the {self.command} command")
        if self.command in ("coverage", "pit") and self.truth is None:
            problems.append(f"truth: required by the {self.command} command")
        if self.command in ("coverage", "pit", "fiducial", "reduce") and dim != 1:
            problems.append(f"family: the {self.command} command needs a one-parameter family")
        if self.command == "compare-priors" and self.family != "normal":
            problems.append("family: compare-priors works with the normal family")
        if isinstance(self.data, DataSpec) and np.size(self.data.theta) != dim:
            problems.append(f"data.theta: {self.family} has {dim} parameter(s)")
        if self.factor.startswith("custom:") and dim != 1:
            problems.append("factor: custom tables are for one-parameter families")
        if problems:
            raise ValueError("\n".join(problems))
        return self


def _format_errors(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        for line in msg.split("\n"):
            out.append(f"{loc}: {line}" if loc else line)
    return out


def validate(config_text: str | dict):
    """Parse and check a config; return an ExperimentConfig or a list of error strings."""
    if isinstance(config_text, str):
        try:
            raw = json.loads(config_text)
        except json.JSONDecodeError as exc:
            return [f"config is not valid JSON: {exc}"]
    else:
        raw = config_text
    if not isinstance(raw, dict):
        return ["config must be a JSON object"]
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        errors = _format_errors(exc)
        # cross-field checks only run once every field parses; add the ones we can still make
        if all(err["loc"] for err in exc.errors()):
            errors += _partial_cross(raw, errors)
        return errors


def _partial_cross(raw: dict, errors: list[str]) -> list[str]:
    out = []
    bad = {e.split(":", 1)[0].split(".")[0] for e in errors}
    a, d = raw.get("alpha", 0.05), raw.get("delta", 0.9)
    numeric = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (a, d))
    if numeric and not {"alpha", "delta"} & bad and a > 1 - d + 1e-15:
        out.append(f"alpha: must not exceed 1 - delta = {1 - d:.6g}, got {a}")
    cmd = raw.get("command")
    if cmd in ("posterior", "fiducial", "compare-priors") and raw.get("data") is None:
        out.append(f"data: required by the {cmd} command")
    if cmd in ("coverage", "pit") and raw.get("truth") is None:
        out.append(f"truth: required by the {cmd} command")
    return out


# ---------------------------------------------------------------------------
# dispatch helpers


def _factor(cfg: ExperimentConfig, fam) -> ConsistencyFactor:
    f = cfg.factor
    if f == "auto":
        kind = {"translation": "location", "scaling": "scale", "affine": "joint-location-scale"}
        grp = group_for(fam)
        if grp is None:
            raise ConfigInvalid([f"factor: {fam.label} declares no group; give a factor explicitly"])
        return consistency_factor(kind[grp.label])
    if f in ("location", "scale", "joint-location-scale", "joint"):
        return consistency_factor(f)
    if f == "uniform":
        return uniform_factor(fam.dim)
    if f == "jeffreys":
        return jeffreys_factor(fam)
    if f.startswith("sigma^"):
        return sigma_power_factor(float(f[len("sigma^"):]), dim=fam.dim)
    thetas, zetas = _parse_custom(f)
    return tabulated_factor(thetas, zetas, label=f)


def _data(cfg: ExperimentConfig, fam) -> np.ndarray:
    if isinstance(cfg.data, DataSpec):
        theta = np.atleast_1d(np.asarray(cfg.data.theta, dtype=float))
        return np.atleast_1d(fam.sample(theta if fam.dim > 1 else theta[0], RandomStream(cfg.seed, 0), cfg.data.n))
    return np.asarray(cfg.data, dtype=float)


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _display_grid(post, n: int) -> np.ndarray:
    lo, hi = post.quantile(1e-4), post.quantile(1 - 1e-4)
    # heavy upper tails on (0, inf) would leave a linear grid with no points in the body
    if post.param_space.lo == 0.0 and lo > 0.0:
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


@dataclass
class Result:
    payload: dict
    header: list[str]
    rows: list[list]
    plot: Optional[dict] = None


def _posterior(cfg, fam, zeta) -> Result:
    data = _data(cfg, fam)
    if fam.dim == 1:
        post = build_posterior(fam, zeta, data, mode=cfg.mode)
        grid = _display_grid(post, cfg.grid_points)
        dens, cdf = post.density(grid), post.cdf(grid)
        payload = {"command": "posterior", "log_eta": post.log_eta, "mean": post.mean(),
                   "median": post.quantile(0.5), "posterior": post.to_dict()}
        rows = [[t, d, c] for t, d, c in zip(grid, dens, cdf)]
        return Result(payload, ["theta", "density", "cdf"], rows,
                      {"kind": "posterior", "curves": {fam.label: (grid, dens)}})
    post = build_posterior_2d(fam, data, zeta, mode=cfg.mode)
    payload = {"command": "posterior", "log_eta": post.log_eta,
               "marginal_mu": post.marginal_mu.to_dict(), "marginal_sigma": post.marginal_sigma.to_dict()}
    rows, curves = [], {}
    for name, m in (("mu", post.marginal_mu), ("sigma", post.marginal_sigma)):
        grid = _display_grid(m, cfg.grid_points)
        dens = m.density(grid)
        curves[name] = (grid, dens)
        rows += [[name, t, d] for t, d in zip(grid, dens)]
    return Result(payload, ["component", "theta", "density"], rows, {"kind": "posterior", "curves": curves})


_CURVE_DELTAS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


def _coverage(cfg, fam, zeta) -> Result:
    levels = [(cfg.alpha, cfg.delta)]
    if cfg.emit_plot:
        levels += [(0.5 * (1 - d), d) for d in _CURVE_DELTAS]
    reports = coverage_curve(fam, zeta, cfg.truth, levels, cfg.n_obs, cfg.trials, seed=cfg.seed,
                             mode=cfg.mode, jobs=cfg.jobs)
    main: CalibrationReport = reports[0]
    payload = {"command": "coverage", "report": main.to_dict()}
    plot = None
    if cfg.emit_plot:
        curve = reports[1:]
        payload["curve"] = [{"alpha": r.alpha, "delta": r.target_delta, "coverage": r.coverage} for r in curve]
        plot = {"kind": "coverage", "deltas": [r.target_delta for r in curve],
                "coverage": [r.coverage for r in curve], "std_error": [r.std_error for r in curve]}
    row = main.csv_row().split(",")
    return Result(payload, CalibrationReport.CSV_HEADER.split(","), [row], plot)


def _fiducial(cfg, fam, zeta) -> Result:
    data = _data(cfg, fam)
    if len(data) != 1:
        raise ConfigInvalid(["data: the fiducial command takes exactly one observation"])
    post = build_posterior(fam, zeta, data, mode=cfg.mode)
    grid = _display_grid(post, cfg.grid_points)
    grid, dens, deriv = fiducial_curves(fam, zeta, data[0], grid, posterior=post)
    payload = {"command": "fiducial", "x": float(data[0]), "residual": float(np.max(np.abs(dens - deriv))),
               "grid": {"lo": float(grid[0]), "hi": float(grid[-1]), "n": len(grid)}}
    rows = [[t, d, g] for t, d, g in zip(grid, dens, deriv)]
    return Result(payload, ["theta", "posterior_density", "abs_dF_dtheta"], rows,
                  {"kind": "posterior", "curves": {"posterior": (grid, dens), "|dF/dtheta|": (grid, deriv)}})


def _compare(cfg, fam, zeta) -> Result:
    data = _data(cfg, fam)
    cmp = compare_rules(cfg.rule_a, cfg.rule_b, fam, data)
    payload = {"command": "compare-priors", "data": [float(x) for x in data], **cmp.to_dict(arrays=False)}
    rows = [[t, a, b] for t, a, b in zip(cmp.grid, cmp.density_a, cmp.density_b)]
    return Result(payload, ["lambda", cmp.rule_a, cmp.rule_b], rows,
                  {"kind": "compare", "curves": {cmp.rule_a: (cmp.grid, cmp.density_a),
                                                 cmp.rule_b: (cmp.grid, cmp.density_b)}})


def _pit(cfg, fam, zeta) -> Result:
    from scipy import stats
    u = pit_values(fam, zeta, cfg.truth, cfg.trials, seed=cfg.seed, n_obs=cfg.n_obs, jobs=cfg.jobs)
    ks = float(stats.kstest(u, "uniform").statistic)
    payload = {"command": "pit", "trials": cfg.trials, "ks": ks, "critical_1pct": ks_critical(cfg.trials),
               "seed": cfg.seed}
    rows = [[i, v] for i, v in enumerate(u)]
    return Result(payload, ["trial", "pit"], rows)


def _reduce(cfg, fam, zeta) -> Result:
    grp = get_group(cfg.group) if cfg.group else group_for(fam)
    if grp is None:
        raise ConfigInvalid([f"group: {fam.label} declares no group; give one"])
    maps = reduction_maps(grp, fam)
    theta0 = maps.theta_anchor
    locus = trivial_locus(grp, fam.support(theta0))
    xs = build_grid(maps.branch, cfg.grid_points)
    xs = xs[maps.branch.contains(xs) & np.isfinite(xs)]
    xs = xs[(xs > maps.branch.lo) & (xs < maps.branch.hi)]
    payload = {"command": "reduce", "group": grp.label, "trivial_locus": locus, "x_anchor": maps.x_anchor,
               "theta_anchor": theta0, "branch": maps.branch.to_list(), "side": maps.side,
               "h_form_residual": check_H_form(fam, maps)}
    rows = [[x, s] for x, s in zip(xs, maps.s(xs))]
    return Result(payload, ["x", "s"], rows)


_DISPATCH = {"posterior": _posterior, "coverage": _coverage, "fiducial": _fiducial,
             "compare-priors": _compare, "pit": _pit, "reduce": _reduce}


# ---------------------------------------------------------------------------
# output


def _atomic_write(path: str, text: str) -> None:
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def _csv_text(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer))
                                                              else _fmt(v)) for v in row))
    return "\n".join(lines) + "\n"


def _plot(spec: dict, path: str) -> bool:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        if spec["kind"] == "coverage":
            d = np.asarray(spec["deltas"])
            ax.errorbar(d, spec["coverage"], yerr=3 * np.asarray(spec["std_error"]), fmt="o", label="empirical")
            ax.plot([0, 1], [0, 1], "k--", lw=0.8, label="coverage = content")
            ax.set_xlabel("probability content")
            ax.set_ylabel("coverage")
        else:
            for name, (x, y) in spec["curves"].items():
                ax.plot(x, y, label=name)
            ax.set_xlabel("lambda" if spec["kind"] == "compare" else "parameter")
            ax.set_ylabel("density")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return True
    except Exception as exc:  # plotting never fails a run
        log.warning("plot not written: %s", exc)
        return False


@dataclass
class RunManifest:
    config_echo: dict
    tool_version: str
    wall_time_seconds: float
    output_files: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def run(config: ExperimentConfig) -> RunManifest:
    """Execute one configured experiment and write its outputs."""
    start = time.perf_counter()
    fam = get_family(config.family)
    zeta = _factor(config, fam)
    log.info("running %s on %s with factor %s", config.command, fam.label, zeta.label)
    result = _DISPATCH[config.command](config, fam, zeta)

    prefix = config.output
    folder = os.path.dirname(os.path.abspath(prefix))
    os.makedirs(folder, exist_ok=True)
    echo = json.loads(config.model_dump_json())
    files = []
    payload = {"config": echo, **result.payload}
    _atomic_write(prefix + ".json", json.dumps(_clean(payload), indent=2) + "\n")
    files.append(prefix + ".json")
    _atomic_write(prefix + ".csv", _csv_text(result.header, result.rows))
    files.append(prefix + ".csv")
    if config.emit_plot and result.plot is not None:
        if _plot(result.plot, prefix + ".svg"):
            files.append(prefix + ".svg")
    elif config.emit_plot:
        log.warning("the %s command has no plot", config.command)
    manifest = RunManifest(echo, __version__, time.perf_counter() - start, files + [prefix + ".manifest.json"])
    _atomic_write(prefix + ".manifest.json", json.dumps(_clean(manifest.to_dict()), indent=2) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# entry point


def _setup_logging() -> None:
    level = os.environ.get("INFER_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(levels.get(level, logging.WARNING))
    log.propagate = False
    if level not in levels:
        log.warning("INFER_LOG=%r not understood; using warn", level)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invprob", description="Run an inverse-probability experiment from a JSON config.")
    p.add_argument("config", help="path to the JSON config, or - for standard input")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--output", help="output path prefix")
    p.add_argument("--jobs", type=int, help="worker processes for coverage and pit (default: all cores)")
    p.add_argument("--set", action="append", default=[], metavar="FIELD=VALUE",
                   help="override any scalar field; VALUE is parsed as JSON when possible")
    p.add_argument("--validate", action="store_true", help="only check the config")
    return p


def _overrides(raw: dict, args) -> dict:
    for name in ("seed", "trials", "delta", "alpha", "output", "jobs"):
        v = getattr(args, name)
        if v is not None:
            raw[name] = v
    for item in args.set:
        key, _, value = item.partition("=")
        try:
            raw[key] = json.loads(value)
        except json.JSONDecodeError:
            raw[key] = value
    return raw


def _origin(exc: BaseException) -> str:
    """Innermost invprob module in the traceback."""
    names = [os.path.splitext(os.path.basename(f.filename))[0] for f in traceback.extract_tb(exc.__traceback__)
             if f"{os.sep}invprob{os.sep}" in f.filename]
    return names[-1] if names else "invprob"


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        if args.config == "-":
            text = sys.stdin.read()
        else:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"config error: not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(raw, dict):
        print("config error: config must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    cfg = validate(_overrides(raw, args))
    if isinstance(cfg, list):
        for err in cfg:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.validate:
        print(cfg.model_dump_json(indent=2))
        return EXIT_OK
    try:
        manifest = run(cfg)
    except ConfigInvalid as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (InferenceError, FloatingPointError) as exc:
        origin = _origin(exc)
        print(f"numerical failure [{origin}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(_clean(manifest.to_dict()), indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
