"""Experiment configuration: schema-validated YAML documents.

A configuration is one human-readable key-value document per experiment;
unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import pgm
from .operators import ConvOperator2D, gaussian_psf
from .problems import (
    CauchyDeblurProblem,
    MaskCompressionProblem,
    SignalDependentGaussianProblem,
    Toy1DBoxProblem,
    cartoon_image,
    degrade_synthetic,
    smooth_image,
)
from .solver import SolverConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_experiment", "build_problem"]

PROBLEM_KINDS = ("gaussian_sd", "cauchy", "compression", "toy1d")
METRICS = ("identity", "sg", "majorant")
STEPLENGTHS = ("bb", "ritz")

_SOLVER_KEYS = {
    "alpha_min": float,
    "alpha_max": float,
    "mu": float,
    "delta": float,
    "beta": float,
    "gamma": float,
    "tau": float,
    "max_outer_iters": int,
    "max_backtracks": int,
    "stop_tol": float,
    "metric": str,
    "steplength": str,
    "ritz_window": int,
    "inner_limit": int,
    "warm_start": bool,
}

_PROBLEM_KEYS = {
    "kind": str,
    "image": str,
    "size": list,
    "psf_size": int,
    "psf_sigma": float,
    "a": float,
    "b": float,
    "rho": float,
    "gamma_noise": float,
    "lambda_reg": float,
    "box_upper": float,
    "observed": str,
    "clip_observed": bool,
    "x0_floor": float,
    "x0_value": float,
}

_OUTPUT_KEYS = {
    "reconstruction": str,
    "trace": str,
    "summary": str,
    "observed": str,
}

_TOP_KEYS = ("problem", "solver", "seed", "audit", "output")


class ConfigError(ValueError):
    pass


def _check_keys(section, mapping, allowed):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {', '.join(unknown)}")
    for key, value in mapping.items():
        want = allowed[key]
        if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            continue
        if want is int and isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be {want.__name__}")
        if not isinstance(value, want):
            raise ConfigError(f"{section}.{key} must be {want.__name__}")


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    problem: dict
    solver: SolverConfig
    metric: str
    steplength: str
    ritz_window: int
    inner_limit: int
    warm_start: bool
    seed: int
    audit: bool
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        unknown = sorted(set(raw) - set(_TOP_KEYS))
        if unknown:
            raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")
        if "problem" not in raw:
            raise ConfigError("missing 'problem' section")
        problem = dict(raw["problem"])
        _check_keys("problem", problem, _PROBLEM_KEYS)
        kind = problem.get("kind")
        if kind not in PROBLEM_KINDS:
            raise ConfigError(f"problem.kind must be one of {PROBLEM_KINDS}")
        size = problem.get("size")
        if size is not None:
            if (len(size) != 2
                    or any(not isinstance(v, int) or v < 1 for v in size)):
                raise ConfigError("problem.size must be two positive integers")

        solver_raw = dict(raw.get("solver", {}))
        _check_keys("solver", solver_raw, _SOLVER_KEYS)
        metric = solver_raw.pop("metric", "identity")
        steplength = solver_raw.pop("steplength", "bb")
        ritz_window = solver_raw.pop("ritz_window", 3)
        inner_limit = solver_raw.pop("inner_limit", 5000)
        warm_start = solver_raw.pop("warm_start", True)
        if metric not in METRICS:
            raise ConfigError(f"solver.metric must be one of {METRICS}")
        if steplength not in STEPLENGTHS:
            raise ConfigError(f"solver.steplength must be one of {STEPLENGTHS}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        audit = raw.get("audit", False)
        if not isinstance(audit, bool):
            raise ConfigError("audit must be a boolean")
        output = dict(raw.get("output", {}))
        _check_keys("output", output, _OUTPUT_KEYS)
        try:
            solver = SolverConfig(rng_seed=seed, **solver_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver settings: {exc}") from exc
        return cls(
            problem=problem,
            solver=solver,
            metric=metric,
            steplength=steplength,
            ritz_window=ritz_window,
            inner_limit=inner_limit,
            warm_start=warm_start,
            seed=seed,
            audit=audit,
            output=output,
        )


def load_experiment(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return ExperimentConfig.from_dict(raw)


def _load_base_image(spec, size, base_dir):
    if spec is None or spec == "synthetic:cartoon":
        if size is None:
            raise ConfigError("problem.size required for synthetic images")
        shape = (int(size[0]), int(size[1]))
        return cartoon_image(shape).reshape(shape)
    if spec == "synthetic:smooth":
        if size is None:
            raise ConfigError("problem.size required for synthetic images")
        shape = (int(size[0]), int(size[1]))
        return smooth_image(shape).reshape(shape)
    path = Path(spec)
    if not path.is_absolute():
        path = Path(base_dir) / path
    img = pgm.read_image(path)
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    return img


def build_problem(cfg: ExperimentConfig, base_dir="."):
    """Construct the problem, ground truth, observed data and start point.

    Returns ``(problem, x_true, observed, x0, shape)``; ``x_true`` is None
    when only observed data was supplied.
    """
    p = cfg.problem
    kind = p["kind"]
    if kind == "toy1d":
        problem = Toy1DBoxProblem()
        x0 = np.array([p.get("x0_value", 0.0)])
        return problem, None, None, x0, (1, 1)

    truth = _load_base_image(p.get("image"), p.get("size"), base_dir)
    shape = truth.shape

    if kind == "compression":
        problem = MaskCompressionProblem(
            truth.ravel(),
            shape,
            lambda_reg=p.get("lambda_reg", 0.01),
            box_upper=p.get("box_upper", 1.5),
        )
        x0 = np.full(problem.n, p.get("x0_value", 1.0))
        return problem, truth.ravel(), None, x0, shape

    psf = gaussian_psf(p.get("psf_size", 9), p.get("psf_sigma", 1.0))
    H = ConvOperator2D(psf, shape)
    observed_spec = p.get("observed")
    if observed_spec is not None:
        path = Path(observed_spec)
        if not path.is_absolute():
            path = Path(base_dir) / path
        observed = pgm.read_image(path).ravel()
        x_true = truth.ravel() if p.get("image") else None
    else:
        observed = degrade_synthetic(
            truth.ravel(),
            H,
            kind,
            cfg.seed,
            a=p.get("a", 1.0),
            b=p.get("b", 1.0),
            gamma_noise=p.get("gamma_noise", 0.02),
        )
        x_true = truth.ravel()
    if p.get("clip_observed", False):
        observed = np.clip(observed, 0.0, 1.0)

    if kind == "gaussian_sd":
        problem = SignalDependentGaussianProblem(
            H,
            observed,
            shape,
            a=p.get("a", 1.0),
            b=p.get("b", 1.0),
            rho=p.get("rho", 0.03),
            inner_limit=cfg.inner_limit,
            warm_start=cfg.warm_start,
        )
    else:
        problem = CauchyDeblurProblem(
            H,
            observed,
            shape,
            gamma_noise=p.get("gamma_noise", 0.02),
            lambda_reg=p.get("lambda_reg", 0.35),
            inner_limit=cfg.inner_limit,
            warm_start=cfg.warm_start,
        )
    x0 = np.maximum(observed, p.get("x0_floor", 0.0))
    return problem, x_true, observed, x0, shape
