"""
Configuration utility for the spectral density toolkit.

Two layers:

* ``Config`` holds the ambient settings (log level, log directory, default
  worker count) read from a ``.env`` file and the environment.
* ``load_run_config`` reads the JSON run configuration that fixes the
  operator and every numerical knob, validates it and returns a frozen
  ``RunConfig``. Field errors carry the dotted path of the field.
"""

import argparse
import copy
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
from dotenv import find_dotenv, load_dotenv

from wt_density.presets.operator_presets import get_preset, preset_names
from wt_density.solvers.ode_engine import ToleranceSpec
from wt_density.solvers.periodic import PeriodicPotential
from wt_density.solvers.potentials import (
    CompactBumpPotential,
    PiecewiseConstantPotential,
    PotentialEvaluator,
    PowerDecayPotential,
    TrigonometricPotential,
    ZeroPotential,
)
from wt_density.solvers.reduction import OperatorSpec, WvNTerm
from wt_density.solvers.spectral import SpectralSettings
from wt_density.utils.debugging import setup_logging
from wt_density.utils.errors import ConfigError, WTDensityError

logger = setup_logging()

TOP_LEVEL_KEYS = {"preset", "operator", "numerics", "grid", "refinement", "verify"}


class Config:
    """Ambient configuration: logging and parallelism, never numerics."""

    def __init__(self, args: Optional[argparse.Namespace] = None):
        """
        Initialize the configuration.

        Args:
            args (Optional[argparse.Namespace]): Command line arguments.
        """
        self.load_from_env()
        self.log_level = os.environ.get("WT_LOG_LEVEL", "INFO").upper()
        self.log_dir = os.environ.get("WT_LOG_DIR") or None
        self.workers = os.cpu_count() or 1

        if args is not None and getattr(args, "workers", None) is not None:
            self.workers = args.workers

        logger.debug(f"Configuration: log_level={self.log_level}, log_dir={self.log_dir}, workers={self.workers}")

    @staticmethod
    def load_from_env() -> None:
        """Load a .env file from the working directory upwards, if present."""
        env_path = find_dotenv(usecwd=True)
        if env_path:
            logger.debug(f"Loading environment from: {env_path}")
            load_dotenv(env_path, override=False)


@dataclass(frozen=True)
class NumericsConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: Optional[float] = None
    min_step: float = 1e-12
    x_max_periods: float = 2000.0
    window_periods: float = 10.0
    lambda_max: float = 30.0
    fourier_cutoff: int = 64
    margin_epsilon: float = 1e-3
    margin_edge: float = 1e-3
    beta: float = 1.0

    @property
    def tolerance(self) -> ToleranceSpec:
        return ToleranceSpec(rtol=self.rtol, atol=self.atol,
                             max_step=np.inf if self.max_step is None else self.max_step,
                             min_step=self.min_step)

    def spectral_settings(self) -> SpectralSettings:
        return SpectralSettings(
            tol=self.tolerance,
            x_max_periods=self.x_max_periods,
            window_periods=self.window_periods,
            margin_epsilon=self.margin_epsilon,
            margin_edge=self.margin_edge,
            beta=self.beta,
            fourier_cutoff=self.fourier_cutoff,
        )


@dataclass(frozen=True)
class GridConfig:
    """Either a uniform range (start, stop, num) or a per-band selection."""

    start: Optional[float] = None
    stop: Optional[float] = None
    num: Optional[int] = None
    bands: Tuple[int, ...] = ()
    points_per_band: int = 0

    @property
    def by_band(self) -> bool:
        return bool(self.bands)


@dataclass(frozen=True)
class RefinementConfig:
    radius: float = 0.05
    levels: int = 4
    iterations: int = 1


@dataclass(frozen=True)
class VerifyConfig:
    samples: int = 10


@dataclass(frozen=True)
class RunConfig:
    """A validated run configuration."""

    operator: OperatorSpec
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    grid: GridConfig = field(default_factory=lambda: GridConfig(start=0.5, stop=25.0, num=50))
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    preset: Optional[str] = None
    raw: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)


def _deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            # A change of "type" or of grid form replaces the whole block
            if ("type" in value and value.get("type") != merged[key].get("type")) or (
                    key == "grid" and ("bands" in value) != ("bands" in merged[key])):
                merged[key] = copy.deepcopy(dict(value))
            else:
                merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _require_mapping(value: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(block: Mapping[str, Any], allowed: set, path: str) -> None:
    unknown = sorted(set(block) - allowed)
    if unknown:
        prefix = f"{path}." if path else ""
        raise ConfigError(f"{prefix}{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _number(block: Mapping[str, Any], key: str, path: str, default: Any = None, *, positive: bool = False,
            integer: bool = False, allow_none: bool = False) -> Any:
    name = f"{path}.{key}" if path else key
    if key not in block:
        if default is None and not allow_none:
            raise ConfigError(name, "required field is missing")
        return default
    value = block[key]
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(name, f"must be finite, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(name, f"must be positive, got {value!r}")
    return int(value) if integer else float(value)


def _number_list(block: Mapping[str, Any], key: str, path: str) -> Tuple[float, ...]:
    name = f"{path}.{key}"
    values = block.get(key, [])
    if not isinstance(values, list):
        raise ConfigError(name, f"expected a list of numbers, got {values!r}")
    out = []
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{name}[{i}]", f"expected a finite number, got {v!r}")
        out.append(float(v))
    return tuple(out)


def _build_cell(block: Mapping[str, Any], period: float, path: str) -> PotentialEvaluator:
    kind = block.get("type")
    if kind == "zero":
        _reject_unknown(block, {"type"}, path)
        return ZeroPotential()
    if kind == "trigonometric":
        _reject_unknown(block, {"type", "constant", "cos", "sin"}, path)
        return TrigonometricPotential(
            cell_length=period,
            constant=_number(block, "constant", path, 0.0),
            cos=_number_list(block, "cos", path),
            sin=_number_list(block, "sin", path),
        )
    if kind == "piecewise_constant":
        _reject_unknown(block, {"type", "breakpoints", "values"}, path)
        edges = _number_list(block, "breakpoints", path)
        if any(not 0 < e < period for e in edges):
            raise ConfigError(f"{path}.breakpoints", f"breakpoints must lie strictly inside (0, {period:g})")
        return PiecewiseConstantPotential(edges=edges, values=_number_list(block, "values", path))
    raise ConfigError(f"{path}.type", f"expected 'zero', 'trigonometric' or 'piecewise_constant', got {kind!r}")


def _build_q1(block: Mapping[str, Any], path: str) -> PotentialEvaluator:
    kind = block.get("type", "none")
    if kind == "none":
        _reject_unknown(block, {"type"}, path)
        return ZeroPotential()
    if kind == "power":
        _reject_unknown(block, {"type", "amplitude", "power"}, path)
        return PowerDecayPotential(amplitude=_number(block, "amplitude", path), power=_number(block, "power", path))
    if kind == "bump":
        _reject_unknown(block, {"type", "height", "start", "end"}, path)
        return CompactBumpPotential(height=_number(block, "height", path), start=_number(block, "start", path),
                                    end=_number(block, "end", path))
    raise ConfigError(f"{path}.type", f"expected 'none', 'power' or 'bump', got {kind!r}")


def _validated(path: str, build: Callable[[], Any]) -> Any:
    """Run a constructor, reporting its invariant violations under ``path``."""
    try:
        return build()
    except ConfigError:
        raise
    except WTDensityError as exc:
        raise ConfigError(path, str(exc)) from exc


def build_operator(block: Mapping[str, Any], path: str = "operator") -> OperatorSpec:
    """
    Build an OperatorSpec from its serialized form.

    Raises:
        ConfigError: Any field is missing, malformed or violates an operator invariant.
    """
    block = _require_mapping(block, path)
    _reject_unknown(block, {"period", "periodic", "wvn", "q1", "alpha"}, path)
    period = _number(block, "period", path, positive=True)
    periodic = _require_mapping(block.get("periodic", {"type": "zero"}), f"{path}.periodic")
    wvn = _require_mapping(block.get("wvn", {"c": 0.0, "omega": 1.0}), f"{path}.wvn")
    _reject_unknown(wvn, {"c", "omega", "delta", "gamma"}, f"{path}.wvn")
    q1_block = _require_mapping(block.get("q1", {"type": "none"}), f"{path}.q1")
    alpha = _number(block, "alpha", path, 0.0)

    cell = _validated(f"{path}.periodic", lambda: PeriodicPotential(a=period, q=_build_cell(periodic, period, f"{path}.periodic")))
    gamma = _number(wvn, "gamma", f"{path}.wvn", 1.0)
    term = _validated(f"{path}.wvn.gamma", lambda: WvNTerm(
        c=_number(wvn, "c", f"{path}.wvn", 0.0),
        omega=_number(wvn, "omega", f"{path}.wvn"),
        delta=_number(wvn, "delta", f"{path}.wvn", 0.0),
        gamma=gamma,
    ))
    q1 = _validated(f"{path}.q1", lambda: _build_q1(q1_block, f"{path}.q1"))
    return _validated(f"{path}.alpha", lambda: OperatorSpec(periodic=cell, wvn=term, q1=q1, alpha=alpha))


def _build_numerics(block: Mapping[str, Any]) -> NumericsConfig:
    path = "numerics"
    block = _require_mapping(block, path)
    defaults = NumericsConfig()
    _reject_unknown(block, set(defaults.__dataclass_fields__), path)
    numerics = NumericsConfig(
        rtol=_number(block, "rtol", path, defaults.rtol, positive=True),
        atol=_number(block, "atol", path, defaults.atol, positive=True),
        max_step=_number(block, "max_step", path, None, positive=True, allow_none=True),
        min_step=_number(block, "min_step", path, defaults.min_step),
        x_max_periods=_number(block, "x_max_periods", path, defaults.x_max_periods, positive=True),
        window_periods=_number(block, "window_periods", path, defaults.window_periods, positive=True),
        lambda_max=_number(block, "lambda_max", path, defaults.lambda_max),
        fourier_cutoff=_number(block, "fourier_cutoff", path, defaults.fourier_cutoff, positive=True, integer=True),
        margin_epsilon=_number(block, "margin_epsilon", path, defaults.margin_epsilon),
        margin_edge=_number(block, "margin_edge", path, defaults.margin_edge),
        beta=_number(block, "beta", path, defaults.beta, positive=True),
    )
    if numerics.rtol >= 1e-2:
        raise ConfigError(f"{path}.rtol", f"relative tolerance {numerics.rtol:g} is too loose (must be < 1e-2)")
    try:
        numerics.tolerance
    except WTDensityError as exc:
        raise ConfigError(f"{path}.min_step", str(exc)) from exc
    return numerics


def _build_grid(block: Mapping[str, Any]) -> GridConfig:
    path = "grid"
    block = _require_mapping(block, path)
    if "bands" in block:
        _reject_unknown(block, {"bands", "points_per_band"}, path)
        bands = block["bands"]
        if not isinstance(bands, list) or not bands or any(
                isinstance(b, bool) or not isinstance(b, int) or b < 0 for b in bands):
            raise ConfigError(f"{path}.bands", f"expected a non-empty list of band indices, got {bands!r}")
        return GridConfig(bands=tuple(bands),
                          points_per_band=_number(block, "points_per_band", path, positive=True, integer=True))
    _reject_unknown(block, {"start", "stop", "num"}, path)
    start = _number(block, "start", path)
    stop = _number(block, "stop", path)
    if not stop > start:
        raise ConfigError(f"{path}.stop", f"stop ({stop:g}) must exceed start ({start:g})")
    return GridConfig(start=start, stop=stop, num=_number(block, "num", path, positive=True, integer=True))


def _build_refinement(block: Mapping[str, Any]) -> RefinementConfig:
    path = "refinement"
    block = _require_mapping(block, path)
    _reject_unknown(block, {"radius", "levels", "iterations"}, path)
    defaults = RefinementConfig()
    return RefinementConfig(
        radius=_number(block, "radius", path, defaults.radius, positive=True),
        levels=_number(block, "levels", path, defaults.levels, positive=True, integer=True),
        iterations=_number(block, "iterations", path, defaults.iterations, integer=True),
    )


def parse_run_config(document: Mapping[str, Any]) -> RunConfig:
    """
    Validate a run configuration document.

    Args:
        document: Parsed JSON object (see the schema in README.md).

    Returns:
        RunConfig: Frozen, validated configuration.

    Raises:
        ConfigError: The first offending field, by dotted path.
    """
    document = _require_mapping(document, "<root>")
    _reject_unknown(document, TOP_LEVEL_KEYS, "")
    preset = document.get("preset")
    merged: Dict[str, Any] = {}
    if preset is not None:
        if preset not in preset_names():
            raise ConfigError("preset", f"unknown preset {preset!r} (available: {', '.join(preset_names())})")
        merged = get_preset(preset)
    merged = _deep_merge(merged, {k: v for k, v in document.items() if k != "preset"})
    if "operator" not in merged:
        raise ConfigError("operator", "required unless a preset is named")

    verify_block = _require_mapping(merged.get("verify", {}), "verify")
    _reject_unknown(verify_block, {"samples"}, "verify")
    config = RunConfig(
        operator=build_operator(merged["operator"]),
        numerics=_build_numerics(merged.get("numerics", {})),
        grid=_build_grid(merged.get("grid", {"start": 0.5, "stop": 25.0, "num": 50})),
        refinement=_build_refinement(merged.get("refinement", {})),
        verify=VerifyConfig(samples=_number(verify_block, "samples", "verify", 10, positive=True, integer=True)),
        preset=preset,
        raw=merged,
    )
    logger.debug(f"Run configuration: preset={preset}, a={config.operator.a:g}, c={config.operator.wvn.c:g}")
    return config


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Load and validate a JSON run configuration.

    Args:
        path: Path of the JSON document.

    Returns:
        RunConfig: Frozen, validated configuration.

    Raises:
        ConfigError: Unreadable file, malformed JSON or an invalid field.
    """
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON in {path} at line {exc.lineno}: {exc.msg}") from exc
    return parse_run_config(document)


def describe_operator(spec: OperatorSpec) -> List[str]:
    """Human readable lines describing the operator (run logs, reports)."""
    cell = spec.periodic.q
    return [
        f"period a = {spec.a:.12g}",
        f"periodic part: {type(cell).__name__}",
        f"WvN term: c={spec.wvn.c:g}, omega={spec.wvn.omega:g}, delta={spec.wvn.delta:g}, gamma={spec.wvn.gamma:g}",
        f"q1: {type(spec.q1).__name__}",
        f"boundary angle alpha = {spec.alpha:.12g}",
    ]
