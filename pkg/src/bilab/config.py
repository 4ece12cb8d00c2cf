"""Experiment configuration: a flat TOML file mapped onto ExperimentConfig."""

import tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, get_args, get_origin, get_type_hints

from bilab.errors import ConfigError
from bilab.logging import configure_module_logger
from bilab.nonlinearity import GAMMA_CHOICES, NONLINEARITY_KINDS

logger = configure_module_logger(__name__)

BASE_RECIPES = ("zero", "newton")
Q2_MODES = ("same", "gauge", "explicit")
PERTURBATIONS = ("none", "v_shift", "a_bump")
SCALAR_TYPES = {bool: "a boolean", int: "an integer", float: "a number", str: "a string"}


@dataclass
class ExperimentConfig:
    """Every setting an experiment can read. Unknown keys in a file are rejected."""

    # grid
    n: int = 33
    domain: str = "unit_square"

    # nonlinearities
    q1_kind: str = "power"
    q1_params: List[float] = field(default_factory=lambda: [3.0])
    q1_gamma: str = "one"
    q2_mode: str = "same"
    q2_kind: str = "power"
    q2_params: List[float] = field(default_factory=lambda: [3.0])
    q2_gamma: str = "one"
    gauge_amplitude: float = 0.05
    gauge_radius: float = 0.3

    # base solution
    base: str = "zero"
    base_f0: List[float] = field(default_factory=lambda: [0.05])
    base_f1: List[float] = field(default_factory=list)

    # tolerances
    fp_tol: float = 1e-12
    fp_max_iter: int = 50
    delta_cap: float = 0.5
    base_tol: float = 1e-8
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    ls_reg: float = 1e-8
    quad_nodes: int = 8

    # seeds
    seed: int = 0
    seed_2: int = 1

    # forward
    forward_grids: List[int] = field(default_factory=lambda: [33, 65, 129])

    # fixpoint
    v_norm: float = 0.1
    scales: List[float] = field(default_factory=lambda: [1.0, 0.5, 0.25])
    eps: List[float] = field(default_factory=lambda: [1e-3, 5e-4])
    round_trips: int = 10

    # cauchy-probe
    pairs: int = 50
    ratio_agreement: float = 0.5

    # project
    project_fields: int = 20

    # recover
    recover_pairs: int = 200
    basis_k: int = 16
    perturbation: str = "v_shift"
    perturbation_size: float = 0.5
    directions: int = 5

    # runge
    runge_k: List[int] = field(default_factory=lambda: [8, 16, 32, 64])
    subdomain_diameter: float = 0.5
    runge_source: List[float] = field(default_factory=lambda: [0.1, 0.5])
    runge_reg: float = 1e-14
    control_point: List[float] = field(default_factory=lambda: [0.5, 0.5])
    control_targets: List[float] = field(default_factory=lambda: [4.0, 4.0, 4.0, 4.0])

    # sweep
    sweep_points: List[List[float]] = field(
        default_factory=lambda: [
            [0.5, 0.5],
            [0.35, 0.35],
            [0.65, 0.35],
            [0.35, 0.65],
            [0.65, 0.65],
        ]
    )
    sweep_fractions: List[float] = field(
        default_factory=lambda: [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0]
    )
    sweep_basis_k: int = 32

    # reporting
    report_runtimes: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n < 5 or any(g < 5 for g in self.forward_grids):
            raise ConfigError("Grid sizes must be at least 5")
        if len(self.forward_grids) < 2:
            raise ConfigError("forward_grids needs at least two grids for a convergence order")
        if self.domain != "unit_square":
            raise ConfigError(f"Unsupported domain '{self.domain}', only 'unit_square'")
        for key in ("q1_kind", "q2_kind"):
            if getattr(self, key) not in NONLINEARITY_KINDS:
                raise ConfigError(f"{key}: unknown nonlinearity kind '{getattr(self, key)}'")
        for key in ("q1_gamma", "q2_gamma"):
            if getattr(self, key) not in GAMMA_CHOICES:
                raise ConfigError(f"{key}: unknown gamma choice '{getattr(self, key)}'")
        self._check_choice("q2_mode", Q2_MODES)
        self._check_choice("base", BASE_RECIPES)
        self._check_choice("perturbation", PERTURBATIONS)
        for key in (
            "fp_tol",
            "delta_cap",
            "base_tol",
            "newton_tol",
            "ls_reg",
            "v_norm",
            "gauge_radius",
            "subdomain_diameter",
            "runge_reg",
            "ratio_agreement",
        ):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        for key in ("fp_max_iter", "newton_max_iter", "basis_k", "sweep_basis_k"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1, got {getattr(self, key)}")
        if self.quad_nodes < 2:
            raise ConfigError(f"quad_nodes must be at least 2, got {self.quad_nodes}")
        if any(e <= 0 for e in self.eps) or any(s <= 0 for s in self.scales):
            raise ConfigError("eps and scales entries must be positive")
        if len(self.control_point) != 2 or len(self.runge_source) != 2:
            raise ConfigError("control_point and runge_source take two coordinates")
        if len(self.control_targets) != 4:
            raise ConfigError("control_targets takes value, two gradient entries and Laplacian")
        if any(len(p) != 2 for p in self.sweep_points):
            raise ConfigError("sweep_points entries take two coordinates")
        if any(abs(f) > 1.0 for f in self.sweep_fractions):
            raise ConfigError("sweep_fractions must lie in [-1, 1]")

    def _check_choice(self, key: str, choices) -> None:
        if getattr(self, key) not in choices:
            raise ConfigError(f"{key}: expected one of {list(choices)}, got '{getattr(self, key)}'")

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(key: str, expected, value):
    """Check a parsed TOML value against the type hint of its field."""
    if get_origin(expected) is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        (inner,) = get_args(expected)
        return [_coerce(key, inner, item) for item in value]
    if expected not in SCALAR_TYPES:
        raise ConfigError(f"{key}: unsupported field type {expected}")
    accepted = (int, float) if expected is float else expected
    if isinstance(value, bool) != (expected is bool) or not isinstance(value, accepted):
        raise ConfigError(f"{key}: expected {SCALAR_TYPES[expected]}, got {value!r}")
    return float(value) if expected is float else value


def config_from_mapping(values: dict) -> ExperimentConfig:
    known = get_type_hints(ExperimentConfig)
    parsed = {}
    for key, value in values.items():
        if key not in known:
            logger.error(f"Unknown configuration key: {key}")
            raise ConfigError(f"Unknown configuration key: {key}")
        if isinstance(value, dict):
            raise ConfigError(f"{key}: nested tables are not supported")
        parsed[key] = _coerce(key, known[key], value)
    return ExperimentConfig(**parsed)


def load_config(path: Optional[Path]) -> ExperimentConfig:
    """Read a flat TOML file; no path gives the defaults."""
    if path is None:
        logger.debug("No configuration file given, using defaults")
        return ExperimentConfig()
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            values = tomllib.load(handle)
    except FileNotFoundError as e:
        logger.error(f"Configuration file not found: {path}")
        raise ConfigError(f"Configuration file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        logger.error(f"Could not parse {path}: {e}")
        raise ConfigError(f"Could not parse {path}: {e}") from e
    logger.info(f"Loaded configuration from {path}")
    return config_from_mapping(values)
