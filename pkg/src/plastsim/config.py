"""Run configuration: a flat key = value file with # comments.

Example::

    # 1250 neurons, one logical rank, half a million activity steps
    n = 1250
    steps = 500000
    engine = fmm
    placement = uniform
    seed = 7
    model.tau_ca = 7.3696e-5

Model constants are overridden with ``model.<field>`` keys.  Command-line
flags override file values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from .connectivity import DispatchThresholds
from .engines import parse_engine
from .kernel import KernelParams
from .model import ModelParams

#: Default lattice pitch in length units; small against the kernel width so
#: attraction between neighbors stays non-degenerate.
DEFAULT_SPACING = 26.0

PLACEMENTS = ("uniform", "grid")
SCHEDULERS = ("serial", "threads")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    n: int = 320
    steps: int = 20000
    p: int = 1
    seed: int = 0
    engine: str = "fmm"
    placement: str = "uniform"
    domain_side: float | None = None
    grid_side_count: int | None = None
    out_dir: str = "out"
    c1: int = 70
    c2: int = 70
    cutoff: tuple = (3, 3, 3)
    allow_self_connections: bool = True
    scheduler: str = "serial"
    kernel_exponent: str = "sigma_squared"
    bh_theta: float = 0.3
    initial_axons: float = 0.0
    initial_dendrites: float = 0.0
    model_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.steps < 1:
            raise ConfigError("n, p, and steps must all be at least 1")
        try:
            parse_engine(self.engine)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown placement {self.placement!r}")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if self.placement == "grid" and self.n % self.p != 0:
            raise ConfigError("grid placement requires n divisible by p")
        if self.engine != "fmm" and self.p != 1:
            raise ConfigError(f"engine {self.engine!r} runs single-rank only")

    def resolved_domain_side(self) -> float:
        if self.domain_side is not None:
            return float(self.domain_side)
        return math.ceil(self.n ** (1.0 / 3.0) - 1e-9) * DEFAULT_SPACING

    def model_params(self) -> ModelParams:
        valid = {f.name for f in fields(ModelParams)}
        unknown = set(self.model_overrides) - valid
        if unknown:
            raise ConfigError(f"unknown model override(s): {sorted(unknown)}")
        return replace(ModelParams(), **self.model_overrides)

    def kernel_params(self) -> KernelParams:
        sigma = self.model_overrides.get("sigma", ModelParams.sigma)
        return KernelParams(sigma=sigma, cutoff=self.cutoff,
                            exponent=self.kernel_exponent)

    def thresholds(self) -> DispatchThresholds:
        return DispatchThresholds(self.c1, self.c2)


_INT_KEYS = {"n", "steps", "p", "seed", "c1", "c2", "grid_side_count"}
_FLOAT_KEYS = {"domain_side", "bh_theta", "initial_axons", "initial_dendrites"}
_BOOL_KEYS = {"allow_self_connections"}
_STR_KEYS = {"engine", "placement", "scheduler", "kernel_exponent", "out_dir"}


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"cannot parse boolean from {raw!r}")


def _parse_cutoff(raw: str) -> tuple:
    parts = [p.strip() for p in raw.replace("(", "").replace(")", "").split(",")]
    if len(parts) != 3:
        raise ConfigError(f"cutoff needs three components, got {raw!r}")
    return tuple(int(p) for p in parts)


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    overrides: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key.startswith("model."):
            name = key[len("model."):]
            overrides[name] = int(raw) if name in ("refractory", "plasticity_interval") \
                else float(raw)
        elif key in _INT_KEYS:
            values[key] = int(raw)
        elif key in _FLOAT_KEYS:
            values[key] = float(raw)
        elif key in _BOOL_KEYS:
            values[key] = _parse_bool(raw)
        elif key in _STR_KEYS:
            values[key] = raw
        elif key == "cutoff":
            values[key] = _parse_cutoff(raw)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return RunConfig(model_overrides=overrides, **values)


def load_config(path: str, **cli_overrides) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    cleaned = {k: v for k, v in cli_overrides.items() if v is not None}
    if cleaned:
        cfg = replace(cfg, **cleaned)
    return cfg
