"""Experiment configuration: YAML file, defaults, validation and resolved snapshots."""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .lti import CONTROLLER_DEN, CONTROLLER_NUM, NOISE_DEN, NOISE_NUM, RationalFilter
from .nn import MlpShape
from .plant import StribeckPlant
from .signals import FourthOrderLimits, Signal, derivative_basis_matrix, derivative_scales, make_fourth_order_reference
from .train import OptimizerOptions

OUTPUT_ROOT_ENV = "IVNN_OUTPUT_ROOT"


@dataclass
class PlantConfig:
    m: float = 5.0
    c1: float = 1.0
    c2: float = 20.0
    alpha: float = 2.5
    ts: float = 1e-3


@dataclass
class FilterConfig:
    num: list
    den: list


@dataclass
class ReferenceConfig:
    v_max: float = 0.5
    a_max: float = 1.0
    j_max: float = 62.0
    s_max: float = 4100.0
    # not given by the source experiment; chosen to resemble its nominal plots
    stroke: float = 0.25
    lead_in: float = 0.5
    total_duration: float = 2.0


@dataclass
class NetworkConfig:
    hidden: list = field(default_factory=lambda: [10, 10])
    activation: str = "tanh"
    input_delay: int = 2
    # divide the derivative-basis rows by the peak |r|, |dr|, |d2r| of the reference
    normalize_basis: bool = True


@dataclass
class PretrainConfig:
    max_iters: int = 20000
    grad_tol: float = 1e-9
    seed: int = 0
    polish_lambda_min: float = 1e-6
    polish_iters: int = 1000


@dataclass
class SweepSettings:
    sigma_levels: list = field(default_factory=lambda: [i / 1000 for i in range(11)])
    realizations: int = 20
    workers: int = 1


@dataclass
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    controller: FilterConfig = field(default_factory=lambda: FilterConfig(list(CONTROLLER_NUM), list(CONTROLLER_DEN)))
    noise_filter: FilterConfig = field(default_factory=lambda: FilterConfig(list(NOISE_NUM), list(NOISE_DEN)))
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer: dict = field(default_factory=lambda: asdict(OptimizerOptions()))
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    master_seed: int = 0
    output_dir: str = "runs/default"

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        cfg = cls()
        _merge(cfg, data or {}, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    def validate(self):
        p = self.plant
        _check(p.m > 0, "plant.m", "must be > 0")
        _check(p.ts > 0, "plant.ts", "must be > 0")
        _check(p.c1 >= 0, "plant.c1", "must be >= 0")
        _check(p.c2 >= p.c1, "plant.c2", "must be >= plant.c1")
        _check(p.alpha > 0, "plant.alpha", "must be > 0")
        for name in ("controller", "noise_filter"):
            f = getattr(self, name)
            _check(len(f.den) > 0 and f.den[0] != 0, f"{name}.den", "leading coefficient must be nonzero")
            _check(len(f.num) <= len(f.den), f"{name}.num", "filter must be proper")
        r = self.reference
        for k in ("v_max", "a_max", "j_max", "s_max", "total_duration"):
            _check(getattr(r, k) > 0, f"reference.{k}", "must be > 0")
        _check(r.stroke >= 0, "reference.stroke", "must be >= 0")
        _check(r.lead_in >= 0, "reference.lead_in", "must be >= 0")
        n = self.network
        _check(all(int(h) >= 1 for h in n.hidden), "network.hidden", "layer sizes must be >= 1")
        _check(n.activation in ("tanh", "sigmoid"), "network.activation", "must be 'tanh' or 'sigmoid'")
        _check(n.input_delay == 2 or not n.normalize_basis, "network.input_delay",
               "the derivative basis needs input_delay = 2")
        try:
            OptimizerOptions.from_dict(self.optimizer)
        except TypeError as exc:
            raise ConfigError(f"optimizer: {exc}") from exc
        _check(self.pretrain.max_iters >= 0, "pretrain.max_iters", "must be >= 0")
        _check(self.pretrain.polish_iters >= 0, "pretrain.polish_iters", "must be >= 0")
        _check(self.pretrain.polish_lambda_min > 0, "pretrain.polish_lambda_min", "must be > 0")
        s = self.sweep
        _check(len(s.sigma_levels) > 0, "sweep.sigma_levels", "must not be empty")
        _check(all(v >= 0 for v in s.sigma_levels), "sweep.sigma_levels", "must be >= 0")
        _check(s.realizations >= 1, "sweep.realizations", "must be >= 1")
        _check(s.workers >= 1, "sweep.workers", "must be >= 1")
        _check(0 <= self.master_seed < 2**64, "master_seed", "must be an unsigned 64-bit integer")

    # -- domain objects -----------------------------------------------------

    def make_plant(self) -> StribeckPlant:
        return StribeckPlant(**asdict(self.plant))

    def make_controller(self) -> RationalFilter:
        return RationalFilter(self.controller.num, self.controller.den)

    def make_noise_filter(self) -> RationalFilter:
        return RationalFilter(self.noise_filter.num, self.noise_filter.den)

    def make_reference(self) -> Signal:
        return make_fourth_order_reference(FourthOrderLimits(**asdict(self.reference)), self.plant.ts)

    def make_shape(self, reference: Signal | None = None) -> MlpShape:
        n = self.network
        sizes = (n.input_delay + 1, *[int(h) for h in n.hidden], 1)
        if n.input_delay == 2:
            scale = derivative_scales(reference if reference is not None else self.make_reference()) if n.normalize_basis else None
            basis = derivative_basis_matrix(self.plant.ts, scale)
        else:
            basis = None
        return MlpShape(sizes, n.activation, basis)

    def optimizer_options(self) -> OptimizerOptions:
        return OptimizerOptions.from_dict(self.optimizer)

    def pretrain_options(self) -> OptimizerOptions:
        opts = OptimizerOptions.from_dict(self.optimizer)
        opts.max_iters = self.pretrain.max_iters
        opts.grad_tol = self.pretrain.grad_tol
        return opts

    def resolve_output_dir(self, override=None) -> Path:
        """``--out`` wins, then the config value; relative paths sit under ``$IVNN_OUTPUT_ROOT``."""
        out = Path(override if override is not None else self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out


def _check(ok, path, msg):
    if not ok:
        raise ConfigError(f"{path}: {msg}")


def _merge(obj, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        path = prefix + key
        if key not in known:
            raise ConfigError(f"{path}: unknown field")
        current = getattr(obj, key)
        if hasattr(current, "__dataclass_fields__"):
            _merge(current, value, path + ".")
        elif isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected a mapping")
            unknown = set(value) - set(current)
            if unknown:
                raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
            merged = copy.deepcopy(current)
            for k, v in value.items():
                merged[k] = _coerce(v, merged[k], f"{path}.{k}")
            setattr(obj, key, merged)
        else:
            setattr(obj, key, _coerce(value, current, path))


def _coerce(value, like, path):
    try:
        if isinstance(like, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(like, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(like, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(like, list):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return [float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v for v in value]
        if isinstance(like, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {type(like).__name__}, got {value!r}") from None
    return value
