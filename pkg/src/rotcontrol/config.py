"""Run configuration: YAML text <-> validated dataclasses.

Every numeric key carries its unit as a suffix (``_au``, ``_fs``, ``_periods``,
``_K``, ``_W_cm2``, ``_cm``). Values are stored as written; converted values
are exposed as properties so that parse -> serialize -> parse is the identity.
"""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, get_type_hints

import yaml

from .errors import ConfigurationError
from .model import CO, MoleculeParams
from .units import fs_to_au, fwhm_to_sigma, intensity_to_field

MODEL_KINDS = ("z_full", "z_averaged", "xy")
TASK_KINDS = ("orientation", "ket", "thermal")
METHODS = ("krotov", "lapert")
OBSERVABLES = ("cos", "cos2", "cos2_p", "cos2_c", "jz_orientation")


@dataclass
class MoleculeSection:
    B_cm: float = CO.B_cm
    mu0_au: float = CO.mu0
    alpha_par_au: float = CO.alpha_par
    alpha_perp_au: float = CO.alpha_perp
    beta_par_au: float = CO.beta_par
    beta_perp_au: float = CO.beta_perp

    def params(self) -> MoleculeParams:
        return MoleculeParams.from_lab(self.B_cm, self.mu0_au, self.alpha_par_au, self.alpha_perp_au,
                                       self.beta_par_au, self.beta_perp_au)

    def validate(self, path):
        _positive(self.B_cm, f"{path}.B_cm")


@dataclass
class BasisSection:
    j_max: int = 15
    m: int | None = None

    def validate(self, path):
        if not isinstance(self.j_max, int) or self.j_max < 0:
            raise ConfigurationError(f"{path}.j_max must be a non-negative integer, got {self.j_max!r}")
        if self.m is not None and abs(self.m) > self.j_max:
            raise ConfigurationError(f"{path}.m={self.m} exceeds j_max={self.j_max}")


@dataclass
class ModelSection:
    kind: str = "z_full"
    phase_diff_rad: float = math.pi / 4

    def validate(self, path):
        _choice(self.kind, MODEL_KINDS, f"{path}.kind")


@dataclass
class TimeSection:
    t_f_periods: float = 1.0
    n_steps: int = 16384

    def validate(self, path):
        _positive(self.t_f_periods, f"{path}.t_f_periods")
        if not isinstance(self.n_steps, int) or self.n_steps < 2:
            raise ConfigurationError(f"{path}.n_steps must be an integer >= 2, got {self.n_steps!r}")


@dataclass
class TaskSection:
    kind: str = "orientation"
    j_f: int = 4
    j: int = 4
    m: int = 4
    temperature_K: float = 5.0
    ket_cutoff: float = 1e-15

    def validate(self, path):
        _choice(self.kind, TASK_KINDS, f"{path}.kind")
        if self.j_f < 0:
            raise ConfigurationError(f"{path}.j_f must be >= 0")
        if self.kind == "ket" and abs(self.m) > self.j:
            raise ConfigurationError(f"{path}: |m| > j in target ket")
        if self.temperature_K < 0:
            raise ConfigurationError(f"{path}.temperature_K must be >= 0")
        if not 0 <= self.ket_cutoff < 1:
            raise ConfigurationError(f"{path}.ket_cutoff must lie in [0, 1)")


@dataclass
class PulseSpec:
    center_periods: float
    fwhm_fs: float
    peak_intensity_W_cm2: float | None = None
    amplitude_au: float | None = None

    def validate(self, path):
        _positive(self.fwhm_fs, f"{path}.fwhm_fs")
        if (self.peak_intensity_W_cm2 is None) == (self.amplitude_au is None):
            raise ConfigurationError(f"{path}: give exactly one of peak_intensity_W_cm2, amplitude_au")
        if self.peak_intensity_W_cm2 is not None and self.peak_intensity_W_cm2 < 0:
            raise ConfigurationError(f"{path}.peak_intensity_W_cm2 must be >= 0")

    @property
    def amplitude(self) -> float:
        if self.amplitude_au is not None:
            return float(self.amplitude_au)
        return intensity_to_field(self.peak_intensity_W_cm2)

    @property
    def sigma_au(self) -> float:
        return fs_to_au(fwhm_to_sigma(self.fwhm_fs))


@dataclass
class ChannelSpec:
    pulses: list[PulseSpec] = field(default_factory=list)

    def validate(self, path):
        for i, p in enumerate(self.pulses):
            p.validate(f"{path}.pulses[{i}]")


@dataclass
class GuessSection:
    channels: list[ChannelSpec] = field(default_factory=list)

    def validate(self, path):
        for i, c in enumerate(self.channels):
            c.validate(f"{path}.channels[{i}]")


@dataclass
class OptimizerSection:
    method: str = "krotov"
    lambda_au: float = 5e-2
    iterations: int = 20
    stagnation_eps: float = 1e-7
    field_cap_au: float = 1.0

    def validate(self, path):
        _choice(self.method, METHODS, f"{path}.method")
        _positive(self.lambda_au, f"{path}.lambda_au")
        _positive(self.field_cap_au, f"{path}.field_cap_au")
        if not isinstance(self.iterations, int) or self.iterations < 0:
            raise ConfigurationError(f"{path}.iterations must be a non-negative integer")
        if self.stagnation_eps < 0:
            raise ConfigurationError(f"{path}.stagnation_eps must be >= 0")

    @property
    def power(self) -> int:
        return 2 if self.method == "krotov" else 4


@dataclass
class OutputSection:
    stride: int = 64
    post_periods: float = 0.0
    populations: bool = True
    observables: list[str] = field(default_factory=lambda: ["cos", "cos2_p", "cos2_c", "jz_orientation"])

    def validate(self, path):
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ConfigurationError(f"{path}.stride must be a positive integer")
        if self.post_periods < 0:
            raise ConfigurationError(f"{path}.post_periods must be >= 0")
        for o in self.observables:
            _choice(o, OBSERVABLES, f"{path}.observables")


@dataclass
class RunConfig:
    name: str = "run"
    molecule: MoleculeSection = field(default_factory=MoleculeSection)
    basis: BasisSection = field(default_factory=BasisSection)
    model: ModelSection = field(default_factory=ModelSection)
    time: TimeSection = field(default_factory=TimeSection)
    task: TaskSection = field(default_factory=TaskSection)
    guess: GuessSection = field(default_factory=GuessSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "RunConfig":
        for f in dataclasses.fields(self):
            sec = getattr(self, f.name)
            if hasattr(sec, "validate"):
                sec.validate(f.name)
        channels = 2 if self.model.kind == "xy" else 1
        if len(self.guess.channels) != channels:
            raise ConfigurationError(
                f"guess.channels: model {self.model.kind} needs {channels} channel(s), got {len(self.guess.channels)}"
            )
        if self.model.kind == "xy" and self.basis.m is not None:
            raise ConfigurationError("basis.m must be null for the xy model")
        if self.task.kind == "thermal" and self.basis.m is not None:
            raise ConfigurationError("basis.m must be null for the thermal task")
        if self.task.kind in ("orientation", "thermal") and self.task.j_f > self.basis.j_max:
            raise ConfigurationError(f"task.j_f={self.task.j_f} exceeds basis.j_max={self.basis.j_max}")
        if self.task.kind == "ket":
            if self.task.j > self.basis.j_max:
                raise ConfigurationError("task.j exceeds basis.j_max")
            if self.basis.m is not None and self.task.m != self.basis.m:
                raise ConfigurationError("task.m differs from the fixed basis.m")
        if self.basis.m not in (None, 0) and self.task.kind != "ket":
            raise ConfigurationError("the initial state |0,0> needs m = 0 in a fixed-m basis")
        return self

    # --- derived quantities in atomic units -------------------------------
    @property
    def t_f_au(self) -> float:
        return self.time.t_f_periods * self.molecule.params().rotational_period

    def to_dict(self) -> dict:
        return _strip_none(dataclasses.asdict(self))


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if not (v is None and k in _OPTIONAL_KEYS)}
    if isinstance(obj, list):
        return [_strip_none(v) for v in obj]
    return obj


_OPTIONAL_KEYS = {"peak_intensity_W_cm2", "amplitude_au"}


def _positive(value, name):
    if not isinstance(value, (int, float)) or not value > 0 or not math.isfinite(value):
        raise ConfigurationError(f"{name} must be a positive finite number, got {value!r}")


def _choice(value, options, name):
    if value not in options:
        raise ConfigurationError(f"{name} must be one of {options}, got {value!r}")


def _coerce(value, hint, path):
    origin = getattr(hint, "__origin__", None)
    args = getattr(hint, "__args__", ())
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{path} must be a list")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if type(None) in args:  # Optional[...]
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, path)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path} must be a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path} must be an integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path} must be true or false, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path} must be a string, got {value!r}")
        return value
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or 'config'} must be a mapping, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {path or 'config'}: {', '.join(map(str, unknown))}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], f"{path}.{f.name}" if path else f.name)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigurationError(f"missing required key {path}.{f.name}" if path else f"missing key {f.name}")
    return cls(**kwargs)


def _load_yaml(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigurationError(f"cannot parse configuration{where}: {getattr(exc, 'problem', exc)}") from exc


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def parse_config(text: str) -> RunConfig:
    """Parse one run from YAML text; ``runs:`` batches are rejected here (see :func:`parse_batch`)."""
    data = _load_yaml(text)
    if data is None:
        data = {}
    if isinstance(data, dict) and "runs" in data:
        raise ConfigurationError("batch file given where a single run is expected; use parse_batch")
    return config_from_dict(data)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_batch(text: str) -> list[RunConfig]:
    """A single run, or a base mapping plus ``runs:``, a list of overrides merged into it."""
    data = _load_yaml(text) or {}
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a mapping")
    runs = data.pop("runs", None)
    if runs is None:
        return [config_from_dict(data)]
    if not isinstance(runs, list) or not runs:
        raise ConfigurationError("runs must be a non-empty list of override mappings")
    return [config_from_dict(deep_merge(data, r)) for r in runs]


def serialize_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def apply_overrides(cfg: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply ``section.key=value`` assignments (values parsed as YAML scalars)."""
    data = cfg.to_dict()
    for item in assignments:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = _load_yaml(raw)
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigurationError(f"unknown key path {key!r}")
            node = node[p]
        node[parts[-1]] = value
    return config_from_dict(data)
