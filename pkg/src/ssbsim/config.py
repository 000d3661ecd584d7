"""Experiment configuration: nested YAML with a fixed schema.

Unknown keys are rejected so a typo cannot silently fall back to a default.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

import yaml

from .circuit import DEFAULT_DURATIONS
from .model import LATTICE_KINDS, SCHEDULE_KINDS

DEFAULT_SEED = 12345
BRANCHES = ("ground", "excited")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class LatticeConfig:
    kind: str = "cayley_tree"
    L: int = 3
    N: int = 6
    interaction: str = "nn"

    def validate(self, prefix: str) -> None:
        _choice(prefix + "kind", self.kind, LATTICE_KINDS)
        _choice(prefix + "interaction", self.interaction, ("nn", "sd"))
        _int_range(prefix + "L", self.L, 1, 4)
        _int_range(prefix + "N", self.N, 2, 16)
        if self.kind == "cayley_tree" and self.interaction != "nn":
            raise ConfigError(f"{prefix}interaction: 'sd' requires kind 'linear_chain'")


@dataclass
class NoiseConfig:
    epsilon: float = 0.0
    epsilons: list = field(default_factory=lambda: [0.0, 0.005, 0.01, 0.02])
    n_seeds: int = 20
    decoherence: bool = False
    t1: float = 51.9
    t2: float = 9.9
    durations: dict = field(default_factory=lambda: dict(DEFAULT_DURATIONS))
    readout: list | None = None

    def validate(self, prefix: str) -> None:
        _nonneg(prefix + "epsilon", self.epsilon)
        if not self.epsilons:
            raise ConfigError(f"{prefix}epsilons: must not be empty")
        for e in self.epsilons:
            _nonneg(prefix + "epsilons", e)
        _int_range(prefix + "n_seeds", self.n_seeds, 1, 10**6)
        _bool(prefix + "decoherence", self.decoherence)
        _positive(prefix + "t1", self.t1)
        _positive(prefix + "t2", self.t2)
        if self.t2 > 2 * self.t1:
            raise ConfigError(f"{prefix}t2: cannot exceed 2*t1")
        unknown = set(self.durations) - set(DEFAULT_DURATIONS)
        if unknown:
            raise ConfigError(f"{prefix}durations: unknown gate kinds {sorted(unknown)}")
        for k, v in self.durations.items():
            _positive(f"{prefix}durations.{k}", v)
        if self.readout is not None:
            for pair in self.readout:
                if not (isinstance(pair, (list, tuple)) and len(pair) == 2
                        and all(_is_number(x) and 0.5 < x <= 1.0 for x in pair)):
                    raise ConfigError(f"{prefix}readout: expected [f0, f1] pairs in (0.5, 1]")


@dataclass
class RenyiConfig:
    n_unitaries: int = 100
    shots: int = 10000
    sizes: list | None = None

    def validate(self, prefix: str) -> None:
        _int_range(prefix + "n_unitaries", self.n_unitaries, 1, 10**6)
        _int_range(prefix + "shots", self.shots, 2, 10**9)
        if self.sizes is not None:
            for k in self.sizes:
                _int_range(prefix + "sizes", k, 1, 16)


@dataclass
class BoundConfig:
    grid: int = 101
    M_values: list = field(default_factory=lambda: [1, 2, 5, 10, 20, 40])

    def validate(self, prefix: str) -> None:
        _int_range(prefix + "grid", self.grid, 21, 100001)
        if not self.M_values:
            raise ConfigError(f"{prefix}M_values: must not be empty")
        for m in self.M_values:
            _int_range(prefix + "M_values", m, 1, 100000)


@dataclass
class AnalogConfig:
    n_steps: int | None = None
    reference_tau: float = 100.0
    n_records: int = 21
    thetas: list = field(default_factory=lambda: [0.0, math.pi / 4, math.pi / 2])

    def validate(self, prefix: str) -> None:
        if self.n_steps is not None:
            _int_range(prefix + "n_steps", self.n_steps, 100, 10**7)
        _positive(prefix + "reference_tau", self.reference_tau)
        _int_range(prefix + "n_records", self.n_records, 2, 100001)
        for t in self.thetas:
            if not _is_number(t):
                raise ConfigError(f"{prefix}thetas: expected numbers")

    def steps_for(self, tau: float) -> int:
        """Fine steps for the analog integrator; about 30 per unit of tau."""
        if self.n_steps is not None:
            return self.n_steps
        return max(200, math.ceil(30 * tau))


@dataclass
class ExperimentConfig:
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    omega0: float = 1.0
    J0: float = 1.0
    tau: float = 5.0
    schedule: str = "brachistochrone"
    M: int = 5
    branch: str = "both"
    theta: float = 0.0
    two_qubit_basis: str = "cz"
    edge_substeps: int = 1
    backend: str = "statevector"
    reference_spin: int = 3
    spacing: float = 1.0
    seed: int = DEFAULT_SEED
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    renyi: RenyiConfig = field(default_factory=RenyiConfig)
    bound: BoundConfig = field(default_factory=BoundConfig)
    analog: AnalogConfig = field(default_factory=AnalogConfig)
    output: str = "out"

    def validate(self) -> "ExperimentConfig":
        self.lattice.validate("lattice.")
        _positive("omega0", self.omega0)
        _positive("J0", self.J0)
        _positive("tau", self.tau)
        _choice("schedule", self.schedule, tuple(k for k in SCHEDULE_KINDS if k != "constant"))
        _int_range("M", self.M, 1, 100000)
        _choice("branch", self.branch, BRANCHES + ("both",))
        if not _is_number(self.theta):
            raise ConfigError("theta: expected a number")
        _choice("two_qubit_basis", self.two_qubit_basis, ("cz", "iswap", "xy"))
        _int_range("edge_substeps", self.edge_substeps, 1, 100000)
        _choice("backend", self.backend, ("statevector", "density_matrix"))
        _int_range("reference_spin", self.reference_spin, 0, 10**6)
        _positive("spacing", self.spacing)
        _int_range("seed", self.seed, 0, 2**64 - 1)
        if not isinstance(self.output, str) or not self.output:
            raise ConfigError("output: expected a non-empty path")
        self.noise.validate("noise.")
        self.renyi.validate("renyi.")
        self.bound.validate("bound.")
        self.analog.validate("analog.")
        return self

    @property
    def branches(self) -> tuple[str, ...]:
        return BRANCHES if self.branch == "both" else (self.branch,)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        return _build(cls, data or {}, "").validate()

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"<file>: not valid YAML ({exc})") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("<file>: top level must be a mapping")
        return cls.from_dict(data)


def _build(cls, data: dict, prefix: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{prefix}{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}{name}: expected a mapping")
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(f"{prefix}{name}", value, default)
    return cls(**kwargs)


def _coerce(name: str, value, default):
    """Accept ints where floats are expected; reject other type changes."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        _bool(name, value)
        return value
    if isinstance(default, float):
        if not _is_number(value):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, type(default)):
        raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
    return value


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _bool(name, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{name}: expected true or false")


def _positive(name, v):
    if not _is_number(v) or v <= 0:
        raise ConfigError(f"{name}: must be a positive number, got {v!r}")


def _nonneg(name, v):
    if not _is_number(v) or v < 0:
        raise ConfigError(f"{name}: must be a non-negative number, got {v!r}")


def _int_range(name, v, lo, hi):
    if isinstance(v, bool) or not isinstance(v, int) or not lo <= v <= hi:
        raise ConfigError(f"{name}: must be an integer in [{lo}, {hi}], got {v!r}")


def _choice(name, v, options):
    if v not in options:
        raise ConfigError(f"{name}: must be one of {list(options)}, got {v!r}")
