from __future__ import annotations

"""Default constants for chlog runs and the JSON run-configuration format."""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .multigrid import MgConfig
from .potential import Mobility, ModelParams

# Multigrid
MG_SWEEPS = 2  # lambda: pre/post smoothing sweeps
MG_TOL = 1e-9  # tau: stop when the combined residual l2 norm drops below this
MG_MAX_VCYCLES = 200
MG_COARSEST_N = 4
MG_COARSE_SWEEPS = 20

# Model
DEFAULT_EPSILON = 5e-3
DEFAULT_THETA0 = 3.0
DEFAULT_DELTA = 1e-5
# Douglas-Dupont threshold for the modified-energy estimate of BDF2_ES
BDF2_ES_STABILIZATION = 1.0 / 16.0

# Random initial data (numpy default_rng, PCG64)
DEFAULT_SEED = 20190214
RANDOM_MEAN = 0.2
RANDOM_AMPLITUDE = 0.05

# Refinement-path convergence study: dt = factor * h^2
CONV_LENGTH = 3.2
CONV_EPSILON = 0.2
CONV_THETA0 = 3.0
CONV_DELTA = 1e-5
CONV_T_FINAL = 0.4
CONV_DT_FACTOR = 0.4
CONV_RESOLUTIONS = (16, 32, 64, 128, 256)

# Positivity study rows: (theta0, delta, smoothing sweeps)
POS_LENGTH = 1.0
POS_N = 256
POS_DT = 1e-3
POS_T_FINAL = 1.0
POS_ROWS = (
    (2.0, 1e-3, 2),
    (2.5, 1e-3, 2),
    (3.0, 1e-3, 2),
    (3.0, 1e-5, 2),
    (3.2, 1e-5, 3),
    (3.5, 1e-5, 3),
)
DELTA_PAIR = (1e-3, 1e-5)

# Multigrid complexity study
MGB_LENGTH = 3.2
MGB_EPSILON = 0.2
MGB_DT = 0.1
MGB_STEPS = 10
MGB_THETA0S = (2.0, 3.0, 3.5)
MGB_GRID_SIZES = (64, 128, 256)

# Scheme comparison study
CMP_N = 256
CMP_DT_LIST = (1e-4, 5e-5)
CMP_TARGET_DT = 5e-6
CMP_PROBE_TIMES = (0.1, 0.5, 1.0)
CMP_SCHEMES = ("BDF2", "BDF2_ES", "BDF2_ES_A0", "BE", "CS1")

# 3-D spinodal run
SPIN3D_N = 64
SPIN3D_DT = 1e-3
SPIN3D_STEPS = 200
SPIN3D_TOL = 1e-8

SCHEMES = ("CS1", "BE", "BDF2_ES", "BDF2", "AC1")
INIT_KINDS = ("random", "convergence_profile", "zero", "snapshot")


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the offending field."""


@dataclass(frozen=True)
class ModelSection:
    scheme: str = "CS1"
    epsilon: float = DEFAULT_EPSILON
    theta0: float = DEFAULT_THETA0
    delta: float = DEFAULT_DELTA
    # None: BDF2_ES_STABILIZATION for BDF2_ES, 0 for the other schemes
    stabilization_a: float | None = None
    mobility: str = "constant"
    mobility_value: float = 1.0


@dataclass(frozen=True)
class GridSection:
    dim: int = 2
    n: int = POS_N
    length: float = POS_LENGTH


@dataclass(frozen=True)
class TimeSection:
    dt: float = POS_DT
    t_final: float = POS_T_FINAL


@dataclass(frozen=True)
class MgSection:
    sweeps_lambda: int = MG_SWEEPS
    tol_tau: float = MG_TOL
    max_vcycles: int = MG_MAX_VCYCLES
    coarsest_n: int = MG_COARSEST_N
    coarse_sweeps: int = MG_COARSE_SWEEPS
    ordering: str = "red-black"
    parallel: bool = False


@dataclass(frozen=True)
class InitSection:
    kind: str = "random"
    mean: float = RANDOM_MEAN
    amplitude: float = RANDOM_AMPLITUDE
    seed: int = DEFAULT_SEED
    path: str = ""


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    record_every: int = 1
    snapshot_every: int = 0


@dataclass(frozen=True)
class StudySection:
    resolutions: tuple[int, ...] = CONV_RESOLUTIONS
    dt_factor: float = CONV_DT_FACTOR
    theta0s: tuple[float, ...] = MGB_THETA0S
    grid_sizes: tuple[int, ...] = MGB_GRID_SIZES
    steps: int = MGB_STEPS
    dt_list: tuple[float, ...] = CMP_DT_LIST
    target_dt: float = CMP_TARGET_DT
    probe_times: tuple[float, ...] = CMP_PROBE_TIMES
    schemes: tuple[str, ...] = CMP_SCHEMES
    positivity_rows: tuple[tuple[float, float, int], ...] = POS_ROWS


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    time: TimeSection = field(default_factory=TimeSection)
    mg: MgSection = field(default_factory=MgSection)
    init: InitSection = field(default_factory=InitSection)
    output: OutputSection = field(default_factory=OutputSection)
    study: StudySection = field(default_factory=StudySection)

    def stabilization_a(self) -> float:
        if self.model.stabilization_a is not None:
            return self.model.stabilization_a
        return BDF2_ES_STABILIZATION if self.model.scheme == "BDF2_ES" else 0.0

    def model_params(self) -> ModelParams:
        m = self.model
        try:
            return ModelParams(
                epsilon=m.epsilon,
                theta0=m.theta0,
                delta=m.delta,
                stabilization_a=self.stabilization_a(),
                mobility=Mobility(kind=m.mobility, value=m.mobility_value),
            )
        except ValueError as exc:
            raise ConfigError(f"model.{exc}") from exc

    def mg_config(self) -> MgConfig:
        try:
            return MgConfig(**asdict(self.mg))
        except ValueError as exc:
            raise ConfigError(f"mg.{exc}") from exc

    def validate(self) -> RunConfig:
        """Raise ``ConfigError`` unless every section holds usable values."""
        self.model_params()
        self.mg_config()
        if self.model.scheme not in SCHEMES:
            raise ConfigError(f"model.scheme must be one of {SCHEMES}, got {self.model.scheme!r}")
        g = self.grid
        if g.dim not in (2, 3):
            raise ConfigError(f"grid.dim must be 2 or 3, got {g.dim}")
        if g.n < 4 or g.n & (g.n - 1):
            raise ConfigError(f"grid.n must be a power of two >= 4, got {g.n}")
        if not g.length > 0.0:
            raise ConfigError(f"grid.length must be positive, got {g.length}")
        if not self.time.dt > 0.0:
            raise ConfigError(f"time.dt must be positive, got {self.time.dt}")
        if not self.time.t_final >= 0.0:
            raise ConfigError(f"time.t_final must be >= 0, got {self.time.t_final}")
        if self.init.kind not in INIT_KINDS:
            raise ConfigError(f"init.kind must be one of {INIT_KINDS}, got {self.init.kind!r}")
        if self.init.kind == "snapshot" and not self.init.path:
            raise ConfigError("init.path is required for a snapshot initial condition")
        if not 0.0 <= self.init.amplitude < 1.0:
            raise ConfigError(f"init.amplitude must lie in [0, 1), got {self.init.amplitude}")
        if abs(self.init.mean) + self.init.amplitude >= 1.0:
            raise ConfigError("init.mean: random initial data must stay inside (-1, 1)")
        if not 0 <= self.init.seed < 2**64:
            raise ConfigError(f"init.seed must be a 64-bit unsigned integer, got {self.init.seed}")
        if self.output.record_every < 1:
            raise ConfigError(f"output.record_every must be >= 1, got {self.output.record_every}")
        if self.output.snapshot_every < 0:
            raise ConfigError(f"output.snapshot_every must be >= 0, got {self.output.snapshot_every}")
        return self


_SECTION_TYPES: dict[str, type] = {
    "model": ModelSection,
    "grid": GridSection,
    "time": TimeSection,
    "mg": MgSection,
    "init": InitSection,
    "output": OutputSection,
    "study": StudySection,
}


def _coerce(section: str, name: str, value: Any, default: Any) -> Any:
    where = f"{section}.{name}"
    if default is None:
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number or null, got {value!r}")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def config_from_dict(doc: dict[str, Any]) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    sections: dict[str, Any] = {}
    for name, cls in _SECTION_TYPES.items():
        raw = doc.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"{name} must be an object")
        defaults = cls()
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"{name}.{sorted(extra)[0]}: unknown key")
        values = {k: _coerce(name, k, v, getattr(defaults, k)) for k, v in raw.items()}
        sections[name] = cls(**values)
    return RunConfig(**sections).validate()


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    return asdict(cfg)


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    return config_from_dict(doc)


def dump_config(cfg: RunConfig, path: str | Path | None = None) -> str:
    """Serialize ``cfg`` as indented JSON; also write it to ``path`` when given."""
    text = json.dumps(config_to_dict(cfg), indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
