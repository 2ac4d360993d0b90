"""Pipeline configuration: one dataclass per subsystem, TOML loading.

A config file has one table per section ([render], [registration],
[mask], [specular], [evaluation], [paths]); unknown sections or keys are
rejected rather than ignored so typos fail loudly. CLI flags are applied
on top via dotted-path overrides.
"""

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .errors import ParameterError
from .model import LightTrajectory, ReflectionParams


@dataclass
class RenderConfig:
    dims: tuple = (512, 512)
    pitch_um: float = 20.0
    amplitude_um: float = 2.5
    corr_length_px: float = 6.0
    n_frames: int = 100
    noise_sigma: float = 0.005
    w_d: float = 0.6
    w_s: float = 0.4
    k_e: float = 400.0
    k_broad: float = 25.0
    broad_mix: float = 0.0
    intensity: float = 4.0e4
    azimuth_deg: float = -90.0
    polar_start_deg: float = 9.0
    polar_end_deg: float = 5.5
    dist_start_mm: float = 280.0
    dist_end_mm: float = 240.0
    markings: bool = True
    marking_albedo: float = 0.35
    marking_gloss: float = 0.0
    glare_strength: float = 0.0
    jitter_px: float = 8.0
    jitter_deg: float = 1.0
    jitter_scale: float = 0.005
    scans: bool = False
    scan_noise: float = 0.01

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 2 or min(self.dims) < 16:
            raise ParameterError(f"render dims must be two values >= 16, got {self.dims}")
        if self.n_frames < 1:
            raise ParameterError("n_frames must be >= 1")
        if self.noise_sigma < 0 or self.scan_noise < 0:
            raise ParameterError("noise levels must be nonnegative")
        if self.jitter_px < 0 or self.jitter_deg < 0 or not 0 <= self.jitter_scale < 1:
            raise ParameterError("jitter magnitudes out of range")
        if not 0 < self.marking_albedo <= 1:
            raise ParameterError("marking albedo must be in (0, 1]")
        if self.marking_gloss < 0 or self.glare_strength < 0:
            raise ParameterError("marking gloss and glare strength must be nonnegative")

    def reflection_params(self) -> ReflectionParams:
        return ReflectionParams(
            w_d=self.w_d,
            w_s=self.w_s,
            k_e=self.k_e,
            l=self.intensity,
            k_broad=self.k_broad,
            broad_mix=self.broad_mix,
        )

    def trajectory(self) -> LightTrajectory:
        return LightTrajectory(
            azimuth_deg=self.azimuth_deg,
            polar_start_deg=self.polar_start_deg,
            polar_end_deg=self.polar_end_deg,
            dist_start_mm=self.dist_start_mm,
            dist_end_mm=self.dist_end_mm,
        )


@dataclass
class RegistrationConfig:
    peak_threshold: float = 0.03
    refine: bool = True
    gradient: bool = False
    refine_region_frac: float = 0.25
    max_evals: int = 160

    def __post_init__(self):
        if not 0 < self.peak_threshold < 1:
            raise ParameterError("peak threshold must be in (0, 1)")
        if not 0 <= self.refine_region_frac < 0.5:
            raise ParameterError("refine region fraction must be in [0, 0.5)")
        if self.max_evals < 10:
            raise ParameterError("refinement needs at least 10 evaluations")


@dataclass
class MaskConfig:
    edge_margin_px: int = 12
    detailed: bool = True
    text_threshold: float = 0.7

    def __post_init__(self):
        if self.edge_margin_px < 0:
            raise ParameterError("edge margin must be >= 0")
        if not 0 <= self.text_threshold < 1:
            raise ParameterError("text threshold must be in [0, 1)")


@dataclass
class SpecularConfig:
    n_points: int = 100
    sample_count: int = 10
    tau: float = 0.25
    repeats: int = 50
    # Accept iff the robust score exceeds this. Zero is the right default
    # while matched and unmatched populations stay fully separated;
    # noisier deployments can raise it.
    threshold: float = 0.0

    def __post_init__(self):
        if self.n_points < 1 or self.sample_count < 1:
            raise ParameterError("point and frame-sample counts must be >= 1")
        if not 0 < self.tau <= 1:
            raise ParameterError("tau must be in (0, 1]")
        if self.repeats < 1:
            raise ParameterError("bootstrap repeats must be >= 1")
        if self.threshold < 0:
            raise ParameterError("decision threshold must be >= 0")


@dataclass
class EvaluationConfig:
    base_seed: int = 0
    seed_count: int = 5

    def __post_init__(self):
        if self.seed_count < 1:
            raise ParameterError("seed sweep needs at least 1 seed")


@dataclass
class PathsConfig:
    out_dir: str = "out"


@dataclass
class PipelineConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    specular: SpecularConfig = field(default_factory=SpecularConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> None:
        """Cross-section checks plus owning-type invariant enforcement."""
        self.render.reflection_params()
        self.render.trajectory()
        if self.specular.sample_count > self.render.n_frames:
            raise ParameterError(
                f"cannot sample {self.specular.sample_count} frames from "
                f"{self.render.n_frames}-frame clips"
            )


_SECTIONS = {
    "render": RenderConfig,
    "registration": RegistrationConfig,
    "mask": MaskConfig,
    "specular": SpecularConfig,
    "evaluation": EvaluationConfig,
    "paths": PathsConfig,
}


def _coerce(cls, key, value):
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    hint = types[key]
    if not isinstance(hint, str):
        hint = getattr(hint, "__name__", str(hint))
    if hint == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParameterError(f"{cls.__name__}.{key} must be an integer, got {value!r}")
    if hint == "bool" and not isinstance(value, bool):
        raise ParameterError(f"{cls.__name__}.{key} must be a boolean, got {value!r}")
    return value


def _build_section(name: str, cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ParameterError(
            f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}"
        )
    return cls(**{k: _coerce(cls, k, v) for k, v in data.items()})


def config_from_dict(data: dict) -> PipelineConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ParameterError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTIONS.items():
        body = data.get(name, {})
        if not isinstance(body, dict):
            raise ParameterError(f"config section [{name}] must be a table")
        sections[name] = _build_section(name, cls, body)
    cfg = PipelineConfig(**sections)
    cfg.validate()
    return cfg


def load_config(path=None) -> PipelineConfig:
    """Parse a TOML config file; None gives all defaults."""
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise ParameterError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ParameterError(f"config {path} is not valid TOML: {e}") from e
    return config_from_dict(data)


def apply_overrides(cfg: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Apply {'section.key': value} pairs on top of a parsed config."""
    staged = {name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTIONS}
    for path, value in overrides.items():
        section, _, key = path.partition(".")
        if section not in _SECTIONS or not key:
            raise ParameterError(f"bad override path {path!r}")
        if key not in staged[section]:
            raise ParameterError(f"unknown config key {path!r}")
        staged[section][key] = value
    return config_from_dict(staged)


def config_snapshot(cfg: PipelineConfig) -> dict:
    """Plain-dict view of the config for manifests and reports."""
    out = {}
    for name in _SECTIONS:
        body = dataclasses.asdict(getattr(cfg, name))
        body = {k: (list(v) if isinstance(v, tuple) else v) for k, v in body.items()}
        out[name] = body
    return out
