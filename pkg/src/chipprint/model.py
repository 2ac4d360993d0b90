"""Core domain types shared by the simulation and authentication stages.

Coordinate conventions used throughout:

* grids are indexed ``[row, col]``; x runs along columns, y along rows
* world positions are in millimetres, heights in micrometres
* the camera is orthographic, looking straight down; ``direction`` is the
  unit vector from the surface toward the camera
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, ParameterError

MIN_SURFACE_DIM = 16
UM_PER_MM = 1000.0


@dataclass
class HeightMap:
    """Micro-topography of one chip surface.

    heights : 2-D float64 grid of surface heights in micrometres
    pitch   : lateral sample spacing in micrometres (square pixels)
    seed    : RNG seed the surface was generated from (0 for derived maps)
    """

    heights: np.ndarray
    pitch: float
    seed: int = 0

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.ndim != 2:
            raise ParameterError("height grid must be 2-D")
        if min(self.heights.shape) < MIN_SURFACE_DIM:
            raise ParameterError(
                f"height grid must be at least {MIN_SURFACE_DIM}x{MIN_SURFACE_DIM}, "
                f"got {self.heights.shape}"
            )
        if not np.all(np.isfinite(self.heights)):
            raise ParameterError("height grid contains non-finite values")
        if not (self.pitch > 0):
            raise ParameterError(f"pitch must be positive, got {self.pitch}")

    @property
    def dims(self) -> tuple[int, int]:
        return self.heights.shape

    def extent_mm(self) -> tuple[float, float]:
        """Physical (width, height) of the sampled patch in mm."""
        rows, cols = self.heights.shape
        return cols * self.pitch / UM_PER_MM, rows * self.pitch / UM_PER_MM


@dataclass
class NormMap:
    """Tangential normal components on the surface grid.

    nx, ny are the x/y components of the unit surface normal; the z
    component is implied by normalization. ``source`` records how the map
    was obtained ("height", "scan", ...).
    """

    nx: np.ndarray
    ny: np.ndarray
    pitch: float
    source: str = "height"

    def __post_init__(self):
        self.nx = np.asarray(self.nx, dtype=np.float64)
        self.ny = np.asarray(self.ny, dtype=np.float64)
        if self.nx.shape != self.ny.shape or self.nx.ndim != 2:
            raise ParameterError("normal component grids must be 2-D and same shape")
        if not (self.pitch > 0):
            raise ParameterError(f"pitch must be positive, got {self.pitch}")

    @property
    def dims(self) -> tuple[int, int]:
        return self.nx.shape

    def component(self, name: str) -> np.ndarray:
        if name in ("x", "nx"):
            return self.nx
        if name in ("y", "ny"):
            return self.ny
        raise ParameterError(f"unknown normal component {name!r}")


@dataclass(frozen=True)
class ReflectionParams:
    """Weights of the diffuse + specular reflection model.

    w_d, w_s  : diffuse and specular weights (nonnegative, not both zero)
    k_e       : gloss exponent of the narrow specular lobe
    l         : light source strength
    k_broad   : exponent of an optional second, broader lobe
    broad_mix : fraction of the specular weight carried by the broad lobe;
                0 recovers the plain single-lobe model
    """

    w_d: float = 0.6
    w_s: float = 0.4
    k_e: float = 200.0
    l: float = 1.0
    k_broad: float = 25.0
    broad_mix: float = 0.0

    def __post_init__(self):
        if self.w_d < 0 or self.w_s < 0:
            raise ParameterError("reflection weights must be nonnegative")
        if self.w_d + self.w_s <= 0:
            raise ParameterError("at least one reflection weight must be positive")
        if self.k_e <= 0 or self.k_broad <= 0:
            raise ParameterError("gloss exponents must be positive")
        if self.l <= 0:
            raise ParameterError("light strength must be positive")
        if not (0.0 <= self.broad_mix <= 1.0):
            raise ParameterError("broad_mix must lie in [0, 1]")


@dataclass(frozen=True)
class LightPose:
    """A light source: a point, or a summary pose for a linear lamp."""

    position: tuple[float, float, float]
    kind: str = "point"

    def __post_init__(self):
        if self.kind not in ("point", "linear"):
            raise ParameterError(f"unknown light kind {self.kind!r}")
        if len(self.position) != 3:
            raise ParameterError("light position must be a 3-vector (mm)")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.position, dtype=np.float64)


@dataclass(frozen=True)
class ScanPath:
    """Linear lamp geometry for one scanner pass.

    The lamp is a line segment parallel to the scan rows, swept with the
    head: for every pixel it sits at a fixed perpendicular offset and
    standoff. ``span_mm`` are the absolute endpoints along the lamp axis.
    """

    span_mm: tuple[float, float]
    offset_mm: float = 10.0
    standoff_mm: float = 15.0
    samples: int = 64

    def __post_init__(self):
        lo, hi = self.span_mm
        if not (hi > lo):
            raise ParameterError("lamp span must have positive length")
        if self.standoff_mm <= 0:
            raise GeometryError("lamp standoff must be positive")
        if self.offset_mm <= 0:
            raise ParameterError("lamp offset must be positive")
        if self.samples < 2:
            raise ParameterError("need at least 2 quadrature samples")


@dataclass(frozen=True)
class CameraPose:
    """Orthographic camera; direction points from the surface to the camera."""

    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=np.float64)
        n = float(np.linalg.norm(v))
        if n == 0:
            raise ParameterError("camera direction must be nonzero")
        if v[2] <= 0:
            raise GeometryError("camera must look down at the surface (z > 0)")
        object.__setattr__(self, "direction", tuple(float(c) for c in v / n))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.direction, dtype=np.float64)


@dataclass(frozen=True)
class LightTrajectory:
    """Light path for a video capture: a slow sweep toward the chip.

    The polar angle (from the surface normal) and the distance to the chip
    centre are interpolated linearly over the clip; azimuth stays fixed.
    """

    azimuth_deg: float = -90.0
    polar_start_deg: float = 45.0
    polar_end_deg: float = 30.0
    dist_start_mm: float = 150.0
    dist_end_mm: float = 120.0

    def __post_init__(self):
        for a in (self.polar_start_deg, self.polar_end_deg):
            if not (0.0 <= a < 90.0):
                raise GeometryError("polar angle must lie in [0, 90) degrees")
        if self.dist_start_mm <= 0 or self.dist_end_mm <= 0:
            raise GeometryError("light distance must be positive")

    def position(self, u: float, center_mm: tuple[float, float]) -> tuple[float, float, float]:
        """Light position at sweep fraction u in [0, 1], in mm."""
        polar = np.deg2rad(self.polar_start_deg + u * (self.polar_end_deg - self.polar_start_deg))
        dist = self.dist_start_mm + u * (self.dist_end_mm - self.dist_start_mm)
        az = np.deg2rad(self.azimuth_deg)
        cx, cy = center_mm
        return (
            float(cx + dist * np.sin(polar) * np.cos(az)),
            float(cy + dist * np.sin(polar) * np.sin(az)),
            float(dist * np.cos(polar)),
        )


@dataclass
class Frame:
    """One rendered or captured image plus its light pose and time index."""

    pixels: np.ndarray
    light: LightPose
    t: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ParameterError("frame pixels must be 2-D")
        if not np.all(np.isfinite(self.pixels)):
            raise ParameterError("frame contains non-finite intensities")
        if self.pixels.size and float(self.pixels.min()) < 0:
            raise ParameterError("frame intensities must be nonnegative")

    @property
    def dims(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class VideoClip:
    """Ordered frames of one capture session of one chip."""

    frames: list[Frame] = field(default_factory=list)
    chip_id: str = ""
    clip_id: str = ""

    def __post_init__(self):
        if not self.frames:
            raise ParameterError("clip must contain at least one frame")
        dims = self.frames[0].dims
        for f in self.frames:
            if f.dims != dims:
                raise ParameterError("all frames in a clip must share dimensions")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def dims(self) -> tuple[int, int]:
        return self.frames[0].dims
