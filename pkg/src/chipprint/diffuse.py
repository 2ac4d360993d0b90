"""Diffuse-reflection features: norm maps, height recovery, subbands.

Opposite-direction scan pairs difference into per-component norm maps,
which support correlation matching directly or after integration into a
height map and decomposition into radial frequency subbands.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import DegenerateInputError, ParameterError
from .model import Frame, HeightMap, NormMap

# steep pixels get their z component floored here so recovered gradients
# -nx/nz, -ny/nz stay bounded
MIN_NZ = 0.2


def _grid_of(x) -> np.ndarray:
    pixels = x.pixels if isinstance(x, Frame) else x
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError("expected a 2-D grid")
    return arr


def estimate_norm_component(i_fwd, i_rev) -> np.ndarray:
    """Difference of opposite-direction scans, zero-mean and unit-variance.

    The result is proportional to one projected normal component (y for a
    0/180 pair, x for 90/270), so only correlation comparisons against it
    are meaningful. Antisymmetric under argument swap, exactly.
    """
    a = _grid_of(i_fwd)
    b = _grid_of(i_rev)
    if a.shape != b.shape:
        raise ParameterError("scan pair dims differ")
    d = a - b
    d = d - d.mean()
    std = d.std()
    if std == 0.0:
        return np.zeros_like(d)
    return d / std


def norm_map_from_scans(i_0, i_180, i_90, i_270, pitch: float) -> NormMap:
    """Assemble a scanner-estimated NormMap from two opposite-direction pairs."""
    ny = estimate_norm_component(i_0, i_180)
    nx = estimate_norm_component(i_90, i_270)
    return NormMap(nx=nx, ny=ny, pitch=pitch, source="scan")


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        raise DegenerateInputError("correlation of a constant grid")
    return float(np.clip((a * b).sum() / denom, -1.0, 1.0))


def normmap_correlation(a: NormMap, b: NormMap, component: str) -> float:
    """Zero-mean normalized cross-correlation of one normal component."""
    ga = a.component(component)
    gb = b.component(component)
    if ga.shape != gb.shape:
        raise ParameterError(
            f"norm maps have different dims {ga.shape} vs {gb.shape}; resample first"
        )
    return _ncc(ga, gb)


def _window_sums(grid: np.ndarray, win: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Sliding-window sums of grid and grid**2 via integral images."""
    wh, ww = win
    pad = np.zeros((grid.shape[0] + 1, grid.shape[1] + 1))
    np.cumsum(np.cumsum(grid, axis=0), axis=1, out=pad[1:, 1:])
    s = pad[wh:, ww:] - pad[:-wh, ww:] - pad[wh:, :-ww] + pad[:-wh, :-ww]
    pad2 = np.zeros_like(pad)
    np.cumsum(np.cumsum(grid * grid, axis=0), axis=1, out=pad2[1:, 1:])
    s2 = pad2[wh:, ww:] - pad2[:-wh, ww:] - pad2[wh:, :-ww] + pad2[:-wh, :-ww]
    return s, s2


def search_best_patch(
    needle: NormMap, haystack: NormMap, stride: int = 1
) -> tuple[tuple[int, int], float]:
    """Exhaustive joint-component NCC search for a patch inside a larger map.

    Both components are treated as one concatenated statistic per
    candidate offset. The correlation surface is computed for every
    stride-1 offset with FFT cross-correlations plus integral-image
    window sums, then sampled on the stride grid. Returns the (row, col)
    of the best needle placement and its correlation; row-major order
    breaks exact ties.
    """
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    nh, nw = needle.nx.shape
    hh, hw = haystack.nx.shape
    if nh > hh or nw > hw:
        raise ParameterError(f"needle {nh}x{nw} does not fit in haystack {hh}x{hw}")

    n_px = 2.0 * nh * nw
    u = np.concatenate([needle.nx.ravel(), needle.ny.ravel()]).astype(np.float64)
    u_sum = u.sum()
    u_var = (u * u).sum() - u_sum * u_sum / n_px
    if u_var <= 0.0:
        raise DegenerateInputError("constant needle")

    cross = np.zeros((hh - nh + 1, hw - nw + 1))
    v_sum = np.zeros_like(cross)
    v_sq = np.zeros_like(cross)
    for hay, ndl in ((haystack.nx, needle.nx), (haystack.ny, needle.ny)):
        hay = np.asarray(hay, dtype=np.float64)
        cross += signal.correlate(hay, ndl, mode="valid", method="fft")
        s, s2 = _window_sums(hay, (nh, nw))
        v_sum += s
        v_sq += s2

    v_var = np.maximum(v_sq - v_sum * v_sum / n_px, 0.0)
    numer = cross - u_sum * v_sum / n_px
    denom = np.sqrt(u_var * v_var)
    corr = np.full(cross.shape, -np.inf)
    ok = denom > 0.0
    corr[ok] = numer[ok] / denom[ok]

    sub = corr[::stride, ::stride]
    if not np.isfinite(sub).any():
        raise DegenerateInputError("every candidate window is constant")
    r, c = np.unravel_index(np.argmax(sub), sub.shape)
    best = float(np.clip(sub[r, c], -1.0, 1.0))
    return (int(r) * stride, int(c) * stride), best


def _lsq_integrate(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Least-squares height from per-pixel gradients, mirror-extended.

    The field is embedded in a 2x grid with the even/odd symmetries of an
    even height extension, which makes the periodic central-difference
    model consistent with non-periodic input (Neumann-style boundaries).
    """
    ext_x = np.block([[gx, -gx[:, ::-1]], [gx[::-1, :], -gx[::-1, ::-1]]])
    ext_y = np.block([[gy, gy[:, ::-1]], [-gy[::-1, :], -gy[::-1, ::-1]]])
    h2, w2 = ext_x.shape
    fx = np.fft.fftfreq(w2)[None, :]
    fy = np.fft.fftfreq(h2)[:, None]
    dx = 1j * np.sin(2.0 * np.pi * fx)
    dy = 1j * np.sin(2.0 * np.pi * fy)
    denom = np.abs(dx) ** 2 + np.abs(dy) ** 2
    spectrum = np.conj(dx) * np.fft.fft2(ext_x) + np.conj(dy) * np.fft.fft2(ext_y)
    with np.errstate(invalid="ignore", divide="ignore"):
        height = np.where(denom > 1e-12, spectrum / np.where(denom > 0, denom, 1.0), 0.0)
    out = np.real(np.fft.ifft2(height))
    return out[: h2 // 2, : w2 // 2]


def reconstruct_height(nm: NormMap) -> HeightMap:
    """Integrate a norm map into a zero-mean height map (µm).

    The mean gradient is split off and integrated analytically (planes
    therefore come back exactly); the remainder goes through the
    frequency-domain least-squares solver with central-difference
    response. Output gradients minimize squared error to the field
    (-nx/nz, -ny/nz).
    """
    nx = np.asarray(nm.nx, dtype=np.float64)
    ny = np.asarray(nm.ny, dtype=np.float64)
    nz = np.sqrt(np.clip(1.0 - nx * nx - ny * ny, 0.0, None))
    nz = np.maximum(nz, MIN_NZ)
    gx = -nx / nz * nm.pitch  # µm per pixel step
    gy = -ny / nz * nm.pitch

    mx, my = gx.mean(), gy.mean()
    rows, cols = gx.shape
    xx = np.arange(cols, dtype=np.float64)[None, :]
    yy = np.arange(rows, dtype=np.float64)[:, None]
    plane = mx * (xx - xx.mean()) + my * (yy - yy.mean())

    residual = _lsq_integrate(gx - mx, gy - my)
    heights = plane + residual
    heights = heights - heights.mean()
    return HeightMap(heights=heights, pitch=nm.pitch, seed=0)


@dataclass
class SubbandFeature:
    """One radial frequency band of a height map."""

    band_index: int
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.band_index < 1:
            raise ParameterError(f"band_index must be >= 1, got {self.band_index}")
        if self.coefficients.ndim != 2:
            raise ParameterError("coefficients must be a 2-D grid")


def subband_decompose(h: HeightMap, n_bands: int) -> list[SubbandFeature]:
    """Split a height map into dyadic annular frequency bands.

    Band 1 holds the top octave of radial frequency, each next band the
    octave below, and the last band keeps everything remaining down to
    (but excluding) DC. The bands partition the spectrum: their sum
    reconstructs the input minus its mean.
    """
    if n_bands < 1:
        raise ParameterError(f"n_bands must be >= 1, got {n_bands}")
    if 2 ** n_bands > min(h.dims):
        raise ParameterError(f"dims {h.dims} too small for {n_bands} dyadic bands")
    grid = np.asarray(h.heights, dtype=np.float64)
    spec = np.fft.fft2(grid)
    fx = np.fft.fftfreq(grid.shape[1])[None, :]
    fy = np.fft.fftfreq(grid.shape[0])[:, None]
    rho = np.hypot(fx, fy)
    f_max = rho.max()

    bands = []
    for k in range(1, n_bands + 1):
        hi = f_max * 2.0 ** (-k + 1)
        lo = f_max * 2.0 ** (-k) if k < n_bands else 0.0
        mask = (rho > lo) & (rho <= hi)
        coeff = np.real(np.fft.ifft2(spec * mask))
        bands.append(SubbandFeature(band_index=k, coefficients=coeff))
    return bands


def diffuse_match_score(test_feature, ref_feature, mask: np.ndarray | None = None) -> float:
    """Zero-mean NCC between two feature grids, optionally masked.

    Accepts SubbandFeatures (band indices must agree) or bare grids.
    Symmetric in its arguments; constant input raises.
    """
    if isinstance(test_feature, SubbandFeature) and isinstance(ref_feature, SubbandFeature):
        if test_feature.band_index != ref_feature.band_index:
            raise ParameterError(
                f"comparing band {test_feature.band_index} with band {ref_feature.band_index}"
            )
    a = test_feature.coefficients if isinstance(test_feature, SubbandFeature) else test_feature
    b = ref_feature.coefficients if isinstance(ref_feature, SubbandFeature) else ref_feature
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError("feature dims differ")
    if mask is not None:
        if mask.shape != a.shape:
            raise ParameterError("mask dims differ from features")
        a = a[mask]
        b = b[mask]
    return _ncc(a, b)


def resample_grid(grid: np.ndarray, factor: float) -> np.ndarray:
    """Resample by a scale factor: bicubic up, box-prefiltered bicubic down."""
    grid = np.asarray(grid, dtype=np.float64)
    if not (factor > 0):
        raise ParameterError(f"resample factor must be positive, got {factor}")
    if factor == 1.0:
        return grid.copy()
    if factor < 1.0:
        size = max(int(round(1.0 / factor)), 1)
        grid = ndimage.uniform_filter(grid, size=size, mode="reflect")
    return ndimage.zoom(grid, factor, order=3, mode="reflect", grid_mode=True)


def resample_normmap(nm: NormMap, factor: float) -> NormMap:
    """Resample both components; pitch scales inversely with the factor."""
    return NormMap(
        nx=resample_grid(nm.nx, factor),
        ny=resample_grid(nm.ny, factor),
        pitch=nm.pitch / factor,
        source=nm.source,
    )
