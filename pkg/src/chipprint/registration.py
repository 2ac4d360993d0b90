"""Similarity-transform registration of captures to a template.

Coarse alignment comes from FFT phase correlation: translation directly,
rotation/scale through correlation of log-polar resampled magnitude
spectra. A two-pass direct search then polishes the four parameters
against a zero-mean NCC objective.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .errors import AlignmentFailedError, DegenerateInputError, ParameterError
from .model import Frame, VideoClip

PEAK_ACCEPT_THRESHOLD = 0.03
SCALE_BOUNDS = (0.5, 2.0)
LOG_POLAR_ANGLES = 360
LOG_POLAR_RADII = 256
LOG_POLAR_R_MIN = 4.0


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R(rotation) @ p + (tx, ty) on (x, y) pixel coordinates."""

    scale: float = 1.0
    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not (self.scale > 0):
            raise ParameterError(f"scale must be positive, got {self.scale}")

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform()

    @staticmethod
    def about_center(
        scale: float, rotation: float, shift: tuple[float, float], center: tuple[float, float]
    ) -> "SimilarityTransform":
        """Rotate/scale about `center`, then translate by `shift`."""
        cx, cy = center
        c, s = np.cos(rotation), np.sin(rotation)
        tx = shift[0] + cx - scale * (c * cx - s * cy)
        ty = shift[1] + cy - scale * (s * cx + c * cy)
        return SimilarityTransform(scale, rotation, float(tx), float(ty))

    def center_shift(self, center: tuple[float, float]) -> tuple[float, float]:
        """Displacement this transform applies to `center`."""
        out = self.apply(np.asarray([center], dtype=np.float64))[0]
        return float(out[0] - center[0]), float(out[1] - center[1])

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix."""
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        a = self.scale
        return np.asarray(
            [[a * c, -a * s, self.tx], [a * s, a * c, self.ty], [0.0, 0.0, 1.0]]
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (n, 2) array of (x, y) points."""
        pts = np.asarray(points, dtype=np.float64)
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        x = self.scale * (c * pts[..., 0] - s * pts[..., 1]) + self.tx
        y = self.scale * (s * pts[..., 0] + c * pts[..., 1]) + self.ty
        return np.stack([x, y], axis=-1)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying `other` first, then self."""
        c, s = np.cos(self.rotation), np.sin(self.rotation)
        tx = self.scale * (c * other.tx - s * other.ty) + self.tx
        ty = self.scale * (s * other.tx + c * other.ty) + self.ty
        return SimilarityTransform(
            self.scale * other.scale, self.rotation + other.rotation, float(tx), float(ty)
        )

    def inverse(self) -> "SimilarityTransform":
        inv_s = 1.0 / self.scale
        c, s = np.cos(-self.rotation), np.sin(-self.rotation)
        tx = -inv_s * (c * self.tx - s * self.ty)
        ty = -inv_s * (s * self.tx + c * self.ty)
        return SimilarityTransform(inv_s, -self.rotation, float(tx), float(ty))


@dataclass
class AlignmentResult:
    transform: SimilarityTransform
    peak_response: float
    refined: bool = False


def warp(
    image: np.ndarray,
    t: SimilarityTransform,
    out_dims: tuple[int, int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Resample so that output(t(p)) = input(p), bilinear.

    Returns (warped, valid) where valid marks output pixels whose sample
    location fell inside the input grid; outside samples are 0.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ParameterError("warp expects a 2-D image")
    rows, cols = out_dims if out_dims is not None else image.shape
    inv = t.inverse()
    xx, yy = np.meshgrid(np.arange(cols, dtype=np.float64), np.arange(rows, dtype=np.float64))
    c, s = np.cos(inv.rotation), np.sin(inv.rotation)
    sx = inv.scale * (c * xx - s * yy) + inv.tx
    sy = inv.scale * (s * xx + c * yy) + inv.ty
    warped = ndimage.map_coordinates(image, [sy, sx], order=1, mode="constant", cval=0.0)
    valid = (
        (sx >= 0.0) & (sx <= image.shape[1] - 1.0) & (sy >= 0.0) & (sy <= image.shape[0] - 1.0)
    )
    return warped, valid


def warp_frame(frame: Frame, t: SimilarityTransform) -> Frame:
    pixels, _ = warp(frame.pixels, t)
    return Frame(pixels, frame.light, frame.t)


def _signed_index(idx: int, n: int) -> float:
    return idx - n if idx > n // 2 else idx


def _parabolic_offset(cm1: float, c0: float, cp1: float) -> float:
    denom = cm1 - 2.0 * c0 + cp1
    if abs(denom) < 1e-12 * max(abs(c0), 1e-30):
        return 0.0
    off = 0.5 * (cm1 - cp1) / denom
    if abs(off) < 1e-9:
        return 0.0
    return float(np.clip(off, -0.5, 0.5))


def _image_of(x) -> np.ndarray:
    pixels = x.pixels if isinstance(x, Frame) else x
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError("expected a 2-D image")
    return arr


def phase_correlate_translation(a, b) -> tuple[float, float, float]:
    """Estimate (tx, ty) such that b ≈ a shifted by (tx, ty), plus peak response.

    Pure (unwindowed) normalized cross-power phase correlation with a
    3-point quadratic sub-pixel fit per axis. Exact on integer circular
    shifts, where the correlation surface is a unit delta. On exactly tied
    peaks the lexicographically smallest (tx, ty) wins.
    """
    a = _image_of(a)
    b = _image_of(b)
    if a.shape != b.shape:
        raise ParameterError("phase correlation needs two images of the same shape")
    if a.std() == 0.0 or b.std() == 0.0:
        raise DegenerateInputError("phase correlation of a constant image")

    fa = np.fft.fft2(a - a.mean())
    fb = np.fft.fft2(b - b.mean())
    cross = fa * np.conj(fb)
    mag = np.abs(cross)
    floor = 1e-15 * mag.max()
    corr = np.real(np.fft.ifft2(cross / np.maximum(mag, floor)))

    rows, cols = corr.shape
    flat_ties = np.flatnonzero(corr == corr.max())
    tie_r, tie_c = np.unravel_index(flat_ties, corr.shape)
    cand = sorted(
        (-_signed_index(int(c), cols), -_signed_index(int(r), rows), int(r), int(c))
        for r, c in zip(tie_r, tie_c)
    )
    _, _, pr, pc = cand[0]
    peak = float(np.clip(corr[pr, pc], 0.0, 1.0))
    dr = _parabolic_offset(corr[(pr - 1) % rows, pc], corr[pr, pc], corr[(pr + 1) % rows, pc])
    dc = _parabolic_offset(corr[pr, (pc - 1) % cols], corr[pr, pc], corr[pr, (pc + 1) % cols])
    ty = -(_signed_index(pr, rows) + dr)
    tx = -(_signed_index(pc, cols) + dc)
    return float(tx), float(ty), peak


def _hann2(shape: tuple[int, int]) -> np.ndarray:
    wr = np.hanning(shape[0])[:, None]
    wc = np.hanning(shape[1])[None, :]
    return wr * wc


def _log_polar_magnitude(img: np.ndarray) -> tuple[np.ndarray, float]:
    """Hann-windowed |FFT| resampled to a (angle, log-radius) grid.

    Angle spans [0, pi) (the magnitude spectrum is centrosymmetric), the
    radial axis is logarithmic from LOG_POLAR_R_MIN px to just short of
    the Nyquist ring. Returns the map and the log-radius step.
    """
    mag = np.abs(np.fft.fftshift(np.fft.fft2(img * _hann2(img.shape))))
    mag = np.log1p(mag)
    cy, cx = img.shape[0] // 2, img.shape[1] // 2
    r_max = min(img.shape) / 2.0 - 1.0
    log_step = np.log(r_max / LOG_POLAR_R_MIN) / (LOG_POLAR_RADII - 1)
    radii = LOG_POLAR_R_MIN * np.exp(np.arange(LOG_POLAR_RADII) * log_step)
    angles = np.arange(LOG_POLAR_ANGLES) * (np.pi / LOG_POLAR_ANGLES)
    rr = radii[None, :]
    aa = angles[:, None]
    sy = cy + rr * np.sin(aa)
    sx = cx + rr * np.cos(aa)
    lp = ndimage.map_coordinates(mag, [sy, sx], order=1, mode="constant", cval=0.0)
    # taper the (non-periodic) radial axis; the angle axis is truly circular
    lp *= np.hanning(LOG_POLAR_RADII)[None, :]
    return lp, log_step


def phase_correlate_similarity(a, b) -> AlignmentResult:
    """Coarse similarity estimate with warp(a, t) ≈ b.

    Rotation and scale come from phase correlation of the two log-polar
    magnitude spectra; the pi-ambiguous rotation is resolved by trying
    both candidates and keeping the stronger translation peak. Raises
    AlignmentFailedError when the best peak is below the acceptance
    threshold or the scale leaves [0.5, 2].
    """
    a = _image_of(a)
    b = _image_of(b)
    if a.shape != b.shape:
        raise ParameterError("similarity estimation needs two images of the same shape")
    lp_a, log_step = _log_polar_magnitude(a)
    lp_b, _ = _log_polar_magnitude(b)
    sx_lp, sy_lp, _ = phase_correlate_translation(lp_a, lp_b)

    # b scaled up by s maps spectral energy inward: lp_b(phi, logr) =
    # lp_a(phi - rot, logr + log s), so the radial shift carries -log s.
    rotation = sy_lp * (np.pi / LOG_POLAR_ANGLES)
    scale = float(np.exp(-sx_lp * log_step))

    center = ((a.shape[1] - 1) / 2.0, (a.shape[0] - 1) / 2.0)
    best: AlignmentResult | None = None
    for rot in (rotation, rotation - np.pi if rotation > 0 else rotation + np.pi):
        t_rs = SimilarityTransform.about_center(scale, rot, (0.0, 0.0), center)
        rotated, _ = warp(a, t_rs)
        try:
            tx, ty, peak = phase_correlate_translation(rotated, b)
        except DegenerateInputError:
            continue
        full = SimilarityTransform(1.0, 0.0, tx, ty).compose(t_rs)
        if best is None or peak > best.peak_response:
            best = AlignmentResult(full, peak, refined=False)
    if best is None or best.peak_response < PEAK_ACCEPT_THRESHOLD:
        got = 0.0 if best is None else best.peak_response
        raise AlignmentFailedError(
            f"phase correlation peak {got:.4f} below threshold {PEAK_ACCEPT_THRESHOLD}"
        )
    if not (SCALE_BOUNDS[0] <= best.transform.scale <= SCALE_BOUNDS[1]):
        raise AlignmentFailedError(f"estimated scale {best.transform.scale:.3f} out of bounds")
    return best


def _prep_objective_image(img: np.ndarray, gradient: bool) -> np.ndarray:
    if gradient:
        gy, gx = np.gradient(img)
        img = np.hypot(gx, gy)
    std = img.std()
    if std == 0.0:
        raise DegenerateInputError("constant image in alignment objective")
    return (img - img.mean()) / std


# A search over unrelated content still scrapes up ~0.02 of NCC from
# noise, but never reaches a meaningful correlation level. A refinement
# only counts when it both improves on the init and lands at an NCC that
# indicates actual shared structure.
MIN_REFINE_GAIN = 1e-6
MIN_REFINE_NCC = 0.1


def refine_alignment(
    test,
    template,
    init: SimilarityTransform,
    gradient: bool = False,
    region: tuple[int, int, int, int] | None = None,
    max_evals: int = 160,
) -> tuple[SimilarityTransform, bool]:
    """Two-pass direct-search polish of a similarity estimate.

    Maximizes zero-mean NCC between warp(test, t) and the template over
    valid pixels (optionally restricted to a [r0, r1, c0, c1] row/col
    region, optionally on gradient-magnitude images). The second simplex
    pass repeats the search at a quarter of the first pass's radius, so
    the objective never worsens between passes. When neither pass gains
    materially over the initial objective the init comes back unchanged
    with refined=False.
    """
    test_p = _prep_objective_image(_image_of(test), gradient)
    tmpl_p = _prep_objective_image(_image_of(template), gradient)
    if region is not None:
        r0, r1, c0, c1 = region
        if not (0 <= r0 < r1 <= tmpl_p.shape[0] and 0 <= c0 < c1 <= tmpl_p.shape[1]):
            raise ParameterError(f"objective region {region} outside image bounds")
    else:
        r0, r1, c0, c1 = 0, tmpl_p.shape[0], 0, tmpl_p.shape[1]
    tmpl_sub = tmpl_p[r0:r1, c0:c1]
    xx, yy = np.meshgrid(
        np.arange(c0, c1, dtype=np.float64), np.arange(r0, r1, dtype=np.float64)
    )
    h_in, w_in = test_p.shape

    center = ((tmpl_p.shape[1] - 1) / 2.0, (tmpl_p.shape[0] - 1) / 2.0)
    d0 = init.center_shift(center)
    x0 = np.asarray([np.log(init.scale), init.rotation, d0[0], d0[1]])

    def build(x):
        return SimilarityTransform.about_center(
            float(np.exp(x[0])), float(x[1]), (float(x[2]), float(x[3])), center
        )

    def objective(x):
        inv = build(x).inverse()
        c, s = np.cos(inv.rotation), np.sin(inv.rotation)
        sx = inv.scale * (c * xx - s * yy) + inv.tx
        sy = inv.scale * (s * xx + c * yy) + inv.ty
        valid = (sx >= 0.0) & (sx <= w_in - 1.0) & (sy >= 0.0) & (sy <= h_in - 1.0)
        if valid.sum() < 64:
            return np.inf
        warped = ndimage.map_coordinates(test_p, [sy, sx], order=1, mode="constant", cval=0.0)
        w = warped[valid]
        t = tmpl_sub[valid]
        ws, ts = w.std(), t.std()
        if ws == 0.0 or ts == 0.0:
            return np.inf
        return -float(np.mean((w - w.mean()) / ws * ((t - t.mean()) / ts)))

    f0 = objective(x0)
    if np.isnan(f0):
        raise ParameterError("non-finite alignment objective at the initial estimate")

    radius = np.asarray([np.log(1.02), np.deg2rad(2.0), 4.0, 4.0])
    best_x, best_f = x0, f0
    for _ in range(2):
        simplex = np.vstack([best_x] + [best_x + radius * np.eye(4)[i] for i in range(4)])
        res = optimize.minimize(
            objective,
            best_x,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "maxfev": max_evals,
                "xatol": 1e-4,
                "fatol": 1e-10,
            },
        )
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
        radius = radius / 4.0

    if best_f < f0 - MIN_REFINE_GAIN and -best_f >= MIN_REFINE_NCC:
        return build(best_x), True
    return init, False


def align_clip(
    clip: VideoClip,
    template: np.ndarray,
    gradient: bool = False,
    region: tuple[int, int, int, int] | None = None,
) -> tuple[VideoClip, AlignmentResult]:
    """Register a clip to a template: estimate once, apply to every frame.

    The transform is estimated from frame 0 only (coarse phase correlation
    plus NCC refinement) and the single result is warped onto all frames,
    so per-frame light changes cannot perturb the geometry.
    """
    coarse = phase_correlate_similarity(clip.frames[0].pixels, template)
    refined_t, improved = refine_alignment(
        clip.frames[0].pixels, template, coarse.transform, gradient=gradient, region=region
    )
    result = AlignmentResult(refined_t, coarse.peak_response, refined=improved)
    out_frames = [warp_frame(f, refined_t) for f in clip.frames]
    aligned = VideoClip(out_frames, clip.chip_id, clip.clip_id)
    return aligned, result
