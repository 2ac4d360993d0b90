"""Synthetic chip lot generation.

One chip is a random rough surface plus optional printed markings; one
clip is a video capture of that chip under the sweeping light, seen
through a per-clip framing jitter and sensor noise. Everything is derived
from a single master seed, so a dataset regenerates byte-identically.

Markings are common-mode by construction: every chip of a lot carries the
same printed layout (same stencil), so any brightness structure they
produce is shared across chips instead of identifying one. The optional
glare mode adds a bright rounded-corner rim near the image border, again
identical for every chip. Both exist to exercise the masking stage.
"""

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig, RenderConfig
from .errors import ParameterError
from .formats import save_clip, write_heightmap, write_normmap, write_pgm, quantize_u16
from .model import (
    Frame,
    HeightMap,
    LightPose,
    NormMap,
    ReflectionParams,
    ScanPath,
    VideoClip,
)
from .registration import SimilarityTransform, warp
from .seeds import derive_seed, rng_for
from .surface import (
    add_capture_noise,
    generate_surface,
    render_point_light,
    render_scanner_pass,
)

# Quantization gain mapping unit-range float intensities into 16 bits.
# Fixed for the whole dataset so frames stay comparable across chips.
DEFAULT_GAIN = 5.0e4

# Stencil seeds: the marking layout and its print texture are properties
# of the lot, not of a chip, so they are module-level constants.
_LAYOUT_SEED = 0x1C81
_SPECKLE_SEED = 0x1C82


def chip_label(index: int) -> str:
    return f"chip{index:02d}"


def clip_label(index: int) -> str:
    return f"clip{index}"


def text_layout(dims: tuple[int, int]) -> np.ndarray:
    """Boolean mask of the printed marking rows, same for every chip.

    Two lines of blocky 5x4 glyphs in the upper part of the die. The
    layout depends only on the image dimensions, scaled so glyphs stay
    legible from 96 px up.
    """
    rows, cols = dims
    rng = np.random.default_rng(_LAYOUT_SEED)
    block = max(2, round(min(dims) * 5 / 512))
    out = np.zeros(dims, dtype=bool)
    for line in range(2):
        r0 = round(rows * (0.10 + 0.15 * line))
        c = round(cols * 0.10)
        limit = round(cols * 0.90)
        while c + 4 * block <= limit and r0 + 5 * block <= rows:
            glyph = rng.random((5, 4)) < 0.55
            tile = np.kron(glyph, np.ones((block, block), dtype=bool))
            out[r0 : r0 + 5 * block, c : c + 4 * block] |= tile
            c += 5 * block
    return out


def ink_speckle(dims: tuple[int, int], rng: np.random.Generator | None = None) -> np.ndarray:
    """Bright print-texture dots inside the marking area.

    Ink gloss is unstable: handling and wear move the glinting grains
    between captures, so each clip draws its own dot pattern (pass the
    clip's generator). Dot amplitudes are uniform in (0, 1]; the caller
    scales them by the configured marking gloss.
    """
    text = text_layout(dims)
    if rng is None:
        rng = np.random.default_rng(_SPECKLE_SEED)
    u = rng.random(dims)
    amp = rng.random(dims)
    return np.where(text & (u < 0.12), np.maximum(amp, 1e-3), 0.0).astype(np.float64)


def edge_glare(dims: tuple[int, int], phase: float = 0.7) -> np.ndarray:
    """Rounded-corner bright rim just inside the image border.

    The rim follows the isoline of a rounded-rectangle distance field, so
    it hugs the frame edge at a constant depth even around the corner
    arcs. Across the band it is Gaussian; along it the brightness is
    concentrated into six hot arcs with exponential shoulders, so the
    pixel count above any threshold grows gradually with the configured
    glare strength instead of the whole ring switching on at once.
    ``phase`` rotates the arcs, capturing how the rim highlights depend
    on the exact lamp and package pose of one capture session. Peak
    value 1; the caller scales by the configured glare strength.
    Every rim pixel stays within 12 px of the border at 512 px resolution
    (proportionally at other sizes), so a default edge margin removes the
    band completely, corners included.
    """
    rows, cols = dims
    s = min(dims) / 512.0
    depth, corner_r, sigma = 4.0 * s, 12.0 * s, 2.0 * s
    hx, hy = (cols - 1) / 2.0, (rows - 1) / 2.0
    y = np.arange(rows, dtype=np.float64)[:, None] - hy
    x = np.arange(cols, dtype=np.float64)[None, :] - hx
    px = np.abs(x) - (hx - corner_r)
    py = np.abs(y) - (hy - corner_r)
    outside = np.hypot(np.maximum(px, 0.0), np.maximum(py, 0.0))
    inside = np.minimum(np.maximum(px, py), 0.0)
    sdf = outside + inside - corner_r
    band = np.exp(-0.5 * ((sdf + depth) / sigma) ** 2)
    phi = np.arctan2(np.broadcast_to(y, (rows, cols)), np.broadcast_to(x, (rows, cols)))
    return band * np.exp(4.0 * (np.cos(6.0 * phi + phase) - 1.0))


@dataclass
class ChipAssets:
    """Everything fixed about one chip: geometry, markings, template."""

    chip_id: str
    height: HeightMap
    albedo: np.ndarray | None
    template: Frame
    center_mm: tuple[float, float]


def _albedo_map(cfg: RenderConfig) -> np.ndarray | None:
    if not cfg.markings:
        return None
    albedo = np.ones(cfg.dims, dtype=np.float64)
    albedo[text_layout(cfg.dims)] = cfg.marking_albedo
    return albedo


def build_chip(cfg: PipelineConfig, master_seed: int, chip_index: int) -> ChipAssets:
    """Generate one chip's surface, markings and enrollment template.

    The template is a diffuse-only render at the trajectory midpoint:
    markings appear dark in it, glints and glare do not appear at all,
    which is what the mask builder and the registration stage expect.
    """
    r = cfg.render
    chip_id = chip_label(chip_index)
    h = generate_surface(
        r.dims, r.pitch_um, r.amplitude_um, r.corr_length_px,
        seed=derive_seed(master_seed, "surface", chip_id),
    )
    w_mm, h_mm = h.extent_mm()
    center = (w_mm / 2.0, h_mm / 2.0)
    albedo = _albedo_map(r)
    diffuse = ReflectionParams(w_d=1.0, w_s=0.0, l=r.intensity)
    light = LightPose(r.trajectory().position(0.5, center))
    template = render_point_light(h, diffuse, light, albedo=albedo, dtype=np.float32)
    return ChipAssets(chip_id, h, albedo, template, center)


def canonical_frame(assets: ChipAssets, cfg: PipelineConfig, t: int) -> Frame:
    """Render frame t of the ideal (jitter-free, noise-free) capture."""
    r = cfg.render
    if not (0 <= t < r.n_frames):
        raise ParameterError(f"frame index {t} outside clip of {r.n_frames}")
    u = t / (r.n_frames - 1) if r.n_frames > 1 else 0.0
    light = LightPose(r.trajectory().position(u, assets.center_mm))
    return render_point_light(
        assets.height, r.reflection_params(), light, albedo=assets.albedo,
        t=t, dtype=np.float32,
    )


@dataclass
class ArtifactEpisode:
    """One additive artifact field active for a span of a clip's frames."""

    field: np.ndarray
    start: int
    stop: int

    def active(self, t: int) -> bool:
        return self.start <= t < self.stop


def _episode_window(n_frames: int, frac_max: float, shape: float, rng: np.random.Generator):
    """Draw a contiguous frame window covering ``frac_max * U**shape`` of a clip.

    Larger ``shape`` skews the draw toward short windows, so most
    sessions catch the artifact only briefly and a minority catch it for
    a long stretch of the sweep.
    """
    frac = frac_max * rng.uniform() ** shape
    length = int(round(frac * n_frames))
    start = int(rng.integers(0, n_frames - length + 1)) if length < n_frames else 0
    return start, start + length


def clip_artifacts(cfg: RenderConfig, rng: np.random.Generator) -> list[ArtifactEpisode]:
    """Session-dependent artifact episodes of one capture (possibly none).

    Edge glare and ink gloss are specular: they flare up only while the
    sweeping lamp passes the angles that fire them, so each is active
    for one contiguous window of the clip rather than throughout. The
    window span and placement are drawn per session, as are the glare
    phase and the gloss dot pattern; ``marking_gloss`` and
    ``glare_strength`` scale the brightness. Glare windows are drawn
    with a stronger skew toward short spans than gloss windows,
    mirroring how narrowly a rim reflection selects the lamp angle.
    """
    episodes = []
    if cfg.markings and cfg.marking_gloss > 0.0:
        level = cfg.marking_gloss * (0.7 + 0.3 * rng.uniform())
        field = level * ink_speckle(cfg.dims, rng)
        start, stop = _episode_window(cfg.n_frames, 0.5, 2.0, rng)
        episodes.append(ArtifactEpisode(field, start, stop))
    if cfg.glare_strength > 0.0:
        level = cfg.glare_strength * (0.7 + 0.3 * rng.uniform())
        field = level * edge_glare(cfg.dims, phase=rng.uniform(0.0, 2.0 * np.pi))
        start, stop = _episode_window(cfg.n_frames, 0.5, 3.0, rng)
        episodes.append(ArtifactEpisode(field, start, stop))
    return episodes


def jitter_transform(cfg: RenderConfig, rng: np.random.Generator) -> SimilarityTransform:
    """Draw one clip's framing misalignment (applied to every frame)."""
    rows, cols = cfg.dims
    shift = (rng.uniform(-cfg.jitter_px, cfg.jitter_px), rng.uniform(-cfg.jitter_px, cfg.jitter_px))
    rotation = np.deg2rad(rng.uniform(-cfg.jitter_deg, cfg.jitter_deg))
    scale = 1.0 + rng.uniform(-cfg.jitter_scale, cfg.jitter_scale)
    return SimilarityTransform.about_center(
        scale, float(rotation), shift, ((cols - 1) / 2.0, (rows - 1) / 2.0)
    )


def capture_frames(assets: ChipAssets, cfg: PipelineConfig, master_seed: int, clip_index: int):
    """Yield the captured frames of one clip, one at a time.

    Streaming keeps peak memory at a single frame; a full default clip
    held at once would be two orders of magnitude larger. The recorded
    light pose is the commanded one: the jitter moves the chip in frame,
    not the lamp. The sensor saturates at 1.0, so over-bright artifacts
    blow out to flat white instead of carrying unbounded energy into
    registration and feature extraction.
    """
    r = cfg.render
    clip_id = clip_label(clip_index)
    session = rng_for(master_seed, "session", assets.chip_id, clip_id)
    jitter = jitter_transform(r, session)
    episodes = clip_artifacts(r, session)
    for t in range(r.n_frames):
        frame = canonical_frame(assets, cfg, t)
        pixels = frame.pixels
        for episode in episodes:
            if episode.active(t):
                pixels = (pixels + episode.field).astype(np.float32)
        moved, _ = warp(pixels, jitter)
        captured = Frame(moved.astype(np.float32), frame.light, t)
        noisy = add_capture_noise(
            captured, r.noise_sigma,
            seed=derive_seed(master_seed, "noise", assets.chip_id, clip_id, str(t)),
        )
        yield Frame(np.clip(noisy.pixels, 0.0, 1.0), noisy.light, noisy.t)


def simulate_clip(assets: ChipAssets, cfg: PipelineConfig, master_seed: int, clip_index: int) -> VideoClip:
    """Materialize one captured clip (small configs and disk output)."""
    frames = list(capture_frames(assets, cfg, master_seed, clip_index))
    return VideoClip(frames, chip_id=assets.chip_id, clip_id=clip_label(clip_index))


_SCAN_DIRECTIONS = (0, 180, 90, 270)


def scan_normmap(assets: ChipAssets, cfg: PipelineConfig, master_seed: int, clip_index: int) -> NormMap:
    """Simulate the four scanner passes of one clip and estimate normals."""
    r = cfg.render
    w_mm, h_mm = assets.height.extent_mm()
    passes = []
    clip_id = clip_label(clip_index)
    for direction in _SCAN_DIRECTIONS:
        axis_extent = w_mm if direction in (0, 180) else h_mm
        path = ScanPath(span_mm=(-15.0, axis_extent + 15.0))
        frame = render_scanner_pass(
            assets.height, ReflectionParams(w_d=1.0, w_s=0.0, l=r.intensity),
            path, direction, albedo=assets.albedo,
        )
        frame = add_capture_noise(
            frame, r.scan_noise * float(frame.pixels.mean()),
            seed=derive_seed(master_seed, "scan", assets.chip_id, clip_id, str(direction)),
        )
        passes.append(frame.pixels)
    i0, i180, i90, i270 = passes
    from .diffuse import norm_map_from_scans

    return norm_map_from_scans(i0, i180, i90, i270, assets.height.pitch)


def simulate_dataset(
    cfg: PipelineConfig,
    n_chips: int,
    clips_per_chip: int,
    out_dir,
    master_seed: int,
) -> dict:
    """Write a full synthetic dataset to disk and return its manifest.

    Layout: one directory per chip holding the height map, the template
    image and one directory per clip; ``manifest.json`` at the root ties
    them together and records the generating config.
    """
    import json
    import os

    from .config import config_snapshot

    if n_chips < 1 or clips_per_chip < 1:
        raise ParameterError("need at least one chip and one clip per chip")
    os.makedirs(out_dir, exist_ok=True)
    chips = []
    for i in range(n_chips):
        assets = build_chip(cfg, master_seed, i)
        chip_dir = os.path.join(out_dir, assets.chip_id)
        os.makedirs(chip_dir, exist_ok=True)
        write_heightmap(os.path.join(chip_dir, "height.bin"), assets.height)
        write_pgm(
            os.path.join(chip_dir, "template.pgm"),
            quantize_u16(assets.template.pixels, DEFAULT_GAIN),
        )
        clip_entries = []
        for j in range(clips_per_chip):
            clip = simulate_clip(assets, cfg, master_seed, j)
            clip_dir = os.path.join(chip_dir, clip.clip_id)
            save_clip(clip_dir, clip, gain=DEFAULT_GAIN)
            entry = {
                "clip_id": clip.clip_id,
                "dir": f"{assets.chip_id}/{clip.clip_id}",
                "normmap": None,
            }
            if cfg.render.scans:
                nm = scan_normmap(assets, cfg, master_seed, j)
                nm_path = f"{assets.chip_id}/{clip.clip_id}_norm.bin"
                write_normmap(os.path.join(out_dir, nm_path), nm)
                entry["normmap"] = nm_path
            clip_entries.append(entry)
        chips.append(
            {
                "chip_id": assets.chip_id,
                "dir": assets.chip_id,
                "height": f"{assets.chip_id}/height.bin",
                "template": f"{assets.chip_id}/template.pgm",
                "clips": clip_entries,
            }
        )
    manifest = {
        "dataset": "chipprint-synthetic",
        "seed": master_seed,
        "gain": DEFAULT_GAIN,
        "frame_count": cfg.render.n_frames,
        "config": config_snapshot(cfg),
        "chips": chips,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest
