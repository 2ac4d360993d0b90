"""From captured frames to comparable features, and benchmark scoring.

The featurizer is streaming: frames are consumed one at a time, reduced
to their brightest-point sets, and dropped. A full default benchmark
touches thousands of frames; holding point sets instead of images keeps
it in tens of megabytes.

`Benchmark` packages featurized clips behind the scoring interface the
evaluation stage expects: pairwise frame-score matrices are computed
once per clip pair and cached, so resampling repeats only index into
them.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from .config import PipelineConfig
from .errors import AlignmentFailedError, ParameterError
from .model import Frame, VideoClip
from .registration import (
    AlignmentResult,
    phase_correlate_similarity,
    refine_alignment,
    warp,
)
from .specular import (
    RegionMask,
    SpecularPointSet,
    build_mask,
    bundle_from_scores,
    full_mask,
    observed_specular_points,
    pairwise_score_matrix,
)

MASK_ARMS = ("none", "detailed", "edge", "both")


def mask_arms(template_pixels, cfg: PipelineConfig, arms=("both",)) -> dict[str, RegionMask]:
    """Build the requested masking variants from one chip's template.

    "none" keeps everything, "detailed" removes only detected markings,
    "edge" removes only the border margin, "both" applies the configured
    mask (margin plus markings). A text threshold of 0 disables the
    marking detector, which is how the edge-only arm is produced.
    """
    template_pixels = np.asarray(template_pixels)
    m = cfg.mask
    out: dict[str, RegionMask] = {}
    for arm in arms:
        if arm == "none":
            out[arm] = full_mask(template_pixels.shape)
        elif arm == "detailed":
            out[arm] = build_mask(template_pixels, 0, True, m.text_threshold)
        elif arm == "edge":
            out[arm] = build_mask(template_pixels, m.edge_margin_px, True, 0.0)
        elif arm == "both":
            out[arm] = build_mask(template_pixels, m.edge_margin_px, m.detailed, m.text_threshold)
        else:
            raise ParameterError(f"unknown mask arm {arm!r}; expected one of {MASK_ARMS}")
    return out


def estimate_alignment(frame_pixels, template_pixels, cfg: PipelineConfig) -> AlignmentResult:
    """Register one captured frame against the enrollment template.

    The coarse stage sees a median-filtered copy of the frame: saturated
    dot-like artifacts are near-impulses and would otherwise flatten the
    correlation peak, while the diffuse structure the registration runs
    on passes through a 3x3 median untouched. The refinement stage works
    on the raw frame.
    """
    reg = cfg.registration
    frame_pixels = np.asarray(frame_pixels)
    coarse = phase_correlate_similarity(
        median_filter(frame_pixels, size=3), template_pixels
    )
    if coarse.peak_response < reg.peak_threshold:
        raise AlignmentFailedError(
            f"correlation peak {coarse.peak_response:.4f} below configured "
            f"threshold {reg.peak_threshold}"
        )
    if not reg.refine:
        return coarse
    # The refine window sits in the lower-central part of the die: chip
    # markings (and their unstable gloss) live in the upper band by lot
    # layout, and the objective is much better behaved without them.
    rows, cols = np.asarray(template_pixels).shape
    mr = max(round(rows * reg.refine_region_frac), round(rows * 0.42))
    mc = round(cols * reg.refine_region_frac)
    region = (mr, rows - round(rows * reg.refine_region_frac), mc, cols - mc)
    refined, improved = refine_alignment(
        frame_pixels,
        template_pixels,
        coarse.transform,
        gradient=reg.gradient,
        region=region,
        max_evals=reg.max_evals,
    )
    return AlignmentResult(refined, coarse.peak_response, refined=improved)


def featurize_frames(
    frames,
    template_pixels,
    masks: dict[str, RegionMask],
    cfg: PipelineConfig,
    n_points: int | None = None,
) -> tuple[dict[str, list[SpecularPointSet]], AlignmentResult]:
    """Reduce a stream of frames to per-mask point sets.

    The geometry is estimated from the first frame only and applied to
    every frame: the light moves between frames, the chip does not.
    Accepts any iterable of Frame; a VideoClip works as-is.
    """
    if isinstance(frames, VideoClip):
        frames = frames.frames
    n = cfg.specular.n_points if n_points is None else n_points
    sets: dict[str, list[SpecularPointSet]] = {arm: [] for arm in masks}
    alignment: AlignmentResult | None = None
    count = 0
    for frame in frames:
        pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame)
        if alignment is None:
            alignment = estimate_alignment(pixels, template_pixels, cfg)
        aligned, _ = warp(pixels, alignment.transform)
        for arm, mask in masks.items():
            sets[arm].append(observed_specular_points(aligned, mask, n, frame_id=count))
        count += 1
    if alignment is None:
        raise ParameterError("cannot featurize an empty frame stream")
    return sets, alignment


@dataclass
class FeatureClip:
    """One clip reduced to aligned point sets, one list per mask arm."""

    chip_id: str
    clip_id: str
    sets: dict[str, list[SpecularPointSet]]
    alignment: AlignmentResult

    def n_frames(self) -> int:
        return len(next(iter(self.sets.values())))


@dataclass
class Benchmark:
    """Featurized clips behind the evaluation scoring protocol.

    `score` draws the test-frame subset and then the reference-frame
    subset from a single generator seeded per comparison, then reads the
    scores out of the cached pairwise matrix. Statistic kinds "maxcorr"
    and "diffuse" need raw data; they are served by the optional loader
    callbacks and are considerably slower.
    """

    clips: list[FeatureClip]
    dims: tuple[int, int]
    sample_count: int = 10
    tau: float = 0.25
    arm: str = "both"
    clip_loader: object = None
    normmap_loader: object = None
    mask_of_chip: dict = field(default_factory=dict)
    _index: dict = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self._index = {(c.chip_id, c.clip_id): i for i, c in enumerate(self.clips)}
        if len(self._index) != len(self.clips):
            raise ParameterError("duplicate (chip_id, clip_id) in benchmark clips")

    def _sets(self, i: int) -> list[SpecularPointSet]:
        clip = self.clips[i]
        if self.arm not in clip.sets:
            raise ParameterError(f"clip {clip.chip_id}/{clip.clip_id} has no arm {self.arm!r}")
        return clip.sets[self.arm]

    def matrix(self, i: int, j: int) -> np.ndarray:
        """Full frame-by-frame score matrix between clips i and j (cached)."""
        key = (min(i, j), max(i, j), self.arm)
        m = self._cache.get(key)
        if m is None:
            a, b = key[0], key[1]
            m = pairwise_score_matrix(self._sets(a), self._sets(b), self.dims)
            self._cache[key] = m
        return m if i <= j else m.T

    def score(self, test, ref, kind: str, seed: int) -> float:
        return self.score_with_count(test, ref, kind, seed, None)

    def score_with_count(self, test, ref, kind: str, seed: int, count: int | None) -> float:
        it = self._index[(test.chip_id, test.clip_id)]
        ir = self._index[(ref.chip_id, ref.clip_id)]
        if kind == "maxcorr":
            return self._maxcorr(test, ref, count, seed)
        if kind == "diffuse":
            return self._diffuse(test, ref)
        m = self.matrix(it, ir)
        k = 1 if kind == "srm" else (self.sample_count if count is None else count)
        rng = np.random.default_rng(seed)
        rows = np.sort(rng.choice(m.shape[0], size=k, replace=False))
        cols = np.sort(rng.choice(m.shape[1], size=k, replace=False))
        sub = m[np.ix_(rows, cols)]
        if kind == "srm":
            return float(sub[0, 0])
        if kind == "tmax":
            return float(sub.max())
        if kind == "trobust":
            return bundle_from_scores(sub.ravel(), self.tau).t_robust
        raise ParameterError(f"unknown statistic kind {kind!r}")

    def _maxcorr(self, test, ref, count: int | None, seed: int) -> float:
        if self.clip_loader is None:
            raise ParameterError("maxcorr scoring needs a clip loader")
        from .specular import raw_frame_max_correlation

        mask = self.mask_of_chip.get(ref.chip_id)
        if mask is None:
            raise ParameterError(f"no mask stored for chip {ref.chip_id}")
        return raw_frame_max_correlation(
            self.clip_loader(test.chip_id, test.clip_id),
            self.clip_loader(ref.chip_id, ref.clip_id),
            mask,
            self.sample_count if count is None else count,
            seed,
        )

    def _diffuse(self, test, ref) -> float:
        if self.normmap_loader is None:
            raise ParameterError("diffuse scoring needs a norm-map loader")
        from .diffuse import normmap_correlation

        a = self.normmap_loader(test.chip_id, test.clip_id)
        b = self.normmap_loader(ref.chip_id, ref.clip_id)
        cx = normmap_correlation(a, b, "x")
        cy = normmap_correlation(a, b, "y")
        return 0.5 * (cx + cy)


@dataclass
class CountView:
    """The same benchmark scored with an overridden per-pair sample count."""

    base: Benchmark
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ParameterError(f"sample count must be >= 1, got {self.count}")
        self.clips = self.base.clips

    def score(self, test, ref, kind: str, seed: int) -> float:
        return self.base.score_with_count(test, ref, kind, seed, self.count)


def _featurize_one(args):
    frames, template, masks, cfg, n_points, chip_id, clip_id = args
    sets, alignment = featurize_frames(frames, template, masks, cfg, n_points)
    return FeatureClip(chip_id, clip_id, sets, alignment)


def build_benchmark(
    cfg: PipelineConfig,
    n_chips: int,
    clips_per_chip: int,
    master_seed: int,
    arms=("both",),
    n_points: int | None = None,
    threads: int = 1,
) -> Benchmark:
    """Simulate, capture and featurize a benchmark fully in memory.

    Chips are processed one at a time; within a chip, clips can be
    featurized in parallel. Results are deterministic for a given seed
    regardless of thread count.
    """
    from .simulate import build_chip, capture_frames, clip_label

    if n_chips < 2 or clips_per_chip < 1:
        raise ParameterError("a benchmark needs at least two chips")
    clips: list[FeatureClip] = []
    masks_by_chip: dict[str, RegionMask] = {}
    primary = arms[0]
    for i in range(n_chips):
        assets = build_chip(cfg, master_seed, i)
        masks = mask_arms(assets.template.pixels, cfg, arms)
        masks_by_chip[assets.chip_id] = masks[primary]
        jobs = [
            (
                capture_frames(assets, cfg, master_seed, j),
                assets.template.pixels,
                masks,
                cfg,
                n_points,
                assets.chip_id,
                clip_label(j),
            )
            for j in range(clips_per_chip)
        ]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                clips.extend(pool.map(_featurize_one, jobs))
        else:
            clips.extend(map(_featurize_one, jobs))
    return Benchmark(
        clips,
        cfg.render.dims,
        sample_count=cfg.specular.sample_count,
        tau=cfg.specular.tau,
        arm=primary,
        mask_of_chip=masks_by_chip,
    )
