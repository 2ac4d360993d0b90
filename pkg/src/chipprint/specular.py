"""Specular-point fingerprints and the robust matching statistics.

A frame's fingerprint contribution is the set of its N brightest masked
pixels. Two frames score by counting points that survive in the other
frame's 3x3 neighborhoods, symmetrized; a clip pair aggregates the
pairwise scores of sampled frames into a max score gated by the fraction
of exact zeros.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse

from .errors import (
    DegenerateInputError,
    IncompatibleFingerprintsError,
    MaskError,
    ParameterError,
)
from .model import Frame, VideoClip

DEFAULT_TAU = 0.25
DEFAULT_N_POINTS = 100
DEFAULT_SAMPLE_COUNT = 10
DEFAULT_TEXT_THRESHOLD = 0.7


@dataclass
class RegionMask:
    """Usable-background selection for one template geometry."""

    include: np.ndarray
    edge_margin_px: int = 0
    detailed: bool = True

    def __post_init__(self):
        self.include = np.asarray(self.include, dtype=bool)
        if self.include.ndim != 2:
            raise ParameterError("mask must be a 2-D boolean grid")
        if self.edge_margin_px < 0:
            raise ParameterError(f"edge margin must be >= 0, got {self.edge_margin_px}")

    @property
    def dims(self) -> tuple[int, int]:
        return self.include.shape

    @property
    def count(self) -> int:
        return int(self.include.sum())

    def digest(self) -> str:
        """Short content hash identifying mask geometry and selection."""
        h = hashlib.sha256()
        h.update(f"{self.include.shape[0]}x{self.include.shape[1]}:".encode("ascii"))
        h.update(np.packbits(self.include).tobytes())
        return h.hexdigest()[:16]


def full_mask(dims: tuple[int, int]) -> RegionMask:
    """Mask accepting every pixel (the no-masking ablation arm)."""
    return RegionMask(np.ones(dims, dtype=bool), edge_margin_px=0, detailed=False)


def _largest_clear_rectangle(usable: np.ndarray) -> np.ndarray:
    """Largest all-true axis-aligned rectangle, histogram-stack method."""
    rows, cols = usable.shape
    heights = np.zeros(cols, dtype=np.int64)
    best_area = 0
    best = (0, 0, 0, 0)  # r0, r1, c0, c1 half-open
    for r in range(rows):
        heights = np.where(usable[r], heights + 1, 0)
        stack = []  # (start_col, height)
        for c in range(cols + 1):
            h = heights[c] if c < cols else 0
            start = c
            while stack and stack[-1][1] >= h:
                sc, sh = stack.pop()
                area = sh * (c - sc)
                if area > best_area:
                    best_area = area
                    best = (r + 1 - sh, r + 1, sc, c)
                start = sc
            if not stack or h > 0:
                stack.append((start, h))
    out = np.zeros_like(usable)
    r0, r1, c0, c1 = best
    out[r0:r1, c0:c1] = True
    return out


def build_mask(
    template,
    edge_margin_px: int,
    detailed: bool,
    text_threshold: float = DEFAULT_TEXT_THRESHOLD,
) -> RegionMask:
    """Select usable background pixels of a registered template.

    Pixels closer than edge_margin_px to the frame border are dropped.
    Printed markings are detected as pixels darker than text_threshold
    times the median intensity, grown by two pixels. With detailed=True
    the mask keeps every non-marking interior pixel (including interline
    background); with detailed=False it keeps only the largest clear
    rectangle. Raises MaskError when nothing usable remains.
    """
    img = np.asarray(template.pixels if isinstance(template, Frame) else template, dtype=np.float64)
    if img.ndim != 2:
        raise ParameterError("template must be a 2-D image")
    if edge_margin_px < 0:
        raise ParameterError(f"edge margin must be >= 0, got {edge_margin_px}")
    rows, cols = img.shape

    interior = np.zeros((rows, cols), dtype=bool)
    if 2 * edge_margin_px < rows and 2 * edge_margin_px < cols:
        interior[edge_margin_px : rows - edge_margin_px, edge_margin_px : cols - edge_margin_px] = True
    if not interior.any():
        raise MaskError(f"edge margin {edge_margin_px} px leaves no interior in {rows}x{cols}")

    med = float(np.median(img))
    text = img < text_threshold * med
    if text.any():
        text = ndimage.binary_dilation(text, structure=np.ones((3, 3), dtype=bool), iterations=2)
    usable = interior & ~text

    include = usable if detailed else _largest_clear_rectangle(usable)
    if not include.any():
        raise MaskError("no usable background pixels after masking")
    return RegionMask(include=include, edge_margin_px=edge_margin_px, detailed=detailed)


@dataclass
class SpecularPointSet:
    """The N brightest masked pixels of one frame, canonically ordered."""

    points: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ParameterError("points must be an (n, 2) array of (row, col)")
        if pts.shape[0] == 0:
            raise ParameterError("empty point set")
        if (pts < 0).any():
            raise ParameterError("negative pixel coordinates")
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        pts = pts[order]
        if pts.shape[0] > 1 and (np.diff(pts, axis=0) == 0).all(axis=1).any():
            raise ParameterError("duplicate points in set")
        self.points = pts

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def observed_specular_points(f, mask: RegionMask, n_points: int, frame_id=None) -> SpecularPointSet:
    """The n_points brightest pixels under the mask.

    Every returned intensity is >= every excluded masked intensity; exact
    ties at the cutoff resolve to the lexicographically smallest (row,
    col) coordinates.
    """
    pixels = np.asarray(f.pixels if isinstance(f, Frame) else f)
    if pixels.shape != mask.dims:
        raise ParameterError(f"frame dims {pixels.shape} differ from mask dims {mask.dims}")
    if n_points < 1:
        raise ParameterError(f"n_points must be >= 1, got {n_points}")
    total = mask.count
    if n_points > total:
        raise MaskError(f"requested {n_points} points but mask has only {total} pixels")

    rs, cs = np.nonzero(mask.include)  # row-major, i.e. lexicographic
    vals = pixels[rs, cs]
    cutoff = np.partition(vals, total - n_points)[total - n_points]
    above = vals > cutoff
    n_above = int(above.sum())
    at = np.flatnonzero(vals == cutoff)[: n_points - n_above]
    keep = np.concatenate([np.flatnonzero(above), at])
    pts = np.stack([rs[keep], cs[keep]], axis=1)
    if frame_id is None:
        frame_id = f.t if isinstance(f, Frame) else 0
    return SpecularPointSet(points=pts, frame_id=int(frame_id))


def _point_rows(s) -> np.ndarray:
    if isinstance(s, SpecularPointSet):
        return s.points
    return np.asarray(s, dtype=np.int64)


def count_robust_points(test_set, ref_set) -> int:
    """n(X_t, X_r): test points with a reference point in their 3x3 block."""
    test = _point_rows(test_set)
    ref = _point_rows(ref_set)
    occupied = {(int(r), int(c)) for r, c in ref}
    count = 0
    for r, c in test:
        r, c = int(r), int(c)
        if any(
            (r + dr, c + dc) in occupied
            for dr in (-1, 0, 1)
            for dc in (-1, 0, 1)
        ):
            count += 1
    return count


def robust_matching_score(test_set, ref_set) -> float:
    """Symmetric robust matching score; integer or half-integer in [0, N]."""
    return (count_robust_points(test_set, ref_set) + count_robust_points(ref_set, test_set)) / 2.0


def sample_frames(clip, count: int, seed: int) -> list[int]:
    """Uniform sample of frame indices without replacement, sorted."""
    length = clip if isinstance(clip, int) else len(clip)
    if count < 1:
        raise ParameterError(f"sample count must be >= 1, got {count}")
    if count > length:
        raise ParameterError(f"cannot sample {count} frames from a {length}-frame clip")
    rng = np.random.default_rng(seed)
    idx = rng.choice(length, size=count, replace=False)
    return sorted(int(i) for i in idx)


@dataclass
class Fingerprint:
    """Verification payload: point sets for the sampled frames of a clip."""

    chip_id: str
    clip_id: str
    frames: list[SpecularPointSet] = field(default_factory=list)
    mask_digest: str = ""
    n_points: int = 0
    sample_seed: int = 0

    def __post_init__(self):
        if not self.frames:
            raise ParameterError("fingerprint needs at least one frame point set")
        for s in self.frames:
            if s.n_points != self.n_points:
                raise ParameterError(
                    f"frame {s.frame_id} has {s.n_points} points, expected {self.n_points}"
                )

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def fingerprint_from_clip(
    clip: VideoClip,
    mask: RegionMask,
    n_points: int = DEFAULT_N_POINTS,
    count: int = DEFAULT_SAMPLE_COUNT,
    seed: int = 0,
) -> Fingerprint:
    """Sample frames from an aligned clip and extract their point sets."""
    indices = sample_frames(clip, count, seed)
    sets = [
        observed_specular_points(clip.frames[i], mask, n_points, frame_id=i) for i in indices
    ]
    return Fingerprint(
        chip_id=clip.chip_id,
        clip_id=clip.clip_id,
        frames=sets,
        mask_digest=mask.digest(),
        n_points=n_points,
        sample_seed=seed,
    )


@dataclass
class ScoreBundle:
    """All K pairwise scores of one comparison plus the derived statistics."""

    raw_scores: np.ndarray
    t_max: float
    zero_ratio: float
    t_robust: float
    tau: float

    def __post_init__(self):
        self.raw_scores = np.asarray(self.raw_scores, dtype=np.float64)


def bundle_from_scores(raw_scores, tau: float = DEFAULT_TAU) -> ScoreBundle:
    """Aggregate raw pairwise scores into max / zero-ratio / robust form."""
    raw = np.asarray(raw_scores, dtype=np.float64).ravel()
    if raw.size == 0:
        raise ParameterError("empty score list")
    t_max = float(raw.max())
    zero_ratio = float((raw == 0.0).sum() / raw.size)
    t_robust = t_max if zero_ratio < tau else 0.0
    return ScoreBundle(
        raw_scores=raw, t_max=t_max, zero_ratio=zero_ratio, t_robust=t_robust, tau=tau
    )


def score_bundle(test_fp: Fingerprint, ref_fp: Fingerprint, tau: float = DEFAULT_TAU) -> ScoreBundle:
    """Score two fingerprints over all frame pairs.

    Fingerprints must agree on N. Mask digests are carried for
    diagnostics but deliberately not enforced: comparisons across chips
    (each enrolled under its own template mask) must still produce a
    score so impostors can be rejected rather than errored.
    """
    if test_fp.n_points != ref_fp.n_points:
        raise IncompatibleFingerprintsError(
            f"point counts differ: {test_fp.n_points} vs {ref_fp.n_points}"
        )
    raw = [
        robust_matching_score(t, r) for t in test_fp.frames for r in ref_fp.frames
    ]
    return bundle_from_scores(np.asarray(raw), tau)


def _indicator_matrices(sets, dims: tuple[int, int]) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Per-frame point indicators and their 3x3 dilations, as CSR rows."""
    rows, cols = dims
    size = rows * cols
    pt_r, pt_c, pt_frame = [], [], []
    dil_r, dil_c, dil_frame = [], [], []
    for i, s in enumerate(sets):
        pts = _point_rows(s)
        if (pts[:, 0] >= rows).any() or (pts[:, 1] >= cols).any():
            raise ParameterError("point coordinates outside the stated dims")
        pt_frame.append(np.full(pts.shape[0], i))
        pt_r.append(pts[:, 0])
        pt_c.append(pts[:, 1])
        nbr = (pts[:, None, :] + _NEIGHBOR_OFFSETS[None, :, :]).reshape(-1, 2)
        ok = (
            (nbr[:, 0] >= 0) & (nbr[:, 0] < rows) & (nbr[:, 1] >= 0) & (nbr[:, 1] < cols)
        )
        nbr = nbr[ok]
        flat = np.unique(nbr[:, 0] * cols + nbr[:, 1])
        dil_frame.append(np.full(flat.shape[0], i))
        dil_r.append(flat // cols)
        dil_c.append(flat % cols)

    def build(fr, rr, cc):
        fr = np.concatenate(fr)
        flat = np.concatenate(rr) * cols + np.concatenate(cc)
        data = np.ones(fr.shape[0], dtype=np.float64)
        return sparse.csr_matrix((data, (fr, flat)), shape=(len(sets), size))

    return build(pt_frame, pt_r, pt_c), build(dil_frame, dil_r, dil_c)


_NEIGHBOR_OFFSETS = np.array(
    [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)], dtype=np.int64
)


def pairwise_score_matrix(test_sets, ref_sets, dims: tuple[int, int]) -> np.ndarray:
    """All robust matching scores between two lists of point sets.

    Equivalent to looping robust_matching_score over every pair, but
    computed as two sparse indicator products: n(t_i, r_j) counts test
    points inside the dilated reference occupancy.
    """
    t_pts, t_dil = _indicator_matrices(test_sets, dims)
    r_pts, r_dil = _indicator_matrices(ref_sets, dims)
    n_tr = (t_pts @ r_dil.T).toarray()
    n_rt = (r_pts @ t_dil.T).toarray()
    return (n_tr + n_rt.T) / 2.0


def raw_frame_max_correlation(
    test_clip: VideoClip, ref_clip: VideoClip, mask: RegionMask, count: int, seed: int
) -> float:
    """Baseline statistic: max masked-pixel NCC over sampled frame pairs.

    Frame indices for the test clip and then the reference clip are drawn
    from one seeded generator, so the pairing is deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    idx_t = sorted(int(i) for i in rng.choice(len(test_clip), size=count, replace=False))
    idx_r = sorted(int(i) for i in rng.choice(len(ref_clip), size=count, replace=False))
    sel = mask.include

    def stack(clip, idx):
        vecs = np.stack([np.asarray(clip.frames[i].pixels, dtype=np.float64)[sel] for i in idx])
        vecs = vecs - vecs.mean(axis=1, keepdims=True)
        norms = np.linalg.norm(vecs, axis=1)
        if (norms == 0.0).any():
            raise DegenerateInputError("constant masked region in a sampled frame")
        return vecs / norms[:, None]

    a = stack(test_clip, idx_t)
    b = stack(ref_clip, idx_r)
    return float(np.clip((a @ b.T).max(), -1.0, 1.0))
