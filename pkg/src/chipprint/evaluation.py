"""Matched/unmatched evaluation: pair enumeration, PDF fits, EER solvers.

Scores from many clip pairs are labeled matched (same chip, different
clips) or unmatched (different chips) and reduced to equal-error rates
three ways: Laplace fit, Gaussian fit, and an empirical threshold sweep.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateInputError, ParameterError
from .seeds import derive_seed as _derive_seed

STATISTIC_KINDS = ("srm", "tmax", "trobust", "maxcorr", "diffuse")
LABELS = ("matched", "unmatched")
PDF_FAMILIES = ("laplace", "gaussian")
SCALE_FLOOR = 1e-9
EER_TOLERANCE = 1e-10


@dataclass
class ScoreSample:
    """One scored clip comparison."""

    value: float
    label: str
    pair: tuple = (("", ""), ("", ""))
    statistic_kind: str = "trobust"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ParameterError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.statistic_kind not in STATISTIC_KINDS:
            raise ParameterError(f"unknown statistic kind {self.statistic_kind!r}")
        (t_chip, t_clip), (r_chip, r_clip) = self.pair
        if t_chip and r_chip:
            if t_chip == r_chip and t_clip == r_clip:
                raise ParameterError("a clip is never scored against itself")
            expect = "matched" if t_chip == r_chip else "unmatched"
            if self.label != expect:
                raise ParameterError(
                    f"label {self.label!r} inconsistent with pair {self.pair}"
                )


@dataclass
class FittedPDF:
    """Two-parameter location/scale fit of one score population."""

    family: str
    location: float
    scale: float

    def __post_init__(self):
        if self.family not in PDF_FAMILIES:
            raise ParameterError(f"family must be one of {PDF_FAMILIES}")
        if not (np.isfinite(self.location) and np.isfinite(self.scale)):
            raise ParameterError("fit parameters must be finite")
        if self.scale <= 0:
            raise ParameterError(f"scale must be > 0, got {self.scale}")

    def _dist(self):
        cls = stats.laplace if self.family == "laplace" else stats.norm
        return cls(loc=self.location, scale=self.scale)

    def pdf(self, x):
        return self._dist().pdf(x)

    def cdf(self, x):
        return self._dist().cdf(x)


def _ids(clip) -> tuple[str, str]:
    if hasattr(clip, "chip_id"):
        return (clip.chip_id, clip.clip_id)
    chip, clip_id = clip
    return (str(chip), str(clip_id))


def enumerate_pairs(clips) -> list[tuple]:
    """All unordered clip pairs with matched/unmatched labels.

    Matched pairs compare two different clips of the same chip; unmatched
    pairs cross chips. A clip is never paired with itself. Requires at
    least two chips and at least two clips of every chip.
    """
    clips = list(clips)
    ids = [_ids(c) for c in clips]
    if len(set(ids)) != len(ids):
        raise ParameterError("duplicate (chip_id, clip_id) in dataset")
    per_chip = {}
    for chip, _ in ids:
        per_chip[chip] = per_chip.get(chip, 0) + 1
    if len(per_chip) < 2:
        raise DegenerateInputError("need at least 2 chips for unmatched pairs")
    if min(per_chip.values()) < 2:
        raise DegenerateInputError("need at least 2 clips per chip for matched pairs")
    out = []
    for i in range(len(clips)):
        for j in range(i + 1, len(clips)):
            label = "matched" if ids[i][0] == ids[j][0] else "unmatched"
            out.append((clips[i], clips[j], label))
    return out


def fit_pdf(values, family: str) -> FittedPDF:
    """Fit a Laplace (median / mean absolute deviation) or Gaussian
    (mean / population std) to the values; scale floored at 1e-9."""
    if family not in PDF_FAMILIES:
        raise ParameterError(f"family must be one of {PDF_FAMILIES}")
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise DegenerateInputError("cannot fit a PDF to an empty sample")
    if not np.isfinite(vals).all():
        raise ParameterError("non-finite score values")
    if family == "laplace":
        loc = float(np.median(vals))
        scale = float(np.abs(vals - loc).mean())
    else:
        loc = float(vals.mean())
        scale = float(vals.std(ddof=0))
    return FittedPDF(family=family, location=loc, scale=max(scale, SCALE_FLOOR))


def eer_parametric(matched: FittedPDF, unmatched: FittedPDF) -> tuple[float, float]:
    """Equal error rate of two fitted score distributions.

    Accept iff score > threshold; FPR(t) = 1 - CDF_unmatched(t) and
    FNR(t) = CDF_matched(t) cross exactly once, found by bisection until
    |FPR - FNR| < 1e-10. A matched location below the unmatched one means
    the decision sense is flipped; the roles are swapped so the returned
    EER still describes the best same-form rule.
    """
    if matched.location < unmatched.location:
        matched, unmatched = unmatched, matched
    span = 60.0 * max(matched.scale, unmatched.scale)
    lo = unmatched.location - span
    hi = matched.location + span

    def gap(t):
        fpr = 1.0 - unmatched.cdf(t)
        fnr = matched.cdf(t)
        return fpr - fnr, fpr, fnr

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g, fpr, fnr = gap(mid)
        if abs(g) < EER_TOLERANCE or mid in (lo, hi):
            break
        if g > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (fpr + fnr), mid


def _split_values(samples) -> tuple[np.ndarray, np.ndarray]:
    matched, unmatched = [], []
    for s in samples:
        (matched if s.label == "matched" else unmatched).append(s.value)
    if not matched or not unmatched:
        raise DegenerateInputError("need both matched and unmatched samples")
    return np.asarray(matched, dtype=np.float64), np.asarray(unmatched, dtype=np.float64)


def eer_empirical(samples) -> tuple[float, float]:
    """Threshold sweep over the sample values themselves.

    Accept iff score > threshold. Returns ((FPR + FNR)/2, threshold) at
    the threshold minimizing |FPR - FNR|, smallest threshold on ties.
    """
    matched, unmatched = _split_values(samples)
    thresholds = np.unique(np.concatenate([matched, unmatched]))
    m_sorted = np.sort(matched)
    u_sorted = np.sort(unmatched)
    fnr = np.searchsorted(m_sorted, thresholds, side="right") / matched.size
    fpr = (unmatched.size - np.searchsorted(u_sorted, thresholds, side="right")) / unmatched.size
    i = int(np.argmin(np.abs(fpr - fnr)))  # first occurrence = smallest threshold
    return 0.5 * (fpr[i] + fnr[i]), float(thresholds[i])


def derive_seed(base_seed: int, test_id, ref_id, repeat: int) -> int:
    """Stable per-(pair, repeat) seed for frame resampling."""
    return _derive_seed(base_seed, "pair", *test_id, *ref_id, repeat)


def bootstrap_scores(dataset, statistic_kind: str, repeats: int = 50, base_seed: int = 0):
    """Score every clip pair `repeats` times with fresh frame samples.

    The dataset supplies `.clips` and `.score(test, ref, kind, seed)`.
    Seeds derive from (base_seed, pair identity, repeat index) so any
    single comparison is reproducible in isolation.
    """
    if statistic_kind not in STATISTIC_KINDS:
        raise ParameterError(f"unknown statistic kind {statistic_kind!r}")
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    out = []
    for test, ref, label in enumerate_pairs(dataset.clips):
        t_id, r_id = _ids(test), _ids(ref)
        for rep in range(repeats):
            seed = derive_seed(base_seed, t_id, r_id, rep)
            value = dataset.score(test, ref, statistic_kind, seed)
            out.append(
                ScoreSample(
                    value=float(value),
                    label=label,
                    pair=(t_id, r_id),
                    statistic_kind=statistic_kind,
                )
            )
    return out


@dataclass
class EvalReport:
    """Everything one benchmark run produces."""

    samples: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    eer_laplace: float = 0.5
    eer_gaussian: float = 0.5
    eer_empirical: float = 0.5
    threshold_laplace: float = 0.0
    threshold_gaussian: float = 0.0
    threshold_at_eer: float = 0.0
    statistic_kind: str = "trobust"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("eer_laplace", "eer_gaussian", "eer_empirical"):
            v = getattr(self, name)
            if not (0.0 <= v <= 0.5 + 1e-12):
                raise ParameterError(f"{name} = {v} outside [0, 0.5]")


def build_report(samples, statistic_kind: str = None, config: dict = None) -> EvalReport:
    """Fit both families to both populations and solve all three EERs."""
    samples = list(samples)
    matched, unmatched = _split_values(samples)
    if statistic_kind is None:
        kinds = {s.statistic_kind for s in samples}
        statistic_kind = kinds.pop() if len(kinds) == 1 else "trobust"
    fits = {}
    for label, vals in (("matched", matched), ("unmatched", unmatched)):
        for family in PDF_FAMILIES:
            fits[f"{label}_{family}"] = fit_pdf(vals, family)
    eer_lap, thr_lap = eer_parametric(fits["matched_laplace"], fits["unmatched_laplace"])
    eer_gau, thr_gau = eer_parametric(fits["matched_gaussian"], fits["unmatched_gaussian"])
    eer_emp, thr_emp = eer_empirical(samples)
    return EvalReport(
        samples=samples,
        fits=fits,
        eer_laplace=min(eer_lap, 0.5),
        eer_gaussian=min(eer_gau, 0.5),
        eer_empirical=min(eer_emp, 0.5),
        threshold_laplace=thr_lap,
        threshold_gaussian=thr_gau,
        threshold_at_eer=thr_emp,
        statistic_kind=statistic_kind,
        config=dict(config or {}),
    )
