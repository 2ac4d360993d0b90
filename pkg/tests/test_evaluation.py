"""Pair enumeration, PDF fitting, and the three EER solvers."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from chipprint.errors import DegenerateInputError, ParameterError
from chipprint.evaluation import (
    EvalReport,
    FittedPDF,
    ScoreSample,
    bootstrap_scores,
    build_report,
    derive_seed,
    enumerate_pairs,
    eer_empirical,
    eer_parametric,
    fit_pdf,
)


def clip_stub(chip, clip):
    return SimpleNamespace(chip_id=chip, clip_id=clip)


def clip_grid(n_chips, n_clips):
    return [clip_stub(f"chip{c}", f"v{k}") for c in range(n_chips) for k in range(n_clips)]


def make_samples(matched_vals, unmatched_vals, kind="trobust"):
    out = [ScoreSample(value=float(v), label="matched", statistic_kind=kind) for v in matched_vals]
    out += [ScoreSample(value=float(v), label="unmatched", statistic_kind=kind) for v in unmatched_vals]
    return out


# ------------------------------------------------------------ enumeration


def test_enumerate_pairs_8x3():
    pairs = enumerate_pairs(clip_grid(8, 3))
    labels = [lbl for _, _, lbl in pairs]
    assert labels.count("matched") == 24
    assert labels.count("unmatched") == 252
    assert len(pairs) == 276


def test_enumerate_pairs_2x2_hand_check():
    clips = clip_grid(2, 2)
    pairs = enumerate_pairs(clips)
    as_ids = {
        ((a.chip_id, a.clip_id), (b.chip_id, b.clip_id)): lbl for a, b, lbl in pairs
    }
    assert len(pairs) == 6
    assert as_ids[("chip0", "v0"), ("chip0", "v1")] == "matched"
    assert as_ids[("chip1", "v0"), ("chip1", "v1")] == "matched"
    assert sum(1 for v in as_ids.values() if v == "unmatched") == 4


def test_enumerate_pairs_insufficient_data():
    with pytest.raises(DegenerateInputError):
        enumerate_pairs(clip_grid(1, 3))
    with pytest.raises(DegenerateInputError):
        enumerate_pairs([clip_stub("a", "v0"), clip_stub("a", "v1"), clip_stub("b", "v0")])
    with pytest.raises(ParameterError):
        enumerate_pairs([clip_stub("a", "v0"), clip_stub("a", "v0")])


def test_enumerate_pairs_accepts_id_tuples():
    pairs = enumerate_pairs([("a", "v0"), ("a", "v1"), ("b", "v0"), ("b", "v1")])
    assert len(pairs) == 6


# ---------------------------------------------------------------- fitting


def test_fit_laplace_hand_value():
    f = fit_pdf([-1.0, 0.0, 1.0], "laplace")
    assert f.location == 0.0
    assert f.scale == pytest.approx(2.0 / 3.0, abs=1e-15)


def test_fit_degenerate_floors_scale():
    for family in ("laplace", "gaussian"):
        f = fit_pdf([4.2, 4.2, 4.2], family)
        assert f.location == pytest.approx(4.2)
        assert f.scale == 1e-9


def test_fit_gaussian_population_moments():
    vals = np.array([1.0, 2.0, 3.0, 6.0])
    f = fit_pdf(vals, "gaussian")
    assert f.location == pytest.approx(3.0)
    assert f.scale == pytest.approx(float(vals.std(ddof=0)))


def test_fit_laplace_consistency():
    rng = np.random.default_rng(0)
    vals = rng.laplace(3.0, 2.0, size=100_000)
    f = fit_pdf(vals, "laplace")
    assert abs(f.location - 3.0) < 0.05
    assert abs(f.scale - 2.0) < 0.05


def test_fit_gaussian_consistency():
    rng = np.random.default_rng(1)
    vals = rng.normal(-1.0, 2.5, size=100_000)
    f = fit_pdf(vals, "gaussian")
    assert abs(f.location + 1.0) < 0.05
    assert abs(f.scale - 2.5) < 0.05


def test_fit_errors():
    with pytest.raises(DegenerateInputError):
        fit_pdf([], "laplace")
    with pytest.raises(ParameterError):
        fit_pdf([1.0, 2.0], "poisson")
    with pytest.raises(ParameterError):
        fit_pdf([1.0, np.nan], "gaussian")


def test_fitted_pdf_matches_scipy_shapes():
    f = FittedPDF(family="laplace", location=2.0, scale=0.5)
    xs = np.linspace(-3, 7, 1001)
    dens = f.pdf(xs)
    assert np.trapezoid(dens, xs) == pytest.approx(1.0, abs=1e-3)
    cdf = f.cdf(xs)
    assert (np.diff(cdf) >= 0).all()
    assert f.cdf(2.0) == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        FittedPDF(family="gaussian", location=0.0, scale=0.0)
    with pytest.raises(ParameterError):
        FittedPDF(family="gaussian", location=math.inf, scale=1.0)


# ------------------------------------------------------------- parametric


def test_eer_identical_pdfs_is_half():
    f = FittedPDF(family="gaussian", location=3.0, scale=1.5)
    eer, thr = eer_parametric(f, f)
    assert eer == pytest.approx(0.5, abs=1e-9)
    assert thr == pytest.approx(3.0, abs=1e-6)


def test_eer_gaussian_closed_form():
    m = FittedPDF(family="gaussian", location=10.0, scale=1.0)
    u = FittedPDF(family="gaussian", location=0.0, scale=1.0)
    eer, thr = eer_parametric(m, u)
    expect = 0.5 * math.erfc(5.0 / math.sqrt(2.0))
    assert abs(eer - expect) < 1e-9
    assert thr == pytest.approx(5.0, abs=1e-5)


def test_eer_laplace_closed_form():
    m = FittedPDF(family="laplace", location=4.0, scale=1.0)
    u = FittedPDF(family="laplace", location=0.0, scale=1.0)
    eer, thr = eer_parametric(m, u)
    assert abs(eer - 0.5 * math.exp(-2.0)) < 1e-9
    assert thr == pytest.approx(2.0, abs=1e-6)


def test_eer_crossing_condition_holds_at_threshold():
    m = FittedPDF(family="laplace", location=7.0, scale=2.0)
    u = FittedPDF(family="laplace", location=1.0, scale=0.5)
    eer, thr = eer_parametric(m, u)
    fpr = 1.0 - u.cdf(thr)
    fnr = m.cdf(thr)
    assert abs(fpr - fnr) < 1e-10
    assert eer == pytest.approx(fpr, abs=1e-10)
    assert 0.0 <= eer <= 0.5


def test_eer_flipped_locations_swaps_roles():
    m = FittedPDF(family="gaussian", location=0.0, scale=1.0)
    u = FittedPDF(family="gaussian", location=10.0, scale=1.0)
    eer, _ = eer_parametric(m, u)
    expect = 0.5 * math.erfc(5.0 / math.sqrt(2.0))
    assert abs(eer - expect) < 1e-9


def test_eer_with_floored_degenerate_unmatched():
    m = FittedPDF(family="laplace", location=5.0, scale=1.0)
    u = FittedPDF(family="laplace", location=0.0, scale=1e-9)
    eer, thr = eer_parametric(m, u)
    assert 0.0 <= eer <= 0.5
    assert eer < 0.01
    assert 0.0 < thr < 5.0


# -------------------------------------------------------------- empirical


def eer_empirical_oracle(samples):
    """O(n^2) sweep: direct counting at every sample-value threshold."""
    matched = [s.value for s in samples if s.label == "matched"]
    unmatched = [s.value for s in samples if s.label == "unmatched"]
    best = None
    for thr in sorted(set(matched + unmatched)):
        fnr = sum(1 for v in matched if v <= thr) / len(matched)
        fpr = sum(1 for v in unmatched if v > thr) / len(unmatched)
        key = abs(fpr - fnr)
        if best is None or key < best[0]:
            best = (key, 0.5 * (fpr + fnr), thr)
    return best[1], best[2]


def test_eer_empirical_separated():
    s = make_samples([10, 11, 12, 13], [1, 2, 3])
    eer, thr = eer_empirical(s)
    assert eer == 0.0
    assert thr == 3.0  # the largest unmatched value, smallest zero-gap threshold


def test_eer_empirical_interleaved():
    vals = list(range(100))
    s = make_samples(vals[1::2], vals[0::2])
    eer, _ = eer_empirical(s)
    assert abs(eer - 0.5) <= 0.01 + 1e-12


def test_eer_empirical_matches_bruteforce_oracle():
    rng = np.random.default_rng(2)
    for trial in range(20):
        n_m = int(rng.integers(5, 100))
        n_u = int(rng.integers(5, 100))
        sep = rng.uniform(0.0, 3.0)
        matched = np.round(rng.normal(sep, 1.0, n_m), 1)  # rounding forces ties
        unmatched = np.round(rng.normal(0.0, 1.0, n_u), 1)
        s = make_samples(matched, unmatched)
        assert eer_empirical(s) == eer_empirical_oracle(s)


def test_eer_empirical_single_label_errors():
    with pytest.raises(DegenerateInputError):
        eer_empirical(make_samples([1, 2], []))


def test_scale_invariance():
    rng = np.random.default_rng(3)
    matched = rng.normal(4.0, 1.0, 200)
    unmatched = rng.normal(0.0, 1.0, 200)
    base = make_samples(matched, unmatched)
    scaled = make_samples(matched * 3.7, unmatched * 3.7)
    assert eer_empirical(base)[0] == eer_empirical(scaled)[0]
    for family in ("laplace", "gaussian"):
        e0, _ = eer_parametric(fit_pdf(matched, family), fit_pdf(unmatched, family))
        e1, _ = eer_parametric(
            fit_pdf(matched * 3.7, family), fit_pdf(unmatched * 3.7, family)
        )
        assert e0 == pytest.approx(e1, abs=1e-9)


# -------------------------------------------------------------- bootstrap


class StubDataset:
    """Deterministic scorer that records the seeds it was called with."""

    def __init__(self, clips):
        self.clips = clips
        self.calls = []

    def score(self, test, ref, kind, seed):
        self.calls.append(seed)
        mixed = (seed * 2654435761) % 1000 / 1000.0
        same = test.chip_id == ref.chip_id
        return (80.0 if same else 2.0) + mixed


def test_bootstrap_counts_and_determinism():
    ds = StubDataset(clip_grid(3, 2))
    samples = bootstrap_scores(ds, "trobust", repeats=5, base_seed=9)
    # 3 matched pairs, C(3,2)*4 = 12 unmatched pairs
    assert sum(1 for s in samples if s.label == "matched") == 3 * 5
    assert sum(1 for s in samples if s.label == "unmatched") == 12 * 5
    assert len(set(ds.calls)) == len(ds.calls)  # every (pair, repeat) distinct

    again = bootstrap_scores(StubDataset(clip_grid(3, 2)), "trobust", repeats=5, base_seed=9)
    assert [s.value for s in samples] == [s.value for s in again]

    other = bootstrap_scores(StubDataset(clip_grid(3, 2)), "trobust", repeats=5, base_seed=10)
    assert [s.value for s in samples] != [s.value for s in other]


def test_bootstrap_validation():
    ds = StubDataset(clip_grid(2, 2))
    with pytest.raises(ParameterError):
        bootstrap_scores(ds, "trobust", repeats=0)
    with pytest.raises(ParameterError):
        bootstrap_scores(ds, "mystery", repeats=1)


def test_derive_seed_sensitivity():
    base = derive_seed(0, ("a", "v0"), ("b", "v1"), 0)
    assert derive_seed(0, ("a", "v0"), ("b", "v1"), 1) != base
    assert derive_seed(1, ("a", "v0"), ("b", "v1"), 0) != base
    assert derive_seed(0, ("a", "v1"), ("b", "v1"), 0) != base
    assert derive_seed(0, ("a", "v0"), ("b", "v1"), 0) == base


# ----------------------------------------------------------------- report


def test_score_sample_validation():
    with pytest.raises(ParameterError):
        ScoreSample(value=1.0, label="sortof")
    with pytest.raises(ParameterError):
        ScoreSample(value=1.0, label="matched", statistic_kind="entropy")
    with pytest.raises(ParameterError):
        ScoreSample(value=1.0, label="matched", pair=(("a", "v0"), ("b", "v0")))
    with pytest.raises(ParameterError):
        ScoreSample(value=1.0, label="unmatched", pair=(("a", "v0"), ("a", "v1")))
    with pytest.raises(ParameterError):
        ScoreSample(value=1.0, label="matched", pair=(("a", "v0"), ("a", "v0")))
    s = ScoreSample(value=1.0, label="matched", pair=(("a", "v0"), ("a", "v1")))
    assert s.statistic_kind == "trobust"


def test_build_report_separated_scores():
    rng = np.random.default_rng(4)
    samples = make_samples(rng.normal(50, 3, 120), rng.normal(2, 1, 500))
    rep = build_report(samples, config={"n_points": 100})
    assert set(rep.fits) == {
        "matched_laplace",
        "matched_gaussian",
        "unmatched_laplace",
        "unmatched_gaussian",
    }
    assert rep.eer_empirical == 0.0
    assert 0.0 <= rep.eer_laplace <= 0.5
    assert 0.0 <= rep.eer_gaussian <= 0.5
    assert rep.eer_laplace < 1e-4 and rep.eer_gaussian < 1e-4
    assert rep.statistic_kind == "trobust"
    assert rep.config == {"n_points": 100}
    assert np.isfinite([rep.threshold_laplace, rep.threshold_gaussian, rep.threshold_at_eer]).all()


def test_report_bounds_validated():
    with pytest.raises(ParameterError):
        EvalReport(eer_laplace=0.7)
