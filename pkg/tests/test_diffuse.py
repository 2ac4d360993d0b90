import functools

import numpy as np
import pytest

from chipprint.diffuse import (
    SubbandFeature,
    diffuse_match_score,
    estimate_norm_component,
    norm_map_from_scans,
    normmap_correlation,
    reconstruct_height,
    resample_grid,
    resample_normmap,
    search_best_patch,
    subband_decompose,
)
from chipprint.errors import DegenerateInputError, ParameterError
from chipprint.model import HeightMap, NormMap, ReflectionParams, ScanPath
from chipprint.surface import (
    add_capture_noise,
    generate_surface,
    normals_from_height,
    render_scanner_pass,
)

DIFFUSE_ONLY = ReflectionParams(w_d=1.0, w_s=0.0, l=2.0e4)
GLOSSY = ReflectionParams(l=2.0e4)


def scan_norm_map(h, params, noise_seed=None, noise_frac=0.0):
    """Render all four scan directions and difference them into a NormMap."""
    w_mm = h.dims[1] * h.pitch / 1000.0
    path = ScanPath((-15.0, w_mm + 15.0), 10.0, 15.0, 64)
    frames = {}
    for d in (0, 90, 180, 270):
        f = render_scanner_pass(h, params, path, d)
        if noise_frac > 0.0:
            f = add_capture_noise(f, noise_frac * f.pixels.max(), seed=noise_seed + d)
        frames[d] = f
    return norm_map_from_scans(frames[0], frames[180], frames[90], frames[270], h.pitch)


@functools.lru_cache(maxsize=None)
def scan_fleet(n_chips=8, n_reps=3, dims=(96, 96)):
    """Scanner-estimated norm maps for a small fleet, plus ground truths."""
    truth = {}
    est = {}
    for chip in range(n_chips):
        h = generate_surface(dims, 25.0, 4.0, 4.0, seed=300 + chip)
        truth[chip] = normals_from_height(h)
        for rep in range(n_reps):
            est[(chip, rep)] = scan_norm_map(
                h, GLOSSY, noise_seed=7000 + 100 * chip + 10 * rep, noise_frac=0.01
            )
    return truth, est


def test_norm_component_identical_frames_give_zero():
    rng = np.random.default_rng(0)
    img = rng.uniform(10.0, 20.0, size=(32, 32))
    out = estimate_norm_component(img, img.copy())
    assert np.array_equal(out, np.zeros((32, 32)))


def test_norm_component_swap_negates_exactly():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.0, 50.0, size=(48, 48))
    b = rng.uniform(0.0, 50.0, size=(48, 48))
    fwd = estimate_norm_component(a, b)
    rev = estimate_norm_component(b, a)
    assert np.array_equal(fwd, -rev)


def test_norm_component_is_normalized():
    rng = np.random.default_rng(2)
    out = estimate_norm_component(
        rng.uniform(0, 9, size=(40, 40)), rng.uniform(0, 9, size=(40, 40))
    )
    assert abs(out.mean()) < 1e-12
    assert abs(out.std() - 1.0) < 1e-12


def test_norm_component_rejects_dim_mismatch():
    with pytest.raises(ParameterError):
        estimate_norm_component(np.zeros((10, 10)), np.zeros((10, 12)))


def test_norm_component_tracks_ground_truth():
    h = generate_surface((96, 96), 25.0, 4.0, 4.0, seed=17)
    nm_est = scan_norm_map(h, DIFFUSE_ONLY)
    nm_true = normals_from_height(h)
    for comp in ("x", "y"):
        c = normmap_correlation(nm_est, nm_true, comp)
        assert c > 0.95, f"{comp} correlation {c}"


def test_normmap_correlation_self_and_symmetry():
    truth, est = scan_fleet()
    a = est[(0, 0)]
    b = truth[0]
    assert normmap_correlation(a, a, "x") == 1.0
    assert abs(normmap_correlation(a, b, "y") - normmap_correlation(b, a, "y")) < 1e-12


def test_normmap_correlation_constant_raises():
    flat = NormMap(np.zeros((32, 32)), np.zeros((32, 32)), 25.0)
    bumpy = NormMap(np.random.default_rng(3).normal(size=(32, 32)), np.zeros((32, 32)), 25.0)
    with pytest.raises(DegenerateInputError):
        normmap_correlation(flat, bumpy, "x")


def test_normmap_correlation_rejects_dim_mismatch():
    a = NormMap(np.zeros((32, 32)), np.zeros((32, 32)), 25.0)
    b = NormMap(np.zeros((16, 16)), np.zeros((16, 16)), 25.0)
    with pytest.raises(ParameterError):
        normmap_correlation(a, b, "x")


def test_matched_exceeds_unmatched_across_fleet():
    truth, est = scan_fleet()
    matched, unmatched = [], []
    for (chip, _rep), nm in est.items():
        for truth_chip, nm_true in truth.items():
            for comp in ("x", "y"):
                c = normmap_correlation(nm, nm_true, comp)
                (matched if truth_chip == chip else unmatched).append(c)
    assert min(matched) > max(unmatched), (
        f"worst matched {min(matched):.3f} vs best unmatched {max(unmatched):.3f}"
    )
    assert min(matched) > 0.4
    assert max(abs(u) for u in unmatched) < 0.15


def test_patch_search_planted_exact():
    rng = np.random.default_rng(5)
    hay = NormMap(rng.standard_normal((64, 64)), rng.standard_normal((64, 64)), 25.0)
    ndl = NormMap(hay.nx[17:33, 23:39].copy(), hay.ny[17:33, 23:39].copy(), 25.0)
    offset, corr = search_best_patch(ndl, hay)
    assert offset == (17, 23)
    assert corr > 1.0 - 1e-12


def test_patch_search_survives_noise():
    rng = np.random.default_rng(6)
    hay = NormMap(rng.standard_normal((64, 64)), rng.standard_normal((64, 64)), 25.0)
    span = float(np.ptp(hay.nx))
    ndl = NormMap(
        hay.nx[17:33, 23:39] + 0.05 * span * rng.standard_normal((16, 16)),
        hay.ny[17:33, 23:39] + 0.05 * span * rng.standard_normal((16, 16)),
        25.0,
    )
    (r, c), corr = search_best_patch(ndl, hay)
    assert abs(r - 17) <= 1 and abs(c - 23) <= 1, f"found ({r}, {c})"
    assert corr > 0.5


def brute_force_patch_search(needle, haystack):
    nh, nw = needle.nx.shape
    u = np.concatenate([needle.nx.ravel(), needle.ny.ravel()])
    u = u - u.mean()
    un = np.sqrt((u * u).sum())
    best_off, best_corr = None, -np.inf
    for r in range(haystack.nx.shape[0] - nh + 1):
        for c in range(haystack.nx.shape[1] - nw + 1):
            v = np.concatenate(
                [
                    haystack.nx[r : r + nh, c : c + nw].ravel(),
                    haystack.ny[r : r + nh, c : c + nw].ravel(),
                ]
            )
            v = v - v.mean()
            vn = np.sqrt((v * v).sum())
            if vn == 0.0 or un == 0.0:
                continue
            corr = (u * v).sum() / (un * vn)
            if corr > best_corr:
                best_off, best_corr = (r, c), corr
    return best_off, best_corr


def test_patch_search_matches_brute_force():
    rng = np.random.default_rng(7)
    hay = NormMap(rng.standard_normal((64, 64)), rng.standard_normal((64, 64)), 25.0)
    ndl = NormMap(
        rng.standard_normal((16, 16)) + hay.nx[40:56, 8:24],
        rng.standard_normal((16, 16)) + hay.ny[40:56, 8:24],
        25.0,
    )
    fft_off, fft_corr = search_best_patch(ndl, hay)
    ref_off, ref_corr = brute_force_patch_search(ndl, hay)
    assert fft_off == ref_off
    assert abs(fft_corr - ref_corr) < 1e-10


def test_patch_search_stride_grid():
    rng = np.random.default_rng(8)
    hay = NormMap(rng.standard_normal((64, 64)), rng.standard_normal((64, 64)), 25.0)
    ndl = NormMap(hay.nx[16:32, 24:40].copy(), hay.ny[16:32, 24:40].copy(), 25.0)
    offset, corr = search_best_patch(ndl, hay, stride=4)
    assert offset == (16, 24)
    assert corr > 1.0 - 1e-12
    with pytest.raises(ParameterError):
        search_best_patch(ndl, hay, stride=0)


def test_patch_search_rejects_oversized_needle():
    small = NormMap(np.zeros((8, 8)), np.zeros((8, 8)), 25.0)
    big = NormMap(np.ones((16, 16)), np.ones((16, 16)), 25.0)
    with pytest.raises(ParameterError):
        search_best_patch(big, small)


def test_patch_search_rejects_constant_needle():
    rng = np.random.default_rng(9)
    hay = NormMap(rng.standard_normal((32, 32)), rng.standard_normal((32, 32)), 25.0)
    flat = NormMap(np.ones((8, 8)), np.ones((8, 8)), 25.0)
    with pytest.raises(DegenerateInputError):
        search_best_patch(flat, hay)


def test_reconstruct_plane_is_exact():
    yy, xx = np.mgrid[0:64, 0:64].astype(np.float64)
    pitch = 10.0
    plane = 0.3 * pitch * xx - 0.2 * pitch * yy
    nm = normals_from_height(HeightMap(plane, pitch))
    rec = reconstruct_height(nm)
    ref = plane - plane.mean()
    err = np.max(np.abs(rec.heights - ref)) / np.ptp(ref)
    assert err < 1e-6, f"plane error {err} of range"
    assert rec.pitch == pitch


def test_reconstruct_zero_map_gives_zero():
    nm = NormMap(np.zeros((32, 32)), np.zeros((32, 32)), 5.0)
    rec = reconstruct_height(nm)
    assert np.array_equal(rec.heights, np.zeros((32, 32)))


def test_reconstruct_round_trip_correlation():
    for seed in (1, 5, 9):
        h = generate_surface((128, 128), 10.0, 2.0, 8.0, seed=seed)
        rec = reconstruct_height(normals_from_height(h))
        c = np.corrcoef(rec.heights.ravel(), h.heights.ravel())[0, 1]
        assert c > 0.99, f"seed {seed}: round-trip correlation {c}"
        assert abs(rec.heights.mean()) < 1e-9


def test_subband_partition_is_complete():
    h = generate_surface((128, 128), 10.0, 2.0, 4.0, seed=3)
    bands = subband_decompose(h, 6)
    assert [b.band_index for b in bands] == [1, 2, 3, 4, 5, 6]
    total = sum(b.coefficients for b in bands)
    ref = h.heights - h.heights.mean()
    residual = np.abs(total - ref).max() / np.abs(ref).max()
    assert residual < 1e-9, f"partition residual {residual}"


def test_subband_tone_lands_in_one_band():
    # bin-exact tone at 0.25 cycles/px: inside band 2 of (0.354, 0.707]/2^k
    xx = np.mgrid[0:128, 0:128][1].astype(np.float64)
    tone = np.sin(2.0 * np.pi * 0.25 * xx)
    bands = subband_decompose(HeightMap(tone, 10.0), 6)
    energies = np.array([np.sum(b.coefficients**2) for b in bands])
    share = energies[1] / energies.sum()
    assert share >= 0.99, f"band-2 energy share {share}"


def test_subband_constant_map_is_all_zero():
    bands = subband_decompose(HeightMap(np.full((64, 64), 3.5), 10.0), 6)
    for b in bands:
        assert np.abs(b.coefficients).max() < 1e-12


def test_subband_rejects_bad_depth():
    h = generate_surface((32, 32), 10.0, 2.0, 4.0, seed=1)
    with pytest.raises(ParameterError):
        subband_decompose(h, 6)  # needs >= 64 px
    with pytest.raises(ParameterError):
        subband_decompose(h, 0)


def test_match_score_self_symmetry_range():
    h = generate_surface((64, 64), 10.0, 2.0, 4.0, seed=4)
    bands = subband_decompose(h, 6)
    h2 = generate_surface((64, 64), 10.0, 2.0, 4.0, seed=5)
    bands2 = subband_decompose(h2, 6)
    assert diffuse_match_score(bands[2], bands[2]) == 1.0
    ab = diffuse_match_score(bands[2], bands2[2])
    ba = diffuse_match_score(bands2[2], bands[2])
    assert abs(ab - ba) < 1e-12
    assert -1.0 <= ab <= 1.0


def test_match_score_rejects_band_mismatch():
    h = generate_surface((64, 64), 10.0, 2.0, 4.0, seed=4)
    bands = subband_decompose(h, 6)
    with pytest.raises(ParameterError):
        diffuse_match_score(bands[1], bands[2])


def test_match_score_orthogonal_checkerboards():
    n = 64
    cb_x = np.where(np.arange(n)[None, :] % 2 == 0, 1.0, -1.0) * np.ones((n, 1))
    cb_y = np.where(np.arange(n)[:, None] % 2 == 0, 1.0, -1.0) * np.ones((1, n))
    score = diffuse_match_score(cb_x, cb_y)
    assert abs(score) < 1.0 / n, f"orthogonal score {score}"


def test_match_score_masked_region():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((32, 32))
    b = a.copy()
    b[:16] = rng.standard_normal((16, 32))  # corrupt the top half
    mask = np.zeros((32, 32), dtype=bool)
    mask[16:] = True
    assert diffuse_match_score(a, b, mask=mask) == 1.0
    assert diffuse_match_score(a, b) < 1.0


def test_matched_band_scores_beat_unmatched():
    rng = np.random.default_rng(11)
    heights = {}
    features = {}
    for chip in range(6):
        h = generate_surface((64, 64), 25.0, 4.0, 4.0, seed=500 + chip)
        heights[chip] = h
        for rep in range(2):
            nm = scan_norm_map(h, GLOSSY, noise_seed=9000 + 37 * chip + rep, noise_frac=0.01)
            rec = reconstruct_height(nm)
            features[(chip, rep)] = subband_decompose(rec, 6)[5]
    wins = trials = 0
    keys = sorted(features)
    for _ in range(100):
        chip = int(rng.integers(0, 6))
        matched = diffuse_match_score(features[(chip, 0)], features[(chip, 1)])
        other = int(rng.choice([c for c in range(6) if c != chip]))
        unmatched = diffuse_match_score(features[(chip, 0)], features[(other, 1)])
        trials += 1
        wins += matched > unmatched
    assert wins / trials >= 0.95, f"matched beat unmatched in {wins}/{trials} trials"


def test_resample_round_keeps_pitch_books():
    rng = np.random.default_rng(12)
    nm = NormMap(rng.standard_normal((32, 32)), rng.standard_normal((32, 32)), 42.33)
    up = resample_normmap(nm, 16.0)
    assert up.nx.shape == (512, 512)
    assert abs(up.pitch - 42.33 / 16.0) < 1e-12
    assert up.source == nm.source


def test_resample_upsample_tracks_analytic():
    xx = np.arange(64, dtype=np.float64)
    grid = np.cos(2.0 * np.pi * xx / 32.0)[None, :] * np.ones((64, 1))
    up = resample_grid(grid, 2.0)
    xx2 = np.arange(128, dtype=np.float64)
    ref = np.cos(2.0 * np.pi * xx2 / 64.0)[None, :] * np.ones((128, 1))
    c = np.corrcoef(up.ravel(), ref.ravel())[0, 1]
    assert c > 0.99
    assert up.shape == (128, 128)


def test_resample_downsample_averages():
    grid = np.zeros((32, 32))
    grid[::2, :] = 2.0  # alternating rows average to 1
    down = resample_grid(grid, 0.5)
    assert down.shape == (16, 16)
    # boundary rows feel the reflect padding and the spline's decaying
    # response to it; the deep interior averages the pattern flat
    assert np.abs(down[4:-4, 4:-4] - 1.0).max() < 1e-3


def test_resample_rejects_bad_factor():
    with pytest.raises(ParameterError):
        resample_grid(np.zeros((8, 8)), 0.0)


def test_subband_feature_validation():
    with pytest.raises(ParameterError):
        SubbandFeature(0, np.zeros((8, 8)))
    with pytest.raises(ParameterError):
        SubbandFeature(1, np.zeros(8))
