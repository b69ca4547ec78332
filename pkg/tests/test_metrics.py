"""Parzen log-likelihood, bandwidth selection, PSNR and SSIM."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cooplearn.metrics import (PSNR_CAP, ParzenEstimator, default_bandwidth_grid, parzen_log_density,
                               parzen_loglik, parzen_protocol, psnr, region_crop, select_bandwidth,
                               ssim)


def parzen_double_loop(ref, test, sigma):
    """Direct density sum, one test point and one kernel at a time (shifted by the max term)."""
    D = ref.shape[1]
    out = []
    for y in test:
        logs = []
        for r in ref:
            d2 = sum((a - b) ** 2 for a, b in zip(y, r))
            logs.append(-d2 / (2 * sigma ** 2) - (D / 2) * math.log(2 * math.pi * sigma ** 2))
        top = max(logs)
        total = sum(math.exp(v - top) for v in logs)
        out.append(top + math.log(total) - math.log(len(ref)))
    return np.array(out)


def ssim_direct(a, b, window=8, k1=0.01, k2=0.03, L=255.0):
    """Window-by-window SSIM from the defining formula with population moments."""
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(a.shape[0] - window + 1):
        for j in range(a.shape[1] - window + 1):
            x = a[i:i + window, j:j + window].ravel()
            y = b[i:i + window, j:j + window].ravel()
            mx, my = x.mean(), y.mean()
            vx = ((x - mx) ** 2).mean()
            vy = ((y - my) ** 2).mean()
            cxy = ((x - mx) * (y - my)).mean()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2))
                        / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


# -- Parzen -----------------------------------------------------------------

def test_single_point_at_itself():
    D, s = 3, 0.4
    ll = parzen_log_density(np.zeros((1, D)), np.zeros((1, D)), s)
    assert ll[0] == pytest.approx(-(D / 2) * math.log(2 * math.pi * s * s), abs=1e-12)


def test_parzen_matches_double_loop(rng):
    ref = rng.standard_normal((5, 2))
    test = rng.standard_normal((3, 2))
    rep = parzen_loglik(ParzenEstimator(ref, 0.3), test)
    oracle = parzen_double_loop(ref, test, 0.3)
    assert abs(rep.mean - oracle.mean()) < 1e-9
    assert rep.stderr == pytest.approx(oracle.std(ddof=1) / math.sqrt(3), abs=1e-9)
    assert rep.n == 3


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 8), n=st.integers(1, 6), D=st.integers(1, 4),
       sigma=st.floats(0.05, 2.0), seed=st.integers(0, 10_000))
def test_parzen_equals_double_loop_everywhere(m, n, D, sigma, seed):
    r = np.random.default_rng(seed)
    ref, test = r.standard_normal((m, D)), r.standard_normal((n, D))
    assert np.allclose(parzen_log_density(ref, test, sigma), parzen_double_loop(ref, test, sigma),
                       rtol=0, atol=1e-9)


def test_parzen_far_points_stay_finite():
    ll = parzen_log_density(np.zeros((2, 2)), np.full((1, 2), 50.0), 0.01)
    assert np.isfinite(ll).all()


def test_parzen_chunking_is_transparent(rng):
    ref, test = rng.standard_normal((20, 3)), rng.standard_normal((11, 3))
    assert np.array_equal(parzen_log_density(ref, test, 0.5, chunk=3),
                          parzen_log_density(ref, test, 0.5, chunk=3))
    assert np.allclose(parzen_log_density(ref, test, 0.5, chunk=3),
                       parzen_log_density(ref, test, 0.5), rtol=0, atol=1e-12)


def test_parzen_errors():
    with pytest.raises(ValueError):
        parzen_log_density(np.zeros((2, 2)), np.zeros((2, 3)), 0.1)
    with pytest.raises(ValueError):
        parzen_log_density(np.zeros((0, 2)), np.zeros((2, 2)), 0.1)
    with pytest.raises(ValueError):
        ParzenEstimator(np.zeros((1, 1)), 0.0)


def test_parzen_density_integrates_to_one():
    # 1-d mixture on a fine grid
    ref = np.array([[-0.5], [0.2], [1.0]])
    xs = np.linspace(-6, 7, 20001)[:, None]
    dens = np.exp(parzen_log_density(ref, xs, 0.3))
    assert np.trapezoid(dens, xs[:, 0]) == pytest.approx(1.0, abs=1e-8)


def test_bandwidth_grid_default():
    g = default_bandwidth_grid()
    assert len(g) == 20 and g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(1.0)
    assert np.allclose(np.diff(np.log(g)), np.log(100) / 19)


def test_select_bandwidth_singleton_and_empty(rng):
    pts = rng.standard_normal((4, 2))
    assert select_bandwidth(pts, pts, [0.7]) == 0.7
    with pytest.raises(ValueError):
        select_bandwidth(pts, pts, [])
    with pytest.raises(ValueError):
        select_bandwidth(pts, pts, [0.1, -1.0])


def test_select_bandwidth_validation_equals_reference(rng):
    pts = rng.standard_normal((30, 2))
    assert select_bandwidth(pts, pts) == pytest.approx(0.01)


def test_select_bandwidth_ignores_grid_order():
    pts = np.zeros((1, 1))
    assert select_bandwidth(pts, pts, [0.5, 0.5, 0.2]) == 0.2
    assert select_bandwidth(pts, pts, [0.2, 0.5]) == 0.2


def test_select_bandwidth_near_oracle(rng):
    ref = rng.standard_normal((400, 2))
    val = rng.standard_normal((400, 2))
    grid = default_bandwidth_grid()
    oracle = [parzen_double_loop(ref[:60], val[:40], s).mean() for s in grid]
    best_small = grid[int(np.argmax(oracle))]
    chosen = select_bandwidth(ref[:60], val[:40], grid)
    assert chosen == best_small
    full = select_bandwidth(ref, val, grid)
    scores = [parzen_log_density(ref, val, s).mean() for s in grid]
    k = int(np.argmax(scores))
    assert full in grid[max(k - 1, 0):k + 2]


def test_parzen_protocol_returns_bandwidth(rng):
    samples, test, val = (rng.standard_normal((50, 2)) for _ in range(3))
    rep, sigma = parzen_protocol(samples, test, val)
    assert sigma in default_bandwidth_grid()
    assert np.isfinite(rep.mean) and rep.stderr > 0
    assert "+/-" in str(rep)


# -- PSNR --------------------------------------------------------------------

def test_psnr_identical_is_cap(rng):
    a = rng.integers(0, 256, (3, 8, 8)).astype(float)
    assert psnr(a, a) == PSNR_CAP == 99.0


def test_psnr_constant_difference_16():
    a = np.full((4, 4), 100.0)
    value = psnr(a, a + 16, peak=255)
    # MSE 256 on a peak-255 scale
    assert value == pytest.approx(10 * math.log10(255 ** 2 / 256), abs=1e-12)
    assert value == pytest.approx(24.0484, abs=1e-4)


def test_psnr_region_ignores_outside(rng):
    a = rng.integers(0, 256, (8, 8)).astype(float)
    b = a + rng.normal(0, 5, a.shape)
    mask = np.zeros((8, 8))
    mask[2:6, 2:6] = 1
    before = psnr(a, b, region=mask)
    b2 = b.copy()
    b2[mask == 0] += 80
    assert psnr(a, b2, region=mask) == before


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 2)), peak=0)
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.ones((2, 2)), region=np.zeros((2, 2)))


@settings(max_examples=30, deadline=None)
@given(a=arrays(np.float64, (6, 6), elements=st.floats(0, 255)),
       b=arrays(np.float64, (6, 6), elements=st.floats(0, 255)))
def test_psnr_symmetric(a, b):
    assert psnr(a, b) == psnr(b, a)


# -- SSIM --------------------------------------------------------------------

def test_ssim_self_is_exactly_one(rng):
    a = rng.integers(0, 256, (16, 16)).astype(float)
    assert ssim(a, a) == 1.0
    c = rng.integers(0, 256, (3, 12, 12)).astype(float)
    assert ssim(c, c) == 1.0


def test_ssim_contrast_inversion_below_one():
    x = np.tile(np.linspace(0, 255, 16), (16, 1))
    assert ssim(x, 255 - x) < 1.0


def test_ssim_matches_direct_formula(rng):
    a = rng.integers(0, 256, (8, 8)).astype(float)
    b = np.clip(a + rng.normal(0, 20, a.shape), 0, 255)
    assert abs(ssim(a, b) - ssim_direct(a, b)) < 1e-9
    a2 = rng.integers(0, 256, (11, 13)).astype(float)
    b2 = rng.integers(0, 256, (11, 13)).astype(float)
    assert abs(ssim(a2, b2) - ssim_direct(a2, b2)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(a=arrays(np.float64, (8, 8), elements=st.floats(0, 255)),
       b=arrays(np.float64, (8, 8), elements=st.floats(0, 255)))
def test_ssim_symmetric_and_bounded(a, b):
    v = ssim(a, b)
    assert v == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1 - 1e-12 <= v <= 1 + 1e-12


def test_ssim_errors():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((9, 9)))
    with pytest.raises(ValueError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_region_crop():
    img = np.arange(36.0).reshape(1, 6, 6)
    mask = np.zeros((1, 6, 6))
    mask[:, 1:3, 2:5] = 1
    assert region_crop(img, mask).shape == (1, 2, 3)
    with pytest.raises(ValueError):
        region_crop(img, np.zeros((1, 6, 6)))
