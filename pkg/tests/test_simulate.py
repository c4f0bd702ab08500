import numpy as np
import pytest
from scipy.signal import fftconvolve

from turbrestore.optics import OpticsParams, psfs_from_coeffs
from turbrestore.simulate import (
    TurbulenceSimulator,
    block_windows,
    blockwise_convolve,
    simulate_frame,
    simulate_sequence,
    tilt_variance_px,
)


@pytest.fixture(scope="module")
def clean():
    rng = np.random.default_rng(0)
    from scipy.ndimage import gaussian_filter
    return np.clip(gaussian_filter(rng.random((64, 64)), 1.5) * 2 - 0.5, 0, 1)


@pytest.mark.parametrize("length,block", [(64, 16), (48, 16), (16, 16), (20, 4)])
def test_block_windows_partition_unity(length, block):
    w = block_windows(length, block)
    assert w.shape == (length // block, length)
    assert np.allclose(w.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(w >= 0)


def test_no_turbulence_is_diffraction_blur(clean):
    p = OpticsParams(cn2=0.0)
    out = simulate_frame(clean, p, np.random.default_rng(0))
    airy = psfs_from_coeffs(np.zeros((1, p.n_zernike)), p)[0]
    half = airy.shape[0] // 2
    want = fftconvolve(np.pad(clean, half, mode="reflect"), airy, mode="valid")
    assert np.max(np.abs(out - want)) < 1e-12
    again = simulate_frame(clean, p, np.random.default_rng(99))
    assert np.array_equal(out, again)


def test_blockwise_with_identical_kernels_is_global(clean, rng):
    k = rng.random((5, 5))
    k /= k.sum()
    psfs = np.broadcast_to(k, (4, 4, 5, 5))
    want = fftconvolve(np.pad(clean, 2, mode="reflect"), k, mode="valid")
    assert np.allclose(blockwise_convolve(clean, psfs, 16), want, atol=1e-12)


def test_seeded_determinism(clean):
    p = OpticsParams().with_dr0(2.0)
    a = simulate_sequence(clean, p, seed=11, n_frames=3)
    b = simulate_sequence(clean, p, seed=11, n_frames=3, n_jobs=4)
    c = simulate_sequence(clean, p, seed=12, n_frames=3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_frames_depend_only_on_their_index(clean):
    p = OpticsParams().with_dr0(1.0)
    a = simulate_sequence(clean, p, seed=3, n_frames=4)
    b = simulate_sequence(clean, p, seed=3, n_frames=2)
    assert np.array_equal(a[:2], b)


def test_bad_block_size(clean):
    with pytest.raises(ValueError, match="divisible"):
        simulate_frame(clean[:60], OpticsParams(), np.random.default_rng(0))


def test_noise_keeps_range(clean):
    p = OpticsParams().with_dr0(1.0)
    out = simulate_frame(clean, p, np.random.default_rng(0), noise_sigma=0.05)
    assert out.min() >= 0 and out.max() <= 1


def test_estimator_matches_function(clean):
    sim = TurbulenceSimulator(dr0=1.5, n_frames=2, seed=4).fit()
    p = OpticsParams().with_dr0(1.5)
    assert np.array_equal(sim.transform(clean), simulate_sequence(clean, p, seed=4, n_frames=2))
    assert sim.get_params()["dr0"] == 1.5


def _spot_lattice(size, pos):
    yy, xx = np.mgrid[:size, :size]
    img = np.zeros((size, size))
    for y in pos:
        for x in pos:
            img += np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / 2.0)
    return img / img.max()


@pytest.mark.slow
def test_point_displacement_matches_configured_tilt():
    """Spots three blocks apart; centroid std over 100 frames vs the Noll tilt variance."""
    p = OpticsParams().with_dr0(2.0)
    pos = [24, 72, 120]
    img = _spot_lattice(144, pos)
    rng = np.random.default_rng(0)
    gy, gx = np.mgrid[-20:21, -20:21]
    dy, dx = [], []
    for _ in range(100):
        f = simulate_frame(img, p, rng)
        for y in pos:
            for x in pos:
                w = f[y - 20:y + 21, x - 20:x + 21]
                w = np.clip(w - np.median(w), 0, None)
                dy.append((w * gy).sum() / w.sum())
                dx.append((w * gx).sum() / w.sum())
    vy, vx = tilt_variance_px(p)
    assert np.std(dy) == pytest.approx(np.sqrt(vy), rel=0.05)
    assert np.std(dx) == pytest.approx(np.sqrt(vx), rel=0.05)
