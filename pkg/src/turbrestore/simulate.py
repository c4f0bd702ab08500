"""Anisoplanatic turbulence simulator: block-wise Zernike phases to warped,
blurred frames."""

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_frame, check_sequence, spawn_seeds
from .flow import FlowField, warp
from .optics import OpticsParams, psfs_from_coeffs
from .parallel import map_ordered
from .zernike import gradient_tilt_matrix, noll_covariance, remove_gradient_tilt, _noll_unit

__all__ = [
    "TurbulenceSimulator",
    "simulate_frame",
    "simulate_sequence",
    "sample_coefficient_field",
    "tilt_pixels",
    "tilt_variance_px",
    "blockwise_convolve",
    "block_windows",
]


def _smoothing_kernel(sigma):
    if sigma <= 0:
        return np.ones(1)
    half = int(np.ceil(3.0 * sigma))
    x = np.arange(-half, half + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    # unit L2 norm keeps the per-block marginal variance unchanged
    return k / np.sqrt(np.sum(k ** 2))


def sample_coefficient_field(dr0, n_modes, grid_shape, rng, correlation_blocks=2.0):
    """Spatially correlated Noll coefficients on a grid of blocks.

    Independent draws on a padded grid are smoothed with a separable
    Gaussian of width ``correlation_blocks`` (in blocks); the filter is
    L2-normalized so each block keeps the Kolmogorov covariance exactly.

    Returns
    -------
    ndarray (rows, cols, n_modes)
    """
    k = _smoothing_kernel(correlation_blocks)
    pad = len(k) - 1
    rows, cols = grid_shape
    _, root = _noll_unit(int(n_modes))
    white = rng.standard_normal((rows + pad, cols + pad, n_modes))
    field = white @ root.T * float(dr0) ** (5.0 / 6.0)
    tmp = np.zeros((rows, cols + pad, n_modes))
    for i, w in enumerate(k):
        tmp += w * field[i:i + rows]
    out = np.zeros((rows, cols, n_modes))
    for j, w in enumerate(k):
        out += w * tmp[:, j:j + cols]
    return out


def tilt_pixels(coeffs, params):
    """Image-plane shift (dy, dx) in pixels implied by the phase gradient.

    A mean pupil gradient of ``g`` rad per pupil sample moves the PSF by
    ``g * fft_size / (2 pi)`` pixels; for pure Zernike tilt that is
    ``4 a_2 / pi``.
    """
    a = np.asarray(coeffs)
    g = gradient_tilt_matrix(a.shape[-1], params.phase_grid)
    s = a @ g.T * params.fft_size / (2.0 * np.pi)
    return s[..., 1], s[..., 0]


def tilt_variance_px(params, dr0=None):
    """Configured variance of the per-block (dy, dx) displacement, px^2."""
    dr0 = params.dr0 if dr0 is None else dr0
    cov = noll_covariance(params.n_zernike, dr0)
    g = gradient_tilt_matrix(params.n_zernike, params.phase_grid) * params.fft_size / (2.0 * np.pi)
    return float(g[1] @ cov @ g[1]), float(g[0] @ cov @ g[0])


def block_windows(length, block):
    """Raised-cosine weights (n_blocks, length) summing to one per pixel."""
    n = length // block
    centers = np.arange(n) * block + (block - 1) / 2.0
    x = np.arange(length)
    w = np.zeros((n, length))
    for b, c in enumerate(centers):
        u = (x - c) / block
        w[b] = np.where(np.abs(u) < 1.0, np.cos(0.5 * np.pi * u) ** 2, 0.0)
    w[0, x <= centers[0]] = 1.0
    w[-1, x >= centers[-1]] = 1.0
    if n == 1:
        w[0] = 1.0
    return w


def blockwise_convolve(image, psfs, block):
    """Spatially varying blur: block PSFs blended with raised-cosine windows.

    Parameters
    ----------
    image : ndarray (H, W)
    psfs : ndarray (rows, cols, K, K)
        One kernel per block, ``rows = H // block``.
    block : int
    """
    img = check_frame(image, "image")
    rows, cols, ksz, _ = psfs.shape
    h, w = img.shape
    if rows != h // block or cols != w // block:
        raise ValueError(f"psf grid {rows}x{cols} does not tile a {h}x{w} image in {block}px blocks")
    half = ksz // 2
    padded = np.pad(img, half, mode="reflect")
    wy = block_windows(h, block)
    wx = block_windows(w, block)
    out = np.zeros_like(img)
    for by in range(rows):
        ys = np.flatnonzero(wy[by])
        y0, y1 = ys[0], ys[-1] + 1
        for bx in range(cols):
            xs = np.flatnonzero(wx[bx])
            x0, x1 = xs[0], xs[-1] + 1
            tile = padded[y0:y1 + 2 * half, x0:x1 + 2 * half]
            conv = fftconvolve(tile, psfs[by, bx], mode="valid")
            out[y0:y1, x0:x1] += np.outer(wy[by, y0:y1], wx[bx, x0:x1]) * conv
    return out


def _pixel_field(block_values, shape, block):
    rows, cols = block_values.shape
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    coords = [(yy - (block - 1) / 2.0) / block, (xx - (block - 1) / 2.0) / block]
    return map_coordinates(block_values, coords, order=1, mode="nearest")


def simulate_frame(clean, params, rng, blur=True, tilt=True, noise_sigma=0.0,
                   return_tilts=False):
    """Distort one clean frame.

    Each ``block_size`` block draws its own Zernike vector (correlated across
    blocks); the gradient tilt becomes a smooth pixel displacement field and
    the tilt-free remainder a per-block PSF.

    Parameters
    ----------
    clean : ndarray (H, W), both sides divisible by ``params.block_size``
    params : OpticsParams
    rng : numpy.random.Generator
    blur, tilt : bool
        Switch the two distortion components independently.
    noise_sigma : float
        Std of additive Gaussian noise; the output is clipped to [0, 1]
        when noise is added.
    return_tilts : bool
        Also return the per-block displacement (dy, dx) in pixels.
    """
    img = check_frame(clean, "clean")
    h, w = img.shape
    b = params.block_size
    if h % b or w % b:
        raise ValueError(f"frame {h}x{w} is not divisible by block_size={b}")
    grid = (h // b, w // b)
    dr0 = params.dr0
    coeffs = sample_coefficient_field(dr0, params.n_zernike, grid, rng,
                                      params.correlation_blocks)
    dy, dx = tilt_pixels(coeffs, params)
    out = img
    if blur:
        flat = remove_gradient_tilt(coeffs.reshape(-1, params.n_zernike), params.phase_grid)
        if dr0 == 0:
            # every block shares the diffraction-limited kernel
            kern = psfs_from_coeffs(flat[:1], params)
            psfs = np.broadcast_to(kern, (flat.shape[0],) + kern.shape[1:])
        else:
            psfs = psfs_from_coeffs(flat, params)
        out = blockwise_convolve(out, psfs.reshape(grid + psfs.shape[1:]), b)
    if tilt and dr0 > 0:
        sy = _pixel_field(dy, (h, w), b)
        sx = _pixel_field(dx, (h, w), b)
        # content at r moves to r + s, so sample at r - s
        out = warp(out, FlowField(-sx, -sy))
    if noise_sigma > 0:
        out = np.clip(out + noise_sigma * rng.standard_normal(out.shape), 0.0, 1.0)
    if return_tilts:
        return out, (dy, dx)
    return out


def simulate_sequence(clean, params, seed=0, n_frames=None, blur=True, tilt=True,
                      noise_sigma=0.0, n_jobs=1):
    """Distort a clean sequence (or one static frame repeated ``n_frames`` times).

    Frame t uses a random stream derived from ``(seed, t)`` only, so the
    output does not depend on ``n_jobs``.
    """
    arr = np.asarray(clean, dtype=np.float64)
    if arr.ndim == 2:
        if n_frames is None:
            raise ValueError("n_frames is required for a single clean frame")
        frames = [arr] * int(n_frames)
    else:
        frames = list(check_sequence(arr, "clean"))
        if n_frames is not None and n_frames != len(frames):
            raise ValueError(f"n_frames={n_frames} but {len(frames)} clean frames given")
    seeds = spawn_seeds(seed, len(frames))

    def one(t):
        return simulate_frame(frames[t], params, np.random.default_rng(seeds[t]),
                              blur=blur, tilt=tilt, noise_sigma=noise_sigma)

    return np.stack(map_ordered(one, range(len(frames)), n_jobs))


class TurbulenceSimulator(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`simulate_sequence`.

    Parameters
    ----------
    optics : OpticsParams, optional
        Geometry and turbulence strength; library defaults when omitted.
    dr0 : float, optional
        Override the strength through D/r0 instead of ``optics.cn2``.
    n_frames : int
        Frames produced for a single clean image.
    noise_sigma : float
    seed : int
    n_jobs : int
    """

    def __init__(self, optics=None, dr0=None, n_frames=100, noise_sigma=0.0, seed=0, n_jobs=1):
        self.optics = optics
        self.dr0 = dr0
        self.n_frames = n_frames
        self.noise_sigma = noise_sigma
        self.seed = seed
        self.n_jobs = n_jobs

    def _params(self):
        params = self.optics if self.optics is not None else OpticsParams()
        if self.dr0 is not None:
            params = params.with_dr0(self.dr0)
        return params

    def fit(self, X=None, y=None):
        self.params_ = self._params()
        return self

    def transform(self, X):
        params = getattr(self, "params_", None) or self._params()
        arr = np.asarray(X, dtype=np.float64)
        n = self.n_frames if arr.ndim == 2 else None
        return simulate_sequence(arr, params, seed=self.seed, n_frames=n,
                                 noise_sigma=self.noise_sigma, n_jobs=self.n_jobs)
