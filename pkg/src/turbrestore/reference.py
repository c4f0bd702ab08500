"""Space-time non-local reference frames.

For a patch at time t, each frame t + dt in the temporal window is scanned
over the spatial search window for its best-matching patch; the match
distance sets the frame's weight ``exp(-beta * distance)``. The reference
patch is the weighted temporal average of the co-located patches, and
overlapping patches are blended with a raised-cosine window. Static
content is averaged over many frames while moving content, which has no
good match elsewhere in time, keeps the weight of its own frame.
"""

import logging
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._patches import PatchGrid, box_sums, weighted_patch_average
from ._validation import check_frame, check_odd, check_sequence, check_same_shape
from .parallel import map_ordered

logger = logging.getLogger(__name__)

__all__ = [
    "patch_distance",
    "min_spatial_distance",
    "compute_reference",
    "nonlocal_reference",
    "calibrate_beta",
    "BetaCalibration",
    "NonLocalReference",
    "point_source_image",
    "DEFAULT_BETA_TABLE",
    "default_beta_calibration",
]

# beta(D/r0) from calibrate_beta with 100 trials per level, seed 0
DEFAULT_BETA_TABLE = ((1.0, 2.0, 3.0, 4.0), (0.5623, 0.7499, 1.0, 1.0))


def patch_distance(a, b):
    """Squared Euclidean distance between two equally sized patches."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    d = a - b
    return float(np.sum(d * d))


def _check_config(patch_size, spatial_search, temporal_window, stride, beta):
    check_odd(patch_size, "patch_size", 3)
    check_odd(spatial_search, "spatial_search", 1)
    if temporal_window < 0:
        raise ValueError(f"temporal_window must be >= 0, got {temporal_window}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not beta >= 0:
        raise ValueError(f"beta must be >= 0, got {beta}")


def min_spatial_distance(seq, r, t, dt, patch_size=9, spatial_search=11):
    """Smallest patch distance between frame t at ``r`` and frame t+dt.

    ``r = (row, col)`` is the patch centre. Candidate offsets come from the
    ``spatial_search`` square around ``r``; offsets that would push the
    candidate patch outside the frame are skipped.
    """
    seq = check_sequence(seq)
    T, H, W = seq.shape
    if not 0 <= t + dt < T:
        raise ValueError(f"frame {t + dt} is outside the sequence")
    h = patch_size // 2
    i, j = r
    if not (h <= i < H - h and h <= j < W - h):
        raise ValueError(f"patch centred at {r} does not fit in the frame")
    R = spatial_search // 2
    ref = seq[t, i - h:i + h + 1, j - h:j + h + 1]
    other = seq[t + dt]
    best = np.inf
    for dy in range(-R, R + 1):
        for dx in range(-R, R + 1):
            y, x = i + dy, j + dx
            if h <= y < H - h and h <= x < W - h:
                best = min(best, patch_distance(ref, other[y - h:y + h + 1, x - h:x + h + 1]))
    return best


def _pair_min_distances(a, b, patch, search):
    """Min-over-offsets patch distances in both directions for frames a, b.

    Returns (a_to_b, b_to_a), maps over all top-left patch positions.
    Direction b->a reuses the a->b squared differences at shifted positions.
    """
    H, W = a.shape
    R = search // 2
    shape = (H - patch + 1, W - patch + 1)
    a_to_b = np.full(shape, np.inf)
    b_to_a = np.full(shape, np.inf)
    for dy in range(-R, R + 1):
        y0, y1 = max(0, -dy), min(H, H - dy)
        if y1 - y0 < patch:
            continue
        for dx in range(-R, R + 1):
            x0, x1 = max(0, -dx), min(W, W - dx)
            if x1 - x0 < patch:
                continue
            d = a[y0:y1, x0:x1] - b[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
            s = box_sums(d * d, patch, patch)
            ny, nx = s.shape
            va = a_to_b[y0:y0 + ny, x0:x0 + nx]
            np.minimum(va, s, out=va)
            vb = b_to_a[y0 + dy:y0 + dy + ny, x0 + dx:x0 + dx + nx]
            np.minimum(vb, s, out=vb)
    return a_to_b, b_to_a


def _blend(seq, t, offsets, dists, beta, grid):
    """Weighted temporal average of patches, blended over overlaps."""
    logw = np.stack([-beta * dists[dt] for dt in offsets])
    return weighted_patch_average([seq[t + dt] for dt in offsets], logw, grid)


def _window(t, T, temporal_window):
    lo = max(0, t - temporal_window)
    hi = min(T - 1, t + temporal_window)
    return [s - t for s in range(lo, hi + 1)]


def compute_reference(seq, t, patch_size=9, spatial_search=11, temporal_window=15,
                      stride=4, beta=1.0):
    """Non-local reference frame at time ``t``.

    Parameters
    ----------
    seq : array-like (T, H, W)
    t : int
    patch_size : int
        Odd patch side (pixels).
    spatial_search : int
        Odd side of the spatial search window.
    temporal_window : int
        Half-width of the temporal window; clipped at the sequence ends.
    stride : int
        Spacing of patch positions; the last patch is clamped to the border.
    beta : float
        Weight decay per unit squared patch distance. ``beta = 0`` gives the
        plain temporal average.

    Returns
    -------
    ndarray (H, W)
    """
    seq = check_sequence(seq)
    _check_config(patch_size, spatial_search, temporal_window, stride, beta)
    T = seq.shape[0]
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside sequence of {T} frames")
    grid = PatchGrid(seq.shape[1:], patch_size, stride)
    offsets = _window(t, T, temporal_window)
    dists = {}
    for dt in offsets:
        if dt == 0 or beta == 0:
            dists[dt] = np.zeros(grid.grid_shape)
        else:
            fwd, _ = _pair_min_distances(seq[t], seq[t + dt], patch_size, spatial_search)
            dists[dt] = grid.sample(fwd)
    return _blend(seq, t, offsets, dists, beta, grid)


def nonlocal_reference(seq, patch_size=9, spatial_search=11, temporal_window=15,
                       stride=4, beta=1.0, n_jobs=1):
    """Reference frames for every time index.

    Each unordered frame pair is scanned once and serves both directions.
    """
    seq = check_sequence(seq)
    _check_config(patch_size, spatial_search, temporal_window, stride, beta)
    T = seq.shape[0]
    grid = PatchGrid(seq.shape[1:], patch_size, stride)
    zeros = np.zeros(grid.grid_shape)
    dists = [{0: zeros} for _ in range(T)]
    pairs = [(t, s) for t in range(T) for s in range(t + 1, min(T, t + temporal_window + 1))]
    if beta > 0:
        def one(pair):
            t, s = pair
            fwd, bwd = _pair_min_distances(seq[t], seq[s], patch_size, spatial_search)
            return grid.sample(fwd), grid.sample(bwd)

        for (t, s), (fwd, bwd) in zip(pairs, map_ordered(one, pairs, n_jobs)):
            dists[t][s - t] = fwd
            dists[s][t - s] = bwd
    else:
        for t, s in pairs:
            dists[t][s - t] = zeros
            dists[s][t - s] = zeros

    def frame(t):
        return _blend(seq, t, _window(t, T, temporal_window), dists[t], beta, grid)

    return np.stack(map_ordered(frame, range(T), n_jobs))


def point_source_image(size=64, spacing=16, sigma=1.0):
    """Lattice of small Gaussian spots used to calibrate beta.

    The default spacing exceeds patch plus search window, so a patch can
    only ever match its own spot.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    centres = np.arange(spacing / 2.0 - 0.5, size, spacing)
    for cy in centres:
        for cx in centres:
            img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    return img / img.max()


def _default_betas():
    return np.logspace(-2, 2, 33)


def calibrate_beta(dr0, trials=100, rng=None, betas=None, params=None, patch_size=9,
                   spatial_search=11, temporal_window=15, stride=4, image=None,
                   return_curve=False):
    """Pick the beta that best reconstructs a tilt-distorted point-source image.

    Every trial draws ``2 * temporal_window + 1`` tilt-only frames of a
    point-source lattice at strength ``dr0``; the reference of the centre
    frame is compared with the undistorted image for each beta of the sweep.
    Errors are averaged over trials and the minimizer is returned (ties go
    to the largest beta).
    """
    from .optics import OpticsParams
    from .simulate import simulate_frame

    rng = np.random.default_rng(rng)
    betas = _default_betas() if betas is None else np.asarray(betas, dtype=np.float64)
    truth = point_source_image() if image is None else check_frame(image, "image")
    params = (params if params is not None else OpticsParams()).with_dr0(dr0)
    n = 2 * temporal_window + 1
    t = temporal_window
    grid = PatchGrid(truth.shape, patch_size, stride)
    offsets = list(range(-t, t + 1))
    err = np.zeros(len(betas))
    for _ in range(trials):
        seq = np.stack([simulate_frame(truth, params, rng, blur=False) for _ in range(n)])
        dists = {0: np.zeros(grid.grid_shape)}
        for dt in offsets:
            if dt:
                fwd, _ = _pair_min_distances(seq[t], seq[t + dt], patch_size, spatial_search)
                dists[dt] = grid.sample(fwd)
        for k, beta in enumerate(betas):
            ref = _blend(seq, t, offsets, dists, beta, grid)
            err[k] += np.linalg.norm(ref - truth)
    err /= trials
    best = len(betas) - 1 - int(np.argmin(err[::-1]))
    if return_curve:
        return float(betas[best]), err
    return float(betas[best])


class BetaCalibration:
    """Calibration curve beta(D/r0) with linear interpolation.

    Values outside the calibrated range are clamped to the end points. A
    curve that increases with D/r0 by more than ``tolerance`` (relative)
    triggers a warning.
    """

    def __init__(self, dr0, beta, tolerance=0.05):
        order = np.argsort(dr0)
        self.dr0 = np.asarray(dr0, dtype=np.float64)[order]
        self.beta = np.asarray(beta, dtype=np.float64)[order]
        if self.dr0.size == 0:
            raise ValueError("calibration needs at least one point")
        rises = np.diff(self.beta) > tolerance * self.beta[:-1]
        if np.any(rises):
            warnings.warn("beta calibration is not monotonically decreasing in D/r0",
                          RuntimeWarning, stacklevel=2)

    def __call__(self, dr0):
        return float(np.interp(dr0, self.dr0, self.beta))

    @classmethod
    def fit(cls, dr0_values, trials=100, seed=0, **kwargs):
        betas = []
        for i, d in enumerate(dr0_values):
            rng = np.random.default_rng([seed, i])
            betas.append(calibrate_beta(d, trials=trials, rng=rng, **kwargs))
            logger.info("calibrated beta(D/r0=%.3g) = %.4g", d, betas[-1])
        return cls(dr0_values, betas)

    def save(self, path):
        from .io import write_beta_table
        write_beta_table(path, self.dr0, self.beta)

    @classmethod
    def load(cls, path):
        from .io import read_beta_table
        return cls(*read_beta_table(path))


class NonLocalReference(TransformerMixin, BaseEstimator):
    """Space-time non-local reference frames as a transformer.

    Parameters
    ----------
    patch_size : int, default 9
    spatial_search : int, default 11
    temporal_window : int, default 15
    stride : int, default 4
    beta : float, default 1.0
    n_jobs : int, default 1
    """

    def __init__(self, patch_size=9, spatial_search=11, temporal_window=15, stride=4,
                 beta=1.0, n_jobs=1):
        self.patch_size = patch_size
        self.spatial_search = spatial_search
        self.temporal_window = temporal_window
        self.stride = stride
        self.beta = beta
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        _check_config(self.patch_size, self.spatial_search, self.temporal_window,
                      self.stride, self.beta)
        return self

    def transform(self, X):
        return nonlocal_reference(X, self.patch_size, self.spatial_search,
                                  self.temporal_window, self.stride, self.beta,
                                  self.n_jobs)


def default_beta_calibration():
    """Built-in calibration curve (:data:`DEFAULT_BETA_TABLE`)."""
    return BetaCalibration(*DEFAULT_BETA_TABLE, tolerance=np.inf)
