"""Dense coarse-to-fine registration of frames to a reference.

Flow follows the backward convention: ``warp(frame, flow)(r) =
frame(r + flow(r))``, and ``estimate_flow(moving, reference)`` looks for the
flow that makes ``warp(moving, flow)`` match ``reference``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, zoom
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_frame, check_same_shape, check_sequence, check_positive_int
from .parallel import map_ordered

__all__ = ["FlowField", "warp", "estimate_flow", "FlowAligner"]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement in pixels: ``u`` along columns, ``v`` along rows."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError(f"u and v differ in shape: {self.u.shape} vs {self.v.shape}")

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self):
        return np.hypot(self.u, self.v)


def _bilinear(img, yy, xx):
    h, w = img.shape
    yy = np.clip(yy, 0.0, h - 1)
    xx = np.clip(xx, 0.0, w - 1)
    y0 = np.floor(yy).astype(np.intp)
    x0 = np.floor(xx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = yy - y0
    fx = xx - x0
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bot


def warp(frame, flow):
    """Backward-warp ``frame`` by ``flow`` with bilinear sampling.

    Samples falling outside the frame are clamped to the nearest edge pixel.
    """
    img = check_frame(frame)
    if flow.shape != img.shape:
        raise ValueError(f"flow shape {flow.shape} does not match frame {img.shape}")
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _bilinear(img, yy + flow.v, xx + flow.u)


def _pyramid(img, levels):
    pyr = [img]
    for _ in range(levels - 1):
        prev = pyr[-1]
        if min(prev.shape) < 16:
            break
        pyr.append(gaussian_filter(prev, 1.0)[::2, ::2])
    return pyr[::-1]


def _resize_flow(u, v, shape):
    fy = shape[0] / u.shape[0]
    fx = shape[1] / u.shape[1]
    u2 = zoom(u, (fy, fx), order=1, mode="nearest") * fx
    v2 = zoom(v, (fy, fx), order=1, mode="nearest") * fy
    return u2[:shape[0], :shape[1]], v2[:shape[0], :shape[1]]


def estimate_flow(moving, reference, levels=4, iters=10, window_sigma=2.0,
                  reg=1e-4, max_displacement=16.0, tol=1e-3):
    """Estimate dense flow aligning ``moving`` onto ``reference``.

    Pyramidal gradient-based (windowed Lucas-Kanade) refinement: at every
    level the moving image is re-warped with the current flow and a
    per-pixel 2x2 least-squares update is solved from Gaussian-weighted
    structure tensors.

    Parameters
    ----------
    moving, reference : ndarray (H, W)
    levels : int
        Pyramid depth (coarsest level first); capped so levels stay >= 16 px.
    iters : int
        Warping iterations per level.
    window_sigma : float
        Gaussian integration scale of the structure tensor, in pixels.
    reg : float
        Tikhonov term added to the tensor diagonal for flat regions.
    max_displacement : float
        Flow magnitudes are clipped to this many pixels.

    Returns
    -------
    FlowField
        Zero flow is returned whenever the estimate would not reduce the
        registration error.
    """
    mov = check_frame(moving, "moving")
    ref = check_frame(reference, "reference")
    check_same_shape(mov, ref, ("moving", "reference"))
    levels = check_positive_int(levels, "levels")
    iters = check_positive_int(iters, "iters")

    pm = _pyramid(mov, levels)
    pr = _pyramid(ref, levels)
    u = np.zeros(pm[0].shape)
    v = np.zeros(pm[0].shape)
    for lvl, (m, r) in enumerate(zip(pm, pr)):
        if lvl > 0:
            u, v = _resize_flow(u, v, m.shape)
        gry, grx = np.gradient(r)
        for _ in range(iters):
            wm = _bilinear(m, *_grid_plus(m.shape, v, u))
            gmy, gmx = np.gradient(wm)
            ix = 0.5 * (grx + gmx)
            iy = 0.5 * (gry + gmy)
            it = wm - r
            sxx = gaussian_filter(ix * ix, window_sigma) + reg
            syy = gaussian_filter(iy * iy, window_sigma) + reg
            sxy = gaussian_filter(ix * iy, window_sigma)
            bx = -gaussian_filter(ix * it, window_sigma)
            by = -gaussian_filter(iy * it, window_sigma)
            det = sxx * syy - sxy * sxy
            du = (syy * bx - sxy * by) / det
            dv = (sxx * by - sxy * bx) / det
            u = u + du
            v = v + dv
            if max(np.abs(du).max(), np.abs(dv).max()) < tol:
                break

    mag = np.hypot(u, v)
    scale = np.where(mag > max_displacement, max_displacement / np.maximum(mag, 1e-300), 1.0)
    flow = FlowField(u * scale, v * scale)
    before = np.sum((mov - ref) ** 2)
    after = np.sum((warp(mov, flow) - ref) ** 2)
    if after > before:
        return FlowField.zeros(mov.shape)
    return flow


def _grid_plus(shape, v, u):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    return yy + v, xx + u


class FlowAligner(TransformerMixin, BaseEstimator):
    """Register every frame of a sequence to its per-time reference frame.

    Parameters
    ----------
    levels, iters, window_sigma, reg, max_displacement
        Passed to :func:`estimate_flow`.
    n_jobs : int
        Threads used across frames; results do not depend on it.

    Attributes
    ----------
    flows_ : list of FlowField
        Flow of the last transformed sequence.
    """

    def __init__(self, levels=4, iters=10, window_sigma=2.0, reg=1e-4,
                 max_displacement=16.0, n_jobs=1):
        self.levels = levels
        self.iters = iters
        self.window_sigma = window_sigma
        self.reg = reg
        self.max_displacement = max_displacement
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        return self

    def transform(self, X, reference=None):
        seq = check_sequence(X)
        if reference is None:
            raise ValueError("FlowAligner.transform needs the reference sequence")
        refs = check_sequence(reference, "reference")
        if refs.shape != seq.shape:
            raise ValueError(f"reference shape {refs.shape} does not match sequence {seq.shape}")

        def one(t):
            flow = estimate_flow(seq[t], refs[t], self.levels, self.iters,
                                 self.window_sigma, self.reg, self.max_displacement)
            return flow, warp(seq[t], flow)

        results = map_ordered(one, range(seq.shape[0]), self.n_jobs)
        self.flows_ = [r[0] for r in results]
        return np.stack([r[1] for r in results])
