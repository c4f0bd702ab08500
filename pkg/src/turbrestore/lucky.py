"""Lucky-region fusion of a registered stack.

Every patch of every aligned frame is scored for geometric consistency
with its reference (squared distance, lower is better) and for sharpness
(l1 norm of forward differences, higher is better). The fused patch at time
t is the average over the temporal window weighted by
``exp(-alpha1 * geometric + alpha2 * sharpness)``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._patches import PatchGrid, box_sums, weighted_patch_average
from ._validation import check_same_shape, check_sequence
from .parallel import map_ordered

__all__ = [
    "LuckyConfig",
    "geometric_score",
    "sharpness_score",
    "patch_scores",
    "default_alphas",
    "fuse_lucky",
    "lucky_fusion",
    "LuckyFusion",
]


@dataclass(frozen=True)
class LuckyConfig:
    """Weights and patch geometry of the fusion.

    ``alpha1`` / ``alpha2`` left as None are set per sequence to
    ``3 / median(geometric)`` and ``1 / median(sharpness)``.
    """

    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    patch_size: int = 9
    stride: int = 4
    temporal_window: int = 15

    def __post_init__(self):
        for name in ("alpha1", "alpha2"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be >= 0, got {v}")
        if self.patch_size < 3:
            raise ValueError(f"patch_size must be >= 3, got {self.patch_size}")
        if self.stride < 1 or self.temporal_window < 0:
            raise ValueError("stride must be >= 1 and temporal_window >= 0")


def geometric_score(aligned_patch, reference_patch):
    """Squared distance between an aligned patch and its reference."""
    a = np.asarray(aligned_patch, dtype=np.float64)
    b = np.asarray(reference_patch, dtype=np.float64)
    check_same_shape(a, b, ("aligned_patch", "reference_patch"))
    d = a - b
    return float(np.sum(d * d))


def sharpness_score(patch):
    """Sum of absolute forward differences along both axes."""
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 2 or min(p.shape) < 2:
        raise ValueError(f"patch must be at least 2x2, got {p.shape}")
    return float(np.sum(np.abs(np.diff(p, axis=1))) + np.sum(np.abs(np.diff(p, axis=0))))


def patch_scores(frame, reference, grid):
    """Geometric and sharpness scores of every grid patch of one frame."""
    P = grid.patch
    d = frame - reference
    geo = grid.sample(box_sums(d * d, P, P))
    gx = np.abs(np.diff(frame, axis=1))
    gy = np.abs(np.diff(frame, axis=0))
    sx = box_sums(gx, P, P - 1)
    sy = box_sums(gy, P - 1, P)
    sharp = grid.sample(sx) + grid.sample(sy)
    return geo, sharp


def default_alphas(geo, sharp):
    """``3 / median(geometric)`` and ``1 / median(sharpness)`` (0 if the median is 0)."""
    mg = float(np.median(geo))
    ms = float(np.median(sharp))
    return (3.0 / mg if mg > 0 else 0.0), (1.0 / ms if ms > 0 else 0.0)


def _scores(aligned, refs, grid, n_jobs):
    out = map_ordered(lambda t: patch_scores(aligned[t], refs[t], grid),
                      range(aligned.shape[0]), n_jobs)
    return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])


def _resolve(cfg, geo, sharp):
    a1, a2 = default_alphas(geo, sharp)
    return (a1 if cfg.alpha1 is None else cfg.alpha1,
            a2 if cfg.alpha2 is None else cfg.alpha2)


def _fuse_at(aligned, geo, sharp, t, a1, a2, grid, window):
    T = aligned.shape[0]
    idx = range(max(0, t - window), min(T, t + window + 1))
    logw = np.stack([-a1 * geo[s] + a2 * sharp[s] for s in idx])
    return weighted_patch_average([aligned[s] for s in idx], logw, grid)


def _check_inputs(aligned, reference_seq):
    aligned = check_sequence(aligned, "aligned")
    refs = check_sequence(reference_seq, "reference_seq")
    if aligned.shape != refs.shape:
        raise ValueError(f"aligned {aligned.shape} and reference {refs.shape} differ")
    return aligned, refs


def fuse_lucky(aligned, reference_seq, t, cfg=None):
    """Lucky frame at time ``t``.

    The reference of frame ``t + dt`` is ``reference_seq[t + dt]``. Automatic
    alphas are computed over the whole stack.
    """
    cfg = LuckyConfig() if cfg is None else cfg
    aligned, refs = _check_inputs(aligned, reference_seq)
    if not 0 <= t < aligned.shape[0]:
        raise ValueError(f"t={t} outside sequence of {aligned.shape[0]} frames")
    grid = PatchGrid(aligned.shape[1:], cfg.patch_size, cfg.stride)
    geo, sharp = _scores(aligned, refs, grid, 1)
    a1, a2 = _resolve(cfg, geo, sharp)
    return _fuse_at(aligned, geo, sharp, t, a1, a2, grid, cfg.temporal_window)


def lucky_fusion(aligned, reference_seq, cfg=None, n_jobs=1, return_alphas=False):
    """Lucky frames for every time index."""
    cfg = LuckyConfig() if cfg is None else cfg
    aligned, refs = _check_inputs(aligned, reference_seq)
    grid = PatchGrid(aligned.shape[1:], cfg.patch_size, cfg.stride)
    geo, sharp = _scores(aligned, refs, grid, n_jobs)
    a1, a2 = _resolve(cfg, geo, sharp)
    out = np.stack(map_ordered(
        lambda t: _fuse_at(aligned, geo, sharp, t, a1, a2, grid, cfg.temporal_window),
        range(aligned.shape[0]), n_jobs))
    if return_alphas:
        return out, (a1, a2)
    return out


class LuckyFusion(TransformerMixin, BaseEstimator):
    """Lucky-region fusion as a transformer; ``transform(X, reference)``.

    Parameters
    ----------
    alpha1, alpha2 : float or None
    patch_size, stride, temporal_window : int
    n_jobs : int

    Attributes
    ----------
    alphas_ : (float, float)
        Weights used on the last transformed stack.
    """

    def __init__(self, alpha1=None, alpha2=None, patch_size=9, stride=4, temporal_window=15,
                 n_jobs=1):
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.patch_size = patch_size
        self.stride = stride
        self.temporal_window = temporal_window
        self.n_jobs = n_jobs

    def _config(self):
        return LuckyConfig(self.alpha1, self.alpha2, self.patch_size, self.stride,
                           self.temporal_window)

    def fit(self, X, y=None):
        self._config()
        return self

    def transform(self, X, reference=None):
        if reference is None:
            raise ValueError("LuckyFusion.transform needs the reference sequence")
        out, self.alphas_ = lucky_fusion(X, reference, self._config(), self.n_jobs,
                                         return_alphas=True)
        return out
