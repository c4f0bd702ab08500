"""Patch-grid geometry and overlap blending shared by the patch estimators."""

import numpy as np


def patch_starts(length, patch, stride):
    """Top-left offsets covering ``[0, length)`` with patches of ``patch``.

    The last patch is clamped to end at the border, so every pixel is
    covered at least once.
    """
    if patch > length:
        raise ValueError(f"patch size {patch} exceeds image side {length}")
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] != length - patch:
        starts.append(length - patch)
    return np.asarray(starts, dtype=np.intp)


def raised_cosine_1d(patch):
    """Strictly positive raised-cosine taper of length ``patch``."""
    i = np.arange(patch)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * (i + 0.5) / patch)


def raised_cosine(patch):
    """Separable 2-D version of :func:`raised_cosine_1d`."""
    w = raised_cosine_1d(patch)
    return np.outer(w, w)


def box_sums(img, ph, pw):
    """Sums of ``img`` over every ``ph x pw`` window (valid positions).

    Leading axes are batch axes.

    Plain shifted additions in a fixed order: all-zero windows give an exact
    zero, which an integral image does not guarantee.
    """
    h, w = img.shape[-2:]
    lead = img.shape[:-2]
    rows = np.zeros(lead + (h - ph + 1, w))
    for i in range(ph):
        rows += img[..., i:i + h - ph + 1, :]
    out = np.zeros(lead + (h - ph + 1, w - pw + 1))
    for j in range(pw):
        out += rows[..., j:j + w - pw + 1]
    return out


class PatchGrid:
    """Patch positions plus the accumulated window used for blending."""

    def __init__(self, shape, patch, stride):
        self.shape = tuple(shape)
        self.patch = int(patch)
        self.ys = patch_starts(self.shape[0], self.patch, stride)
        self.xs = patch_starts(self.shape[1], self.patch, stride)
        self.window = raised_cosine(self.patch)
        self._w1 = raised_cosine_1d(self.patch)
        self.norm = self.scatter(np.ones((len(self.ys), len(self.xs))))

    @property
    def grid_shape(self):
        return len(self.ys), len(self.xs)

    def scatter(self, coef):
        """Place ``coef[p] * window`` at every patch p and sum the overlaps."""
        h, w = self.shape
        P = self.patch
        imp = np.zeros((h - P + 1, w - P + 1))
        imp[np.ix_(self.ys, self.xs)] = coef
        # the window is separable: spread along rows, then along columns
        w1 = self._w1
        rows = np.zeros((h, w - P + 1))
        for i in range(P):
            rows[i:i + h - P + 1] += w1[i] * imp
        out = np.zeros(self.shape)
        for j in range(P):
            out[:, j:j + w - P + 1] += w1[j] * rows
        return out

    def sample(self, patch_map):
        """Read a valid-position map (e.g. from box_sums) at grid positions."""
        return patch_map[np.ix_(self.ys, self.xs)]


def weighted_patch_average(frames, logw, grid):
    """Blend per-patch weighted temporal averages into one frame.

    Parameters
    ----------
    frames : sequence of ndarray (H, W)
    logw : ndarray (n, rows, cols)
        Log-weights per frame and patch; shifted by their per-patch maximum
        before exponentiation, which leaves the normalized weights unchanged.
    grid : PatchGrid
    """
    logw = np.asarray(logw, dtype=np.float64)
    w = np.exp(logw - logw.max(axis=0))
    w /= w.sum(axis=0)
    num = np.zeros(grid.shape)
    for k, frame in enumerate(frames):
        num += grid.scatter(w[k]) * frame
    return num / grid.norm
