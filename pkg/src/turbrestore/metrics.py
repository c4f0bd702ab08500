"""Image-quality measures used to evaluate restorations."""

import warnings

import numpy as np

from ._validation import check_frame, check_same_shape, check_sequence

__all__ = ["psnr", "gradient_l1", "normalized_gradient", "bar_pattern_dynamic_range"]


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical frames."""
    a = check_frame(a, "a")
    b = check_frame(b, "b")
    check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def gradient_l1(frame):
    """Total l1 norm of forward differences (same discretization as lucky sharpness)."""
    f = np.asarray(frame, dtype=np.float64)
    return float(np.sum(np.abs(np.diff(f, axis=1))) + np.sum(np.abs(np.diff(f, axis=0))))


def normalized_gradient(seq):
    """Per-frame gradient l1 norm divided by its maximum over the sequence.

    A sequence without any gradient gives all zeros and a warning.
    """
    seq = check_sequence(seq)
    g = np.array([gradient_l1(f) for f in seq])
    top = g.max()
    if top == 0:
        warnings.warn("sequence has no gradients; normalized gradient is all zero",
                      RuntimeWarning, stacklevel=2)
        return np.zeros_like(g)
    return g / top


def bar_pattern_dynamic_range(frame, bar_rows, gap_px=None, columns=None):
    """Peak-minus-valley across a two-bar probe, averaged over columns.

    Parameters
    ----------
    frame : ndarray (H, W)
    bar_rows : (int, int)
        Rows of the two bar centres.
    gap_px : int, optional
        Bar separation; taken from ``bar_rows`` when omitted.
    columns : slice or index array, optional
        Columns to average over (default: all).

    Returns
    -------
    float
        Mean of the two bar-centre values minus the minimum between them,
        clipped at 0.
    """
    f = check_frame(frame)
    r1, r2 = sorted(int(r) for r in bar_rows)
    if gap_px is not None and r2 - r1 != gap_px:
        raise ValueError(f"bar rows {bar_rows} are not {gap_px} px apart")
    if r2 - r1 < 2:
        raise ValueError("bars must be at least 2 px apart to have a valley")
    cols = slice(None) if columns is None else columns
    prof = f[:, cols]
    peak = 0.5 * (prof[r1] + prof[r2])
    valley = prof[r1 + 1:r2].min(axis=0)
    return float(np.mean(np.maximum(peak - valley, 0.0)))
