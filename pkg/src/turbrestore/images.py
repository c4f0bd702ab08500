"""Synthetic probes and the standard grayscale test set."""

import numpy as np
from skimage import color, data
from skimage.transform import resize

__all__ = [
    "usaf_chart",
    "bar_probe",
    "moving_square_sequence",
    "standard_images",
    "STANDARD_NAMES",
]

STANDARD_NAMES = ("camera", "astronaut", "coins", "moon", "chelsea", "coffee", "clock",
                  "brick", "grass", "gravel")


def _bars(img, y, x, width, vertical, value):
    # three bars of ``width`` separated by ``width``, each 5*width long
    length = 5 * width
    for k in range(3):
        if vertical:
            img[y:y + length, x + 2 * k * width:x + (2 * k + 1) * width] = value
        else:
            img[y + 2 * k * width:y + (2 * k + 1) * width, x:x + length] = value


def usaf_chart(size=128, background=0.1, foreground=0.9, widths=(5, 4, 3, 3, 2, 2, 1, 1)):
    """Resolution chart of bar triplets in both orientations.

    Groups are packed in rows from the largest bar width down; the space
    below the last row holds a disk and a mid-gray square.
    """
    img = np.full((size, size), float(background))
    gap = max(2, size // 32)
    y, x, row_h = gap, gap, 0
    for w in widths:
        group_w = 11 * w
        if x + group_w > size - gap:
            y += row_h + gap
            x, row_h = gap, 0
        if y + 5 * w > size - gap:
            break
        _bars(img, y, x, w, True, foreground)
        _bars(img, y, x + 6 * w, w, False, foreground)
        x += group_w + gap
        row_h = max(row_h, 5 * w)
    top = y + row_h + gap
    r = max(2, (size - top - gap) // 2)
    if top + 2 * r <= size:
        yy, xx = np.mgrid[0:size, 0:size]
        cy = top + r
        img[(yy - cy) ** 2 + (xx - (gap + r)) ** 2 <= r * r] = foreground
        x0 = 3 * gap + 2 * r
        img[top:top + 2 * r, x0:min(size - gap, x0 + 2 * r)] = 0.5 * (background + foreground)
    return img


def bar_probe(size=64, gap=4, width=1, value=1.0, background=0.0):
    """Two horizontal bars ``gap`` px apart (centre to centre).

    Returns
    -------
    img : ndarray (size, size)
    rows : (int, int)
        Rows of the bar centres.
    """
    img = np.full((size, size), float(background))
    c = size // 2
    r1 = c - gap // 2
    r2 = r1 + gap
    h = width // 2
    for r in (r1, r2):
        img[r - h:r - h + width, size // 8:size - size // 8] = value
    return img, (r1, r2)


def moving_square_sequence(n_frames=31, size=64, square=8, speed=None, background=0.2,
                           value=1.0, width=None):
    """Bright square moving left to right over a flat background.

    ``speed`` defaults to ``square + 1`` px/frame, so consecutive squares
    never overlap. The frame is ``size`` rows by ``width`` columns; the
    default width fits the whole path with a ``square`` margin at both ends
    so the square never revisits a location.

    Returns
    -------
    seq : ndarray (n_frames, size, width)
    positions : list of (row, col)
        Top-left corner of the square in every frame.
    """
    speed = square + 1 if speed is None else speed
    path = square + (n_frames - 1) * speed
    width = max(size, path + 2 * square) if width is None else width
    if width < path:
        raise ValueError(f"width {width} cannot hold a path of {path} px")
    seq = np.full((n_frames, size, width), float(background))
    y0 = (size - square) // 2
    x_start = (width - path) // 2
    positions = []
    for t in range(n_frames):
        x0 = x_start + t * speed
        seq[t, y0:y0 + square, x0:x0 + square] = value
        positions.append((y0, x0))
    return seq, positions


def _gray(img):
    img = np.asarray(img)
    if img.ndim == 3:
        img = color.rgb2gray(img[..., :3])
    img = img.astype(np.float64)
    if img.max() > 1.0:
        img = img / 255.0
    return img


def standard_images(size=128, names=STANDARD_NAMES):
    """Grayscale test images from scikit-image, centre-cropped and resized.

    Returns
    -------
    dict name -> ndarray (size, size) in [0, 1]
    """
    out = {}
    for name in names:
        img = _gray(getattr(data, name)())
        h, w = img.shape
        s = min(h, w)
        img = img[(h - s) // 2:(h - s) // 2 + s, (w - s) // 2:(w - s) // 2 + s]
        out[name] = np.clip(resize(img, (size, size), anti_aliasing=True), 0.0, 1.0)
    return out
