"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


def check_frame(frame, name="frame", copy=False):
    """Return ``frame`` as a finite 2-D float64 array."""
    arr = np.array(frame, dtype=np.float64, copy=copy)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_sequence(seq, name="sequence", min_frames=1):
    """Return a (T, H, W) float64 stack.

    Accepts a 3-D array or any iterable of equally shaped 2-D frames. The
    error for mismatched frames names the first offending index.
    """
    if isinstance(seq, np.ndarray) and seq.ndim == 3:
        arr = np.asarray(seq, dtype=np.float64)
    else:
        frames = [np.asarray(f, dtype=np.float64) for f in seq]
        if not frames:
            raise ValueError(f"{name} has no frames")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.ndim != 2:
                raise ValueError(f"{name}[{i}] must be 2-D, got shape {f.shape}")
            if f.shape != shape:
                raise ValueError(
                    f"{name}[{i}] has shape {f.shape}, expected {shape}")
        arr = np.stack(frames)
    if arr.shape[0] < min_frames:
        raise ValueError(f"{name} needs at least {min_frames} frames")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_psf(kernel, name="psf", atol=1e-9):
    """Validate a PSF kernel: square, odd side, nonnegative, unit sum."""
    k = check_frame(kernel, name)
    if k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ValueError(f"{name} must be square with odd side, got {k.shape}")
    if np.any(k < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(k.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1, sums to {k.sum()!r}")
    return k


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ValueError(
            f"{names[0]} and {names[1]} differ in shape: {a.shape} vs {b.shape}")


def check_odd(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or value < minimum or value % 2 == 0:
        raise ValueError(f"{name} must be an odd integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_rng(seed):
    """Turn None, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed, n):
    """Derive ``n`` independent child seeds from one master seed.

    Children depend only on (seed, index), so work scheduled in any order
    reproduces the same streams.
    """
    if isinstance(seed, np.random.Generator):
        seed = seed.bit_generator.seed_seq
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    # built by key rather than .spawn() so repeated calls agree
    return [np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key + (i,))
            for i in range(n)]
