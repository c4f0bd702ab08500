"""Denoisers usable as plug-and-play priors.

A denoiser is any callable ``f(image, sigma) -> image`` where ``sigma`` is
the noise standard deviation on the [0, 1] intensity scale.
"""

import importlib.util

import numpy as np
from skimage.restoration import denoise_nl_means, denoise_tv_chambolle

__all__ = ["get_denoiser", "register_denoiser", "available_denoisers"]


def _nlm(img, sigma):
    if sigma <= 0:
        return img.copy()
    return denoise_nl_means(img, h=0.8 * sigma, sigma=sigma, patch_size=5,
                            patch_distance=3, fast_mode=True)


def _tv(img, sigma):
    if sigma <= 0:
        return img.copy()
    return denoise_tv_chambolle(img, weight=sigma)


def _identity(img, sigma):
    return img.copy()


_REGISTRY = {"nlm": _nlm, "tv": _tv, "none": _identity}

if importlib.util.find_spec("bm3d") is not None:  # pragma: no cover - optional
    def _bm3d(img, sigma):
        import bm3d
        if sigma <= 0:
            return img.copy()
        return np.asarray(bm3d.bm3d(img, sigma_psd=sigma), dtype=np.float64)

    _REGISTRY["bm3d"] = _bm3d


def register_denoiser(name, func):
    """Make ``func(image, sigma)`` available under ``name``."""
    if not callable(func):
        raise TypeError("denoiser must be callable")
    _REGISTRY[name] = func


def available_denoisers():
    return sorted(_REGISTRY)


def get_denoiser(name_or_func):
    """Resolve a registered name, or pass a callable through."""
    if callable(name_or_func):
        return name_or_func
    try:
        return _REGISTRY[name_or_func]
    except KeyError:
        raise ValueError(f"unknown denoiser {name_or_func!r}; "
                         f"available: {available_denoisers()}") from None
