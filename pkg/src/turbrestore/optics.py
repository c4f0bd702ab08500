"""Fourier-optics model of imaging through turbulence.

Pupil phases are sampled on ``phase_grid`` points across the aperture and
zero-padded by two before the FFT, so one PSF pixel is the focal-plane
Nyquist spacing ``lambda * d / (2 D)``. The image pixel grid uses the same
spacing, which lets the simulator apply PSFs to images without resampling.
"""

from dataclasses import dataclass, asdict, replace

import numpy as np
from scipy.signal import correlate

from .zernike import remove_gradient_tilt, sample_zernike_coeffs, zernike_basis

__all__ = [
    "OpticsParams",
    "PhaseField",
    "CropEnergyError",
    "fried_parameter",
    "phase_structure_function",
    "long_exposure_otf",
    "short_exposure_otf",
    "diffraction_otf",
    "otf_frequency_grid",
    "phase_from_coeffs",
    "psf_from_phase",
    "psfs_from_coeffs",
    "radial_profile",
    "otf_convergence",
]

# r0 = (C * k^2 * Cn2 * L)^(-3/5)
_R0_CONSTANTS = {"plane": 0.423, "spherical": 0.423 * 3.0 / 8.0}


class CropEnergyError(ValueError):
    """Raised when a cropped PSF loses more energy than allowed."""


@dataclass(frozen=True)
class OpticsParams:
    """Imaging geometry and turbulence strength."""

    path_length_m: float = 4000.0
    aperture_diameter_m: float = 0.1
    focal_length_m: float = 0.4
    wavelength_m: float = 525e-9
    cn2: float = 1.5e-15
    phase_grid: int = 64
    image_size: int = 128
    n_zernike: int = 136
    block_size: int = 16
    kernel_size: int = 49
    correlation_blocks: float = 2.0
    max_crop_loss: float = 0.02
    wave: str = "plane"

    def __post_init__(self):
        for name in ("path_length_m", "aperture_diameter_m", "focal_length_m", "wavelength_m"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if not (np.isfinite(self.cn2) and self.cn2 >= 0):
            raise ValueError(f"cn2 must be >= 0, got {self.cn2!r}")
        g = self.phase_grid
        if g < 16 or g & (g - 1):
            raise ValueError(f"phase_grid must be a power of two >= 16, got {g}")
        if self.n_zernike < 4:
            raise ValueError(f"n_zernike must be >= 4, got {self.n_zernike}")
        if self.kernel_size % 2 == 0 or not 3 <= self.kernel_size <= 2 * g - 1:
            raise ValueError(f"kernel_size must be odd and < 2*phase_grid, got {self.kernel_size}")
        if self.block_size < 1 or self.image_size < 1:
            raise ValueError("block_size and image_size must be positive")
        if self.correlation_blocks < 0:
            raise ValueError("correlation_blocks must be >= 0")
        if self.wave not in _R0_CONSTANTS:
            raise ValueError(f"wave must be one of {sorted(_R0_CONSTANTS)}, got {self.wave!r}")

    @property
    def wavenumber(self):
        return 2.0 * np.pi / self.wavelength_m

    @property
    def r0(self):
        return fried_parameter(self)

    @property
    def dr0(self):
        """Aperture-to-coherence ratio D/r0 (0 without turbulence)."""
        return self.aperture_diameter_m / self.r0

    @property
    def fft_size(self):
        return 2 * self.phase_grid

    @property
    def pixel_pitch_m(self):
        """Focal-plane sample spacing (Nyquist for the diffraction cutoff)."""
        return self.wavelength_m * self.focal_length_m / (2.0 * self.aperture_diameter_m)

    @property
    def object_pitch_m(self):
        return self.wavelength_m * self.path_length_m / (2.0 * self.aperture_diameter_m)

    @property
    def cutoff_frequency(self):
        """Diffraction cutoff D / (lambda d) in cycles per metre."""
        return self.aperture_diameter_m / (self.wavelength_m * self.focal_length_m)

    def with_dr0(self, dr0):
        """Copy with ``cn2`` chosen so that D/r0 equals ``dr0``."""
        if dr0 < 0:
            raise ValueError(f"D/r0 must be >= 0, got {dr0!r}")
        if dr0 == 0:
            return replace(self, cn2=0.0)
        r0 = self.aperture_diameter_m / dr0
        c = _R0_CONSTANTS[self.wave]
        cn2 = r0 ** (-5.0 / 3.0) / (c * self.wavenumber ** 2 * self.path_length_m)
        return replace(self, cn2=cn2)

    def to_dict(self):
        return asdict(self)


def fried_parameter(params):
    """Fried parameter r0 in metres; ``inf`` when cn2 is zero."""
    if params.cn2 == 0:
        return np.inf
    c = _R0_CONSTANTS[params.wave]
    return (c * params.wavenumber ** 2 * params.cn2 * params.path_length_m) ** (-3.0 / 5.0)


def phase_structure_function(separation, r0):
    """Kolmogorov phase structure function 6.88 (s / r0)^(5/3), rad^2."""
    s = np.asarray(separation, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("separation must be >= 0")
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    return 6.88 * (s / r0) ** (5.0 / 3.0)


def _scaled_freq(freq_mag, params):
    f = np.asarray(freq_mag, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency magnitude must be >= 0")
    return params.wavelength_m * params.focal_length_m * f


def long_exposure_otf(freq_mag, params):
    """Mean atmospheric OTF with tilt included, exp(-3.44 (lambda d f / r0)^(5/3))."""
    x = _scaled_freq(freq_mag, params) / params.r0
    return np.exp(-3.44 * x ** (5.0 / 3.0))


def short_exposure_otf(freq_mag, params):
    """Mean atmospheric OTF with tilt removed.

    The bracket ``1 - (lambda d f / D)^(1/3)`` turns negative past the
    diffraction cutoff, where the value is defined as 0.
    """
    lf = _scaled_freq(freq_mag, params)
    x = lf / params.r0
    rho = lf / params.aperture_diameter_m
    inside = rho <= 1.0
    bracket = 1.0 - np.cbrt(np.where(inside, rho, 1.0))
    return np.where(inside, np.exp(-3.44 * x ** (5.0 / 3.0) * bracket), 0.0)


def otf_frequency_grid(params):
    """|f| in cycles per metre for the unshifted (fft_size, fft_size) OTF layout."""
    n = params.fft_size
    k = np.fft.fftfreq(n) * n
    kx, ky = np.meshgrid(k, k)
    # one OTF bin = one pupil sample of shear = D / phase_grid in lambda*d*f
    step = params.aperture_diameter_m / (params.phase_grid * params.wavelength_m
                                         * params.focal_length_m)
    return np.hypot(kx, ky) * step


def diffraction_otf(params):
    """Diffraction OTF of the sampled circular pupil, DC = 1.

    Computed as the direct spatial autocorrelation of the pupil mask and laid
    out like ``numpy.fft.fft2`` output of an (fft_size, fft_size) PSF.
    """
    _, mask = zernike_basis(1, params.phase_grid)
    m = mask.astype(np.float64)
    ac = correlate(m, m, mode="full", method="direct")
    g = params.phase_grid
    n = params.fft_size
    out = np.zeros((n, n))
    # ac index (g-1) is zero shear; shear s maps to bin s mod n
    idx = (np.arange(2 * g - 1) - (g - 1)) % n
    out[np.ix_(idx, idx)] = ac
    return out / ac[g - 1, g - 1]


@dataclass(frozen=True)
class PhaseField:
    """Pupil phase in radians; zero outside ``pupil_mask``."""

    phi: np.ndarray
    pupil_mask: np.ndarray


def phase_from_coeffs(coeffs, grid):
    """Pupil phase sum_j a_j Z_j on a ``grid x grid`` sampling."""
    a = np.asarray(coeffs, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError("phase_from_coeffs expects one coefficient vector")
    basis, mask = zernike_basis(a.size, grid)
    phi = np.tensordot(a, basis, axes=1)
    return PhaseField(phi=phi, pupil_mask=mask)


def _crop(psf, kernel_size):
    n = psf.shape[-1]
    c = n // 2
    h = kernel_size // 2
    return psf[..., c - h:c + h + 1, c - h:c + h + 1]


def _psfs_from_phase_stack(phi, mask, params, crop, check_energy):
    g = params.phase_grid
    n = params.fft_size
    field = np.zeros(phi.shape[:-2] + (n, n), dtype=np.complex128)
    field[..., :g, :g] = mask * np.exp(1j * phi)
    psf = np.abs(np.fft.fft2(field)) ** 2
    psf = np.fft.fftshift(psf, axes=(-2, -1))
    psf /= psf.sum(axis=(-2, -1), keepdims=True)
    if not crop:
        return psf
    kern = _crop(psf, params.kernel_size)
    kept = kern.sum(axis=(-2, -1))
    loss = 1.0 - kept
    if check_energy and np.any(loss > params.max_crop_loss):
        raise CropEnergyError(
            f"{params.kernel_size}x{params.kernel_size} crop loses up to {loss.max():.2%} "
            f"of PSF energy (limit {params.max_crop_loss:.0%}); widen kernel_size")
    kern = kern / kept[..., None, None]
    return np.clip(kern, 0.0, None)


def psf_from_phase(phase, params, crop=True, check_energy=True):
    """PSF |FT{pupil * exp(i phi)}|^2, normalized to unit sum.

    Parameters
    ----------
    phase : PhaseField
    params : OpticsParams
    crop : bool
        Return the centred ``kernel_size`` crop (default) or the full
        (fft_size, fft_size) PSF with the optical axis at index fft_size // 2.
    check_energy : bool
        Raise :class:`CropEnergyError` if the crop drops more than
        ``params.max_crop_loss`` of the energy.
    """
    if phase.phi.shape != (params.phase_grid, params.phase_grid):
        raise ValueError(f"phase grid {phase.phi.shape} does not match phase_grid={params.phase_grid}")
    return _psfs_from_phase_stack(phase.phi, phase.pupil_mask, params, crop, check_energy)


def psfs_from_coeffs(coeffs, params, crop=True, check_energy=True, batch=256):
    """Vectorized PSFs for a (M, N) stack of coefficient vectors."""
    a = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    basis, mask = zernike_basis(a.shape[1], params.phase_grid)
    flat = basis.reshape(basis.shape[0], -1)
    outs = []
    for start in range(0, a.shape[0], batch):
        chunk = a[start:start + batch]
        phi = (chunk @ flat).reshape(-1, params.phase_grid, params.phase_grid)
        outs.append(_psfs_from_phase_stack(phi, mask, params, crop, check_energy))
    return np.concatenate(outs)


def radial_profile(grid2d, radius, bins):
    """Average ``grid2d`` in annuli of ``radius`` with the given bin edges."""
    idx = np.digitize(radius.ravel(), bins) - 1
    ok = (idx >= 0) & (idx < len(bins) - 1)
    sums = np.bincount(idx[ok], grid2d.ravel()[ok], minlength=len(bins) - 1)
    counts = np.bincount(idx[ok], minlength=len(bins) - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts


def otf_convergence(params, n_psfs, rng, tilt_removed=True, batch=500):
    """Relative RMS gap between a simulated mean OTF and its closed form.

    ``n_psfs`` full-size PSFs are drawn at ``params.dr0``; the mean of their
    OTFs is compared, radially averaged in one-bin annuli inside the
    diffraction cutoff, with the diffraction OTF times the short-exposure
    (``tilt_removed``) or long-exposure model.

    Returns
    -------
    error : float
        ``rms(measured - model) / rms(model)`` over the passband.
    radius : ndarray
        Normalized annulus centres f / f_cutoff.
    measured, model : ndarray
        Radial profiles.
    """
    rng = np.random.default_rng(rng)
    dr0 = params.dr0
    acc = np.zeros((params.fft_size, params.fft_size))
    done = 0
    while done < n_psfs:
        m = min(batch, n_psfs - done)
        a = sample_zernike_coeffs(dr0, params.n_zernike, rng, size=m)
        if tilt_removed:
            a = remove_gradient_tilt(a, params.phase_grid)
        psf = psfs_from_coeffs(a, params, crop=False)
        acc += np.fft.fft2(np.fft.ifftshift(psf, axes=(1, 2))).real.sum(axis=0)
        done += m
    otf = acc / n_psfs
    f = otf_frequency_grid(params)
    atm = short_exposure_otf(f, params) if tilt_removed else long_exposure_otf(f, params)
    model = diffraction_otf(params) * atm
    rho = f / params.cutoff_frequency
    bins = (np.arange(params.phase_grid + 1) + 0.5) / params.phase_grid
    mr = radial_profile(otf, rho, bins)
    tr = radial_profile(model, rho, bins)
    ok = np.isfinite(mr) & (bins[1:] <= 1.0)
    err = np.sqrt(np.mean((mr[ok] - tr[ok]) ** 2)) / np.sqrt(np.mean(tr[ok] ** 2))
    centres = 0.5 * (bins[:-1] + bins[1:])
    return float(err), centres[ok], mr[ok], tr[ok]
