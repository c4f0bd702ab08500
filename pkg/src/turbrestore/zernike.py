"""Noll-indexed Zernike polynomials and Kolmogorov coefficient statistics."""

from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import gamma

__all__ = [
    "noll_to_nm",
    "zernike_radial",
    "zernike_basis",
    "noll_covariance",
    "sample_zernike_coeffs",
    "remove_tilt",
    "remove_gradient_tilt",
    "gradient_tilt_matrix",
]


def noll_to_nm(j):
    """Radial order n and azimuthal frequency m >= 0 of Noll index ``j``.

    Within a radial order |m| increases; even j carry cos(m theta), odd j
    carry sin(m theta).
    """
    if j < 1:
        raise ValueError(f"Noll index starts at 1, got {j}")
    n = int((np.sqrt(8 * j - 7) - 1) // 2)
    k = j - n * (n + 1) // 2 - 1
    if n % 2 == 0:
        m = 2 * ((k + 1) // 2)
    else:
        m = 2 * (k // 2) + 1
    return n, m


def zernike_radial(n, m, rho):
    out = np.zeros_like(rho, dtype=np.float64)
    for s in range((n - m) // 2 + 1):
        c = ((-1) ** s * factorial(n - s)
             / (factorial(s) * factorial((n + m) // 2 - s) * factorial((n - m) // 2 - s)))
        out += c * rho ** (n - 2 * s)
    return out


def pupil_coordinates(grid):
    """Normalized pupil coordinates: the disk of radius 1 spans ``grid`` samples."""
    c = (np.arange(grid) - (grid - 1) / 2.0) / (grid / 2.0)
    x, y = np.meshgrid(c, c)
    return x, y


def _polynomials(n_modes, grid):
    x, y = pupil_coordinates(grid)
    rho = np.hypot(x, y)
    theta = np.arctan2(y, x)
    out = np.zeros((n_modes, grid, grid))
    for j in range(1, n_modes + 1):
        n, m = noll_to_nm(j)
        if m == 0:
            out[j - 1] = np.sqrt(n + 1) * zernike_radial(n, 0, rho)
        else:
            ang = np.cos(m * theta) if j % 2 == 0 else np.sin(m * theta)
            out[j - 1] = np.sqrt(2 * (n + 1)) * zernike_radial(n, m, rho) * ang
    return out, rho <= 1.0


@lru_cache(maxsize=8)
def _basis(n_modes, grid):
    poly, mask = _polynomials(n_modes, grid)
    basis = np.where(mask, poly, 0.0)
    basis.setflags(write=False)
    mask.setflags(write=False)
    return basis, mask


def zernike_basis(n_modes, grid):
    """Noll basis images Z_1..Z_N on a ``grid x grid`` pupil sampling.

    Returns ``(basis, mask)`` with ``basis`` of shape (N, grid, grid), zero
    outside the unit disk. Arrays are cached and read-only.
    """
    return _basis(int(n_modes), int(grid))


def _noll_entry(i, j):
    ni, mi = noll_to_nm(i)
    nj, mj = noll_to_nm(j)
    if mi != mj:
        return 0.0
    if mi != 0 and (i % 2) != (j % 2):
        return 0.0
    sign = (-1) ** ((ni + nj - 2 * mi) // 2)
    num = gamma(14.0 / 3.0) * gamma((ni + nj - 5.0 / 3.0) / 2.0)
    den = (gamma((ni - nj + 17.0 / 3.0) / 2.0) * gamma((nj - ni + 17.0 / 3.0) / 2.0)
           * gamma((ni + nj + 23.0 / 3.0) / 2.0))
    return 0.0072 * np.pi ** (8.0 / 3.0) * sign * np.sqrt((ni + 1) * (nj + 1)) * num / den


@lru_cache(maxsize=8)
def _noll_unit(n_modes):
    cov = np.zeros((n_modes, n_modes))
    for i in range(2, n_modes + 1):
        for j in range(i, n_modes + 1):
            cov[i - 1, j - 1] = cov[j - 1, i - 1] = _noll_entry(i, j)
    # symmetric square root; piston row/column stay zero
    vals, vecs = np.linalg.eigh(cov[1:, 1:])
    root = np.zeros_like(cov)
    root[1:, 1:] = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    cov.setflags(write=False)
    root.setflags(write=False)
    return cov, root


def noll_covariance(n_modes, dr0=1.0):
    """Kolmogorov covariance of Noll coefficients a_1..a_N in rad^2.

    Piston is excluded (zero row and column). Entries scale as
    ``(D/r0)**(5/3)``; the diagonal reproduces Noll's residual table
    (var a_2 = 0.448, var a_4 = 0.0232 at D/r0 = 1).
    """
    cov, _ = _noll_unit(int(n_modes))
    return cov * float(dr0) ** (5.0 / 3.0)


def sample_zernike_coeffs(dr0, n, rng, size=None):
    """Draw Noll coefficient vectors for turbulence strength ``dr0 = D/r0``.

    Parameters
    ----------
    dr0 : float
        Aperture-to-coherence ratio. Zero gives all-zero coefficients.
    n : int
        Number of Noll modes (>= 4).
    rng : numpy.random.Generator
    size : int, optional
        Number of vectors; ``None`` returns a single (n,) vector.

    Returns
    -------
    ndarray of shape (n,) or (size, n), piston fixed at 0.
    """
    if n < 4:
        raise ValueError(f"need at least 4 Noll modes, got {n}")
    if dr0 < 0 or not np.isfinite(dr0):
        raise ValueError(f"D/r0 must be finite and >= 0, got {dr0!r}")
    _, root = _noll_unit(int(n))
    shape = (n,) if size is None else (int(size), n)
    white = rng.standard_normal(shape)
    return (white @ root.T) * float(dr0) ** (5.0 / 6.0)


def remove_tilt(coeffs):
    """Zero the Zernike tilts a_2 and a_3 (returns a copy)."""
    a = np.array(coeffs, dtype=np.float64, copy=True)
    if a.shape[-1] < 3:
        raise ValueError("coefficient vectors need at least 3 entries")
    a[..., 1:3] = 0.0
    return a


@lru_cache(maxsize=8)
def _gradient_tilt(n_modes, grid):
    # differentiate the unmasked polynomials so the disk edge adds no jump
    poly, mask = _polynomials(n_modes, grid)
    gy, gx = np.gradient(poly, axis=(1, 2))
    area = mask.sum()
    gmat = np.stack([(gx * mask).sum(axis=(1, 2)) / area,
                     (gy * mask).sum(axis=(1, 2)) / area])
    gmat.setflags(write=False)
    return gmat


def gradient_tilt_matrix(n_modes, grid):
    """(2, N) matrix mapping coefficients to the pupil-mean phase gradient.

    Rows are the x and y gradients in rad per pupil sample. The PSF centroid
    moves in proportion to this mean gradient.
    """
    return _gradient_tilt(int(n_modes), int(grid))


def remove_gradient_tilt(coeffs, grid):
    """Set a_2, a_3 so the pupil-mean phase gradient vanishes.

    This is the centroid-centering tilt compensation: the resulting PSF has
    its centroid at the optical axis. Higher-order modes are untouched.
    """
    a = remove_tilt(coeffs)
    g = gradient_tilt_matrix(a.shape[-1], grid)
    residual = a @ g.T
    a[..., 1] = -residual[..., 0] / g[0, 1]
    a[..., 2] = -residual[..., 1] / g[1, 2]
    return a
