"""Physics-constrained PSF prior learned from simulated turbulence.

Tilt-free PSFs are drawn with small Zernike coefficients (rejection on
``||a_{4:N}||^2``), decomposed by PCA into a mean kernel plus orthonormal
components, and sparse-coded by orthogonal matching pursuit. The spread of
the codes gives the scales of the weighted-l1 prior used by the PSF update.
"""

import logging
import struct
import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_psf, check_rng
from .optics import OpticsParams, psfs_from_coeffs
from .zernike import remove_gradient_tilt, sample_zernike_coeffs

logger = logging.getLogger(__name__)

__all__ = [
    "PsfBasis",
    "SparseCode",
    "Ensemble",
    "generate_ensemble",
    "learn_basis",
    "omp_sparse_code",
    "sparse_code_batch",
    "estimate_sigmas",
    "train_prior",
    "PsfPrior",
    "write_psfb",
    "read_psfb",
]

SIGMA_FLOOR = 1e-6
MIN_ACCEPT_RATE = 1e-3


@dataclass(frozen=True)
class PsfBasis:
    """Mean kernel, orthonormal components and per-coefficient scales.

    Attributes
    ----------
    mean_kernel : ndarray (K, K)
    components : ndarray (p, K, K)
        Orthonormal as flattened vectors.
    sigmas : ndarray (p,)
    n_samples : int
        Ensemble size M used to learn the basis.
    kappa, tau : float
        Rejection threshold and sparse-coding tolerance used in training.
    dr0_range : (float, float)
    """

    mean_kernel: np.ndarray
    components: np.ndarray
    sigmas: np.ndarray
    n_samples: int = 0
    kappa: float = 0.0
    tau: float = 0.0
    dr0_range: tuple = (0.0, 0.0)
    explained_variance: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        k = self.mean_kernel.shape
        if self.mean_kernel.ndim != 2 or k[0] != k[1] or k[0] % 2 == 0:
            raise ValueError(f"mean kernel must be square with odd side, got {k}")
        if self.components.shape[1:] != k:
            raise ValueError(f"components {self.components.shape} do not match kernel {k}")
        if self.sigmas.shape != (self.components.shape[0],):
            raise ValueError("need one sigma per component")
        if np.any(~np.isfinite(self.sigmas)) or np.any(self.sigmas <= 0):
            raise ValueError("sigmas must be positive and finite")

    @property
    def kernel_size(self):
        return self.mean_kernel.shape[0]

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def matrix(self):
        """Components as rows of a (p, K*K) matrix."""
        return self.components.reshape(self.n_components, -1)

    def reconstruct(self, w):
        """Kernel ``mean + sum_j w_j u_j`` (not projected)."""
        w = np.asarray(w, dtype=np.float64)
        return self.mean_kernel + np.tensordot(w, self.components, axes=1)

    def project(self, h):
        """Coefficients of ``h - mean`` on the components."""
        return self.matrix @ (np.asarray(h, dtype=np.float64) - self.mean_kernel).ravel()

    def save(self, path):
        write_psfb(path, self)

    @classmethod
    def load(cls, path):
        return read_psfb(path)


class SparseCode(NamedTuple):
    """OMP result: coefficients, selected atoms and squared residual."""

    w: np.ndarray
    support: np.ndarray
    residual: float
    exhausted: bool


class Ensemble(NamedTuple):
    psfs: np.ndarray
    coeffs: np.ndarray
    dr0: np.ndarray
    accept_rate: dict


def _kappa_for(kappa, dr0, scale):
    return kappa * dr0 ** (5.0 / 3.0) if scale else kappa


def generate_ensemble(m, dr0_set, kappa=1.0, params=None, rng=None, scale_kappa=True,
                      batch=1024):
    """Draw ``m`` accepted tilt-free PSFs split evenly over ``dr0_set``.

    A draw is kept when ``||a_{4:N}||^2 <= kappa_d``, with
    ``kappa_d = kappa * (D/r0)^(5/3)`` if ``scale_kappa`` else ``kappa``.
    Kept coefficients lose their gradient tilt before the PSF is formed.

    Returns
    -------
    Ensemble
        ``psfs`` (m, K, K), the tilt-free ``coeffs`` (m, N), the D/r0 of each
        sample and the acceptance rate per D/r0.

    Raises
    ------
    RuntimeError
        If the acceptance rate at some D/r0 falls below 0.1%.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not kappa > 0:
        raise ValueError(f"kappa must be > 0, got {kappa}")
    dr0_set = np.atleast_1d(np.asarray(dr0_set, dtype=np.float64))
    if np.any(dr0_set <= 0):
        raise ValueError("every D/r0 must be > 0")
    params = OpticsParams() if params is None else params
    rng = check_rng(rng)
    n = params.n_zernike
    counts = np.full(len(dr0_set), m // len(dr0_set))
    counts[: m % len(dr0_set)] += 1

    coeffs, labels, rates = [], [], {}
    for d, need in zip(dr0_set, counts):
        kap = _kappa_for(kappa, d, scale_kappa)
        kept, drawn = [], 0
        while sum(len(k) for k in kept) < need:
            a = sample_zernike_coeffs(d, n, rng, size=batch)
            drawn += batch
            ok = np.sum(a[:, 3:] ** 2, axis=1) <= kap
            kept.append(a[ok])
            if drawn >= 10 * batch and sum(len(k) for k in kept) < MIN_ACCEPT_RATE * drawn:
                raise RuntimeError(f"accept rate below {MIN_ACCEPT_RATE:.1%} at D/r0={d:g}; "
                                   f"kappa={kap:g} is too small")
        a = np.concatenate(kept)
        rate = len(a) / drawn
        if rate < MIN_ACCEPT_RATE:
            raise RuntimeError(f"accept rate {rate:.2e} at D/r0={d:g}; kappa={kap:g} is too small")
        rates[float(d)] = rate
        logger.info("D/r0=%g: accept rate %.4f", d, rate)
        coeffs.append(a[:need])
        labels.append(np.full(need, d))
    coeffs = remove_gradient_tilt(np.concatenate(coeffs), params.phase_grid)
    psfs = psfs_from_coeffs(coeffs, params)
    return Ensemble(psfs, coeffs, np.concatenate(labels), rates)


def _fix_signs(vt):
    idx = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vt * signs[:, None]


def learn_basis(ensemble, p=60):
    """PCA of the mean-subtracted flattened kernels.

    Parameters
    ----------
    ensemble : ndarray (M, K, K)
    p : int
        Requested number of components. Reduced (with a warning) to the
        numerical rank of the centered ensemble.

    Returns
    -------
    PsfBasis
        Sigmas are placeholders (ones) until :func:`estimate_sigmas` runs.
    """
    X = np.asarray(ensemble, dtype=np.float64)
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError(f"ensemble must be (M, K, K), got {X.shape}")
    M, K, _ = X.shape
    if not 1 <= p <= M:
        raise ValueError(f"need 1 <= p <= M={M}, got p={p}")
    flat = X.reshape(M, -1)
    mean = flat.mean(axis=0)
    _, s, vt = np.linalg.svd(flat - mean, full_matrices=False)
    tol = s[0] * max(flat.shape) * np.finfo(float).eps if s.size and s[0] > 0 else np.inf
    rank = int(np.sum(s > tol))
    p_eff = min(p, rank, K * K)
    if p_eff < p:
        warnings.warn(f"ensemble rank {rank} < requested p={p}; using p={p_eff}",
                      RuntimeWarning, stacklevel=2)
    vt = _fix_signs(vt[:p_eff])
    var = s[:p_eff] ** 2 / max(M - 1, 1)
    return PsfBasis(mean_kernel=mean.reshape(K, K), components=vt.reshape(p_eff, K, K),
                    sigmas=np.ones(p_eff), n_samples=M, explained_variance=var)


def _check_kernel(h, basis):
    h = np.asarray(h, dtype=np.float64)
    if h.shape != basis.mean_kernel.shape:
        raise ValueError(f"kernel {h.shape} does not match basis {basis.mean_kernel.shape}")
    return h


def omp_sparse_code(h, basis, tau):
    """Orthogonal matching pursuit on the basis components.

    Greedily adds the atom most correlated with the residual and refits all
    selected coefficients by least squares, until ``||h - mean - U w||^2 <=
    tau`` or every atom is in use (``exhausted`` is then True if the
    tolerance is still not met).
    """
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    h = _check_kernel(h, basis)
    D = basis.matrix.T
    x = (h - basis.mean_kernel).ravel()
    w = np.zeros(basis.n_components)
    support = []
    r = x.copy()
    res = float(r @ r)
    while res > tau and len(support) < basis.n_components:
        corr = np.abs(D.T @ r)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        A = D[:, support]
        coef, *_ = np.linalg.lstsq(A, x, rcond=None)
        r = x - A @ coef
        res = float(r @ r)
        w[:] = 0.0
        w[support] = coef
    return SparseCode(w, np.sort(np.asarray(support, dtype=np.intp)), res, res > tau)


def sparse_code_batch(kernels, basis, tau):
    """OMP for many kernels at once on an orthonormal basis.

    With orthonormal atoms each OMP step picks the largest remaining inner
    product and the refit leaves earlier coefficients unchanged, so the
    code is the inner products taken in decreasing magnitude until the
    residual drops to ``tau``.

    Returns
    -------
    w : ndarray (n, p)
    residual : ndarray (n,)
    """
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    H = np.asarray(kernels, dtype=np.float64)
    n = H.shape[0]
    x = (H - basis.mean_kernel).reshape(n, -1)
    c = x @ basis.matrix.T
    total = np.sum(x * x, axis=1)
    order = np.argsort(-np.abs(c), axis=1, kind="stable")
    sq = np.take_along_axis(c * c, order, axis=1)
    # residual after k atoms, k = 0..p
    res = total[:, None] - np.concatenate([np.zeros((n, 1)), np.cumsum(sq, axis=1)], axis=1)
    res = np.maximum(res, 0.0)
    k = np.argmax(res <= tau, axis=1)
    k[~np.any(res <= tau, axis=1)] = basis.n_components
    keep = np.arange(basis.n_components)[None, :] < k[:, None]
    w = np.zeros_like(c)
    rows = np.repeat(np.arange(n)[:, None], basis.n_components, axis=1)
    w[rows[keep], order[keep]] = c[rows[keep], order[keep]]
    return w, res[np.arange(n), k]


def estimate_sigmas(codes):
    """Per-coefficient standard deviation over the codes, zeros included.

    Parameters
    ----------
    codes : sequence of SparseCode or ndarray (n, p)
    """
    if len(codes) and isinstance(codes[0], SparseCode):
        codes = [c.w for c in codes]
    W = np.asarray(codes, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 2:
        raise ValueError("need at least two codes")
    return np.maximum(W.std(axis=0), SIGMA_FLOOR)


def train_prior(dr0_set, m=2000, p=60, kappa=1.0, tau=1e-4, params=None, rng=None,
                return_ensemble=False):
    """Ensemble, PCA basis, sparse codes and sigmas in one call.

    ``tau`` is in squared-kernel units; kernels have unit energy (sum), so
    the default is 1e-4 of the kernel energy.
    """
    dr0_set = np.atleast_1d(np.asarray(dr0_set, dtype=np.float64))
    ens = generate_ensemble(m, dr0_set, kappa, params, rng)
    basis = learn_basis(ens.psfs, p)
    if basis.n_components:
        w, _ = sparse_code_batch(ens.psfs, basis, tau)
        sigmas = estimate_sigmas(w)
    else:
        sigmas = np.ones(0)
    basis = replace(basis, sigmas=sigmas, kappa=float(kappa), tau=float(tau),
                    dr0_range=(float(dr0_set.min()), float(dr0_set.max())))
    if return_ensemble:
        return basis, ens
    return basis


class PsfPrior(BaseEstimator):
    """Estimator wrapper around :func:`train_prior`.

    Parameters
    ----------
    dr0 : float or sequence of float
        Turbulence levels of the training ensemble.
    n_samples : int, default 2000
    n_components : int, default 60
    kappa : float, default 1.0
        Rejection threshold in rad^2 at D/r0 = 1, scaled by (D/r0)^(5/3).
    tau : float, default 1e-4
        OMP residual tolerance.
    optics : OpticsParams, optional
    seed : int, default 0

    Attributes
    ----------
    basis_ : PsfBasis
    """

    def __init__(self, dr0=2.0, n_samples=2000, n_components=60, kappa=1.0, tau=1e-4,
                 optics=None, seed=0):
        self.dr0 = dr0
        self.n_samples = n_samples
        self.n_components = n_components
        self.kappa = kappa
        self.tau = tau
        self.optics = optics
        self.seed = seed

    def fit(self, X=None, y=None):
        """Train on a simulated ensemble, or on the kernels ``X`` if given."""
        if X is None:
            self.basis_ = train_prior(self.dr0, self.n_samples, self.n_components, self.kappa,
                                      self.tau, self.optics, np.random.default_rng(self.seed))
            return self
        X = np.asarray(X, dtype=np.float64)
        for i, h in enumerate(X):
            check_psf(h, f"X[{i}]")
        basis = learn_basis(X, self.n_components)
        w, _ = sparse_code_batch(X, basis, self.tau)
        d = np.atleast_1d(self.dr0)
        self.basis_ = replace(basis, sigmas=estimate_sigmas(w), kappa=float(self.kappa),
                              tau=float(self.tau), dr0_range=(float(d.min()), float(d.max())))
        return self

    def transform(self, X):
        """Sparse codes (n, p) of the kernels ``X``."""
        w, _ = sparse_code_batch(X, self.basis_, self.basis_.tau)
        return w


_HEADER = struct.Struct("<4sIIII4d")
PSFB_VERSION = 1


def write_psfb(path, basis):
    """Write a basis in the little-endian PSFB container."""
    K, p = basis.kernel_size, basis.n_components
    head = _HEADER.pack(b"PSFB", PSFB_VERSION, K, p, int(basis.n_samples), float(basis.kappa),
                        float(basis.tau), float(basis.dr0_range[0]), float(basis.dr0_range[1]))
    with open(path, "wb") as f:
        f.write(head)
        for arr in (basis.mean_kernel, basis.components, basis.sigmas):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_psfb(path):
    """Read a PSFB container written by :func:`write_psfb`."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated PSFB header")
    magic, version, K, p, M, kappa, tau, lo, hi = _HEADER.unpack_from(data)
    if magic != b"PSFB":
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != PSFB_VERSION:
        raise ValueError(f"{path}: unsupported PSFB version {version}")
    n = K * K + p * K * K + p
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != n:
        raise ValueError(f"{path}: expected {n} values, found {body.size}")
    body = body.astype(np.float64)
    mean = body[:K * K].reshape(K, K)
    comps = body[K * K:K * K + p * K * K].reshape(p, K, K)
    sigmas = body[K * K + p * K * K:]
    return PsfBasis(mean, comps, sigmas, n_samples=M, kappa=kappa, tau=tau, dr0_range=(lo, hi))
