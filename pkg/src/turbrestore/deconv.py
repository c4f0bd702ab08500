"""Blind deconvolution with a plug-and-play image prior and a PSF basis prior.

The latent image and the PSF are updated alternately. The image step is a
half-quadratic-splitting cycle: a closed-form Fourier-domain fidelity step
followed by a denoiser. The PSF is restricted to ``mean + sum_j w_j u_j``
over the learned basis, and ``w`` solves a weighted-l1 least-squares
problem. All convolutions are circular on a padded, edge-tapered copy of
the input; the result is cropped back at the end.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_frame, check_same_shape, check_sequence
from .denoisers import get_denoiser
from .parallel import map_ordered

logger = logging.getLogger(__name__)

__all__ = [
    "DeconvConfig",
    "DeconvResult",
    "psf_to_otf",
    "circular_convolve",
    "fidelity_step",
    "update_image",
    "psf_operator",
    "wsub_objective",
    "wsub_gradient",
    "update_psf_weights",
    "project_psf",
    "blind_deconvolve",
    "BlindDeconvolver",
]


@dataclass(frozen=True)
class DeconvConfig:
    """Solver settings.

    Attributes
    ----------
    lam : float
        Image-prior strength; the denoiser runs at ``sigma = sqrt(lam / (2 rho))``
        for intensities in [0, 1] and a pixel-sum fidelity term.
    gamma : float
        Strength of the weighted-l1 PSF prior.
    outer_iters, inner_iters : int
        Alternations, and proximal-gradient iterations of the PSF update.
    tol : float
        Relative-change stopping threshold of the PSF update.
    denoiser : str or callable
    rho : (float, float)
        First and last fidelity coupling of the image steps; intermediate
        values are spaced geometrically over the outer iterations.
    pnp_cycles : int
        Image cycles per outer iteration.
    """

    lam: float = 1e-5
    gamma: float = 1e-3
    outer_iters: int = 15
    inner_iters: int = 50
    tol: float = 1e-4
    denoiser: object = "nlm"
    rho: tuple = (1e-3, 1e-1)
    pnp_cycles: int = 1

    def __post_init__(self):
        if not self.lam > 0 or not self.gamma > 0:
            raise ValueError("lam and gamma must be > 0")
        if self.outer_iters < 1 or self.inner_iters < 1 or self.pnp_cycles < 1:
            raise ValueError("iteration counts must be >= 1")
        if len(self.rho) != 2 or min(self.rho) <= 0:
            raise ValueError("rho must be a pair of positive values")

    def rho_schedule(self):
        n = self.outer_iters * self.pnp_cycles
        return np.geomspace(self.rho[0], self.rho[1], n)


class DeconvResult(NamedTuple):
    latent: np.ndarray
    psf: np.ndarray
    weights: np.ndarray
    objective_trace: np.ndarray
    flagged: bool


def psf_to_otf(h, shape):
    """FFT of ``h`` zero-padded to ``shape`` with its centre moved to (0, 0)."""
    h = np.asarray(h, dtype=np.float64)
    kh, kw = h.shape
    if kh > shape[0] or kw > shape[1]:
        raise ValueError(f"kernel {h.shape} larger than image {shape}")
    pad = np.zeros(shape)
    pad[:kh, :kw] = h
    pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(pad)


def circular_convolve(img, h):
    """Circular convolution ``h (*) img`` via the FFT."""
    return np.real(np.fft.ifft2(np.fft.fft2(img) * psf_to_otf(h, img.shape)))


def fidelity_step(y, h, v, rho):
    """Minimize ``||y - h (*) x||^2 + rho ||x - v||^2`` over x (circular model)."""
    H = psf_to_otf(h, y.shape)
    num = np.conj(H) * np.fft.fft2(y) + rho * np.fft.fft2(v)
    return np.real(np.fft.ifft2(num / (np.abs(H) ** 2 + rho)))


def update_image(y, h, z_prev, lam, denoiser="nlm", rho=1.0):
    """One plug-and-play cycle: Fourier fidelity step, then denoise.

    The denoiser strength ``sqrt(lam / (2 rho))`` is the noise level for
    which denoising solves the splitting subproblem ``rho ||x - z||^2 +
    lam g(z)``.
    """
    x = fidelity_step(y, h, z_prev, rho)
    sigma = np.sqrt(lam / (2.0 * rho))
    return get_denoiser(denoiser)(x, sigma)


def psf_operator(z, basis):
    """Columns ``u_j (*) z`` as an (n_pixels, p) matrix plus ``mean (*) z``."""
    Z = np.fft.fft2(z)
    cols = np.empty((z.size, basis.n_components))
    for j, u in enumerate(basis.components):
        cols[:, j] = np.real(np.fft.ifft2(Z * psf_to_otf(u, z.shape))).ravel()
    offset = np.real(np.fft.ifft2(Z * psf_to_otf(basis.mean_kernel, z.shape))).ravel()
    return cols, offset


def wsub_objective(w, gram, corr, const, weights):
    """``||b - A w||^2 + sum_j weights_j |w_j|`` from the normal-equation terms."""
    return float(w @ gram @ w - 2.0 * corr @ w + const + np.sum(weights * np.abs(w)))


def wsub_gradient(w, gram, corr):
    """Gradient of the smooth part ``||b - A w||^2``."""
    return 2.0 * (gram @ w - corr)


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _solve_wsub(gram, corr, const, weights, w0, iters, tol):
    """Monotone FISTA on the weighted-l1 least-squares problem."""
    L = 2.0 * float(np.linalg.eigvalsh(gram)[-1])
    if L <= 0:
        return np.zeros_like(w0), np.array([const])
    step = 1.0 / L
    x = w0.copy()
    yk = x.copy()
    t = 1.0
    f = wsub_objective(x, gram, corr, const, weights)
    trace = [f]
    for _ in range(iters):
        g = wsub_gradient(yk, gram, corr)
        cand = _soft(yk - step * g, step * weights)
        fc = wsub_objective(cand, gram, corr, const, weights)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        x_prev = x
        if fc <= f:
            x, f_new = cand, fc
        else:
            f_new = f
        yk = x + (t / t_next) * (cand - x) + ((t - 1.0) / t_next) * (x - x_prev)
        t = t_next
        trace.append(f_new)
        # a rejected step leaves x in place but the momentum still moves yk
        done = fc <= f and abs(f - f_new) <= tol * max(abs(f), 1e-300)
        f = f_new
        if done:
            break
    return x, np.asarray(trace)


def _component_otfs(basis, shape):
    """Half-spectrum OTFs of the mean kernel (row 0) and the components."""
    kernels = np.concatenate([basis.mean_kernel[None], basis.components])
    K = basis.kernel_size
    pad = np.zeros((len(kernels),) + tuple(shape))
    pad[:, :K, :K] = kernels
    pad = np.roll(pad, (-(K // 2), -(K // 2)), axis=(1, 2))
    return np.fft.rfft2(pad).reshape(len(kernels), -1)


def _normal_equations(y, z, otfs):
    """Gram matrix, correlation and constant of the w-subproblem.

    Parseval on the half spectrum: columns other than DC and Nyquist stand
    for a conjugate pair and count twice.
    """
    n = y.size
    Yf = np.fft.rfft2(y)
    Zf = np.fft.rfft2(z)
    cw = np.full(Yf.shape, 2.0)
    cw[:, 0] = 1.0
    if y.shape[1] % 2 == 0:
        cw[:, -1] = 1.0
    cw = cw.ravel() / n
    AZ = otfs * Zf.ravel()
    b = Yf.ravel() - AZ[0]
    A = AZ[1:]
    Aw = np.conj(A) * cw
    gram = np.real(Aw @ A.T)
    corr = np.real(Aw @ b)
    const = float(np.sum(cw * np.abs(b) ** 2))
    return gram, corr, const


def update_psf_weights(y, z, basis, gamma, w0=None, inner_iters=50, tol=1e-4,
                       return_trace=False, otfs=None):
    """Basis weights minimizing ``||y - (mean + sum w_j u_j) (*) z||^2 + gamma r(w)``.

    ``r(w) = sum_j |w_j| / sigma_j``. A constant ``z`` leaves the problem
    singular; zero weights are returned with a warning.

    Parameters
    ----------
    otfs : ndarray, optional
        Cached output of the basis OTF computation for ``y.shape``.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    check_same_shape(y, z, ("y", "z"))
    p = basis.n_components
    w0 = np.zeros(p) if w0 is None else np.asarray(w0, dtype=np.float64)
    if p == 0 or np.ptp(z) == 0:
        if p:
            warnings.warn("latent image is constant; PSF weights set to zero",
                          RuntimeWarning, stacklevel=2)
        w = np.zeros(p)
        return (w, np.zeros(1)) if return_trace else w
    if otfs is None:
        otfs = _component_otfs(basis, y.shape)
    gram, corr, const = _normal_equations(y, z, otfs)
    w, trace = _solve_wsub(gram, corr, const, gamma / basis.sigmas, w0, inner_iters, tol)
    return (w, trace) if return_trace else w


def project_psf(h):
    """Clip to nonnegative and rescale to unit sum (delta if nothing is left)."""
    h = np.clip(np.asarray(h, dtype=np.float64), 0.0, None)
    s = h.sum()
    if s <= 0:
        h = np.zeros_like(h)
        h[h.shape[0] // 2, h.shape[1] // 2] = 1.0
        return h
    return h / s


def _pad_taper(y, margin):
    """Reflect-pad by ``margin`` and blend the border band to the image mean."""
    if margin == 0:
        return y.copy()
    pad = np.pad(y, margin, mode="reflect")
    n = pad.shape
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(margin) / margin)

    def taper(length):
        t = np.ones(length)
        t[:margin] = ramp
        t[-margin:] = ramp[::-1]
        return t

    win = np.outer(taper(n[0]), taper(n[1]))
    return win * pad + (1.0 - win) * y.mean()


def blind_deconvolve(y, basis, cfg=None, margin=None):
    """Alternate image and PSF updates starting from ``z = y``, ``h = mean``.

    Parameters
    ----------
    y : ndarray (H, W)
    basis : PsfBasis
    cfg : DeconvConfig, optional
    margin : int, optional
        Padding on every side; defaults to half the kernel size plus one.

    Returns
    -------
    DeconvResult
        ``objective_trace`` holds the data fidelity after each outer
        iteration. ``flagged`` is set when the divergence guard gave up.
    """
    cfg = DeconvConfig() if cfg is None else cfg
    y = check_frame(y, "y")
    K = basis.kernel_size
    m = K // 2 + 1 if margin is None else int(margin)
    yp = _pad_taper(y, m)
    otfs = _component_otfs(basis, yp.shape)
    rhos = cfg.rho_schedule()
    scale = 1.0
    z = yp.copy()
    w = np.zeros(basis.n_components)
    h = project_psf(basis.mean_kernel)
    trace = []
    rises = 0
    halvings = 0
    flagged = False
    k = 0
    while k < cfg.outer_iters:
        z_new = z
        for c in range(cfg.pnp_cycles):
            rho = rhos[k * cfg.pnp_cycles + c] / scale
            z_new = update_image(yp, h, z_new, cfg.lam, cfg.denoiser, rho)
        w_new = update_psf_weights(yp, z_new, basis, cfg.gamma, w, cfg.inner_iters, cfg.tol,
                                   otfs=otfs)
        h_new = project_psf(basis.reconstruct(w_new))
        fid = float(np.sum((yp - circular_convolve(z_new, h_new)) ** 2))
        if trace and fid > trace[-1]:
            rises += 1
        else:
            rises = 0
        if rises >= 2:
            if halvings == 3:
                flagged = True
                logger.warning("blind deconvolution diverging; stopping at iteration %d", k)
                break
            # smaller image steps: double the coupling and redo this iteration
            halvings += 1
            scale /= 2.0
            rises = 0
            continue
        z, w, h = z_new, w_new, h_new
        trace.append(fid)
        k += 1
    latent = np.clip(z[m:m + y.shape[0], m:m + y.shape[1]], 0.0, 1.0) if m else np.clip(z, 0, 1)
    return DeconvResult(latent, h, w, np.asarray(trace), flagged)


class BlindDeconvolver(TransformerMixin, BaseEstimator):
    """Frame-wise blind deconvolution with a fixed PSF basis.

    Parameters
    ----------
    basis : PsfBasis
    lam, gamma, outer_iters, inner_iters, tol, denoiser, rho, pnp_cycles
        See :class:`DeconvConfig`.
    n_jobs : int

    Attributes
    ----------
    results_ : list of DeconvResult
    """

    def __init__(self, basis=None, lam=1e-5, gamma=1e-3, outer_iters=15, inner_iters=50,
                 tol=1e-4, denoiser="nlm", rho=(1e-3, 1e-1), pnp_cycles=1, n_jobs=1):
        self.basis = basis
        self.lam = lam
        self.gamma = gamma
        self.outer_iters = outer_iters
        self.inner_iters = inner_iters
        self.tol = tol
        self.denoiser = denoiser
        self.rho = rho
        self.pnp_cycles = pnp_cycles
        self.n_jobs = n_jobs

    def _config(self):
        return DeconvConfig(self.lam, self.gamma, self.outer_iters, self.inner_iters,
                            self.tol, self.denoiser, tuple(self.rho), self.pnp_cycles)

    def fit(self, X=None, y=None):
        if self.basis is None:
            raise ValueError("BlindDeconvolver needs a PSF basis")
        self.config_ = self._config()
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or self._config()
        arr = np.asarray(X, dtype=np.float64)
        single = arr.ndim == 2
        seq = check_sequence(arr[None] if single else arr)
        self.results_ = map_ordered(lambda f: blind_deconvolve(f, self.basis, cfg),
                                    list(seq), self.n_jobs)
        out = np.stack([r.latent for r in self.results_])
        return out[0] if single else out
