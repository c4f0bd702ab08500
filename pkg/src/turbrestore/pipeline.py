"""End-to-end restoration: reference -> flow -> lucky fusion -> blind deconvolution."""

import logging
import time
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_sequence
from .config import PipelineConfig
from .deconv import DeconvConfig, DeconvResult, blind_deconvolve
from .flow import FlowField, estimate_flow, warp
from .lucky import LuckyConfig, lucky_fusion
from .parallel import map_ordered
from .prior import train_prior
from .reference import BetaCalibration, default_beta_calibration, nonlocal_reference

logger = logging.getLogger(__name__)

__all__ = [
    "STAGES",
    "StageError",
    "RestoreResult",
    "resolve_beta",
    "deconv_config",
    "lucky_config",
    "restore_sequence",
    "TurbulenceMitigator",
]

STAGES = ("Reference Frame", "Optical Flow", "Lucky Fusion", "Blind Deconvolution")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` and ``frame`` locate the failure."""

    def __init__(self, stage, frame, cause):
        self.stage = stage
        self.frame = frame
        where = f"stage '{stage}'" + ("" if frame is None else f", frame {frame}")
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")


@dataclass
class RestoreResult:
    restored: np.ndarray
    lucky: np.ndarray
    reference: np.ndarray
    aligned: np.ndarray
    flows: List[FlowField]
    deconv: List[DeconvResult]
    timings: Dict[str, float]


def resolve_beta(cfg, dr0):
    """Explicit ``reference.beta``, else the calibration table at ``dr0``."""
    ref = cfg.reference
    if ref.beta is not None:
        return float(ref.beta)
    curve = (BetaCalibration.load(ref.beta_table) if ref.beta_table
             else default_beta_calibration())
    return curve(dr0)


def deconv_config(cfg):
    d = cfg.deconv
    return DeconvConfig(d.lam, d.gamma, d.outer_iters, d.inner_iters, d.tol, d.denoiser,
                        tuple(d.rho), d.pnp_cycles)


def lucky_config(cfg):
    lk = cfg.lucky
    return LuckyConfig(lk.alpha1, lk.alpha2, lk.patch_size, lk.stride, lk.temporal_window)


def _per_frame(stage, func, n, n_jobs):
    def guarded(t):
        try:
            return func(t)
        except Exception as exc:
            raise StageError(stage, t, exc) from exc
    return map_ordered(guarded, range(n), n_jobs)


def restore_sequence(seq, basis, cfg=None, dr0=None, n_jobs=None):
    """Run the four restoration stages on one distorted sequence.

    Parameters
    ----------
    seq : array-like (T, H, W)
    basis : PsfBasis
    cfg : PipelineConfig, optional
    dr0 : float, optional
        Turbulence strength used to look up beta; defaults to the strength
        of ``cfg.optics`` (or ``cfg.simulate.dr0`` when set).
    n_jobs : int, optional
        Defaults to ``cfg.threads``.

    Returns
    -------
    RestoreResult
        ``timings`` maps each of :data:`STAGES` to wall-clock seconds.
    """
    cfg = PipelineConfig() if cfg is None else cfg
    seq = check_sequence(seq)
    n_jobs = cfg.threads if n_jobs is None else n_jobs
    if dr0 is None:
        dr0 = cfg.simulate.dr0 if cfg.simulate.dr0 is not None else cfg.optics.dr0
    beta = resolve_beta(cfg, dr0)
    T = seq.shape[0]
    timings = {}
    r = cfg.reference

    t0 = time.perf_counter()
    try:
        refs = nonlocal_reference(seq, r.patch_size, r.spatial_search, r.temporal_window,
                                  r.stride, beta, n_jobs)
    except Exception as exc:
        raise StageError(STAGES[0], None, exc) from exc
    timings[STAGES[0]] = time.perf_counter() - t0

    t0 = time.perf_counter()
    f = cfg.flow

    def align(t):
        flow = estimate_flow(seq[t], refs[t], f.levels, f.iters, f.window_sigma, f.reg,
                             f.max_displacement)
        return flow, warp(seq[t], flow)

    out = _per_frame(STAGES[1], align, T, n_jobs)
    flows = [o[0] for o in out]
    aligned = np.stack([o[1] for o in out])
    timings[STAGES[1]] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        lucky = lucky_fusion(aligned, refs, lucky_config(cfg), n_jobs)
    except Exception as exc:
        raise StageError(STAGES[2], None, exc) from exc
    timings[STAGES[2]] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dcfg = deconv_config(cfg)
    results = _per_frame(STAGES[3], lambda t: blind_deconvolve(lucky[t], basis, dcfg),
                         T, n_jobs)
    restored = np.stack([res.latent for res in results])
    timings[STAGES[3]] = time.perf_counter() - t0
    for t, res in enumerate(results):
        if res.flagged:
            logger.warning("frame %d: deconvolution stopped by the divergence guard", t)
    return RestoreResult(restored, lucky, refs, aligned, flows, results, timings)


class TurbulenceMitigator(TransformerMixin, BaseEstimator):
    """Full restoration pipeline as an estimator.

    Parameters
    ----------
    config : PipelineConfig, optional
    basis : PsfBasis, optional
        PSF prior; trained from ``config.prior`` by :meth:`fit` when omitted.
    dr0 : float, optional
        Turbulence strength of the input (sets beta and the prior's level).
    n_jobs : int, optional

    Attributes
    ----------
    basis_ : PsfBasis
    result_ : RestoreResult
        Intermediate products and timings of the last transform.
    """

    def __init__(self, config=None, basis=None, dr0=None, n_jobs=None):
        self.config = config
        self.basis = basis
        self.dr0 = dr0
        self.n_jobs = n_jobs

    def _cfg(self):
        return self.config if self.config is not None else PipelineConfig()

    def fit(self, X=None, y=None):
        cfg = self._cfg()
        if self.basis is not None:
            self.basis_ = self.basis
            return self
        p = cfg.prior
        levels = p.dr0 if self.dr0 is None else [self.dr0]
        self.basis_ = train_prior(levels, p.n_samples, p.n_components, p.kappa, p.tau,
                                  cfg.optics, np.random.default_rng(cfg.seed))
        return self

    def transform(self, X):
        basis = getattr(self, "basis_", None) or self.basis
        if basis is None:
            raise ValueError("TurbulenceMitigator is not fitted and has no basis")
        self.result_ = restore_sequence(X, basis, self._cfg(), self.dr0, self.n_jobs)
        return self.result_.restored
