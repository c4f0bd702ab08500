"""Restoration of long-range images degraded by atmospheric turbulence.

Stages: a Zernike-based anisoplanatic simulator, a space-time non-local
reference frame, optical-flow registration, lucky-region fusion and blind
deconvolution with a learned PSF basis.
"""

from .config import PipelineConfig, dump_config, load_config
from .deconv import BlindDeconvolver, DeconvConfig, blind_deconvolve
from .flow import FlowAligner, FlowField, estimate_flow, warp
from .lucky import LuckyConfig, LuckyFusion, lucky_fusion
from .metrics import bar_pattern_dynamic_range, normalized_gradient, psnr
from .optics import OpticsParams
from .pipeline import RestoreResult, StageError, TurbulenceMitigator, restore_sequence
from .prior import PsfBasis, PsfPrior, read_psfb, train_prior, write_psfb
from .reference import BetaCalibration, NonLocalReference, nonlocal_reference
from .simulate import TurbulenceSimulator, simulate_sequence

__version__ = "0.1.0"

__all__ = [
    "BetaCalibration",
    "BlindDeconvolver",
    "DeconvConfig",
    "FlowAligner",
    "FlowField",
    "LuckyConfig",
    "LuckyFusion",
    "NonLocalReference",
    "OpticsParams",
    "PipelineConfig",
    "PsfBasis",
    "PsfPrior",
    "RestoreResult",
    "StageError",
    "TurbulenceMitigator",
    "TurbulenceSimulator",
    "bar_pattern_dynamic_range",
    "blind_deconvolve",
    "dump_config",
    "estimate_flow",
    "load_config",
    "lucky_fusion",
    "nonlocal_reference",
    "normalized_gradient",
    "psnr",
    "read_psfb",
    "restore_sequence",
    "simulate_sequence",
    "train_prior",
    "warp",
    "write_psfb",
]
