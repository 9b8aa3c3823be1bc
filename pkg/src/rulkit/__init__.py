"""rulkit: hard-drive remaining-useful-life prediction kit.

Dense-tensor autodiff, dual-encoder transformer models, a S.M.A.R.T. log data
pipeline, Adam training, and overlapping-window confidence-margin evaluation.
"""

__version__ = "0.1.0"

from .models import ModelConfig, RulTransformer, build_baseline, build_model, fuse

__all__ = [
    "ModelConfig",
    "RulTransformer",
    "build_baseline",
    "build_model",
    "fuse",
    "__version__",
]
