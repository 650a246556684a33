"""Progressive visual grounding on synthetic scenes.

Pipeline: expression cue decoupling -> text/image encoders -> staged
cross-modal modulation -> cross-scale fusion -> language-gated decoding ->
joint box + mask prediction, trained end-to-end on a generated dataset.
"""

from .numerics import Tensor, grad_check, precision, set_precision

__all__ = ["Tensor", "grad_check", "precision", "set_precision"]
__version__ = "0.1.0"
