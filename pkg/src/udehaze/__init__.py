"""Physics-guided underwater image dehazing.

Depth is estimated implicitly by a small encoder-decoder, converted to
per-channel transmission with learnable Beer-Lambert coefficients, combined
with a learned correction of a classical atmospheric light prior, inverted
through the image formation model and finally polished by a residual
refiner. Everything runs on a small numpy autodiff engine
(:mod:`udehaze.tensor`) whose hot loops live in :mod:`udehaze.kernels`.
"""

__version__ = "0.1.0"

from .kernels import BACKEND
from .nets import ModelConfig, UDehazeNet, load_checkpoint, save_checkpoint
from .tensor import Tensor

__all__ = ["BACKEND", "ModelConfig", "Tensor", "UDehazeNet", "load_checkpoint", "save_checkpoint",
           "__version__"]
