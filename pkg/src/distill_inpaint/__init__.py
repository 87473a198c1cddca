"""Teacher-guided image inpainting with encoder-feature distillation, on numpy."""
from .tensor import GraphError, ShapeError, Tensor, backward, default_dtype, no_grad

__all__ = ["GraphError", "ShapeError", "Tensor", "backward", "default_dtype", "no_grad"]
__version__ = "0.1.0"
