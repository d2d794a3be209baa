from src.tensor.tensor import GradTape, Tensor, default_dtype, emit, grad, precision

__all__ = ["GradTape", "Tensor", "default_dtype", "emit", "grad", "precision"]
