import math
from dataclasses import dataclass, fields
from enum import Enum
from typing import Dict

import numpy as np

from src.exceptions import ShapeError
from src.tensor import Tensor
from src.tensor import ops


class Activation(str, Enum):
    """Nonlinearity between the two MLP layers"""
    GELU = "gelu"
    RELU = "relu"


@dataclass
class LinearParams:
    """Weight (d_in x d_out) and bias (d_out) of an affine projection"""
    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        if len(self.weight.shape) != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"linear params weight {self.weight.shape} and bias {self.bias.shape} disagree")

    def named(self) -> Dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, tokens: Tensor) -> Tensor:
        return ops.linear(tokens, self.weight, self.bias)


@dataclass
class TransformerBlockParams:
    """Weights of one pre-norm transformer block over ``d``-dimensional tokens.

    Query/key/value projections are stored combined across heads (d x d) and
    split into ``heads`` column groups of ``d / heads`` at evaluation time.
    """
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    heads: int = 1

    def __post_init__(self):
        d = self.wq.shape[0] if len(self.wq.shape) == 2 else -1
        if self.heads < 1 or d % self.heads:
            raise ShapeError(f"token dim {d} is not divisible by {self.heads} heads")
        hidden = self.w1.shape[1] if len(self.w1.shape) == 2 else -1
        expected = {
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d), "bo": (d,),
            "w1": (d, hidden), "b1": (hidden,), "w2": (hidden, d), "b2": (d,),
            "ln1_gamma": (d,), "ln1_beta": (d,), "ln2_gamma": (d,), "ln2_beta": (d,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ShapeError(f"transformer block {name} has shape {actual}, expected {shape}")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    def named(self) -> Dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "heads"}

    @classmethod
    def from_named(cls, tensors: Dict[str, Tensor], heads: int) -> "TransformerBlockParams":
        return cls(heads=heads, **tensors)

    @staticmethod
    def parameter_count(dim: int, hidden: int) -> int:
        """4 d^2 (q, k, v, out) + 2 d h (MLP) + h + 6 d (biases and norms)"""
        return 4 * dim * dim + 2 * dim * hidden + hidden + 6 * dim


def init_linear(fan_in: int, fan_out: int, rng: np.random.Generator, dtype: np.dtype) -> LinearParams:
    """Zero-mean normal weights with std 1/sqrt(fan_in); zero bias"""
    weight = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
    return LinearParams(weight=Tensor(weight, dtype=dtype), bias=Tensor(np.zeros(fan_out), dtype=dtype))


def init_block_params(dim: int, heads: int, hidden: int, rng: np.random.Generator,
                      dtype: np.dtype) -> TransformerBlockParams:
    def weight(fan_in: int, fan_out: int) -> Tensor:
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)), dtype=dtype)

    def filled(size: int, value: float) -> Tensor:
        return Tensor(np.full(size, value), dtype=dtype)

    return TransformerBlockParams(
        wq=weight(dim, dim), wk=weight(dim, dim), wv=weight(dim, dim),
        wo=weight(dim, dim), bo=filled(dim, 0.0),
        w1=weight(dim, hidden), b1=filled(hidden, 0.0),
        w2=weight(hidden, dim), b2=filled(dim, 0.0),
        ln1_gamma=filled(dim, 1.0), ln1_beta=filled(dim, 0.0),
        ln2_gamma=filled(dim, 1.0), ln2_beta=filled(dim, 0.0),
        heads=heads,
    )


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    return ops.transpose(ops.reshape(x, (n, heads, d // heads)), (1, 0, 2))


def _check_tokens(tokens: Tensor, params: TransformerBlockParams) -> None:
    if len(tokens.shape) != 2 or tokens.shape[1] != params.dim:
        raise ShapeError(f"tokens {tokens.shape} do not match block dim {params.dim}")


def attention_weights(tokens: Tensor, params: TransformerBlockParams) -> Tensor:
    """Per-head attention probabilities, shape (heads, n, n)"""
    _check_tokens(tokens, params)
    q = _split_heads(ops.matmul(tokens, params.wq), params.heads)
    k_t = ops.transpose(_split_heads(ops.matmul(tokens, params.wk), params.heads), (0, 2, 1))
    scores = ops.scale(ops.matmul(q, k_t), 1.0 / math.sqrt(params.head_dim))
    return ops.softmax_rows(scores)


def msa(tokens: Tensor, params: TransformerBlockParams) -> Tensor:
    """Multi-head self-attention; output has the input's shape"""
    attn = attention_weights(tokens, params)
    v = _split_heads(ops.matmul(tokens, params.wv), params.heads)
    n, d = tokens.shape
    context = ops.reshape(ops.transpose(ops.matmul(attn, v), (1, 0, 2)), (n, d))
    return ops.linear(context, params.wo, params.bo)


def mlp(tokens: Tensor, params: TransformerBlockParams, activation: Activation = Activation.GELU) -> Tensor:
    hidden = ops.linear(tokens, params.w1, params.b1)
    hidden = ops.gelu(hidden) if activation == Activation.GELU else ops.relu(hidden)
    return ops.linear(hidden, params.w2, params.b2)


def transformer_block(tokens: Tensor, params: TransformerBlockParams,
                      activation: Activation = Activation.GELU, literal: bool = False,
                      eps: float = 1e-5) -> Tensor:
    """Pre-norm block ``u = T + MSA(LN(T)); out = u + MLP(LN(u))``.

    ``literal`` drops both residual connections, giving ``MLP(LN(MSA(LN(T))))``.
    """
    _check_tokens(tokens, params)
    attended = msa(ops.layer_norm(tokens, params.ln1_gamma, params.ln1_beta, eps), params)
    if literal:
        return mlp(ops.layer_norm(attended, params.ln2_gamma, params.ln2_beta, eps), params, activation)
    u = ops.add(tokens, attended)
    return ops.add(u, mlp(ops.layer_norm(u, params.ln2_gamma, params.ln2_beta, eps), params, activation))
