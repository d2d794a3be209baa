import numpy as np
import pytest

from src.exceptions import ShapeError
from src.services.transformer import (
    Activation,
    LinearParams,
    TransformerBlockParams,
    attention_weights,
    init_block_params,
    msa,
    transformer_block,
)
from src.tensor import Tensor, precision


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_block(dim, heads, hidden, rng, dtype=np.float64):
    return init_block_params(dim, heads, hidden, rng, np.dtype(dtype))


def identity_block(dim, hidden=4):
    eye = np.eye(dim)
    zeros = np.zeros(dim)
    return TransformerBlockParams(
        wq=Tensor(eye), wk=Tensor(eye), wv=Tensor(eye), wo=Tensor(eye), bo=Tensor(zeros),
        w1=Tensor(np.zeros((dim, hidden))), b1=Tensor(np.zeros(hidden)),
        w2=Tensor(np.zeros((hidden, dim))), b2=Tensor(zeros),
        ln1_gamma=Tensor(np.ones(dim)), ln1_beta=Tensor(zeros),
        ln2_gamma=Tensor(np.ones(dim)), ln2_beta=Tensor(zeros),
        heads=1,
    )


def zeroed(params: TransformerBlockParams) -> TransformerBlockParams:
    named = params.named()
    for name in ("wq", "wk", "wv", "wo", "bo", "w1", "b1", "w2", "b2"):
        named[name] = Tensor(np.zeros(named[name].shape), dtype=named[name].dtype)
    return TransformerBlockParams.from_named(named, heads=params.heads)


def test_heads_must_divide_dim(rng):
    """Test a head count that does not divide d is rejected"""
    with pytest.raises(ShapeError):
        make_block(6, 4, 8, rng)


def test_block_shape_validation(rng):
    """Test inconsistent weight shapes are rejected"""
    named = make_block(8, 2, 16, rng).named()
    named["w2"] = Tensor(np.zeros((8, 8)))
    with pytest.raises(ShapeError, match="w2"):
        TransformerBlockParams.from_named(named, heads=2)


def test_parameter_count_formula(rng):
    """Test the closed-form count matches the stored tensors"""
    block = make_block(8, 2, 16, rng)
    assert sum(t.size for t in block.named().values()) == TransformerBlockParams.parameter_count(8, 16)


def test_linear_params_shape_check():
    """Test bias length must equal the weight's output width"""
    with pytest.raises(ShapeError):
        LinearParams(weight=Tensor(np.zeros((3, 4))), bias=Tensor(np.zeros(3)))


def test_single_token_attention_is_one(rng):
    """Test attention over a single token is [[1]] and msa projects V"""
    with precision("float64"):
        block = make_block(8, 2, 16, rng)
        token = Tensor(rng.normal(size=(1, 8)))
        weights = attention_weights(token, block).data
        assert weights.shape == (2, 1, 1)
        assert np.array_equal(weights, np.ones((2, 1, 1)))
        expected = token.data @ block.wv.data @ block.wo.data + block.bo.data
        assert np.allclose(msa(token, block).data, expected)


def test_identity_projections_identical_tokens():
    """Test identity projections on two equal tokens return the token"""
    with precision("float64"):
        token = np.array([0.5, -1.0, 2.0, 0.25])
        out = msa(Tensor(np.stack([token, token])), identity_block(4)).data
    assert np.allclose(out, np.stack([token, token]))


def test_msa_permutation_equivariance(rng):
    """Test permuting token rows permutes the output rows"""
    with precision("float64"):
        block = make_block(8, 2, 16, rng)
        tokens = rng.normal(size=(3, 8))
        base = msa(Tensor(tokens), block).data
        for perm in ([1, 2, 0], [2, 1, 0], [0, 2, 1]):
            permuted = msa(Tensor(tokens[perm]), block).data
            assert np.allclose(permuted, base[perm], atol=1e-12)


def test_block_permutation_equivariance(rng):
    """Test the whole block commutes with row permutations"""
    with precision("float64"):
        block = make_block(8, 4, 16, rng)
        tokens = rng.normal(size=(5, 8))
        perm = rng.permutation(5)
        base = transformer_block(Tensor(tokens), block).data
        assert np.allclose(transformer_block(Tensor(tokens[perm]), block).data, base[perm], atol=1e-12)


def test_attention_rows_are_distributions(rng):
    """Test every attention row is non-negative and sums to one"""
    with precision("float64"):
        block = make_block(16, 4, 32, rng)
        weights = attention_weights(Tensor(rng.normal(size=(6, 16))), block).data
    assert np.all(weights >= 0)
    assert np.allclose(weights.sum(axis=-1), 1.0)


@pytest.mark.parametrize("activation", list(Activation))
def test_zero_weights_give_identity(rng, activation):
    """Test zero attention and MLP weights leave tokens unchanged"""
    block = zeroed(make_block(8, 2, 16, rng, dtype=np.float32))
    tokens = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    assert np.array_equal(transformer_block(tokens, block, activation=activation).data, tokens.data)


@pytest.mark.parametrize("n", [1, 4, 16])
@pytest.mark.parametrize("d", [8, 16])
def test_block_preserves_shape(rng, n, d):
    """Test the block output has the input shape"""
    block = make_block(d, 2, 2 * d, rng, dtype=np.float32)
    out = transformer_block(Tensor(rng.normal(size=(n, d)).astype(np.float32)), block)
    assert out.shape == (n, d)


def test_literal_form_drops_residuals(rng):
    """Test the literal form equals MLP(LN(MSA(LN(T)))) and differs from the residual form"""
    with precision("float64"):
        block = make_block(8, 2, 16, rng)
        tokens = Tensor(rng.normal(size=(4, 8)))
        literal = transformer_block(tokens, block, literal=True).data
        residual = transformer_block(tokens, block).data
        zero = zeroed(block)
        assert not np.allclose(literal, residual)
        assert not transformer_block(tokens, zero, literal=True).data.any()


def test_block_rejects_wrong_token_dim(rng):
    """Test tokens must match the block dimension"""
    block = make_block(8, 2, 16, rng)
    with pytest.raises(ShapeError):
        transformer_block(Tensor(np.zeros((3, 6))), block)
