"""Central-difference verification of the tape's analytic gradients.

Every check runs in 64-bit precision. The error reported per input tensor is
``||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-12)`` over the
checked entries.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.models.geometry import StageGeometry, TokenGrid
from src.models.model_config import ModelConfig
from src.services import tokenization, transformer
from src.services.tednet_model import TedNetParams, forward, init_params
from src.tensor import GradTape, Tensor, precision
from src.tensor import ops

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4

LossFn = Callable[[List[Tensor]], Tensor]


@dataclass
class GradCheckResult:
    name: str
    errors: List[float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


@dataclass
class GradCheckCase:
    """A scalar loss over some inputs, checked against finite differences"""
    name: str
    loss: LossFn
    inputs: List[np.ndarray]
    max_entries: Optional[int] = None


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(diff / scale)


def check_gradients(loss: LossFn, inputs: Sequence[np.ndarray], h: float = DEFAULT_STEP,
                    max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> List[float]:
    """Relative error of the tape gradient of ``loss`` for every input.

    With ``max_entries`` set, only that many randomly chosen entries of each
    input are perturbed.
    """
    rng = rng or np.random.default_rng(0)
    with precision("float64"):
        base = [np.array(x, dtype=np.float64) for x in inputs]
        tensors = [Tensor(x) for x in base]
        with GradTape() as tape:
            value = loss(tensors)
        analytic = [g.data for g in tape.gradient(value, tensors)]

        errors = []
        for index, x in enumerate(base):
            flat = np.arange(x.size)
            if max_entries is not None and x.size > max_entries:
                flat = rng.choice(x.size, size=max_entries, replace=False)
            numeric = np.empty(len(flat))
            for slot, entry in enumerate(flat):
                position = np.unravel_index(entry, x.shape)
                sides = []
                for delta in (h, -h):
                    shifted = x.copy()
                    shifted[position] += delta
                    args = [Tensor(shifted) if i == index else tensors[i] for i in range(len(base))]
                    sides.append(loss(args).item())
                numeric[slot] = (sides[0] - sides[1]) / (2 * h)
            errors.append(relative_error(analytic[index].reshape(-1)[flat], numeric))
    return errors


def _projected(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar <out, weights>, turning any output into a loss"""
    return ops.sum(ops.mul(out, Tensor(weights.reshape(out.shape))))


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def reduced_config() -> ModelConfig:
    """16x16 model with the default three-stage chain, small enough for gradient checks"""
    return ModelConfig(patch_side=16, embed_dim=16, heads=2)


def _model_case(rng: np.random.Generator) -> GradCheckCase:
    cfg = reduced_config()
    with precision("float64"):
        names = list(init_params(cfg, seed=int(rng.integers(1 << 31)), dtype=np.float64).to_dict().items())
    target = rng.normal(size=(1, cfg.patch_side, cfg.patch_side))

    def loss(tensors: List[Tensor]) -> Tensor:
        params = TedNetParams.from_dict(cfg, {name: t for (name, _), t in zip(names, tensors[1:])})
        return ops.mse(forward(tensors[0], params, cfg), Tensor(target))

    inputs = [rng.normal(size=(1, cfg.patch_side, cfg.patch_side))] + [t.data for _, t in names]
    return GradCheckCase("tednet.forward", loss, inputs, max_entries=6)


def primitive_cases(seed: int = 0) -> List[GradCheckCase]:
    """One case per differentiable primitive plus a full forward pass"""
    rng = np.random.default_rng(seed)
    normal = rng.normal

    def projection(shape):
        w = normal(size=shape)
        return lambda out: _projected(out, w)

    cases: List[GradCheckCase] = []

    def add_case(name: str, build: Callable[[List[Tensor]], Tensor], inputs: List[np.ndarray], out_shape):
        project = projection(out_shape)
        cases.append(GradCheckCase(name, lambda ts, b=build, p=project: p(b(ts)), inputs))

    add_case("matmul", lambda t: ops.matmul(t[0], t[1]), [normal(size=(3, 4)), normal(size=(4, 5))], (3, 5))
    add_case("matmul.batched", lambda t: ops.matmul(t[0], t[1]),
             [normal(size=(2, 3, 4)), normal(size=(2, 4, 3))], (2, 3, 3))
    add_case("add", lambda t: ops.add(t[0], t[1]), [normal(size=(3, 4)), normal(size=(3, 4))], (3, 4))
    add_case("sub", lambda t: ops.sub(t[0], t[1]), [normal(size=(3, 4)), normal(size=(3, 4))], (3, 4))
    add_case("mul", lambda t: ops.mul(t[0], t[1]), [normal(size=(3, 4)), normal(size=(3, 4))], (3, 4))
    add_case("scale", lambda t: ops.scale(t[0], -1.7), [normal(size=(3, 4))], (3, 4))
    cases.append(GradCheckCase("sum", lambda t: ops.sum(ops.mul(t[0], t[0])), [normal(size=(3, 4))]))
    add_case("reshape", lambda t: ops.reshape(t[0], (4, 3)), [normal(size=(3, 4))], (4, 3))
    add_case("transpose", lambda t: ops.transpose(t[0], (2, 0, 1)), [normal(size=(2, 3, 4))], (4, 2, 3))
    add_case("softmax_rows", lambda t: ops.softmax_rows(t[0]), [normal(size=(4, 5))], (4, 5))
    add_case("layer_norm", lambda t: ops.layer_norm(t[0], t[1], t[2]),
             [normal(size=(4, 6)), normal(size=(6,)), normal(size=(6,))], (4, 6))
    add_case("linear", lambda t: ops.linear(t[0], t[1], t[2]),
             [normal(size=(4, 3)), normal(size=(3, 5)), normal(size=(5,))], (4, 5))
    add_case("gelu", lambda t: ops.gelu(t[0]), [normal(size=(3, 4))], (3, 4))
    add_case("relu", lambda t: ops.relu(t[0]), [_away_from_zero(rng, (3, 4))], (3, 4))
    cases.append(GradCheckCase("mse", lambda t: ops.mse(t[0], t[1]), [normal(size=(3, 4)), normal(size=(3, 4))]))

    dilated = StageGeometry(kernel=3, stride=1, dilation=2, padding=2)
    n_side = dilated.output_side(7)
    add_case("soft_split", lambda t: tokenization.soft_split(t[0], dilated).tokens,
             [normal(size=(2, 7, 7))], (n_side * n_side, 2 * 9))
    add_case(
        "fold",
        lambda t: tokenization.fold(TokenGrid(t[0], n_side, n_side), 2, 7, dilated, normalize=True),
        [normal(size=(n_side * n_side, 2 * 9))], (2, 7, 7),
    )
    add_case("fold.unnormalized",
             lambda t: tokenization.fold(TokenGrid(t[0], n_side, n_side), 2, 7, dilated, normalize=False),
             [normal(size=(n_side * n_side, 2 * 9))], (2, 7, 7))
    add_case("cyclic_shift", lambda t: tokenization.cyclic_shift(t[0], 2), [normal(size=(2, 5, 5))], (2, 5, 5))
    add_case("tokens_to_spatial", lambda t: tokenization.tokens_to_spatial(TokenGrid(t[0], 3, 2)),
             [normal(size=(6, 4))], (4, 3, 2))
    add_case("spatial_to_tokens", lambda t: tokenization.spatial_to_tokens(t[0]).tokens,
             [normal(size=(4, 3, 2))], (6, 4))

    dim, heads, hidden = 6, 2, 8
    with precision("float64"):
        block = transformer.init_block_params(dim, heads, hidden, rng, np.dtype(np.float64))
    block_inputs = [t.data + 0.1 * normal(size=t.shape) for t in block.named().values()]

    fixed = dict(zip(block.named(), block_inputs))
    attention_names = ["wq", "wk", "wv", "wo", "bo"]

    def with_block(run: Callable[[Tensor, transformer.TransformerBlockParams], Tensor],
                   checked: Sequence[str] = tuple(fixed)):
        # unchecked fields stay constant and off the tape
        def build(t: List[Tensor]) -> Tensor:
            named = {name: Tensor(value) for name, value in fixed.items()}
            named.update(zip(checked, t[1:]))
            return run(t[0], transformer.TransformerBlockParams.from_named(named, heads=heads))
        return build

    tokens = normal(size=(5, dim))
    add_case("msa", with_block(transformer.msa, attention_names),
             [tokens] + [fixed[name] for name in attention_names], (5, dim))
    add_case("transformer_block", with_block(transformer.transformer_block), [tokens] + block_inputs, (5, dim))
    add_case(
        "transformer_block.literal",
        with_block(lambda x, p: transformer.transformer_block(x, p, literal=True)),
        [tokens] + block_inputs, (5, dim),
    )
    add_case(
        "transformer_block.relu",
        with_block(lambda x, p: transformer.transformer_block(x, p, activation=transformer.Activation.RELU)),
        [tokens] + block_inputs, (5, dim),
    )

    cases.append(_model_case(rng))
    return cases


def run_suite(seed: int = 0, names: Optional[Sequence[str]] = None,
              tolerance: float = DEFAULT_TOLERANCE) -> List[GradCheckResult]:
    """Check every case (or the named subset) and log one line per case"""
    results = []
    check_rng = np.random.default_rng(seed + 1)
    for case in primitive_cases(seed):
        if names is not None and case.name not in names:
            continue
        errors = check_gradients(case.loss, case.inputs, max_entries=case.max_entries, rng=check_rng)
        result = GradCheckResult(case.name, errors, tolerance)
        logger.info("%-28s max relative error %.3e %s", case.name, result.max_error,
                    "ok" if result.passed else "FAILED")
        results.append(result)
    return results


def summarize(results: Sequence[GradCheckResult]) -> Dict[str, float]:
    return {r.name: r.max_error for r in results}
