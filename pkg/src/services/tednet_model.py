"""Encoder-decoder denoiser assembled from soft splits, transformer blocks and folds.

Encoder stage ``i``: soft split -> projection to the embed dim -> transformer
block; between stages the tokens are reshaped to a map and cyclically
shifted. The last stage feeds the bottleneck block. The decoder walks the
stages backwards: projection to the raw token dim -> normalized fold ->
inverse cyclic shift -> tokens -> transformer block, ending with the fold of
stage 0, whose output is the residual added to (or subtracted from) the input.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.exceptions import ShapeError
from src.models.model_config import ModelConfig, ShapePlan, StagePlan
from src.services.tokenization import (
    cyclic_shift,
    fold,
    inverse_cyclic_shift,
    soft_split,
    spatial_to_tokens,
    tokens_to_spatial,
)
from src.services.transformer import (
    LinearParams,
    TransformerBlockParams,
    init_block_params,
    init_linear,
    transformer_block,
)
from src.tensor import Tensor, default_dtype
from src.tensor import ops

logger = logging.getLogger(__name__)

_POSITIONAL_STD = 0.02


@lru_cache(maxsize=32)
def plan_shapes(cfg: ModelConfig) -> ShapePlan:
    """Shape chain induced by ``cfg``; raises GeometryError for an invalid stage"""
    stages: List[StagePlan] = []
    side = cfg.patch_side
    channels = cfg.channels
    for index, geometry in enumerate(cfg.stages):
        per_axis = geometry.output_side(side)
        stages.append(StagePlan(
            index=index,
            input_side=side,
            input_channels=channels,
            tokens_per_axis=per_axis,
            raw_dim=channels * geometry.kernel * geometry.kernel,
            projected_dim=cfg.embed_dim,
            geometry=geometry,
        ))
        side, channels = per_axis, cfg.embed_dim
    encoder = tuple(stages)
    return ShapePlan(
        encoder=encoder,
        decoder=tuple(reversed(encoder)),
        patch_side=cfg.patch_side,
        channels=cfg.channels,
        embed_dim=cfg.embed_dim,
        hidden_dim=cfg.hidden_dim,
        use_positional=cfg.use_positional,
    )


def expected_shapes(cfg: ModelConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    """Name -> shape of every learnable tensor, in storage order"""
    plan = plan_shapes(cfg)
    e, h = cfg.embed_dim, cfg.hidden_dim
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    for stage in plan.encoder:
        shapes[f"embed.{stage.index}.weight"] = (stage.raw_dim, e)
        shapes[f"embed.{stage.index}.bias"] = (e,)
    for stage in plan.encoder:
        shapes[f"unembed.{stage.index}.weight"] = (e, stage.raw_dim)
        shapes[f"unembed.{stage.index}.bias"] = (stage.raw_dim,)
    if cfg.use_positional:
        for stage in plan.encoder:
            shapes[f"positional.{stage.index}"] = (stage.token_count, e)
    block = {
        "wq": (e, e), "wk": (e, e), "wv": (e, e), "wo": (e, e), "bo": (e,),
        "w1": (e, h), "b1": (h,), "w2": (h, e), "b2": (e,),
        "ln1_gamma": (e,), "ln1_beta": (e,), "ln2_gamma": (e,), "ln2_beta": (e,),
    }
    prefixes = [f"encoder.{i}" for i in range(len(plan.encoder) - 1)]
    prefixes.append("bottleneck")
    prefixes += [f"decoder.{i}" for i in range(len(plan.encoder) - 1)]
    for prefix in prefixes:
        for name, shape in block.items():
            shapes[f"{prefix}.{name}"] = shape
    return shapes


@dataclass
class TedNetParams:
    """All learnable tensors of the denoiser.

    ``embed[i]`` projects stage ``i`` tokens to the embed dim, ``unembed[i]``
    projects back before the stage ``i`` fold. ``encoder[i]`` runs on the stage
    ``i`` grid, ``decoder[i]`` on the same grid on the way back.
    """
    embed: List[LinearParams]
    unembed: List[LinearParams]
    encoder: List[TransformerBlockParams]
    bottleneck: TransformerBlockParams
    decoder: List[TransformerBlockParams]
    positional: List[Tensor] = field(default_factory=list)

    def __post_init__(self):
        if len(self.embed) != len(self.unembed):
            raise ShapeError(f"{len(self.embed)} embed projections but {len(self.unembed)} unembed projections")
        for i, (down, up) in enumerate(zip(self.embed, self.unembed)):
            if up.weight.shape != down.weight.shape[::-1]:
                raise ShapeError(
                    f"decoder projection {i} {up.weight.shape} does not mirror encoder projection {down.weight.shape}"
                )
        if len(self.encoder) != len(self.decoder) or len(self.encoder) != len(self.embed) - 1:
            raise ShapeError(
                f"{len(self.embed)} stages need {len(self.embed) - 1} encoder and decoder blocks, "
                f"got {len(self.encoder)} and {len(self.decoder)}"
            )

    def to_dict(self) -> "OrderedDict[str, Tensor]":
        tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for i, proj in enumerate(self.embed):
            for name, tensor in proj.named().items():
                tensors[f"embed.{i}.{name}"] = tensor
        for i, proj in enumerate(self.unembed):
            for name, tensor in proj.named().items():
                tensors[f"unembed.{i}.{name}"] = tensor
        for i, tensor in enumerate(self.positional):
            tensors[f"positional.{i}"] = tensor
        blocks = [(f"encoder.{i}", b) for i, b in enumerate(self.encoder)]
        blocks.append(("bottleneck", self.bottleneck))
        blocks += [(f"decoder.{i}", b) for i, b in enumerate(self.decoder)]
        for prefix, block in blocks:
            for name, tensor in block.named().items():
                tensors[f"{prefix}.{name}"] = tensor
        return tensors

    @classmethod
    def from_dict(cls, cfg: ModelConfig, tensors: Dict[str, Tensor]) -> "TedNetParams":
        """Rebuild from a flat mapping, checking every name and shape against ``cfg``"""
        expected = expected_shapes(cfg)
        for name, shape in expected.items():
            if name not in tensors:
                raise ShapeError(f"missing tensor {name!r} (expected shape {shape})")
            if tuple(tensors[name].shape) != shape:
                raise ShapeError(f"tensor {name!r} has shape {tuple(tensors[name].shape)}, expected {shape}")
        extra = [name for name in tensors if name not in expected]
        if extra:
            raise ShapeError(f"unexpected tensor {extra[0]!r} for this configuration")

        stage_count = len(cfg.stages)

        def linear(prefix: str) -> LinearParams:
            return LinearParams(weight=tensors[f"{prefix}.weight"], bias=tensors[f"{prefix}.bias"])

        def block(prefix: str) -> TransformerBlockParams:
            names = [n for n in expected if n.startswith(prefix + ".")]
            return TransformerBlockParams.from_named(
                {n[len(prefix) + 1:]: tensors[n] for n in names}, heads=cfg.heads
            )

        return cls(
            embed=[linear(f"embed.{i}") for i in range(stage_count)],
            unembed=[linear(f"unembed.{i}") for i in range(stage_count)],
            encoder=[block(f"encoder.{i}") for i in range(stage_count - 1)],
            bottleneck=block("bottleneck"),
            decoder=[block(f"decoder.{i}") for i in range(stage_count - 1)],
            positional=[tensors[f"positional.{i}"] for i in range(stage_count)] if cfg.use_positional else [],
        )

    def parameter_count(self) -> int:
        return sum(t.size for t in self.to_dict().values())

    def with_zero_residual(self) -> "TedNetParams":
        """Copy whose final pre-fold projection is zero, making the model the identity map"""
        last = self.unembed[0]
        zeroed = LinearParams(
            weight=Tensor(np.zeros(last.weight.shape), dtype=last.weight.dtype),
            bias=Tensor(np.zeros(last.bias.shape), dtype=last.bias.dtype),
        )
        return TedNetParams(
            embed=list(self.embed),
            unembed=[zeroed] + list(self.unembed[1:]),
            encoder=list(self.encoder),
            bottleneck=self.bottleneck,
            decoder=list(self.decoder),
            positional=list(self.positional),
        )


def init_params(cfg: ModelConfig, seed: int, dtype: Optional[np.dtype] = None) -> TedNetParams:
    """Deterministic initialization: N(0, 1/fan_in) weights, zero biases, unit norm gains"""
    dtype = np.dtype(dtype) if dtype is not None else default_dtype()
    rng = np.random.default_rng(seed)
    plan = plan_shapes(cfg)
    e, h = cfg.embed_dim, cfg.hidden_dim
    embed = [init_linear(stage.raw_dim, e, rng, dtype) for stage in plan.encoder]
    unembed = [init_linear(e, stage.raw_dim, rng, dtype) for stage in plan.encoder]
    positional = []
    if cfg.use_positional:
        positional = [
            Tensor(rng.normal(0.0, _POSITIONAL_STD, size=(stage.token_count, e)), dtype=dtype)
            for stage in plan.encoder
        ]
    blocks = len(plan.encoder) - 1
    encoder = [init_block_params(e, cfg.heads, h, rng, dtype) for _ in range(blocks)]
    bottleneck = init_block_params(e, cfg.heads, h, rng, dtype)
    decoder = [init_block_params(e, cfg.heads, h, rng, dtype) for _ in range(blocks)]
    params = TedNetParams(embed=embed, unembed=unembed, encoder=encoder, bottleneck=bottleneck,
                          decoder=decoder, positional=positional)
    logger.debug("initialized %d parameters with seed %d", params.parameter_count(), seed)
    return params


def _block(tokens: Tensor, params: TransformerBlockParams, cfg: ModelConfig) -> Tensor:
    return transformer_block(tokens, params, activation=cfg.activation, literal=cfg.literal_eq3,
                             eps=cfg.layer_norm_eps)


def forward(x: Tensor, params: TedNetParams, cfg: ModelConfig) -> Tensor:
    """Denoise one ``channels x patch_side x patch_side`` patch"""
    expected = (cfg.channels, cfg.patch_side, cfg.patch_side)
    if tuple(x.shape) != expected:
        raise ShapeError(f"input patch has shape {x.shape}, expected {expected}")
    plan = plan_shapes(cfg)
    last = len(plan.encoder) - 1

    skips: List[Tensor] = []
    feature = x
    grid = None
    for stage in plan.encoder:
        i = stage.index
        if i > 0:
            feature = cyclic_shift(tokens_to_spatial(grid), cfg.shift_pixels)
        grid = soft_split(feature, stage.geometry)
        tokens = params.embed[i](grid.tokens)
        if cfg.use_positional:
            tokens = ops.add(tokens, params.positional[i])
        tokens = _block(tokens, params.encoder[i] if i < last else params.bottleneck, cfg)
        if i < last:
            skips.append(tokens)
        grid = grid.with_tokens(tokens)

    for stage in plan.decoder:
        i = stage.index
        raw = params.unembed[i](grid.tokens)
        feature = fold(grid.with_tokens(raw), stage.input_channels, stage.input_side, stage.geometry,
                       normalize=True)
        if i == 0:
            break
        grid = spatial_to_tokens(inverse_cyclic_shift(feature, cfg.shift_pixels))
        tokens = grid.tokens
        if cfg.skip_connections:
            tokens = ops.add(tokens, skips[i - 1])
        grid = grid.with_tokens(_block(tokens, params.decoder[i - 1], cfg))

    if cfg.residual_sign == 1:
        return ops.add(x, feature)
    return ops.sub(x, feature)
