from dataclasses import dataclass
from typing import List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.models.geometry import StageGeometry
from src.services.transformer import Activation, TransformerBlockParams


def default_stages() -> Tuple[StageGeometry, ...]:
    """7x7/3x3/3x3 windows, stride (2,1,1), dilation (1,2,1), padding d(k-1)/2"""
    return (
        StageGeometry(kernel=7, stride=2, dilation=1, padding=3),
        StageGeometry(kernel=3, stride=1, dilation=2, padding=2),
        StageGeometry(kernel=3, stride=1, dilation=1, padding=1),
    )


@dataclass(frozen=True)
class StagePlan:
    """Shapes flowing through one soft-split stage"""
    index: int
    input_side: int
    input_channels: int
    tokens_per_axis: int
    raw_dim: int
    projected_dim: int
    geometry: StageGeometry

    @property
    def token_count(self) -> int:
        return self.tokens_per_axis * self.tokens_per_axis


@dataclass(frozen=True)
class ShapePlan:
    """Encoder shape chain and its mirror in the decoder.

    Parameter count of the assembled model, with E = embed dim, H = MLP
    hidden width, r_i = raw token dim of stage i and S = number of stages:

        sum_i (r_i E + E)            post-split projections
      + sum_i (E r_i + r_i)          pre-fold projections
      + (2 (S - 1) + 1) * (4 E^2 + 2 E H + H + 6 E)   transformer blocks
      + sum_i n_i E                  positional embeddings, when enabled
    """
    encoder: Tuple[StagePlan, ...]
    decoder: Tuple[StagePlan, ...]
    patch_side: int
    channels: int
    embed_dim: int
    hidden_dim: int
    use_positional: bool

    @property
    def output_shape(self) -> Tuple[int, int, int]:
        return (self.channels, self.patch_side, self.patch_side)

    @property
    def sides(self) -> List[int]:
        """Input side of every stage followed by the final token grid side"""
        return [stage.input_side for stage in self.encoder] + [self.encoder[-1].tokens_per_axis]

    @property
    def block_count(self) -> int:
        return 2 * (len(self.encoder) - 1) + 1

    def parameter_count(self) -> int:
        e = self.embed_dim
        total = 0
        for stage in self.encoder:
            total += stage.raw_dim * e + e
            total += e * stage.raw_dim + stage.raw_dim
            if self.use_positional:
                total += stage.token_count * e
        total += self.block_count * TransformerBlockParams.parameter_count(e, self.hidden_dim)
        return total

    def table(self) -> str:
        """Plain-text rendering used by ``shape-check``"""
        header = f"{'stage':>5} {'side':>6} {'chan':>6} {'k/s/d/p':>10} {'tokens':>10} {'raw dim':>8} {'proj':>6}"
        lines = ["encoder", header]
        for stage in self.encoder:
            g = stage.geometry
            geom = f"{g.kernel}/{g.stride}/{g.dilation}/{g.padding}"
            tokens = f"{stage.tokens_per_axis}x{stage.tokens_per_axis}"
            lines.append(
                f"{stage.index:>5} {stage.input_side:>6} {stage.input_channels:>6} {geom:>10} "
                f"{tokens:>10} {stage.raw_dim:>8} {stage.projected_dim:>6}"
            )
        lines.append("decoder (fold order)")
        for stage in self.decoder:
            lines.append(
                f"{stage.index:>5} {stage.projected_dim:>6} -> {stage.raw_dim:>6} "
                f"fold to {stage.input_channels}x{stage.input_side}x{stage.input_side}"
            )
        sides = " -> ".join(str(s) for s in self.sides)
        lines.append(f"sides: {sides}")
        lines.append(f"output: {'x'.join(str(s) for s in self.output_shape)}")
        lines.append(f"parameters: {self.parameter_count()}")
        return "\n".join(lines)


class ModelConfig(BaseModel):
    """Hyper-parameters of the encoder-decoder denoiser"""
    model_config = ConfigDict(frozen=True)

    patch_side: int = Field(default=64, ge=1)
    channels: int = Field(default=1, ge=1)
    stages: Tuple[StageGeometry, ...] = Field(default_factory=default_stages, min_length=1)
    embed_dim: int = Field(default=256, ge=1)
    heads: int = Field(default=8, ge=1)
    mlp_ratio: float = Field(default=2.0, gt=0)
    activation: Activation = Activation.GELU
    shift_pixels: int = 2
    use_positional: bool = False
    literal_eq3: bool = False
    skip_connections: bool = False
    residual_sign: Literal[1, -1] = 1
    layer_norm_eps: float = Field(default=1e-5, gt=0)

    @property
    def hidden_dim(self) -> int:
        return max(1, int(round(self.embed_dim * self.mlp_ratio)))

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        side = self.patch_side
        for index, stage in enumerate(self.stages):
            try:
                stage.check_coverage(side)
                side = stage.output_side(side)
            except ValueError as exc:
                raise ValueError(f"stage {index}: {exc}") from exc
        return self
