from dataclasses import dataclass
from typing import List

from pydantic import BaseModel, ConfigDict, Field

from src.exceptions import GeometryError, ShapeError
from src.tensor import Tensor


class StageGeometry(BaseModel):
    """Square sliding-window geometry of one soft-split stage"""
    model_config = ConfigDict(frozen=True)

    kernel: int = Field(ge=1)
    stride: int = Field(ge=1)
    dilation: int = Field(ge=1)
    padding: int = Field(default=0, ge=0)

    @property
    def span(self) -> int:
        """Effective window extent including dilation gaps"""
        return self.dilation * (self.kernel - 1) + 1

    def window_starts(self, side: int) -> List[int]:
        """Start offsets (in unpadded coordinates) of every window along one axis"""
        starts = []
        offset = -self.padding
        while offset + self.span - 1 <= side - 1 + self.padding:
            starts.append(offset)
            offset += self.stride
        return starts

    def validate_for(self, side: int) -> None:
        """Raise GeometryError unless windows fit ``side`` and the stride does not exceed the span"""
        if side < 1:
            raise GeometryError(f"input side must be positive, got {side}")
        padded = side + 2 * self.padding
        if self.span > padded:
            raise GeometryError(
                f"effective span {self.span} exceeds padded side {padded} "
                f"(kernel={self.kernel}, dilation={self.dilation}, padding={self.padding})"
            )
        if self.stride > self.span:
            raise GeometryError(
                f"coverage violated: stride {self.stride} exceeds effective span {self.span}"
            )

    def uncovered(self, side: int) -> List[int]:
        """Unpadded positions along one axis that no window samples"""
        self.validate_for(side)
        covered = [False] * side
        for start in self.window_starts(side):
            for r in range(self.kernel):
                pos = start + r * self.dilation
                if 0 <= pos < side:
                    covered[pos] = True
        return [i for i, hit in enumerate(covered) if not hit]

    def check_coverage(self, side: int) -> None:
        """Raise GeometryError unless every pixel of ``side`` is sampled by some window"""
        missing = self.uncovered(side)
        if missing:
            raise GeometryError(
                f"coverage violated: {len(missing)} of {side} positions never sampled "
                f"(first at {missing[0]}) with stride {self.stride}, dilation {self.dilation}"
            )

    def output_side(self, side: int) -> int:
        """Windows per axis: floor((side + 2p - d(k-1) - 1) / stride) + 1"""
        self.validate_for(side)
        return (side + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) // self.stride + 1

    def is_valid_for(self, side: int) -> bool:
        try:
            self.validate_for(side)
        except GeometryError:
            return False
        return True

    def covers(self, side: int) -> bool:
        return self.is_valid_for(side) and not self.uncovered(side)


@dataclass(frozen=True)
class TokenGrid:
    """Token matrix (n x d) together with the grid it reshapes to"""
    tokens: Tensor
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if len(self.tokens.shape) != 2:
            raise ShapeError(f"token matrix must be 2-D, got {self.tokens.shape}")
        if self.tokens.shape[0] != self.grid_h * self.grid_w:
            raise ShapeError(
                f"token count {self.tokens.shape[0]} does not match grid {self.grid_h}x{self.grid_w}"
            )

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def d(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: Tensor) -> "TokenGrid":
        """Same grid layout carrying new token values"""
        return TokenGrid(tokens=tokens, grid_h=self.grid_h, grid_w=self.grid_w)
