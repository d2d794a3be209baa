from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class TrainConfig(BaseModel):
    """Optimizer, sampling and augmentation settings"""
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=1e-5, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps_adam: float = Field(default=1e-8, gt=0.0)
    epochs: int = Field(default=4000, ge=1)
    max_steps: Optional[int] = Field(default=None, ge=1)
    batch_size: int = Field(default=16, ge=1)
    patches_per_image: int = Field(default=4, ge=1)
    patch_side: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0)
    augmentation: bool = True
    keep_original_copy: bool = False
