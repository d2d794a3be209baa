import logging
import math
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import NonFiniteError, ShapeError, TrainingDivergedError
from src.models.image_volume import ImageVolume
from src.models.loss_history import EpochRecord, LossHistory
from src.models.model_config import ModelConfig
from src.models.train_config import TrainConfig
from src.services.tednet_model import TedNetParams, forward, init_params
from src.tensor import GradTape, Tensor
from src.tensor import ops

logger = logging.getLogger(__name__)

ImagePair = Tuple[np.ndarray, np.ndarray]  # (noisy, clean)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements"""
    return ops.mse(pred, target)


@dataclass
class AdamState:
    """First and second moment estimates per named parameter"""
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )


def adam_step(params: Dict[str, Tensor], grads: Dict[str, Tensor], state: AdamState,
              cfg: TrainConfig) -> Tuple[Dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update; returns new parameters and state"""
    step = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    step_size = cfg.learning_rate / bc1

    new_params: Dict[str, Tensor] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for name, param in params.items():
        if name not in grads or name not in state.m:
            raise ShapeError(f"no gradient or moment for parameter {name!r}")
        g = grads[name].data
        if g.shape != param.shape or state.m[name].shape != param.shape:
            raise ShapeError(f"parameter {name!r} {param.shape} vs gradient {g.shape} vs moment {state.m[name].shape}")
        dtype = param.dtype.type
        m = dtype(cfg.beta1) * state.m[name] + dtype(1.0 - cfg.beta1) * g
        v = dtype(cfg.beta2) * state.v[name] + dtype(1.0 - cfg.beta2) * (g * g)
        denom = np.sqrt(v * dtype(1.0 / bc2)) + dtype(cfg.eps_adam)
        new_params[name] = Tensor._wrap(param.data - dtype(step_size) * m / denom)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, step=step)


def draw_offsets(height: int, width: int, side: int, count: int,
                 rng: np.random.Generator) -> List[Tuple[int, int]]:
    """Uniform top-left corners of ``count`` crops of ``side`` x ``side``"""
    if height < side or width < side:
        raise ShapeError(f"image {height}x{width} is smaller than patch side {side}")
    rows = rng.integers(0, height - side + 1, size=count)
    cols = rng.integers(0, width - side + 1, size=count)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def sample_patches(pair: ImagePair, count: int, side: int, rng: np.random.Generator) -> List[ImagePair]:
    """Crop ``count`` aligned (noisy, clean) patches at shared random offsets"""
    noisy, clean = pair
    if noisy.shape != clean.shape:
        raise ShapeError(f"noisy {noisy.shape} and clean {clean.shape} images differ in shape")
    patches = []
    for r, c in draw_offsets(noisy.shape[0], noisy.shape[1], side, count, rng):
        patches.append((noisy[r:r + side, c:c + side].copy(), clean[r:r + side, c:c + side].copy()))
    return patches


class DihedralTransform(Enum):
    """The eight symmetries of a square.

    ``ROT90`` maps ``[[1, 2], [3, 4]]`` to ``[[3, 1], [4, 2]]``: counter-clockwise
    when the row index grows upward, as in scanner coordinates.
    """
    IDENTITY = "identity"
    ROT90 = "rot90"
    ROT180 = "rot180"
    ROT270 = "rot270"
    FLIP_V = "flip_vertical"
    FLIP_H = "flip_horizontal"
    TRANSPOSE = "transpose"
    ANTI_TRANSPOSE = "anti_transpose"

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self is DihedralTransform.IDENTITY:
            out = x
        elif self is DihedralTransform.ROT90:
            out = np.rot90(x, k=-1)
        elif self is DihedralTransform.ROT180:
            out = np.rot90(x, k=2)
        elif self is DihedralTransform.ROT270:
            out = np.rot90(x, k=1)
        elif self is DihedralTransform.FLIP_V:
            out = np.flipud(x)
        elif self is DihedralTransform.FLIP_H:
            out = np.fliplr(x)
        elif self is DihedralTransform.TRANSPOSE:
            out = x.T
        else:
            out = np.rot90(x, k=2).T
        return np.ascontiguousarray(out)

    def inverse(self) -> "DihedralTransform":
        if self is DihedralTransform.ROT90:
            return DihedralTransform.ROT270
        if self is DihedralTransform.ROT270:
            return DihedralTransform.ROT90
        return self

    def compose(self, then: "DihedralTransform") -> "DihedralTransform":
        """The single transform equal to applying ``self`` and then ``then``"""
        marker = np.arange(9).reshape(3, 3)
        target = then.apply(self.apply(marker))
        for candidate in DihedralTransform:
            if np.array_equal(candidate.apply(marker), target):
                return candidate
        raise AssertionError("dihedral group is not closed")  # unreachable


AUGMENTATIONS = (
    DihedralTransform.IDENTITY,
    DihedralTransform.ROT90,
    DihedralTransform.ROT180,
    DihedralTransform.ROT270,
    DihedralTransform.FLIP_V,
    DihedralTransform.FLIP_H,
)


def draw_transform(rng: np.random.Generator, include_identity: bool = True) -> DihedralTransform:
    choices = AUGMENTATIONS if include_identity else AUGMENTATIONS[1:]
    return choices[int(rng.integers(len(choices)))]


def augment(pair: ImagePair, rng: np.random.Generator, include_identity: bool = True) -> ImagePair:
    """Apply one randomly drawn rotation or flip to both members of a pair"""
    noisy, clean = pair
    if noisy.shape[0] != noisy.shape[1]:
        raise ShapeError(f"augmentation needs square patches, got {noisy.shape}")
    transform = draw_transform(rng, include_identity)
    return transform.apply(noisy), transform.apply(clean)


def pairs_from_volumes(noisy: ImageVolume, clean: ImageVolume) -> List[ImagePair]:
    if noisy.pixels.shape != clean.pixels.shape:
        raise ShapeError(f"noisy volume {noisy.pixels.shape} and clean volume {clean.pixels.shape} differ")
    return [(noisy.pixels[i], clean.pixels[i]) for i in range(noisy.count)]


@dataclass
class TrainingResult:
    params: TedNetParams
    history: LossHistory
    steps: int


def batch_loss_and_gradients(params: TedNetParams, batch: Sequence[ImagePair],
                             cfg: ModelConfig) -> Tuple[float, Dict[str, Tensor]]:
    """Mean MSE of the batch and its gradient for every parameter.

    Samples are evaluated in order and their losses summed left to right, so
    gradient accumulation order is fixed.
    """
    named = params.to_dict()
    with GradTape() as tape:
        total = None
        for noisy, clean in batch:
            pred = forward(Tensor(noisy[None], dtype=np.float32), params, cfg)
            loss = mse_loss(pred, Tensor(clean[None], dtype=pred.dtype))
            total = loss if total is None else ops.add(total, loss)
        mean = ops.scale(total, 1.0 / len(batch))
    grads = tape.gradient(mean, list(named.values()))
    return mean.item(), dict(zip(named.keys(), grads))


def _epoch_patches(dataset: Sequence[ImagePair], cfg: TrainConfig, rng: np.random.Generator) -> List[ImagePair]:
    patches: List[ImagePair] = []
    for pair in dataset:
        for patch in sample_patches(pair, cfg.patches_per_image, cfg.patch_side, rng):
            if not cfg.augmentation:
                patches.append(patch)
            elif cfg.keep_original_copy:
                patches.append(patch)
                patches.append(augment(patch, rng, include_identity=False))
            else:
                patches.append(augment(patch, rng))
    return patches


def train(dataset: Sequence[ImagePair], model_cfg: ModelConfig, train_cfg: TrainConfig,
          log_path: Optional[Union[str, Path]] = None,
          params: Optional[TedNetParams] = None) -> TrainingResult:
    """Fit the denoiser to (noisy, clean) image pairs with Adam on the MSE loss"""
    if not dataset:
        raise ValueError("training dataset is empty")
    if train_cfg.patch_side != model_cfg.patch_side:
        raise ShapeError(
            f"training patch side {train_cfg.patch_side} differs from model patch side {model_cfg.patch_side}"
        )
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(log_path).write_text("")

    rng = np.random.default_rng(train_cfg.seed)
    if params is None:
        params = init_params(model_cfg, seed=train_cfg.seed)
    named = params.to_dict()
    state = AdamState.zeros_like(named)
    history = LossHistory(log_path)
    step = 0

    for epoch in range(1, train_cfg.epochs + 1):
        started = time.perf_counter()
        patches = _epoch_patches(dataset, train_cfg, rng)
        order = rng.permutation(len(patches))
        losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [patches[j] for j in order[start:start + train_cfg.batch_size]]
            step += 1
            try:
                loss, grads = batch_loss_and_gradients(params, batch, model_cfg)
            except NonFiniteError as exc:
                raise TrainingDivergedError(step, math.nan) from exc
            if not math.isfinite(loss):
                raise TrainingDivergedError(step, loss)
            losses.append(loss)
            named, state = adam_step(named, grads, state, train_cfg)
            params = TedNetParams.from_dict(model_cfg, named)
            if train_cfg.max_steps and step >= train_cfg.max_steps:
                break
        record = EpochRecord(epoch=epoch, mean_loss=float(np.mean(losses)),
                             seconds=time.perf_counter() - started, steps=step)
        history.add(record)
        logger.info("epoch %d: mean loss %.6e over %d batches (%.2fs)",
                    epoch, record.mean_loss, len(losses), record.seconds)
        if train_cfg.max_steps and step >= train_cfg.max_steps:
            break

    return TrainingResult(params=params, history=history, steps=step)
