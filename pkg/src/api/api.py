from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional

import numpy as np
from fastapi import Depends, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from src.config import PRESETS, build_configs, get_settings
from src.exceptions import ConfigError, FormatError, GeometryError, RangeError, ShapeError
from src.models.metric_report import MetricReport
from src.models.model_config import ModelConfig
from src.services.metrics import evaluate
from src.services.param_store import load_params
from src.services.tednet_model import TedNetParams, plan_shapes
from src.services.tiling import plan_tiles, tile_denoise

REQUEST_ERRORS = (ConfigError, FormatError, GeometryError, RangeError, ShapeError, ValueError)

app = FastAPI(
    title="TED-net Denoiser",
    description="Convolution-free transformer encoder-decoder for image denoising",
    version="1.0.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# Models
class MetricsRequest(BaseModel):
    output: List[List[float]]
    reference: List[List[float]]
    data_range: float = Field(gt=0.0)


class DenoiseRequest(BaseModel):
    image: List[List[float]]


class DenoiseResponse(BaseModel):
    image: List[List[float]]
    patches: int


@dataclass
class Denoiser:
    """Loaded parameters plus the configuration they were trained with"""
    params: TedNetParams
    cfg: ModelConfig
    workers: Optional[int] = None


@lru_cache(maxsize=4)
def _load_denoiser(params_path: str, preset: str, workers: Optional[int]) -> Denoiser:
    cfg, _ = build_configs(preset)
    return Denoiser(params=load_params(params_path, cfg), cfg=cfg, workers=workers)


def get_denoiser() -> Denoiser:
    settings = get_settings()
    if settings.params_path is None:
        raise HTTPException(status_code=503, detail="no parameter file configured (set TEDNET_PARAMS_PATH)")
    try:
        return _load_denoiser(str(settings.params_path), settings.preset, settings.workers)
    except (OSError, *REQUEST_ERRORS) as e:
        raise HTTPException(status_code=503, detail=f"cannot load parameters: {e}")


def _image(rows: List[List[float]], what: str) -> np.ndarray:
    if not rows or len({len(r) for r in rows}) != 1 or not rows[0]:
        raise HTTPException(status_code=400, detail=f"{what} must be a non-empty rectangular 2-D array")
    return np.asarray(rows, dtype=np.float64)


# Routes
@app.get("/")
async def root():
    return {
        "status": "success",
        "message": "TED-net denoiser API is running",
        "version": "1.0.0",
    }


@app.get("/health")
async def health():
    settings = get_settings()
    return {"status": "ok", "params_configured": settings.params_path is not None, "preset": settings.preset}


@app.get("/shape-plan")
async def shape_plan(preset: str = "paper"):
    if preset not in PRESETS:
        raise HTTPException(status_code=400, detail=f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg, _ = build_configs(preset)
    plan = plan_shapes(cfg)
    return {
        "preset": preset,
        "sides": plan.sides,
        "tokens": [stage.token_count for stage in plan.encoder],
        "raw_dims": [stage.raw_dim for stage in plan.encoder],
        "embed_dim": plan.embed_dim,
        "output_shape": list(plan.output_shape),
        "parameter_count": plan.parameter_count(),
        "table": plan.table(),
    }


@app.post("/metrics", response_model=MetricReport)
async def metrics(request: MetricsRequest):
    output = _image(request.output, "output")
    reference = _image(request.reference, "reference")
    try:
        return evaluate(output, reference, request.data_range)
    except REQUEST_ERRORS as e:
        raise HTTPException(status_code=400, detail=str(e))


@app.post("/denoise", response_model=DenoiseResponse)
def denoise(request: DenoiseRequest, denoiser: Denoiser = Depends(get_denoiser)):
    image = _image(request.image, "image")
    try:
        out = tile_denoise(image, denoiser.params, denoiser.cfg, denoiser.workers)
    except REQUEST_ERRORS as e:
        raise HTTPException(status_code=400, detail=str(e))
    patches = len(plan_tiles(image.shape[0], image.shape[1], denoiser.cfg.patch_side).placements)
    return DenoiseResponse(image=out.astype(np.float64).tolist(), patches=patches)
