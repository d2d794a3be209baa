import json
import logging
from pathlib import Path
from typing import Dict, Optional, Union

from src.models.image_volume import PhantomSpec
from src.models.metric_report import VolumeReport
from src.models.model_config import ModelConfig
from src.models.train_config import TrainConfig
from src.services.metrics import evaluate_volumes
from src.services.param_store import load_params, save_params
from src.services.phantom_generator import generate_phantoms
from src.services.tiling import denoise_volume
from src.services.training import pairs_from_volumes, train
from src.services.volume_store import load_volume, save_volume

logger = logging.getLogger(__name__)


class DenoisingPipeline:
    """Generate data, train, denoise and evaluate inside one working directory.

    Layout: ``train_clean.tdv``/``train_noisy.tdv`` and
    ``test_clean.tdv``/``test_noisy.tdv`` volumes, ``params.tdnw``,
    ``loss.log``, ``denoised.tdv`` and ``report.json``.
    """

    def __init__(self, work_dir: Union[str, Path], model_cfg: ModelConfig, train_cfg: TrainConfig,
                 phantom_spec: Optional[PhantomSpec] = None, workers: Optional[int] = None):
        self.work_dir = Path(work_dir)
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.phantom_spec = phantom_spec or PhantomSpec(
            side=2 * model_cfg.patch_side, patch_side=model_cfg.patch_side, seed=train_cfg.seed
        )
        self.workers = workers

    def path(self, name: str) -> Path:
        return self.work_dir / name

    def generate_data(self) -> Dict[str, int]:
        """Write disjoint training and held-out phantom sets"""
        train_spec = self.phantom_spec
        test_spec = train_spec.model_copy(update={"seed": train_spec.seed + 1})
        for prefix, spec in (("train", train_spec), ("test", test_spec)):
            clean, noisy = generate_phantoms(spec)
            save_volume(self.path(f"{prefix}_clean.tdv"), clean)
            save_volume(self.path(f"{prefix}_noisy.tdv"), noisy)
        logger.info("wrote training and held-out volumes to %s", self.work_dir)
        return {"train_images": train_spec.count, "test_images": test_spec.count}

    def train(self) -> Dict[str, float]:
        clean = load_volume(self.path("train_clean.tdv"))
        noisy = load_volume(self.path("train_noisy.tdv"))
        result = train(pairs_from_volumes(noisy, clean), self.model_cfg, self.train_cfg,
                       log_path=self.path("loss.log"))
        save_params(self.path("params.tdnw"), result.params)
        losses = result.history.losses
        return {"steps": result.steps, "first_loss": losses[0], "last_loss": losses[-1]}

    def denoise(self) -> None:
        params = load_params(self.path("params.tdnw"), self.model_cfg)
        noisy = load_volume(self.path("test_noisy.tdv"))
        save_volume(self.path("denoised.tdv"), denoise_volume(noisy, params, self.model_cfg, self.workers))

    def evaluate(self) -> Dict[str, VolumeReport]:
        """Score both the noisy input and the denoised output against the clean set"""
        clean = load_volume(self.path("test_clean.tdv"))
        reports = {
            "noisy": evaluate_volumes(load_volume(self.path("test_noisy.tdv")), clean),
            "denoised": evaluate_volumes(load_volume(self.path("denoised.tdv")), clean),
        }
        payload = {name: report.model_dump() for name, report in reports.items()}
        self.path("report.json").write_text(json.dumps(payload, indent=2))
        for name, report in reports.items():
            logger.info("%s: ssim %.4f rmse %.4g", name, report.mean.ssim, report.mean.rmse)
        return reports

    def run(self) -> Dict[str, VolumeReport]:
        self.generate_data()
        self.train()
        self.denoise()
        return self.evaluate()
