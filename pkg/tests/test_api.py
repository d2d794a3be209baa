import numpy as np
import pytest
from fastapi.testclient import TestClient

from src.api.api import Denoiser, app, get_denoiser
from src.models.geometry import StageGeometry
from src.models.model_config import ModelConfig
from src.services.param_store import save_params
from src.services.tednet_model import init_params

client = TestClient(app)


@pytest.fixture
def small_cfg():
    return ModelConfig(
        patch_side=8,
        stages=(
            StageGeometry(kernel=3, stride=2, dilation=1, padding=1),
            StageGeometry(kernel=3, stride=1, dilation=1, padding=1),
        ),
        embed_dim=8,
        heads=2,
    )


@pytest.fixture
def identity_denoiser(small_cfg):
    denoiser = Denoiser(params=init_params(small_cfg, seed=0).with_zero_residual(), cfg=small_cfg, workers=2)
    app.dependency_overrides[get_denoiser] = lambda: denoiser
    yield denoiser
    app.dependency_overrides.clear()


@pytest.fixture
def no_params(monkeypatch):
    monkeypatch.delenv("TEDNET_PARAMS_PATH", raising=False)
    monkeypatch.delenv("TEDNET_PRESET", raising=False)
    monkeypatch.delenv("TEDNET_WORKERS", raising=False)


def test_root():
    """Test root endpoint"""
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["status"] == "success"


def test_health_check(no_params):
    """Test health check endpoint"""
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "params_configured": False, "preset": "desk"}


def test_shape_plan_paper():
    """Test the shape plan endpoint for the full-size preset"""
    response = client.get("/shape-plan", params={"preset": "paper"})
    assert response.status_code == 200
    data = response.json()
    assert data["sides"] == [64, 32, 32, 32]
    assert data["raw_dims"] == [49, 2304, 2304]
    assert data["tokens"] == [1024, 1024, 1024]
    assert data["output_shape"] == [1, 64, 64]
    assert "output: 1x64x64" in data["table"]


def test_shape_plan_defaults_to_paper_preset():
    """Test the shape plan without a preset is the default configuration"""
    response = client.get("/shape-plan")
    assert response.status_code == 200
    assert response.json()["preset"] == "paper"
    assert response.json()["sides"] == [64, 32, 32, 32]


def test_shape_plan_unknown_preset():
    """Test an unknown preset is a bad request"""
    response = client.get("/shape-plan", params={"preset": "giant"})
    assert response.status_code == 400


def test_metrics_identical_images():
    """Test metrics of an image against itself"""
    image = np.random.default_rng(0).uniform(size=(16, 16)).tolist()
    response = client.post("/metrics", json={"output": image, "reference": image, "data_range": 1.0})
    assert response.status_code == 200
    data = response.json()
    assert data["ssim"] == pytest.approx(1.0)
    assert data["rmse"] == 0.0


def test_metrics_rejects_small_images():
    """Test images smaller than the SSIM window are a bad request"""
    image = [[0.0] * 4] * 4
    response = client.post("/metrics", json={"output": image, "reference": image, "data_range": 1.0})
    assert response.status_code == 400
    assert "window" in response.json()["detail"]


def test_metrics_rejects_ragged_rows():
    """Test ragged arrays are a bad request"""
    response = client.post("/metrics", json={"output": [[0.0, 1.0], [0.0]], "reference": [[0.0]],
                                             "data_range": 1.0})
    assert response.status_code == 400


def test_metrics_validates_range():
    """Test a non-positive data range fails request validation"""
    response = client.post("/metrics", json={"output": [[0.0]], "reference": [[0.0]], "data_range": 0})
    assert response.status_code == 422


def test_denoise_without_params(no_params):
    """Test denoising is unavailable until a parameter file is configured"""
    response = client.post("/denoise", json={"image": [[0.0] * 8] * 8})
    assert response.status_code == 503


def test_denoise_with_unreadable_params(monkeypatch, tmp_path):
    """Test a broken parameter file makes the service unavailable"""
    path = tmp_path / "broken.tdnw"
    path.write_bytes(b"junk")
    monkeypatch.setenv("TEDNET_PARAMS_PATH", str(path))
    response = client.post("/denoise", json={"image": [[0.0] * 8] * 8})
    assert response.status_code == 503


def test_denoise_identity(identity_denoiser):
    """Test the zero-residual model returns the image and reports its patch count"""
    image = np.random.default_rng(1).uniform(size=(12, 20)).astype(np.float32)
    response = client.post("/denoise", json={"image": image.tolist()})
    assert response.status_code == 200
    data = response.json()
    assert data["patches"] == 3 * 5
    assert np.array_equal(np.asarray(data["image"], dtype=np.float32), image)


def test_denoise_loads_configured_params(monkeypatch, tmp_path):
    """Test parameters saved for the active preset are served"""
    from src.config import build_configs

    cfg, _ = build_configs("desk")
    path = tmp_path / "desk.tdnw"
    save_params(path, init_params(cfg, seed=0).with_zero_residual())
    monkeypatch.setenv("TEDNET_PARAMS_PATH", str(path))
    monkeypatch.setenv("TEDNET_PRESET", "desk")
    image = np.full((32, 32), 0.25).tolist()
    response = client.post("/denoise", json={"image": image})
    assert response.status_code == 200
    assert response.json()["patches"] == 4
    assert np.allclose(response.json()["image"], 0.25)
