import numpy as np
import pytest

from knee_xai.core.schemas import Architecture, ExperimentConfig, ModelSpec, PhantomParams

TINY_MODELS = {
    Architecture.RESNET_TINY: {"base_channels": [4, 8], "input_edge": 16, "dropout_ratio": 0.0},
    Architecture.INCEPTION_TINY: {"base_channels": [4, 8], "input_edge": 16, "dropout_ratio": 0.0},
    Architecture.VIT_TWO_STAGE: {"embed_dim": 8, "transformer_heads": 2, "patch_size": 4,
                                 "image_encoder_depth": 1, "transformer_depth": 1, "input_edge": 16,
                                 "max_slices": 8},
    Architecture.UNET: {"base_channels": [4, 8], "input_edge": 16, "norm": "instance"},
    Architecture.UNET_MLP: {"base_channels": [4, 8], "input_edge": 16, "norm": "instance", "mlp_hidden": 4},
}


@pytest.fixture(autouse=True)
def output_root(tmp_path, monkeypatch):
    """Keep logs and default outputs inside the test's temporary directory."""
    from knee_xai.core.settings import reset_settings

    monkeypatch.setenv("KNEE_XAI_OUTPUT_ROOT", str(tmp_path / "runs"))
    reset_settings()
    yield tmp_path / "runs"
    reset_settings()


@pytest.fixture
def tiny_params():
    return PhantomParams(edge=16, s_range=(2, 3), lesion_probability=0.5, lesion_size=(2, 2),
                         noise_level=0.0, seed=3)


@pytest.fixture
def make_spec():
    def factory(architecture, **overrides) -> ModelSpec:
        architecture = Architecture(architecture)
        fields = dict(TINY_MODELS[architecture])
        fields.update(overrides)
        return ModelSpec(architecture=architecture, **fields)

    return factory


@pytest.fixture
def make_config(tmp_path, tiny_params, make_spec):
    def factory(architecture="resnet_tiny", name="tiny", epochs=2, count=6, **overrides) -> ExperimentConfig:
        raw = {
            "name": name,
            "model": make_spec(architecture, epochs=max(epochs, 1)).model_dump(mode="json"),
            "data": {"phantom": tiny_params.model_dump(mode="json"), "count": count, "train_fraction": 0.5},
            "augment": None,
            "epochs": epochs,
            "seed": 0,
            "output_dir": str(tmp_path / name),
        }
        raw.update(overrides)
        return ExperimentConfig.model_validate(raw)

    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
