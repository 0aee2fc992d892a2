from __future__ import annotations
import math
from enum import Enum
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

SCHEMA_VERSION = 1
LEAKY_RELU_SLOPE = 0.01


class LayerKind(str, Enum):
    """Layer kinds the nn-ops kernels provide."""
    CONV = "conv"
    CONV_TRANSPOSED = "conv_transposed"
    UPSAMPLE_BILINEAR = "upsample_bilinear"
    POOL_MAX = "pool_max"
    POOL_AVG = "pool_avg"
    POOL_GLOBAL_AVG = "pool_global_avg"
    BATCH_NORM = "batch_norm"
    INSTANCE_NORM = "instance_norm"
    LAYER_NORM = "layer_norm"
    DROPOUT = "dropout"
    LINEAR = "linear"
    ATTENTION = "attention"
    ACTIVATION = "activation"


class ActivationKind(str, Enum):
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    SIGMOID = "sigmoid"
    GELU = "gelu"


class Architecture(str, Enum):
    """Model families of the benchmark."""
    RESNET_TINY = "resnet_tiny"
    INCEPTION_TINY = "inception_tiny"
    VIT_TWO_STAGE = "vit_two_stage"
    UNET = "unet"
    UNET_MLP = "unet_mlp"


class Upsampling(str, Enum):
    BILINEAR = "bilinear"
    TRANSPOSED_CONV = "transposed_conv"


class SlicePool(str, Enum):
    MAX = "max"
    MEAN = "mean"


class NormKind(str, Enum):
    BATCH = "batch"
    INSTANCE = "instance"
    NONE = "none"


class MlpHead(str, Enum):
    TWO_LAYER = "two_layer"
    RESIDUAL = "residual"


class AttributionMethod(str, Enum):
    """The five gradient attribution methods."""
    SALIENCY = "saliency"
    SMOOTHGRAD = "smoothgrad"
    GUIDED_BACKPROP = "guided_backprop"
    GRADCAM = "gradcam"
    GUIDED_GRADCAM = "guided_gradcam"


class AttributionTarget(str, Enum):
    CLASS_LOGIT = "class_logit"
    RECON_LOSS = "recon_loss"
    LATENT_ENERGY = "latent_energy"


CLASSIFIER_ARCHITECTURES = {
    Architecture.RESNET_TINY,
    Architecture.INCEPTION_TINY,
    Architecture.VIT_TWO_STAGE,
    Architecture.UNET_MLP,
}
RECONSTRUCTION_ARCHITECTURES = {Architecture.UNET, Architecture.UNET_MLP}


class LayerSpec(BaseModel):
    """Description of one layer for the nn-ops factory."""
    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    kind: LayerKind = Field(..., description="Layer kind", examples=["conv", "attention"])
    in_channels: int = Field(default=1, ge=1, description="Input channels (or features / embedding width)")
    out_channels: int = Field(default=1, ge=1, description="Output channels (or features / embedding width)")
    kernel: int = Field(default=1, ge=1, description="Kernel or pooling window edge in pixels")
    stride: int = Field(default=1, ge=1, description="Stride in pixels")
    padding: int = Field(default=0, ge=0, description="Zero padding in pixels")
    activation_kind: ActivationKind = Field(default=ActivationKind.RELU, description="Activation for kind=activation")
    dropout_rate: float = Field(default=0.0, ge=0.0, lt=1.0, description="Dropout probability")
    heads: int = Field(default=1, ge=1, description="Attention heads (attention only)")

    @model_validator(mode="after")
    def check_heads(self) -> "LayerSpec":
        """Attention heads must divide the embedding width."""
        if self.kind == LayerKind.ATTENTION and self.out_channels % self.heads != 0:
            raise ValueError(
                f"heads ({self.heads}) must divide the embedding width ({self.out_channels})"
            )
        return self


class ModelSpec(BaseModel):
    """Recipe for one model of the zoo; fields cover the grid-search axes."""
    model_config = ConfigDict(extra="forbid")

    architecture: Architecture = Field(..., description="Model family", examples=["resnet_tiny", "unet"])
    learning_rate: float = Field(default=1e-3, gt=0, description="Adam learning rate", examples=[1e-2, 1e-4, 1e-5])
    dropout_ratio: float = Field(default=0.5, ge=0.0, lt=1.0, description="Dropout ratio (resnet / inception families)",
                                 examples=[0.5, 0.625, 0.75])
    reg_coeff: float = Field(default=0.0, ge=0.0, description="Regularization coefficient, applied as decoupled weight decay",
                             examples=[1e-1, 1e-3, 5e-4])
    epochs: int = Field(default=10, ge=1, description="Training epochs", examples=[10, 20, 50])
    transformer_depth: int = Field(default=4, ge=1, description="Sequence-encoder depth (vit)", examples=[4, 8])
    transformer_heads: int = Field(default=8, ge=1, description="Attention heads (vit)", examples=[8, 12])
    embed_dim: int = Field(default=48, ge=1, description="Token width (vit)")
    patch_size: int = Field(default=8, ge=1, description="Patch edge in pixels (vit)")
    image_encoder_depth: int = Field(default=4, ge=1, description="Blocks in the per-slice image encoder (vit)")
    max_slices: int = Field(default=64, ge=1, description="Longest slice sequence the vit positional table covers")
    upsampling: Upsampling = Field(default=Upsampling.TRANSPOSED_CONV, description="Decoder upsampling (unet family)")
    activation: Literal["relu", "leaky_relu", "gelu"] = Field(default="relu", description="Hidden activation")
    base_channels: list[int] = Field(default_factory=lambda: [8, 16, 32], min_length=1,
                                     description="Channel plan, strictly increasing",
                                     examples=[[32, 64, 128], [64, 128, 256]])
    norm: NormKind = Field(default=NormKind.BATCH, description="Normalization in conv blocks")
    conv_bias: bool = Field(default=True, description="Bias terms in unet convolutions; without them an all-zero "
                                                      "region reconstructs to exactly zero")
    encoder_dropout: float = Field(default=0.0, ge=0.0, lt=1.0, description="Dropout inside unet conv blocks")
    slice_pool: SlicePool = Field(default=SlicePool.MAX, description="Aggregation of per-slice features (CNN paths)")
    mlp_head: MlpHead = Field(default=MlpHead.TWO_LAYER, description="Classifier head of the hybrid")
    mlp_hidden: int = Field(default=32, ge=1, description="Hidden width of the hybrid's perceptron head")
    freeze_encoder: bool = Field(default=False, description="Keep hybrid encoder parameters fixed during training")
    input_edge: int = Field(default=64, ge=8, description="Slice edge in pixels", examples=[64, 224, 256])

    @field_validator("base_channels")
    @classmethod
    def validate_base_channels(cls, v: list[int]) -> list[int]:
        """Channel plans must be positive and strictly increasing."""
        if any(c < 1 for c in v):
            raise ValueError("base_channels must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"base_channels must be strictly increasing, got {v}")
        return v

    @property
    def is_classifier(self) -> bool:
        return self.architecture in CLASSIFIER_ARCHITECTURES

    @property
    def reconstructs(self) -> bool:
        return self.architecture in RECONSTRUCTION_ARCHITECTURES


class LossConfig(BaseModel):
    """Weights of the combined hybrid loss."""
    model_config = ConfigDict(extra="forbid")

    lambda_recon: float = Field(default=1.0, ge=0.0, description="Weight on the MSE reconstruction term")
    bce_clamp: float = Field(default=1e-6, gt=0.0, le=1e-4, description="Probability clamp epsilon for BCE")


class PhantomParams(BaseModel):
    """Synthetic knee-phantom generator settings."""
    model_config = ConfigDict(extra="forbid")

    edge: int = Field(default=64, ge=16, description="Slice edge H = W in pixels", examples=[64, 256])
    s_range: tuple[int, int] = Field(default=(8, 16), description="Inclusive slice-count range",
                                     examples=[(8, 16), (17, 61)])
    lesion_probability: float = Field(default=0.35, ge=0.0, le=1.0, description="Chance a volume carries a tear")
    lesion_size: tuple[int, int] = Field(default=(2, 4), description="Inclusive lesion radius range in pixels")
    lesion_intensity: float = Field(default=0.45, gt=0.0, le=1.0,
                                    description="Signal inside the tear; the default sits between soft tissue and bone",
                                    examples=[0.45, 0.95])
    noise_level: float = Field(default=0.02, ge=0.0, description="Additive Gaussian noise sigma")
    seed: int = Field(default=0, description="Generator seed")

    @field_validator("edge")
    @classmethod
    def validate_edge(cls, v: int) -> int:
        """Edge must survive four halvings."""
        if v % 16 != 0:
            raise ValueError(f"edge must be divisible by 16, got {v}")
        return v

    @field_validator("s_range")
    @classmethod
    def validate_s_range(cls, v: tuple[int, int]) -> tuple[int, int]:
        if v[0] < 1 or v[1] < v[0]:
            raise ValueError(f"s_range must satisfy 1 <= s_min <= s_max, got {v}")
        return v

    @field_validator("lesion_size")
    @classmethod
    def validate_lesion_size(cls, v: tuple[int, int]) -> tuple[int, int]:
        if v[0] < 2 or v[1] < v[0]:
            raise ValueError(f"lesion radius range must satisfy 2 <= r_min <= r_max, got {v}")
        return v


class AugmentParams(BaseModel):
    """Random rotation, shift and horizontal flip; defaults are the published values."""
    model_config = ConfigDict(extra="forbid")

    max_rotation_deg: float = Field(default=25.0, ge=0.0, description="Rotation range +/- degrees")
    max_shift_px: float = Field(default=25.0, ge=0.0, description="Shift range +/- pixels at edge 256")
    flip_probability: float = Field(default=0.5, ge=0.0, le=1.0, description="Horizontal flip probability")


class SmoothGradParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=25, ge=1, description="Noisy samples")
    sigma: float = Field(default=0.15, ge=0.0, description="Noise std as a fraction of the input value range")


class SsimParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    window_size: int = Field(default=11, ge=1, description="Gaussian window edge (odd)")
    window_sigma: float = Field(default=1.5, gt=0.0, description="Gaussian window width")
    dynamic_range: float = Field(default=1.0, gt=0.0, description="Dynamic range L")

    @field_validator("window_size")
    @classmethod
    def validate_window_size(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"window_size must be odd, got {v}")
        return v

    @property
    def c1(self) -> float:
        return (0.01 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (0.03 * self.dynamic_range) ** 2


class MetricsReport(BaseModel):
    """One evaluation outcome; one row of the results table."""
    model_config = ConfigDict(extra="forbid")

    auc: Optional[float] = Field(default=None, ge=0.0, le=1.0, description="ROC AUC")
    accuracy: Optional[float] = Field(default=None, ge=0.0, le=1.0, description="Accuracy at threshold 0.5")
    psnr_db: Optional[float] = Field(default=None, ge=0.0, description="Mean PSNR in dB; inf for exact equality")
    ssim: Optional[float] = Field(default=None, ge=-1.0, le=1.0, description="Mean SSIM")
    localization_energy: Optional[float] = Field(default=None, ge=0.0, le=1.0,
                                                 description="Mean attribution energy inside ROI masks")
    n_samples: int = Field(default=0, ge=0, description="Volumes (classification) or slices (reconstruction) scored")

    @field_validator("psnr_db", mode="before")
    @classmethod
    def parse_psnr(cls, v: Any) -> Any:
        """Accept the serialized infinite marker."""
        if isinstance(v, str) and v.strip().lower() == "inf":
            return math.inf
        return v

    @field_serializer("psnr_db")
    def serialize_psnr(self, v: Optional[float]) -> Any:
        if v is not None and math.isinf(v):
            return "inf"
        return v

    @model_validator(mode="after")
    def check_values(self) -> "MetricsReport":
        for name in ("auc", "accuracy", "ssim", "localization_energy"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
        if self.psnr_db is not None and math.isnan(self.psnr_db):
            raise ValueError("psnr_db must not be NaN")
        if (self.auc is not None or self.accuracy is not None) and self.n_samples <= 0:
            raise ValueError("n_samples must be > 0 when classification metrics are present")
        return self


class DataConfig(BaseModel):
    """Where volumes come from: phantom parameters or a manifest CSV."""
    model_config = ConfigDict(extra="forbid")

    phantom: Optional[PhantomParams] = Field(default=None, description="Generate synthetic volumes")
    manifest: Optional[str] = Field(default=None, description="CSV with columns patient_id,path,label")
    count: int = Field(default=250, ge=2, description="Number of phantom patients")
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0, description="Patient-level training share")
    resize_edge: Optional[int] = Field(default=None, ge=8, description="Bilinear resize of slices before use",
                                       examples=[224])

    @model_validator(mode="after")
    def check_source(self) -> "DataConfig":
        if (self.phantom is None) == (self.manifest is None):
            raise ValueError("exactly one of 'phantom' or 'manifest' must be given")
        if self.manifest is not None and not Path(self.manifest).exists():
            raise ValueError(f"manifest not found: {self.manifest}")
        return self


class ExperimentConfig(BaseModel):
    """Full recipe for one training run."""
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = Field(default=SCHEMA_VERSION, description="Config schema version")
    name: str = Field(default="run", min_length=1, max_length=100, description="Run label used in reports")
    model: ModelSpec
    loss: LossConfig = Field(default_factory=LossConfig)
    data: DataConfig
    augment: Optional[AugmentParams] = Field(default_factory=AugmentParams,
                                             description="Training augmentation; null disables it")
    epochs: Optional[int] = Field(default=None, ge=0, description="Overrides model.epochs when set")
    seed: int = Field(default=0, description="Seed fixed before any stochastic call")
    eval_every: int = Field(default=1, ge=1, description="Validation cadence in epochs")
    output_dir: str = Field(default="runs/run", description="Directory receiving checkpoints and the run record")
    resume_from: Optional[str] = Field(default=None, description="Checkpoint to continue from")

    @field_validator("name")
    @classmethod
    def validate_name(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("name cannot be empty or whitespace only")
        return v.strip()

    @model_validator(mode="after")
    def check_paths(self) -> "ExperimentConfig":
        if self.resume_from is not None and not Path(self.resume_from).exists():
            raise ValueError(f"resume_from checkpoint not found: {self.resume_from}")
        return self

    @property
    def total_epochs(self) -> int:
        return self.model.epochs if self.epochs is None else self.epochs

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring output location and resume source."""
        from .utils import sha256_digest

        return sha256_digest(self.model_dump(mode="json", exclude={"output_dir", "resume_from"}))

    def recipe_digest(self) -> str:
        """Digest of everything that shapes the training trajectory; run length and labels excluded.

        A checkpoint may be resumed under any config sharing this digest.
        """
        from .utils import sha256_digest

        dump = self.model_dump(mode="json", exclude={"output_dir", "resume_from", "name", "epochs", "eval_every"})
        dump["model"].pop("epochs", None)
        return sha256_digest(dump)


class EvalEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int = Field(..., ge=0)
    report: MetricsReport


class RunRecord(BaseModel):
    """Per-run history: losses, train AUC curve, validation reports."""
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig
    config_digest: str
    train_loss: list[float] = Field(default_factory=list, description="Mean training loss per epoch")
    train_auc: list[Optional[float]] = Field(default_factory=list, description="Training-split AUC per epoch")
    evals: list[EvalEntry] = Field(default_factory=list, description="Validation reports")
    best_epoch: Optional[int] = None
    final_checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None
    wall_time_s: float = Field(default=0.0, ge=0.0)
    status: Literal["ok", "failed"] = "ok"
    errors: list[str] = Field(default_factory=list)

    @field_validator("evals")
    @classmethod
    def validate_evals(cls, v: list[EvalEntry]) -> list[EvalEntry]:
        """Epoch indices must increase strictly."""
        epochs = [e.epoch for e in v]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"eval epochs must be strictly increasing, got {epochs}")
        return v

    @property
    def final_report(self) -> Optional[MetricsReport]:
        return self.evals[-1].report if self.evals else None

    @property
    def best_report(self) -> Optional[MetricsReport]:
        if self.best_epoch is None:
            return self.final_report
        for entry in self.evals:
            if entry.epoch == self.best_epoch:
                return entry.report
        return self.final_report

    def as_response(self) -> dict[str, Any]:
        """Convert to dictionary for API response."""
        return self.model_dump(mode="json")
