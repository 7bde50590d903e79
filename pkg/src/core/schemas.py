from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AppConfig(_Strict):
    name: str = "Highlight TTA Lab"
    version: str = "1.0.0"


class RuntimeConfig(_Strict):
    seed: Optional[int] = Field(None, ge=0, description="Master seed; null falls back to MTTA_SEED, then 0")
    threads: int = Field(1, ge=1, description="Per-video worker threads during evaluation")
    log_level: str = "INFO"


class ModelConfig(_Strict):
    """
    Dimensions of the audio-visual highlight network.
    """
    d_v: int = Field(16, ge=1, description="Visual input feature size")
    d_a: int = Field(12, ge=1, description="Audio input feature size")
    d: int = Field(32, ge=1, description="Shared hidden size of every attended stream")
    d_h: int = Field(16, ge=1, description="Hallucination bottleneck size")
    seed: Optional[int] = Field(None, ge=0)


class TrainConfig(_Strict):
    """
    Joint and meta-auxiliary training. Learning rates may be zero (a frozen control run).
    """
    inner_lr: float = Field(1e-1, ge=0, description="λ, inner auxiliary SGD rate")
    meta_lr: float = Field(5e-5, ge=0, description="γ, outer primary rate")
    joint_lr: Optional[float] = Field(None, ge=0, description="Joint-training Adam rate; null uses meta_lr")
    inner_steps: int = Field(3, ge=1, description="K, auxiliary updates per video")
    batch_size: int = Field(4, ge=1, description="B, videos per outer update")
    joint_epochs: int = Field(30, ge=0)
    meta_epochs: int = Field(10, ge=0)
    outer_optimizer: Literal["sgd", "adam"] = "adam"
    line7_mode: Literal["sequential", "batch_mean"] = "sequential"
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0)
    seed: Optional[int] = Field(None, ge=0)

    @property
    def resolved_joint_lr(self) -> float:
        return self.meta_lr if self.joint_lr is None else self.joint_lr


class StrategyConfig(_Strict):
    """
    Test-time adaptation strategy for one evaluation run.
    """
    kind: Literal["hallucination", "entropy", "pseudo_label", "none"] = "hallucination"
    lr: float = Field(1e-1, ge=0, description="λ used at test time")
    steps: int = Field(3, ge=0, description="K, adaptation steps (rounds for pseudo_label)")
    tau_lo: float = Field(0.2, ge=0, le=1)
    tau_hi: float = Field(0.8, ge=0, le=1)

    @model_validator(mode="after")
    def _check_kind(self) -> "StrategyConfig":
        if self.kind == "pseudo_label" and not self.tau_lo < self.tau_hi:
            raise ValueError(f"pseudo_label needs tau_lo < tau_hi, got {self.tau_lo} >= {self.tau_hi}")
        if self.kind != "none" and self.steps < 1:
            raise ValueError(f"strategy '{self.kind}' needs at least one step")
        return self


class BinarizeRule(_Strict):
    kind: Literal["threshold", "top_fraction"] = "threshold"
    value: float = Field(0.5, ge=0, le=1)


class EvalConfig(_Strict):
    binarize: BinarizeRule = Field(default_factory=BinarizeRule)


class ShiftSpec(_Strict):
    """Affine feature shift x -> S x + b + noise applied to the shifted test split."""
    target: Literal["audio", "visual", "both"] = "audio"
    mix: float = Field(0.5, ge=0, le=1, description="S = (1 - mix) I + mix Q for a random rotation Q")
    offset: float = Field(0.5, ge=0, description="Norm of the bias b")
    sigma: float = Field(0.3, ge=0, description="Std of the additive noise")
    seed: Optional[int] = Field(None, ge=0)


class SynthConfig(_Strict):
    n_train: int = Field(120, ge=1)
    n_test_iid: int = Field(40, ge=1)
    n_test_shifted: int = Field(40, ge=1)
    clips_min: int = Field(20, ge=2)
    clips_max: int = Field(40, ge=2)
    d_z: int = Field(6, ge=1)
    d_v: int = Field(16, ge=1)
    d_a: int = Field(12, ge=1)
    rho: float = Field(0.7, ge=0, lt=1)
    sigma_v: float = Field(0.1, ge=0)
    sigma_a: float = Field(0.1, ge=0)
    q: float = Field(0.25, gt=0, lt=1)
    seed: Optional[int] = Field(None, ge=0)
    mixing_seed: Optional[int] = Field(None, ge=0, description="Seed of M_v, M_a and w*; null uses seed")
    shift: ShiftSpec = Field(default_factory=ShiftSpec)

    @model_validator(mode="after")
    def _check_clips(self) -> "SynthConfig":
        if self.clips_min > self.clips_max:
            raise ValueError(f"clips_min ({self.clips_min}) exceeds clips_max ({self.clips_max})")
        return self


class AblationConfig(_Strict):
    seeds: int = Field(20, ge=1)
    updates: List[int] = [1, 2, 3]
    noise_sigmas: List[float] = [0.5]
    drop_audio_fraction: float = Field(0.25, ge=0, le=1)
    drop_train_fractions: List[float] = [0.0, 0.1, 0.25]
    family_b: Dict[str, Any] = Field(default_factory=dict, description="SynthConfig overrides for the target family")


class PathsConfig(_Strict):
    data_dir: Optional[str] = None
    train_data: Optional[str] = None
    test_data: Optional[str] = None
    checkpoint: Optional[str] = None
    init_checkpoint: Optional[str] = None
    out_dir: str = "runs/latest"


class CommandConfig(_Strict):
    name: Optional[str] = None
    stage: Optional[Literal["joint", "meta"]] = None
    study: Optional[Literal["updates", "noise", "drop-audio", "drop-train", "cross-dataset", "meta", "strategies"]] = None


class RunConfig(_Strict):
    """
    Fully resolved configuration of one CLI run. Persisted next to every output.
    """
    app: AppConfig = Field(default_factory=AppConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    adapt: StrategyConfig = Field(default_factory=StrategyConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    command: CommandConfig = Field(default_factory=CommandConfig)


# --- Records ---

class EpochRecord(BaseModel):
    stage: str
    epoch: int
    l_pri: float
    l_aux: float
    l_joint: float


class AdaptationReport(BaseModel):
    """
    Per-video outcome of test-time adaptation.
    """
    id: str = Field(..., description="Video id")
    strategy: str
    losses: List[float] = Field(..., description="Auxiliary/surrogate loss before each step and after the last")
    pre: List[float] = Field(..., description="Scores before adaptation")
    post: List[float] = Field(..., description="Scores after adaptation")
    l_pri: Optional[float] = Field(None, description="BCE of the post-adaptation scores, when labels are known")
    millis: float
    flags: List[str] = []


class MetricSummary(BaseModel):
    split: str
    strategy: str
    map: float = Field(..., ge=0, le=1)
    top5_map: float = Field(..., ge=0, le=1)
    hit_at_1: float = Field(..., ge=0, le=1)
    mean_l_pri: float = Field(..., ge=0)
    n_videos: int = Field(..., ge=1)
    n_skipped: int = Field(0, ge=0, description="Videos without positives, excluded from mAP")


class ShiftScore(BaseModel):
    fid: float = Field(..., ge=0)
    dims: int
    n_a: int
    n_b: int
    eps: float


class RunManifest(BaseModel):
    artifact: str
    version: str
    command: str
    argv: List[str]
    seed: int
    files: Dict[str, str] = Field(default_factory=dict, description="Relative path -> SHA-256")
