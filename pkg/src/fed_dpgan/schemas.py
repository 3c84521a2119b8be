"""Pydantic schemas for fed-dpgan experiments, reports and the aggregation API."""

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Document(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ─────────────────────────────────────────────────────────────────────────────
# Privacy parameters
# ─────────────────────────────────────────────────────────────────────────────


class PrivacyParams(_Document):
    epsilon: float = Field(default=0.5, gt=0, description="Privacy budget epsilon")
    delta: float = Field(default=1e-5, gt=0, lt=1, description="Failure probability delta")
    sigma_n: float = Field(default=1e-4, ge=0, description="Noise scale sigma_n")
    clip_threshold: float = Field(
        default=1.0, gt=0, description="Gradient clipping threshold C"
    )
    grad_sensitivity: Optional[float] = Field(
        default=None,
        gt=0,
        description="Gradient sensitivity c_g; defaults to the clipping threshold",
    )
    sample_rate: Optional[float] = Field(
        default=None,
        gt=0,
        le=1,
        description="Sample rate q of the noise-scale formula; unset means m / shard size",
    )
    n_d: int = Field(default=5, ge=1, description="Critic iterations per generator step")
    weight_clip: float = Field(
        default=0.1, gt=0, description="Critic weights are clamped to (-c, c)"
    )
    per_example_clipping: bool = Field(
        default=False, description="Clip each example's critic gradient before averaging"
    )
    noise_from_budget: bool = Field(
        default=False,
        description="Derive sigma_n from (q, n_d, delta, epsilon) instead of using sigma_n",
    )

    @property
    def c_g(self) -> float:
        return self.grad_sensitivity if self.grad_sensitivity is not None else self.clip_threshold


class PrivacyReport(_Document):
    sample_rate: float
    n_d: int
    epsilon: float
    delta: float
    sigma_n: float = Field(..., description="Noise scale actually used")
    budget_sigma_n: float = Field(..., description="Noise scale implied by (q, n_d, delta, epsilon)")
    gaussian_bound: float = Field(..., description="Lower bound on sigma for the Gaussian mechanism")
    dp_condition: bool = Field(..., description="Whether (sigma_n, epsilon, delta) passes the DP check")


# ─────────────────────────────────────────────────────────────────────────────
# Experiment configuration sections
# ─────────────────────────────────────────────────────────────────────────────


class DatasetSettings(_Document):
    counts: tuple[int, int, int] = Field(
        default=(400, 250, 70), description="Samples per class: normal, pneumonia, covid"
    )
    dim: int = Field(default=64, ge=4, description="Flattened image dimension")
    seed: Optional[int] = Field(
        default=None, description="Dataset seed; derived from the master seed when unset"
    )
    noise: float = Field(default=0.25, ge=0, description="Per-pixel noise standard deviation")
    test_fraction: float = Field(default=0.2, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_counts(self):
        if any(c < 0 for c in self.counts):
            raise ValueError("class counts must be non-negative")
        if sum(self.counts) == 0:
            raise ValueError("dataset needs at least one sample")
        return self


class PartitionSettings(_Document):
    mode: Literal["iid", "noniid"] = "iid"
    covid_holder_fraction: float = Field(default=0.1, gt=0, le=1)


class GanSettings(_Document):
    rounds: int = Field(default=50, ge=0, description="Federated GAN pretraining rounds")
    latent_dim: int = Field(default=8, ge=1)
    hidden_width: int = Field(default=32, ge=1)
    prior: Literal["normal", "uniform"] = "normal"
    n_g: int = Field(default=10, ge=0, description="Generator iterations per client update")
    batch_m: int = Field(default=10, ge=1, description="Mini-batch size m")
    alpha: float = Field(default=0.05, gt=0)
    critic_alpha: Optional[float] = Field(default=None, gt=0, description="Critic step size; alpha when unset")
    label: int = Field(default=2, ge=0, le=2, description="Class the GAN learns and augments")
    fakes_per_client: int = Field(default=5, ge=0)


class ClassifierSettings(_Document):
    width: int = Field(default=64, ge=1)
    depth: int = Field(default=4, ge=1, description="Hidden layers")
    residual_layers: tuple[int, ...] = Field(
        default=(2, 3), description="1-based hidden layers carrying a skip connection"
    )

    @model_validator(mode="after")
    def _check_residuals(self):
        if not self.residual_layers:
            raise ValueError("the classifier needs at least one residual layer")
        for index in self.residual_layers:
            if not 2 <= index <= self.depth:
                raise ValueError(f"residual layer {index} must lie in 2..{self.depth}")
        return self


class ExperimentConfig(_Document):
    mode: Literal["centralized", "federated"] = "federated"
    augmentation: bool = False
    seed: int = Field(default=0, ge=0, description="Master seed")
    rounds: int = Field(default=100, ge=0, description="Classifier rounds T (epochs when centralized)")
    clients: int = Field(default=100, ge=1, description="Client count K")
    c_frac: float = Field(default=0.1, gt=0, le=1, description="Participation fraction C")
    batch_size: int = Field(default=10, ge=1, description="Local batch size B")
    local_epochs: int = Field(default=5, ge=1, description="Local epochs E")
    alpha: float = Field(default=0.01, ge=0, description="Classifier learning rate")
    parallel_clients: Optional[bool] = None
    output_path: Optional[str] = Field(
        default=None, description="Run directory; <output_root>/<label> when unset"
    )
    dataset: DatasetSettings = DatasetSettings()
    partition: PartitionSettings = PartitionSettings()
    privacy: PrivacyParams = PrivacyParams()
    gan: GanSettings = GanSettings()
    classifier: ClassifierSettings = ClassifierSettings()

    @model_validator(mode="after")
    def _check_population(self):
        if self.clients > sum(self.dataset.counts):
            raise ValueError(
                f"{self.clients} clients cannot share {sum(self.dataset.counts)} samples"
            )
        return self


# ─────────────────────────────────────────────────────────────────────────────
# Round records and reports
# ─────────────────────────────────────────────────────────────────────────────


class RoundRecord(_Document):
    round: int = Field(..., description="Round index t (0-based, before increment)")
    stage: Literal["gan", "classifier"] = "classifier"
    selected: list[int] = Field(..., description="Client ids broadcast to this round")
    dropped: list[int] = Field(default_factory=list, description="Selected clients that failed")
    mean_client_loss: float
    eval_accuracy: Optional[float] = None
    seed: int = Field(..., description="Seed of this round's selection stream")


class ExperimentReport(_Document):
    label: str
    config_hash: str
    seed: int
    mode: str
    partition: str
    augmentation: bool
    sigma_n: float
    final_accuracy: float
    class_counts: list[int]
    privacy: Optional[PrivacyReport] = None
    rounds: list[RoundRecord] = Field(default_factory=list)
    gan_rounds: list[RoundRecord] = Field(default_factory=list)


class ComparisonTable(_Document):
    labels: list[str]
    rows: list[dict[str, Optional[float]]] = Field(
        ..., description="One row per round: {'round': t, <label>: accuracy, ...}"
    )
    final_accuracy: dict[str, float]
    deltas: dict[str, float] = Field(..., description="Final accuracy minus the first report's")


# ─────────────────────────────────────────────────────────────────────────────
# Aggregation API schemas
# ─────────────────────────────────────────────────────────────────────────────


class UpdateAccepted(_Document):
    client_id: int
    round: int
    pending: int = Field(..., description="Updates waiting for aggregation")


class AggregateResponse(_Document):
    round: int = Field(..., description="Round index after aggregation")
    clients: list[int]
    n_total: int = Field(..., description="Sum of N_k over aggregated updates")
