"""Generator / critic pair trained with the Wasserstein surrogate.

``client_update`` is the per-client routine of the federated DPGAN: for each
of ``n_g`` generator iterations it runs ``n_d`` critic steps whose gradients
are clipped and noised, clamps the critic weights to ``(-c, c)``, then takes
one generator step whose gradient is clipped but not noised.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

from fed_dpgan.config import get_settings
from fed_dpgan.errors import DataError, ParameterError, StructuralError
from fed_dpgan.nn import (
    Batch,
    ModelSpec,
    ParameterVector,
    backward,
    backward_full,
    forward,
    sgd_step,
)
from fed_dpgan.privacy import (
    add_gaussian_noise,
    clip_by_norm,
    clip_gradient,
    privatize_gradient,
    resolve_noise_scale,
)
from fed_dpgan.schemas import PrivacyParams

if TYPE_CHECKING:
    from fed_dpgan.data import ClientShard

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatentPrior:
    dim: int
    distribution: str = "normal"

    def __post_init__(self):
        if self.distribution not in ("normal", "uniform"):
            raise ParameterError(f"unknown latent prior {self.distribution!r}")
        if self.dim < 1:
            raise ParameterError(f"latent dimension must be positive, got {self.dim}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.distribution == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, self.dim))
        return rng.standard_normal(size=(n, self.dim))


@dataclass(frozen=True)
class GanConfig:
    generator_spec: ModelSpec
    critic_spec: ModelSpec
    latent_dim: int
    n_g: int
    n_d: int
    batch_m: int
    alpha: float
    privacy: PrivacyParams = field(default_factory=PrivacyParams)
    prior: str = "normal"
    # Critic step size; the generator's alpha when unset.
    critic_alpha: Optional[float] = None

    def __post_init__(self):
        if self.generator_spec.input_width != self.latent_dim:
            raise StructuralError(
                f"generator takes {self.generator_spec.input_width} inputs, "
                f"latent_dim is {self.latent_dim}"
            )
        if self.generator_spec.output_width != self.critic_spec.input_width:
            raise StructuralError("generator output width differs from critic input width")
        if self.critic_spec.output_width != 1:
            raise StructuralError("the critic must emit one score per sample")
        if self.n_g < 0 or self.n_d < 1 or self.batch_m < 1:
            raise ParameterError("need n_g >= 0, n_d >= 1 and batch_m >= 1")
        if self.alpha <= 0 or (self.critic_alpha is not None and self.critic_alpha <= 0):
            raise ParameterError("learning rates must be positive")

    @property
    def data_dim(self) -> int:
        return self.critic_spec.input_width

    @property
    def critic_lr(self) -> float:
        return self.alpha if self.critic_alpha is None else self.critic_alpha

    @property
    def latent_prior(self) -> LatentPrior:
        return LatentPrior(self.latent_dim, self.prior)

    @classmethod
    def build(
        cls,
        data_dim: int,
        latent_dim: int = 8,
        hidden_width: int = 32,
        n_g: int = 10,
        batch_m: int = 10,
        alpha: float = 0.05,
        privacy: Optional[PrivacyParams] = None,
        prior: str = "normal",
        critic_alpha: Optional[float] = None,
    ) -> "GanConfig":
        """Two-hidden-layer generator with sigmoid pixels and a one-hidden-layer critic."""
        privacy = privacy or PrivacyParams()
        generator = ModelSpec.mlp(
            [latent_dim, hidden_width, hidden_width, data_dim], ["relu", "relu", "sigmoid"]
        )
        critic = ModelSpec.mlp([data_dim, hidden_width, 1], ["relu", "identity"])
        return cls(
            generator_spec=generator,
            critic_spec=critic,
            latent_dim=latent_dim,
            n_g=n_g,
            n_d=privacy.n_d,
            batch_m=batch_m,
            alpha=alpha,
            privacy=privacy,
            prior=prior,
            critic_alpha=critic_alpha,
        )


@dataclass
class TrainingStats:
    critic_losses: list[float] = field(default_factory=list)
    generator_losses: list[float] = field(default_factory=list)
    sample_rate: float = 1.0
    sigma_n: float = 0.0
    # Local critic after the update; it stays with the client.
    omega: Optional[ParameterVector] = None

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.critic_losses)) if self.critic_losses else 0.0


# ─────────────────────────────────────────────────────────────────────────────
# Losses
# ─────────────────────────────────────────────────────────────────────────────


def _scores(values: np.ndarray) -> np.ndarray:
    scores = np.asarray(values, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ParameterError("empty batch of critic scores")
    return scores


def critic_loss(critic_out_real: np.ndarray, critic_out_fake: np.ndarray) -> float:
    """``mean(critic(fake)) - mean(critic(real))``."""
    real, fake = _scores(critic_out_real), _scores(critic_out_fake)
    if real.size != fake.size:
        raise ParameterError(f"{real.size} real scores but {fake.size} fake scores")
    return float(fake.mean() - real.mean())


def generator_loss(critic_out_fake: np.ndarray) -> float:
    return float(-_scores(critic_out_fake).mean())


def minimax_loss(disc_real_prob: np.ndarray, disc_fake_prob: np.ndarray) -> float:
    """Log-loss GAN objective ``-(E log D(x) + E log(1 - D(G(z))))``; not used in training."""
    real, fake = _scores(disc_real_prob), _scores(disc_fake_prob)
    if np.any((real <= 0) | (real >= 1)) or np.any((fake <= 0) | (fake >= 1)):
        raise ParameterError("discriminator probabilities must lie strictly inside (0, 1)")
    return float(-(np.log(real).mean() + np.log1p(-fake).mean()))


def clip_weights(params: ParameterVector, c: float) -> ParameterVector:
    if c <= 0:
        raise ParameterError(f"weight clip must be positive, got {c}")
    return params.with_values(np.clip(params.values, -c, c))


# ─────────────────────────────────────────────────────────────────────────────
# Training
# ─────────────────────────────────────────────────────────────────────────────


def _critic_gradient(
    cfg: GanConfig, omega: ParameterVector, real: np.ndarray, fake: np.ndarray
) -> tuple[ParameterVector, float]:
    spec = cfg.critic_spec
    m = real.shape[0]
    trace_real = forward(spec, omega, Batch(real))
    trace_fake = forward(spec, omega, Batch(fake))
    loss = critic_loss(trace_real.outputs, trace_fake.outputs)
    g_real = backward(spec, omega, trace_real, np.full((m, 1), -1.0 / m))
    g_fake = backward(spec, omega, trace_fake, np.full((m, 1), 1.0 / m))
    return omega.with_values(g_real.values + g_fake.values), loss


def _per_example_critic_gradient(
    cfg: GanConfig, omega: ParameterVector, real: np.ndarray, fake: np.ndarray
) -> tuple[ParameterVector, float]:
    """Mean of individually clipped per-pair gradients."""
    m = real.shape[0]
    total = np.zeros(len(omega))
    losses = []
    for i in range(m):
        g, loss = _critic_gradient(cfg, omega, real[i : i + 1], fake[i : i + 1])
        total += clip_by_norm(g.values, cfg.privacy.clip_threshold)
        losses.append(loss)
    return omega.with_values(total / m), float(np.mean(losses))


def client_update(
    theta: ParameterVector,
    omega: ParameterVector,
    shard: "ClientShard",
    cfg: GanConfig,
    rng: np.random.Generator,
) -> tuple[ParameterVector, TrainingStats]:
    """Run one client's local DPGAN training and return the new generator.

    The updated critic is reported in ``stats.omega`` for the client to keep.
    """
    real_data = shard.dataset.samples
    n = real_data.shape[0]
    if n == 0:
        raise DataError(f"client {shard.client_id} has no samples to train on")
    if real_data.shape[1] != cfg.data_dim:
        raise StructuralError(
            f"shard has width {real_data.shape[1]}, the GAN expects {cfg.data_dim}"
        )

    p = cfg.privacy
    m = cfg.batch_m
    q = p.sample_rate if p.sample_rate is not None else min(1.0, m / n)
    sigma_n = resolve_noise_scale(p, q)
    p_step = p if sigma_n == p.sigma_n else p.model_copy(update={"sigma_n": sigma_n})
    prior = cfg.latent_prior
    check_clip = get_settings().debug
    stats = TrainingStats(sample_rate=q, sigma_n=sigma_n)
    theta, omega = theta.copy(), omega.copy()

    for _ in range(cfg.n_g):
        for _ in range(cfg.n_d):
            z = prior.sample(rng, m)
            real = real_data[rng.integers(0, n, size=m)]
            fake = forward(cfg.generator_spec, theta, Batch(z)).outputs
            if p.per_example_clipping:
                g_omega, loss = _per_example_critic_gradient(cfg, omega, real, fake)
                g_omega = add_gaussian_noise(g_omega, sigma_n, p.c_g, rng)
            else:
                g_omega, loss = _critic_gradient(cfg, omega, real, fake)
                # adding noise
                g_omega = privatize_gradient(g_omega, p_step, rng)
            omega = clip_weights(sgd_step(omega, g_omega, cfg.critic_lr), p.weight_clip)
            if check_clip and np.max(np.abs(omega.values)) > p.weight_clip:
                raise AssertionError("critic weight escaped the clip range")
            stats.critic_losses.append(loss)

        z = prior.sample(rng, m)
        trace_g = forward(cfg.generator_spec, theta, Batch(z))
        trace_c = forward(cfg.critic_spec, omega, Batch(trace_g.outputs))
        stats.generator_losses.append(generator_loss(trace_c.outputs))
        _, d_fake = backward_full(cfg.critic_spec, omega, trace_c, np.full((m, 1), -1.0 / m))
        g_theta = backward(cfg.generator_spec, theta, trace_g, d_fake)
        theta = sgd_step(theta, clip_gradient(g_theta, p.clip_threshold), cfg.alpha)

    if stats.critic_losses:
        logger.debug(
            f"client {shard.client_id}: critic loss {stats.critic_losses[-1]:.4f}, "
            f"generator loss {stats.generator_losses[-1]:.4f}"
        )
    stats.omega = omega
    return theta, stats


def sample_generator(
    theta: ParameterVector, cfg: GanConfig, n: int, rng: np.random.Generator
) -> Batch:
    if n < 1:
        raise ParameterError(f"need at least one sample, got n={n}")
    z = cfg.latent_prior.sample(rng, n)
    return Batch(forward(cfg.generator_spec, theta, Batch(z)).outputs)
