"""Differential-privacy mechanism: clipping, Gaussian noise and calibration.

Gaussian mechanism: ``M(b) = f(b) + N(0, S_f^2 sigma^2)``, with
``sigma > sqrt(2 ln(1.25 / delta)) * S_f / epsilon``.

Gradient form used by the critic updates::

    g <- g * min(1, C / ||g||) + N(0, sigma_n^2 c_g^2 I)
    sigma_n = 2 q sqrt(n_d ln(1 / delta)) / epsilon
"""

import logging
import math
from typing import Callable, Sequence, Union

import numpy as np

from fed_dpgan.errors import ParameterError
from fed_dpgan.nn import ParameterVector
from fed_dpgan.schemas import PrivacyParams, PrivacyReport

logger = logging.getLogger(__name__)

Gradient = Union[ParameterVector, np.ndarray]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ParameterError(message)


def _wrap_like(template: Gradient, values: np.ndarray) -> Gradient:
    if isinstance(template, ParameterVector):
        return template.with_values(values)
    return values


def _values(g: Gradient) -> np.ndarray:
    return g.values if isinstance(g, ParameterVector) else np.asarray(g, dtype=np.float64)


def clip_by_norm(values: np.ndarray, C: float) -> np.ndarray:
    """``values * min(1, C / ||values||)``; a zero vector passes through."""
    _require(C > 0, f"clipping threshold must be positive, got {C}")
    norm = float(np.linalg.norm(values))
    if norm == 0.0 or norm <= C:
        return values.copy()
    return values * (C / norm)


def clip_gradient(g: Gradient, C: float) -> Gradient:
    return _wrap_like(g, clip_by_norm(_values(g), C))


def add_gaussian_noise(
    g: Gradient, sigma_n: float, c_g: float, rng: np.random.Generator
) -> Gradient:
    """Perturb each coordinate with N(0, (sigma_n c_g)^2).

    With ``sigma_n == 0`` the input is copied and ``rng`` is left untouched.
    """
    _require(sigma_n >= 0, f"noise scale must be non-negative, got {sigma_n}")
    _require(c_g > 0, f"gradient sensitivity must be positive, got {c_g}")
    values = _values(g)
    if sigma_n == 0:
        return _wrap_like(g, values.copy())
    noise = rng.normal(0.0, sigma_n * c_g, size=values.shape)
    return _wrap_like(g, values + noise)


def privatize_gradient(g: Gradient, p: PrivacyParams, rng: np.random.Generator) -> Gradient:
    return add_gaussian_noise(clip_gradient(g, p.clip_threshold), p.sigma_n, p.c_g, rng)


def gaussian_mechanism(
    value: np.ndarray, sensitivity: float, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Release ``value`` with N(0, sensitivity^2 sigma^2) noise per coordinate."""
    _require(sensitivity > 0, f"sensitivity must be positive, got {sensitivity}")
    _require(sigma >= 0, f"sigma must be non-negative, got {sigma}")
    value = np.asarray(value, dtype=np.float64)
    return value + rng.normal(0.0, sensitivity * sigma, size=value.shape)


# ─────────────────────────────────────────────────────────────────────────────
# Calibration
# ─────────────────────────────────────────────────────────────────────────────


def calibrate_sigma(epsilon: float, delta: float, sensitivity: float) -> float:
    """Infimum ``sqrt(2 ln(1.25/delta)) * sensitivity / epsilon``; use a strictly larger sigma."""
    _require(epsilon > 0, f"epsilon must be positive, got {epsilon}")
    _require(0 < delta < 1, f"delta must lie in (0, 1), got {delta}")
    _require(sensitivity > 0, f"sensitivity must be positive, got {sensitivity}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon


def dpgan_noise_scale(q: float, n_d: int, delta: float, epsilon: float) -> float:
    """``2 q sqrt(n_d ln(1/delta)) / epsilon`` (natural logarithm)."""
    _require(0 < q <= 1, f"sample rate must lie in (0, 1], got {q}")
    _require(n_d >= 1, f"critic iterations must be >= 1, got {n_d}")
    _require(0 < delta < 1, f"delta must lie in (0, 1), got {delta}")
    _require(epsilon > 0, f"epsilon must be positive, got {epsilon}")
    return 2.0 * q * math.sqrt(n_d * math.log(1.0 / delta)) / epsilon


def check_dp_condition(sigma: float, epsilon: float, delta: float) -> bool:
    """True iff ``delta >= 0.8 exp(-(sigma epsilon)^2 / 2)`` and ``epsilon < 1``."""
    return epsilon < 1 and delta >= 0.8 * math.exp(-((sigma * epsilon) ** 2) / 2.0)


def resolve_noise_scale(p: PrivacyParams, q: float) -> float:
    if p.noise_from_budget:
        return dpgan_noise_scale(q, p.n_d, p.delta, p.epsilon)
    return p.sigma_n


def privacy_summary(p: PrivacyParams, q: float) -> PrivacyReport:
    """Noise scale, Gaussian bound and DP verdict; a configured ``sample_rate`` overrides ``q``."""
    if p.sample_rate is not None:
        q = p.sample_rate
    q = min(max(q, np.finfo(float).tiny), 1.0)
    sigma_n = resolve_noise_scale(p, q)
    verdict = check_dp_condition(sigma_n, p.epsilon, p.delta)
    if not verdict:
        logger.warning(
            f"sigma_n={sigma_n:g} does not meet the DP condition at "
            f"epsilon={p.epsilon:g}, delta={p.delta:g}"
        )
    return PrivacyReport(
        sample_rate=q,
        n_d=p.n_d,
        epsilon=p.epsilon,
        delta=p.delta,
        sigma_n=sigma_n,
        budget_sigma_n=dpgan_noise_scale(q, p.n_d, p.delta, p.epsilon),
        gaussian_bound=calibrate_sigma(p.epsilon, p.delta, p.c_g),
        dp_condition=verdict,
    )


# ─────────────────────────────────────────────────────────────────────────────
# Sensitivity
# ─────────────────────────────────────────────────────────────────────────────


def adjacent_datasets(samples: np.ndarray) -> list[np.ndarray]:
    """Every dataset that differs from ``samples`` by one removed row."""
    samples = np.asarray(samples)
    return [np.delete(samples, i, axis=0) for i in range(samples.shape[0])]


def l2_sensitivity(
    query: Callable[[np.ndarray], np.ndarray],
    dataset: np.ndarray,
    neighbours: Sequence[np.ndarray],
) -> float:
    """Largest ``||query(dataset) - query(b')||_2`` over the given neighbours."""
    _require(len(neighbours) > 0, "need at least one adjacent dataset")
    reference = np.asarray(query(dataset), dtype=np.float64)
    return max(
        float(np.linalg.norm(reference - np.asarray(query(b), dtype=np.float64)))
        for b in neighbours
    )
