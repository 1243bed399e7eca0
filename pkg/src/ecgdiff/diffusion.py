"""Denoising diffusion machinery for 1-D signal windows.

Forward corruption has the closed form
    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps,
and the learned reverse chain denoises step by step with the standard
posterior mean
    mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
and variance beta_tilde_t.  Step indices are 1-based (t = 1..T).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .rng import make_rng

DEFAULT_STEPS = 100
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule tables; entry [t-1] belongs to step t."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)
    beta_tildes: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if betas.size > 1 and np.any(np.diff(betas) <= 0.0):
            raise ValueError("betas must be strictly increasing")
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        beta_tildes = np.empty_like(betas)
        beta_tildes[0] = betas[0]
        if betas.size > 1:
            beta_tildes[1:] = (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas[1:]
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        object.__setattr__(self, "beta_tildes", beta_tildes)

    @property
    def steps(self) -> int:
        return int(self.betas.size)

    @classmethod
    def linear(
        cls,
        steps: int = DEFAULT_STEPS,
        beta_start: float = DEFAULT_BETA_START,
        beta_end: float = DEFAULT_BETA_END,
    ) -> "NoiseSchedule":
        """Linear schedule between the two endpoint variances.

        For step counts other than the reference 1000 the same endpoints are
        re-linearized over the requested number of steps.
        """
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        if steps == 1:
            return cls(betas=np.array([beta_start]))
        return cls(betas=np.linspace(beta_start, beta_end, steps))

    def _check_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 1) or np.any(t > self.steps):
            raise ValueError(f"step index out of range 1..{self.steps}: {t}")
        return t

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "beta_start": float(self.betas[0]),
            "beta_end": float(self.betas[-1]),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls.linear(int(d["steps"]), float(d["beta_start"]), float(d["beta_end"]))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Corrupt x0 to step t in closed form given the noise draw eps.

    t may be a scalar or a per-item array matching the leading axis of x0.
    """
    t = schedule._check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} must match x0 shape {x0.shape}")
    abar = schedule.alpha_bars[t - 1]
    if t.ndim > 0:
        abar = abar.reshape(abar.shape + (1,) * (x0.ndim - 1))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def reverse_step_mean(x_t: np.ndarray, t, eps_hat: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Posterior mean of x_{t-1} given x_t and the predicted noise."""
    t = schedule._check_t(t)
    beta = schedule.betas[t - 1]
    alpha = schedule.alphas[t - 1]
    abar = schedule.alpha_bars[t - 1]
    if t.ndim > 0:
        shape = beta.shape + (1,) * (np.asarray(x_t).ndim - 1)
        beta, alpha, abar = beta.reshape(shape), alpha.reshape(shape), abar.reshape(shape)
    return (x_t - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)


def sample(
    model,
    schedule: NoiseSchedule,
    shape: tuple[int, ...],
    seed: int,
    conditioning=None,
) -> np.ndarray:
    """Ancestral sampling from pure Gaussian noise down to t = 1.

    model is called as model(x_t, t, conditioning) with t an int array of
    shape (batch,); fresh noise is injected at every step except the last.
    Deterministic for a fixed seed.
    """
    rng = make_rng(seed, "ancestral-sampling")
    x = rng.standard_normal(shape)
    batch = shape[0]
    for t in range(schedule.steps, 0, -1):
        t_arr = np.full(batch, t, dtype=np.int64)
        eps_hat = model(x, t_arr, conditioning)
        x = reverse_step_mean(x, t, eps_hat, schedule)
        if t > 1:
            sigma = np.sqrt(schedule.beta_tildes[t - 1])
            x = x + sigma * rng.standard_normal(shape)
    return x


def training_loss(
    tape: Tape,
    model_forward,
    x0_batch: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> tuple[Tensor, dict]:
    """Denoising-score-matching loss on one batch, recorded on the tape.

    Per item: t ~ Uniform{1..T}, eps ~ N(0, I), loss is the mean squared
    error between eps and the model prediction at x_t.  model_forward is
    called as model_forward(tape, x_t, t, extra) where extra carries the
    drawn (t, eps) so conditioned models can reuse the batch layout.
    """
    x0_batch = np.asarray(x0_batch, dtype=np.float64)
    if x0_batch.size == 0:
        raise ValueError("empty training batch")
    batch = x0_batch.shape[0]
    t = rng.integers(1, schedule.steps + 1, size=batch)
    eps = rng.standard_normal(x0_batch.shape)
    x_t = q_sample(x0_batch, t, eps, schedule)
    eps_hat = model_forward(tape, x_t, t)
    loss = tape.mse(eps_hat, tape.constant(eps))
    if not np.isfinite(loss.data):
        raise FloatingPointError(f"non-finite training loss: {loss.data}")
    return loss, {"t": t, "eps": eps, "x_t": x_t}
