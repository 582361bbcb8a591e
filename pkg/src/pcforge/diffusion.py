"""Forward/reverse diffusion over point clouds, the L2 noise objective, and
the zero-mean (CDPM) sampling variant.

The forward process corrupts a clean cloud x0 with scheduled Gaussian noise,
x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; the reverse step subtracts the
predicted noise and re-injects sigma_t z. Because points are denoised
independently, a plain reverse chain lets the cloud centroid drift; CDPM mode
removes that drift by centering the noise at training time and both the
predicted noise and the partially denoised cloud at every reverse step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import as_cloud

DDPM = "ddpm"
CDPM = "cdpm"
MODES = (DDPM, CDPM)


def check_mode(mode: str) -> str:
    mode = str(mode).lower()
    if mode not in MODES:
        raise ValueError(f"sampler mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass
class NoiseSchedule:
    """Per-step beta_t with derived alpha_t and the running product abar_t.

    Arrays are 0-indexed internally; steps are addressed 1..T like the
    equations, so ``beta(t)`` returns betas[t-1].
    """

    kind: str
    beta_start: float
    beta_end: float
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.steps:
            raise ValueError(f"step t={t} outside 1..{self.steps}")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_t(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_t(t) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check_t(t) - 1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "steps": self.steps,
                "beta_start": self.beta_start, "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return make_schedule(d["kind"], int(d["steps"]),
                             float(d["beta_start"]), float(d["beta_end"]))


def make_schedule(kind: str = "linear", steps: int = 1000,
                  beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Build a noise schedule; only the linear beta ramp is supported."""
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if steps < 1:
        raise ValueError("schedule needs at least one step")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, steps)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(kind, beta_start, beta_end, betas, alphas, alpha_bars)


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray,
                   schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward corruption of x0 at step t with the given noise."""
    x0 = as_cloud(x0)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} != cloud shape {x0.shape}")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def center_noise(eps: np.ndarray) -> np.ndarray:
    """Subtract the per-coordinate mean from a noise field (idempotent)."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 2 or eps.shape[1] != 3 or eps.shape[0] < 1:
        raise ValueError(f"noise field must have shape (N, 3), got {eps.shape}")
    return eps - eps.mean(axis=0)


def reverse_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray,
                 schedule: NoiseSchedule, mode: str = DDPM,
                 rng=None) -> np.ndarray:
    """One reverse transition x_t -> x_{t-1}.

    mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t), then
    x_{t-1} = mu + sqrt(beta_t) * z with fresh Gaussian z for t > 1 (z = 0 at
    t = 1). In CDPM mode eps_hat is centered before use and the result is
    centered afterwards.

    ``rng`` is a seed or numpy Generator; it must be supplied for t > 1.
    """
    mode = check_mode(mode)
    x_t = as_cloud(x_t)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != x_t.shape:
        raise ValueError(f"prediction shape {eps_hat.shape} != cloud shape {x_t.shape}")
    t = schedule._check_t(t)

    if mode == CDPM:
        eps_hat = center_noise(eps_hat)
    beta = schedule.beta(t)
    alpha = schedule.alpha(t)
    ab = schedule.alpha_bar(t)
    mu = (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    if t > 1:
        if rng is None:
            raise ValueError("reverse_step needs an rng (seed or Generator) for t > 1")
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        x_prev = mu + np.sqrt(beta) * rng.standard_normal(x_t.shape)
    else:
        x_prev = mu
    if mode == CDPM:
        x_prev = x_prev - x_prev.mean(axis=0)
    return x_prev


def training_loss(eps: np.ndarray, eps_hat: np.ndarray) -> float:
    """Mean over points of the squared Euclidean norm of (eps - eps_hat)."""
    eps = np.asarray(eps, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: {eps.shape} vs {eps_hat.shape}")
    diff = eps - eps_hat
    return float(np.mean(np.sum(diff * diff, axis=1)))
