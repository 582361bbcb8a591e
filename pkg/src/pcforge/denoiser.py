"""Noise-prediction model, trainer, and the conditional sampling loop.

The built-in model is a deliberately small pointwise network: one fully
connected stack applied identically to every point's input vector
[coords(3) | projected features(C) | time embedding(D)], which makes it
permutation-equivariant by construction. It runs in float64 with hand-written
backprop so gradients can be checked against finite differences exactly.
Anything implementing ``predict`` with the same signature can be swapped in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraPose, Intrinsics
from .conditioning import FeatureImage, project_features
from .diffusion import (CDPM, NoiseSchedule, center_noise, check_mode,
                        forward_sample, reverse_step, training_loss)
from .geometry import as_cloud


class DivergenceError(RuntimeError):
    """Raised when training or sampling produces non-finite values."""

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


def time_embedding(t: int, total_steps: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of t/total_steps: interleaved sin/cos pairs at
    dim/2 geometric frequencies (pi * 2^k)."""
    if dim % 2 != 0 or dim < 2:
        raise ValueError("time embedding dimension must be even and >= 2")
    t = int(t)
    if not 1 <= t <= total_steps:
        raise ValueError(f"step t={t} outside 1..{total_steps}")
    k = np.arange(dim // 2)
    phase = np.pi * (2.0 ** k) * (t / total_steps)
    emb = np.empty(dim)
    emb[0::2] = np.sin(phase)
    emb[1::2] = np.cos(phase)
    return emb


def _silu(z: np.ndarray) -> np.ndarray:
    return z / (1.0 + np.exp(-z))


def _silu_grad(z: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


class ToyPointwiseDenoiser:
    """Pointwise MLP noise predictor with SiLU hidden activations.

    The stack outputs a per-point displacement that is divided by
    sqrt(1 - abar_t) to form the noise prediction. The displacement field is
    smooth in (x, t) with O(1) slopes, which a small MLP can fit, whereas raw
    noise prediction at small t would demand slopes of 1/sqrt(1 - abar_t).
    """

    def __init__(self, feature_channels: int, schedule: NoiseSchedule,
                 time_dim: int = 8, hidden_sizes=(64, 64), seed: int = 0):
        if time_dim % 2 != 0 or time_dim < 2:
            raise ValueError("time_dim must be even and >= 2")
        self.feature_channels = int(feature_channels)
        self.schedule = schedule
        self.total_steps = schedule.steps
        self.time_dim = int(time_dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.input_dim = 3 + self.feature_channels + self.time_dim

        rng = np.random.default_rng(seed)
        sizes = [self.input_dim, *self.hidden_sizes, 3]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(2.0 / fan_in)
            if i == len(sizes) - 2:
                scale *= 0.01  # start near eps_hat ~ 0
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            self.biases.append(np.zeros(fan_out))

    def output_scale(self, t: int) -> float:
        """Multiplier turning the displacement head into a noise prediction."""
        return 1.0 / np.sqrt(1.0 - self.schedule.alpha_bar(t))

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count:
            raise ValueError("flat parameter vector has the wrong size")
        i = 0
        for p in self.parameters():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    # -- forward / backward -------------------------------------------------

    def _input_matrix(self, x_t: np.ndarray, features: np.ndarray, t: int) -> np.ndarray:
        x_t = as_cloud(x_t)
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != len(x_t):
            raise ValueError("features must align with the cloud, one row per point")
        if features.shape[1] != self.feature_channels:
            raise ValueError(
                f"feature width {features.shape[1]} does not match the model's "
                f"expected {self.feature_channels} channels")
        emb = time_embedding(t, self.total_steps, self.time_dim)
        return np.hstack([x_t, features, np.tile(emb, (len(x_t), 1))])

    def _forward(self, x: np.ndarray):
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if i == last else _silu(z)
            acts.append(h)
        return h, acts, pre

    def predict(self, x_t: np.ndarray, features: np.ndarray, t: int) -> np.ndarray:
        """Per-point noise prediction; output aligns row-for-row with x_t."""
        out, _, _ = self._forward(self._input_matrix(x_t, features, t))
        return out * self.output_scale(t)

    def backward(self, acts, pre, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients for every parameter given dL/d(output); ordered like
        :meth:`parameters`."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * _silu_grad(pre[i - 1])
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out.extend((gw, gb))
        return out


def loss_and_grads(model: ToyPointwiseDenoiser, x_t: np.ndarray,
                   features: np.ndarray, t: int, eps_target: np.ndarray,
                   mode: str):
    """L2 noise loss and parameter gradients for one (x_t, t) pair.

    In CDPM mode both the prediction and the target are centered before the
    loss; the centering is part of the differentiated graph.
    """
    mode = check_mode(mode)
    x = model._input_matrix(x_t, features, t)
    raw, acts, pre = model._forward(x)
    scale = model.output_scale(t)
    out = raw * scale
    target = np.asarray(eps_target, dtype=np.float64)
    if target.shape != out.shape:
        raise ValueError("target noise shape mismatch")
    if mode == CDPM:
        out_c = out - out.mean(axis=0)
        target = target - target.mean(axis=0)
    else:
        out_c = out
    loss = training_loss(target, out_c)
    # d loss / d out: the centering projector is symmetric and the centered
    # residual is already mean-free, so the same expression covers both modes.
    grad_out = 2.0 * (out_c - target) / len(out) * scale
    grads = model.backward(acts, pre, grad_out)
    return loss, grads


@dataclass
class TrainConfig:
    """Knobs for one deterministic training run."""

    learning_rate: float = 1e-3
    warmup_steps: int = 100
    total_steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    mode: str = CDPM
    weight_decay: float = 1e-4

    def __post_init__(self):
        self.mode = check_mode(self.mode)
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be >= 0")
        if self.warmup_steps < 1 or self.batch_size < 1:
            raise ValueError("warmup_steps and batch_size must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate,
                "warmup_steps": self.warmup_steps,
                "total_steps": self.total_steps,
                "batch_size": self.batch_size,
                "seed": self.seed, "mode": self.mode,
                "weight_decay": self.weight_decay}


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay and linear
    learning-rate warmup."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 1e-4, warmup_steps: int = 100):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup_steps = max(int(warmup_steps), 1)
        self.step_count = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def current_lr(self) -> float:
        ramp = min(1.0, self.step_count / self.warmup_steps)
        return self.learning_rate * ramp

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> float:
        """Apply one in-place update; returns the learning rate used."""
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        lr = self.current_lr()
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= lr * (update + self.weight_decay * p)
        return lr


@dataclass
class TrainingExample:
    """One conditioned training item: clean cloud, condition image, camera."""

    x0: np.ndarray
    condition: FeatureImage
    pose: CameraPose
    intrinsics: Intrinsics
    sample_id: str = ""


def train_step(model: ToyPointwiseDenoiser, batch: list[TrainingExample],
               schedule: NoiseSchedule, cfg: TrainConfig, optimizer: AdamW,
               rng: np.random.Generator, fill: float = 0.0,
               splat_radius: float = 1.0) -> float:
    """One optimization step over a batch.

    Per item: draw t uniformly in 1..T and Gaussian noise (centered first in
    CDPM mode, and that same centered noise is both mixed into x_t and used
    as the loss target), corrupt, project features onto the noisy cloud,
    predict, and average the loss; then apply a single optimizer update.
    """
    if not batch:
        raise ValueError("empty training batch")
    total_loss = 0.0
    acc = None
    for ex in batch:
        t = int(rng.integers(1, schedule.steps + 1))
        eps = rng.standard_normal(ex.x0.shape)
        if cfg.mode == CDPM:
            eps = center_noise(eps)
        x_t = forward_sample(ex.x0, t, eps, schedule)
        feats = project_features(x_t, ex.pose, ex.intrinsics, ex.condition,
                                 fill=fill, splat_radius=splat_radius)
        loss, grads = loss_and_grads(model, x_t, feats, t, eps, cfg.mode)
        total_loss += loss
        if acc is None:
            acc = grads
        else:
            for a, g in zip(acc, grads):
                a += g
    n = len(batch)
    mean_loss = total_loss / n
    if not np.isfinite(mean_loss):
        raise DivergenceError(
            f"training loss is not finite ({mean_loss})",
            state={"step": optimizer.step_count, "loss": mean_loss})
    for a in acc:
        a /= n
    optimizer.step(model.parameters(), acc)
    return mean_loss


def sample_pointcloud(model, condition: FeatureImage, pose: CameraPose,
                      k: Intrinsics, schedule: NoiseSchedule, mode: str,
                      n: int, seed: int, fill: float = 0.0,
                      splat_radius: float = 1.0, step_callback=None) -> np.ndarray:
    """Run the full conditional reverse chain from Gaussian noise.

    Features are re-projected onto the partially denoised cloud before every
    prediction. Deterministic for a fixed seed. ``step_callback(t, cloud)``
    is invoked with the cloud after each reverse step.
    """
    mode = check_mode(mode)
    if n < 1:
        raise ValueError("need n >= 1 points")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 3))
    if mode == CDPM:
        x = x - x.mean(axis=0)
    for t in range(schedule.steps, 0, -1):
        feats = project_features(x, pose, k, condition, fill=fill,
                                 splat_radius=splat_radius)
        eps_hat = model.predict(x, feats, t)
        x = reverse_step(x, t, eps_hat, schedule, mode, rng)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite coordinates at reverse step t={t}",
                                  state={"t": t})
        if step_callback is not None:
            step_callback(t, x)
    return x


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then raw little-endian float64 params
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: ToyPointwiseDenoiser, schedule: NoiseSchedule,
                    mode: str, extra: dict | None = None) -> None:
    header = {
        "feature_channels": model.feature_channels,
        "total_steps": model.total_steps,
        "time_dim": model.time_dim,
        "hidden_sizes": list(model.hidden_sizes),
        "mode": check_mode(mode),
        "schedule": schedule.to_dict(),
        "param_count": model.param_count,
    }
    if extra:
        header["extra"] = extra
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(model.get_flat().astype("<f8").tobytes())


def load_checkpoint(path):
    """Load a checkpoint; returns (model, schedule, mode, header)."""
    path = Path(path)
    with open(path, "rb") as f:
        data = f.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: malformed checkpoint (no header line)")
    header = json.loads(data[:nl].decode("utf-8"))
    schedule = NoiseSchedule.from_dict(header["schedule"])
    model = ToyPointwiseDenoiser(
        feature_channels=int(header["feature_channels"]),
        schedule=schedule,
        time_dim=int(header["time_dim"]),
        hidden_sizes=header["hidden_sizes"],
        seed=0,
    )
    flat = np.frombuffer(data[nl + 1:], dtype="<f8")
    if flat.size != header["param_count"]:
        raise ValueError(f"{path}: parameter block size mismatch")
    model.set_flat(flat)
    return model, schedule, header["mode"], header
