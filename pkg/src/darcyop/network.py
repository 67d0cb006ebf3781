"""Discrete neural operators on image-shaped fields.

Two architectures share one convolutional backbone (a residual U-Net with a
sigmoid-gated skip on every level) and one output head (depthwise 3x3 conv,
ReLU, pointwise 1x1 conv, sigmoid):

* ``aronet``: the backbone is the branch. A dense trunk maps a sine-cosine
  embedding of the time index to one weight per branch channel; the branch
  feature maps are scaled channel-wise by those weights before the head.
* ``arunet``: the time embedding (length H*W) is reshaped into an extra input
  channel and concatenated onto the parameter channels.

All tensors are float64, laid out ``[batch, channels, H, W]``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgument, TrainingDiverged

DTYPE = torch.float64
KINDS = ("aronet", "arunet")


def time_embedding(t, d: int) -> np.ndarray:
    """Sine-cosine embedding: TE[2i] = sin(t / 10000^(2i/d)), TE[2i+1] = cos(...)."""
    if d <= 0 or d % 2:
        raise InvalidArgument(f"embedding dimension must be positive and even, got {d}")
    if t < 0:
        raise InvalidArgument("time index must be >= 0")
    freq = 10000.0 ** (-np.arange(0, d, 2) / d)
    out = np.empty(d)
    out[0::2] = np.sin(t * freq)
    out[1::2] = np.cos(t * freq)
    return out


def time_embedding_batch(ts, d: int) -> torch.Tensor:
    return torch.as_tensor(np.stack([time_embedding(float(t), d) for t in ts]), dtype=DTYPE)


@dataclass(frozen=True)
class Architecture:
    kind: str
    in_channels: int
    out_channels: int
    height: int
    width: int
    base_width: int = 16
    levels: int = 2
    branch_channels: int = 16
    time_dim: int = 64
    trunk_hidden: int = 64

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown architecture {self.kind!r}")
        scale = 2 ** self.levels
        if self.height % scale or self.width % scale:
            raise InvalidArgument(f"H and W must be divisible by 2^levels = {scale}")
        if self.kind == "arunet" and (self.height * self.width) % 2:
            raise InvalidArgument("ARUnet time embedding needs an even H*W")
        if self.kind == "aronet" and self.time_dim % 2:
            raise InvalidArgument("time_dim must be even")
        if min(self.in_channels, self.out_channels, self.base_width, self.branch_channels) < 1:
            raise InvalidArgument("channel counts must be positive")

    @property
    def backbone_in(self) -> int:
        return self.in_channels + (1 if self.kind == "arunet" else 0)

    def widths(self) -> list[int]:
        return [self.base_width * 2 ** level for level in range(self.levels + 1)]

    def parameter_count(self) -> int:
        """Closed-form count from the layer shapes."""
        def conv(cin, cout, k):
            return cout * cin * k * k + cout

        w = self.widths()
        q = self.branch_channels
        n = conv(self.backbone_in, w[0], 3) + 2 * conv(w[0], w[0], 3)
        for level in range(1, self.levels + 1):
            n += conv(w[level - 1], w[level], 3) + 2 * conv(w[level], w[level], 3)
        for level in range(1, self.levels + 1):
            lo = w[level - 1]
            n += conv(w[level], lo, 3)  # up
            n += 2 * conv(lo, 1, 1)  # gate
            n += conv(2 * lo, lo, 1)  # fuse
            n += 2 * conv(lo, lo, 3)  # residual block
        n += conv(w[0], q, 1)
        n += q * 9 + q + conv(q, self.out_channels, 1)  # head
        if self.kind == "aronet":
            n += self.time_dim * self.trunk_hidden + self.trunk_hidden
            n += self.trunk_hidden * q + q
        return n

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        return F.relu(x + self.conv2(F.relu(self.conv1(x))))


class GatedSkip(nn.Module):
    """Additive attention reduced to one sigmoid gate per pixel."""

    def __init__(self, width):
        super().__init__()
        self.skip = nn.Conv2d(width, 1, 1)
        self.signal = nn.Conv2d(width, 1, 1)

    def forward(self, skip, signal):
        return skip * torch.sigmoid(self.skip(skip) + self.signal(signal))


class Backbone(nn.Module):
    def __init__(self, arch: Architecture):
        super().__init__()
        w = arch.widths()
        self.stem = nn.Conv2d(arch.backbone_in, w[0], 3, padding=1)
        self.enc0 = ResidualBlock(w[0])
        self.down = nn.ModuleList(nn.Conv2d(w[i - 1], w[i], 3, stride=2, padding=1)
                                  for i in range(1, len(w)))
        self.enc = nn.ModuleList(ResidualBlock(w[i]) for i in range(1, len(w)))
        # decoder modules are indexed by the level they return to
        self.up = nn.ModuleList(nn.Conv2d(w[i], w[i - 1], 3, padding=1) for i in range(1, len(w)))
        self.gate = nn.ModuleList(GatedSkip(w[i - 1]) for i in range(1, len(w)))
        self.fuse = nn.ModuleList(nn.Conv2d(2 * w[i - 1], w[i - 1], 1) for i in range(1, len(w)))
        self.dec = nn.ModuleList(ResidualBlock(w[i - 1]) for i in range(1, len(w)))
        self.proj = nn.Conv2d(w[0], arch.branch_channels, 1)

    def forward(self, x):
        x = self.enc0(F.relu(self.stem(x)))
        skips = [x]
        for down, block in zip(self.down, self.enc):
            x = block(F.relu(down(x)))
            skips.append(x)
        for level in range(len(self.up), 0, -1):
            i = level - 1
            skip = skips[i]
            x = F.relu(self.up[i](F.interpolate(x, size=skip.shape[-2:], mode="nearest")))
            x = self.fuse[i](torch.cat([x, self.gate[i](skip, x)], dim=1))
            x = self.dec[i](x)
        return self.proj(x)


class Head(nn.Module):
    def __init__(self, channels, out_channels):
        super().__init__()
        self.depthwise = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.pointwise = nn.Conv2d(channels, out_channels, 1)

    def forward(self, x):
        return torch.sigmoid(self.pointwise(F.relu(self.depthwise(x))))


class Trunk(nn.Module):
    def __init__(self, arch: Architecture):
        super().__init__()
        self.hidden = nn.Linear(arch.time_dim, arch.trunk_hidden)
        self.out = nn.Linear(arch.trunk_hidden, arch.branch_channels)

    def forward(self, te):
        return self.out(torch.tanh(self.hidden(te)))


class OperatorNet(nn.Module):
    """Either architecture; ``forward(u, t)`` takes normalized inputs and step indices."""

    def __init__(self, arch: Architecture, seed: int = 0):
        super().__init__()
        self.arch = arch
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.backbone = Backbone(arch)
            self.head = Head(arch.branch_channels, arch.out_channels)
            self.trunk = Trunk(arch) if arch.kind == "aronet" else None
        self.to(DTYPE)

    def _check(self, u, t):
        a = self.arch
        if u.dim() != 4 or tuple(u.shape[1:]) != (a.in_channels, a.height, a.width):
            raise InvalidArgument(f"input shape {tuple(u.shape)} does not match "
                                  f"[batch, {a.in_channels}, {a.height}, {a.width}]")
        if len(t) != u.shape[0]:
            raise InvalidArgument("need one time index per batch entry")

    def branch(self, u):
        return self.backbone(u)

    def trunk_weights(self, t):
        return self.trunk(time_embedding_batch(t, self.arch.time_dim))

    def combine(self, b, w):
        return b * w[:, :, None, None]

    def forward(self, u, t):
        self._check(u, t)
        if self.arch.kind == "aronet":
            return self.head(self.combine(self.branch(u), self.trunk_weights(t)))
        te = time_embedding_batch(t, self.arch.height * self.arch.width)
        te = te.reshape(-1, 1, self.arch.height, self.arch.width)
        return self.head(self.backbone(torch.cat([u, te], dim=1)))

    def parameter_vector(self) -> torch.Tensor:
        return nn.utils.parameters_to_vector(self.parameters()).detach().clone()

    def load_parameter_vector(self, vec):
        vec = torch.as_tensor(vec, dtype=DTYPE)
        n = sum(p.numel() for p in self.parameters())
        if vec.numel() != n:
            raise InvalidArgument(f"parameter vector has {vec.numel()} entries, model needs {n}")
        nn.utils.vector_to_parameters(vec, self.parameters())


def forward_aronet(model: OperatorNet, u, t):
    if model.arch.kind != "aronet":
        raise InvalidArgument("model is not an AROnet")
    return model(u, t)


def forward_arunet(model: OperatorNet, u, t):
    if model.arch.kind != "arunet":
        raise InvalidArgument("model is not an ARUnet")
    return model(u, t)


@dataclass
class Normalization:
    """Per-channel z-score for inputs, per-channel min-max for outputs."""

    in_mean: np.ndarray
    in_std: np.ndarray
    out_min: np.ndarray
    out_max: np.ndarray

    STD_FLOOR = 1e-12

    @classmethod
    def fit(cls, inputs, outputs):
        """inputs ``[N, C, H, W]``; outputs ``[..., O, H, W]`` (leading axes pooled)."""
        inputs = np.asarray(inputs, dtype=float)
        outputs = np.asarray(outputs, dtype=float)
        o = outputs.shape[-3]
        flat = np.moveaxis(outputs, -3, 0).reshape(o, -1)
        return cls(inputs.mean(axis=(0, 2, 3)),
                   np.maximum(inputs.std(axis=(0, 2, 3)), cls.STD_FLOOR),
                   flat.min(axis=1), flat.max(axis=1))

    def normalize_inputs(self, u):
        return (np.asarray(u) - self.in_mean[:, None, None]) / self.in_std[:, None, None]

    def _span(self):
        span = self.out_max - self.out_min
        return np.where(span > 0, span, 1.0)[:, None, None]

    def normalize_outputs(self, y):
        y = np.asarray(y)
        out = (y - self.out_min[:, None, None]) / self._span()
        flat = (self.out_max == self.out_min)[:, None, None]
        return np.where(flat, 0.0, out)

    def denormalize_outputs(self, y):
        return np.asarray(y) * self._span() + self.out_min[:, None, None]

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("in_mean", "in_std", "out_min", "out_max")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float) for k in ("in_mean", "in_std", "out_min", "out_max")))


def normalize_inputs(u, stats: Normalization):
    return stats.normalize_inputs(u)


def denormalize_outputs(y, stats: Normalization):
    return stats.denormalize_outputs(y)


def operator_loss(pred, labels):
    """Mean squared error over samples, times and cells."""
    if pred.shape != labels.shape:
        raise InvalidArgument(f"shape mismatch {tuple(pred.shape)} vs {tuple(labels.shape)}")
    return ((pred - labels) ** 2).mean()


def gradients(model: OperatorNet, batch, frozen=()) -> torch.Tensor:
    """Flat gradient of the loss on ``batch = (u, t, y)``; frozen groups get exact zeros."""
    u, t, y = batch
    if len(t) == 0:
        raise InvalidArgument("empty batch")
    model.zero_grad(set_to_none=True)
    operator_loss(model(u, t), y).backward()
    grads = []
    for name, p in model.named_parameters():
        if p.grad is None or name.split(".")[0] in frozen:
            grads.append(torch.zeros_like(p).reshape(-1))
        else:
            grads.append(p.grad.reshape(-1))
    return torch.cat(grads).detach()


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


def adam_step(theta, grad, m, v, lr, step, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; ``step`` counts from 1.

    Returns ``(theta, m, v)`` as new tensors.
    """
    m = beta1 * m + (1 - beta1) * grad
    v = beta2 * v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    return theta - lr * m_hat / (v_hat.sqrt() + eps), m, v


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    epochs: int = 10
    iterations: int = 120  # minibatch steps per epoch
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgument("learning rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0 or self.iterations < 0:
            raise InvalidArgument("invalid batch size / epochs / iterations")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.iterations


@dataclass
class TrainingSet:
    """Normalized training data: inputs ``[N, C, H, W]``, labels ``[N, M, O, H, W]``."""

    inputs: np.ndarray
    labels: np.ndarray
    times: np.ndarray  # step index of every snapshot, length M

    def __len__(self):
        return self.inputs.shape[0]

    def extend(self, inputs, labels):
        self.inputs = np.concatenate([self.inputs, inputs])
        self.labels = np.concatenate([self.labels, labels])


class Trainer:
    """Minibatch Adam on (field, time, label) triples drawn uniformly."""

    def __init__(self, model: OperatorNet, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.params = list(model.parameters())
        self.state = AdamState.zeros_like(self.params)
        self.rng = np.random.default_rng(cfg.seed)
        self.history: list[float] = []

    def sample_batch(self, data: TrainingSet):
        n, m = data.labels.shape[:2]
        size = min(self.cfg.batch_size, n * m)
        flat = self.rng.choice(n * m, size=size, replace=False)
        i, j = np.divmod(flat, m)
        u = torch.as_tensor(data.inputs[i], dtype=DTYPE)
        y = torch.as_tensor(data.labels[i, j], dtype=DTYPE)
        return u, data.times[j], y

    def step(self, data: TrainingSet) -> float:
        u, t, y = self.sample_batch(data)
        self.model.zero_grad(set_to_none=True)
        loss = operator_loss(self.model(u, t), y)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at iteration {self.state.step + 1} "
                                   f"(lr={self.cfg.learning_rate:g})")
        loss.backward()
        self.state.step += 1
        with torch.no_grad():
            for k, p in enumerate(self.params):
                new, self.state.m[k], self.state.v[k] = adam_step(
                    p, p.grad, self.state.m[k], self.state.v[k], self.cfg.learning_rate,
                    self.state.step)
                p.copy_(new)
        self.history.append(value)
        return value


def train(model: OperatorNet, data: TrainingSet, cfg: TrainConfig):
    """``epochs * iterations`` Adam steps; returns ``(model, loss_history)``."""
    trainer = Trainer(model, cfg)
    for _ in range(cfg.total_steps):
        trainer.step(data)
    return model, trainer.history


def predict(model: OperatorNet, inputs, times, batch_size=64) -> np.ndarray:
    """Normalized predictions ``[N, M, O, H, W]`` for every input and time."""
    inputs = np.asarray(inputs)
    n, m = inputs.shape[0], len(times)
    out = np.empty((n, m, model.arch.out_channels, model.arch.height, model.arch.width))
    pairs = [(i, j) for i in range(n) for j in range(m)]
    model.eval()
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            idx = np.array([i for i, _ in chunk])
            ts = [times[j] for _, j in chunk]
            res = model(torch.as_tensor(inputs[idx], dtype=DTYPE), ts).numpy()
            for (i, j), r in zip(chunk, res):
                out[i, j] = r
    model.train()
    return out
