"""Adversarial losses, a small residual discriminator, toy data, training.

Loss families: the classic cross-entropy pair and the non-saturating
logistic pair with the R1 gradient penalty on real samples. The penalty
path runs through a second-order tape; everything the discriminator uses
(conv, add, leaky-relu, pooling, dense, reshape) supports being
differentiated twice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, TrainingDiverged
from .synthesis import Dense, Generator, GeneratorConfig, _init_normal

PROB_CLAMP = 1e-7
LEAK = 0.2

CSV_HEADER = "step,d_loss,g_loss,r1,g_grad_norm,d_grad_norm"


@dataclass
class LossConfig:
    kind: str = "nonsat_r1"            # or "classic"
    gamma: float = 0.1                 # R1 weight; toy default
    learning_rate: float = 2.5e-3
    ema_halflife: float = 50.0         # generator weight averaging, in steps

    def __post_init__(self):
        if self.kind not in ("classic", "nonsat_r1"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.ema_halflife <= 0:
            raise ConfigError("ema_halflife must be > 0")


# ---------------------------------------------------------------------------
# losses

def g_loss_nonsat(d_fake: Tensor) -> Tensor:
    """mean log(1 + exp(-D(G(z)))), softplus-stabilized."""
    return ad.mean_all(ad.softplus(ad.mul_scalar(d_fake, -1.0)))


def r1_penalty_mean(tape: Tape, d_real: Tensor, x_real: Tensor) -> Tensor:
    """Per-sample mean of |grad_x D(x)|^2 on real inputs."""
    d_sum = ad.sum_all(d_real)
    gnsq = ad.grad_norm_sq(tape, d_sum, x_real)
    return ad.mul_scalar(gnsq, 1.0 / d_real.size)


def d_loss_nonsat_r1(d_real: Tensor, d_fake: Tensor, x_real: Tensor,
                     gamma: float, tape: Tape = None) -> Tensor:
    """mean softplus(-D(x)) + mean softplus(D(G(z))) + (gamma/2) R1."""
    loss = ad.add(ad.mean_all(ad.softplus(ad.mul_scalar(d_real, -1.0))),
                  ad.mean_all(ad.softplus(d_fake)))
    if gamma > 0:
        if tape is None or not tape.second_order:
            raise ConfigError("gamma > 0 requires a second-order tape")
        penalty = r1_penalty_mean(tape, d_real, x_real)
        loss = ad.add(loss, ad.mul_scalar(penalty, gamma / 2.0))
    return loss


def _log_prob(logits: Tensor) -> Tensor:
    prob = ad.clamp(ad.sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return ad.log(prob)


def g_loss_classic(d_fake: Tensor) -> Tensor:
    """-mean log D(G(z)) with sigmoid-applied, clamped logits."""
    return ad.mul_scalar(ad.mean_all(_log_prob(d_fake)), -1.0)


def d_loss_classic(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-mean log D(x) - mean log(1 - D(G(z)))."""
    real_term = ad.mean_all(_log_prob(d_real))
    fake_term = ad.mean_all(_log_prob(ad.mul_scalar(d_fake, -1.0)))
    return ad.mul_scalar(ad.add(real_term, fake_term), -1.0)


# ---------------------------------------------------------------------------
# discriminator

class Conv:
    """Plain (unmodulated) convolution layer."""

    def __init__(self, rng, out_channels, in_channels, kernel, dtype, bias=True):
        fan_in = in_channels * kernel * kernel
        self.weight = _init_normal(rng, (out_channels, in_channels, kernel, kernel),
                                   fan_in, dtype)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype)) if bias else None
        self.pad = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, pad=self.pad)

    def named_params(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class ResDownBlock:
    """Two 3x3 convs + pooled 1x1 skip; halves the resolution."""

    def __init__(self, rng, in_channels, out_channels, dtype):
        self.conv0 = Conv(rng, in_channels, in_channels, 3, dtype)
        self.conv1 = Conv(rng, out_channels, in_channels, 3, dtype)
        self.skip = Conv(rng, out_channels, in_channels, 1, dtype, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        y = ad.leaky_relu(self.conv0(x), LEAK)
        y = ad.leaky_relu(self.conv1(y), LEAK)
        y = ad.avgpool2x2(y)
        s = self.skip(ad.avgpool2x2(x))
        return ad.add(y, s)

    def named_params(self, prefix):
        yield from self.conv0.named_params(f"{prefix}.conv0")
        yield from self.conv1.named_params(f"{prefix}.conv1")
        yield from self.skip.named_params(f"{prefix}.skip")


class Discriminator:
    """Residual downsampling stack ending in a scalar logit per sample."""

    def __init__(self, resolution, channel_map, dtype=np.float32, seed=0):
        if resolution < 8 or resolution & (resolution - 1):
            raise ConfigError(f"resolution must be a power of 2 >= 8, got {resolution}")
        rng = np.random.default_rng(seed)
        self.resolution = resolution
        self.dtype = np.dtype(dtype).type
        res_chain = []
        res = resolution
        while res >= 8:
            res_chain.append(res)
            res //= 2
        self.fromrgb = Conv(rng, channel_map[resolution], 3, 1, self.dtype)
        self.blocks = [ResDownBlock(rng, channel_map[r], channel_map[r // 2], self.dtype)
                       for r in res_chain]
        c4 = channel_map[4]
        self.final_conv = Conv(rng, c4, c4, 3, self.dtype)
        self.fc0 = Dense(rng, c4 * 16, c4, self.dtype)
        self.fc1 = Dense(rng, c4, 1, self.dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != 3 or x.shape[2] != self.resolution:
            raise ConfigError(f"expected (N, 3, {self.resolution}, "
                              f"{self.resolution}) input, got {x.shape}")
        y = ad.leaky_relu(self.fromrgb(x), LEAK)
        for block in self.blocks:
            y = block.forward(y)
        y = ad.leaky_relu(self.final_conv(y), LEAK)
        y = ad.reshape(y, (y.shape[0], y.shape[1] * 16))
        y = ad.leaky_relu(self.fc0(y), LEAK)
        return ad.reshape(self.fc1(y), (x.shape[0],))

    __call__ = forward

    def named_params(self):
        yield from self.fromrgb.named_params("fromrgb")
        for i, block in enumerate(self.blocks):
            yield from block.named_params(f"block{i}")
        yield from self.final_conv.named_params("final_conv")
        yield from self.fc0.named_params("fc0")
        yield from self.fc1.named_params("fc1")

    def param_dict(self):
        return dict(self.named_params())


def build_discriminator(resolution, channel_map, dtype=np.float32,
                        seed=0) -> Discriminator:
    return Discriminator(resolution, channel_map, dtype=dtype, seed=seed)


# ---------------------------------------------------------------------------
# toy data

@dataclass
class ToyDatasetSpec:
    resolution: int = 16
    seed: int = 0
    kind: str = "two_blob"

    def __post_init__(self):
        if self.kind != "two_blob":
            raise ConfigError(f"unknown toy dataset kind {self.kind!r}")
        if self.resolution < 4:
            raise ConfigError("toy dataset resolution must be >= 4")


class ToyBlobDataset:
    """Procedural two-blob RGB images in [-1, 1].

    Each sample index gets its own counter-advanced Philox stream, so the
    sequence is reproducible independent of evaluation order.
    """

    def __init__(self, spec: ToyDatasetSpec):
        self.spec = spec
        self._base = np.random.Philox(key=spec.seed)
        r = spec.resolution
        self._grid_y, self._grid_x = np.mgrid[0:r, 0:r].astype(np.float64) + 0.5

    def sample(self, index: int) -> np.ndarray:
        rng = np.random.Generator(self._base.jumped(index + 1))
        r = self.spec.resolution
        img = np.empty((3, r, r), dtype=np.float64)
        img[:] = rng.uniform(-1.0, -0.4, 3)[:, None, None]
        for _ in range(2):
            cx, cy = rng.uniform(0.2 * r, 0.8 * r, 2)
            sigma = rng.uniform(0.08 * r, 0.25 * r)
            color = rng.uniform(-1.0, 1.0, 3)
            blob = np.exp(-((self._grid_x - cx) ** 2 + (self._grid_y - cy) ** 2)
                          / (2.0 * sigma * sigma))
            img += color[:, None, None] * blob
        return np.clip(img, -1.0, 1.0).astype(np.float32)

    def batch(self, start: int, count: int) -> np.ndarray:
        return np.stack([self.sample(start + i) for i in range(count)])


# ---------------------------------------------------------------------------
# optimizer and loop

class Adam:
    """Adam with the StyleGAN2 moment setup (beta1=0, beta2=0.99)."""

    def __init__(self, tensors, lr, beta1=0.0, beta2=0.99, eps=1e-8):
        self.tensors = list(tensors)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(t.data) for t in self.tensors]
        self._v = [np.zeros_like(t.data) for t in self.tensors]

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.tensors, self._m, self._v):
            g = grads[p].data
            m[...] = b1 * m + (1.0 - b1) * g
            v[...] = b2 * v + (1.0 - b2) * (g * g)
            p.data[...] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class StepStats:
    step: int
    d_loss: float
    g_loss: float
    r1: float
    g_grad_norm: float
    d_grad_norm: float


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)

    def to_csv_text(self) -> str:
        lines = [CSV_HEADER]
        for s in self.steps:
            lines.append(",".join([str(s.step)] + [repr(float(v)) for v in (
                s.d_loss, s.g_loss, s.r1, s.g_grad_norm, s.d_grad_norm)]))
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    history: TrainHistory
    generator: Generator
    discriminator: Discriminator
    ema_params: dict
    config: GeneratorConfig
    loss: LossConfig


def _global_norm(grads: dict, tensors) -> float:
    total = 0.0
    for t in tensors:
        g = grads[t].data
        total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def _check_finite(step: int, term: str, value: float):
    if not np.isfinite(value):
        raise TrainingDiverged(step, term, value)


def ema_generator(result: TrainResult) -> Generator:
    """Fresh generator loaded with the exponentially averaged weights."""
    gen = Generator(result.config, dtype=result.generator.dtype, seed=0)
    gen.load_param_dict(result.ema_params)
    return gen


def train(config: GeneratorConfig, loss: LossConfig, data: ToyDatasetSpec,
          steps: int, seed: int = 0, batch_size: int = 16,
          dtype=np.float32) -> TrainResult:
    """Alternating D/G steps, fully reproducible from the seed."""
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if data.resolution != config.resolution:
        raise ConfigError(f"dataset resolution {data.resolution} != generator "
                          f"resolution {config.resolution}")
    dtype = np.dtype(dtype).type
    rng = np.random.default_rng(seed)
    gen = Generator(config, dtype=dtype, seed=int(rng.integers(2 ** 31)))
    disc = build_discriminator(config.resolution, config.channel_map,
                               dtype=dtype, seed=int(rng.integers(2 ** 31)))
    dataset = ToyBlobDataset(data)
    g_tensors = [t for _, t in gen.named_params()]
    d_tensors = [t for _, t in disc.named_params()]
    opt_g = Adam(g_tensors, loss.learning_rate)
    opt_d = Adam(d_tensors, loss.learning_rate)
    ema = {name: t.data.copy() for name, t in gen.named_params()}
    ema_decay = 0.5 ** (1.0 / loss.ema_halflife)
    need_second = loss.kind == "nonsat_r1" and loss.gamma > 0

    history = TrainHistory()
    for step in range(1, steps + 1):
        real = Tensor(dataset.batch((step - 1) * batch_size, batch_size)
                      .astype(dtype))
        z_d = Tensor(rng.standard_normal((batch_size, config.style_dim)).astype(dtype))
        z_g = Tensor(rng.standard_normal((batch_size, config.style_dim)).astype(dtype))

        with Tape(second_order=need_second) as tape:
            with ad.no_grad():
                fake = gen.forward(z_d).image
            d_real = disc.forward(real)
            d_fake = disc.forward(fake)
            if loss.kind == "nonsat_r1":
                base = ad.add(ad.mean_all(ad.softplus(ad.mul_scalar(d_real, -1.0))),
                              ad.mean_all(ad.softplus(d_fake)))
                if loss.gamma > 0:
                    penalty = r1_penalty_mean(tape, d_real, real)
                    d_total = ad.add(base, ad.mul_scalar(penalty, loss.gamma / 2.0))
                    r1_value = penalty.item()
                else:
                    d_total, r1_value = base, 0.0
            else:
                d_total, r1_value = d_loss_classic(d_real, d_fake), 0.0
        d_value = d_total.item()
        _check_finite(step, "d_loss", d_value)
        _check_finite(step, "r1", r1_value)
        d_grads = tape.backward(d_total, wrt=d_tensors)
        d_gnorm = _global_norm(d_grads, d_tensors)
        _check_finite(step, "d_grad_norm", d_gnorm)
        opt_d.step(d_grads)

        with Tape() as tape:
            fake_out = gen.forward(z_g)
            d_on_fake = disc.forward(fake_out.image)
            if loss.kind == "nonsat_r1":
                g_total = g_loss_nonsat(d_on_fake)
            else:
                g_total = g_loss_classic(d_on_fake)
        g_value = g_total.item()
        _check_finite(step, "g_loss", g_value)
        g_grads = tape.backward(g_total, wrt=g_tensors)
        g_gnorm = _global_norm(g_grads, g_tensors)
        _check_finite(step, "g_grad_norm", g_gnorm)
        opt_g.step(g_grads)

        for name, t in gen.named_params():
            e = ema[name]
            e *= ema_decay
            e += (1.0 - ema_decay) * t.data

        history.steps.append(StepStats(step=step, d_loss=d_value, g_loss=g_value,
                                       r1=r1_value, g_grad_norm=g_gnorm,
                                       d_grad_norm=d_gnorm))
    return TrainResult(history=history, generator=gen, discriminator=disc,
                       ema_params=ema, config=config, loss=loss)
