"""StyleGAN2-flavoured synthesis path at desk scale.

Mapping network, style-modulated convolutions with weight demodulation,
toRGB projections, and the generator block variants: the image-skip
baseline, the image-squeeze block, and its three ablations (no feature
blending, toRGB before the squeeze, toRGB after the excitation).

Modulation is folded into the input: conv(x, s*w) == conv(s*x, w), and
demodulation becomes a per-sample, per-output-channel rescale computed
from the style scales and the per-(out,in) kernel energy. This keeps the
whole batch in one convolution while staying mathematically identical to
scaling the weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError

LEAK = 0.2
DEMOD_EPS = 1e-8
CONST_INIT = 0.1


class BlockVariant(Enum):
    SKIP = "skip"
    SQUEEZE = "squeeze"
    SQUEEZE_NO_FBP = "squeeze_no_fbp"
    SQUEEZE_RGB_BEFORE_SQUEEZE = "squeeze_rgb_before_squeeze"
    SQUEEZE_RGB_AFTER_EXCITE = "squeeze_rgb_after_excite"


SQUEEZE_VARIANTS = frozenset(v for v in BlockVariant if v is not BlockVariant.SKIP)


def default_channel_map(resolution: int) -> dict:
    """Standard halving map: min(512, 16384/res) per resolution level."""
    return {res: min(512, 16384 // res)
            for res in _resolution_chain(resolution)}


def _resolution_chain(resolution: int):
    chain = []
    res = 4
    while res <= resolution:
        chain.append(res)
        res *= 2
    return chain


@dataclass
class GeneratorConfig:
    resolution: int = 16
    channel_map: dict = None
    variant: BlockVariant = BlockVariant.SKIP
    r: int = 8
    style_dim: int = 512
    mapping_depth: int = 2
    upsample_mode: str = "nearest"

    def __post_init__(self):
        if self.channel_map is None:
            self.channel_map = default_channel_map(self.resolution)
        self.validate()

    def validate(self):
        res = self.resolution
        if res < 8 or res > 256 or res & (res - 1):
            raise ConfigError(f"resolution must be a power of 2 in [8, 256], got {res}")
        for level in self.resolutions():
            c = self.channel_map.get(level)
            if not isinstance(c, int) or c < 1:
                raise ConfigError(f"channel_map missing/invalid at {level}: {c!r}")
        if self.upsample_mode not in ("nearest", "bilinear"):
            raise ConfigError(f"unknown upsample_mode {self.upsample_mode!r}")
        if self.style_dim < 1 or self.mapping_depth < 1:
            raise ConfigError("style_dim and mapping_depth must be >= 1")
        if self.variant in SQUEEZE_VARIANTS:
            if self.r < 1:
                raise ConfigError(f"squeeze ratio must be >= 1, got {self.r}")
            for level in self.resolutions()[1:]:
                c = self.channel_map[level]
                if c % self.r:
                    raise ConfigError(
                        f"channels {c} at {level}x{level} not divisible by r={self.r}")

    def resolutions(self):
        return _resolution_chain(self.resolution)


# ---------------------------------------------------------------------------
# layers

def _init_normal(rng, shape, fan_in, dtype):
    return Tensor(rng.standard_normal(shape).astype(dtype) / np.sqrt(fan_in).astype(dtype))


class Dense:
    def __init__(self, rng, in_dim, out_dim, dtype, bias_init=0.0):
        self.weight = _init_normal(rng, (in_dim, out_dim), in_dim, dtype)
        self.bias = Tensor(np.full(out_dim, bias_init, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dense(x, self.weight, self.bias)

    def named_params(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


class MappingNetwork:
    """Stack of fully-connected layers with leaky-relu, latent z -> style w."""

    def __init__(self, rng, style_dim, depth, dtype):
        self.style_dim = style_dim
        self.layers = [Dense(rng, style_dim, style_dim, dtype) for _ in range(depth)]

    def __call__(self, z: Tensor) -> Tensor:
        if z.data.ndim != 2 or z.shape[1] != self.style_dim:
            raise ConfigError(f"latent shape {z.shape} != (N, {self.style_dim})")
        w = z
        for layer in self.layers:
            w = ad.leaky_relu(layer(w), LEAK)
        return w

    def named_params(self, prefix):
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(f"{prefix}.{i}")


class ModulatedConv:
    """Convolution whose input channels are scaled by style-derived factors.

    With ``demodulate`` each output channel of the style-scaled kernel is
    renormalised to unit L2 norm (plus eps); toRGB layers skip that step.
    """

    def __init__(self, rng, out_channels, in_channels, kernel, style_dim, dtype,
                 demodulate=True, eps=DEMOD_EPS):
        if kernel not in (1, 3):
            raise ConfigError(f"kernel must be 1 or 3, got {kernel}")
        self.kernel = kernel
        self.pad = kernel // 2
        self.demodulate = demodulate
        self.eps = eps
        self.out_channels = out_channels
        self.in_channels = in_channels
        fan_in = in_channels * kernel * kernel
        self.weight = _init_normal(rng, (out_channels, in_channels, kernel, kernel),
                                   fan_in, dtype)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype))
        self.affine = Dense(rng, style_dim, in_channels, dtype, bias_init=1.0)

    def styles(self, w_latent: Tensor) -> Tensor:
        return self.affine(w_latent)

    def forward(self, x: Tensor, w_latent: Tensor):
        """Returns (output, modulated_input); the latter feeds the
        aggregation-equivalence checks."""
        s = self.styles(w_latent)
        xs = ad.scale_channels(x, s)
        y = ad.conv2d(xs, self.weight, None, pad=self.pad)
        if self.demodulate:
            energy = ad.reduce_sum(ad.square(self.weight), (2, 3))     # (O, I)
            v = ad.matmul(ad.square(s), ad.transpose2d(energy))        # (N, O)
            d = ad.pow_const(ad.add_scalar(v, self.eps), -0.5)
            y = ad.scale_channels(y, d)
        y = ad.add_channel_bias(y, self.bias)
        return y, xs

    __call__ = forward

    def effective_weight(self, w_vec) -> np.ndarray:
        """Style-modulated (and optionally demodulated) kernel for one style.

        Weight-space form used by verification; the batched forward path
        scales the input instead, which is the same linear map.
        """
        w_vec = np.asarray(w_vec, dtype=self.weight.data.dtype).reshape(1, -1)
        s = (w_vec @ self.affine.weight.data + self.affine.bias.data)[0]
        if not np.isfinite(s).all():
            raise NumericError("non-finite style scales")
        w = self.weight.data * s[None, :, None, None]
        if self.demodulate:
            div = np.sqrt((w * w).sum(axis=(1, 2, 3), keepdims=True) + self.eps)
            w = w / div
        return w

    def named_params(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias
        yield from self.affine.named_params(f"{prefix}.affine")


def modulate_demodulate(conv: ModulatedConv, w_vec) -> np.ndarray:
    """Effective convolution weight for a single style vector."""
    return conv.effective_weight(w_vec)


class ToRGB:
    """1x1 modulated projection to 3 channels: modulation only, no activation."""

    def __init__(self, rng, in_channels, style_dim, dtype):
        self.conv = ModulatedConv(rng, 3, in_channels, 1, style_dim, dtype,
                                  demodulate=False)

    def __call__(self, f: Tensor, w_latent: Tensor):
        return to_rgb(f, w_latent, self.conv)

    def named_params(self, prefix):
        yield from self.conv.named_params(prefix)


def to_rgb(f: Tensor, w_latent: Tensor, layer: ModulatedConv):
    """Project a feature map to RGB; returns (image, modulated feature)."""
    if layer.kernel != 1:
        raise ConfigError("toRGB layer must use a 1x1 kernel")
    if layer.demodulate:
        raise ConfigError("toRGB layer must not demodulate")
    if layer.out_channels != 3:
        raise ConfigError("toRGB layer must emit 3 channels")
    return layer.forward(f, w_latent)


# ---------------------------------------------------------------------------
# generator blocks

@dataclass
class BlockOutput:
    f_out: Tensor
    image: Tensor
    rgb_feature: Tensor          # modulated feature that entered toRGB
    f_i: Tensor = None
    f_s: Tensor = None
    f_e: Tensor = None


class InputBlock:
    """Learned 4x4 constant, one 3x3 modulated conv, and a toRGB."""

    def __init__(self, rng, channels, style_dim, dtype):
        self.channels = channels
        self.const = Tensor(np.full((channels, 4, 4), CONST_INIT, dtype=dtype))
        self.conv = ModulatedConv(rng, channels, channels, 3, style_dim, dtype)
        self.torgb = ToRGB(rng, channels, style_dim, dtype)

    def forward(self, w_latent: Tensor) -> BlockOutput:
        n = w_latent.shape[0]
        x = ad.broadcast_from(self.const, (n,) + tuple(self.const.shape), (0,))
        y, _ = self.conv(x, w_latent)
        f = ad.leaky_relu(y, LEAK)
        image, fmod = self.torgb(f, w_latent)
        return BlockOutput(f_out=f, image=image, rgb_feature=fmod)

    def named_params(self, prefix):
        yield f"{prefix}.const", self.const
        yield from self.conv.named_params(f"{prefix}.conv")
        yield from self.torgb.named_params(f"{prefix}.torgb")


class SkipBlock:
    """Upsample, two 3x3 modulated convs with leaky-relu, toRGB off the top."""

    def __init__(self, rng, in_channels, out_channels, style_dim, dtype):
        self.conv0 = ModulatedConv(rng, out_channels, in_channels, 3, style_dim, dtype)
        self.conv1 = ModulatedConv(rng, out_channels, out_channels, 3, style_dim, dtype)
        self.torgb = ToRGB(rng, out_channels, style_dim, dtype)

    def forward(self, f_prev: Tensor, w_latent: Tensor, upsample_mode: str) -> BlockOutput:
        x = ad.upsample2x(f_prev, upsample_mode)
        f = ad.leaky_relu(self.conv0(x, w_latent)[0], LEAK)
        f = ad.leaky_relu(self.conv1(f, w_latent)[0], LEAK)
        image, fmod = self.torgb(f, w_latent)
        return BlockOutput(f_out=f, image=image, rgb_feature=fmod)

    def named_params(self, prefix):
        yield from self.conv0.named_params(f"{prefix}.conv0")
        yield from self.conv1.named_params(f"{prefix}.conv1")
        yield from self.torgb.named_params(f"{prefix}.torgb")


class SqueezeBlock:
    """Image squeeze connection block and its ablation variants.

    f_i: 3x3 conv over the upsampled input (c channels)
    f_s: squeeze 3x3 conv down to c/r channels
    f_e: excitation 3x3 conv back to c channels
    f_o: 1x1 blend conv over concat(f_i, f_e), or f_e without blending
    toRGB reads f_s (default), f_i (rgb-before), or f_e (rgb-after).
    """

    def __init__(self, rng, in_channels, out_channels, style_dim, dtype,
                 r=8, variant=BlockVariant.SQUEEZE):
        if variant not in SQUEEZE_VARIANTS:
            raise ConfigError(f"{variant} is not a squeeze variant")
        if out_channels % r:
            raise ConfigError(f"channels {out_channels} not divisible by r={r}")
        self.variant = variant
        self.r = r
        squeezed = out_channels // r
        self.conv_in = ModulatedConv(rng, out_channels, in_channels, 3, style_dim, dtype)
        self.conv_squeeze = ModulatedConv(rng, squeezed, out_channels, 3, style_dim, dtype)
        self.conv_excite = ModulatedConv(rng, out_channels, squeezed, 3, style_dim, dtype)
        if variant is BlockVariant.SQUEEZE_NO_FBP:
            self.conv_blend = None
        else:
            self.conv_blend = ModulatedConv(rng, out_channels, 2 * out_channels, 1,
                                            style_dim, dtype)
        if variant is BlockVariant.SQUEEZE_RGB_BEFORE_SQUEEZE:
            rgb_in = out_channels
        elif variant is BlockVariant.SQUEEZE_RGB_AFTER_EXCITE:
            rgb_in = out_channels
        else:
            rgb_in = squeezed
        self.torgb = ToRGB(rng, rgb_in, style_dim, dtype)

    def forward(self, f_prev: Tensor, w_latent: Tensor, upsample_mode: str) -> BlockOutput:
        x = ad.upsample2x(f_prev, upsample_mode)
        f_i = ad.leaky_relu(self.conv_in(x, w_latent)[0], LEAK)
        f_s = ad.leaky_relu(self.conv_squeeze(f_i, w_latent)[0], LEAK)
        f_e = ad.leaky_relu(self.conv_excite(f_s, w_latent)[0], LEAK)
        if self.conv_blend is None:
            f_o = f_e
        else:
            blended, _ = self.conv_blend(ad.concat_channels(f_i, f_e), w_latent)
            f_o = ad.leaky_relu(blended, LEAK)
        if self.variant is BlockVariant.SQUEEZE_RGB_BEFORE_SQUEEZE:
            rgb_src = f_i
        elif self.variant is BlockVariant.SQUEEZE_RGB_AFTER_EXCITE:
            rgb_src = f_e
        else:
            rgb_src = f_s
        image, fmod = self.torgb(rgb_src, w_latent)
        return BlockOutput(f_out=f_o, image=image, rgb_feature=fmod,
                           f_i=f_i, f_s=f_s, f_e=f_e)

    def named_params(self, prefix):
        yield from self.conv_in.named_params(f"{prefix}.conv_in")
        yield from self.conv_squeeze.named_params(f"{prefix}.conv_squeeze")
        yield from self.conv_excite.named_params(f"{prefix}.conv_excite")
        if self.conv_blend is not None:
            yield from self.conv_blend.named_params(f"{prefix}.conv_blend")
        yield from self.torgb.named_params(f"{prefix}.torgb")


@dataclass
class SynthesisResult:
    image: Tensor
    images: list                 # per-resolution toRGB outputs, coarse to fine
    rgb_features: list           # modulated features entering each toRGB
    resolutions: list = field(default_factory=list)


class Generator:
    """Full synthesis network for one block variant."""

    def __init__(self, config: GeneratorConfig, dtype=np.float32, seed: int = 0):
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng(seed)
        sd = config.style_dim
        self.mapping = MappingNetwork(rng, sd, config.mapping_depth, self.dtype)
        chain = config.resolutions()
        self.input_block = InputBlock(rng, config.channel_map[4], sd, self.dtype)
        self.blocks = {}
        for prev, res in zip(chain, chain[1:]):
            cin, cout = config.channel_map[prev], config.channel_map[res]
            if config.variant is BlockVariant.SKIP:
                self.blocks[res] = SkipBlock(rng, cin, cout, sd, self.dtype)
            else:
                self.blocks[res] = SqueezeBlock(rng, cin, cout, sd, self.dtype,
                                                r=config.r, variant=config.variant)

    def forward(self, z: Tensor) -> SynthesisResult:
        if self.config.resolution > 64:
            raise ConfigError("forward passes are desk-scale: resolution <= 64")
        if z.data.dtype.type is not self.dtype:
            raise ConfigError(f"latent dtype {z.data.dtype} != model dtype "
                              f"{np.dtype(self.dtype)}")
        mode = self.config.upsample_mode
        w = self.mapping(z)
        out = self.input_block.forward(w)
        image = out.image
        images, feats = [out.image], [out.rgb_feature]
        f = out.f_out
        for res in self.config.resolutions()[1:]:
            block_out = self.blocks[res].forward(f, w, mode)
            f = block_out.f_out
            image = ad.add(ad.upsample2x(image, mode), block_out.image)
            images.append(block_out.image)
            feats.append(block_out.rgb_feature)
        return SynthesisResult(image=image, images=images, rgb_features=feats,
                               resolutions=list(self.config.resolutions()))

    __call__ = forward

    def named_params(self):
        yield from self.mapping.named_params("mapping")
        yield from self.input_block.named_params("b4")
        for res in self.config.resolutions()[1:]:
            yield from self.blocks[res].named_params(f"b{res}")

    def param_dict(self) -> dict:
        return dict(self.named_params())

    def load_param_dict(self, arrays: dict):
        params = self.param_dict()
        if set(arrays) != set(params):
            missing = set(params) - set(arrays)
            extra = set(arrays) - set(params)
            raise ConfigError(f"param name mismatch: missing={sorted(missing)[:4]} "
                              f"extra={sorted(extra)[:4]}")
        for name, t in params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(t.shape):
                raise ConfigError(f"shape mismatch for {name}: "
                                  f"{arr.shape} vs {t.shape}")
            t.data[...] = arr.astype(t.data.dtype, copy=False)
