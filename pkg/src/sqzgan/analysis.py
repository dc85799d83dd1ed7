"""Skip-connection algebra checks and parameter accounting.

Two routes to the final image of a skip generator:

  direct:  progressively upsample and add the per-resolution RGB images
  concat:  lift every modulated pre-RGB feature to the final resolution,
           concatenate along channels, and apply one combined 1x1
           projection built by stacking the toRGB kernels

The generator's image skip connection is claimed to be exactly the concat
route in disguise; `verify_equivalence` measures the gap over random
latents. Accounting enumerates actual weight arrays and sets the numbers
beside the closed-form per-block predictions (18c^2 for the skip block,
(10+18/r)c^2 for the squeeze block) without reconciling the two: the
enumerated squeeze count is 11c^2 + 18c^2/r, one c^2 above the closed
form, and both are always reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tensor, _bilinear_up
from .errors import ConfigError
from .synthesis import (SQUEEZE_VARIANTS, BlockVariant, Generator,
                        GeneratorConfig, SkipBlock, SqueezeBlock,
                        default_channel_map)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _up(a: np.ndarray, mode: str) -> np.ndarray:
    if mode == "nearest":
        return np.repeat(np.repeat(a, 2, axis=2), 2, axis=3)
    if mode == "bilinear":
        return _bilinear_up(a)
    raise ConfigError(f"unknown upsample mode {mode!r}")


# ---------------------------------------------------------------------------
# the two aggregation routes

def aggregate_direct(images, mode: str = "nearest") -> np.ndarray:
    """Upsample-and-add the intermediate images, coarse to fine."""
    if not images:
        raise ConfigError("no intermediate images")
    imgs = [_as_array(i) for i in images]
    out = imgs[0]
    for nxt in imgs[1:]:
        if nxt.shape[2] != 2 * out.shape[2] or nxt.shape[3] != 2 * out.shape[3]:
            raise ConfigError(f"resolution chain broken: {out.shape} -> {nxt.shape}")
        out = _up(out, mode) + nxt
    return out


def build_aggregated_projection(features, rgb_weights, mode: str = "nearest"):
    """Combined feature f_a and combined 1x1 projection W_a.

    Each modulated feature is lifted to the final resolution by repeated
    upsampling, then concatenated along channels; the toRGB kernels are
    stacked along their input-channel axis in the same order, so channel
    block j of W_a projects channel block j of f_a.
    """
    feats = [_as_array(f) for f in features]
    ws = [_as_array(w) for w in rgb_weights]
    if len(feats) != len(ws):
        raise ConfigError("feature/weight count mismatch")
    for f, w in zip(feats, ws):
        if w.shape[0] != 3 or w.shape[2:] != (1, 1) or w.shape[1] != f.shape[1]:
            raise ConfigError(f"weight {w.shape} does not project feature {f.shape}")
    final_hw = feats[-1].shape[2]
    lifted = []
    for f in feats:
        while f.shape[2] < final_hw:
            f = _up(f, mode)
        if f.shape[2] != final_hw:
            raise ConfigError("feature resolutions are not a doubling chain")
        lifted.append(f)
    return np.concatenate(lifted, axis=1), np.concatenate(ws, axis=1)


def aggregate_concat(features, rgb_weights, mode: str = "nearest",
                     biases=None) -> np.ndarray:
    """One combined 1x1 projection of the lifted, concatenated features.

    ``features[j]`` must be the modulated feature that entered the j-th
    toRGB and ``rgb_weights[j]`` that toRGB's raw (3, c_j, 1, 1) kernel.
    """
    f_a, w_a = build_aggregated_projection(features, rgb_weights, mode)
    out = kernels.conv2d_forward(f_a, w_a, 0)
    if biases is not None:
        total = np.zeros(3, dtype=out.dtype)
        for b in biases:
            total = total + _as_array(b)
        out = out + total[None, :, None, None]
    return out


def concat_channel_total(channel_map: dict) -> int:
    """Channel count of the combined feature f_a for a channel map."""
    return int(sum(channel_map[res] for res in sorted(channel_map)))


# ---------------------------------------------------------------------------
# equivalence verification

@dataclass
class EquivalenceReport:
    resolution: int
    upsample_mode: str
    precision: str
    trials: int
    tol: float
    max_abs_dev: float
    passed: bool

    def lines(self):
        return [
            f"equivalence check: skip generator at {self.resolution}x{self.resolution}, "
            f"{self.upsample_mode} upsampling, {self.precision}",
            f"trials={self.trials} tol={self.tol:g} max_abs_dev={self.max_abs_dev:.3e} "
            f"-> {'PASS' if self.passed else 'FAIL'}",
        ]

    def kv_lines(self):
        return [
            f"resolution={self.resolution}",
            f"upsample={self.upsample_mode}",
            f"precision={self.precision}",
            f"trials={self.trials}",
            f"tol={self.tol:.6g}",
            f"max_abs_dev={self.max_abs_dev:.17g}",
            f"passed={int(self.passed)}",
        ]


def _torgb_kernels(gen: Generator):
    layers = [gen.input_block.torgb.conv]
    layers += [gen.blocks[res].torgb.conv for res in gen.config.resolutions()[1:]]
    return ([l.weight.data for l in layers], [l.bias.data for l in layers])


def verify_equivalence(config: GeneratorConfig, trials: int, tol: float = None,
                       dtype=np.float64, seed: int = 0,
                       batch: int = 25) -> EquivalenceReport:
    """Compare the two aggregation routes over random latents."""
    if config.variant is not BlockVariant.SKIP:
        raise ConfigError("the equivalence theorem is about the SkipConnection variant")
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    dtype = np.dtype(dtype).type
    if tol is None:
        tol = 1e-12 if dtype is np.float64 else 1e-4
    gen = Generator(config, dtype=dtype, seed=seed)
    rng = np.random.default_rng(seed + 1)
    weights, biases = _torgb_kernels(gen)
    max_dev = 0.0
    done = 0
    while done < trials:
        n = min(batch, trials - done)
        z = Tensor(rng.standard_normal((n, config.style_dim)).astype(dtype))
        res = gen.forward(z)
        direct = aggregate_direct(res.images, config.upsample_mode)
        concat = aggregate_concat(res.rgb_features, weights,
                                  config.upsample_mode, biases)
        max_dev = max(max_dev, float(np.abs(direct - concat).max()))
        done += n
    return EquivalenceReport(
        resolution=config.resolution, upsample_mode=config.upsample_mode,
        precision=np.dtype(dtype).name.replace("float", "f"),
        trials=trials, tol=float(tol), max_abs_dev=max_dev,
        passed=max_dev <= tol)


# ---------------------------------------------------------------------------
# parameter accounting

@dataclass
class BlockParamCount:
    variant: BlockVariant
    c: int
    r: int
    kernels: dict                      # conv name -> scalar count (toRGB excluded)
    enumerated: int                    # sum of the above
    enumerated_formula: int            # closed form of the enumeration
    predicted_formula: float = None    # published closed-form prediction
    formula_gap: float = None          # enumerated - predicted_formula

    def lines(self):
        out = [f"block variant={self.variant.value} c={self.c} r={self.r}"]
        for name, count in self.kernels.items():
            out.append(f"  {name}: {count}")
        out.append(f"  enumerated kernel scalars: {self.enumerated} "
                   f"(= {self.enumerated_formula})")
        if self.predicted_formula is not None:
            line = (f"  closed-form prediction:    {self.predicted_formula:.0f} "
                    f"(gap {self.formula_gap:+.0f})")
            if self.variant in SQUEEZE_VARIANTS:
                line += "  [enumeration counts the 2c^2 blend; both reported]"
            out.append(line)
        return out


def count_block_params(variant: BlockVariant, c: int, r: int = 8) -> BlockParamCount:
    """Enumerate conv-kernel scalars of one block with c in/out channels.

    Biases, style affines, and the toRGB projection are excluded here (they
    are reported by the generator-level count); this is the quantity the
    per-block closed forms talk about.
    """
    rng = np.random.default_rng(0)
    if variant is BlockVariant.SKIP:
        block = SkipBlock(rng, c, c, 8, np.float32)
        convs = {"conv0": block.conv0, "conv1": block.conv1}
        formula = 18 * c * c
        predicted = float(18 * c * c)
    else:
        block = SqueezeBlock(rng, c, c, 8, np.float32, r=r, variant=variant)
        convs = {"conv_in": block.conv_in, "conv_squeeze": block.conv_squeeze,
                 "conv_excite": block.conv_excite}
        if block.conv_blend is not None:
            convs["conv_blend"] = block.conv_blend
            formula = 11 * c * c + 18 * c * c // r
        else:
            formula = 9 * c * c + 18 * c * c // r
        predicted = ((10 + 18 / r) * c * c
                     if variant is BlockVariant.SQUEEZE else None)
    kernels_ = {name: int(conv.weight.size) for name, conv in convs.items()}
    enumerated = sum(kernels_.values())
    if enumerated != formula:
        raise AssertionError(f"enumeration {enumerated} != closed form {formula}")
    gap = None if predicted is None else enumerated - predicted
    return BlockParamCount(variant=variant, c=c, r=r, kernels=kernels_,
                           enumerated=enumerated, enumerated_formula=formula,
                           predicted_formula=predicted, formula_gap=gap)


@dataclass
class GeneratorParamReport:
    variant: BlockVariant
    resolution: int
    r: int
    totals: dict                       # category -> scalar count
    block_kernels: dict                # "b8" ... -> non-toRGB conv kernel scalars
    grand_total: int = 0
    kernel_total: int = 0

    def lines(self):
        out = [f"generator parameters: variant={self.variant.value} "
               f"resolution={self.resolution} r={self.r}"]
        for cat in sorted(self.totals):
            out.append(f"  {cat}: {self.totals[cat]}")
        out.append(f"  total: {self.grand_total} ({self.grand_total / 1e6:.2f}M)")
        out.append(f"  non-toRGB conv kernel scalars: {self.kernel_total}")
        for name in sorted(self.block_kernels, key=lambda s: int(s[1:])):
            out.append(f"    {name}: {self.block_kernels[name]}")
        return out

    def kv_lines(self):
        out = [f"variant={self.variant.value}", f"resolution={self.resolution}",
               f"r={self.r}", f"total={self.grand_total}",
               f"kernel_total={self.kernel_total}"]
        out += [f"total_{cat}={n}" for cat, n in sorted(self.totals.items())]
        out += [f"kernels_{name}={n}" for name, n in sorted(self.block_kernels.items())]
        return out


_CATEGORIES = ("mapping", "const", "style_affine", "torgb_kernels",
               "torgb_biases", "conv_kernels", "conv_biases")


def _categorize(name: str) -> str:
    if name.startswith("mapping."):
        return "mapping"
    if name.endswith(".const"):
        return "const"
    if ".affine." in name:
        return "style_affine"
    if ".torgb." in name:
        return "torgb_kernels" if name.endswith(".weight") else "torgb_biases"
    return "conv_kernels" if name.endswith(".weight") else "conv_biases"


def count_generator_params(config: GeneratorConfig) -> GeneratorParamReport:
    """Exact per-category enumeration over an instantiated generator."""
    gen = Generator(config, dtype=np.float32, seed=0)
    totals = {cat: 0 for cat in _CATEGORIES}
    block_kernels = {}
    for name, t in gen.named_params():
        cat = _categorize(name)
        totals[cat] += int(t.size)
        if cat == "conv_kernels" and not name.startswith("mapping."):
            block = name.split(".", 1)[0]
            block_kernels[block] = block_kernels.get(block, 0) + int(t.size)
    report = GeneratorParamReport(
        variant=config.variant, resolution=config.resolution, r=config.r,
        totals=totals, block_kernels=block_kernels)
    report.grand_total = sum(totals.values())
    report.kernel_total = totals["conv_kernels"]
    return report


def reduction_percent(baseline_total: int, other_total: int) -> float:
    """Relative parameter saving of `other` vs `baseline`, in percent."""
    return 100.0 * (1.0 - other_total / baseline_total)


def formula_thresholds() -> dict:
    """Break-even squeeze ratios of both per-block counts vs 18c^2.

    The closed form (10+18/r)c^2 undercuts 18c^2 for r > 2.25; the
    enumerated form 11c^2+18c^2/r needs r > 18/7.
    """
    return {"closed_form": 2.25, "enumerated": 18.0 / 7.0}


def nominal_256_config(variant=BlockVariant.SKIP, r: int = 8) -> GeneratorConfig:
    """The 256-resolution accounting configuration (mapping depth 8)."""
    return GeneratorConfig(resolution=256, channel_map=default_channel_map(256),
                           variant=variant, r=r, style_dim=512, mapping_depth=8)
