"""Synthesis machinery: mapping, modulation, toRGB, blocks, full generator."""

import numpy as np
import pytest

from conftest import tiny_config
from sqzgan import autodiff as ad
from sqzgan.autodiff import Tensor
from sqzgan.errors import ConfigError
from sqzgan.synthesis import (BlockVariant, Generator, GeneratorConfig,
                              MappingNetwork, ModulatedConv, SkipBlock,
                              SqueezeBlock, ToRGB, modulate_demodulate, to_rgb)


class TestMappingNetwork:
    def test_depth1_identity_passes_nonnegative_input(self, rng):
        net = MappingNetwork(rng, 4, 1, np.float64)
        net.layers[0].weight.data[...] = np.eye(4)
        net.layers[0].bias.data[...] = 0.0
        z = Tensor(np.abs(rng.standard_normal((3, 4))))
        assert (net(z).data == z.data).all()

    def test_same_latent_same_style(self, rng):
        net = MappingNetwork(rng, 8, 3, np.float64)
        z = Tensor(rng.standard_normal((2, 8)))
        assert (net(z).data == net(z).data).all()

    def test_depth2_matches_matmul_oracle(self, rng):
        net = MappingNetwork(rng, 6, 2, np.float64)
        z = rng.standard_normal((4, 6))
        expect = z
        for layer in net.layers:
            expect = expect @ layer.weight.data + layer.bias.data
            expect = np.where(expect >= 0, expect, 0.2 * expect)
        assert np.allclose(net(Tensor(z)).data, expect, rtol=1e-14, atol=0)

    def test_dim_mismatch(self, rng):
        net = MappingNetwork(rng, 8, 1, np.float64)
        with pytest.raises(ConfigError):
            net(Tensor(rng.standard_normal((2, 7))))


class TestModulateDemodulate:
    def make(self, rng, demod=True, out_c=4, in_c=3, k=3, style=6):
        return ModulatedConv(rng, out_c, in_c, k, style, np.float64,
                             demodulate=demod)

    def test_unit_styles_without_demod_keep_weight(self, rng):
        conv = self.make(rng, demod=False)
        conv.affine.weight.data[...] = 0.0       # styles collapse to the bias
        conv.affine.bias.data[...] = 1.0
        w_eff = modulate_demodulate(conv, np.zeros(6))
        assert (w_eff == conv.weight.data).all()

    def test_demodulated_rows_have_unit_norm(self, rng):
        conv = self.make(rng)
        w_eff = modulate_demodulate(conv, rng.standard_normal(6))
        norms = (w_eff ** 2).sum(axis=(1, 2, 3))
        assert np.abs(norms - 1.0).max() <= 1e-6

    @pytest.mark.parametrize("alpha", [0.1, 1.0, 7.0])
    def test_style_rescaling_invariance(self, rng, alpha):
        conv = self.make(rng)
        w_vec = rng.standard_normal(6)
        base = modulate_demodulate(conv, w_vec)
        # scale the produced style scales by alpha via the affine layer
        conv.affine.weight.data[...] *= alpha
        conv.affine.bias.data[...] *= alpha
        scaled = modulate_demodulate(conv, w_vec)
        assert np.abs(scaled - base).max() <= 1e-6

    def test_batched_path_equals_weight_space_path(self, rng):
        conv = self.make(rng)
        x = rng.standard_normal((2, 3, 5, 5))
        w_lat = rng.standard_normal((2, 6))
        y, _ = conv.forward(Tensor(x), Tensor(w_lat))
        for n in range(2):
            w_eff = conv.effective_weight(w_lat[n])
            ref = ad.conv2d(Tensor(x[n:n + 1]), Tensor(w_eff),
                            Tensor(conv.bias.data), pad=1)
            assert np.abs(y.data[n] - ref.data[0]).max() <= 1e-12

    def test_nonfinite_styles_rejected(self, rng):
        conv = self.make(rng)
        conv.affine.bias.data[0] = np.inf
        with pytest.raises(Exception):
            modulate_demodulate(conv, np.zeros(6))


class TestToRGB:
    def test_zero_feature_gives_bias(self, rng):
        layer = ToRGB(rng, 4, 6, np.float64)
        layer.conv.bias.data[...] = [0.5, -0.25, 1.0]
        f = Tensor(np.zeros((2, 4, 3, 3)))
        img, _ = layer(f, Tensor(rng.standard_normal((2, 6))))
        assert np.allclose(img.data, np.broadcast_to(
            np.array([0.5, -0.25, 1.0])[None, :, None, None], (2, 3, 3, 3)),
            rtol=0, atol=0)

    def test_linearity_with_zero_bias(self, rng):
        layer = ToRGB(rng, 4, 6, np.float64)
        w_lat = Tensor(rng.standard_normal((1, 6)))
        f1 = rng.standard_normal((1, 4, 3, 3))
        f2 = rng.standard_normal((1, 4, 3, 3))
        a, b = 2.5, -1.25
        lhs, _ = layer(Tensor(a * f1 + b * f2), w_lat)
        r1, _ = layer(Tensor(f1), w_lat)
        r2, _ = layer(Tensor(f2), w_lat)
        assert np.abs(lhs.data - (a * r1.data + b * r2.data)).max() <= 1e-12

    def test_matches_per_pixel_matmul_oracle(self, rng):
        layer = ToRGB(rng, 4, 6, np.float64)
        f = rng.standard_normal((1, 4, 2, 2))
        w_lat = rng.standard_normal((1, 6))
        img, fmod = layer(Tensor(f), Tensor(w_lat))
        w_mat = layer.conv.weight.data[:, :, 0, 0]        # (3, 4)
        for y in range(2):
            for x in range(2):
                expect = w_mat @ fmod.data[0, :, y, x]
                assert np.allclose(img.data[0, :, y, x], expect,
                                   rtol=0, atol=1e-13)

    def test_layer_contract_enforced(self, rng):
        bad_kernel = ModulatedConv(rng, 3, 4, 3, 6, np.float64, demodulate=False)
        with pytest.raises(ConfigError):
            to_rgb(Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.zeros((1, 6))),
                   bad_kernel)
        demod = ModulatedConv(rng, 3, 4, 1, 6, np.float64, demodulate=True)
        with pytest.raises(ConfigError):
            to_rgb(Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.zeros((1, 6))),
                   demod)
        wrong_out = ModulatedConv(rng, 4, 4, 1, 6, np.float64, demodulate=False)
        with pytest.raises(ConfigError):
            to_rgb(Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.zeros((1, 6))),
                   wrong_out)


class TestSkipBlock:
    def test_shape_contract(self, rng):
        block = SkipBlock(rng, 4, 4, 16, np.float64)
        out = block.forward(Tensor(rng.standard_normal((1, 4, 4, 4))),
                            Tensor(rng.standard_normal((1, 16))), "nearest")
        assert out.f_out.shape == (1, 4, 8, 8)
        assert out.image.shape == (1, 3, 8, 8)

    def test_zero_weights_zero_image(self, rng):
        block = SkipBlock(rng, 4, 4, 16, np.float64)
        block.torgb.conv.weight.data[...] = 0.0
        block.torgb.conv.bias.data[...] = 0.0
        out = block.forward(Tensor(rng.standard_normal((1, 4, 4, 4))),
                            Tensor(rng.standard_normal((1, 16))), "nearest")
        assert (out.image.data == 0).all()


class TestSqueezeBlock:
    def test_shape_contract_c8_r4(self, rng):
        block = SqueezeBlock(rng, 8, 8, 16, np.float64, r=4)
        out = block.forward(Tensor(rng.standard_normal((1, 8, 4, 4))),
                            Tensor(rng.standard_normal((1, 16))), "nearest")
        assert out.f_s.shape == (1, 2, 8, 8)
        assert out.f_e.shape == (1, 8, 8, 8)
        assert out.f_out.shape == (1, 8, 8, 8)
        assert out.image.shape == (1, 3, 8, 8)

    def test_r1_degenerate_keeps_full_channels(self, rng):
        block = SqueezeBlock(rng, 8, 8, 16, np.float64, r=1)
        out = block.forward(Tensor(rng.standard_normal((1, 8, 4, 4))),
                            Tensor(rng.standard_normal((1, 16))), "nearest")
        assert out.f_s.shape == (1, 8, 8, 8)

    def test_indivisible_ratio_rejected(self, rng):
        with pytest.raises(ConfigError):
            SqueezeBlock(rng, 8, 8, 16, np.float64, r=3)

    def test_blend_recomposition(self, rng):
        block = SqueezeBlock(rng, 8, 8, 16, np.float64, r=4)
        w_lat = Tensor(rng.standard_normal((2, 16)))
        out = block.forward(Tensor(rng.standard_normal((2, 8, 4, 4))),
                            w_lat, "nearest")
        redone, _ = block.conv_blend(ad.concat_channels(out.f_i, out.f_e), w_lat)
        assert (out.f_out.data == ad.leaky_relu(redone, 0.2).data).all()

    def test_no_fbp_output_is_excitation(self, rng):
        block = SqueezeBlock(rng, 8, 8, 16, np.float64, r=4,
                             variant=BlockVariant.SQUEEZE_NO_FBP)
        assert block.conv_blend is None
        out = block.forward(Tensor(rng.standard_normal((1, 8, 4, 4))),
                            Tensor(rng.standard_normal((1, 16))), "nearest")
        assert out.f_out is out.f_e

    def test_rgb_source_per_variant(self, rng):
        f_prev = Tensor(rng.standard_normal((1, 8, 4, 4)))
        w_lat = Tensor(rng.standard_normal((1, 16)))
        for variant, picker in (
            (BlockVariant.SQUEEZE, lambda o: o.f_s),
            (BlockVariant.SQUEEZE_RGB_BEFORE_SQUEEZE, lambda o: o.f_i),
            (BlockVariant.SQUEEZE_RGB_AFTER_EXCITE, lambda o: o.f_e),
        ):
            block = SqueezeBlock(rng, 8, 8, 16, np.float64, r=4, variant=variant)
            out = block.forward(f_prev, w_lat, "nearest")
            img, _ = block.torgb(picker(out), w_lat)
            assert (img.data == out.image.data).all()

    def test_blend_kernel_can_represent_passthrough(self, rng):
        # raw 1x1 blend over concat(f_i, f_e): selecting the f_i half as the
        # identity and zeroing the f_e half reproduces f_i exactly
        c = 6
        blend = ModulatedConv(rng, c, 2 * c, 1, 16, np.float64, demodulate=False)
        blend.affine.weight.data[...] = 0.0
        blend.affine.bias.data[...] = 1.0
        blend.bias.data[...] = 0.0
        kernel = np.zeros((c, 2 * c, 1, 1))
        for i in range(c):
            kernel[i, i, 0, 0] = 1.0
        blend.weight.data[...] = kernel
        f_i = Tensor(rng.standard_normal((2, c, 4, 4)))
        f_e = Tensor(rng.standard_normal((2, c, 4, 4)))
        out, _ = blend(ad.concat_channels(f_i, f_e), Tensor(np.zeros((2, 16))))
        assert (out.data == f_i.data).all()


class TestGenerator:
    def test_zero_torgb_gives_zero_image(self, rng):
        gen = Generator(tiny_config(8), dtype=np.float64, seed=0)
        for layer in (gen.input_block.torgb, gen.blocks[8].torgb):
            layer.conv.weight.data[...] = 0.0
            layer.conv.bias.data[...] = 0.0
        z = Tensor(rng.standard_normal((2, 16)))
        assert (gen.forward(z).image.data == 0).all()

    def test_two_level_output_is_up_i1_plus_i2(self, rng):
        gen = Generator(tiny_config(8), dtype=np.float64, seed=1)
        res = gen.forward(Tensor(rng.standard_normal((3, 16))))
        i1, i2 = res.images
        assert (res.image.data ==
                (ad.upsample2x(i1, "nearest").data + i2.data)).all()

    def test_progressive_accumulation_matches_explicit_sum(self, rng):
        gen = Generator(tiny_config(32), dtype=np.float64, seed=2)
        res = gen.forward(Tensor(rng.standard_normal((2, 16))))
        assert len(res.images) == 4
        total = np.zeros_like(res.image.data)
        for j, img in enumerate(res.images):
            lifted = img.data
            for _ in range(len(res.images) - 1 - j):
                lifted = np.repeat(np.repeat(lifted, 2, axis=2), 2, axis=3)
            total += lifted
        assert np.abs(res.image.data - total).max() <= 1e-12

    @pytest.mark.parametrize("variant", list(BlockVariant))
    def test_all_variants_finite_over_1000_draws(self, variant):
        gen = Generator(tiny_config(8, variant=variant), dtype=np.float64, seed=3)
        z = Tensor(np.random.default_rng(42).standard_normal((1000, 16)))
        res = gen.forward(z)
        assert np.isfinite(res.image.data).all()

    def test_forward_dtype_checked(self, rng):
        gen = Generator(tiny_config(8), dtype=np.float32, seed=0)
        with pytest.raises(ConfigError):
            gen.forward(Tensor(rng.standard_normal((1, 16))))

    def test_param_roundtrip(self, rng):
        gen = Generator(tiny_config(8), dtype=np.float32, seed=0)
        arrays = {k: v.data.copy() for k, v in gen.named_params()}
        gen2 = Generator(tiny_config(8), dtype=np.float32, seed=9)
        gen2.load_param_dict(arrays)
        z = Tensor(rng.standard_normal((2, 16)).astype(np.float32))
        assert (gen.forward(z).image.data == gen2.forward(z).image.data).all()
        with pytest.raises(ConfigError):
            gen2.load_param_dict({k: v for k, v in list(arrays.items())[:-1]})
        bad = dict(arrays)
        bad["b4.const"] = np.zeros((9, 9, 9), dtype=np.float32)
        with pytest.raises(ConfigError):
            gen2.load_param_dict(bad)


class TestGeneratorConfig:
    def test_squeeze_needs_divisible_channels(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(resolution=8, channel_map={4: 8, 8: 10},
                            variant=BlockVariant.SQUEEZE, r=4, style_dim=8)

    def test_bad_resolution(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(resolution=12)
        with pytest.raises(ConfigError):
            GeneratorConfig(resolution=512)

    def test_missing_channel_map_entry(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(resolution=16, channel_map={4: 8, 16: 8})

    def test_default_channel_map_totals_2496_at_256(self):
        cfg = GeneratorConfig(resolution=256)
        assert sum(cfg.channel_map.values()) == 2496
