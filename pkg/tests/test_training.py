"""Losses, discriminator, toy dataset, and the deterministic training loop."""

import math

import mpmath
import numpy as np
import pytest

from conftest import tiny_config
from sqzgan import autodiff as ad
from sqzgan.autodiff import Tape, Tensor
from sqzgan.errors import ConfigError, TrainingDiverged
from sqzgan.synthesis import BlockVariant
from sqzgan.training import (Adam, Discriminator, LossConfig, ToyBlobDataset,
                             ToyDatasetSpec, build_discriminator,
                             d_loss_classic, d_loss_nonsat_r1, g_loss_classic,
                             g_loss_nonsat, r1_penalty_mean, train)

mpmath.mp.dps = 50


class TestNonSaturatingLosses:
    def test_zero_logit_gives_log2(self):
        loss = g_loss_nonsat(Tensor(np.zeros(4)))
        assert loss.item() == pytest.approx(math.log(2.0), rel=1e-12)

    def test_large_logit_vanishes(self):
        loss = g_loss_nonsat(Tensor(np.array([100.0])))
        assert loss.item() <= 1e-40

    def test_logit_one_matches_high_precision(self):
        loss = g_loss_nonsat(Tensor(np.array([1.0])))
        expect = float(mpmath.log(1 + mpmath.e ** -1))
        assert loss.item() == pytest.approx(expect, rel=1e-14)

    def test_d_loss_gamma_zero_at_zero_logits(self):
        loss = d_loss_nonsat_r1(Tensor(np.zeros(3)), Tensor(np.zeros(3)),
                                Tensor(np.zeros((3, 1, 2, 2))), 0.0)
        assert loss.item() == pytest.approx(2 * math.log(2.0), rel=1e-12)

    def test_penalty_term_for_sum_discriminator(self):
        # D(x) = sum(x): grad is all-ones, so the penalty adds
        # (gamma / 2) * numel exactly
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4, 4)))
        gamma = 2.0
        with Tape(second_order=True) as tape:
            d_real = ad.reshape(ad.reduce_sum(x, (1, 2, 3)), (2,))
            d_fake = Tensor(np.zeros(2))
            loss = d_loss_nonsat_r1(d_real, d_fake, x, gamma, tape)
            base = d_loss_nonsat_r1(d_real, d_fake, x, 0.0)
        per_sample = 3 * 4 * 4
        assert loss.item() - base.item() == pytest.approx(
            gamma / 2 * per_sample, rel=1e-12)

    def test_gamma_requires_second_order_tape(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        with Tape() as tape:
            d = ad.reshape(ad.sum_all(x), (1,))
            with pytest.raises(ConfigError):
                d_loss_nonsat_r1(d, Tensor(np.zeros(1)), x, 0.5, tape)
        with pytest.raises(ConfigError):
            d_loss_nonsat_r1(Tensor(np.zeros(1)), Tensor(np.zeros(1)),
                             x, 0.5, None)

    def test_gamma_decomposition_identity(self, rng):
        # loss(gamma) - loss(0) == (gamma/2) * mean grad_norm_sq, on one tape
        d = build_discriminator(8, {4: 4, 8: 4}, dtype=np.float64, seed=5)
        x = Tensor(rng.standard_normal((2, 3, 8, 8)))
        fake = Tensor(rng.standard_normal((2, 3, 8, 8)))
        gamma = 0.7
        with Tape(second_order=True) as tape:
            d_real = d.forward(x)
            d_fake = d.forward(fake)
            with_pen = d_loss_nonsat_r1(d_real, d_fake, x, gamma, tape)
            without = d_loss_nonsat_r1(d_real, d_fake, x, 0.0)
            pen = r1_penalty_mean(tape, d_real, x)
        lhs = with_pen.item() - gamma / 2 * pen.item()
        assert abs(lhs - without.item()) <= 1e-10

    def test_r1_zero_for_constant_discriminator(self, rng):
        # a discriminator that ignores x has zero input gradient
        x = Tensor(rng.standard_normal((3, 2, 4, 4)))
        bias = Tensor(np.asarray(1.5))
        for gamma in (0.1, 1.0, 10.0):
            with Tape(second_order=True) as tape:
                zeroed = ad.mul_scalar(ad.reduce_sum(x, (1, 2, 3)), 0.0)
                d_real = ad.add(zeroed, ad.broadcast_from(bias, (3,), (0,)))
                pen = r1_penalty_mean(tape, d_real, x)
            assert pen.item() == 0.0

    def test_batch_permutation_invariance(self, rng):
        logits = rng.standard_normal(6)
        perm = rng.permutation(6)
        a = g_loss_nonsat(Tensor(logits)).item()
        b = g_loss_nonsat(Tensor(logits[perm])).item()
        assert a == pytest.approx(b, rel=1e-15)


class TestClassicLosses:
    def test_zero_logits(self):
        assert g_loss_classic(Tensor(np.zeros(5))).item() == pytest.approx(
            math.log(2.0), rel=1e-12)
        assert d_loss_classic(Tensor(np.zeros(2)), Tensor(np.zeros(2))).item() \
            == pytest.approx(2 * math.log(2.0), rel=1e-12)

    def test_random_logits_match_mpmath(self, rng):
        logits = rng.standard_normal(8)
        expect = -np.mean([float(mpmath.log(1 / (1 + mpmath.e ** -float(v))))
                           for v in logits])
        got = g_loss_classic(Tensor(logits)).item()
        assert got == pytest.approx(expect, rel=1e-12)

    def test_d_loss_random_matches_mpmath(self, rng):
        lr = rng.standard_normal(5)
        lf = rng.standard_normal(5)
        real = -np.mean([float(mpmath.log(1 / (1 + mpmath.e ** -float(v))))
                         for v in lr])
        fake = -np.mean([float(mpmath.log(1 - 1 / (1 + mpmath.e ** -float(v))))
                         for v in lf])
        got = d_loss_classic(Tensor(lr), Tensor(lf)).item()
        assert got == pytest.approx(real + fake, rel=1e-11)

    def test_extreme_logits_stay_finite(self):
        big = Tensor(np.array([1e4, -1e4]))
        assert np.isfinite(g_loss_classic(big).item())
        assert np.isfinite(d_loss_classic(big, big).item())


class TestDiscriminator:
    def test_zero_weights_logit_is_final_bias(self, rng):
        d = build_discriminator(16, {4: 4, 8: 4, 16: 4}, dtype=np.float64)
        for _, t in d.named_params():
            t.data[...] = 0.0
        d.fc1.bias.data[...] = 0.625
        x = Tensor(rng.standard_normal((3, 3, 16, 16)))
        assert (d.forward(x).data == 0.625).all()

    def test_logit_shape_contract(self, rng):
        d = build_discriminator(16, {4: 4, 8: 4, 16: 4}, dtype=np.float64)
        out = d.forward(Tensor(rng.standard_normal((5, 3, 16, 16))))
        assert out.shape == (5,)

    def test_residual_identity(self, rng):
        # zeroing the conv path makes each block equal its pooled 1x1 skip
        d = build_discriminator(8, {4: 4, 8: 4}, dtype=np.float64, seed=2)
        block = d.blocks[0]
        block.conv0.weight.data[...] = 0.0
        block.conv0.bias.data[...] = 0.0
        block.conv1.weight.data[...] = 0.0
        block.conv1.bias.data[...] = 0.0
        x = Tensor(rng.standard_normal((2, 4, 8, 8)))
        out = block.forward(x)
        skip = block.skip(ad.avgpool2x2(x))
        assert (out.data == skip.data).all()

    def test_input_contract(self, rng):
        d = build_discriminator(8, {4: 4, 8: 4}, dtype=np.float64)
        with pytest.raises(ConfigError):
            d.forward(Tensor(rng.standard_normal((1, 3, 16, 16))))


class TestToyDataset:
    def test_determinism_and_order_independence(self):
        ds = ToyBlobDataset(ToyDatasetSpec(resolution=16, seed=9))
        a = ds.sample(5)
        ds2 = ToyBlobDataset(ToyDatasetSpec(resolution=16, seed=9))
        for i in (11, 0, 5):
            b = ds2.sample(i)
        assert (a == b).all()

    def test_pixel_range_and_shape(self):
        ds = ToyBlobDataset(ToyDatasetSpec(resolution=16, seed=0))
        batch = ds.batch(0, 8)
        assert batch.shape == (8, 3, 16, 16)
        assert batch.min() >= -1.0 and batch.max() <= 1.0
        assert batch.std() > 0.01

    def test_different_seeds_differ(self):
        a = ToyBlobDataset(ToyDatasetSpec(16, seed=0)).sample(0)
        b = ToyBlobDataset(ToyDatasetSpec(16, seed=1)).sample(0)
        assert not (a == b).all()


class TestAdam:
    def test_first_step_moves_against_gradient(self):
        p = Tensor(np.zeros(3, dtype=np.float64))
        opt = Adam([p], lr=0.1)
        g = Tensor(np.array([1.0, -2.0, 0.5]))
        opt.step({p: g})
        assert (np.sign(p.data) == -np.sign(g.data)).all()


class TestTrainLoop:
    def test_single_step_history(self):
        cfg = tiny_config(8, channels=8, variant=BlockVariant.SQUEEZE, r=4)
        res = train(cfg, LossConfig(gamma=0.1), ToyDatasetSpec(8, seed=0),
                    steps=1, seed=0, batch_size=4)
        assert len(res.history.steps) == 1
        s = res.history.steps[0]
        for v in (s.d_loss, s.g_loss, s.r1, s.g_grad_norm, s.d_grad_norm):
            assert np.isfinite(v)

    def test_same_seed_bitwise_identical_history(self):
        cfg = tiny_config(8, channels=8, variant=BlockVariant.SKIP)
        kwargs = dict(steps=8, seed=3, batch_size=4)
        a = train(cfg, LossConfig(gamma=0.1), ToyDatasetSpec(8, seed=1), **kwargs)
        b = train(cfg, LossConfig(gamma=0.1), ToyDatasetSpec(8, seed=1), **kwargs)
        assert a.history.to_csv_text() == b.history.to_csv_text()
        for (na, ta), (nb, tb) in zip(a.generator.named_params(),
                                      b.generator.named_params()):
            assert na == nb and (ta.data == tb.data).all()

    def test_classic_loss_trains(self):
        cfg = tiny_config(8, channels=8)
        res = train(cfg, LossConfig(kind="classic", gamma=0.0),
                    ToyDatasetSpec(8, seed=2), steps=3, seed=1, batch_size=4)
        assert all(np.isfinite(s.d_loss) for s in res.history.steps)
        assert all(s.r1 == 0.0 for s in res.history.steps)

    def test_csv_header_contract(self):
        cfg = tiny_config(8, channels=8)
        res = train(cfg, LossConfig(gamma=0.0), ToyDatasetSpec(8, seed=0),
                    steps=1, seed=0, batch_size=2)
        assert res.history.to_csv_text().splitlines()[0] == \
            "step,d_loss,g_loss,r1,g_grad_norm,d_grad_norm"

    def test_steps_validation(self):
        cfg = tiny_config(8, channels=8)
        with pytest.raises(ConfigError):
            train(cfg, LossConfig(), ToyDatasetSpec(8), steps=0)

    def test_resolution_mismatch_rejected(self):
        cfg = tiny_config(8, channels=8)
        with pytest.raises(ConfigError):
            train(cfg, LossConfig(), ToyDatasetSpec(16), steps=1)


class TestDivergenceDiagnostics:
    def test_exception_carries_step_and_term(self):
        err = TrainingDiverged(17, "d_loss", float("nan"))
        assert err.step == 17 and err.term == "d_loss"
        assert "step 17" in str(err) and "d_loss" in str(err)


class TestLossConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            LossConfig(kind="wasserstein")
        with pytest.raises(ConfigError):
            LossConfig(gamma=-1.0)
        with pytest.raises(ConfigError):
            LossConfig(learning_rate=0.0)
