"""Central finite-difference suites for every differentiable operation.

Each case rebuilds its forward pass as a pure function of the input
tensors, so the numeric gradient (f(x+h) - f(x-h)) / 2h is an oracle that
is independent of the tape machinery it checks. All cases run in float64
with step h = 1e-5; errors are relative in the L2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError
from .synthesis import ModulatedConv
from .training import (d_loss_classic, d_loss_nonsat_r1, g_loss_classic,
                       g_loss_nonsat)

FD_STEP = 1e-5
CORE_TOL = 1e-4
R1_TOL = 1e-3

SUITES = ("core", "losses", "r1")


@dataclass
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_err <= self.tol


def finite_diff_grad(value_fn, t: Tensor, h: float = FD_STEP) -> np.ndarray:
    flat = t.data.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = value_fn()
        flat[i] = orig - h
        fm = value_fn()
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(t.data.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom


def _check(name, forward, tensors, tol, second_order=False, results=None):
    """Compare taped gradients of forward() against finite differences."""
    with Tape(second_order=second_order) as tape:
        out = forward(tape)
    grads = tape.backward(out, wrt=list(tensors.values()))

    def value():
        if second_order:
            with Tape(second_order=True) as t2:
                return forward(t2).item()
        return forward(None).item()

    for pname, t in tensors.items():
        numeric = finite_diff_grad(value, t)
        results.append(CheckResult(f"{name}/{pname}",
                                   rel_error(grads[t].data, numeric), tol))


def _rand(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _proj_loss(out: Tensor, proj: np.ndarray) -> Tensor:
    # fixed random projection makes the scalar loss sensitive to every entry
    return ad.sum_all(ad.mul(out, Tensor(proj)))


def suite_core() -> list:
    rng = np.random.default_rng(7)
    results = []

    x = _rand(rng, (2, 3, 6, 6))
    w = _rand(rng, (4, 3, 3, 3))
    b = _rand(rng, (4,))
    proj = rng.standard_normal((2, 4, 6, 6))
    _check("conv3x3_pad1",
           lambda tape: _proj_loss(ad.conv2d(x, w, b, pad=1), proj),
           {"x": x, "w": w, "b": b}, CORE_TOL, results=results)

    x1 = _rand(rng, (2, 3, 5, 5))
    w1 = _rand(rng, (2, 3, 1, 1))
    proj = rng.standard_normal((2, 2, 5, 5))
    _check("conv1x1_pad0",
           lambda tape: _proj_loss(ad.conv2d(x1, w1, pad=0), proj),
           {"x": x1, "w": w1}, CORE_TOL, results=results)

    proj = rng.standard_normal((2, 2, 7, 7))
    _check("conv1x1_pad1",
           lambda tape: _proj_loss(ad.conv2d(x1, w1, pad=1), proj),
           {"x": x1, "w": w1}, CORE_TOL, results=results)

    # the two-layer conv + leaky-relu composite
    xa = _rand(rng, (1, 2, 6, 6))
    wa = _rand(rng, (3, 2, 3, 3))
    wb = _rand(rng, (2, 3, 3, 3))
    ba = _rand(rng, (3,))
    bb = _rand(rng, (2,))

    def two_layer(tape):
        h1 = ad.leaky_relu(ad.conv2d(xa, wa, ba, pad=1))
        h2 = ad.leaky_relu(ad.conv2d(h1, wb, bb, pad=1))
        return ad.sum_all(ad.square(h2))

    _check("conv_lrelu_2layer", two_layer,
           {"x": xa, "w0": wa, "b0": ba, "w1": wb, "b1": bb},
           CORE_TOL, results=results)

    xm = _rand(rng, (3, 4))
    wm = _rand(rng, (4, 5))
    bm = _rand(rng, (5,))
    projm = rng.standard_normal((3, 5))
    _check("dense",
           lambda tape: _proj_loss(ad.dense(xm, wm, bm), projm),
           {"x": xm, "w": wm, "b": bm}, CORE_TOL, results=results)

    xp = _rand(rng, (2, 3, 4, 4))
    proj = rng.standard_normal((2, 3, 2, 2))
    _check("avgpool2x2",
           lambda tape: _proj_loss(ad.avgpool2x2(xp), proj),
           {"x": xp}, CORE_TOL, results=results)

    for mode in ("nearest", "bilinear"):
        proj_up = rng.standard_normal((2, 3, 8, 8))
        _check(f"upsample2x_{mode}",
               lambda tape, m=mode, p=proj_up: _proj_loss(ad.upsample2x(xp, m), p),
               {"x": xp}, CORE_TOL, results=results)

    xs = _rand(rng, (2, 3, 4, 4))
    sc = _rand(rng, (2, 3))
    proj = rng.standard_normal((2, 3, 4, 4))
    _check("scale_channels",
           lambda tape: _proj_loss(ad.scale_channels(xs, sc), proj),
           {"x": xs, "s": sc}, CORE_TOL, results=results)

    ca = _rand(rng, (2, 2, 3, 3))
    cb = _rand(rng, (2, 3, 3, 3))
    proj = rng.standard_normal((2, 3, 3, 3))
    _check("concat_slice",
           lambda tape: _proj_loss(
               ad.slice_channels(ad.concat_channels(ca, cb), 1, 4), proj),
           {"a": ca, "b": cb}, CORE_TOL, results=results)

    xq = Tensor(np.abs(rng.standard_normal((3, 3))) + 0.5)
    proj = rng.standard_normal((3, 3))
    _check("sqrt_eps",
           lambda tape: _proj_loss(ad.sqrt_eps(xq, 1e-8), proj),
           {"x": xq}, CORE_TOL, results=results)
    _check("rsqrt",
           lambda tape: _proj_loss(ad.pow_const(xq, -0.5), proj),
           {"x": xq}, CORE_TOL, results=results)

    xe = _rand(rng, (4, 3))
    _check("square_mean",
           lambda tape: ad.mean_all(ad.square(xe)),
           {"x": xe}, CORE_TOL, results=results)

    xr = _rand(rng, (2, 2, 4, 4))
    projr = rng.standard_normal((2, 32))
    _check("reshape",
           lambda tape: _proj_loss(ad.reshape(xr, (2, 32)), projr),
           {"x": xr}, CORE_TOL, results=results)

    # modulated + demodulated convolution, the synthesis workhorse
    mc = ModulatedConv(np.random.default_rng(3), 4, 3, 3, 6, np.float64)
    xv = _rand(rng, (2, 3, 5, 5))
    wv = _rand(rng, (2, 6))
    projv = rng.standard_normal((2, 4, 5, 5))
    _check("modulated_conv",
           lambda tape: _proj_loss(mc.forward(xv, wv)[0], projv),
           {"x": xv, "w_latent": wv, "weight": mc.weight, "bias": mc.bias,
            "affine_w": mc.affine.weight, "affine_b": mc.affine.bias},
           CORE_TOL, results=results)

    return results


def suite_losses() -> list:
    rng = np.random.default_rng(11)
    results = []

    logits_f = _rand(rng, (6,))
    logits_r = _rand(rng, (6,))
    _check("g_loss_nonsat", lambda tape: g_loss_nonsat(logits_f),
           {"d_fake": logits_f}, CORE_TOL, results=results)
    _check("g_loss_classic", lambda tape: g_loss_classic(logits_f),
           {"d_fake": logits_f}, CORE_TOL, results=results)
    _check("d_loss_classic", lambda tape: d_loss_classic(logits_r, logits_f),
           {"d_real": logits_r, "d_fake": logits_f}, CORE_TOL, results=results)

    # both families through a small conv discriminator (weights, gamma = 0)
    w0 = _rand(rng, (3, 3, 3, 3))
    b0 = _rand(rng, (3,))
    wd = _rand(rng, (12, 1))
    x_real = _rand(rng, (2, 3, 4, 4))
    x_fake = _rand(rng, (2, 3, 4, 4))

    def tiny_d(x):
        h = ad.leaky_relu(ad.conv2d(x, w0, b0, pad=1))
        h = ad.avgpool2x2(h)
        return ad.reshape(ad.matmul(ad.reshape(h, (x.shape[0], 12)), wd),
                          (x.shape[0],))

    _check("d_loss_nonsat_through_net",
           lambda tape: d_loss_nonsat_r1(tiny_d(x_real), tiny_d(x_fake),
                                         x_real, 0.0),
           {"w0": w0, "b0": b0, "wd": wd}, CORE_TOL, results=results)
    _check("d_loss_classic_through_net",
           lambda tape: d_loss_classic(tiny_d(x_real), tiny_d(x_fake)),
           {"w0": w0, "b0": b0, "wd": wd}, CORE_TOL, results=results)
    _check("g_loss_nonsat_through_net",
           lambda tape: g_loss_nonsat(tiny_d(x_fake)),
           {"w0": w0, "b0": b0, "wd": wd, "x": x_fake}, CORE_TOL,
           results=results)

    return results


def suite_r1() -> list:
    rng = np.random.default_rng(13)
    results = []

    w0 = _rand(rng, (4, 3, 3, 3))
    b0 = _rand(rng, (4,))
    w1 = _rand(rng, (4, 4, 3, 3))
    b1 = _rand(rng, (4,))
    wd = _rand(rng, (16, 1))
    x = _rand(rng, (2, 3, 4, 4))

    def net(xt):
        h = ad.leaky_relu(ad.conv2d(xt, w0, b0, pad=1))
        h = ad.leaky_relu(ad.conv2d(h, w1, b1, pad=1))
        h = ad.avgpool2x2(h)
        return ad.reshape(ad.matmul(ad.reshape(h, (xt.shape[0], 16)), wd),
                          (xt.shape[0],))

    def gnsq(tape):
        d = net(x)
        return ad.grad_norm_sq(tape, ad.sum_all(d), x)

    _check("grad_norm_sq_wrt_weights", gnsq,
           {"w0": w0, "b0": b0, "w1": w1, "wd": wd},
           R1_TOL, second_order=True, results=results)

    x_fake = _rand(rng, (2, 3, 4, 4))

    def full_loss(tape):
        return d_loss_nonsat_r1(net(x), net(x_fake), x, 0.3, tape)

    _check("d_loss_r1_wrt_weights", full_loss,
           {"w0": w0, "b0": b0, "w1": w1, "b1": b1, "wd": wd},
           R1_TOL, second_order=True, results=results)

    return results


def run_suite(name: str) -> list:
    if name == "core":
        return suite_core()
    if name == "losses":
        return suite_losses()
    if name == "r1":
        return suite_r1()
    raise ConfigError(f"unknown gradcheck suite {name!r}; pick from {SUITES}")
