"""The convolution kernels against the brute-force reference and each other."""

import numpy as np
import pytest

from conftest import conv_reference
from sqzgan import backend, kernels

HAS_COMPILED = "compiled" in backend.available()

SHAPES = [
    # N, C, O, H, W, k, pad
    (1, 2, 3, 5, 5, 3, 0),
    (2, 3, 4, 6, 7, 3, 1),
    (2, 4, 2, 4, 4, 1, 0),
    (1, 1, 1, 3, 3, 3, 1),
    (3, 2, 5, 8, 5, 1, 1),
]


@pytest.mark.parametrize("n,c,o,h,w,k,pad", SHAPES)
def test_forward_matches_quadruple_loop_bitwise(rng, n, c, o, h, w, k, pad):
    x = rng.standard_normal((n, c, h, w))
    wt = rng.standard_normal((o, c, k, k))
    ref = conv_reference(x, wt, pad)
    out = kernels.conv2d_forward(x, wt, pad)
    assert out.shape == ref.shape
    assert (out == ref).all()


def test_random_3x3_case_from_contract(rng):
    # N=1, C=2, O=3, H=W=5 with a 3x3 kernel, no padding
    x = rng.standard_normal((1, 2, 5, 5))
    wt = rng.standard_normal((3, 2, 3, 3))
    assert (kernels.conv2d_forward(x, wt, 0) == conv_reference(x, wt, 0)).all()


@pytest.mark.skipif(not HAS_COMPILED, reason="compiled extension not built")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("n,c,o,h,w,k,pad", SHAPES)
def test_backends_bitwise_identical(rng, dtype, n, c, o, h, w, k, pad):
    x = rng.standard_normal((n, c, h, w)).astype(dtype)
    wt = rng.standard_normal((o, c, k, k)).astype(dtype)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    a = backend.get("compiled").conv2d_valid(x, wt)
    b = backend.get("python").conv2d_valid(x, wt)
    assert a.dtype == b.dtype == dtype
    assert (a == b).all()


def _igrad_reference(g, w, pad, in_hw):
    # adjoint of the forward map, via explicit scatter
    n, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    hp, wp = in_hw[0] + 2 * pad, in_hw[1] + 2 * pad
    dxp = np.zeros((n, c, hp, wp))
    for a in range(kh):
        for b in range(kw):
            dxp[:, :, a:a + ho, b:b + wo] += np.einsum(
                "noyx,oi->niyx", g, w[:, :, a, b])
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def _wgrad_reference(x, g, pad, k_hw):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, o, ho, wo = g.shape
    kh, kw = k_hw
    c = x.shape[1]
    dw = np.zeros((o, c, kh, kw))
    for a in range(kh):
        for b in range(kw):
            dw[:, :, a, b] = np.einsum(
                "niyx,noyx->oi", x[:, :, a:a + ho, b:b + wo], g)
    return dw


@pytest.mark.parametrize("n,c,o,h,w,k,pad", SHAPES)
def test_gradient_kernels_match_reference(rng, n, c, o, h, w, k, pad):
    x = rng.standard_normal((n, c, h, w))
    wt = rng.standard_normal((o, c, k, k))
    y = kernels.conv2d_forward(x, wt, pad)
    g = rng.standard_normal(y.shape)
    dx = kernels.conv2d_input_grad(g, wt, pad, (h, w))
    dw = kernels.conv2d_weight_grad(x, g, pad, (k, k))
    assert np.allclose(dx, _igrad_reference(g, wt, pad, (h, w)),
                       rtol=1e-12, atol=1e-12)
    assert np.allclose(dw, _wgrad_reference(x, g, pad, (k, k)),
                       rtol=1e-12, atol=1e-12)


def test_randomized_shapes_match_reference(rng):
    for _ in range(10):
        n, c, o = (int(v) for v in rng.integers(1, 5, 3))
        k = int(rng.choice([1, 3]))
        pad = int(rng.choice([0, 1]))
        h = int(rng.integers(k, 9))
        w = int(rng.integers(k, 9))
        x = rng.standard_normal((n, c, h, w))
        wt = rng.standard_normal((o, c, k, k))
        assert (kernels.conv2d_forward(x, wt, pad) ==
                conv_reference(x, wt, pad)).all()


def test_runs_are_bitwise_deterministic(rng):
    x = rng.standard_normal((2, 3, 9, 9))
    wt = rng.standard_normal((4, 3, 3, 3))
    first = kernels.conv2d_forward(x, wt, 1)
    for _ in range(3):
        assert (kernels.conv2d_forward(x, wt, 1) == first).all()


def test_channel_mismatch_raises(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    wt = rng.standard_normal((3, 4, 3, 3))
    with pytest.raises(ValueError):
        kernels.conv2d_forward(x, wt, 0)


def test_forced_backend_roundtrip():
    assert backend.name() in ("compiled", "python")
    with pytest.raises(ValueError):
        backend.get("cuda")
