import numpy as np
import pytest

from sqzgan.synthesis import BlockVariant, GeneratorConfig


def conv_reference(x, w, pad):
    """Scalar quadruple-loop convolution, written independently of the
    package kernels and accumulating in (channel, row, col) order.

    Python floats are IEEE doubles, so in float64 this is the bitwise
    ground truth for the summation-order contract.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for nn in range(n):
        for oo in range(o):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for i in range(c):
                        for a in range(kh):
                            for b in range(kw):
                                acc += float(x[nn, i, y + a, xx + b]) * \
                                    float(w[oo, i, a, b])
                    out[nn, oo, y, xx] = acc
    return out


def bilinear_reference(plane):
    """Per-pixel 2x bilinear upsampling of one (H, W) map, edge-clamped,
    output pixel centers at (i + 0.5) / 2 - 0.5 in input coordinates."""
    h, w = plane.shape
    out = np.zeros((2 * h, 2 * w), dtype=np.float64)
    for oy in range(2 * h):
        for ox in range(2 * w):
            sy = (oy + 0.5) / 2.0 - 0.5
            sx = (ox + 0.5) / 2.0 - 0.5
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            ty, tx = sy - y0, sx - x0
            y0c, y1c = min(max(y0, 0), h - 1), min(max(y0 + 1, 0), h - 1)
            x0c, x1c = min(max(x0, 0), w - 1), min(max(x0 + 1, 0), w - 1)
            top = plane[y0c, x0c] * (1 - tx) + plane[y0c, x1c] * tx
            bot = plane[y1c, x0c] * (1 - tx) + plane[y1c, x1c] * tx
            out[oy, ox] = top * (1 - ty) + bot * ty
    return out


def tiny_config(resolution=8, channels=8, variant=BlockVariant.SKIP, r=4,
                style_dim=16, upsample="nearest"):
    cmap = {res: channels for res in (4, 8, 16, 32, 64) if res <= resolution}
    return GeneratorConfig(resolution=resolution, channel_map=cmap,
                           variant=variant, r=r, style_dim=style_dim,
                           mapping_depth=2, upsample_mode=upsample)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
