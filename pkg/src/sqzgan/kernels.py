"""Convolution forward and both gradient kernels on top of one hot loop.

Everything reduces to a valid cross-correlation (`backend.conv2d_valid`):

  forward      y[n,o]   = sum_i  x_pad[n,i]  (*) w[o,i]
  input grad   dx[n,i]  = sum_o  g_pad[n,o]  (*) flip(w)[i,o]
  weight grad  dw[o,i]  = sum_n  x_pad[-,i]  (*) g[-,o]   (batch as channels)

so the compiled/python backends stay interchangeable everywhere.
"""

import numpy as np

from . import backend


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """NCHW x OIHW cross-correlation with symmetric zero padding."""
    return backend.conv2d_valid(np.ascontiguousarray(_pad_hw(x, pad)),
                                np.ascontiguousarray(w))


def conv2d_input_grad(g: np.ndarray, w: np.ndarray, pad: int,
                      in_hw: tuple) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. its input.

    Full correlation of the output gradient with the spatially flipped,
    in/out-transposed kernel; a negative effective pad (1x1 kernel with
    pad 1) becomes a crop of the output gradient.
    """
    kh, kw = w.shape[2], w.shape[3]
    eff = kh - 1 - pad
    if eff >= 0:
        gp = _pad_hw(g, eff)
    else:
        crop = -eff
        gp = g[:, :, crop:-crop, crop:-crop]
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = backend.conv2d_valid(np.ascontiguousarray(gp), w_t)
    if dx.shape[2:] != tuple(in_hw):
        raise ValueError(f"input-grad shape {dx.shape[2:]} != expected {tuple(in_hw)}")
    return dx


def conv2d_weight_grad(x: np.ndarray, g: np.ndarray, pad: int,
                       k_hw: tuple) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. its weight.

    Correlation of the padded input with the output gradient, contracted
    over the batch: swap batch and channel axes so the hot kernel contracts
    over (n, y, x) and emits an (I, O, kH, kW) map, then swap back.
    """
    xp = _pad_hw(x, pad)
    x_t = np.ascontiguousarray(xp.transpose(1, 0, 2, 3))       # (I, N, Hp, Wp)
    g_t = np.ascontiguousarray(g.transpose(1, 0, 2, 3))        # (O, N, Ho, Wo)
    dw = backend.conv2d_valid(x_t, g_t)                        # (I, O, kH, kW)
    dw = np.ascontiguousarray(dw.transpose(1, 0, 2, 3))
    if dw.shape[2:] != tuple(k_hw):
        raise ValueError(f"weight-grad shape {dw.shape[2:]} != expected {tuple(k_hw)}")
    return dw
