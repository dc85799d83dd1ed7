"""Pure-numpy valid cross-correlation, the fallback for the compiled kernel.

The accumulation order per output element is (input channel, kernel row,
kernel column), outermost to innermost, exactly like the scalar quadruple
loop in the compiled extension. Each loop iteration adds one rounded
product per output element, so in a fixed floating-point width the result
is bitwise identical to the scalar loop.
"""

import numpy as np


def conv2d_valid(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid (no padding) cross-correlation of NCHW input with OIHW weights."""
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"channel mismatch: input has {c}, weight expects {ci}")
    ho = h - kh + 1
    wo = wd - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{wd}")
    out = np.zeros((n, o, ho, wo), dtype=x.dtype)
    for i in range(c):
        for a in range(kh):
            for b in range(kw):
                patch = x[:, i, a : a + ho, b : b + wo]
                out += patch[:, None, :, :] * w[None, :, i, a, b, None, None]
    return out
