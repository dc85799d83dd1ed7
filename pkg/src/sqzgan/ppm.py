"""Binary PPM (P6) image output for [-1, 1] RGB tensors."""

import numpy as np

from .checkpoint import atomic_write
from .errors import ConfigError


def quantize(img: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to bytes: clamp((v+1)/2)*255, rounded half-up."""
    scaled = np.clip((np.asarray(img, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def encode_ppm(img: np.ndarray) -> bytes:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ConfigError(f"expected (3, H, W) image, got {img.shape}")
    h, w = img.shape[1], img.shape[2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    pixels = quantize(img).transpose(1, 2, 0)  # H, W, RGB interleaved
    return header + pixels.tobytes()


def write_ppm(path: str, img: np.ndarray):
    atomic_write(path, encode_ppm(img))


def read_ppm(path: str):
    """Parse a P6 file back to (header fields, (3, H, W) uint8 array)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        fields.append(blob[pos:end])
        pos = end
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise ConfigError("not a P6 file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ConfigError(f"unsupported maxval {maxval}")
    data = np.frombuffer(blob[pos:pos + 3 * w * h], dtype=np.uint8)
    return (w, h, maxval), data.reshape(h, w, 3).transpose(2, 0, 1)


def tile_grid(images, rows: int, cols: int) -> np.ndarray:
    """Tile equally sized (3, H, W) images into one (3, rows*H, cols*W) image."""
    if len(images) != rows * cols:
        raise ConfigError(f"need {rows * cols} images, got {len(images)}")
    imgs = [np.asarray(i) for i in images]
    h, w = imgs[0].shape[1], imgs[0].shape[2]
    out = np.zeros((3, rows * h, cols * w), dtype=imgs[0].dtype)
    for idx, img in enumerate(imgs):
        rr, cc = divmod(idx, cols)
        out[:, rr * h:(rr + 1) * h, cc * w:(cc + 1) * w] = img
    return out
