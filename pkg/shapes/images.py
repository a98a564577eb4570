"""Binary PGM (P5) / PPM (P6) dumps.

Values are clamped to [-1, 1] and mapped to bytes with
``floor(127.5 * (v + 1) + 0.5)``, i.e. round half up: -1 -> 0, 0 -> 128, 1 -> 255.
"""

from pathlib import Path
from typing import Sequence, Union

import numpy as np

from numerics.tensor import Tensor
from shared.errors import ImageFormatError


def to_bytes(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.floor(127.5 * (v + 1.0) + 0.5).astype(np.uint8)


def encode_image(image: Union[Tensor, np.ndarray]) -> bytes:
    """P5 for (1, H, W), P6 for (3, H, W)."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ImageFormatError(f"can only dump (1|3, H, W) images, got shape {arr.shape}")
    c, h, w = arr.shape
    pixels = to_bytes(arr)
    if c == 1:
        return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels[0].tobytes()
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.transpose(1, 2, 0).tobytes()


def dump_image(image: Union[Tensor, np.ndarray], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_image(image))


def tile_images(images: Sequence[Union[Tensor, np.ndarray]], cols: int, pad: int = 1) -> np.ndarray:
    """Arrange (C, H, W) images on a grid with ``pad`` pixels of -1 between them."""
    arrs = [im.data if isinstance(im, Tensor) else np.asarray(im) for im in images]
    if not arrs:
        raise ImageFormatError("nothing to tile")
    c, h, w = arrs[0].shape
    rows = -(-len(arrs) // cols)
    grid = -np.ones((c, rows * (h + pad) - pad, cols * (w + pad) - pad))
    for k, arr in enumerate(arrs):
        if arr.shape != (c, h, w):
            raise ImageFormatError(f"tile {k} has shape {arr.shape}, expected {(c, h, w)}")
        r, q = divmod(k, cols)
        grid[:, r * (h + pad) : r * (h + pad) + h, q * (w + pad) : q * (w + pad) + w] = arr
    return grid
