"""Image loading and the built-in desk-scale dataset."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

# colour photographs shipped with scikit-image (no download needed)
SAMPLE_IMAGES = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "hubble_deep_field", "retina")


def list_images(directory):
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_rgb(path, image: np.ndarray):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def center_crop_even(image: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Drop a trailing row/column so both sides are even; returns the crop offset."""
    h, w = image.shape[:2]
    return image[: h - h % 2, : w - w % 2], (0, 0)


def resize_square(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = image[top : top + side, left : left + side]
    return np.asarray(Image.fromarray(crop).resize((size, size), Image.BICUBIC))


def load_image_dir(directory, size=None):
    """Load every readable image in ``directory``; unreadable files are skipped with a warning."""
    images, names = [], []
    for path in list_images(directory):
        try:
            img = read_rgb(path)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        images.append(resize_square(img, size) if size else img)
        names.append(path.name)
    return images, names


def sample_patches(n=16, size=64, seed=0, scale_range=(96, 256)):
    """``n`` natural ``size x size`` RGB patches cut from scikit-image's sample photos.

    Each patch is a random square window (side drawn from ``scale_range``)
    resized down to ``size``, so patches keep natural texture at small sizes.
    """
    import skimage.data

    rng = np.random.default_rng(seed)
    sources = [getattr(skimage.data, name)() for name in SAMPLE_IMAGES]
    out = []
    for i in range(n):
        src = sources[i % len(sources)]
        h, w = src.shape[:2]
        side = int(rng.integers(scale_range[0], min(scale_range[1], h, w) + 1))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        crop = src[top : top + side, left : left + side]
        out.append(np.asarray(Image.fromarray(crop).resize((size, size), Image.BICUBIC)))
    return np.stack(out)


def to_tensor(images):
    """uint8 ``(N, H, W, 3)`` -> float ``(N, 3, H, W)`` in ``[0, 1]``."""
    import torch

    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(arr.astype(np.float32) / 255.0).permute(0, 3, 1, 2).contiguous()


def to_uint8(tensor) -> np.ndarray:
    """float ``(N, 3, H, W)`` -> clamped, rounded uint8 ``(N, H, W, 3)``."""
    arr = tensor.detach().clamp(0, 1).permute(0, 2, 3, 1).cpu().numpy()
    return np.round(arr * 255.0).astype(np.uint8)
