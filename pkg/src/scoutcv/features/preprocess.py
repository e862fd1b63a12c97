"""Image decoding and normalization ahead of the backbone."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scoutcv._kernels import resize_bilinear


@dataclass(frozen=True)
class PreprocessSpec:
    """Target geometry and per-channel statistics for backbone input."""

    target_height: int = 224
    target_width: int = 224
    channel_means: tuple[float, float, float] = (0.485, 0.456, 0.406)
    channel_stds: tuple[float, float, float] = (0.229, 0.224, 0.225)
    resize_mode: str = "bilinear"

    def __post_init__(self) -> None:
        if self.target_height < 1 or self.target_width < 1:
            raise ValueError("target dimensions must be positive")
        if any(s <= 0 for s in self.channel_stds):
            raise ValueError("channel stds must be strictly positive")
        if self.resize_mode != "bilinear":
            raise ValueError(f"unsupported resize mode {self.resize_mode!r}")


# Named presets; the 224 preset carries the channel statistics the common
# interchange backbones were trained with, the 299 preset the symmetric
# scaling used by the wider inception-style inputs.
PREPROCESS_PRESETS = {
    "imagenet-224": PreprocessSpec(),
    "inception-299": PreprocessSpec(
        target_height=299,
        target_width=299,
        channel_means=(0.5, 0.5, 0.5),
        channel_stds=(0.5, 0.5, 0.5),
    ),
}


def resolve_preprocess(spec_or_preset: PreprocessSpec | str | None) -> PreprocessSpec:
    if spec_or_preset is None:
        return PREPROCESS_PRESETS["imagenet-224"]
    if isinstance(spec_or_preset, PreprocessSpec):
        return spec_or_preset
    try:
        return PREPROCESS_PRESETS[spec_or_preset]
    except KeyError:
        raise ValueError(
            f"unknown preprocessing preset {spec_or_preset!r}; "
            f"known presets: {', '.join(sorted(PREPROCESS_PRESETS))}"
        ) from None


def load_pixels(path: str | Path) -> np.ndarray:
    """Decode an image file into an H x W x C pixel array.

    Regular image formats go through Pillow; ``.npy`` files are read as
    ready-made pixel arrays (handy for synthetic fixtures).
    """
    path = Path(path)
    if not path.exists():
        raise ValueError(f"image file not found: {path}")
    if path.suffix == ".npy":
        arr = np.load(path)
    else:
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGB") if img.mode not in ("L", "RGB") else img)
        except (UnidentifiedImageError, OSError) as exc:
            raise ValueError(f"cannot decode image {path}: {exc}") from None
    if arr.ndim not in (2, 3) or arr.size == 0:
        raise ValueError(f"image {path} has unusable shape {arr.shape}")
    return arr


def preprocess_image(raw_image: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    """Scale, resize, and standardize a decoded image.

    Accepts H x W (grayscale, replicated to 3 channels), H x W x 1, or
    H x W x 3. Integer inputs are scaled by 1/255; float inputs are assumed
    to already sit in [0, 1]. Returns a float32 array of shape
    (target_height, target_width, 3) standardized per channel.
    """
    arr = np.asarray(raw_image)
    if arr.size == 0:
        raise ValueError("empty image")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got shape {arr.shape}")
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if np.issubdtype(arr.dtype, np.integer):
        scaled = arr.astype(np.float64) / 255.0
    else:
        scaled = arr.astype(np.float64)
    if not np.all(np.isfinite(scaled)):
        raise ValueError("image contains non-finite pixel values")
    resized = resize_bilinear(scaled, spec.target_height, spec.target_width)
    means = np.asarray(spec.channel_means, dtype=np.float64)
    stds = np.asarray(spec.channel_stds, dtype=np.float64)
    return ((resized - means) / stds).astype(np.float32)
