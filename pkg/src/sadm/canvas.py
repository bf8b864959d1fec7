"""Irregular-canvas rasters: binary masks, alpha layers, and RGB boards.

A canvas mask is a binary raster sitting inside a rectangular placeholder;
generation happens where the mask is 1 and the outside is held white. This
module owns mask construction (polygon rasterization and the procedural
ellipse/rectangle/glyphlike families), the expand/contract augmentation used
to train the alpha-predicting decoder, compositing onto white boards, and
block-vote downsampling used to align masks with attention resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.stats import beta as _beta_dist

from .errors import GeometryError, ParameterError, ShapeError
from .rng import substream

MIN_SIDE = 8


class MaskFamily(str, Enum):
    ELLIPSE = "ellipse"
    RECTANGLE = "rectangle"
    GLYPHLIKE = "glyphlike"


@dataclass(frozen=True)
class CanvasMask:
    """Binary (H, W) uint8 raster; 1 = inside the irregular canvas.

    Tiny rasters are permitted structurally (attention-resolution masks go
    down to 4x4); masks entering the system as generation conditions must
    additionally pass require_condition().
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"mask must be a non-empty 2-D raster, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            bad = np.argwhere(~np.isin(arr, (0, 1)))[0]
            raise ParameterError(
                f"mask values must be 0 or 1; first bad pixel at (row={bad[0]}, col={bad[1]})"
            )
        object.__setattr__(self, "data", arr.astype(np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def foreground_count(self) -> int:
        return int(self.data.sum())

    def is_bipartite(self) -> bool:
        """True when both mask values occur, as generation conditions require."""
        n = self.foreground_count
        return 0 < n < self.data.size

    def require_condition(self) -> "CanvasMask":
        """Validate the mask for use as a generation condition."""
        if self.width < MIN_SIDE or self.height < MIN_SIDE:
            raise ShapeError(
                f"condition masks need sides >= {MIN_SIDE}, got {self.height}x{self.width}"
            )
        if not self.is_bipartite():
            raise ParameterError("mask used as a generation condition must contain both 0 and 1")
        return self

    def complement(self) -> "CanvasMask":
        return CanvasMask(1 - self.data)


@dataclass(frozen=True)
class AlphaMask:
    """Real-valued (H, W) float32 raster with entries in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"alpha must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError("alpha values must be finite and in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def threshold(self, level: float = 0.5) -> CanvasMask:
        return CanvasMask((self.data >= level).astype(np.uint8))


@dataclass(frozen=True)
class RgbImage:
    """(H, W, 3) float32 image with channels in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"image must be (H, W, 3), got shape {arr.shape}")
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError("image channels must be finite and in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def rasterize_polygon(vertices, width: int, height: int) -> CanvasMask:
    """Rasterize a polygon with the even-odd rule evaluated at pixel centers.

    Pixel (row i, col j) has its center at (x=j+0.5, y=i+0.5). A degenerate
    polygon (zero area) yields the all-0 mask; a polygon covering every
    center yields the all-1 mask. Both are returned as-is.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
        raise GeometryError("polygon needs at least 3 (x, y) vertices")
    if not np.isfinite(verts).all():
        raise GeometryError("polygon vertices must be finite")

    cx = np.arange(width, dtype=np.float64) + 0.5
    cy = np.arange(height, dtype=np.float64) + 0.5
    px = np.broadcast_to(cx[None, :], (height, width))
    py = np.broadcast_to(cy[:, None], (height, width))

    inside = np.zeros((height, width), dtype=bool)
    n = verts.shape[0]
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= crosses & (px < x_at)
    return CanvasMask(inside.astype(np.uint8))


def sample_aspect_ratio(u: float) -> float:
    """Map a uniform draw to an aspect ratio via a symmetric Beta(1.5, 1.5) draw.

    With X the Beta(1.5, 1.5) quantile of u, the ratio is
    min(1, 1 - 0.3*(0.5 - X)) / min(1, 1 - 0.3*(X - 0.5)), which lands in
    [0.85, 1/0.85] and satisfies r(u) * r(1 - u) = 1.
    """
    if not (0.0 <= u <= 1.0):
        raise ParameterError(f"u must be in [0, 1], got {u}")
    x = float(_beta_dist.ppf(u, 1.5, 1.5))
    num = min(1.0, 1.0 - 0.3 * (0.5 - x))
    den = min(1.0, 1.0 - 0.3 * (x - 0.5))
    return num / den


def sample_resize_scale(u: float) -> float:
    """Map a uniform draw to a resize scale 1 - 0.4*Y with Y ~ Beta(5, 5)."""
    if not (0.0 <= u <= 1.0):
        raise ParameterError(f"u must be in [0, 1], got {u}")
    y = float(_beta_dist.ppf(u, 5.0, 5.0))
    return 1.0 - 0.4 * y


def centered_rectangle_mask(width: int, height: int, ratio: float, scale: float) -> CanvasMask:
    """Axis-aligned rectangle centered in the frame.

    The longer side is scale * min(width, height); the aspect ratio shrinks
    the other side so r=1, s=1 fills exactly the inscribed square.
    """
    base = scale * min(width, height)
    half_w = base / 2.0 * min(1.0, ratio)
    half_h = base / 2.0 * min(1.0, 1.0 / ratio)
    cx, cy = width / 2.0, height / 2.0
    xs = np.abs(np.arange(width) + 0.5 - cx)
    ys = np.abs(np.arange(height) + 0.5 - cy)
    inside = (ys[:, None] <= half_h) & (xs[None, :] <= half_w)
    return CanvasMask(inside.astype(np.uint8))


def centered_ellipse_mask(width: int, height: int, ratio: float, scale: float) -> CanvasMask:
    """Ellipse centered in the frame with the rectangle family's sizing rule."""
    base = scale * min(width, height)
    half_w = max(base / 2.0 * min(1.0, ratio), 1e-9)
    half_h = max(base / 2.0 * min(1.0, 1.0 / ratio), 1e-9)
    cx, cy = width / 2.0, height / 2.0
    xs = (np.arange(width) + 0.5 - cx) / half_w
    ys = (np.arange(height) + 0.5 - cy) / half_h
    inside = ys[:, None] ** 2 + xs[None, :] ** 2 <= 1.0
    return CanvasMask(inside.astype(np.uint8))


def _glyphlike_mask(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    # Union of 2-5 axis-aligned strokes. Every stroke after the first is
    # anchored on a pixel of the current union, which keeps the blob
    # 4-connected by construction.
    data = np.zeros((height, width), dtype=np.uint8)
    n_strokes = int(rng.integers(2, 6))
    thick_lo = max(2, min(width, height) // 10)
    thick_hi = max(thick_lo + 1, min(width, height) // 5)

    # spine: vertical stroke somewhere around the middle
    t = int(rng.integers(thick_lo, thick_hi))
    x0 = int(rng.integers(width // 4, max(width // 4 + 1, 3 * width // 4 - t)))
    y0 = int(rng.integers(0, height // 6 + 1))
    y1 = int(rng.integers(5 * height // 6, height)) + 1
    data[y0:y1, x0:x0 + t] = 1

    for _ in range(n_strokes - 1):
        ys, xs = np.nonzero(data)
        k = int(rng.integers(0, len(xs)))
        ax, ay = int(xs[k]), int(ys[k])
        t = int(rng.integers(thick_lo, thick_hi))
        if rng.random() < 0.7:  # horizontal arm through the anchor
            length = int(rng.integers(width // 3, width))
            left = int(rng.integers(max(0, ax - length + 1), ax + 1))
            top = min(max(0, ay - t // 2), height - t)
            data[top:top + t, left:min(width, left + length)] = 1
        else:  # vertical arm through the anchor
            length = int(rng.integers(height // 3, height))
            top = int(rng.integers(max(0, ay - length + 1), ay + 1))
            left = min(max(0, ax - t // 2), width - t)
            data[top:min(height, top + length), left:left + t] = 1
    return data


def generate_canvas_mask(seed: int, width: int, height: int, family: MaskFamily | str) -> CanvasMask:
    """Deterministically generate a procedural mask of the given family.

    Ellipses and rectangles are centered, with aspect ratio and overall size
    drawn through sample_aspect_ratio / sample_resize_scale. The glyphlike
    family builds a connected letter-like union of strokes. The result always
    contains both mask values.
    """
    if width < MIN_SIDE or height < MIN_SIDE:
        raise ShapeError(f"mask sides must be >= {MIN_SIDE}")
    family = MaskFamily(family)
    rng = substream(seed, "canvas", family.value)
    if family is MaskFamily.GLYPHLIKE:
        data = _glyphlike_mask(rng, width, height)
    else:
        ratio = sample_aspect_ratio(float(rng.random()))
        scale = sample_resize_scale(float(rng.random()))
        if family is MaskFamily.RECTANGLE:
            data = centered_rectangle_mask(width, height, ratio, scale).data
        else:
            data = centered_ellipse_mask(width, height, ratio, scale).data
    # procedural draws essentially never hit the degenerate endpoints, but the
    # invariant must hold unconditionally
    if data.all():
        data = data.copy()
        data[0, :] = 0
    if not data.any():
        data = data.copy()
        data[height // 2, width // 2] = 1
    return CanvasMask(data)


def gaussian_blur(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with a sampled kernel and zero padding.

    Kernel taps are exp(-k^2 / (2 sigma^2)) for |k| <= radius with
    radius = int(4 * sigma + 0.5), normalized to sum 1.
    """
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    arr = np.asarray(values, dtype=np.float64)
    if sigma == 0:
        return arr.copy()
    radius = int(4.0 * sigma + 0.5)
    if radius == 0:
        return arr.copy()
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(k**2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    padded = np.zeros((arr.shape[0] + 2 * radius, arr.shape[1]), dtype=np.float64)
    padded[radius:radius + arr.shape[0]] = arr
    rows = np.zeros_like(arr)
    for i, w in enumerate(kernel):
        rows += w * padded[i:i + arr.shape[0]]

    padded = np.zeros((arr.shape[0], arr.shape[1] + 2 * radius), dtype=np.float64)
    padded[:, radius:radius + arr.shape[1]] = rows
    out = np.zeros_like(arr)
    for i, w in enumerate(kernel):
        out += w * padded[:, i:i + arr.shape[1]]
    return out


AUGMENT_EPS = 1e-9


def augment_mask(mask: CanvasMask, sigma: float, mode: str) -> CanvasMask:
    """Expand or contract a mask by blurring it and re-binarizing.

    Inside the bounding box of the foreground, the mask is Gaussian-blurred
    with std sigma; in "expand" mode every intermediate value maps to 1
    (blurred > eps), in "contract" mode every intermediate maps to 0
    (keep only blurred >= 1 - eps). Pixels outside the bounding box are left
    unchanged, so expansion never escapes the original extent.
    """
    if mode not in ("expand", "contract"):
        raise ParameterError(f"mode must be 'expand' or 'contract', got {mode!r}")
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    data = mask.data
    ys, xs = np.nonzero(data)
    if len(ys) == 0 or sigma == 0:
        return CanvasMask(data.copy())
    blurred = gaussian_blur(data.astype(np.float64), sigma)
    if mode == "expand":
        mapped = (blurred > AUGMENT_EPS).astype(np.uint8)
    else:
        mapped = (blurred >= 1.0 - AUGMENT_EPS).astype(np.uint8)
    out = data.copy()
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    out[y0:y1, x0:x1] = mapped[y0:y1, x0:x1]
    return CanvasMask(out)


def crop_paste_white(image: RgbImage, mask: CanvasMask) -> RgbImage:
    """Keep image pixels where mask=1 and paste pure white elsewhere."""
    if (image.height, image.width) != (mask.height, mask.width):
        raise ShapeError(
            f"image {image.height}x{image.width} vs mask {mask.height}x{mask.width}"
        )
    m = mask.data[:, :, None].astype(np.float32)
    return RgbImage(image.data * m + (1.0 - m))


def downsample_mask(mask: CanvasMask, factor: int) -> CanvasMask:
    """Block-vote downsample: output pixel is 1 iff its block mean >= 0.5."""
    if factor < 1:
        raise ParameterError("factor must be a positive integer")
    if factor == 1:
        return CanvasMask(mask.data.copy())
    h, w = mask.data.shape
    if h % factor or w % factor:
        raise ShapeError(f"factor {factor} does not divide mask shape {h}x{w}")
    blocks = mask.data.reshape(h // factor, factor, w // factor, factor)
    means = blocks.mean(axis=(1, 3))
    return CanvasMask((means >= 0.5).astype(np.uint8))


# --- PNG interchange -------------------------------------------------------
# Masks: 8-bit single-channel, 0 = background, 255 = foreground; any other
# value is rejected. Alpha and RGB use the linear value/255 mapping.

def save_mask_png(mask: CanvasMask, path) -> None:
    Image.fromarray(mask.data * np.uint8(255), mode="L").save(Path(path), format="PNG")


def load_mask_png(path) -> CanvasMask:
    arr = np.asarray(Image.open(Path(path)).convert("L"))
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ParameterError(
            f"mask PNG {path} must contain only 0 and 255; "
            f"first bad pixel at (row={r}, col={c}) value={arr[r, c]}"
        )
    return CanvasMask((arr == 255).astype(np.uint8))


def save_alpha_png(alpha: AlphaMask, path) -> None:
    q = np.clip(np.round(alpha.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="L").save(Path(path), format="PNG")


def load_alpha_png(path) -> AlphaMask:
    arr = np.asarray(Image.open(Path(path)).convert("L"), dtype=np.float32)
    return AlphaMask(arr / 255.0)


def save_image_png(image: RgbImage, path) -> None:
    q = np.clip(np.round(image.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(Path(path), format="PNG")


def load_image_png(path) -> RgbImage:
    arr = np.asarray(Image.open(Path(path)).convert("RGB"), dtype=np.float32)
    return RgbImage(arr / 255.0)


def save_rgba_png(image: RgbImage, alpha: AlphaMask, path) -> None:
    if (image.height, image.width) != (alpha.height, alpha.width):
        raise ShapeError("image and alpha dimensions differ")
    rgb = np.clip(np.round(image.data * 255.0), 0, 255).astype(np.uint8)
    a = np.clip(np.round(alpha.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.dstack([rgb, a]), mode="RGBA").save(Path(path), format="PNG")
