"""Procedural training triplets: (canvas mask, texture board, class label).

Eight parametric texture families stand in for text prompts. Every family
owns a hue band so classes stay separable for the histogram embedder, while
period, phase, angle, and the exact color pair vary per seed, which is what
makes independently generated letters visibly disagree and gives effect
transfer something to fix. Texture colors keep every channel at or below
0.92, so texture pixels are never mistaken for the white background.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .canvas import (
    CanvasMask,
    RgbImage,
    crop_paste_white,
    generate_canvas_mask,
    load_image_png,
    load_mask_png,
    save_image_png,
    save_mask_png,
)
from .errors import ParameterError
from .rng import derive_seed, substream


@dataclass(frozen=True)
class TextureClass:
    id: int
    name: str
    dark: tuple[float, float, float]   # anchor colors; jittered per seed
    light: tuple[float, float, float]


# Anchor pairs sit in distinct cells of the 4-level RGB quantization the
# histogram embedder uses, so classes stay retrievable under +-0.12 jitter.
TEXTURE_CLASSES = (
    TextureClass(0, "stripes", (0.45, 0.08, 0.08), (0.85, 0.20, 0.15)),
    TextureClass(1, "dots", (0.08, 0.20, 0.45), (0.20, 0.45, 0.90)),
    TextureClass(2, "checker", (0.10, 0.40, 0.12), (0.30, 0.85, 0.30)),
    TextureClass(3, "rings", (0.40, 0.10, 0.40), (0.85, 0.30, 0.80)),
    TextureClass(4, "noise_blobs", (0.50, 0.35, 0.10), (0.90, 0.75, 0.20)),
    TextureClass(5, "gradient", (0.10, 0.40, 0.45), (0.25, 0.85, 0.85)),
    TextureClass(6, "bricks", (0.30, 0.15, 0.45), (0.60, 0.35, 0.85)),
    TextureClass(7, "waves", (0.50, 0.22, 0.10), (0.90, 0.55, 0.35)),
)
N_CLASSES = len(TEXTURE_CLASSES)
COLOR_JITTER = 0.12


@dataclass(frozen=True)
class Triplet:
    mask: CanvasMask
    image: RgbImage
    label: int
    seed: int


def texture_class(class_id: int) -> TextureClass:
    if not (0 <= int(class_id) < N_CLASSES):
        raise ParameterError(f"class id {class_id} outside [0, {N_CLASSES})")
    return TEXTURE_CLASSES[int(class_id)]


def _sample_colors(cls: TextureClass, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """The class's dark and light anchors with per-seed jitter, channels <= 0.92."""
    def jit(anchor) -> np.ndarray:
        v = np.asarray(anchor) + rng.uniform(-COLOR_JITTER, COLOR_JITTER, size=3)
        return np.clip(v, 0.03, 0.92).astype(np.float32)

    return jit(cls.dark), jit(cls.light)


def _grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    return x, y


def _two_tone(field: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    return np.where(field[:, :, None], c1[None, None], c2[None, None]).astype(np.float32)


def _blend(t: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)[:, :, None].astype(np.float32)
    return (1.0 - t) * c1[None, None] + t * c2[None, None]


def stripes_texture(width, height, c1, c2, axis: tuple[int, int], period: int,
                    phase: float, duty: float) -> np.ndarray:
    """Hard two-tone bands along integer direction `axis` with integer period."""
    x, y = _grid(width, height)
    s = ((axis[0] * x + axis[1] * y) / period + phase) % 1.0
    return _two_tone(s < duty, c1, c2)


def dots_texture(width, height, c1, c2, period, radius, ox, oy) -> np.ndarray:
    x, y = _grid(width, height)
    u = ((x + ox) % period) - period / 2
    v = ((y + oy) % period) - period / 2
    return _two_tone(u * u + v * v <= radius * radius, c1, c2)


def checker_texture(width, height, c1, c2, period, ox, oy) -> np.ndarray:
    x, y = _grid(width, height)
    par = (np.floor((x + ox) / period) + np.floor((y + oy) / period)) % 2
    return _two_tone(par == 0, c1, c2)


def rings_texture(width, height, c1, c2, period, cx, cy) -> np.ndarray:
    x, y = _grid(width, height)
    r = np.hypot(x - cx, y - cy)
    return _two_tone(np.floor(r / period) % 2 == 0, c1, c2)


def noise_blobs_texture(width, height, c1, c2, cells: int, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.standard_normal((cells, cells))
    # bilinear upsample of the coarse field
    ys = np.linspace(0, cells - 1, height)
    xs = np.linspace(0, cells - 1, width)
    y0 = np.floor(ys).astype(int).clip(0, cells - 2)
    x0 = np.floor(xs).astype(int).clip(0, cells - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    field = ((1 - fy) * (1 - fx) * coarse[np.ix_(y0, x0)]
             + (1 - fy) * fx * coarse[np.ix_(y0, x0 + 1)]
             + fy * (1 - fx) * coarse[np.ix_(y0 + 1, x0)]
             + fy * fx * coarse[np.ix_(y0 + 1, x0 + 1)])
    return _two_tone(field >= np.median(field), c1, c2)


def gradient_texture(width, height, c1, c2, angle: float) -> np.ndarray:
    x, y = _grid(width, height)
    proj = np.cos(angle) * x + np.sin(angle) * y
    t = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-9)
    return _blend(t, c1, c2)


def bricks_texture(width, height, c1, c2, brick_w, brick_h, mortar) -> np.ndarray:
    x, y = _grid(width, height)
    row = np.floor(y / brick_h)
    xs = (x + (row % 2) * (brick_w / 2)) % brick_w
    ys = y % brick_h
    is_mortar = (xs < mortar) | (ys < mortar)
    return _two_tone(~is_mortar, c1, c2)


def waves_texture(width, height, c1, c2, period, angle, amp, period2) -> np.ndarray:
    x, y = _grid(width, height)
    carrier = np.cos(angle) * x + np.sin(angle) * y
    wobble = amp * np.sin(2 * np.pi * (np.cos(angle) * y - np.sin(angle) * x) / period2)
    s = np.sin(2 * np.pi * (carrier + wobble) / period)
    return _blend((1.0 + s) / 2.0, c1, c2)


def render_texture(cls: TextureClass | int, seed: int, width: int, height: int) -> RgbImage:
    """Deterministic full-frame texture from the class's parametric family."""
    if isinstance(cls, (int, np.integer)):
        cls = texture_class(int(cls))
    rng = substream(seed, "texture", cls.id)
    c1, c2 = _sample_colors(cls, rng)
    if cls.name == "stripes":
        axis = [(1, 0), (0, 1), (1, 1), (1, -1)][int(rng.integers(4))]
        arr = stripes_texture(width, height, c1, c2, axis,
                              int(rng.integers(8, 21)), float(rng.random()),
                              float(rng.uniform(0.35, 0.65)))
    elif cls.name == "dots":
        period = float(rng.uniform(9, 18))
        arr = dots_texture(width, height, c1, c2, period,
                           float(rng.uniform(0.22, 0.38)) * period,
                           float(rng.uniform(0, period)), float(rng.uniform(0, period)))
    elif cls.name == "checker":
        arr = checker_texture(width, height, c1, c2, float(rng.uniform(6, 14)),
                              float(rng.uniform(0, 12)), float(rng.uniform(0, 12)))
    elif cls.name == "rings":
        arr = rings_texture(width, height, c1, c2, float(rng.uniform(4, 9)),
                            float(rng.uniform(0.25, 0.75)) * width,
                            float(rng.uniform(0.25, 0.75)) * height)
    elif cls.name == "noise_blobs":
        arr = noise_blobs_texture(width, height, c1, c2, int(rng.integers(5, 9)), rng)
    elif cls.name == "gradient":
        arr = gradient_texture(width, height, c1, c2, float(rng.uniform(0, 2 * np.pi)))
    elif cls.name == "bricks":
        arr = bricks_texture(width, height, c1, c2, float(rng.uniform(14, 24)),
                             float(rng.uniform(7, 12)), float(rng.uniform(1.5, 3.0)))
    else:
        arr = waves_texture(width, height, c1, c2, float(rng.uniform(8, 18)),
                            float(rng.uniform(0, np.pi)), float(rng.uniform(0.5, 3.0)),
                            float(rng.uniform(10, 24)))
    return RgbImage(arr)


MASK_FAMILY_SPLIT = (0.4, 0.2, 0.4)  # ellipse, rectangle, glyphlike
IMAGE_SIZE = 64


def make_triplet(seed: int) -> Triplet:
    """Deterministic triplet: procedural mask, texture pasted onto white, label."""
    rng = substream(seed, "triplet")
    u = rng.random()
    if u < MASK_FAMILY_SPLIT[0]:
        family = "ellipse"
    elif u < MASK_FAMILY_SPLIT[0] + MASK_FAMILY_SPLIT[1]:
        family = "rectangle"
    else:
        family = "glyphlike"
    label = int(rng.integers(0, N_CLASSES))
    mask = generate_canvas_mask(derive_seed(seed, "mask"), IMAGE_SIZE, IMAGE_SIZE, family)
    texture = render_texture(label, derive_seed(seed, "tex"), IMAGE_SIZE, IMAGE_SIZE)
    return Triplet(mask, crop_paste_white(texture, mask), label, seed)


def encode_dataset(triplets, ae) -> list:
    """Precompute (latent, label, mask) tuples with a trained autoencoder."""
    from .autoencoder import encode

    return [(encode(ae, t.image), t.label, t.mask) for t in triplets]


# --- dataset directory layout -------------------------------------------------
# NNNNNN_img.png / NNNNNN_mask.png pairs plus manifest.jsonl

def write_dataset(directory, size: int, seed: int) -> Path:
    """Materialize `size` triplets under `directory`; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for index in range(size):
            t = make_triplet(derive_seed(seed, "dataset", index))
            stem = f"{index:06d}"
            save_image_png(t.image, directory / f"{stem}_img.png")
            save_mask_png(t.mask, directory / f"{stem}_mask.png")
            record = {"index": index, "seed": t.seed, "class_id": t.label,
                      "class_name": TEXTURE_CLASSES[t.label].name}
            fh.write(json.dumps(record) + "\n")
    return manifest


def read_dataset(directory) -> list[Triplet]:
    directory = Path(directory)
    triplets = []
    with open(directory / "manifest.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            stem = f"{rec['index']:06d}"
            image = load_image_png(directory / f"{stem}_img.png")
            mask = load_mask_png(directory / f"{stem}_mask.png")
            triplets.append(Triplet(mask, image, int(rec["class_id"]), int(rec["seed"])))
    return triplets
