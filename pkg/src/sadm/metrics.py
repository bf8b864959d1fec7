"""Masked similarity metrics over a pluggable, deterministic embedder.

The default embedder concatenates a 4x4x4 joint RGB histogram (64 dims,
L1-normalized over all pixels) with an 8-bin gradient-magnitude histogram
and an 8-bin gradient-orientation histogram computed by central differences
on the channel-mean image (interior pixels only, orientation weighted by
magnitude and folded into [0, pi)); the 80-dim vector is L2-normalized.
Class prototypes are normalized mean embeddings of labeled members, which
plays the text-embedding role: interior similarity scores prompt adherence,
exterior similarity scores leakage, and pairwise similarity across letters
scores style consistency.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .canvas import CanvasMask, RgbImage, crop_paste_white
from .errors import CoverageError, ParameterError, ShapeError

EMBED_DIM = 80
RGB_BINS = 4
GRAD_BINS = 8


@dataclass(frozen=True)
class Embedder:
    """A deterministic image -> unit-vector map."""

    name: str
    fn: Callable[[RgbImage], np.ndarray]

    def __call__(self, image: RgbImage) -> np.ndarray:
        return self.fn(image)


def histograd_embed(image: RgbImage) -> np.ndarray:
    """Default 80-dim color + gradient histogram embedding."""
    data = image.data.astype(np.float64)

    bins = np.minimum((data * RGB_BINS).astype(np.int64), RGB_BINS - 1)
    flat = bins[:, :, 0] * 16 + bins[:, :, 1] * 4 + bins[:, :, 2]
    rgb_hist = np.bincount(flat.ravel(), minlength=64).astype(np.float64)
    rgb_hist /= rgb_hist.sum()

    gray = data.mean(axis=2)
    gx = (gray[1:-1, 2:] - gray[1:-1, :-2]) / 2.0
    gy = (gray[2:, 1:-1] - gray[:-2, 1:-1]) / 2.0
    mag = np.hypot(gx, gy)

    mag_bins = np.minimum((mag * GRAD_BINS).astype(np.int64), GRAD_BINS - 1)
    mag_hist = np.bincount(mag_bins.ravel(), minlength=GRAD_BINS).astype(np.float64)
    mag_hist /= mag_hist.sum()

    theta = np.mod(np.arctan2(gy, gx), np.pi)
    ori_bins = np.minimum((theta / np.pi * GRAD_BINS).astype(np.int64), GRAD_BINS - 1)
    ori_hist = np.zeros(GRAD_BINS)
    np.add.at(ori_hist, ori_bins.ravel(), mag.ravel())
    total = ori_hist.sum()
    if total > 0:
        ori_hist /= total

    vec = np.concatenate([rgb_hist, mag_hist, ori_hist])
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


HISTOGRAD = Embedder("histograd", histograd_embed)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))


def build_prototypes(embedder: Embedder, dataset, min_members: int = 16) -> dict[int, np.ndarray]:
    """Unit-norm mean embedding per class over labeled triplets.

    `min_members` guards against unrepresentative prototypes; pass 1 in test
    setups that construct singleton classes deliberately.
    """
    groups: dict[int, list[np.ndarray]] = {}
    for item in dataset:
        groups.setdefault(int(item.label), []).append(embedder(item.image))
    prototypes: dict[int, np.ndarray] = {}
    for label, members in sorted(groups.items()):
        if len(members) < min_members:
            raise CoverageError(
                f"class {label} has {len(members)} members, needs >= {min_members}"
            )
        mean = np.mean(members, axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise CoverageError(f"class {label} prototype collapsed to zero")
        prototypes[label] = mean / norm
    return prototypes


def _check_dims(image: RgbImage, mask: CanvasMask) -> None:
    if (image.height, image.width) != (mask.height, mask.width):
        raise ShapeError("image and mask dimensions differ")


def m_sim_int(embedder: Embedder, prototypes: dict[int, np.ndarray],
              image: RgbImage, mask: CanvasMask, class_id: int) -> float:
    """Prompt similarity of the canvas interior; exterior is whited out first."""
    _check_dims(image, mask)
    return cosine(embedder(crop_paste_white(image, mask)), prototypes[int(class_id)])


def m_sim_ext(embedder: Embedder, prototypes: dict[int, np.ndarray],
              image: RgbImage, mask: CanvasMask, class_id: int) -> float:
    """Leakage score of the exterior (interior whited out); lower is better.

    An all-1 mask has an empty exterior; whitening then yields the all-white
    board, so the score degrades gracefully to the white baseline.
    """
    _check_dims(image, mask)
    return cosine(embedder(crop_paste_white(image, mask.complement())),
                  prototypes[int(class_id)])


def style_consistency(embedder: Embedder, images: Sequence[RgbImage]) -> float:
    """Mean pairwise embedding cosine over all unordered image pairs."""
    if len(images) < 2:
        raise ParameterError("style_consistency needs at least 2 images")
    embs = [embedder(img) for img in images]
    vals = [cosine(embs[i], embs[j])
            for i in range(len(embs)) for j in range(i + 1, len(embs))]
    return float(np.mean(vals))


def self_retrieval_rate(embedder: Embedder, prototypes: dict[int, np.ndarray],
                        dataset) -> float:
    """Fraction of items whose nearest prototype is their own class."""
    labels = sorted(prototypes)
    protos = np.stack([prototypes[c] for c in labels])
    hits = 0
    for item in dataset:
        scores = protos @ embedder(item.image)
        hits += labels[int(np.argmax(scores))] == int(item.label)
    return hits / len(dataset)


def distance_to_white(image: RgbImage, region: CanvasMask) -> float:
    """Mean per-pixel, per-channel distance from pure white inside `region`.

    Returns 0 for an empty region.
    """
    _check_dims(image, region)
    sel = region.data == 1
    if not sel.any():
        return 0.0
    return float(np.abs(1.0 - image.data[sel]).mean())


def alpha_mask_iou(alpha, mask: CanvasMask, level: float = 0.5) -> float:
    """IoU of thresholded alpha against a binary mask."""
    pred = alpha.threshold(level).data.astype(bool)
    gt = mask.data.astype(bool)
    union = (pred | gt).sum()
    if union == 0:
        return 1.0
    return float((pred & gt).sum() / union)
