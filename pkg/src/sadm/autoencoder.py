"""Tiny image autoencoder with a mask-conditioned, alpha-predicting decoder.

The encoder maps a 64x64 RGB board to a 4x16x16 latent. The decoder takes
that latent plus one extra channel holding the (possibly augmented) canvas
mask and emits four channels: linear RGB, clamped to [0, 1] at inference,
and a logistic alpha layer that refines the conditioning mask. Training adds
an MSE term between the predicted alpha and the clean ground-truth mask so
the decoder learns to snap augmented boundaries back onto the content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .canvas import AlphaMask, CanvasMask, RgbImage, augment_mask
from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import config_from_tensors, model_tensors, restore_model, sgd_update
from .errors import DivergenceError, ParameterError, ShapeError
from .layers import ResBlock, downsample_mask_batch
from .rng import substream


@dataclass(frozen=True)
class AutoencoderConfig:
    base_channels: int = 32
    mid_channels: int = 48
    latent_channels: int = 4
    image_size: int = 64
    latent_size: int = 16


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(8, channels)


class AutoencoderModel(nn.Module):
    """Deterministic encoder/decoder pair (no sampling, no KL).

    Both halves enter/leave pixel space through 2x pixel shuffles so the
    expensive convolution stacks run at 16x16 and 32x32 only.
    """

    def __init__(self, config: AutoencoderConfig = AutoencoderConfig()):
        super().__init__()
        self.config = config
        c0, c1, cz = config.base_channels, config.mid_channels, config.latent_channels

        self.enc_in = nn.Conv2d(12, c0, 3, padding=1)           # after 2x pixel-unshuffle
        self.enc_norm0 = _gn(c0)
        self.enc_down = nn.Conv2d(c0, c1, 3, padding=1, stride=2)
        self.enc_res = ResBlock(c1, c1, norm_cls=_gn)
        self.enc_norm1 = _gn(c1)
        self.enc_out = nn.Conv2d(c1, cz, 3, padding=1)

        self.dec_in = nn.Conv2d(cz + 1, c1, 3, padding=1)
        self.dec_res0 = ResBlock(c1, c1, norm_cls=_gn)
        self.dec_res1 = ResBlock(c1, c1, norm_cls=_gn)
        self.dec_up = nn.Conv2d(c1, 4 * c0, 3, padding=1)       # pixel-shuffle to 32x32
        self.dec_norm0 = _gn(c0)
        self.dec_mid = nn.Conv2d(c0, c0, 3, padding=1)
        self.dec_norm1 = _gn(c0)
        self.dec_out = nn.Conv2d(c0, 16, 3, padding=1)          # pixel-shuffle to 4@64

    def encode_batch(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, 64, 64) -> (B, latent_channels, 16, 16)."""
        if images.shape[1:] != (3, self.config.image_size, self.config.image_size):
            raise ShapeError(f"expected (B, 3, {self.config.image_size}, "
                             f"{self.config.image_size}), got {tuple(images.shape)}")
        x = F.pixel_unshuffle(images, 2)
        x = self.enc_down(F.silu(self.enc_norm0(self.enc_in(x))))
        x = self.enc_res(x)
        return self.enc_out(F.silu(self.enc_norm1(x)))

    def decode_batch(self, z: torch.Tensor, cond16: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Raw decode: (B, 3, 64, 64) linear RGB and (B, 64, 64) alpha in [0, 1]."""
        ls = self.config.latent_size
        if z.shape[1:] != (self.config.latent_channels, ls, ls):
            raise ShapeError(f"latent must be (B, {self.config.latent_channels}, {ls}, {ls})")
        if cond16.shape != (z.shape[0], ls, ls):
            raise ShapeError(f"cond16 must be (B, {ls}, {ls}), got {tuple(cond16.shape)}")
        x = self.dec_in(torch.cat([z, cond16[:, None].to(z.dtype)], dim=1))
        x = self.dec_res1(self.dec_res0(x))
        x = F.pixel_shuffle(self.dec_up(x), 2)
        x = self.dec_mid(F.silu(self.dec_norm0(x)))
        x = F.pixel_shuffle(self.dec_out(F.silu(self.dec_norm1(x))), 2)
        return x[:, :3], torch.sigmoid(x[:, 3])

    def fold_latent_scale(self, scale: float) -> None:
        """Rescale so encode outputs shrink by `scale`, decode compensates.

        Folding the normalization into the weights keeps checkpoints
        self-contained: diffusion always sees roughly unit-variance latents.
        """
        if scale <= 0 or not np.isfinite(scale):
            raise ParameterError(f"latent scale must be positive, got {scale}")
        with torch.no_grad():
            self.enc_out.weight.div_(scale)
            self.enc_out.bias.div_(scale)
            self.dec_in.weight[:, : self.config.latent_channels].mul_(scale)


def _image_tensor(image: RgbImage, size: int) -> torch.Tensor:
    if (image.height, image.width) != (size, size):
        raise ShapeError(f"image must be {size}x{size}, got {image.height}x{image.width}")
    return torch.from_numpy(image.data).permute(2, 0, 1)


def _cond16(model: AutoencoderModel, cond_mask: CanvasMask) -> torch.Tensor:
    size = model.config.image_size
    if (cond_mask.height, cond_mask.width) != (size, size):
        raise ShapeError(f"cond_mask must be {size}x{size}")
    m = torch.from_numpy(cond_mask.data.astype(np.float32))[None]
    return downsample_mask_batch(m, size // model.config.latent_size)


def encode(model: AutoencoderModel, image: RgbImage) -> torch.Tensor:
    """Deterministic latent of a 64x64 image."""
    with torch.no_grad():
        return model.encode_batch(_image_tensor(image, model.config.image_size)[None])[0]


def decode_svd(model: AutoencoderModel, z0: torch.Tensor,
               cond_mask: CanvasMask) -> tuple[RgbImage, AlphaMask]:
    """Decode a latent under a conditioning mask into (image, refined alpha)."""
    with torch.no_grad():
        rgb, alpha = model.decode_batch(z0[None], _cond16(model, cond_mask))
    img = RgbImage(rgb[0].clamp(0, 1).permute(1, 2, 0).numpy())
    return img, AlphaMask(alpha[0].numpy())


AUG_SIGMA_RANGE = (1.0, 4.0)
MASK_LOSS_WEIGHT = 1.0


def ae_compute_loss(model: AutoencoderModel, batch, rng_seed: int) -> torch.Tensor:
    """Reconstruction + mask-prediction loss on a batch.

    Per item the decoder conditioning mask is an expand-or-contract
    augmentation of the ground truth with sigma uniform in [1, 4]; the alpha
    target stays the clean mask. The RGB term uses the pre-clamp linear
    output so saturated pixels keep their gradients.
    """
    if not batch:
        raise ParameterError("training batch must be non-empty")
    rng = substream(rng_seed, "ae-step")
    dtype = next(model.parameters()).dtype
    size = model.config.image_size
    imgs, gts, conds = [], [], []
    for image, gt_mask in batch:
        imgs.append(_image_tensor(image, size).to(dtype))
        gts.append(torch.from_numpy(gt_mask.data.astype(np.float64)).to(dtype))
        sigma = float(rng.uniform(*AUG_SIGMA_RANGE))
        mode = "expand" if rng.random() < 0.5 else "contract"
        conds.append(torch.from_numpy(
            augment_mask(gt_mask, sigma, mode).data.astype(np.float64)).to(dtype))
    img_b = torch.stack(imgs)
    gt_b = torch.stack(gts)
    cond16 = downsample_mask_batch(torch.stack(conds), size // model.config.latent_size)

    z = model.encode_batch(img_b)
    rgb, alpha = model.decode_batch(z, cond16)
    return F.mse_loss(rgb, img_b) + MASK_LOSS_WEIGHT * F.mse_loss(alpha, gt_b)


def ae_training_step(model: AutoencoderModel, batch, rng_seed: int, lr: float,
                     momentum: float = 0.0,
                     momentum_state: dict[str, torch.Tensor] | None = None) -> float:
    """One gradient-descent update on the reconstruction + mask loss.

    Raises DivergenceError on a non-finite loss before any weights change.
    """
    loss = ae_compute_loss(model, batch, rng_seed)
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite autoencoder loss {loss.item()}")
    model.zero_grad(set_to_none=True)
    loss.backward()
    sgd_update(model, lr, momentum, momentum_state)
    return float(loss.item())


def save_autoencoder(model: AutoencoderModel, path,
                     momentum_state: dict[str, torch.Tensor] | None = None) -> None:
    tensors = model_tensors(model, "autoencoder", model.config)
    if momentum_state:
        for name, buf in momentum_state.items():
            tensors[f"opt.momentum.{name}"] = buf.detach().numpy().astype(np.float32)
    save_checkpoint(path, tensors)


def load_autoencoder(path) -> tuple[AutoencoderModel, dict[str, torch.Tensor]]:
    tensors = load_checkpoint(path)
    model = AutoencoderModel(config_from_tensors(AutoencoderConfig, tensors))
    momentum = restore_model(model, "autoencoder", tensors)
    return model, momentum
