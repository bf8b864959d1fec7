"""Seed-driven training loops with CSV logging and bit-exact resume.

Every step derives its batch indices and its noise draws purely from
(run seed, step index), so a run resumed from a checkpoint at step k replays
steps k.. exactly as the unbroken run would have. The optimizer keeps its
moments per parameter name and stores them inside the checkpoint for the
same reason. Loops optimize with Adam; the single-step gradient-descent
operations remain available on the model modules and share these loss
functions.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import torch

from .autoencoder import (
    AutoencoderModel,
    ae_compute_loss,
    decode_svd,
    encode,
    load_autoencoder,
    save_autoencoder,
)
from .canvas import CanvasMask, RgbImage
from .denoiser import DenoiserModel, compute_loss, load_denoiser, save_denoiser
from .errors import DivergenceError
from .metrics import alpha_mask_iou
from .rng import derive_seed, substream

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LATENT_SCALE_SAMPLE = 256


class AdamState:
    """Per-parameter-name Adam moments; round-trips through checkpoints."""

    def __init__(self, tensors: dict[str, torch.Tensor] | None = None):
        tensors = tensors or {}
        self.step = int(tensors.get("step", torch.zeros(1)).item()) if "step" in tensors else 0
        self.m = {k[2:]: v.clone() for k, v in tensors.items() if k.startswith("m.")}
        self.v = {k[2:]: v.clone() for k, v in tensors.items() if k.startswith("v.")}

    def as_tensors(self) -> dict[str, torch.Tensor]:
        out: dict[str, torch.Tensor] = {"step": torch.tensor([float(self.step)])}
        out.update({f"m.{k}": v for k, v in self.m.items()})
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def update(self, model: torch.nn.Module, lr: float) -> None:
        self.step += 1
        b1, b2 = ADAM_BETAS
        c1 = 1.0 - b1**self.step
        c2 = 1.0 - b2**self.step
        with torch.no_grad():
            for name, p in model.named_parameters():
                if p.grad is None:
                    continue
                g = p.grad
                m = self.m.setdefault(name, torch.zeros_like(p))
                v = self.v.setdefault(name, torch.zeros_like(p))
                m.mul_(b1).add_(g, alpha=1 - b1)
                v.mul_(b2).addcmul_(g, g, value=1 - b2)
                p.addcdiv_(m / c1, (v / c2).sqrt().add_(ADAM_EPS), value=-lr)


def _append_log(log_path, rows) -> None:
    if log_path is None or not rows:
        return
    log_path = Path(log_path)
    new = not log_path.exists()
    with open(log_path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["step", "loss"])
        writer.writerows(rows)


def _pick_batch(items, seed: int, step: int, batch_size: int):
    rng = substream(seed, "batch", step)
    idx = rng.choice(len(items), size=min(batch_size, len(items)), replace=False)
    return [items[int(i)] for i in idx]


def _run_loop(model, items, loss_fn, step_tag: str, steps: int, seed: int,
              batch_size: int, lr: float, opt: AdamState, start_step: int,
              save_fn, log_path, log_every: int = 25) -> None:
    pending = []
    for step in range(start_step, steps):
        batch = _pick_batch(items, seed, step, batch_size)
        loss = loss_fn(model, batch, derive_seed(seed, step_tag, step))
        if not torch.isfinite(loss):
            _append_log(log_path, pending)
            save_fn()  # retain the last finite state
            raise DivergenceError(f"non-finite loss at step {step}")
        model.zero_grad(set_to_none=True)
        loss.backward()
        opt.update(model, lr)
        pending.append((step, float(loss.item())))
        if len(pending) >= log_every:
            _append_log(log_path, pending)
            pending = []
    _append_log(log_path, pending)


def train_autoencoder(triplets, steps: int, seed: int, *, batch_size: int = 32,
                      lr: float = 1e-3, model: AutoencoderModel | None = None,
                      opt: AdamState | None = None, start_step: int = 0,
                      checkpoint_path=None, log_path=None) -> AutoencoderModel:
    """Train (or continue training) the autoencoder on labeled triplets.

    After the final step the latent scale is folded into the weights so the
    encoder emits roughly unit-variance latents for diffusion. On divergence
    the last finite state is saved before the error propagates.
    """
    if model is None:
        torch.manual_seed(derive_seed(seed, "ae-init") % (2**31))
        model = AutoencoderModel()
    opt = opt if opt is not None else AdamState()
    pairs = [(t.image, t.mask) for t in triplets]

    def save_fn():
        if checkpoint_path is not None:
            save_autoencoder(model, checkpoint_path, _opt_tensors(opt))

    _run_loop(model, pairs, ae_compute_loss, "ae-step", steps, seed, batch_size,
              lr, opt, start_step, save_fn, log_path)
    if start_step == 0 and steps > 0:
        _fold_scale_from_data(model, [t.image for t in triplets[:LATENT_SCALE_SAMPLE]])
    save_fn()
    return model


def train_denoiser(encoded, steps: int, seed: int, *, batch_size: int = 16,
                   lr: float = 2e-4, model: DenoiserModel | None = None,
                   opt: AdamState | None = None, start_step: int = 0,
                   checkpoint_path=None, log_path=None) -> DenoiserModel:
    """Train the noise predictor on (latent, class, mask) tuples."""
    if model is None:
        torch.manual_seed(derive_seed(seed, "denoiser-init") % (2**31))
        model = DenoiserModel()
    opt = opt if opt is not None else AdamState()

    def save_fn():
        if checkpoint_path is not None:
            save_denoiser(model, checkpoint_path, _opt_tensors(opt))

    _run_loop(model, encoded, compute_loss, "den-step", steps, seed, batch_size,
              lr, opt, start_step, save_fn, log_path)
    save_fn()
    return model


def _opt_tensors(opt: AdamState) -> dict[str, torch.Tensor]:
    # reuse the checkpoint's momentum namespace for optimizer moments
    return opt.as_tensors()


def resume_autoencoder(checkpoint_path) -> tuple[AutoencoderModel, AdamState]:
    model, buffers = load_autoencoder(checkpoint_path)
    return model, AdamState(buffers)


def resume_denoiser(checkpoint_path) -> tuple[DenoiserModel, AdamState]:
    model, buffers = load_denoiser(checkpoint_path)
    return model, AdamState(buffers)


def _fold_scale_from_data(model: AutoencoderModel, images) -> None:
    if not images:
        return
    with torch.no_grad():
        zs = torch.stack([encode(model, img) for img in images])
    std = float(zs.std())
    if math.isfinite(std) and std > 1e-6:
        model.fold_latent_scale(std)


# --- held-out quality measurements --------------------------------------------

def psnr_in_mask(reference: RgbImage, reconstruction: RgbImage, mask: CanvasMask) -> float:
    """PSNR over mask-interior pixels, range [0, 1] signals."""
    sel = mask.data == 1
    if not sel.any():
        return float("inf")
    mse = float(((reference.data[sel] - reconstruction.data[sel]) ** 2).mean())
    if mse == 0:
        return float("inf")
    return -10.0 * math.log10(mse)


def evaluate_autoencoder(model: AutoencoderModel, triplets) -> dict:
    """Mean in-mask PSNR and alpha IoU over held-out triplets.

    Alpha is predicted under an augmented conditioning mask (the training
    regime) and thresholded at 0.5 against the clean ground truth.
    """
    from .canvas import augment_mask

    psnrs, ious = [], []
    for k, t in enumerate(triplets):
        z = encode(model, t.image)
        rng = substream(1234, "ae-eval", k)
        sigma = float(rng.uniform(1.0, 4.0))
        mode = "expand" if rng.random() < 0.5 else "contract"
        cond = augment_mask(t.mask, sigma, mode)
        rec, alpha = decode_svd(model, z, cond)
        psnrs.append(psnr_in_mask(t.image, rec, t.mask))
        ious.append(alpha_mask_iou(alpha, t.mask))
    return {"psnr": float(np.mean(psnrs)), "iou": float(np.mean(ious)),
            "n": len(triplets)}
