"""Two-stage generation and reference-based effect transfer.

Stage one renders the reference canvas: a full denoising run from pure noise
(coarse pass), then a regeneration refinement that re-noises the white-pasted
coarse image partway and denoises it again, decoding through the alpha-
predicting decoder. Stage two renders every other canvas by (a) initializing
from a partially noised latent of a prior image and (b) re-noising the
reference latent to the current step each iteration and running the joint
forward so self-attention can carry the reference's appearance across; only
the target half's predicted noise drives the update.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .autoencoder import AutoencoderModel, decode_svd, encode
from .canvas import AlphaMask, CanvasMask, RgbImage, crop_paste_white, save_rgba_png
from .denoiser import DenoiserModel, _mask_tensor
from .errors import ParameterError
from .rng import derive_seed, substream
from .schedule import (
    NoiseSchedule,
    cfg_combine,
    ddim_step,
    forward_noise,
    ladder_pairs,
    make_schedule,
    strength_to_start,
)

DEFAULT_CFG_SCALE = 6.0
DEFAULT_STEPS = 50
DEFAULT_STRENGTH_SRM = 0.8
DEFAULT_STRENGTH_SAET_SGM = 0.9
DEFAULT_STRENGTH_SAET_SRM = 0.8


@dataclass(frozen=True)
class EffectResult:
    image: RgbImage
    alpha: AlphaMask
    source_mask: CanvasMask
    prompt: int
    seed: int

    def __post_init__(self):
        dims = (self.source_mask.height, self.source_mask.width)
        if (self.image.height, self.image.width) != dims or \
                (self.alpha.height, self.alpha.width) != dims:
            raise ParameterError("result image/alpha dimensions must match the mask")


@dataclass(frozen=True)
class TransferContext:
    """Reference material for stage two; ref_image is stage-dependent
    (coarse reference for the generation pass, refined for refinement)."""

    ref_mask: CanvasMask
    ref_image: RgbImage
    strength_sgm: float = DEFAULT_STRENGTH_SAET_SGM
    strength_srm: float = DEFAULT_STRENGTH_SAET_SRM

    def __post_init__(self):
        for s in (self.strength_sgm, self.strength_srm):
            if not (0.0 <= s <= 1.0):
                raise ParameterError(f"strength {s} outside [0, 1]")


def _seeded_normal(seed_stream, shape) -> torch.Tensor:
    return torch.from_numpy(seed_stream.standard_normal(shape).astype(np.float32))


def _eps_cfg(denoiser: DenoiserModel, z: torch.Tensor, t: int, prompt: int,
             mask_t: torch.Tensor, cfg_scale: float, use_saa: bool) -> torch.Tensor:
    """Conditional/null prediction pair combined by guidance, batched."""
    null = denoiser.config.n_classes
    with torch.no_grad():
        out = denoiser(
            torch.stack([z, z]),
            torch.tensor([t, t]),
            torch.tensor([int(prompt), null]),
            torch.stack([mask_t, mask_t]),
            use_saa=use_saa,
        )
    return cfg_combine(out[0], out[1], cfg_scale)


def _eps_cfg_joint(denoiser: DenoiserModel, z_ref: torch.Tensor, z_tgt: torch.Tensor,
                   t: int, prompt: int, mref_t: torch.Tensor, mtgt_t: torch.Tensor,
                   cfg_scale: float, use_saa: bool) -> torch.Tensor:
    """Joint-pass guidance for the target half; the reference half is fixed
    content, so guidance applies to the target's noise only."""
    null = denoiser.config.n_classes
    with torch.no_grad():
        out = denoiser(
            torch.stack([z_ref, z_tgt, z_ref, z_tgt]),
            torch.tensor([t] * 4),
            torch.tensor([int(prompt), int(prompt), null, null]),
            torch.stack([mref_t, mtgt_t, mref_t, mtgt_t]),
            attn_group=2,
            use_saa=use_saa,
        )
    return cfg_combine(out[1], out[3], cfg_scale)


def sgm_sample(denoiser: DenoiserModel, ae: AutoencoderModel, mask: CanvasMask,
               prompt: int, seed: int, cfg_scale: float = DEFAULT_CFG_SCALE,
               steps: int = DEFAULT_STEPS, *, use_saa: bool = True) -> RgbImage:
    """Coarse generation: full guided DDIM ladder from pure noise."""
    mask.require_condition()
    schedule = make_schedule(denoiser.schedule.t_train, steps)
    cfg = denoiser.config
    rng = substream(seed, "sgm-init")
    z = _seeded_normal(rng, (cfg.latent_channels, cfg.latent_size, cfg.latent_size))
    mask_t = _mask_tensor(mask, cfg.mask_size)
    for t, t_prev in ladder_pairs(schedule, schedule.inference_steps):
        eps = _eps_cfg(denoiser, z, t, prompt, mask_t, cfg_scale, use_saa)
        z = ddim_step(z, eps, t, t_prev, schedule)
    image, _ = decode_svd(ae, z, mask)
    return image


def srm_refine(denoiser: DenoiserModel, ae: AutoencoderModel, coarse: RgbImage,
               mask: CanvasMask, prompt: int, strength: float = DEFAULT_STRENGTH_SRM,
               seed: int = 0, cfg_scale: float = DEFAULT_CFG_SCALE,
               steps: int = DEFAULT_STEPS, *, use_saa: bool = True) -> EffectResult:
    """Regeneration refinement: re-noise the white-pasted coarse image to the
    strength point and denoise the remaining ladder; decode image + alpha."""
    mask.require_condition()
    schedule = make_schedule(denoiser.schedule.t_train, steps)
    pasted = crop_paste_white(coarse, mask)
    z = encode(ae, pasted)
    start_index, t_start = strength_to_start(strength, schedule)
    if start_index > 0:
        eps0 = _seeded_normal(substream(seed, "srm-init"), tuple(z.shape))
        z = forward_noise(z, t_start, eps0, schedule)
        mask_t = _mask_tensor(mask, denoiser.config.mask_size)
        for t, t_prev in ladder_pairs(schedule, start_index):
            eps = _eps_cfg(denoiser, z, t, prompt, mask_t, cfg_scale, use_saa)
            z = ddim_step(z, eps, t, t_prev, schedule)
    image, alpha = decode_svd(ae, z, mask)
    return EffectResult(image, alpha, mask, int(prompt), int(seed))


def saet_prior(ae: AutoencoderModel, prior_image: RgbImage, strength: float,
               schedule: NoiseSchedule, seed: int) -> tuple[torch.Tensor, int]:
    """Partially noised latent of a prior image plus the ladder start index."""
    z0 = encode(ae, prior_image)
    start_index, t_start = strength_to_start(strength, schedule)
    if start_index == 0:
        return z0, 0
    eps = _seeded_normal(substream(seed, "saet-prior"), tuple(z0.shape))
    return forward_noise(z0, t_start, eps, schedule), start_index


def _saet_denoise(denoiser: DenoiserModel, ae: AutoencoderModel, z: torch.Tensor,
                  start_index: int, z_ref0: torch.Tensor, ref_mask: CanvasMask,
                  tgt_mask: CanvasMask, prompt: int, seed: int, schedule: NoiseSchedule,
                  cfg_scale: float, use_saa: bool, propagate: bool) -> torch.Tensor:
    cfg = denoiser.config
    mref_t = _mask_tensor(ref_mask, cfg.mask_size)
    mtgt_t = _mask_tensor(tgt_mask, cfg.mask_size)
    for step, (t, t_prev) in enumerate(ladder_pairs(schedule, start_index)):
        if propagate:
            eps_ref = _seeded_normal(substream(seed, "ref-noise", step), tuple(z_ref0.shape))
            z_ref_t = forward_noise(z_ref0, t, eps_ref, schedule)
            eps = _eps_cfg_joint(denoiser, z_ref_t, z, t, prompt, mref_t, mtgt_t,
                                 cfg_scale, use_saa)
        else:
            eps = _eps_cfg(denoiser, z, t, prompt, mtgt_t, cfg_scale, use_saa)
        z = ddim_step(z, eps, t, t_prev, schedule)
    return z


def saet_sample(denoiser: DenoiserModel, ae: AutoencoderModel, ctx: TransferContext,
                tgt_mask: CanvasMask, prompt: int, seed: int,
                cfg_scale: float = DEFAULT_CFG_SCALE, steps: int = DEFAULT_STEPS,
                *, use_saa: bool = True, propagate: bool = True) -> RgbImage:
    """Transfer-coupled coarse generation for one target canvas.

    The coarse reference image seeds the noise prior and, at every remaining
    step, is re-noised (fresh draws) to the current level and run jointly
    with the target so self-attention propagates its appearance.
    """
    tgt_mask.require_condition()
    schedule = make_schedule(denoiser.schedule.t_train, steps)
    z, start_index = saet_prior(ae, ctx.ref_image, ctx.strength_sgm, schedule,
                                derive_seed(seed, "saet-sgm"))
    z_ref0 = encode(ae, ctx.ref_image)
    z = _saet_denoise(denoiser, ae, z, start_index, z_ref0, ctx.ref_mask, tgt_mask,
                      prompt, derive_seed(seed, "saet-sgm-loop"), schedule,
                      cfg_scale, use_saa, propagate)
    image, _ = decode_svd(ae, z, tgt_mask)
    return image


def saet_refine(denoiser: DenoiserModel, ae: AutoencoderModel, ctx: TransferContext,
                coarse_tgt: RgbImage, tgt_mask: CanvasMask, prompt: int, seed: int,
                cfg_scale: float = DEFAULT_CFG_SCALE, steps: int = DEFAULT_STEPS,
                *, use_saa: bool = True, propagate: bool = True) -> EffectResult:
    """Transfer-coupled refinement: the prior comes from the target's own
    white-pasted coarse image, propagation from the refined reference."""
    tgt_mask.require_condition()
    schedule = make_schedule(denoiser.schedule.t_train, steps)
    pasted = crop_paste_white(coarse_tgt, tgt_mask)
    z, start_index = saet_prior(ae, pasted, ctx.strength_srm, schedule,
                                derive_seed(seed, "saet-srm"))
    z_ref0 = encode(ae, ctx.ref_image)
    z = _saet_denoise(denoiser, ae, z, start_index, z_ref0, ctx.ref_mask, tgt_mask,
                      prompt, derive_seed(seed, "saet-srm-loop"), schedule,
                      cfg_scale, use_saa, propagate)
    image, alpha = decode_svd(ae, z, tgt_mask)
    return EffectResult(image, alpha, tgt_mask, int(prompt), int(seed))


def select_reference(masks: list[CanvasMask]) -> int:
    """Largest foreground pixel count; ties break to the lowest index."""
    counts = [m.foreground_count for m in masks]
    return int(np.argmax(counts))


def font_effect_generate(denoiser: DenoiserModel, ae: AutoencoderModel,
                         masks: list[CanvasMask], prompt: int, seed: int,
                         cfg_scale: float = DEFAULT_CFG_SCALE, steps: int = DEFAULT_STEPS,
                         strength_srm: float = DEFAULT_STRENGTH_SRM,
                         strength_saet_sgm: float = DEFAULT_STRENGTH_SAET_SGM,
                         strength_saet_srm: float = DEFAULT_STRENGTH_SAET_SRM,
                         *, use_saet: bool = True,
                         use_saa: bool = True) -> list[EffectResult]:
    """Set-to-set mapping over canvases: generate the reference, transfer to
    the rest; results return in input order, reference included.

    With `use_saet` off every canvas is generated independently (the baseline
    used in consistency comparisons). Non-reference results depend only on
    their own mask, the reference pair, the prompt, and the seed.
    """
    if not masks:
        raise ParameterError("need at least one canvas mask")
    ref_idx = select_reference(masks)
    ref_seed = derive_seed(seed, "reference")
    coarse_ref = sgm_sample(denoiser, ae, masks[ref_idx], prompt, ref_seed,
                            cfg_scale, steps, use_saa=use_saa)
    ref_result = srm_refine(denoiser, ae, coarse_ref, masks[ref_idx], prompt,
                            strength_srm, ref_seed, cfg_scale, steps, use_saa=use_saa)

    results: list[EffectResult | None] = [None] * len(masks)
    results[ref_idx] = ref_result
    for i, mask in enumerate(masks):
        if i == ref_idx:
            continue
        tgt_seed = derive_seed(seed, "target", i)
        if use_saet:
            ctx_coarse = TransferContext(masks[ref_idx], coarse_ref,
                                         strength_saet_sgm, strength_saet_srm)
            coarse_i = saet_sample(denoiser, ae, ctx_coarse, mask, prompt, tgt_seed,
                                   cfg_scale, steps, use_saa=use_saa)
            ctx_refined = TransferContext(masks[ref_idx], ref_result.image,
                                          strength_saet_sgm, strength_saet_srm)
            results[i] = saet_refine(denoiser, ae, ctx_refined, coarse_i, mask, prompt,
                                     tgt_seed, cfg_scale, steps, use_saa=use_saa)
        else:
            coarse_i = sgm_sample(denoiser, ae, mask, prompt, tgt_seed,
                                  cfg_scale, steps, use_saa=use_saa)
            results[i] = srm_refine(denoiser, ae, coarse_i, mask, prompt,
                                    strength_srm, tgt_seed, cfg_scale, steps,
                                    use_saa=use_saa)
    return results  # type: ignore[return-value]


def save_effect_result(result: EffectResult, png_path, sidecar: dict | None = None) -> None:
    """RGBA PNG (alpha = predicted layer) plus a JSON sidecar record."""
    png_path = Path(png_path)
    save_rgba_png(result.image, result.alpha, png_path)
    record = {"seed": result.seed, "prompt": result.prompt}
    if sidecar:
        record.update(sidecar)
    png_path.with_suffix(".json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
