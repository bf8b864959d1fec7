"""Mask-conditioned noise-prediction UNet with partitioned attention.

The network runs on 4x16x16 latents with the binary canvas mask concatenated
as a fifth input channel, downsamples twice, and applies partitioned self-
and cross-attention at the 8x8 and 4x4 resolutions. A joint mode processes a
reference/target latent pair whose self-attention tokens span both halves,
which is how style information propagates during effect transfer; the halves
stay separate for every convolution so each keeps its own zero padding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .canvas import CanvasMask
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DivergenceError, ParameterError, ShapeError
from .layers import (
    CrossAttentionBlock,
    PositionwiseGroupNorm,
    ResBlock,
    SelfAttentionBlock,
    downsample_mask_batch,
    timestep_embedding,
)
from .rng import substream
from .schedule import NoiseSchedule, make_schedule


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 64
    latent_channels: int = 4
    latent_size: int = 16
    mask_size: int = 64
    n_heads: int = 4
    n_classes: int = 8
    temb_dim: int = 128
    conv_kernel_size: int = 3  # 1 ablates spatial conv mixing (test configuration)

    @property
    def channels(self) -> tuple[int, int, int]:
        c = self.base_channels
        return c, (3 * c) // 2, 2 * c


class DenoiserModel(nn.Module):
    """Toy UNet noise predictor; weights live in plain nn layers.

    The class embedding table has n_classes + 1 rows; the final row is the
    null class used both for classifier-free guidance and for background
    routing in cross-attention.
    """

    def __init__(self, config: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = config
        self.schedule: NoiseSchedule = make_schedule()
        c0, c1, c2 = config.channels
        k = config.conv_kernel_size
        pad = k // 2
        td = config.temb_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td)
        )
        self.class_emb = nn.Embedding(config.n_classes + 1, td)

        self.conv_in = nn.Conv2d(config.latent_channels + 1, c0, k, padding=pad)
        self.down0 = nn.Conv2d(c0, c1, k, padding=pad, stride=2)
        self.res1 = ResBlock(c1, c1, td, k)
        self.self1 = SelfAttentionBlock(c1, config.n_heads)
        self.cross1 = CrossAttentionBlock(c1, config.n_heads, td)
        self.down1 = nn.Conv2d(c1, c2, k, padding=pad, stride=2)
        self.res2 = ResBlock(c2, c2, td, k)
        self.self2 = SelfAttentionBlock(c2, config.n_heads)
        self.cross2 = CrossAttentionBlock(c2, config.n_heads, td)
        self.mid = ResBlock(c2, c2, td, k)
        self.up_res2 = ResBlock(2 * c2, c2, td, k)
        self.up_self2 = SelfAttentionBlock(c2, config.n_heads)
        self.up_cross2 = CrossAttentionBlock(c2, config.n_heads, td)
        self.up_conv1 = nn.Conv2d(c2, c1, k, padding=pad)
        self.up_res1 = ResBlock(2 * c1, c1, td, k)
        self.up_self1 = SelfAttentionBlock(c1, config.n_heads)
        self.up_cross1 = CrossAttentionBlock(c1, config.n_heads, td)
        self.up_conv0 = nn.Conv2d(c1, c0, k, padding=pad)
        self.up_res0 = ResBlock(2 * c0, c0, td, k)
        self.norm_out = PositionwiseGroupNorm(c0)
        self.conv_out = nn.Conv2d(c0, config.latent_channels, k, padding=pad)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, z: torch.Tensor, t: torch.Tensor, class_idx: torch.Tensor,
                cond_mask: torch.Tensor, *, attn_group: int = 1,
                use_saa: bool = True) -> torch.Tensor:
        """Predict eps for a batch.

        Args:
            z: (B, latent_channels, 16, 16) latents.
            t: (B,) integer training timesteps.
            class_idx: (B,) class indices; n_classes selects the null class.
            cond_mask: (B, 64, 64) binary canvas masks.
            attn_group: adjacent batch items fused into one self-attention
                token set (2 for reference/target pairs).
            use_saa: partition routing on; off reproduces plain attention.
        """
        cfg = self.config
        b = z.shape[0]
        if z.shape[1:] != (cfg.latent_channels, cfg.latent_size, cfg.latent_size):
            raise ShapeError(f"latent must be (B, {cfg.latent_channels}, "
                             f"{cfg.latent_size}, {cfg.latent_size}), got {tuple(z.shape)}")
        if cond_mask.shape != (b, cfg.mask_size, cfg.mask_size):
            raise ShapeError(f"cond_mask must be (B, {cfg.mask_size}, {cfg.mask_size}),"
                             f" got {tuple(cond_mask.shape)}")
        mask = cond_mask.to(z.dtype)
        m16 = downsample_mask_batch(mask, cfg.mask_size // 16)
        m8 = downsample_mask_batch(mask, cfg.mask_size // 8)
        m4 = downsample_mask_batch(mask, cfg.mask_size // 4)

        temb = self.time_mlp(timestep_embedding(t, cfg.temb_dim, z.dtype))
        prompt = self.class_emb(class_idx)
        null = self.class_emb(
            torch.full_like(class_idx, cfg.n_classes)
        )

        h0 = self.conv_in(torch.cat([z, m16[:, None]], dim=1))
        x = self.down0(h0)
        x = self.res1(x, temb)
        x = self.self1(x, m8, group=attn_group, use_saa=use_saa)
        h1 = self.cross1(x, m8, prompt, null, use_saa=use_saa)
        x = self.down1(h1)
        x = self.res2(x, temb)
        x = self.self2(x, m4, group=attn_group, use_saa=use_saa)
        h2 = self.cross2(x, m4, prompt, null, use_saa=use_saa)
        x = self.mid(h2, temb)
        x = self.up_res2(torch.cat([x, h2], dim=1), temb)
        x = self.up_self2(x, m4, group=attn_group, use_saa=use_saa)
        x = self.up_cross2(x, m4, prompt, null, use_saa=use_saa)
        x = self.up_conv1(F.interpolate(x, scale_factor=2, mode="nearest"))
        x = self.up_res1(torch.cat([x, h1], dim=1), temb)
        x = self.up_self1(x, m8, group=attn_group, use_saa=use_saa)
        x = self.up_cross1(x, m8, prompt, null, use_saa=use_saa)
        x = self.up_conv0(F.interpolate(x, scale_factor=2, mode="nearest"))
        x = self.up_res0(torch.cat([x, h0], dim=1), temb)
        return self.conv_out(F.silu(self.norm_out(x)))


def _mask_tensor(mask: CanvasMask, size: int) -> torch.Tensor:
    if (mask.height, mask.width) != (size, size):
        raise ShapeError(f"cond_mask must be {size}x{size}, got {mask.height}x{mask.width}")
    return torch.from_numpy(mask.data.astype(np.float32))


def predict_eps(model: DenoiserModel, z_t: torch.Tensor, t: int, prompt: int,
                cond_mask: CanvasMask, *, use_saa: bool = True) -> torch.Tensor:
    """Single-instance noise prediction; see DenoiserModel.forward."""
    _check_prompt(model, prompt)
    m = _mask_tensor(cond_mask, model.config.mask_size)
    with torch.no_grad():
        out = model(
            z_t[None],
            torch.tensor([int(t)]),
            torch.tensor([int(prompt)]),
            m[None],
            use_saa=use_saa,
        )
    return out[0]


def predict_eps_joint(model: DenoiserModel, z_ref_t: torch.Tensor, z_t: torch.Tensor,
                      t: int, prompt: int, mask_ref: CanvasMask, mask_tgt: CanvasMask,
                      *, use_saa: bool = True,
                      couple_halves: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Joint reference/target prediction with self-attention spanning both.

    Token masks of the two halves are concatenated, so the foreground group
    is the union of both foregrounds. `couple_halves=False` is a test hook
    that reverts to two independent passes inside one call.
    """
    _check_prompt(model, prompt)
    size = model.config.mask_size
    m = torch.stack([_mask_tensor(mask_ref, size), _mask_tensor(mask_tgt, size)])
    z = torch.stack([z_ref_t, z_t])
    with torch.no_grad():
        out = model(
            z,
            torch.tensor([int(t), int(t)]),
            torch.tensor([int(prompt), int(prompt)]),
            m,
            attn_group=2 if couple_halves else 1,
            use_saa=use_saa,
        )
    return out[0], out[1]


def _check_prompt(model: DenoiserModel, prompt: int) -> None:
    if not (0 <= int(prompt) <= model.config.n_classes):
        raise ParameterError(
            f"prompt {prompt} outside [0, {model.config.n_classes}] "
            "(the top index is the null class)"
        )


def compute_loss(model: DenoiserModel, batch, rng_seed: int) -> torch.Tensor:
    """Eps-prediction MSE on a batch with seeded per-item draws.

    Each item samples its own uniform timestep and Gaussian noise from the
    seeded stream and independently drops its prompt to the null class with
    probability 0.1 for classifier-free guidance.
    """
    if not batch:
        raise ParameterError("training batch must be non-empty")
    rng = substream(rng_seed, "denoiser-step")
    dtype = next(model.parameters()).dtype
    t_train = model.schedule.t_train
    zs, ts, cls, masks, eps = [], [], [], [], []
    for z0, prompt, mask in batch:
        _check_prompt(model, prompt)
        ts.append(int(rng.integers(0, t_train)))
        eps.append(torch.from_numpy(
            rng.standard_normal(tuple(z0.shape), dtype=np.float64)).to(dtype))
        drop = rng.random() < 0.1
        cls.append(model.config.n_classes if drop else int(prompt))
        zs.append(z0.to(dtype))
        masks.append(_mask_tensor(mask, model.config.mask_size).to(dtype))
    z0b = torch.stack(zs)
    epsb = torch.stack(eps)
    tb = torch.tensor(ts)
    ab = torch.tensor(model.schedule.alpha_bars[ts], dtype=dtype)
    z_t = ab.sqrt()[:, None, None, None] * z0b + (1 - ab).sqrt()[:, None, None, None] * epsb

    pred = model(z_t, tb, torch.tensor(cls), torch.stack(masks))
    return F.mse_loss(pred, epsb)


def training_step(model: DenoiserModel, batch, rng_seed: int, lr: float,
                  momentum: float = 0.0,
                  momentum_state: dict[str, torch.Tensor] | None = None) -> float:
    """One gradient-descent update on the eps-prediction loss.

    Raises DivergenceError on a non-finite loss before any weights change.
    """
    loss = compute_loss(model, batch, rng_seed)
    if not torch.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss.item()}")
    model.zero_grad(set_to_none=True)
    loss.backward()
    sgd_update(model, lr, momentum, momentum_state)
    return float(loss.item())


def sgd_update(model: nn.Module, lr: float, momentum: float,
               state: dict[str, torch.Tensor] | None) -> None:
    """In-place gradient-descent update with optional heavy-ball momentum."""
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.grad is None:
                continue
            g = p.grad
            if momentum > 0 and state is not None:
                buf = state.get(name)
                if buf is None:
                    buf = torch.zeros_like(p)
                    state[name] = buf
                buf.mul_(momentum).add_(g)
                g = buf
            p.add_(g, alpha=-lr)


# --- checkpoint glue ---------------------------------------------------------

def model_tensors(model: nn.Module, prefix: str, config) -> dict[str, np.ndarray]:
    """Named-tensor view of a model plus its scalar config entries."""
    out: dict[str, np.ndarray] = {}
    for field, value in asdict(config).items():
        out[f"config.{field}"] = np.float32(value)
    for name, p in model.state_dict().items():
        out[f"{prefix}.{name}"] = p.detach().numpy().astype(np.float32)
    return out


def restore_model(model: nn.Module, prefix: str,
                  tensors: dict[str, np.ndarray]) -> dict[str, torch.Tensor]:
    """Load `prefix.*` weights into the model; returns any momentum buffers."""
    state = {k[len(prefix) + 1:]: torch.from_numpy(v.copy())
             for k, v in tensors.items() if k.startswith(prefix + ".")}
    model.load_state_dict(state)
    return {k[len("opt.momentum."):]: torch.from_numpy(v.copy())
            for k, v in tensors.items() if k.startswith("opt.momentum.")}


def config_from_tensors(config_cls, tensors: dict[str, np.ndarray]):
    import dataclasses
    kwargs = {}
    for f in dataclasses.fields(config_cls):
        key = f"config.{f.name}"
        if key in tensors:
            kwargs[f.name] = int(tensors[key])
    return config_cls(**kwargs)


def save_denoiser(model: DenoiserModel, path,
                  momentum_state: dict[str, torch.Tensor] | None = None) -> None:
    tensors = model_tensors(model, "denoiser", model.config)
    if momentum_state:
        for name, buf in momentum_state.items():
            tensors[f"opt.momentum.{name}"] = buf.detach().numpy().astype(np.float32)
    save_checkpoint(path, tensors)


def load_denoiser(path) -> tuple[DenoiserModel, dict[str, torch.Tensor]]:
    tensors = load_checkpoint(path)
    model = DenoiserModel(config_from_tensors(DenoiserConfig, tensors))
    momentum = restore_model(model, "denoiser", tensors)
    return model, momentum
