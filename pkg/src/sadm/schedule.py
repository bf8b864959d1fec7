"""Diffusion noise schedule and the deterministic DDIM sampler pieces.

The schedule is a linear-beta table over T_train steps with an inference
ladder of uniformly strided training timesteps. Noise strength selects how
much of the ladder a regeneration run traverses: strength 0 keeps the input
untouched, strength 1 starts from pure noise at the top of the ladder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ParameterError, ShapeError

BETA_START = 1e-4
BETA_END = 2e-2
DEFAULT_T_TRAIN = 1000
DEFAULT_INFERENCE_STEPS = 50


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta/alpha-bar tables plus the inference timestep ladder."""

    t_train: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    inference_steps: int
    ladder: np.ndarray = field(repr=False)  # ascending training timesteps, len == inference_steps

    def alpha_bar(self, t: int) -> float:
        """alpha_bar at training timestep t, with the t = -1 convention of 1."""
        if t == -1:
            return 1.0
        if not (0 <= t < self.t_train):
            raise ParameterError(f"timestep {t} outside [0, {self.t_train})")
        return float(self.alpha_bars[t])


def make_schedule(t_train: int = DEFAULT_T_TRAIN,
                  inference_steps: int = DEFAULT_INFERENCE_STEPS) -> NoiseSchedule:
    """Build the linear-beta schedule and its inference ladder.

    Betas run linearly from 1e-4 to 2e-2; the ladder contains
    floor(t_train * i / inference_steps) for i = 0..inference_steps-1,
    ascending, which is strictly increasing whenever
    inference_steps <= t_train.
    """
    if t_train < 1 or inference_steps < 1 or inference_steps > t_train:
        raise ParameterError(
            f"need 1 <= inference_steps <= t_train, got {inference_steps}, {t_train}"
        )
    betas = np.linspace(BETA_START, BETA_END, t_train, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    ladder = np.unique(
        (t_train * np.arange(inference_steps, dtype=np.int64)) // inference_steps
    )
    return NoiseSchedule(
        t_train=t_train,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        inference_steps=int(len(ladder)),
        ladder=ladder,
    )


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def forward_noise(z0: torch.Tensor, t: int, eps: torch.Tensor,
                  schedule: NoiseSchedule) -> torch.Tensor:
    """Noise a clean latent to timestep t: sqrt(ab)*z0 + sqrt(1-ab)*eps."""
    _check_same_shape(z0, eps, "z0 vs eps")
    ab = schedule.alpha_bar(int(t))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def strength_to_start(strength: float, schedule: NoiseSchedule) -> tuple[int, int]:
    """Map a noise strength to (start_index, t_start) on the inference ladder.

    start_index = floor(strength * S) is the number of denoising steps that
    will run, covering ladder entries start_index-1 down to 0. t_start is the
    training timestep the initial latent is noised to (the highest ladder
    entry visited), or -1 when strength is 0 and the sampler is a no-op.
    A full-strength run starts from a pure standard-normal latent positioned
    at the final (largest) ladder entry.
    """
    if not (0.0 <= strength <= 1.0):
        raise ParameterError(f"strength must be in [0, 1], got {strength}")
    s = schedule.inference_steps
    start_index = min(int(np.floor(strength * s)), s)
    if start_index == 0:
        return 0, -1
    return start_index, int(schedule.ladder[start_index - 1])


def ddim_step(z_t: torch.Tensor, eps_pred: torch.Tensor, t: int, t_prev: int,
              schedule: NoiseSchedule) -> torch.Tensor:
    """One deterministic DDIM update from timestep t to t_prev.

    z0_hat = (z_t - sqrt(1-ab_t) * eps) / sqrt(ab_t), then re-noise to
    t_prev with the same predicted eps; ab at t_prev = -1 is defined as 1 so
    the final step lands on the clean estimate.
    """
    _check_same_shape(z_t, eps_pred, "z_t vs eps_pred")
    if t_prev != -1 and t_prev > t:
        raise ParameterError(f"t_prev {t_prev} must not exceed t {t}")
    ab_t = schedule.alpha_bar(int(t))
    ab_p = schedule.alpha_bar(int(t_prev))
    z0_hat = (z_t - np.sqrt(1.0 - ab_t) * eps_pred) / np.sqrt(ab_t)
    return np.sqrt(ab_p) * z0_hat + np.sqrt(1.0 - ab_p) * eps_pred


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free guidance: uncond + scale * (cond - uncond)."""
    _check_same_shape(eps_cond, eps_uncond, "eps_cond vs eps_uncond")
    return eps_uncond + scale * (eps_cond - eps_uncond)


def ladder_pairs(schedule: NoiseSchedule, start_index: int) -> list[tuple[int, int]]:
    """(t, t_prev) pairs for the denoising steps of a run starting at start_index.

    Visits ladder entries start_index-1 .. 0 in descending timestep order;
    the final pair steps to t_prev = -1 (the clean latent).
    """
    if not (0 <= start_index <= schedule.inference_steps):
        raise ParameterError(f"start_index {start_index} outside [0, {schedule.inference_steps}]")
    ts = [int(schedule.ladder[i]) for i in range(start_index - 1, -1, -1)]
    return [(t, ts[i + 1] if i + 1 < len(ts) else -1) for i, t in enumerate(ts)]
