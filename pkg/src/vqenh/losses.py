"""Training objectives.

The generator minimizes a weighted mix of a least-squares adversarial
term, a perceptual loss over frozen backbone taps, and a feature
matching loss over discriminator activations; the discriminator
minimizes the symmetric least-squares objective. Both expectations are
approximated by batch means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Optional

import torch

from .core import Frame
from .discriminator import PatchDiscriminator
from .errors import ConfigError, InvalidInputError, ShapeError
from .features import FeatureBackbone, TARGET_TAPS

__all__ = [
    "LossBundle",
    "adversarial_g",
    "discriminator_loss",
    "perceptual",
    "feature_matching",
    "generator_total",
    "LossLog",
    "LOSS_LOG_FIELDS",
]


@dataclass(frozen=True)
class LossBundle:
    """All loss components of one step, with the mixing weights used."""

    l_adv: float
    l_vgg: float
    l_fm: float
    l_g_total: float
    l_d: Optional[float] = None
    weights: tuple[float, float] = (10.0, 10.0)


def _check_scores(scores: torch.Tensor, name: str) -> torch.Tensor:
    if scores.numel() == 0:
        raise InvalidInputError(f"{name} score map is empty")
    return scores


def adversarial_g(fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares generator term: mean (score - 1)^2."""
    fake_scores = _check_scores(fake_scores, "fake")
    return ((fake_scores - 1.0) ** 2).mean()


def discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares discriminator term:
    1/2 mean fake^2 + 1/2 mean (real - 1)^2."""
    real_scores = _check_scores(real_scores, "real")
    fake_scores = _check_scores(fake_scores, "fake")
    return 0.5 * (fake_scores ** 2).mean() + 0.5 * ((real_scores - 1.0) ** 2).mean()


def _as_batched_luma(x) -> torch.Tensor:
    if isinstance(x, Frame):
        return torch.from_numpy(x.data.copy()).reshape(1, 1, *x.data.shape)
    if x.dim() == 2:
        return x.reshape(1, 1, *x.shape)
    if x.dim() == 3:
        return x.unsqueeze(0)
    return x


def _mean_abs_per_position(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # L1 over the channel vector at each spatial element, averaged over
    # the M spatial elements, then over the batch
    m = a.shape[-2] * a.shape[-1]
    return (a - b).abs().sum(dim=(1, 2, 3)).div(m).mean()


def perceptual(generated, reference_raw, backbone: FeatureBackbone,
               taps=TARGET_TAPS) -> torch.Tensor:
    """Sum over backbone taps of the per-spatial-element L1 feature gap
    between the raw frame and the generated frame."""
    ga = _as_batched_luma(generated)
    gb = _as_batched_luma(reference_raw)
    if ga.shape != gb.shape:
        raise ShapeError(f"frame shapes differ: {tuple(ga.shape)} vs {tuple(gb.shape)}")
    feats_a = backbone(ga, taps)
    with torch.no_grad():
        feats_b = backbone(gb, taps)
    total = ga.new_zeros(())
    for tap in taps:
        total = total + _mean_abs_per_position(feats_a[tap], feats_b[tap])
    return total


def feature_matching(generated, reference_raw, disc: PatchDiscriminator) -> torch.Tensor:
    """Sum over discriminator layers (every block before the projection)
    of the per-spatial-element L1 activation gap; the real branch is
    detached so gradients flow only through the generated frame."""
    ga = _as_batched_luma(generated)
    gb = _as_batched_luma(reference_raw)
    if ga.shape != gb.shape:
        raise ShapeError(f"frame shapes differ: {tuple(ga.shape)} vs {tuple(gb.shape)}")
    _, feats_a = disc.forward_features(ga)
    with torch.no_grad():
        _, feats_b = disc.forward_features(gb)
    total = ga.new_zeros(())
    for fa, fb in zip(feats_a, feats_b):
        total = total + _mean_abs_per_position(fa, fb.detach())
    return total


def generator_total(l_adv, l_vgg, l_fm, alpha: float = 10.0, beta: float = 10.0,
                    l_d=None) -> LossBundle:
    """Combine components: total = l_adv + alpha * l_vgg + beta * l_fm."""
    if alpha < 0 or beta < 0:
        raise ConfigError(f"loss weights must be non-negative, got alpha={alpha} beta={beta}")
    l_adv = float(l_adv)
    l_vgg = float(l_vgg)
    l_fm = float(l_fm)
    total = l_adv + alpha * l_vgg + beta * l_fm
    return LossBundle(
        l_adv=l_adv, l_vgg=l_vgg, l_fm=l_fm, l_g_total=total,
        l_d=None if l_d is None else float(l_d),
        weights=(float(alpha), float(beta)),
    )


LOSS_LOG_FIELDS = ("step", "l_adv", "l_vgg", "l_fm", "l_g_total", "l_d")


class LossLog:
    """Line-oriented tab-separated loss log for plotting."""

    def __init__(self, stream: IO[str]):
        self.stream = stream
        self.stream.write("\t".join(LOSS_LOG_FIELDS) + "\n")

    def write(self, step: int, bundle: LossBundle) -> None:
        row = (
            str(step),
            f"{bundle.l_adv:.10e}",
            f"{bundle.l_vgg:.10e}",
            f"{bundle.l_fm:.10e}",
            f"{bundle.l_g_total:.10e}",
            "" if bundle.l_d is None else f"{bundle.l_d:.10e}",
        )
        self.stream.write("\t".join(row) + "\n")
