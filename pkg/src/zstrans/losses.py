"""Loss terms and composite objectives.

Every function here is pure and differentiable end to end: no hidden
state, no internal detaching.  Where the training procedure needs a
branch treated as constant (the feature-match targets, the generator
input features), the caller detaches before passing tensors in; that
keeps each function's autodiff behaviour testable against finite
differences on every argument.

Composites follow the seven-network structure: the two feature
encoders share the adversarial feature term and add their own weighted
classification terms; the classifier trains on the vision branch only;
the feature critic maximizes the feature gap (minimizes its negation)
plus its gradient penalty; the content encoder and generator share one
objective of weighted reconstruction, feature-match, and image
adversarial terms; the image critic minimizes weighted feature-match
on real images minus the image gap, plus its penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Mapping

import torch

from .config import LossWeights

TERM_KEYS = ("gan_s", "cls_v", "cls_a", "mut_r", "mut_f",
             "gan_d", "rec_s", "rec_c", "gp_s", "gp_d")
COMPOSITE_KEYS = ("obj_vision_enc", "obj_attr_enc", "obj_classifier",
                  "obj_feat_critic", "obj_content_enc", "obj_generator",
                  "obj_img_critic")


@dataclass
class LossReport:
    """All scalar terms and composite objectives of one step, as floats."""

    gan_s: float = 0.0
    cls_v: float = 0.0
    cls_a: float = 0.0
    mut_r: float = 0.0
    mut_f: float = 0.0
    gan_d: float = 0.0
    rec_s: float = 0.0
    rec_c: float = 0.0
    gp_s: float = 0.0
    gp_d: float = 0.0
    obj_vision_enc: float = 0.0
    obj_attr_enc: float = 0.0
    obj_classifier: float = 0.0
    obj_feat_critic: float = 0.0
    obj_content_enc: float = 0.0
    obj_generator: float = 0.0
    obj_img_critic: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def has_nan(self) -> list[str]:
        """Names of any non-finite entries."""
        import math
        return [k for k, v in self.as_dict().items() if not math.isfinite(v)]


def _require_batch(t: torch.Tensor, name: str) -> None:
    if t.numel() == 0 or t.shape[0] == 0:
        raise ValueError(f"{name}: empty batch")


def loss_gan_s(score_real: torch.Tensor, score_fake: torch.Tensor) -> torch.Tensor:
    """Wasserstein gap on feature-critic scores: mean(real) - mean(fake).

    The critic ascends this (its objective is the negation); both
    feature encoders descend it.
    """
    _require_batch(score_real, "score_real")
    _require_batch(score_fake, "score_fake")
    return score_real.mean() - score_fake.mean()


def loss_cls(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of seen-class logits."""
    _require_batch(logits, "logits")
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(f"batch mismatch: {logits.shape[0]} logits, {labels.shape[0]} labels")
    n_classes = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(
            f"label out of range for {n_classes}-way logits: "
            f"[{int(labels.min())}, {int(labels.max())}]")
    return torch.nn.functional.cross_entropy(logits, labels)


def loss_mut(predicted: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between predicted and target feature batches.

    Pass a detached target when the target branch must receive no
    gradient (the usual case in training).
    """
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(predicted.shape)} vs {tuple(target.shape)}")
    _require_batch(predicted, "predicted")
    return (predicted - target).abs().mean()


def loss_gan_d(score_real: torch.Tensor, score_fake: torch.Tensor) -> torch.Tensor:
    """Wasserstein gap on patch-critic maps, spatial mean then batch mean.

    With equal-shaped maps this equals the mean over all elements of
    real minus the same for fake.
    """
    _require_batch(score_real, "score_real")
    _require_batch(score_fake, "score_fake")
    if score_real.shape[1:] != score_fake.shape[1:]:
        raise ValueError(
            f"map shape mismatch: {tuple(score_real.shape)} vs {tuple(score_fake.shape)}")
    return score_real.mean() - score_fake.mean()


def loss_rec(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Mean absolute reconstruction error over all pixels and channels."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    _require_batch(x, "x")
    return (x - x_hat).abs().mean()


def gradient_penalty(critic: Callable[..., torch.Tensor],
                     real_input: torch.Tensor,
                     fake_input: torch.Tensor,
                     condition: torch.Tensor | None = None,
                     weight: float = 10.0,
                     rng_seed: int = 0) -> torch.Tensor:
    """Two-sided gradient penalty on per-sample random mixes.

    Each sample is mixed as eps*real + (1-eps)*fake with its own
    eps ~ Uniform(0,1) drawn from ``rng_seed``.  The critic may return
    per-sample scalars or spatial maps; maps are averaged over space
    first, matching the adversarial terms.  The gradient is taken with
    respect to the mix only, never the condition.  Returns
    weight * mean((||grad||_2 - 1)^2), differentiable through the
    critic's parameters (double backward).
    """
    if real_input.shape != fake_input.shape:
        raise ValueError(
            f"shape mismatch: {tuple(real_input.shape)} vs {tuple(fake_input.shape)}")
    _require_batch(real_input, "real_input")
    gen = torch.Generator().manual_seed(rng_seed % (2 ** 63))
    eps_shape = (real_input.shape[0],) + (1,) * (real_input.dim() - 1)
    eps = torch.rand(eps_shape, generator=gen, dtype=real_input.dtype)
    mix = (eps * real_input.detach() + (1.0 - eps) * fake_input.detach()).requires_grad_(True)
    scores = critic(mix, condition) if condition is not None else critic(mix)
    if scores.dim() > 1:
        scores = scores.reshape(scores.shape[0], -1).mean(dim=1)
    grads = torch.autograd.grad(scores.sum(), mix, create_graph=True)[0]
    norms = grads.reshape(grads.shape[0], -1).pow(2).sum(dim=1).add(1e-12).sqrt()
    return weight * (norms - 1.0).pow(2).mean()


def compose_objectives(terms: Mapping[str, float | torch.Tensor],
                       w: LossWeights) -> LossReport:
    """Fill a LossReport from raw term values, computing all composites.

    Unknown keys are rejected; missing terms default to zero, which is
    also how ablated terms are reported so the composite identities
    stay exact under ablations.
    """
    unknown = set(terms) - set(TERM_KEYS)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    t = {k: float(terms.get(k, 0.0)) for k in TERM_KEYS}
    translation = (w.lambda_r * (t["rec_s"] + t["rec_c"])
                   + w.lambda_m * t["mut_f"] + t["gan_d"])
    return LossReport(
        **t,
        obj_vision_enc=t["gan_s"] + w.lambda_c * t["cls_v"],
        obj_attr_enc=t["gan_s"] + w.lambda_c * t["cls_a"],
        obj_classifier=t["cls_v"],
        obj_feat_critic=-t["gan_s"] + t["gp_s"],
        obj_content_enc=translation,
        obj_generator=translation,
        obj_img_critic=w.lambda_m * t["mut_r"] - t["gan_d"] + t["gp_d"],
    )
