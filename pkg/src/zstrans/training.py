"""Alternating optimization: critic phases, encoder/generator phases,
learning-rate schedule, loss logging, checkpointing.

Each iteration runs two independent steps on two independently sampled
seen-side pair batches:

- the semantic step trains the feature critic (n_critic updates with a
  gradient penalty conditioned on the target attributes) and then the
  two feature encoders plus the classifier in one joint update;
- the translation step trains the patch critic (n_critic updates with
  feature matching and a penalty) and then the content encoder and
  generator jointly.

Gradient routing guarantees, enforced here and asserted by tests:
vision/attribute encoder and classifier parameters never move in the
translation step; content encoder, generator, and patch critic never
move in the semantic step.  The classifier's weights are detached when
encoders train through it, so the classifier itself learns only from
the vision branch at unit weight.  Vision-encoder outputs consumed by
the translation step (style inputs and feature-match targets) are
detached constants.

All randomness (batch draws, noise vectors, penalty mixes) uses seeds
derived from (run seed, iteration, purpose), so resuming from a
checkpoint reproduces an uninterrupted run bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import NetConfig, TrainConfig
from .data import DomainDataset, PairBatch, apply_m_limit, sample_pair_batch
from .losses import (LossReport, compose_objectives, gradient_penalty,
                     loss_cls, loss_gan_d, loss_gan_s, loss_mut, loss_rec)
from .networks import ModelBundle, build_bundle
from .seeding import derive_seed


@dataclass
class TrainState:
    """Mutable loop state: the bundle, position, and running averages."""

    bundle: ModelBundle
    train_config: TrainConfig
    iteration: int = 0
    seed: int = 0
    running: dict[str, float] = field(default_factory=dict)
    _count: int = 0

    def update_running(self, report: LossReport) -> None:
        self._count += 1
        for k, v in report.as_dict().items():
            prev = self.running.get(k, 0.0)
            self.running[k] = prev + (v - prev) / self._count


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """Constant lr through the main phase, then stepwise-linear decay to
    zero over decay_total_iters, stepping every decay_every iterations."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    if iteration <= cfg.total_iters or cfg.decay_total_iters <= 0:
        return cfg.lr
    steps_done = (iteration - cfg.total_iters) // cfg.decay_every
    frac = 1.0 - steps_done * cfg.decay_every / cfg.decay_total_iters
    return max(0.0, cfg.lr * frac)


def set_lr(bundle: ModelBundle, lr: float) -> None:
    for opt in bundle.optimizers.values():
        for group in opt.param_groups:
            group["lr"] = lr


def _randn(shape: tuple[int, ...], seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed % (2 ** 63))
    return torch.randn(shape, generator=gen)


def batch_tensors(batch: PairBatch) -> tuple[torch.Tensor, ...]:
    """PairBatch -> (x1, l1, a1, x2, l2, a2) torch tensors, images NCHW."""
    def images(arr):
        return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()
    s, t = batch.source, batch.target
    return (images(s.images), torch.from_numpy(s.labels), torch.from_numpy(s.attributes),
            images(t.images), torch.from_numpy(t.labels), torch.from_numpy(t.attributes))


def _check_finite(terms: dict[str, float], iteration: int, step_name: str) -> None:
    import math
    bad = [k for k, v in terms.items() if not math.isfinite(v)]
    if bad:
        raise RuntimeError(
            f"non-finite loss terms {bad} in {step_name} at iteration {iteration}")


def step_semantic(state: TrainState, batch: PairBatch) -> dict[str, float]:
    """Feature-critic phase then joint encoder/classifier update.

    Returns the raw term values this step is responsible for:
    gan_s, cls_v, cls_a, gp_s (ablated terms reported as 0.0).
    """
    bundle = state.bundle
    cfg = state.train_config
    w = cfg.weights
    _, _, _, x2, l2, a2 = batch_tensors(batch)
    noise_dim = bundle.config.noise_dim
    terms = {"gan_s": 0.0, "cls_v": 0.0, "cls_a": 0.0, "gp_s": 0.0}

    if not cfg.disable_gan_s:
        with torch.no_grad():
            feat_real = bundle.vision_enc(x2)
        for k in range(cfg.n_critic):
            z = _randn((x2.shape[0], noise_dim),
                       derive_seed(state.seed, state.iteration, "z_sem_critic", k))
            with torch.no_grad():
                feat_fake = bundle.attr_enc(a2, z)
            score_real = bundle.feat_critic(feat_real, a2)
            score_fake = bundle.feat_critic(feat_fake, a2)
            gan_s = loss_gan_s(score_real, score_fake)
            gp_s = gradient_penalty(
                bundle.feat_critic, feat_real, feat_fake, condition=a2,
                weight=w.lambda_gp,
                rng_seed=derive_seed(state.seed, state.iteration, "gp_s", k))
            critic_obj = -gan_s + gp_s
            bundle.optimizers["feat_critic"].zero_grad(set_to_none=True)
            critic_obj.backward()
            bundle.optimizers["feat_critic"].step()
            terms["gp_s"] = float(gp_s.detach())

    # joint encoder/classifier phase
    feat_v = bundle.vision_enc(x2)
    z = _randn((x2.shape[0], noise_dim),
               derive_seed(state.seed, state.iteration, "z_sem_enc"))
    feat_a = bundle.attr_enc(a2, z)

    total = feat_v.new_zeros(())
    if not cfg.disable_gan_s:
        gan_s = loss_gan_s(bundle.feat_critic(feat_v, a2),
                           bundle.feat_critic(feat_a, a2))
        total = total + gan_s
        terms["gan_s"] = float(gan_s.detach())
    if not cfg.disable_cls:
        # classifier weights detached: encoders learn through the
        # classifier at weight lambda_c without moving it
        cls_v_enc = loss_cls(bundle.classifier.forward_frozen(feat_v), l2)
        cls_a_enc = loss_cls(bundle.classifier.forward_frozen(feat_a), l2)
        # classifier itself learns from detached vision features only
        cls_c = loss_cls(bundle.classifier(feat_v.detach()), l2)
        total = total + w.lambda_c * (cls_v_enc + cls_a_enc) + cls_c
        terms["cls_v"] = float(cls_v_enc.detach())
        terms["cls_a"] = float(cls_a_enc.detach())

    if total.requires_grad:
        for name in ("vision_enc", "attr_enc", "classifier", "feat_critic"):
            bundle.optimizers[name].zero_grad(set_to_none=True)
        total.backward()
        bundle.optimizers["vision_enc"].step()
        bundle.optimizers["attr_enc"].step()
        if not cfg.disable_cls:
            bundle.optimizers["classifier"].step()
        # feat_critic received gradients from gan_s but is not stepped here

    _check_finite(terms, state.iteration, "step_semantic")
    return terms


def step_translation(state: TrainState, batch: PairBatch) -> dict[str, float]:
    """Patch-critic phase then joint content-encoder/generator update.

    Returns raw terms: mut_r, mut_f, gan_d, rec_s, rec_c, gp_d.  The
    vision encoder is evaluated only under no-grad here; its parameters
    cannot move.
    """
    bundle = state.bundle
    cfg = state.train_config
    w = cfg.weights
    x1, _, _, x2, _, _ = batch_tensors(batch)
    terms = {"mut_r": 0.0, "mut_f": 0.0, "gan_d": 0.0,
             "rec_s": 0.0, "rec_c": 0.0, "gp_d": 0.0}

    with torch.no_grad():
        style_v1 = bundle.vision_enc(x1)
        style_v2 = bundle.vision_enc(x2)
        x12_const = bundle.generator(bundle.content_enc(x1), style_v2)

    for k in range(cfg.n_critic):
        map_real, feat_pred_real = bundle.img_critic(x1)
        map_fake = bundle.img_critic.critic_score(x12_const)
        mut_r = loss_mut(feat_pred_real, style_v1)
        gan_d = loss_gan_d(map_real, map_fake)
        gp_d = gradient_penalty(
            bundle.img_critic.critic_score, x1, x12_const,
            weight=w.lambda_gp,
            rng_seed=derive_seed(state.seed, state.iteration, "gp_d", k))
        critic_obj = w.lambda_m * mut_r - gan_d + gp_d
        bundle.optimizers["img_critic"].zero_grad(set_to_none=True)
        critic_obj.backward()
        bundle.optimizers["img_critic"].step()
        terms["mut_r"] = float(mut_r.detach())
        terms["gp_d"] = float(gp_d.detach())

    # joint content-encoder/generator phase
    content1 = bundle.content_enc(x1)
    x11 = bundle.generator(content1, style_v1)
    rec_s = loss_rec(x1, x11)
    x12 = bundle.generator(content1, style_v2)
    x121 = bundle.generator(bundle.content_enc(x12), style_v1)
    rec_c = loss_rec(x1, x121)
    map_fake, feat_pred_fake = bundle.img_critic(x12)
    mut_f = loss_mut(feat_pred_fake, style_v2)
    with torch.no_grad():
        map_real_const = bundle.img_critic.critic_score(x1)
    gan_d = map_real_const.mean() - map_fake.mean()

    gen_obj = w.lambda_r * (rec_s + rec_c) + w.lambda_m * mut_f + gan_d
    for name in ("content_enc", "generator", "img_critic"):
        bundle.optimizers[name].zero_grad(set_to_none=True)
    gen_obj.backward()
    bundle.optimizers["content_enc"].step()
    bundle.optimizers["generator"].step()
    # img_critic received gradients through map_fake but is not stepped

    terms.update(rec_s=float(rec_s.detach()), rec_c=float(rec_c.detach()),
                 mut_f=float(mut_f.detach()), gan_d=float(gan_d.detach()))
    _check_finite(terms, state.iteration, "step_translation")
    return terms


def train(dataset: DomainDataset, net_config: NetConfig, train_config: TrainConfig,
          out_dir: str | Path, resume_from: str | Path | None = None,
          progress=None) -> tuple[Path, list[dict]]:
    """Run the full loop; returns (final checkpoint path, loss log records).

    Writes ``loss_log.jsonl`` (one record per iteration) and periodic
    checkpoints ``ckpt_<iteration>.ckpt`` plus ``ckpt_final.ckpt`` into
    out_dir.  With ``resume_from``, continues from the stored iteration
    and reproduces exactly what the uninterrupted run would have done.
    """
    train_config.validate()
    dataset = apply_m_limit(dataset, train_config.m_limit)
    n_seen = dataset.split.n_seen
    if n_seen < 2:
        raise ValueError(f"need at least 2 seen domains after m_limit, got {n_seen}")
    if net_config.n_seen_classes is None:
        net_config = replace(net_config, n_seen_classes=n_seen)
    elif net_config.n_seen_classes != n_seen:
        raise ValueError(
            f"config expects {net_config.n_seen_classes} seen classes, "
            f"dataset provides {n_seen}")
    if dataset.attr_dim != net_config.attr_dim:
        raise ValueError(
            f"config attr_dim {net_config.attr_dim} != dataset attribute "
            f"dimension {dataset.attr_dim}")
    if dataset.resolution != net_config.resolution:
        raise ValueError(
            f"config resolution {net_config.resolution} != dataset "
            f"resolution {dataset.resolution}")
    net_config.validate()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        bundle, start_iter, seed = load_checkpoint(resume_from, lr=train_config.lr)
        if seed != train_config.seed:
            raise ValueError(
                f"checkpoint was trained with seed {seed}, config says {train_config.seed}")
        if bundle.config != net_config:
            raise ValueError("checkpoint network configuration differs from the requested one")
    else:
        bundle = build_bundle(net_config, rng_seed=train_config.seed, lr=train_config.lr)
        start_iter = 0

    bundle.train_mode()
    state = TrainState(bundle=bundle, train_config=train_config,
                       iteration=start_iter, seed=train_config.seed)
    run_length = train_config.run_length
    log_path = out_dir / "loss_log.jsonl"
    records: list[dict] = []

    with open(log_path, "a", encoding="utf-8") as log_file:
        for iteration in range(start_iter, run_length):
            state.iteration = iteration
            lr = lr_schedule(iteration, train_config)
            set_lr(bundle, lr)

            sem_batch = sample_pair_batch(
                dataset, "seen", train_config.batch_size,
                derive_seed(train_config.seed, iteration, "batch_sem"))
            tr_batch = sample_pair_batch(
                dataset, "seen", train_config.batch_size,
                derive_seed(train_config.seed, iteration, "batch_tr"))

            terms = step_semantic(state, sem_batch)
            terms.update(step_translation(state, tr_batch))
            report = compose_objectives(terms, train_config.weights)
            bad = report.has_nan()
            if bad:
                raise RuntimeError(
                    f"non-finite loss terms {bad} at iteration {iteration}")
            state.update_running(report)

            record = {"iteration": iteration, "lr": lr, **report.as_dict()}
            records.append(record)
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            if progress is not None:
                progress(iteration, report)

            done = iteration + 1
            if train_config.checkpoint_every > 0 and done % train_config.checkpoint_every == 0 \
                    and done < run_length:
                save_checkpoint(bundle, out_dir / f"ckpt_{done:07d}.ckpt",
                                iteration=done, seed=train_config.seed)
        log_file.flush()

    final_path = out_dir / "ckpt_final.ckpt"
    save_checkpoint(bundle, final_path, iteration=run_length, seed=train_config.seed)
    return final_path, records
