"""Evaluation protocols: translation accuracy under a judge classifier,
Frechet feature distance, zero-shot and generalized zero-shot feature
classification, cross-modal alignment, and embedding export.

Accuracy is always average per-class top-k (accuracy computed within
each class, then averaged over classes), reported as a percentage in
[0, 100].  Translated images are scored by a judge: a fresh small
residual classifier trained on the unseen domains' non-test samples,
never on anything the model under test generated.  The judge's
penultimate features also feed the Frechet distance, so desk-scale
distance values are internally comparable but not comparable to
published numbers from other feature extractors.

Every function here is a pure function of (bundle, dataset, seed):
repeated calls agree exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import NetConfig
from .data import DomainDataset, sample_pair_batch
from .networks import ModelBundle, VisionEncoder, translate_attr, translate_vision
from .seeding import derive_seed
from .training import _randn, batch_tensors


@dataclass
class EvalReport:
    """Metric values plus the protocol metadata needed to reproduce them."""

    metrics: dict[str, float]
    protocol: dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"metrics": self.metrics, "protocol": self.protocol},
                          sort_keys=True, indent=2) + "\n"


def per_class_topk(ranked: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Average per-class top-k accuracy, in percent.

    ranked: (n, m) predicted label ids, best first.  labels: (n,).
    Accuracy is computed within each class occurring in ``labels`` and
    averaged over classes, so small classes weigh as much as large ones.
    """
    ranked = np.asarray(ranked)
    labels = np.asarray(labels)
    if ranked.ndim != 2 or ranked.shape[0] != labels.shape[0]:
        raise ValueError(
            f"ranked is {ranked.shape}, labels {labels.shape}: need (n, m) and (n,)")
    if not 1 <= k <= ranked.shape[1]:
        raise ValueError(f"k={k} out of range for {ranked.shape[1]} ranked entries")
    if labels.shape[0] == 0:
        raise ValueError("empty evaluation set")
    hit = (ranked[:, :k] == labels[:, None]).any(axis=1)
    accs = [float(hit[labels == c].mean()) for c in np.unique(labels)]
    return 100.0 * float(np.mean(accs))


def harmonic_mean(u: float, s: float) -> float:
    """H = 2US/(U+S), the balanced summary of unseen/seen accuracy."""
    if u < 0 or s < 0:
        raise ValueError(f"accuracies must be nonnegative, got ({u}, {s})")
    if u + s == 0:
        raise ValueError("harmonic mean undefined for (0, 0)")
    return 2.0 * u * s / (u + s)


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), computed via
    eigendecompositions of symmetrized products; negative eigenvalues
    from finite-sample noise are clamped at zero and the result is
    floored at zero.  Sets with <= dim samples get a ridge added to the
    covariances (with a warning) to keep the fit non-degenerate.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"feature sets must be (n, d) with equal d, got {a.shape} and {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    d = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(d, d)
    cov_b = np.cov(b, rowvar=False).reshape(d, d)
    if min(a.shape[0], b.shape[0]) <= d:
        warnings.warn(
            f"covariance fit from {min(a.shape[0], b.shape[0])} samples in "
            f"{d} dimensions is degenerate; adding ridge 1e-6", stacklevel=2)
        cov_a = cov_a + 1e-6 * np.eye(d)
        cov_b = cov_b + 1e-6 * np.eye(d)

    # sqrt(cov_a) through the symmetric eigendecomposition
    vals_a, vecs_a = np.linalg.eigh(cov_a)
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = root_a @ cov_b @ root_a
    inner = (inner + inner.T) / 2.0
    vals_i = np.linalg.eigvalsh(inner)
    trace_sqrt = float(np.sqrt(np.clip(vals_i, 0.0, None)).sum())

    value = (float(np.sum((mu_a - mu_b) ** 2))
             + float(np.trace(cov_a)) + float(np.trace(cov_b)) - 2.0 * trace_sqrt)
    return max(0.0, value)


class JudgeClassifier(nn.Module):
    """Independent classifier over the unseen domains, used to score
    translated images.  ``label_map[i]`` is the dataset label of judge
    class i."""

    def __init__(self, config: NetConfig, n_classes: int, label_map: list[int]):
        super().__init__()
        self.encoder = VisionEncoder(config)
        self.head = nn.Linear(config.feat_dim, n_classes)
        self.label_map = list(label_map)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x))

    def ranked_dataset_labels(self, x: torch.Tensor) -> np.ndarray:
        """(B, n_classes) dataset-label ids ranked best first."""
        logits = self.forward(x).detach().numpy()
        order = np.argsort(-logits, axis=1, kind="stable")
        return np.asarray(self.label_map)[order]


def train_judge(dataset: DomainDataset, seed: int, epochs: int = 60,
                batch_size: int = 32, lr: float = 1e-3) -> JudgeClassifier:
    """Train the judge on the unseen domains' non-test samples.

    Fully seeded: same (dataset, seed) gives the same judge.
    """
    unseen = sorted(dataset.split.unseen_labels)
    pool = dataset.pool("unseen", subset="train")
    if not pool:
        raise ValueError("no unseen-domain training samples for the judge")
    config = NetConfig.desk(resolution=dataset.resolution)
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "judge_init"))
        judge = JudgeClassifier(config, len(unseen), unseen)
    to_judge = {lab: i for i, lab in enumerate(unseen)}
    batch = dataset.gather(pool)
    images = torch.from_numpy(batch.images).permute(0, 3, 1, 2).contiguous()
    labels = torch.tensor([to_judge[int(l)] for l in batch.labels])

    opt = torch.optim.Adam(judge.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    n = images.shape[0]
    judge.train()
    for epoch in range(epochs):
        rng = np.random.default_rng(derive_seed(seed, "judge_epoch", epoch))
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad(set_to_none=True)
            loss = loss_fn(judge(images[idx]), labels[idx])
            loss.backward()
            opt.step()
    judge.eval()
    return judge


def _encode_images(encode, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    outs = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            outs.append(encode(images[start:start + batch_size]))
    return torch.cat(outs, dim=0)


def eval_translation(bundle: ModelBundle, dataset: DomainDataset,
                     judge: JudgeClassifier, mode: str, n_batches: int = 16,
                     batch_size: int = 16, seed: int = 0) -> EvalReport:
    """Translate random unseen-test pairs and score them with the judge.

    mode "vision": style read from the target image; mode "attribute":
    style synthesized from the target attributes and fresh noise.  Both
    modes consume identical source/target draws for a given seed.
    Reports per-class top-1/top-5 and the Frechet distance between
    judge features of translated and real target images.
    """
    if mode not in ("vision", "attribute"):
        raise ValueError(f"mode must be 'vision' or 'attribute', got {mode!r}")
    bundle.eval_mode()
    judge.eval()
    ranked_all, labels_all = [], []
    feats_fake, feats_real = [], []
    with torch.no_grad():
        for b in range(n_batches):
            pair = sample_pair_batch(dataset, "unseen", batch_size,
                                     derive_seed(seed, "eval_translation", b),
                                     subset="test")
            x1, _, _, x2, l2, a2 = batch_tensors(pair)
            if mode == "vision":
                out = translate_vision(bundle, x1, x2)
            else:
                z = _randn((x1.shape[0], bundle.config.noise_dim),
                           derive_seed(seed, "eval_translation_z", b))
                out = translate_attr(bundle, x1, a2, z)
            ranked_all.append(judge.ranked_dataset_labels(out))
            labels_all.append(l2.numpy())
            feats_fake.append(judge.features(out).numpy())
            feats_real.append(judge.features(x2).numpy())
    ranked = np.concatenate(ranked_all)
    labels = np.concatenate(labels_all)
    n_classes = ranked.shape[1]
    metrics = {
        "top1": per_class_topk(ranked, labels, 1),
        "top5": per_class_topk(ranked, labels, min(5, n_classes)),
        "fid": fid(np.concatenate(feats_fake), np.concatenate(feats_real)),
    }
    return EvalReport(metrics, {
        "protocol": "translation", "mode": mode, "split": "unseen-test",
        "n_samples": int(labels.shape[0]), "seed": seed,
    })


def self_reconstruction_l1(bundle: ModelBundle, dataset: DomainDataset,
                           seed: int = 0, max_images: int = 64) -> float:
    """Mean absolute error of the self path (decode own content with own
    style) over unseen-test images."""
    bundle.eval_mode()
    pool = dataset.pool("unseen", subset="test")
    rng = np.random.default_rng(derive_seed(seed, "selfrec"))
    if len(pool) > max_images:
        pool = list(rng.choice(pool, size=max_images, replace=False))
    batch = dataset.gather(pool)
    x = torch.from_numpy(batch.images).permute(0, 3, 1, 2).contiguous()
    with torch.no_grad():
        errs = []
        for start in range(0, x.shape[0], 16):
            chunk = x[start:start + 16]
            out = translate_vision(bundle, chunk, chunk)
            errs.append(float((chunk - out).abs().mean()))
    return float(np.mean(errs))


def _vision_features(bundle: ModelBundle, dataset: DomainDataset,
                     indices: list[int]) -> tuple[np.ndarray, np.ndarray]:
    batch = dataset.gather(indices)
    images = torch.from_numpy(batch.images).permute(0, 3, 1, 2).contiguous()
    feats = _encode_images(bundle.vision_enc, images).numpy()
    return feats, batch.labels


def _synth_features(bundle: ModelBundle, dataset: DomainDataset, labels: list[int],
                    n_per_class: int, seed: int,
                    class_mean: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Synthesize features from attributes: cycle through the class's
    per-sample attribute vectors (or repeat the class mean when
    ``class_mean`` is set), fresh noise per draw."""
    feats, labs = [], []
    with torch.no_grad():
        for label in labels:
            if class_mean:
                attrs = np.tile(dataset.class_mean_attribute(label),
                                (n_per_class, 1))
            else:
                idx = dataset.label_indices[label]
                attrs = np.stack([dataset.samples[i].attribute
                                  for i in (idx * (n_per_class // len(idx) + 1))[:n_per_class]])
            a = torch.from_numpy(attrs)
            z = _randn((n_per_class, bundle.config.noise_dim),
                       derive_seed(seed, "synth_z", label))
            feats.append(bundle.attr_enc(a, z).numpy())
            labs.extend([label] * n_per_class)
    return np.concatenate(feats), np.asarray(labs, dtype=np.int64)


def _train_softmax(features: np.ndarray, labels: np.ndarray, n_classes: int,
                   seed: int, epochs: int = 200, lr: float = 1e-2) -> nn.Linear:
    """Full-batch softmax regression on fixed features; deterministic."""
    x = torch.from_numpy(np.ascontiguousarray(features, dtype=np.float32))
    y = torch.from_numpy(np.ascontiguousarray(labels))
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        clf = nn.Linear(x.shape[1], n_classes)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    for _ in range(epochs):
        opt.zero_grad(set_to_none=True)
        loss_fn(clf(x), y).backward()
        opt.step()
    return clf


def _ranked_from_logits(clf: nn.Linear, features: np.ndarray,
                        class_ids: list[int]) -> np.ndarray:
    with torch.no_grad():
        logits = clf(torch.from_numpy(
            np.ascontiguousarray(features, dtype=np.float32))).numpy()
    order = np.argsort(-logits, axis=1, kind="stable")
    return np.asarray(class_ids)[order]


def eval_zsl(bundle: ModelBundle, dataset: DomainDataset,
             n_synth_per_class: int, seed: int = 0,
             class_mean_attrs: bool = False) -> EvalReport:
    """Zero-shot protocol: train a softmax classifier on synthesized
    unseen-class features, test on real unseen-test vision features.
    Synthesis conditions on per-image attributes by default;
    ``class_mean_attrs`` switches to the class-mean vector."""
    if n_synth_per_class <= 0:
        raise ValueError("n_synth_per_class must be positive")
    bundle.eval_mode()
    unseen = sorted(dataset.split.unseen_labels)
    feats, labs = _synth_features(bundle, dataset, unseen, n_synth_per_class,
                                  derive_seed(seed, "zsl"),
                                  class_mean=class_mean_attrs)
    to_local = {lab: i for i, lab in enumerate(unseen)}
    clf = _train_softmax(feats, np.asarray([to_local[int(l)] for l in labs]),
                         len(unseen), derive_seed(seed, "zsl_clf"))
    test_idx = dataset.pool("unseen", subset="test")
    test_feats, test_labels = _vision_features(bundle, dataset, test_idx)
    ranked = _ranked_from_logits(clf, test_feats, unseen)
    top1 = per_class_topk(ranked, test_labels, 1)
    return EvalReport({"zsl_top1": top1}, {
        "protocol": "zsl", "n_synth_per_class": n_synth_per_class,
        "n_test": len(test_idx), "seed": seed,
    })


def eval_gzsl(bundle: ModelBundle, dataset: DomainDataset,
              n_synth_per_class: int, seed: int = 0,
              class_mean_attrs: bool = False) -> EvalReport:
    """Generalized protocol: one classifier over seen and unseen classes.

    Training set: synthesized features for unseen classes plus real
    vision features of a per-class 75% carve of the seen samples; the
    held-out 25% provides the seen-side test set.  U and S are each
    per-class top-1 restricted to their side; H is the harmonic mean.
    ``class_mean_attrs`` as in eval_zsl.
    """
    if n_synth_per_class <= 0:
        raise ValueError("n_synth_per_class must be positive")
    bundle.eval_mode()
    seen = sorted(dataset.split.seen_labels)
    unseen = sorted(dataset.split.unseen_labels)
    all_classes = seen + unseen
    to_local = {lab: i for i, lab in enumerate(all_classes)}

    train_idx, eval_idx = [], []
    for label in seen:
        idx = sorted(dataset.label_indices[label])
        rng = np.random.default_rng(derive_seed(seed, "gzsl_seen_carve", label))
        order = rng.permutation(len(idx))
        n_eval = max(1, int(0.25 * len(idx) + 0.5))
        eval_idx.extend(idx[i] for i in order[:n_eval])
        train_idx.extend(idx[i] for i in order[n_eval:])

    seen_feats, seen_labels = _vision_features(bundle, dataset, train_idx)
    synth_feats, synth_labels = _synth_features(bundle, dataset, unseen,
                                                n_synth_per_class,
                                                derive_seed(seed, "gzsl"),
                                                class_mean=class_mean_attrs)
    feats = np.concatenate([seen_feats, synth_feats])
    labels = np.asarray([to_local[int(l)] for l in
                         np.concatenate([seen_labels, synth_labels])])
    clf = _train_softmax(feats, labels, len(all_classes),
                         derive_seed(seed, "gzsl_clf"))

    u_feats, u_labels = _vision_features(bundle, dataset,
                                         dataset.pool("unseen", subset="test"))
    s_feats, s_labels = _vision_features(bundle, dataset, eval_idx)
    u = per_class_topk(_ranked_from_logits(clf, u_feats, all_classes), u_labels, 1)
    s = per_class_topk(_ranked_from_logits(clf, s_feats, all_classes), s_labels, 1)
    return EvalReport(
        {"gzsl_u": u, "gzsl_s": s, "gzsl_h": harmonic_mean(u, s)},
        {"protocol": "gzsl", "n_synth_per_class": n_synth_per_class, "seed": seed})


def cross_modal_retrieval(bundle: ModelBundle, dataset: DomainDataset,
                          seed: int = 0) -> float:
    """For each unseen class, check whether the attribute-side embedding
    (class-mean attribute, one fixed noise vector) lands nearest to that
    class's vision-feature centroid under cosine distance.  Returns the
    percentage of classes retrieved correctly."""
    bundle.eval_mode()
    unseen = sorted(dataset.split.unseen_labels)
    centroids = []
    with torch.no_grad():
        for label in unseen:
            feats, _ = _vision_features(bundle, dataset, dataset.label_indices[label])
            centroids.append(feats.mean(axis=0))
        centroids = np.stack(centroids)
        z = _randn((1, bundle.config.noise_dim), derive_seed(seed, "retrieval_z"))
        hits = 0
        for i, label in enumerate(unseen):
            attr = torch.from_numpy(dataset.class_mean_attribute(label)).unsqueeze(0)
            emb = bundle.attr_enc(attr, z).numpy()[0]
            sim = (centroids @ emb) / (
                np.linalg.norm(centroids, axis=1) * np.linalg.norm(emb) + 1e-12)
            if int(np.argmax(sim)) == i:
                hits += 1
    return 100.0 * hits / len(unseen)


def export_embeddings(bundle: ModelBundle, dataset: DomainDataset, which: str,
                      out_path: str | Path, seed: int = 0,
                      class_mean: bool = False,
                      labels: list[int] | None = None) -> int:
    """Write feature records as JSONL: {"label", "modality", "feat"}.

    which "v": vision features of every selected sample.  which "a":
    attribute features; per sample with fresh noise, or one record per
    class from its mean attribute and a fixed noise vector when
    ``class_mean`` is set.  Returns the record count.
    """
    if which not in ("v", "a"):
        raise ValueError(f"which must be 'v' or 'a', got {which!r}")
    bundle.eval_mode()
    out_path = Path(out_path)
    selected = (sorted(labels) if labels is not None
                else sorted(dataset.label_indices))
    records: list[dict] = []
    with torch.no_grad():
        if which == "a" and class_mean:
            z = _randn((1, bundle.config.noise_dim), derive_seed(seed, "export_z"))
            for label in selected:
                attr = torch.from_numpy(dataset.class_mean_attribute(label)).unsqueeze(0)
                feat = bundle.attr_enc(attr, z).numpy()[0]
                records.append({"label": int(label), "modality": "a",
                                "feat": [float(v) for v in feat]})
        else:
            for label in selected:
                idx = dataset.label_indices[label]
                batch = dataset.gather(idx)
                if which == "v":
                    images = torch.from_numpy(batch.images).permute(0, 3, 1, 2).contiguous()
                    feats = _encode_images(bundle.vision_enc, images).numpy()
                else:
                    a = torch.from_numpy(batch.attributes)
                    z = _randn((a.shape[0], bundle.config.noise_dim),
                               derive_seed(seed, "export_z", label))
                    feats = bundle.attr_enc(a, z).numpy()
                for lab, feat in zip(batch.labels, feats):
                    records.append({"label": int(lab), "modality": which,
                                    "feat": [float(v) for v in feat]})
    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return len(records)
