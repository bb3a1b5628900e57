"""Dataset ingestion, seen/unseen splits, and cross-domain pair sampling.

On-disk layout::

    root/images/<class>/<name>.png|.jpg      image files
    root/attributes/<class>/<name>.vec       one attribute vector per image
    root/splits/seen.txt                     one class name per line (UTF-8, LF)
    root/splits/unseen.txt
    root/factors.jsonl                       synthetic datasets only

A ``.vec`` file is raw binary: 4-byte magic ``ZSTA``, a little-endian u32
vector length, then that many little-endian float32 values.

Images are loaded as float32 arrays of shape (H, W, 3) with values in
[0, 1].  Label ids are assigned deterministically: seen classes get
0..M-1 in seen.txt order, unseen classes get M..M+N-1 in unseen.txt
order.  Within each class, files are processed in sorted name order.

Everything here is read-only after construction and safe for concurrent
readers; sampling is a pure function of its seed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

VEC_MAGIC = b"ZSTA"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# Fixed salt for the per-class unseen test carve-out, so the carve is a
# pure function of the directory contents.
_CARVE_SALT = b"unseen-test-carve-v1"


@dataclass
class Sample:
    """One (image, label, attribute) triple."""

    image: np.ndarray      # (H, W, 3) float32 in [0, 1]
    label: int
    attribute: np.ndarray  # (attr_dim,) float32


@dataclass(frozen=True)
class DomainSplit:
    """Disjoint partition of label ids into seen and unseen sets."""

    seen_labels: tuple[int, ...]
    unseen_labels: tuple[int, ...]
    unseen_test_fraction: float = 0.25

    def __post_init__(self):
        if len(self.seen_labels) < 2:
            raise ValueError(f"need at least 2 seen domains, got {len(self.seen_labels)}")
        if len(self.unseen_labels) < 1:
            raise ValueError("need at least 1 unseen domain")
        if set(self.seen_labels) & set(self.unseen_labels):
            raise ValueError("seen and unseen label sets overlap")
        if not 0.0 < self.unseen_test_fraction < 1.0:
            raise ValueError("unseen_test_fraction must lie in (0, 1)")

    @property
    def n_seen(self) -> int:
        return len(self.seen_labels)

    @property
    def n_unseen(self) -> int:
        return len(self.unseen_labels)


@dataclass
class SampleBatch:
    """Stacked arrays for a batch of samples."""

    images: np.ndarray      # (B, H, W, 3) float32
    labels: np.ndarray      # (B,) int64
    attributes: np.ndarray  # (B, attr_dim) float32

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class PairBatch:
    """Aligned source/target batch; position i of source pairs with i of target."""

    source: SampleBatch
    target: SampleBatch

    @property
    def batch_size(self) -> int:
        return len(self.source)


class DomainDataset:
    """In-memory dataset: samples, split, and per-class indexing."""

    def __init__(self, samples: list[Sample], split: DomainSplit,
                 class_names: tuple[str, ...], resolution: int,
                 unseen_test_indices: frozenset[int],
                 factors: list[dict] | None = None):
        self.samples = samples
        self.split = split
        self.class_names = class_names
        self.resolution = resolution
        self.unseen_test_indices = unseen_test_indices
        self.factors = factors
        self.attr_dim = int(samples[0].attribute.shape[0]) if samples else 0
        self.label_indices: dict[int, list[int]] = {}
        for i, s in enumerate(samples):
            self.label_indices.setdefault(s.label, []).append(i)

    def __len__(self) -> int:
        return len(self.samples)

    def label_of(self, class_name: str) -> int:
        try:
            return self.class_names.index(class_name)
        except ValueError:
            raise KeyError(f"unknown class name {class_name!r}") from None

    def indices_for(self, label: int, subset: str = "all") -> list[int]:
        """Sample indices of one class; ``subset`` restricts unseen classes
        to their train/test carve ("all" | "train" | "test")."""
        idx = self.label_indices.get(label, [])
        if subset == "all" or label in self.split.seen_labels:
            return list(idx)
        if subset == "test":
            return [i for i in idx if i in self.unseen_test_indices]
        if subset == "train":
            return [i for i in idx if i not in self.unseen_test_indices]
        raise ValueError(f"unknown subset {subset!r}")

    def pool(self, side: str, subset: str = "all") -> list[int]:
        """All sample indices on one side of the split."""
        if side == "seen":
            labels = self.split.seen_labels
        elif side == "unseen":
            labels = self.split.unseen_labels
        else:
            raise ValueError(f"side must be 'seen' or 'unseen', got {side!r}")
        out: list[int] = []
        for label in labels:
            out.extend(self.indices_for(label, subset=subset))
        return out

    def class_mean_attribute(self, label: int) -> np.ndarray:
        idx = self.label_indices.get(label)
        if not idx:
            raise ValueError(f"no samples for label {label}")
        return np.mean([self.samples[i].attribute for i in idx], axis=0).astype(np.float32)

    def gather(self, indices: list[int] | np.ndarray) -> SampleBatch:
        images = np.stack([self.samples[i].image for i in indices])
        labels = np.asarray([self.samples[i].label for i in indices], dtype=np.int64)
        attrs = np.stack([self.samples[i].attribute for i in indices])
        return SampleBatch(images=images, labels=labels, attributes=attrs)


def write_attribute_vec(path: Path, vector: np.ndarray) -> None:
    vec = np.ascontiguousarray(vector, dtype="<f4")
    if vec.ndim != 1:
        raise ValueError("attribute vector must be 1-D")
    path.write_bytes(VEC_MAGIC + struct.pack("<I", vec.shape[0]) + vec.tobytes())


def read_attribute_vec(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != VEC_MAGIC:
        raise ValueError(f"{path}: not an attribute vector file (bad magic)")
    (length,) = struct.unpack("<I", raw[4:8])
    payload = raw[8:]
    if len(payload) != 4 * length:
        raise ValueError(f"{path}: header says {length} floats, payload has {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32)


def _read_split_file(path: Path) -> list[str]:
    if not path.is_file():
        raise FileNotFoundError(f"missing split file {path}")
    names = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n]
    if len(names) != len(set(names)):
        raise ValueError(f"{path}: duplicate class names")
    return names


def _load_image(path: Path, resolution: int) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert("RGB")
        if img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr


def _carve_test_indices(files: list[str], class_name: str, fraction: float) -> set[int]:
    """Deterministic per-class test carve: positions of test files in `files`."""
    n = len(files)
    if n < 2:
        return set()
    n_test = max(1, min(n - 1, int(n * fraction + 0.5)))
    digest = hashlib.sha256(_CARVE_SALT + class_name.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    order = rng.permutation(n)
    return set(int(i) for i in order[:n_test])


def load_dataset(root_path: str | Path, resolution: int,
                 unseen_test_fraction: float = 0.25) -> DomainDataset:
    """Load a dataset directory; see the module docstring for the layout.

    Hard errors: a label listed in both split files, a missing attribute
    file for an image, or attribute vectors of differing length.
    """
    root = Path(root_path)
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    seen_names = _read_split_file(root / "splits" / "seen.txt")
    unseen_names = _read_split_file(root / "splits" / "unseen.txt")
    both = set(seen_names) & set(unseen_names)
    if both:
        raise ValueError(f"classes present in both split files: {sorted(both)}")
    if len(seen_names) < 2:
        raise ValueError(f"need at least 2 seen classes, got {len(seen_names)}")
    if not unseen_names:
        raise ValueError("unseen split file lists no classes")

    images_root = root / "images"
    listed = set(seen_names) | set(unseen_names)
    on_disk = {p.name for p in images_root.iterdir() if p.is_dir()} if images_root.is_dir() else set()
    missing = listed - on_disk
    if missing:
        raise FileNotFoundError(f"split files reference missing class directories: {sorted(missing)}")
    unlisted = on_disk - listed
    if unlisted:
        raise ValueError(f"class directories not referenced by any split file: {sorted(unlisted)}")

    class_names = tuple(seen_names + unseen_names)
    samples: list[Sample] = []
    unseen_test: set[int] = set()
    attr_dim: int | None = None
    for label, name in enumerate(class_names):
        class_dir = images_root / name
        files = sorted(p.name for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"class directory contains no images: {class_dir}")
        test_positions = (_carve_test_indices(files, name, unseen_test_fraction)
                          if name in unseen_names else set())
        for pos, fname in enumerate(files):
            vec_path = root / "attributes" / name / (Path(fname).stem + ".vec")
            if not vec_path.is_file():
                raise FileNotFoundError(f"missing attribute file {vec_path}")
            attribute = read_attribute_vec(vec_path)
            if attr_dim is None:
                attr_dim = attribute.shape[0]
            elif attribute.shape[0] != attr_dim:
                raise ValueError(
                    f"{vec_path}: attribute dimension {attribute.shape[0]} != expected {attr_dim}")
            image = _load_image(class_dir / fname, resolution)
            if pos in test_positions:
                unseen_test.add(len(samples))
            samples.append(Sample(image=image, label=label, attribute=attribute))

    split = DomainSplit(
        seen_labels=tuple(range(len(seen_names))),
        unseen_labels=tuple(range(len(seen_names), len(class_names))),
        unseen_test_fraction=unseen_test_fraction,
    )
    factors_path = root / "factors.jsonl"
    factors = None
    if factors_path.is_file():
        factors = [json.loads(line) for line in factors_path.read_text(encoding="utf-8").splitlines() if line]
    return DomainDataset(samples, split, class_names, resolution, frozenset(unseen_test), factors)


def save_dataset(dataset: DomainDataset, root_path: str | Path) -> None:
    """Write a dataset back out in the standard directory layout.

    Images are stored as 8-bit PNG, so pixel values must already be
    multiples of 1/255 for a bit-exact round trip (synthetic data is
    generated that way).
    """
    root = Path(root_path)
    (root / "splits").mkdir(parents=True, exist_ok=True)
    seen_names = [dataset.class_names[l] for l in dataset.split.seen_labels]
    unseen_names = [dataset.class_names[l] for l in dataset.split.unseen_labels]
    (root / "splits" / "seen.txt").write_text("\n".join(seen_names) + "\n", encoding="utf-8")
    (root / "splits" / "unseen.txt").write_text("\n".join(unseen_names) + "\n", encoding="utf-8")

    counters: dict[int, int] = {}
    for sample in dataset.samples:
        name = dataset.class_names[sample.label]
        idx = counters.get(sample.label, 0)
        counters[sample.label] = idx + 1
        img_dir = root / "images" / name
        vec_dir = root / "attributes" / name
        img_dir.mkdir(parents=True, exist_ok=True)
        vec_dir.mkdir(parents=True, exist_ok=True)
        arr = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(img_dir / f"{idx:05d}.png")
        write_attribute_vec(vec_dir / f"{idx:05d}.vec", sample.attribute)

    if dataset.factors is not None:
        lines = [json.dumps(rec, sort_keys=True) for rec in dataset.factors]
        (root / "factors.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def sample_pair_batch(dataset: DomainDataset, side: str, batch_size: int,
                      rng_seed: int, subset: str = "all") -> PairBatch:
    """Draw an aligned source/target batch uniformly over one side's samples.

    Source and target are independent uniform draws (a pair may share its
    domain, or even its image).  ``subset`` restricts the unseen side to
    its train or test carve.  Reproducible given the seed.
    """
    if batch_size <= 0:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    pool = dataset.pool(side, subset=subset)
    if not pool:
        raise ValueError(f"no samples available on side {side!r} subset {subset!r}")
    rng = np.random.default_rng(rng_seed)
    pool_arr = np.asarray(pool)
    src = pool_arr[rng.integers(0, len(pool_arr), size=batch_size)]
    tgt = pool_arr[rng.integers(0, len(pool_arr), size=batch_size)]
    return PairBatch(source=dataset.gather(src), target=dataset.gather(tgt))


def apply_m_limit(dataset: DomainDataset, m_limit: int | None) -> DomainDataset:
    """Restrict the seen side to its first ``m_limit`` classes, relabelling
    compactly (new seen ids 0..m-1, unseen follow).  Returns the dataset
    unchanged when the limit is absent or not smaller than M."""
    if m_limit is None or m_limit >= dataset.split.n_seen:
        return dataset
    if m_limit < 2:
        raise ValueError("m_limit must keep at least 2 seen classes")
    keep_seen = dataset.split.seen_labels[:m_limit]
    kept = list(keep_seen) + list(dataset.split.unseen_labels)
    relabel = {old: new for new, old in enumerate(kept)}
    samples: list[Sample] = []
    test_idx: set[int] = set()
    factors: list[dict] | None = [] if dataset.factors is not None else None
    for i, s in enumerate(dataset.samples):
        if s.label not in relabel:
            continue
        if i in dataset.unseen_test_indices:
            test_idx.add(len(samples))
        if factors is not None:
            factors.append(dataset.factors[i])
        samples.append(replace(s, label=relabel[s.label]))
    split = DomainSplit(
        seen_labels=tuple(range(m_limit)),
        unseen_labels=tuple(range(m_limit, len(kept))),
        unseen_test_fraction=dataset.split.unseen_test_fraction,
    )
    names = tuple(dataset.class_names[old] for old in kept)
    return DomainDataset(samples, split, names, dataset.resolution, frozenset(test_idx), factors)
