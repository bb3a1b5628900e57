"""Dataset loading, the attribute-vector format, split carving, and the
batch sampler."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zstrans.data import (DomainSplit, _carve_test_indices, apply_m_limit,
                          load_dataset, read_attribute_vec, sample_pair_batch,
                          save_dataset, write_attribute_vec)
from zstrans.synthetic import SyntheticSpec, make_synthetic


def test_vec_roundtrip(tmp_path):
    vec = np.linspace(-2, 3, 17).astype(np.float32)
    path = tmp_path / "a.vec"
    write_attribute_vec(path, vec)
    back = read_attribute_vec(path)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, vec)


def test_vec_rejects_bad_magic(tmp_path):
    path = tmp_path / "b.vec"
    path.write_bytes(b"XXXX" + b"\x00" * 8)
    with pytest.raises(ValueError, match="bad magic"):
        read_attribute_vec(path)


def test_vec_rejects_truncated_payload(tmp_path):
    path = tmp_path / "c.vec"
    write_attribute_vec(path, np.zeros(4, dtype=np.float32))
    data = path.read_bytes()
    path.write_bytes(data[:-4])
    with pytest.raises(ValueError, match="payload"):
        read_attribute_vec(path)


def test_vec_rejects_matrix(tmp_path):
    with pytest.raises(ValueError, match="1-D"):
        write_attribute_vec(tmp_path / "d.vec", np.zeros((2, 3)))


def test_split_validation():
    with pytest.raises(ValueError, match="at least 2 seen"):
        DomainSplit(seen_labels=(0,), unseen_labels=(1,), unseen_test_fraction=0.25)
    with pytest.raises(ValueError, match="at least 1 unseen"):
        DomainSplit(seen_labels=(0, 1), unseen_labels=(), unseen_test_fraction=0.25)
    with pytest.raises(ValueError, match="overlap"):
        DomainSplit(seen_labels=(0, 1), unseen_labels=(1, 2), unseen_test_fraction=0.25)
    with pytest.raises(ValueError, match="fraction"):
        DomainSplit(seen_labels=(0, 1), unseen_labels=(2,), unseen_test_fraction=1.0)


def test_carve_deterministic_and_bounded():
    files = [f"{i:05d}.png" for i in range(40)]
    a = _carve_test_indices(files, "domain_002", 0.25)
    b = _carve_test_indices(files, "domain_002", 0.25)
    assert a == b
    assert len(a) == 10
    assert all(0 <= i < 40 for i in a)
    other = _carve_test_indices(files, "domain_005", 0.25)
    assert a != other  # carve depends on the class identity


def test_carve_keeps_both_sides_nonempty():
    files = ["0.png", "1.png"]
    carved = _carve_test_indices(files, "x", 0.25)
    assert len(carved) == 1  # max(1, ...) but also capped at n-1


def test_dataset_roundtrip_identity(tmp_path, small_dataset):
    root = tmp_path / "ds"
    save_dataset(small_dataset, root)
    loaded = load_dataset(root, small_dataset.resolution)
    assert len(loaded) == len(small_dataset)
    assert loaded.class_names == small_dataset.class_names
    assert loaded.split.seen_labels == small_dataset.split.seen_labels
    assert loaded.split.unseen_labels == small_dataset.split.unseen_labels
    assert loaded.unseen_test_indices == small_dataset.unseen_test_indices
    assert loaded.attr_dim == small_dataset.attr_dim
    for got, want in zip(loaded.samples, small_dataset.samples):
        assert got.label == want.label
        np.testing.assert_array_equal(got.attribute, want.attribute)
        # images were quantized at render time, so the PNG trip is exact
        np.testing.assert_allclose(got.image, want.image, atol=1.0 / 255 / 2)
    assert loaded.factors is not None
    assert len(loaded.factors) == len(small_dataset.factors)


def test_load_missing_split_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="split file"):
        load_dataset(tmp_path, 32)


def test_load_missing_class_dir(tmp_path, small_dataset):
    root = tmp_path / "ds"
    save_dataset(small_dataset, root)
    victim = small_dataset.class_names[0]
    import shutil
    shutil.rmtree(root / "images" / victim)
    with pytest.raises(FileNotFoundError, match=victim):
        load_dataset(root, 32)


def test_load_unlisted_class_dir(tmp_path, small_dataset):
    root = tmp_path / "ds"
    save_dataset(small_dataset, root)
    (root / "images" / "stray_class").mkdir()
    (root / "images" / "stray_class" / "x.png").write_bytes(b"")
    with pytest.raises(ValueError, match="stray_class"):
        load_dataset(root, 32)


def test_load_overlapping_splits(tmp_path, small_dataset):
    root = tmp_path / "ds"
    save_dataset(small_dataset, root)
    seen = (root / "splits" / "seen.txt").read_text().splitlines()
    unseen_file = root / "splits" / "unseen.txt"
    unseen_file.write_text("\n".join([seen[0]] + unseen_file.read_text().splitlines()) + "\n")
    with pytest.raises(ValueError, match="both split files"):
        load_dataset(root, 32)


def test_load_missing_attribute_vec(tmp_path, small_dataset):
    root = tmp_path / "ds"
    save_dataset(small_dataset, root)
    victim = small_dataset.class_names[1]
    (root / "attributes" / victim / "00000.vec").unlink()
    with pytest.raises(FileNotFoundError, match="attribute"):
        load_dataset(root, 32)


def test_load_attr_dim_mismatch(tmp_path, small_dataset):
    root = tmp_path / "ds"
    save_dataset(small_dataset, root)
    victim = small_dataset.class_names[2]
    write_attribute_vec(root / "attributes" / victim / "00001.vec",
                        np.zeros(5, dtype=np.float32))
    with pytest.raises(ValueError, match="dimension"):
        load_dataset(root, 32)


def test_labels_are_seen_first_contiguous(small_dataset):
    split = small_dataset.split
    assert split.seen_labels == tuple(range(split.n_seen))
    assert split.unseen_labels == tuple(range(split.n_seen, split.n_seen + split.n_unseen))


def test_pool_subsets_partition_unseen(small_dataset):
    full = set(small_dataset.pool("unseen", "all"))
    train = set(small_dataset.pool("unseen", "train"))
    test = set(small_dataset.pool("unseen", "test"))
    assert train | test == full
    assert train & test == set()
    assert test == set(small_dataset.unseen_test_indices)
    # seen side ignores the carve
    assert set(small_dataset.pool("seen", "train")) == set(small_dataset.pool("seen", "all"))


def test_pool_rejects_bad_side(small_dataset):
    with pytest.raises(ValueError, match="side"):
        small_dataset.pool("sideways")


def test_class_mean_attribute_matches_numpy(small_dataset):
    label = small_dataset.split.seen_labels[0]
    idx = small_dataset.indices_for(label)
    want = np.mean([small_dataset.samples[i].attribute for i in idx], axis=0)
    np.testing.assert_allclose(small_dataset.class_mean_attribute(label), want, rtol=1e-6)


def test_sampler_deterministic(small_dataset):
    a = sample_pair_batch(small_dataset, "seen", 16, rng_seed=42)
    b = sample_pair_batch(small_dataset, "seen", 16, rng_seed=42)
    np.testing.assert_array_equal(a.source.images, b.source.images)
    np.testing.assert_array_equal(a.target.labels, b.target.labels)
    c = sample_pair_batch(small_dataset, "seen", 16, rng_seed=43)
    assert not np.array_equal(a.source.labels, c.source.labels) or \
        not np.array_equal(a.target.labels, c.target.labels)


def test_sampler_shapes_and_ranges(small_dataset):
    batch = sample_pair_batch(small_dataset, "seen", 8, rng_seed=0)
    assert batch.batch_size == 8
    assert batch.source.images.shape == (8, 32, 32, 3)
    assert batch.source.images.dtype == np.float32
    assert batch.source.images.min() >= 0.0 and batch.source.images.max() <= 1.0
    assert batch.source.attributes.shape == (8, small_dataset.attr_dim)


def test_sampler_uniformity_binomial_bound(small_dataset):
    """Uniform draws over the pool put equal mass on every seen label
    (classes are balanced); each label count over many draws must stay
    within five binomial standard deviations of its expectation."""
    m = small_dataset.split.n_seen
    label_counts = np.zeros(m)
    per_chunk = 500
    for seed in range(40):
        b = sample_pair_batch(small_dataset, "seen", per_chunk, rng_seed=90000 + seed)
        for lab in b.source.labels:
            label_counts[int(lab)] += 1
    total = label_counts.sum()
    p = 1.0 / m
    sigma = np.sqrt(total * p * (1 - p))
    np.testing.assert_allclose(label_counts, total * p, atol=5 * sigma)


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 32))
@settings(max_examples=30, deadline=None)
def test_property_seen_sampler_never_yields_unseen(small_dataset, seed, bs):
    batch = sample_pair_batch(small_dataset, "seen", bs, rng_seed=seed)
    seen = set(small_dataset.split.seen_labels)
    assert set(batch.source.labels.tolist()) <= seen
    assert set(batch.target.labels.tolist()) <= seen


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_property_unseen_test_sampler_stays_in_carve(small_dataset, seed):
    batch = sample_pair_batch(small_dataset, "unseen", 6, rng_seed=seed, subset="test")
    unseen = set(small_dataset.split.unseen_labels)
    assert set(batch.source.labels.tolist()) <= unseen


def test_m_limit_relabels_compactly(small_dataset):
    limited = apply_m_limit(small_dataset, 3)
    assert limited.split.n_seen == 3
    assert limited.split.seen_labels == (0, 1, 2)
    n_unseen = small_dataset.split.n_unseen
    assert limited.split.unseen_labels == tuple(range(3, 3 + n_unseen))
    # kept seen classes map to the first m original classes
    kept_names = small_dataset.class_names[:3]
    for s in limited.samples:
        if s.label < 3:
            assert small_dataset.class_names[small_dataset.label_of(
                limited.class_names[s.label])] in kept_names
    # unseen sample count unchanged, test carve preserved
    assert len(limited.pool("unseen")) == len(small_dataset.pool("unseen"))
    assert len(limited.pool("unseen", "test")) == len(small_dataset.pool("unseen", "test"))
    assert limited.factors is not None and len(limited.factors) == len(limited.samples)


def test_m_limit_noop_cases(small_dataset):
    assert apply_m_limit(small_dataset, None) is small_dataset
    assert apply_m_limit(small_dataset, small_dataset.split.n_seen) is small_dataset
    assert apply_m_limit(small_dataset, 99) is small_dataset


def test_m_limit_too_small(small_dataset):
    with pytest.raises(ValueError, match="at least 2"):
        apply_m_limit(small_dataset, 1)


def test_make_synthetic_counts_match_request():
    ds = make_synthetic(SyntheticSpec(n_domains=6), n_per_domain=9, rng_seed=3)
    assert len(ds) == 54
    for label in range(6):
        assert len(ds.indices_for(label)) == 9
