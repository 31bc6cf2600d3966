import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisonbench.data import (Dataset, PartitionSpec, PoisonSpec, Trigger, embed_trigger, flip_labels,
                              load_mnist, make_edge_case, n_poisoned, partition, poisoned_test_set,
                              read_idx, synthetic_blobs, write_idx)
from poisonbench.errors import ConfigurationError, EmptyInputError
from poisonbench.learning import TrainingHyper, local_train
from poisonbench.models import Model


@pytest.fixture(scope="module")
def blobs():
    return synthetic_blobs(1000, np.random.default_rng(0))


def test_synthetic_blobs_shape_and_range(blobs):
    assert blobs.x.shape == (1000, 100)
    assert blobs.x.min() >= 0 and blobs.x.max() <= 1
    assert np.bincount(blobs.y).tolist() == [100] * 10


def test_synthetic_trigger_corner_is_dark(blobs):
    imgs = blobs.x.reshape(-1, 10, 10)
    # the 2-pixel border holds clipped noise only: E[max(0, N(0, 0.35^2))] = 0.35 / sqrt(2 pi)
    assert imgs[:, :2, :].mean() == pytest.approx(0.35 / np.sqrt(2 * np.pi), abs=0.01)
    assert imgs[:, :3, :3].mean() < 0.3


def test_idx_roundtrip(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = np.arange(5, dtype=np.uint8)
    write_idx(tmp_path / "train-images-idx3-ubyte.gz", imgs)
    write_idx(tmp_path / "train-labels-idx1-ubyte", labels)
    raw = (tmp_path / "train-labels-idx1-ubyte").read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x01" and raw[4:8] == b"\x00\x00\x00\x05"
    assert np.array_equal(read_idx(tmp_path / "train-images-idx3-ubyte.gz"), imgs)
    ds = load_mnist(tmp_path, "train")
    assert ds.image_shape == (28, 28) and len(ds) == 5
    np.testing.assert_allclose(ds.x[1], imgs[1].ravel() / 255.0)


def test_mnist_missing_returns_none(tmp_path, monkeypatch):
    monkeypatch.delenv("FLP_DATA_DIR", raising=False)
    assert load_mnist() is None
    assert load_mnist(tmp_path) is None


def test_truncated_idx_rejected(tmp_path):
    write_idx(tmp_path / "a", np.zeros((4, 2), dtype=np.uint8))
    p = tmp_path / "a"
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(ConfigurationError):
        read_idx(p)


def test_dataset_validation():
    with pytest.raises(ConfigurationError):
        Dataset(np.zeros((2, 4)), [0, 5], 3, (2, 2))
    with pytest.raises(ConfigurationError):
        Dataset(np.full((1, 4), np.nan), [0], 3, (2, 2))


def test_iid_partition_balanced(blobs):
    parts = partition(blobs.y, PartitionSpec("iid", n=10), np.random.default_rng(1))
    for p in parts:
        assert p.size == 100
        assert np.bincount(blobs.y[p], minlength=10).tolist() == [10] * 10


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["iid", "dirichlet"]), st.floats(0.05, 10.0), st.integers(1, 30), st.integers(0, 999))
def test_partitions_disjoint_and_cover(mode, alpha, n, seed):
    y = np.random.default_rng(seed).integers(0, 10, size=300)
    parts = partition(y, PartitionSpec(mode, alpha, n), np.random.default_rng(seed))
    assert len(parts) == n and all(p.size >= 1 for p in parts)
    allidx = np.concatenate(parts)
    assert np.array_equal(np.sort(allidx), np.arange(300))


def test_dirichlet_large_alpha_close_to_iid():
    y = np.repeat(np.arange(10), 2000)
    parts = partition(y, PartitionSpec("dirichlet", 1e6, 10), np.random.default_rng(0))
    counts = np.array([np.bincount(y[p], minlength=10) for p in parts])
    assert np.all(np.abs(counts - 200) <= 0.05 * 200)


def _heterogeneity(y, parts):
    counts = np.array([np.bincount(y[p], minlength=10) for p in parts], dtype=float)
    expected = counts.sum(1, keepdims=True) * counts.sum(0, keepdims=True) / counts.sum()
    return float(((counts - expected) ** 2 / np.maximum(expected, 1e-12)).sum())


def test_dirichlet_small_alpha_is_skewed():
    y = np.repeat(np.arange(10), 100)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        iid = _heterogeneity(y, partition(y, PartitionSpec("iid", n=10), rng))
        skew = _heterogeneity(y, partition(y, PartitionSpec("dirichlet", 0.5, 10), rng))
        assert skew > iid


def test_empty_client_gets_a_sample():
    y = np.zeros(12, dtype=int)
    parts = partition(y, PartitionSpec("dirichlet", 0.01, 10), np.random.default_rng(0))
    assert all(p.size >= 1 for p in parts)


def test_partition_needs_enough_samples():
    with pytest.raises(ConfigurationError):
        partition(np.zeros(3, dtype=int), PartitionSpec(n=5), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        PartitionSpec("dirichlet", alpha=0.0)


def test_flip_labels_modes():
    y = np.arange(10)
    inv = flip_labels(y, PoisonSpec(kind="label-flip", flip_mode="inverse"), 10)
    assert inv[3] == 6 and inv[9] == 0
    tgt = flip_labels(np.array([7, 7, 2, 1]), PoisonSpec(kind="label-flip", source=7, target=1), 10)
    assert tgt.tolist() == [1, 1, 2, 1]
    rnd = flip_labels(np.tile(y, 50), PoisonSpec(kind="label-flip", flip_mode="random"), 10,
                      np.random.default_rng(0))
    assert np.all(rnd != np.tile(y, 50))
    assert set(rnd.tolist()) == set(range(10))


def test_twenty_of_sixty_four_poisoned():
    assert n_poisoned(64, 20 / 64) == 20
    assert n_poisoned(30, 0.1) == 3
    assert n_poisoned(10, 0.25) == 3
    x = np.zeros((64, 100))
    y = np.full(64, 3)
    px, py = embed_trigger(x, y, PoisonSpec(), (10, 10), np.random.default_rng(0))
    assert int((py == 1).sum()) == 20
    assert int((px.reshape(64, 10, 10)[:, :3, :3] == 1.0).all(axis=(1, 2)).sum()) == 20
    assert px.shape == x.shape


def test_ratio_zero_leaves_batch():
    x, y = np.random.default_rng(0).random((8, 100)), np.arange(8)
    px, py = embed_trigger(x, y, PoisonSpec(ratio=0.0), (10, 10), np.random.default_rng(0))
    assert np.array_equal(px, x) and np.array_equal(py, y)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(1, 64))
def test_poison_fraction_within_one_sample(ratio, batch):
    x, y = np.zeros((batch, 100)), np.zeros(batch, dtype=int)
    _, py = embed_trigger(x, y, PoisonSpec(ratio=ratio, target=1), (10, 10), np.random.default_rng(0))
    assert abs((py == 1).mean() - ratio) <= 1.0 / batch + 1e-12


def test_dba_parts_tile_global_trigger():
    for t in (Trigger(), Trigger(x=2, y=1, w=4, h=5), Trigger(w=1, h=1)):
        full = t.mask((10, 10))
        parts = [t.mask((10, 10), part=k) for k in range(4)]
        assert np.array_equal(np.logical_or.reduce(parts), full)
        assert sum(int(p.sum()) for p in parts) == int(full.sum())


def test_trigger_out_of_bounds():
    with pytest.raises(ConfigurationError):
        Trigger(x=8, w=3).check((10, 10))


def test_poisoned_test_set_excludes_target(blobs):
    px = poisoned_test_set(blobs, PoisonSpec(target=1))
    assert px.shape[0] == int((blobs.y != 1).sum())
    assert np.all(px.reshape(-1, 10, 10)[:, :3, :3] == 1.0)
    only_target = Dataset(blobs.x[:3], np.ones(3, dtype=int), 10, (10, 10))
    with pytest.raises(EmptyInputError):
        poisoned_test_set(only_target, PoisonSpec(target=1))


def test_edge_case_pool(blobs):
    spec = PoisonSpec(kind="edge-case", source=7, target=1)
    pool = make_edge_case(blobs, spec, np.random.default_rng(0), size=50)
    assert len(pool) == 50 and np.all(pool.y == 1)
    originals = blobs.x[blobs.y == 7]
    dmin = np.min(np.linalg.norm(pool.x[:, None, :] - originals[None], axis=2), axis=1)
    assert dmin.min() > 1.0
    with pytest.raises(ConfigurationError):
        make_edge_case(blobs.subset(np.flatnonzero(blobs.y != 7)), spec, np.random.default_rng(0))


def test_edge_case_pool_sits_in_the_tail():
    train = synthetic_blobs(2000, np.random.default_rng(1))
    test = synthetic_blobs(1000, np.random.default_rng(2))
    model = Model("logreg", 100, 10)
    hyper = TrainingHyper(lr=0.1, local_steps=300, weight_decay=0.0)
    w = local_train(model, np.zeros(model.dim), train, hyper, np.random.default_rng(3))
    sevens = test.x[test.y == 7]
    pool = make_edge_case(test, PoisonSpec(source=7, target=1), np.random.default_rng(4), size=80)
    clean_acc = np.mean(model.predict(w, sevens) == 7)
    tail_acc = np.mean(model.predict(w, pool.x) == 7)
    assert clean_acc > 0.9
    assert tail_acc < clean_acc - 0.2
