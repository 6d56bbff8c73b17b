import os.path as op

import numpy as np
import pytest

import splitflow as sf
from splitflow.datasets import DATASET_KINDS, export


@pytest.mark.parametrize("kind", sorted(DATASET_KINDS))
def test_shapes_and_labels(kind, rng):
    dim, classes = DATASET_KINDS[kind]
    ds = sf.ToyDataset(kind, labeled=True)
    assert (ds.dim, ds.num_classes) == (dim, classes)
    x, y = ds.sample_batch(50, rng)
    assert x.shape == (50, dim)
    assert x.dtype == np.float64
    assert y.shape == (50,)
    assert y.min() >= 0 and y.max() < classes

    x, y = sf.ToyDataset(kind).sample_batch(5, rng)
    assert x.shape == (5, dim)
    assert y is None


@pytest.mark.parametrize("kind", sorted(DATASET_KINDS))
def test_sampling_is_deterministic(kind):
    ds = sf.ToyDataset(kind, labeled=True)
    a = ds.sample_batch(20, np.random.default_rng(3))
    b = ds.sample_batch(20, np.random.default_rng(3))
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_gauss_mixture_ring():
    x, y = sf.ToyDataset("gauss_mixture_8", labeled=True).sample_batch(
        100000, np.random.default_rng(1)
    )
    assert abs(np.linalg.norm(x, axis=1).mean() - 2.0) < 0.05
    angles = 2.0 * np.pi * y / 8.0
    centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    assert np.max(np.linalg.norm(x - centers, axis=1)) < 1.0


def test_one_d_bimodal_is_symmetric():
    x, y = sf.ToyDataset("one_d_bimodal", labeled=True).sample_batch(
        100000, np.random.default_rng(2)
    )
    assert abs(x.mean()) < 0.01
    assert np.all(x[y == 0] < 0.0)
    assert np.all(x[y == 1] > 0.0)


def test_checkerboard_cells(rng):
    x, y = sf.ToyDataset("checkerboard", labeled=True).sample_batch(2000, rng)
    assert np.all((-2.0 <= x) & (x <= 2.0))
    cell = np.floor(x + 2.0).astype(int)
    assert np.all(cell.sum(axis=1) % 2 == 0)
    assert set(np.unique(y)) == set(range(8))


def test_two_moons_labels_are_shuffled(rng):
    x, y = sf.ToyDataset("two_moons", labeled=True, noise=0.0).sample_batch(400, rng)
    assert 0 < y[:200].sum() < 200
    # the noiseless upper moon is the unit half circle
    upper = x[y == 0]
    np.testing.assert_allclose(np.linalg.norm(upper, axis=1), 1.0)


def test_export(tmp_path, rng):
    path = export(sf.ToyDataset("one_d_bimodal", labeled=True), 10, rng, tmp_path / "d.csv")
    assert op.isabs(path)
    with open(path) as f:
        assert f.readline().strip() == "x0,label"
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape == (10, 2)
    assert set(table[:, 1]) <= {0.0, 1.0}

    path = export(sf.ToyDataset("two_moons"), 4, rng, tmp_path / "m.csv")
    with open(path) as f:
        assert f.readline().strip() == "x0,x1"


def test_errors(rng):
    with pytest.raises(sf.SplitflowInputError):
        sf.ToyDataset("swiss_roll")
    with pytest.raises(sf.SplitflowInputError):
        sf.ToyDataset("two_moons", noise=-0.1)
    with pytest.raises(sf.SplitflowInputError):
        sf.ToyDataset().sample_batch(0, rng)
    with pytest.raises(sf.SplitflowInputError):
        sf.ToyDataset().sample_batch(2.5, rng)


def test_description():
    ds = sf.ToyDataset("two_moons", labeled=True, noise=0.1)
    assert ds.description == {"kind": "two_moons", "labeled": True, "noise": 0.1}
    assert repr(ds) == "ToyDataset('two_moons', labeled=True, noise=0.1)"
