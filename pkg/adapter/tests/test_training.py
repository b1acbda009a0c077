import numpy as np
import pytest

from manifold_worker.config import from_dict
from manifold_worker.datasets import load_dataset
from manifold_worker.jointvae import manifold_grids, train_joint_vae

TINY = from_dict({
    "dataset": "blobs", "subset_size": 60, "n_classes": 3, "cycles": 15,
    "hidden": 32, "batch_size": 20, "grid_rows": 3, "grid_cols": 3,
    "image_size": 8, "seed": 4,
})


class TestDatasets:
    def test_digits_balanced(self):
        images, labels = load_dataset("digits", 3, 90, 8, seed=0)
        assert images.shape == (90, 8, 8)
        assert images.min() >= 0.0 and images.max() <= 1.0
        counts = np.bincount(labels, minlength=3)
        assert counts.tolist() == [30, 30, 30]

    def test_digits_image_size_enforced(self):
        with pytest.raises(ValueError):
            load_dataset("digits", 3, 90, 16, seed=0)

    def test_blobs_classes_have_more_mass(self):
        images, labels = load_dataset("blobs", 3, 120, 8, seed=1)
        assert images.shape == (120, 8, 8)
        mass = [images[labels == c].sum(axis=(1, 2)).mean() for c in range(3)]
        assert mass[0] < mass[1] < mass[2]

    def test_deterministic(self):
        a_img, a_lab = load_dataset("blobs", 2, 40, 8, seed=5)
        b_img, b_lab = load_dataset("blobs", 2, 40, 8, seed=5)
        np.testing.assert_array_equal(a_img, b_img)
        np.testing.assert_array_equal(a_lab, b_lab)


class TestTraining:
    def test_manifolds_wellformed(self):
        schedule = np.linspace(2.0, 0.1, TINY.cycles)
        images, _ = load_dataset(TINY.dataset, TINY.n_classes, TINY.subset_size,
                                 TINY.image_size, TINY.seed)
        model = train_joint_vae(schedule, TINY, images)
        grids = manifold_grids(model, TINY)
        assert [g["class_id"] for g in grids] == [0, 1, 2]
        for g in grids:
            assert (g["rows"], g["cols"], g["h"], g["w"]) == (3, 3, 8, 8)
            arr = np.asarray(g["pixels"])
            assert arr.shape == (3 * 3 * 8 * 8,)
            assert np.all(np.isfinite(arr))
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_deterministic_given_seed(self):
        schedule = np.linspace(2.0, 0.1, TINY.cycles)
        images, _ = load_dataset(TINY.dataset, TINY.n_classes, TINY.subset_size,
                                 TINY.image_size, TINY.seed)
        a = manifold_grids(train_joint_vae(schedule, TINY, images), TINY)
        b = manifold_grids(train_joint_vae(schedule, TINY, images), TINY)
        for ga, gb in zip(a, b):
            assert ga["pixels"] == gb["pixels"]

    def test_schedule_changes_result(self):
        images, _ = load_dataset(TINY.dataset, TINY.n_classes, TINY.subset_size,
                                 TINY.image_size, TINY.seed)
        high = manifold_grids(train_joint_vae(np.full(TINY.cycles, 5.0), TINY, images), TINY)
        low = manifold_grids(train_joint_vae(np.full(TINY.cycles, 0.01), TINY, images), TINY)
        assert high[0]["pixels"] != low[0]["pixels"]
