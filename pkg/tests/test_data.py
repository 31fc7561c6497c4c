import numpy as np
import pytest
from scipy import stats

from idembed.data import BenchmarkConfig, CorruptionSpec, SceneSpec, build_benchmark
from idembed.data import check_disjoint, generate_world, load_benchmark, sample_minibatch
from idembed.data import sample_set, save_benchmark
from oracles import enumerate_pairs

SMALL = dict(num_train_ids=6, num_test_ids=4, sets_per_id=3, items_per_set=12)


class TestGenerateWorld:
    def test_deterministic(self):
        a = generate_world(10, 32, seed=5)
        b = generate_world(10, 32, seed=5)
        assert a.prototypes.tobytes() == b.prototypes.tobytes()

    def test_seed_changes_prototypes(self):
        assert not np.array_equal(generate_world(10, 32, 0).prototypes, generate_world(10, 32, 1).prototypes)

    def test_two_identities_distinct(self):
        for dim in (24, 32, 50):
            w = generate_world(2, dim, seed=0)
            assert np.linalg.norm(w.prototypes[0] - w.prototypes[1]) > 0

    def test_hundred_identities_pairwise_distinct(self):
        w = generate_world(100, 32, seed=0)
        p = w.prototypes
        best = min(
            np.linalg.norm(p[i] - p[j]) for i in range(100) for j in range(i + 1, 100)
        )
        assert best > 0

    def test_needs_two_identities(self):
        with pytest.raises(ValueError):
            generate_world(1, 32, seed=0)

    def test_rank_too_large_for_dim(self):
        with pytest.raises(ValueError):
            generate_world(5, 10, seed=0)

    def test_bases_are_orthonormal_and_disjoint(self):
        w = generate_world(5, 32, seed=3)
        u, v = w.identity_basis, w.nuisance_basis
        np.testing.assert_allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-12)
        np.testing.assert_allclose(v.T @ v, np.eye(v.shape[1]), atol=1e-12)
        np.testing.assert_allclose(u.T @ v, 0.0, atol=1e-12)

    def test_scene_shift_tilts_nuisance_towards_identity(self):
        w = generate_world(5, 32, seed=3, scene=SceneSpec(scene_shift=0.5))
        overlap = np.linalg.norm(w.identity_basis.T @ w.nuisance_basis)
        assert overlap > 0.5


class TestSampleSet:
    def test_clean_noiseless_items_equal_prototype(self):
        w = generate_world(4, 32, seed=0)
        s = sample_set(w, 2, 7, CorruptionSpec(perceptual_noise_sigma=0.0, outlier_rate=0.0), seed=1)
        assert np.all(s.items == w.prototypes[2])
        assert not s.corruption_flags.any()
        assert s.set_label == 2

    def test_noise_without_outliers(self):
        w = generate_world(4, 32, seed=0)
        s = sample_set(w, 1, 20, CorruptionSpec(perceptual_noise_sigma=0.5, outlier_rate=0.0), seed=1)
        assert not s.corruption_flags.any()
        assert np.all(np.linalg.norm(s.items - w.prototypes[1], axis=1) > 0)

    def test_outlier_fraction(self):
        w = generate_world(5, 32, seed=0)
        s = sample_set(w, 0, 10_000, CorruptionSpec(outlier_rate=0.3), seed=2)
        assert abs(s.corruption_flags.mean() - 0.3) < 0.02

    def test_outliers_come_from_other_identities(self):
        w = generate_world(5, 32, seed=0)
        spec = CorruptionSpec(perceptual_noise_sigma=0.0, outlier_rate=0.5)
        s = sample_set(w, 3, 400, spec, seed=4)
        for item, flag in zip(s.items, s.corruption_flags):
            nearest = int(np.argmin(np.linalg.norm(w.prototypes - item, axis=1)))
            assert (nearest != 3) == bool(flag)
        assert s.set_label == 3

    def test_flags_independent(self):
        w = generate_world(5, 32, seed=0)
        flags = sample_set(w, 0, 20_000, CorruptionSpec(outlier_rate=0.2), seed=9).corruption_flags
        a, b = flags[:-1], flags[1:]
        table = np.array([[np.sum(~a & ~b), np.sum(~a & b)], [np.sum(a & ~b), np.sum(a & b)]])
        assert stats.chi2_contingency(table)[1] > 0.01

    def test_invalid_identity(self):
        w = generate_world(3, 32, seed=0)
        with pytest.raises(KeyError):
            sample_set(w, 7, 5, CorruptionSpec(), seed=0)

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            CorruptionSpec(outlier_rate=1.0)
        with pytest.raises(ValueError):
            CorruptionSpec(perceptual_noise_sigma=-0.1)

    def test_nearest_prototype_is_perfect_when_clean(self):
        w = generate_world(20, 32, seed=1)
        spec = CorruptionSpec(perceptual_noise_sigma=0.02, outlier_rate=0.0)
        for ident in range(20):
            s = sample_set(w, ident, 10, spec, seed=[1, ident])
            d = np.linalg.norm(s.items[:, None, :] - w.prototypes[None], axis=2)
            assert np.all(d.argmin(axis=1) == ident)

    def test_view_hides_flags(self):
        w = generate_world(3, 32, seed=0)
        v = sample_set(w, 0, 5, CorruptionSpec(), seed=0).view()
        assert not hasattr(v, "corruption_flags")


class TestMinibatch:
    def bench(self):
        return build_benchmark(BenchmarkConfig(**SMALL, seed=1))

    def test_default_shape(self):
        b = self.bench()
        mb = sample_minibatch(b.train.views(), seed=0)
        assert mb.items.shape == (6, 9, 32)
        assert mb.items.size // 32 == 54
        assert enumerate_pairs(mb.labels.tolist()) == (3, 12)

    def test_small_batch(self):
        b = self.bench()
        mb = sample_minibatch(b.train.views(), persons_per_batch=2, sets_per_person=2, items_per_set=1, seed=3)
        assert mb.items.shape[:2] == (4, 1)
        assert enumerate_pairs(mb.labels.tolist()) == (2, 4)

    def test_items_come_from_the_labelled_set(self):
        b = self.bench()
        views = b.train.views()
        mb = sample_minibatch(views, seed=11)
        for items, label in zip(mb.items, mb.labels):
            pool = np.concatenate([v.items for v in views if v.set_label == label])
            for row in items:
                assert np.any(np.all(pool == row, axis=1))

    def test_insufficient_identities(self):
        b = self.bench()
        with pytest.raises(ValueError):
            sample_minibatch(b.train.views(), persons_per_batch=7, seed=0)

    def test_deterministic(self):
        b = self.bench()
        a = sample_minibatch(b.train.views(), seed=[4, 2])
        c = sample_minibatch(b.train.views(), seed=[4, 2])
        assert a.items.tobytes() == c.items.tobytes()


class TestBenchmark:
    def test_disjoint_and_deterministic(self):
        cfg = BenchmarkConfig(**SMALL, seed=2)
        a, b = build_benchmark(cfg), build_benchmark(cfg)
        check_disjoint(a)
        assert a.train.identities() == set(range(6))
        assert a.test.identities() == set(range(6, 10))
        assert not (a.train.identities() & a.test.identities())
        for sa, sb in zip(a.train.sets + a.cross_test.sets, b.train.sets + b.cross_test.sets):
            assert sa.items.tobytes() == sb.items.tobytes()

    def test_cross_scene_tag(self):
        b = build_benchmark(BenchmarkConfig(**SMALL))
        assert b.cross_test.scene_id != b.train.scene_id
        assert not (b.cross_test.identities() & (b.train.identities() | b.test.identities()))

    def test_overlap_detected(self):
        b = build_benchmark(BenchmarkConfig(**SMALL))
        b.test.sets[0].set_label = 0
        with pytest.raises(ValueError):
            check_disjoint(b)

    def test_default_sizes(self):
        cfg = BenchmarkConfig()
        assert (cfg.num_train_ids, cfg.num_test_ids, cfg.sets_per_id, cfg.items_per_set) == (60, 30, 4, 40)

    def test_round_trip(self, tmp_path):
        b = build_benchmark(BenchmarkConfig(**SMALL, seed=4))
        save_benchmark(b, tmp_path / "bench", config_hash="abc")
        names = sorted(p.name for p in (tmp_path / "bench").iterdir())
        assert "manifest.json" in names and "train.npz" in names and "cross_test.flags.npz" in names
        back = load_benchmark(tmp_path / "bench")
        assert back.config == b.config
        for split_a, split_b in zip(b.splits(), back.splits()):
            for sa, sb in zip(split_a.sets, split_b.sets):
                assert sa.items.tobytes() == sb.items.tobytes()
                assert sa.set_label == sb.set_label and sa.camera_id == sb.camera_id
                assert np.array_equal(sa.corruption_flags, sb.corruption_flags)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_benchmark(tmp_path)
