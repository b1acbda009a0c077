import numpy as np
import pytest

from latentbo.errors import DegenerateRangeError, InvalidSpecError
from latentbo.trajectory import (
    Family,
    FamilySpec,
    Trajectory,
    TrajectorySet,
    gen_linear_cooldown,
    gen_periodic,
    gen_segmented_random,
    generate,
    is_feasible,
    load_set_csv,
    load_set_json,
    rescale_set,
    save_set_csv,
    save_set_json,
)


class TestLinearCooldown:
    def test_nonpositive_endpoint_rejected(self):
        with pytest.raises(InvalidSpecError):
            gen_linear_cooldown(3, start=2.0, end=0.0)
        with pytest.raises(InvalidSpecError):
            gen_linear_cooldown(3, start=-1.0, end=1.0)

    def test_linear_interpolation(self):
        t = gen_linear_cooldown(3, start=2.0, end=1.0)
        np.testing.assert_allclose(t.values, [2.0, 1.5, 1.0], atol=1e-15)
        assert t.values[0] == 2.0 and t.values[-1] == 1.0

    def test_cooldown_shape_monotone(self):
        t = gen_linear_cooldown(120, start=5.0, end=0.05)
        assert np.all(np.diff(t.values) <= 0)
        assert is_feasible(t)

    def test_constant_consecutive_difference(self):
        t = gen_linear_cooldown(50, start=3.7, end=0.21)
        diffs = np.diff(t.values)
        assert np.max(np.abs(diffs - diffs[0])) < 1e-12


class TestSegmentedRandom:
    def test_degenerate_range_single_segment(self):
        spec = FamilySpec(Family.SEGMENTED_RANDOM, 4, value_range=(1.0, 1.0),
                          segments=1, noise_sd=0.0, seed=0)
        np.testing.assert_array_equal(gen_segmented_random(spec).values, [1, 1, 1, 1])

    def test_two_equal_plateaus(self):
        spec = FamilySpec(Family.SEGMENTED_RANDOM, 6, segments=2, noise_sd=0.0, seed=5)
        v = gen_segmented_random(spec).values
        assert v[0] == v[1] == v[2]
        assert v[3] == v[4] == v[5]

    def test_remainder_goes_to_earliest_blocks(self):
        spec = FamilySpec(Family.SEGMENTED_RANDOM, 7, segments=3, noise_sd=0.0, seed=9)
        v = gen_segmented_random(spec).values
        # block sizes 3, 2, 2
        assert v[0] == v[1] == v[2] and v[3] == v[4] and v[5] == v[6]

    def test_deterministic(self):
        spec = FamilySpec(Family.SEGMENTED_RANDOM, 20, segments=4, noise_sd=0.3, seed=42)
        np.testing.assert_array_equal(
            gen_segmented_random(spec).values, gen_segmented_random(spec).values
        )

    def test_too_many_segments_rejected(self):
        spec = FamilySpec(Family.SEGMENTED_RANDOM, 3, segments=4, seed=0)
        with pytest.raises(InvalidSpecError):
            gen_segmented_random(spec)

    def test_noise_clamped_feasible(self):
        spec = FamilySpec(Family.SEGMENTED_RANDOM, 200, value_range=(0.05, 5.0),
                          segments=5, noise_sd=2.0, seed=3)
        t = gen_segmented_random(spec)
        assert is_feasible(t)
        assert t.values.min() >= 0.05 / 2


class TestPeriodic:
    def test_zero_amplitude_constant(self):
        spec = FamilySpec(Family.PERIODIC, 8, value_range=(0.5, 1.5), amplitude=0.0,
                          period=4, phase=0.0)
        np.testing.assert_array_equal(gen_periodic(spec).values, np.ones(8))

    def test_phase_zero_starts_at_offset(self):
        spec = FamilySpec(Family.PERIODIC, 10, value_range=(0.5, 1.5), amplitude=0.5,
                          period=10, phase=0.0)
        assert gen_periodic(spec).values[0] == 1.0

    def test_sinusoid_values(self):
        # offset (lo+hi)/2 = 1.0, amplitude 0.5, period 4: evaluated directly
        # from offset + a*sin(2*pi*i/period).
        spec = FamilySpec(Family.PERIODIC, 5, value_range=(0.5, 1.5), amplitude=0.5,
                          period=4, phase=0.0)
        np.testing.assert_allclose(gen_periodic(spec).values,
                                   [1.0, 1.5, 1.0, 0.5, 1.0], atol=1e-12)

    def test_amplitude_must_stay_below_offset(self):
        spec = FamilySpec(Family.PERIODIC, 5, value_range=(0.5, 1.5), amplitude=1.0,
                          period=4)
        with pytest.raises(InvalidSpecError):
            gen_periodic(spec)


class TestRescale:
    def test_identity(self):
        tset = TrajectorySet([Trajectory(np.array([0.5, 1.0, 2.0]))])
        out = rescale_set(tset, (0.5, 2.0))
        np.testing.assert_allclose(out.trajectories[0].values, [0.5, 1.0, 2.0],
                                   rtol=0, atol=1e-12)

    def test_affine_map(self):
        tset = TrajectorySet([Trajectory(np.array([1.0, 2.0, 3.0]))])
        out = rescale_set(tset, (2.0, 6.0))
        np.testing.assert_allclose(out.trajectories[0].values, [2.0, 4.0, 6.0], atol=1e-12)

    def test_global_extremes_hit_targets(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            tset = TrajectorySet([Trajectory(rng.uniform(0.2, 9, size=12)) for _ in range(5)])
            out = rescale_set(tset, (0.3, 4.0))
            mat = out.as_matrix()
            assert abs(mat.min() - 0.3) < 1e-12
            assert abs(mat.max() - 4.0) < 1e-12

    def test_rank_order_preserved(self):
        rng = np.random.default_rng(1)
        tset = TrajectorySet([Trajectory(rng.uniform(0.1, 3, size=30)) for _ in range(3)])
        out = rescale_set(tset, (1.0, 2.0))
        for before, after in zip(tset.trajectories, out.trajectories):
            np.testing.assert_array_equal(np.argsort(before.values),
                                          np.argsort(after.values))

    def test_degenerate_set_rejected(self):
        tset = TrajectorySet([Trajectory(np.full(4, 2.0))])
        with pytest.raises(DegenerateRangeError):
            rescale_set(tset, (1.0, 2.0))


class TestFeasibility:
    def test_positive(self):
        assert is_feasible(Trajectory(np.array([1.0, 0.5, 2.0])))

    def test_zero_is_infeasible(self):
        assert not is_feasible(Trajectory(np.array([1.0, 0.0, 2.0])))

    def test_negative_is_infeasible(self):
        assert not is_feasible(Trajectory(np.array([1.0, -0.1])))


def test_generators_deterministic_and_feasible():
    for family in Family:
        spec = FamilySpec(family, 40, value_range=(0.05, 5.0), segments=4,
                          noise_sd=0.2, period=9, amplitude=1.1, phase=0.4, seed=77)
        a, b = generate(spec), generate(spec)
        np.testing.assert_array_equal(a.values, b.values)
        assert is_feasible(a)


def test_set_requires_uniform_length():
    with pytest.raises(Exception):
        TrajectorySet([Trajectory(np.ones(3)), Trajectory(np.ones(4))])


def test_csv_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    tset = TrajectorySet([Trajectory(rng.uniform(0.01, 7, size=17)) for _ in range(6)])
    path = tmp_path / "set.csv"
    save_set_csv(tset, path)
    back = load_set_csv(path)
    np.testing.assert_array_equal(tset.as_matrix(), back.as_matrix())
    header = path.read_text().splitlines()[0]
    assert header.split(",") == [f"e{i}" for i in range(17)]


def test_json_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    tset = TrajectorySet([Trajectory(rng.uniform(0.01, 7, size=9)) for _ in range(4)])
    path = tmp_path / "set.json"
    save_set_json(tset, path)
    np.testing.assert_array_equal(tset.as_matrix(), load_set_json(path).as_matrix())
