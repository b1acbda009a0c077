import numpy as np
import pytest
from scipy.linalg import cho_solve

from latentbo.errors import (
    EvaluationFailedError,
    InfeasibleSpaceError,
    InsufficientSpaceError,
)
from latentbo.gp import GpFitConfig, GpHyperparams, GpModel, fit, kernel_matrix
from latentbo.loop import (
    BoConfig,
    BoState,
    bo_step,
    build_feasible_grid,
    init_design,
    report_optimum,
    run,
)
from latentbo.objective import ObjectiveFn, SyntheticTargetSpec
from latentbo.trajectory import is_feasible
from latentbo.vae import TvaeConfig, init_model


def stub_model(input_dim=6, bias=1.0):
    """Zero-weight model whose decoder emits a constant `bias` trajectory."""
    config = TvaeConfig(input_dim=input_dim, hidden_sizes=(4,), epochs=1)
    m = init_model(config, seed=0)
    for v in m.params.values():
        v[...] = 0.0
    m.params["dec_b1"][...] = bias
    return m


def target_objective(grid, frac=0.6):
    feas = np.flatnonzero(grid.mask)
    target = grid.trajectory(int(feas[int(frac * len(feas))]))
    return ObjectiveFn(SyntheticTargetSpec(target=target)), target


@pytest.fixture(scope="module")
def small_grid(small_trained):
    model, tset, _ = small_trained
    config = BoConfig(init_samples=4, max_iters=5, grid_shape=(12, 12), seed=0,
                      gp_fit=GpFitConfig(steps=2000), gp_refit_steps=500)
    return build_feasible_grid(model, tset, config), model, tset


def fast_config(seed=0, **kw):
    defaults = dict(init_samples=4, max_iters=5, grid_shape=(12, 12), seed=seed,
                    gp_fit=GpFitConfig(steps=2000), gp_refit_steps=500)
    defaults.update(kw)
    return BoConfig(**defaults)


class TestFeasibleGrid:
    def test_positive_decoder_all_feasible(self, small_trained):
        _, tset, _ = small_trained
        model = stub_model(input_dim=tset.n_epochs, bias=1.0)
        grid = build_feasible_grid(model, tset, fast_config())
        assert grid.mask.all()
        assert grid.n_cells == 144

    def test_negative_decoder_infeasible(self, small_trained):
        _, tset, _ = small_trained
        model = stub_model(input_dim=tset.n_epochs, bias=-1.0)
        with pytest.raises(InfeasibleSpaceError):
            build_feasible_grid(model, tset, fast_config())

    def test_rebuild_is_identical(self, small_trained):
        model, tset, _ = small_trained
        a = build_feasible_grid(model, tset, fast_config())
        b = build_feasible_grid(model, tset, fast_config())
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.decoded, b.decoded)

    def test_row_major_ordering(self, small_grid):
        grid, _, _ = small_grid
        n1, n2 = grid.shape
        assert grid.points.shape == (n1 * n2, 2)
        # z2 varies fastest
        assert grid.points[0, 0] == grid.points[1, 0]
        assert grid.points[0, 1] != grid.points[1, 1]
        assert grid.points[n2, 0] != grid.points[0, 0]

    def test_bounds_pad_training_box(self, small_trained):
        from latentbo.vae import encode_means

        model, tset, _ = small_trained
        grid = build_feasible_grid(model, tset, fast_config())
        emb = encode_means(model, tset)
        z1_lo, z1_hi, z2_lo, z2_hi = grid.bounds
        assert z1_lo < emb[:, 0].min() and z1_hi > emb[:, 0].max()
        assert z2_lo < emb[:, 1].min() and z2_hi > emb[:, 1].max()


class TestInitDesign:
    def test_exhaustive_when_j_equals_feasible(self, small_trained):
        _, tset, _ = small_trained
        model = stub_model(input_dim=tset.n_epochs, bias=1.0)
        grid = build_feasible_grid(model, tset, fast_config(grid_shape=(3, 3)))
        chosen = init_design(grid, 9, np.random.default_rng(0))
        assert sorted(chosen) == list(range(9))

    def test_deterministic(self, small_grid):
        grid, _, _ = small_grid
        a = init_design(grid, 5, np.random.default_rng(42))
        b = init_design(grid, 5, np.random.default_rng(42))
        assert a == b

    def test_all_feasible(self, small_grid):
        grid, _, _ = small_grid
        chosen = init_design(grid, 6, np.random.default_rng(1))
        assert all(grid.mask[i] for i in chosen)
        assert len(set(chosen)) == 6

    def test_insufficient_space(self, small_grid):
        grid, _, _ = small_grid
        with pytest.raises(InsufficientSpaceError):
            init_design(grid, grid.n_feasible + 1, np.random.default_rng(0))


def seeded_state(grid, objective, config):
    state = BoState(seed=config.seed)
    for idx in init_design(grid, config.init_samples, np.random.default_rng(0)):
        state.indices.append(idx)
        state.ys.append(objective(grid.trajectory(idx)))
    return state


class TestBoStep:
    def test_history_grows_by_one_without_repeats(self, small_grid):
        grid, _, _ = small_grid
        config = fast_config()
        objective, _ = target_objective(grid)
        state = seeded_state(grid, objective, config)
        for _ in range(3):
            before = len(state.ys)
            bo_step(state, grid, objective, config)
            assert len(state.ys) == before + 1
        assert len(set(state.indices)) == len(state.indices)

    def test_sequence_reproducible(self, small_grid):
        grid, _, _ = small_grid
        config = fast_config(seed=5)
        objective, _ = target_objective(grid)
        runs = []
        for _ in range(2):
            state = seeded_state(grid, objective, config)
            for _ in range(3):
                bo_step(state, grid, objective, config)
            runs.append((list(state.indices), list(state.ys)))
        assert runs[0] == runs[1]

    def test_failed_evaluations_excluded_and_retried(self, small_grid):
        grid, _, _ = small_grid
        config = fast_config()
        objective, _ = target_objective(grid)

        calls = {"n": 0}

        def flaky(t):
            calls["n"] += 1
            if calls["n"] <= 2:
                raise EvaluationFailedError("synthetic outage")
            return objective(t)

        state = seeded_state(grid, objective, config)
        calls["n"] = 0
        bo_step(state, grid, flaky, config)
        assert len(state.failed_indices) == 2
        assert len(state.ys) == config.init_samples + 1
        assert not set(state.failed_indices) & set(state.indices)

    def test_persistent_failure_aborts(self, small_grid):
        grid, _, _ = small_grid
        config = fast_config()
        objective, _ = target_objective(grid)

        def broken(t):
            raise EvaluationFailedError("always down")

        state = seeded_state(grid, objective, config)
        with pytest.raises(EvaluationFailedError, match="4 consecutive"):
            bo_step(state, grid, broken, config)


class TestRun:
    def test_zero_iterations_reports_from_init(self, small_grid):
        grid, model, tset = small_grid
        config = fast_config(max_iters=0)
        objective, _ = target_objective(grid)
        result = run(objective, model, tset, config, grid=grid)
        assert len(result.state.ys) == config.init_samples
        assert result.state.gp is not None
        assert result.estimated_optimum.index >= 0

    def test_budget_and_feasibility_invariants(self, small_grid):
        grid, model, tset = small_grid
        config = fast_config(seed=3, max_iters=6)
        objective, _ = target_objective(grid)
        result = run(objective, model, tset, config, grid=grid)
        state = result.state
        assert len(state.ys) <= config.init_samples + config.max_iters
        assert len(state.ys) == config.init_samples + state.iteration
        for i in state.indices:
            assert grid.mask[i]
            assert is_feasible(grid.trajectory(i))
        # best-so-far is non-decreasing
        best_seq = np.maximum.accumulate(state.ys)
        assert best_seq[-1] == result.best_evaluated.value
        assert result.best_evaluated.value == max(state.ys)

    def test_full_run_deterministic(self, small_grid):
        grid, model, tset = small_grid
        config = fast_config(seed=4, max_iters=4)
        objective, _ = target_objective(grid)
        r1 = run(objective, model, tset, config, grid=grid)
        r2 = run(objective, model, tset, config, grid=grid)
        assert r1.state.indices == r2.state.indices
        assert r1.state.ys == r2.state.ys
        np.testing.assert_array_equal(r1.mean_map, r2.mean_map)

    def test_early_stop_is_sound(self, small_grid):
        grid, model, tset = small_grid
        config = fast_config(seed=2, max_iters=50, convergence_eps=1e6)
        objective, _ = target_objective(grid)
        result = run(objective, model, tset, config, grid=grid)
        assert result.converged
        assert len(result.state.ys) == config.init_samples
        threshold = config.convergence_eps * (abs(result.state.best_y) + 1.0)
        assert result.state.last_max_acq < threshold

    def test_resume_matches_uninterrupted(self, small_grid):
        grid, model, tset = small_grid
        config = fast_config(seed=6, max_iters=6)
        objective, _ = target_objective(grid)
        full = run(objective, model, tset, config, grid=grid)

        class Crash(Exception):
            pass

        snap = {}

        def grab(st, g):
            if st.iteration == 3:
                snap["state"] = BoState(
                    seed=st.seed, indices=list(st.indices), ys=list(st.ys),
                    iteration=st.iteration, gp=st.gp,
                    last_max_acq=st.last_max_acq,
                    failed_indices=list(st.failed_indices))
                raise Crash()

        with pytest.raises(Crash):
            run(objective, model, tset, config, grid=grid, on_iteration=grab)
        resumed = run(objective, model, tset, config, grid=grid, state=snap["state"])
        assert resumed.state.indices == full.state.indices
        assert resumed.state.ys == full.state.ys

    def test_maps_nan_exactly_off_mask(self, small_grid):
        grid, model, tset = small_grid
        config = fast_config(seed=7, max_iters=2)
        objective, _ = target_objective(grid)
        result = run(objective, model, tset, config, grid=grid)
        for m in (result.mean_map, result.var_map, result.acq_map):
            np.testing.assert_array_equal(np.isnan(m), ~grid.mask)


class TestReportOptimum:
    def test_tiny_lengthscales_estimate_coincides_with_best(self, small_grid):
        grid, _, _ = small_grid
        config = fast_config()
        objective, _ = target_objective(grid)
        state = seeded_state(grid, objective, config)
        z = grid.points[np.asarray(state.indices)]
        tiny = GpHyperparams.from_natural(1.0, (1e-3, 1e-3))
        state.gp = fit(z, np.asarray(state.ys), GpFitConfig(steps=0), warm_start=tiny)
        estimated, best = report_optimum(state, grid)
        assert estimated.index == best.index

    def test_single_point_history(self, small_grid):
        grid, _, _ = small_grid
        idx = int(np.flatnonzero(grid.mask)[0])
        z = grid.points[[idx]]
        hyper = GpHyperparams.from_natural(1.0, (0.5, 0.5))
        k = kernel_matrix(z, hyper) + hyper.nugget * np.eye(1)
        chol = np.linalg.cholesky(k)
        alpha = cho_solve((chol, True), np.array([1.0]))
        state = BoState(seed=0, indices=[idx], ys=[1.0])
        state.gp = GpModel(hyper=hyper, train_z=z, train_y_raw=np.array([1.0]),
                           y_mean=0.0, y_sd=1.0, chol=chol, alpha=alpha)
        estimated, best = report_optimum(state, grid)
        assert estimated.index == idx == best.index

    def test_estimate_is_always_feasible(self, small_grid):
        grid, model, tset = small_grid
        config = fast_config(seed=8, max_iters=3)
        objective, _ = target_objective(grid)
        result = run(objective, model, tset, config, grid=grid)
        assert grid.mask[result.estimated_optimum.index]
