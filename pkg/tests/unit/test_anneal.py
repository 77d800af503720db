"""
tests/unit/test_anneal.py

Unit tests for lineage initialisation, the inner minimiser, the annealing
loop, best-path selection and the level table.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError
from prometheus_client import REGISTRY
from scipy.optimize import OptimizeResult

import delaynet.services.anneal as anneal_module
from delaynet.schemas.anneal_schema import AnnealRecord, AnnealSchedule, AnnealStep, OptimizerConfig
from delaynet.services.anneal import (
    Minimized,
    alpha_check,
    anneal,
    init_paths,
    levels_table,
    load_record,
    minimize_at_beta,
    save_record,
    scaled_action_and_gradient,
    select_best,
    variable_scale,
)
from delaynet.services.netaction import (
    Architecture,
    PairLibrary,
    PathState,
    Precisions,
    Weights,
    action_and_gradient_flat,
    total_action,
)
from delaynet.utils.exceptions import (
    AnnealDivergedError,
    InvalidParameterError,
    SeriesFormatError,
    ShapeMismatchError,
)


@pytest.fixture
def quick_schedule():
    return AnnealSchedule(r_f0_over_rm=1e-2, alpha=10.0, n_steps=4, n_inits=3, seed=11)


@pytest.fixture
def quick_optimizer():
    return OptimizerConfig(max_iter=200)


@pytest.fixture
def tiny_library():
    return PairLibrary(
        inputs=np.array([[0.1, -0.5], [0.7, 0.2]]),
        outputs=np.array([[-0.3, 0.4], [0.6, -0.8]]),
        holdout_inputs=np.empty((0, 2)),
        holdout_outputs=np.empty((0, 2)),
        tau=1,
    )


def _record(final_actions: list[float | None], arch: Architecture) -> AnnealRecord:
    weights = [Weights.zeros(arch).to_document() if a is not None else None for a in final_actions]
    finite = sorted(a for a in final_actions if a is not None)
    step = AnnealStep(
        step=0,
        r_f_over_rm=1.0,
        levels=finite,
        init_actions=final_actions,
        best_init=0,
        converged=len(finite),
    )
    return AnnealRecord(
        arch=arch.to_document(),
        schedule=AnnealSchedule(n_steps=1, n_inits=len(final_actions)),
        optimizer=OptimizerConfig(),
        m=1,
        steps=[step],
        final_weights=weights,
    )


class TestSchedule:
    def test_steps_reach_the_largest_precision(self):
        schedule = AnnealSchedule(r_f0_over_rm=1e-8, alpha=1.1, r_f_max_over_rm=1e11)
        values = schedule.r_f_values()
        assert values[-1] >= 1e11 * (1 - 1e-9)
        assert values[-2] < 1e11
        assert 455 <= schedule.total_steps <= 465

    def test_n_steps_wins(self):
        assert AnnealSchedule(n_steps=7).total_steps == 7

    def test_geometric_values(self):
        values = AnnealSchedule(r_f0_over_rm=2.0, alpha=3.0, n_steps=3).r_f_values()
        assert values == pytest.approx([2.0, 6.0, 18.0])

    def test_alpha_must_exceed_one(self):
        with pytest.raises(ValidationError):
            AnnealSchedule(alpha=1.0)

    def test_n_inits_positive(self):
        with pytest.raises(ValidationError):
            AnnealSchedule(n_inits=0)


class TestInitPaths:
    def test_same_seed_same_paths(self, small_library, small_arch):
        a = init_paths(small_library, small_arch, 4, seed=3)
        b = init_paths(small_library, small_arch, 4, seed=3)
        assert all(np.array_equal(x.to_flat(), y.to_flat()) for x, y in zip(a, b, strict=True))

    def test_ports_hold_the_data(self, small_library, small_arch):
        for ps in init_paths(small_library, small_arch, 3, seed=0):
            assert np.array_equal(ps.layers[0], small_library.inputs)
            assert np.array_equal(ps.layers[-1], small_library.outputs)

    def test_ranges(self, small_library, small_arch):
        for ps in init_paths(small_library, small_arch, 3, seed=0, w0=0.1):
            assert all(np.all(np.abs(x) <= 1.0) for x in ps.layers)
            assert np.all(np.abs(ps.weights.to_flat()) <= 0.1)

    def test_lineages_differ(self, small_library, small_arch):
        paths = init_paths(small_library, small_arch, 20, seed=0)
        flats = [p.to_flat() for p in paths]
        assert all(not np.array_equal(flats[i], flats[j]) for i in range(20) for j in range(i))

    def test_lineage_independent_of_count(self, small_library, small_arch):
        few = init_paths(small_library, small_arch, 2, seed=9)
        many = init_paths(small_library, small_arch, 5, seed=9)
        assert np.array_equal(few[1].to_flat(), many[1].to_flat())

    def test_requires_one_init(self, small_library, small_arch):
        with pytest.raises(InvalidParameterError):
            init_paths(small_library, small_arch, 0, seed=0)

    def test_dimension_mismatch(self, small_library):
        with pytest.raises(ShapeMismatchError):
            init_paths(small_library, Architecture.from_depth(4, 3, 4), 1, seed=0)


class TestMinimizeAtBeta:
    def test_zero_r_f_fits_the_ports(self, small_library, small_arch):
        ps = init_paths(small_library, small_arch, 1, seed=0)[0]
        shifted = PathState((ps.layers[0] + 0.3, *ps.layers[1:-1], ps.layers[-1] - 0.2), ps.weights)
        result = minimize_at_beta(shifted, small_library, small_arch, Precisions(1.0, 0.0))
        assert result.action < 1e-10

    def test_never_worse_than_start(self, small_library, small_arch):
        prec = Precisions(1.0, 50.0)
        ps = init_paths(small_library, small_arch, 1, seed=4)[0]
        start = total_action(ps, small_library, small_arch, prec)
        result = minimize_at_beta(ps, small_library, small_arch, prec, OptimizerConfig(max_iter=5))
        assert result.action <= start + 1e-12
        assert result.iterations <= 5

    @pytest.mark.parametrize("precondition", [True, False])
    def test_ports_fit_with_and_without_scaling(self, small_library, small_arch, precondition):
        ps = init_paths(small_library, small_arch, 1, seed=2)[0]
        shifted = PathState((ps.layers[0] - 0.4, *ps.layers[1:-1], ps.layers[-1] + 0.1), ps.weights)
        cfg = OptimizerConfig(precondition=precondition)
        assert minimize_at_beta(shifted, small_library, small_arch, Precisions(1.0, 0.0), cfg).action < 1e-10

    def test_worse_result_is_rejected(self, monkeypatch, small_library, small_arch):
        prec = Precisions(1.0, 5.0)
        ps = init_paths(small_library, small_arch, 1, seed=1)[0]
        start = total_action(ps, small_library, small_arch, prec)

        def uphill(fun, x0, args=(), **kwargs):
            return OptimizeResult(x=x0 + 1.0, fun=start + 1.0, nit=3, success=True)

        monkeypatch.setattr(anneal_module, "minimize", uphill)
        before = REGISTRY.get_sample_value("delaynet_minimizations_total", {"outcome": "rejected"}) or 0.0
        result = minimize_at_beta(ps, small_library, small_arch, prec)
        after = REGISTRY.get_sample_value("delaynet_minimizations_total", {"outcome": "rejected"})
        assert after == before + 1.0
        assert result.action == start
        assert result.path is ps
        assert not result.converged

    def test_non_finite_start_rejected(self, small_library, small_arch):
        ps = init_paths(small_library, small_arch, 1, seed=0)[0]
        ps.layers[1][0, 0] = np.nan
        with pytest.raises(InvalidParameterError):
            minimize_at_beta(ps, small_library, small_arch, Precisions())

    def test_tiny_problem_matches_multistart(self, tiny_library, quick_schedule):
        arch = Architecture((2, 2, 2))
        prec = Precisions(1.0, quick_schedule.r_f_values()[-1])
        rng = np.random.default_rng(0)
        best = math.inf
        for _ in range(50):
            layers = (tiny_library.inputs, rng.uniform(-1, 1, (2, 2)), tiny_library.outputs)
            start = PathState(layers, Weights.uniform(arch, 2.0, rng))
            best = min(best, minimize_at_beta(start, tiny_library, arch, prec).action)
        record = anneal(tiny_library, arch, quick_schedule)
        assert record.steps[-1].levels[0] == pytest.approx(best, abs=1e-6)


class TestVariableScale:
    def test_activations_scaled_weights_not(self, small_arch):
        scale = variable_scale(small_arch, 12)
        n_act = 12 * sum(small_arch.layer_widths)
        assert scale.size == n_act + small_arch.n_weights
        assert np.all(scale[:n_act] == pytest.approx(math.sqrt(12)))
        assert np.all(scale[n_act:] == 1.0)

    def test_scaled_objective_is_the_action(self, small_library, small_arch, rng):
        prec = Precisions(1.0, 30.0)
        x = init_paths(small_library, small_arch, 1, seed=5)[0].to_flat()
        scale = variable_scale(small_arch, small_library.m)
        value, grad_z = scaled_action_and_gradient(x / scale, scale, small_library, small_arch, prec)
        expected, grad_x = action_and_gradient_flat(x, small_library, small_arch, prec)
        assert value == pytest.approx(expected, rel=1e-12)
        np.testing.assert_allclose(grad_z, grad_x * scale, rtol=1e-12, atol=1e-15)


class TestAnneal:
    def test_record_shape(self, small_library, small_arch, quick_schedule, quick_optimizer):
        record = anneal(small_library, small_arch, quick_schedule, quick_optimizer)
        assert len(record.steps) == 4
        assert [s.r_f_over_rm for s in record.steps] == pytest.approx([1e-2, 1e-1, 1.0, 10.0])
        for st in record.steps:
            assert st.levels == sorted(st.levels)
            assert len(st.levels) == 3
            assert all(math.isfinite(a) for a in st.levels)
        assert len(record.final_weights) == 3
        assert record.best_path is not None

    def test_best_init_holds_lowest_level(self, small_library, small_arch, quick_schedule, quick_optimizer):
        record = anneal(small_library, small_arch, quick_schedule, quick_optimizer)
        for st in record.steps:
            assert st.init_actions[st.best_init] == st.levels[0]

    def test_levels_agree_at_vanishing_model_precision(self, small_library, small_arch, quick_optimizer):
        schedule = AnnealSchedule(r_f0_over_rm=1e-8, n_steps=1, n_inits=6, seed=3)
        levels = anneal(small_library, small_arch, schedule, quick_optimizer).steps[0].levels
        assert len(levels) == 6
        assert levels[-1] - levels[0] < 1e-6

    def test_single_step(self, small_library, small_arch, quick_optimizer):
        schedule = AnnealSchedule(r_f0_over_rm=1e-8, n_steps=1, n_inits=2, seed=0)
        record = anneal(small_library, small_arch, schedule, quick_optimizer)
        assert len(record.steps) == 1
        assert record.steps[0].levels[0] < 1e-6

    def test_serial_and_parallel_records_are_identical(
        self, small_library, small_arch, quick_schedule, quick_optimizer
    ):
        serial = anneal(small_library, small_arch, quick_schedule, quick_optimizer, workers=1)
        parallel = anneal(small_library, small_arch, quick_schedule, quick_optimizer, workers=3)
        assert serial.model_dump_json() == parallel.model_dump_json()

    def test_every_lineage_diverging_raises(self, monkeypatch, small_library, small_arch, quick_schedule):
        def broken(ps, lib, arch, prec, opt_cfg=None):
            return Minimized(ps, math.nan, False, 0)

        monkeypatch.setattr(anneal_module, "minimize_at_beta", broken)
        with pytest.raises(AnnealDivergedError):
            anneal(small_library, small_arch, quick_schedule)

    def test_persistently_non_finite_lineage_is_dropped(
        self, monkeypatch, small_library, small_arch, quick_schedule
    ):
        original = anneal_module.minimize_at_beta
        bad = init_paths(small_library, small_arch, 3, quick_schedule.seed)[1].to_flat()

        def flaky(ps, lib, arch, prec, opt_cfg=None):
            if np.array_equal(ps.to_flat(), bad):
                return Minimized(ps, math.nan, False, 0)
            return original(ps, lib, arch, prec, opt_cfg)

        monkeypatch.setattr(anneal_module, "minimize_at_beta", flaky)
        schedule = quick_schedule.model_copy(update={"max_nonfinite": 2})
        record = anneal(small_library, small_arch, schedule, OptimizerConfig(max_iter=50))
        assert all(st.init_actions[1] is None for st in record.steps)
        assert all(len(st.levels) == 2 for st in record.steps)
        assert record.final_weights[1] is None


class TestEarlyStop:
    def _steps(self, lows, median):
        return [
            AnnealStep(
                step=i,
                r_f_over_rm=1.0,
                levels=[low, median, median * 2],
                init_actions=[],
                best_init=0,
                converged=3,
            )
            for i, low in enumerate(lows)
        ]

    def test_plateau_below_median_stops(self):
        schedule = AnnealSchedule(alpha=10.0, n_steps=10, early_stop=True)
        assert anneal_module._should_stop(self._steps([1.0, 1.0, 1.0], 100.0), schedule)

    def test_changing_level_continues(self):
        schedule = AnnealSchedule(alpha=10.0, n_steps=10, early_stop=True)
        assert not anneal_module._should_stop(self._steps([1.0, 2.0, 3.0], 100.0), schedule)

    def test_level_close_to_median_continues(self):
        schedule = AnnealSchedule(alpha=10.0, n_steps=10, early_stop=True)
        assert not anneal_module._should_stop(self._steps([1.0, 1.0, 1.0], 2.0), schedule)

    def test_needs_a_full_decade(self):
        schedule = AnnealSchedule(alpha=1.1, n_steps=100, early_stop=True)
        assert not anneal_module._should_stop(self._steps([1.0] * 5, 100.0), schedule)


class TestSelectBest:
    def test_single_init(self, small_arch):
        _, diag = select_best(_record([0.5], small_arch))
        assert diag.best_init == 0
        assert diag.gap is None

    def test_tie_goes_to_lowest_index(self, small_arch):
        _, diag = select_best(_record([0.7, 0.2, 0.2], small_arch))
        assert diag.best_init == 1

    def test_gap_and_dominance(self, small_arch):
        _, diag = select_best(_record([0.9, 0.4, None, 1.5], small_arch))
        assert diag.best_init == 1
        assert diag.second_action == 0.9
        assert diag.gap == pytest.approx(0.5)
        assert diag.dominance_factor == pytest.approx(math.exp(-0.5))
        assert diag.n_candidates == 3

    def test_returns_weights_of_best(self, small_library, small_arch, quick_schedule, quick_optimizer):
        record = anneal(small_library, small_arch, quick_schedule, quick_optimizer)
        weights, diag = select_best(record)
        expected = Weights.from_document(record.final_weights[diag.best_init])
        assert np.array_equal(weights.to_flat(), expected.to_flat())

    def test_no_survivors(self, small_arch):
        with pytest.raises(InvalidParameterError):
            select_best(_record([None, None], small_arch))


class TestLevelsTable:
    def test_columns_and_padding(self, small_arch):
        table = levels_table(_record([0.3, None, 0.1], small_arch))
        assert list(table.columns) == ["step", "r_f_over_rm", "level_1", "level_2", "level_3"]
        assert table.loc[0, "level_1"] == 0.1
        assert math.isnan(table.loc[0, "level_3"])


class TestAlphaCheck:
    def test_refined_schedule(self, small_library, small_arch, quick_optimizer):
        schedule = AnnealSchedule(r_f0_over_rm=1e-2, alpha=100.0, n_steps=3, n_inits=2, seed=1)
        report = alpha_check(small_library, small_arch, schedule, quick_optimizer)
        assert report.alpha_refined == pytest.approx(10.0)
        assert report.relative_discrepancy >= 0.0
        assert report.lowest_at_alpha >= 0.0


class TestPersistence:
    def test_round_trip(self, tmp_path, small_library, small_arch, quick_schedule, quick_optimizer):
        record = anneal(small_library, small_arch, quick_schedule, quick_optimizer)
        save_record(record, tmp_path / "record.json")
        assert load_record(tmp_path / "record.json") == record

    def test_unreadable(self, tmp_path):
        with pytest.raises(SeriesFormatError):
            load_record(tmp_path / "missing.json")
