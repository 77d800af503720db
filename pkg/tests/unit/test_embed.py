"""
tests/unit/test_embed.py

Unit tests for AMI, first-minimum selection, delay vectors, Theiler
neighbour search and false nearest neighbours.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from delaynet.services.data import SeriesOrigin, TimeSeries
from delaynet.services.embed import (
    AMICurve,
    EmbeddingSpec,
    FNNCurve,
    average_mutual_information,
    brute_force_neighbors,
    delay_vectors,
    false_nearest_neighbors,
    first_minimum,
    select_embedding,
    select_embedding_dimension,
    theiler_neighbors,
)
from delaynet.utils.exceptions import (
    EmbeddingDimensionNotFoundError,
    InsufficientDataError,
    InvalidParameterError,
)


def _series(values) -> TimeSeries:
    return TimeSeries(values=np.asarray(values, dtype=float), dt=1.0, origin=SeriesOrigin.NOISY)


def _naive_ami(values, tau, n_bins):
    lo, hi = min(values), max(values)
    width = (hi - lo) / n_bins

    def cell(v):
        return min(int((v - lo) / width), n_bins - 1)

    pairs = [(cell(values[i]), cell(values[i + tau])) for i in range(len(values) - tau)]
    n = len(pairs)
    joint = {}
    for a, b in pairs:
        joint[(a, b)] = joint.get((a, b), 0) + 1
    first = {a: sum(c for (x, _), c in joint.items() if x == a) for a, _ in joint}
    second = {b: sum(c for (_, y), c in joint.items() if y == b) for _, b in joint}
    return sum(
        (c / n) * math.log2((c / n) / ((first[a] / n) * (second[b] / n))) for (a, b), c in joint.items()
    )


@pytest.fixture
def sine():
    n = np.arange(3_000)
    return _series(np.sin(0.3 * n))


class TestAverageMutualInformation:
    def test_matches_enumeration_on_tiny_series(self):
        values = [0, 1, 3, 2, 0, 3, 1, 1, 2, 0, 3, 3, 1, 0, 2, 2]
        curve = average_mutual_information(_series(values), tau_max=3, n_bins=2)
        for tau, ami in zip(curve.taus, curve.ami_bits, strict=True):
            assert ami == pytest.approx(_naive_ami(values, int(tau), 2), abs=1e-12)

    def test_alternating_series_with_two_bins(self):
        values = [0, 1, 0, 1, 0, 1, 0, 1]
        curve = average_mutual_information(_series(values), tau_max=3, n_bins=2)
        # 7 pairs at lag 1: four start on 0, three on 1; the pairing is deterministic
        expected = -(4 / 7) * math.log2(4 / 7) - (3 / 7) * math.log2(3 / 7)
        assert curve.ami_bits[0] == pytest.approx(expected, abs=1e-12)

    def test_non_negative(self, rescaled_series):
        curve = average_mutual_information(rescaled_series, tau_max=20, n_bins=32)
        assert np.all(curve.ami_bits >= 0.0)

    def test_white_noise_carries_little_information(self):
        rng = np.random.default_rng(0)
        curve = average_mutual_information(_series(rng.normal(size=20_000)), tau_max=5, n_bins=16)
        assert np.all(curve.ami_bits < 0.05)

    def test_reversal_leaves_curve_unchanged(self, rescaled_series):
        forward = average_mutual_information(rescaled_series, tau_max=10, n_bins=32)
        backward = average_mutual_information(_series(rescaled_series.values[::-1]), tau_max=10, n_bins=32)
        assert np.allclose(forward.ami_bits, backward.ami_bits, rtol=0.0, atol=1e-12)

    def test_parallel_equals_serial(self, rescaled_series):
        serial = average_mutual_information(rescaled_series, tau_max=12, n_bins=32)
        parallel = average_mutual_information(rescaled_series, tau_max=12, n_bins=32, workers=4)
        assert np.array_equal(serial.ami_bits, parallel.ami_bits)

    def test_leading_samples_only(self, rescaled_series):
        head = _series(rescaled_series.values[:1_000])
        sliced = average_mutual_information(rescaled_series, tau_max=10, n_bins=32, n_samples=1_000)
        direct = average_mutual_information(head, tau_max=10, n_bins=32)
        assert np.array_equal(sliced.ami_bits, direct.ami_bits)

    def test_n_samples_validated(self, rescaled_series):
        with pytest.raises(InvalidParameterError):
            average_mutual_information(rescaled_series, tau_max=3, n_samples=1)

    def test_tau_max_too_large(self):
        with pytest.raises(InvalidParameterError):
            average_mutual_information(_series(np.arange(10.0)), tau_max=5)

    def test_series_shorter_than_lags(self):
        with pytest.raises(InsufficientDataError):
            average_mutual_information(_series([1.0, 2.0, 3.0]), tau_max=4)

    def test_constant_series_has_zero_ami(self):
        curve = average_mutual_information(_series(np.ones(20)), tau_max=3, n_bins=4)
        assert np.all(curve.ami_bits == 0.0)


class TestFirstMinimum:
    def test_first_interior_minimum(self):
        curve = AMICurve(taus=np.arange(1, 6), ami_bits=np.array([3.0, 2.0, 1.0, 2.0, 0.0]))
        assert first_minimum(curve) == 3

    def test_monotone_curve_has_none(self):
        curve = AMICurve(taus=np.arange(1, 5), ami_bits=np.array([4.0, 3.0, 2.0, 1.0]))
        assert first_minimum(curve) is None

    def test_needs_three_points(self):
        with pytest.raises(InvalidParameterError):
            first_minimum(AMICurve(taus=np.arange(1, 3), ami_bits=np.array([1.0, 0.5])))


class TestDelayVectors:
    def test_rows_follow_delay_rule(self):
        dv = delay_vectors(_series(np.arange(10.0)), EmbeddingSpec(tau=2, d_e=3))
        assert dv.matrix.shape == (6, 3)
        assert list(dv.matrix[0]) == [0.0, 2.0, 4.0]
        assert list(dv.matrix[-1]) == [5.0, 7.0, 9.0]

    @pytest.mark.parametrize("draw", range(20))
    def test_entries_match_source_indices(self, draw):
        rng = np.random.default_rng(draw)
        tau = int(rng.integers(1, 9))
        d_e = int(rng.integers(1, 7))
        values = rng.normal(size=int(rng.integers(d_e * tau + 1, 200)))
        dv = delay_vectors(_series(values), EmbeddingSpec(tau=tau, d_e=d_e))
        rows = np.arange(len(dv))[:, None]
        cols = np.arange(d_e)[None, :]
        assert len(dv) == values.size - (d_e - 1) * tau
        assert np.array_equal(dv.matrix, values[rows + cols * tau])

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            delay_vectors(_series(np.arange(4.0)), EmbeddingSpec(tau=2, d_e=3))

    def test_spec_must_be_positive(self):
        with pytest.raises(InvalidParameterError):
            EmbeddingSpec(tau=0, d_e=3)


class TestTheilerNeighbors:
    def test_matches_brute_force(self, rng):
        points = rng.normal(size=(300, 3))
        d_tree, i_tree = theiler_neighbors(points, k=4, window=3)
        d_brute, i_brute = brute_force_neighbors(points, k=4, window=3)
        assert np.array_equal(i_tree, i_brute)
        assert np.allclose(d_tree, d_brute)

    def test_excludes_temporal_window(self, rng):
        points = np.cumsum(rng.normal(size=(200, 2)), axis=0)
        _, idx = theiler_neighbors(points, k=3, window=5)
        assert np.all(np.abs(idx - np.arange(200)[:, None]) > 5)

    def test_query_subset(self, rng):
        points = rng.normal(size=(100, 2))
        _, all_idx = theiler_neighbors(points, k=2, window=1)
        _, some_idx = theiler_neighbors(points, k=2, window=1, query=np.array([10, 20]))
        assert np.array_equal(some_idx, all_idx[[10, 20]])

    def test_too_few_points(self, rng):
        with pytest.raises(InsufficientDataError):
            theiler_neighbors(rng.normal(size=(5, 2)), k=3, window=2)


class TestFalseNearestNeighbors:
    def test_sine_unfolds_in_two_dimensions(self, sine):
        curve = false_nearest_neighbors(sine, tau=5, d_max=4)
        assert curve.fnn_fraction[0] > 0.1
        assert curve.fnn_fraction[1] <= 0.01
        assert select_embedding_dimension(curve) == 2

    def test_brute_force_agrees(self, sine):
        short = _series(sine.values[:600])
        fast = false_nearest_neighbors(short, tau=5, d_max=3)
        slow = false_nearest_neighbors(short, tau=5, d_max=3, brute_force=True)
        assert np.array_equal(fast.fnn_fraction, slow.fnn_fraction)

    def test_parallel_equals_serial(self, sine):
        serial = false_nearest_neighbors(sine, tau=5, d_max=3)
        parallel = false_nearest_neighbors(sine, tau=5, d_max=3, workers=3)
        assert np.array_equal(serial.fnn_fraction, parallel.fnn_fraction)

    def test_white_noise_never_unfolds(self):
        noise = _series(np.random.default_rng(7).normal(size=3_000))
        curve = false_nearest_neighbors(noise, tau=1, d_max=6)
        assert np.all(curve.fnn_fraction > 0.1)

    def test_d_max_validated(self, sine):
        with pytest.raises(InvalidParameterError):
            false_nearest_neighbors(sine, tau=5, d_max=1)

    def test_threshold_never_reached(self):
        curve = FNNCurve(dims=np.arange(1, 4), fnn_fraction=np.array([0.5, 0.3, 0.2]))
        with pytest.raises(EmbeddingDimensionNotFoundError):
            select_embedding_dimension(curve, threshold=0.01)


class TestSelectEmbedding:
    def test_given_values_are_used(self, rescaled_series):
        spec, tau_from_ami, d_e_from_fnn = select_embedding(rescaled_series, tau=7, d_e=5)
        assert spec == EmbeddingSpec(tau=7, d_e=5)
        assert not tau_from_ami and not d_e_from_fnn

    def test_tau_from_ami_on_sine(self, sine):
        spec, tau_from_ami, _ = select_embedding(sine, d_e=2, tau_max=20, n_bins=16)
        assert tau_from_ami
        assert 1 <= spec.tau <= 20

    def test_ami_on_leading_samples_of_rescaled_series(self, rescaled_series):
        # The leading slice of a rescaled series need not reach both -1 and 1
        assert len(rescaled_series) > 2_000
        spec, tau_from_ami, d_e_from_fnn = select_embedding(
            rescaled_series, d_e=3, tau_max=20, n_bins=32, ami_samples=2_000
        )
        assert tau_from_ami and not d_e_from_fnn
        curve = average_mutual_information(rescaled_series, tau_max=20, n_bins=32, n_samples=2_000)
        expected = first_minimum(curve)
        if expected is None:
            expected = int(curve.taus[int(np.argmin(curve.ami_bits))])
        assert spec.tau == expected

    def test_default_pipeline_selects_both(self, rescaled_series):
        spec, tau_from_ami, d_e_from_fnn = select_embedding(
            rescaled_series, tau_max=20, n_bins=32, ami_samples=2_000, d_max=8, fnn_threshold=0.5
        )
        assert tau_from_ami and d_e_from_fnn
        assert 1 <= spec.d_e <= 8
