"""
tests/unit/test_lyap.py

Unit tests for local Jacobian fits, the QR spectrum and the Kaplan-Yorke
dimension.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from delaynet.services.data import SeriesOrigin, TimeSeries
from delaynet.services.embed import DelayVectors, EmbeddingSpec, delay_vectors
from delaynet.services.lyap import (
    JacobianSequence,
    fit_local_jacobian,
    fit_terms,
    kaplan_yorke_dimension,
    local_jacobians,
    lyapunov_spectrum,
)
from delaynet.utils.exceptions import EmptyJacobianSequenceError, InvalidParameterError, SingularFitError


@pytest.fixture(scope="module")
def henon_series():
    x, y = 0.1, 0.1
    values = []
    for n in range(21_000):
        x, y = 1.0 - 1.4 * x * x + y, 0.3 * x
        if n >= 1_000:
            values.append(x)
    return TimeSeries(values=np.array(values), dt=1.0, origin=SeriesOrigin.CLEAN)


class TestFitLocalJacobian:
    def test_recovers_affine_map(self, rng):
        a = rng.normal(size=(3, 3))
        sources = rng.normal(size=(20, 3))
        images = sources @ a.T + np.array([0.5, -1.0, 2.0])
        assert np.allclose(fit_local_jacobian(sources, images), a, atol=1e-10)

    def test_identity_dynamics_give_identity(self, rng):
        sources = rng.normal(size=(10, 4))
        assert np.allclose(fit_local_jacobian(sources, sources.copy()), np.eye(4), atol=1e-12)

    def test_collinear_sources_are_singular(self):
        t = np.linspace(0.0, 1.0, 8)[:, None]
        sources = np.hstack([t, 2 * t])
        with pytest.raises(SingularFitError):
            fit_local_jacobian(sources, sources)

    def test_quadratic_map_exact_at_centre(self, rng):
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3, 3))
        b = b + b.transpose(0, 2, 1)
        sources = rng.normal(size=(40, 3))
        images = sources @ a.T + np.einsum("nj,ijk,nk->ni", sources, b, sources)
        centre = np.array([0.2, -0.4, 0.1])
        expected = a + 2.0 * np.einsum("ijk,k->ij", b, centre)
        jac = fit_local_jacobian(sources, images, order=2, centre=centre)
        assert np.allclose(jac, expected, atol=1e-8)

    def test_affine_fit_misses_curvature(self, rng):
        sources = rng.normal(size=(40, 1))
        images = sources**2
        centre = np.array([1.0])
        assert fit_local_jacobian(sources, images, order=2, centre=centre)[0, 0] == pytest.approx(2.0)
        assert fit_local_jacobian(sources, images, order=1, centre=centre)[0, 0] != pytest.approx(2.0)


class TestFitTerms:
    @pytest.mark.parametrize("dim", [1, 2, 5])
    def test_counts(self, dim):
        assert fit_terms(dim, 1) == dim + 1
        assert fit_terms(dim, 2) == dim + 1 + dim * (dim + 1) // 2

    def test_five_dimensional_quadratic(self):
        assert fit_terms(5, 2) == 21

    def test_bad_order(self):
        with pytest.raises(InvalidParameterError):
            fit_terms(3, 3)


class TestLocalJacobians:
    def test_one_jacobian_per_point(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        seq = local_jacobians(dv, max_points=100)
        assert len(seq) + seq.skipped_points == 100
        assert seq.matrices.shape[1:] == (2, 2)
        assert np.all(np.diff(seq.indices) > 0)

    def test_repeated_points_are_skipped(self):
        matrix = np.tile(np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 0.0]]), (50, 1))
        seq = local_jacobians(DelayVectors(matrix=matrix, spec=EmbeddingSpec(tau=1, d_e=2)))
        assert len(seq) == 0
        assert seq.skipped_points == matrix.shape[0] - 1
        with pytest.raises(EmptyJacobianSequenceError):
            lyapunov_spectrum(seq)

    def test_too_few_neighbours(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        with pytest.raises(InvalidParameterError):
            local_jacobians(dv, n_neighbors=2)

    def test_start_out_of_range(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        with pytest.raises(InvalidParameterError):
            local_jacobians(dv, start=len(dv))

    def test_henon_largest_exponent(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        result = lyapunov_spectrum(local_jacobians(dv, n_neighbors=8, max_points=5_000))
        assert result.exponents[0] == pytest.approx(0.42, abs=0.1)
        assert result.exponents[1] < 0.0

    def test_henon_quadratic_maps_are_exact(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        result = lyapunov_spectrum(local_jacobians(dv, max_points=5_000, order=2))
        assert result.exponents.sum() == pytest.approx(math.log(0.3), abs=1e-3)
        assert result.exponents[0] == pytest.approx(0.42, abs=0.03)

    def test_halving_neighbours_leaves_spectrum(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        full = lyapunov_spectrum(local_jacobians(dv, n_neighbors=24, max_points=5_000, order=2))
        half = lyapunov_spectrum(local_jacobians(dv, n_neighbors=12, max_points=5_000, order=2))
        assert np.allclose(full.exponents, half.exponents, atol=0.02)

    def test_quadratic_needs_more_neighbours(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        with pytest.raises(InvalidParameterError):
            local_jacobians(dv, n_neighbors=5, order=2)

    def test_evolution_strides_the_trajectory(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        seq = local_jacobians(dv, max_points=300, order=2, evolution=3)
        assert seq.evolution == 3
        assert len(seq) + seq.skipped_points == 100
        assert np.all(np.diff(seq.indices) % 3 == 0)

    def test_evolution_must_be_positive(self, henon_series):
        dv = delay_vectors(henon_series, EmbeddingSpec(tau=1, d_e=2))
        with pytest.raises(InvalidParameterError):
            local_jacobians(dv, evolution=0)


class TestLyapunovSpectrum:
    def test_diagonal_maps(self):
        jacobians = np.array([np.diag([2.0, 0.5, 1.0])] * 10)
        result = lyapunov_spectrum(jacobians)
        assert np.allclose(result.exponents, [math.log(2.0), 0.0, math.log(0.5)], atol=1e-12)

    def test_time_step_scales_exponents(self):
        jacobians = np.array([np.diag([2.0, 0.5])] * 4)
        result = lyapunov_spectrum(jacobians, dt=0.5)
        assert np.allclose(result.exponents, [2 * math.log(2.0), 2 * math.log(0.5)])

    def test_sum_equals_mean_log_determinant(self, rng):
        jacobians = rng.normal(size=(50, 3, 3))
        result = lyapunov_spectrum(jacobians)
        mean_log_det = np.mean([math.log(abs(np.linalg.det(j))) for j in jacobians])
        assert result.exponents.sum() == pytest.approx(mean_log_det, abs=1e-9)

    def test_sorted_descending(self, rng):
        result = lyapunov_spectrum(rng.normal(size=(30, 4, 4)))
        assert np.all(np.diff(result.exponents) <= 0.0)

    def test_accepts_jacobian_sequence(self):
        seq = JacobianSequence(
            matrices=np.array([np.diag([3.0, 0.1])] * 3), indices=np.arange(3), skipped_points=2
        )
        result = lyapunov_spectrum(seq)
        assert result.skipped_points == 2

    def test_evolution_divides_exponents(self):
        matrices = np.array([np.diag([4.0, 0.25])] * 6)
        one = lyapunov_spectrum(JacobianSequence(matrices=matrices, indices=np.arange(6), skipped_points=0))
        two = lyapunov_spectrum(
            JacobianSequence(matrices=matrices, indices=np.arange(0, 12, 2), skipped_points=0, evolution=2)
        )
        assert np.allclose(two.exponents, one.exponents / 2.0)

    def test_empty_sequence(self):
        with pytest.raises(EmptyJacobianSequenceError):
            lyapunov_spectrum(np.empty((0, 2, 2)))

    def test_dt_must_be_positive(self):
        with pytest.raises(InvalidParameterError):
            lyapunov_spectrum(np.array([np.eye(2)]), dt=0.0)


class TestKaplanYorke:
    def test_fractional_dimension(self):
        assert kaplan_yorke_dimension([0.5, 0.0, -1.0]) == pytest.approx(2.5)

    def test_all_positive_gives_full_dimension(self):
        assert kaplan_yorke_dimension([0.3, 0.1]) == 2.0

    def test_first_exponent_negative_gives_zero(self):
        assert kaplan_yorke_dimension([-0.1, -0.5]) == 0.0

    def test_order_of_input_is_irrelevant(self):
        assert kaplan_yorke_dimension([-1.0, 0.5, 0.0]) == pytest.approx(2.5)
