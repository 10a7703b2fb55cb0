#!/usr/bin/env python3
"""
Tests for HiBOMP-P and its degenerations
"""

import numpy as np
import pytest

import recovery
from exceptions import HiblkError, StructureError
from model import (ModePrior, OverlapCounts, PriorSupport, SignalDist, WeightKind, WeightStrategy,
                   make_structure, sample_matrix, sample_psi, sample_signal)
from recovery import Status, admissible_supports, bomp, brute_force_support, hibomp, hibomp_p, hiomp, omp


def instance(dims, d, sparsity, M, seed):
    s = make_structure(dims, d, sparsity)
    D = sample_matrix(M, s, seed).entries
    x = sample_signal(s, SignalDist.GAUSSIAN, seed + 1)
    return s, D, x


class TestOrthonormal:
    def test_exact_recovery(self):
        s = make_structure([4, 3], 2, [2, 1])
        x = sample_signal(s, SignalDist.GAUSSIAN, 0)
        result = hibomp(np.eye(s.N), x.coeffs, s)
        assert result.support == x.flat_support
        np.testing.assert_allclose(result.estimate, x.coeffs, atol=1e-12)
        assert result.status is Status.CONVERGED_TOL
        assert result.iterations == 2
        assert result.coefficient_indices().tolist() == x.support_columns.tolist()

    def test_brute_force_agrees(self):
        s = make_structure([3, 2], 1, [2, 1])
        x = sample_signal(s, SignalDist.GAUSSIAN, 2)
        assert brute_force_support(np.eye(s.N), x.coeffs, s) == x.flat_support

    def test_on_step_sees_every_selection(self):
        s = make_structure([4, 3], 2, [2, 1])
        x = sample_signal(s, SignalDist.GAUSSIAN, 1)
        states = []
        hibomp_p(np.eye(s.N), x.coeffs, s, on_step=states.append)
        assert [state.mode for state in states] == [1, 2, 1, 2]
        assert states[0].support == ()
        assert len(states[2].support) == 1


class TestDegenerations:
    @pytest.mark.parametrize('seed', range(100))
    def test_single_mode_is_bomp(self, seed):
        s, D, x = instance([12], 2, [3], 14, seed)
        y = D @ x.coeffs
        a, b = hibomp_p(D, y, s), bomp(D, y, 2, 3)
        assert a.support == b.support
        np.testing.assert_array_equal(a.estimate, b.estimate)

    @pytest.mark.parametrize('seed', range(100))
    def test_unit_length_one_is_hiomp(self, seed):
        s, D, x = instance([6, 4], 1, [2, 2], 14, seed)
        y = D @ x.coeffs
        a, b = hibomp(D, y, s), hiomp(D, y, s)
        assert a.support == b.support
        np.testing.assert_array_equal(a.estimate, b.estimate)

    @pytest.mark.parametrize('seed', range(100))
    def test_zero_weights_is_hibomp(self, seed):
        s, D, x = instance([6, 4], 1, [2, 2], 14, seed)
        y = D @ x.coeffs
        psi = sample_psi(s, x, [OverlapCounts(alpha_star_delta=2), OverlapCounts()],
                         WeightStrategy(WeightKind.ZERO), rng_seed=seed)
        a, b = hibomp_p(D, y, s, psi), hibomp(D, y, s)
        assert a.support == b.support
        np.testing.assert_array_equal(a.estimate, b.estimate)

    def test_omp_is_unit_bomp(self):
        s, D, x = instance([12], 1, [3], 10, 3)
        y = D @ x.coeffs
        assert omp(D, y, 3).support == bomp(D, y, 1, 3).support

    def test_hiomp_flattens_last_mode(self):
        s = make_structure([4, 3], 2, [2, 1])
        x = sample_signal(s, SignalDist.GAUSSIAN, 4)
        result = hiomp(np.eye(s.N), x.coeffs, s)
        assert result.unit_block == 1
        assert result.coefficient_indices().tolist() == x.support_columns.tolist()


class TestPriorSupport:
    def test_known_blocks_first(self):
        s, D, x = instance([6, 4], 1, [2, 2], 20, 7)
        psi = sample_psi(s, x, [OverlapCounts(alpha_bar=1), OverlapCounts()], rng_seed=3)
        result = hibomp_p(D, D @ x.coeffs, s, psi)
        first = result.selections[0]
        assert first.known
        assert first.mode == 1
        assert first.block == psi.mode(1).whole_blocks[0]

    def test_rank_failure(self):
        s = make_structure([4], 1, [2])
        D = np.eye(4)
        D[:, 1] = D[:, 0]
        psi = PriorSupport((ModePrior(theta_star=[0, 1]),))
        result = hibomp_p(D, np.array([1.0, 0.0, 0.0, 0.0]), s, psi)
        assert result.status is Status.RANK_FAILURE
        assert result.support == (0,)

    def test_estimate_keeps_known_units(self):
        s = make_structure([2, 2], 1, [1, 1])
        D = np.eye(4) + 0.05 * np.random.default_rng(0).standard_normal((4, 4))
        D /= np.linalg.norm(D, axis=0)
        psi = PriorSupport((ModePrior(theta_star=[0]), ModePrior()))
        result = hibomp_p(D, D[:, 0] + 2 * D[:, 1], s, psi)
        assert result.support == (1,)
        np.testing.assert_allclose(result.estimate, [1.0, 2.0, 0.0, 0.0], atol=1e-10)
        assert result.status is Status.CONVERGED_TOL
        assert result.iterations == 2

    def test_no_extra_fit_when_known_units_selected(self):
        s = make_structure([2, 2], 1, [1, 1])
        D = np.eye(4) + 0.05 * np.random.default_rng(0).standard_normal((4, 4))
        D /= np.linalg.norm(D, axis=0)
        psi = PriorSupport((ModePrior(theta_star=[1]), ModePrior()))
        result = hibomp_p(D, D[:, 0] + 2 * D[:, 1], s, psi)
        assert result.support == (1,)
        assert result.iterations == 1
        assert result.estimate[0] == 0.0

    def test_zero_measurement(self):
        s = make_structure([4], 1, [2])
        result = hibomp_p(np.eye(4), np.zeros(4), s)
        assert result.support == ()
        assert result.status is Status.CONVERGED_TOL


class TestValidation:
    def test_shape_mismatch(self):
        s = make_structure([4], 2, [1])
        with pytest.raises(StructureError):
            hibomp(np.eye(6), np.ones(6), s)
        with pytest.raises(StructureError):
            hibomp(np.eye(8), np.ones(5), s)

    def test_bomp_zero_blocks(self):
        result = bomp(np.eye(4), np.ones(4), 2, 0)
        assert result.support == ()
        assert result.status is Status.MAX_SPARSITY

    def test_admissible_count(self):
        assert len(admissible_supports(make_structure([3, 2], 1, [2, 1]))) == 12


class TestRegistry:
    def test_mols_slot(self):
        with pytest.raises(HiblkError):
            recovery.get_algorithm('mols')(np.eye(2), np.ones(2), make_structure([2], 1, [1]), None, None)

    def test_unknown(self):
        with pytest.raises(HiblkError):
            recovery.get_algorithm('lasso')

    def test_register(self):
        recovery.register_algorithm('echo', lambda D, y, s, psi, eps: 'ran')
        try:
            assert recovery.get_algorithm('echo')(None, None, None, None, None) == 'ran'
        finally:
            recovery.ALGORITHMS.pop('echo')

    def test_result_dict(self):
        s = make_structure([4], 1, [1])
        data = hibomp(np.eye(4), np.array([0.0, 2.0, 0.0, 0.0]), s).to_dict()
        assert data['support'] == [1]
        assert data['status'] == 'converged_tol'
        assert data['iterations'] == 1
