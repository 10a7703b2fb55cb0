#!/usr/bin/env python3
"""
Tests for coherence quantities and profiles
"""

import math
from itertools import combinations

import numpy as np
import pytest

from coherence import (CoherenceProfile, Strategy, block_coherence, coherence_profile, enumeration_size,
                       hier_block_coherence, hier_sub_coherence, mutual_coherence, sub_coherence, welch_bound)
from exceptions import CoherenceError, SampledCoherenceError


def unit_norm(rng, M, N):
    D = rng.standard_normal((M, N))
    return D / np.linalg.norm(D, axis=0)


def brute_force_mu(D, d, d_star):
    nb, m = D.shape[1] // d, d_star // d
    best = 0.0
    for first in combinations(range(nb), m):
        for second in combinations(range(nb), m):
            if set(first) & set(second):
                continue
            cols_a = [u * d + i for u in first for i in range(d)]
            cols_b = [u * d + i for u in second for i in range(d)]
            best = max(best, np.linalg.norm(D[:, cols_a].T @ D[:, cols_b], ord=2))
    return best / d_star


class TestClassicCoherence:
    def test_duplicated_basis(self):
        D = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
        assert mutual_coherence(D) == pytest.approx(1.0)
        assert block_coherence(D, 2) == pytest.approx(0.5)
        assert sub_coherence(D, 2) == pytest.approx(0.0)

    def test_orthonormal(self):
        D = np.eye(6)
        assert mutual_coherence(D) == 0.0
        assert block_coherence(D, 2) == 0.0
        assert sub_coherence(D, 3) == 0.0

    def test_diagonal_pair(self):
        D = np.array([[1.0, 1.0 / math.sqrt(2.0)], [0.0, 1.0 / math.sqrt(2.0)]])
        assert mutual_coherence(D) == pytest.approx(1.0 / math.sqrt(2.0))

    def test_indivisible(self):
        with pytest.raises(CoherenceError):
            block_coherence(np.eye(5), 2)

    def test_single_column(self):
        with pytest.raises(CoherenceError):
            mutual_coherence(np.ones((3, 1)))


class TestHierarchicalCoherence:
    def test_matches_brute_force(self):
        D = unit_norm(np.random.default_rng(1), 5, 8)
        assert hier_block_coherence(D, 1, 2, workers=1) == pytest.approx(brute_force_mu(D, 1, 2))
        assert hier_block_coherence(D, 2, 4, workers=2) == pytest.approx(brute_force_mu(D, 2, 4))

    def test_unit_length_is_block_coherence(self):
        D = unit_norm(np.random.default_rng(2), 6, 8)
        assert hier_block_coherence(D, 2, 2) == pytest.approx(block_coherence(D, 2))

    def test_sampled_is_lower_bound(self):
        D = unit_norm(np.random.default_rng(3), 6, 12)
        exact = hier_block_coherence(D, 1, 2)
        sampled = hier_block_coherence(D, 1, 2, Strategy.sampled(50, seed=4))
        assert sampled <= exact + 1e-12
        assert sampled == hier_block_coherence(D, 1, 2, Strategy.sampled(50, seed=4))

    def test_enumeration_size(self):
        assert enumeration_size(8, 1, 2) == 420
        assert enumeration_size(8, 1, 2, restrict_to=4) == 84

    def test_cap(self):
        D = unit_norm(np.random.default_rng(4), 5, 8)
        with pytest.raises(CoherenceError):
            hier_block_coherence(D, 1, 2, cap=10)

    @pytest.mark.parametrize('d,d_star,restrict_to', [(2, 3, None), (2, 6, None), (1, 4, 2)])
    def test_invalid_lengths(self, d, d_star, restrict_to):
        with pytest.raises(CoherenceError):
            hier_block_coherence(np.eye(8), d, d_star, restrict_to=restrict_to)

    def test_restricted_not_above_unrestricted(self):
        D = unit_norm(np.random.default_rng(5), 5, 8)
        assert hier_block_coherence(D, 1, 2, restrict_to=4) <= hier_block_coherence(D, 1, 2) + 1e-12

    def test_sub_coherence_at_unit_length(self):
        D = unit_norm(np.random.default_rng(6), 6, 8)
        assert hier_sub_coherence(D, 2, 2, 4) == pytest.approx(sub_coherence(D, 2))
        assert hier_sub_coherence(D, 2, 2, 4) > 0.0

    def test_sub_coherence_spans_mode_block(self):
        D = unit_norm(np.random.default_rng(7), 6, 8)
        G = np.abs(D.T @ D)
        expected = max(G[b + i, b + j] for b in (0, 4) for i in range(4) for j in range(4) if i != j)
        assert hier_sub_coherence(D, 1, 2, 4) == pytest.approx(expected)


class TestWelch:
    def test_reference_value(self):
        assert welch_bound(128, 512) == pytest.approx(0.0766, abs=1e-4)

    def test_square_frame(self):
        assert welch_bound(4, 4) == 0.0

    def test_invalid(self):
        with pytest.raises(CoherenceError):
            welch_bound(5, 4)


class TestProfile:
    def test_round_trip(self):
        D = unit_norm(np.random.default_rng(8), 6, 8)
        profile = coherence_profile(D, 1, d_stars=[2], mode_blocks=[4], workers=1)
        assert CoherenceProfile.from_dict(profile.to_dict()) == profile
        assert 'welch' in profile.to_dict()

    def test_lookups(self):
        D = unit_norm(np.random.default_rng(9), 6, 8)
        profile = coherence_profile(D, 2, d_stars=[4], mode_blocks=[8])
        assert profile.mu_at(2) == profile.mu_block
        assert profile.nu_at(2, 8) == profile.nu_sub
        assert profile.mu_at(4) == pytest.approx(hier_block_coherence(D, 2, 4))
        with pytest.raises(CoherenceError):
            profile.mu_at(8)
        with pytest.raises(CoherenceError):
            profile.nu_at(4, 16)

    def test_sampled_refused(self):
        D = unit_norm(np.random.default_rng(10), 6, 8)
        profile = coherence_profile(D, 1, d_stars=[2], strategy=Strategy.sampled(20, seed=1))
        with pytest.raises(SampledCoherenceError):
            profile.mu_at(2)
        assert profile.mu_at(2, allow_sampled=True) == profile.mu_hier[2]
