#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_loss
------------

Tests for `mmts` loss module.
"""

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from mmts.exceptions import ArgumentError, DomainError, NumericError, ValidationError
from mmts.gradcheck import central_difference, relative_error
from mmts.loss import (
    Direction, LossResult, SimilarityMatrix, contrastive_loss, contribution_entropy, embedding_gradients,
    format_profile_tsv, hard_easy_ratio, infonce, max_margin, multimodal_infonce, negative_contribution_profile,
    similarity_matrix,
)
from mmts.schedule import LossKind


def unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def scalar_infonce(values, taus):
    n = len(values)
    total = 0.0
    for i in range(n):
        denominator = sum(math.exp(values[i][j] / taus[i]) for j in range(n))
        total += -math.log(math.exp(values[i][i] / taus[i]) / denominator)
    return total / n


def single_temperature_infonce(values, tau):
    logits = np.asarray(values) / tau
    peak = logits.max(axis=1, keepdims=True)
    log_denominator = np.log(np.exp(logits - peak).sum(axis=1)) + peak[:, 0]
    return float(np.mean(log_denominator - np.diag(logits)))


TAUS = [0.05, 0.1, 0.2, 0.5, 1.0]


def anchor_with_negatives(similarities):
    values = np.eye(len(similarities) + 1)
    values[0] = [1.0] + list(similarities)
    return values


def scalar_max_margin(values, margins):
    n = len(values)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            total += max(0.0, values[i][j] - values[i][i] + margins[i])
            total += max(0.0, values[j][i] - values[i][i] + margins[i])
    return total / (2 * n * (n - 1))


class TestSimilarityMatrix(unittest.TestCase):

    def test_orthonormal_identity(self):
        rows = np.eye(3)
        assert_allclose(similarity_matrix(rows, rows).values, np.eye(3))

    def test_opposite_pairs(self):
        v = np.eye(2)
        similarities = similarity_matrix(v, -v)
        assert_allclose(np.diag(similarities.values), [-1.0, -1.0])

    def test_matches_dot_products(self):
        rng = np.random.default_rng(0)
        v, t = unit_rows(rng, 4, 8), unit_rows(rng, 4, 8)
        values = similarity_matrix(v, t).values
        for i in range(4):
            for j in range(4):
                self.assertAlmostEqual(values[i, j], sum(v[i, k] * t[j, k] for k in range(8)), places=12)

    def test_shape_mismatch(self):
        with self.assertRaises(ArgumentError):
            similarity_matrix(np.eye(3), np.eye(2))

    def test_non_unit_rows(self):
        with self.assertRaises(ValidationError):
            similarity_matrix(2 * np.eye(2), np.eye(2))

    def test_must_be_square(self):
        with self.assertRaises(ArgumentError):
            SimilarityMatrix(np.zeros((2, 3)))

    def test_transpose_flips_direction(self):
        similarities = SimilarityMatrix([[1.0, 0.2], [0.3, 1.0]])
        flipped = similarities.transpose()
        self.assertEqual(flipped.direction, Direction.T_TO_V)
        self.assertEqual(flipped.values[0, 1], 0.3)


class TestInfoNCE(unittest.TestCase):

    def test_single_pair(self):
        result = infonce([[0.7]], [0.3])
        self.assertEqual(result.loss, 0.0)

    def test_uniform_rows(self):
        result = infonce(np.full((8, 8), 0.4), np.full(8, 0.1))
        self.assertAlmostEqual(result.loss, math.log(8), places=9)

    def test_two_by_two(self):
        result = infonce([[1.0, 0.2], [0.2, 1.0]], [0.5, 0.5])
        self.assertAlmostEqual(result.loss, math.log1p(math.exp(-1.6)), places=12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        values = rng.uniform(-1, 1, size=(5, 5))
        taus = rng.uniform(0.05, 1.0, size=5)
        self.assertAlmostEqual(infonce(values, taus).loss, scalar_infonce(values, taus), places=10)

    def test_constant_temperature_matches_single_temperature(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(2, 17))
            values = rng.uniform(-1, 1, size=(n, n))
            tau = float(rng.uniform(0.05, 1.0))
            expected = single_temperature_infonce(values, tau)
            self.assertLess(abs(infonce(values, np.full(n, tau)).loss - expected), 1e-12)

    def test_row_shift_leaves_loss_unchanged(self):
        rng = np.random.default_rng(10)
        values = rng.uniform(-1, 1, size=(6, 6))
        taus = rng.uniform(0.05, 1.0, size=6)
        shifted = values.copy()
        shifted[2] += 0.37
        self.assertAlmostEqual(infonce(shifted, taus).loss, infonce(values, taus).loss, delta=1e-9)

    def test_gradient_ratio_is_softmax_ratio(self):
        values = anchor_with_negatives([0.9, 0.5, 0.1])
        for tau in TAUS:
            grad = infonce(values, np.full(4, tau)).grad_similarities
            self.assertAlmostEqual(grad[0, 1] / grad[0, 3] / math.exp((0.9 - 0.1) / tau), 1.0, delta=1e-9)

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(2)
        result = infonce(rng.uniform(-1, 1, size=(6, 6)), rng.uniform(0.1, 1.0, size=6))
        assert_allclose(result.grad_similarities.sum(axis=1), 0.0, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(-1, 1, size=(4, 4))
        taus = rng.uniform(0.1, 1.0, size=4)
        numeric = central_difference(lambda s: infonce(s, taus).loss, values)
        self.assertLess(relative_error(infonce(values, taus).grad_similarities, numeric), 1e-6)

    def test_non_positive_temperature(self):
        with self.assertRaises(DomainError):
            infonce(np.eye(2), [0.1, 0.0])
        with self.assertRaises(DomainError):
            infonce(np.eye(2), [0.1, -0.2])

    def test_temperature_count(self):
        with self.assertRaises(ArgumentError):
            infonce(np.eye(3), [0.1, 0.1])

    def test_large_logits_stay_finite(self):
        result = infonce([[1.0, -1.0], [-1.0, 1.0]], [1e-4, 1e-4])
        self.assertTrue(np.isfinite(result.loss))
        self.assertTrue(np.all(np.isfinite(result.grad_similarities)))


class TestMultimodalInfoNCE(unittest.TestCase):

    def test_symmetric_matrix(self):
        values = np.array([[1.0, 0.3, 0.1], [0.3, 1.0, 0.5], [0.1, 0.5, 1.0]])
        taus = [0.2, 0.3, 0.4]
        self.assertAlmostEqual(multimodal_infonce(values, taus).loss, infonce(values, taus).loss, places=12)

    def test_single_pair(self):
        self.assertEqual(multimodal_infonce([[0.1]], [0.5]).loss, 0.0)

    def test_average_of_directions(self):
        rng = np.random.default_rng(4)
        values = rng.uniform(-1, 1, size=(4, 4))
        taus = rng.uniform(0.1, 1.0, size=4)
        expected = 0.5 * (infonce(values, taus).loss + infonce(values.T, taus).loss)
        self.assertAlmostEqual(multimodal_infonce(values, taus).loss, expected, places=12)

    def test_transpose_gives_same_loss(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            values = rng.uniform(-1, 1, size=(5, 5))
            taus = rng.uniform(0.05, 1.0, size=5)
            self.assertAlmostEqual(multimodal_infonce(values, taus).loss, multimodal_infonce(values.T, taus).loss,
                                   delta=1e-12)

    def test_dispatch(self):
        values = np.eye(3)
        self.assertEqual(contrastive_loss(values, [0.1] * 3, LossKind.INFONCE).loss,
                         multimodal_infonce(values, [0.1] * 3).loss)
        self.assertEqual(contrastive_loss(values, [0.1] * 3, 'max_margin').loss,
                         max_margin(values, [0.1] * 3).loss)


class TestMaxMargin(unittest.TestCase):

    def test_all_hinges_inactive(self):
        values = np.full((3, 3), -1.0)
        np.fill_diagonal(values, 1.0)
        result = max_margin(values, [0.2] * 3)
        self.assertEqual(result.loss, 0.0)
        self.assertFalse(np.any(result.grad_similarities))

    def test_saturated_pairs(self):
        result = max_margin(np.full((2, 2), 0.5), [0.2, 0.2])
        self.assertAlmostEqual(result.loss, 0.2, places=12)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(2, 13))
            values = rng.uniform(-1, 1, size=(n, n))
            margins = rng.uniform(0.05, 0.5, size=n)
            self.assertLess(abs(max_margin(values, margins).loss - scalar_max_margin(values, margins)), 1e-12)

    def test_positive_gradient_counts_active_hinges(self):
        rng = np.random.default_rng(12)
        n = 6
        values = rng.uniform(-1, 1, size=(n, n))
        margins = rng.uniform(0.05, 0.5, size=n)
        grad = max_margin(values, margins).grad_similarities
        for i in range(n):
            active = sum(
                int(values[i, j] - values[i, i] + margins[i] > 0) + int(values[j, i] - values[i, i] + margins[i] > 0)
                for j in range(n) if j != i
            )
            self.assertAlmostEqual(grad[i, i], -active / (2.0 * n * (n - 1)), places=15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        values = rng.uniform(-1, 1, size=(5, 5))
        margins = rng.uniform(0.05, 0.5, size=5)
        numeric = central_difference(lambda s: max_margin(s, margins).loss, values, eps=1e-7)
        self.assertLess(relative_error(max_margin(values, margins).grad_similarities, numeric), 1e-6)

    def test_contributions_are_active_hinges(self):
        values = np.array([[0.5, 0.6], [0.0, 0.5]])
        result = max_margin(values, [0.2, 0.2])
        assert_allclose(result.per_negative_contributions, [[0.0, 0.3], [0.0, 0.0]], atol=1e-12)

    def test_single_pair(self):
        self.assertEqual(max_margin([[0.4]], [0.2]).loss, 0.0)

    def test_non_positive_margin(self):
        with self.assertRaises(DomainError):
            max_margin(np.eye(2), [0.0, 0.2])


class TestEmbeddingGradients(unittest.TestCase):

    def test_zero_gradient(self):
        rng = np.random.default_rng(7)
        v, t = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        zero = LossResult(0.0, np.zeros((3, 3)), np.zeros((3, 3)))
        grad_v, grad_t = embedding_gradients(v, t, zero)
        self.assertFalse(np.any(grad_v))
        self.assertFalse(np.any(grad_t))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        v_raw, t_raw = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        taus = rng.uniform(0.1, 1.0, size=3)

        def loss_of(v, t):
            return multimodal_infonce(
                similarity_matrix(v / np.linalg.norm(v, axis=1, keepdims=True),
                                  t / np.linalg.norm(t, axis=1, keepdims=True)), taus).loss

        result = multimodal_infonce(similarity_matrix(
            v_raw / np.linalg.norm(v_raw, axis=1, keepdims=True),
            t_raw / np.linalg.norm(t_raw, axis=1, keepdims=True)), taus)
        grad_v, grad_t = embedding_gradients(v_raw, t_raw, result)
        self.assertLess(relative_error(grad_v, central_difference(lambda v: loss_of(v, t_raw), v_raw)), 1e-4)
        self.assertLess(relative_error(grad_t, central_difference(lambda t: loss_of(v_raw, t), t_raw)), 1e-4)

    def test_single_pair_gradient_is_tangent(self):
        rng = np.random.default_rng(13)
        v_raw, t_raw = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
        result = LossResult(0.0, np.array([[-0.7]]), np.zeros((1, 1)))
        grad_v, grad_t = embedding_gradients(v_raw, t_raw, result)
        self.assertAlmostEqual(float(grad_v[0] @ (v_raw[0] / np.linalg.norm(v_raw[0]))), 0.0, delta=1e-9)
        self.assertAlmostEqual(float(grad_t[0] @ (t_raw[0] / np.linalg.norm(t_raw[0]))), 0.0, delta=1e-9)
        self.assertGreater(np.linalg.norm(grad_v), 0.0)

    def test_shape_mismatch(self):
        zero = LossResult(0.0, np.zeros((2, 2)), np.zeros((2, 2)))
        with self.assertRaises(ArgumentError):
            embedding_gradients(np.ones((3, 4)), np.ones((3, 4)), zero)

    def test_zero_row(self):
        zero = LossResult(0.0, np.zeros((2, 2)), np.zeros((2, 2)))
        with self.assertRaises(NumericError):
            embedding_gradients(np.array([[0.0, 0.0], [1.0, 0.0]]), np.eye(2), zero)


class TestContributionProfile(unittest.TestCase):

    ROW = np.array([
        [1.0, 0.8, 0.5, 0.1, -0.4],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])

    def test_equal_negatives(self):
        profile = negative_contribution_profile(np.full((3, 3), 0.2), 0.1, 0)
        self.assertEqual(profile[0].contribution, profile[1].contribution)

    def test_sorted_hardest_first(self):
        profile = negative_contribution_profile(self.ROW, 0.1, 0)
        self.assertEqual([entry.index for entry in profile], [1, 2, 3, 4])
        self.assertEqual([entry.rank for entry in profile], [1, 2, 3, 4])
        similarities = [entry.similarity for entry in profile]
        self.assertEqual(similarities, sorted(similarities, reverse=True))

    def test_small_temperature_ratio(self):
        profile = negative_contribution_profile(self.ROW, 0.01, 0)
        expected = math.exp((0.8 - (-0.4)) / 0.01)
        self.assertAlmostEqual(hard_easy_ratio(profile) / expected, 1.0, places=6)

    def test_entropy_grows_with_temperature(self):
        cold = contribution_entropy(negative_contribution_profile(self.ROW, 0.1, 0))
        warm = contribution_entropy(negative_contribution_profile(self.ROW, 1.0, 0))
        self.assertGreater(warm, cold)

    def test_hardness_across_temperatures(self):
        values = anchor_with_negatives([0.9, 0.5, 0.1])
        ratios, entropies = [], []
        for tau in TAUS:
            profile = negative_contribution_profile(values, tau, 0)
            ratio = hard_easy_ratio(profile)
            self.assertAlmostEqual(ratio / math.exp((0.9 - 0.1) / tau), 1.0, delta=1e-9)
            ratios.append(ratio)
            entropies.append(contribution_entropy(profile))
        self.assertTrue(all(a > b for a, b in zip(ratios, ratios[1:])), ratios)
        self.assertTrue(all(a < b for a, b in zip(entropies, entropies[1:])), entropies)

    def test_ratio_after_easiest_share_underflows(self):
        profile = negative_contribution_profile(self.ROW, 0.0018, 0)
        self.assertEqual(profile[-1].contribution, 0.0)
        self.assertEqual(hard_easy_ratio(profile), float('inf'))
        ratio = hard_easy_ratio(profile, 0.0018)
        self.assertTrue(math.isfinite(ratio))
        self.assertAlmostEqual(ratio / math.exp((0.8 - (-0.4)) / 0.0018), 1.0, delta=1e-9)

    def test_bad_arguments(self):
        with self.assertRaises(DomainError):
            negative_contribution_profile(self.ROW, 0.0, 0)
        with self.assertRaises(IndexError):
            negative_contribution_profile(self.ROW, 0.1, 5)

    def test_tsv(self):
        text = format_profile_tsv(negative_contribution_profile(np.full((2, 2), 0.0), 1.0, 0))
        self.assertEqual(text, 'rank\tsimilarity\tcontribution\n1\t0\t0.5\n')


if __name__ == '__main__':
    unittest.main()
