#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
test_schedule
------------

Tests for `mmts` schedule module.
"""

import json
import os
import shutil
import tempfile
import unittest

import mock
import numpy as np
from numpy.testing import assert_allclose

from mmts.exceptions import DomainError, ImproperlyConfigured
from mmts.schedule import (
    PRESETS, LossKind, ScheduleConfig, ShiftTable, base_temperature, cluster_shift, decode_schedule_config,
    endpoint_table, feasible_grid, format_schedule_tsv, load_schedule_config, sample_temperature,
    sample_temperatures, schedule_dump, temperature_range,
)


CC3M = ScheduleConfig(alpha=0.04, period=1000, sh_minus=0.05, sh_plus=0.10)


def two_cluster_table(sh_minus=0.05, sh_plus=0.10):
    # Sample 0 sits in the large cluster, sample 1 in the small one.
    return ShiftTable(k=2, sizes=[69669, 2904], shifts=[sh_plus, sh_minus], assignments=[0, 1],
                      sh_minus=sh_minus, sh_plus=sh_plus)


class TestClusterShift(unittest.TestCase):

    def test_largest_cluster_gets_upper_bound(self):
        self.assertEqual(cluster_shift(106, 9, 106, 0.10, 0.30), 0.30)

    def test_smallest_cluster_gets_lower_bound(self):
        self.assertEqual(cluster_shift(9, 9, 106, 0.10, 0.30), 0.10)

    def test_midpoint(self):
        self.assertAlmostEqual(cluster_shift(57, 8, 106, 0.10, 0.30), 0.20, places=12)

    def test_equal_sizes_return_midpoint(self):
        self.assertAlmostEqual(cluster_shift(5, 5, 5, 0.10, 0.30), 0.20, places=12)

    def test_monotone_in_size(self):
        shifts = [cluster_shift(size, 1, 50, 0.05, 0.2) for size in range(1, 51)]
        self.assertTrue(all(a <= b for a, b in zip(shifts, shifts[1:])))
        self.assertTrue(all(0.05 <= s <= 0.2 for s in shifts))

    def test_size_outside_bounds(self):
        with self.assertRaises(DomainError):
            cluster_shift(200, 9, 106, 0.10, 0.30)
        with self.assertRaises(DomainError):
            cluster_shift(3, 9, 106, 0.10, 0.30)

    def test_inverted_bounds(self):
        with self.assertRaises(DomainError):
            cluster_shift(10, 9, 106, 0.30, 0.10)


class TestBaseTemperature(unittest.TestCase):

    def test_starts_at_maximum(self):
        self.assertAlmostEqual(base_temperature(0, CC3M), 0.02, places=15)

    def test_half_period_is_minimum(self):
        self.assertAlmostEqual(base_temperature(500, CC3M), -0.02, places=15)

    def test_quarter_period_vanishes(self):
        self.assertEqual(base_temperature(250, CC3M), 0.0)
        self.assertEqual(base_temperature(750, CC3M), 0.0)

    def test_periodic(self):
        for t in (0, 1, 137, 499, 999):
            self.assertEqual(base_temperature(t, CC3M), base_temperature(t + CC3M.period, CC3M))
            self.assertEqual(base_temperature(t, CC3M), base_temperature(t + 7 * CC3M.period, CC3M))

    def test_bounded_by_half_alpha(self):
        values = [base_temperature(t, CC3M) for t in range(CC3M.period)]
        self.assertLessEqual(max(values), CC3M.alpha / 2)
        self.assertGreaterEqual(min(values), -CC3M.alpha / 2)


class TestSampleTemperature(unittest.TestCase):

    def setUp(self):
        self.table = two_cluster_table()

    def test_largest_cluster_at_start(self):
        self.assertAlmostEqual(sample_temperature(0, 0, self.table, CC3M), 0.12, places=12)

    def test_smallest_cluster_at_half_period(self):
        self.assertAlmostEqual(sample_temperature(500, 1, self.table, CC3M), 0.03, places=12)

    def test_quarter_period_is_shift(self):
        self.assertEqual(sample_temperature(250, 0, self.table, CC3M), 0.10)
        self.assertEqual(sample_temperature(250, 1, self.table, CC3M), 0.05)

    def test_out_of_range(self):
        with self.assertRaises(IndexError):
            sample_temperature(0, 2, self.table, CC3M)
        with self.assertRaises(IndexError):
            sample_temperature(0, -1, self.table, CC3M)

    def test_vectorized_matches_scalar(self):
        taus = sample_temperatures(123, [1, 0, 1], self.table, CC3M)
        expected = [sample_temperature(123, i, self.table, CC3M) for i in (1, 0, 1)]
        assert_allclose(taus, expected, rtol=0, atol=1e-15)

    def test_vectorized_out_of_range(self):
        with self.assertRaises(IndexError):
            sample_temperatures(0, [0, 5], self.table, CC3M)


class TestScheduleConfig(unittest.TestCase):

    def test_rejects_non_positive_lower_temperature(self):
        with self.assertRaises(ImproperlyConfigured):
            ScheduleConfig(alpha=0.2, period=100, sh_minus=0.1, sh_plus=0.3)

    def test_lower_bound_comes_from_temperature_range(self):
        with mock.patch('mmts.schedule.temperature_range', return_value=(0.0, 0.2)) as patched:
            with self.assertRaises(ImproperlyConfigured):
                ScheduleConfig(alpha=0.01, period=100, sh_minus=0.1, sh_plus=0.3)
        self.assertTrue(patched.called)

    def test_rejects_inverted_bounds(self):
        with self.assertRaises(ImproperlyConfigured):
            ScheduleConfig(alpha=0.01, period=100, sh_minus=0.3, sh_plus=0.1)

    def test_rejects_bad_period(self):
        with self.assertRaises(ImproperlyConfigured):
            ScheduleConfig(alpha=0.01, period=0, sh_minus=0.1, sh_plus=0.3)

    def test_loss_kind_coerced(self):
        config = ScheduleConfig(alpha=0.01, period=10, sh_minus=0.1, sh_plus=0.3, loss_kind='max_margin')
        self.assertIs(config.loss_kind, LossKind.MAX_MARGIN)

    def test_every_preset_is_feasible(self):
        for name in PRESETS:
            config = decode_schedule_config({'preset': name, 'period': 1000})
            low, high = temperature_range(config)
            self.assertGreater(low, 0, name)
            self.assertLess(low, high)

    def test_preset_values_can_be_overridden(self):
        config = decode_schedule_config({'preset': 'clip_cc3m', 'period': 500, 'alpha': 0.02})
        self.assertEqual(config.alpha, 0.02)
        self.assertEqual(config.sh_plus, 0.10)

    def test_unknown_preset(self):
        with self.assertRaises(ImproperlyConfigured):
            decode_schedule_config({'preset': 'nope', 'period': 500})

    def test_missing_key(self):
        with self.assertRaises(ImproperlyConfigured):
            decode_schedule_config({'alpha': 0.04, 'sh_minus': 0.05, 'sh_plus': 0.1})

    def test_unknown_loss_kind(self):
        with self.assertRaises(ImproperlyConfigured):
            decode_schedule_config({'alpha': 0.04, 'period': 10, 'sh_minus': 0.05, 'sh_plus': 0.1,
                                    'loss_kind': 'triplet'})


class TestFeasibleGrid(unittest.TestCase):

    def test_flags_infeasible_cells(self):
        grid = feasible_grid([(0.05, 0.10), (0.17, 0.30)], [0.04, 0.20])
        self.assertTrue(grid[(0.05, 0.10, 0.04)])
        self.assertFalse(grid[(0.05, 0.10, 0.20)])
        self.assertTrue(grid[(0.17, 0.30, 0.20)])
        self.assertEqual(len(grid), 4)


class TestScheduleDump(unittest.TestCase):

    def test_single_iteration(self):
        rows = schedule_dump(two_cluster_table(), CC3M, 1)
        self.assertEqual(len(rows), 2)
        self.assertEqual([row.t for row in rows], [0, 0])
        assert_allclose([row.temperature for row in rows], [0.12, 0.07], atol=1e-12)

    def test_periodicity_of_rows(self):
        config = ScheduleConfig(alpha=0.04, period=8, sh_minus=0.05, sh_plus=0.10)
        table = endpoint_table(config)
        rows = schedule_dump(table, config, config.period + 1)
        first = [row.temperature for row in rows if row.t == 0]
        last = [row.temperature for row in rows if row.t == config.period]
        self.assertEqual(first, last)

    def test_all_positive(self):
        rows = schedule_dump(endpoint_table(CC3M), CC3M, 1000)
        self.assertGreater(min(row.temperature for row in rows), 0)
        self.assertEqual(len(rows), 2000)

    def test_rejects_zero_iters(self):
        with self.assertRaises(DomainError):
            schedule_dump(endpoint_table(CC3M), CC3M, 0)

    def test_tsv(self):
        text = format_schedule_tsv(schedule_dump(endpoint_table(CC3M), CC3M, 1))
        self.assertEqual(text, 't\tcluster\ttemperature\n0\t0\t0.07\n0\t1\t0.12\n')


class TestLoadScheduleConfig(unittest.TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_round_trip_through_file(self):
        path = os.path.join(self.directory, 'schedule.json')
        with open(path, 'w') as fh:
            json.dump(CC3M.to_dict(), fh)
        self.assertEqual(load_schedule_config(path), CC3M)

    def test_invalid_json(self):
        path = os.path.join(self.directory, 'broken.json')
        with open(path, 'w') as fh:
            fh.write('{"alpha": ')
        with self.assertRaises(ImproperlyConfigured):
            load_schedule_config(path)


class TestShiftTable(unittest.TestCase):

    def test_arrays_are_read_only(self):
        table = two_cluster_table()
        with self.assertRaises(ValueError):
            table.shifts[0] = 1.0

    def test_rejects_bad_assignment(self):
        with self.assertRaises(ImproperlyConfigured):
            ShiftTable(k=2, sizes=[1, 1], shifts=[0.1, 0.2], assignments=[0, 2], sh_minus=0.1, sh_plus=0.2)

    def test_sizes_must_match_k(self):
        with self.assertRaises(ImproperlyConfigured):
            ShiftTable(k=3, sizes=[1, 1], shifts=[0.1, 0.2], assignments=[0, 1], sh_minus=0.1, sh_plus=0.2)

    def test_shifts_must_lie_within_bounds(self):
        with self.assertRaises(ImproperlyConfigured):
            ShiftTable(k=2, sizes=[1, 1], shifts=[0.01, 0.2], assignments=[0, 1], sh_minus=0.1, sh_plus=0.2)
        with self.assertRaises(ImproperlyConfigured):
            ShiftTable(k=2, sizes=[1, 1], shifts=[0.1, 0.25], assignments=[0, 1], sh_minus=0.1, sh_plus=0.2)
        with self.assertRaises(ImproperlyConfigured):
            ShiftTable(k=2, sizes=[1, 1], shifts=[0.1, 0.2], assignments=[0, 1], sh_minus=0.2, sh_plus=0.1)

    def test_endpoint_table(self):
        table = endpoint_table(CC3M)
        self.assertEqual(table.k, 2)
        self.assertEqual(list(table.shifts), [0.05, 0.10])
        self.assertTrue(np.array_equal(table.assignments, [0, 1]))


if __name__ == '__main__':
    unittest.main()
