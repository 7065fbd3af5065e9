# -*- coding: utf-8 -*-

# Temperature and margin schedules.
#
# A per-sample temperature (or margin, for the max-margin loss) is the sum of
# a cosine base term shared by all samples and a shift derived from the size
# of the sample's cluster:
#
#   tau_base(t) = alpha * cos(2 * pi * t / T) / 2
#   sh(c) = (K_c - min K) / (max K - min K) * (sh_plus - sh_minus) + sh_minus
#   tau_i(t) = tau_base(t) + sh(c_i)
#
# A schedule configuration is a dictionary (usually read from JSON) with the
# following keys:
# - alpha: amplitude of the cosine term, in temperature units
# - period: period T of the cosine, in optimizer iterations
# - sh_minus: shift of the smallest cluster
# - sh_plus: shift of the largest cluster
#
# Optionally:
# - loss_kind: infonce or max_margin, default is infonce
# - preset: name of one of PRESETS; explicit keys override the preset values

import collections
import enum
import json
import logging
import math

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, ImproperlyConfigured


logger = logging.getLogger('mmts')

# Rounding allowance when checking shifts against [sh_minus, sh_plus].
SHIFT_TOLERANCE = 1e-12


class LossKind(str, enum.Enum):
    INFONCE = 'infonce'
    MAX_MARGIN = 'max_margin'


# Hyperparameters reported for the published training runs. None of them
# states a period, so it always has to be configured.
PRESETS = {
    'clip_cc3m': {'alpha': 0.04, 'sh_minus': 0.05, 'sh_plus': 0.10, 'loss_kind': 'infonce'},
    'avion_mimm': {'alpha': 0.20, 'sh_minus': 0.17, 'sh_plus': 0.30, 'loss_kind': 'max_margin'},
    'avion_clip': {'alpha': 0.08, 'sh_minus': 0.05, 'sh_plus': 0.20, 'loss_kind': 'infonce'},
    'vast_clip': {'alpha': 0.06, 'sh_minus': 0.06, 'sh_plus': 0.09, 'loss_kind': 'infonce'},
}


@dataclass(frozen=True)
class ScheduleConfig:
    alpha: float
    period: int
    sh_minus: float
    sh_plus: float
    loss_kind: LossKind = LossKind.INFONCE

    def __post_init__(self):
        try:
            object.__setattr__(self, 'loss_kind', LossKind(self.loss_kind))
        except ValueError:
            raise ImproperlyConfigured('Unknown loss kind {}.'.format(self.loss_kind))
        if self.alpha < 0:
            raise ImproperlyConfigured('alpha must be non-negative, got {}.'.format(self.alpha))
        if int(self.period) != self.period or self.period < 1:
            raise ImproperlyConfigured('period must be a positive integer, got {}.'.format(self.period))
        if self.sh_minus > self.sh_plus:
            raise ImproperlyConfigured(
                'sh_minus ({}) must not exceed sh_plus ({}).'.format(self.sh_minus, self.sh_plus)
            )
        if temperature_range(self)[0] <= 0:
            raise ImproperlyConfigured(
                'sh_minus - alpha/2 must be positive so every temperature stays positive, '
                'got sh_minus={} alpha={}.'.format(self.sh_minus, self.alpha)
            )

    def to_dict(self):
        return {
            'alpha': self.alpha,
            'period': self.period,
            'sh_minus': self.sh_minus,
            'sh_plus': self.sh_plus,
            'loss_kind': LossKind(self.loss_kind).value,
        }


@dataclass(frozen=True, eq=False)
class ShiftTable:
    """Frozen per-cluster shifts, cluster sizes and per-sample assignments."""
    k: int
    sizes: np.ndarray
    shifts: np.ndarray
    assignments: np.ndarray
    sh_minus: float
    sh_plus: float
    seed: int = None

    def __post_init__(self):
        for name, dtype in (('sizes', np.int64), ('shifts', np.float64), ('assignments', np.int64)):
            value = np.array(getattr(self, name), dtype=dtype)
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if len(self.sizes) != self.k or len(self.shifts) != self.k:
            raise ImproperlyConfigured('A shift table needs exactly k={} sizes and shifts.'.format(self.k))
        if len(self.assignments) and (self.assignments.min() < 0 or self.assignments.max() >= self.k):
            raise ImproperlyConfigured('Every assignment must be a cluster index in [0, {}).'.format(self.k))
        if self.sh_minus > self.sh_plus:
            raise ImproperlyConfigured(
                'sh_minus ({}) must not exceed sh_plus ({}).'.format(self.sh_minus, self.sh_plus)
            )
        slack = SHIFT_TOLERANCE * max(1.0, abs(self.sh_plus))
        if self.k and (self.shifts.min() < self.sh_minus - slack or self.shifts.max() > self.sh_plus + slack):
            logger.fatal('Shifts outside [{}, {}]'.format(self.sh_minus, self.sh_plus))
            raise ImproperlyConfigured(
                'Every shift must lie in [{}, {}], got [{}, {}].'.format(
                    self.sh_minus, self.sh_plus, self.shifts.min(), self.shifts.max())
            )

    @property
    def n(self):
        return len(self.assignments)

    def to_dict(self):
        return {
            'k': int(self.k),
            'sizes': [int(s) for s in self.sizes],
            'shifts': [float(s) for s in self.shifts],
            'assignments': [int(a) for a in self.assignments],
            'sh_minus': float(self.sh_minus),
            'sh_plus': float(self.sh_plus),
            'seed': self.seed,
        }


ScheduleRow = collections.namedtuple('ScheduleRow', ['t', 'cluster', 'temperature'])


def _decode_schedule(location):
    logger.debug("_decode_schedule")
    location = dict(location)
    preset = location.pop('preset', '')
    if preset:
        if preset not in PRESETS:
            logger.fatal('Unknown schedule preset {}.'.format(preset))
            raise ImproperlyConfigured(
                'Unknown schedule preset {}. Choose one of {}.'.format(preset, ', '.join(sorted(PRESETS)))
            )
        location = dict(PRESETS[preset], **location)

    # Mandatory attributes
    for key in ('alpha', 'period', 'sh_minus', 'sh_plus'):
        if location.get(key, '') in ('', None):
            logger.fatal('A value for {} must be provided.'.format(key))
            raise ImproperlyConfigured(
                'A value for {} must be provided.'.format(key)
            )

    try:
        alpha = float(location['alpha'])
        sh_minus = float(location['sh_minus'])
        sh_plus = float(location['sh_plus'])
        period = location['period']
        if isinstance(period, float) and not period.is_integer():
            raise ValueError('period must be integral')
        period = int(period)
    except (TypeError, ValueError) as exc:
        logger.fatal('Malformed schedule configuration: {}'.format(exc))
        raise ImproperlyConfigured('Malformed schedule configuration: {}'.format(exc))

    # Optional attributes
    loss_kind = location.get('loss_kind', '') or LossKind.INFONCE.value
    try:
        loss_kind = LossKind(loss_kind)
    except ValueError:
        logger.fatal('Unknown loss kind {}.'.format(loss_kind))
        raise ImproperlyConfigured('Unknown loss kind {}.'.format(loss_kind))

    return ScheduleConfig(alpha=alpha, period=period, sh_minus=sh_minus, sh_plus=sh_plus, loss_kind=loss_kind)


def decode_schedule_config(location):
    return _decode_schedule(location)


def load_schedule_config(path):
    logger.debug("load_schedule_config")
    with open(path, 'r', encoding='utf-8') as fh:
        try:
            location = json.load(fh)
        except ValueError as exc:
            raise ImproperlyConfigured("The file '{}' is not valid JSON: {}".format(path, exc))
    return _decode_schedule(location)


def cluster_shift(size, min_size, max_size, sh_minus, sh_plus):
    """Map a cluster size affinely onto [sh_minus, sh_plus].

    The smallest cluster gets sh_minus and the largest sh_plus. When every
    cluster has the same size the midpoint of the two bounds is returned.
    """
    if sh_minus > sh_plus:
        raise DomainError('sh_minus ({}) must not exceed sh_plus ({}).'.format(sh_minus, sh_plus))
    if not min_size <= size <= max_size:
        logger.error("Cluster size {} outside [{}, {}]".format(size, min_size, max_size))
        raise DomainError('Cluster size {} lies outside [{}, {}].'.format(size, min_size, max_size))
    if max_size == min_size:
        return (sh_plus + sh_minus) / 2.0
    # Endpoints are returned exactly.
    if size == max_size:
        return float(sh_plus)
    if size == min_size:
        return float(sh_minus)
    return (float(size - min_size) / (max_size - min_size)) * (sh_plus - sh_minus) + sh_minus


def _cosine_of_phase(t, period):
    remainder = int(t) % int(period)
    # cos(pi/2) and cos(3pi/2) are not exactly zero in floating point.
    if 4 * remainder in (period, 3 * period):
        return 0.0
    return math.cos(2.0 * math.pi * remainder / period)


def base_temperature(t, config):
    return config.alpha * _cosine_of_phase(t, config.period) / 2.0


def sample_temperature(t, sample_index, table, config):
    if not 0 <= sample_index < table.n:
        logger.error("Sample index {} out of range for {} samples".format(sample_index, table.n))
        raise IndexError('Sample index {} out of range for {} samples.'.format(sample_index, table.n))
    return base_temperature(t, config) + float(table.shifts[table.assignments[sample_index]])


def sample_temperatures(t, indices, table, config):
    """Temperatures (or margins) for a batch of sample indices at iteration t."""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) and (indices.min() < 0 or indices.max() >= table.n):
        logger.error("Batch indices out of range for {} samples".format(table.n))
        raise IndexError('Batch indices out of range for {} samples.'.format(table.n))
    return base_temperature(t, config) + table.shifts[table.assignments[indices]].astype(np.float64)


def temperature_range(config):
    """Lowest and highest temperature any sample can reach under config."""
    return config.sh_minus - config.alpha / 2.0, config.sh_plus + config.alpha / 2.0


def feasible_grid(ranges, alphas):
    """Flag which (sh_minus, sh_plus, alpha) combinations keep every temperature positive.

    ``ranges`` is a sequence of (sh_minus, sh_plus) pairs. Returns a dict keyed
    by (sh_minus, sh_plus, alpha).
    """
    grid = collections.OrderedDict()
    for sh_minus, sh_plus in ranges:
        for alpha in alphas:
            grid[(sh_minus, sh_plus, alpha)] = sh_minus <= sh_plus and sh_minus - alpha / 2.0 > 0
    return grid


def schedule_dump(table, config, iters):
    logger.debug("schedule_dump")
    if iters < 1:
        raise DomainError('iters must be at least 1, got {}.'.format(iters))
    rows = []
    for t in range(iters):
        base = base_temperature(t, config)
        for cluster in range(table.k):
            rows.append(ScheduleRow(t, cluster, base + float(table.shifts[cluster])))
    return rows


def format_schedule_tsv(rows):
    lines = ['t\tcluster\ttemperature']
    for row in rows:
        lines.append('{}\t{}\t{:.9g}'.format(row.t, row.cluster, row.temperature))
    return '\n'.join(lines) + '\n'


def endpoint_table(config):
    """Two-cluster table holding only the smallest and the largest cluster."""
    return ShiftTable(
        k=2,
        sizes=[0, 1],
        shifts=[config.sh_minus, config.sh_plus],
        assignments=[0, 1],
        sh_minus=config.sh_minus,
        sh_plus=config.sh_plus,
    )
