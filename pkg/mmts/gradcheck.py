# -*- coding: utf-8 -*-

"""
Finite-difference verification of the analytic loss gradients.

Each trial draws a random batch (N <= 16, d <= 8), evaluates both losses and
compares their gradients with respect to the similarity matrix and to the raw
embeddings against centered differences. Max-margin instances are redrawn
until every hinge argument is at least KINK_CLEARANCE away from zero, so the
finite differences never straddle a kink, and raw rows shorter than
MIN_ROW_NORM are redrawn.
"""

import logging

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ArgumentError
from .loss import embedding_gradients, infonce, max_margin, multimodal_infonce, similarity_matrix
from .schedule import LossKind


logger = logging.getLogger('mmts')

DEFAULT_EPS = 1e-5
DEFAULT_TOLERANCE = 1e-4
KINK_CLEARANCE = 1e-3
MIN_ROW_NORM = 0.25
MAX_N = 16
MAX_D = 8


@dataclass
class GradcheckTrial:
    trial: int
    loss_kind: str
    n: int
    d: int
    error_similarities: float
    error_embeddings: float
    row_sum: float = 0.0

    @property
    def max_error(self):
        return max(self.error_similarities, self.error_embeddings)

    def to_dict(self):
        return {
            'trial': self.trial,
            'loss_kind': self.loss_kind,
            'n': self.n,
            'd': self.d,
            'error_similarities': self.error_similarities,
            'error_embeddings': self.error_embeddings,
            'row_sum': self.row_sum,
        }


@dataclass
class GradcheckReport:
    seed: int
    tolerance: float
    trials: list = field(default_factory=list)

    @property
    def max_relative_error(self):
        return max([t.max_error for t in self.trials] or [0.0])

    @property
    def max_row_sum(self):
        return max([t.row_sum for t in self.trials] or [0.0])

    @property
    def passed(self):
        return self.max_relative_error < self.tolerance and self.max_row_sum < 1e-9

    def to_dict(self):
        return {
            'seed': self.seed,
            'tolerance': self.tolerance,
            'passed': self.passed,
            'max_relative_error': self.max_relative_error,
            'max_row_sum': self.max_row_sum,
            'trials': [t.to_dict() for t in self.trials],
        }


def central_difference(func, x, eps=DEFAULT_EPS):
    """Centered-difference gradient of the scalar function func at x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for j in range(x.size):
        original = x.flat[j]
        x.flat[j] = original + eps
        f_plus = func(x)
        x.flat[j] = original - eps
        f_minus = func(x)
        x.flat[j] = original
        grad.flat[j] = (f_plus - f_minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-10)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _unit(rows):
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _loss_fn(loss_kind):
    if LossKind(loss_kind) == LossKind.MAX_MARGIN:
        return max_margin
    return multimodal_infonce


def _clear_of_kinks(values, margins):
    n = values.shape[0]
    positives = np.diag(values)
    off_diagonal = ~np.eye(n, dtype=bool)
    v_to_t = values - positives[:, None] + margins[:, None]
    t_to_v = values.T - positives[:, None] + margins[:, None]
    return (np.all(np.abs(v_to_t[off_diagonal]) >= KINK_CLEARANCE)
            and np.all(np.abs(t_to_v[off_diagonal]) >= KINK_CLEARANCE))


def _draw_instance(rng, loss_kind):
    n = int(rng.integers(2, MAX_N + 1))
    d = int(rng.integers(2, MAX_D + 1))
    for _ in range(1000):
        v_raw = rng.normal(size=(n, d))
        t_raw = rng.normal(size=(n, d))
        norms = np.concatenate([np.linalg.norm(v_raw, axis=1), np.linalg.norm(t_raw, axis=1)])
        if norms.min() < MIN_ROW_NORM:
            continue
        if LossKind(loss_kind) == LossKind.MAX_MARGIN:
            taus = rng.uniform(0.05, 0.5, size=n)
            values = _unit(v_raw) @ _unit(t_raw).T
            if not _clear_of_kinks(values, taus):
                continue
        else:
            taus = rng.uniform(0.1, 1.0, size=n)
        return v_raw, t_raw, taus
    raise ArgumentError('Could not draw a kink-free max-margin instance.')


def check_instance(v_raw, t_raw, taus, loss_kind, eps=DEFAULT_EPS):
    """Relative errors of the similarity and embedding gradients of one instance."""
    loss_fn = _loss_fn(loss_kind)
    similarities = similarity_matrix(_unit(v_raw), _unit(t_raw))
    result = loss_fn(similarities, taus)

    numeric_s = central_difference(lambda s: loss_fn(s, taus).loss, similarities.values, eps)
    error_s = relative_error(result.grad_similarities, numeric_s)

    grad_v, grad_t = embedding_gradients(v_raw, t_raw, result)
    numeric_v = central_difference(
        lambda v: loss_fn(similarity_matrix(_unit(v), _unit(t_raw)), taus).loss, v_raw, eps)
    numeric_t = central_difference(
        lambda t: loss_fn(similarity_matrix(_unit(v_raw), _unit(t)), taus).loss, t_raw, eps)
    error_e = relative_error(np.concatenate([grad_v, grad_t]), np.concatenate([numeric_v, numeric_t]))
    return error_s, error_e


def run_gradcheck(trials, seed, tolerance=DEFAULT_TOLERANCE, eps=DEFAULT_EPS):
    logger.info("Beginning gradient check: {} trials per loss, seed {}".format(trials, seed))
    if trials < 0:
        raise ArgumentError('trials must be non-negative, got {}.'.format(trials))
    rng = np.random.default_rng(seed)
    report = GradcheckReport(seed=seed, tolerance=tolerance)
    for trial in range(trials):
        for loss_kind in (LossKind.INFONCE, LossKind.MAX_MARGIN):
            v_raw, t_raw, taus = _draw_instance(rng, loss_kind)
            error_s, error_e = check_instance(v_raw, t_raw, taus, loss_kind, eps)
            row_sum = 0.0
            if loss_kind == LossKind.INFONCE:
                single = infonce(similarity_matrix(_unit(v_raw), _unit(t_raw)), taus)
                row_sum = float(np.max(np.abs(single.grad_similarities.sum(axis=1))))
            report.trials.append(GradcheckTrial(
                trial, loss_kind.value, v_raw.shape[0], v_raw.shape[1], error_s, error_e, row_sum))
    logger.info("Gradient check max relative error {:.3g} ({})".format(
        report.max_relative_error, 'pass' if report.passed else 'FAIL'))
    return report
