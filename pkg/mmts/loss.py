# -*- coding: utf-8 -*-

# Multi-modal contrastive losses with per-sample temperatures and margins.
#
# Row i of a similarity matrix is anchored at pair i: in both retrieval
# directions the whole row softmax (or every hinge of the row) uses tau_i
# (or m_i) of that pair. All losses are accumulated in float64 and return
# their analytic gradient with respect to the similarities; the gradient with
# respect to the raw, pre-normalization embeddings follows from
# embedding_gradients.

import collections
import enum
import logging

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .exceptions import ArgumentError, DomainError, NumericError, ValidationError
from .schedule import LossKind
from .storage import EmbeddingMatrix


logger = logging.getLogger('mmts')

UNIT_NORM_TOLERANCE = 1e-6


class Direction(str, enum.Enum):
    V_TO_T = 'v_to_t'
    T_TO_V = 't_to_v'


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """values[i][j] = <v_i, t_j>; the diagonal holds the positive pairs."""
    values: np.ndarray
    direction: Direction = Direction.V_TO_T

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ArgumentError('A similarity matrix must be square, got shape {}.'.format(values.shape))
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'direction', Direction(self.direction))

    @property
    def n(self):
        return self.values.shape[0]

    def transpose(self):
        other = Direction.T_TO_V if self.direction == Direction.V_TO_T else Direction.V_TO_T
        return SimilarityMatrix(self.values.T, other)


@dataclass(frozen=True, eq=False)
class TemperatureVector:
    taus: np.ndarray

    def __post_init__(self):
        taus = np.array(self.taus, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(taus)) or np.any(taus <= 0):
            logger.error("Non-positive temperature in {}".format(taus[:10].tolist()))
            raise DomainError('Every temperature or margin must be strictly positive.')
        taus.setflags(write=False)
        object.__setattr__(self, 'taus', taus)

    def __len__(self):
        return len(self.taus)


@dataclass(frozen=True, eq=False)
class LossResult:
    loss: float
    grad_similarities: np.ndarray
    per_negative_contributions: np.ndarray


ProfileEntry = collections.namedtuple('ProfileEntry', ['rank', 'index', 'similarity', 'contribution'])


def _values(similarities):
    if isinstance(similarities, SimilarityMatrix):
        return similarities.values
    return SimilarityMatrix(similarities).values


def _taus(taus, n):
    if not isinstance(taus, TemperatureVector):
        taus = TemperatureVector(taus)
    if len(taus) != n:
        raise ArgumentError('Expected {} temperatures, got {}.'.format(n, len(taus)))
    return taus.taus


def _rows(embeddings):
    if isinstance(embeddings, EmbeddingMatrix):
        return embeddings.data
    return np.asarray(embeddings, dtype=np.float64)


def similarity_matrix(v_embeddings, t_embeddings):
    v = _rows(v_embeddings)
    t = _rows(t_embeddings)
    if v.ndim != 2 or v.shape != t.shape:
        logger.error("Shape mismatch {} vs {}".format(v.shape, t.shape))
        raise ArgumentError('Visual and text embeddings must share shape, got {} and {}.'.format(v.shape, t.shape))
    for name, rows in (('visual', v), ('text', t)):
        norms = np.linalg.norm(rows, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
            raise ValidationError('All {} embedding rows must have unit norm.'.format(name))
    return SimilarityMatrix(v @ t.T, Direction.V_TO_T)


def infonce(similarities, taus):
    """InfoNCE where anchor row i uses its own temperature tau_i."""
    values = _values(similarities)
    n = values.shape[0]
    tau = _taus(taus, n)
    if n < 1:
        raise ArgumentError('InfoNCE needs at least one pair.')
    logits = values / tau[:, None]
    log_probs = log_softmax(logits, axis=1)
    loss = -float(np.mean(np.diag(log_probs)))
    probs = softmax(logits, axis=1)
    grad = (probs - np.eye(n)) / (n * tau[:, None])
    contributions = probs.copy()
    np.fill_diagonal(contributions, 0.0)
    return LossResult(loss, grad, contributions)


def multimodal_infonce(similarities_v_to_t, taus):
    """Average of the visual-to-text and text-to-visual InfoNCE losses."""
    values = _values(similarities_v_to_t)
    forward = infonce(values, taus)
    backward = infonce(values.T, taus)
    return LossResult(
        0.5 * (forward.loss + backward.loss),
        0.5 * (forward.grad_similarities + backward.grad_similarities.T),
        0.5 * (forward.per_negative_contributions + backward.per_negative_contributions.T),
    )


def max_margin(similarities, margins):
    """Hinge over every ordered negative pair in both directions, averaged.

    The normalizer is 2N(N-1); a hinge exactly at its kink counts as inactive.
    """
    values = _values(similarities)
    n = values.shape[0]
    margin = _taus(margins, n)
    if n < 2:
        return LossResult(0.0, np.zeros((n, n)), np.zeros((n, n)))

    positives = np.diag(values)
    off_diagonal = ~np.eye(n, dtype=bool)
    v_to_t = values - positives[:, None] + margin[:, None]
    t_to_v = values.T - positives[:, None] + margin[:, None]
    active_v_to_t = (v_to_t > 0) & off_diagonal
    active_t_to_v = (t_to_v > 0) & off_diagonal
    hinge_v_to_t = np.where(active_v_to_t, v_to_t, 0.0)
    hinge_t_to_v = np.where(active_t_to_v, t_to_v, 0.0)

    normalizer = 2.0 * n * (n - 1)
    loss = float((hinge_v_to_t.sum() + hinge_t_to_v.sum()) / normalizer)

    grad = (active_v_to_t.astype(np.float64) + active_t_to_v.T.astype(np.float64)) / normalizer
    pulled = (active_v_to_t.sum(axis=1) + active_t_to_v.sum(axis=1)) / normalizer
    grad[np.diag_indices(n)] = -pulled
    return LossResult(loss, grad, hinge_v_to_t)


def _unit_rows(raw):
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms == 0):
        logger.error("Zero-norm embedding row")
        raise NumericError('Cannot normalize a zero-norm embedding row.')
    return raw / norms, norms


def embedding_gradients(v_embeddings, t_embeddings, loss_result):
    """Chain rule through the dot products and the per-row L2 normalization.

    Takes raw (pre-normalization) embeddings and returns the gradients of the
    loss with respect to them.
    """
    v_raw = _rows(v_embeddings)
    t_raw = _rows(t_embeddings)
    grad = np.asarray(loss_result.grad_similarities)
    if v_raw.shape != t_raw.shape or grad.shape != (v_raw.shape[0], v_raw.shape[0]):
        logger.error("Shape mismatch in embedding_gradients")
        raise ArgumentError(
            'Embedding shapes {} / {} do not match a {} gradient.'.format(v_raw.shape, t_raw.shape, grad.shape)
        )
    v_unit, v_norms = _unit_rows(v_raw)
    t_unit, t_norms = _unit_rows(t_raw)
    grad_v_unit = grad @ t_unit
    grad_t_unit = grad.T @ v_unit
    # (I - u u^T) / |x| applied row by row.
    grad_v = (grad_v_unit - v_unit * np.sum(v_unit * grad_v_unit, axis=1, keepdims=True)) / v_norms
    grad_t = (grad_t_unit - t_unit * np.sum(t_unit * grad_t_unit, axis=1, keepdims=True)) / t_norms
    return grad_v, grad_t


def negative_contribution_profile(similarities, tau, anchor):
    """Negatives of one anchor row, hardest first, with their softmax share at tau."""
    values = _values(similarities)
    n = values.shape[0]
    if not tau > 0:
        raise DomainError('tau must be strictly positive, got {}.'.format(tau))
    if not 0 <= anchor < n:
        raise IndexError('Anchor {} out of range for {} rows.'.format(anchor, n))
    row = values[anchor]
    probs = softmax(row / tau)
    negatives = np.array([j for j in range(n) if j != anchor], dtype=np.int64)
    order = negatives[np.lexsort((negatives, -row[negatives]))]
    return [
        ProfileEntry(rank, int(j), float(row[j]), float(probs[j]))
        for rank, j in enumerate(order, start=1)
    ]


def contribution_entropy(profile):
    contributions = np.array([entry.contribution for entry in profile], dtype=np.float64)
    total = contributions.sum()
    if total <= 0:
        return 0.0
    shares = contributions[contributions > 0] / total
    return float(-np.sum(shares * np.log(shares)))


def hard_easy_ratio(profile, tau=None):
    """Contribution of the hardest negative over that of the easiest.

    Given the profile's tau the ratio is taken as exp((s_hard - s_easy) / tau),
    which stays finite after the easiest share has underflowed to zero.
    """
    if not profile:
        return float('nan')
    if tau is not None:
        with np.errstate(over='ignore'):
            return float(np.exp((profile[0].similarity - profile[-1].similarity) / tau))
    if profile[-1].contribution == 0:
        return float('inf')
    return profile[0].contribution / profile[-1].contribution


def format_profile_tsv(profile):
    lines = ['rank\tsimilarity\tcontribution']
    for entry in profile:
        lines.append('{}\t{:.9g}\t{:.9g}'.format(entry.rank, entry.similarity, entry.contribution))
    return '\n'.join(lines) + '\n'


def contrastive_loss(similarities, taus, loss_kind):
    """Dispatch on the loss kind of a schedule configuration."""
    if LossKind(loss_kind) == LossKind.MAX_MARGIN:
        return max_margin(similarities, taus)
    return multimodal_infonce(similarities, taus)
