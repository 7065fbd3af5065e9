# -*- coding: utf-8 -*-

# Cross-modal retrieval metrics.
#
# Rows of a similarity matrix are queries and columns the gallery. Rankings
# sort by descending similarity and break ties by the lower gallery index.
# mAP and nDCG are computed over the full ranking; queries without positives
# (mAP) or with zero ideal DCG (nDCG) are dropped from the mean and counted.

import enum
import logging
import math

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ArgumentError, ValidationError
from .loss import SimilarityMatrix


logger = logging.getLogger('mmts')

DEFAULT_KS = (1, 5, 10)


class RelevancyMode(str, enum.Enum):
    DIAGONAL = 'diagonal'
    SAME_CLUSTER = 'same_cluster'


@dataclass(frozen=True, eq=False)
class RelevancyMatrix:
    """Graded relevance of every gallery item for every query, in [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError('A relevancy matrix must be two-dimensional.')
        if np.any(values < 0) or np.any(values > 1) or not np.all(np.isfinite(values)):
            raise ValidationError('Relevancy entries must lie in [0, 1].')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def transpose(self):
        return RelevancyMatrix(self.values.T)


@dataclass
class MetricsReport:
    recall_at: dict
    recall_at_t2v: dict
    map_v2t: float
    map_t2v: float
    ndcg_v2t: float
    ndcg_t2v: float
    excluded: dict = field(default_factory=dict)
    per_cluster: dict = None
    head: dict = None
    tail: dict = None

    def to_dict(self):
        return {
            'recall_at': _keyed(self.recall_at),
            'recall_at_t2v': _keyed(self.recall_at_t2v),
            'map_v2t': _finite(self.map_v2t),
            'map_t2v': _finite(self.map_t2v),
            'ndcg_v2t': _finite(self.ndcg_v2t),
            'ndcg_t2v': _finite(self.ndcg_t2v),
            'excluded': dict(self.excluded),
            'per_cluster': None if self.per_cluster is None else {
                str(c): {'size': row['size'], 'queries': row['queries'], 'recall_at': _keyed(row['recall_at'])}
                for c, row in sorted(self.per_cluster.items())
            },
            'head': None if self.head is None else _keyed(self.head),
            'tail': None if self.tail is None else _keyed(self.tail),
        }


@dataclass
class StratifiedReport:
    head_clusters: list
    tail_clusters: list
    head: dict
    tail: dict
    per_cluster: dict


def _finite(value):
    return None if value is None or math.isnan(value) else value


def _keyed(recalls):
    return {str(k): _finite(v) for k, v in sorted(recalls.items())}


def _values(similarities):
    if isinstance(similarities, SimilarityMatrix):
        return similarities.values
    values = np.asarray(similarities, dtype=np.float64)
    if values.ndim != 2:
        raise ArgumentError('Similarities must be a matrix, got shape {}.'.format(values.shape))
    return values


def _relevancy(relevancy):
    if isinstance(relevancy, RelevancyMatrix):
        return relevancy.values
    return RelevancyMatrix(relevancy).values


def ranking(row):
    """Gallery indices by descending score; ties go to the lower index."""
    return np.lexsort((np.arange(len(row)), -np.asarray(row)))


def diagonal_ranks(similarities):
    """Zero-based rank of each query's paired gallery item."""
    values = _values(similarities)
    n = values.shape[0]
    if values.shape[1] != n:
        raise ArgumentError('Paired retrieval needs a square similarity matrix.')
    positives = np.diag(values)[:, None]
    index = np.arange(n)
    better = values > positives
    tied_before = (values == positives) & (index[None, :] < index[:, None])
    return (better | tied_before).sum(axis=1)


def _check_ks(ks, n):
    ks = sorted(set(int(k) for k in ks))
    for k in ks:
        if k < 1 or k > n:
            logger.error("Recall@{} requested for {} gallery items".format(k, n))
            raise ArgumentError('K must lie in [1, {}], got {}.'.format(n, k))
    return ks


def _recall_from_ranks(ranks, ks):
    if len(ranks) == 0:
        return {k: float('nan') for k in ks}
    return {k: float(np.mean(ranks < k)) for k in ks}


def recall_at_k(similarities, ks=DEFAULT_KS):
    values = _values(similarities)
    ks = _check_ks(ks, values.shape[1])
    return _recall_from_ranks(diagonal_ranks(values), ks)


def _average_precisions(values, relevancy, threshold):
    if values.shape != relevancy.shape:
        raise ArgumentError('Similarities {} and relevancy {} differ in shape.'.format(values.shape, relevancy.shape))
    precisions = []
    excluded = 0
    for query in range(values.shape[0]):
        positive = relevancy[query, ranking(values[query])] > threshold
        if not positive.any():
            excluded += 1
            continue
        hits = np.cumsum(positive)
        ranks = np.arange(1, len(positive) + 1)
        precisions.append(float(np.mean(hits[positive] / ranks[positive])))
    return precisions, excluded


def _ndcgs(values, relevancy):
    if values.shape != relevancy.shape:
        raise ArgumentError('Similarities {} and relevancy {} differ in shape.'.format(values.shape, relevancy.shape))
    discounts = 1.0 / np.log2(np.arange(2, values.shape[1] + 2))
    scores = []
    excluded = 0
    for query in range(values.shape[0]):
        gains = relevancy[query]
        ideal = float(np.sum(np.sort(gains)[::-1] * discounts))
        if ideal == 0:
            excluded += 1
            continue
        scores.append(float(np.sum(gains[ranking(values[query])] * discounts)) / ideal)
    return scores, excluded


def _mean_or_nan(scores):
    return float(np.mean(scores)) if scores else float('nan')


def mean_average_precision(similarities, relevancy, threshold=0.0):
    precisions, excluded = _average_precisions(_values(similarities), _relevancy(relevancy), threshold)
    if excluded:
        logger.warning("mAP: {} queries without positives excluded".format(excluded))
    return _mean_or_nan(precisions)


def ndcg(similarities, relevancy):
    scores, excluded = _ndcgs(_values(similarities), _relevancy(relevancy))
    if excluded:
        logger.warning("nDCG: {} queries with zero ideal DCG excluded".format(excluded))
    return _mean_or_nan(scores)


def diagonal_relevancy(n):
    return RelevancyMatrix(np.eye(n))


def cluster_relevancy(query_labels, gallery_labels=None):
    query_labels = np.asarray(query_labels)
    gallery_labels = query_labels if gallery_labels is None else np.asarray(gallery_labels)
    return RelevancyMatrix((query_labels[:, None] == gallery_labels[None, :]).astype(np.float64))


def relevancy_for_mode(mode, labels):
    mode = RelevancyMode(mode)
    if mode == RelevancyMode.DIAGONAL:
        return diagonal_relevancy(len(labels))
    return cluster_relevancy(labels)


def split_head_tail(sizes):
    """Split clusters at the median size; the larger clusters are the head.

    Clusters sharing the median size stay on one side: the tail when some
    cluster is strictly larger, the head otherwise. When every cluster has the
    same size the first ceil(k/2) indices form the head.
    """
    order = sorted(range(len(sizes)), key=lambda c: (-sizes[c], c))
    cut = (len(order) + 1) // 2
    if cut == len(order) or sizes[order[cut]] != sizes[order[cut - 1]]:
        return sorted(order[:cut]), sorted(order[cut:])
    median = sizes[order[cut - 1]]
    for head in ([c for c in order if sizes[c] > median], [c for c in order if sizes[c] >= median]):
        if 0 < len(head) < len(order):
            return sorted(head), sorted(c for c in order if c not in head)
    return sorted(order[:cut]), sorted(order[cut:])


def stratified_report(similarities, labels, sizes, ks=DEFAULT_KS):
    """Recall@K of head and tail queries against the full gallery."""
    logger.debug("stratified_report")
    values = _values(similarities)
    labels = np.asarray(labels)
    if len(labels) != values.shape[0]:
        raise ArgumentError('Expected {} labels, got {}.'.format(values.shape[0], len(labels)))
    ks = _check_ks(ks, values.shape[1])
    ranks = diagonal_ranks(values)
    head_clusters, tail_clusters = split_head_tail(list(sizes))

    per_cluster = {}
    for cluster in range(len(sizes)):
        mask = labels == cluster
        per_cluster[cluster] = {
            'size': int(sizes[cluster]),
            'queries': int(mask.sum()),
            'recall_at': _recall_from_ranks(ranks[mask], ks),
        }
    head_mask = np.isin(labels, head_clusters)
    tail_mask = np.isin(labels, tail_clusters)
    return StratifiedReport(
        head_clusters=head_clusters,
        tail_clusters=tail_clusters,
        head=_recall_from_ranks(ranks[head_mask], ks),
        tail=_recall_from_ranks(ranks[tail_mask], ks),
        per_cluster=per_cluster,
    )


def evaluate(similarities, labels=None, sizes=None, relevancy_mode=RelevancyMode.SAME_CLUSTER,
             ks=DEFAULT_KS, threshold=0.0):
    """Every metric of a paired retrieval run in one report."""
    logger.debug("evaluate")
    values = _values(similarities)
    n = values.shape[0]
    ks = [k for k in ks if k <= n]
    if labels is None:
        labels = np.arange(n)
        relevancy_mode = RelevancyMode.DIAGONAL
    relevancy = _relevancy(relevancy_for_mode(relevancy_mode, labels))

    ap_v2t, excluded_map_v2t = _average_precisions(values, relevancy, threshold)
    ap_t2v, excluded_map_t2v = _average_precisions(values.T, relevancy.T, threshold)
    ndcg_v2t, excluded_ndcg_v2t = _ndcgs(values, relevancy)
    ndcg_t2v, excluded_ndcg_t2v = _ndcgs(values.T, relevancy.T)
    excluded = {
        'map_v2t': excluded_map_v2t,
        'map_t2v': excluded_map_t2v,
        'ndcg_v2t': excluded_ndcg_v2t,
        'ndcg_t2v': excluded_ndcg_t2v,
    }
    if any(excluded.values()):
        logger.warning("Queries excluded from the means: {}".format(excluded))

    report = MetricsReport(
        recall_at=recall_at_k(values, ks),
        recall_at_t2v=recall_at_k(values.T, ks),
        map_v2t=_mean_or_nan(ap_v2t),
        map_t2v=_mean_or_nan(ap_t2v),
        ndcg_v2t=_mean_or_nan(ndcg_v2t),
        ndcg_t2v=_mean_or_nan(ndcg_t2v),
        excluded=excluded,
    )
    if sizes is not None:
        strata = stratified_report(values, labels, sizes, ks)
        report.per_cluster = strata.per_cluster
        report.head = strata.head
        report.tail = strata.tail
    return report
