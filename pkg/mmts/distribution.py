# -*- coding: utf-8 -*-

# Training-data distribution estimation.
#
# Embeddings of one modality (usually text) are L2-normalized and clustered
# with K-Means; cluster sizes serve as a quantized frequency estimate and are
# turned into per-cluster shifts. Clustering happens once, before training,
# and the resulting shift table is frozen.

import concurrent.futures
import json
import logging

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import ArgumentError, DomainError, ImproperlyConfigured
from .schedule import ShiftTable, cluster_shift
from .storage import EmbeddingMatrix


logger = logging.getLogger('mmts')

DEFAULT_K = 200
DEFAULT_MAX_ITERS = 300
DEFAULT_TOL = 1e-6

# Rows per assignment chunk. Fixed so results do not depend on the thread count.
ASSIGN_CHUNK = 512


@dataclass(frozen=True, eq=False)
class KMeansModel:
    k: int
    centroids: np.ndarray
    inertia: float
    iterations_run: int
    seed: int
    inertia_history: list = field(default_factory=list)
    labels: np.ndarray = None

    @property
    def d(self):
        return self.centroids.shape[1]


def _as_array(embeddings):
    if isinstance(embeddings, EmbeddingMatrix):
        return embeddings.data
    return EmbeddingMatrix(embeddings).data


def normalize_rows(data):
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    # Zero rows stay zero.
    return data / np.where(norms > 0, norms, 1.0)


def _assign_chunk(rows, centroids):
    # chunk x k distances; argmin keeps the lowest index on ties.
    dist_sq = cdist(rows, centroids, 'sqeuclidean')
    labels = np.argmin(dist_sq, axis=1)
    return labels, dist_sq[np.arange(len(rows)), labels]


def _assign(points, centroids, threads=1):
    chunks = [points[start:start + ASSIGN_CHUNK] for start in range(0, len(points), ASSIGN_CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda chunk: _assign_chunk(chunk, centroids), chunks))
    else:
        results = [_assign_chunk(chunk, centroids) for chunk in chunks]
    labels = np.concatenate([r[0] for r in results])
    dist_sq = np.concatenate([r[1] for r in results])
    return labels, dist_sq


def _kmeans_plusplus(points, k, rng):
    n = len(points)
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(0, n)]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            next_idx = rng.choice(n, p=closest / total)
        else:
            next_idx = rng.integers(0, n)
        centroids[i] = points[next_idx]
        closest = np.minimum(closest, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def _update_centroids(points, labels, dist_sq, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, points.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, points)
    centroids = sums / np.maximum(counts, 1)[:, None]
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        logger.debug("Re-seeding {} empty clusters".format(len(empty)))
        # Farthest points first; stable order keeps the choice deterministic.
        farthest = np.argsort(-dist_sq, kind='stable')
        for cluster, point in zip(empty, farthest):
            centroids[cluster] = points[point]
    return centroids


def kmeans_fit(embeddings, k=DEFAULT_K, seed=0, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL, threads=1):
    """Lloyd's algorithm with k-means++ seeding on L2-normalized rows.

    Deterministic for fixed (embeddings, k, seed, max_iters, tol), whatever
    the number of threads used for the assignment step.
    """
    logger.debug("kmeans_fit")
    data = _as_array(embeddings)
    n = data.shape[0]
    if k < 1 or k > n:
        logger.error("Cannot fit k={} clusters on {} rows".format(k, n))
        raise ArgumentError('k must be in [1, {}], got {}.'.format(n, k))
    if max_iters < 1:
        raise ArgumentError('max_iters must be positive, got {}.'.format(max_iters))
    if tol < 0:
        raise ArgumentError('tol must be non-negative, got {}.'.format(tol))

    points = normalize_rows(data)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_plusplus(points, k, rng)

    history = []
    iterations_run = 0
    for _ in range(max_iters):
        labels, dist_sq = _assign(points, centroids, threads)
        history.append(float(dist_sq.sum()))
        new_centroids = _update_centroids(points, labels, dist_sq, k)
        movement = np.linalg.norm(new_centroids - centroids)
        centroids = new_centroids
        iterations_run += 1
        if movement < tol:
            break

    labels, dist_sq = _assign(points, centroids, threads)
    inertia = float(dist_sq.sum())
    history.append(inertia)
    logger.info("K-Means k={} converged after {} iterations, inertia {:.6g}".format(k, iterations_run, inertia))
    centroids.setflags(write=False)
    labels.setflags(write=False)
    return KMeansModel(
        k=k,
        centroids=centroids,
        inertia=inertia,
        iterations_run=iterations_run,
        seed=seed,
        inertia_history=history,
        labels=labels,
    )


def assign_clusters(model, embeddings, threads=1):
    """Nearest-centroid label per row; ties go to the lowest cluster index."""
    data = _as_array(embeddings)
    if data.shape[1] != model.d:
        logger.error("Embedding dimensionality {} does not match the model ({})".format(data.shape[1], model.d))
        raise ArgumentError('Embeddings have d={} but the model was fitted with d={}.'.format(data.shape[1], model.d))
    labels, _ = _assign(normalize_rows(data), model.centroids, threads)
    return labels


def cluster_sizes(model, embeddings, threads=1):
    labels = assign_clusters(model, embeddings, threads)
    return [int(c) for c in np.bincount(labels, minlength=model.k)]


def shifts_from_sizes(sizes, sh_minus, sh_plus):
    if sh_minus > sh_plus:
        raise DomainError('sh_minus ({}) must not exceed sh_plus ({}).'.format(sh_minus, sh_plus))
    smallest, largest = min(sizes), max(sizes)
    return [cluster_shift(size, smallest, largest, sh_minus, sh_plus) for size in sizes]


def build_shift_table(model, embeddings, sh_minus, sh_plus, threads=1):
    logger.debug("build_shift_table")
    labels = assign_clusters(model, embeddings, threads)
    sizes = np.bincount(labels, minlength=model.k)
    return ShiftTable(
        k=model.k,
        sizes=sizes,
        shifts=shifts_from_sizes(sizes.tolist(), sh_minus, sh_plus),
        assignments=labels,
        sh_minus=sh_minus,
        sh_plus=sh_plus,
        seed=model.seed,
    )


def shift_table_from_labels(labels, k, sh_minus, sh_plus):
    """Shift table from existing class annotations (verbs, nouns, actions...)."""
    logger.debug("shift_table_from_labels")
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= k):
        raise ArgumentError('Labels must lie in [0, {}).'.format(k))
    sizes = np.bincount(labels, minlength=k)
    return ShiftTable(
        k=k,
        sizes=sizes,
        shifts=shifts_from_sizes(sizes.tolist(), sh_minus, sh_plus),
        assignments=labels,
        sh_minus=sh_minus,
        sh_plus=sh_plus,
    )


def decode_shift_table(location):
    logger.debug("decode_shift_table")
    for key in ('k', 'sizes', 'shifts', 'assignments', 'sh_minus', 'sh_plus'):
        if key not in location:
            logger.fatal('A shift table needs a {} entry.'.format(key))
            raise ImproperlyConfigured('A shift table needs a {} entry.'.format(key))
    return ShiftTable(
        k=int(location['k']),
        sizes=location['sizes'],
        shifts=location['shifts'],
        assignments=location['assignments'],
        sh_minus=float(location['sh_minus']),
        sh_plus=float(location['sh_plus']),
        seed=location.get('seed'),
    )


def load_shift_table(path):
    with open(path, 'r', encoding='utf-8') as fh:
        try:
            location = json.load(fh)
        except ValueError as exc:
            raise ImproperlyConfigured("The file '{}' is not valid JSON: {}".format(path, exc))
    return decode_shift_table(location)
