# -*- coding: utf-8 -*-

# Paired long-tail multi-modal datasets with known cluster structure.
#
# Every sample is a latent prototype of its cluster plus Gaussian noise; the
# same latent point is sent through two fixed random linear maps, one per
# view ("visual" and "text"), so row i of both views always forms a pair.
#
# A dataset spec is a dictionary with the following keys:
# - num_clusters: number of clusters (ignored for explicit sizes)
# - distribution: {"kind": "zipf", "exponent": e} | {"kind": "pareto", "alpha": a}
#                 | {"kind": "explicit", "sizes": [...]}
# - latent_dim: dimensionality of the latent prototypes
# - view_dims: [d_v, d_t], raw dimensionality of each view
# - noise_sigma: standard deviation of the latent noise
# - seed: seed of every random draw
#
# Optionally:
# - total: number of samples for zipf, default is 100 * num_clusters
# - pareto_scale: minimum of the Pareto draws, default is 10
# - eval_per_cluster: size of a balanced held-out split per cluster, default 0

import enum
import json
import logging

from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError, ImproperlyConfigured
from .storage import EmbeddingMatrix


logger = logging.getLogger('mmts')

SIDECAR_NAME = 'dataset.json'


class DistributionKind(str, enum.Enum):
    ZIPF = 'zipf'
    PARETO = 'pareto'
    EXPLICIT = 'explicit'


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    num_clusters: int
    kind: DistributionKind = DistributionKind.ZIPF
    exponent: float = 1.0
    alpha: float = 6.0
    sizes: tuple = ()
    total: int = None
    pareto_scale: float = 10.0
    latent_dim: int = 16
    view_dims: tuple = (32, 32)
    noise_sigma: float = 0.1
    seed: int = 0
    eval_per_cluster: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'kind', DistributionKind(self.kind))
        object.__setattr__(self, 'sizes', tuple(int(s) for s in self.sizes))
        object.__setattr__(self, 'view_dims', tuple(int(d) for d in self.view_dims))

    def to_dict(self):
        distribution = {'kind': DistributionKind(self.kind).value}
        if self.kind == DistributionKind.ZIPF:
            distribution['exponent'] = self.exponent
        elif self.kind == DistributionKind.PARETO:
            distribution['alpha'] = self.alpha
        else:
            distribution['sizes'] = list(self.sizes)
        return {
            'num_clusters': self.num_clusters,
            'distribution': distribution,
            'total': self.total,
            'pareto_scale': self.pareto_scale,
            'latent_dim': self.latent_dim,
            'view_dims': list(self.view_dims),
            'noise_sigma': self.noise_sigma,
            'seed': self.seed,
            'eval_per_cluster': self.eval_per_cluster,
        }


@dataclass(frozen=True, eq=False)
class PairedDataset:
    v_raw: np.ndarray
    t_raw: np.ndarray
    labels: np.ndarray
    sizes: list
    spec: SyntheticDatasetSpec = None
    eval_split: 'PairedDataset' = None

    @property
    def n(self):
        return self.v_raw.shape[0]

    @property
    def num_clusters(self):
        return len(self.sizes)


def _decode_spec(location):
    logger.debug("_decode_spec")
    distribution = location.get('distribution', '')
    if distribution == '' or not isinstance(distribution, dict):
        logger.fatal('A distribution must be provided.')
        raise ImproperlyConfigured('A distribution must be provided.')

    try:
        kind = DistributionKind(distribution.get('kind', DistributionKind.ZIPF.value))
    except ValueError:
        logger.fatal('Unknown distribution kind {}.'.format(distribution.get('kind')))
        raise ImproperlyConfigured('Unknown distribution kind {}.'.format(distribution.get('kind')))

    sizes = tuple(int(s) for s in distribution.get('sizes', ()))
    if kind == DistributionKind.EXPLICIT:
        if not sizes:
            logger.fatal('Explicit distributions need a list of sizes.')
            raise ImproperlyConfigured('Explicit distributions need a list of sizes.')
        num_clusters = len(sizes)
    else:
        if location.get('num_clusters', '') in ('', None):
            logger.fatal('A number of clusters must be provided.')
            raise ImproperlyConfigured('A number of clusters must be provided.')
        num_clusters = int(location['num_clusters'])

    view_dims = location.get('view_dims', (32, 32))
    if len(view_dims) != 2:
        logger.fatal('view_dims must hold exactly two dimensions.')
        raise ImproperlyConfigured('view_dims must hold exactly two dimensions.')

    try:
        spec = SyntheticDatasetSpec(
            num_clusters=num_clusters,
            kind=kind,
            exponent=float(distribution.get('exponent', 1.0)),
            alpha=float(distribution.get('alpha', 6.0)),
            sizes=sizes,
            total=None if location.get('total') is None else int(location['total']),
            pareto_scale=float(location.get('pareto_scale', 10.0)),
            latent_dim=int(location.get('latent_dim', 16)),
            view_dims=(int(view_dims[0]), int(view_dims[1])),
            noise_sigma=float(location.get('noise_sigma', 0.1)),
            seed=int(location.get('seed', 0)),
            eval_per_cluster=int(location.get('eval_per_cluster', 0)),
        )
    except (TypeError, ValueError) as exc:
        logger.fatal('Malformed dataset spec: {}'.format(exc))
        raise ImproperlyConfigured('Malformed dataset spec: {}'.format(exc))
    validate_spec(spec)
    return spec


def decode_synthetic_spec(location):
    return _decode_spec(location)


def load_synthetic_spec(path):
    with open(path, 'r', encoding='utf-8') as fh:
        try:
            location = json.load(fh)
        except ValueError as exc:
            raise ImproperlyConfigured("The file '{}' is not valid JSON: {}".format(path, exc))
    return _decode_spec(location)


def validate_spec(spec):
    if spec.num_clusters < 1:
        raise ArgumentError('num_clusters must be at least 1, got {}.'.format(spec.num_clusters))
    if spec.kind == DistributionKind.ZIPF and spec.exponent < 0:
        raise ArgumentError('The zipf exponent must be non-negative, got {}.'.format(spec.exponent))
    if spec.kind == DistributionKind.PARETO and spec.alpha <= 0:
        raise ArgumentError('The pareto alpha must be positive, got {}.'.format(spec.alpha))
    if spec.kind == DistributionKind.PARETO and spec.pareto_scale <= 0:
        raise ArgumentError('The pareto scale must be positive, got {}.'.format(spec.pareto_scale))
    if spec.kind == DistributionKind.EXPLICIT and (not spec.sizes or min(spec.sizes) < 1):
        raise ArgumentError('Every explicit cluster size must be at least 1.')
    if spec.latent_dim < 1 or min(spec.view_dims) < 1:
        raise ArgumentError('latent_dim and view_dims must be positive.')
    if spec.noise_sigma < 0:
        raise ArgumentError('noise_sigma must be non-negative, got {}.'.format(spec.noise_sigma))
    if spec.eval_per_cluster < 0:
        raise ArgumentError('eval_per_cluster must be non-negative, got {}.'.format(spec.eval_per_cluster))


def _streams(seed):
    """Independent generators for sizes, prototypes, view maps, noise and the eval split."""
    children = np.random.SeedSequence(seed).spawn(5)
    return [np.random.default_rng(child) for child in children]


def _zipf_sizes(num_clusters, exponent, total):
    if total < num_clusters:
        raise ArgumentError('total ({}) must be at least num_clusters ({}).'.format(total, num_clusters))
    weights = np.arange(1, num_clusters + 1, dtype=np.float64) ** (-exponent)
    raw = total * weights / weights.sum()
    sizes = np.floor(raw).astype(np.int64)
    # Largest remainder; stable order hands ties to the lower index.
    remainder = int(total - sizes.sum())
    order = np.argsort(-(raw - sizes), kind='stable')
    sizes[order[:remainder]] += 1
    deficit = int(np.sum(np.maximum(1 - sizes, 0)))
    sizes = np.maximum(sizes, 1)
    sizes[0] -= deficit
    return [int(s) for s in sizes]


def sample_sizes(spec):
    logger.debug("sample_sizes")
    validate_spec(spec)
    if spec.kind == DistributionKind.EXPLICIT:
        return [int(s) for s in spec.sizes]
    if spec.kind == DistributionKind.ZIPF:
        total = spec.total if spec.total is not None else 100 * spec.num_clusters
        return _zipf_sizes(spec.num_clusters, spec.exponent, total)
    rng = _streams(spec.seed)[0]
    draws = spec.pareto_scale * (1.0 + rng.pareto(spec.alpha, size=spec.num_clusters))
    sizes = np.maximum(np.ceil(draws).astype(np.int64), 1)
    return [int(s) for s in sorted(sizes, reverse=True)]


def _full_rank_map(rng, rows, cols):
    for _ in range(100):
        mapping = rng.normal(size=(rows, cols)) / np.sqrt(rows)
        if np.linalg.matrix_rank(mapping) == min(rows, cols):
            return mapping
    raise ArgumentError('Could not draw a full-rank {}x{} view map.'.format(rows, cols))


def _views(labels, prototypes, maps, sigma, rng):
    latent = prototypes[labels]
    if sigma > 0:
        latent = latent + sigma * rng.normal(size=latent.shape)
    return latent @ maps[0], latent @ maps[1]


def generate(spec):
    logger.debug("generate")
    sizes = sample_sizes(spec)
    _, proto_rng, map_rng, noise_rng, eval_rng = _streams(spec.seed)

    prototypes = proto_rng.normal(size=(len(sizes), spec.latent_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    maps = (
        _full_rank_map(map_rng, spec.latent_dim, spec.view_dims[0]),
        _full_rank_map(map_rng, spec.latent_dim, spec.view_dims[1]),
    )

    labels = np.repeat(np.arange(len(sizes)), sizes)
    v_raw, t_raw = _views(labels, prototypes, maps, spec.noise_sigma, noise_rng)

    eval_split = None
    if spec.eval_per_cluster > 0:
        eval_labels = np.repeat(np.arange(len(sizes)), spec.eval_per_cluster)
        eval_v, eval_t = _views(eval_labels, prototypes, maps, spec.noise_sigma, eval_rng)
        eval_split = PairedDataset(eval_v, eval_t, eval_labels, [spec.eval_per_cluster] * len(sizes), spec)

    logger.info("Generated {} pairs in {} clusters (largest {}, smallest {})".format(
        len(labels), len(sizes), max(sizes), min(sizes)))
    return PairedDataset(v_raw, t_raw, labels, sizes, spec, eval_split)


def save_dataset(storage, dataset):
    """Write a dataset as MME files plus a JSON sidecar. Returns the written names."""
    logger.debug("save_dataset")
    written = [
        storage.save_embeddings('v.mme', EmbeddingMatrix(dataset.v_raw)),
        storage.save_embeddings('t.mme', EmbeddingMatrix(dataset.t_raw)),
    ]
    sidecar = {
        'labels': [int(label) for label in dataset.labels],
        'sizes': [int(s) for s in dataset.sizes],
        'spec': dataset.spec.to_dict() if dataset.spec is not None else None,
    }
    if dataset.eval_split is not None:
        written.append(storage.save_embeddings('eval_v.mme', EmbeddingMatrix(dataset.eval_split.v_raw)))
        written.append(storage.save_embeddings('eval_t.mme', EmbeddingMatrix(dataset.eval_split.t_raw)))
        sidecar['eval_labels'] = [int(label) for label in dataset.eval_split.labels]
    written.append(storage.save_json(SIDECAR_NAME, sidecar))
    return written


def load_dataset(storage):
    logger.debug("load_dataset")
    sidecar = storage.load_json(SIDECAR_NAME)
    spec = _decode_spec(sidecar['spec']) if sidecar.get('spec') else None
    v_raw = storage.load_embeddings('v.mme').data
    t_raw = storage.load_embeddings('t.mme').data
    labels = np.asarray(sidecar['labels'], dtype=np.int64)
    sizes = [int(s) for s in sidecar['sizes']]
    if len(labels) != v_raw.shape[0] or len(labels) != t_raw.shape[0]:
        raise ImproperlyConfigured('The dataset sidecar does not match its MME files.')
    eval_split = None
    if 'eval_labels' in sidecar:
        eval_labels = np.asarray(sidecar['eval_labels'], dtype=np.int64)
        eval_sizes = [int(c) for c in np.bincount(eval_labels, minlength=len(sizes))]
        eval_split = PairedDataset(
            storage.load_embeddings('eval_v.mme').data,
            storage.load_embeddings('eval_t.mme').data,
            eval_labels, eval_sizes, spec,
        )
    return PairedDataset(v_raw, t_raw, labels, sizes, spec, eval_split)


def input_names(storage):
    names = ['v.mme', 't.mme', SIDECAR_NAME]
    if storage.exists('eval_v.mme'):
        names += ['eval_v.mme', 'eval_t.mme']
    return names
