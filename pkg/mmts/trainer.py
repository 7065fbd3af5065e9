# -*- coding: utf-8 -*-

# Toy two-tower training with scheduled temperatures or margins.
#
# Each tower is a single linear map followed by per-row L2 normalization and
# is trained with plain SGD on the multi-modal InfoNCE or max-margin loss.
# The temperature (or margin) of every pair depends on the mode:
# - fixed: one constant value
# - ts_only: cosine base term plus the midpoint of [sh_minus, sh_plus]
# - ics_only: the pair's cluster shift, no cosine term
# - ts_and_ics: cosine base term plus the pair's cluster shift
#
# A training configuration is a dictionary with the following keys:
# - schedule: a schedule configuration (see mmts.schedule)
# - mode: one of the modes above
# - learning_rate, batch_size, total_iters, seed
#
# Optionally:
# - fixed_value: temperature or margin of the fixed mode, default is 0.01
# - shift_table_source: oracle_labels (default), kmeans_on_text_view or kmeans_on_visual_view
# - d_emb: embedding dimension, default is 16
# - log_interval: iterations between log entries, default is 100
# - kmeans_k: clusters for the kmeans sources, default is 200
# - kmeans_seed: seed of the clustering, default is the training seed
# - init_scale: scale of the initial weights, default is 1.0

import collections
import enum
import json
import logging

from dataclasses import dataclass, field, replace

import numpy as np

from .distribution import DEFAULT_K, build_shift_table, kmeans_fit, shift_table_from_labels
from .exceptions import ArgumentError, DivergenceError, ImproperlyConfigured, NumericError
from .loss import contrastive_loss, embedding_gradients, similarity_matrix
from .schedule import ShiftTable, base_temperature, decode_schedule_config, sample_temperatures
from .storage import EmbeddingMatrix


logger = logging.getLogger('mmts')

MODEL_NAME = 'model.json'
LOG_NAME = 'train_log.tsv'


class Mode(str, enum.Enum):
    FIXED = 'fixed'
    TS_ONLY = 'ts_only'
    ICS_ONLY = 'ics_only'
    TS_AND_ICS = 'ts_and_ics'

    @property
    def uses_shift_table(self):
        return self in (Mode.ICS_ONLY, Mode.TS_AND_ICS)


class ShiftTableSource(str, enum.Enum):
    ORACLE_LABELS = 'oracle_labels'
    KMEANS_ON_TEXT_VIEW = 'kmeans_on_text_view'
    KMEANS_ON_VISUAL_VIEW = 'kmeans_on_visual_view'


@dataclass(frozen=True, eq=False)
class TwoTowerModel:
    W_v: np.ndarray
    W_t: np.ndarray

    @property
    def d_emb(self):
        return self.W_v.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    schedule: object
    mode: Mode
    learning_rate: float
    batch_size: int
    total_iters: int
    seed: int = 0
    fixed_value: float = 0.01
    shift_table_source: ShiftTableSource = ShiftTableSource.ORACLE_LABELS
    d_emb: int = 16
    log_interval: int = 100
    kmeans_k: int = DEFAULT_K
    kmeans_seed: int = None
    init_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'mode', Mode(self.mode))
        object.__setattr__(self, 'shift_table_source', ShiftTableSource(self.shift_table_source))
        if self.learning_rate < 0:
            raise ImproperlyConfigured('learning_rate must be non-negative, got {}.'.format(self.learning_rate))
        if self.batch_size < 1:
            raise ImproperlyConfigured('batch_size must be positive, got {}.'.format(self.batch_size))
        if self.total_iters < 0:
            raise ImproperlyConfigured('total_iters must be non-negative, got {}.'.format(self.total_iters))
        if self.mode == Mode.FIXED and not self.fixed_value > 0:
            raise ImproperlyConfigured('fixed_value must be positive, got {}.'.format(self.fixed_value))
        if self.d_emb < 1 or self.log_interval < 1:
            raise ImproperlyConfigured('d_emb and log_interval must be positive.')

    def to_dict(self):
        return {
            'schedule': self.schedule.to_dict(),
            'mode': self.mode.value,
            'learning_rate': self.learning_rate,
            'batch_size': self.batch_size,
            'total_iters': self.total_iters,
            'seed': self.seed,
            'fixed_value': self.fixed_value,
            'shift_table_source': self.shift_table_source.value,
            'd_emb': self.d_emb,
            'log_interval': self.log_interval,
            'kmeans_k': self.kmeans_k,
            'kmeans_seed': self.kmeans_seed,
            'init_scale': self.init_scale,
        }


Batch = collections.namedtuple('Batch', ['indices', 'v_raw', 't_raw'])
LogEntry = collections.namedtuple('LogEntry', ['iteration', 'loss', 'tau_min', 'tau_max'])


@dataclass
class TrainingLog:
    entries: list = field(default_factory=list)

    def to_tsv(self):
        lines = ['iter\tloss\ttau_min\ttau_max']
        for entry in self.entries:
            lines.append('{}\t{:.9g}\t{:.9g}\t{:.9g}'.format(
                entry.iteration, entry.loss, entry.tau_min, entry.tau_max))
        return '\n'.join(lines) + '\n'


def _decode_train_config(location, overrides=None):
    logger.debug("_decode_train_config")
    location = dict(location, **(overrides or {}))

    # Mandatory attributes
    if not isinstance(location.get('schedule', ''), dict):
        logger.fatal('A schedule configuration must be provided.')
        raise ImproperlyConfigured('A schedule configuration must be provided.')
    for key in ('mode', 'learning_rate', 'batch_size', 'total_iters'):
        if location.get(key, '') in ('', None):
            logger.fatal('A value for {} must be provided.'.format(key))
            raise ImproperlyConfigured('A value for {} must be provided.'.format(key))

    try:
        mode = Mode(location['mode'])
    except ValueError:
        logger.fatal('Unknown mode {}.'.format(location['mode']))
        raise ImproperlyConfigured('Unknown mode {}.'.format(location['mode']))
    try:
        source = ShiftTableSource(location.get('shift_table_source') or ShiftTableSource.ORACLE_LABELS.value)
    except ValueError:
        logger.fatal('Unknown shift table source {}.'.format(location.get('shift_table_source')))
        raise ImproperlyConfigured('Unknown shift table source {}.'.format(location.get('shift_table_source')))

    try:
        kmeans_seed = location.get('kmeans_seed')
        return TrainConfig(
            schedule=decode_schedule_config(location['schedule']),
            mode=mode,
            learning_rate=float(location['learning_rate']),
            batch_size=int(location['batch_size']),
            total_iters=int(location['total_iters']),
            seed=int(location.get('seed', 0)),
            fixed_value=float(location.get('fixed_value', 0.01)),
            shift_table_source=source,
            d_emb=int(location.get('d_emb', 16)),
            log_interval=int(location.get('log_interval', 100)),
            kmeans_k=int(location.get('kmeans_k', DEFAULT_K)),
            kmeans_seed=None if kmeans_seed is None else int(kmeans_seed),
            init_scale=float(location.get('init_scale', 1.0)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ImproperlyConfigured):
            raise
        logger.fatal('Malformed training configuration: {}'.format(exc))
        raise ImproperlyConfigured('Malformed training configuration: {}'.format(exc))


def decode_train_config(location, overrides=None):
    return _decode_train_config(location, overrides)


def load_train_config(path, overrides=None):
    with open(path, 'r', encoding='utf-8') as fh:
        try:
            location = json.load(fh)
        except ValueError as exc:
            raise ImproperlyConfigured("The file '{}' is not valid JSON: {}".format(path, exc))
    return _decode_train_config(location, overrides)


def init_model(d_v, d_t, config):
    rng = np.random.default_rng(config.seed)
    return _init_model(d_v, d_t, config, rng)


def _init_model(d_v, d_t, config, rng):
    W_v = config.init_scale * rng.normal(size=(d_v, config.d_emb)) / np.sqrt(d_v)
    W_t = config.init_scale * rng.normal(size=(d_t, config.d_emb)) / np.sqrt(d_t)
    return TwoTowerModel(W_v, W_t)


def _project(weights, raw):
    projected = np.asarray(raw, dtype=np.float64) @ weights
    norms = np.linalg.norm(projected, axis=1, keepdims=True)
    if np.any(norms == 0):
        logger.error("Zero-norm embedding after projection")
        raise NumericError('A projected embedding row has zero norm.')
    return projected, projected / norms


def forward(model, v_raw, t_raw):
    v_raw = np.asarray(v_raw, dtype=np.float64)
    t_raw = np.asarray(t_raw, dtype=np.float64)
    if v_raw.shape[1] != model.W_v.shape[0] or t_raw.shape[1] != model.W_t.shape[0]:
        raise ArgumentError('Raw inputs of width {}/{} do not fit weights {}/{}.'.format(
            v_raw.shape[1], t_raw.shape[1], model.W_v.shape, model.W_t.shape))
    _, v_unit = _project(model.W_v, v_raw)
    _, t_unit = _project(model.W_t, t_raw)
    return v_unit, t_unit


def temperatures(t, indices, table, config):
    """Temperature (or margin) of every pair of a batch under the configured mode."""
    schedule = config.schedule
    if config.mode == Mode.FIXED:
        return np.full(len(indices), config.fixed_value)
    if config.mode == Mode.TS_ONLY:
        return np.full(len(indices), base_temperature(t, schedule) + (schedule.sh_minus + schedule.sh_plus) / 2.0)
    if table is None:
        raise ArgumentError('Mode {} needs a shift table.'.format(config.mode.value))
    if config.mode == Mode.ICS_ONLY:
        return sample_temperatures(t, indices, table, replace(schedule, alpha=0.0))
    return sample_temperatures(t, indices, table, schedule)


def train_step(model, batch, t, table, config):
    """One SGD step. Returns the updated model and the loss before the update."""
    z_v, v_unit = _project(model.W_v, batch.v_raw)
    z_t, t_unit = _project(model.W_t, batch.t_raw)
    taus = temperatures(t, batch.indices, table, config)
    result = contrastive_loss(similarity_matrix(v_unit, t_unit), taus, config.schedule.loss_kind)
    if not np.isfinite(result.loss):
        logger.error("Non-finite loss at iteration {}".format(t))
        raise DivergenceError('Loss diverged at iteration {}.'.format(t), iteration=t)

    grad_z_v, grad_z_t = embedding_gradients(z_v, z_t, result)
    W_v = model.W_v - config.learning_rate * (np.asarray(batch.v_raw).T @ grad_z_v)
    W_t = model.W_t - config.learning_rate * (np.asarray(batch.t_raw).T @ grad_z_t)
    if not (np.all(np.isfinite(W_v)) and np.all(np.isfinite(W_t))):
        logger.error("Non-finite weights at iteration {}".format(t))
        raise DivergenceError('Weights diverged at iteration {}.'.format(t), iteration=t)
    return TwoTowerModel(W_v, W_t), result.loss


def build_table(dataset, config, threads=1):
    """Shift table of the training pairs from the configured source."""
    schedule = config.schedule
    if config.shift_table_source == ShiftTableSource.ORACLE_LABELS:
        return shift_table_from_labels(dataset.labels, dataset.num_clusters, schedule.sh_minus, schedule.sh_plus)
    view = dataset.t_raw if config.shift_table_source == ShiftTableSource.KMEANS_ON_TEXT_VIEW else dataset.v_raw
    seed = config.seed if config.kmeans_seed is None else config.kmeans_seed
    model = kmeans_fit(view, k=config.kmeans_k, seed=seed, threads=threads)
    return build_shift_table(model, view, schedule.sh_minus, schedule.sh_plus, threads=threads)


def check_table(table, config, n):
    """Reject a shift table that does not cover n samples or lets a temperature reach zero."""
    if not isinstance(table, ShiftTable):
        raise ArgumentError('table must be a ShiftTable.')
    if table.n != n:
        logger.fatal('The shift table covers {} samples, the dataset {}.'.format(table.n, n))
        raise ImproperlyConfigured('The shift table covers {} samples, the dataset {}.'.format(table.n, n))
    if not config.mode.uses_shift_table:
        return
    alpha = config.schedule.alpha if config.mode == Mode.TS_AND_ICS else 0.0
    lowest = float(table.shifts.min()) - alpha / 2.0
    if lowest <= 0:
        logger.fatal('The shift table lets temperatures reach {:.6g} with alpha={}.'.format(lowest, alpha))
        raise ImproperlyConfigured(
            'The smallest shift ({}) minus alpha/2 ({}) must be positive.'.format(table.shifts.min(), alpha / 2.0)
        )


def train(dataset, config, table=None, threads=1):
    logger.debug("train")
    n = dataset.n
    if config.batch_size > n:
        raise ArgumentError('batch_size ({}) exceeds the dataset size ({}).'.format(config.batch_size, n))
    if table is None and config.mode.uses_shift_table:
        table = build_table(dataset, config, threads)
    if table is not None:
        check_table(table, config, n)

    rng = np.random.default_rng(config.seed)
    model = _init_model(dataset.v_raw.shape[1], dataset.t_raw.shape[1], config, rng)
    log = TrainingLog()
    for t in range(config.total_iters):
        indices = rng.choice(n, size=config.batch_size, replace=False)
        batch = Batch(indices, dataset.v_raw[indices], dataset.t_raw[indices])
        model, loss = train_step(model, batch, t, table, config)
        if t % config.log_interval == 0 or t == config.total_iters - 1:
            taus = temperatures(t, indices, table, config)
            log.entries.append(LogEntry(t, loss, float(taus.min()), float(taus.max())))
            logger.info("iter {} loss {:.6g} tau [{:.4g}, {:.4g}]".format(t, loss, taus.min(), taus.max()))
    return model, log


def batch_loss(model, v_raw, t_raw, taus, loss_kind):
    v_unit, t_unit = forward(model, v_raw, t_raw)
    return contrastive_loss(similarity_matrix(v_unit, t_unit), taus, loss_kind).loss


def save_model(storage, model):
    written = [
        storage.save_embeddings('W_v.mme', EmbeddingMatrix(model.W_v)),
        storage.save_embeddings('W_t.mme', EmbeddingMatrix(model.W_t)),
    ]
    written.append(storage.save_json(MODEL_NAME, {
        'd_v': int(model.W_v.shape[0]),
        'd_t': int(model.W_t.shape[0]),
        'd_emb': int(model.d_emb),
        'weights': {'W_v': 'W_v.mme', 'W_t': 'W_t.mme'},
    }))
    return written


def load_model(storage):
    description = storage.load_json(MODEL_NAME)
    W_v = storage.load_embeddings(description['weights']['W_v']).data
    W_t = storage.load_embeddings(description['weights']['W_t']).data
    if W_v.shape[1] != description['d_emb'] or W_t.shape[1] != description['d_emb']:
        raise ImproperlyConfigured('Stored weights do not match {}.'.format(MODEL_NAME))
    return TwoTowerModel(W_v, W_t)
