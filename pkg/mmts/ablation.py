# -*- coding: utf-8 -*-

# Desk-scale ablation over temperature modes.
#
# Every (mode, seed) cell trains a fresh two-tower model on the same dataset
# and records the loss on a fixed reference batch before and after training plus
# the head and tail Recall@1 of the trained model.

import collections
import logging

from dataclasses import replace

import numpy as np

from .loss import similarity_matrix
from .retrieval_eval import stratified_report
from .trainer import Mode, batch_loss, build_table, forward, init_model, temperatures, train


logger = logging.getLogger('mmts')

REFERENCE_SIZE = 256

AblationRow = collections.namedtuple(
    'AblationRow', ['loss_kind', 'mode', 'seed', 'initial_loss', 'final_loss', 'head_r1', 'tail_r1'])


def _reference_indices(n, seed):
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=min(REFERENCE_SIZE, n), replace=False))


def _retrieval_split(dataset):
    if dataset.eval_split is not None:
        return dataset.eval_split
    return dataset


def run_cell(dataset, config, table=None, threads=1):
    """Train one configuration and score it."""
    if table is None and config.mode.uses_shift_table:
        table = build_table(dataset, config, threads)
    reference = _reference_indices(dataset.n, config.seed)
    reference_taus = temperatures(0, reference, table, config)
    loss_kind = config.schedule.loss_kind

    initial = init_model(dataset.v_raw.shape[1], dataset.t_raw.shape[1], config)
    initial_loss = batch_loss(initial, dataset.v_raw[reference], dataset.t_raw[reference], reference_taus, loss_kind)

    model, _ = train(dataset, config, table, threads)
    final_loss = batch_loss(model, dataset.v_raw[reference], dataset.t_raw[reference], reference_taus, loss_kind)

    split = _retrieval_split(dataset)
    v_unit, t_unit = forward(model, split.v_raw, split.t_raw)
    strata = stratified_report(similarity_matrix(v_unit, t_unit), split.labels, dataset.sizes, ks=(1,))
    return AblationRow(loss_kind.value, config.mode.value, config.seed,
                       initial_loss, final_loss, strata.head[1], strata.tail[1])


def run_grid(dataset, config, modes=tuple(Mode), seeds=range(5), threads=1):
    logger.debug("run_grid")
    rows = []
    for seed in seeds:
        for mode in modes:
            cell = replace(config, mode=Mode(mode), seed=int(seed))
            row = run_cell(dataset, cell, threads=threads)
            logger.info("ablation {} seed {}: loss {:.4g} -> {:.4g}, R@1 head {:.3f} tail {:.3f}".format(
                row.mode, row.seed, row.initial_loss, row.final_loss, row.head_r1, row.tail_r1))
            rows.append(row)
    return rows


def format_grid_tsv(rows):
    lines = ['loss_kind\tmode\tseed\tinitial_loss\tfinal_loss\thead_r1\ttail_r1']
    for row in rows:
        lines.append('{}\t{}\t{}\t{:.9g}\t{:.9g}\t{:.9g}\t{:.9g}'.format(*row))
    return '\n'.join(lines) + '\n'


def tail_wins(rows, mode=Mode.TS_AND_ICS, baseline=Mode.FIXED):
    """Seeds on which ``mode`` reaches at least the baseline's tail Recall@1."""
    by_cell = {(row.mode, row.seed): row for row in rows}
    seeds = sorted(set(row.seed for row in rows))
    wins = 0
    for seed in seeds:
        challenger = by_cell.get((Mode(mode).value, seed))
        reference = by_cell.get((Mode(baseline).value, seed))
        if challenger is not None and reference is not None and challenger.tail_r1 >= reference.tail_r1:
            wins += 1
    return wins
