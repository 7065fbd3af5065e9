# -*- coding: utf-8 -*-

# Command line entry point.
#
#   mmts synth     --spec <spec.json> --out <dir>
#   mmts cluster   --embeddings <path.mme> --k 200 --seed 42 --sh-minus <r> --sh-plus <r> --out <shifts.json>
#   mmts schedule  --config <cfg.json> [--shifts <shifts.json>] --iters <n> --out <schedule.tsv>
#   mmts train     --data <dir> --config <cfg.json> --mode ts_and_ics --out <run_dir>
#   mmts eval      --run <run_dir> --relevancy same_cluster --out <metrics.json>
#   mmts gradcheck --trials 100 --seed 0
#   mmts profile   --similarities <fixture.mme> --taus 0.05,0.1,0.2,0.5,1.0 --out <dir>
#   mmts ablate    --data <dir> --config <cfg.json> --seeds 5 --out <grid.tsv>
#
# Exit codes: 0 success, 2 argument/validation error, 3 I/O error,
# 4 numeric/divergence error.

import argparse
import logging
import os
import sys

from dataclasses import replace

from . import __version__
from .ablation import format_grid_tsv, run_grid
from .distribution import DEFAULT_MAX_ITERS, DEFAULT_TOL, build_shift_table, kmeans_fit, load_shift_table
from .exceptions import ArgumentError, MMTSException
from .gradcheck import run_gradcheck
from .loss import (
    SimilarityMatrix, contribution_entropy, format_profile_tsv, hard_easy_ratio, negative_contribution_profile,
    similarity_matrix,
)
from .retrieval_eval import RelevancyMode, evaluate
from .schedule import endpoint_table, format_schedule_tsv, load_schedule_config, schedule_dump
from .storage import MANIFEST_NAME, RunManifest, RunStorage, dumps_json, load_embeddings
from .synthdata import generate, input_names, load_dataset, load_synthetic_spec, save_dataset
from .trainer import LOG_NAME, Mode, forward, load_model, load_train_config, save_model, train


logger = logging.getLogger('mmts')

THREADS_ENV = 'MMTS_THREADS'
EXIT_IO = 3


def resolve_threads(args):
    threads = args.threads
    if threads is None:
        threads = os.environ.get(THREADS_ENV, '') or 1
    try:
        threads = int(threads)
    except ValueError:
        raise ArgumentError('{} must be an integer, got {!r}.'.format(THREADS_ENV, threads))
    if threads < 1:
        raise ArgumentError('The thread count must be positive, got {}.'.format(threads))
    return threads


def _file_storage(path):
    """Storage of the directory containing ``path`` plus the sidecar manifest name."""
    directory = os.path.dirname(os.path.abspath(path))
    stem = os.path.splitext(os.path.basename(path))[0]
    return RunStorage(directory, create=True), stem + '.manifest.json'


def cmd_synth(args):
    logger.debug("cmd_synth")
    spec = load_synthetic_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    dataset = generate(spec)
    storage = RunStorage(args.out, create=True)
    manifest = RunManifest.for_inputs('synth', spec.to_dict(), spec.seed, [args.spec])
    manifest.outputs = [storage.path(name) for name in save_dataset(storage, dataset)]
    manifest.write(storage)
    print("Dataset written to {} ({} pairs, {} clusters)".format(storage.location, dataset.n, dataset.num_clusters))
    return storage.location


def cmd_cluster(args):
    logger.debug("cmd_cluster")
    embeddings = load_embeddings(args.embeddings)
    threads = resolve_threads(args)
    model = kmeans_fit(embeddings, k=args.k, seed=args.seed, max_iters=args.max_iters, tol=args.tol, threads=threads)
    table = build_shift_table(model, embeddings, args.sh_minus, args.sh_plus, threads=threads)
    storage, manifest_name = _file_storage(args.out)
    name = os.path.basename(args.out)
    storage.save_json(name, table.to_dict())
    config = {'k': args.k, 'max_iters': args.max_iters, 'tol': args.tol,
              'sh_minus': args.sh_minus, 'sh_plus': args.sh_plus, 'inertia': model.inertia}
    manifest = RunManifest.for_inputs('cluster', config, args.seed, [args.embeddings])
    manifest.outputs = [storage.path(name)]
    manifest.write(storage, manifest_name)
    print("Shift table written to {} (sizes {}..{})".format(storage.path(name), min(table.sizes), max(table.sizes)))
    return storage.path(name)


def cmd_schedule(args):
    logger.debug("cmd_schedule")
    config = load_schedule_config(args.config)
    inputs = [args.config]
    if args.shifts:
        table = load_shift_table(args.shifts)
        inputs.append(args.shifts)
    else:
        table = endpoint_table(config)
    rows = schedule_dump(table, config, args.iters)
    storage, manifest_name = _file_storage(args.out)
    name = os.path.basename(args.out)
    storage.save_text(name, format_schedule_tsv(rows))
    manifest = RunManifest.for_inputs('schedule', dict(config.to_dict(), iters=args.iters), None, inputs)
    manifest.outputs = [storage.path(name)]
    manifest.write(storage, manifest_name)
    return storage.path(name)


def cmd_train(args):
    logger.debug("cmd_train")
    data = RunStorage(args.data)
    overrides = {}
    if args.mode:
        overrides['mode'] = args.mode
    if args.seed is not None:
        overrides['seed'] = args.seed
    config = load_train_config(args.config, overrides)
    dataset = load_dataset(data)
    inputs = [data.path(name) for name in input_names(data)] + [args.config]
    table = None
    if args.shifts:
        table = load_shift_table(args.shifts)
        inputs.append(args.shifts)

    model, log = train(dataset, config, table, threads=resolve_threads(args))

    storage = RunStorage(args.out, create=True)
    written = save_model(storage, model)
    written.append(storage.save_text(LOG_NAME, log.to_tsv()))
    echo = dict(config.to_dict(), data_dir=data.location)
    manifest = RunManifest.for_inputs('train', echo, config.seed, inputs)
    manifest.outputs = [storage.path(name) for name in written]
    manifest.write(storage)
    print("Run written to {} (final loss {:.6g})".format(
        storage.location, log.entries[-1].loss if log.entries else float('nan')))
    return storage.location


def evaluate_run(run_dir, relevancy_mode):
    """Metrics of a training run on its dataset's eval split (or training pairs)."""
    storage = RunStorage(run_dir)
    if not storage.exists(MANIFEST_NAME):
        raise ArgumentError("The directory '{}' holds no run manifest.".format(storage.location))
    manifest = RunManifest.read(storage.path(MANIFEST_NAME))
    manifest.verify()
    data = RunStorage(manifest.config['data_dir'])
    dataset = load_dataset(data)
    split = dataset.eval_split if dataset.eval_split is not None else dataset
    model = load_model(storage)
    v_unit, t_unit = forward(model, split.v_raw, split.t_raw)
    report = evaluate(similarity_matrix(v_unit, t_unit), split.labels, dataset.sizes, relevancy_mode)
    inputs = [storage.path(MANIFEST_NAME)] + [storage.path(name) for name in ('W_v.mme', 'W_t.mme', 'model.json')]
    return report, inputs


def cmd_eval(args):
    logger.debug("cmd_eval")
    report, inputs = evaluate_run(args.run, args.relevancy)
    storage, manifest_name = _file_storage(args.out)
    name = os.path.basename(args.out)
    storage.save_text(name, dumps_json(report.to_dict()))
    manifest = RunManifest.for_inputs('eval', {'relevancy': RelevancyMode(args.relevancy).value}, None, inputs)
    manifest.outputs = [storage.path(name)]
    manifest.write(storage, manifest_name)
    print("Metrics written to {}".format(storage.path(name)))
    return storage.path(name)


def cmd_gradcheck(args):
    logger.debug("cmd_gradcheck")
    report = run_gradcheck(args.trials, args.seed)
    if args.out:
        storage, manifest_name = _file_storage(args.out)
        name = os.path.basename(args.out)
        storage.save_json(name, report.to_dict())
        manifest = RunManifest.for_inputs('gradcheck', {'trials': args.trials}, args.seed, [])
        manifest.outputs = [storage.path(name)]
        manifest.write(storage, manifest_name)
    print("{} trials per loss, max relative error {:.3g}: {}".format(
        args.trials, report.max_relative_error, 'PASS' if report.passed else 'FAIL'))
    return 0 if report.passed else 4


def _parse_taus(text):
    try:
        taus = [float(value) for value in text.split(',') if value.strip()]
    except ValueError:
        raise ArgumentError('--taus must be a comma-separated list of numbers, got {!r}.'.format(text))
    if not taus:
        raise ArgumentError('--taus needs at least one value.')
    return taus


def cmd_profile(args):
    logger.debug("cmd_profile")
    fixture = load_embeddings(args.similarities)
    similarities = SimilarityMatrix(fixture.data)
    taus = _parse_taus(args.taus)
    storage = RunStorage(args.out, create=True)
    written = []
    summary = ['tau\tentropy\thard_easy_ratio']
    for tau in taus:
        profile = negative_contribution_profile(similarities, tau, args.anchor)
        written.append(storage.save_text('profile_tau{:g}.tsv'.format(tau), format_profile_tsv(profile)))
        entropy = contribution_entropy(profile)
        summary.append('{:g}\t{:.9g}\t{:.9g}'.format(tau, entropy, hard_easy_ratio(profile, tau)))
    written.append(storage.save_text('entropy.tsv', '\n'.join(summary) + '\n'))
    manifest = RunManifest.for_inputs('profile', {'taus': taus, 'anchor': args.anchor}, None, [args.similarities])
    manifest.outputs = [storage.path(name) for name in written]
    manifest.write(storage)
    return storage.location


def cmd_ablate(args):
    logger.debug("cmd_ablate")
    data = RunStorage(args.data)
    overrides = {'mode': args.modes.split(',')[0]} if args.modes else {}
    config = load_train_config(args.config, overrides)
    modes = [Mode(m) for m in args.modes.split(',')] if args.modes else list(Mode)
    dataset = load_dataset(data)
    rows = run_grid(dataset, config, modes=modes, seeds=range(args.seeds), threads=resolve_threads(args))
    storage, manifest_name = _file_storage(args.out)
    name = os.path.basename(args.out)
    storage.save_text(name, format_grid_tsv(rows))
    inputs = [data.path(n) for n in input_names(data)] + [args.config]
    manifest = RunManifest.for_inputs('ablate', dict(config.to_dict(), seeds=args.seeds), None, inputs)
    manifest.outputs = [storage.path(name)]
    manifest.write(storage, manifest_name)
    return storage.path(name)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--threads', type=int, default=None,
                        help='worker threads (default: ${} or 1)'.format(THREADS_ENV))
    common.add_argument('--verbose', action='store_true', help='log debug messages')

    parser = argparse.ArgumentParser(prog='mmts', description='Multi-modal temperature and margin schedules')
    parser.add_argument('--version', action='version', version='%(prog)s {}'.format(__version__))
    subparsers = parser.add_subparsers(dest='command')
    subparsers.required = True

    synth = subparsers.add_parser('synth', parents=[common], help='generate a paired long-tail dataset')
    synth.add_argument('--spec', required=True)
    synth.add_argument('--out', required=True)
    synth.add_argument('--seed', type=int, default=None)
    synth.set_defaults(func=cmd_synth)

    cluster = subparsers.add_parser('cluster', parents=[common], help='cluster embeddings into a shift table')
    cluster.add_argument('--embeddings', required=True)
    cluster.add_argument('--k', type=int, default=200)
    cluster.add_argument('--seed', type=int, default=0)
    cluster.add_argument('--sh-minus', type=float, required=True)
    cluster.add_argument('--sh-plus', type=float, required=True)
    cluster.add_argument('--max-iters', type=int, default=DEFAULT_MAX_ITERS)
    cluster.add_argument('--tol', type=float, default=DEFAULT_TOL)
    cluster.add_argument('--out', required=True)
    cluster.set_defaults(func=cmd_cluster)

    schedule = subparsers.add_parser('schedule', parents=[common], help='dump per-cluster temperatures')
    schedule.add_argument('--config', required=True)
    schedule.add_argument('--shifts', default=None)
    schedule.add_argument('--iters', type=int, required=True)
    schedule.add_argument('--out', required=True)
    schedule.set_defaults(func=cmd_schedule)

    train_cmd = subparsers.add_parser('train', parents=[common], help='train a two-tower model')
    train_cmd.add_argument('--data', required=True)
    train_cmd.add_argument('--config', required=True)
    train_cmd.add_argument('--mode', choices=[m.value for m in Mode], default=None)
    train_cmd.add_argument('--shifts', default=None)
    train_cmd.add_argument('--seed', type=int, default=None)
    train_cmd.add_argument('--out', required=True)
    train_cmd.set_defaults(func=cmd_train)

    eval_cmd = subparsers.add_parser('eval', parents=[common], help='score a training run')
    eval_cmd.add_argument('--run', required=True)
    eval_cmd.add_argument('--relevancy', choices=[m.value for m in RelevancyMode],
                          default=RelevancyMode.SAME_CLUSTER.value)
    eval_cmd.add_argument('--out', required=True)
    eval_cmd.set_defaults(func=cmd_eval)

    gradcheck = subparsers.add_parser('gradcheck', parents=[common], help='verify loss gradients')
    gradcheck.add_argument('--trials', type=int, default=100)
    gradcheck.add_argument('--seed', type=int, default=0)
    gradcheck.add_argument('--out', default=None)
    gradcheck.set_defaults(func=cmd_gradcheck)

    profile = subparsers.add_parser('profile', parents=[common], help='negative contribution profiles')
    profile.add_argument('--similarities', required=True)
    profile.add_argument('--taus', default='0.05,0.1,0.2,0.5,1.0')
    profile.add_argument('--anchor', type=int, default=0)
    profile.add_argument('--out', required=True)
    profile.set_defaults(func=cmd_profile)

    ablate = subparsers.add_parser('ablate', parents=[common], help='train the mode ablation grid')
    ablate.add_argument('--data', required=True)
    ablate.add_argument('--config', required=True)
    ablate.add_argument('--modes', default=None, help='comma-separated modes (default: all)')
    ablate.add_argument('--seeds', type=int, default=5)
    ablate.add_argument('--out', required=True)
    ablate.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
    try:
        result = args.func(args)
    except MMTSException as exc:
        logger.error("{} failed: {}".format(args.command, exc))
        sys.stderr.write('mmts {}: error: {}\n'.format(args.command, exc))
        return exc.exit_code
    except (IOError, OSError) as exc:
        logger.error("{} failed: {}".format(args.command, exc))
        sys.stderr.write('mmts {}: error: {}\n'.format(args.command, exc))
        return EXIT_IO
    return result if isinstance(result, int) else 0
