"""
Modular Bayes screening - command-line entry point

  fit-baseline   y -> chain file
  screen         y + X + chain -> results CSV
  run            y + X -> chain, results, selection and manifest in one directory
  tune-snr       hyperparameters -> prior signal-to-noise report
  simulate       benchmark model -> dataset files + truth file
  roc            results + truth -> ROC curve CSV and AUC
  study          replicated simulate/fit/screen/score benchmark
  bench-scaling  screening-stage wall time over (n, p) sizes
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import List, Optional

from config import Config
from core_model import Hyperparams
from nodes.data_io_node import FORMATS, RunManifest
from nodes.gibbs_sampler_node import ChainConfig
from nodes.hyperparam_tuner_node import default_hyperparams
from nodes.simulation_node import BLOCK_MODES, SimSpec
from utils.errors import EXIT_OK, InvalidArgumentError, exit_code_for
from utils.logger import log_error, setup_logger
from workflow_engine import ScreeningWorkflow

logger = setup_logger()


def _shared_flags() -> argparse.ArgumentParser:
    chain = Config.CHAIN_CONFIG
    screening = Config.SCREENING_CONFIG
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--k', type=int, default=Config.DEFAULT_K, help='mixture components')
    parent.add_argument('--iters', type=int, default=chain['total_iters'], help='total Gibbs sweeps')
    parent.add_argument('--burnin', type=int, default=chain['burn_in'])
    parent.add_argument('--keep', type=int, default=chain['keep'], help='retained draws')
    parent.add_argument('--thin', type=int, default=chain['thin'])
    parent.add_argument('--chains', type=int, default=chain['n_chains'])
    parent.add_argument('--seed', type=int, default=Config.SEED)
    parent.add_argument('--threads', type=int, default=screening['threads'])
    parent.add_argument('--chunk-size', type=int, default=screening['chunk_size'])
    parent.add_argument('--mem-budget', type=int, default=screening['mem_budget'], help='bytes')
    parent.add_argument('--tau-omega', type=float, help='default k^1.5 + 8(k-1)')
    parent.add_argument('--tau-mu', type=float)
    parent.add_argument('--tau-sigma', type=float)
    parent.add_argument('--top', type=int, default=screening['top'], help='d_n')
    parent.add_argument('--tol', type=float, default=screening['tol'])
    parent.add_argument('--max-iter', type=int, default=screening['max_iter'])
    parent.add_argument('--log-level', default=None, choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    return parent


def _dataset_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--y', required=True, help='response file, one value per line')
    parser.add_argument('--x', required=True, help='predictor file')
    parser.add_argument('--format', choices=FORMATS, default='csv')
    parser.add_argument('--levels', help='optional per-column level counts')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mobs', description='Two-stage Bayesian predictor screening')
    sub = parser.add_subparsers(dest='command', required=True)
    shared = _shared_flags()

    fit = sub.add_parser('fit-baseline', parents=[shared], help='fit the baseline mixture')
    fit.add_argument('--y', required=True)
    fit.add_argument('--out', required=True, help='chain file')

    scr = sub.add_parser('screen', parents=[shared], help='screen predictors against a chain')
    _dataset_flags(scr)
    scr.add_argument('--chain', required=True)
    scr.add_argument('--out', required=True, help='results CSV')

    run = sub.add_parser('run', parents=[shared], help='fit, screen and select')
    _dataset_flags(run)
    run.add_argument('--out-dir', required=True)

    tune = sub.add_parser('tune-snr', parents=[shared], help='prior signal-to-noise ratio')
    tune.add_argument('--draws', type=int, default=Config.TUNER_CONFIG['mc_draws'])
    tune.add_argument('--scale', type=float, nargs='*', help='precision multipliers to sweep')

    sim = sub.add_parser('simulate', parents=[shared], help='generate a benchmark instance')
    _simulation_flags(sim)
    sim.add_argument('--correlated', action='store_true')
    sim.add_argument('--block-mode', choices=BLOCK_MODES, default='all-rows')
    sim.add_argument('--format', choices=FORMATS, default='csv')
    sim.add_argument('--out-dir', required=True)

    roc = sub.add_parser('roc', parents=[shared], help='ROC curve of a results file')
    roc.add_argument('--results', required=True)
    roc.add_argument('--truth', required=True)
    roc.add_argument('--out', help='curve CSV')

    study = sub.add_parser('study', parents=[shared], help='replicated benchmark study')
    _simulation_flags(study)
    study.add_argument('--reps', type=int, default=20)
    study.add_argument('--out', help='per-replicate JSON records')

    bench = sub.add_parser('bench-scaling', parents=[shared], help='screening-stage timings')
    bench.add_argument('--sizes', nargs='+', default=['200x2000', '200x4000', '400x2000'],
                       help='NxP pairs')
    bench.add_argument('--draws', type=int, default=100)
    bench.add_argument('--repeats', type=int, default=3)
    return parser


def _simulation_flags(parser: argparse.ArgumentParser) -> None:
    sim = Config.SIMULATION_CONFIG
    parser.add_argument('--model', type=int, required=True, choices=range(1, 7))
    parser.add_argument('--n', type=int, default=sim['n'])
    parser.add_argument('--p', type=int, default=sim['p'])
    parser.add_argument('--rho', type=float, default=sim['rho'])
    parser.add_argument('--block-size', type=int, default=sim['block_size'])


def hyperparams_from_args(args) -> Hyperparams:
    hp = default_hyperparams(args.k)
    overrides = {name: getattr(args, name) for name in ('tau_omega', 'tau_mu', 'tau_sigma')
                 if getattr(args, name) is not None}
    return replace(hp, **overrides) if overrides else hp


def chain_config_from_args(args) -> ChainConfig:
    return ChainConfig(total_iters=args.iters, burn_in=args.burnin, keep=args.keep,
                       seed=args.seed, thin=args.thin)


def manifest_from_args(args, output_dir: str, chain_path: Optional[str] = None) -> RunManifest:
    return RunManifest(
        y_path=args.y,
        x_path=args.x,
        output_dir=output_dir,
        hyperparams=hyperparams_from_args(args),
        chain=chain_config_from_args(args),
        x_format=args.format,
        levels_path=args.levels,
        chain_path=chain_path,
        tol=args.tol,
        max_iter=args.max_iter,
        threads=args.threads,
        chunk_size=args.chunk_size,
        mem_budget=args.mem_budget,
        top=args.top,
        n_chains=args.chains,
        seed=args.seed,
    )


def _parse_sizes(values: List[str]):
    sizes = []
    for value in values:
        n, sep, p = value.lower().partition('x')
        if not sep or not n.isdigit() or not p.isdigit():
            raise InvalidArgumentError(f"size must look like NxP (got {value!r})")
        sizes.append((int(n), int(p)))
    return sizes


def dispatch(args) -> None:
    workflow = ScreeningWorkflow(threads=args.threads, chunk_size=args.chunk_size,
                                 mem_budget=args.mem_budget)
    hp = hyperparams_from_args(args)

    if args.command == 'fit-baseline':
        workflow.fit_baseline(args.y, args.out, hp, chain_config_from_args(args), args.chains)

    elif args.command == 'screen':
        output_dir = os.path.dirname(os.path.abspath(args.out))
        workflow.screen_files(manifest_from_args(args, output_dir, args.chain), args.out)

    elif args.command == 'run':
        _, rows = workflow.run_pipeline(manifest_from_args(args, args.out_dir))
        for rank, row in enumerate(rows, start=1):
            print(f"{rank}\t{row['j'] + 1}\t{row['pi0']:.6g}\t{row['dominant']}")

    elif args.command == 'tune-snr':
        outcome = workflow.tune(hp, args.draws, args.seed, args.scale)
        for factor, estimate in (outcome if args.scale else [(1.0, outcome)]):
            print(f"scale={factor:g}\tdelta0={estimate.delta0:.6g}\tdelta1={estimate.delta1:.6g}\t"
                  f"ratio={estimate.ratio:.6f}\tse={estimate.mc_stderr_ratio:.6f}")

    elif args.command == 'simulate':
        spec = SimSpec(model=args.model, n=args.n, p=args.p, correlated=args.correlated, rho=args.rho,
                       block_size=min(args.block_size, args.p), seed=args.seed, block_mode=args.block_mode)
        workflow.simulate(spec, args.out_dir, args.format)

    elif args.command == 'roc':
        curve = workflow.roc(args.results, args.truth, args.out)
        print(f"auc={curve.auc:.17g}")

    elif args.command == 'study':
        study = workflow.study(args.model, args.n, args.p, args.reps, hp, chain_config_from_args(args),
                               args.top)
        print(f"mean_auc_mobs={study.mean_auc_mobs:.6f}\tmean_auc_baseline={study.mean_auc_baseline:.6f}\t"
              f"coverage={study.coverage_rate:.3f}")
        if args.out:
            with open(args.out, 'w', encoding='utf-8') as handle:
                json.dump([dict(r, kappa=list(r['kappa'])) for r in study.records], handle, indent=2)

    elif args.command == 'bench-scaling':
        for row in workflow.bench_scaling(_parse_sizes(args.sizes), args.draws, args.k, args.seed,
                                          args.repeats):
            print(f"n={row['n']}\tp={row['p']}\tdraws={row['draws']}\tseconds={row['seconds']:.4f}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logger(level=args.log_level)
    try:
        Config.validate_config()
        dispatch(args)
        return EXIT_OK
    except Exception as e:
        log_error(logger, type(e).__name__, str(e), f"command={args.command}")
        return exit_code_for(e)


if __name__ == '__main__':
    sys.exit(main())
