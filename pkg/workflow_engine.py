"""
Workflow Engine - Orchestrates the two-stage screening pipeline
"""

import os
from typing import Dict, List, Optional, Sequence, Tuple

from config import Config
from core_model import Dataset, Hyperparams
from nodes.data_io_node import (
    RunManifest,
    load_chain,
    load_dataset,
    load_truth,
    persist_chain,
    read_response,
    read_results,
    save_dataset,
    write_results,
    write_roc,
    write_selection,
    write_truth,
)
from nodes.gibbs_sampler_node import ChainConfig, ChainOutput, GibbsSamplerNode
from nodes.hyperparam_tuner_node import HyperparamTunerNode
from nodes.report_generator_node import ReportGeneratorNode, RocCurve, roc_auc
from nodes.screening_node import ScreeningNode, ScreeningResult
from nodes.simulation_node import SimInstance, SimSpec, StudyResult, replicate_study, scaling_benchmark, simulate
from utils.errors import InvalidInputError
from utils.logger import log_error, setup_logger

logger = setup_logger()


class ScreeningWorkflow:
    """Main workflow engine wiring fit -> screen -> select"""

    def __init__(self, threads: Optional[int] = None, chunk_size: Optional[int] = None,
                 mem_budget: Optional[int] = None):
        self.config = Config()
        settings = self.config.SCREENING_CONFIG
        self.threads = threads or settings['threads']
        self.chunk_size = chunk_size or settings['chunk_size']
        self.mem_budget = settings['mem_budget'] if mem_budget is None else mem_budget

        # Initialize nodes
        self.gibbs_sampler_node = GibbsSamplerNode()
        self.screening_node = ScreeningNode()
        self.hyperparam_tuner_node = HyperparamTunerNode()
        self.report_generator_node = ReportGeneratorNode()

        logger.debug("Screening workflow initialized")

    def fit_baseline(self, y_path: str, chain_path: str, hp: Hyperparams, cfg: ChainConfig,
                     n_chains: int = 1) -> ChainOutput:
        """Stage one: fit the baseline mixture to a response file and persist the chain"""
        y = read_response(y_path)
        chain = self.gibbs_sampler_node.fit_baseline(y, hp, cfg, n_chains, self.threads)
        persist_chain(chain, chain_path)
        logger.info(f"Chain written to {chain_path}")
        return chain

    def screen(self, dataset: Dataset, chain: ChainOutput, hp: Hyperparams,
               tol: Optional[float] = None, max_iter: Optional[int] = None) -> ScreeningResult:
        """Stage two: screen every predictor against the retained draws"""
        if chain.n != dataset.n:
            raise InvalidInputError(
                f"chain allocations cover {chain.n} subjects but the dataset has {dataset.n}"
            )
        return self.screening_node.run(
            dataset, chain, hp, tol=tol, max_iter=max_iter, threads=self.threads,
            chunk_size=self.chunk_size, mem_budget=self.mem_budget,
        )

    def screen_files(self, manifest: RunManifest, results_path: str) -> ScreeningResult:
        """Screen a dataset on disk with a persisted chain and write the results CSV"""
        manifest.validate()
        dataset = load_dataset(manifest.y_path, manifest.x_path, manifest.x_format, manifest.levels_path)
        chain = load_chain(manifest.chain_path)
        result = self.screen(dataset, chain, manifest.hyperparams, manifest.tol, manifest.max_iter)
        self._write_outputs(manifest, result, results_path)
        return result

    def run_pipeline(self, manifest: RunManifest) -> Tuple[ScreeningResult, List[Dict]]:
        """Fit, screen and select in one go; every artifact goes to the output directory"""
        try:
            manifest.validate()
            os.makedirs(manifest.output_dir, exist_ok=True)
            dataset = load_dataset(manifest.y_path, manifest.x_path, manifest.x_format, manifest.levels_path)
            hp = manifest.hyperparams

            logger.info(f"PIPELINE: stage one on n={dataset.n} responses")
            chain = self.gibbs_sampler_node.fit_baseline(
                dataset.y, hp, manifest.chain, manifest.n_chains, self.threads
            )
            persist_chain(chain, os.path.join(manifest.output_dir, 'chain.txt'))

            logger.info(f"PIPELINE: stage two on p={dataset.p} predictors")
            result = self.screen(dataset, chain, hp, manifest.tol, manifest.max_iter)
            self._write_outputs(manifest, result, os.path.join(manifest.output_dir, 'results.csv'))

            d_n = min(manifest.top, result.n_predictors)
            summary = self.report_generator_node.selection_summary(result, d_n)
            write_selection(summary['rows'], os.path.join(manifest.output_dir, 'selection.csv'))
            return result, summary['rows']
        except Exception as e:
            log_error(logger, "Pipeline failure", str(e), f"output_dir={manifest.output_dir}")
            raise

    def _write_outputs(self, manifest: RunManifest, result: ScreeningResult, results_path: str) -> None:
        write_results(result, results_path, seed=manifest.seed)
        manifest_dir = os.path.dirname(os.path.abspath(results_path))
        manifest.write(os.path.join(manifest_dir, 'manifest.json'))
        logger.info(f"Results written to {results_path}")

    def tune(self, hp: Hyperparams, mc_draws: Optional[int] = None, seed: Optional[int] = None,
             factors: Optional[Sequence[float]] = None):
        """Prior SNR of hp, or of hp with its precisions scaled by each factor"""
        if factors:
            return self.hyperparam_tuner_node.precision_sweep(hp, factors, mc_draws, seed, self.threads)
        return self.hyperparam_tuner_node.report(hp, mc_draws, seed, self.threads)

    def simulate(self, spec: SimSpec, output_dir: str, fmt: str = 'csv') -> SimInstance:
        """Generate one benchmark instance and write y, X and the truth set"""
        instance = simulate(spec)
        os.makedirs(output_dir, exist_ok=True)
        x_name = 'x.csv' if fmt == 'csv' else 'x.bin'
        save_dataset(instance.dataset, os.path.join(output_dir, 'y.txt'),
                     os.path.join(output_dir, x_name), fmt)
        write_truth(instance.truth, os.path.join(output_dir, 'truth.txt'))
        logger.info(
            f"SIMULATE: model {spec.model}, n={spec.n}, p={spec.p}, "
            f"correlated={spec.correlated}, written to {output_dir}"
        )
        return instance

    def roc(self, results_path: str, truth_path: str, curve_path: Optional[str] = None) -> RocCurve:
        """ROC curve of a results file against a truth file"""
        result = read_results(results_path)
        curve = roc_auc(result.pi0, load_truth(truth_path))
        if curve_path:
            write_roc(curve, curve_path)
        logger.info(f"ROC: AUC={curve.auc:.6f}")
        return curve

    def study(self, model: int, n: int, p: int, reps: int, hp: Hyperparams, cfg: ChainConfig,
              d_n: int) -> StudyResult:
        return replicate_study(model, n, p, reps, hp.k, cfg, d_n, seed=cfg.seed,
                               threads=self.threads, hp=hp)

    def bench_scaling(self, sizes: Sequence[Tuple[int, int]], n_draws: int, k: int, seed: int,
                      repeats: int = 3) -> List[Dict]:
        return scaling_benchmark(sizes, n_draws=n_draws, k=k, seed=seed, repeats=repeats,
                                 threads=self.threads)
