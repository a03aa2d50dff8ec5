import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import pandas as pd
import psutil

from bse_harness import SceneConfig, make_mixture
from bse_metrics import MetricReport, ReportTables, evaluate_estimate, evaluate_run
from bse_pipeline import ExtractionPipeline, PipelineConfig
from bse_rcscme import DEFAULT_EM_ITERATIONS, VARIANTS, PriorConfig

logger = logging.getLogger(__name__)

BASELINE_METHOD = "ilrma"


@dataclass(frozen=True)
class BenchConfig:
    seeds: Tuple[int, ...] = tuple(range(10))
    talkers: Tuple[int, ...] = (0,)
    target_directions_deg: Tuple[float, ...] = (0.0, 90.0, 180.0, 270.0)
    noise_kinds: Tuple[str, ...] = ("gaussian",)
    variants: Tuple[str, ...] = VARIANTS
    n_em_iterations: int = DEFAULT_EM_ITERATIONS
    # None keeps each variant's default shape parameter
    alpha: Optional[float] = None
    beta: float = 1e-16
    scene: SceneConfig = field(default_factory=SceneConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    threads: int = 1


@dataclass
class BenchResult:
    reports: List[MetricReport]

    @property
    def trajectory(self):
        return ReportTables.trajectory_dataframe(self.reports)

    @property
    def summary(self):
        return ReportTables.summarize_reports(self.reports)

    @property
    def curves(self):
        return ReportTables.mean_curves(self.reports)

    def save(self, output_dir):
        os.makedirs(output_dir, exist_ok=True)
        trajectory_file = os.path.join(output_dir, "bench_trajectory.csv")
        summary_file = os.path.join(output_dir, "bench_summary.csv")
        curves_file = os.path.join(output_dir, "bench_curves.csv")
        ReportTables.save_table(self.trajectory, trajectory_file)
        ReportTables.save_table(self.summary, summary_file)
        ReportTables.save_table(self.curves, curves_file, index=True)
        return trajectory_file, summary_file, curves_file


def log_memory_usage():
    process = psutil.Process(os.getpid())
    logger.info(f"Memory usage: {process.memory_info().rss / 1024 / 1024:.2f} MB")


class ExtractionBenchmark:
    def __init__(self, config: BenchConfig = None):
        """
        Compare the RCSCME variants and the ILRMA-only baseline over a grid of scenes.

        Args:
            config (BenchConfig): grid axes, base scene and pipeline settings
        """
        self.config = config or BenchConfig()

    def scenes(self) -> List[SceneConfig]:
        base = self.config.scene
        return [
            replace(base, seed=seed, talker=talker, target_direction_deg=direction, noise_kind=kind)
            for kind in self.config.noise_kinds
            for direction in self.config.target_directions_deg
            for talker in self.config.talkers
            for seed in self.config.seeds
        ]

    def prior_for(self, variant) -> PriorConfig:
        return PriorConfig(
            variant=variant,
            alpha=self.config.alpha,
            beta=self.config.beta,
            n_iterations=self.config.n_em_iterations,
        )

    def run_scene(self, scene: SceneConfig) -> List[MetricReport]:
        """Score every method on one scene; the preprocessing is shared between variants."""
        labels = {
            "seed": scene.seed,
            "talker": scene.talker,
            "direction": scene.target_direction_deg,
            "noise_kind": scene.noise_kind,
        }
        pipeline_config = replace(self.config.pipeline, rank1=replace(self.config.pipeline.rank1, seed=scene.seed))
        pipeline = ExtractionPipeline(pipeline_config)
        ref = pipeline_config.reference_channel

        mix = make_mixture(scene)
        reference = mix.target_image[:, ref]
        observed = mix.mixture[:, ref]
        pre = pipeline.preprocess(mix.mixture, mix.sample_rate_hz)

        reports = [
            evaluate_estimate(pre.baseline_image()[:, ref], reference, observed, method=BASELINE_METHOD, scene=labels)
        ]
        for variant in self.config.variants:
            trajectory = pipeline.trajectory(pre, self.prior_for(variant))
            reports.append(evaluate_run(trajectory, reference, observed, method=variant, scene=labels))

        logger.info(
            f"Scene seed {scene.seed}, talker {scene.talker}, {scene.target_direction_deg:.0f} deg, "
            f"{scene.noise_kind}: "
            + ", ".join(f"{r.method} {r.peak_improvement_db:.2f}/{r.final_improvement_db:.2f} dB" for r in reports)
        )
        return reports

    def run(self) -> BenchResult:
        scenes = self.scenes()
        logger.info(f"Benchmark over {len(scenes)} scenes with {self.config.threads} worker threads")

        per_scene = [None] * len(scenes)
        with ThreadPoolExecutor(max_workers=max(1, self.config.threads)) as executor:
            future_to_index = {executor.submit(self.run_scene, scene): i for i, scene in enumerate(scenes)}
            for future in as_completed(future_to_index):
                i = future_to_index[future]
                try:
                    per_scene[i] = future.result()
                except Exception as e:
                    logger.error(f"Scene {scenes[i]} failed: {str(e)}", exc_info=True)
                    raise
                log_memory_usage()

        reports = [report for scene_reports in per_scene for report in scene_reports]
        return BenchResult(reports=reports)


def format_summary(summary: pd.DataFrame) -> str:
    if summary.empty:
        return "No results"
    return summary[["method", "runs", "score"]].to_string(index=False)
