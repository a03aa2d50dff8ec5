import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from bse_errors import InputError

logger = logging.getLogger(__name__)

SDR_CAP_DB = 100.0
TRAJECTORY_COLUMNS = ["seed", "talker", "direction", "noise_kind", "variant", "iteration", "sdr_improvement_db"]
SCENE_KEYS = ["seed", "talker", "direction", "noise_kind"]


def _as_signal(x, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise InputError(f"{what} must be a single-channel signal, got shape {x.shape}", stage="metrics")
    return x


def sdr(estimate, reference):
    """Scale-projected SDR in dB, clamped to +/-100 dB."""
    estimate = _as_signal(estimate, "estimate")
    reference = _as_signal(reference, "reference")
    if estimate.shape != reference.shape:
        raise InputError(
            f"length mismatch: estimate {estimate.size} vs reference {reference.size} samples", stage="metrics"
        )

    ref_energy = float(np.dot(reference, reference))
    if ref_energy <= 0.0:
        raise InputError("reference signal has zero energy", stage="metrics")

    target = (np.dot(estimate, reference) / ref_energy) * reference
    target_energy = float(np.dot(target, target))
    error_energy = float(np.sum((target - estimate) ** 2))

    if error_energy <= 0.0:
        return SDR_CAP_DB
    if target_energy <= 0.0:
        return -SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(target_energy / error_energy), -SDR_CAP_DB, SDR_CAP_DB))


@dataclass
class MetricReport:
    """SDR scores of one extraction run on the reference channel."""

    method: str
    input_sdr_db: float
    sdr_db: float
    sdr_improvement_db: float
    per_iteration: List[Tuple[int, float]] = field(default_factory=list)
    scene: Dict[str, object] = field(default_factory=dict)

    @property
    def has_trajectory(self):
        return len(self.per_iteration) > 0

    @property
    def peak_improvement_db(self):
        if not self.per_iteration:
            return self.sdr_improvement_db
        return max(score for _, score in self.per_iteration)

    @property
    def final_improvement_db(self):
        return self.sdr_improvement_db

    def to_rows(self):
        base = {key: self.scene.get(key) for key in SCENE_KEYS}
        base["variant"] = self.method
        if not self.per_iteration:
            return [dict(base, iteration=np.nan, sdr_improvement_db=self.sdr_improvement_db)]
        return [dict(base, iteration=it, sdr_improvement_db=score) for it, score in self.per_iteration]


def evaluate_estimate(estimate, reference, mixture, method="estimate", scene=None) -> MetricReport:
    """Single-score report (no trajectory), used for the ILRMA-only baseline."""
    input_sdr = sdr(mixture, reference)
    output_sdr = sdr(estimate, reference)
    return MetricReport(
        method=method,
        input_sdr_db=input_sdr,
        sdr_db=output_sdr,
        sdr_improvement_db=output_sdr - input_sdr,
        scene=dict(scene or {}),
    )


def evaluate_run(trajectory: Iterable[Tuple[int, np.ndarray]], reference, mixture,
                 method="rcscme", scene=None) -> MetricReport:
    """
    Report from time-domain reference-channel estimates, one per EM iteration
    (iteration 0 is the initialization). The last entry is the final score.

    The trajectory is consumed lazily, so a generator of per-iteration Wiener
    extractions is scored without keeping the estimates around.
    """
    reference = _as_signal(reference, "reference")
    input_sdr = sdr(mixture, reference)
    per_iteration = []
    output_sdr = None
    for iteration, estimate in trajectory:
        output_sdr = sdr(estimate, reference)
        per_iteration.append((int(iteration), output_sdr - input_sdr))
        logger.debug(f"{method} iteration {iteration}: SDR improvement {per_iteration[-1][1]:.2f} dB")

    if not per_iteration:
        raise InputError("extraction trajectory is empty", stage="metrics")

    return MetricReport(
        method=method,
        input_sdr_db=input_sdr,
        sdr_db=output_sdr,
        sdr_improvement_db=per_iteration[-1][1],
        per_iteration=per_iteration,
        scene=dict(scene or {}),
    )


class ReportTables:
    @staticmethod
    def trajectory_dataframe(reports: Sequence[MetricReport]):
        """Long-format per-iteration table; single-score methods get one row with an empty iteration."""
        rows = [row for report in reports for row in report.to_rows()]
        return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)

    @staticmethod
    def reports_from_dataframe(df):
        """Rebuild reports from a trajectory table (one report per scene and variant)."""
        missing = [col for col in TRAJECTORY_COLUMNS if col not in df.columns]
        if missing:
            raise InputError(f"trajectory table lacks columns {missing}", stage="metrics")

        reports = []
        for keys, group in df.groupby(SCENE_KEYS + ["variant"], sort=False, dropna=False):
            *scene_values, variant = keys
            scene = dict(zip(SCENE_KEYS, scene_values))
            scored = group.dropna(subset=["iteration"]).sort_values("iteration")
            if scored.empty:
                final = float(group["sdr_improvement_db"].iloc[-1])
                per_iteration = []
            else:
                per_iteration = list(zip(scored["iteration"].astype(int), scored["sdr_improvement_db"].astype(float)))
                final = per_iteration[-1][1]
            reports.append(
                MetricReport(
                    method=variant,
                    input_sdr_db=np.nan,
                    sdr_db=np.nan,
                    sdr_improvement_db=final,
                    per_iteration=per_iteration,
                    scene=scene,
                )
            )
        return reports

    @staticmethod
    def summarize_reports(reports: Sequence[MetricReport]):
        """Mean peak and final SDR improvement per method in the "peak / final" format."""
        if not reports:
            logger.error("No reports to summarize")
            return pd.DataFrame(columns=["method", "runs", "peak_db", "final_db", "score"])

        rows = []
        methods = list(dict.fromkeys(report.method for report in reports))
        for method in methods:
            selected = [r for r in reports if r.method == method]
            with_trajectory = all(r.has_trajectory for r in selected)
            peak = float(np.mean([r.peak_improvement_db for r in selected]))
            final = float(np.mean([r.final_improvement_db for r in selected]))
            rows.append(
                {
                    "method": method,
                    "runs": len(selected),
                    "peak_db": round(peak, 2),
                    "final_db": round(final, 2) if with_trajectory else np.nan,
                    "score": f"{peak:.1f} / {final:.1f}" if with_trajectory else f"{peak:.1f} / -",
                }
            )
        return pd.DataFrame(rows)

    @staticmethod
    def mean_curves(reports: Sequence[MetricReport]):
        """Per-method mean SDR improvement for each iteration (methods with a trajectory only)."""
        df = ReportTables.trajectory_dataframe([r for r in reports if r.has_trajectory])
        if df.empty:
            return df
        return df.groupby(["variant", "iteration"])["sdr_improvement_db"].mean().unstack(0)

    @staticmethod
    def save_table(df, filename, index=False):
        df.to_csv(filename, index=index)
        logger.info(f"Table saved to {filename}")


def score_pairs(pairs, channel=0, with_mean=True):
    """
    SDR rows for (name, estimate, reference) signal triples plus a trailing mean row.
    """
    rows = []
    for name, estimate, reference in pairs:
        rows.append({"name": name, "sdr_db": sdr(pick_channel(estimate, channel), pick_channel(reference, channel))})
    if not rows:
        raise InputError("nothing to evaluate", stage="metrics")
    df = pd.DataFrame(rows)
    if not with_mean:
        return df
    mean_row = pd.DataFrame([{"name": "mean", "sdr_db": df["sdr_db"].mean()}])
    return pd.concat([df, mean_row], ignore_index=True)


def pick_channel(signal, channel):
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        return signal
    if signal.shape[1] == 1:
        return signal[:, 0]
    if not 0 <= channel < signal.shape[1]:
        raise InputError(f"channel {channel} out of range for {signal.shape[1]}-channel signal", stage="metrics")
    return signal[:, channel]


