import argparse
import json
import logging
import os
import sys

import pandas as pd

from bse_audio_io import list_wav_pairs, read_wav, write_wav
from bse_benchmark import ExtractionBenchmark, format_summary
from bse_errors import EXIT_OK, EXIT_UNEXPECTED, BseError, InputError
from bse_harness import make_mixture
from bse_metrics import ReportTables, evaluate_estimate, pick_channel, score_pairs
from bse_pipeline import ExtractionPipeline
from bse_rcscme import VARIANTS
from bse_scm import load_bundle, save_bundle
from config import Config, load_bench_config, load_pipeline_config, load_scene_config

logger = logging.getLogger(__name__)


def configure_logging(level=None):
    logging.basicConfig(
        level=getattr(logging, str(level or Config.LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
    )


def _overrides(args):
    return {
        "variant": getattr(args, "variant", None),
        "iterations": getattr(args, "iterations", None),
        "seed": getattr(args, "seed", None),
        "talker": getattr(args, "talker", None),
        "alpha": getattr(args, "alpha", None),
        "beta": getattr(args, "beta", None),
        "full_image": True if getattr(args, "full_image", False) else None,
    }


def _companion(path, suffix):
    stem, _ = os.path.splitext(path)
    return f"{stem}{suffix}"


def cmd_extract(args):
    """Extract the target from a multichannel WAV; writes the WAV, a JSON report and EM diagnostics."""
    config = load_pipeline_config(args.config, _overrides(args))
    samples, rate = read_wav(args.input)
    if samples.shape[1] < 2:
        raise InputError(f"{args.input} has {samples.shape[1]} channel(s); extraction needs at least 2", stage="io")

    result = ExtractionPipeline(config).run(samples, rate)
    write_wav(args.output, result.output, rate, subtype="FLOAT")

    report = result.report()
    report.update({"input": args.input, "output": args.output, "full_image": config.full_image})
    if args.dump_scm:
        save_bundle(result.preprocessed.bundle, args.dump_scm)
        report["noise_scm"] = args.dump_scm
    report_file = args.report or _companion(args.output, ".json")
    with open(report_file, "w") as f:
        json.dump(report, f, indent=2)
    logger.info(f"Run report saved to {report_file}")

    result.em.save_diagnostics(_companion(report_file, "_diagnostics.csv"))
    return EXIT_OK


def cmd_simulate(args):
    scene = load_scene_config(args.config, _overrides(args))
    mix = make_mixture(scene)
    os.makedirs(args.output, exist_ok=True)
    for name, samples in (
        ("mixture.wav", mix.mixture),
        ("target_ref.wav", mix.target_image),
        ("noise_ref.wav", mix.noise_image),
    ):
        write_wav(os.path.join(args.output, name), samples, mix.sample_rate_hz, subtype="FLOAT")
    return EXIT_OK


def _read_pair(estimate_path, reference_path):
    estimate, est_rate = read_wav(estimate_path)
    reference, ref_rate = read_wav(reference_path)
    if est_rate != ref_rate:
        raise InputError(
            f"sample rate mismatch: {estimate_path} at {est_rate} Hz, {reference_path} at {ref_rate} Hz",
            stage="metrics",
        )
    return estimate, reference, est_rate


def cmd_evaluate(args):
    """SDR of one estimate, a directory batch, or the variant summary of a bench trajectory CSV."""
    if args.trajectory:
        df = pd.read_csv(args.trajectory)
        summary = ReportTables.summarize_reports(ReportTables.reports_from_dataframe(df))
        print(format_summary(summary))
        if args.output:
            ReportTables.save_table(summary, args.output)
        return EXIT_OK

    if not args.estimate or not args.reference:
        raise InputError("evaluate needs an estimate and a reference (or --trajectory)", stage="metrics")

    if os.path.isdir(args.estimate) and os.path.isdir(args.reference):
        triples = []
        for name, estimate_path, reference_path in list_wav_pairs(args.estimate, args.reference):
            estimate, reference, _ = _read_pair(estimate_path, reference_path)
            triples.append((name, estimate, reference))
        df = score_pairs(triples, channel=args.channel)
    else:
        estimate, reference, rate = _read_pair(args.estimate, args.reference)
        df = score_pairs([(os.path.basename(args.estimate), estimate, reference)], channel=args.channel, with_mean=False)
        if args.mixture:
            mixture, mix_rate = read_wav(args.mixture)
            if mix_rate != rate:
                raise InputError(f"sample rate mismatch for mixture {args.mixture}", stage="metrics")
            report = evaluate_estimate(
                pick_channel(estimate, args.channel),
                pick_channel(reference, args.channel),
                pick_channel(mixture, args.channel),
            )
            df["input_sdr_db"] = report.input_sdr_db
            df["sdr_improvement_db"] = report.sdr_improvement_db

    print(df.to_string(index=False))
    if args.output:
        ReportTables.save_table(df, args.output)
    return EXIT_OK


def cmd_inspect_scm(args):
    """Per-bin summary of a noise SCM dump written by extract --dump-scm."""
    bundle = load_bundle(args.input)
    df = pd.DataFrame(
        {
            "bin": range(bundle.n_bins),
            "sigma_min_pos": bundle.sigma_min_pos,
            "min_eigenvalue": bundle.eigenvalues[:, 0],
            "max_eigenvalue": bundle.eigenvalues[:, -1],
        }
    )
    print(f"{bundle.n_bins} bins, {bundle.n_channels} channels")
    print(df.describe().loc[["min", "50%", "max"]].to_string())
    if args.output:
        ReportTables.save_table(df, args.output)
    return EXIT_OK


def cmd_bench(args):
    config = load_bench_config(args.config, _overrides(args))
    result = ExtractionBenchmark(config).run()
    print("\nSDR improvement [dB], peak / final:")
    print(format_summary(result.summary))
    result.save(args.output)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="bse", description="Blind speech extraction with rank-constrained SCM estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_prior_flags(p, seed=True):
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--iterations", type=int, help="EM iterations")
        if seed:
            p.add_argument("--seed", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)

    extract = sub.add_parser("extract", help="extract the target speech from a multichannel WAV")
    extract.add_argument("input")
    extract.add_argument("--output", required=True, help="output WAV")
    extract.add_argument("--config")
    extract.add_argument("--report", help="JSON report path (default: next to the output WAV)")
    extract.add_argument("--full-image", action="store_true", help="write every channel of the target image")
    extract.add_argument("--dump-scm", help="dump the rank-deficient noise SCM and its basis to this binary file")
    add_prior_flags(extract)
    extract.set_defaults(handler=cmd_extract)

    simulate = sub.add_parser("simulate", help="render a synthetic diffuse-noise scene")
    simulate.add_argument("--output", required=True, help="output directory")
    simulate.add_argument("--config")
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--talker", type=int, help="speech source index, independent of the seed")
    simulate.set_defaults(handler=cmd_simulate)

    evaluate = sub.add_parser("evaluate", help="score estimates against references")
    evaluate.add_argument("estimate", nargs="?")
    evaluate.add_argument("reference", nargs="?")
    evaluate.add_argument("--mixture", help="observed mixture for the SDR improvement")
    evaluate.add_argument("--trajectory", help="bench trajectory CSV to summarize")
    evaluate.add_argument("--channel", type=int, default=0)
    evaluate.add_argument("--output", help="metric CSV")
    evaluate.set_defaults(handler=cmd_evaluate)

    inspect_scm = sub.add_parser("inspect-scm", help="summarize a noise SCM dump")
    inspect_scm.add_argument("input")
    inspect_scm.add_argument("--output", help="per-bin CSV")
    inspect_scm.set_defaults(handler=cmd_inspect_scm)

    bench = sub.add_parser("bench", help="compare both variants and the ILRMA baseline over a scene grid")
    bench.add_argument("--output", default="bench_results", help="output directory")
    bench.add_argument("--config")
    add_prior_flags(bench, seed=False)
    bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging()

    try:
        return args.handler(args)
    except BseError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.command} failed unexpectedly: {str(e)}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
