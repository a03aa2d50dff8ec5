import configparser
import os
from dataclasses import replace

from dotenv import load_dotenv

from bse_benchmark import BenchConfig
from bse_errors import BseError, ConfigError
from bse_harness import SceneConfig
from bse_pipeline import PipelineConfig
from bse_rank1 import Rank1Model
from bse_rcscme import PriorConfig

load_dotenv()


class Config:
    # Logging settings
    LOG_LEVEL = os.environ.get("LOG_LEVEL", "INFO")

    # Worker threads for batch commands, parsed by worker_threads()
    THREADS = os.environ.get("BSE_THREADS", "1")

    # Default config file, used when --config is not given
    CONFIG_FILE = os.environ.get("BSE_CONFIG")


def worker_threads():
    raw = str(Config.THREADS).strip()
    try:
        threads = int(raw)
    except ValueError as e:
        raise ConfigError(f"BSE_THREADS = '{raw}' is not an integer", stage="config") from e
    if threads < 1:
        raise ConfigError(f"BSE_THREADS must be at least 1, got {threads}", stage="config")
    return threads


def read_config_file(path):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    path = path or Config.CONFIG_FILE
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}", stage="config")
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"malformed config file {path}: {str(e)}", stage="config") from e
    return parser


def _get(parser, section, key, cast, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    try:
        return cast(raw)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key} = '{raw}' is not a valid {cast.__name__}", stage="config") from e


def _boolean(raw):
    value = raw.lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


_boolean.__name__ = "boolean"


def _int_list(raw):
    """Comma list of integers; 'a..b' expands to the inclusive range."""
    values = []
    for part in filter(None, (p.strip() for p in raw.split(","))):
        if ".." in part:
            start, stop = part.split("..", 1)
            values.extend(range(int(start), int(stop) + 1))
        else:
            values.append(int(part))
    return tuple(values)


_int_list.__name__ = "integer list"


def _float_list(raw):
    return tuple(float(p) for p in raw.split(",") if p.strip())


_float_list.__name__ = "number list"


def _str_list(raw):
    return tuple(p.strip() for p in raw.split(",") if p.strip())


_str_list.__name__ = "name list"


def _build(factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except BseError as e:
        raise ConfigError(e.args[0], stage="config") from e


def pipeline_config_from(parser, overrides=None) -> PipelineConfig:
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    window_ms = _get(parser, "stft", "window_ms", float, 64.0)
    hop_ms = _get(parser, "stft", "hop_ms", float, window_ms / 2.0)
    if abs(hop_ms - window_ms / 2.0) > 1e-9:
        raise ConfigError(f"hop_ms must be half of window_ms ({window_ms / 2.0}), got {hop_ms}", stage="config")

    rank1 = _build(
        Rank1Model,
        n_bases=_get(parser, "ilrma", "n_bases", int, 10),
        n_iterations=_get(parser, "ilrma", "n_iterations", int, 50),
        seed=overrides.get("seed", _get(parser, "ilrma", "seed", int, 0)),
    )

    variant = overrides.get("variant", _get(parser, "prior", "variant", str, "proposed"))
    prior = _build(
        PriorConfig,
        variant=variant,
        alpha=overrides.get("alpha", _get(parser, "prior", "alpha", float, None)),
        beta=overrides.get("beta", _get(parser, "prior", "beta", float, 1e-16)),
        n_iterations=overrides.get("iterations", _get(parser, "prior", "n_iterations", int, 200)),
    )

    config = PipelineConfig(
        window_ms=window_ms,
        window_kind=_get(parser, "stft", "window", str, "hamming"),
        sample_rate_hz=_get(parser, "stft", "sample_rate_hz", int, 16000),
        rank1=rank1,
        prior=prior,
        full_image=overrides.get("full_image", _get(parser, "output", "full_image", _boolean, False)),
        reference_channel=_get(parser, "output", "reference_channel", int, 0),
    )
    # Validate the frame layout up front
    _build(config.frame_config)
    return config


def scene_config_from(parser, overrides=None) -> SceneConfig:
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    return _build(
        SceneConfig,
        n_mics=_get(parser, "scene", "n_mics", int, 3),
        n_noise_directions=_get(parser, "scene", "n_noise_directions", int, 19),
        target_direction_deg=_get(parser, "scene", "target_direction_deg", float, 0.0),
        snr_db=_get(parser, "scene", "snr_db", float, 0.0),
        seed=overrides.get("seed", _get(parser, "scene", "seed", int, 0)),
        talker=overrides.get("talker", _get(parser, "scene", "talker", int, 0)),
        duration_s=_get(parser, "scene", "duration_s", float, 4.0),
        sample_rate_hz=_get(parser, "scene", "sample_rate_hz", int, 16000),
        noise_kind=_get(parser, "scene", "noise_kind", str, "gaussian"),
        array_radius_m=_get(parser, "scene", "array_radius_m", float, 0.05),
        ir_taps=_get(parser, "scene", "ir_taps", int, 64),
    )


def bench_config_from(parser, overrides=None) -> BenchConfig:
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    pipeline = pipeline_config_from(parser, overrides)
    variants = _get(parser, "bench", "variants", _str_list, ("conventional", "proposed"))
    if overrides.get("variant"):
        variants = (overrides["variant"],)

    config = BenchConfig(
        seeds=_get(parser, "bench", "seeds", _int_list, tuple(range(10))),
        talkers=_get(parser, "bench", "talkers", _int_list, (0,)),
        target_directions_deg=_get(parser, "bench", "target_directions_deg", _float_list, (0.0, 90.0, 180.0, 270.0)),
        noise_kinds=_get(parser, "bench", "noise_kinds", _str_list, ("gaussian",)),
        variants=variants,
        n_em_iterations=overrides.get("iterations", _get(parser, "bench", "n_em_iterations", int, 200)),
        alpha=pipeline.prior.alpha if "alpha" in overrides or parser.has_option("prior", "alpha") else None,
        beta=pipeline.prior.beta,
        scene=scene_config_from(parser),
        pipeline=pipeline,
        threads=worker_threads(),
    )
    if not all((config.seeds, config.talkers, config.target_directions_deg, config.noise_kinds, config.variants)):
        raise ConfigError("bench grid axes must not be empty", stage="config")
    # Every grid point must form a valid scene and prior
    for kind in config.noise_kinds:
        _build(replace, config.scene, noise_kind=kind)
    for talker in config.talkers:
        _build(replace, config.scene, talker=talker)
    for variant in config.variants:
        _build(PriorConfig, variant=variant, alpha=config.alpha, beta=config.beta, n_iterations=config.n_em_iterations)
    return config


def load_pipeline_config(path=None, overrides=None) -> PipelineConfig:
    return pipeline_config_from(read_config_file(path), overrides)


def load_scene_config(path=None, overrides=None) -> SceneConfig:
    return scene_config_from(read_config_file(path), overrides)


def load_bench_config(path=None, overrides=None) -> BenchConfig:
    return bench_config_from(read_config_file(path), overrides)
