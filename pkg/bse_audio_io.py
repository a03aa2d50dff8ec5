import logging
import os

import numpy as np
import soundfile as sf

from bse_errors import InputError

logger = logging.getLogger(__name__)

SUPPORTED_SUBTYPES = {"PCM_16", "FLOAT"}


def read_wav(path):
    """
    Read a RIFF WAV file as float64 samples shaped (samples, channels).

    16-bit integer files are scaled to [-1, 1); 32-bit float files are read as is.
    The sample rate comes from the file header.
    """
    if not os.path.isfile(path):
        raise InputError(f"WAV file not found: {path}", stage="io")

    try:
        samples, rate = sf.read(path, dtype="float64", always_2d=True)
    except RuntimeError as e:
        raise InputError(f"Unreadable WAV {path}: {str(e)}", stage="io") from e

    if samples.shape[0] == 0:
        raise InputError(f"WAV file {path} contains no samples", stage="io")

    logger.info(f"Read {path}: {samples.shape[0]} samples, {samples.shape[1]} ch @ {rate} Hz")
    return samples, int(rate)


def write_wav(path, samples, rate, subtype="FLOAT"):
    """Write (samples, channels) data; FLOAT avoids quantizing metric inputs."""
    if subtype not in SUPPORTED_SUBTYPES:
        raise InputError(f"Unsupported WAV subtype {subtype}", stage="io")

    samples = np.asarray(samples, dtype=np.float64)
    if subtype == "PCM_16":
        peak = np.max(np.abs(samples)) if samples.size else 0.0
        if peak > 1.0:
            logger.warning(f"Clipping {path}: peak {peak:.3f} exceeds 16-bit range")
        samples = np.clip(samples, -1.0, 1.0)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    sf.write(path, samples.astype(np.float32), int(rate), subtype=subtype, format="WAV")
    logger.info(f"Wrote {path} ({samples.shape[0]} samples, {subtype})")


def list_wav_pairs(estimate_dir, reference_dir):
    """
    Pair WAV files with the same name in two directories.

    Estimates without a matching reference are logged and skipped.
    """
    pairs = []
    for name in sorted(os.listdir(estimate_dir)):
        if not name.lower().endswith(".wav"):
            continue
        reference = os.path.join(reference_dir, name)
        if not os.path.isfile(reference):
            logger.warning(f"No reference for {name} in {reference_dir}, skipping")
            continue
        pairs.append((name, os.path.join(estimate_dir, name), reference))

    if not pairs:
        raise InputError(
            f"No matching WAV pairs between {estimate_dir} and {reference_dir}", stage="io"
        )
    return pairs
