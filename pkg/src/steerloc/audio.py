"""Multichannel WAV input and output."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


class WavError(ValueError):
    pass


def _open(path, expected_rate, expected_channels):
    try:
        rate, data = wavfile.read(str(path), mmap=True)
    except FileNotFoundError:
        raise
    except Exception as exc:          # scipy raises assorted types on corrupt headers
        raise WavError(f"{path}: cannot parse WAV file: {exc}") from exc
    if data.dtype not in (np.int16, np.float32):
        raise WavError(f"{path}: unsupported sample format {data.dtype} "
                       "(need 16-bit PCM or 32-bit float)")
    if data.ndim == 1:
        data = data[:, None]
    if expected_rate is not None and rate != expected_rate:
        raise WavError(f"{path}: sample rate {rate} Hz does not match the configured "
                       f"{expected_rate:g} Hz; resampling is not supported")
    if expected_channels is not None and data.shape[1] != expected_channels:
        raise WavError(f"{path}: {data.shape[1]} channel(s), array has {expected_channels}")
    return int(rate), data


def _convert(block: np.ndarray) -> np.ndarray:
    out = np.asarray(block, dtype=np.float64)
    if block.dtype == np.int16:
        out = out / 32768.0
    return out.T


def read_wav(path, expected_rate: float | None = None,
             expected_channels: int | None = None) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM or 32-bit float WAV file as (channels, samples) in [-1, 1).

    No resampling is ever done: a rate differing from ``expected_rate`` is an error.
    """
    rate, data = _open(path, expected_rate, expected_channels)
    return _convert(data), rate


def wav_chunks(path, chunk_size: int = 48000, expected_rate: float | None = None,
               expected_channels: int | None = None):
    """Open a WAV file and return (rate, iterator of (channels, n) float64 chunks).

    The file is memory-mapped, so only one chunk is resident at a time.
    """
    rate, data = _open(path, expected_rate, expected_channels)

    def chunks():
        for start in range(0, data.shape[0], chunk_size):
            yield _convert(data[start:start + chunk_size])

    return rate, chunks()


def write_wav(path, channels: np.ndarray, rate: float, fmt: str = "float32") -> None:
    """Write (channels, samples) data. ``fmt`` is ``float32`` or ``int16``."""
    x = np.asarray(channels, dtype=np.float64).T
    if fmt == "float32":
        out = x.astype(np.float32)
    elif fmt == "int16":
        out = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(str(Path(path)), int(round(rate)), out)
