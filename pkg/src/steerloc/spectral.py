"""Framing, spectra, noise tracking and weighted-whitened cross-correlations."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

BLOCK_FRAMES = {"short": 4, "medium": 20}

NOISE_RATE = 0.05
NOISE_CLAMP = 1.05
NOISE_FLOOR = 1e-12
GAMMA = 0.1
WHITEN_REL_EPS = 1e-12
WHITEN_ABS_EPS = 1e-30


@dataclass(frozen=True)
class FramePlan:
    frame_length: int = 1024
    hop: int = 512
    sample_rate: float = 48000.0
    window: str = "hann"

    def __post_init__(self):
        L = self.frame_length
        if L < 2 or L & (L - 1):
            raise ValueError(f"frame length must be a power of two, got {L}")
        if self.hop * 2 != L:
            raise ValueError(f"hop must be half the frame length, got {self.hop}")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"window must be 'hann' or 'rect', got {self.window!r}")

    def window_array(self) -> np.ndarray:
        L = self.frame_length
        if self.window == "rect":
            return np.ones(L)
        # periodic Hann: sums to a constant at 50% overlap
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(L) / L)

    def frame_count(self, length: int) -> int:
        if length < self.frame_length:
            return 0
        return (length - self.frame_length) // self.hop + 1

    def block_end_time(self, first_frame: int, frame_count: int) -> float:
        """Time (s) of the last sample covered by a run of frames."""
        last = first_frame + frame_count - 1
        return (last * self.hop + self.frame_length) / self.sample_rate

    def block_center_time(self, first_frame: int, frame_count: int) -> float:
        start = first_frame * self.hop
        end = (first_frame + frame_count - 1) * self.hop + self.frame_length
        return 0.5 * (start + end) / self.sample_rate


def frame_stream(samples, plan: FramePlan) -> np.ndarray:
    """Cut equal-length channels into windowed frames of shape (T, M, L).

    Frame ``t`` covers samples ``[t * hop, t * hop + L)``.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        x = samples.astype(float, copy=False)
    else:
        lengths = {len(ch) for ch in samples}
        if len(lengths) != 1:
            raise ValueError(f"channel lengths differ: {sorted(lengths)}")
        x = np.array([np.asarray(ch, dtype=float) for ch in samples])
    L, hop = plan.frame_length, plan.hop
    if x.shape[1] < L:
        raise ValueError(f"need at least {L} samples per channel, got {x.shape[1]}")
    T = plan.frame_count(x.shape[1])
    starts = np.arange(T) * hop
    idx = starts[:, None] + np.arange(L)[None, :]
    frames = x[:, idx].transpose(1, 0, 2)
    return frames * plan.window_array()


@dataclass(frozen=True)
class SpectralFrame:
    X: np.ndarray       # (M, L) complex
    index: int
    Y: np.ndarray       # (L,) mean power across microphones

    @property
    def L(self) -> int:
        return self.X.shape[1]


def spectrum(frame: np.ndarray, index: int = 0) -> SpectralFrame:
    # C order fixes the summation order of the channel mean, whatever the caller's layout
    X = np.fft.fft(np.ascontiguousarray(frame, dtype=float), axis=-1)
    Y = np.mean(X.real ** 2 + X.imag ** 2, axis=0)
    return SpectralFrame(X, index, Y)


@dataclass(frozen=True)
class NoiseEstimate:
    power: np.ndarray | None = None
    count: int = 0

    @property
    def initialized(self) -> bool:
        return self.power is not None


def update_noise_estimate(state: NoiseEstimate, Y, rate: float = NOISE_RATE,
                          clamp: float = NOISE_CLAMP,
                          floor: float = NOISE_FLOOR) -> NoiseEstimate:
    """Exponential average of past power spectra with an upward step limit.

    ``Y_N <- (1 - rate) * Y_N + rate * min(Y, clamp * Y_N)``. The first call
    copies ``Y``.
    """
    Y = np.asarray(Y, dtype=float)
    if state.power is None:
        return NoiseEstimate(np.maximum(Y, floor), 1)
    prev = state.power
    new = (1.0 - rate) * prev + rate * np.minimum(Y, prev * clamp)
    return NoiseEstimate(np.maximum(new, floor), state.count + 1)


def compute_weights(Y, Y_N, gamma: float = GAMMA) -> np.ndarray:
    """Noise-masking weight: 1 where Y <= Y_N, else (Y / Y_N) ** gamma."""
    Y = np.asarray(Y, dtype=float)
    Y_N = np.asarray(Y_N, dtype=float)
    ratio = Y / Y_N
    return np.where(Y <= Y_N, 1.0, np.power(np.maximum(ratio, 1.0), gamma))


def pair_indices(M: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = list(combinations(range(M), 2))
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def cross_spectrum(sf: SpectralFrame, weights: np.ndarray | None = None,
                   whiten: bool = True) -> np.ndarray:
    """Per-pair half-spectrum ``w^2 conj(X_i) X_j / (|X_i||X_j| + eps)``, shape (P, L/2+1).

    The conjugate sits on the first microphone so that ``R_ij`` peaks at the
    far-field lag ``(Fs/c)(x_i - x_j).u`` for a source in direction ``u``.
    """
    L = sf.L
    Xh = sf.X[:, : L // 2 + 1]
    i_idx, j_idx = pair_indices(Xh.shape[0])
    G = np.conj(Xh[i_idx]) * Xh[j_idx]
    if whiten:
        mag = np.abs(Xh)
        eps = max(WHITEN_REL_EPS * float(np.max(mag) ** 2), WHITEN_ABS_EPS)
        G = G / (mag[i_idx] * mag[j_idx] + eps)
    if weights is not None:
        G = G * (np.asarray(weights)[: L // 2 + 1] ** 2)
    return G


@dataclass(frozen=True)
class CorrelationSet:
    values: np.ndarray          # (P, L) real, circular lags 0..L-1
    pairs: tuple
    kind: str | None
    first_frame: int
    frame_count: int

    @property
    def L(self) -> int:
        return self.values.shape[1]

    def lag_value(self, p: int, tau: int) -> float:
        return float(self.values[p, tau % self.L])

    def to_csv(self) -> str:
        head = "lag," + ",".join(f"R_{i}_{j}" for i, j in self.pairs)
        L = self.L
        lags = np.r_[np.arange(L // 2), np.arange(-L // 2, 0)]
        rows = [head]
        for tau in lags:
            col = self.values[:, tau % L]
            rows.append(f"{tau}," + ",".join(f"{v:.9g}" for v in col))
        return "\n".join(rows) + "\n"


def correlations_from_spectra(G_mean: np.ndarray, L: int, M: int, kind: str | None,
                              first_frame: int, frame_count: int) -> CorrelationSet:
    R = np.fft.irfft(G_mean, n=L, axis=-1)
    R.setflags(write=False)
    return CorrelationSet(R, tuple(combinations(range(M), 2)), kind, first_frame, frame_count)


def accumulate_block(frames: Sequence[SpectralFrame], noise: NoiseEstimate,
                     gamma: float = GAMMA, kind: str | None = None, *,
                     whiten: bool = True, weighting: bool = True,
                     noise_rate: float = NOISE_RATE,
                     noise_clamp: float = NOISE_CLAMP) -> tuple[CorrelationSet, NoiseEstimate]:
    """Average weighted cross-power spectra over a block and invert to correlations.

    Weights for each frame come from the noise estimate as it stood before
    that frame; the estimate is then advanced. Returns the correlations and
    the advanced noise estimate.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("empty block")
    if kind is not None and len(frames) != BLOCK_FRAMES[kind]:
        raise ValueError(f"{kind} blocks need {BLOCK_FRAMES[kind]} frames, got {len(frames)}")
    L = frames[0].L
    M = frames[0].X.shape[0]
    acc = None
    for sf in frames:
        if not noise.initialized:
            noise = update_noise_estimate(noise, sf.Y, noise_rate, noise_clamp)
        w = compute_weights(sf.Y, noise.power, gamma) if weighting else None
        G = cross_spectrum(sf, w, whiten)
        acc = G if acc is None else acc + G
        noise = update_noise_estimate(noise, sf.Y, noise_rate, noise_clamp)
    corrs = correlations_from_spectra(acc / len(frames), L, M, kind,
                                      frames[0].index, len(frames))
    return corrs, noise
