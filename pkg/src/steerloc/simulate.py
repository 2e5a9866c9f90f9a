"""Free-field multichannel scene synthesis with known source directions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter
from scipy.special import i0

from .geometry import MicrophoneArray, azel_to_direction, direction_to_azel
from .spectral import BLOCK_FRAMES, FramePlan

SINC_TAPS = 31
_HALF = SINC_TAPS // 2
_KAISER_BETA = 8.0
SIGNAL_KINDS = ("white", "speech", "tone", "file")


def _kernel(offsets: np.ndarray) -> np.ndarray:
    """Kaiser-windowed sinc evaluated at real-valued tap offsets."""
    span = _HALF + 1.0
    r = np.clip(offsets / span, -1.0, 1.0)
    w = i0(_KAISER_BETA * np.sqrt(1.0 - r * r)) / i0(_KAISER_BETA)
    return np.sinc(offsets) * w


def fractional_delay(signal, delay) -> np.ndarray:
    """Delay ``signal`` by ``delay`` samples: ``y[n] = x[n - delay]``.

    ``delay`` is a scalar or one value per output sample (time-varying).
    Samples with an integral delay are copied exactly; the rest go through a
    31-tap Kaiser-windowed sinc normalized to unit DC gain. Samples shifted
    in from outside the input are zero.
    """
    x = np.asarray(signal, dtype=float)
    n = x.shape[0]
    d = np.asarray(delay, dtype=float)
    if d.ndim == 0:
        if not abs(float(d)) < n:
            raise ValueError(f"delay {float(d)} out of range for {n} samples")
        if float(d) == np.floor(float(d)):
            k = int(d)
            y = np.zeros_like(x)
            if k >= 0:
                y[k:] = x[: n - k]
            else:
                y[: n + k] = x[-k:]
            return y
        return _constant_fractional_delay(x, float(d))
    elif d.shape != (n,):
        raise ValueError("time-varying delay needs one value per sample")
    elif np.any(~np.isfinite(d)) or np.any(np.abs(d) >= n):
        raise ValueError("delay out of range")

    t = np.arange(n) - d
    i0 = np.floor(t).astype(np.int64)
    mu = t - i0
    exact = mu == 0.0
    y = np.zeros(n)
    norm = np.zeros(n)
    for j in range(-_HALF, _HALF + 1):
        h = _kernel(mu - j)
        m = i0 + j
        ok = (m >= 0) & (m < n)
        y[ok] += h[ok] * x[m[ok]]
        norm += h
    y /= norm
    ok = exact & (i0 >= 0) & (i0 < n)
    y[exact] = 0.0
    y[ok] = x[i0[ok]]
    return y


def _constant_fractional_delay(x: np.ndarray, d: float) -> np.ndarray:
    n = x.shape[0]
    shift = int(np.ceil(d))          # y[n] = sum_j h_j x[n - shift + j]
    mu = shift - d                   # in (0, 1)
    taps = np.arange(-_HALF, _HALF + 1)
    h = _kernel(mu - taps)
    h /= h.sum()
    y = np.zeros(n)
    for j, hj in zip(taps, h):
        k = shift - j                # y[m] += hj * x[m - k]
        if k >= n or -k >= n:
            continue
        if k >= 0:
            y[k:] += hj * x[: n - k]
        else:
            y[: n + k] += hj * x[-k:]
    return y


@dataclass(frozen=True)
class Keyframe:
    time: float
    direction: np.ndarray


def _slerp(a: np.ndarray, b: np.ndarray, f: float) -> np.ndarray:
    dot = float(np.clip(a @ b, -1.0, 1.0))
    omega = np.arccos(dot)
    if omega < 1e-12:
        return a.copy()
    s = np.sin(omega)
    v = (np.sin((1.0 - f) * omega) * a + np.sin(f * omega) * b) / s
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class SceneSource:
    kind: str
    onset: float
    offset: float
    keyframes: tuple
    gain: float = 1.0
    frequency: float | None = None
    path: str | None = None
    id: int = 0

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if not self.onset < self.offset:
            raise ValueError("source onset must precede offset")
        if not self.keyframes:
            raise ValueError("source needs at least one keyframe")
        for kf in self.keyframes:
            if abs(np.linalg.norm(kf.direction) - 1.0) > 1e-6:
                raise ValueError("trajectory directions must be unit vectors")
        times = [kf.time for kf in self.keyframes]
        if times != sorted(times):
            raise ValueError("keyframes must be in time order")
        if self.kind == "tone" and not (self.frequency and self.frequency > 0):
            raise ValueError("tone sources need a positive frequency")
        if self.kind == "file" and not self.path:
            raise ValueError("file sources need a path")

    @classmethod
    def fixed(cls, kind: str, direction, onset: float, offset: float, **kw) -> SceneSource:
        u = np.asarray(direction, dtype=float)
        return cls(kind, onset, offset, (Keyframe(0.0, u),), **kw)

    def direction_at(self, t: float) -> np.ndarray:
        """Great-circle interpolation between keyframes, held constant outside them."""
        kfs = self.keyframes
        if t <= kfs[0].time:
            return np.array(kfs[0].direction, dtype=float)
        for a, b in zip(kfs, kfs[1:]):
            if t <= b.time:
                span = b.time - a.time
                f = 0.0 if span <= 0 else (t - a.time) / span
                return _slerp(np.asarray(a.direction, float), np.asarray(b.direction, float), f)
        return np.array(kfs[-1].direction, dtype=float)

    def directions_at(self, times: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`direction_at` over an array of times, shape (T, 3)."""
        times = np.asarray(times, dtype=float)
        kfs = self.keyframes
        out = np.tile(np.asarray(kfs[0].direction, float), (times.size, 1))
        for a, b in zip(kfs, kfs[1:]):
            ua, ub = np.asarray(a.direction, float), np.asarray(b.direction, float)
            sel = (times > a.time) & (times <= b.time)
            span = b.time - a.time
            omega = np.arccos(np.clip(ua @ ub, -1.0, 1.0))
            if not sel.any():
                continue
            if span <= 0 or omega < 1e-12:
                out[sel] = ub if span <= 0 else ua
                continue
            f = (times[sel] - a.time) / span
            v = (np.sin((1.0 - f) * omega)[:, None] * ua + np.sin(f * omega)[:, None] * ub)
            out[sel] = v / np.linalg.norm(v, axis=1, keepdims=True)
        out[times > kfs[-1].time] = np.asarray(kfs[-1].direction, float)
        return out

    @property
    def moving(self) -> bool:
        dirs = [np.asarray(k.direction) for k in self.keyframes]
        return any(not np.array_equal(dirs[0], d) for d in dirs[1:])


@dataclass(frozen=True)
class Scene:
    sources: tuple
    duration: float
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("scene duration must be positive")
        if self.noise_level < 0:
            raise ValueError("noise level must be non-negative")


@dataclass(frozen=True)
class TruthRecord:
    time_s: float
    source_id: int
    direction: np.ndarray = field(repr=False)

    @property
    def azimuth_deg(self) -> float:
        return float(direction_to_azel(self.direction)[0])

    @property
    def elevation_deg(self) -> float:
        return float(direction_to_azel(self.direction)[1])

    def to_json(self) -> str:
        return json.dumps({"time_s": round(self.time_s, 9), "source_id": self.source_id,
                           "azimuth_deg": round(self.azimuth_deg, 6),
                           "elevation_deg": round(self.elevation_deg, 6)})

    @classmethod
    def from_json(cls, line: str) -> TruthRecord:
        d = json.loads(line)
        u = azel_to_direction(d["azimuth_deg"], d["elevation_deg"])
        return cls(float(d["time_s"]), int(d["source_id"]), u)


def _source_signal(src: SceneSource, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS (before gain) waveform of ``n`` samples for one source."""
    if src.kind == "white":
        return rng.standard_normal(n)
    if src.kind == "speech":
        # 1/f amplitude tilt above a few hundred Hz, 4 Hz syllabic envelope with gaps
        x = lfilter([1.0], [1.0, -0.95], rng.standard_normal(n))
        t = np.arange(n) / fs
        env = 0.5 * (1.0 - np.cos(2.0 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi)))
        x = x * env
        rms = np.sqrt(np.mean(x * x))
        return x / rms if rms > 0 else x
    if src.kind == "tone":
        t = np.arange(n) / fs
        return np.sqrt(2.0) * np.sin(2.0 * np.pi * src.frequency * t + rng.uniform(0, 2 * np.pi))
    from .audio import read_wav
    chans, _ = read_wav(src.path, expected_rate=fs)
    mono = np.asarray(chans[0], dtype=float)
    out = np.zeros(n)
    out[: min(n, mono.size)] = mono[:n]
    return out


def short_block_centers(n_samples: int, plan: FramePlan) -> list[float]:
    k = BLOCK_FRAMES["short"]
    n_blocks = plan.frame_count(n_samples) // k
    return [plan.block_center_time(b * k, k) for b in range(n_blocks)]


def synthesize(scene: Scene, array: MicrophoneArray,
               plan: FramePlan | None = None) -> tuple[np.ndarray, list[TruthRecord]]:
    """Render a scene at the array; returns (M, T) samples and the ground-truth log.

    A source in direction ``u`` reaches microphone ``i`` ``(Fs/c)(x_i - c0).u``
    samples earlier than the array centroid ``c0``. Ground truth is logged at
    the center of every short-term block while each source is active.
    """
    fs = array.sample_rate
    plan = plan or FramePlan(sample_rate=fs)
    T = int(round(scene.duration * fs))
    M = array.M
    out = np.zeros((M, T))
    rel = array.positions - array.centroid
    scale = fs / array.speed_of_sound
    margin = int(np.ceil(scale * np.linalg.norm(rel, axis=1).max())) + _HALF + 2
    for src in scene.sources:
        if src.kind == "tone" and src.frequency >= fs / 2:
            raise ValueError(f"tone at {src.frequency} Hz is above Nyquist")
        start = max(int(round(src.onset * fs)), 0)
        stop = min(int(round(src.offset * fs)), T)
        if stop <= start:
            continue
        rng = np.random.default_rng([scene.seed, 1, src.id])
        sig = src.gain * _source_signal(src, stop - start, fs, rng)
        # the delayed copies are zero outside the active span plus this margin
        lo, hi = max(start - margin, 0), min(stop + margin, T)
        s = np.zeros(hi - lo)
        s[start - lo:stop - lo] = sig
        if src.moving:
            dirs = src.directions_at(np.arange(lo, hi) / fs)
            advance = scale * dirs @ rel.T                      # (n, M)
            for i in range(M):
                out[i, lo:hi] += fractional_delay(s, -advance[:, i])
        else:
            u = src.direction_at(0.0)
            for i in range(M):
                out[i, lo:hi] += fractional_delay(s, -scale * float(rel[i] @ u))
    if scene.noise_level > 0:
        noise_rng = np.random.default_rng([scene.seed, 0])
        out += scene.noise_level * noise_rng.standard_normal((M, T))
    truth = []
    for tc in short_block_centers(T, plan):
        for src in scene.sources:
            if src.onset <= tc < src.offset:
                truth.append(TruthRecord(tc, src.id, src.direction_at(tc)))
    return out, truth


def _direction_from(doc: dict) -> np.ndarray:
    if "direction" in doc:
        u = np.asarray(doc["direction"], dtype=float)
        if u.shape != (3,) or abs(np.linalg.norm(u) - 1.0) > 1e-6:
            raise ValueError("'direction' must be a unit 3-vector")
        return u
    return azel_to_direction(float(doc["azimuth_deg"]), float(doc.get("elevation_deg", 0.0)))


def load_scene(text: str, seed: int | None = None) -> Scene:
    """Parse a JSON scene description.

    Top-level keys: ``duration`` (s), ``noise_level`` (per-channel white noise
    standard deviation), ``seed`` and ``sources``. Each source has ``kind``
    (white, speech, tone, file), ``onset``, ``offset``, ``gain``, optional
    ``id``, ``frequency`` or ``path``, and either a fixed direction
    (``direction`` or ``azimuth_deg``/``elevation_deg``) or a ``trajectory``
    list of keyframes carrying ``time`` plus a direction.
    """
    doc = json.loads(text)
    sources = []
    for i, s in enumerate(doc.get("sources", [])):
        if "trajectory" in s:
            kfs = tuple(Keyframe(float(k["time"]), _direction_from(k)) for k in s["trajectory"])
        else:
            kfs = (Keyframe(0.0, _direction_from(s)),)
        sources.append(SceneSource(
            kind=s.get("kind", "white"), onset=float(s.get("onset", 0.0)),
            offset=float(s.get("offset", doc["duration"])), keyframes=kfs,
            gain=float(s.get("gain", 1.0)), frequency=s.get("frequency"),
            path=s.get("path"), id=int(s.get("id", i))))
    return Scene(tuple(sources), float(doc["duration"]), float(doc.get("noise_level", 0.0)),
                 int(doc.get("seed", 0) if seed is None else seed))


def write_truth(path: Path, truth: list[TruthRecord]) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in truth))


def read_truth(path: Path) -> list[TruthRecord]:
    return [TruthRecord.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]
