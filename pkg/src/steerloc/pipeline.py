"""Streaming localization pipeline: frames to spectra to correlations to tracker events."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .geometry import (MAX_GRID_LEVEL, MicrophoneArray, build_grid, build_tdoa_table,
                       direction_to_azel, load_array_config, prism_array)
from .search import locate_sources, steered_energies
from .spectral import (FramePlan, NoiseEstimate, compute_weights, correlations_from_spectra,
                       cross_spectrum, spectrum, update_noise_estimate)
from .tracker import (EnergyCalibration, RegionBeliefState, TrackerParams, emit_active_sources,
                      ingest_detections)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    array: MicrophoneArray = field(default_factory=prism_array)
    grid_level: int = 4
    frame_length: int = 1024
    hop: int = 512
    window: str = "hann"
    short_frames: int = 4
    medium_frames: int = 20
    short_sources: int = 2
    medium_sources: int = 4
    gamma: float = 0.1
    noise_rate: float = 0.05
    noise_clamp: float = 1.05
    removal_radius: int = 0
    whiten: bool = True
    weighting: bool = True
    tracker: TrackerParams = field(default_factory=TrackerParams)

    def __post_init__(self):
        if not 0 <= self.grid_level <= MAX_GRID_LEVEL:
            raise ValueError(f"grid level must be in [0, {MAX_GRID_LEVEL}]")
        if self.short_frames < 1 or self.medium_frames % self.short_frames:
            raise ValueError("medium block size must be a multiple of the short block size")
        if self.short_sources < 1 or self.medium_sources < 1:
            raise ValueError("source counts must be >= 1")
        self.plan  # validates frame length / hop / window

    @property
    def plan(self) -> FramePlan:
        return FramePlan(self.frame_length, self.hop, self.array.sample_rate, self.window)

    @classmethod
    def unrefined(cls, **kw) -> PipelineConfig:
        """No detection spread, single-lag peak removal, rectangular window."""
        kw["tracker"] = dataclasses.replace(kw.pop("tracker", TrackerParams()), spread_hops=0)
        kw.update(window="rect", removal_radius=0)
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str, base_dir: Path | None = None) -> PipelineConfig:
        doc = json.loads(text)
        kw = {}
        if "array" in doc:
            kw["array"] = load_array_config(json.dumps(doc.pop("array")))
        elif "array_file" in doc:
            p = Path(doc.pop("array_file"))
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            kw["array"] = load_array_config(p.read_text())
        tracker = doc.pop("tracker", {})
        unrefined = bool(doc.pop("unrefined", False))
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw.update(doc)
        kw["tracker"] = TrackerParams(**tracker)
        return cls.unrefined(**kw) if unrefined else cls(**kw)

    def describe(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
             if f.name not in ("array", "tracker")}
        d["array"] = self.array.to_dict()
        d["tracker"] = dataclasses.asdict(self.tracker)
        return d


@dataclass(frozen=True)
class DetectionEvent:
    time_s: float
    azimuth_deg: float
    elevation_deg: float
    region: int
    probability: float
    energy: float
    estimator: str

    FIELDS = ("time_s", "region", "azimuth_deg", "elevation_deg",
              "probability", "energy", "estimator")

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in self.FIELDS})

    @classmethod
    def from_json(cls, line: str) -> DetectionEvent:
        d = json.loads(line)
        if set(d) != set(cls.FIELDS):
            raise ValueError(f"event fields {sorted(d)} do not match {sorted(cls.FIELDS)}")
        return cls(float(d["time_s"]), float(d["azimuth_deg"]), float(d["elevation_deg"]),
                   int(d["region"]), float(d["probability"]), float(d["energy"]),
                   str(d["estimator"]))


def write_events(path, events: Iterable[DetectionEvent]) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(e.to_json() + "\n")


def read_events(path) -> list[DetectionEvent]:
    return [DetectionEvent.from_json(line)
            for line in Path(path).read_text().splitlines() if line.strip()]


class Localizer:
    """Incremental localizer. Feed it sample chunks of any size with :meth:`process`.

    Memory use is bounded by one frame of buffered samples plus the two
    block accumulators, independent of input length.
    """

    def __init__(self, config: PipelineConfig | None = None, debug_dir: Path | None = None):
        self.config = config = config or PipelineConfig()
        self.plan = config.plan
        self.grid = build_grid(config.grid_level)
        self.table = build_tdoa_table(config.array, self.grid)
        if 2 * self.table.max_lag >= config.frame_length:
            raise PipelineError(f"array aperture ({self.table.max_lag} samples) too large "
                                f"for frame length {config.frame_length}")
        self.az, self.el = direction_to_azel(self.grid.points)
        self.window = self.plan.window_array()
        self.M = config.array.M
        self.noise = NoiseEstimate()
        self.state = RegionBeliefState.empty(self.grid.N)
        self.cal = {k: EnergyCalibration.for_kind(config.tracker, k) for k in ("short", "medium")}
        self.sizes = {"short": config.short_frames, "medium": config.medium_frames}
        self.counts = {"short": config.short_sources, "medium": config.medium_sources}
        self._acc = {"short": None, "medium": None}
        self._acc_n = {"short": 0, "medium": 0}
        self._acc_first = {"short": 0, "medium": 0}
        self.blocks = {"short": 0, "medium": 0}
        self._buf = np.zeros((self.M, 0))
        self.frames = 0
        self.debug_dir = Path(debug_dir) if debug_dir is not None else None
        if self.debug_dir is not None:
            self.debug_dir.mkdir(parents=True, exist_ok=True)

    def process(self, chunk) -> list[DetectionEvent]:
        chunk = np.ascontiguousarray(chunk, dtype=float)
        if chunk.ndim != 2 or chunk.shape[0] != self.M:
            raise PipelineError(f"expected {self.M} channels, got shape {chunk.shape}")
        buf = np.concatenate([self._buf, chunk], axis=1) if self._buf.size else chunk
        L, hop = self.plan.frame_length, self.plan.hop
        events: list[DetectionEvent] = []
        pos = 0
        while buf.shape[1] - pos >= L:
            events += self._frame(buf[:, pos:pos + L] * self.window)
            pos += hop
        self._buf = buf[:, pos:].copy()
        return events

    def run(self, chunks: Iterable[np.ndarray]) -> Iterator[DetectionEvent]:
        for chunk in chunks:
            yield from self.process(chunk)

    def _frame(self, frame: np.ndarray) -> list[DetectionEvent]:
        cfg = self.config
        sf = spectrum(frame, self.frames)
        if not self.noise.initialized:
            self.noise = update_noise_estimate(self.noise, sf.Y, cfg.noise_rate, cfg.noise_clamp)
        w = compute_weights(sf.Y, self.noise.power, cfg.gamma) if cfg.weighting else None
        G = cross_spectrum(sf, w, cfg.whiten)
        self.noise = update_noise_estimate(self.noise, sf.Y, cfg.noise_rate, cfg.noise_clamp)
        for kind in ("short", "medium"):
            if self._acc_n[kind] == 0:
                self._acc[kind] = G.copy()
                self._acc_first[kind] = self.frames
            else:
                self._acc[kind] += G
            self._acc_n[kind] += 1
        self.frames += 1
        events = []
        # medium first so the short-block fusion sees the fresh medium posterior
        if self._acc_n["medium"] == self.sizes["medium"]:
            self._block("medium")
        if self._acc_n["short"] == self.sizes["short"]:
            self._block("short")
            events = self._emit()
        return events

    def _block(self, kind: str) -> None:
        b = self.blocks[kind]
        try:
            n = self._acc_n[kind]
            corrs = correlations_from_spectra(self._acc[kind] / n, self.plan.frame_length,
                                              self.M, kind, self._acc_first[kind], n)
            dets = locate_sources(corrs, self.table, self.counts[kind], self.grid,
                                  self.config.removal_radius, block=b)
            ingest_detections(self.state, dets, kind, self.cal[kind], self.config.tracker,
                              self.grid, block=b)
            if self.debug_dir is not None:
                self._dump(kind, b, corrs)
        except Exception as exc:
            raise PipelineError(f"{kind} block {b}: {exc}") from exc
        self._acc_n[kind] = 0
        self.blocks[kind] = b + 1

    def _dump(self, kind: str, b: int, corrs) -> None:
        (self.debug_dir / f"corr_{kind}_{b:06d}.csv").write_text(corrs.to_csv())
        E = steered_energies(corrs, self.table)
        lines = ["direction,azimuth_deg,elevation_deg,energy"]
        lines += [f"{d},{self.az[d]:.4f},{self.el[d]:.4f},{E[d]:.9g}" for d in range(E.size)]
        (self.debug_dir / f"energy_{kind}_{b:06d}.csv").write_text("\n".join(lines) + "\n")

    def _emit(self) -> list[DetectionEvent]:
        b = self.blocks["short"] - 1
        t = self.plan.block_end_time(b * self.sizes["short"], self.sizes["short"])
        out = []
        params = self.config.tracker
        for region, _, prob in emit_active_sources(self.state, self.grid, params.threshold):
            ps = self.state.posterior["short"][region]
            pm = self.state.posterior["medium"][region]
            kind = "short" if ps >= pm else "medium"
            out.append(DetectionEvent(
                time_s=round(t, 9), azimuth_deg=round(float(self.az[region]), 6),
                elevation_deg=round(float(self.el[region]), 6), region=int(region),
                probability=float(prob), energy=float(self.state.energy[kind][region]),
                estimator=kind))
        return out


def run_pipeline(config: PipelineConfig, channels, chunk_size: int | None = None,
                 debug_dir: Path | None = None) -> list[DetectionEvent]:
    """Localize over a whole (M, T) signal, optionally feeding it in chunks."""
    x = np.asarray(channels, dtype=float)
    if x.ndim != 2 or x.shape[0] != config.array.M:
        raise PipelineError(f"expected {config.array.M} channels, got shape {x.shape}")
    loc = Localizer(config, debug_dir)
    if chunk_size is None:
        return loc.process(x)
    events = []
    for start in range(0, x.shape[1], chunk_size):
        events += loc.process(x[:, start:start + chunk_size])
    return events


def medium_block_seconds(config: PipelineConfig) -> float:
    return config.medium_frames * config.hop / config.array.sample_rate


def short_block_seconds(config: PipelineConfig) -> float:
    return config.short_frames * config.hop / config.array.sample_rate

