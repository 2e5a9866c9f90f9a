"""Per-region Bayesian source-presence tracking and short/medium estimator fusion.

Each grid region carries two posteriors, one per estimator, advanced by a
two-state Markov prediction followed by an unnormalized-likelihood update.
The two posteriors are merged with a weighted geometric mean between the
"independent" and "identical" hypotheses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import SphereGrid
from .search import DirectionDetection

KINDS = ("short", "medium")
P_EPS = 1e-12


@dataclass(frozen=True)
class TrackerParams:
    p_min: float = 0.1
    p_floor: float = 0.005
    p1: float = 0.5
    alpha01_short: float = 0.00004
    alpha11_short: float = 0.992
    alpha01_medium: float = 0.0002
    alpha11_medium: float = 0.96
    beta: float = 0.7
    threshold: float = 0.6
    spread_hops: int = 1
    spread_attenuation: float = 0.5
    # energy calibration; a fixed value disables adaptation for that estimator
    e_min_short: float | None = None
    e_min_medium: float | None = None
    e_min_margin: float = 1.5
    e_min_rate: float = 0.05
    e_min_floor: float = 1e-3
    warmup_blocks: int = 10

    def __post_init__(self):
        for name in ("p_min", "p_floor", "p1", "alpha01_short", "alpha11_short",
                     "alpha01_medium", "alpha11_medium", "threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not self.alpha01_short < self.alpha11_short:
            raise ValueError("alpha01_short must be below alpha11_short")
        if not self.alpha01_medium < self.alpha11_medium:
            raise ValueError("alpha01_medium must be below alpha11_medium")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.spread_hops < 0:
            raise ValueError("spread_hops must be >= 0")

    def alphas(self, kind: str) -> tuple[float, float]:
        if kind == "short":
            return self.alpha01_short, self.alpha11_short
        if kind == "medium":
            return self.alpha01_medium, self.alpha11_medium
        raise ValueError(f"unknown estimator kind {kind!r}")


@dataclass
class EnergyCalibration:
    """Running estimate of the beamformer peak energy when nothing is present.

    The first ``warmup`` silent blocks are averaged arithmetically, after
    which an exponential average with ``rate`` takes over. ``e_min`` is the
    average times ``margin``, floored at ``floor``. After warm-up each peak
    is clipped to the current ``e_min`` before averaging, so a source onset
    that slips past the silence gate cannot drag the floor up by more than
    ``rate * (margin - 1)`` of itself per block.
    """

    margin: float = 1.5
    rate: float = 0.05
    floor: float = 1e-3
    warmup: int = 10
    fixed: float | None = None
    mean_peak: float = 0.0
    count: int = 0

    @classmethod
    def for_kind(cls, params: TrackerParams, kind: str) -> EnergyCalibration:
        fixed = params.e_min_short if kind == "short" else params.e_min_medium
        return cls(params.e_min_margin, params.e_min_rate, params.e_min_floor,
                   params.warmup_blocks, fixed)

    @property
    def warmed_up(self) -> bool:
        return self.fixed is not None or self.count >= self.warmup

    @property
    def e_min(self) -> float | None:
        if self.fixed is not None:
            return self.fixed
        if self.count == 0:
            return None
        return max(self.margin * self.mean_peak, self.floor)

    def update(self, peak_energy: float) -> None:
        if self.fixed is not None or not np.isfinite(peak_energy):
            return
        self.count += 1
        if self.count <= self.warmup:
            self.mean_peak += (peak_energy - self.mean_peak) / self.count
        else:
            peak = min(peak_energy, self.e_min)
            self.mean_peak += self.rate * (peak - self.mean_peak)


def instantaneous_probability(E, cal: EnergyCalibration, params: TrackerParams = TrackerParams()):
    """Presence probability of a detected direction from its energy.

    ``max(1 - exp(1 - E / E_min), p_min)``; ``p_floor`` until the calibration
    has warmed up.
    """
    E = np.asarray(E, dtype=float)
    if not cal.warmed_up:
        return np.full_like(E, params.p_floor)[()]
    p = 1.0 - np.exp(1.0 - E / cal.e_min)
    return np.maximum(p, params.p_min)[()]


def predict_prior(posterior_prev, alpha01: float, alpha11: float):
    return alpha01 * (1.0 - posterior_prev) + alpha11 * posterior_prev


def update_region(posterior_prev, obs_prob, alpha01: float, alpha11: float, p1: float = 0.5):
    """One temporal-integration step. Works elementwise on arrays."""
    prior = predict_prior(np.asarray(posterior_prev, dtype=float), alpha01, alpha11)
    obs = np.asarray(obs_prob, dtype=float)
    pi1 = prior * obs / p1
    pi0 = (1.0 - prior) * (1.0 - obs) / (1.0 - p1)
    total = pi1 + pi0
    with np.errstate(invalid="ignore", divide="ignore"):
        post = np.where(total > 0.0, pi1 / total, prior)
    return post[()]


def fuse(p_short, p_medium, beta: float = 0.7, p1: float = 0.5):
    """Combine the two estimator posteriors into one presence probability."""
    a = np.clip(np.asarray(p_short, dtype=float), P_EPS, 1.0 - P_EPS)
    b = np.clip(np.asarray(p_medium, dtype=float), P_EPS, 1.0 - P_EPS)
    e = 1.0 - beta / 2.0
    # log domain: the products below underflow for long silent runs
    log_pi1 = e * (np.log(a) + np.log(b)) - (1.0 - beta) * np.log(p1)
    log_pi0 = e * (np.log1p(-a) + np.log1p(-b)) - (1.0 - beta) * np.log1p(-p1)
    return (1.0 / (1.0 + np.exp(log_pi0 - log_pi1)))[()]


@dataclass
class RegionBeliefState:
    posterior: dict = field(default_factory=dict)       # kind -> (N,) array
    fused: np.ndarray | None = None
    energy: dict = field(default_factory=dict)          # kind -> (N,) last detection energy
    last_block: dict = field(default_factory=dict)      # kind -> block index

    @classmethod
    def empty(cls, n_regions: int) -> RegionBeliefState:
        post = {k: np.zeros(n_regions) for k in KINDS}
        energy = {k: np.zeros(n_regions) for k in KINDS}
        fused = np.zeros(n_regions)
        state = cls(post, fused, energy, {k: -1 for k in KINDS})
        return state

    @property
    def N(self) -> int:
        return self.fused.shape[0]


def observation_field(detections, grid: SphereGrid, cal: EnergyCalibration,
                      params: TrackerParams) -> np.ndarray:
    """Per-region observation probability for one block of detections."""
    obs = np.full(grid.N, params.p_floor)
    for det in detections:
        p = float(instantaneous_probability(det.energy, cal, params))
        for region, hop in grid.within_hops(det.index, params.spread_hops):
            q = max(p * params.spread_attenuation ** hop, params.p_floor)
            if q > obs[region]:
                obs[region] = q
    return obs


def ingest_detections(state: RegionBeliefState, detections: list[DirectionDetection],
                      kind: str, cal: EnergyCalibration, params: TrackerParams,
                      grid: SphereGrid, block: int | None = None,
                      peak_energy: float | None = None) -> RegionBeliefState:
    """Advance one estimator's posteriors by a block and refresh the fused field.

    The calibration is fed the block's peak energy only when, after the
    update, no region's fused probability exceeds the emission threshold.
    The state is updated in place and returned.
    """
    a01, a11 = params.alphas(kind)
    for det in detections:
        if det.kind is not None and det.kind != kind:
            raise ValueError(f"{det.kind} detection fed to the {kind} estimator")
    obs = observation_field(detections, grid, cal, params)
    state.posterior[kind] = update_region(state.posterior[kind], obs, a01, a11, params.p1)
    for det in detections:
        state.energy[kind][det.index] = det.energy
    if block is not None:
        state.last_block[kind] = block
    state.fused = fuse(state.posterior["short"], state.posterior["medium"], params.beta, params.p1)
    if peak_energy is None and detections:
        peak_energy = max(det.energy for det in detections)
    if peak_energy is not None and not np.any(state.fused > params.threshold):
        cal.update(peak_energy)
    return state


def emit_active_sources(state: RegionBeliefState, grid: SphereGrid,
                        threshold: float = 0.6) -> list[tuple[int, np.ndarray, float]]:
    """Local maxima (non-strict) of the fused field at or above ``threshold``."""
    f = state.fused
    nbr_max = f[grid.neighbor_index].max(axis=1)
    hits = np.flatnonzero((f >= threshold) & (f >= nbr_max))
    order = sorted(hits.tolist(), key=lambda r: (-f[r], r))
    return [(r, grid.points[r], float(f[r])) for r in order]
