"""Scoring detection events against simulator ground truth, and plot-data export."""

from __future__ import annotations

import csv
import io
from collections import defaultdict

import numpy as np

from .geometry import angular_distance_deg, azel_to_direction
from .pipeline import DetectionEvent
from .simulate import TruthRecord

# 20 frames of 512 samples at 48 kHz
DEFAULT_WINDOW_S = 20 * 512 / 48000.0
PLOT_THRESHOLD = 0.6


def _event_arrays(events):
    times = np.array([e.time_s for e in events], dtype=float)
    dirs = azel_to_direction(np.array([e.azimuth_deg for e in events], dtype=float),
                             np.array([e.elevation_deg for e in events], dtype=float))
    return times, dirs.reshape(-1, 3)


def evaluate(events: list[DetectionEvent], truth: list[TruthRecord],
             threshold_deg: float = 10.0, window_s: float = DEFAULT_WINDOW_S) -> dict:
    """Match events to ground truth.

    A truth record counts as detected when some event within ``window_s`` of
    it lies within ``threshold_deg``. Angular errors are taken from the
    closest such event. An event is false when it matches no truth record.
    """
    if not truth:
        raise ValueError("ground truth is empty")
    ev_t, ev_u = _event_arrays(events) if events else (np.zeros(0), np.zeros((0, 3)))
    order = np.argsort(ev_t, kind="stable")
    ev_t, ev_u = ev_t[order], ev_u[order]
    matched_event = np.zeros(ev_t.size, dtype=bool)
    per_source = defaultdict(lambda: [0, 0])
    errors = []
    for rec in truth:
        lo = np.searchsorted(ev_t, rec.time_s - window_s - 1e-9, side="left")
        hi = np.searchsorted(ev_t, rec.time_s + window_s + 1e-9, side="right")
        stats = per_source[rec.source_id]
        stats[0] += 1
        if hi <= lo:
            continue
        ang = angular_distance_deg(ev_u[lo:hi], rec.direction)
        ok = ang <= threshold_deg
        if ok.any():
            stats[1] += 1
            errors.append(float(ang[ok].min()))
            matched_event[lo:hi] |= ok
    n_blocks = sum(s[0] for s in per_source.values())
    n_hit = sum(s[1] for s in per_source.values())
    return {
        "detection_rate": n_hit / n_blocks,
        "per_source": {sid: {"blocks": s[0], "detected": s[1], "detection_rate": s[1] / s[0]}
                       for sid, s in sorted(per_source.items())},
        "median_error_deg": float(np.median(errors)) if errors else None,
        "p95_error_deg": float(np.percentile(errors, 95)) if errors else None,
        "events": int(ev_t.size),
        "false_events": int((~matched_event).sum()),
        "false_event_rate": float((~matched_event).mean()) if ev_t.size else 0.0,
    }


def emit_plot_data(events: list[DetectionEvent], kind: str = "azimuth",
                   threshold: float = PLOT_THRESHOLD) -> str:
    """CSV for track plots. ``azimuth`` and ``elevation`` keep events with probability >= threshold."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind in ("azimuth", "elevation"):
        col = f"{kind}_deg"
        w.writerow(["time_s", col, "probability"])
        for e in events:
            if e.probability >= threshold:
                w.writerow([e.time_s, getattr(e, col), e.probability])
    elif kind == "probability-map":
        w.writerow(["time_s", "region", "azimuth_deg", "elevation_deg", "probability"])
        for e in events:
            w.writerow([e.time_s, e.region, e.azimuth_deg, e.elevation_deg, e.probability])
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    return buf.getvalue()
