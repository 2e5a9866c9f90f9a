"""Steered-beamformer grid search and multi-source extraction by peak removal."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import SphereGrid, TdoaTable
from .spectral import CorrelationSet

SOURCE_COUNT = {"short": 2, "medium": 4}


@dataclass(frozen=True)
class DirectionDetection:
    index: int
    direction: np.ndarray
    energy: float
    rank: int
    kind: str | None
    block: int


@lru_cache(maxsize=16)
def _flat_lookup(table: TdoaTable, L: int) -> np.ndarray:
    """Flat indices into a (P, L) correlation array, one row of P per direction."""
    P = table.lags.shape[1]
    idx = np.arange(P)[None, :] * L + (table.lags.astype(np.int64) % L)
    idx.setflags(write=False)
    return idx


def _check(values: np.ndarray, table: TdoaTable) -> None:
    P = table.lags.shape[1]
    if values.ndim != 2 or values.shape[0] != P:
        raise ValueError(f"correlations have {values.shape[0]} pairs, table has {P}")
    if 2 * table.max_lag >= values.shape[1]:
        raise ValueError(f"max lag {table.max_lag} does not fit in {values.shape[1]} circular lags")


def steered_energies(corrs: CorrelationSet | np.ndarray, table: TdoaTable) -> np.ndarray:
    """Beamformer energy per grid direction: sum over pairs of R_ij at the tabulated lag."""
    values = corrs.values if isinstance(corrs, CorrelationSet) else np.asarray(corrs)
    _check(values, table)
    return values.ravel()[_flat_lookup(table, values.shape[1])].sum(axis=1)


def direction_search(corrs: CorrelationSet | np.ndarray, table: TdoaTable) -> tuple[int, float]:
    """Exhaustive argmax of the steered energy; ties go to the lowest index."""
    E = steered_energies(corrs, table)
    d = int(np.argmax(E))
    return d, float(E[d])


def locate_sources(corrs: CorrelationSet, table: TdoaTable, count: int,
                   grid: SphereGrid | None = None, removal_radius: int = 0,
                   block: int = 0) -> list[DirectionDetection]:
    """Find ``count`` directions, zeroing each winner's lags before the next search.

    ``removal_radius`` additionally zeroes that many lags on each side of the
    looked-up lag (0 zeroes the single lag only). ``corrs`` is not modified.
    """
    if count < 1:
        raise ValueError(f"source count must be >= 1, got {count}")
    if removal_radius < 0:
        raise ValueError("removal radius must be >= 0")
    work = np.array(corrs.values, dtype=float, copy=True)
    _check(work, table)
    L = work.shape[1]
    flat = _flat_lookup(table, L)
    P = flat.shape[1]
    rows = np.arange(P)
    out = []
    for k in range(1, count + 1):
        E = work.ravel()[flat].sum(axis=1)
        d = int(np.argmax(E))
        direction = grid.points[d] if grid is not None else None
        out.append(DirectionDetection(d, direction, float(E[d]), k, corrs.kind, block))
        lags = table.lags[d].astype(np.int64)
        for r in range(-removal_radius, removal_radius + 1):
            work[rows, (lags + r) % L] = 0.0
    return out
