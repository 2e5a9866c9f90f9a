"""Array geometry, icosahedral direction grid and far-field TDOA lookup table."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 48000.0
DEFAULT_SPEED_OF_SOUND = 343.0
MAX_GRID_LEVEL = 6

# Box corners; the dimensions are a repo default, not a measured robot array.
# Kept small enough that the ~2.5 degree quantization of a level-4 grid moves
# no pair lag by more than about one sample. Larger arrays want a finer grid.
DEFAULT_PRISM_SIZE = (0.16, 0.13, 0.12)


class ConfigError(ValueError):
    """Raised for malformed or physically invalid configuration."""


@dataclass(frozen=True)
class MicrophoneArray:
    positions: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    speed_of_sound: float = DEFAULT_SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ConfigError("microphone positions must be a list of 3-vectors")
        if pos.shape[0] < 2:
            raise ConfigError(f"need at least 2 microphones, got {pos.shape[0]}")
        if not np.all(np.isfinite(pos)):
            raise ConfigError("microphone positions must be finite")
        for i, j in combinations(range(len(pos)), 2):
            if np.array_equal(pos[i], pos[j]):
                raise ConfigError(f"microphones {i} and {j} share a position")
        if not (math.isfinite(self.sample_rate) and self.sample_rate > 0):
            raise ConfigError("sample_rate must be positive")
        if not (math.isfinite(self.speed_of_sound) and self.speed_of_sound > 0):
            raise ConfigError("speed_of_sound must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "speed_of_sound", float(self.speed_of_sound))

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Canonical unordered pair enumeration, (0,1), (0,2), ..., (M-2,M-1)."""
        return list(combinations(range(self.M), 2))

    @property
    def aperture(self) -> float:
        """Largest inter-microphone distance in meters."""
        p = self.positions
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        return float(d.max())

    @property
    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "speed_of_sound": self.speed_of_sound,
            "microphones": self.positions.tolist(),
        }


def prism_array(size=DEFAULT_PRISM_SIZE, sample_rate=DEFAULT_SAMPLE_RATE,
                speed_of_sound=DEFAULT_SPEED_OF_SOUND) -> MicrophoneArray:
    """Eight microphones on the corners of a box centered at the origin."""
    hx, hy, hz = (s / 2.0 for s in size)
    corners = [(sx * hx, sy * hy, sz * hz)
               for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    return MicrophoneArray(np.array(corners), sample_rate, speed_of_sound)


def load_array_config(text: str) -> MicrophoneArray:
    """Parse a JSON array description.

    Expected keys: ``microphones`` (list of ``[x, y, z]`` in meters) and
    optionally ``sample_rate`` (Hz, default 48000) and ``speed_of_sound``
    (m/s, default 343). Microphone order is preserved.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"array config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "microphones" not in doc:
        raise ConfigError("array config needs a 'microphones' list")
    mics = doc["microphones"]
    if not isinstance(mics, list) or not all(
            isinstance(m, (list, tuple)) and len(m) == 3 for m in mics):
        raise ConfigError("'microphones' must be a list of [x, y, z] triples")
    try:
        positions = np.array(mics, dtype=float)
        fs = float(doc.get("sample_rate", DEFAULT_SAMPLE_RATE))
        c = float(doc.get("speed_of_sound", DEFAULT_SPEED_OF_SOUND))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"non-numeric value in array config: {exc}") from exc
    if positions.ndim != 2:
        raise ConfigError("'microphones' must be a list of [x, y, z] triples")
    return MicrophoneArray(positions, fs, c)


@dataclass(frozen=True, eq=False)
class SphereGrid:
    points: np.ndarray
    triangles: np.ndarray
    neighbors: tuple
    level: int
    # (N, 6) neighbor indices, rows with 5 neighbors padded with the point itself
    neighbor_index: np.ndarray = field(default=None, repr=False)
    _hops: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    def within_hops(self, index: int, hops: int) -> list[tuple[int, int]]:
        """Regions reachable from ``index`` in at most ``hops`` edges, as (region, distance)."""
        key = (index, hops)
        cached = self._hops.get(key)
        if cached is not None:
            return cached
        seen = {index: 0}
        frontier = [index]
        for h in range(1, hops + 1):
            nxt = []
            for p in frontier:
                for q in self.neighbors[p]:
                    if q not in seen:
                        seen[q] = h
                        nxt.append(q)
            frontier = nxt
        out = sorted(seen.items(), key=lambda kv: (kv[1], kv[0]))
        self._hops[key] = out
        return out

    def azimuth_elevation(self) -> tuple[np.ndarray, np.ndarray]:
        return direction_to_azel(self.points)


def _icosahedron() -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return verts, faces


def build_grid(level: int = 4) -> SphereGrid:
    """Geodesic grid from ``level`` recursive 1-to-4 subdivisions of an icosahedron.

    Midpoints are shared through an edge table keyed on vertex indices, so
    the vertex count is exactly ``10 * 4**level + 2``.
    """
    if isinstance(level, bool) or not isinstance(level, (int, np.integer)):
        raise ValueError(f"grid level must be an integer, got {level!r}")
    if not 0 <= level <= MAX_GRID_LEVEL:
        raise ValueError(f"grid level must be in [0, {MAX_GRID_LEVEL}], got {level}")
    verts, faces = _icosahedron()
    points = list(verts)
    for _ in range(level):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint.get(key)
            if idx is None:
                m = points[a] + points[b]
                points.append(m / np.linalg.norm(m))
                idx = len(points) - 1
                midpoint[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    pts = np.array(points)
    tris = np.array(faces, dtype=np.int64)
    adj: list[set[int]] = [set() for _ in range(len(pts))]
    for a, b, c in faces:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    neighbors = tuple(tuple(sorted(s)) for s in adj)
    width = max(len(n) for n in neighbors)
    nbr = np.array([n + (i,) * (width - len(n)) for i, n in enumerate(neighbors)], dtype=np.int64)
    for a in (pts, tris, nbr):
        a.setflags(write=False)
    return SphereGrid(pts, tris, neighbors, int(level), nbr)


def nearest_region(grid: SphereGrid, direction) -> int:
    """Index of the grid point closest to a unit vector; ties go to the lowest index."""
    u = np.asarray(direction, dtype=float)
    if u.shape != (3,):
        raise ValueError("direction must be a 3-vector")
    if abs(np.linalg.norm(u) - 1.0) > 1e-6:
        raise ValueError("direction must have unit norm")
    return int(np.argmax(grid.points @ u))


def direction_to_azel(u) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth in [-180, 180) and elevation in [-90, 90], degrees."""
    u = np.asarray(u, dtype=float)
    az = np.degrees(np.arctan2(u[..., 1], u[..., 0]))
    az = np.where(az >= 180.0, az - 360.0, az)
    el = np.degrees(np.arcsin(np.clip(u[..., 2], -1.0, 1.0)))
    return az, el


def azel_to_direction(azimuth_deg, elevation_deg) -> np.ndarray:
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def angular_distance_deg(u, v) -> np.ndarray:
    """Great-circle angle between unit vectors (broadcasts over leading axes)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    # atan2 form stays accurate for tiny angles, unlike arccos of the dot product
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


@dataclass(frozen=True, eq=False)
class TdoaTable:
    lags: np.ndarray        # (N, P) int16, direction-major
    pairs: tuple            # P canonical (i, j) with i < j
    max_lag: int
    M: int
    level: int = -1

    @property
    def N(self) -> int:
        return self.lags.shape[0]

    def lag(self, d: int, i: int, j: int) -> int:
        """Lag of ``x_i`` relative to ``x_j`` for direction ``d``; antisymmetric in (i, j)."""
        if i == j:
            return 0
        if i < j:
            return int(self.lags[d, self.pairs.index((i, j))])
        return -int(self.lags[d, self.pairs.index((j, i))])

    def to_bytes(self) -> bytes:
        """Flat binary layout: four little-endian int32 (level, M, N, max_lag), then int16 lags."""
        header = struct.pack("<4i", self.level, self.M, self.N, self.max_lag)
        return header + np.ascontiguousarray(self.lags, dtype="<i2").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> TdoaTable:
        level, M, N, max_lag = struct.unpack_from("<4i", data, 0)
        P = M * (M - 1) // 2
        body = np.frombuffer(data, dtype="<i2", offset=16)
        if body.size != N * P:
            raise ValueError(f"expected {N * P} lags, found {body.size}")
        lags = body.reshape(N, P).astype(np.int16)
        lags.setflags(write=False)
        return cls(lags, tuple(combinations(range(M), 2)), max_lag, M, level)

    def to_csv(self, grid: SphereGrid | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["direction"]
        if grid is not None:
            head += ["x", "y", "z", "azimuth_deg", "elevation_deg"]
            az, el = grid.azimuth_elevation()
        head += [f"lag_{i}_{j}" for i, j in self.pairs]
        w.writerow(head)
        for d in range(self.N):
            row = [d]
            if grid is not None:
                x, y, z = grid.points[d]
                row += [f"{x:.9f}", f"{y:.9f}", f"{z:.9f}", f"{az[d]:.4f}", f"{el[d]:.4f}"]
            row += self.lags[d].tolist()
            w.writerow(row)
        return buf.getvalue()


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def build_tdoa_table(array: MicrophoneArray, grid: SphereGrid) -> TdoaTable:
    """Far-field lag, in whole samples, of each microphone pair for every grid direction.

    ``lag(d, ij) = round(Fs / c * (x_i - x_j) . u_d)``, rounding half away from zero.
    """
    pairs = tuple(array.pairs)
    i_idx = np.array([p[0] for p in pairs])
    j_idx = np.array([p[1] for p in pairs])
    baselines = array.positions[i_idx] - array.positions[j_idx]          # (P, 3)
    scale = array.sample_rate / array.speed_of_sound
    exact = scale * (grid.points @ baselines.T)                          # (N, P)
    lags = round_half_away(exact).astype(np.int16)
    max_lag = int(math.ceil(scale * array.aperture))
    lags.setflags(write=False)
    return TdoaTable(lags, pairs, max_lag, array.M, grid.level)


def write_grid_dump(path: Path, grid: SphereGrid, table: TdoaTable, fmt: str = "bin") -> None:
    path = Path(path)
    if fmt == "bin":
        path.write_bytes(table.to_bytes())
    elif fmt == "csv":
        path.write_text(table.to_csv(grid))
    else:
        raise ValueError(f"unknown dump format {fmt!r}")
