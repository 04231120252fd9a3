"""Mission-space grid, cloud-factor field series and prediction error metrics."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FieldError",
    "MissionGrid",
    "FieldSeries",
    "PredictionGrid",
    "WEATHER_PRESETS",
    "load_field_csv",
    "write_block_csv",
    "synth_cloud_field",
    "sample_at",
    "rmse_at",
    "time_avg_error",
]


class FieldError(ValueError):
    """Raised for malformed field data or invalid field queries."""


@dataclass(frozen=True)
class MissionGrid:
    """Rectangular mission space discretized into ``nx`` x ``ny`` cells.

    Index ``i`` runs along ``q1`` and ``j`` along ``q2``; the linear cell
    index is ``i * ny + j``.
    """

    q1_min: float = -1.41
    q1_max: float = 2.38
    q2_min: float = -1.26
    q2_max: float = 1.53
    nx: int = 97
    ny: int = 72

    def __post_init__(self):
        if not (self.q1_min < self.q1_max and self.q2_min < self.q2_max):
            raise FieldError("grid bounds must satisfy min < max")
        if self.nx < 1 or self.ny < 1:
            raise FieldError("grid needs at least one cell per axis")

    @property
    def d1(self) -> float:
        return (self.q1_max - self.q1_min) / self.nx

    @property
    def d2(self) -> float:
        return (self.q2_max - self.q2_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.d1 * self.d2

    @property
    def area(self) -> float:
        return (self.q1_max - self.q1_min) * (self.q2_max - self.q2_min)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates along each axis."""
        x = self.q1_min + (np.arange(self.nx) + 0.5) * self.d1
        y = self.q2_min + (np.arange(self.ny) + 0.5) * self.d2
        return x, y

    def centers(self) -> np.ndarray:
        """All cell centers as a C-contiguous ``(nx*ny, 2)`` array in linear index order."""
        x, y = self.axes()
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.ascontiguousarray(np.column_stack([X.ravel(), Y.ravel()]))

    def clamp(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        lo = np.array([self.q1_min, self.q2_min])
        hi = np.array([self.q1_max, self.q2_max])
        return np.clip(q, lo, hi)

    def contains(self, q) -> bool:
        q1, q2 = float(q[0]), float(q[1])
        return self.q1_min <= q1 <= self.q1_max and self.q2_min <= q2 <= self.q2_max

    def nearest_cell(self, q) -> tuple[int, int]:
        """Index of the cell whose center is nearest to ``q`` after clamping.

        Exact midpoints between two centers go to the lower index.
        """
        q1, q2 = self.clamp(q)
        i = _nearest_index(q1, self.q1_min, self.d1, self.nx)
        j = _nearest_index(q2, self.q2_min, self.d2, self.ny)
        return i, j


def _nearest_index(x: float, lo: float, d: float, n: int) -> int:
    # center k sits at lo + (k + 0.5) d; ceil(u - 0.5) - 0 resolves ties downward
    u = (x - lo) / d - 0.5
    k = math.ceil(u - 0.5)
    return int(min(max(k, 0), n - 1))


@dataclass
class FieldSeries:
    """Ground-truth cloud factor over ``T`` steps, stored as ``(T, nx, ny)``."""

    grid: MissionGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[1:] != self.grid.shape:
            raise FieldError(
                f"field values must have shape (T, {self.grid.nx}, {self.grid.ny}), "
                f"got {self.values.shape}"
            )
        if self.values.shape[0] < 1:
            raise FieldError("field needs at least one time step")
        if not np.all(np.isfinite(self.values)):
            raise FieldError("field values must be finite")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise FieldError("cloud factor values must lie in [0, 1]")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    def at(self, t: int) -> np.ndarray:
        if not 0 <= t < self.T:
            raise FieldError(f"time step {t} outside [0, {self.T})")
        return self.values[t]


@dataclass
class PredictionGrid:
    grid: MissionGrid
    t: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise FieldError(
                f"prediction shape {self.values.shape} does not match grid {self.grid.shape}"
            )


# ---------------------------------------------------------------------------
# CSV input / output

_BLOCK_RE = re.compile(r"^\s*#\s*t\s*=\s*(-?\d+)\s*$")


def load_field_csv(path, grid: MissionGrid) -> FieldSeries:
    """Load a field series from CSV.

    Two layouts are accepted and detected from the first non-blank line:

    * long format with header ``t,i,j,cf`` and one row per cell and step
      (rows may be in any order);
    * block format made of ``# t=<k>`` separator lines, each followed by
      ``ny`` rows of ``nx`` comma-separated values (row ``j`` holds the
      cells with second index ``j``).
    """
    path = Path(path)
    if not path.exists():
        raise FieldError(f"field file not found: {path}")
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    first = next((ln for ln in lines if ln.strip()), None)
    if first is None:
        raise FieldError(f"{path}: empty field file")
    if _BLOCK_RE.match(first):
        values = _parse_block(lines, grid, path)
    elif [c.strip().lower() for c in first.split(",")] == ["t", "i", "j", "cf"]:
        values = _parse_long(lines, grid, path)
    else:
        raise FieldError(f"{path}: unrecognized header {first!r}")
    return FieldSeries(grid, values)


def _parse_float(tok: str, path, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise FieldError(f"{path}:{lineno}: malformed value {tok!r}") from None
    if not math.isfinite(v):
        raise FieldError(f"{path}:{lineno}: non-finite value {tok!r}")
    return v


def _check_range(v: float, path, lineno: int):
    if v < 0.0 or v > 1.0:
        raise FieldError(f"{path}:{lineno}: cloud factor {v} outside [0, 1]")


def _parse_long(lines, grid, path) -> np.ndarray:
    records = {}
    t_max = -1
    header_seen = False
    for lineno, ln in enumerate(lines, start=1):
        if not ln.strip():
            continue
        if not header_seen:
            header_seen = True
            continue
        parts = [p.strip() for p in ln.split(",")]
        if len(parts) != 4:
            raise FieldError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        try:
            t, i, j = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise FieldError(f"{path}:{lineno}: malformed index in {ln!r}") from None
        if t < 0 or not (0 <= i < grid.nx) or not (0 <= j < grid.ny):
            raise FieldError(f"{path}:{lineno}: index ({t}, {i}, {j}) outside grid")
        cf = _parse_float(parts[3], path, lineno)
        _check_range(cf, path, lineno)
        records[(t, i, j)] = cf
        t_max = max(t_max, t)
    if t_max < 0:
        raise FieldError(f"{path}: no data rows")
    values = np.full((t_max + 1, grid.nx, grid.ny), np.nan)
    for (t, i, j), cf in records.items():
        values[t, i, j] = cf
    _check_missing(values, path)
    return values


def _parse_block(lines, grid, path) -> np.ndarray:
    blocks: dict[int, list[list[float]]] = {}
    current = None
    for lineno, ln in enumerate(lines, start=1):
        if not ln.strip():
            continue
        m = _BLOCK_RE.match(ln)
        if m:
            current = int(m.group(1))
            if current < 0:
                raise FieldError(f"{path}:{lineno}: negative time index")
            if current in blocks:
                raise FieldError(f"{path}:{lineno}: duplicate block t={current}")
            blocks[current] = []
            continue
        if ln.lstrip().startswith("#"):
            continue
        row = [_parse_float(tok, path, lineno) for tok in ln.split(",")]
        if len(row) != grid.nx:
            raise FieldError(f"{path}:{lineno}: expected {grid.nx} values, got {len(row)}")
        for v in row:
            _check_range(v, path, lineno)
        if len(blocks[current]) >= grid.ny:
            raise FieldError(f"{path}:{lineno}: block t={current} has more than {grid.ny} rows")
        blocks[current].append(row)
    T = max(blocks) + 1
    values = np.full((T, grid.nx, grid.ny), np.nan)
    for t, rows in blocks.items():
        arr = np.array(rows, dtype=float).reshape(-1, grid.nx)
        values[t, :, : arr.shape[0]] = arr.T
    _check_missing(values, path)
    return values


def _check_missing(values: np.ndarray, path):
    missing = np.argwhere(np.isnan(values))
    if missing.size:
        t, i, j = (int(v) for v in missing[0])
        raise FieldError(f"{path}: missing cell (t={t}, i={i}, j={j})")


def write_block_csv(path, grid: MissionGrid, frames, times=None) -> None:
    """Write one or more ``(nx, ny)`` frames in block format (9 significant digits)."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    if times is None:
        times = range(frames.shape[0])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for t, frame in zip(times, frames):
            fh.write(f"# t={int(t)}\n")
            for j in range(grid.ny):
                w.writerow([f"{v:.9g}" for v in frame[:, j]])


# ---------------------------------------------------------------------------
# synthetic fields

#: blob count, amplitude range, drift speed (m/step), blob radius range (m)
WEATHER_PRESETS = {
    "sunny": dict(n_blobs=3, amp=(0.25, 0.5), speed=0.02, radius=(0.6, 1.4)),
    "standard": dict(n_blobs=6, amp=(0.35, 0.65), speed=0.02, radius=(0.6, 1.4)),
    "cloudy": dict(n_blobs=9, amp=(0.45, 0.8), speed=0.02, radius=(0.6, 1.4)),
    "very_cloudy": dict(n_blobs=14, amp=(0.55, 0.95), speed=0.02, radius=(0.6, 1.4)),
}


def synth_cloud_field(
    grid: MissionGrid,
    T: int,
    seed: int = 0,
    weather: str = "cloudy",
    n_blobs: int | None = None,
) -> FieldSeries:
    """Synthesize a cloud-factor series from advecting anisotropic Gaussian blobs.

    Blobs drift rigidly with a common wind vector (plus a small per-blob
    deviation) across a padded domain that wraps periodically, and their
    amplitudes are modulated slowly in time. The sum is clamped to [0, 1].
    """
    if T < 1:
        raise FieldError("T must be >= 1")
    if weather not in WEATHER_PRESETS:
        raise FieldError(f"unknown weather preset {weather!r}")
    preset = WEATHER_PRESETS[weather]
    K = preset["n_blobs"] if n_blobs is None else int(n_blobs)
    rng = np.random.default_rng(seed)

    pad = 1.0
    lo1, hi1 = grid.q1_min - pad, grid.q1_max + pad
    lo2, hi2 = grid.q2_min - pad, grid.q2_max + pad
    w1, w2 = hi1 - lo1, hi2 - lo2

    heading = rng.uniform(-np.pi, np.pi)
    wind = preset["speed"] * np.array([np.cos(heading), np.sin(heading)])

    c0 = np.column_stack([rng.uniform(lo1, hi1, K), rng.uniform(lo2, hi2, K)])
    vel = wind + rng.normal(0.0, 0.2 * preset["speed"], size=(K, 2))
    amp = rng.uniform(*preset["amp"], size=K)
    ra = rng.uniform(*preset["radius"], size=K)
    rb = ra * rng.uniform(0.45, 1.0, size=K)
    ang = rng.uniform(0.0, np.pi, size=K)
    mod_depth = rng.uniform(0.1, 0.3, size=K)
    mod_freq = rng.uniform(0.01, 0.04, size=K)
    mod_phase = rng.uniform(0.0, 2 * np.pi, size=K)

    x, y = grid.axes()
    X, Y = np.meshgrid(x, y, indexing="ij")
    cos_a, sin_a = np.cos(ang), np.sin(ang)
    out = np.zeros((T, grid.nx, grid.ny))
    for t in range(T):
        frame = out[t]
        for b in range(K):
            cx = lo1 + np.mod(c0[b, 0] + vel[b, 0] * t - lo1, w1)
            cy = lo2 + np.mod(c0[b, 1] + vel[b, 1] * t - lo2, w2)
            a_t = amp[b] * (1.0 + mod_depth[b] * np.sin(mod_freq[b] * 2 * np.pi * t + mod_phase[b]))
            # nearest periodic image keeps blobs continuous across the wrap
            dx = X - cx
            dx -= w1 * np.round(dx / w1)
            dy = Y - cy
            dy -= w2 * np.round(dy / w2)
            u = cos_a[b] * dx + sin_a[b] * dy
            v = -sin_a[b] * dx + cos_a[b] * dy
            frame += a_t * np.exp(-0.5 * ((u / ra[b]) ** 2 + (v / rb[b]) ** 2))
    np.clip(out, 0.0, 1.0, out=out)
    return FieldSeries(grid, out)


# ---------------------------------------------------------------------------
# sampling and metrics


def sample_at(fs: FieldSeries, q, t: int) -> float:
    """Cloud factor of the cell nearest to ``q`` (clamped into the grid) at step ``t``."""
    if not 0 <= t < fs.T:
        raise FieldError(f"time step {t} outside [0, {fs.T})")
    i, j = fs.grid.nearest_cell(q)
    return float(fs.values[t, i, j])


def rmse_at(truth: FieldSeries, pred: PredictionGrid, t: int) -> float:
    if pred.grid.shape != truth.grid.shape:
        raise FieldError("prediction grid does not match truth grid")
    diff = truth.at(t) - pred.values
    return float(np.sqrt(np.mean(diff * diff)))


def time_avg_error(rmse_series, t0: int = 0, tT: int | None = None) -> float:
    """Plain mean of ``rmse_series[t0..tT]`` (inclusive)."""
    s = np.asarray(rmse_series, dtype=float)
    if tT is None:
        tT = len(s) - 1
    if t0 < 0 or tT >= len(s) or t0 > tT or len(s) == 0:
        raise FieldError(f"empty or invalid averaging range [{t0}, {tT}] for series of length {len(s)}")
    return float(np.mean(s[t0 : tT + 1]))
