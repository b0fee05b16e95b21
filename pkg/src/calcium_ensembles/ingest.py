"""Loading traces, locations and arena tracks; preprocessing and windowing."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class TraceFormatError(ValueError):
    """A CSV input could not be parsed into the expected numeric table."""

    def __init__(self, message, row=None, col=None):
        self.row = row
        self.col = col
        if row is not None:
            message = f"{message} at row {row}, column {col}"
        super().__init__(message)


class Region(str, enum.Enum):
    CENTER = "Center"
    OUTER_RING = "OuterRing"


@dataclass(frozen=True)
class FluorescenceTraces:
    values: np.ndarray
    frame_rate: float = 1.0
    neuron_ids: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValueError("traces must be a 2-d array with at least one frame")
        if not np.all(np.isfinite(values)):
            raise ValueError("traces contain non-finite values")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        ids = tuple(self.neuron_ids) if len(self.neuron_ids) else tuple(
            str(i) for i in range(values.shape[0]))
        if len(ids) != values.shape[0] or len(set(ids)) != len(ids):
            raise ValueError("neuron_ids must be unique with one entry per neuron")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "neuron_ids", ids)

    @property
    def n_neurons(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]

    def subset(self, neurons=None, frames=None) -> "FluorescenceTraces":
        values = self.values
        ids = self.neuron_ids
        if neurons is not None:
            neurons = list(neurons)
            values = values[neurons]
            ids = tuple(ids[i] for i in neurons)
        if frames is not None:
            values = values[:, frames]
        return FluorescenceTraces(values, self.frame_rate, ids)


@dataclass(frozen=True)
class ArenaTrack:
    positions: np.ndarray
    arena_center: tuple = (0.0, 0.0)
    arena_radius: float = 1.0

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if not self.arena_radius > 0:
            raise ValueError("arena_radius must be positive")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "arena_center", tuple(float(v) for v in self.arena_center))

    def regions(self) -> list:
        return [classify_region(p, self.arena_center, self.arena_radius) for p in self.positions]


@dataclass(frozen=True)
class WindowSpec:
    start: int
    end: int
    region: Region

    def __post_init__(self):
        if self.end - self.start < 1:
            raise ValueError("a window needs at least one frame")

    def __len__(self):
        return self.end - self.start

    @property
    def frames(self):
        return slice(self.start, self.end)


def _read_numeric_rows(path, skip_header=False):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for r, row in enumerate(reader):
            if not row or all(not cell.strip() for cell in row):
                continue
            if r == 0 and skip_header:
                try:
                    [float(cell) for cell in row]
                except ValueError:
                    continue
            parsed = []
            for c, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise TraceFormatError(f"non-numeric cell {cell!r}", r, c) from None
                if not math.isfinite(value):
                    raise TraceFormatError(f"non-finite cell {cell!r}", r, c)
                parsed.append(value)
            if rows and len(parsed) != len(rows[0]):
                raise TraceFormatError(
                    f"ragged table: row {r} has {len(parsed)} cells, expected {len(rows[0])}")
            rows.append(parsed)
    if not rows:
        raise TraceFormatError("empty table")
    return np.array(rows, dtype=float)


def load_traces(path, layout="neurons-as-rows", frame_rate=None) -> FluorescenceTraces:
    """Read a numeric CSV of fluorescence values.

    ``layout`` is ``"neurons-as-rows"`` or ``"neurons-as-columns"``; the result
    is always neurons-as-rows.  The frame rate comes from the argument, else
    from a ``<path>.json`` sidecar (``frame_rate``, optional ``neuron_ids``),
    else defaults to 1.
    """
    if layout not in ("neurons-as-rows", "neurons-as-columns"):
        raise ValueError(f"unknown layout {layout!r}")
    values = _read_numeric_rows(path)
    if layout == "neurons-as-columns":
        values = values.T
    meta = {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    rate = frame_rate if frame_rate is not None else meta.get("frame_rate", 1.0)
    return FluorescenceTraces(values, float(rate), tuple(meta.get("neuron_ids", ())))


def save_traces(traces: FluorescenceTraces, path):
    np.savetxt(path, traces.values, delimiter=",", fmt="%.10g")
    Path(str(path) + ".json").write_text(json.dumps(
        {"frame_rate": traces.frame_rate, "neuron_ids": list(traces.neuron_ids)}))


def load_locations(path) -> tuple[np.ndarray, list]:
    """Read ``id,x,y`` rows (header optional); returns coordinates and ids."""
    ids, coords = [], []
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if len(row) != 3:
                raise TraceFormatError(f"expected 3 cells (id,x,y), got {len(row)}", r, 0)
            try:
                x, y = float(row[1]), float(row[2])
            except ValueError:
                if r == 0:
                    continue
                raise TraceFormatError("non-numeric coordinate", r, 1) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise TraceFormatError("non-finite coordinate", r, 1)
            ids.append(row[0])
            coords.append((x, y))
    return np.array(coords, dtype=float).reshape(-1, 2), ids


def save_locations(coords, path, ids=None):
    ids = ids if ids is not None else [str(i) for i in range(len(coords))]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y"])
        for i, (x, y) in zip(ids, coords):
            writer.writerow([i, repr(float(x)), repr(float(y))])


def load_track(path, n_frames=None) -> np.ndarray:
    """Read ``x,y`` rows; resample to ``n_frames`` by nearest frame if given."""
    positions = _read_numeric_rows(path, skip_header=True)
    if positions.shape[1] != 2:
        raise TraceFormatError(f"track rows must have 2 cells, got {positions.shape[1]}")
    if n_frames is not None and len(positions) != n_frames:
        positions = resample_track(positions, n_frames)
    return positions


def resample_track(positions, n_frames):
    """Nearest-frame resampling of a track onto ``n_frames`` equally spaced times."""
    positions = np.asarray(positions, dtype=float)
    m = len(positions)
    src = np.rint(np.arange(n_frames) * (m - 1) / max(n_frames - 1, 1)).astype(int)
    return positions[np.clip(src, 0, m - 1)]


def downsample(traces: FluorescenceTraces, factor: int) -> FluorescenceTraces:
    """Keep every ``factor``-th frame starting at frame 0."""
    if not (isinstance(factor, (int, np.integer)) and factor >= 1):
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    return replace(traces, values=traces.values[:, ::factor],
                   frame_rate=traces.frame_rate / factor)


def screen_noise_only(traces, deconvolver=None) -> list[int]:
    """Indices of neurons whose l0 deconvolution finds at least one spike.

    ``deconvolver`` defaults to :class:`~calcium_ensembles.baseline.L0SpikeDeconvolver`
    with per-trace decay and penalty selection.
    """
    values = traces.values if isinstance(traces, FluorescenceTraces) else np.asarray(traces)
    if values.size == 0 or values.shape[0] == 0:
        return []
    if deconvolver is None:
        from .baseline import L0SpikeDeconvolver
        deconvolver = L0SpikeDeconvolver()
    spikes = deconvolver.fit_transform(values)
    return [i for i in range(values.shape[0]) if spikes[i].any()]


def classify_region(point, center=(0.0, 0.0), radius=1.0) -> Region:
    """Center for the closed inner disc of radius R/sqrt(2), OuterRing otherwise.

    The inner disc then holds exactly half of the arena's area.
    """
    dx = float(point[0]) - float(center[0])
    dy = float(point[1]) - float(center[1])
    # squared distances against R^2/2; the 1e-12 slack sends rounding ties inward
    inside = 2.0 * (dx * dx + dy * dy) <= radius * radius * (1.0 + 1e-12)
    return Region.CENTER if inside else Region.OUTER_RING


def inner_radius(radius):
    return radius / math.sqrt(2.0)


def segment_windows(track, min_len=1, center=None, radius=None):
    """Split the timeline into maximal runs of constant region.

    ``track`` is an :class:`ArenaTrack` or a sequence of :class:`Region`.
    Returns ``(all_windows, kept_windows)`` where the second list drops windows
    shorter than ``min_len``.
    """
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    if isinstance(track, ArenaTrack):
        regions = track.regions()
    elif center is not None:
        regions = [classify_region(p, center, radius) for p in np.asarray(track).reshape(-1, 2)]
    else:
        regions = [Region(r) for r in track]
    windows = []
    start = 0
    for t in range(1, len(regions) + 1):
        if t == len(regions) or regions[t] != regions[start]:
            windows.append(WindowSpec(start, t, regions[start]))
            start = t
    kept = [w for w in windows if len(w) >= min_len]
    return windows, kept


def save_windows(windows: Sequence[WindowSpec], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start", "end", "region"])
        for w in windows:
            writer.writerow([w.start, w.end, w.region.value])


def load_windows(path) -> list[WindowSpec]:
    with open(path, newline="") as fh:
        return [WindowSpec(int(r["start"]), int(r["end"]), Region(r["region"]))
                for r in csv.DictReader(fh)]
