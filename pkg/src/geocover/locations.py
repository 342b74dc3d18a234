"""Discrete location universe with a precomputed Euclidean metric (kilometers)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_LOCATIONS = 400


class LocationParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LocationSet:
    """Ordered locations ``0..n-1`` with coordinates in km.

    The distance matrix is computed once at construction and is read-only.
    """

    coords: np.ndarray
    metric: str = "euclidean"
    dist: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(-1, 2)
        if len(coords) == 0:
            raise ValueError("a location set needs at least one location")
        if len(coords) > MAX_LOCATIONS:
            raise ValueError(f"at most {MAX_LOCATIONS} locations are supported, got {len(coords)}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        if self.metric != "euclidean":
            raise ValueError(f"unsupported metric {self.metric!r}")
        if len(np.unique(coords, axis=0)) != len(coords):
            raise ValueError("location coordinates must be pairwise distinct")
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=-1))
        coords.setflags(write=False)
        dist.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "dist", dist)

    def __len__(self):
        return len(self.coords)

    @property
    def ids(self):
        return range(len(self))

    def check_id(self, loc) -> int:
        if isinstance(loc, (bool, np.bool_)) or not isinstance(loc, (int, np.integer)):
            raise TypeError(f"location id must be an integer, got {loc!r}")
        if not 0 <= loc < len(self):
            raise IndexError(f"location id {loc} out of range for {len(self)} locations")
        return int(loc)


def build_grid(rows: int, cols: int, cell_km: float = 1.0) -> LocationSet:
    """Cell centroids of a ``rows x cols`` grid; id = row * cols + col."""
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be positive, got {rows}x{cols}")
    if not cell_km > 0:
        raise ValueError(f"cell size must be positive, got {cell_km}")
    r, c = np.divmod(np.arange(rows * cols), cols)
    coords = np.column_stack([(c + 0.5) * cell_km, (r + 0.5) * cell_km])
    return LocationSet(coords)


def load_locations(path) -> LocationSet:
    """Read a ``id,x_km,y_km`` CSV. Ids must cover ``0..n-1`` exactly once."""
    path = Path(path)
    rows = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "x_km", "y_km"]:
            raise LocationParseError(f"{path}:1: expected header 'id,x_km,y_km', got {header!r}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 3:
                raise LocationParseError(f"{path}:{lineno}: expected 3 columns, got {len(rec)}")
            try:
                loc = int(rec[0])
                x, y = float(rec[1]), float(rec[2])
            except ValueError as exc:
                raise LocationParseError(f"{path}:{lineno}: {exc}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise LocationParseError(f"{path}:{lineno}: non-finite coordinate")
            if loc in rows:
                raise LocationParseError(f"{path}:{lineno}: duplicate id {loc}")
            rows[loc] = (x, y, lineno)
    if not rows:
        raise LocationParseError(f"{path}: no locations")
    n = len(rows)
    if sorted(rows) != list(range(n)):
        missing = sorted(set(range(n)) - set(rows))
        raise LocationParseError(f"{path}: ids must be dense 0..{n - 1}; missing {missing[:5]}")
    coords = np.array([rows[i][:2] for i in range(n)])
    seen = {}
    for i, xy in enumerate(map(tuple, coords)):
        if xy in seen:
            raise LocationParseError(f"{path}:{rows[i][2]}: coordinates duplicate id {seen[xy]}")
        seen[xy] = i
    return LocationSet(coords)


def save_locations(ls: LocationSet, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x_km", "y_km"])
        for i, (x, y) in enumerate(ls.coords):
            w.writerow([i, repr(float(x)), repr(float(y))])


def distance(ls: LocationSet, a, b) -> float:
    return float(ls.dist[ls.check_id(a), ls.check_id(b)])


def essential_pairs(ls: LocationSet, rtol: float = 1e-12) -> np.ndarray:
    """Ordered pairs (a, b), a != b, whose DP constraint is not implied by others.

    A pair is implied when some third location c lies exactly on a shortest
    path, d(a,c) + d(c,b) = d(a,b): chaining the two shorter constraints
    gives the longer one.
    """
    d = ls.dist
    n = len(ls)
    keep = []
    for a in range(n):
        via = d[a][:, None] + d  # via[c, b] = d(a,c) + d(c,b)
        slack = via - d[a][None, :]
        slack[a, :] = np.inf
        slack[np.arange(n), np.arange(n)] = np.inf
        implied = (slack <= rtol * np.maximum(d[a], 1.0)[None, :]).any(axis=0)
        for b in range(n):
            if b != a and not implied[b]:
                keep.append((a, b))
    return np.array(keep, dtype=int).reshape(-1, 2)
