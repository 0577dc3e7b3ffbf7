"""Persistence diagrams by Z/2 column reduction, with a union-find path for H0."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .complexes import FilteredComplex

__all__ = [
    "PersistenceDiagram",
    "compute_persistence",
    "compute_h0_unionfind",
    "cap_infinite_deaths",
    "diagram_to_csv",
    "diagram_from_csv",
]


@dataclass(frozen=True)
class PersistenceDiagram:
    """Multiset of ``(birth, death, dim)`` rows; ``death`` may be ``inf``.

    Rows are kept sorted, so two diagrams with equal point multisets compare
    equal with ``==`` on :attr:`points`.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if pts.size:
            if not np.all(np.isfinite(pts[:, 0])):
                raise ValueError("births must be finite")
            if np.any(pts[:, 0] >= pts[:, 1]):
                raise ValueError("every point needs birth < death")
            pts = pts[np.lexsort((pts[:, 1], pts[:, 0], pts[:, 2]))]
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_pairs(cls, pairs, dim: int = 0) -> "PersistenceDiagram":
        pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(np.column_stack([pairs, np.full(len(pairs), dim)]))

    @classmethod
    def empty(cls) -> "PersistenceDiagram":
        return cls(np.empty((0, 3)))

    def __len__(self):
        return self.points.shape[0]

    @property
    def births(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def deaths(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def dims(self) -> np.ndarray:
        return self.points[:, 2].astype(int)

    @property
    def pairs(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def persistence(self) -> np.ndarray:
        return self.deaths - self.births

    def degree(self, d: int) -> "PersistenceDiagram":
        return PersistenceDiagram(self.points[self.dims == d])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.deaths)))

    def __eq__(self, other):
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.all(self.points == other.points))

    def __hash__(self):
        return hash(self.points.tobytes())


def _check_order(cx: FilteredComplex) -> None:
    B = cx.boundary_array
    if B.size == 0:
        return
    vals = cx.values
    rows = np.broadcast_to(np.arange(len(B))[:, None], B.shape)
    has = B >= 0
    bad = has & ((B >= rows) | (vals[np.maximum(B, 0)] > vals[:, None]))
    if bad.any():
        i, k = map(int, np.argwhere(bad)[0])
        j = int(B[i, k])
        raise ValueError(f"complex is not a monotone filtration: face {cx.cells[j]} of {cx.cells[i]}")


def _reduce(cx: FilteredComplex, max_dim: int):
    """Return ``(pairs, unpaired)`` from the standard column algorithm."""
    low_to_col: dict = {}
    pairs = []
    paired = set()
    for j, faces in enumerate(cx.boundaries):
        if cx.dims[j] > max_dim + 1 or not faces:
            continue
        col = set(faces)
        while col:
            low = max(col)
            other = low_to_col.get(low)
            if other is None:
                break
            col ^= other
        if col:
            low = max(col)
            low_to_col[low] = col
            pairs.append((low, j))
            paired.add(low)
            paired.add(j)
    unpaired = [i for i in range(len(cx)) if i not in paired and cx.dims[i] <= max_dim]
    return pairs, unpaired


def compute_persistence(cx: FilteredComplex, max_hom_dim: int = 1) -> list:
    """Diagrams for degrees ``0..max_hom_dim``; zero-persistence pairs are dropped."""
    _check_order(cx)
    pairs, unpaired = _reduce(cx, max_hom_dim)
    rows: list = [[] for _ in range(max_hom_dim + 1)]
    vals, dims = cx.values, cx.dims
    for i, j in pairs:
        d = dims[i]
        if d <= max_hom_dim and vals[i] < vals[j]:
            rows[d].append((vals[i], vals[j], d))
    for i in unpaired:
        rows[dims[i]].append((vals[i], np.inf, dims[i]))
    return [PersistenceDiagram(np.array(r, dtype=float).reshape(-1, 3)) for r in rows]


def compute_h0_unionfind(cx: FilteredComplex) -> PersistenceDiagram:
    """Degree-0 diagram via the elder rule; cells above dimension 1 are ignored."""
    _check_order(cx)
    vals = cx.values.tolist()
    n = len(vals)
    parent = list(range(n))
    dims = cx.dims
    B = cx.boundary_array
    edge_idx = np.flatnonzero(dims == 1)
    ends = B[edge_idx, -2:].tolist()

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    # each root is its component's oldest vertex, since vertices are in filtration order
    rows = []
    for k, (u, v) in zip(edge_idx.tolist(), ends):
        ru, rv = find(u), find(v)
        if ru == rv:
            continue
        if ru < rv:
            ru, rv = rv, ru
        if vals[ru] < vals[k]:
            rows.append((vals[ru], vals[k], 0))
        parent[ru] = rv
    for k in np.flatnonzero(dims == 0).tolist():
        if find(k) == k:
            rows.append((vals[k], np.inf, 0))
    return PersistenceDiagram(np.array(rows, dtype=float).reshape(-1, 3))


def cap_infinite_deaths(
    diag: PersistenceDiagram,
    mode: str,
    cap: float | None = None,
    low: float | None = None,
    high: float | None = None,
    seed=None,
) -> PersistenceDiagram:
    """Replace infinite deaths.

    ``mode`` is one of ``"fixed"`` (use ``cap``), ``"uniform"`` (draw from
    ``[low, high]`` with ``seed``, an int or a ``numpy.random.Generator``) or
    ``"drop"`` (remove the immortal points).
    """
    pts = diag.points.copy()
    inf = ~np.isfinite(pts[:, 1])
    if mode == "drop":
        return PersistenceDiagram(pts[~inf])
    if not inf.any():
        return diag
    top_birth = pts[inf, 0].max()
    if mode == "fixed":
        if cap is None or not cap > top_birth:
            raise ValueError(f"cap {cap} must exceed every birth (max {top_birth})")
        pts[inf, 1] = cap
    elif mode == "uniform":
        if low is None or high is None or not high >= low or not low > top_birth:
            raise ValueError(f"uniform range [{low}, {high}] must lie above every birth (max {top_birth})")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        pts[inf, 1] = rng.uniform(low, high, size=int(inf.sum()))
    else:
        raise ValueError(f"unknown cap mode {mode!r}")
    return PersistenceDiagram(pts)


def diagram_to_csv(diag: PersistenceDiagram) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dim", "birth", "death"])
    for b, d, k in diag.points.tolist():
        w.writerow([int(k), repr(b), "inf" if np.isinf(d) else repr(d)])
    return buf.getvalue()


def diagram_from_csv(text: str) -> PersistenceDiagram:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append((float(rec["birth"]), float(rec["death"]), int(rec["dim"])))
    return PersistenceDiagram(np.array(rows, dtype=float).reshape(-1, 3))
