"""Filtered complexes built from point clouds, images and node-weighted graphs.

Every builder returns a :class:`FilteredComplex` whose cells are sorted by
``(value, dim, cell id)``.  Cell ids are sorted vertex-index tuples, also for
cubical cells (a square is identified by its four pixel vertices), so the
lexicographic tie-break is the same for every construction.

Scale convention: Rips and alpha values are radii.  An edge of length ``d``
enters at ``d / 2``, matching the ball-growing picture of the alpha complex.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError
from scipy.spatial.distance import pdist, squareform

__all__ = [
    "PointCloud",
    "ImageGrid",
    "NodeWeightedGraph",
    "FilteredComplex",
    "build_rips",
    "build_alpha_2d",
    "build_graph_sublevel",
    "build_cubical_sublevel",
    "read_point_cloud_csv",
    "read_image",
    "read_graph_csv",
    "read_outcome",
    "write_point_cloud_csv",
    "write_image_csv",
    "write_graph_csv",
    "write_outcome",
]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if pts.shape[1] < 2:
            raise ValueError("points must have dimension >= 2")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class ImageGrid:
    rows: int
    cols: int
    values: np.ndarray

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("image must have at least one row and one column")
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size != self.rows * self.cols:
            raise ValueError(
                f"expected {self.rows * self.cols} intensities, got {vals.size}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("image intensities must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, arr) -> "ImageGrid":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2:
            raise ValueError("image array must be 2-D")
        return cls(arr.shape[0], arr.shape[1], arr.ravel())

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.rows, self.cols)


@dataclass(frozen=True)
class NodeWeightedGraph:
    node_weights: np.ndarray
    edges: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.node_weights, dtype=float).ravel()
        n = w.size
        seen = set()
        clean = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) out of range for {n} nodes")
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            clean.append(key)
        object.__setattr__(self, "node_weights", w)
        object.__setattr__(self, "edges", tuple(clean))

    @property
    def n_nodes(self) -> int:
        return self.node_weights.size

    def betti_1(self) -> int:
        """Number of independent cycles, ``E - V + C``."""
        parent = list(range(self.n_nodes))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        components = self.n_nodes
        for u, v in self.edges:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
                components -= 1
        return len(self.edges) - self.n_nodes + components


class _RowTuples(Sequence):
    """Read-only sequence of tuples backed by a padded integer array.

    Row ``i`` is ``arr[i, :k]`` (``align="left"``) or ``arr[i, -k:]``
    (``align="right"``) with ``k = sizes[i]``; tuples are built on first use.
    """

    def __init__(self, arr: np.ndarray, sizes: np.ndarray, align: str = "left"):
        self._arr = arr
        self._sizes = sizes
        self._align = align
        self._items = None

    def _row(self, row, k):
        if self._align == "left":
            return tuple(row[:k])
        return tuple(row[len(row) - k:]) if k else ()

    def _all(self) -> list:
        if self._items is None:
            self._items = [self._row(r, k) for r, k in zip(self._arr.tolist(), self._sizes.tolist())]
        return self._items

    def __len__(self):
        return len(self._sizes)

    def __getitem__(self, i):
        if self._items is not None or isinstance(i, slice):
            return self._all()[i]
        return self._row(self._arr[i].tolist(), int(self._sizes[i]))

    def __iter__(self):
        return iter(self._all())

    def __eq__(self, other):
        return list(self) == list(other)

    def __repr__(self):
        return repr(self._all())


@dataclass
class FilteredComplex:
    """Cells in filtration order with their boundaries as index tuples.

    ``boundaries[i]`` lists the positions (in this ordering) of the codimension-1
    faces of cell ``i``.
    """

    cells: list
    dims: np.ndarray
    values: np.ndarray
    boundaries: list
    metadata: dict = field(default_factory=dict)
    _bmat: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.cells)

    @property
    def boundary_array(self) -> np.ndarray:
        """Boundaries as a right-aligned index array padded with -1 on the left."""
        if self._bmat is None:
            width = max((len(b) for b in self.boundaries), default=0)
            mat = np.full((len(self.boundaries), max(width, 1)), -1, dtype=np.int64)
            for i, b in enumerate(self.boundaries):
                if b:
                    mat[i, mat.shape[1] - len(b):] = b
            self._bmat = mat
        return self._bmat

    def validate(self) -> None:
        """Raise ``ValueError`` unless faces precede cofaces with no larger value."""
        for i, faces in enumerate(self.boundaries):
            for j in faces:
                if j >= i:
                    raise ValueError(f"face {self.cells[j]} does not precede {self.cells[i]}")
                if self.values[j] > self.values[i]:
                    raise ValueError(
                        f"non-monotone filtration: face {self.cells[j]} at {self.values[j]}"
                        f" > cell {self.cells[i]} at {self.values[i]}"
                    )
        keys = list(zip(self.values.tolist(), self.dims.tolist(), self.cells))
        if any(keys[i] > keys[i + 1] for i in range(len(keys) - 1)):
            raise ValueError("cells are not sorted by (value, dim, id)")

    @classmethod
    def from_simplices(cls, cells, values, metadata: dict | None = None) -> "FilteredComplex":
        """Sort simplices (vertex tuples) with their values and link their faces.

        Every face of every simplex must be listed.  Monotonicity is checked.
        """
        cells = [tuple(sorted(int(v) for v in c)) for c in cells]
        if len(set(cells)) != len(cells):
            raise ValueError("duplicate simplices")
        known = set(cells)
        for c in cells:
            missing = [f for f in _simplex_faces(c) if f not in known]
            if missing:
                raise ValueError(f"face {missing[0]} of {c} is missing")
        cx = _assemble(cells, [float(v) for v in values], _simplex_faces, metadata=metadata)
        cx.validate()
        return cx

    def sublevel(self, t: float) -> np.ndarray:
        """Boolean mask of cells present at scale ``t``."""
        return self.values <= t

    def euler_characteristic(self, t: float) -> int:
        mask = self.sublevel(t)
        return int(np.sum((-1.0) ** self.dims[mask]))


def _simplex_faces(cell: tuple) -> list:
    if len(cell) == 1:
        return []
    return [cell[:k] + cell[k + 1:] for k in range(len(cell))]


def _assemble(
    cells: Sequence[tuple],
    values: Sequence[float],
    faces_of: Callable[[tuple], list],
    dims: Sequence[int] | None = None,
    metadata: dict | None = None,
) -> FilteredComplex:
    if dims is None:
        dims = [len(c) - 1 for c in cells]
    order = sorted(range(len(cells)), key=lambda i: (values[i], dims[i], cells[i]))
    cells_sorted = [cells[i] for i in order]
    index = {c: k for k, c in enumerate(cells_sorted)}
    boundaries = [tuple(sorted(index[f] for f in faces_of(c))) for c in cells_sorted]
    cx = FilteredComplex(
        cells=cells_sorted,
        dims=np.asarray([dims[i] for i in order], dtype=int),
        values=np.asarray([values[i] for i in order], dtype=float),
        boundaries=boundaries,
        metadata=dict(metadata or {}),
    )
    return cx


def _assemble_arrays(
    cell_ids: np.ndarray,
    values: np.ndarray,
    dims: np.ndarray,
    faces: np.ndarray,
    metadata: dict | None = None,
) -> FilteredComplex:
    """Vectorised :func:`_assemble` for cells given as padded index arrays.

    ``cell_ids`` rows hold sorted vertex ids padded with -1; ``faces`` rows hold
    row numbers (into the unsorted input) of each cell's facets, padded with -1.
    """
    width = cell_ids.shape[1]
    order = np.lexsort(tuple(cell_ids[:, k] for k in reversed(range(width))) + (dims, values))
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    ids = cell_ids[order]
    fc = faces[order]
    fc = np.where(fc >= 0, rank[np.maximum(fc, 0)], -1)
    fc.sort(axis=1)
    cells = _RowTuples(ids, (ids >= 0).sum(axis=1), "left")
    boundaries = _RowTuples(fc, (fc >= 0).sum(axis=1), "right")
    return FilteredComplex(
        cells=cells,
        dims=np.asarray(dims, dtype=int)[order],
        values=np.asarray(values, dtype=float)[order],
        boundaries=boundaries,
        metadata=dict(metadata or {}),
        _bmat=fc,
    )


def build_rips(cloud: PointCloud, max_dim: int = 1, max_radius: float = np.inf) -> FilteredComplex:
    """Vietoris-Rips filtration in radius units, truncated at ``max_radius``."""
    if max_dim not in (1, 2):
        raise ValueError("max_dim must be 1 or 2")
    if not max_radius > 0:
        raise ValueError("max_radius must be positive")
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    n = len(cloud)
    cells: list = [(i,) for i in range(n)]
    values: list = [0.0] * n
    if n > 1:
        half = squareform(pdist(cloud.points)) / 2.0
        iu, ju = np.nonzero(np.triu(half <= max_radius, k=1))
        adj: dict = {i: set() for i in range(n)}
        for i, j in zip(iu.tolist(), ju.tolist()):
            cells.append((i, j))
            values.append(float(half[i, j]))
            adj[i].add(j)
            adj[j].add(i)
        if max_dim == 2:
            for i, j in zip(iu.tolist(), ju.tolist()):
                for k in sorted(adj[i] & adj[j]):
                    if k > j:
                        cells.append((i, j, k))
                        values.append(float(max(half[i, j], half[i, k], half[j, k])))
    return _assemble(cells, values, _simplex_faces, metadata={"filtration": "rips"})


def _circumradii(P: np.ndarray) -> np.ndarray:
    """Circumradii of triangles given as a (T, 3, 2) array."""
    a = np.linalg.norm(P[:, 1] - P[:, 2], axis=1)
    b = np.linalg.norm(P[:, 0] - P[:, 2], axis=1)
    c = np.linalg.norm(P[:, 0] - P[:, 1], axis=1)
    d1, d2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    area2 = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return a * b * c / (2.0 * area2)


def build_alpha_2d(cloud: PointCloud) -> FilteredComplex:
    """Alpha filtration of a planar point set from its Delaunay triangulation.

    Vertices enter at 0, triangles at their circumradius, and an edge at half its
    length unless the opposite vertex of an incident triangle lies strictly inside
    its diametral disk, in which case it enters with that triangle.

    Degenerate inputs (fewer than three non-collinear points) fall back to the
    Rips filtration of the same cloud, which coincides with alpha for trees of
    collinear points; ``metadata["fallback"]`` records this.
    """
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    pts = cloud.points
    if pts.shape[1] != 2:
        raise ValueError("alpha complex requires planar points")
    n = len(cloud)
    try:
        if n < 3:
            raise QhullError("fewer than three points")
        tri = Delaunay(pts)
    except QhullError:
        cx = build_rips(cloud, max_dim=2)
        cx.metadata.update(filtration="alpha", fallback="rips")
        return cx

    simplices = np.sort(tri.simplices, axis=1)
    T = len(simplices)
    radius = _circumradii(pts[simplices])

    # edge k of a triangle omits vertex k; rows are ordered (triangle, k)
    drop = [[1, 2], [0, 2], [0, 1]]
    tri_edges = np.stack([simplices[:, drop[k]] for k in range(3)], axis=1).reshape(-1, 2)
    opposite = simplices.reshape(-1)
    u, v, w = pts[tri_edges[:, 0]], pts[tri_edges[:, 1]], pts[opposite]
    attached = np.einsum("ij,ij->i", u - w, v - w) < 0.0
    own = np.linalg.norm(u - v, axis=1) / 2.0
    rad3 = np.repeat(radius, 3)

    keys, first, inv = np.unique(tri_edges[:, 0] * n + tri_edges[:, 1], return_index=True,
                                 return_inverse=True)
    inv = inv.reshape(-1)
    edges = tri_edges[first]
    att = np.full(len(keys), np.inf)
    np.minimum.at(att, inv, np.where(attached, rad3, np.inf))
    evals = np.where(np.isfinite(att), att, own[first])
    # an edge never enters after a triangle containing it
    np.minimum.at(evals, inv, rad3)

    E = len(edges)
    cell_ids = [np.column_stack([np.arange(n), np.full((n, 2), -1)]),
                np.column_stack([edges, np.full(E, -1)]), simplices]
    vals = [np.zeros(n), evals, radius]
    dims = [np.zeros(n, int), np.ones(E, int), np.full(T, 2)]
    faces = [np.full((n, 3), -1), np.column_stack([edges, np.full(E, -1)]),
             n + inv.reshape(T, 3)]

    # duplicates dropped by qhull join their nearest kept vertex at (numerically) zero
    used = np.unique(simplices)
    if used.size < n:
        kept = pts[used]
        extra = []
        for i in sorted(set(range(n)) - set(used.tolist())):
            j = int(used[np.argmin(np.linalg.norm(kept - pts[i], axis=1))])
            extra.append((min(i, j), max(i, j), float(np.linalg.norm(pts[i] - pts[j])) / 2.0))
        ex = np.array(extra)
        pairs = ex[:, :2].astype(int)
        cell_ids.append(np.column_stack([pairs, np.full(len(ex), -1)]))
        vals.append(ex[:, 2])
        dims.append(np.ones(len(ex), int))
        faces.append(np.column_stack([pairs, np.full(len(ex), -1)]))

    return _assemble_arrays(np.vstack(cell_ids), np.concatenate(vals), np.concatenate(dims),
                            np.vstack(faces), metadata={"filtration": "alpha"})


def build_graph_sublevel(graph: NodeWeightedGraph) -> FilteredComplex:
    """Vertices at their weights, edges at the larger endpoint weight."""
    w = graph.node_weights
    if not np.all(np.isfinite(w)):
        raise ValueError("node weights must be finite")
    cells: list = [(i,) for i in range(graph.n_nodes)]
    values: list = w.tolist()
    for u, v in graph.edges:
        cells.append((u, v))
        values.append(float(max(w[u], w[v])))
    return _assemble(cells, values, _simplex_faces, metadata={"filtration": "graph"})


def build_cubical_sublevel(image: ImageGrid) -> FilteredComplex:
    """Sublevel filtration of the V-construction: pixels are vertices.

    Horizontal and vertical neighbours span edges, 2x2 pixel blocks span squares,
    and every cube takes the maximum value of its vertices.
    """
    rows, cols = image.rows, image.cols
    vals = image.values
    if not np.all(np.isfinite(vals)):
        raise ValueError("image intensities must be finite")
    idx = np.arange(rows * cols).reshape(rows, cols)
    nv = rows * cols
    horiz = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    vert = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    nh, nvert = len(horiz), len(vert)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    d, e = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    squares = np.column_stack([a, b, d, e])
    # facet rows: horizontal edge (r, c) is nv + r*(cols-1) + c, vertical (r, c) follows
    rr, cc = np.divmod(np.arange(len(squares)), max(cols - 1, 1))
    h_id = nv + rr * (cols - 1) + cc
    v_id = nv + nh + rr * cols + cc
    sq_faces = np.column_stack([h_id, h_id + (cols - 1), v_id, v_id + 1])

    pad = lambda arr, w: np.column_stack([arr, np.full((len(arr), w - arr.shape[1]), -1)])
    edges = np.vstack([horiz, vert]).reshape(-1, 2)
    cell_ids = np.vstack([pad(idx.reshape(-1, 1), 4), pad(edges, 4), squares.reshape(-1, 4)])
    values = np.concatenate([vals, vals[edges].max(axis=1) if len(edges) else [],
                             vals[squares].max(axis=1) if len(squares) else []])
    dims = np.concatenate([np.zeros(nv, int), np.ones(nh + nvert, int), np.full(len(squares), 2)])
    faces = np.vstack([np.full((nv, 4), -1), pad(edges, 4), sq_faces.reshape(-1, 4)])
    return _assemble_arrays(cell_ids, values, dims, faces, metadata={"filtration": "cubical"})


# ---------------------------------------------------------------------------
# readers


def read_point_cloud_csv(path) -> PointCloud:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    return PointCloud(np.asarray(rows, dtype=float))


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a P2/P5 PGM file")
    tokens = []
    pos = 2
    # header: width, height, maxval, skipping comments
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    width, height, maxval = tokens
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    if magic == b"P5":
        raw = np.frombuffer(data[pos + 1:pos + 1 + width * height], dtype=np.uint8)
    else:
        raw = np.asarray(data[pos:].split(), dtype=float)[: width * height]
    if raw.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return raw.astype(float).reshape(height, width) / float(maxval)


def read_image(path) -> ImageGrid:
    """Read an image from a CSV intensity grid or an 8-bit PGM (rescaled to [0, 1])."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return ImageGrid.from_array(_read_pgm(path))
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return ImageGrid.from_array(arr)


def read_graph_csv(path) -> NodeWeightedGraph:
    """Read ``node,weight`` rows followed by ``edge,u,v`` rows."""
    weights: dict = {}
    edges = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            tag = rec[0].strip().lower()
            if tag in ("node", "edge") and len(rec) >= 2 and rec[1].strip() in ("weight", "u"):
                continue  # header rows
            if tag == "edge":
                edges.append((int(rec[1]), int(rec[2])))
            elif tag == "node" or tag.isdigit():
                i, w = (int(rec[1]), float(rec[2])) if tag == "node" else (int(rec[0]), float(rec[1]))
                weights[i] = w
            else:
                raise ValueError(f"{path}: unrecognised row {rec}")
    n = len(weights)
    if sorted(weights) != list(range(n)):
        raise ValueError(f"{path}: node indices must be 0..{n - 1}")
    return NodeWeightedGraph(np.array([weights[i] for i in range(n)]), tuple(edges))



# ---------------------------------------------------------------------------
# writers (inverse of the readers above)


def write_point_cloud_csv(cloud: PointCloud, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows([[repr(v) for v in row] for row in cloud.points.tolist()])


def write_image_csv(image: ImageGrid, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows([[repr(v) for v in row] for row in image.as_array().tolist()])


def write_graph_csv(graph: NodeWeightedGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "weight"])
        for i, wt in enumerate(graph.node_weights.tolist()):
            w.writerow([i, repr(wt)])
        for u, v in graph.edges:
            w.writerow(["edge", u, v])


def read_outcome(path, kind: str):
    """Read a point cloud, image or graph file according to ``kind``."""
    readers = {"cloud": read_point_cloud_csv, "image": read_image, "graph": read_graph_csv}
    if kind not in readers:
        raise ValueError(f"unknown outcome kind {kind!r}; expected one of {sorted(readers)}")
    return readers[kind](path)


def write_outcome(outcome, path) -> None:
    if isinstance(outcome, PointCloud):
        write_point_cloud_csv(outcome, path)
    elif isinstance(outcome, ImageGrid):
        write_image_csv(outcome, path)
    elif isinstance(outcome, NodeWeightedGraph):
        write_graph_csv(outcome, path)
    else:
        raise TypeError(f"unsupported outcome type {type(outcome).__name__}")
