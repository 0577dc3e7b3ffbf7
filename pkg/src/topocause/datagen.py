"""Synthetic counterfactual datasets: covariates, treatment, and paired outcomes.

Random streams come from numpy's ``default_rng`` (PCG64).  Every function takes a
seed (int, ``SeedSequence`` or ``Generator``) so that a run is replayable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .complexes import ImageGrid, NodeWeightedGraph, PointCloud

__all__ = [
    "RNG_ALGORITHM",
    "GROUP_MEANS",
    "COVARIATE_VARIANCE",
    "ORBIT_PARAMS",
    "CounterfactualUnit",
    "gen_covariates",
    "true_propensity",
    "assign_treatment",
    "gen_orbit",
    "gen_orbit_pools",
    "pair_orbit",
    "gen_image",
    "synth_image_pairs",
    "gen_loop_graph",
    "synth_graph_pairs",
    "derive_seed",
]

RNG_ALGORITHM = f"numpy {np.__version__} default_rng/PCG64"

GROUP_MEANS = (
    np.array([1.0, 0.6, -0.7, 2.2, -1.0]),
    np.array([0.4, -0.4, -0.6, 3.3, 3.0]),
)
COVARIATE_VARIANCE = 0.5
ORBIT_PARAMS = (3.5, 4.0, 4.1)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def derive_seed(master: int, *keys: int) -> int:
    """Deterministic child seed of ``master`` for the given integer keys."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1, np.uint32)[0])


@dataclass
class CounterfactualUnit:
    x: np.ndarray
    a: int
    y0: dict
    y1: dict
    y: dict = field(init=False)

    def __post_init__(self):
        self.y = self.y1 if self.a == 1 else self.y0


def gen_covariates(n: int, seed=None) -> np.ndarray:
    """First ``ceil(n/2)`` rows from group 1, the rest from group 2."""
    if n < 2:
        raise ValueError("need at least two units")
    rng = _rng(seed)
    n1 = (n + 1) // 2
    sd = np.sqrt(COVARIATE_VARIANCE)
    g1 = GROUP_MEANS[0] + sd * rng.standard_normal((n1, 5))
    g2 = GROUP_MEANS[1] + sd * rng.standard_normal((n - n1, 5))
    return np.vstack([g1, g2])


def true_propensity(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 5:
        raise ValueError("the treatment mechanism expects 5 covariates")
    x1, x2, x3, x4, x5 = x.T
    lin = -0.5 * x1 - 0.1 * x2 + 0.6 * x3 + 0.1 * x4 + 0.1 * x5 + 0.5 * x2 * x3 - 0.7 * x1 * x3
    return expit(lin)


def assign_treatment(probabilities, seed=None) -> np.ndarray:
    p = np.asarray(probabilities, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("treatment probabilities must lie strictly inside (0, 1)")
    return (_rng(seed).uniform(size=p.shape) < p).astype(int)


# ---------------------------------------------------------------------------
# ORBIT


def gen_orbit(s: float, n_points: int = 300, seed=None, order: str = "sequential") -> PointCloud:
    """Linked twist map orbit from a uniform random start in the unit square.

    ``order="sequential"`` updates y with the new x; ``"simultaneous"`` uses the
    old x for both updates.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    if n_points < 1:
        raise ValueError("need at least one point")
    if order not in ("sequential", "simultaneous"):
        raise ValueError(f"unknown update order {order!r}")
    x, y = _rng(seed).uniform(size=2)
    pts = np.empty((n_points, 2))
    for i in range(n_points):
        pts[i] = x, y
        x_new = (x + s * y * (1.0 - y)) % 1.0
        x_used = x_new if order == "sequential" else x
        y = (y + s * x_used * (1.0 - x_used)) % 1.0
        x = x_new
    return PointCloud(pts)


def gen_orbit_pools(n: int, n_points: int = 300, seed=None, params=ORBIT_PARAMS,
                    order: str = "sequential") -> dict:
    """``n`` clouds for each parameter; cloud ``i`` of pool ``s`` has its own stream."""
    master = _rng(seed).integers(2**32)
    return {
        s: [gen_orbit(s, n_points, derive_seed(master, k, i), order) for i in range(n)]
        for k, s in enumerate(params)
    }


def pair_orbit(pools: dict, n: int | None = None, seed=None, p_higher: float = 0.7):
    """Pair clouds per unit: two distinct pools from triplet ``i``, higher s to Y1 w.p. ``p_higher``.

    Returns ``(pairs, labels)`` with ``pairs[i] = (Y0, Y1)`` and ``labels[i] = (s0, s1)``.
    """
    params = sorted(pools)
    sizes = {len(pools[s]) for s in params}
    size = min(sizes)
    n = size if n is None else n
    if n > size:
        raise ValueError(f"pools hold {size} clouds, {n} requested")
    rng = _rng(seed)
    pairs, labels = [], []
    for i in range(n):
        lo, hi = sorted(rng.choice(len(params), size=2, replace=False))
        s_lo, s_hi = params[lo], params[hi]
        if rng.uniform() < p_higher:
            s0, s1 = s_lo, s_hi
        else:
            s0, s1 = s_hi, s_lo
        pairs.append((pools[s0][i], pools[s1][i]))
        labels.append((s0, s1))
    return pairs, labels


# ---------------------------------------------------------------------------
# image stand-in: dark blobs on a textured background


def gen_image(n_blobs: int, size: int = 20, seed=None) -> ImageGrid:
    """Bright smooth background with ``n_blobs`` small dark Gaussian dips, in [0, 1]."""
    rng = _rng(seed)
    r, c = np.mgrid[0:size, 0:size].astype(float)
    img = 0.75 + 0.05 * rng.standard_normal((size, size))
    for _ in range(3):
        cr, cc = rng.uniform(0, size, 2)
        img += 0.08 * np.exp(-((r - cr) ** 2 + (c - cc) ** 2) / (2 * (size / 4) ** 2))
    for _ in range(n_blobs):
        cr, cc = rng.uniform(1, size - 1, 2)
        depth = rng.uniform(0.4, 0.7)
        width = rng.uniform(0.7, 1.2)
        img -= depth * np.exp(-((r - cr) ** 2 + (c - cc) ** 2) / (2 * width ** 2))
    return ImageGrid.from_array(np.clip(img, 0.0, 1.0))


def synth_image_pairs(n: int, mix: float = 0.75, seed=None, size: int = 20,
                      infected_blobs: tuple = (10, 16), healthy_blobs: tuple = (0, 3)):
    """``n`` pairs ``(Y0, Y1)``: Y0 all blob-rich, a ``mix`` fraction of Y1 blob-poor.

    Returns ``(pairs, labels)``; ``labels[i]`` is 1 when Y1 is blob-poor.
    """
    if not 0 <= mix <= 1:
        raise ValueError("mix must lie in [0, 1]")
    rng = _rng(seed)
    n_healthy = int(round(mix * n))
    healthy = np.zeros(n, dtype=int)
    healthy[rng.permutation(n)[:n_healthy]] = 1
    pairs = []
    for i in range(n):
        y0 = gen_image(int(rng.integers(infected_blobs[0], infected_blobs[1] + 1)), size, rng)
        lo, hi = healthy_blobs if healthy[i] else infected_blobs
        y1 = gen_image(int(rng.integers(lo, hi + 1)), size, rng)
        pairs.append((y0, y1))
    return pairs, healthy.tolist()


# ---------------------------------------------------------------------------
# graph stand-in: sparse graphs with exactly one or two independent cycles


def gen_loop_graph(n_loops: int, seed=None, n_nodes: tuple = (10, 18),
                   n_features: int = 6, feature_max: float = 6.0) -> NodeWeightedGraph:
    """Random connected graph with first Betti number ``n_loops``.

    A random tree is closed into cycles by extra edges between non-adjacent nodes.
    Node weights are random convex combinations of uniform node features.
    """
    rng = _rng(seed)
    n = int(rng.integers(n_nodes[0], n_nodes[1] + 1))
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        u, v = int(order[k]), int(order[rng.integers(0, k)])
        edges.add((min(u, v), max(u, v)))
    while len(edges) < n - 1 + n_loops:
        u, v = sorted(rng.choice(n, size=2, replace=False).tolist())
        edges.add((u, v))
    feats = rng.uniform(0, feature_max, size=(n, n_features))
    mix = rng.dirichlet(np.ones(n_features))
    g = NodeWeightedGraph(feats @ mix, tuple(sorted(edges)))
    assert g.betti_1() == n_loops
    return g


def synth_graph_pairs(n: int, mix: float = 0.75, seed=None, **graph_kw):
    """``n`` pairs ``(Y0, Y1)``: Y0 one-loop graphs, a ``mix`` fraction of Y1 two-loop."""
    if not 0 <= mix <= 1:
        raise ValueError("mix must lie in [0, 1]")
    rng = _rng(seed)
    two = np.zeros(n, dtype=int)
    two[rng.permutation(n)[:int(round(mix * n))]] = 1
    pairs = [(gen_loop_graph(1, rng, **graph_kw), gen_loop_graph(1 + int(two[i]), rng, **graph_kw))
             for i in range(n)]
    return pairs, two.tolist()
