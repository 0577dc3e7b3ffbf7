"""Wasserstein distances between diagrams and the silhouette stability certificate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .persistence import PersistenceDiagram
from .summaries import SummaryGrid, silhouette

__all__ = [
    "DIAGONAL",
    "Matching",
    "StabilityCertificate",
    "wasserstein",
    "wasserstein_bruteforce",
    "weight_gap_bound",
    "mvt_constant",
    "stability_check",
]

DIAGONAL = -1


@dataclass
class Matching:
    """Index pairs into the two diagrams; ``DIAGONAL`` marks a diagonal partner."""

    pairs: list
    cost: float


@dataclass
class StabilityCertificate:
    w1: float
    sup_diff: float
    L: float
    c: float
    bound: float
    satisfied: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _as_pairs(diag) -> np.ndarray:
    if isinstance(diag, PersistenceDiagram):
        if len(np.unique(diag.dims)) > 1:
            raise ValueError("compare one homology degree at a time")
        pairs = diag.pairs
    else:
        pairs = np.asarray(diag, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(pairs)):
        raise ValueError("diagram points must be finite")
    return pairs


def _check_q(q: float) -> None:
    if not q >= 1:
        raise ValueError("order q must be >= 1")


def wasserstein(D1, D2, q: float = 1.0) -> tuple:
    """q-Wasserstein distance with the L-infinity ground metric.

    A point matched to the diagonal costs half its persistence.  Solved exactly as
    an assignment problem on the diagonally augmented cost matrix.
    """
    _check_q(q)
    P, Q = _as_pairs(D1), _as_pairs(D2)
    m, n = len(P), len(Q)
    if m + n == 0:
        return 0.0, Matching([], 0.0)
    cost = np.zeros((m + n, m + n))
    if m and n:
        cost[:m, :n] = np.max(np.abs(P[:, None, :] - Q[None, :, :]), axis=2) ** q
    diag_p = ((P[:, 1] - P[:, 0]) / 2.0) ** q
    diag_q = ((Q[:, 1] - Q[:, 0]) / 2.0) ** q
    cost[:m, n:] = np.inf
    cost[m:, :n] = np.inf
    cost[np.arange(m), n + np.arange(m)] = diag_p
    cost[m + np.arange(n), np.arange(n)] = diag_q
    rows, cols = linear_sum_assignment(cost)
    pairs = []
    total = 0.0
    for i, j in zip(rows.tolist(), cols.tolist()):
        if i < m and j < n:
            pairs.append((i, j))
        elif i < m:
            pairs.append((i, DIAGONAL))
        elif j < n:
            pairs.append((DIAGONAL, j))
        else:
            continue
        total += cost[i, j]
    dist = float(total ** (1.0 / q))
    return dist, Matching(sorted(pairs, key=lambda p: (p[0] < 0, p)), dist)


def wasserstein_bruteforce(D1, D2, q: float = 1.0, max_points: int = 8) -> float:
    """Exhaustive minimum over all partial matchings; for small diagrams only."""
    _check_q(q)
    P, Q = _as_pairs(D1), _as_pairs(D2)
    if len(P) + len(Q) > max_points:
        raise ValueError(f"brute force limited to {max_points} points in total")
    dp = ((P[:, 1] - P[:, 0]) / 2.0) ** q
    dq = ((Q[:, 1] - Q[:, 0]) / 2.0) ** q
    best = np.inf

    def rec(i, used, acc):
        nonlocal best
        if i == len(P):
            rest = sum(dq[j] for j in range(len(Q)) if j not in used)
            best = min(best, acc + rest)
            return
        rec(i + 1, used, acc + dp[i])
        for j in range(len(Q)):
            if j not in used:
                c = float(np.max(np.abs(P[i] - Q[j]))) ** q
                rec(i + 1, used | {j}, acc + c)

    rec(0, frozenset(), 0.0)
    return float(best ** (1.0 / q))


def mvt_constant(l1: float, l2: float, r: float) -> float:
    """The point c between two lifetimes with ``r c**(r-1) = (l1**r - l2**r) / (l1 - l2)``.

    Equal lifetimes give the lifetime itself.  A zero lifetime (diagonal partner)
    is allowed.
    """
    lo, hi = min(l1, l2), max(l1, l2)
    if r == 1 or hi == lo:
        return hi
    slope = (hi ** r - lo ** r) / (hi - lo)
    return float((slope / r) ** (1.0 / (r - 1.0)))


def weight_gap_bound(p, p2, r: float) -> float:
    """Upper bound on ``|w_p - w_p'|`` for power weights.

    Uses ``2 r c**(r-1) ||p - p'||_inf`` with ``c`` the larger lifetime when
    ``r >= 1`` and the smaller one when ``r < 1``, so the bound holds for all r.
    """
    if not r > 0:
        raise ValueError("power r must be positive")
    p = np.asarray(p, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    dist = float(np.max(np.abs(p - p2)))
    if dist == 0:
        return 0.0
    l1, l2 = p[1] - p[0], p2[1] - p2[0]
    c = max(l1, l2) if r >= 1 else min(l1, l2)
    if c == 0:
        return np.inf
    return float(2 * r * c ** (r - 1) * dist)


def stability_check(D1, D2, r: float, grid: SummaryGrid, L: float | None = None,
                    c: float | None = None, tol: float = 1e-9) -> StabilityCertificate:
    """Check ``sup|phi - phi'| <= (1 + 2 L r c**(r-1)) W_1`` on ``grid``.

    ``L`` defaults to the largest ``lifetime**(1 - r)`` over both diagrams.  For
    ``r >= 1`` ``c`` defaults to the largest lifetime.  For ``r < 1`` the map
    ``x -> x**(r-1)`` is decreasing, so the largest lifetime would understate the
    weight gaps; ``c`` then defaults to the smallest mean-value point over the
    pairs of the optimal W1 matching, which keeps the bound valid.
    """
    P, Q = _as_pairs(D1), _as_pairs(D2)
    w1, match = wasserstein(P, Q, 1.0)
    lp = P[:, 1] - P[:, 0]
    lq = Q[:, 1] - Q[:, 0]
    lifetimes = np.concatenate([lp, lq])
    if L is None:
        L = float(np.max(lifetimes ** (1.0 - r))) if lifetimes.size else 0.0
    if c is None:
        if r >= 1:
            c = float(lifetimes.max()) if lifetimes.size else 0.0
        else:
            cands = []
            for i, j in match.pairs:
                li = lp[i] if i != DIAGONAL else 0.0
                lj = lq[j] if j != DIAGONAL else 0.0
                if i == DIAGONAL or j == DIAGONAL or np.max(np.abs(P[i] - Q[j])) > 0:
                    cands.append(mvt_constant(li, lj, r))
            c = float(min(cands)) if cands else 1.0
    phi1 = silhouette(P, r, grid).values if len(P) else np.zeros(grid.n_points)
    phi2 = silhouette(Q, r, grid).values if len(Q) else np.zeros(grid.n_points)
    sup_diff = float(np.max(np.abs(phi1 - phi2)))
    factor = 1.0 + 2.0 * L * r * c ** (r - 1.0) if c > 0 else np.inf
    bound = float(factor * w1) if w1 > 0 else 0.0
    return StabilityCertificate(w1, sup_diff, float(L), float(c), bound, sup_diff <= bound + tol)


def distance_report(D1, D2, q: float, cert: StabilityCertificate | None = None) -> str:
    dist, match = wasserstein(D1, D2, q)
    rec = {"q": q, "distance": dist, "matching": [list(p) for p in match.pairs]}
    if cert is not None:
        rec["certificate"] = cert.to_dict()
    return json.dumps(rec, indent=2)
