"""Graph-geometry scalars controlling joint-estimation difficulty.

Inverse scaling factors (extreme column/row norms of the incidence
pseudoinverse), compatibility factors of the lifted difference operator
D kron I_{d^2} with their degree-based lower bound and an exact
small-instance oracle, and exact Cheeger constants by exhaustive
enumeration.  All quantities are orientation-invariant; the oracle
implementations operate on a raw incidence array so that invariance can
be checked directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from graphlds.graphs import Graph, GraphSpectrum, GraphError, incidence


@dataclass(frozen=True)
class ScalingFactors:
    """Extreme column/row norms of D^+ with their Fiedler-value bounds.

    ``mu`` is the largest column norm (columns indexed by edges),
    ``mu_prime`` the largest row norm (rows indexed by nodes).  Both are
    dominated by simple functions of the algebraic connectivity, kept
    here so the slack can be inspected.
    """

    mu: float
    mu_prime: float
    fiedler_bound_mu: float
    fiedler_bound_mu_prime: float


def scaling_factors(spec: GraphSpectrum) -> ScalingFactors:
    if not spec.connected:
        raise GraphError("inverse scaling factors need a connected graph")
    mu, mu_prime = _inverse_scaling_from_pinv(spec.pseudoinverse_D)
    lam = spec.fiedler
    return ScalingFactors(
        mu=mu,
        mu_prime=mu_prime,
        fiedler_bound_mu=min(math.sqrt(2.0) / lam, 1.0 / math.sqrt(lam)) if lam > 0 else math.inf,
        fiedler_bound_mu_prime=1.0 / math.sqrt(lam) if lam > 0 else math.inf,
    )


def _inverse_scaling_from_pinv(D_pinv: np.ndarray) -> tuple[float, float]:
    if D_pinv.shape[1] == 0:
        return 0.0, 0.0
    col_norms = np.linalg.norm(D_pinv, axis=0)
    row_norms = np.linalg.norm(D_pinv, axis=1)
    return float(col_norms.max()), float(row_norms.max())


def edges_appearing(T, d: int, num_edges: int) -> frozenset:
    """Edges whose coordinate block intersects the index set T.

    Indices are 1-based over [num_edges * d^2]; edge j owns the block
    (j-1)*d^2 + 1 .. j*d^2.
    """
    d2 = d * d
    out = set()
    for i in T:
        if not (1 <= i <= num_edges * d2):
            raise ValueError(f"index {i} out of range [1, {num_edges * d2}]")
        out.add((i - 1) // d2 + 1)
    return frozenset(out)


@dataclass(frozen=True)
class CompatReport:
    """Compatibility factor of D kron I_{d^2} on an index subset."""

    set_T: frozenset
    T_E: frozenset
    lower_bound: float
    exact_value: float | None = None


def compat_lower_bound(g: Graph, T, d: int) -> CompatReport:
    """Degree-based lower bound 1 / (2 min{sqrt(max degree), sqrt(|T_E|)}).

    The empty set has compatibility factor 1 by definition.
    """
    T = frozenset(T)
    if not T:
        return CompatReport(set_T=T, T_E=frozenset(), lower_bound=1.0)
    T_E = edges_appearing(T, d, g.n_edges)
    max_deg = int(g.degrees().max())
    bound = 1.0 / (2.0 * min(math.sqrt(max_deg), math.sqrt(len(T_E))))
    return CompatReport(set_T=T, T_E=T_E, lower_bound=bound)


def compat_exact_small(g: Graph, T, d: int) -> float:
    """Exact compatibility factor by exhaustive sign-pattern maximization.

    Over the unit sphere, sup ||(D~ theta)_T||_1 equals the maximum of
    ||(D~_T)^T sigma||_2 over sign vectors sigma, which is a finite
    maximization; the factor is sqrt(|T|) divided by that maximum.
    Only feasible for small |T| (2^|T| patterns) and small m d^2.
    """
    T = frozenset(T)
    if not T:
        return 1.0
    if len(T) > 14:
        raise ValueError(f"|T|={len(T)} too large for exhaustive sign patterns (max 14)")
    if g.m * d * d > 200:
        raise ValueError(f"m*d^2={g.m * d * d} too large for the exact oracle (max 200)")
    D = incidence(g).toarray()
    return _compat_exact_from_incidence(D, sorted(T), d)


def _compat_exact_from_incidence(D: np.ndarray, T_sorted, d: int) -> float:
    ne, m = D.shape
    d2 = d * d
    rows = np.zeros((len(T_sorted), m * d2))
    for r, i in enumerate(T_sorted):
        j = (i - 1) // d2  # 0-based edge
        coord = (i - 1) % d2
        for node in range(m):
            if D[j, node] != 0.0:
                rows[r, node * d2 + coord] = D[j, node]
    t = len(T_sorted)
    # sigma and -sigma give the same norm; pin the first sign
    n_pat = 1 << (t - 1)
    bits = ((np.arange(n_pat)[:, None] >> np.arange(t - 1)[None, :]) & 1).astype(float)
    sigmas = np.hstack([np.ones((n_pat, 1)), 2.0 * bits - 1.0])
    norms = np.linalg.norm(sigmas @ rows, axis=1)
    return float(math.sqrt(t) / norms.max())


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


def cheeger_exact_small(g: Graph, chunk: int = 1 << 18) -> float:
    """Exact Cheeger constant min |boundary(S)| / |S| over |S| <= m/2.

    Exhaustive over all subsets, so only feasible up to m = 20.
    """
    m = g.m
    if m > 20:
        raise ValueError(f"m={m} too large for exhaustive Cheeger (max 20)")
    if m < 2:
        raise ValueError("Cheeger constant needs at least 2 nodes")
    best = math.inf
    half = m // 2  # integer |S| <= m/2 is |S| <= floor(m/2)
    us = np.array([u - 1 for (u, v) in g.edges], dtype=np.uint64)
    vs = np.array([v - 1 for (u, v) in g.edges], dtype=np.uint64)
    total = 1 << m
    for start in range(1, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        sizes = _popcount(masks)
        keep = (sizes >= 1) & (sizes <= half)
        if not keep.any():
            continue
        masks, sizes = masks[keep], sizes[keep]
        cut = np.zeros(masks.shape[0], dtype=np.int64)
        for u, v in zip(us, vs):
            cut += (((masks >> u) ^ (masks >> v)) & np.uint64(1)).astype(np.int64)
        ratios = cut / sizes.astype(float)
        best = min(best, float(ratios.min()))
    return best
