"""Graph construction and incidence/Laplacian spectral algebra.

Graphs are stored as canonically oriented edge lists (low index to high
index, 1-based node labels). The incidence matrix, combinatorial
Laplacian, its pseudoinverse and the Fiedler value are derived here;
everything downstream (scaling factors, compatibility factors, penalty
operators) is built on top of these.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

EARTH_RADIUS_KM = 6371.0

# eigenvalue below this (times m) counts as zero when inverting L
_EIG_ZERO_RTOL = 1e-9


class GraphError(ValueError):
    """Invalid graph specification or operation on an unsuitable graph."""


@dataclass(frozen=True)
class Graph:
    """Undirected graph as a canonically oriented edge list.

    Nodes are labeled 1..m.  Every stored edge (u, v) satisfies u < v;
    there are no duplicates and no self-loops.
    """

    m: int
    edges: tuple[tuple[int, int], ...]
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1:
            raise GraphError(f"node count must be >= 1, got {self.m}")
        seen = set()
        for (u, v) in self.edges:
            if not (1 <= u < v <= self.m):
                raise GraphError(f"edge ({u}, {v}) violates 1 <= u < v <= m={self.m}")
            if (u, v) in seen:
                raise GraphError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=int)
        for (u, v) in self.edges:
            deg[u - 1] += 1
            deg[v - 1] += 1
        return deg

    def is_connected(self) -> bool:
        if self.m == 1:
            return True
        adj = [[] for _ in range(self.m)]
        for (u, v) in self.edges:
            adj[u - 1].append(v - 1)
            adj[v - 1].append(u - 1)
        seen = [False] * self.m
        stack = [0]
        seen[0] = True
        count = 1
        while stack:
            node = stack.pop()
            for nb in adj[node]:
                if not seen[nb]:
                    seen[nb] = True
                    count += 1
                    stack.append(nb)
        return count == self.m

    def to_json(self) -> str:
        payload = {"m": self.m, "kind": self.kind, "edges": [list(e) for e in self.edges]}
        payload.update({k: v for k, v in self.params.items() if k in ("seed", "p", "nx", "ny", "k", "hub")})
        return json.dumps(payload)

    @staticmethod
    def from_json(text: str) -> "Graph":
        payload = json.loads(text)
        edges = tuple(tuple(e) for e in payload["edges"])
        params = {k: v for k, v in payload.items() if k not in ("m", "kind", "edges")}
        return Graph(m=payload["m"], edges=edges, kind=payload.get("kind", "custom"), params=params)


def _canonical(edges) -> tuple[tuple[int, int], ...]:
    out = sorted({(min(u, v), max(u, v)) for (u, v) in edges})
    return tuple(out)


def path_graph(m: int) -> Graph:
    """Chain graph 1-2-...-m."""
    return Graph(m, tuple((i, i + 1) for i in range(1, m)), kind="path")


def star_graph(m: int, hub: int = 1) -> Graph:
    """Star with the given hub connected to all other nodes."""
    if not (1 <= hub <= m):
        raise GraphError(f"hub {hub} out of range for m={m}")
    edges = _canonical((hub, v) for v in range(1, m + 1) if v != hub)
    return Graph(m, edges, kind="star", params={"hub": hub})


def complete_graph(m: int) -> Graph:
    return Graph(m, tuple((u, v) for u in range(1, m + 1) for v in range(u + 1, m + 1)), kind="complete")


def grid2d_graph(nx: int, ny: int) -> Graph:
    """2D grid with nx columns and ny rows; node id = row * nx + col + 1."""
    if nx < 1 or ny < 1:
        raise GraphError("grid dimensions must be >= 1")
    edges = []
    for iy in range(ny):
        for ix in range(nx):
            node = iy * nx + ix + 1
            if ix + 1 < nx:
                edges.append((node, node + 1))
            if iy + 1 < ny:
                edges.append((node, node + nx))
    return Graph(nx * ny, _canonical(edges), kind="grid2d", params={"nx": nx, "ny": ny})


def erdos_renyi_graph(m: int, p: float, seed: int) -> Graph:
    """G(m, p): each unordered pair drawn independently with probability p.

    Deterministic for a fixed seed.  The draw may come out disconnected;
    callers that need connectivity should check and resample (seed + 1).
    """
    if not (0.0 < p <= 1.0):
        raise GraphError(f"edge probability must be in (0, 1], got {p}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), m]))
    edges = []
    for u in range(1, m + 1):
        draws = rng.random(m - u)
        for j, r in enumerate(draws):
            if r < p:
                edges.append((u, u + 1 + j))
    return Graph(m, tuple(edges), kind="erdos_renyi", params={"p": p, "seed": int(seed)})


def connected_erdos_renyi(m: int, p: float, seed: int, max_resample: int = 10) -> Graph:
    """ER draw resampled with seed+1, ... until connected (up to a cap)."""
    for attempt in range(max_resample + 1):
        g = erdos_renyi_graph(m, p, seed + attempt)
        if g.is_connected():
            return g
    raise GraphError(f"no connected ER draw in {max_resample + 1} attempts from seed {seed}")


def haversine_km(lat1, lon1, lat2, lon2) -> float:
    """Great-circle distance in km on a spherical Earth."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def knn_graph(coords, k: int) -> Graph:
    """Undirected union of each node's k nearest neighbors (great-circle).

    Ties on distance are broken toward the smaller node index, so the
    result is deterministic even with duplicate coordinates.
    """
    coords = [(float(lat), float(lon)) for (lat, lon) in coords]
    m = len(coords)
    if k < 1:
        raise GraphError(f"k must be >= 1, got {k}")
    if k >= m:
        raise GraphError(f"k={k} must be < number of nodes m={m}")
    for (lat, lon) in coords:
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise GraphError("coordinates must be finite")
    edges = set()
    for i in range(m):
        dists = [(haversine_km(*coords[i], *coords[j]), j) for j in range(m) if j != i]
        dists.sort()  # (distance, index): index breaks ties
        for (_, j) in dists[:k]:
            edges.add((min(i, j) + 1, max(i, j) + 1))
    return Graph(m, _canonical(edges), kind="knn", params={"k": k})


def build_graph(kind: str, **params) -> Graph:
    """Dispatch on the graph-kind tag.

    Kinds: path(m) | grid2d(nx, ny) | star(m[, hub]) | complete(m) |
    erdos_renyi(m, p, seed) | knn(coords, k) | custom(m, edges).
    """
    if kind == "path":
        return path_graph(params["m"])
    if kind == "star":
        return star_graph(params["m"], params.get("hub", 1))
    if kind == "complete":
        return complete_graph(params["m"])
    if kind == "grid2d":
        nx, ny = params["nx"], params["ny"]
        if "m" in params and params["m"] != nx * ny:
            raise GraphError(f"grid dims {nx}x{ny} do not multiply to m={params['m']}")
        return grid2d_graph(nx, ny)
    if kind == "erdos_renyi":
        return erdos_renyi_graph(params["m"], params["p"], params["seed"])
    if kind == "knn":
        return knn_graph(params["coords"], params["k"])
    if kind == "custom":
        return Graph(params["m"], _canonical(params["edges"]), kind="custom")
    raise GraphError(f"unknown graph kind {kind!r}")


def incidence(g: Graph) -> sp.csr_matrix:
    """Signed edge-node incidence matrix, |E| x m.

    Row j for edge (u, v) holds -1 at u and +1 at v; rows follow the
    edge-list order, so D^T D is the combinatorial Laplacian.
    """
    ne = g.n_edges
    rows = np.repeat(np.arange(ne), 2)
    cols = np.empty(2 * ne, dtype=int)
    data = np.empty(2 * ne)
    for j, (u, v) in enumerate(g.edges):
        cols[2 * j], cols[2 * j + 1] = u - 1, v - 1
        data[2 * j], data[2 * j + 1] = -1.0, 1.0
    return sp.csr_matrix((data, (rows, cols)), shape=(ne, g.m))


def laplacian(g: Graph) -> np.ndarray:
    """Dense combinatorial Laplacian (degree matrix minus adjacency)."""
    L = np.zeros((g.m, g.m))
    for (u, v) in g.edges:
        L[u - 1, u - 1] += 1.0
        L[v - 1, v - 1] += 1.0
        L[u - 1, v - 1] -= 1.0
        L[v - 1, u - 1] -= 1.0
    return L


@dataclass(frozen=True)
class GraphSpectrum:
    """Laplacian eigendecomposition and derived pseudoinverse algebra.

    ``eigenvalues`` are nonincreasing, so the Fiedler value (algebraic
    connectivity) is the next-to-last entry; it is positive iff the
    graph is connected.  ``pseudoinverse_D`` is the m x |E| Moore-Penrose
    pseudoinverse of the incidence matrix, computed as L^+ D^T.
    """

    eigenvalues: np.ndarray
    fiedler: float
    fiedler_vector: np.ndarray
    pseudoinverse_D: np.ndarray
    laplacian_pinv: np.ndarray
    connected: bool


def spectrum(g: Graph) -> GraphSpectrum:
    """Symmetric eigendecomposition of L = D^T D plus D^+ = L^+ D^T.

    Disconnected graphs are not an error here: they come back with
    ``fiedler == 0`` and ``connected=False`` so callers can decide.
    """
    L = laplacian(g)
    evals, evecs = np.linalg.eigh(L)  # ascending
    zero_tol = _EIG_ZERO_RTOL * max(g.m, 1)
    if abs(evals[0]) > zero_tol:
        raise GraphError(f"Laplacian smallest eigenvalue {evals[0]:.3e} not zero within {zero_tol:.1e}")
    connected = bool(g.m == 1 or evals[1] > zero_tol)
    fiedler = float(evals[1]) if g.m > 1 else 0.0
    if not connected:
        fiedler = 0.0
    fvec = evecs[:, 1].copy() if g.m > 1 else np.zeros(1)
    # fix the sign so the ordering used downstream is reproducible
    nz = np.flatnonzero(np.abs(fvec) > 1e-12)
    if nz.size and fvec[nz[0]] < 0:
        fvec = -fvec
    inv = np.where(evals > zero_tol, 1.0 / np.where(evals > zero_tol, evals, 1.0), 0.0)
    L_pinv = (evecs * inv) @ evecs.T
    D = incidence(g)
    D_pinv = L_pinv @ D.T.toarray() if g.n_edges else np.zeros((g.m, 0))
    return GraphSpectrum(
        eigenvalues=np.ascontiguousarray(evals[::-1]),
        fiedler=fiedler,
        fiedler_vector=fvec,
        pseudoinverse_D=D_pinv,
        laplacian_pinv=L_pinv,
        connected=connected,
    )
