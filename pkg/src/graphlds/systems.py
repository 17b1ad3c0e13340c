"""Ground-truth system ensembles, trajectory simulation, and Grammian algebra.

Covers the system-dependent quantities the error analysis depends on:
per-node controllability Grammians and their horizon aggregates, the
cross-node dispersion of those aggregates, the spectral norm of the
block-Toeplitz noise-to-state operator, and the two upper bounds on the
dispersion (Frobenius/Poincare via the Fiedler value, and total
variation via the Cheeger constant).
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from graphlds.graphs import Graph, spectrum
from graphlds.geometry import cheeger_exact_small

RNG_SCHEME = "numpy PCG64, SeedSequence([seed, node_index])"


@dataclass(frozen=True)
class PiecewiseField:
    """Three-group piecewise-constant scalar field; s is the target max jump."""

    s: float


@dataclass(frozen=True)
class SmoothField:
    """Separable cosine field on the integer lattice index; s scales amplitude."""

    s: float
    omega: float


@dataclass(frozen=True)
class SystemEnsemble:
    """The m true d x d system matrices plus the scalar field behind them."""

    d: int
    matrices: np.ndarray  # (m, d, d)
    beta_field: np.ndarray | None = None
    template: str = "custom"
    flags: tuple = ()

    @property
    def m(self) -> int:
        return self.matrices.shape[0]

    def rho_max(self) -> float:
        """Largest spectral norm across the ensemble."""
        return float(max(np.linalg.norm(A, 2) for A in self.matrices))

    def to_json(self) -> str:
        return json.dumps(
            {
                "d": self.d,
                "template": self.template,
                "beta_field": None if self.beta_field is None else list(map(float, self.beta_field)),
                "matrices": [A.tolist() for A in self.matrices],
            }
        )

    @staticmethod
    def from_json(text: str) -> "SystemEnsemble":
        payload = json.loads(text)
        return SystemEnsemble(
            d=payload["d"],
            matrices=np.asarray(payload["matrices"], dtype=float),
            beta_field=None if payload.get("beta_field") is None else np.asarray(payload["beta_field"], dtype=float),
            template=payload.get("template", "custom"),
        )


class FieldError(ValueError):
    """Requested scalar field cannot be realized on the given graph."""


def _max_edge_jump(beta: np.ndarray, g: Graph) -> float:
    if not g.edges:
        return 0.0
    return float(max(abs(beta[u - 1] - beta[v - 1]) for (u, v) in g.edges))


def gen_ground_truth(g: Graph, field_spec, seed: int = 0) -> SystemEnsemble:
    """Generate the 2x2 template ensemble A_l = [[beta_l, 0.1], [0, 0.6]].

    Piecewise fields sort nodes along the Fiedler vector and cut into
    three contiguous, graph-coherent groups with raw values {s, 0, -s};
    smooth fields evaluate s cos(omega t1) cos(omega t2) with
    t1 = l mod floor(sqrt(m)), t2 = floor(l / floor(sqrt(m))) on the
    0-based node index.  The field is then rescaled so the maximal jump
    across the edges equals s; a constant smooth field (omega = 0) is
    left as-is since no rescale can introduce jumps.
    """
    m = g.m
    flags = []
    if isinstance(field_spec, PiecewiseField):
        s = float(field_spec.s)
        if s < 0:
            raise FieldError(f"jump size must be >= 0, got {s}")
        spec = spectrum(g)
        order = np.argsort(spec.fiedler_vector, kind="stable")
        beta = np.zeros(m)
        for block, value in zip(np.array_split(order, 3), (s, 0.0, -s)):
            beta[block] = value
        jump = _max_edge_jump(beta, g)
        if s > 0:
            if jump == 0.0:
                raise FieldError("cannot realize a positive jump: the field is constant on this graph")
            beta *= s / jump
    elif isinstance(field_spec, SmoothField):
        s = float(field_spec.s)
        if s < 0:
            raise FieldError(f"amplitude must be >= 0, got {s}")
        root = max(1, math.isqrt(m))
        idx = np.arange(m)
        beta = s * np.cos(field_spec.omega * (idx % root)) * np.cos(field_spec.omega * (idx // root))
        jump = _max_edge_jump(beta, g)
        if jump > 0 and s > 0:
            beta *= s / jump
        elif s > 0:
            flags.append("constant_field_no_rescale")
    else:
        raise FieldError(f"unknown field spec {field_spec!r}")

    matrices = np.zeros((m, 2, 2))
    matrices[:, 0, 0] = beta
    matrices[:, 0, 1] = 0.1
    matrices[:, 1, 1] = 0.6
    return SystemEnsemble(d=2, matrices=matrices, beta_field=beta, template="paper2x2", flags=tuple(flags))


@dataclass(frozen=True)
class TrajectoryPanel:
    """Per-node state sequences x_{l,0..T_total}; immutable after creation."""

    m: int
    d: int
    T_total: int
    states: np.ndarray  # (m, T_total + 1, d)
    noise_seed: int | None = None
    meta: dict = field(default_factory=dict)

    def slice(self, t0: int, t1: int) -> "TrajectoryPanel":
        """Sub-panel over state indices t0..t1 inclusive."""
        if not (0 <= t0 < t1 <= self.T_total):
            raise ValueError(f"slice [{t0}, {t1}] outside panel range [0, {self.T_total}]")
        return TrajectoryPanel(
            m=self.m,
            d=self.d,
            T_total=t1 - t0,
            states=self.states[:, t0 : t1 + 1, :],
            noise_seed=self.noise_seed,
            meta={**self.meta, "slice": (t0, t1)},
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ",".join(f"x{i + 1}" for i in range(self.d))
        buf.write(f"node,t,{cols}\n")
        for l in range(self.m):
            for t in range(self.T_total + 1):
                vals = ",".join(repr(float(v)) for v in self.states[l, t])
                buf.write(f"{l + 1},{t},{vals}\n")
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "TrajectoryPanel":
        lines = [ln for ln in text.strip().splitlines() if ln]
        header = lines[0].split(",")
        d = len(header) - 2
        rows = [ln.split(",") for ln in lines[1:]]
        m = max(int(r[0]) for r in rows)
        T_total = max(int(r[1]) for r in rows)
        states = np.zeros((m, T_total + 1, d))
        for r in rows:
            states[int(r[0]) - 1, int(r[1])] = [float(v) for v in r[2:]]
        return TrajectoryPanel(m=m, d=d, T_total=T_total, states=states)


def simulate_panel(
    e: SystemEnsemble,
    T_total: int,
    seed: int,
    noise_scale: float = 1.0,
    x0: np.ndarray | None = None,
) -> TrajectoryPanel:
    """Simulate x_{l,t+1} = A_l x_{l,t} + eta with iid standard normal eta.

    Every node draws from its own substream keyed by (seed, node), so
    panels are reproducible and nodes can be simulated independently.
    ``noise_scale`` and ``x0`` exist as test hooks (zero-noise runs,
    forced initial states); production panels start at x_0 = 0.
    """
    if T_total < 1:
        raise ValueError(f"T_total must be >= 1, got {T_total}")
    m, d = e.m, e.d
    states = np.zeros((m, T_total + 1, d))
    if x0 is not None:
        states[:, 0, :] = np.asarray(x0, dtype=float)
    for l in range(m):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), l]))
        noise = noise_scale * rng.standard_normal((T_total, d))
        A = e.matrices[l]
        x = states[l, 0].copy()
        for t in range(T_total):
            x = A @ x + noise[t]
            states[l, t + 1] = x
    meta = {"rng": RNG_SCHEME, "noise_scale": noise_scale, "forced_x0": x0 is not None}
    return TrajectoryPanel(m=m, d=d, T_total=T_total, states=states, noise_seed=int(seed), meta=meta)


def one_step_pred_mse(matrices: np.ndarray, panel: TrajectoryPanel) -> float:
    """Mean squared one-step-ahead error of x -> A_l x over a panel's pairs."""
    X = panel.states[:, :-1, :]  # (m, T, d)
    Y = panel.states[:, 1:, :]
    pred = np.einsum("lij,ltj->lti", matrices, X)
    return float(np.sum((pred - Y) ** 2) / (panel.m * panel.T_total))


def grammian(A: np.ndarray, t: int) -> np.ndarray:
    """Controllability Grammian sum_{k=0}^{t} A^k (A^k)^T."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    G = np.eye(d)
    P = np.eye(d)
    for _ in range(t):
        P = A @ P
        G = G + P @ P.T
    return G


def grammian_aggregate(A: np.ndarray, T: int) -> np.ndarray:
    """Horizon aggregate sum_{t=1}^{T} Gamma_{t-1}(A) = sum_{k<T} (T-k) A^k (A^k)^T."""
    d = A.shape[0]
    G = np.zeros((d, d))
    P = np.eye(d)
    for k in range(T):
        G += (T - k) * (P @ P.T)
        P = A @ P
    return G


@dataclass(frozen=True)
class GrammianBundle:
    """Per-node Grammian aggregates, their mean, dispersion, and beta."""

    T: int
    G: np.ndarray  # (m, d, d)
    G_bar: np.ndarray  # (d, d)
    delta_G: float
    beta: float

    def trace_sum(self) -> float:
        """sum over nodes of Tr(G_l), i.e. the full Grammian trace budget."""
        return float(np.trace(self.G, axis1=1, axis2=2).sum())

    def diag_max(self) -> float:
        """max over nodes and coordinates of the aggregate's diagonal."""
        return float(np.diagonal(self.G, axis1=1, axis2=2).max())


def _toeplitz_apply(A: np.ndarray, X: np.ndarray) -> np.ndarray:
    # y_i = sum_{j<=i} A^{i-j} x_j via the forward recursion s <- A s + x_i
    Y = np.empty_like(X)
    s = np.zeros(A.shape[0])
    for i in range(X.shape[0]):
        s = A @ s + X[i]
        Y[i] = s
    return Y


def _toeplitz_apply_t(A: np.ndarray, Z: np.ndarray) -> np.ndarray:
    W = np.empty_like(Z)
    r = np.zeros(A.shape[0])
    for i in range(Z.shape[0] - 1, -1, -1):
        r = A.T @ r + Z[i]
        W[i] = r
    return W


def toeplitz_operator_dense(A: np.ndarray, T: int) -> np.ndarray:
    """Dense dT x dT lower-block-triangular operator with blocks A^{i-j}."""
    d = A.shape[0]
    M = np.zeros((d * T, d * T))
    P = np.eye(d)
    for k in range(T):
        for i in range(k, T):
            M[i * d : (i + 1) * d, (i - k) * d : (i - k + 1) * d] = P
        P = A @ P
    return M


def toeplitz_spectral_norm(A: np.ndarray, T: int, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Spectral norm of the block-Toeplitz operator, matrix free.

    Krylov (Lanczos) iteration on the PSD normal operator built from the
    forward/adjoint recursions.  Plain power iteration stalls when the
    top of the spectrum is clustered, which happens routinely for
    near-scalar stable systems, so the Krylov variant is required to
    certify tight relative accuracy.
    """
    import scipy.sparse.linalg as spla

    d = A.shape[0]
    n = T * d

    def normal_apply(x):
        return _toeplitz_apply_t(A, _toeplitz_apply(A, x.reshape(T, d))).ravel()

    if n <= 8:
        M = np.column_stack([normal_apply(e) for e in np.eye(n)])
        return math.sqrt(max(float(np.linalg.eigvalsh(M)[-1]), 0.0))
    op = spla.LinearOperator((n, n), matvec=normal_apply, dtype=float)
    rng = np.random.default_rng(0xA11CE)
    v0 = rng.standard_normal(n)
    try:
        lam = spla.eigsh(op, k=1, which="LA", v0=v0, tol=tol, maxiter=max_iter, return_eigenvectors=False)[0]
    except spla.ArpackNoConvergence as exc:  # pragma: no cover - defensive
        if exc.eigenvalues.size:
            lam = exc.eigenvalues[-1]
        else:
            raise
    return math.sqrt(max(float(lam), 0.0))


def grammian_bundle(e: SystemEnsemble, T: int) -> GrammianBundle:
    """Aggregate Grammians, their entrywise dispersion, and beta.

    The dispersion is the largest (over matrix entries) root sum of
    squared deviations of the per-node aggregates from their mean; beta
    is the largest spectral norm of the per-node block-Toeplitz
    noise-to-state operators.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    G = np.stack([grammian_aggregate(A, T) for A in e.matrices])
    G_bar = G.mean(axis=0)
    delta_G = float(np.sqrt(((G - G_bar) ** 2).sum(axis=0)).max())
    beta = max(toeplitz_spectral_norm(A, T) for A in e.matrices)
    return GrammianBundle(T=T, G=G, G_bar=G_bar, delta_G=delta_G, beta=float(beta))


def grammian_lipschitz_factor(rho: float, T: int) -> tuple[float, float]:
    """Entrywise Lipschitz factor of the Grammian aggregate in the system matrix.

    Returns the exact value 2 sum_{s=1}^{T-1} (T-s) s rho^(2s-1) and its
    closed-form majorant 2 rho T / (1 - rho^2)^2.
    """
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    s = np.arange(1, T)
    exact = float(2.0 * np.sum((T - s) * s * rho ** (2 * s - 1)))
    closed = 2.0 * rho * T / (1.0 - rho * rho) ** 2
    return exact, closed


@dataclass(frozen=True)
class DispersionBounds:
    delta_G: float
    frobenius_bound: float
    tv_cheeger_bound: float | None
    rho_max: float
    lipschitz_factor: float


def deltaG_bounds(e: SystemEnsemble, g: Graph, T: int) -> DispersionBounds:
    """Upper bounds on the Grammian dispersion from edgewise variation.

    The Frobenius/Poincare route divides the root sum of squared edge
    differences by the square root of the Fiedler value; the TV/Cheeger
    route (exact Cheeger constant, so only for m <= 20) divides the
    total entrywise edge variation by the Cheeger constant.
    """
    rho = e.rho_max()
    if rho >= 1.0:
        raise ValueError(f"ensemble is not uniformly stable: rho_max={rho:.4f} >= 1")
    lip, _ = grammian_lipschitz_factor(rho, T)
    spec = spectrum(g)
    frob_var = math.sqrt(sum(np.sum((e.matrices[u - 1] - e.matrices[v - 1]) ** 2) for (u, v) in g.edges))
    frob_bound = lip / math.sqrt(spec.fiedler) * frob_var if spec.fiedler > 0 else math.inf
    tv_bound = None
    if 2 <= g.m <= 20:
        tv_var = sum(float(np.abs(e.matrices[u - 1] - e.matrices[v - 1]).sum()) for (u, v) in g.edges)
        h = cheeger_exact_small(g)
        tv_bound = lip / h * tv_var if h > 0 else math.inf
    bundle = grammian_bundle(e, T)
    return DispersionBounds(
        delta_G=bundle.delta_G,
        frobenius_bound=frob_bound,
        tv_cheeger_bound=tv_bound,
        rho_max=rho,
        lipschitz_factor=lip,
    )
