"""Vectorized block design and the penalized least-squares estimators.

The central solver fits the graph total-variation penalized estimator

    min_a  (1/2m) ||x_tilde - Q a||_2^2 + lambda ||(D kron I_{d^2}) a||_1

by operator splitting with an auxiliary edge-difference variable: the
a-update is a cached sparse factorization of the block-Kronecker normal
matrix, the z-update is an entrywise soft threshold, and every returned
fit carries a KKT certificate.  Baselines (per-node and pooled least
squares, Laplacian smoothing, group lasso on deviations from the pooled
fit) and the validation-driven regularization path live here too.

Internally a stacked coefficient vector is kept as an (m, d^2) array
whose row l is vec(A_l) in column-major order; the difference operator
then acts by a plain sparse matrix product with the incidence matrix.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from graphlds.graphs import Graph, GraphError, incidence, laplacian, spectrum
from graphlds.systems import TrajectoryPanel, one_step_pred_mse


class EstimatorError(ValueError):
    """Invalid estimator inputs."""


def vec_rows(mats: np.ndarray) -> np.ndarray:
    """Stack (m, d, d) matrices into (m, d^2) rows of column-major vecs."""
    m, d, _ = mats.shape
    return mats.transpose(0, 2, 1).reshape(m, d * d)


def unvec_rows(amat: np.ndarray, d: int) -> np.ndarray:
    """Inverse of vec_rows."""
    m = amat.shape[0]
    return amat.reshape(m, d, d).transpose(0, 2, 1)


@dataclass(frozen=True)
class DesignSystem:
    """Per-node regressor/response blocks of the vectorized linear model.

    ``X[l]`` holds the d x T regressor columns and ``Xt[l]`` the columns
    one step ahead, so the implied design is Q = blkdiag(X_l^T kron I_d)
    with response the stacked vec(Xt_l).  The per-node Gram and cross
    moments are cached since every estimator consumes them.
    """

    m: int
    d: int
    T: int
    X: np.ndarray  # (m, d, T)
    Xt: np.ndarray  # (m, d, T)
    gram: np.ndarray  # (m, d, d): X_l X_l^T
    cross: np.ndarray  # (m, d, d): Xt_l X_l^T

    def dense_Q(self) -> np.ndarray:
        """Materialize Q explicitly; only for small instances and tests."""
        blocks = [np.kron(self.X[l].T, np.eye(self.d)) for l in range(self.m)]
        Q = np.zeros((self.m * self.d * self.T, self.m * self.d * self.d))
        r, c = 0, 0
        for B in blocks:
            Q[r : r + B.shape[0], c : c + B.shape[1]] = B
            r += B.shape[0]
            c += B.shape[1]
        return Q

    def response(self) -> np.ndarray:
        """Stacked response vector (column-major vec per node)."""
        return np.concatenate([self.Xt[l].flatten(order="F") for l in range(self.m)])

    def response_sq_norm(self) -> float:
        return float(np.sum(self.Xt**2))


def build_design(panel: TrajectoryPanel, t_start: int = 0, t_end: int | None = None) -> DesignSystem:
    """Design over state indices [t_start, t_end]: regressors are the
    states at t_start..t_end-1 and responses the states one step later."""
    if t_end is None:
        t_end = panel.T_total
    if not (0 <= t_start < t_end <= panel.T_total):
        raise EstimatorError(f"range [{t_start}, {t_end}] invalid for panel with T_total={panel.T_total}")
    X = np.ascontiguousarray(panel.states[:, t_start:t_end, :].transpose(0, 2, 1))
    Xt = np.ascontiguousarray(panel.states[:, t_start + 1 : t_end + 1, :].transpose(0, 2, 1))
    gram = np.einsum("lit,ljt->lij", X, X)
    cross = np.einsum("lit,ljt->lij", Xt, X)
    return DesignSystem(m=panel.m, d=panel.d, T=t_end - t_start, X=X, Xt=Xt, gram=gram, cross=cross)


@dataclass(frozen=True)
class SolverOptions:
    rho: float = 1.0
    max_iter: int = 5000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    kkt_tol: float = 1e-6
    over_relax: float = 1.0
    adapt_rho: bool = True
    adapt_every: int = 25
    max_rho_adapt: int = 10


@dataclass(frozen=True)
class FitResult:
    """Estimate plus solver certificate for one fit."""

    a_hat: np.ndarray  # (m * d^2,), per-node column-major vecs
    m: int
    d: int
    lambda_: float
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    kkt_gap: float
    method: str
    converged: bool = True
    flags: tuple = ()

    def matrices(self) -> np.ndarray:
        return unvec_rows(self.a_hat.reshape(self.m, self.d * self.d), self.d)

    def to_json(self) -> str:
        return json.dumps(
            {
                "method": self.method,
                "lambda": self.lambda_,
                "a_hat": [A.tolist() for A in self.matrices()],  # row-major per node
                "objective": self.objective,
                "iterations": self.iterations,
                "primal_residual": self.primal_residual,
                "dual_residual": self.dual_residual,
                "kkt_gap": self.kkt_gap,
                "converged": self.converged,
                "flags": list(self.flags),
            }
        )


def tv_objective(ds: DesignSystem, g: Graph, amat: np.ndarray, lam: float) -> float:
    """(1/2m) squared residual plus lambda times the edge-difference l1 norm."""
    mats = unvec_rows(amat, ds.d)
    resid = ds.Xt - np.einsum("lij,ljt->lit", mats, ds.X)
    ls = float(np.sum(resid**2)) / (2.0 * ds.m)
    if not g.edges:
        return ls
    D = incidence(g)
    return ls + lam * float(np.abs(D @ amat).sum())


def _grad_mat(ds: DesignSystem, amat: np.ndarray) -> np.ndarray:
    # rows vec(A_l G_l - H_l) / m: the gradient of the least-squares term
    mats = unvec_rows(amat, ds.d)
    return vec_rows(np.einsum("lij,ljk->lik", mats, ds.gram) - ds.cross) / ds.m


class _TVWorkspace:
    """Shared pieces for repeated TV fits on one (design, graph) pair."""

    def __init__(self, ds: DesignSystem, g: Graph):
        self.ds = ds
        self.g = g
        self.D = incidence(g)
        self.L = sp.csr_matrix(laplacian(g))
        self.qtx = vec_rows(ds.cross) / ds.m
        d = ds.d
        blocks = [sp.kron(sp.csr_matrix(ds.gram[l]), sp.identity(d)) / ds.m for l in range(ds.m)]
        self.qtq = sp.block_diag(blocks, format="csc")
        self.eye_d2 = sp.identity(d * d)
        self._factors: dict[float, object] = {}
        self.ridge_used = False

    def solve(self, rho: float):
        if rho not in self._factors:
            M = (self.qtq + rho * sp.kron(self.L, self.eye_d2)).tocsc()
            try:
                self._factors[rho] = spla.factorized(M)
            except RuntimeError:
                self.ridge_used = True
                M = M + 1e-12 * sp.identity(M.shape[0])
                self._factors[rho] = spla.factorized(M.tocsc())
        return self._factors[rho]


def _soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _kkt_gap(ds: DesignSystem, D: sp.csr_matrix, amat: np.ndarray, lam: float, dual: np.ndarray | None) -> float:
    """Smallest l-infinity slack of the stationarity inclusion.

    The candidate subgradient is the solver's scaled dual clipped into
    the unit box; entries of the edge differences within the primal
    tolerance of zero are free, which the clipped dual realizes.
    """
    grad = _grad_mat(ds, amat)
    if lam == 0.0 or dual is None:
        return float(np.abs(grad).max()) if grad.size else 0.0
    v = np.clip(dual, -1.0, 1.0)
    return float(np.abs(grad + lam * (D.T @ v)).max())


@dataclass
class _WarmState:
    amat: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    rho: float = 1.0


def _direct_ls_fit(ws: _TVWorkspace, lam: float, method: str) -> FitResult:
    ds = ws.ds
    flags = []
    mats = np.empty((ds.m, ds.d, ds.d))
    for l in range(ds.m):
        G = ds.gram[l]
        try:
            sol = np.linalg.solve(G, ds.cross[l].T).T
            if not np.all(np.isfinite(sol)):
                raise np.linalg.LinAlgError("non-finite solve")
        except np.linalg.LinAlgError:
            sol = ds.cross[l] @ np.linalg.pinv(G)
            flags.append(f"rank_deficient_node_{l + 1}")
        mats[l] = sol
    amat = vec_rows(mats)
    kkt = _kkt_gap(ds, ws.D, amat, 0.0, None)
    return FitResult(
        a_hat=amat.ravel(),
        m=ds.m,
        d=ds.d,
        lambda_=lam,
        objective=tv_objective(ds, ws.g, amat, lam),
        iterations=1,
        primal_residual=0.0,
        dual_residual=0.0,
        kkt_gap=kkt,
        method=method,
        converged=True,
        flags=tuple(flags),
    )


def fit_graph_tv(
    ds: DesignSystem,
    g: Graph,
    lam: float,
    opts: SolverOptions | None = None,
    workspace: _TVWorkspace | None = None,
    warm: _WarmState | None = None,
    return_state: bool = False,
):
    """Solve the graph-TV penalized least squares by operator splitting.

    Alternates a cached sparse solve of
    (Q^T Q / m + rho L kron I_{d^2}) a = Q^T xt / m + rho D~^T (z - u)
    with an entrywise soft threshold at lambda/rho and a scaled dual
    ascent step.  The penalty parameter is rebalanced (x2 / /2, capped)
    when the primal and dual residuals drift apart.  Iterations stop
    when both relative residuals fall below tolerance and the KKT gap
    certificate is below ``kkt_tol``; hitting the iteration cap returns
    the best iterate flagged as not converged.
    """
    if lam < 0:
        raise EstimatorError(f"lambda must be >= 0, got {lam}")
    if not g.is_connected():
        raise GraphError("graph-TV fit requires a connected graph")
    opts = opts or SolverOptions()
    ws = workspace or _TVWorkspace(ds, g)
    if lam == 0.0 and warm is None:
        fit = _direct_ls_fit(ws, 0.0, "graph_tv")
        if return_state:
            Z0 = ws.D @ fit.a_hat.reshape(ds.m, ds.d * ds.d)
            return fit, _WarmState(fit.a_hat.reshape(ds.m, ds.d * ds.d), Z0, np.zeros_like(Z0), opts.rho)
        return fit

    m, d = ds.m, ds.d
    d2 = d * d
    ne = g.n_edges
    if warm is not None:
        rho = warm.rho
        amat, Z, U = warm.amat.copy(), warm.Z.copy(), warm.U.copy()
    else:
        rho = opts.rho
        amat = np.zeros((m, d2))
        Z = np.zeros((ne, d2))
        U = np.zeros((ne, d2))
    solve = ws.solve(rho)
    alpha = opts.over_relax
    n_adapt = 0
    flags = []
    prim_rel = dual_rel = math.inf
    kkt = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        rhs = ws.qtx + rho * (ws.D.T @ (Z - U))
        amat = solve(rhs.ravel()).reshape(m, d2)
        DA = ws.D @ amat
        DA_r = alpha * DA + (1.0 - alpha) * Z if alpha != 1.0 else DA
        Z_old = Z
        Z = _soft_threshold(DA_r + U, lam / rho)
        U = U + DA_r - Z
        prim = float(np.linalg.norm(DA - Z))
        dual = rho * float(np.linalg.norm(ws.D.T @ (Z - Z_old)))
        scale_p = max(float(np.linalg.norm(DA)), float(np.linalg.norm(Z)), 1.0)
        scale_d = max(rho * float(np.linalg.norm(ws.D.T @ U)), 1.0)
        prim_rel = prim / scale_p
        dual_rel = dual / scale_d
        if prim_rel <= opts.tol_primal and dual_rel <= opts.tol_dual:
            kkt = _kkt_gap(ds, ws.D, amat, lam, rho * U / lam)
            if kkt <= opts.kkt_tol:
                break
        if opts.adapt_rho and n_adapt < opts.max_rho_adapt and it % opts.adapt_every == 0:
            if prim_rel > 10.0 * dual_rel:
                rho *= 2.0
                U /= 2.0
                solve = ws.solve(rho)
                n_adapt += 1
            elif dual_rel > 10.0 * prim_rel:
                rho /= 2.0
                U *= 2.0
                solve = ws.solve(rho)
                n_adapt += 1
    else:
        kkt = _kkt_gap(ds, ws.D, amat, lam, rho * U / lam)
        flags.append("max_iter_reached")
    if ws.ridge_used:
        flags.append("ridge_regularized")
    converged = "max_iter_reached" not in flags
    fit = FitResult(
        a_hat=amat.ravel(),
        m=m,
        d=d,
        lambda_=lam,
        objective=tv_objective(ds, g, amat, lam),
        iterations=it,
        primal_residual=prim_rel,
        dual_residual=dual_rel,
        kkt_gap=kkt,
        method="graph_tv",
        converged=converged,
        flags=tuple(flags),
    )
    if return_state:
        return fit, _WarmState(amat, Z, U, rho)
    return fit


def fit_ols_individual(ds: DesignSystem) -> FitResult:
    """Per-node least squares via the pseudoinverse (rank-deficient safe)."""
    flags = []
    mats = np.empty((ds.m, ds.d, ds.d))
    for l in range(ds.m):
        G = ds.gram[l]
        if np.linalg.matrix_rank(G, tol=1e-10 * max(1.0, float(np.abs(G).max()))) < ds.d:
            flags.append(f"rank_deficient_node_{l + 1}")
        mats[l] = ds.cross[l] @ np.linalg.pinv(G)
    amat = vec_rows(mats)
    resid = ds.Xt - np.einsum("lij,ljt->lit", mats, ds.X)
    obj = float(np.sum(resid**2)) / (2.0 * ds.m)
    kkt = float(np.abs(_grad_mat(ds, amat)).max())
    return FitResult(
        a_hat=amat.ravel(),
        m=ds.m,
        d=ds.d,
        lambda_=0.0,
        objective=obj,
        iterations=1,
        primal_residual=0.0,
        dual_residual=0.0,
        kkt_gap=kkt,
        method="ols_ind",
        flags=tuple(flags),
    )


def fit_ols_pooled(ds: DesignSystem) -> FitResult:
    """One common system matrix for all nodes, replicated."""
    G_sum = ds.gram.sum(axis=0)
    H_sum = ds.cross.sum(axis=0)
    A = H_sum @ np.linalg.pinv(G_sum)
    mats = np.broadcast_to(A, (ds.m, ds.d, ds.d)).copy()
    amat = vec_rows(mats)
    resid = ds.Xt - np.einsum("lij,ljt->lit", mats, ds.X)
    obj = float(np.sum(resid**2)) / (2.0 * ds.m)
    return FitResult(
        a_hat=amat.ravel(),
        m=ds.m,
        d=ds.d,
        lambda_=0.0,
        objective=obj,
        iterations=1,
        primal_residual=0.0,
        dual_residual=0.0,
        kkt_gap=0.0,
        method="ols_pooled",
    )


def fit_laplacian(ds: DesignSystem, g: Graph, lam: float) -> FitResult:
    """Closed-form ridge-on-the-graph fit with penalty lambda ||D~ a||_2^2."""
    if lam < 0:
        raise EstimatorError(f"lambda must be >= 0, got {lam}")
    d2 = ds.d * ds.d
    blocks = [sp.kron(sp.csr_matrix(ds.gram[l]), sp.identity(ds.d)) / ds.m for l in range(ds.m)]
    M = sp.block_diag(blocks, format="csc") + 2.0 * lam * sp.kron(sp.csr_matrix(laplacian(g)), sp.identity(d2))
    rhs = (vec_rows(ds.cross) / ds.m).ravel()
    flags = []
    M = M.tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        try:
            a = spla.spsolve(M, rhs)
            if not np.all(np.isfinite(a)):
                raise RuntimeError("singular system")
        except (RuntimeError, np.linalg.LinAlgError):
            a = spla.spsolve((M + 1e-12 * sp.identity(M.shape[0])).tocsc(), rhs)
            flags.append("ridge_regularized")
    amat = a.reshape(ds.m, d2)
    mats = unvec_rows(amat, ds.d)
    resid = ds.Xt - np.einsum("lij,ljt->lit", mats, ds.X)
    D = incidence(g)
    obj = float(np.sum(resid**2)) / (2.0 * ds.m) + lam * float(np.sum((D @ amat) ** 2))
    # normal-equation residual doubles as the certificate here
    kkt = float(np.abs(M @ a - rhs).max())
    return FitResult(
        a_hat=amat.ravel(),
        m=ds.m,
        d=ds.d,
        lambda_=lam,
        objective=obj,
        iterations=1,
        primal_residual=0.0,
        dual_residual=0.0,
        kkt_gap=kkt,
        method="laplacian",
        flags=tuple(flags),
    )


def fit_group_lasso(ds: DesignSystem, lam: float, tol: float = 1e-8, max_iter: int = 20000, return_history: bool = False):
    """Group lasso on deviations from the pooled fit.

    Writes a = a_pooled + b and penalizes lambda sum_j ||b_(.,j)||_2
    where group j collects coefficient position j across the m nodes,
    so large lambda collapses every node onto the pooled estimate.
    Solved by proximal gradient with backtracking; descent is monotone.
    """
    if lam < 0:
        raise EstimatorError(f"lambda must be >= 0, got {lam}")
    pooled = fit_ols_pooled(ds)
    pool_mat = pooled.a_hat.reshape(ds.m, ds.d * ds.d)
    B = np.zeros_like(pool_mat)
    lip = max(float(np.linalg.norm(ds.gram[l], 2)) for l in range(ds.m)) / ds.m
    step = 1.0 / max(lip, 1e-12)
    flags = []

    def smooth_val(Bm):
        mats = unvec_rows(pool_mat + Bm, ds.d)
        resid = ds.Xt - np.einsum("lij,ljt->lit", mats, ds.X)
        return float(np.sum(resid**2)) / (2.0 * ds.m)

    def penalty(Bm):
        return lam * float(np.linalg.norm(Bm, axis=0).sum())

    f_cur = smooth_val(B)
    history = [f_cur + penalty(B)]
    it = 0
    for it in range(1, max_iter + 1):
        grad = _grad_mat(ds, pool_mat + B)
        t = step
        while True:
            cand = B - t * grad
            norms = np.linalg.norm(cand, axis=0)
            shrink = np.maximum(0.0, 1.0 - (lam * t) / np.where(norms > 0, norms, 1.0))
            B_new = cand * shrink
            f_new = smooth_val(B_new)
            diff = B_new - B
            # sufficient-decrease test for the quadratic model at step t
            if f_new <= f_cur + float(np.sum(grad * diff)) + float(np.sum(diff**2)) / (2.0 * t) + 1e-15:
                break
            t /= 2.0
            if t < 1e-18:
                break
        move = float(np.linalg.norm(B_new - B))
        B = B_new
        f_cur = f_new
        history.append(f_cur + penalty(B))
        if move <= tol * max(1.0, float(np.linalg.norm(B))):
            break
    else:
        flags.append("max_iter_reached")
    amat = pool_mat + B
    obj = smooth_val(B) + penalty(B)
    fit = FitResult(
        a_hat=amat.ravel(),
        m=ds.m,
        d=ds.d,
        lambda_=lam,
        objective=obj,
        iterations=it,
        primal_residual=0.0,
        dual_residual=0.0,
        kkt_gap=0.0,
        method="group_lasso",
        converged="max_iter_reached" not in flags,
        flags=tuple(flags),
    )
    if return_history:
        return fit, history
    return fit


def lambda_max(ds: DesignSystem, g: Graph) -> float:
    """Smallest penalty at which the fully fused solution is optimal.

    At the pooled least-squares point the gradient lies in the row space
    of the difference operator, so mapping it through the transposed
    pseudoinverse gives a dual certificate; its sup norm is the path
    endpoint (fits at or above it collapse onto the pooled solution).
    """
    if not g.is_connected():
        raise GraphError("lambda_max requires a connected graph")
    if not g.edges:
        return 0.0
    pooled = fit_ols_pooled(ds)
    gmat = _grad_mat(ds, pooled.a_hat.reshape(ds.m, ds.d * ds.d))
    spec = spectrum(g)
    cert = spec.pseudoinverse_D.T @ gmat  # (|E|, d^2)
    return float(np.abs(cert).max())


@dataclass(frozen=True)
class PathResult:
    lambdas: np.ndarray
    fits: list
    selected_index: int
    selection_metric: np.ndarray

    @property
    def selected(self) -> FitResult:
        return self.fits[self.selected_index]


def lambda_grid(lam_max: float, grid_size: int, floor_ratio: float = 1e-4) -> np.ndarray:
    if grid_size < 2:
        raise EstimatorError(f"grid_size must be >= 2, got {grid_size}")
    grid_size = min(grid_size, 200)
    if lam_max <= 0:
        return np.zeros(1)
    ratio = floor_ratio ** (1.0 / (grid_size - 1))
    return lam_max * ratio ** np.arange(grid_size)


def regularization_path(
    ds: DesignSystem,
    g: Graph,
    grid_size: int,
    val_panel: TrajectoryPanel,
    opts: SolverOptions | None = None,
) -> PathResult:
    """Warm-started geometric path with validation-MSE selection.

    The grid runs from the fused endpoint down four decades; each fit
    warm starts from the previous one and is scored by one-step-ahead
    prediction error on the validation panel.  Ties go to the larger
    penalty.  Solver failures flag the point and the path continues.
    """
    lam_hi = lambda_max(ds, g)
    # an exactly-pooled optimum leaves only float noise in the certificate
    gradient_scale = float(np.abs(ds.cross).max()) / ds.m
    if lam_hi <= 1e-12 * max(gradient_scale, 1e-300):
        lam_hi = 0.0
    grid = lambda_grid(lam_hi, grid_size)
    ws = _TVWorkspace(ds, g)
    fits = []
    metrics = np.empty(grid.size)
    state = None
    for i, lam in enumerate(grid):
        try:
            fit, state = fit_graph_tv(ds, g, float(lam), opts=opts, workspace=ws, warm=state, return_state=True)
        except Exception as exc:  # solver failure: flag the point, keep going
            fit = FitResult(
                a_hat=np.zeros(ds.m * ds.d * ds.d),
                m=ds.m,
                d=ds.d,
                lambda_=float(lam),
                objective=math.inf,
                iterations=0,
                primal_residual=math.inf,
                dual_residual=math.inf,
                kkt_gap=math.inf,
                method="graph_tv",
                converged=False,
                flags=("solver_error", str(exc)),
            )
            state = None
        fits.append(fit)
        usable = "solver_error" not in fit.flags and bool(np.all(np.isfinite(fit.a_hat)))
        metrics[i] = one_step_pred_mse(fit.matrices(), val_panel) if usable else math.inf
    selected = int(np.argmin(metrics))  # first minimum = largest lambda on ties
    return PathResult(lambdas=grid, fits=fits, selected_index=selected, selection_metric=metrics)


def theoretical_lambda(
    mu: float,
    m: int,
    T: int,
    d: int,
    delta: float,
    rho_max: float,
    n_edges: int,
    c1: float = 1.0,
) -> float:
    """Penalty level suggested by the stable-case analysis.

    Evaluates (c1/m) sqrt(T/sgap) max{d^(3/2) log(dT/(delta sgap)),
    mu log(d|E|/delta)} with sgap = (1 - rho_max)^2.  The universal
    constant is configurable since the analysis states it only up to
    scale.
    """
    if not (0.0 < delta < 1.0):
        raise EstimatorError(f"delta must be in (0, 1), got {delta}")
    if rho_max >= 1.0:
        raise EstimatorError(f"rho_max must be < 1, got {rho_max}")
    if c1 <= 0:
        raise EstimatorError(f"c1 must be > 0, got {c1}")
    sgap = (1.0 - rho_max) ** 2
    L1 = math.log(d * T / (delta * sgap))
    L2 = math.log(d * n_edges / delta)
    return (c1 / m) * math.sqrt(T / sgap) * max(d**1.5 * L1, mu * L2)
