"""Numeric evaluation of the error-bound ingredients and side conditions.

Every quantity here is a verbatim formula evaluation with configurable
universal constants (default 1): the martingale tail terms, the
restricted-eigenvalue deficit terms, the three main conditions, the
simplified stable-case sample-size conditions, and the error-bound
right-hand side.  Nothing probabilistic is asserted; reports record the
constants used and the margins observed so instances can be compared.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from graphlds.estimators import theoretical_lambda, vec_rows
from graphlds.geometry import CompatReport, ScalingFactors, compat_exact_small, compat_lower_bound, scaling_factors
from graphlds.graphs import Graph, incidence, spectrum
from graphlds.systems import SystemEnsemble, grammian_bundle


@dataclass(frozen=True)
class BoundConstants:
    """Configurable universal constants inside the bound formulas."""

    c_zeta1: float = 1.0
    c_zeta2: float = 1.0
    c_f2: float = 1.0
    c_f3: float = 1.0


@dataclass(frozen=True)
class BoundTerms:
    zeta1: float
    zeta2: float
    f1: float
    f2: float
    f3: float
    g3: float
    phi_S: float
    constants: BoundConstants


def evaluate_bound_terms(
    trace_sum: float,
    diag_max: float,
    mu: float,
    mu_prime: float,
    beta: float,
    kappa_S: float,
    S_size: int,
    tail_norm: float,
    m: int,
    T: int,
    d: int,
    n_edges: int,
    delta: float,
    constants: BoundConstants = BoundConstants(),
) -> BoundTerms:
    """Evaluate the tail and restricted-eigenvalue deficit terms.

    ``trace_sum`` is the total Grammian trace budget
    sum_l sum_{t<T} Tr(Gamma_t(A_l)); ``diag_max`` the largest diagonal
    entry of the per-node horizon aggregates; ``tail_norm`` the l1 mass
    of the edge differences of the truth outside the chosen set S.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    zeta1 = constants.c_zeta1 * trace_sum * math.log(1.0 / delta)
    f1 = math.sqrt(2.0) * math.sqrt(zeta1 / m + 1.0) * math.sqrt(
        math.log(1.0 / delta) + (d * d / 2.0) * math.log(zeta1 / m + 1.0)
    )
    zeta2 = constants.c_zeta2 * mu**2 * diag_max * math.log(d * d * n_edges / delta) ** 2
    f2 = constants.c_f2 * math.sqrt(zeta2)
    theta = 4.0 * math.sqrt(S_size) / kappa_S + 4.0 * tail_norm + 1.0
    log_e = math.log(d * d * n_edges)
    f3 = constants.c_f3 * beta**2 * (
        mu_prime**2 * theta**2 * log_e + mu_prime * math.sqrt(T) * theta * math.sqrt(log_e) + math.sqrt(T)
    )
    g3 = constants.c_f3 * beta**2 * (mu_prime * theta * math.sqrt(log_e) + math.sqrt(T))
    phi_S = 1.0 + math.sqrt(S_size) / kappa_S + tail_norm
    return BoundTerms(zeta1=zeta1, zeta2=zeta2, f1=f1, f2=f2, f3=f3, g3=g3, phi_S=phi_S, constants=constants)


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class ConditionInputs:
    """Scalar ingredients of the main-result and sample-size conditions."""

    m: int
    T: int
    d: int
    v: float
    delta: float
    mu: float
    mu_prime: float
    beta: float
    rho_max: float
    n_edges: int
    S_size: int
    kappa_S: float
    tail_norm: float
    delta_G: float
    f3: float


def check_theorem_conditions(inp: ConditionInputs, c: float = 1.0, C: float = 1.0) -> list[ConditionCheck]:
    """Both condition families, each as an (lhs <= rhs) row.

    The first three are the main-result conditions with margin constant
    ``c`` on the right-hand side c*T; the remaining four are the
    stable-case sample-size reductions, where the required sample size
    (scaled by ``C``) sits on the left and T on the right.
    """
    phi = 1.0 + math.sqrt(inp.S_size) / inp.kappa_S + inp.tail_norm
    cond1 = ConditionCheck("cond1_re_deficit", inp.f3 * math.sqrt(inp.v), c * inp.T)
    cond2 = ConditionCheck(
        "cond2_nullspace",
        (inp.beta**2 / inp.m) * (math.sqrt(inp.m * inp.T) + inp.d) * (inp.d + inp.v),
        c * inp.T,
    )
    cond3 = ConditionCheck(
        "cond3_cross_term",
        (inp.mu / math.sqrt(inp.m))
        * phi
        * (inp.d * inp.delta_G + inp.beta**2 * math.sqrt(inp.T) * math.log(inp.n_edges * inp.d / inp.delta)),
        c * inp.T,
    )
    sgap = (1.0 - inp.rho_max) ** 2
    L2 = math.log(inp.d * inp.n_edges / inp.delta)
    c1 = ConditionCheck("C1", C * (inp.v / sgap**2) * (1.0 + inp.mu_prime * phi * math.sqrt(L2)) ** 2, float(inp.T))
    c2 = ConditionCheck("C2", C * (inp.d + inp.v) ** 2 / (inp.m * sgap**2), float(inp.T))
    c3a = ConditionCheck("C3a", C * inp.mu**2 * phi**2 * L2**2 / (inp.m * sgap**2), float(inp.T))
    c3b = ConditionCheck("C3b", C * (inp.mu / math.sqrt(inp.m)) * phi * inp.d * inp.delta_G, float(inp.T))
    return [cond1, cond2, cond3, c1, c2, c3a, c3b]


def theorem_error_bound(lam: float, m: int, T: int, S_size: int, kappa_S: float, tail_norm: float) -> tuple[float, float]:
    """Error-bound right-hand side and its per-node scale (divided by sqrt m)."""
    if lam < 0 or T <= 0:
        raise ValueError("need lambda >= 0 and T > 0")
    rhs = (2.0 * m * lam / T) * (1.0 + 3.0 * math.sqrt(S_size) / kappa_S) + math.sqrt(
        8.0 * lam * m / T * tail_norm
    )
    return rhs, rhs / math.sqrt(m)


def geometry_log_multiplier(delta: float, rho_max: float, mu: float, d: int, T: int, n_edges: int) -> float:
    """The stable-case multiplier max{d^(3/2) L1, mu L2} / sqrt(sgap)."""
    sgap = (1.0 - rho_max) ** 2
    L1 = math.log(d * T / (delta * sgap))
    L2 = math.log(d * n_edges / delta)
    return max(d**1.5 * L1, mu * L2) / math.sqrt(sgap)


@dataclass(frozen=True)
class TheoryReport:
    """Everything needed to audit one instance against the bound formulas."""

    regime: str
    m: int
    T: int
    d: int
    delta: float
    v: float
    fiedler: float
    scaling: ScalingFactors
    compat: CompatReport
    kappa_S: float
    kappa_source: str
    S_size: int
    tail_norm: float
    total_tv: float
    rho_max: float
    beta: float
    delta_G: float
    trace_sum: float
    diag_max: float
    terms: BoundTerms
    conditions: list
    lambda_theory: float
    theorem_rhs: float
    theorem_rhs_per_node: float
    multiplier: float
    c_margin: float
    C_condition: float
    c1_lambda: float

    def to_json(self) -> str:
        payload = {
            "regime": self.regime,
            "m": self.m,
            "T": self.T,
            "d": self.d,
            "delta": self.delta,
            "v": self.v,
            "fiedler": self.fiedler,
            "scaling": asdict(self.scaling),
            "compat": {
                "set_T": sorted(self.compat.set_T),
                "T_E": sorted(self.compat.T_E),
                "lower_bound": self.compat.lower_bound,
                "exact_value": self.compat.exact_value,
            },
            "kappa_S": self.kappa_S,
            "kappa_source": self.kappa_source,
            "S_size": self.S_size,
            "tail_norm": self.tail_norm,
            "total_tv": self.total_tv,
            "rho_max": self.rho_max,
            "beta": self.beta,
            "delta_G": self.delta_G,
            "trace_sum": self.trace_sum,
            "diag_max": self.diag_max,
            "terms": {
                "zeta1": self.terms.zeta1,
                "zeta2": self.terms.zeta2,
                "F1": self.terms.f1,
                "F2": self.terms.f2,
                "F3": self.terms.f3,
                "G3": self.terms.g3,
                "Phi_S": self.terms.phi_S,
                "constants": asdict(self.terms.constants),
            },
            "conditions": [
                {"name": ck.name, "lhs": ck.lhs, "rhs": ck.rhs, "passed": ck.passed, "margin": ck.margin}
                for ck in self.conditions
            ],
            "lambda_theory": self.lambda_theory,
            "theorem_rhs": self.theorem_rhs,
            "theorem_rhs_per_node": self.theorem_rhs_per_node,
            "multiplier": self.multiplier,
            "margin_constant_c": self.c_margin,
            "condition_constant_C": self.C_condition,
            "lambda_constant_c1": self.c1_lambda,
        }
        return json.dumps(payload, indent=2)


def truth_edge_differences(g: Graph, e: SystemEnsemble) -> np.ndarray:
    """Edge-difference matrix of the true coefficients, (|E|, d^2)."""
    if not g.edges:
        return np.zeros((0, e.d * e.d))
    return incidence(g) @ vec_rows(e.matrices)


def build_theory_report(
    g: Graph,
    e: SystemEnsemble,
    T: int,
    delta: float = 0.1,
    v: float = 1.0,
    regime: str = "smooth",
    constants: BoundConstants = BoundConstants(),
    c_margin: float = 1.0,
    C_condition: float = 1.0,
    c1_lambda: float = 1.0,
    support_tol: float = 1e-12,
) -> TheoryReport:
    """Assemble the full audit report for one (graph, ensemble, T) instance.

    The smooth regime takes S empty (compatibility factor 1, the whole
    TV mass in the tail); the few-changes regime takes S as the support
    of the true edge differences, with the exact compatibility factor
    when the instance is small enough and the degree-based lower bound
    otherwise (conservative for the reported right-hand side).
    """
    if regime not in ("smooth", "few_changes"):
        raise ValueError(f"regime must be 'smooth' or 'few_changes', got {regime}")
    rho_max = e.rho_max()
    if rho_max >= 1.0:
        raise ValueError(f"ensemble not uniformly stable: rho_max={rho_max:.4f}")
    spec = spectrum(g)
    scaling = scaling_factors(spec)
    diffs = truth_edge_differences(g, e)
    total_tv = float(np.abs(diffs).sum())
    d2 = e.d * e.d
    support = [j * d2 + r + 1 for (j, r) in zip(*np.nonzero(np.abs(diffs) > support_tol))]
    if regime == "smooth":
        S: frozenset = frozenset()
        kappa_S, kappa_source = 1.0, "definition_empty_set"
        tail_norm = total_tv
        compat = compat_lower_bound(g, S, e.d)
    else:
        S = frozenset(support)
        compat = compat_lower_bound(g, S, e.d)
        if S and len(S) <= 14 and g.m * d2 <= 200:
            exact = compat_exact_small(g, S, e.d)
            compat = CompatReport(set_T=compat.set_T, T_E=compat.T_E, lower_bound=compat.lower_bound, exact_value=exact)
            kappa_S, kappa_source = exact, "exact_small_instance"
        elif S:
            kappa_S, kappa_source = compat.lower_bound, "degree_lower_bound"
        else:
            kappa_S, kappa_source = 1.0, "definition_empty_set"
        tail_norm = 0.0
    bundle = grammian_bundle(e, T)
    terms = evaluate_bound_terms(
        trace_sum=bundle.trace_sum(),
        diag_max=bundle.diag_max(),
        mu=scaling.mu,
        mu_prime=scaling.mu_prime,
        beta=bundle.beta,
        kappa_S=kappa_S,
        S_size=len(S),
        tail_norm=tail_norm,
        m=g.m,
        T=T,
        d=e.d,
        n_edges=g.n_edges,
        delta=delta,
        constants=constants,
    )
    cond_inputs = ConditionInputs(
        m=g.m,
        T=T,
        d=e.d,
        v=v,
        delta=delta,
        mu=scaling.mu,
        mu_prime=scaling.mu_prime,
        beta=bundle.beta,
        rho_max=rho_max,
        n_edges=g.n_edges,
        S_size=len(S),
        kappa_S=kappa_S,
        tail_norm=tail_norm,
        delta_G=bundle.delta_G,
        f3=terms.f3,
    )
    conditions = check_theorem_conditions(cond_inputs, c=c_margin, C=C_condition)
    lam = theoretical_lambda(scaling.mu, g.m, T, e.d, delta, rho_max, g.n_edges, c1=c1_lambda)
    rhs, rhs_node = theorem_error_bound(lam, g.m, T, len(S), kappa_S, tail_norm)
    mult = geometry_log_multiplier(delta, rho_max, scaling.mu, e.d, T, g.n_edges)
    return TheoryReport(
        regime=regime,
        m=g.m,
        T=T,
        d=e.d,
        delta=delta,
        v=v,
        fiedler=spec.fiedler,
        scaling=scaling,
        compat=compat,
        kappa_S=kappa_S,
        kappa_source=kappa_source,
        S_size=len(S),
        tail_norm=tail_norm,
        total_tv=total_tv,
        rho_max=rho_max,
        beta=bundle.beta,
        delta_G=bundle.delta_G,
        trace_sum=bundle.trace_sum(),
        diag_max=bundle.diag_max(),
        terms=terms,
        conditions=conditions,
        lambda_theory=lam,
        theorem_rhs=rhs,
        theorem_rhs_per_node=rhs_node,
        multiplier=mult,
        c_margin=c_margin,
        C_condition=C_condition,
        c1_lambda=c1_lambda,
    )
