"""Cost functionals and the closed-form value of the optimal policy.

The optimal value splits into a quadratic and linear part in the initial
state plus five time integrals.  Two of the integrals (the Pi terms) make
up the irreducible filtering cost tilde_J; the rest, together with the
boundary terms, form the floor hat_J_floor attained by the certainty
equivalent feedback.  By construction

    hat_J_floor + tilde_J = optimal_value(...).total

holds to roundoff, since both sides reuse the same integrand arrays.
All integrals use the composite trapezoid rule on the solution grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detsolve import DeterministicSolution
from .model import ModelSpec, interp_table, sample_cost, table_at_nodes

__all__ = [
    "ValueBreakdown",
    "running_cost",
    "terminal_cost",
    "optimal_value",
    "tilde_J",
    "hat_J_floor",
    "square_residual",
]


@dataclass(frozen=True)
class ValueBreakdown:
    """Optimal value and its additive parts (Rinv_integral is stored signed,
    i.e. it enters the total as written)."""

    quadratic_term: float   # <P(0) x0, x0>
    linear_term: float      # 2 <phi(0), x0>
    PiD_integral: float     # int sum_i <Pi D_i, D_i>
    PiDelta_integral: float  # int sum_i <Pi Delta_i, Delta_i>
    PDeltaC_integral: float  # int sum_i <P (Delta_i + C_i), Delta_i + C_i>
    Rinv_integral: float    # -int <R^{-1}(B^T phi + r), B^T phi + r>
    phia_integral: float    # int 2 <phi, a>
    total: float

    def parts(self) -> dict[str, float]:
        return {
            "quadratic_term": self.quadratic_term,
            "linear_term": self.linear_term,
            "PiD_integral": self.PiD_integral,
            "PiDelta_integral": self.PiDelta_integral,
            "PDeltaC_integral": self.PDeltaC_integral,
            "Rinv_integral": self.Rinv_integral,
            "phia_integral": self.phia_integral,
            "total": self.total,
        }


def running_cost(t: float, x: np.ndarray, u: np.ndarray, model: ModelSpec) -> float:
    """<Qx,x> + 2<Sx,u> + <Ru,u> + 2<q,x> + 2<r,u> at time t."""
    Q, S, R, q, r = sample_cost(model.cost, t)
    return float(x @ (Q @ x) + 2.0 * u @ (S @ x) + u @ (R @ u)
                 + 2.0 * q @ x + 2.0 * r @ u)


def terminal_cost(xT: np.ndarray, model: ModelSpec) -> float:
    """<G x_T, x_T> + 2 <g, x_T>."""
    return float(xT @ (model.cost.G @ xT) + 2.0 * model.cost.g @ xT)


def _integrands(model: ModelSpec, sol: DeterministicSolution):
    """Per-node values of the five value integrands, in grid order."""
    grid = sol.grid
    co, cw = model.coeffs, model.cost
    C = table_at_nodes(grid, co.grid, co.C)
    D = table_at_nodes(grid, co.grid, co.D)
    a = table_at_nodes(grid, co.grid, co.a)
    B = table_at_nodes(grid, co.grid, co.B)
    R = table_at_nodes(grid, cw.grid, cw.R)
    r = table_at_nodes(grid, cw.grid, cw.r)
    Pi, P = sol.Pi.values, sol.P.values
    Delta, phi = sol.Delta.values, sol.phi.values

    f_PiD = np.einsum("tac,tab,tbc->t", D, Pi, D)
    f_PiDelta = np.einsum("tac,tab,tbc->t", Delta, Pi, Delta)
    DC = Delta + C
    f_PDeltaC = np.einsum("tac,tab,tbc->t", DC, P, DC)
    v = np.einsum("tnm,tn->tm", B, phi) + r
    w = np.linalg.solve(R, v[:, :, None])[:, :, 0]
    f_Rinv = -np.einsum("tm,tm->t", v, w)
    f_phia = 2.0 * np.einsum("tn,tn->t", phi, a)
    return f_PiD, f_PiDelta, f_PDeltaC, f_Rinv, f_phia


def optimal_value(model: ModelSpec, sol: DeterministicSolution) -> ValueBreakdown:
    """Value of the optimal policy, split into its additive parts.

    Boundary terms are evaluated exactly; the five integrals use the
    trapezoid rule on the solution grid, so the total converges at O(h^2)
    once the deterministic paths are resolved.
    """
    nodes = sol.grid.nodes
    f_PiD, f_PiDelta, f_PDeltaC, f_Rinv, f_phia = _integrands(model, sol)
    x0 = model.x0
    quad = float(x0 @ (sol.P.values[0] @ x0))
    lin = 2.0 * float(sol.phi.values[0] @ x0)
    parts = (
        quad,
        lin,
        float(np.trapezoid(f_PiD, nodes)),
        float(np.trapezoid(f_PiDelta, nodes)),
        float(np.trapezoid(f_PDeltaC, nodes)),
        float(np.trapezoid(f_Rinv, nodes)),
        float(np.trapezoid(f_phia, nodes)),
    )
    return ValueBreakdown(*parts, total=float(sum(parts)))


def tilde_J(model: ModelSpec, sol: DeterministicSolution) -> float:
    """Irreducible part of the cost: no admissible control goes below
    hat_J_floor + tilde_J, and tilde_J is what observation noise costs."""
    nodes = sol.grid.nodes
    f_PiD, f_PiDelta, _, _, _ = _integrands(model, sol)
    return float(np.trapezoid(f_PiD, nodes)) + float(np.trapezoid(f_PiDelta, nodes))


def hat_J_floor(model: ModelSpec, sol: DeterministicSolution) -> float:
    """Floor of the cost seen by the filtered state, attained at the
    optimal feedback."""
    nodes = sol.grid.nodes
    _, _, f_PDeltaC, f_Rinv, f_phia = _integrands(model, sol)
    x0 = model.x0
    quad = float(x0 @ (sol.P.values[0] @ x0))
    lin = 2.0 * float(sol.phi.values[0] @ x0)
    return (quad + lin
            + float(np.trapezoid(f_PDeltaC, nodes))
            + float(np.trapezoid(f_Rinv, nodes))
            + float(np.trapezoid(f_phia, nodes)))


def square_residual(t: float, xhat: np.ndarray, u: np.ndarray,
                    sol: DeterministicSolution, model: ModelSpec) -> float:
    """Penalty <R w, w> for deviating by w from the optimal feedback at
    filtered state xhat; zero exactly at the optimal control."""
    B = interp_table(model.coeffs.grid, model.coeffs.B, t)
    _, _, R, _, r = sample_cost(model.cost, t)
    v = B.T @ sol.phi.at(t) + r
    w = sol.Theta.at(t) @ xhat - np.linalg.solve(R, v) - u
    return float(w @ (R @ w))
