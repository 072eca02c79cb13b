"""Deterministic backbone of the control problem.

Everything the optimal policy and the value formula need is a handful of
matrix/vector ODEs on one shared grid, integrated with fixed-step classical
RK4 (no adaptivity, so reruns are bitwise reproducible):

  P      backward Riccati equation for the control problem
  Theta  feedback gain built from P
  phi    backward affine offset
  Sigma  forward filter error covariance (Riccati of Kalman-Bucy type)
  Delta  Sigma (K^{-1} H)^T, the error diffusion loading
  curlyA closed-loop error drift matrix
  Pi, pi backward Lyapunov pair used by the value decomposition

Between nodes, coefficients come from piecewise-linear interpolation and
already computed paths are interpolated the same way.  Symmetric matrices
are re-symmetrized after every step so roundoff cannot accumulate skew.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .errors import NonFinite, PSDViolation, SingularMatrix
from .model import (
    ModelSpec,
    TimeGrid,
    ToleranceConfig,
    interp_table,
    table_at_nodes,
)

__all__ = [
    "MatrixPath",
    "VectorPath",
    "DeterministicSolution",
    "integrate_matrix_ode",
    "solve_P",
    "compute_Theta",
    "solve_phi",
    "solve_Sigma",
    "compute_Delta",
    "compute_curlyA",
    "solve_Pi",
    "solve_pi",
    "solve_all",
]


@dataclass(frozen=True)
class MatrixPath:
    """Matrix-valued function of time stored at grid nodes."""

    grid: TimeGrid
    values: np.ndarray  # (steps+1, p, q)

    def at(self, t: float) -> np.ndarray:
        return interp_table(self.grid, self.values, t)


@dataclass(frozen=True)
class VectorPath:
    grid: TimeGrid
    values: np.ndarray  # (steps+1, p)

    def at(self, t: float) -> np.ndarray:
        return interp_table(self.grid, self.values, t)


@dataclass(frozen=True)
class DeterministicSolution:
    """All deterministic paths on one grid; boundary nodes hold the
    boundary data bitwise."""

    grid: TimeGrid
    P: MatrixPath       # (n, n)
    Theta: MatrixPath   # (m, n)
    phi: VectorPath     # (n,)
    Sigma: MatrixPath   # (n, n)
    Delta: MatrixPath   # (n, d)
    curlyA: MatrixPath  # (n, n)
    Pi: MatrixPath      # (n, n)
    pi_vec: VectorPath  # (n,)


def _symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def integrate_matrix_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    boundary: np.ndarray,
    grid: TimeGrid,
    direction: Literal["forward", "backward"],
    post_step: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Classical fixed-step RK4 over the grid, either direction.

    forward: boundary is the value at t_0, integrate up to t_N.
    backward: boundary is the value at t_N, integrate down to t_0.
    The boundary node stores `boundary` unchanged.  Raises NonFinite as
    soon as a step produces a NaN or infinity.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    nodes = grid.nodes
    y = np.array(boundary, dtype=float)
    out = np.empty((grid.steps + 1,) + y.shape)

    if direction == "forward":
        out[0] = y
        for i in range(grid.steps):
            t0, t1 = nodes[i], nodes[i + 1]
            hs = t1 - t0
            tm = 0.5 * (t0 + t1)
            k1 = rhs(t0, y)
            k2 = rhs(tm, y + (0.5 * hs) * k1)
            k3 = rhs(tm, y + (0.5 * hs) * k2)
            k4 = rhs(t1, y + hs * k3)
            y = y + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if post_step is not None:
                y = post_step(y)
            if not np.isfinite(y).all():
                raise NonFinite("integrate_matrix_ode", i + 1)
            out[i + 1] = y
    else:
        out[grid.steps] = y
        for i in range(grid.steps - 1, -1, -1):
            t0, t1 = nodes[i], nodes[i + 1]
            hs = t1 - t0
            tm = 0.5 * (t0 + t1)
            k1 = rhs(t1, y)
            k2 = rhs(tm, y - (0.5 * hs) * k1)
            k3 = rhs(tm, y - (0.5 * hs) * k2)
            k4 = rhs(t0, y - hs * k3)
            y = y - (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if post_step is not None:
                y = post_step(y)
            if not np.isfinite(y).all():
                raise NonFinite("integrate_matrix_ode", i)
            out[i] = y
    return out


def _assert_psd(name: str, values: np.ndarray, psd_tol: float):
    for i in range(values.shape[0]):
        M = values[i]
        floor = -psd_tol * (1.0 + float(np.linalg.norm(M)))
        eigmin = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        if eigmin < floor:
            raise PSDViolation(name, i, eigmin, floor)


def _solve(mat: np.ndarray, rhs: np.ndarray, name: str, t: float) -> np.ndarray:
    try:
        return np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        raise SingularMatrix(name, t) from None


def solve_P(model: ModelSpec, grid: TimeGrid,
            tol: ToleranceConfig = ToleranceConfig()) -> MatrixPath:
    """Backward Riccati path with terminal value G, symmetrized each step
    and checked positive semidefinite at every node."""
    co, cw = model.coeffs, model.cost

    def rhs(t, P):
        A = interp_table(co.grid, co.A, t)
        B = interp_table(co.grid, co.B, t)
        Q = interp_table(cw.grid, cw.Q, t)
        S = interp_table(cw.grid, cw.S, t)
        R = interp_table(cw.grid, cw.R, t)
        BtPS = B.T @ P + S
        return -(P @ A) - A.T @ P - Q + BtPS.T @ _solve(R, BtPS, "R", t)

    values = integrate_matrix_ode(rhs, cw.G, grid, "backward", post_step=_symmetrize)
    _assert_psd("P", values, tol.psd_tol)
    return MatrixPath(grid, values)


def compute_Theta(P: MatrixPath, model: ModelSpec) -> MatrixPath:
    """Feedback gain -R^{-1}(B^T P + S) at every node of P's grid."""
    grid = P.grid
    B = table_at_nodes(grid, model.coeffs.grid, model.coeffs.B)
    S = table_at_nodes(grid, model.cost.grid, model.cost.S)
    R = table_at_nodes(grid, model.cost.grid, model.cost.R)
    nodes = grid.nodes
    vals = np.empty((grid.steps + 1, model.dims.m, model.dims.n))
    for i in range(grid.steps + 1):
        vals[i] = -_solve(R[i], B[i].T @ P.values[i] + S[i], "R", float(nodes[i]))
    return MatrixPath(grid, vals)


def solve_phi(model: ModelSpec, Theta: MatrixPath, P: MatrixPath,
              grid: TimeGrid) -> VectorPath:
    """Backward affine offset with terminal value g."""
    co, cw = model.coeffs, model.cost

    def rhs(t, phi):
        A = interp_table(co.grid, co.A, t)
        B = interp_table(co.grid, co.B, t)
        a = interp_table(co.grid, co.a, t)
        q = interp_table(cw.grid, cw.q, t)
        r = interp_table(cw.grid, cw.r, t)
        Th = Theta.at(t)
        return -(A + B @ Th).T @ phi - Th.T @ r - P.at(t) @ a - q

    values = integrate_matrix_ode(rhs, cw.g, grid, "backward")
    return VectorPath(grid, values)


def solve_Sigma(model: ModelSpec, grid: TimeGrid,
                tol: ToleranceConfig = ToleranceConfig()) -> MatrixPath:
    """Forward filter error covariance from Sigma(0) = 0."""
    co = model.coeffs

    def rhs(t, Sig):
        A = interp_table(co.grid, co.A, t)
        C = interp_table(co.grid, co.C, t)
        D = interp_table(co.grid, co.D, t)
        H = interp_table(co.grid, co.H, t)
        K = interp_table(co.grid, co.K, t)
        Acl = A - C @ _solve(K, H, "K", t)
        Nmat = K @ K.T
        SH = Sig @ H.T
        return Acl @ Sig + Sig @ Acl.T - SH @ _solve(Nmat, H @ Sig, "N", t) + D @ D.T

    n = model.dims.n
    values = integrate_matrix_ode(rhs, np.zeros((n, n)), grid, "forward",
                                  post_step=_symmetrize)
    _assert_psd("Sigma", values, tol.psd_tol)
    return MatrixPath(grid, values)


def compute_Delta(Sigma: MatrixPath, model: ModelSpec) -> MatrixPath:
    """Error diffusion loading Sigma (K^{-1} H)^T at every node."""
    grid = Sigma.grid
    H = table_at_nodes(grid, model.coeffs.grid, model.coeffs.H)
    K = table_at_nodes(grid, model.coeffs.grid, model.coeffs.K)
    nodes = grid.nodes
    vals = np.empty((grid.steps + 1, model.dims.n, model.dims.d))
    for i in range(grid.steps + 1):
        KinvH = _solve(K[i], H[i], "K", float(nodes[i]))
        vals[i] = Sigma.values[i] @ KinvH.T
    return MatrixPath(grid, vals)


def compute_curlyA(model: ModelSpec, Sigma: MatrixPath) -> MatrixPath:
    """Closed-loop error drift A - (Sigma H^T + C K^T) N^{-1} H."""
    grid = Sigma.grid
    A = table_at_nodes(grid, model.coeffs.grid, model.coeffs.A)
    C = table_at_nodes(grid, model.coeffs.grid, model.coeffs.C)
    H = table_at_nodes(grid, model.coeffs.grid, model.coeffs.H)
    K = table_at_nodes(grid, model.coeffs.grid, model.coeffs.K)
    nodes = grid.nodes
    vals = np.empty((grid.steps + 1, model.dims.n, model.dims.n))
    for i in range(grid.steps + 1):
        Nmat = K[i] @ K[i].T
        Lam = Sigma.values[i] @ H[i].T + C[i] @ K[i].T
        vals[i] = A[i] - Lam @ _solve(Nmat, H[i], "N", float(nodes[i]))
    return MatrixPath(grid, vals)


def solve_Pi(model: ModelSpec, curlyA: MatrixPath, grid: TimeGrid,
             tol: ToleranceConfig = ToleranceConfig()) -> MatrixPath:
    """Backward Lyapunov path with terminal value G."""
    cw = model.cost

    def rhs(t, Pi):
        Av = curlyA.at(t)
        Q = interp_table(cw.grid, cw.Q, t)
        return -(Pi @ Av) - Av.T @ Pi - Q

    values = integrate_matrix_ode(rhs, cw.G, grid, "backward", post_step=_symmetrize)
    _assert_psd("Pi", values, tol.psd_tol)
    return MatrixPath(grid, values)


def solve_pi(model: ModelSpec, curlyA: MatrixPath, grid: TimeGrid) -> VectorPath:
    """Backward linear offset with terminal value g."""
    cw = model.cost

    def rhs(t, piv):
        return -curlyA.at(t).T @ piv - interp_table(cw.grid, cw.q, t)

    values = integrate_matrix_ode(rhs, cw.g, grid, "backward")
    return VectorPath(grid, values)


def solve_all(model: ModelSpec, grid: TimeGrid,
              tol: ToleranceConfig = ToleranceConfig()) -> DeterministicSolution:
    """Solve every deterministic path on one grid.

    Control side first (P, then Theta, then phi), filter side second
    (Sigma, then Delta and curlyA, then Pi and pi).
    """
    P = solve_P(model, grid, tol)
    Theta = compute_Theta(P, model)
    phi = solve_phi(model, Theta, P, grid)
    Sigma = solve_Sigma(model, grid, tol)
    Delta = compute_Delta(Sigma, model)
    curlyA = compute_curlyA(model, Sigma)
    Pi = solve_Pi(model, curlyA, grid, tol)
    pi_vec = solve_pi(model, curlyA, grid)
    return DeterministicSolution(
        grid=grid, P=P, Theta=Theta, phi=phi, Sigma=Sigma,
        Delta=Delta, curlyA=curlyA, Pi=Pi, pi_vec=pi_vec,
    )
