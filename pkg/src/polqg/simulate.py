"""Euler-Maruyama simulation of the closed loop and its error process.

One step, all left-endpoint coefficients, in this exact order:

  u_i     = policy(t_i, Xhat_i)
  X_{i+1} = X_i + (A X_i + B u_i + a) h + C dW_i + D dW'_i
  Y_{i+1} = Y_i + (H X_i + h_coef) h + K dW_i
  dV_i    = (Y_{i+1} - Y_i) - (H Xhat_i + h_coef) h
  Xhat_{i+1} = Xhat_i + (A Xhat_i + B u_i + a) h + (Sigma H^T + C K^T) N^{-1} dV_i
  Vcheck_{i+1} = Vcheck_i + K^{-1} dV_i

Policies only ever see the filtered state, never the truth.  Realized cost
is the left Riemann sum of the running cost along the true path plus the
terminal cost.  Noise comes from a counter-based generator keyed by
(seed, path_index), so any path can be regenerated on its own and batches
are bitwise independent of scheduling.

The stepping kernel is vectorized over a leading path axis; the public
single-path functions run it with one path, so batch and single-path
results agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detsolve import DeterministicSolution
from .errors import NonFinite, ShapeMismatch
from .model import ModelSpec, Dimensions, TimeGrid, interp_table, sample_cost, table_at_nodes

__all__ = [
    "NoiseDraw",
    "ControlPolicy",
    "PathBundle",
    "draw_noise",
    "simulate_closed_loop",
    "simulate_error_direct",
    "policy_feedback",
    "bundle_to_csv",
]

_M64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseDraw:
    """Brownian increments over one grid; each entry has variance h."""

    grid: TimeGrid
    dW: np.ndarray   # (steps, d) common noise
    dWp: np.ndarray  # (steps, k) state-only noise


def draw_noise(seed: int, path_index: int, grid: TimeGrid, dims: Dimensions) -> NoiseDraw:
    """Increments for one path from a Philox stream keyed by (seed, path_index).

    The key fixes the whole stream, so the same arguments reproduce the
    same draw bitwise no matter how many other paths were drawn, in what
    order, or on how many workers.
    """
    if path_index < 0:
        raise ValueError(f"path_index must be >= 0, got {path_index}")
    key = ((int(path_index) & _M64) << 64) | (int(seed) & _M64)
    gen = np.random.Generator(np.random.Philox(key=key))
    scale = np.sqrt(grid.h)
    dW = scale * gen.standard_normal((grid.steps, dims.d))
    dWp = scale * gen.standard_normal((grid.steps, dims.k))
    return NoiseDraw(grid, dW, dWp)


@dataclass(frozen=True)
class ControlPolicy:
    """Admissible control law fed to the simulator.

    kind is one of 'filter_feedback', 'zero', 'open_loop',
    'perturbed_feedback'.  Open-loop tables are grid-aligned, one control
    per node; perturbation offsets are either grid-aligned or a single
    constant m-vector.
    """

    kind: str
    table: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("filter_feedback", "zero", "open_loop", "perturbed_feedback"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.table is not None:
            object.__setattr__(self, "table", np.asarray(self.table, dtype=float))
        if not self.label:
            object.__setattr__(self, "label", self.kind)

    @classmethod
    def filter_feedback(cls) -> "ControlPolicy":
        return cls("filter_feedback")

    @classmethod
    def zero(cls) -> "ControlPolicy":
        return cls("zero")

    @classmethod
    def open_loop(cls, table, label="open_loop") -> "ControlPolicy":
        return cls("open_loop", table, label)

    @classmethod
    def perturbed_feedback(cls, offset, label="perturbed_feedback") -> "ControlPolicy":
        return cls("perturbed_feedback", offset, label)


@dataclass(frozen=True)
class PathBundle:
    """Everything recorded along one simulated path."""

    grid: TimeGrid
    X: np.ndarray       # (N+1, n) true state
    Y: np.ndarray       # (N+1, d) observation
    Xhat: np.ndarray    # (N+1, n) filtered state
    Xtil: np.ndarray    # (N+1, n) X - Xhat, exact by construction
    V: np.ndarray       # (N+1, d) innovation
    Vcheck: np.ndarray  # (N+1, d) normalized innovation
    u: np.ndarray       # (N+1, m) applied control (row N: policy value, unused)
    cost: float


class _NodeData:
    """Per-node coefficient and gain tables shared by every path."""

    def __init__(self, model: ModelSpec, sol: DeterministicSolution):
        grid = sol.grid
        co, cw = model.coeffs, model.cost
        self.A = table_at_nodes(grid, co.grid, co.A)
        self.B = table_at_nodes(grid, co.grid, co.B)
        self.a = table_at_nodes(grid, co.grid, co.a)
        self.C = table_at_nodes(grid, co.grid, co.C)
        self.D = table_at_nodes(grid, co.grid, co.D)
        self.H = table_at_nodes(grid, co.grid, co.H)
        self.hvec = table_at_nodes(grid, co.grid, co.h)
        self.K = table_at_nodes(grid, co.grid, co.K)
        self.Q = table_at_nodes(grid, cw.grid, cw.Q)
        self.S = table_at_nodes(grid, cw.grid, cw.S)
        self.R = table_at_nodes(grid, cw.grid, cw.R)
        self.q = table_at_nodes(grid, cw.grid, cw.q)
        self.r = table_at_nodes(grid, cw.grid, cw.r)
        nn = grid.steps + 1
        d = model.dims.d
        eye_d = np.eye(d)
        self.Kinv = np.linalg.solve(self.K, np.broadcast_to(eye_d, (nn, d, d)))
        Nmat = self.K @ self.K.swapaxes(1, 2)
        Lam = sol.Sigma.values @ self.H.swapaxes(1, 2) + self.C @ self.K.swapaxes(1, 2)
        self.Gain = np.linalg.solve(Nmat, Lam.swapaxes(1, 2)).swapaxes(1, 2)
        self.Theta = sol.Theta.values
        v = np.einsum("tnm,tn->tm", self.B, sol.phi.values) + self.r
        # R^{-1}(B^T phi + r) at nodes
        self.ff = np.linalg.solve(self.R, v[:, :, None])[:, :, 0]
        self.Delta = sol.Delta.values
        self.curlyA = sol.curlyA.values


def _policy_controls(policy: ControlPolicy, nd: _NodeData, i: int,
                     Xhat: np.ndarray, m: int) -> np.ndarray:
    npaths = Xhat.shape[0]
    if policy.kind == "zero":
        return np.zeros((npaths, m))
    if policy.kind == "open_loop":
        return np.broadcast_to(policy.table[i], (npaths, m)).copy()
    u = Xhat @ nd.Theta[i].T - nd.ff[i]
    if policy.kind == "perturbed_feedback":
        off = policy.table if policy.table.ndim == 1 else policy.table[i]
        u = u + off
    return u


def _check_policy_table(policy: ControlPolicy, grid: TimeGrid, m: int):
    if policy.kind == "open_loop":
        if policy.table is None or policy.table.shape != (grid.steps + 1, m):
            raise ShapeMismatch(
                f"open-loop table must have shape {(grid.steps + 1, m)}")
    if policy.kind == "perturbed_feedback":
        if policy.table is None or policy.table.shape not in ((m,), (grid.steps + 1, m)):
            raise ShapeMismatch(
                f"perturbation offsets must have shape {(m,)} or {(grid.steps + 1, m)}")


def _closed_loop_arrays(model: ModelSpec, sol: DeterministicSolution,
                        policy: ControlPolicy, dW: np.ndarray, dWp: np.ndarray):
    """Step every path at once; leading axis of dW/dWp indexes paths."""
    grid = sol.grid
    dims = model.dims
    n, m, d = dims.n, dims.m, dims.d
    N = grid.steps
    _check_policy_table(policy, grid, m)
    nd = _NodeData(model, sol)
    npaths = dW.shape[0]

    X = np.empty((npaths, N + 1, n))
    Y = np.empty((npaths, N + 1, d))
    Xhat = np.empty((npaths, N + 1, n))
    V = np.empty((npaths, N + 1, d))
    Vcheck = np.empty((npaths, N + 1, d))
    u = np.empty((npaths, N + 1, m))
    cost = np.zeros(npaths)

    X[:, 0] = model.x0
    Xhat[:, 0] = model.x0
    Y[:, 0] = 0.0
    V[:, 0] = 0.0
    Vcheck[:, 0] = 0.0

    nodes = grid.nodes
    for i in range(N):
        hs = nodes[i + 1] - nodes[i]
        Xi, Xhi, Yi = X[:, i], Xhat[:, i], Y[:, i]
        Ui = _policy_controls(policy, nd, i, Xhi, m)
        u[:, i] = Ui

        cost += hs * (
            np.einsum("pi,ij,pj->p", Xi, nd.Q[i], Xi)
            + 2.0 * np.einsum("pa,ab,pb->p", Ui, nd.S[i], Xi)
            + np.einsum("pa,ab,pb->p", Ui, nd.R[i], Ui)
            + 2.0 * Xi @ nd.q[i] + 2.0 * Ui @ nd.r[i]
        )

        drift_truth = Xi @ nd.A[i].T + Ui @ nd.B[i].T + nd.a[i]
        X[:, i + 1] = Xi + hs * drift_truth + dW[:, i] @ nd.C[i].T + dWp[:, i] @ nd.D[i].T
        # the filter consumes the observation increment itself, not the
        # difference of accumulated levels, so dV carries no cancellation
        dY = hs * (Xi @ nd.H[i].T + nd.hvec[i]) + dW[:, i] @ nd.K[i].T
        Y[:, i + 1] = Yi + dY
        dV = dY - hs * (Xhi @ nd.H[i].T + nd.hvec[i])
        drift_filter = Xhi @ nd.A[i].T + Ui @ nd.B[i].T + nd.a[i]
        Xhat[:, i + 1] = Xhi + hs * drift_filter + dV @ nd.Gain[i].T
        V[:, i + 1] = V[:, i] + dV
        Vcheck[:, i + 1] = Vcheck[:, i] + dV @ nd.Kinv[i].T
        if not np.isfinite(X[:, i + 1]).all() or not np.isfinite(Xhat[:, i + 1]).all():
            raise NonFinite("simulate_closed_loop", i + 1)

    u[:, N] = _policy_controls(policy, nd, N, Xhat[:, N], m)
    XT = X[:, N]
    cost += (np.einsum("pi,ij,pj->p", XT, model.cost.G, XT)
             + 2.0 * XT @ model.cost.g)
    return {"X": X, "Y": Y, "Xhat": Xhat, "Xtil": X - Xhat, "V": V,
            "Vcheck": Vcheck, "u": u, "cost": cost}


def simulate_closed_loop(model: ModelSpec, sol: DeterministicSolution,
                         policy: ControlPolicy, noise: NoiseDraw) -> PathBundle:
    """Simulate one path of the controlled system and its filter."""
    if noise.grid.steps != sol.grid.steps or noise.grid.T != sol.grid.T:
        raise ShapeMismatch("noise grid does not match the solution grid")
    arrs = _closed_loop_arrays(model, sol, policy,
                               noise.dW[None, ...], noise.dWp[None, ...])
    return PathBundle(
        grid=sol.grid,
        X=arrs["X"][0], Y=arrs["Y"][0], Xhat=arrs["Xhat"][0],
        Xtil=arrs["Xtil"][0], V=arrs["V"][0], Vcheck=arrs["Vcheck"][0],
        u=arrs["u"][0], cost=float(arrs["cost"][0]),
    )


def _error_direct_arrays(model: ModelSpec, sol: DeterministicSolution,
                         dW: np.ndarray, dWp: np.ndarray) -> np.ndarray:
    """Euler chain for the error SDE dXtil = curlyA Xtil dt - Delta dW + D dW'."""
    grid = sol.grid
    n = model.dims.n
    N = grid.steps
    D = table_at_nodes(grid, model.coeffs.grid, model.coeffs.D)
    Av = sol.curlyA.values
    Dl = sol.Delta.values
    npaths = dW.shape[0]
    Xt = np.zeros((npaths, N + 1, n))
    nodes = grid.nodes
    for i in range(N):
        hs = nodes[i + 1] - nodes[i]
        Xt[:, i + 1] = (Xt[:, i] + hs * (Xt[:, i] @ Av[i].T)
                        - dW[:, i] @ Dl[i].T + dWp[:, i] @ D[i].T)
        if not np.isfinite(Xt[:, i + 1]).all():
            raise NonFinite("simulate_error_direct", i + 1)
    return Xt


def simulate_error_direct(model: ModelSpec, sol: DeterministicSolution,
                          noise: NoiseDraw) -> np.ndarray:
    """Simulate the estimation error on its own, without the loop.

    Feeding the same draw here and into simulate_closed_loop must give
    X - Xhat up to roundoff, which is the discrete consistency check
    between the filter and the error dynamics.
    """
    if noise.grid.steps != sol.grid.steps or noise.grid.T != sol.grid.T:
        raise ShapeMismatch("noise grid does not match the solution grid")
    return _error_direct_arrays(model, sol, noise.dW[None, ...], noise.dWp[None, ...])[0]


def policy_feedback(t: float, xhat: np.ndarray, sol: DeterministicSolution,
                    model: ModelSpec) -> np.ndarray:
    """Optimal control Theta(t) xhat - R^{-1}(B^T phi + r)(t)."""
    B = interp_table(model.coeffs.grid, model.coeffs.B, t)
    _, _, R, _, r = sample_cost(model.cost, t)
    v = B.T @ sol.phi.at(t) + r
    return sol.Theta.at(t) @ np.asarray(xhat, dtype=float) - np.linalg.solve(R, v)


def bundle_to_csv(bundle: PathBundle, fileobj):
    """Write one path as CSV: a row per node, 17 significant digits, and a
    trailing comment record with the realized cost.  No timestamps, so
    identical bundles serialize byte-identically."""
    n = bundle.X.shape[1]
    d = bundle.Y.shape[1]
    m = bundle.u.shape[1]
    cols = (["t"]
            + [f"X{j+1}" for j in range(n)]
            + [f"Y{j+1}" for j in range(d)]
            + [f"Xhat{j+1}" for j in range(n)]
            + [f"Xtil{j+1}" for j in range(n)]
            + [f"V{j+1}" for j in range(d)]
            + [f"u{j+1}" for j in range(m)])
    fileobj.write(",".join(cols) + "\n")
    nodes = bundle.grid.nodes
    for i in range(bundle.grid.steps + 1):
        row = np.concatenate(([nodes[i]], bundle.X[i], bundle.Y[i],
                              bundle.Xhat[i], bundle.Xtil[i], bundle.V[i],
                              bundle.u[i]))
        fileobj.write(",".join(f"{v:.17g}" for v in row) + "\n")
    fileobj.write(f"# cost,{bundle.cost:.17g}\n")
