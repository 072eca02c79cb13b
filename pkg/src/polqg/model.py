"""Problem data for the partially observed linear-quadratic control problem.

State dynamics   dX = (A X + B u + a) dt + C dW + D dW'
Observation      dY = (H X + h) dt + K dW
Cost             <G X_T, X_T> + 2<g, X_T>
                 + int_0^T <Q X, X> + 2<S X, u> + <R u, u> + 2<q, X> + 2<r, u> dt

Coefficients are piecewise linear in time, stored as per-node tables on a
uniform grid and interpolated in between.  `validate` checks the standing
assumptions: finite bounded coefficients, invertible K, and the usual
definiteness conditions on the cost weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import EmptyGrid, OutOfRange, ShapeMismatch

__all__ = [
    "TimeGrid",
    "Dimensions",
    "CoefficientTable",
    "CoefficientSample",
    "CostWeights",
    "CostSample",
    "ModelSpec",
    "ToleranceConfig",
    "CheckResult",
    "ValidationReport",
    "sample",
    "sample_cost",
    "validate",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i*T/steps, i = 0..steps."""

    T: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise EmptyGrid(f"steps must be >= 1, got {self.steps}")
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError(f"horizon must be positive and finite, got {self.T}")

    @property
    def h(self) -> float:
        return self.T / self.steps

    @cached_property
    def nodes(self) -> np.ndarray:
        # (steps+1,), endpoints exact
        return np.linspace(0.0, self.T, self.steps + 1)


@dataclass(frozen=True)
class Dimensions:
    n: int  # state
    m: int  # control
    d: int  # observation / common noise
    k: int  # state-only noise

    def __post_init__(self):
        for name in ("n", "m", "d", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"dimension {name} must be >= 1")


def _as_table(v, shape, name) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != shape:
        raise ShapeMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def _tile(v, nnodes) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    return np.repeat(arr[None, ...], nnodes, axis=0)


@dataclass(frozen=True)
class CoefficientTable:
    """Per-node values of the dynamics coefficients on `grid`.

    Leading axis indexes grid nodes; trailing axes are the matrix shape.
    """

    grid: TimeGrid
    A: np.ndarray  # (N+1, n, n)
    B: np.ndarray  # (N+1, n, m)
    a: np.ndarray  # (N+1, n)
    C: np.ndarray  # (N+1, n, d)
    D: np.ndarray  # (N+1, n, k)
    H: np.ndarray  # (N+1, d, n)
    h: np.ndarray  # (N+1, d)
    K: np.ndarray  # (N+1, d, d)

    _FIELDS = ("A", "B", "a", "C", "D", "H", "h", "K")

    def __post_init__(self):
        for name in self._FIELDS:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def constant(cls, grid: TimeGrid, *, A, B, a, C, D, H, h, K) -> "CoefficientTable":
        """Build a table holding the same coefficient values at every node."""
        nn = grid.steps + 1
        return cls(
            grid,
            A=_tile(A, nn), B=_tile(B, nn), a=_tile(a, nn), C=_tile(C, nn),
            D=_tile(D, nn), H=_tile(H, nn), h=_tile(h, nn), K=_tile(K, nn),
        )


class CoefficientSample(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    a: np.ndarray
    C: np.ndarray
    D: np.ndarray
    H: np.ndarray
    h: np.ndarray
    K: np.ndarray


@dataclass(frozen=True)
class CostWeights:
    """Cost data: terminal (G, g) plus per-node running weights on `grid`."""

    grid: TimeGrid
    G: np.ndarray  # (n, n)
    g: np.ndarray  # (n,)
    Q: np.ndarray  # (N+1, n, n)
    S: np.ndarray  # (N+1, m, n)
    R: np.ndarray  # (N+1, m, m)
    q: np.ndarray  # (N+1, n)
    r: np.ndarray  # (N+1, m)
    delta: float = 1e-6  # uniform definiteness floor for R

    _FIELDS = ("G", "g", "Q", "S", "R", "q", "r")

    def __post_init__(self):
        for name in self._FIELDS:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @classmethod
    def constant(cls, grid: TimeGrid, *, G, g, Q, S, R, q, r, delta=1e-6) -> "CostWeights":
        nn = grid.steps + 1
        return cls(
            grid,
            G=np.asarray(G, dtype=float), g=np.asarray(g, dtype=float),
            Q=_tile(Q, nn), S=_tile(S, nn), R=_tile(R, nn),
            q=_tile(q, nn), r=_tile(r, nn), delta=delta,
        )


class CostSample(NamedTuple):
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    q: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    """Complete problem instance."""

    dims: Dimensions
    T: float
    coeffs: CoefficientTable
    cost: CostWeights
    x0: np.ndarray  # (n,)

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))


@dataclass(frozen=True)
class ToleranceConfig:
    psd_tol: float = 1e-9     # eigenvalue floor is -psd_tol*(1+||M||)
    sym_tol: float = 1e-12    # absolute bound on ||M - M^T||
    k_cond_bound: float = 1e8  # condition number cap for K


# ---------------------------------------------------------------------------
# interpolation

def _bracket(grid: TimeGrid, t: float):
    """Index i and weight w with t = (1-w) t_i + w t_{i+1}; exact at nodes."""
    if t < 0.0 or t > grid.T:
        raise OutOfRange(f"t={t!r} outside [0, {grid.T}]")
    i = int(t / grid.h)
    if i > grid.steps - 1:
        i = grid.steps - 1
    nodes = grid.nodes
    w = (t - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, w


def interp_table(grid: TimeGrid, values: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation of a per-node table; returns node values exactly."""
    i, w = _bracket(grid, t)
    if w == 0.0:
        return values[i]
    if w == 1.0:
        return values[i + 1]
    return (1.0 - w) * values[i] + w * values[i + 1]


def sample(coeffs: CoefficientTable, t: float) -> CoefficientSample:
    """Dynamics coefficients at time t by linear interpolation between nodes."""
    i, w = _bracket(coeffs.grid, t)
    if w == 0.0:
        return CoefficientSample(*(getattr(coeffs, f)[i] for f in CoefficientTable._FIELDS))
    if w == 1.0:
        return CoefficientSample(*(getattr(coeffs, f)[i + 1] for f in CoefficientTable._FIELDS))
    return CoefficientSample(
        *((1.0 - w) * getattr(coeffs, f)[i] + w * getattr(coeffs, f)[i + 1]
          for f in CoefficientTable._FIELDS)
    )


def sample_cost(cost: CostWeights, t: float) -> CostSample:
    """Running cost weights at time t by linear interpolation between nodes."""
    i, w = _bracket(cost.grid, t)
    if w == 0.0:
        return CostSample(cost.Q[i], cost.S[i], cost.R[i], cost.q[i], cost.r[i])
    if w == 1.0:
        j = i + 1
        return CostSample(cost.Q[j], cost.S[j], cost.R[j], cost.q[j], cost.r[j])
    u = 1.0 - w
    return CostSample(
        u * cost.Q[i] + w * cost.Q[i + 1],
        u * cost.S[i] + w * cost.S[i + 1],
        u * cost.R[i] + w * cost.R[i + 1],
        u * cost.q[i] + w * cost.q[i + 1],
        u * cost.r[i] + w * cost.r[i + 1],
    )


def table_at_nodes(grid: TimeGrid, table_grid: TimeGrid, values: np.ndarray) -> np.ndarray:
    """Resample a per-node table onto the nodes of another grid."""
    if grid.steps == table_grid.steps and grid.T == table_grid.T:
        return values
    out = np.empty((grid.steps + 1,) + values.shape[1:])
    for i, t in enumerate(grid.nodes):
        out[i] = interp_table(table_grid, values, min(t, table_grid.T))
    return out


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class CheckResult:
    """One assumption check.  margin >= 0 means pass; worst_node attains it."""

    name: str
    passed: bool
    worst_node: int | None
    margin: float


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            node = "-" if c.worst_node is None else str(c.worst_node)
            status = "pass" if c.passed else "FAIL"
            lines.append(f"{status:4s}  {c.name:24s} worst_node={node:>4s}  margin={c.margin:.6e}")
        return "\n".join(lines)


_COEFF_SHAPES = {
    "A": ("n", "n"), "B": ("n", "m"), "a": ("n",), "C": ("n", "d"),
    "D": ("n", "k"), "H": ("d", "n"), "h": ("d",), "K": ("d", "d"),
}
_COST_SHAPES = {"Q": ("n", "n"), "S": ("m", "n"), "R": ("m", "m"), "q": ("n",), "r": ("m",)}


def _check_shapes(model: ModelSpec):
    dims = {"n": model.dims.n, "m": model.dims.m, "d": model.dims.d, "k": model.dims.k}
    grid = model.coeffs.grid
    if model.cost.grid.steps != grid.steps or model.cost.grid.T != grid.T:
        raise ShapeMismatch("cost tables and coefficient tables use different grids")
    if grid.T != model.T:
        raise ShapeMismatch(f"coefficient grid spans [0, {grid.T}], model horizon is {model.T}")
    nn = grid.steps + 1
    for name, dim_names in _COEFF_SHAPES.items():
        want = (nn,) + tuple(dims[s] for s in dim_names)
        got = getattr(model.coeffs, name).shape
        if got != want:
            raise ShapeMismatch(f"coefficient {name}: expected shape {want}, got {got}")
    for name, dim_names in _COST_SHAPES.items():
        want = (nn,) + tuple(dims[s] for s in dim_names)
        got = getattr(model.cost, name).shape
        if got != want:
            raise ShapeMismatch(f"cost weight {name}: expected shape {want}, got {got}")
    n = dims["n"]
    if model.cost.G.shape != (n, n):
        raise ShapeMismatch(f"G: expected shape {(n, n)}, got {model.cost.G.shape}")
    if model.cost.g.shape != (n,):
        raise ShapeMismatch(f"g: expected shape {(n,)}, got {model.cost.g.shape}")
    if model.x0.shape != (n,):
        raise ShapeMismatch(f"x0: expected shape {(n,)}, got {model.x0.shape}")


def _finite_check(name: str, tables: dict[str, np.ndarray]) -> CheckResult:
    for tname, arr in tables.items():
        finite = np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1)
        if not finite.all():
            node = int(np.argmin(finite))
            return CheckResult(name, False, node, float("-inf"))
    return CheckResult(name, True, None, 0.0)


def _sym_slack(M: np.ndarray) -> float:
    return float(np.linalg.norm(M - M.swapaxes(-1, -2)))


def _eig_floor(M: np.ndarray, psd_tol: float) -> float:
    """Slack of the PSD check: eigmin + psd_tol*(1 + ||M||), on the symmetric part."""
    Ms = 0.5 * (M + M.T)
    eigmin = float(np.linalg.eigvalsh(Ms)[0])
    return eigmin + psd_tol * (1.0 + float(np.linalg.norm(M)))


def _per_node_min(values: np.ndarray, fn) -> tuple[int, float]:
    slacks = [fn(values[i]) for i in range(values.shape[0])]
    worst = int(np.argmin(slacks))
    return worst, float(slacks[worst])


def validate(model: ModelSpec, tol: ToleranceConfig = ToleranceConfig()) -> ValidationReport:
    """Check the standing assumptions node by node.

    Shape inconsistencies raise ShapeMismatch; everything else is reported
    as a pass/fail entry with the worst node and its margin.
    """
    _check_shapes(model)
    co, cw = model.coeffs, model.cost
    checks: list[CheckResult] = []

    checks.append(_finite_check(
        "A1_coefficients_finite",
        {f: getattr(co, f) for f in CoefficientTable._FIELDS}))

    # condition number cap stands in for uniform invertibility of K
    conds = [float(np.linalg.cond(co.K[i])) for i in range(co.K.shape[0])]
    worst = int(np.argmax(conds))
    margin = tol.k_cond_bound - conds[worst]
    if not np.isfinite(conds[worst]):
        margin = float("-inf")
    checks.append(CheckResult("A2_K_invertible", margin >= 0, worst, margin))

    checks.append(_finite_check(
        "A3_cost_finite",
        {f: getattr(cw, f) for f in ("G", "g", "Q", "S", "R", "q", "r")}))

    checks.append(CheckResult("A3_G_symmetric", _sym_slack(cw.G) <= tol.sym_tol,
                              None, tol.sym_tol - _sym_slack(cw.G)))
    for name, table in (("A3_Q_symmetric", cw.Q), ("A3_R_symmetric", cw.R)):
        worst, slack = _per_node_min(table, lambda M: tol.sym_tol - _sym_slack(M))
        checks.append(CheckResult(name, slack >= 0, worst, slack))

    g_slack = _eig_floor(cw.G, tol.psd_tol)
    checks.append(CheckResult("A3_G_psd", g_slack >= 0, None, g_slack))

    worst, slack = _per_node_min(
        cw.R, lambda M: _eig_floor(M, tol.psd_tol) - cw.delta)
    checks.append(CheckResult("A3_R_uniformly_definite", slack >= 0, worst, slack))

    def qsrs_slack(i):
        Q, S, R = cw.Q[i], cw.S[i], cw.R[i]
        try:
            M = Q - S.T @ np.linalg.solve(0.5 * (R + R.T), S)
        except np.linalg.LinAlgError:
            return float("-inf")
        return _eig_floor(M, tol.psd_tol)

    worst, slack = _per_node_min(np.arange(cw.Q.shape[0]), qsrs_slack)
    checks.append(CheckResult("A3_QSRS_psd", slack >= 0, worst, slack))

    return ValidationReport(tuple(checks))
