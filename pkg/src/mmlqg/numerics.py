"""Deterministic numerical substrate.

Uniform time grids, classic fixed-step RK4 sweeps for matrix-valued ODEs in
both directions, linear interpolation, and symmetric/PSD utilities.  Every
solver in the package shares one discretization, so all grids are uniform
and all sweeps land exactly on the grid nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrationDivergedError, OutOfRangeError, SchemaError

# Snap tolerance for node queries, in units of the step fraction t/h.
_NODE_SNAP = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with num_steps intervals.

    Nodes are t_j = j * h for j = 0..num_steps with h = t_end / num_steps.
    """

    t_end: float
    num_steps: int

    def __post_init__(self):
        if not (float(self.t_end) > 0.0):
            raise SchemaError("TimeGrid.t_end must be positive")
        if int(self.num_steps) < 1:
            raise SchemaError("TimeGrid.num_steps must be a positive integer")
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "num_steps", int(self.num_steps))

    @property
    def h(self) -> float:
        return self.t_end / self.num_steps

    @property
    def num_nodes(self) -> int:
        return self.num_steps + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.num_steps + 1)


@dataclass
class GridFunction:
    """Matrix-valued function sampled on a TimeGrid.

    values has shape (num_steps + 1, rows, cols): one matrix per node.
    Between nodes the function is defined by linear interpolation.
    """

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None, None]
        elif v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise SchemaError("GridFunction values must be (nodes, rows, cols)")
        if v.shape[0] != self.grid.num_nodes:
            raise SchemaError(
                "GridFunction has %d value rows, grid has %d nodes"
                % (v.shape[0], self.grid.num_nodes)
            )
        self.values = np.ascontiguousarray(v)

    @property
    def shape(self):
        return self.values.shape[1:]

    @classmethod
    def constant(cls, grid: TimeGrid, matrix) -> "GridFunction":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        vals = np.broadcast_to(m, (grid.num_nodes,) + m.shape).copy()
        return cls(grid, vals)

    @classmethod
    def zeros(cls, grid: TimeGrid, rows: int, cols: int = 1) -> "GridFunction":
        return cls(grid, np.zeros((grid.num_nodes, rows, cols)))

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def interp(self, t: float) -> np.ndarray:
        return interp(self, t)

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())


def interp(gf: GridFunction, t: float) -> np.ndarray:
    """Linear interpolation of a GridFunction; exact at grid nodes."""
    grid = gf.grid
    h = grid.h
    u = t / h
    if u < -_NODE_SNAP or u > grid.num_steps + _NODE_SNAP:
        raise OutOfRangeError(
            "time %g outside grid [0, %g]" % (t, grid.t_end)
        )
    j_near = int(round(u))
    if abs(u - j_near) <= _NODE_SNAP:
        return gf.values[j_near].copy()
    j = int(np.floor(u))
    frac = u - j
    return (1.0 - frac) * gf.values[j] + frac * gf.values[j + 1]


def symmetrize(P: np.ndarray) -> np.ndarray:
    """Return (P + P^T) / 2."""
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + P.T)


def psd_check(P: np.ndarray, tol: float) -> bool:
    """True iff the minimum eigenvalue of the symmetrized input is >= -tol."""
    P = symmetrize(np.asarray(P, dtype=float))
    if P.size == 0:
        return True
    w = np.linalg.eigvalsh(P)
    return bool(w[0] >= -tol)


def _check_finite(Y: np.ndarray, node: int, t: float, what: str):
    if not np.all(np.isfinite(Y)):
        raise IntegrationDivergedError(
            "%s produced a non-finite value at node %d (t = %.12g)"
            % (what, node, t),
            node=node,
            time=t,
        )


def integrate_backward(rhs, terminal, grid: TimeGrid, project=None) -> GridFunction:
    """Classic RK4 sweep of dY/dt = rhs(t, Y) from t_end down to 0.

    terminal is stored at the last node exactly.  project, if given, is
    applied to the state after every completed step (used to symmetrize
    Riccati iterates).  A non-finite value at any stage raises
    IntegrationDivergedError naming the node.
    """
    Y = np.atleast_2d(np.asarray(terminal, dtype=float)).copy()
    h = grid.h
    M = grid.num_steps
    out = np.empty((M + 1,) + Y.shape)
    out[M] = Y
    t = grid.t_end
    # overflow in a diverging sweep is expected; the finite check reports it
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(M - 1, -1, -1):
            k1 = rhs(t, Y)
            k2 = rhs(t - 0.5 * h, Y - 0.5 * h * k1)
            k3 = rhs(t - 0.5 * h, Y - 0.5 * h * k2)
            k4 = rhs(t - h, Y - h * k3)
            Y = Y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if project is not None:
                Y = project(Y)
            _check_finite(Y, j, t - h, "backward integration")
            out[j] = Y
            t -= h
    return GridFunction(grid, out)


def integrate_forward(rhs, initial, grid: TimeGrid, project=None) -> GridFunction:
    """Classic RK4 sweep of dY/dt = rhs(t, Y) from 0 up to t_end.

    Mirror of integrate_backward; initial is stored at node 0 exactly.
    """
    Y = np.atleast_2d(np.asarray(initial, dtype=float)).copy()
    h = grid.h
    M = grid.num_steps
    out = np.empty((M + 1,) + Y.shape)
    out[0] = Y
    t = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, M + 1):
            k1 = rhs(t, Y)
            k2 = rhs(t + 0.5 * h, Y + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, Y + 0.5 * h * k2)
            k4 = rhs(t + h, Y + h * k3)
            Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if project is not None:
                Y = project(Y)
            _check_finite(Y, j, t + h, "forward integration")
            out[j] = Y
            t += h
    return GridFunction(grid, out)


def rk4_backward_indexed(stage_rhs, terminal, grid: TimeGrid, project=None) -> GridFunction:
    """RK4 backward sweep whose right-hand side is queried by half-step index.

    stage_rhs(q, Y) evaluates the derivative at time q * h / 2, so nodes are
    even q and interval midpoints odd q.  Lets callers with tabulated
    time-varying coefficients avoid interpolation in the hot loop.  Same
    stepping arithmetic as integrate_backward.
    """
    Y = np.atleast_2d(np.asarray(terminal, dtype=float)).copy()
    h = grid.h
    M = grid.num_steps
    out = np.empty((M + 1,) + Y.shape)
    out[M] = Y
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(M - 1, -1, -1):
            q1 = 2 * (j + 1)
            qm = 2 * j + 1
            q0 = 2 * j
            k1 = stage_rhs(q1, Y)
            k2 = stage_rhs(qm, Y - 0.5 * h * k1)
            k3 = stage_rhs(qm, Y - 0.5 * h * k2)
            k4 = stage_rhs(q0, Y - h * k3)
            Y = Y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if project is not None:
                Y = project(Y)
            _check_finite(Y, j, j * h, "backward integration")
            out[j] = Y
    return GridFunction(grid, out)


def rk4_forward_indexed(stage_rhs, initial, grid: TimeGrid, project=None) -> GridFunction:
    """Forward mirror of rk4_backward_indexed."""
    Y = np.atleast_2d(np.asarray(initial, dtype=float)).copy()
    h = grid.h
    M = grid.num_steps
    out = np.empty((M + 1,) + Y.shape)
    out[0] = Y
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, M + 1):
            q0 = 2 * (j - 1)
            qm = 2 * j - 1
            q1 = 2 * j
            k1 = stage_rhs(q0, Y)
            k2 = stage_rhs(qm, Y + 0.5 * h * k1)
            k3 = stage_rhs(qm, Y + 0.5 * h * k2)
            k4 = stage_rhs(q1, Y + h * k3)
            Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if project is not None:
                Y = project(Y)
            _check_finite(Y, j, j * h, "forward integration")
            out[j] = Y
    return GridFunction(grid, out)


def cumulative_simpson(values: np.ndarray, h: float) -> np.ndarray:
    """Cumulative integral of equally spaced samples by local parabola fits.

    values has shape (M+1, ...); returns the running integral at every node
    with out[0] = 0.  Each increment integrates the quadratic through three
    consecutive samples, which keeps node-wise accuracy at O(h^3) where the
    trapezoid rule gives O(h^2).
    """
    v = np.asarray(values, dtype=float)
    M = v.shape[0] - 1
    out = np.zeros_like(v)
    if M == 0:
        return out
    if M == 1:
        out[1] = 0.5 * h * (v[0] + v[1])
        return out
    # Increment over [t_{j-1}, t_j] from the parabola through nodes
    # (j-2, j-1, j); the first interval uses the parabola through (0, 1, 2).
    out[1] = h * ((5.0 / 12.0) * v[0] + (2.0 / 3.0) * v[1] - (1.0 / 12.0) * v[2])
    inc = h * (-(1.0 / 12.0) * v[:-2] + (2.0 / 3.0) * v[1:-1] + (5.0 / 12.0) * v[2:])
    out[2:] = out[1] + np.cumsum(inc, axis=0)
    return out


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    """Composite trapezoid quadrature weights on the grid nodes."""
    w = np.full(grid.num_nodes, grid.h)
    w[0] = 0.5 * grid.h
    w[-1] = 0.5 * grid.h
    return w
