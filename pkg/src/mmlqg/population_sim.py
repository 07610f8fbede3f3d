"""Finite populations driven by the equilibrium feedback laws.

The simulator runs N minor agents plus the major agent under Euler,
Maruyama on the solver grid.  Every feedback law reads the deterministic
internal mean-field state, advanced by the matching explicit Euler step
so that the whole population is one discrete-time linear Gaussian chain.
Costs come either from Monte Carlo over paths or exactly, by propagating
the mean and covariance of that same chain, which makes the exact value
the precise expectation of the Monte Carlo estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import (
    DimensionGuardError,
    DivergedPathError,
    IntegrationDivergedError,
    SchemaError,
)
from .lqg_single import _stage_values, psd_sqrt
from .mfg_model import MmMfgProblem
from .mfg_solver import MfgSolution, mean_field_step_euler
from .numerics import GridFunction, symmetrize, trapezoid_weights

JOINT_DIM_LIMIT = 2000


@dataclass
class PopulationConfig:
    N: int
    master_seed: int = 0
    num_paths: int = 1
    type_assignment: Optional[Sequence[int]] = None
    xbar0: Optional[np.ndarray] = None
    init_cov_major: Optional[np.ndarray] = None
    init_cov_minor: Optional[np.ndarray] = None
    record_states: bool = True

    def __post_init__(self):
        if int(self.N) < 1:
            raise SchemaError("N must be at least 1")
        self.N = int(self.N)
        if int(self.num_paths) < 1:
            raise SchemaError("num_paths must be at least 1")
        self.num_paths = int(self.num_paths)
        if not (0 <= int(self.master_seed) < 2 ** 64):
            raise SchemaError("master_seed must fit in 64 bits")
        self.master_seed = int(self.master_seed)
        if self.type_assignment is not None:
            ta = np.asarray(self.type_assignment, dtype=np.int64)
            if ta.shape != (self.N,):
                raise SchemaError("type_assignment must list one type per agent")
            self.type_assignment = ta
        if self.xbar0 is not None:
            self.xbar0 = np.asarray(self.xbar0, dtype=float).reshape(-1)


@dataclass
class TrajectoryBundle:
    """States, controls and mean-field tracks of one simulation run.

    Agent axis: index 0 is the major agent, 1..N the minors.  The
    empirical_global average combines per-type means with weights
    counts_k / N, in ascending type order, and is the quantity fed into
    the F-coupling of every drift.  Types without members contribute a
    zero block to empirical_types.
    """

    grid: object
    type_of: np.ndarray
    counts: np.ndarray
    states: Optional[np.ndarray]        # (paths, M+1, N+1, n)
    controls: Optional[np.ndarray]      # (paths, M+1, N+1, m)
    xbar: np.ndarray                    # (paths, M+1, nK)
    empirical_types: np.ndarray         # (paths, M+1, nK)
    empirical_global: np.ndarray        # (paths, M+1, n)
    config: PopulationConfig

    @property
    def num_paths(self) -> int:
        return self.xbar.shape[0]

    @property
    def N(self) -> int:
        return self.type_of.shape[0]


@dataclass
class CostReport:
    agent_id: int
    value: float
    std_error: float
    method: str
    num_paths: int

    def __post_init__(self):
        if self.std_error < 0.0:
            raise SchemaError("standard error must be nonnegative")


def assign_types(pi, N: int) -> np.ndarray:
    """Deterministic assignment keeping the prefix fractions closest to pi.

    Agent i gets the type maximizing pi_k * i - count_k, ties to the lowest
    index; prefixes are stable, so agent draws can be reused across N.
    """
    pi = np.asarray(pi, dtype=float)
    counts = np.zeros(pi.shape[0])
    out = np.empty(N, dtype=np.int64)
    for i in range(1, N + 1):
        k = int(np.argmax(pi * i - counts))
        out[i - 1] = k
        counts[k] += 1.0
    return out


def _stream(master_seed: int, stream: int, path: int, agent: int) -> np.random.Generator:
    # counter word 0 is the draw counter; (path, agent) words keep streams disjoint
    key = np.array([master_seed, stream], dtype=np.uint64)
    counter = np.array([0, path, agent, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def _type_means(Xm: np.ndarray, idx: List[np.ndarray], counts: np.ndarray,
                weights: np.ndarray, n: int):
    K = len(idx)
    stacked = np.zeros(n * K)
    glob = np.zeros(n)
    for k in range(K):
        if counts[k] == 0:
            continue
        mean_k = Xm[idx[k]].sum(axis=0) / counts[k]
        stacked[k * n:(k + 1) * n] = mean_k
        glob = glob + weights[k] * mean_k
    return stacked, glob


def simulate_population(p: MmMfgProblem, sol: MfgSolution,
                        cfg: PopulationConfig) -> TrajectoryBundle:
    """Euler-Maruyama run of the closed-loop population.

    Per step: empirical averages and controls are formed at the current
    node, then agents, major and the internal mean field all move by one
    explicit Euler step on node-j coefficients.  Noise comes from
    counter-based streams keyed by (master_seed, path, agent), so output
    is independent of scheduling and agent draws are shared across
    different N.
    """
    if sol.problem.grid != p.grid:
        raise SchemaError("solution grid does not match the problem grid")
    n, m, r, K = p.n, p.m, p.r, p.K
    N, P = cfg.N, cfg.num_paths
    grid = p.grid
    M = grid.num_steps
    h = grid.h
    sqh = math.sqrt(h)

    type_of = cfg.type_assignment if cfg.type_assignment is not None \
        else assign_types(p.pi, N)
    if np.any(type_of < 0) or np.any(type_of >= K):
        raise SchemaError("type_assignment contains an unknown type index")
    idx = [np.flatnonzero(type_of == k) for k in range(K)]
    counts = np.array([ix.size for ix in idx], dtype=float)
    weights = counts / float(N)

    cov0 = cfg.init_cov_major if cfg.init_cov_major is not None else p.init_cov_major
    covm = cfg.init_cov_minor if cfg.init_cov_minor is not None else p.init_cov_minor
    sqrt0 = psd_sqrt(np.asarray(cov0, dtype=float))
    sqrtm = psd_sqrt(np.asarray(covm, dtype=float))
    xbar_init = np.zeros(n * K) if cfg.xbar0 is None else cfg.xbar0
    if xbar_init.shape != (n * K,):
        raise SchemaError("xbar0 must have length n*K")

    # node tables for the laws and drifts
    K0v, k0v = sol.major_law.K.values, sol.major_law.k.values
    Kkv = [sol.minor_laws[k].K.values for k in range(K)]
    kkv = [sol.minor_laws[k].k.values for k in range(K)]
    b0v = p.major.b0.values[:, :, 0]
    bkv = [p.minors[k].bk.values[:, :, 0] for k in range(K)]
    Ab_st = _stage_values(sol.mf_law.Abar)
    Gb_st = _stage_values(sol.mf_law.Gbar)
    mb_st = _stage_values(sol.mf_law.mbar)

    mj = p.major
    Ak = [p.minors[k].Ak for k in range(K)]
    Fk = [p.minors[k].Fk for k in range(K)]
    Gk = [p.minors[k].Gk for k in range(K)]
    Bk = [p.minors[k].Bk for k in range(K)]
    sigk = [p.minors[k].sigmak for k in range(K)]

    states = np.empty((P, M + 1, N + 1, n)) if cfg.record_states else None
    controls = np.empty((P, M + 1, N + 1, m)) if cfg.record_states else None
    xbar_out = np.empty((P, M + 1, n * K))
    emp_types = np.empty((P, M + 1, n * K))
    emp_glob = np.empty((P, M + 1, n))

    def run_path(path, x0, Xm, dW0, dWm, xbar):
        for j in range(M + 1):
            stacked, glob = _type_means(Xm, idx, counts, weights, n)
            emp_types[path, j] = stacked
            emp_glob[path, j] = glob
            xbar_out[path, j] = xbar
            X0ext = np.concatenate([x0, xbar])
            u0 = k0v[j][:, 0] - K0v[j] @ X0ext
            U = np.empty((N, m))
            for k in range(K):
                if counts[k] == 0:
                    continue
                cnt = idx[k].size
                Xe = np.empty((cnt, 2 * n + n * K))
                Xe[:, :n] = Xm[idx[k]]
                Xe[:, n:2 * n] = x0
                Xe[:, 2 * n:] = xbar
                U[idx[k]] = Xe @ (-Kkv[k][j].T) + kkv[k][j][:, 0]
            if cfg.record_states:
                states[path, j, 0] = x0
                states[path, j, 1:] = Xm
                controls[path, j, 0] = u0
                controls[path, j, 1:] = U
            if j == M:
                return

            x0_next = x0 + h * (mj.A0 @ x0 + mj.F0 @ glob + mj.B0 @ u0 + b0v[j]) \
                + sqh * (mj.sigma0 @ dW0[j])
            Xm_next = np.empty_like(Xm)
            for k in range(K):
                if counts[k] == 0:
                    continue
                ik = idx[k]
                drift = Xm[ik] @ Ak[k].T + glob @ Fk[k].T + x0 @ Gk[k].T \
                    + U[ik] @ Bk[k].T + bkv[k][j]
                Xm_next[ik] = Xm[ik] + h * drift + sqh * (dWm[ik, j] @ sigk[k].T)
            xbar = mean_field_step_euler(Ab_st, Gb_st, mb_st, j, h, xbar, x0)
            x0, Xm = x0_next, Xm_next
            if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(Xm))
                    and np.all(np.isfinite(xbar))):
                raise DivergedPathError(
                    "simulation diverged on path %d at node %d" % (path, j + 1),
                    path=path, node=j + 1,
                )

    # overflow in a diverging path is expected; the finite check reports it
    with np.errstate(over="ignore", invalid="ignore"):
        for path in range(P):
            x0 = sqrt0 @ _stream(cfg.master_seed, 1, path, 0).standard_normal(n)
            Xm = np.empty((N, n))
            for a in range(N):
                Xm[a] = sqrtm @ _stream(cfg.master_seed, 1, path, a + 1).standard_normal(n)
            dW0 = _stream(cfg.master_seed, 0, path, 0).standard_normal((M, r))
            dWm = np.empty((N, M, r))
            for a in range(N):
                dWm[a] = _stream(cfg.master_seed, 0, path, a + 1).standard_normal((M, r))
            run_path(path, x0, Xm, dW0, dWm, xbar_init.copy())

    return TrajectoryBundle(
        grid=grid, type_of=type_of, counts=counts.astype(np.int64),
        states=states, controls=controls, xbar=xbar_out,
        empirical_types=emp_types, empirical_global=emp_glob, config=cfg,
    )


def empirical_mean_field(bundle: TrajectoryBundle) -> List[GridFunction]:
    """Per-path stacked per-type averages as nK x 1 grid functions."""
    P = bundle.num_paths
    nK = bundle.xbar.shape[2]
    K = bundle.counts.shape[0]
    n = nK // K
    out = []
    if bundle.states is None:
        for path in range(P):
            out.append(GridFunction(bundle.grid, bundle.empirical_types[path][:, :, None]))
        return out
    for path in range(P):
        vals = np.zeros((bundle.grid.num_nodes, nK, 1))
        minors = bundle.states[path][:, 1:, :]
        for k in range(K):
            ix = np.flatnonzero(bundle.type_of == k)
            if ix.size == 0:
                continue
            vals[:, k * n:(k + 1) * n, 0] = minors[:, ix, :].sum(axis=1) / ix.size
        out.append(GridFunction(bundle.grid, vals))
    return out


def _deviation_quadratic(C, eta, Q, Ncr, R, L_u, u_c):
    """Quadratic form (W, l, c) of dev'Q dev + 2 dev'N u + u'R u.

    dev = C z - eta and u = L_u z + u_c; the returned pieces satisfy
    z'Wz + 2 z'l + c for every z.
    """
    CN = C.T @ Ncr
    cross = CN @ L_u
    W = symmetrize(C.T @ Q @ C + cross + cross.T + L_u.T @ R @ L_u)
    l = -C.T @ (Q @ eta) + CN @ u_c + L_u.T @ (R @ u_c - Ncr.T @ eta)
    c = (eta.T @ Q @ eta - 2.0 * eta.T @ Ncr @ u_c + u_c.T @ R @ u_c).item()
    return W, l, c


def finite_cost_monte_carlo(p: MmMfgProblem, bundle: TrajectoryBundle,
                            agent_id: int) -> CostReport:
    """Pathwise trapezoid cost of one agent, averaged across paths."""
    if bundle.states is None or bundle.controls is None:
        raise SchemaError("bundle was recorded without states; rerun with record_states")
    if not (0 <= agent_id <= bundle.N):
        raise SchemaError("agent_id out of range")
    grid = bundle.grid
    w = trapezoid_weights(grid)
    disc = np.exp(-p.rho * grid.nodes)
    x = bundle.states[:, :, agent_id, :]
    u = bundle.controls[:, :, agent_id, :]
    xN = bundle.empirical_global
    x0 = bundle.states[:, :, 0, :]
    if agent_id == 0:
        mj = p.major
        track = x - xN @ mj.H0.T
        dev = track - mj.eta0[:, 0]
        Q, Ncr, R, Qhat = mj.Q0, mj.N0, mj.R0, mj.Qhat0
    else:
        mn = p.minors[int(bundle.type_of[agent_id - 1])]
        track = x - x0 @ mn.Hk.T - xN @ mn.Hhatk.T
        dev = track - mn.etak[:, 0]
        Q, Ncr, R, Qhat = mn.Qk, mn.Nk, mn.Rk, mn.Qhatk
    quad = np.einsum("pja,ab,pjb->pj", dev, Q, dev) \
        + 2.0 * np.einsum("pja,ab,pjb->pj", dev, Ncr, u) \
        + np.einsum("pja,ab,pjb->pj", u, R, u)
    run = (quad * disc) @ w
    # terminal weight applies to the coupled tracking error only; the
    # constant target eta enters the running cost, matching s(T) = 0
    term = disc[-1] * np.einsum("pa,ab,pb->p", track[:, -1], Qhat, track[:, -1])
    J = 0.5 * (run + term)
    value = float(J.mean())
    if J.size > 1:
        se = float(J.std(ddof=1) / math.sqrt(J.size))
    else:
        se = 0.0
    return CostReport(agent_id=agent_id, value=value, std_error=se,
                      method="monte_carlo", num_paths=bundle.num_paths)


def _sel(D: int, off: int, n: int) -> np.ndarray:
    S = np.zeros((n, D))
    S[:, off:off + n] = np.eye(n)
    return S


class _JointClosedLoop:
    """Everybody-in-closed-loop joint system on z = (x^1..x^N, x0, xbar)."""

    def __init__(self, p: MmMfgProblem, sol: MfgSolution, cfg: PopulationConfig):
        if sol.problem.grid != p.grid:
            raise SchemaError("solution grid does not match the problem grid")
        n, m, K, N = p.n, p.m, p.K, cfg.N
        D = n * (N + 1) + n * K
        if D > JOINT_DIM_LIMIT:
            raise DimensionGuardError(
                "joint state dimension %d exceeds the limit %d" % (D, JOINT_DIM_LIMIT)
            )
        self.p, self.sol, self.cfg = p, sol, cfg
        self.n, self.m, self.K, self.N, self.D = n, m, K, N, D
        self.type_of = cfg.type_assignment if cfg.type_assignment is not None \
            else assign_types(p.pi, N)
        self.idx = [np.flatnonzero(self.type_of == k) for k in range(K)]
        self.x0_off = n * N
        self.xb_off = n * (N + 1)

        self.K0_st = _stage_values(sol.major_law.K)
        self.k0_st = _stage_values(sol.major_law.k)
        self.Kk_st = [_stage_values(sol.minor_laws[k].K) for k in range(K)]
        self.kk_st = [_stage_values(sol.minor_laws[k].k) for k in range(K)]
        self.Ab_st = _stage_values(sol.mf_law.Abar)
        self.Gb_st = _stage_values(sol.mf_law.Gbar)
        self.mb_st = _stage_values(sol.mf_law.mbar)
        self.b0_st = _stage_values(p.major.b0)
        self.bk_st = [_stage_values(p.minors[k].bk) for k in range(K)]

        base = np.zeros((D, D))
        for k in range(K):
            tile = np.tile(p.minors[k].Fk / N, (1, N))
            for a in self.idx[k]:
                rows = slice(a * n, (a + 1) * n)
                base[rows, :n * N] = tile
                base[rows, rows] += p.minors[k].Ak
                base[rows, self.x0_off:self.x0_off + n] += p.minors[k].Gk
        x0r = slice(self.x0_off, self.x0_off + n)
        base[x0r, :n * N] = np.tile(p.major.F0 / N, (1, N))
        base[x0r, x0r] += p.major.A0
        self._base = base

        Sig2 = np.zeros((D, D))
        for k in range(K):
            blk = p.minors[k].sigmak @ p.minors[k].sigmak.T
            for a in self.idx[k]:
                rows = slice(a * n, (a + 1) * n)
                Sig2[rows, rows] = blk
        Sig2[x0r, x0r] = p.major.sigma0 @ p.major.sigma0.T
        self.Sig2 = Sig2

        cov0 = cfg.init_cov_major if cfg.init_cov_major is not None else p.init_cov_major
        covm = cfg.init_cov_minor if cfg.init_cov_minor is not None else p.init_cov_minor
        V0 = np.zeros((D, D))
        for a in range(N):
            rows = slice(a * n, (a + 1) * n)
            V0[rows, rows] = covm
        V0[x0r, x0r] = cov0
        self.V0 = V0
        mu0 = np.zeros((D, 1))
        if cfg.xbar0 is not None:
            mu0[self.xb_off:, 0] = cfg.xbar0
        self.mu0 = mu0

        # average over all minors, the deviator's own state included
        self.avg = np.zeros((n, D))
        for a in range(N):
            self.avg[:, a * n:(a + 1) * n] = np.eye(n) / N

    def A(self, q: int) -> np.ndarray:
        n = self.n
        out = self._base.copy()
        for k in range(self.K):
            Kq = self.Kk_st[k][q]
            Bk = self.p.minors[k].Bk
            BKx = Bk @ Kq[:, :n]
            BK0 = Bk @ Kq[:, n:2 * n]
            BKmf = Bk @ Kq[:, 2 * n:]
            for a in self.idx[k]:
                rows = slice(a * n, (a + 1) * n)
                out[rows, rows] -= BKx
                out[rows, self.x0_off:self.x0_off + n] -= BK0
                out[rows, self.xb_off:] -= BKmf
        x0r = slice(self.x0_off, self.x0_off + n)
        K0q = self.K0_st[q]
        B0 = self.p.major.B0
        out[x0r, x0r] -= B0 @ K0q[:, :n]
        out[x0r, self.xb_off:] -= B0 @ K0q[:, n:]
        xbr = slice(self.xb_off, self.D)
        out[xbr, x0r] = self.Gb_st[q]
        out[xbr, xbr] = self.Ab_st[q]
        return out

    def d(self, q: int) -> np.ndarray:
        n = self.n
        out = np.zeros((self.D, 1))
        for k in range(self.K):
            row = self.bk_st[k][q] + self.p.minors[k].Bk @ self.kk_st[k][q]
            for a in self.idx[k]:
                out[a * n:(a + 1) * n] = row
        out[self.x0_off:self.x0_off + n] = \
            self.b0_st[q] + self.p.major.B0 @ self.k0_st[q]
        out[self.xb_off:] = self.mb_st[q]
        return out

    def agent_cost_geometry(self, agent_id: int):
        """(C, eta, Q, Ncr, R, Qhat, U) of the agent's deviation cost."""
        n = self.n
        if agent_id == 0:
            mj = self.p.major
            C = _sel(self.D, self.x0_off, n) - mj.H0 @ self.avg
            U = np.vstack([
                _sel(self.D, self.x0_off, n),
                _sel(self.D, self.xb_off, n * self.K),
            ])
            return C, mj.eta0, mj.Q0, mj.N0, mj.R0, mj.Qhat0, U
        mn = self.p.minors[int(self.type_of[agent_id - 1])]
        own = _sel(self.D, (agent_id - 1) * n, n)
        C = own - mn.Hk @ _sel(self.D, self.x0_off, n) - mn.Hhatk @ self.avg
        U = np.vstack([
            own,
            _sel(self.D, self.x0_off, n),
            _sel(self.D, self.xb_off, n * self.K),
        ])
        return C, mn.etak, mn.Qk, mn.Nk, mn.Rk, mn.Qhatk, U


def discrete_chain_cost(grid, rho, mu0, V0, A_of, d_of, Sig2, node_cost,
                        term_cost) -> float:
    """Expected cost of the Euler-Maruyama chain, by moment recursion.

    The chain is z_{j+1} = (I + h A_j) z_j + h d_j + sqrt(h) noise with
    stationary covariance Sig2 per unit time; the running cost is the
    trapezoid sum of discounted quadratic forms at the nodes.  This is
    the exact expectation of the simulated pathwise cost, so it carries
    the same O(h) discretization bias and no sampling error.
    """
    w = trapezoid_weights(grid)
    disc = np.exp(-rho * grid.nodes)
    M = grid.num_steps
    h = grid.h
    mu = mu0.copy()
    V = V0.copy()
    D = mu.shape[0]
    eye = np.eye(D)
    J = 0.0
    for j in range(M):
        W, l, c = node_cost(j)
        S = V + mu @ mu.T
        J += 0.5 * w[j] * disc[j] * (np.tensordot(W, S) + 2.0 * (l.T @ mu).item() + c)
        P = eye + h * A_of(2 * j)
        mu = P @ mu + h * d_of(2 * j)
        V = symmetrize(P @ V @ P.T + h * Sig2)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(V))):
            raise IntegrationDivergedError(
                "moment recursion diverged at node %d" % (j + 1),
                node=j + 1, time=grid.nodes[j + 1],
            )
    W, l, c = node_cost(M)
    S = V + mu @ mu.T
    J += 0.5 * w[M] * disc[M] * (np.tensordot(W, S) + 2.0 * (l.T @ mu).item() + c)
    W_T, l_T, c_T = term_cost
    J += 0.5 * disc[M] * (np.tensordot(W_T, S) + 2.0 * (l_T.T @ mu).item() + c_T)
    return float(J)


def expected_cost_exact(p: MmMfgProblem, sol: MfgSolution, cfg: PopulationConfig,
                        agent_id: int) -> CostReport:
    """Exact expected equilibrium cost by joint moment propagation."""
    if not (0 <= agent_id <= cfg.N):
        raise SchemaError("agent_id out of range")
    js = _JointClosedLoop(p, sol, cfg)
    C, eta, Q, Ncr, R, Qhat, U = js.agent_cost_geometry(agent_id)
    if agent_id == 0:
        K_st, k_st = js.K0_st, js.k0_st
    else:
        k = int(js.type_of[agent_id - 1])
        K_st, k_st = js.Kk_st[k], js.kk_st[k]

    def node_cost(j):
        q = 2 * j
        return _deviation_quadratic(C, eta, Q, Ncr, R, -K_st[q] @ U, k_st[q])

    # terminal weight hits the coupled tracking error C z alone: eta is a
    # running-cost target only, so the terminal form has no linear part
    W_term = symmetrize(C.T @ Qhat @ C)
    l_term = np.zeros((C.shape[1], 1))
    c_term = 0.0
    J = discrete_chain_cost(p.grid, p.rho, js.mu0, js.V0, js.A, js.d, js.Sig2,
                            node_cost, (W_term, l_term, c_term))
    return CostReport(agent_id=agent_id, value=J, std_error=0.0,
                      method="moment_recursion", num_paths=0)


@dataclass
class ConvergenceStudy:
    rows: List[tuple]
    slope: float


def mean_field_convergence_study(p: MmMfgProblem, sol: MfgSolution,
                                 Ns: Sequence[int],
                                 seeds: Sequence[int]) -> ConvergenceStudy:
    """RMS distance between empirical type averages and the mean field.

    One single-path simulation per (N, seed); the counter-based streams
    make the first N agent draws common across the N sweep.  Returns rows
    (N, rms) and the slope of log rms against log N.
    """
    rows = []
    for N in Ns:
        total = 0.0
        count = 0
        for seed in seeds:
            cfg = PopulationConfig(N=int(N), master_seed=int(seed),
                                   num_paths=1, record_states=False)
            bundle = simulate_population(p, sol, cfg)
            dev = bundle.empirical_types[0] - bundle.xbar[0]
            total += float(np.sum(dev * dev))
            count += dev.shape[0]
        rows.append((int(N), math.sqrt(total / count)))
    logN = np.log([row[0] for row in rows])
    logr = np.log([max(row[1], 1e-300) for row in rows])
    slope = float(np.polyfit(logN, logr, 1)[0]) if len(rows) > 1 else 0.0
    return ConvergenceStudy(rows=rows, slope=slope)
