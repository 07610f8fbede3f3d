"""Consistency fixed point of the major-minor game.

The iteration variable is the closed-loop mean-field triple (Abar, Gbar,
mbar): given a triple, the major solves its extended LQG problem, each
minor type solves its extended problem against the major's solution, and
the minors' equilibrium feedback closes the loop into a new triple.  A
damped Picard scheme drives the triple to the fixed point; the resulting
Riccati/offset functions define the equilibrium feedback laws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import (
    AssumptionViolationError,
    FixedPointError,
    IntegrationDivergedError,
    RiccatiBlowupError,
    SchemaError,
)
from .lqg_single import (
    FeedbackLaw,
    _stage_values,
    hautus_report,
    psd_sqrt,
    solve_discounted_are,
    spd_solver,
)
from .mfg_model import (
    ExtendedMajorSystem,
    ExtendedMinorSystem,
    MeanFieldMatrices,
    MmMfgProblem,
    build_extended_major,
    build_extended_minor,
    build_mean_field_matrices,
    replicate_pi,
    selector,
    split_cross_blocks,
    validate_problem,
)
from .numerics import GridFunction, rk4_backward_indexed, symmetrize


@dataclass
class MeanFieldLaw:
    """Closed-loop mean-field dynamics dxbar = (Abar xbar + Gbar x0 + mbar) dt."""

    Abar: GridFunction
    Gbar: GridFunction
    mbar: GridFunction

    def copy(self) -> "MeanFieldLaw":
        return MeanFieldLaw(self.Abar.copy(), self.Gbar.copy(), self.mbar.copy())


@dataclass
class FixedPointConfig:
    theta: float = 0.5
    tol: float = 1e-8
    max_iters: int = 500
    initial_law: Optional[MeanFieldLaw] = None

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise SchemaError("damping theta must lie in (0, 1]")
        if self.tol <= 0.0:
            raise SchemaError("tol must be positive")
        if int(self.max_iters) < 1:
            raise SchemaError("max_iters must be a positive integer")
        self.max_iters = int(self.max_iters)


@dataclass
class FixedPointReport:
    iterations: int
    residual_history: List[float]
    residual: float
    converged: bool


@dataclass
class MfgSolution:
    Pi0: GridFunction
    s0: GridFunction
    Pik: List[GridFunction]
    sk: List[GridFunction]
    mf_law: MeanFieldLaw
    major_law: FeedbackLaw
    minor_laws: List[FeedbackLaw]
    report: FixedPointReport
    problem: MmMfgProblem
    ext_major: ExtendedMajorSystem
    ext_minors: List[ExtendedMinorSystem]


def _sweep_riccati(A_st, Bb, Qx, Nx, r_solve, rho, terminal, grid, what):
    def stage_rhs(q, P):
        Aq = A_st[q]
        PBN = P @ Bb + Nx
        return rho * P - P @ Aq - Aq.T @ P + PBN @ r_solve(PBN.T) - Qx

    try:
        return rk4_backward_indexed(stage_rhs, terminal, grid, project=symmetrize)
    except IntegrationDivergedError as exc:
        raise RiccatiBlowupError(
            "%s Riccati sweep diverged: %s" % (what, exc), node=exc.node, time=exc.time
        ) from exc


def _sweep_offset(A_st, Bb, Nx, r_solve, rho, Pi_st, M_st, nbar, etabar, grid, what,
                  s_terminal=None):
    BRNt = Bb @ r_solve(Nx.T)
    BRB = Bb @ r_solve(Bb.T)
    BRn = Bb @ r_solve(nbar)
    NRn = Nx @ r_solve(nbar)
    dim = Bb.shape[0]

    def stage_rhs(q, s):
        Aq = A_st[q]
        Pq = Pi_st[q]
        Acl_T = (Aq - BRNt).T - Pq @ BRB
        return rho * s - Acl_T @ s - Pq @ (M_st[q] + BRn) - NRn + etabar

    term = np.zeros((dim, 1)) if s_terminal is None else s_terminal
    try:
        return rk4_backward_indexed(stage_rhs, term, grid)
    except IntegrationDivergedError as exc:
        raise RiccatiBlowupError(
            "%s offset sweep diverged: %s" % (what, exc), node=exc.node, time=exc.time
        ) from exc


def _solve_major(p: MmMfgProblem, ext: ExtendedMajorSystem):
    r_solve = spd_solver(p.major.R0, what="R0")
    A_st = ext.Atilde0.stages(p.grid)
    Pi0 = _sweep_riccati(
        A_st, ext.Bb0, ext.Q0ext, ext.N0ext, r_solve, p.rho, ext.G0ext,
        p.grid, "major",
    )
    M_st = _stage_values(ext.Mtilde0)
    s0 = _sweep_offset(
        A_st, ext.Bb0, ext.N0ext, r_solve, p.rho, _stage_values(Pi0), M_st,
        ext.nbar0, ext.etabar0, p.grid, "major",
    )
    return Pi0, s0


def _solve_minor(p: MmMfgProblem, ext: ExtendedMinorSystem):
    r_solve = spd_solver(p.minors[ext.k].Rk, what="R%d" % (ext.k + 1))
    A_st = ext.Atildek.stages(p.grid)
    Pik = _sweep_riccati(
        A_st, ext.Bbk, ext.Qkext, ext.Nkext, r_solve, p.rho, ext.Gkext,
        p.grid, "minor[%d]" % ext.k,
    )
    M_st = _stage_values(ext.Mtildek)
    sk = _sweep_offset(
        A_st, ext.Bbk, ext.Nkext, r_solve, p.rho, _stage_values(Pik), M_st,
        ext.nbark, ext.etabark, p.grid, "minor[%d]" % ext.k,
    )
    return Pik, sk


def _closure_law(p: MmMfgProblem, ext_minors, Piks, sks) -> MeanFieldLaw:
    """New (Abar, Gbar, mbar) from the minors' equilibrium feedback.

    Row block k at every node:
      Abar_k = [A_k - B_k R_k^{-1}(n11' + B_k'Pi11)] e_k + F_k^pi
               - B_k R_k^{-1}(n31' + B_k'Pi13)
      Gbar_k = G_k - B_k R_k^{-1}(n21' + B_k'Pi12)
      mbar_k = b_k + B_k R_k^{-1} nbar_k - B_k R_k^{-1} B_k' sk[:n]
    """
    n, m, K = p.n, p.m, p.K
    nodes = p.grid.num_nodes
    Abar = np.empty((nodes, n * K, n * K))
    Gbar = np.empty((nodes, n * K, n))
    mbar = np.empty((nodes, n * K, 1))
    for k in range(K):
        mn = p.minors[k]
        r_solve = spd_solver(mn.Rk, what="R%d" % (k + 1))
        BR = mn.Bk @ r_solve(np.eye(m))
        n11, n21, n31 = split_cross_blocks(ext_minors[k].Nkext, n, K)
        e_k = selector(k, n, K)
        Fkpi = replicate_pi(mn.Fk, p.pi)
        P = Piks[k].values
        Pi11 = P[:, :n, :n]
        Pi12 = P[:, :n, n:2 * n]
        Pi13 = P[:, :n, 2 * n:]
        Bt = mn.Bk.T
        c1 = n11.T[None] + np.einsum("ab,jbc->jac", Bt, Pi11)
        c2 = n21.T[None] + np.einsum("ab,jbc->jac", Bt, Pi12)
        c3 = n31.T[None] + np.einsum("ab,jbc->jac", Bt, Pi13)
        rows = slice(k * n, (k + 1) * n)
        Abar[:, rows, :] = np.einsum(
            "jab,bc->jac", mn.Ak[None] - np.einsum("ab,jbc->jac", BR, c1), e_k
        ) + Fkpi[None] - np.einsum("ab,jbc->jac", BR, c3)
        Gbar[:, rows, :] = mn.Gk[None] - np.einsum("ab,jbc->jac", BR, c2)
        s_top = sks[k].values[:, :n, :]
        mbar[:, rows, :] = (
            mn.bk.values
            + (BR @ ext_minors[k].nbark)[None]
            - np.einsum("ab,jbc->jac", BR @ Bt, s_top)
        )
    return MeanFieldLaw(
        Abar=GridFunction(p.grid, Abar),
        Gbar=GridFunction(p.grid, Gbar),
        mbar=GridFunction(p.grid, mbar),
    )


def _initial_law(p: MmMfgProblem) -> MeanFieldLaw:
    """Closure at Pi_k = 0, s_k = 0 (extended weights still contribute)."""
    mf = build_mean_field_matrices(p)
    d0 = p.n + p.n * p.K
    zero_Pi0 = GridFunction.constant(p.grid, np.zeros((d0, d0)))
    zero_s0 = GridFunction.constant(p.grid, np.zeros((d0, 1)))
    d = 2 * p.n + p.n * p.K
    ext_minors = [
        build_extended_minor(p, k, zero_Pi0, zero_s0, mf) for k in range(p.K)
    ]
    zero_P = [GridFunction.constant(p.grid, np.zeros((d, d))) for _ in range(p.K)]
    zero_s = [GridFunction.constant(p.grid, np.zeros((d, 1))) for _ in range(p.K)]
    return _closure_law(p, ext_minors, zero_P, zero_s)


def _law_delta(a: MeanFieldLaw, b: MeanFieldLaw) -> float:
    return max(
        float(np.max(np.abs(a.Abar.values - b.Abar.values))),
        float(np.max(np.abs(a.Gbar.values - b.Gbar.values))),
        float(np.max(np.abs(a.mbar.values - b.mbar.values))),
    )


def _blend(prev: MeanFieldLaw, new: MeanFieldLaw, theta: float, grid) -> MeanFieldLaw:
    w = 1.0 - theta
    return MeanFieldLaw(
        Abar=GridFunction(grid, w * prev.Abar.values + theta * new.Abar.values),
        Gbar=GridFunction(grid, w * prev.Gbar.values + theta * new.Gbar.values),
        mbar=GridFunction(grid, w * prev.mbar.values + theta * new.mbar.values),
    )


def _evaluate_map(p: MmMfgProblem, law: MeanFieldLaw):
    """One exact consistency evaluation at the given mean-field law."""
    ext_major = build_extended_major(p, law)
    Pi0, s0 = _solve_major(p, ext_major)
    ext_minors = [build_extended_minor(p, k, Pi0, s0, law) for k in range(p.K)]
    Piks, sks = [], []
    for ext in ext_minors:
        Pik, sk = _solve_minor(p, ext)
        Piks.append(Pik)
        sks.append(sk)
    new_law = _closure_law(p, ext_minors, Piks, sks)
    return new_law, ext_major, Pi0, s0, ext_minors, Piks, sks


def _gain_tables(r_solve, Nx, Bb, Pi: GridFunction, s: GridFunction, nbar, grid):
    nodes = grid.num_nodes
    K_vals = np.stack(
        [r_solve(Nx.T + Bb.T @ Pi.values[j]) for j in range(nodes)]
    )
    k_vals = np.stack(
        [r_solve(nbar - Bb.T @ s.values[j]) for j in range(nodes)]
    )
    return FeedbackLaw(GridFunction(grid, K_vals), GridFunction(grid, k_vals))


def solve_consistency_finite(p: MmMfgProblem, cfg: Optional[FixedPointConfig] = None) -> MfgSolution:
    """Damped Picard iteration on (Abar, Gbar, mbar) to the fixed point.

    Each iteration backward-solves the major's extended Riccati/offset
    pair, then every minor type's, then closes the loop through the minor
    feedback.  Stops when the sup-norm change of the damped iterate drops
    below tol; the returned solution is one exact evaluation at the final
    law, so its Riccati data and the law are mutually consistent.
    """
    cfg = cfg or FixedPointConfig()
    rep = validate_problem(p)
    if not rep.ok:
        raise AssumptionViolationError(
            "problem validation failed: " + rep.summary(), report=rep
        )

    law = cfg.initial_law.copy() if cfg.initial_law is not None else _initial_law(p)
    history: List[float] = []
    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        new_law = _evaluate_map(p, law)[0]
        res = _law_delta(new_law, law)
        history.append(res)
        iterations += 1
        law = _blend(law, new_law, cfg.theta, p.grid)
        if cfg.theta * res < cfg.tol:
            converged = True
            break
    if not converged:
        raise FixedPointError(
            "consistency iteration did not converge in %d iterations "
            "(last residual %.3e)" % (cfg.max_iters, history[-1]),
            residual_history=history,
        )

    new_law, ext_major, Pi0, s0, ext_minors, Piks, sks = _evaluate_map(p, law)
    final_res = _law_delta(new_law, law)

    r0_solve = spd_solver(p.major.R0, what="R0")
    major_law = _gain_tables(
        r0_solve, ext_major.N0ext, ext_major.Bb0, Pi0, s0, ext_major.nbar0, p.grid
    )
    minor_laws = []
    for k, ext in enumerate(ext_minors):
        rk_solve = spd_solver(p.minors[k].Rk, what="R%d" % (k + 1))
        minor_laws.append(
            _gain_tables(rk_solve, ext.Nkext, ext.Bbk, Piks[k], sks[k], ext.nbark, p.grid)
        )

    return MfgSolution(
        Pi0=Pi0, s0=s0, Pik=Piks, sk=sks, mf_law=law,
        major_law=major_law, minor_laws=minor_laws,
        report=FixedPointReport(
            iterations=iterations, residual_history=history,
            residual=final_res, converged=True,
        ),
        problem=p, ext_major=ext_major, ext_minors=ext_minors,
    )


def equilibrium_feedback_major(sol: MfgSolution, t: float, X0: np.ndarray) -> np.ndarray:
    """u0*(t) = -R0^{-1}[N0ext' X0 - nbar0 + Bb0'(Pi0 X0 + s0)]."""
    X0 = np.asarray(X0, dtype=float).reshape(-1, 1)
    return sol.major_law(t, X0)


def equilibrium_feedback_minor(sol: MfgSolution, k: int, t: float, Xi: np.ndarray) -> np.ndarray:
    """ui*(t) for type k on the extended state (x_i; x0; xbar)."""
    Xi = np.asarray(Xi, dtype=float).reshape(-1, 1)
    return sol.minor_laws[k](t, Xi)


def mean_field_step(Ab_st, Gb_st, mb_st, j: int, h: float,
                    xbar, x0_now, x0_next):
    """One RK4 step of dxbar = Abar xbar + Gbar x0 + mbar over [t_j, t_{j+1}].

    Stage tables are half-step indexed; the driving x0 path enters through
    its endpoint values with the midpoint taken as their average (exact for
    a linearly interpolated path).  Batched: xbar (..., nK), x0 (..., n).
    """
    x0_mid = 0.5 * (x0_now + x0_next)
    q0, qm, q1 = 2 * j, 2 * j + 1, 2 * j + 2

    def f(q, xb, x0v):
        return xb @ Ab_st[q].T + x0v @ Gb_st[q].T + mb_st[q][:, 0]

    k1 = f(q0, xbar, x0_now)
    k2 = f(qm, xbar + 0.5 * h * k1, x0_mid)
    k3 = f(qm, xbar + 0.5 * h * k2, x0_mid)
    k4 = f(q1, xbar + h * k3, x0_next)
    return xbar + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def mean_field_step_euler(Ab_st, Gb_st, mb_st, j: int, h: float, xbar, x0_now):
    """One explicit Euler step; the step the population simulator takes.

    Node-j coefficients only, so the update matches the Euler-Maruyama
    drift of the simulated agents term for term.  1-D xbar and x0.
    """
    q = 2 * j
    return xbar + h * (Ab_st[q] @ xbar + Gb_st[q] @ x0_now + mb_st[q][:, 0])


def mean_field_trajectory(sol: MfgSolution, x0_path: GridFunction,
                          xbar0: Optional[np.ndarray] = None,
                          method: str = "rk4") -> GridFunction:
    """Forward mean field driven by a given major-state path.

    method "rk4" is the accurate default; "euler" reproduces, bit for
    bit, the internal mean-field state of simulate_population when fed
    the simulated major path.
    """
    p = sol.problem
    nK = p.n * p.K
    if x0_path.shape != (p.n, 1):
        raise SchemaError("x0_path must be n x 1 on the grid")
    if method not in ("rk4", "euler"):
        raise SchemaError("method must be 'rk4' or 'euler'")
    x0 = x0_path.values[:, :, 0]
    xb = np.zeros(nK) if xbar0 is None else np.asarray(xbar0, dtype=float).reshape(nK)
    Ab_st = _stage_values(sol.mf_law.Abar)
    Gb_st = _stage_values(sol.mf_law.Gbar)
    mb_st = _stage_values(sol.mf_law.mbar)
    M = p.grid.num_steps
    h = p.grid.h
    out = np.empty((M + 1, nK, 1))
    out[0] = xb[:, None]
    if method == "euler":
        vec = xb
        for j in range(M):
            vec = mean_field_step_euler(Ab_st, Gb_st, mb_st, j, h, vec, x0[j])
            out[j + 1] = vec[:, None]
        return GridFunction(p.grid, out)
    row = xb[None, :]
    for j in range(M):
        row = mean_field_step(Ab_st, Gb_st, mb_st, j, h, row, x0[j][None, :], x0[j + 1][None, :])
        out[j + 1] = row[0][:, None]
    return GridFunction(p.grid, out)


# ----------------------------------------------------------------- infinite


@dataclass
class StationaryMfgSolution:
    Pi0: np.ndarray
    s0: np.ndarray
    Pik: List[np.ndarray]
    sk: List[np.ndarray]
    Abar: np.ndarray
    Gbar: np.ndarray
    mbar: np.ndarray
    major_gain: np.ndarray       # K0 with u0 = -K0 X0 + k0
    major_feedforward: np.ndarray
    minor_gains: List[np.ndarray]
    minor_feedforwards: List[np.ndarray]
    report: FixedPointReport
    problem: MmMfgProblem


def _require_constant(gf: GridFunction, name: str) -> np.ndarray:
    if not np.all(gf.values == gf.values[0]):
        raise SchemaError("%s must be constant for the stationary problem" % name)
    return gf.values[0]


def _carrier(p: MmMfgProblem, Abar, Gbar, mbar, Bbreve) -> MeanFieldMatrices:
    return MeanFieldMatrices(
        Abreve=Abar, Gbreve=Gbar, Bbreve=Bbreve,
        mbreve=GridFunction.constant(p.grid, mbar),
        selectors=[selector(k, p.n, p.K) for k in range(p.K)],
    )


def _check_hautus(A: np.ndarray, Bb: np.ndarray, L: np.ndarray, rho: float, what: str):
    shifted = A - 0.5 * rho * np.eye(A.shape[0])
    rep = hautus_report(shifted, Bb, L, tol=1e-9)
    if not rep.ok:
        missing = []
        if not rep.detectable:
            missing.append("detectability")
        if not rep.stabilizable:
            missing.append("stabilizability")
        raise AssumptionViolationError(
            "%s system fails %s for the shifted drift" % (what, " and ".join(missing)),
            report=rep,
        )
    return rep


def _steady_offset(A, Bb, Nx, r_solve, rho, Pi, Mvec, nbar, etabar):
    Acl_T = (A - Bb @ r_solve(Nx.T)).T - Pi @ Bb @ r_solve(Bb.T)
    f = Pi @ (Mvec + Bb @ r_solve(nbar)) + Nx @ r_solve(nbar) - etabar
    return np.linalg.solve(rho * np.eye(A.shape[0]) - Acl_T, f)


def solve_consistency_infinite(p: MmMfgProblem, cfg: Optional[FixedPointConfig] = None) -> StationaryMfgSolution:
    """Stationary fixed point: discounted AREs and steady offsets.

    The same Picard loop runs on constant (Abar, Gbar, mbar).  Each
    extended system must satisfy the Hautus detectability and
    stabilizability conditions of the shifted drift, and the solved closed
    loops A - Bb R^{-1} Bb' Pi - (rho/2) I must be asymptotically stable;
    violations raise assumption errors.
    """
    cfg = cfg or FixedPointConfig()
    if p.rho <= 0.0:
        raise SchemaError("stationary problem requires rho > 0")
    vrep = validate_problem(p)
    if not vrep.ok:
        raise AssumptionViolationError(
            "problem validation failed: " + vrep.summary(), report=vrep
        )
    n, m, K = p.n, p.m, p.K
    d0 = n + n * K
    d = 2 * n + n * K
    b0 = _require_constant(p.major.b0, "b0")
    bks = [_require_constant(p.minors[k].bk, "minor[%d].bk" % k) for k in range(K)]

    mfm = build_mean_field_matrices(p)
    r0_solve = spd_solver(p.major.R0, what="R0")
    rk_solves = [spd_solver(p.minors[k].Rk, what="R%d" % (k + 1)) for k in range(K)]

    L0 = psd_sqrt(p.major.Q0) @ np.hstack([np.eye(n), -replicate_pi(p.major.H0, p.pi)])
    Lks = [
        psd_sqrt(p.minors[k].Qk) @ np.hstack(
            [np.eye(n), -p.minors[k].Hk, -replicate_pi(p.minors[k].Hhatk, p.pi)]
        )
        for k in range(K)
    ]

    # initial closure at Pi_k = 0, s_k = 0
    law0 = _initial_law(p)
    Abar = law0.Abar.values[0]
    Gbar = law0.Gbar.values[0]
    mbar = law0.mbar.values[0]

    Pi0_prev = None
    Pik_prev = [None] * K
    history: List[float] = []
    converged = False
    iterations = 0

    def evaluate(Abar, Gbar, mbar, Pi0_ws, Pik_ws):
        carrier = _carrier(p, Abar, Gbar, mbar, mfm.Bbreve)
        ext0 = build_extended_major(p, carrier)
        A0 = ext0.Atilde0.const
        _check_hautus(A0, ext0.Bb0, L0, p.rho, "extended major")
        Pi0 = solve_discounted_are(
            A0, ext0.Bb0, ext0.Q0ext, ext0.N0ext, p.major.R0, p.rho,
            Pi_init=Pi0_ws if Pi0_ws is not None else ext0.G0ext, what="R0",
        )
        M0 = ext0.Mtilde0.values[0]
        s0 = _steady_offset(
            A0, ext0.Bb0, ext0.N0ext, r0_solve, p.rho, Pi0, M0,
            ext0.nbar0, ext0.etabar0,
        )
        Pi0_gf = GridFunction.constant(p.grid, Pi0)
        s0_gf = GridFunction.constant(p.grid, s0)
        ext_minors, Piks, sks = [], [], []
        for k in range(K):
            ext = build_extended_minor(p, k, Pi0_gf, s0_gf, carrier)
            Ak = ext.Atildek.at(0.0)
            _check_hautus(Ak, ext.Bbk, Lks[k], p.rho, "extended minor[%d]" % k)
            Pik = solve_discounted_are(
                Ak, ext.Bbk, ext.Qkext, ext.Nkext, p.minors[k].Rk, p.rho,
                Pi_init=Pik_ws[k] if Pik_ws[k] is not None else ext.Gkext,
                what="R%d" % (k + 1),
            )
            sk = _steady_offset(
                Ak, ext.Bbk, ext.Nkext, rk_solves[k], p.rho, Pik,
                ext.Mtildek.values[0], ext.nbark, ext.etabark,
            )
            ext_minors.append(ext)
            Piks.append(Pik)
            sks.append(sk)
        # closure rows
        A_new = np.empty((n * K, n * K))
        G_new = np.empty((n * K, n))
        m_new = np.empty((n * K, 1))
        for k in range(K):
            mn = p.minors[k]
            BR = mn.Bk @ rk_solves[k](np.eye(m))
            n11, n21, n31 = split_cross_blocks(ext_minors[k].Nkext, n, K)
            Bt = mn.Bk.T
            P = Piks[k]
            c1 = n11.T + Bt @ P[:n, :n]
            c2 = n21.T + Bt @ P[:n, n:2 * n]
            c3 = n31.T + Bt @ P[:n, 2 * n:]
            rows = slice(k * n, (k + 1) * n)
            A_new[rows] = (mn.Ak - BR @ c1) @ selector(k, n, K) \
                + replicate_pi(mn.Fk, p.pi) - BR @ c3
            G_new[rows] = mn.Gk - BR @ c2
            m_new[rows] = bks[k] + BR @ ext_minors[k].nbark - BR @ (Bt @ sks[k][:n])
        return (A_new, G_new, m_new), ext0, Pi0, s0, ext_minors, Piks, sks

    for _ in range(cfg.max_iters):
        (A_new, G_new, m_new), ext0, Pi0, s0, ext_minors, Piks, sks = evaluate(
            Abar, Gbar, mbar, Pi0_prev, Pik_prev
        )
        Pi0_prev, Pik_prev = Pi0, Piks
        res = max(
            float(np.max(np.abs(A_new - Abar))),
            float(np.max(np.abs(G_new - Gbar))),
            float(np.max(np.abs(m_new - mbar))),
        )
        history.append(res)
        iterations += 1
        th = cfg.theta
        Abar = (1 - th) * Abar + th * A_new
        Gbar = (1 - th) * Gbar + th * G_new
        mbar = (1 - th) * mbar + th * m_new
        if th * res < cfg.tol:
            converged = True
            break
    if not converged:
        raise FixedPointError(
            "stationary consistency iteration did not converge in %d iterations "
            "(last residual %.3e)" % (cfg.max_iters, history[-1]),
            residual_history=history,
        )

    (A_new, G_new, m_new), ext0, Pi0, s0, ext_minors, Piks, sks = evaluate(
        Abar, Gbar, mbar, Pi0_prev, Pik_prev
    )
    final_res = max(
        float(np.max(np.abs(A_new - Abar))),
        float(np.max(np.abs(G_new - Gbar))),
        float(np.max(np.abs(m_new - mbar))),
    )

    # closed-loop stability as stated: A - Bb R^{-1} Bb' Pi - (rho/2) I
    A0 = ext0.Atilde0.const
    C0 = A0 - ext0.Bb0 @ r0_solve(ext0.Bb0.T) @ Pi0 - 0.5 * p.rho * np.eye(d0)
    if np.max(np.linalg.eigvals(C0).real) >= 0:
        raise AssumptionViolationError(
            "extended major closed loop is not asymptotically stable"
        )
    for k in range(K):
        Ak = ext_minors[k].Atildek.at(0.0)
        Ck = Ak - ext_minors[k].Bbk @ rk_solves[k](ext_minors[k].Bbk.T) @ Piks[k] \
            - 0.5 * p.rho * np.eye(d)
        if np.max(np.linalg.eigvals(Ck).real) >= 0:
            raise AssumptionViolationError(
                "extended minor[%d] closed loop is not asymptotically stable" % k
            )

    K0 = r0_solve(ext0.N0ext.T + ext0.Bb0.T @ Pi0)
    k0 = r0_solve(ext0.nbar0 - ext0.Bb0.T @ s0)
    Kks = [
        rk_solves[k](ext_minors[k].Nkext.T + ext_minors[k].Bbk.T @ Piks[k])
        for k in range(K)
    ]
    kks = [
        rk_solves[k](ext_minors[k].nbark - ext_minors[k].Bbk.T @ sks[k])
        for k in range(K)
    ]
    return StationaryMfgSolution(
        Pi0=Pi0, s0=s0, Pik=Piks, sk=sks,
        Abar=Abar, Gbar=Gbar, mbar=mbar,
        major_gain=K0, major_feedforward=k0,
        minor_gains=Kks, minor_feedforwards=kks,
        report=FixedPointReport(
            iterations=iterations, residual_history=history,
            residual=final_res, converged=True,
        ),
        problem=p,
    )
