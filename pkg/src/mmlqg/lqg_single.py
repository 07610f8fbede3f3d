"""Single-agent discounted LQG control on a finite or infinite horizon.

Finite horizon: backward Riccati and offset sweeps yielding the optimal
linear feedback u* = -R^{-1}(N'x - n + B'(Pi x + s)).  Infinite horizon:
the discounted algebraic Riccati equation solved by long-horizon sweeping
plus Newton polish.  Also provides exact closed-loop cost evaluation by
moment propagation and a deterministic Gateaux-derivative oracle used to
certify optimality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np
import scipy.linalg

from .errors import (
    AreSolveError,
    AssumptionViolationError,
    IntegrationDivergedError,
    RiccatiBlowupError,
    SchemaError,
    UnsupportedOracleError,
)
from .numerics import (
    GridFunction,
    TimeGrid,
    cumulative_simpson,
    integrate_backward,
    rk4_forward_indexed,
    symmetrize,
    trapezoid_weights,
)

PSD_TOL = 1e-9  # relative to the largest eigenvalue magnitude


def _as_matrix(name: str, value, rows: int, cols: int) -> np.ndarray:
    m = np.atleast_2d(np.asarray(value, dtype=float))
    if m.shape != (rows, cols):
        raise SchemaError(
            "%s has shape %s, expected (%d, %d)" % (name, m.shape, rows, cols)
        )
    return m


def _as_column(name: str, value, rows: int) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape != (rows, 1):
        raise SchemaError(
            "%s has shape %s, expected (%d, 1)" % (name, v.shape, rows)
        )
    return v


def _as_grid_function(name: str, value, grid: TimeGrid, rows: int, cols: int) -> GridFunction:
    if isinstance(value, GridFunction):
        gf = value
        if gf.grid.num_steps != grid.num_steps or gf.grid.t_end != grid.t_end:
            raise SchemaError("%s is sampled on a different grid" % name)
    else:
        v = np.asarray(value, dtype=float)
        if v.ndim <= 1:
            v = v.reshape(rows, 1) if v.size == rows else np.atleast_2d(v)
        gf = GridFunction.constant(grid, v)
    if gf.shape != (rows, cols):
        raise SchemaError(
            "%s has value shape %s, expected (%d, %d)" % (name, gf.shape, rows, cols)
        )
    return gf


@dataclass
class LqgProblem:
    """Data of the control problem.

    dx = (A x + B u + b(t)) dt + sigma(t) dw, with discounted quadratic
    running cost weights (Q, N_cross, R), linear terms (eta, n_lin),
    terminal weight Qhat, discount rate rho, and fixed initial state x0.
    """

    A: np.ndarray
    B: np.ndarray
    b: GridFunction
    sigma: GridFunction
    Qhat: np.ndarray
    Q: np.ndarray
    N_cross: np.ndarray
    R: np.ndarray
    eta: np.ndarray
    n_lin: np.ndarray
    rho: float
    grid: TimeGrid
    x0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        self.A = _as_matrix("A", A, n, n)
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        m = B.shape[1]
        self.B = _as_matrix("B", B, n, m)
        self.Qhat = _as_matrix("Qhat", self.Qhat, n, n)
        self.Q = _as_matrix("Q", self.Q, n, n)
        self.N_cross = _as_matrix("N_cross", self.N_cross, n, m)
        self.R = _as_matrix("R", self.R, m, m)
        self.eta = _as_column("eta", self.eta, n)
        self.n_lin = _as_column("n_lin", self.n_lin, m)
        self.x0 = _as_column("x0", self.x0, n)
        self.rho = float(self.rho)
        if self.rho < 0.0:
            raise SchemaError("rho must be nonnegative")
        self.b = _as_grid_function("b", self.b, self.grid, n, 1)
        if isinstance(self.sigma, GridFunction):
            self.sigma = _as_grid_function(
                "sigma", self.sigma, self.grid, n, self.sigma.shape[1]
            )
        else:
            sig = np.atleast_2d(np.asarray(self.sigma, dtype=float))
            if sig.shape[0] != n:
                raise SchemaError("sigma must have n rows")
            self.sigma = GridFunction.constant(self.grid, sig)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass
class FeedbackLaw:
    """Time-varying linear law u(t, x) = -K(t) x + k(t)."""

    K: GridFunction
    k: GridFunction

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return -self.K.interp(t) @ x + self.k.interp(t)


@dataclass
class LqgSolution:
    Pi: GridFunction
    s: GridFunction
    K: GridFunction
    kff: GridFunction

    def law(self) -> FeedbackLaw:
        """The optimum as u = -Kx + k, with k = -kff."""
        return FeedbackLaw(self.K, GridFunction(self.kff.grid, -self.kff.values))


@dataclass
class CostateOracle:
    """Deterministic trajectory, control, and costate (sigma = 0 only)."""

    x: GridFunction
    u: GridFunction
    p: GridFunction


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = ""):
        self.checks.append(CheckResult(name, bool(passed), detail))

    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        return "; ".join(
            "%s: %s%s" % (c.name, "pass" if c.passed else "FAIL",
                          " (%s)" % c.detail if c.detail and not c.passed else "")
            for c in self.checks
        )


def _rel_psd_tol(P: np.ndarray, tol: float) -> float:
    w = np.linalg.eigvalsh(symmetrize(P)) if P.size else np.zeros(1)
    scale = max(1.0, float(np.max(np.abs(w)))) if P.size else 1.0
    return tol * scale


def _min_eig(P: np.ndarray) -> float:
    if P.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(symmetrize(P))[0])


def spd_solver(R: np.ndarray, what: str = "R") -> Callable[[np.ndarray], np.ndarray]:
    """Return x -> R^{-1} x via Cholesky; failure is an assumption violation."""
    try:
        cf = scipy.linalg.cho_factor(symmetrize(R), lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise AssumptionViolationError(
            "%s is not symmetric positive definite: %s" % (what, exc)
        ) from exc
    # non-finite inputs must flow through so sweeps can report the node
    return lambda X: scipy.linalg.cho_solve(cf, X, check_finite=False)


def validate_convexity(p: LqgProblem, tol: float = PSD_TOL) -> ValidationReport:
    """Check Qhat >= 0, R > 0, and Q - N R^{-1} N' >= 0 within tol."""
    rep = ValidationReport()

    r_min = _min_eig(p.R)
    r_sym = float(np.max(np.abs(p.R - p.R.T))) if p.R.size else 0.0
    rep.add(
        "R positive definite",
        r_sym <= _rel_psd_tol(p.R, tol) and r_min > _rel_psd_tol(p.R, tol),
        "min eigenvalue %.3e" % r_min,
    )

    qhat_min = _min_eig(p.Qhat)
    rep.add(
        "Qhat PSD",
        qhat_min >= -_rel_psd_tol(p.Qhat, tol),
        "min eigenvalue %.3e" % qhat_min,
    )

    if rep.checks[0].passed:
        rinv = spd_solver(p.R)
        S = p.Q - p.N_cross @ rinv(p.N_cross.T)
        s_min = _min_eig(S)
        rep.add(
            "Q - N R^{-1} N' PSD",
            s_min >= -_rel_psd_tol(S, tol),
            "min eigenvalue %.3e" % s_min,
        )
    else:
        rep.add("Q - N R^{-1} N' PSD", False, "skipped: R not positive definite")
    return rep


def _stage_values(gf: GridFunction) -> np.ndarray:
    """Tabulate a GridFunction at nodes and interval midpoints.

    Index q = 0..2M covers time q*h/2; midpoints of a linearly interpolated
    grid function are averages of the adjacent nodes.
    """
    v = gf.values
    M = v.shape[0] - 1
    out = np.empty((2 * M + 1,) + v.shape[1:])
    out[0::2] = v
    out[1::2] = 0.5 * (v[:-1] + v[1:])
    return out


def _discount_stages(grid: TimeGrid, rho: float) -> np.ndarray:
    q = np.arange(2 * grid.num_steps + 1)
    return np.exp(-rho * 0.5 * grid.h * q)


def solve_finite_horizon(p: LqgProblem) -> LqgSolution:
    """Backward Riccati sweep then offset sweep; assembles gain tables.

    Pi is symmetrized after every step; the offset equation uses the
    interpolated Pi.  Divergence raises RiccatiBlowupError with the last
    node reached.
    """
    rep = validate_convexity(p)
    if not rep.ok:
        raise AssumptionViolationError(
            "convexity assumptions violated: " + rep.summary(), report=rep
        )
    rinv = spd_solver(p.R)

    A, B, Q, N, rho = p.A, p.B, p.Q, p.N_cross, p.rho
    Bt, Nt = B.T, N.T

    def riccati_rhs(t, Pi):
        PBN = Pi @ B + N
        return rho * Pi - Pi @ A - A.T @ Pi + PBN @ rinv(PBN.T) - Q

    try:
        Pi = integrate_backward(riccati_rhs, p.Qhat, p.grid, project=symmetrize)
    except IntegrationDivergedError as exc:
        raise RiccatiBlowupError(
            "Riccati sweep diverged: %s" % exc, node=exc.node, time=exc.time
        ) from exc

    # ds/dt = rho*s - [(A - B R^{-1} N')' - Pi B R^{-1} B'] s
    #         - Pi (b + B R^{-1} n) - N R^{-1} n + eta
    AmBRN_T = (A - B @ rinv(Nt)).T
    BRB = B @ rinv(Bt)
    BRn = B @ rinv(p.n_lin)
    NRn = N @ rinv(p.n_lin)

    def offset_rhs(t, s):
        Pit = Pi.interp(t)
        return (
            rho * s
            - (AmBRN_T - Pit @ BRB) @ s
            - Pit @ (p.b.interp(t) + BRn)
            - NRn
            + p.eta
        )

    try:
        s = integrate_backward(offset_rhs, np.zeros((p.n, 1)), p.grid)
    except IntegrationDivergedError as exc:
        raise RiccatiBlowupError(
            "offset sweep diverged: %s" % exc, node=exc.node, time=exc.time
        ) from exc

    K_vals = np.stack([rinv(Nt + Bt @ Pi.values[j]) for j in range(p.grid.num_nodes)])
    kff_vals = np.stack(
        [rinv(Bt @ s.values[j] - p.n_lin) for j in range(p.grid.num_nodes)]
    )
    return LqgSolution(
        Pi=Pi,
        s=s,
        K=GridFunction(p.grid, K_vals),
        kff=GridFunction(p.grid, kff_vals),
    )


def feedback_control(sol: LqgSolution, t: float, x: np.ndarray) -> np.ndarray:
    """u(t, x) = -K(t) x - kff(t)."""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    return -sol.K.interp(t) @ x - sol.kff.interp(t)


def closed_loop_cost_moments(
    grid: TimeGrid,
    rho: float,
    x0_mean: np.ndarray,
    x0_cov: np.ndarray,
    A_cl: np.ndarray,
    d: np.ndarray,
    Sig2: np.ndarray,
    W: np.ndarray,
    l_vec: np.ndarray,
    c: np.ndarray,
    W_term: np.ndarray,
    l_term: Optional[np.ndarray] = None,
    c_term: float = 0.0,
):
    """Exact discounted quadratic cost of a linear closed loop.

    Propagates mean and covariance of dx = (A_cl(t) x + d(t)) dt + noise
    and accumulates J = (1/2) E int e^{-rho t} (x'Wx + 2x'l + c) dt plus the
    terminal (1/2) e^{-rho T} E(x'W_term x + 2 x'l_term + c_term) in the
    same RK4 sweep.  All time-varying tables are indexed by half-step
    stages q = 0..2M at times q*h/2.

    Returns (J, mu nodes array, V nodes array).
    """
    M = grid.num_steps
    h = grid.h
    disc = _discount_stages(grid, rho)
    n = x0_mean.shape[0]
    mu = x0_mean.astype(float).reshape(n, 1).copy()
    V = symmetrize(np.asarray(x0_cov, dtype=float).reshape(n, n)).copy()
    jc = 0.0
    mu_out = np.empty((M + 1, n, 1))
    V_out = np.empty((M + 1, n, n))
    mu_out[0], V_out[0] = mu, V

    def derivs(q, mu_, V_):
        Aq = A_cl[q]
        dmu = Aq @ mu_ + d[q]
        AV = Aq @ V_
        dV = AV + AV.T + Sig2[q]
        S = V_ + mu_ @ mu_.T
        rate = 0.5 * disc[q] * (
            float(np.tensordot(W[q], S)) + 2.0 * float(np.vdot(mu_, l_vec[q])) + float(c[q])
        )
        return dmu, dV, rate

    for j in range(M):
        q0, qm, q1 = 2 * j, 2 * j + 1, 2 * j + 2
        k1 = derivs(q0, mu, V)
        k2 = derivs(qm, mu + 0.5 * h * k1[0], V + 0.5 * h * k1[1])
        k3 = derivs(qm, mu + 0.5 * h * k2[0], V + 0.5 * h * k2[1])
        k4 = derivs(q1, mu + h * k3[0], V + h * k3[1])
        mu = mu + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        V = symmetrize(V + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]))
        jc = jc + (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(V)) and np.isfinite(jc)):
            raise IntegrationDivergedError(
                "moment propagation produced a non-finite value at node %d" % (j + 1),
                node=j + 1,
                time=(j + 1) * h,
            )
        mu_out[j + 1], V_out[j + 1] = mu, V

    S_T = V + mu @ mu.T
    term = float(np.tensordot(W_term, S_T)) + float(c_term)
    if l_term is not None:
        term += 2.0 * float(mu.T @ l_term)
    jc = jc + 0.5 * disc[-1] * term
    return jc, mu_out, V_out


def _law_stage_tables(p: LqgProblem, law) -> tuple:
    """Half-step tables (K[q], k[q]) for u = -Kx + k from any accepted law.

    Accepts FeedbackLaw, LqgSolution, an open-loop GridFunction (treated as
    u(t) with linear interpolation), or a callable t -> u sampled at step
    midpoints and held constant over each step (exact for piecewise,
    constant controls aligned with the grid).
    """
    M = p.grid.num_steps
    nq = 2 * M + 1
    if isinstance(law, LqgSolution):
        law = law.law()
    if isinstance(law, FeedbackLaw):
        return _stage_values(law.K), _stage_values(law.k)
    if isinstance(law, GridFunction):
        if law.shape != (p.m, 1):
            raise SchemaError("open-loop control must be m x 1 on the grid")
        return np.zeros((nq, p.m, p.n)), _stage_values(law)
    if callable(law):
        k_tab = np.empty((nq, p.m, 1))
        h = p.grid.h
        for j in range(M):
            uj = np.asarray(law((j + 0.5) * h), dtype=float).reshape(p.m, 1)
            k_tab[2 * j] = uj
            k_tab[2 * j + 1] = uj
            k_tab[2 * j + 2] = uj
        return np.zeros((nq, p.m, p.n)), k_tab
    raise SchemaError("unsupported control law type %r" % type(law).__name__)


def expected_cost(p: LqgProblem, law) -> float:
    """Exact J under a linear law u = -Kx + k: no sampling.

    Mean and covariance of the closed loop are propagated and the quadratic
    running cost is integrated through trace identities.
    """
    K_tab, k_tab = _law_stage_tables(p, law)
    M = p.grid.num_steps
    nq = 2 * M + 1

    b_tab = _stage_values(p.b)
    sig_tab = _stage_values(p.sigma)
    Sig2 = np.einsum("qir,qjr->qij", sig_tab, sig_tab)

    A_cl = p.A[None, :, :] - np.einsum("ij,qjk->qik", p.B, K_tab)
    d = np.einsum("ij,qjk->qik", p.B, k_tab) + b_tab

    # W = Q - N K - K'N' + K'RK ; l = N k - K'R k + K'n - eta ;
    # c = k'Rk - 2 k'n
    NK = np.einsum("ij,qjk->qik", p.N_cross, K_tab)
    RK = np.einsum("ij,qjk->qik", p.R, K_tab)
    KtRK = np.einsum("qji,qjk->qik", K_tab, RK)
    W = p.Q[None, :, :] - NK - np.swapaxes(NK, 1, 2) + KtRK
    Rk = np.einsum("ij,qjk->qik", p.R, k_tab)
    l_vec = (
        np.einsum("ij,qjk->qik", p.N_cross, k_tab)
        - np.einsum("qji,qjk->qik", K_tab, Rk)
        + np.einsum("qji,jk->qik", K_tab, p.n_lin)
        - p.eta[None, :, :]
    )
    c = (
        np.einsum("qji,qjk->qk", k_tab, Rk)[:, 0]
        - 2.0 * np.einsum("qji,jk->qk", k_tab, p.n_lin)[:, 0]
    )

    J, _, _ = closed_loop_cost_moments(
        p.grid, p.rho, p.x0, np.zeros((p.n, p.n)),
        A_cl, d, Sig2, W, l_vec, c, p.Qhat,
    )
    return float(J)


def _open_loop_trajectory(p: LqgProblem, u: GridFunction) -> GridFunction:
    """Forward x under dx = Ax + Bu(t) + b(t), x(0) = x0 (deterministic)."""
    u_tab = _stage_values(u)
    b_tab = _stage_values(p.b)

    def rhs(q, x):
        return p.A @ x + p.B @ u_tab[q] + b_tab[q]

    return rk4_forward_indexed(rhs, p.x0, p.grid)


def costate_oracle(p: LqgProblem, u: GridFunction) -> CostateOracle:
    """Deterministic costate along the trajectory driven by u (sigma = 0).

    p(t) = e^{-rho T} e^{A'(T-t)} Qhat x_T + e^{-A' t} I(t) with
    I(t) = int_t^T e^{-rho s} e^{A' s} (Q x + N u - eta) ds, evaluated by
    cumulative quadrature and incremental matrix-exponential powers.
    """
    if not np.allclose(p.sigma.values, 0.0):
        raise UnsupportedOracleError(
            "costate oracle is defined only for sigma = 0"
        )
    if u.shape != (p.m, 1):
        raise SchemaError("control must be m x 1 on the grid")
    x = _open_loop_trajectory(p, u)
    grid = p.grid
    M = grid.num_steps
    h = grid.h
    T = grid.t_end
    disc = np.exp(-p.rho * grid.nodes)

    E_fwd = scipy.linalg.expm(p.A.T * h)
    E_bwd = scipy.linalg.expm(-p.A.T * h)
    P_fwd = np.empty((M + 1, p.n, p.n))   # e^{A' t_j}
    P_bwd = np.empty((M + 1, p.n, p.n))   # e^{-A' t_j}
    P_fwd[0] = np.eye(p.n)
    P_bwd[0] = np.eye(p.n)
    for j in range(1, M + 1):
        P_fwd[j] = P_fwd[j - 1] @ E_fwd
        P_bwd[j] = P_bwd[j - 1] @ E_bwd

    integrand = disc[:, None, None] * np.einsum(
        "jab,jbc->jac",
        P_fwd,
        np.einsum("ab,jbc->jac", p.Q, x.values)
        + np.einsum("ab,jbc->jac", p.N_cross, u.values)
        - p.eta[None, :, :],
    )
    C = cumulative_simpson(integrand, h)
    I_tail = C[-1][None, :, :] - C

    QxT = p.Qhat @ x.values[-1]
    p_vals = np.exp(-p.rho * T) * np.einsum(
        "jab,bc->jac", P_fwd[::-1], QxT
    ) + np.einsum("jab,jbc->jac", P_bwd, I_tail)
    return CostateOracle(x=x, u=u.copy(), p=GridFunction(grid, p_vals))


def gateaux_derivative_det(p: LqgProblem, u: GridFunction, omega: GridFunction) -> float:
    """Directional derivative of J at control u in direction omega (sigma = 0).

    <DJ(u), omega> = int omega' [ e^{-rho t}(N'x + Ru - n) + B'p(t) ] dt
    with the costate p from costate_oracle; the time integral uses the
    trapezoid rule on the grid nodes.
    """
    oracle = costate_oracle(p, u)
    if omega.shape != (p.m, 1):
        raise SchemaError("direction must be m x 1 on the grid")
    grid = p.grid
    disc = np.exp(-p.rho * grid.nodes)
    g = disc[:, None, None] * (
        np.einsum("ab,jbc->jac", p.N_cross.T, oracle.x.values)
        + np.einsum("ab,jbc->jac", p.R, u.values)
        - p.n_lin[None, :, :]
    ) + np.einsum("ab,jbc->jac", p.B.T, oracle.p.values)
    w = trapezoid_weights(grid)
    vals = np.einsum("jac,jac->j", omega.values, g)
    return float(np.dot(w, vals))


@dataclass
class ModeTest:
    eigenvalue: complex
    rank: int
    full_rank: bool


@dataclass
class DetectStabReport:
    detectable: bool
    stabilizable: bool
    detect_modes: List[ModeTest] = field(default_factory=list)
    stab_modes: List[ModeTest] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.detectable and self.stabilizable


def hautus_report(A_shift: np.ndarray, B: np.ndarray, L: np.ndarray, tol: float) -> DetectStabReport:
    """Hautus rank tests on the shifted drift.

    Stabilizability: rank [lambda I - A, B] = n for every eigenvalue with
    Re lambda >= -tol.  Detectability: rank [lambda I - A; L] = n likewise.
    """
    n = A_shift.shape[0]
    eigs = np.linalg.eigvals(A_shift)
    detect_modes, stab_modes = [], []
    for lam in eigs:
        if lam.real < -tol:
            continue
        lamI_A = lam * np.eye(n) - A_shift
        r_s = np.linalg.matrix_rank(np.hstack([lamI_A, B.astype(complex)]))
        stab_modes.append(ModeTest(complex(lam), int(r_s), r_s == n))
        r_d = np.linalg.matrix_rank(np.vstack([lamI_A, L.astype(complex)]))
        detect_modes.append(ModeTest(complex(lam), int(r_d), r_d == n))
    return DetectStabReport(
        detectable=all(m.full_rank for m in detect_modes),
        stabilizable=all(m.full_rank for m in stab_modes),
        detect_modes=detect_modes,
        stab_modes=stab_modes,
    )


def psd_sqrt(Q: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (negative rounding clipped)."""
    w, V = np.linalg.eigh(symmetrize(Q))
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def detectability_stabilizability(p: LqgProblem, tol: float = 1e-9) -> DetectStabReport:
    """Check (Q^{1/2}, A - (rho/2) I) detectable and (A - (rho/2) I, B) stabilizable."""
    A_shift = p.A - 0.5 * p.rho * np.eye(p.n)
    return hautus_report(A_shift, p.B, psd_sqrt(p.Q), tol)


def _are_residual(Pi, A, B, Q, N, R_solve, rho):
    PBN = Pi @ B + N
    return Pi @ A + A.T @ Pi - PBN @ R_solve(PBN.T) + Q - rho * Pi


def solve_discounted_are(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    N: np.ndarray,
    R: np.ndarray,
    rho: float,
    Pi_init: Optional[np.ndarray] = None,
    residual_tol: float = 1e-9,
    what: str = "R",
) -> np.ndarray:
    """Stabilizing solution of rho Pi = Pi A + A'Pi - (Pi B+N)R^{-1}(B'Pi+N') + Q.

    Long-horizon backward sweep of the matching differential Riccati
    equation in chunks until the iterate stops moving, then Newton polish
    through Lyapunov solves.  Raises AreSolveError when no stabilizing
    solution emerges.
    """
    n = A.shape[0]
    rinv = spd_solver(R, what=what)
    Pi = symmetrize(Pi_init) if Pi_init is not None else np.zeros((n, n))

    def rhs(t, P):
        PBN = P @ B + N
        return rho * P - P @ A - A.T @ P + PBN @ rinv(PBN.T) - Q

    chunk = TimeGrid(5.0, 500)
    stationary = False
    for _ in range(40):  # cap at effective horizon 200
        try:
            sweep = integrate_backward(rhs, Pi, chunk, project=symmetrize)
        except IntegrationDivergedError as exc:
            raise AreSolveError(
                "Riccati sweep diverged while seeking the stationary solution: %s" % exc
            ) from exc
        Pi_new = sweep.values[0]
        if float(np.max(np.abs(Pi_new - Pi))) < 1e-12:
            Pi = Pi_new
            stationary = True
            break
        Pi = Pi_new
    if not stationary:
        # the sweep may still be close enough for Newton to finish the job
        pass

    for _ in range(3):
        F = _are_residual(Pi, A, B, Q, N, rinv, rho)
        if float(np.linalg.norm(F)) < 1e-13:
            break
        A_c = A - B @ rinv(B.T @ Pi + N.T) - 0.5 * rho * np.eye(n)
        if np.max(np.linalg.eigvals(A_c).real) >= 0:
            break  # Newton step not defined off the stabilizing branch
        delta = scipy.linalg.solve_continuous_lyapunov(A_c.T, -F)
        Pi = symmetrize(Pi + delta)

    F = _are_residual(Pi, A, B, Q, N, rinv, rho)
    res = float(np.linalg.norm(F))
    A_c = A - B @ rinv(B.T @ Pi + N.T) - 0.5 * rho * np.eye(n)
    stable = bool(np.max(np.linalg.eigvals(A_c).real) < 0)
    if res >= residual_tol or not stable:
        raise AreSolveError(
            "no stabilizing Riccati solution found (residual %.3e, closed loop %s)"
            % (res, "stable" if stable else "unstable")
        )
    return Pi


@dataclass
class StationarySolution:
    Pi: np.ndarray
    s: np.ndarray
    K: np.ndarray
    kff: np.ndarray
    are_residual: float
    report: DetectStabReport


def solve_infinite_horizon(p: LqgProblem, tol: float = 1e-9) -> StationarySolution:
    """Discounted ARE and steady offset for constant coefficients.

    Requires constant b; detectability and stabilizability of the shifted
    pair are checked first and violations are rejected.
    """
    if not np.all(p.b.values == p.b.values[0]):
        raise SchemaError("infinite-horizon solver requires a constant drift offset b")
    rep = validate_convexity(p)
    if not rep.ok:
        raise AssumptionViolationError(
            "convexity assumptions violated: " + rep.summary(), report=rep
        )
    ds = detectability_stabilizability(p)
    if not ds.ok:
        missing = []
        if not ds.detectable:
            missing.append("detectability")
        if not ds.stabilizable:
            missing.append("stabilizability")
        raise AssumptionViolationError(
            "shifted pair fails " + " and ".join(missing), report=ds
        )

    Pi = solve_discounted_are(
        p.A, p.B, p.Q, p.N_cross, p.R, p.rho, Pi_init=p.Qhat, residual_tol=tol
    )
    rinv = spd_solver(p.R)
    res = float(np.linalg.norm(_are_residual(Pi, p.A, p.B, p.Q, p.N_cross, rinv, p.rho)))

    # steady offset: (rho I - M) s = Pi (b + B R^{-1} n) + N R^{-1} n - eta
    M_s = (p.A - p.B @ rinv(p.N_cross.T)).T - Pi @ p.B @ rinv(p.B.T)
    f = (
        Pi @ (p.b.values[0] + p.B @ rinv(p.n_lin))
        + p.N_cross @ rinv(p.n_lin)
        - p.eta
    )
    s = np.linalg.solve(p.rho * np.eye(p.n) - M_s, f)

    K = rinv(p.N_cross.T + p.B.T @ Pi)
    kff = rinv(p.B.T @ s - p.n_lin)
    return StationarySolution(
        Pi=Pi, s=s, K=K, kff=kff, are_residual=res, report=ds
    )
