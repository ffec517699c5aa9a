"""Condensed finite-horizon optimal control problem and a dense QP solver.

The horizon-N problem in the decision sequence ``v_0..v_{N-1}`` (applied input
``u_k = -K x_k + v_k``, prediction ``x_{k+1} = Phi x_k + B v_k`` with
``Phi = A - B K``) is condensed to

    minimize  0.5 z' H z + f' z  (+ constant)
    subject to G z <= hvec

by eliminating the predicted states. With ``K = 0`` this is exactly the
nominal input-sequence problem. Only ``f``, ``hvec`` and the constant depend
on the measured state, so a controller builds the condensation once and
refreshes those per step.

The solver is a dense dual active-set method (start at the unconstrained
minimizer, add violated constraints one at a time, drop dual-blocking ones).
It needs no feasible starting point, is deterministic bit-for-bit, detects
infeasible row systems, and accepts a warm-start hint ordering the rows to
try first. Problems here are tiny (tens of variables and rows), so all linear
algebra is dense and refactored per change of the working set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigurationError
from .validation import as_matrix, as_vector, symmetrize

FEASIBILITY_TOL = 1e-9
REGULARIZATION = 1e-9
SLACK_PENALTY = 1e6


@dataclass(frozen=True)
class OcpSpec:
    """Data of one finite-horizon problem instance.

    ``margins`` has one row per state half-space and one column per
    prediction step 1..N; zero margins and ``K = 0`` recover the nominal
    problem. ``halfspaces`` may be empty (input constraints only).
    """

    A: np.ndarray
    B: np.ndarray
    N: int
    Q: np.ndarray
    R: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    x0: np.ndarray
    halfspaces: tuple = ()
    margins: np.ndarray | None = None
    K: np.ndarray | None = None

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise ConfigurationError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, "B")
        if B.shape[0] != n:
            raise ConfigurationError(f"B must have {n} rows, got {B.shape[0]}")
        m = B.shape[1]
        if self.N < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.N}")
        Q = as_matrix(self.Q, "Q", shape=(n, n))
        R = as_matrix(self.R, "R", shape=(m, m))
        u_min = as_vector(self.u_min, "u_min", size=m)
        u_max = as_vector(self.u_max, "u_max", size=m)
        if np.any(u_min > u_max):
            raise ConfigurationError("u_min must be <= u_max elementwise")
        x0 = as_vector(self.x0, "x0", size=n)
        halfspaces = tuple(
            (as_vector(g, "halfspace g", size=n), float(h)) for g, h in self.halfspaces
        )
        n_hs = len(halfspaces)
        margins = (
            np.zeros((n_hs, self.N))
            if self.margins is None
            else as_matrix(np.atleast_2d(self.margins), "margins", shape=(n_hs, self.N))
        )
        K = (
            np.zeros((m, n))
            if self.K is None
            else as_matrix(self.K, "K", shape=(m, n))
        )
        for name, value in (
            ("A", A), ("B", B), ("Q", Q), ("R", R), ("u_min", u_min),
            ("u_max", u_max), ("x0", x0), ("margins", margins), ("K", K),
        ):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "halfspaces", halfspaces)


@dataclass(frozen=True)
class QuadraticProgram:
    """``minimize 0.5 z' H z + f' z + c0  subject to  G z <= hvec``.

    ``state_rows`` indexes the rows that came from state constraints; those
    are the ones a slack relaxation is allowed to soften.
    """

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    hvec: np.ndarray
    c0: float = 0.0
    state_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        H = as_matrix(self.H, "H")
        d = H.shape[0]
        if H.shape[1] != d or not np.allclose(H, H.T, atol=1e-9, rtol=0.0):
            raise ConfigurationError("H must be square and symmetric")
        f = as_vector(self.f, "f", size=d)
        G = as_matrix(self.G, "G") if np.size(self.G) else np.zeros((0, d))
        if G.shape[1] != d:
            raise ConfigurationError(f"G must have {d} columns, got {G.shape[1]}")
        hvec = as_vector(self.hvec, "hvec", size=G.shape[0])
        state_rows = np.asarray(self.state_rows, dtype=int)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "hvec", hvec)
        object.__setattr__(self, "c0", float(self.c0))
        object.__setattr__(self, "state_rows", state_rows)

    @property
    def n_variables(self) -> int:
        return self.H.shape[0]

    @property
    def n_rows(self) -> int:
        return self.G.shape[0]

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z + self.c0)


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max-iter"


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    objective: float
    active_set: tuple
    status: QpStatus
    multipliers: np.ndarray
    iterations: int


class CondensedOcp:
    """State-eliminated horizon problem with the measured state left symbolic.

    Precomputes every x0-independent matrix so that `qp(x0)` is two small
    matrix-vector products. Row layout: input upper bounds (k-major), input
    lower bounds, then state rows (step-major, half-space-minor).
    """

    def __init__(self, A, B, N, Q, R, u_min, u_max, halfspaces=(), margins=None, K=None):
        spec = OcpSpec(
            A=A, B=B, N=int(N), Q=Q, R=R, u_min=u_min, u_max=u_max,
            x0=np.zeros(as_matrix(A, "A").shape[0]),
            halfspaces=tuple(halfspaces), margins=margins, K=K,
        )
        A, B, K = spec.A, spec.B, spec.K
        n, m, N = A.shape[0], B.shape[1], spec.N
        Phi = A - B @ K

        # Prediction operators: x_k = powers[k] @ x0 + reach[k] @ z.
        powers = [np.eye(n)]
        for _ in range(N):
            powers.append(Phi @ powers[-1])
        reach = [np.zeros((n, N * m))]
        for k in range(N):
            nxt = Phi @ reach[k]
            nxt[:, k * m:(k + 1) * m] += B
            reach.append(nxt)

        # Stacked cost stages k = 0..N-1 for states and applied inputs.
        Sx = np.vstack(reach[:N])                    # (N n, N m)
        Tx = np.vstack(powers[:N])                   # (N n, n)
        Su = np.zeros((N * m, N * m))
        Tu = np.zeros((N * m, n))
        for k in range(N):
            rows = slice(k * m, (k + 1) * m)
            Su[rows] = -K @ reach[k]
            Su[rows, rows] += np.eye(m)
            Tu[rows] = -K @ powers[k]
        Qbar = np.kron(np.eye(N), spec.Q)
        Rbar = np.kron(np.eye(N), spec.R)

        self.H = symmetrize(2.0 * (Sx.T @ Qbar @ Sx + Su.T @ Rbar @ Su))
        self._f_map = 2.0 * (Sx.T @ Qbar @ Tx + Su.T @ Rbar @ Tu)
        self._c0_map = Tx.T @ Qbar @ Tx + Tu.T @ Rbar @ Tu

        # Constraint rows: G z <= h_base - h_map @ x0.
        blocks_G = [Su, -Su]
        blocks_h = [np.tile(spec.u_max, N), -np.tile(spec.u_min, N)]
        blocks_map = [Tu, -Tu]
        state_rows = []
        row = 2 * N * m
        for k in range(1, N + 1):
            for i, (g, h) in enumerate(spec.halfspaces):
                blocks_G.append(g @ reach[k])
                blocks_h.append(h - spec.margins[i, k - 1])
                blocks_map.append(g @ powers[k])
                state_rows.append(row)
                row += 1
        self.G = np.vstack([np.atleast_2d(b) for b in blocks_G])
        self._h_base = np.hstack([np.atleast_1d(b) for b in blocks_h])
        self._h_map = np.vstack([np.atleast_2d(b) for b in blocks_map])
        self.state_rows = np.array(state_rows, dtype=int)
        self.spec = spec
        self.n_states, self.n_inputs = n, m

    def qp(self, x0) -> QuadraticProgram:
        x0 = as_vector(x0, "x0", size=self.n_states)
        return QuadraticProgram(
            H=self.H,
            f=self._f_map @ x0,
            G=self.G,
            hvec=self._h_base - self._h_map @ x0,
            c0=float(x0 @ self._c0_map @ x0),
            state_rows=self.state_rows,
        )


def condense(spec: OcpSpec) -> QuadraticProgram:
    """Condense one problem instance to a dense QP in the decision sequence."""
    ocp = CondensedOcp(
        A=spec.A, B=spec.B, N=spec.N, Q=spec.Q, R=spec.R,
        u_min=spec.u_min, u_max=spec.u_max,
        halfspaces=spec.halfspaces, margins=spec.margins, K=spec.K,
    )
    return ocp.qp(spec.x0)


def factorize_hessian(H: np.ndarray):
    """Cholesky factor of H, regularized by +1e-9 I if nearly singular."""
    H = symmetrize(as_matrix(H, "H"))
    min_eig = float(np.linalg.eigvalsh(H).min())
    if min_eig < REGULARIZATION:
        H = H + REGULARIZATION * np.eye(H.shape[0])
    try:
        return cho_factor(H, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by check above
        raise ConfigurationError(f"H is not positive semidefinite: {exc}") from None


def solve_qp(
    qp: QuadraticProgram,
    warm_order=None,
    h_factor=None,
    max_iter: int | None = None,
) -> QpSolution:
    """Dual active-set solve of ``min 0.5 z'Hz + f'z  s.t.  G z <= hvec``.

    Starts at the unconstrained minimizer and repeatedly enforces a violated
    row, taking the exact primal/dual step; rows whose multiplier would turn
    negative are dropped along the way. Same input bits (including the warm
    hint) give the same output bits.

    ``warm_order`` is an optional sequence of row indices tried first when
    choosing which violated row to enforce; it changes the pivoting path, not
    the optimum.
    """
    d = qp.n_variables
    r = qp.n_rows
    if h_factor is None:
        h_factor = factorize_hessian(qp.H)
    if max_iter is None:
        max_iter = 50 * (r + 5)

    G, hvec, f = qp.G, qp.hvec, qp.f
    row_tol = FEASIBILITY_TOL * (1.0 + np.abs(hvec))

    z = cho_solve(h_factor, -f)
    active: list[int] = []
    lam: list[float] = []
    Gact = np.zeros((0, d))
    iterations = 0

    def finish(status: QpStatus) -> QpSolution:
        multipliers = np.zeros(r)
        for idx, value in zip(active, lam):
            multipliers[idx] = value
        order = np.argsort(active)
        return QpSolution(
            z=z.copy(),
            objective=qp.objective(z),
            active_set=tuple(int(active[i]) for i in order),
            status=status,
            multipliers=multipliers,
            iterations=iterations,
        )

    while True:
        slack = G @ z - hvec if r else np.zeros(0)
        target = -1
        if warm_order is not None:
            for idx in warm_order:
                if 0 <= idx < r and idx not in active and slack[idx] > row_tol[idx]:
                    target = int(idx)
                    break
        if target < 0:
            violated = np.flatnonzero(slack > row_tol)
            if violated.size == 0:
                return finish(QpStatus.OPTIMAL)
            target = int(violated[np.argmax(slack[violated])])

        normal = G[target]
        lam_target = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                return finish(QpStatus.MAX_ITER)
            h_inv_normal = cho_solve(h_factor, normal)
            if active:
                h_inv_act = cho_solve(h_factor, Gact.T)
                gram = Gact @ h_inv_act
                dual_dir = np.linalg.solve(gram, Gact @ h_inv_normal)
                step_dir = h_inv_normal - h_inv_act @ dual_dir
            else:
                dual_dir = np.zeros(0)
                step_dir = h_inv_normal
            denom = float(normal @ step_dir)

            block_step = math.inf
            block_idx = -1
            for j, rate in enumerate(dual_dir):
                if rate > 1e-12 and lam[j] / rate < block_step:
                    block_step = lam[j] / rate
                    block_idx = j
            violation = float(normal @ z - hvec[target])
            full_step = (
                violation / denom
                if denom > 1e-12 * (1.0 + float(normal @ normal))
                else math.inf
            )

            if math.isinf(full_step) and math.isinf(block_step):
                return finish(QpStatus.INFEASIBLE)
            step = min(full_step, block_step)
            z = z - step * step_dir
            if active:
                lam = [v - step * rate for v, rate in zip(lam, dual_dir)]
            lam_target += step

            if block_step < full_step:
                del active[block_idx], lam[block_idx]
                Gact = np.delete(Gact, block_idx, axis=0)
                continue
            active.append(target)
            lam.append(lam_target)
            Gact = np.vstack([Gact, normal])
            break


def relax_state_rows(qp: QuadraticProgram, penalty: float = SLACK_PENALTY) -> QuadraticProgram:
    """Augment with one slack variable softening every state row.

    The slack enters each state row as ``g' x - s <= bound`` and is penalized
    by ``penalty * s**2``; input rows stay hard, and ``s >= 0`` is appended as
    the final row.
    """
    if qp.state_rows.size == 0:
        raise ConfigurationError("QP has no state rows to relax")
    d = qp.n_variables
    H = np.zeros((d + 1, d + 1))
    H[:d, :d] = qp.H
    H[d, d] = 2.0 * penalty
    f = np.append(qp.f, 0.0)
    G = np.hstack([qp.G, np.zeros((qp.n_rows, 1))])
    G[qp.state_rows, d] = -1.0
    G = np.vstack([G, np.zeros(d + 1)])
    G[-1, d] = -1.0
    hvec = np.append(qp.hvec, 0.0)
    return QuadraticProgram(H=H, f=f, G=G, hvec=hvec, c0=qp.c0, state_rows=qp.state_rows)
