"""Receding-horizon controllers with a scikit-learn style estimator API.

:class:`MpcController` separates offline synthesis from the online feedback
law the way an estimator separates ``fit`` from ``predict``:

* ``fit()`` solves the Riccati equation, propagates the error covariance,
  builds the tightening margins, and condenses the horizon problem;
* ``predict(x)`` maps measured states to inputs by solving the condensed QP;
* ``simulate(x0, steps, seed)`` closes the loop on the stochastic plant.

Construction stores parameters untouched (so ``get_params``/``clone`` work);
all validation happens in ``fit``. A controller instance keeps a warm-start
cache between solves and is meant to be used from one thread; run one
instance per Monte Carlo trial for parallel campaigns.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator

from .chance import RiskParameter, TighteningLaw, mean_shift, tightening_schedule
from .errors import ConfigurationError, SynthesisError
from .model import (
    ConstraintSet,
    DisturbanceKind,
    DisturbanceModel,
    LinearStochasticSystem,
    PRNG_ALGORITHM,
    check_violation,
    default_rng,
    sample_disturbance,
    step_true_plant,
)
from .ocp import (
    CondensedOcp,
    QpStatus,
    factorize_hessian,
    relax_state_rows,
    solve_qp,
)
from .synthesis import lqr_gain, propagate_covariance
from .validation import as_matrix, as_vector


class ControllerMode(str, Enum):
    """The four receding-horizon problem variants.

    The nominal modes ignore the disturbance model (input-constrained only,
    or with hard state constraints); the stochastic modes tighten the state
    constraints by the Gaussian-exact or the distribution-robust Cantelli
    margin and embed the stabilizing feedback in the prediction.
    """

    NOMINAL_FREE = "nominal-free"
    NOMINAL_CONSTRAINED = "nominal-constrained"
    SMPC_GAUSSIAN = "smpc-gaussian"
    SMPC_CANTELLI = "smpc-cantelli"


_SMPC_MODES = (ControllerMode.SMPC_GAUSSIAN, ControllerMode.SMPC_CANTELLI)


@dataclass(frozen=True)
class StepDiagnostics:
    """What happened inside one receding-horizon solve."""

    status: QpStatus
    relaxed: bool
    slack: float
    objective: float
    active_set: tuple
    solve_time: float


@dataclass(frozen=True)
class ClosedLoopRecord:
    """One closed-loop trial: trajectories, solver outcomes, violation flags.

    ``states`` has ``steps + 1`` rows; inputs, disturbances, and diagnostics
    have one row per step. ``nominal_next[t]`` is the disturbance-free
    prediction ``A x_t + B u_t`` of the state recorded at ``t + 1``, which is
    what violation statistics condition on.
    """

    mode: str
    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    nominal_next: np.ndarray
    violations: np.ndarray
    qp_statuses: tuple
    slack_flags: np.ndarray
    solve_times: np.ndarray
    margins: np.ndarray
    risk: float | None
    seed: int | None
    halfspace_g: np.ndarray | None = None
    prng: str = PRNG_ALGORITHM

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]

    @property
    def constraint_values(self) -> np.ndarray:
        """Realized values of the first half-space expression, per state."""
        if self.halfspace_g is None:
            raise ConfigurationError("record carries no state constraint")
        return self.states @ self.halfspace_g

    @property
    def max_constraint_value(self) -> float:
        return float(self.constraint_values.max())


class MpcController(BaseEstimator):
    """Receding-horizon regulator for a linear plant with additive noise.

    Parameters
    ----------
    system : LinearStochasticSystem
        Plant matrices and disturbance distribution parameters.
    constraints : ConstraintSet
        Input box bounds and state half-spaces.
    mode : ControllerMode or str
        Which problem variant to solve each step.
    horizon : int
        Prediction horizon N.
    state_weight, input_weight : array-like or None
        Stage cost weights; identity when None. The same weights drive the
        stabilizing feedback synthesis in the stochastic modes.
    risk : float
        Required per-step constraint satisfaction probability p.
    feedback_gain : "lqr", "zero", or an explicit (m, n) matrix
        Feedback used by the stochastic modes. "zero" turns the prediction
        into the open-loop one (mainly for degeneracy tests).
    slack_penalty : float
        Quadratic penalty on the state-constraint slack used when a tightened
        problem is infeasible at the measured state.
    """

    def __init__(
        self,
        system: LinearStochasticSystem,
        constraints: ConstraintSet,
        mode: ControllerMode | str = ControllerMode.SMPC_GAUSSIAN,
        horizon: int = 11,
        state_weight=None,
        input_weight=None,
        risk: float = 0.8,
        feedback_gain="lqr",
        slack_penalty: float = 1e6,
    ):
        self.system = system
        self.constraints = constraints
        self.mode = mode
        self.horizon = horizon
        self.state_weight = state_weight
        self.input_weight = input_weight
        self.risk = risk
        self.feedback_gain = feedback_gain
        self.slack_penalty = slack_penalty

    def fit(self, X=None, y=None) -> "MpcController":
        """Synthesize feedback, tightening margins, and the condensed QP."""
        del X, y  # estimator-API placeholders; synthesis needs no data
        system = self.system
        constraints = self.constraints
        if not isinstance(system, LinearStochasticSystem):
            raise ConfigurationError("system must be a LinearStochasticSystem")
        if not isinstance(constraints, ConstraintSet):
            raise ConfigurationError("constraints must be a ConstraintSet")
        if constraints.n_inputs != system.n_inputs:
            raise ConfigurationError(
                f"constraints are for {constraints.n_inputs} inputs, "
                f"system has {system.n_inputs}"
            )
        mode = ControllerMode(self.mode)
        n, m = system.n_states, system.n_inputs
        N = int(self.horizon)
        if N < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        Q = np.eye(n) if self.state_weight is None else as_matrix(self.state_weight, "state_weight", (n, n))
        R = np.eye(m) if self.input_weight is None else as_matrix(self.input_weight, "input_weight", (m, m))

        halfspaces = () if mode is ControllerMode.NOMINAL_FREE else constraints.state_halfspaces
        for g, _ in halfspaces:
            if g.size != n:
                raise ConfigurationError(
                    f"state half-space has dimension {g.size}, state is {n}"
                )

        self.feedback_ = None
        self.covariances_ = None
        self.tightening_ = ()
        if mode in _SMPC_MODES:
            self.risk_ = RiskParameter(float(self.risk))
            gain = self._resolve_gain(system, Q, R)
            phi = system.A - system.B @ gain
            law = (
                TighteningLaw.GAUSSIAN
                if mode is ControllerMode.SMPC_GAUSSIAN
                else TighteningLaw.CANTELLI
            )
            self.covariances_ = propagate_covariance(phi, system.D, system.sigma_w, N)
            schedules = tuple(
                tightening_schedule(g, self.covariances_, self.risk_, law)
                for g, _ in halfspaces
            )
            margins = (
                np.vstack([s.gammas for s in schedules])
                if schedules
                else np.zeros((0, N))
            )
            margins = margins + self._mean_shift_schedule(phi, halfspaces, N)
            self.tightening_ = schedules
        else:
            self.risk_ = None
            gain = np.zeros((m, n))
            phi = system.A.copy()
            margins = np.zeros((len(halfspaces), N))

        self.gain_ = gain
        self.closed_loop_ = phi
        self.margins_ = margins
        self._ocp = CondensedOcp(
            A=system.A, B=system.B, N=N, Q=Q, R=R,
            u_min=constraints.u_min, u_max=constraints.u_max,
            halfspaces=halfspaces, margins=margins, K=gain,
        )
        self._h_factor = factorize_hessian(self._ocp.H)
        self._mode = mode
        self._halfspaces = halfspaces
        self._warm = None
        return self

    def _resolve_gain(self, system, Q, R) -> np.ndarray:
        if isinstance(self.feedback_gain, str):
            if self.feedback_gain == "zero":
                return np.zeros((system.n_inputs, system.n_states))
            if self.feedback_gain == "lqr":
                self.feedback_ = lqr_gain(system.A, system.B, Q, R)
                return self.feedback_.K
            raise ConfigurationError(
                f"feedback_gain must be 'lqr', 'zero', or a matrix, "
                f"got {self.feedback_gain!r}"
            )
        return as_matrix(
            self.feedback_gain, "feedback_gain",
            (system.n_inputs, system.n_states),
        )

    def _mean_shift_schedule(self, phi, halfspaces, N) -> np.ndarray:
        """Extra per-step margins ``g @ E[e_k]`` for a non-zero disturbance mean."""
        system = self.system
        if not halfspaces or not np.any(system.mean_w):
            return np.zeros((len(halfspaces), N))
        shifts = np.zeros((len(halfspaces), N))
        error_mean = np.zeros(system.n_states)
        for k in range(N):
            error_mean = phi @ error_mean + system.D @ system.mean_w
            for i, (g, _) in enumerate(halfspaces):
                shifts[i, k] = mean_shift(g, error_mean)
        return shifts

    def _check_fitted(self):
        if not hasattr(self, "_ocp"):
            raise ConfigurationError("controller is not fitted; call fit() first")

    def control_step(self, x) -> tuple[np.ndarray, StepDiagnostics]:
        """Solve the horizon problem at ``x`` and return the first input."""
        self._check_fitted()
        x = as_vector(x, "x", size=self.system.n_states)
        if not np.all(np.isfinite(x)):
            raise ConfigurationError("state contains non-finite entries")
        started = time.perf_counter()
        qp = self._ocp.qp(x)
        solution = solve_qp(qp, warm_order=self._warm, h_factor=self._h_factor)
        relaxed = False
        slack = 0.0
        if solution.status is QpStatus.INFEASIBLE and qp.state_rows.size:
            relaxed_qp = relax_state_rows(qp, penalty=float(self.slack_penalty))
            solution = solve_qp(relaxed_qp)
            relaxed = True
            slack = float(solution.z[-1])
        if solution.status is not QpStatus.OPTIMAL:
            raise SynthesisError(
                f"QP solve failed with status {solution.status.value}"
            )
        m = self.system.n_inputs
        u = solution.z[:m] - self.gain_ @ x
        self._warm = self._shifted_active_set(solution.active_set)
        return u, StepDiagnostics(
            status=solution.status,
            relaxed=relaxed,
            slack=slack,
            objective=solution.objective,
            active_set=solution.active_set,
            solve_time=time.perf_counter() - started,
        )

    def _shifted_active_set(self, active) -> tuple:
        """Map an active set one step forward in time for warm starting."""
        N, m = self._ocp.spec.N, self.system.n_inputs
        n_hs = len(self._halfspaces)
        block = N * m
        shifted = []
        for row in active:
            if row < 2 * block:  # input bound rows, k-major within each block
                base = (row // block) * block
                k, j = divmod(row - base, m)
                if k >= 1:
                    shifted.append(base + (k - 1) * m + j)
            else:  # state rows for steps 1..N
                k, i = divmod(row - 2 * block, n_hs)
                if k >= 1:
                    shifted.append(2 * block + (k - 1) * n_hs + i)
        return tuple(shifted)

    def predict(self, X) -> np.ndarray:
        """Inputs for measured states: (n,) -> (m,), or row-wise for 2-D X."""
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return self.control_step(X)[0]
        if X.ndim != 2:
            raise ConfigurationError(f"X must be 1-D or 2-D, got ndim={X.ndim}")
        return np.vstack([self.control_step(row)[0] for row in X])

    def simulate(
        self,
        x0,
        steps: int,
        seed: int | None = None,
        rng: np.random.Generator | None = None,
        plant_noise: DisturbanceModel | None = None,
        disturbance_free: bool = False,
    ) -> ClosedLoopRecord:
        """Run the closed loop: measure, solve, apply, disturb, repeat.

        The trial is bit-reproducible from ``seed``. ``disturbance_free``
        zeroes the realized disturbance while the controller keeps tightening
        for the configured one (the noise-free margin experiment);
        ``plant_noise`` overrides the distribution the plant actually draws
        from, for example to drive a robustly tightened controller with
        non-Gaussian noise.
        """
        self._check_fitted()
        if steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {steps}")
        system = self.system
        x0 = as_vector(x0, "x0", size=system.n_states)
        if rng is None:
            rng = default_rng(0 if seed is None else int(seed))
        if plant_noise is None:
            plant_noise = DisturbanceModel(
                DisturbanceKind.GAUSSIAN_WITH_MEAN
                if np.any(system.mean_w)
                else DisturbanceKind.GAUSSIAN_ZERO_MEAN
            )
        self._warm = None  # trials must not inherit the previous run's path

        n, m, q = system.n_states, system.n_inputs, system.n_disturbances
        states = np.zeros((steps + 1, n))
        inputs = np.zeros((steps, m))
        noises = np.zeros((steps, q))
        nominal_next = np.zeros((steps, n))
        statuses = []
        slack_flags = np.zeros(steps, dtype=bool)
        solve_times = np.zeros(steps)
        states[0] = x0
        x = x0
        for t in range(steps):
            u, diag = self.control_step(x)
            w = (
                np.zeros(q)
                if disturbance_free
                else sample_disturbance(plant_noise, system.sigma_w, rng, system.mean_w)
            )
            nominal_next[t] = system.A @ x + system.B @ u
            x = step_true_plant(system, x, u, w)
            states[t + 1] = x
            inputs[t] = u
            noises[t] = w
            statuses.append(diag.status.value if not diag.relaxed else "relaxed")
            slack_flags[t] = diag.relaxed
            solve_times[t] = diag.solve_time

        n_hs = self.constraints.n_halfspaces
        violations = np.zeros((steps + 1, n_hs), dtype=bool)
        for t in range(steps + 1):
            violations[t] = check_violation(self.constraints, states[t])
        first_g = (
            self.constraints.state_halfspaces[0][0]
            if self.constraints.n_halfspaces
            else None
        )
        return ClosedLoopRecord(
            mode=self._mode.value,
            states=states,
            inputs=inputs,
            disturbances=noises,
            nominal_next=nominal_next,
            violations=violations,
            qp_statuses=tuple(statuses),
            slack_flags=slack_flags,
            solve_times=solve_times,
            margins=self.margins_.copy(),
            risk=None if self.risk_ is None else self.risk_.p,
            seed=seed,
            halfspace_g=first_g,
        )
