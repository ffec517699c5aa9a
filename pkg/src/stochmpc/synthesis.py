"""Feedback synthesis: discrete Riccati solve, LQR gain, error-covariance schedule.

Sign convention, fixed artifact-wide: the applied input is ``u = -K x + v``
and the closed-loop matrix is ``Phi = A - B K`` with the standard LQR gain
``K = (R + B' P B)^-1 B' P A``. All downstream modules (covariance recursion,
condensed optimal control problem) use this same convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SynthesisError
from .validation import (
    as_matrix,
    check_positive_definite,
    check_psd,
    spectral_radius,
    symmetrize,
)

DARE_MAX_ITER = 100_000
DARE_STEP_TOL = 1e-12
DARE_RESIDUAL_TOL = 1e-9
STABILITY_TOL = 1e-9


@dataclass(frozen=True)
class FeedbackSynthesis:
    """Stabilizing gain K, closed loop Phi = A - B K, and the cost weights."""

    K: np.ndarray
    Phi: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        K = as_matrix(self.K, "K")
        Phi = as_matrix(self.Phi, "Phi", shape=(K.shape[1], K.shape[1]))
        Q = check_psd(as_matrix(self.Q, "Q"), "Q")
        R = check_positive_definite(as_matrix(self.R, "R"), "R")
        radius = spectral_radius(Phi)
        if radius >= 1.0 - STABILITY_TOL:
            raise SynthesisError(
                f"closed loop is not stable: spectral radius {radius:.12f}"
            )
        for name, value in (("K", K), ("Phi", Phi), ("Q", Q), ("R", R)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.Phi)


@dataclass(frozen=True)
class CovarianceSchedule:
    """Predicted error covariances for steps 0..N; step 0 is exactly zero."""

    sigmas: tuple

    def __post_init__(self):
        sigmas = []
        for k, sigma in enumerate(self.sigmas):
            sigma = as_matrix(sigma, f"sigmas[{k}]")
            check_psd(sigma, f"sigmas[{k}]")
            sigma.setflags(write=False)
            sigmas.append(sigma)
        if not sigmas:
            raise ConfigurationError("covariance schedule must not be empty")
        if np.any(sigmas[0] != 0.0):
            raise ConfigurationError("covariance schedule must start at the zero matrix")
        object.__setattr__(self, "sigmas", tuple(sigmas))

    def __len__(self) -> int:
        return len(self.sigmas)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.sigmas[k]

    def projected_variances(self, g: np.ndarray) -> np.ndarray:
        """The scalars ``g @ sigma_k @ g`` for every step k."""
        g = np.asarray(g, dtype=float)
        return np.array([float(g @ sigma @ g) for sigma in self.sigmas])


def solve_dare(A, B, Q, R) -> np.ndarray:
    """Fixed point P of the discrete algebraic Riccati equation.

    Iterates the Riccati difference equation
    ``P <- Q + A'(P - P B (R + B'P B)^-1 B'P) A`` from ``P = Q`` until
    successive iterates differ by less than ``DARE_STEP_TOL`` in Frobenius
    norm, then verifies the fixed-point residual. Linear convergence at rate
    ``rho(Phi)^2`` is plenty for the small systems this toolkit targets.
    """
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ConfigurationError(f"A must be square, got shape {A.shape}")
    n = A.shape[0]
    B = as_matrix(B, "B")
    if B.shape[0] != n:
        raise ConfigurationError(f"B must have {n} rows, got {B.shape[0]}")
    m = B.shape[1]
    Q = check_psd(as_matrix(Q, "Q", shape=(n, n)), "Q")
    R = check_positive_definite(as_matrix(R, "R", shape=(m, m)), "R")

    P = Q.copy()
    for _ in range(DARE_MAX_ITER):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = symmetrize(Q + A.T @ (P @ A - BtP.T @ gain))
        if np.linalg.norm(P_next - P, "fro") <= DARE_STEP_TOL:
            P = P_next
            break
        P = P_next
    residual = _dare_residual(A, B, Q, R, P)
    limit = DARE_RESIDUAL_TOL * (1.0 + np.linalg.norm(P, "fro"))
    if residual > limit:
        raise SynthesisError(
            f"Riccati iteration did not converge: residual {residual:.3e} "
            f"exceeds {limit:.3e}"
        )
    return P


def _dare_residual(A, B, Q, R, P) -> float:
    BtP = B.T @ P
    correction = BtP.T @ np.linalg.solve(R + BtP @ B, BtP @ A)
    return float(np.linalg.norm(A.T @ P @ A - A.T @ correction - P + Q, "fro"))


def lqr_gain(A, B, Q, R) -> FeedbackSynthesis:
    """LQR feedback for ``u = -K x + v``; fails if the loop is not stable."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    P = solve_dare(A, B, Q, R)
    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    return FeedbackSynthesis(K=K, Phi=A - B @ K, Q=Q, R=R)


def propagate_covariance(Phi, D, sigma_w, N: int) -> CovarianceSchedule:
    """Error covariances ``sigma_0 = 0``, ``sigma_{k+1} = Phi sigma_k Phi' + D sigma_w D'``.

    Each iterate is symmetrized to stop floating-point drift from accumulating.
    """
    Phi = as_matrix(Phi, "Phi")
    if Phi.shape[0] != Phi.shape[1]:
        raise ConfigurationError(f"Phi must be square, got shape {Phi.shape}")
    n = Phi.shape[0]
    D = as_matrix(D, "D")
    if D.shape[0] != n:
        raise ConfigurationError(f"D must have {n} rows, got {D.shape[0]}")
    q = D.shape[1]
    sigma_w = check_psd(as_matrix(sigma_w, "sigma_w", shape=(q, q)), "sigma_w")
    if N < 1:
        raise ConfigurationError(f"horizon must be at least 1, got {N}")

    injected = symmetrize(D @ sigma_w @ D.T)
    sigmas = [np.zeros((n, n))]
    for _ in range(N):
        sigmas.append(symmetrize(Phi @ sigmas[-1] @ Phi.T + injected))
    return CovarianceSchedule(sigmas=tuple(sigmas))
