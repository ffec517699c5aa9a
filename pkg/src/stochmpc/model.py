"""Linear stochastic plant model, constraint data, and seeded disturbance sampling.

The plant is ``x+ = A x + B u + D w`` with additive noise ``w``. Disturbance
draws go through numpy's PCG64 bit generator (ziggurat normal transform), so a
run is bit-reproducible from its seed; the algorithm name is recorded in every
output file header as ``PRNG_ALGORITHM``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .validation import (
    as_matrix,
    as_vector,
    check_psd,
    psd_cholesky,
)

#: Identifier written into output-file headers alongside the seed.
PRNG_ALGORITHM = "numpy-pcg64-ziggurat"


def default_rng(seed: int) -> np.random.Generator:
    """The toolkit-wide PRNG: a PCG64 stream seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


class DisturbanceKind(str, Enum):
    GAUSSIAN_ZERO_MEAN = "gaussian-zero-mean"
    GAUSSIAN_WITH_MEAN = "gaussian-with-mean"
    GENERAL_ZERO_MEAN = "general-zero-mean"


@dataclass(frozen=True)
class DisturbanceModel:
    """Distribution family of the additive disturbance.

    ``GENERAL_ZERO_MEAN`` is the univariate distribution-free case: only the
    variance is declared, and draws come from a centred uniform with that
    variance (any finite-variance zero-mean law would do for the robust
    tightening; the uniform keeps sampling simple and seeded).
    """

    kind: DisturbanceKind = DisturbanceKind.GAUSSIAN_ZERO_MEAN
    variance_w: float | None = None

    def __post_init__(self):
        if self.kind is DisturbanceKind.GENERAL_ZERO_MEAN:
            if self.variance_w is None or self.variance_w <= 0.0:
                raise ConfigurationError(
                    "general-zero-mean disturbance requires variance_w > 0"
                )


@dataclass(frozen=True)
class LinearStochasticSystem:
    """Discrete-time linear system ``x+ = A x + B u + D w``, ``w ~ (mean_w, sigma_w)``."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    sigma_w: np.ndarray
    mean_w: np.ndarray | None = None

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B = as_matrix(self.B, "B")
        D = as_matrix(self.D, "D")
        if B.shape[0] != n:
            raise ConfigurationError(f"B must have {n} rows, got {B.shape[0]}")
        if D.shape[0] != n:
            raise ConfigurationError(f"D must have {n} rows, got {D.shape[0]}")
        q = D.shape[1]
        sigma_w = as_matrix(self.sigma_w, "sigma_w", shape=(q, q))
        check_psd(sigma_w, "sigma_w")
        mean = (
            np.zeros(q)
            if self.mean_w is None
            else as_vector(self.mean_w, "mean_w", size=q)
        )
        for name, value in (
            ("A", A), ("B", B), ("D", D), ("sigma_w", sigma_w), ("mean_w", mean),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_disturbances(self) -> int:
        return self.D.shape[1]


@dataclass(frozen=True)
class ConstraintSet:
    """Input box bounds plus half-space state constraints ``g @ x <= h``.

    Boundary points (``g @ x == h``) count as satisfied.
    """

    u_min: np.ndarray
    u_max: np.ndarray
    state_halfspaces: tuple = field(default_factory=tuple)

    def __post_init__(self):
        u_min = as_vector(self.u_min, "u_min")
        u_max = as_vector(self.u_max, "u_max", size=u_min.size)
        if np.any(u_min > u_max):
            raise ConfigurationError("u_min must be <= u_max elementwise")
        halfspaces = []
        for i, (g, h) in enumerate(self.state_halfspaces):
            g = as_vector(g, f"state_halfspaces[{i}].g")
            if np.all(g == 0.0):
                raise ConfigurationError(f"state_halfspaces[{i}].g must be nonzero")
            g.setflags(write=False)
            halfspaces.append((g, float(h)))
        u_min.setflags(write=False)
        u_max.setflags(write=False)
        object.__setattr__(self, "u_min", u_min)
        object.__setattr__(self, "u_max", u_max)
        object.__setattr__(self, "state_halfspaces", tuple(halfspaces))

    @property
    def n_inputs(self) -> int:
        return self.u_min.size

    @property
    def n_halfspaces(self) -> int:
        return len(self.state_halfspaces)

    def state_rows(self, n_states: int) -> tuple[np.ndarray, np.ndarray]:
        """Stack the half-spaces as ``(G, h)`` with G of shape (n_halfspaces, n)."""
        if self.n_halfspaces == 0:
            return np.zeros((0, n_states)), np.zeros(0)
        G = np.vstack([g for g, _ in self.state_halfspaces])
        if G.shape[1] != n_states:
            raise ConfigurationError(
                f"state half-spaces are {G.shape[1]}-dimensional, state is {n_states}"
            )
        h = np.array([h for _, h in self.state_halfspaces])
        return G, h


def step_true_plant(
    sys: LinearStochasticSystem, x: np.ndarray, u: np.ndarray, w: np.ndarray
) -> np.ndarray:
    """One exact step of the disturbed plant: ``A x + B u + D w``."""
    x = as_vector(x, "x", size=sys.n_states)
    u = as_vector(u, "u", size=sys.n_inputs)
    w = as_vector(w, "w", size=sys.n_disturbances)
    return sys.A @ x + sys.B @ u + sys.D @ w


def sample_disturbance(
    model: DisturbanceModel,
    sigma_w: np.ndarray,
    rng: np.random.Generator,
    mean_w: np.ndarray | None = None,
) -> np.ndarray:
    """Draw one disturbance vector; the generator state advances in place.

    Gaussian draws are i.i.d. standard normals premultiplied by a
    semidefinite-tolerant Cholesky factor of ``sigma_w``, so any PSD
    covariance (including singular ones) is accepted.
    """
    sigma_w = as_matrix(sigma_w, "sigma_w")
    check_psd(sigma_w, "sigma_w")
    q = sigma_w.shape[0]

    if model.kind is DisturbanceKind.GENERAL_ZERO_MEAN:
        # Centred uniform on [-a, a] has variance a^2 / 3.
        half_width = np.sqrt(3.0 * model.variance_w)
        return rng.uniform(-half_width, half_width, size=q)

    draw = psd_cholesky(sigma_w, "sigma_w") @ rng.standard_normal(q)
    if model.kind is DisturbanceKind.GAUSSIAN_WITH_MEAN:
        mean = np.zeros(q) if mean_w is None else as_vector(mean_w, "mean_w", size=q)
        return mean + draw
    return draw


def check_violation(cs: ConstraintSet, x: np.ndarray) -> np.ndarray:
    """Boolean flag per half-space, True iff ``g @ x > h`` strictly."""
    x = as_vector(x, "x")
    G, h = cs.state_rows(x.size)
    return G @ x > h
