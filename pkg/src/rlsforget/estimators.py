"""Forgetting-factor recursive least-squares estimators.

Four update laws share one R-centric code path: each step updates the
information matrix R, recomputes the covariance P = R^-1 by explicit
inversion, and moves the estimate along the gain vector K(t) phi(t).

    ef    exponential forgetting       K = P(t-1) / (mu + phi' P(t-1) phi),  F = mu I
    df1   directional forgetting (1)   K = P(t-1) / (1 + phi' P(t-1) phi),   F = I - (1 - beta) phi phi' P(t-1)
    df2   directional forgetting (2)   K = P(t),                             F = I - (1 - mu) R phi phi' / (phi' R phi)
    pef   regularised exp. forgetting  K = P(t),                             F = mu I + delta P(t-1)

For ``pef`` the product F R(t-1) collapses to mu R(t-1) + delta I, so F is
never formed.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    SINGULAR_EIG,
    LinalgError,
    SingularMatrixError,
    as_square,
    as_vector,
    invert,
    is_symmetric,
    sym_eigenvalues,
)

DEFAULT_PHI_FLOOR = 1e-12
# relative slack on the delta-admissibility boundary
_ADMISSIBLE_RTOL = 1e-12


class Algorithm(str, enum.Enum):
    EF = "ef"
    DF1 = "df1"
    DF2 = "df2"
    PROPOSED = "pef"

    @classmethod
    def parse(cls, name: str) -> "Algorithm":
        key = name.strip().lower()
        aliases = {"proposed": "pef", "proposedef": "pef", "proposed_ef": "pef"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown algorithm {name!r}; expected one of ef, df1, df2, pef") from None


@dataclass(frozen=True)
class AlgoParams:
    kind: Algorithm
    mu: float
    delta: float | None = None
    phi_norm_floor: float = DEFAULT_PHI_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "kind", Algorithm.parse(self.kind) if isinstance(self.kind, str) else self.kind)
        if not 0.0 < self.mu < 1.0:
            raise ValueError(f"forgetting factor mu must lie in (0, 1), got {self.mu}")
        if self.kind is Algorithm.PROPOSED:
            if self.delta is None or not self.delta > 0.0:
                raise ValueError(f"pef requires delta > 0, got {self.delta}")
        elif self.delta is not None:
            raise ValueError(f"delta is only used by pef, got delta={self.delta} for {self.kind.value}")
        if self.phi_norm_floor < 0.0:
            raise ValueError("phi_norm_floor must be >= 0")

    @property
    def lower_bound(self) -> float | None:
        """Guaranteed floor delta / (1 - mu) on lambda_min(R), pef only."""
        if self.kind is not Algorithm.PROPOSED:
            return None
        return self.delta / (1.0 - self.mu)


@dataclass
class EstimatorState:
    params: AlgoParams
    theta_hat: np.ndarray
    R: np.ndarray
    P: np.ndarray
    t: int = 0
    lam_min_R: float = math.nan
    lam_max_R: float = math.nan
    windup: bool = False
    delta_admissible: bool | None = None

    @property
    def n(self) -> int:
        return self.theta_hat.shape[0]


@dataclass
class StepOutput:
    theta_hat: np.ndarray
    innovation: float
    gain_vec: np.ndarray
    lam_min_R: float
    lam_max_R: float
    phi_P_phi: float
    beta: float | None = None
    windup: bool = False
    degenerate: bool = False
    forgetting: np.ndarray | None = field(default=None, repr=False)


def check_delta_admissible(mu: float, delta: float, R0) -> bool:
    """True iff ``delta <= (1 - mu) * lambda_min(R0)``.

    This is the data-free admissibility condition; it guarantees
    ``R(t) >= delta / (1 - mu) I`` for every t regardless of excitation.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie in (0, 1), got {mu}")
    if not delta > 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    bound = (1.0 - mu) * float(sym_eigenvalues(R0)[0])
    return delta <= bound * (1.0 + _ADMISSIBLE_RTOL)


def init(params: AlgoParams, theta0, R0) -> EstimatorState:
    theta0 = as_vector(theta0).copy()
    R0 = as_square(R0).copy()
    if R0.shape[0] != theta0.shape[0]:
        raise LinalgError(f"R0 is {R0.shape[0]}x{R0.shape[0]} but theta0 has {theta0.shape[0]} entries")
    if not is_symmetric(R0):
        raise LinalgError("R0 must be symmetric")
    eigs = sym_eigenvalues(R0)
    if eigs[0] <= 0.0:
        raise LinalgError(f"R0 must be positive definite, lambda_min = {eigs[0]:.3e}")
    state = EstimatorState(
        params=params,
        theta_hat=theta0,
        R=R0,
        P=invert(R0, eigs),
        lam_min_R=float(eigs[0]),
        lam_max_R=float(eigs[-1]),
    )
    if params.kind is Algorithm.PROPOSED:
        state.delta_admissible = check_delta_admissible(params.mu, params.delta, R0)
        if not state.delta_admissible:
            warnings.warn(
                f"delta={params.delta} exceeds (1 - mu) lambda_min(R0); "
                "the lower bound on R(t) is not guaranteed",
                stacklevel=2,
            )
    return state


def _commit(state: EstimatorState, R_new: np.ndarray, freeze_on_singular: bool = False) -> None:
    # R is the source of truth; P follows by explicit inversion.
    R_new = 0.5 * (R_new + R_new.T)
    if not np.all(np.isfinite(R_new)):
        raise FloatingPointError(f"non-finite information matrix at step {state.t + 1}")
    eigs = sym_eigenvalues(R_new)
    state.R = R_new
    state.lam_min_R = float(eigs[0])
    state.lam_max_R = float(eigs[-1])
    state.t += 1
    if eigs[0] <= SINGULAR_EIG:
        if not freeze_on_singular:
            raise SingularMatrixError(float(eigs[0]))
        state.windup = True
        return
    state.windup = False
    state.P = invert(R_new, eigs)


def _prepare(state: EstimatorState, phi, y: float) -> tuple[np.ndarray, float]:
    phi = as_vector(phi)
    if phi.shape[0] != state.n:
        raise LinalgError(f"regressor has {phi.shape[0]} entries, estimator expects {state.n}")
    y = float(y)
    if not math.isfinite(y):
        raise ValueError("measurement y is not finite")
    return phi, y - float(phi @ state.theta_hat)


def _output(state: EstimatorState, phi, innovation, gain_vec, **extra) -> StepOutput:
    return StepOutput(
        theta_hat=state.theta_hat.copy(),
        innovation=innovation,
        gain_vec=gain_vec,
        lam_min_R=state.lam_min_R,
        lam_max_R=state.lam_max_R,
        phi_P_phi=float(phi @ state.P @ phi),
        windup=state.windup,
        **extra,
    )


def step_ef(state: EstimatorState, phi, y: float) -> StepOutput:
    """Exponential forgetting. Gain uses P(t-1).

    When R(t) collapses below the singularity floor the last valid P is
    kept (frozen gain) and the windup flag is raised instead of failing.
    """
    phi, e = _prepare(state, phi, y)
    mu = state.params.mu
    P_phi = state.P @ phi
    gain_vec = P_phi / (mu + float(phi @ P_phi))
    state.theta_hat = state.theta_hat + gain_vec * e
    _commit(state, mu * state.R + np.outer(phi, phi), freeze_on_singular=True)
    return _output(state, phi, e, gain_vec)


def step_df1(state: EstimatorState, phi, y: float) -> StepOutput:
    phi, e = _prepare(state, phi, y)
    n = state.n
    if float(phi @ phi) < state.params.phi_norm_floor:
        _commit(state, state.R + np.outer(phi, phi))
        return _output(state, phi, e, np.zeros(n), degenerate=True, forgetting=np.eye(n))
    mu = state.params.mu
    P_phi = state.P @ phi
    s = float(phi @ P_phi)
    beta = mu - (1.0 - mu) / s
    forgetting = np.eye(n) - (1.0 - beta) * np.outer(phi, P_phi)
    gain_vec = P_phi / (1.0 + s)
    state.theta_hat = state.theta_hat + gain_vec * e
    # F R(t-1) + phi phi' == R(t-1) + beta phi phi'
    _commit(state, state.R + beta * np.outer(phi, phi))
    return _output(state, phi, e, gain_vec, beta=beta, forgetting=forgetting)


def step_df2(state: EstimatorState, phi, y: float) -> StepOutput:
    phi, e = _prepare(state, phi, y)
    n = state.n
    phi_sq = float(phi @ phi)
    R_phi = state.R @ phi
    q = float(phi @ R_phi)
    if phi_sq < state.params.phi_norm_floor or q < SINGULAR_EIG * phi_sq:
        _commit(state, state.R + np.outer(phi, phi))
        return _output(state, phi, e, np.zeros(n), degenerate=True, forgetting=np.eye(n))
    mu = state.params.mu
    forgetting = np.eye(n) - (1.0 - mu) * np.outer(R_phi, phi) / q
    # F R(t-1) written in its symmetric form
    _commit(state, state.R - (1.0 - mu) * np.outer(R_phi, R_phi) / q + np.outer(phi, phi))
    gain_vec = state.P @ phi
    state.theta_hat = state.theta_hat + gain_vec * e
    return _output(state, phi, e, gain_vec, forgetting=forgetting)


def step_proposed(state: EstimatorState, phi, y: float) -> StepOutput:
    phi, e = _prepare(state, phi, y)
    mu, delta = state.params.mu, state.params.delta
    R_new = mu * state.R + np.outer(phi, phi)
    R_new[np.diag_indices_from(R_new)] += delta
    _commit(state, R_new)
    gain_vec = state.P @ phi
    state.theta_hat = state.theta_hat + gain_vec * e
    return _output(state, phi, e, gain_vec)


_STEPPERS = {
    Algorithm.EF: step_ef,
    Algorithm.DF1: step_df1,
    Algorithm.DF2: step_df2,
    Algorithm.PROPOSED: step_proposed,
}


def step(state: EstimatorState, phi, y: float) -> StepOutput:
    return _STEPPERS[state.params.kind](state, phi, y)


def lyapunov(state: EstimatorState, theta) -> float:
    """V = 1/2 (theta_hat - theta)' R (theta_hat - theta)."""
    theta = as_vector(theta)
    if theta.shape != state.theta_hat.shape:
        raise LinalgError("theta dimension does not match the estimate")
    err = state.theta_hat - theta
    return 0.5 * float(err @ state.R @ err)
