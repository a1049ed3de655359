"""Excitation detection, information-matrix bound checks, error metrics and
brute-force reference implementations used to cross-check the estimators.

The reference implementations deliberately avoid the estimator code path:
they use numpy's LAPACK-backed solve/inverse rather than the in-house
Gauss-Jordan and never call the estimator step functions.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .estimators import AlgoParams, Algorithm, check_delta_admissible
from .linalg import LinalgError, SINGULAR_EIG, as_vector, sym_eigenvalues

BOUND_TOL = 1e-9


@dataclass(frozen=True)
class PeConfig:
    s: int = 600
    gamma: float = 1e-3

    def __post_init__(self):
        if self.s < 1:
            raise ValueError(f"PE window length must be >= 1, got {self.s}")
        if not self.gamma > 0.0:
            raise ValueError(f"PE level gamma must be positive, got {self.gamma}")


def pe_check(window, cfg: PeConfig) -> bool:
    """True iff lambda_min(sum_i phi_i phi_i') >= gamma over exactly ``cfg.s`` regressors."""
    w = np.asarray(window, dtype=float)
    if w.ndim != 2 or w.shape[0] != cfg.s:
        raise ValueError(f"PE window must hold exactly {cfg.s} regressors, got shape {w.shape}")
    return bool(sym_eigenvalues(w.T @ w)[0] >= cfg.gamma)


class PeMonitor:
    """Sliding-window PE flag. Reports False until the window has filled."""

    def __init__(self, cfg: PeConfig, n: int):
        self.cfg = cfg
        self._buf = np.zeros((cfg.s, n))
        self._count = 0

    def push(self, phi) -> bool:
        self._buf[self._count % self.cfg.s] = phi
        self._count += 1
        if self._count < self.cfg.s:
            return False
        return pe_check(self._buf, self.cfg)


def rmse(theta_hat, theta) -> float:
    theta_hat = as_vector(theta_hat)
    theta = as_vector(theta)
    if theta_hat.shape != theta.shape:
        raise LinalgError("dimension mismatch in rmse")
    err = theta_hat - theta
    return math.sqrt(float(err @ err) / err.shape[0])


@dataclass
class BoundReport:
    kind: Algorithm
    lam_min: list[float] = field(default_factory=list)
    lam_max: list[float] = field(default_factory=list)
    upper_curve: list[float] = field(default_factory=list)
    lower_bound: float | None = None
    a: float = math.inf
    b: float = -math.inf
    c: float = 0.0
    lower_violations: int = 0
    upper_violations: int = 0
    finiteness_violations: int = 0

    @property
    def violations(self) -> int:
        return self.lower_violations + self.upper_violations + self.finiteness_violations

    def digest(self) -> dict[str, float | int | None]:
        return {
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "lower_bound": self.lower_bound,
            "lower_violations": self.lower_violations,
            "upper_violations": self.upper_violations,
            "finiteness_violations": self.finiteness_violations,
            "violations": self.violations,
        }


class BoundMonitor:
    """Online tally of lambda_min / lambda_max of R(t) against proven bounds.

    Which bounds are checked depends on the algorithm:

    * pef: lower floor delta/(1-mu) (only when delta is admissible) and the
      geometric upper curve mu^t lam_max(R0) + (1-mu^t)(c+delta)/(1-mu);
    * ef: the same upper curve with delta = 0, no lower bound;
    * df2: only that the measured extremes stay positive and finite;
    * df1: nothing beyond recording.

    ``c`` is the running maximum of ||phi||^2.
    """

    def __init__(self, params: AlgoParams, lam_max_R0: float, delta_admissible: bool | None = None):
        self.params = params
        self.lam_max_R0 = lam_max_R0
        self._mu_t = 1.0
        kind = params.kind
        self.report = BoundReport(kind=kind)
        if kind is Algorithm.PROPOSED and delta_admissible is not False:
            self.report.lower_bound = params.lower_bound

    def push(self, lam_min: float, lam_max: float, phi) -> None:
        rep = self.report
        p = self.params
        phi = np.asarray(phi, dtype=float)
        rep.c = max(rep.c, float(phi @ phi))
        self._mu_t *= p.mu
        rep.lam_min.append(lam_min)
        rep.lam_max.append(lam_max)
        rep.a = min(rep.a, lam_min)
        rep.b = max(rep.b, lam_max)
        if p.kind in (Algorithm.PROPOSED, Algorithm.EF):
            delta = p.delta if p.kind is Algorithm.PROPOSED else 0.0
            curve = self._mu_t * self.lam_max_R0 + (1.0 - self._mu_t) * (rep.c + delta) / (1.0 - p.mu)
            rep.upper_curve.append(curve)
            if lam_max > curve + BOUND_TOL:
                rep.upper_violations += 1
        if rep.lower_bound is not None and lam_min < rep.lower_bound - BOUND_TOL:
            rep.lower_violations += 1
        if p.kind is Algorithm.DF2 and not (0.0 < lam_min and math.isfinite(lam_max)):
            rep.finiteness_violations += 1


def verify_bounds(R0, R_trace: Iterable, phi_trace: Iterable, params: AlgoParams) -> BoundReport:
    """Check a stored trajectory R(1..T), phi(1..T) against the bounds for ``params.kind``."""
    R_list = [np.asarray(R, dtype=float) for R in R_trace]
    phi_list = [np.asarray(p, dtype=float) for p in phi_trace]
    if not R_list:
        raise ValueError("verify_bounds needs a non-empty trace")
    if len(R_list) != len(phi_list):
        raise ValueError("R and phi traces differ in length")
    admissible = None
    if params.kind is Algorithm.PROPOSED:
        admissible = check_delta_admissible(params.mu, params.delta, R0)
    mon = BoundMonitor(params, float(sym_eigenvalues(R0)[-1]), admissible)
    for R, phi in zip(R_list, phi_list):
        eigs = sym_eigenvalues(R)
        mon.push(float(eigs[0]), float(eigs[-1]), phi)
    return mon.report


def _history(history: Sequence) -> tuple[np.ndarray, np.ndarray]:
    phis = np.array([np.asarray(h[0], dtype=float) for h in history])
    ys = np.array([float(h[1]) for h in history])
    return phis, ys


def ef_batch_oracle(history: Sequence, mu: float, theta0, R0, trajectory: bool = False):
    """Exponentially weighted batch least squares, solved from scratch.

    theta(t) = R(t)^-1 (mu^t R0 theta0 + sum_i mu^(t-i) phi_i y_i) with the
    information matrix R(t) = mu^t R0 + sum_i mu^(t-i) phi_i phi_i'. With
    ``trajectory=True`` every prefix is solved independently and the full
    (T+1, n) array of estimates is returned.
    """
    theta0 = np.asarray(theta0, dtype=float)
    R0 = np.asarray(R0, dtype=float)
    if not history:
        return theta0[None, :].copy() if trajectory else theta0.copy()
    phis, ys = _history(history)
    T = len(ys)

    def solve(t: int) -> np.ndarray:
        if t == 0:
            return theta0.copy()
        w = mu ** np.arange(t - 1, -1, -1, dtype=float)
        R = mu**t * R0 + (phis[:t].T * w) @ phis[:t]
        rhs = mu**t * (R0 @ theta0) + phis[:t].T @ (w * ys[:t])
        if np.linalg.eigvalsh(R)[0] <= SINGULAR_EIG:
            raise LinalgError(f"accumulated information matrix is singular at t={t}")
        return np.linalg.solve(R, rhs)

    if trajectory:
        return np.array([solve(t) for t in range(T + 1)])
    return solve(T)


def proposed_direct_oracle(history: Sequence, mu: float, delta: float, theta0, R0, trajectory: bool = False):
    """Direct recursion R(t) = mu R(t-1) + phi phi' + delta I with a fresh
    ``numpy.linalg.inv`` each step. Returns the final estimate, or
    ``(thetas, Rs)`` of shapes (T+1, n) and (T+1, n, n) with ``trajectory=True``.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    R = np.asarray(R0, dtype=float).copy()
    n = theta.shape[0]
    thetas, Rs = [theta.copy()], [R.copy()]
    for phi, y in history:
        phi = np.asarray(phi, dtype=float)
        e = float(y) - phi @ theta
        R = mu * R + np.outer(phi, phi) + delta * np.eye(n)
        theta = theta + np.linalg.inv(R) @ phi * e
        thetas.append(theta.copy())
        Rs.append(R.copy())
    if trajectory:
        return np.array(thetas), np.array(Rs)
    return theta


def settling_time(t, signal, start: float, stop: float, band: float = 0.05) -> float:
    """Time from the peak of ``signal`` on [start, stop) until it enters, and
    stays inside, a +/-band fraction of its value at the end of the window.

    Returns ``inf`` if the window is empty or the signal never settles.
    """
    t = np.asarray(t, dtype=float)
    sig = np.asarray(signal, dtype=float)
    mask = (t >= start - 1e-9) & (t < stop - 1e-9)
    if not mask.any():
        return math.inf
    tw, sw = t[mask], sig[mask]
    ipk = int(np.argmax(sw))
    final = sw[-1]
    outside = np.nonzero(np.abs(sw[ipk:] - final) > band * abs(final))[0]
    if outside.size == 0:
        return 0.0
    j = ipk + int(outside[-1]) + 1
    if j >= tw.size:
        return math.inf
    return float(tw[j] - tw[ipk])


def noise_growth(t, signal, onset: float) -> float:
    """max(signal[t >= onset]) - signal(onset): how far a metric climbs once noise starts."""
    t = np.asarray(t, dtype=float)
    sig = np.asarray(signal, dtype=float)
    after = t >= onset - 1e-9
    if not after.any():
        return 0.0
    return float(sig[after].max() - sig[after][0])
