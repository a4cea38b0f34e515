"""Relative-position estimators from delay differences or raw delays.

All solvers work in length units internally (clock unknowns scaled by c)
so the stacked systems stay well-conditioned, use orthogonal-factorization
least squares, and report the condition number of their normal matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AntiparallelDirections, InvalidParams, NotPositiveDefinite, RankDeficient
from .geom import SPEED_OF_LIGHT

_C = SPEED_OF_LIGHT
_ANTIPARALLEL_EPS = 1e-6
COND_LIMIT = 1e12


@dataclass(frozen=True)
class StackedDiffSystem:
    """Delay-difference system: columns [s_k; 1] against c*delta."""

    E: np.ndarray          # (4, K)
    delta: np.ndarray      # (K,) seconds
    s_vectors: np.ndarray  # (K, 3)


@dataclass(frozen=True)
class StackedTauSystem:
    """Raw-delay system with per-observer clock-offset columns."""

    G: np.ndarray  # (3K, 4 + M)
    t: np.ndarray  # (3K,) meters


@dataclass(frozen=True)
class PositionEstimate:
    d_vec: np.ndarray
    eps_hat: float
    eps_a_hats: tuple = ()
    method: str = ""
    condition_number: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "d_vec", np.asarray(self.d_vec, dtype=float))
        if not np.all(np.isfinite(self.d_vec)):
            raise RankDeficient("non-finite position estimate")


def _direction_arrays(observations):
    ma = np.array([ob.dir_a_meas for ob in observations], dtype=float)
    mb = np.array([ob.dir_b_meas for ob in observations], dtype=float)
    delta = np.array([ob.tau_b_meas - ob.tau_a_meas for ob in observations], dtype=float)
    return ma, mb, delta


def build_diff_system(observations, pwa: bool = False) -> StackedDiffSystem:
    """Stack the delay-difference system from observations.

    With ``pwa`` the combined direction is replaced by the A-side direction
    (plane-wave assumption); otherwise s_k = (a + b) / (1 + a.b), whose
    denominator is guarded against antiparallel direction pairs.
    """
    if not observations:
        raise InvalidParams("no observations")
    ma, mb, delta = _direction_arrays(observations)
    if pwa:
        s = ma
    else:
        denom = 1.0 + np.einsum("ij,ij->i", ma, mb)
        if np.any(denom <= _ANTIPARALLEL_EPS):
            raise AntiparallelDirections(
                "1 + dir_a.dir_b below threshold; MPC directions nearly antiparallel"
            )
        s = (ma + mb) / denom[:, None]
    E = np.vstack([s.T, np.ones(len(observations))])
    return StackedDiffSystem(E=E, delta=delta, s_vectors=s)


def _lstsq_checked(A: np.ndarray, b: np.ndarray, cond_limit: float):
    """Least squares via SVD with a conditioning gate on A^T A."""
    u, sv, vt = np.linalg.svd(A, full_matrices=False)
    if sv[-1] <= 0:
        raise RankDeficient("stacked system is singular")
    cond = float((sv[0] / sv[-1]) ** 2)  # condition of the normal matrix
    if cond > cond_limit:
        raise RankDeficient(f"condition number {cond:.3g} exceeds {cond_limit:.3g}")
    x = vt.T @ ((u.T @ b) / sv)
    return x, cond


def lse_by_delta(observations, cond_limit: float = COND_LIMIT) -> PositionEstimate:
    """Least-squares relative position from delay differences.

    Solves [d; c*eps] against c*delta over columns [s_k; 1].  Needs K >= 4;
    exact on noise-free consistent data.
    """
    if len(observations) < 4:
        raise RankDeficient("delay-difference LSE needs K >= 4")
    sys_ = build_diff_system(observations, pwa=False)
    x, cond = _lstsq_checked(sys_.E.T, _C * sys_.delta, cond_limit)
    return PositionEstimate(
        d_vec=x[:3], eps_hat=float(x[3]) / _C,
        method="lse_by_delta", condition_number=cond,
    )


def lse_by_delta_pwa(observations, cond_limit: float = COND_LIMIT) -> PositionEstimate:
    """Delay-difference LSE under the plane-wave assumption (s_k = dir_a)."""
    if len(observations) < 4:
        raise RankDeficient("delay-difference LSE needs K >= 4")
    sys_ = build_diff_system(observations, pwa=True)
    x, cond = _lstsq_checked(sys_.E.T, _C * sys_.delta, cond_limit)
    return PositionEstimate(
        d_vec=x[:3], eps_hat=float(x[3]) / _C,
        method="lse_by_delta_pwa", condition_number=cond,
    )


def gls_by_delta(observations, error_mean, error_cov,
                 cond_limit: float = COND_LIMIT) -> PositionEstimate:
    """Generalized (whitened) least squares for correlated delay errors.

    ``error_mean`` (seconds, length K) is subtracted from the diffs and
    ``error_cov`` (seconds^2, K x K, positive definite) whitens them; with
    isotropic covariance and zero mean this reduces exactly to lse_by_delta.
    """
    if len(observations) < 4:
        raise RankDeficient("delay-difference GLS needs K >= 4")
    sys_ = build_diff_system(observations, pwa=False)
    k = sys_.delta.size
    mu = np.broadcast_to(np.asarray(error_mean, dtype=float), (k,))
    cov = np.asarray(error_cov, dtype=float)
    if cov.shape != (k, k):
        raise InvalidParams("error_cov must be K x K")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("error covariance is not positive definite") from exc
    # whiten: solve L^-1 applied to both sides
    A = np.linalg.solve(chol, sys_.E.T)
    b = np.linalg.solve(chol, _C * (sys_.delta - mu))
    x, cond = _lstsq_checked(A, b, cond_limit)
    return PositionEstimate(
        d_vec=x[:3], eps_hat=float(x[3]) / _C,
        method="gls_by_delta", condition_number=cond,
    )


def build_tau_system(observations) -> StackedTauSystem:
    """Stack the raw-delay system with shared and per-observer offset columns."""
    if not observations:
        raise InvalidParams("no observations")
    observers = []
    for ob in observations:
        if ob.observer_id not in observers:
            observers.append(ob.observer_id)
    m = len(observers)
    col_of = {o: i for i, o in enumerate(observers)}
    k = len(observations)
    G = np.zeros((3 * k, 4 + m))
    t = np.zeros(3 * k)
    for i, ob in enumerate(observations):
        rows = slice(3 * i, 3 * i + 3)
        G[rows, 0:3] = np.eye(3)
        G[rows, 3] = ob.dir_b_meas
        G[rows, 4 + col_of[ob.observer_id]] = ob.dir_b_meas - ob.dir_a_meas
        t[rows] = _C * ob.tau_b_meas * ob.dir_b_meas - _C * ob.tau_a_meas * ob.dir_a_meas
    return StackedTauSystem(G=G, t=t)


def lse_by_tau(observations, cond_limit: float = COND_LIMIT) -> PositionEstimate:
    """Joint LSE of position, A-B clock offset, and per-observer offsets
    directly from raw delays and both-side directions.

    Exact (all unknowns) on noise-free consistent data; fragile under
    direction errors through the (dir_b - dir_a) columns.
    """
    sys_ = build_tau_system(observations)
    m = sys_.G.shape[1] - 4
    if sys_.G.shape[0] < sys_.G.shape[1]:
        raise RankDeficient("raw-delay LSE needs 3K >= 4 + M")
    x, cond = _lstsq_checked(sys_.G, sys_.t, cond_limit)
    return PositionEstimate(
        d_vec=x[:3], eps_hat=float(x[3]) / _C,
        eps_a_hats=tuple(float(v) / _C for v in x[4:4 + m]),
        method="lse_by_tau", condition_number=cond,
    )


def lse_by_tau_sync(observations) -> PositionEstimate:
    """Componentwise mean of the per-MPC vector identity; caller asserts
    that every clock offset is zero."""
    if not observations:
        raise InvalidParams("no observations")
    ma, mb, _ = _direction_arrays(observations)
    tau_a = np.array([ob.tau_a_meas for ob in observations])
    tau_b = np.array([ob.tau_b_meas for ob in observations])
    terms = _C * tau_b[:, None] * mb - _C * tau_a[:, None] * ma
    return PositionEstimate(
        d_vec=terms.mean(axis=0), eps_hat=0.0,
        method="lse_by_tau_sync", condition_number=1.0,
    )
