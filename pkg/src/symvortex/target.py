"""Linear torus actions on C^N: weights, moment map, infinitesimal action.

The Lie algebra of the r-torus is identified with R^r (``xi = i * xi_hat``)
with the Euclidean inner product; every quantity here is the real ("hatted")
version.  Sign conventions:

* the generator ``xi`` acts by ``X_xi(z)_nu = i (W xi)_nu z_nu``;
* ``omega(v, w) = sum_nu Im(conj(v_nu) w_nu)`` and ``J = i``;
* ``mu(z)_j = 1/2 sum_nu W[nu, j] |z_nu|^2 - tau_j``, which satisfies
  ``d<mu, xi>(z) v = omega(v, X_xi(z))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linprog

from .errors import ShapeMismatch


@dataclass(frozen=True, eq=False)
class WeightModel:
    W: np.ndarray
    tau: np.ndarray

    @property
    def N(self) -> int:
        return self.W.shape[0]

    @property
    def r(self) -> int:
        return self.W.shape[1]

    @property
    def proper(self) -> bool:
        return properness_check(self)

    def with_tau(self, tau) -> "WeightModel":
        return make_model(self.W, tau)


def make_model(W, tau) -> WeightModel:
    W = np.atleast_2d(np.asarray(W))
    if W.ndim != 2:
        raise ShapeMismatch(f"weight matrix must be 2-d, got shape {W.shape}")
    if not np.all(np.equal(np.mod(W, 1), 0)):
        raise ValueError("weights must be integers")
    W = W.astype(np.int64)
    if np.any(np.all(W == 0, axis=0)):
        raise ValueError("every generator must act nontrivially (no all-zero column)")
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if tau.shape != (W.shape[1],):
        raise ShapeMismatch(f"tau has shape {tau.shape}, expected ({W.shape[1]},)")
    W.setflags(write=False)
    tau.setflags(write=False)
    return WeightModel(W, tau)


def _check_z(model: WeightModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    if z.shape[-1] != model.N:
        raise ShapeMismatch(f"point has {z.shape[-1]} coordinates, model acts on C^{model.N}")
    return z


def moment_map(model: WeightModel, z) -> np.ndarray:
    """Moment map; ``z`` may carry leading site axes."""
    z = _check_z(model, z)
    return 0.5 * (np.abs(z) ** 2) @ model.W - model.tau


def infinitesimal_action(model: WeightModel, xi, z) -> np.ndarray:
    z = _check_z(model, z)
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != model.r:
        raise ShapeMismatch(f"xi has {xi.shape[-1]} entries, model has rank {model.r}")
    return 1j * (xi @ model.W.T) * z


def omega(v, w) -> np.ndarray:
    """Standard symplectic form, summed over the last axis."""
    return np.sum(np.imag(np.conj(v) * w), axis=-1)


def sw_identity_check(model: WeightModel, z) -> tuple[float, float, float]:
    """Both sides of ``<z, rho(mu) J z> = 2 <mu, mu - tau>`` and their gap.

    Here ``mu`` is the complex-convention moment map, which is ``-moment_map``
    in the real conventions of this module, with the same shift ``tau``.  The
    left side is a Hermitian inner product in C^N, the right side a Lie-algebra
    inner product, so the two are computed independently.
    """
    z = _check_z(model, z)
    mu_c = -moment_map(model, z)
    rho_Jz = 1j * (model.W @ mu_c) * (1j * z)
    lhs = float(np.real(np.vdot(z, rho_Jz)))
    rhs = 2.0 * float(mu_c @ (mu_c - model.tau))
    return lhs, rhs, abs(lhs - rhs)


def _proper_rank1(W: np.ndarray) -> bool:
    col = W[:, 0]
    return bool(np.all(col > 0) or np.all(col < 0))


def _cross(a, b) -> int:
    return int(a[0]) * int(b[1]) - int(a[1]) * int(b[0])


def _proper_rank2(W: np.ndarray) -> bool:
    # Gordan: some xi has W xi > 0  iff  0 is not in the convex hull of the rows.
    rows = [tuple(int(v) for v in w) for w in W]
    if any(w == (0, 0) for w in rows):
        return False
    for a, b in combinations(rows, 2):
        if _cross(a, b) == 0 and a[0] * b[0] + a[1] * b[1] < 0:
            return False
    for a, b, c in combinations(rows, 3):
        s1, s2, s3 = _cross(a, b), _cross(b, c), _cross(c, a)
        if (s1 > 0 and s2 > 0 and s3 > 0) or (s1 < 0 and s2 < 0 and s3 < 0):
            return False
    return True


def half_space_certificate(model: WeightModel) -> tuple[np.ndarray, float]:
    """LP: maximise ``m`` subject to ``W xi >= m`` and ``|xi|_inf <= 1``.

    Returns ``(xi, m)``; the model is proper in the half-space sense iff ``m > 0``.
    """
    W = model.W.astype(float)
    N, r = W.shape
    # variables (xi_1..xi_r, m); minimise -m
    c = np.zeros(r + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-W, np.ones((N, 1))])
    b_ub = np.zeros(N)
    bounds = [(-1.0, 1.0)] * r + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:  # pragma: no cover - the LP is always feasible and bounded
        return np.zeros(r), 0.0
    xi = res.x[:r]
    return xi, float(np.min(W @ xi))


def properness_check(model: WeightModel) -> bool:
    """Whether some ``xi`` makes every weight pair positively with it.

    Exact integer tests for rank 1 and 2, the LP certificate otherwise.
    """
    W = np.asarray(model.W)
    if W.shape[1] == 1:
        return _proper_rank1(W)
    if W.shape[1] == 2:
        return _proper_rank2(W)
    _, m = half_space_certificate(model)
    return m > 1e-9


def norm_bound(model: WeightModel) -> float:
    """Bound on ``|z|^2`` on the set ``<mu(z), mu(z) + tau> <= 0``.

    That set is where a solution can attain its maximum modulus.  With a
    certificate ``xi`` (``min W xi = m > 0``) it gives
    ``|z|^2 <= (<tau, xi> + |tau| |xi|) / m``; for ``W = [1]`` this is ``2 tau``.
    """
    xi, m = half_space_certificate(model)
    if m <= 0:
        raise ValueError("model admits no half-space certificate")
    tau = np.asarray(model.tau, dtype=float)
    return float((tau @ xi + np.linalg.norm(tau) * np.linalg.norm(xi)) / m)
