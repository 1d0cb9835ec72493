"""Balancing a positive atomic measure on the unit sphere by a Moebius map.

The maps are parametrised by the open unit ball.  With ``r = |eta|``,
``s = sqrt(1 - r^2)`` and ``k = 1 / (1 + s)``::

    phi_eta(x) = (s x + k <x, eta> eta - eta) / (1 - <x, eta>)

which is the usual two-term formula with the removable singularity at
``eta = 0`` cleared (``(1 - s) / r^2 = k``).  The inverse is ``phi_{-eta}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DenominatorBlowup, EtaOutOfBall, NoConvergence, ShapeMismatch

BALL_MARGIN = 1e-6
DENOM_FLOOR = 1e-14


@dataclass(frozen=True, eq=False)
class WeightedSphereMeasure:
    points: np.ndarray
    weights: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))


def make_measure(points, weights=None, *, normalize: bool = False) -> WeightedSphereMeasure:
    """Validate (or with ``normalize=True`` project) points onto the sphere."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeMismatch(f"points must have shape (n, 3), got {pts.shape}")
    norms = np.linalg.norm(pts, axis=1)
    if normalize:
        if np.any(norms == 0):
            raise ValueError("cannot normalise the zero vector")
        pts = pts / norms[:, None]
    elif np.any(np.abs(norms - 1.0) > 1e-12):
        raise ValueError("every point must lie on the unit sphere (|x| = 1 within 1e-12)")
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != (len(pts),):
        raise ShapeMismatch(f"{len(w)} weights for {len(pts)} points")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    pts.setflags(write=False)
    w.setflags(write=False)
    return WeightedSphereMeasure(pts, w)


def octahedron_measure() -> WeightedSphereMeasure:
    return make_measure(np.vstack([np.eye(3), -np.eye(3)]))


def _check_eta(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (3,):
        raise ShapeMismatch(f"eta must be a 3-vector, got shape {eta.shape}")
    if not np.linalg.norm(eta) < 1.0:
        raise EtaOutOfBall(f"|eta| = {np.linalg.norm(eta)!r} is not < 1")
    return eta


def _phi(eta: np.ndarray, x: np.ndarray) -> np.ndarray:
    r2 = float(eta @ eta)
    s = np.sqrt(1.0 - r2)
    k = 1.0 / (1.0 + s)
    p = x @ eta
    den = 1.0 - p
    if np.any(den < DENOM_FLOOR):
        raise DenominatorBlowup(f"1 - <x, eta> = {float(np.min(den)):.3e} below {DENOM_FLOOR}")
    num = s * x + (k * p)[..., None] * eta - eta
    return num / den[..., None]


def mobius_map(eta, x) -> np.ndarray:
    """``phi_eta(x)``; ``x`` may be a single unit vector or an ``(n, 3)`` array."""
    eta = _check_eta(eta)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ShapeMismatch(f"points must be 3-vectors, got shape {x.shape}")
    return _phi(eta, x)


def mobius_inverse(eta, x) -> np.ndarray:
    return mobius_map(-np.asarray(eta, dtype=float), x)


def inverse_defect(eta, x) -> float:
    """``max |phi_{-eta}(phi_eta(x)) - x|`` over the given points."""
    y = mobius_map(eta, x)
    return float(np.max(np.abs(mobius_inverse(eta, y) - np.asarray(x, dtype=float))))


def stereographic(x) -> complex:
    """Projection from the north pole; the north pole itself maps to ``inf``."""
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-12:
        raise ValueError("point is not on the unit sphere")
    if x[2] == 1.0:
        return complex(np.inf, 0.0)
    return complex(x[0], x[1]) / (1.0 - x[2])


def center_of_mass(eta, measure: WeightedSphereMeasure) -> np.ndarray:
    """Normalised mean of ``phi_eta^{-1}`` over the atoms."""
    eta = _check_eta(eta)
    y = _phi(-eta, measure.points)
    return measure.weights @ y / measure.total


def _inverse_jacobian(eta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Derivative of ``phi_{-eta}(x)`` in ``eta``, one 3x3 block per point."""
    r2 = float(eta @ eta)
    s = np.sqrt(1.0 - r2)
    k = 1.0 / (1.0 + s)
    p = x @ eta
    den = 1.0 + p
    num = s * x + (k * p)[:, None] * eta + eta
    eye = np.eye(3)
    dnum = (
        -np.einsum("ni,j->nij", x, eta) / s
        + (k * k * p / s)[:, None, None] * np.outer(eta, eta)
        + k * np.einsum("i,nj->nij", eta, x)
        + (k * p + 1.0)[:, None, None] * eye
    )
    return dnum / den[:, None, None] - np.einsum("ni,nj->nij", num, x) / (den**2)[:, None, None]


def center_of_mass_jacobian(eta, measure: WeightedSphereMeasure) -> np.ndarray:
    eta = _check_eta(eta)
    jac = _inverse_jacobian(eta, measure.points)
    return np.einsum("n,nij->ij", measure.weights, jac) / measure.total


@dataclass(frozen=True)
class BalanceOptions:
    max_iters: int = 200
    homotopy_steps: int = 20
    ball_margin: float = BALL_MARGIN

    def __post_init__(self):
        if self.max_iters < 1 or self.homotopy_steps < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0 < self.ball_margin < 1:
            raise ValueError("ball_margin must lie in (0, 1)")


@dataclass(frozen=True)
class BalancePoint:
    eta: np.ndarray
    residual: float
    iterations: int = 0
    homotopy: bool = False
    history: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "eta": [float(v) for v in self.eta],
            "eta_norm": float(np.linalg.norm(self.eta)),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "homotopy": bool(self.homotopy),
        }


def _clip_to_ball(eta: np.ndarray, margin: float) -> np.ndarray:
    n = np.linalg.norm(eta)
    rmax = 1.0 - margin
    return eta if n <= rmax else eta * (rmax / n)


def _newton(eta, com, jac, tol, max_iters, margin):
    """Damped Newton on ``com(eta) = 0`` with residual-norm backtracking."""
    m = com(eta)
    res = float(np.linalg.norm(m))
    it = 0
    while res > tol and it < max_iters:
        it += 1
        try:
            step = -np.linalg.solve(jac(eta), m)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        improved = False
        while t > 1e-12:
            trial = _clip_to_ball(eta + t * step, margin)
            m_trial = com(trial)
            r_trial = float(np.linalg.norm(m_trial))
            if r_trial < (1.0 - 1e-4 * t) * res:
                eta, m, res, improved = trial, m_trial, r_trial, True
                break
            t *= 0.5
        if not improved:
            break
    return eta, res, it


def balance(measure: WeightedSphereMeasure, tol: float = 1e-10,
            opts: BalanceOptions | None = None, eta0=None) -> BalancePoint:
    """Find ``eta`` with ``|center_of_mass(eta)| <= tol``.

    Damped Newton from ``eta0`` first.  If that stalls, a homotopy from a
    balanced octahedral measure (solved by ``eta = 0``) to the target is
    followed, correcting with Newton at every stage.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    opts = opts or BalanceOptions()
    margin = opts.ball_margin
    eta = np.zeros(3) if eta0 is None else _clip_to_ball(_check_eta(eta0).copy(), margin)

    com = lambda e: center_of_mass(e, measure)  # noqa: E731
    jac = lambda e: center_of_mass_jacobian(e, measure)  # noqa: E731
    eta, res, its = _newton(eta, com, jac, tol, opts.max_iters, margin)
    if res <= tol:
        return BalancePoint(eta, res, its)

    best_eta, best_res = eta, res
    oct_ = octahedron_measure()
    pts = np.vstack([measure.points, oct_.points])
    W = measure.total
    eta_h = np.zeros(3)
    total_its = its
    for k in range(1, opts.homotopy_steps + 1):
        s = k / opts.homotopy_steps
        w = np.concatenate([s * measure.weights, (1.0 - s) * W / 6.0 * oct_.weights])
        keep = w > 0
        stage = WeightedSphereMeasure(pts[keep], w[keep])
        eta_h, res_h, its = _newton(
            eta_h,
            lambda e: center_of_mass(e, stage),
            lambda e: center_of_mass_jacobian(e, stage),
            tol if k == opts.homotopy_steps else max(tol, 1e-8),
            opts.max_iters,
            margin,
        )
        total_its += its
    res_h = float(np.linalg.norm(com(eta_h)))
    if res_h < best_res:
        best_eta, best_res = eta_h, res_h
    if best_res <= tol:
        return BalancePoint(best_eta, best_res, total_its, homotopy=True)
    raise NoConvergence(
        f"no balancing eta found: best residual {best_res:.3e} > tol {tol:.1e}",
        best=best_eta,
        residual=best_res,
    )


def flow_parameter(eta, t) -> float:
    """``lambda(t) = tanh(|eta| t) / |eta|`` (and ``t`` itself at ``eta = 0``)."""
    n = float(np.linalg.norm(eta))
    return float(t) if n == 0 else float(np.tanh(n * t) / n)


def flow_monotonicity_check(measure: WeightedSphereMeasure, eta, steps: int = 100) -> dict:
    """Sample ``t -> <eta, sum w phi_t^{-1}(x)>`` along ``phi_t = phi_{lambda(t) eta}``.

    The time horizon ``T = artanh(|eta|) / |eta|`` makes ``phi_T = phi_eta``.
    """
    eta = _check_eta(eta)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = float(np.linalg.norm(eta))
    T = 1.0 if n == 0 else float(np.arctanh(n) / n)
    ts = np.linspace(0.0, T, steps + 1)
    values = np.array([
        float(eta @ (measure.weights @ _phi(-flow_parameter(eta, t) * eta, measure.points)))
        for t in ts
    ])
    inc = np.diff(values)
    return {
        "T": T,
        "times": ts,
        "values": values,
        "increments": inc,
        "min_increment": float(inc.min()),
        "monotone": bool(inc.min() >= -1e-10),
        "strict": bool(inc.min() > 0),
    }


def flow_rate(measure: WeightedSphereMeasure, eta, t: float) -> float:
    """Closed-form derivative ``sum w (|eta|^2 - <eta, phi_t^{-1}(x)>^2)``."""
    eta = _check_eta(eta)
    y = _phi(-flow_parameter(eta, t) * eta, measure.points)
    return float(measure.weights @ (eta @ eta - (y @ eta) ** 2))


def bisection_root(f, a: float, b: float, tol: float = 1e-13, max_iters: int = 200):
    """Plain bisection; returns ``None`` if ``f`` has no sign change on ``[a, b]``."""
    fa, fb = f(a), f(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    if np.sign(fa) == np.sign(fb):
        return None
    for _ in range(max_iters):
        c = 0.5 * (a + b)
        fc = f(c)
        if fc == 0 or (b - a) < tol:
            return c
        if np.sign(fc) == np.sign(fa):
            a, fa = c, fc
        else:
            b = c
    return 0.5 * (a + b)


def rotation_alignment(P: np.ndarray, Q: np.ndarray) -> tuple[np.ndarray, float]:
    """Best rotation ``R`` (Kabsch) with ``R p_i ~ q_i``; returns ``(R, max discrepancy)``."""
    H = P.T @ Q
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, float(np.max(np.linalg.norm(P @ R.T - Q, axis=1)))
