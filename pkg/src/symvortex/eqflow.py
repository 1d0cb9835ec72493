"""Finite-dimensional equivariant gradient flow on C^n x R^r.

The flow is the negative gradient flow of ``L(x, eta) = <mu(x), eta> - H(x)``
for the product of the flat metrics, with ``mu`` the real moment map of
:mod:`symvortex.target`.  Because ``grad <mu, eta>(x) = (W eta) x = -J X_eta(x)``
this reads::

    dx/dt   = grad H(x) + J X_eta(x)
    deta/dt = -mu(x)

and its stationary points satisfy ``grad H(x) = -J X_eta(x)``, ``mu(x) = 0``.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeMismatch, StepBlowup
from .target import WeightModel, moment_map

BLOWUP_NORM = 1e8


@dataclass(frozen=True)
class FlowState:
    x: np.ndarray
    eta: np.ndarray
    t: float = 0.0


def flow_state(x, eta, t: float = 0.0) -> FlowState:
    x = np.atleast_1d(np.asarray(x, dtype=complex))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(eta))):
        raise ValueError("flow state must be finite")
    return FlowState(x, eta, float(t))


@dataclass(frozen=True)
class InvariantHamiltonian:
    """``H`` together with its real gradient, written as a complex vector."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    expression: str = ""

    def __call__(self, x) -> float:
        return float(self.value(np.asarray(x, dtype=complex)))

    def grad(self, x) -> np.ndarray:
        return self.gradient(np.asarray(x, dtype=complex))


class _Poly:
    """Polynomial in the moduli ``r_nu = |z_nu|^2`` as ``{exponents: coefficient}``."""

    def __init__(self, n: int, terms=None):
        self.n = n
        self.terms = dict(terms or {})

    @classmethod
    def const(cls, n, c):
        return cls(n, {(0,) * n: float(c)})

    @classmethod
    def var(cls, n, k):
        e = [0] * n
        e[k] = 1
        return cls(n, {tuple(e): 1.0})

    def __add__(self, other):
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return _Poly(self.n, out)

    def __neg__(self):
        return _Poly(self.n, {e: -c for e, c in self.terms.items()})

    def __mul__(self, other):
        out: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return _Poly(self.n, out)

    def power(self, k: int):
        out = _Poly.const(self.n, 1.0)
        for _ in range(k):
            out = out * self
        return out


def _to_poly(node, n: int, params: dict) -> _Poly:
    if isinstance(node, ast.Expression):
        return _to_poly(node.body, n, params)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return _Poly.const(n, node.value)
    if isinstance(node, ast.Name):
        name = node.id
        if name in params:
            return _Poly.const(n, params[name])
        if name.startswith("r") and name[1:].isdigit() and int(name[1:]) < n:
            return _Poly.var(n, int(name[1:]))
        raise ValueError(f"unknown symbol {name!r} (use r0..r{n - 1} or a parameter)")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        p = _to_poly(node.operand, n, params)
        return -p if isinstance(node.op, ast.USub) else p
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            k = node.right
            if not (isinstance(k, ast.Constant) and isinstance(k.value, int) and k.value >= 0):
                raise ValueError("exponents must be non-negative integer literals")
            return _to_poly(node.left, n, params).power(k.value)
        left, right = _to_poly(node.left, n, params), _to_poly(node.right, n, params)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left + (-right)
        if isinstance(node.op, ast.Mult):
            return left * right
    raise ValueError(f"unsupported expression element: {ast.dump(node)}")


def parse_hamiltonian(expression: str, n: int, params: dict | None = None) -> InvariantHamiltonian:
    """Build ``H`` from a polynomial in ``r0, r1, ...`` where ``r_k = |z_k|^2``.

    Only numbers, named parameters, ``+ - *`` and integer powers are accepted, so
    the result depends on the moduli alone and is invariant under any diagonal
    torus action.  Example: ``"0.5 * a * r0"`` with ``params={"a": 2.0}``.
    """
    try:
        tree = ast.parse(expression, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse Hamiltonian {expression!r}: {exc}") from None
    poly = _to_poly(tree, n, dict(params or {}))
    exps = np.array(list(poly.terms.keys()), dtype=int).reshape(-1, n)
    coefs = np.array(list(poly.terms.values()), dtype=float)

    def value(x):
        rho = np.abs(x) ** 2
        return float(coefs @ np.prod(rho[None, :] ** exps, axis=1))

    def gradient(x):
        rho = np.abs(x) ** 2
        dH = np.zeros(n)
        for k in range(n):
            ek = exps[:, k]
            mask = ek > 0
            if not np.any(mask):
                continue
            e = exps[mask].copy()
            e[:, k] -= 1
            dH[k] = coefs[mask] * ek[mask] @ np.prod(rho[None, :] ** e, axis=1)
        return 2.0 * dH * x

    return InvariantHamiltonian(value, gradient, expression)


def quadratic_hamiltonian(a: float, n: int = 1) -> InvariantHamiltonian:
    """``H(x) = a |x|^2 / 2``."""
    return parse_hamiltonian(" + ".join(f"0.5 * a * r{k}" for k in range(n)), n, {"a": a})


def check_invariance(H: InvariantHamiltonian, model: WeightModel, trials: int = 20,
                     seed: int = 0, tol: float = 1e-10) -> float:
    """Largest ``|H(exp(i W theta) x) - H(x)|`` over random draws; raises if above ``tol``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.normal(size=model.N) + 1j * rng.normal(size=model.N)
        theta = rng.uniform(-np.pi, np.pi, size=model.r)
        worst = max(worst, abs(H(np.exp(1j * (model.W @ theta)) * x) - H(x)))
    if worst > tol:
        raise ValueError(f"Hamiltonian is not invariant: defect {worst:.3e}")
    return worst


def lagrangian(x, eta, model: WeightModel, H: InvariantHamiltonian) -> float:
    return float(moment_map(model, x) @ eta) - H(x)


def vector_field(x, eta, model: WeightModel, H: InvariantHamiltonian):
    JX = -(model.W @ eta) * x  # J X_eta(x) = i * (i (W eta) x)
    return H.grad(x) + JX, -moment_map(model, x)


def _rk4(x, eta, dt, model, H):
    k1x, k1e = vector_field(x, eta, model, H)
    k2x, k2e = vector_field(x + 0.5 * dt * k1x, eta + 0.5 * dt * k1e, model, H)
    k3x, k3e = vector_field(x + 0.5 * dt * k2x, eta + 0.5 * dt * k2e, model, H)
    k4x, k4e = vector_field(x + dt * k3x, eta + dt * k3e, model, H)
    return (x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            eta + dt / 6.0 * (k1e + 2 * k2e + 2 * k3e + k4e))


def _blown_up(x, eta) -> bool:
    return not (np.all(np.isfinite(x)) and np.all(np.isfinite(eta))) or max(
        np.linalg.norm(x), np.linalg.norm(eta)) > BLOWUP_NORM


def flow_integrate(state: FlowState, model: WeightModel, H: InvariantHamiltonian,
                   dt: float, steps: int, *, stop_tol: float | None = None,
                   max_halvings: int = 8) -> list[FlowState]:
    """Fixed-step RK4 trajectory (including the initial state).

    A step that leaves the ball of radius 1e8 is retried as two half steps,
    recursively up to ``max_halvings`` times, then :class:`StepBlowup` is
    raised.  With ``stop_tol`` the integration ends early once both components
    of the vector field are below it.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.x.shape != (model.N,) or state.eta.shape != (model.r,):
        raise ShapeMismatch("flow state does not match the model")

    def advance(x, eta, h, depth):
        with np.errstate(over="ignore", invalid="ignore"):  # blowup is detected below
            xn, en = _rk4(x, eta, h, model, H)
        if not _blown_up(xn, en):
            return xn, en
        if depth >= max_halvings:
            raise StepBlowup(f"state norm exceeded {BLOWUP_NORM:g} (dt={h:g})")
        xm, em = advance(x, eta, h / 2, depth + 1)
        return advance(xm, em, h / 2, depth + 1)

    traj = [state]
    x, eta, t = state.x, state.eta, state.t
    for k in range(1, steps + 1):
        x, eta = advance(x, eta, dt, 0)
        t = state.t + k * dt
        traj.append(FlowState(x, eta, t))
        if stop_tol is not None:
            vx, ve = vector_field(x, eta, model, H)
            if max(np.linalg.norm(vx), np.linalg.norm(ve)) <= stop_tol:
                break
    return traj


def critical_check(x, eta, model: WeightModel, H: InvariantHamiltonian, tol: float) -> bool:
    """Whether ``grad H(x) = -J X_eta(x)`` and ``mu(x) = 0`` within ``tol``."""
    vx, ve = vector_field(np.asarray(x, dtype=complex), np.asarray(eta, dtype=float), model, H)
    return bool(np.linalg.norm(vx) <= tol and np.linalg.norm(ve) <= tol)


def quadratic_stable_start(tau: float, a: float, rho0: float, dt: float,
                           horizon: float = 30.0) -> tuple[complex, float]:
    """Initial condition on the stable manifold for ``W = [1]``, ``H = a|x|^2/2``.

    With ``rho = |x|`` and ``u = eta - a`` the flow reduces to
    ``rho' = -u rho``, ``u' = tau - rho^2/2``, which conserves
    ``Q = tau log rho - rho^2/4 + u^2/2``.  The critical point
    ``(sqrt(2 tau), 0)`` is a saddle; its stable branch with ``rho < sqrt(2 tau)``
    has ``u = -sqrt(2 (Q* - tau log rho + rho^2/4))``.  That closed form is
    then polished by bisection against the discrete RK4 map so the integrator
    itself stays on its own stable branch.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rstar = np.sqrt(2 * tau)
    if not 0 < rho0 < rstar:
        raise ValueError("rho0 must lie in (0, sqrt(2 tau))")
    Qstar = tau * np.log(rstar) - tau / 2
    u0 = -np.sqrt(max(2 * (Qstar - tau * np.log(rho0) + rho0**2 / 4), 0.0))

    def field(x, e):
        return (a - e) * x, tau - 0.5 * x * x

    def overshoot(u):
        # real initial data stay real, so the RK4 map reduces to these scalars
        x, e = rho0, a + u
        for _ in range(int(horizon / dt)):
            k1 = field(x, e)
            k2 = field(x + 0.5 * dt * k1[0], e + 0.5 * dt * k1[1])
            k3 = field(x + 0.5 * dt * k2[0], e + 0.5 * dt * k2[1])
            k4 = field(x + dt * k3[0], e + dt * k3[1])
            x += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            e += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            if x > 1.1 * rstar:
                return 1.0
            if x < 0.5 * rho0 or e - a > rstar:
                return -1.0
        return float(np.sign(x - rstar))

    lo, hi = u0 - 1e-3 * (1 + abs(u0)), u0 + 1e-3 * (1 + abs(u0))
    s_lo = overshoot(lo)
    if s_lo == overshoot(hi):
        return complex(rho0), a + u0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if overshoot(mid) == s_lo:
            lo = mid
        else:
            hi = mid
    return complex(rho0), a + 0.5 * (lo + hi)


def _realify(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag])


def moment_differential(model: WeightModel, x) -> np.ndarray:
    """``d mu(x)`` as an ``r x 2n`` real matrix."""
    x = np.asarray(x, dtype=complex)
    W = model.W.astype(float)
    return np.hstack([W.T * x.real, W.T * x.imag])


def action_differential(model: WeightModel, x) -> np.ndarray:
    """``L_x: xi -> X_xi(x)`` as a ``2n x r`` real matrix."""
    x = np.asarray(x, dtype=complex)
    W = model.W.astype(float)
    return np.vstack([-(W * x.imag[:, None]), W * x.real[:, None]])


def group_action_matrix(model: WeightModel, theta) -> np.ndarray:
    """Real ``2n x 2n`` matrix of ``z -> exp(i W theta) z``."""
    ph = model.W @ np.asarray(theta, dtype=float)
    c, s = np.cos(ph), np.sin(ph)
    return np.block([[np.diag(c), -np.diag(s)], [np.diag(s), np.diag(c)]])


def _null_space(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    u, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > rtol * max(1.0, s[0] if s.size else 0.0)))
    return vt[rank:].T


def _range(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(s > rtol * max(1.0, s[0] if s.size else 0.0)))
    return u[:, :rank]


def nondeg_check(dfx, x, g0_action, model: WeightModel, tol: float) -> bool:
    """Nondegeneracy of a relative fixed point as a rank condition.

    ``v`` ranges over a complement of ``im L_x`` inside ``ker d mu(x)``; the
    condition is that ``(df(x) - g0) v`` never lies in ``im L_{g0 x}`` unless
    ``v = 0``, i.e. the composite with the projection off ``im L_{g0 x}`` has
    smallest singular value above ``tol``.  A zero-dimensional quotient is
    nondegenerate.
    """
    x = np.asarray(x, dtype=complex)
    n2 = 2 * model.N
    dfx = np.asarray(dfx, dtype=float)
    g0 = np.asarray(g0_action, dtype=float)
    if x.shape != (model.N,) or dfx.shape != (n2, n2) or g0.shape != (n2, n2):
        raise ShapeMismatch(f"expected x in C^{model.N} and {n2}x{n2} real matrices")
    if np.linalg.norm(moment_map(model, x)) > tol:
        raise ValueError("x is not in the zero level of the moment map")
    xr = _realify(x)
    y = g0 @ xr
    y = y[: model.N] + 1j * y[model.N:]
    Lx = action_differential(model, x)
    basis = _null_space(np.vstack([moment_differential(model, x), Lx.T]))
    if basis.shape[1] == 0:
        return True
    Ly = _range(action_differential(model, y))
    img = (dfx - g0) @ basis
    img = img - Ly @ (Ly.T @ img)
    smin = np.linalg.svd(img, compute_uv=False).min()
    return bool(smin > tol)
