"""Vortex-equation residuals, energy, the Bogomolny decomposition and diagnostics.

All terms are evaluated from the same per-site samples (forward covariant
differences at the site, curvature averaged from the four touching
plaquettes, moment map at the site), so

    energy = dbar2 + resid2 + pairing

holds by per-site algebra, to rounding.  The continuum value of the pairing
for a bundle of degree ``d`` is ``2 pi <tau, d>``; see :func:`pairing_closed_form`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import nnls

from . import lattice as lat
from .errors import AmbiguousZero, GeometryMismatch, NotASolution, NotProper, ShapeMismatch
from .target import WeightModel, moment_map, norm_bound, omega, properness_check


@dataclass(frozen=True, eq=False)
class VortexState:
    geom: lat.TorusGeometry
    z: np.ndarray
    A: lat.LinkField
    epsilon: float = 1.0

    def __post_init__(self):
        if self.z.ndim != 3 or self.z.shape[:2] != self.geom.shape:
            raise GeometryMismatch(f"section shape {self.z.shape} does not match torus {self.geom.shape}")
        if self.A.shape != self.geom.shape:
            raise GeometryMismatch("connection and section live on different grids")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def N(self) -> int:
        return self.z.shape[2]

    @property
    def r(self) -> int:
        return self.A.r

    def replace(self, **kw) -> "VortexState":
        fields = dict(geom=self.geom, z=self.z, A=self.A, epsilon=self.epsilon)
        fields.update(kw)
        return VortexState(**fields)

    # flat real vector in block layout (Re z, Im z, a_s, a_t)
    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.z.real.ravel(), self.z.imag.ravel(), self.A.a_s.ravel(), self.A.a_t.ravel()])

    def from_vector(self, x: np.ndarray) -> "VortexState":
        Ns, Nt = self.geom.shape
        nz = Ns * Nt * self.N
        na = Ns * Nt * self.r
        z = (x[:nz] + 1j * x[nz : 2 * nz]).reshape(Ns, Nt, self.N)
        a_s = x[2 * nz : 2 * nz + na].reshape(Ns, Nt, self.r)
        a_t = x[2 * nz + na :].reshape(Ns, Nt, self.r)
        return VortexState(self.geom, z, lat.LinkField(a_s, a_t, self.A.degree), self.epsilon)


@dataclass(frozen=True)
class EnergyBreakdown:
    E: float
    dbar2: float
    resid2: float
    pairing: float
    identity_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check_model(state: VortexState, model: WeightModel) -> None:
    if model.N != state.N or model.r != state.r:
        raise ShapeMismatch(
            f"model acts on C^{model.N} with rank {model.r}; state has N={state.N}, r={state.r}"
        )


def _samples(state: VortexState, model: WeightModel):
    _check_model(state, model)
    Ds, Dt = lat.covariant_differences(state.geom, state.A, model.W, state.z)
    F = lat.site_curvature(state.geom, state.A)
    m = moment_map(model, state.z)
    return Ds, Dt, F, m


def residual(state: VortexState, model: WeightModel) -> tuple[np.ndarray, np.ndarray]:
    """``(dbar_A z, F / lambda^2 + mu / eps^2)`` sampled at sites."""
    Ds, Dt, F, m = _samples(state, model)
    lam2 = state.geom.lam2[..., None]
    return 0.5 * (Ds + 1j * Dt), F / lam2 + m / state.epsilon**2


def residual_norms(state: VortexState, model: WeightModel) -> tuple[float, float]:
    """Root-mean-square of the two residual components."""
    r1, r2 = residual(state, model)
    return float(np.sqrt(np.mean(np.abs(r1) ** 2))), float(np.sqrt(np.mean(r2**2)))


def _densities(state: VortexState, model: WeightModel):
    Ds, Dt, F, m = _samples(state, model)
    eps = state.epsilon
    lam2 = state.geom.lam2
    kin = 0.5 * np.sum(np.abs(Ds) ** 2 + np.abs(Dt) ** 2, axis=-1)
    pot = 0.5 * (eps**2 / lam2 * np.sum(F**2, axis=-1) + lam2 / eps**2 * np.sum(m**2, axis=-1))
    dbar = 0.5 * np.sum(np.abs(Ds + 1j * Dt) ** 2, axis=-1)
    res = 0.5 * eps**2 * lam2 * np.sum((F / lam2[..., None] + m / eps**2) ** 2, axis=-1)
    top = omega(Ds, Dt) - np.sum(F * m, axis=-1)
    return kin + pot, dbar, res, top


def _total(density: np.ndarray, area: float) -> float:
    return math.fsum(density.ravel()) * area


def energy(state: VortexState, model: WeightModel) -> float:
    e, _, _, _ = _densities(state, model)
    return _total(e, state.geom.area)


def topological_pairing(state: VortexState, model: WeightModel) -> float:
    _, _, _, top = _densities(state, model)
    return _total(top, state.geom.area)


def energy_identity(state: VortexState, model: WeightModel) -> EnergyBreakdown:
    e, dbar, res, top = _densities(state, model)
    area = state.geom.area
    E = _total(e, area)
    d2 = _total(dbar, area)
    r2 = _total(res, area)
    p = _total(top, area)
    return EnergyBreakdown(E, d2, r2, p, abs(E - d2 - r2 - p))


def pairing_closed_form(model: WeightModel, degree) -> float:
    """Continuum pairing ``2 pi <tau, d>``; independent of area, epsilon and lambda."""
    return float(2.0 * np.pi * np.dot(model.tau, np.atleast_1d(degree)))


def threshold_margin(model: WeightModel, degree, volume: float, epsilon: float = 1.0) -> np.ndarray:
    """``tau Vol - 2 pi eps^2 d``: what the integrated curvature equation leaves for ``|z|^2``.

    Integrating ``F / lambda^2 + mu / eps^2 = 0`` gives
    ``tau Vol - 2 pi eps^2 d = 1/2 W^T int lambda^2 |z|^2``.
    """
    d = np.atleast_1d(np.asarray(degree, dtype=float))
    return np.asarray(model.tau, dtype=float) * volume - 2.0 * np.pi * epsilon**2 * d


def below_threshold(model: WeightModel, degree, volume: float, epsilon: float = 1.0) -> bool:
    """True when no nonzero section can satisfy the integrated curvature equation.

    The margin must be ``W^T y`` with ``y >= 0`` and ``y != 0`` (``y`` the
    weighted squared norms of the components).
    """
    c = threshold_margin(model, degree, volume, epsilon)
    W = np.asarray(model.W, dtype=float)
    y, rnorm = nnls(W.T, c)
    scale = max(1.0, float(np.linalg.norm(c)))
    return bool(rnorm > 1e-12 * scale or np.all(y <= 1e-14 * scale))


def lower_bound_residual(model: WeightModel, degree, volume: float, epsilon: float = 1.0) -> float:
    """Floor on ``resid2`` for a positive single-weight model below threshold.

    With ``g = F / lambda^2 + mu / eps^2`` the integral of ``lambda^2 g`` is at
    least ``gap = 2 pi d - tau Vol / eps^2``; Cauchy-Schwarz then gives
    ``resid2 >= eps^2 gap^2 / (2 Vol)`` whenever ``gap > 0``.
    """
    if model.r != 1 or np.any(model.W <= 0):
        return 0.0
    d = float(np.atleast_1d(degree)[0])
    gap = 2.0 * np.pi * d - float(model.tau[0]) * volume / epsilon**2
    if gap <= 0:
        return 0.0
    return epsilon**2 * gap**2 / (2.0 * volume)


def sup_bound_check(
    state: VortexState,
    model: WeightModel,
    residual_tol: float = 1e-6,
    allowance: float = 0.05,
) -> dict:
    """Compare ``max |z|^2`` with the maximum-principle bound at a solution."""
    if not properness_check(model):
        raise NotProper("moment map is not proper: no half-space certificate")
    r1, r2 = residual_norms(state, model)
    if max(r1, r2) > residual_tol:
        raise NotASolution(f"residual {max(r1, r2):.3e} exceeds {residual_tol:.1e}; bound only holds at solutions")
    norm2 = np.sum(np.abs(state.z) ** 2, axis=-1)
    max_norm2 = float(norm2.max())
    bound = norm_bound(model)
    overshoot = max(0.0, max_norm2 / bound - 1.0)
    return {
        "max_norm2": max_norm2,
        "bound": bound,
        "overshoot": overshoot,
        "allowance": allowance,
        "satisfied": bool(max_norm2 <= bound * (1.0 + allowance)),
    }


def _component(state: VortexState, component: int | None) -> int:
    if component is not None:
        return component
    for nu in range(state.N):
        if np.max(np.abs(state.z[..., nu])) > 0:
            return nu
    raise AmbiguousZero("section vanishes identically")


def vorticity(state: VortexState, model: WeightModel, component: int | None = None):
    """Gauge-invariant integer winding of one component around each plaquette.

    Returns ``(n, max_edge)`` where ``max_edge`` is the largest covariant phase
    step on the four edges of each cell (a resolution diagnostic).
    """
    _check_model(state, model)
    nu = _component(state, component)
    geom, A = state.geom, state.A
    w = np.asarray(model.W[nu], dtype=float)
    th_s = (A.a_s @ w) * geom.hs
    th_t = (A.a_t @ w) * geom.ht
    phi = np.angle(state.z[..., nu])
    wrap = lambda x: (x + np.pi) % (2.0 * np.pi) - np.pi  # noqa: E731
    ds = wrap(np.roll(phi, -1, axis=0) - phi - th_s)
    dt = wrap(np.roll(phi, -1, axis=1) - phi - th_t)
    loop = ds + np.roll(dt, -1, axis=0) - np.roll(ds, -1, axis=1) - dt
    flux = lat.curvature(geom, A) @ w * geom.area
    n = np.rint((loop + flux) / (2.0 * np.pi)).astype(np.int64)
    edges = np.stack([np.abs(ds), np.abs(np.roll(dt, -1, axis=0)), np.abs(np.roll(ds, -1, axis=1)), np.abs(dt)])
    return n, edges.max(axis=0)


def _cell_min(mod: np.ndarray) -> np.ndarray:
    return np.minimum.reduce(
        [mod, np.roll(mod, -1, axis=0), np.roll(mod, -1, axis=1), np.roll(np.roll(mod, -1, axis=0), -1, axis=1)]
    )


def zero_count(
    state: VortexState,
    model: WeightModel,
    theta_zero: float | None = None,
    component: int | None = None,
) -> int:
    """Net winding over cells where the section is small.

    ``theta_zero`` defaults to ``0.1 * sqrt(2 |tau|)``.
    """
    nu = _component(state, component)
    if theta_zero is None:
        theta_zero = 0.1 * math.sqrt(2.0 * float(np.linalg.norm(model.tau)))
    n, max_edge = vorticity(state, model, nu)
    mod = np.abs(state.z[..., nu])
    cells = _cell_min(mod) < theta_zero
    if np.any(_cell_min(mod)[cells] == 0.0):
        raise AmbiguousZero("section vanishes exactly at a site; phase undefined")
    if np.any(max_edge[cells] > (1.0 - 1e-3) * np.pi):
        raise AmbiguousZero("phase step close to pi on a cell near a zero; refine the grid")
    return int(n[cells].sum())


def zero_locations(state: VortexState, model: WeightModel, component: int | None = None) -> list[tuple[float, float, int]]:
    """``(s, t, winding)`` for every cell with nonzero winding.

    The position is the zero of the bilinear interpolant of the section in a
    gauge trivialised at the cell corner, clipped to the cell.
    """
    nu = _component(state, component)
    n, _ = vorticity(state, model, nu)
    geom, A = state.geom, state.A
    w = np.asarray(model.W[nu], dtype=float)
    out = []
    for i, j in zip(*np.nonzero(n)):
        i1, j1 = (i + 1) % geom.Ns, (j + 1) % geom.Nt
        ph_s0 = np.exp(-1j * (A.a_s[i, j] @ w) * geom.hs)
        ph_t0 = np.exp(-1j * (A.a_t[i, j] @ w) * geom.ht)
        ph_t1 = np.exp(-1j * (A.a_t[i1, j] @ w) * geom.ht)
        z = state.z[..., nu]
        z00 = z[i, j]
        z10 = ph_s0 * z[i1, j]
        z01 = ph_t0 * z[i, j1]
        z11 = ph_s0 * ph_t1 * z[i1, j1]
        u, v = _bilinear_root(z00, z10, z01, z11)
        out.append(((i + u) * geom.hs, (j + v) * geom.ht, int(n[i, j])))
    return out


def _bilinear_root(z00, z10, z01, z11) -> tuple[float, float]:
    u, v = 0.5, 0.5
    for _ in range(30):
        f = z00 * (1 - u) * (1 - v) + z10 * u * (1 - v) + z01 * (1 - u) * v + z11 * u * v
        fu = (z10 - z00) * (1 - v) + (z11 - z01) * v
        fv = (z01 - z00) * (1 - u) + (z11 - z10) * u
        J = np.array([[fu.real, fv.real], [fu.imag, fv.imag]])
        try:
            step = np.linalg.solve(J, [-f.real, -f.imag])
        except np.linalg.LinAlgError:
            break
        u, v = u + step[0], v + step[1]
        if abs(step).max() < 1e-13:
            break
    return float(np.clip(u, 0.0, 1.0)), float(np.clip(v, 0.0, 1.0))
