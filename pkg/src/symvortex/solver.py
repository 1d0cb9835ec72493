"""Finding vortex solutions: energy descent, Newton with gauge slice, scans."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import lattice as lat
from .core import (
    VortexState,
    _check_model,
    below_threshold,
    energy,
    energy_identity,
    lower_bound_residual,
    residual,
    residual_norms,
)
from .errors import LineSearchStall, NoConvergence, NotProper, PointsTooClose, ShapeMismatch, SingularSystem
from .linearization import assemble_D
from .target import WeightModel, moment_map, norm_bound, properness_check

DIRECT_LIMIT = 400_000
MAX_DAMPING = 1e12
REDUCIBLE_FLOOR = 1e-12


class BelowThreshold(UserWarning):
    """The requested degree and shift leave no room for a solution."""


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 3000
    grad_tol: float = 1e-6
    newton_tol: float = 1e-7
    newton_max_iters: int = 40
    armijo: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1e-4
    seed: int = 0
    linear_tol: float = 1e-2
    damping_floor: float = 1e-14
    lm_damping: float = 1e-3
    linear_solver: str = "auto"
    max_restarts: int = 3

    def __post_init__(self):
        for name in ("grad_tol", "newton_tol", "armijo", "initial_step", "linear_tol", "damping_floor", "lm_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.max_iters < 1 or self.newton_max_iters < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")
        if self.linear_solver not in ("auto", "iterative", "direct"):
            raise ValueError("linear_solver must be 'auto', 'iterative' or 'direct'")


@dataclass
class ScanRecord:
    control: float
    control_name: str
    residual: float
    res1_rms: float
    res2_rms: float
    energy: float
    pairing: float
    iterations: int
    converged: bool
    restarts: int = 0
    below_threshold: bool = False
    residual_energy: float = 0.0
    lower_bound: float = 0.0
    sup_mu: float | None = None
    notes: list = field(default_factory=list)
    newton_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["notes"] = list(self.notes)
        out["newton_history"] = [float(v) for v in self.newton_history]
        return out


# ---------------------------------------------------------------- descent


def energy_gradient(state: VortexState, model: WeightModel) -> np.ndarray:
    """Gradient of the energy in the flat coefficient vector of :meth:`VortexState.to_vector`."""
    _check_model(state, model)
    geom, A, z = state.geom, state.A, state.z
    hs, ht, area = geom.hs, geom.ht, geom.area
    W = np.asarray(model.W, dtype=float)
    eps2 = state.epsilon**2
    lam2 = geom.lam2[..., None]

    Us, Ut = lat._phases(geom, A, W)
    zs = np.roll(z, -1, axis=0)
    zt = np.roll(z, -1, axis=1)
    Ds = (Us * zs - z) / hs
    Dt = (Ut * zt - z) / ht
    m = moment_map(model, z)

    gz = -Ds / hs + np.roll(np.conj(Us) * Ds, 1, axis=0) / hs
    gz += -Dt / ht + np.roll(np.conj(Ut) * Dt, 1, axis=1) / ht
    gz += (lam2 / eps2 * m) @ W.T * z
    gz *= area

    ga_s = area * (np.imag(np.conj(Ds) * Us * zs) @ W)
    ga_t = area * (np.imag(np.conj(Dt) * Ut * zt) @ W)
    F = lat.site_curvature(geom, A)
    G = lat.site_average_to_plaquette(eps2 / lam2 * F * area)
    ga_s += (G - np.roll(G, 1, axis=1)) / ht
    ga_t += (np.roll(G, 1, axis=0) - G) / hs
    return np.concatenate([gz.real.ravel(), gz.imag.ravel(), ga_s.ravel(), ga_t.ravel()])


def descend_energy(state: VortexState, model: WeightModel, opts: SolveOptions | None = None,
                   history: list | None = None) -> VortexState:
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking.

    Every accepted step lowers the energy.  Stops when the gradient norm is at
    most ``grad_tol`` or after ``max_iters`` accepted steps.  If ``history`` is
    given, the energy after each accepted step is appended to it.
    """
    opts = opts or SolveOptions()
    _check_model(state, model)
    x = state.to_vector()
    if not np.all(np.isfinite(x)):
        raise ValueError("state has non-finite entries")
    E = energy(state, model)
    g = energy_gradient(state, model)
    alpha = opts.initial_step
    for _ in range(opts.max_iters):
        gg = float(g @ g)
        if math.sqrt(gg) <= opts.grad_tol:
            break
        while True:
            xn = x - alpha * g
            En = energy(state.from_vector(xn), model)
            if En <= E - opts.armijo * alpha * gg and En < E:
                break
            alpha *= opts.backtrack
            if alpha < opts.damping_floor:
                raise LineSearchStall(
                    f"no decrease for step >= {opts.damping_floor:g} (energy {E:.12g}, |grad| {math.sqrt(gg):.3e})"
                )
        gn = energy_gradient(state.from_vector(xn), model)
        s, y = xn - x, gn - g
        sy = float(s @ y)
        # negative curvature (e.g. near the zero section): grow the step instead
        alpha = float(np.clip((s @ s) / sy, 1e-10, 1e4)) if sy > 0 else min(2.0 * alpha, 1e4)
        x, E, g = xn, En, gn
        if history is not None:
            history.append(E)
    return state.from_vector(x)


# ---------------------------------------------------------------- Newton


def _row_weights(state: VortexState) -> np.ndarray:
    """Row scaling that turns the squared residual into ``dbar2 + resid2``."""
    geom = state.geom
    S, N, r = geom.n_sites, state.N, state.r
    area = geom.area
    w1 = np.full(2 * S * N, math.sqrt(2.0 * area))
    wsl = np.full(S * r, math.sqrt(area))
    lam2 = np.repeat(geom.lam2.ravel(), r)
    w2 = np.sqrt(0.5 * state.epsilon**2 * lam2 * area)
    return np.concatenate([w1, wsl, w2])


def weighted_residual(state: VortexState, model: WeightModel) -> np.ndarray:
    """Residual (slice block zero) whose squared norm is ``dbar2 + resid2``."""
    r1, r2 = residual(state, model)
    S = state.geom.n_sites
    F = np.concatenate([r1.real.ravel(), r1.imag.ravel(), np.zeros(S * state.r), r2.ravel()])
    return _row_weights(state) * F


def _solve_damped(J: sp.csr_matrix, F: np.ndarray, mu: float, forcing: float, method: str):
    """Step of ``min |J dx + F|^2 + mu |dx|^2``.

    ``direct`` factorises the normal equations (minimum-degree ordering on
    ``A + A^T``, which keeps the fill small on a grid).  ``iterative`` runs
    LSMR on the column-equilibrated system to relative tolerance ``forcing``.
    ``auto`` picks direct up to :data:`DIRECT_LIMIT` unknowns.
    """
    n = J.shape[1]
    if method == "iterative" or (method == "auto" and n > DIRECT_LIMIT):
        cn = np.sqrt(np.asarray(J.multiply(J).sum(axis=0)).ravel() + mu)
        Dinv = sp.diags(1.0 / cn)
        Js = sp.vstack([J @ Dinv, math.sqrt(mu) * Dinv]).tocsr()
        rhs = np.concatenate([-F, np.zeros(n)])
        out = spla.lsmr(Js, rhs, atol=forcing, btol=forcing, maxiter=max(200, n // 8))
        return out[0] / cn, "iterative"
    JtJ = (J.T @ J + mu * sp.identity(n, format="csr")).tocsc()
    dx = spla.splu(JtJ, permc_spec="MMD_AT_PLUS_A").solve(-(J.T @ F))
    return dx, "direct"


def newton_refine(state: VortexState, model: WeightModel, opts: SolveOptions | None = None,
                  history: list | None = None) -> VortexState:
    """Levenberg-Marquardt damped Newton on the slice-augmented system.

    The Jacobian is :func:`assemble_D` (residual rows plus the gauge slice),
    rows scaled so the merit ``|F|^2`` equals ``dbar2 + resid2``.  The slice
    rows pin updates orthogonally to gauge orbits.  The damping is
    ``lam |F|^2``; ``lam`` grows by 10 on a rejected step and shrinks by 10
    on an accepted one, which keeps the local convergence quadratic.  ``history`` receives the merit residual before every step.
    """
    opts = opts or SolveOptions()
    _check_model(state, model)
    if np.max(np.abs(state.z)) < REDUCIBLE_FLOOR:
        raise SingularSystem("section vanishes identically (reducible configuration); the gauge stabiliser makes the system singular")
    hist = history if history is not None else []
    F = weighted_residual(state, model)
    res = float(np.linalg.norm(F))
    lam = opts.lm_damping
    x = state.to_vector()
    slow = 0
    for _ in range(opts.newton_max_iters):
        hist.append(res)
        if res <= opts.newton_tol:
            return state
        op = assemble_D(state, model)
        Jw = (sp.diags(_row_weights(state)) @ op.matrix).tocsr()
        accepted = False
        while lam * res**2 <= MAX_DAMPING:
            dx, _ = _solve_damped(Jw, F, lam * res**2, min(opts.linear_tol, res), opts.linear_solver)
            if not np.all(np.isfinite(dx)):
                raise SingularSystem("linear solve produced non-finite values")
            trial = state.from_vector(x + dx)
            Ft = weighted_residual(trial, model)
            rt = float(np.linalg.norm(Ft))
            if rt < res:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        slow = slow + 1 if rt > (1.0 - 1e-6) * res else 0
        lam = max(lam / 10.0, opts.damping_floor)
        state, F, res, x = trial, Ft, rt, x + dx
        if slow >= 3:
            break
    if res <= opts.newton_tol:
        hist.append(res)
        return state
    raise NoConvergence(f"Newton stalled at residual {res:.3e} > {opts.newton_tol:.1e}", best=state, residual=res)


# ---------------------------------------------------------------- initial data


def _torus_distance(geom: lat.TorusGeometry, p, q) -> float:
    ds = abs(p[0] - q[0]) % geom.Ls
    dt = abs(p[1] - q[1]) % geom.Lt
    return math.hypot(min(ds, geom.Ls - ds), min(dt, geom.Lt - dt))


def _solve_curl(geom: lat.TorusGeometry, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimal-norm link phases with prescribed plaquette sums (``rhs`` sums to zero)."""
    Ns, Nt = geom.shape
    ks = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(Ns) / Ns)
    kt = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(Nt) / Nt)
    lap = ks[:, None] + kt[None, :]
    lap[0, 0] = 1.0
    rh = np.fft.fft2(rhs)
    rh[0, 0] = 0.0
    psi = np.real(np.fft.ifft2(rh / lap))
    # adjoint of the plaquette sum
    ds = psi - np.roll(psi, 1, axis=1)
    dt = np.roll(psi, 1, axis=0) - psi
    return ds, dt


def prescribe_zeros(geom: lat.TorusGeometry, model: WeightModel, points, A: lat.LinkField | None = None,
                    core: float | None = None) -> np.ndarray:
    """Section with one unit-winding zero at each point, matched to ``A``.

    Builds the connection ``B`` closest to ``A`` whose flux sits entirely in
    the plaquettes containing the points, takes the ``B``-parallel phase and
    multiplies it by ``prod tanh(dist / core)``.  ``A`` defaults to the uniform
    connection of degree ``len(points)``; the model must have rank 1 with
    positive weights (component ``nu`` gets winding ``W[nu]`` at every point).
    """
    if model.r != 1 or np.any(model.W <= 0):
        raise ValueError("zero prescription needs a rank-1 model with positive weights")
    pts = [(float(p[0]) % geom.Ls, float(p[1]) % geom.Lt) for p in points]
    d = len(pts)
    if A is None:
        A = lat.make_connection_with_flux(geom, [d], "uniform")
    if A.r != 1 or int(A.degree[0]) != d:
        raise ShapeMismatch(f"connection degree {A.degree} does not match {d} points")
    h = min(geom.hs, geom.ht)
    for a in range(d):
        for b in range(a + 1, d):
            if _torus_distance(geom, pts[a], pts[b]) < 2.0 * h:
                raise PointsTooClose(f"points {pts[a]} and {pts[b]} are closer than 2 lattice spacings")
    Ns, Nt = geom.shape
    target = np.zeros((Ns, Nt))
    for s, t in pts:
        target[int(s / geom.hs) % Ns, int(t / geom.ht) % Nt] += 2.0 * np.pi
    target[Ns - 1, Nt - 1] -= 2.0 * np.pi * d
    thA_s = A.a_s[..., 0] * geom.hs
    thA_t = A.a_t[..., 0] * geom.ht
    cur = lat.plaquette_phase(geom, A)[..., 0]
    ds, dt = _solve_curl(geom, target - cur)
    th_s = thA_s + ds
    th_t = thA_t + dt
    # remove the holonomy around the two cycles (mod 2 pi) so a global phase exists
    hol_s = math.fsum(th_s[:, 0])
    hol_t = math.fsum(th_t[0, :])
    th_s -= (hol_s - 2.0 * np.pi * round(hol_s / (2.0 * np.pi))) / Ns
    th_t -= (hol_t - 2.0 * np.pi * round(hol_t / (2.0 * np.pi))) / Nt
    phi = np.zeros((Ns, Nt))
    phi[1:, 0] = np.cumsum(th_s[:-1, 0])
    phi[:, 1:] = phi[:, :1] + np.cumsum(th_t[:, :-1], axis=1)

    tau = float(model.tau[0])
    if core is None:
        core = 1.0 / math.sqrt(max(abs(tau), 1e-12))
    ss = (np.arange(Ns) * geom.hs)[:, None]
    tt = (np.arange(Nt) * geom.ht)[None, :]
    rho = np.ones((Ns, Nt))
    for s, t in pts:
        dss = np.abs(ss - s) % geom.Ls
        dtt = np.abs(tt - t) % geom.Lt
        dist = np.hypot(np.minimum(dss, geom.Ls - dss), np.minimum(dtt, geom.Lt - dtt))
        # softened so a point sitting on a site does not zero the section there
        rho = rho * np.tanh(np.hypot(dist, 0.25 * h) / core)
    w = model.W[:, 0].astype(float)
    amp = math.sqrt(norm_bound(model) / model.N) if properness_check(model) else 1.0
    return amp * rho[..., None] ** w[None, None, :] * np.exp(1j * w[None, None, :] * phi[..., None])


def random_section(geom: lat.TorusGeometry, model: WeightModel, seed: int) -> np.ndarray:
    """Seeded section of modulus about half the compactness bound, plus noise."""
    rng = np.random.default_rng(seed)
    amp = 0.5 * math.sqrt(norm_bound(model) / model.N)
    noise = rng.standard_normal((*geom.shape, model.N)) + 1j * rng.standard_normal((*geom.shape, model.N))
    return amp * (1.0 + 0.2 * noise)


_SUB = np.linalg.pinv(np.array([
    [-1.0, 0.0, 1.0, 0.0],   # SW: b1 + u - p - l1
    [0.0, -1.0, -1.0, 0.0],  # SE: b2 + r1 - q - u
    [1.0, 0.0, 0.0, 1.0],    # NW: p + v - t1 - l2
    [0.0, 1.0, 0.0, -1.0],   # NE: q + r2 - t2 - v
]))


def prolong(state: VortexState, model: WeightModel) -> VortexState:
    """Transfer a state to the grid with twice the resolution in each direction.

    Coarse links are halved along their length; the four links inside each
    coarse cell are the minimal-norm choice giving every sub-cell a quarter of
    the coarse flux (the bundle twist stays in the corner cell).  New sites are
    filled by parallel-transported averages of their neighbours.
    """
    _check_model(state, model)
    g = state.geom
    Ns, Nt = g.shape
    fine = lat.make_torus(2 * Ns, 2 * Nt, g.Ls, g.Lt, _refine_lambda(g.lam))
    r = state.r
    W = np.asarray(model.W, dtype=float)
    ths = state.A.a_s * g.hs
    tht = state.A.a_t * g.ht
    f = lat.curvature(g, state.A) * g.area  # true flux per coarse cell
    corner = np.zeros((Ns, Nt, r))
    corner[Ns - 1, Nt - 1] = 2.0 * np.pi * state.A.degree
    b1 = b2 = 0.5 * ths
    t1 = t2 = 0.5 * np.roll(ths, -1, axis=1)
    l1 = l2 = 0.5 * tht
    r1 = r2 = 0.5 * np.roll(tht, -1, axis=0)
    q4 = 0.25 * f
    rhs = np.stack([q4 - b1 + l1, q4 - b2 - r1, q4 + t1 + l2, q4 - corner - r2 + t2], axis=-1)
    p, q, u, v = np.moveaxis(rhs @ _SUB.T, -1, 0)

    fs = np.zeros((2 * Ns, 2 * Nt, r))
    ft = np.zeros((2 * Ns, 2 * Nt, r))
    fs[0::2, 0::2], fs[1::2, 0::2] = b1, b2
    fs[0::2, 1::2], fs[1::2, 1::2] = p, q
    ft[0::2, 0::2], ft[0::2, 1::2] = l1, l2
    ft[1::2, 0::2], ft[1::2, 1::2] = u, v
    A = lat.LinkField(fs / fine.hs, ft / fine.ht, state.A.degree.copy())

    ph = lambda th: np.exp(1j * (th @ W.T))  # noqa: E731  transport x -> x + step
    z = state.z
    zf = np.zeros((2 * Ns, 2 * Nt, state.N), dtype=complex)
    zf[0::2, 0::2] = z
    zf[1::2, 0::2] = 0.5 * (ph(b1) * z + np.conj(ph(b2)) * np.roll(z, -1, axis=0))
    zf[0::2, 1::2] = 0.5 * (ph(l1) * z + np.conj(ph(l2)) * np.roll(z, -1, axis=1))
    zl = zf[0::2, 1::2]
    zr = np.roll(zf[0::2, 1::2], -1, axis=0)
    zb = zf[1::2, 0::2]
    zt = np.roll(zf[1::2, 0::2], -1, axis=1)
    zf[1::2, 1::2] = 0.25 * (ph(p) * zl + np.conj(ph(q)) * zr + ph(u) * zb + np.conj(ph(v)) * zt)
    return VortexState(fine, zf, A, state.epsilon)


def _refine_lambda(lam: np.ndarray) -> np.ndarray:
    out = np.empty((2 * lam.shape[0], 2 * lam.shape[1]))
    ls = np.roll(lam, -1, axis=0)
    lt = np.roll(lam, -1, axis=1)
    lst = np.roll(ls, -1, axis=1)
    out[0::2, 0::2] = lam
    out[1::2, 0::2] = 0.5 * (lam + ls)
    out[0::2, 1::2] = 0.5 * (lam + lt)
    out[1::2, 1::2] = 0.25 * (lam + ls + lt + lst)
    return out


# ---------------------------------------------------------------- pipelines


def _record(state: VortexState, model: WeightModel, control: float, name: str, iterations: int,
            converged: bool, opts: SolveOptions, restarts: int = 0, notes=(), newton_history=()) -> ScanRecord:
    eb = energy_identity(state, model)
    r1, r2 = residual_norms(state, model)
    deg = state.A.degree
    vol = state.geom.volume
    return ScanRecord(
        control=float(control),
        control_name=name,
        residual=math.sqrt(max(eb.dbar2 + eb.resid2, 0.0)),
        res1_rms=r1,
        res2_rms=r2,
        energy=eb.E,
        pairing=eb.pairing,
        iterations=int(iterations),
        converged=bool(converged),
        restarts=int(restarts),
        below_threshold=below_threshold(model, deg, vol, state.epsilon),
        residual_energy=eb.dbar2 + eb.resid2,
        lower_bound=lower_bound_residual(model, deg, vol, state.epsilon),
        notes=list(notes),
        newton_history=[float(v) for v in newton_history],
    )


def _init_section(geom, model, A, init_spec: dict, seed: int) -> np.ndarray:
    kind = init_spec.get("kind", "random")
    if kind == "random":
        return random_section(geom, model, init_spec.get("seed", seed))
    if kind == "zeros":
        return prescribe_zeros(geom, model, init_spec["points"], A)
    if kind == "file":
        from .fieldio import read_snapshot

        snap = read_snapshot(init_spec["path"])
        if snap.z.shape != (*geom.shape, model.N):
            raise ShapeMismatch(f"snapshot section {snap.z.shape} does not fit {(*geom.shape, model.N)}")
        return snap.z
    raise ValueError(f"unknown init kind {kind!r}; use random, zeros, coarse or file")


def _coarse_start(geom, model, d, spec: dict, opts: SolveOptions, epsilon: float, seed: int) -> VortexState:
    levels = int(spec.get("levels", 1))
    Ns, Nt = geom.shape
    f = 2**levels
    if levels < 1 or Ns % f or Nt % f or min(Ns, Nt) // f < 4:
        raise ValueError(f"cannot coarsen a {Ns}x{Nt} grid {levels} times")
    coarse = lat.make_torus(Ns // f, Nt // f, geom.Ls, geom.Lt, geom.lam[::f, ::f])
    sub = {"kind": "random", "seed": int(spec.get("seed", seed))}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BelowThreshold)
        st, _ = solve_vortex(coarse, model, d, sub, opts, epsilon)
    for _ in range(levels):
        st = prolong(st, model)
    return VortexState(geom, st.z, st.A, epsilon)


def refine_solution(state: VortexState, model: WeightModel, opts: SolveOptions, descend: bool = True):
    """Descend (optionally), then Newton.

    Returns ``(state, iterations, converged, notes, newton_history)``.
    """
    notes: list[str] = []
    dh: list = []
    nh: list = []
    if descend:
        try:
            state = descend_energy(state, model, opts, history=dh)
        except LineSearchStall as exc:
            notes.append(f"descent stalled: {exc}")
    try:
        state = newton_refine(state, model, opts, history=nh)
        return state, len(dh) + len(nh), True, notes, nh
    except SingularSystem as exc:
        notes.append(f"reducible: {exc}")
    except NoConvergence as exc:
        notes.append(str(exc))
        state = exc.best
    return state, len(dh) + len(nh), False, notes, nh


def solve_vortex(geom: lat.TorusGeometry, model: WeightModel, d, init_spec: dict | None = None,
                 opts: SolveOptions | None = None, epsilon: float = 1.0) -> tuple[VortexState, ScanRecord]:
    """Connection of degree ``d``, initial section, descent, Newton, honest record.

    ``init_spec`` is ``{"kind": "random", "seed": s}``, ``{"kind": "zeros",
    "points": [...]}``, ``{"kind": "file", "path": p}`` or ``{"kind":
    "coarse", "levels": k, "seed": s}``; the last solves on a grid coarsened
    ``k`` times from a random start and prolongs the result.  A failed random
    start is retried with fresh seeds up to ``max_restarts`` times.  When no
    solution can exist the record carries ``below_threshold`` and a
    :class:`BelowThreshold` warning is issued.
    """
    opts = opts or SolveOptions()
    if not properness_check(model):
        raise NotProper("moment map is not proper")
    init_spec = dict(init_spec or {"kind": "random", "seed": opts.seed})
    d = np.atleast_1d(np.asarray(d, dtype=np.int64))
    if d.shape != (model.r,):
        raise ShapeMismatch(f"degree has {d.shape[0]} entries, model has rank {model.r}")
    A = lat.make_connection_with_flux(geom, d, "uniform")
    below = below_threshold(model, d, geom.volume, epsilon)
    base_seed = int(init_spec.get("seed", opts.seed))
    best = None
    total_iters = 0
    notes: list[str] = []
    attempts = opts.max_restarts + 1 if init_spec.get("kind", "random") in ("random", "coarse") else 1
    for attempt in range(attempts):
        spec = dict(init_spec)
        if attempt:
            spec["seed"] = int(np.random.SeedSequence([base_seed, attempt]).generate_state(1)[0])
        if spec.get("kind") == "coarse":
            state = _coarse_start(geom, model, d, spec, opts, epsilon, base_seed)
        else:
            z0 = _init_section(geom, model, A, spec, base_seed)
            state = VortexState(geom, np.asarray(z0, dtype=complex), A, epsilon)
        # descent drifts along the nearly flat moduli directions, which would
        # move prescribed zeros; Newton takes minimal-norm steps instead
        descend = spec.get("kind") not in ("zeros",)
        state, its, ok, nts, nh = refine_solution(state, model, opts, descend=descend)
        total_iters += its
        notes.extend(f"attempt {attempt}: {n}" for n in nts)
        rec = _record(state, model, float(np.linalg.norm(model.tau)), "tau", total_iters, ok, opts,
                      restarts=attempt, notes=notes, newton_history=nh)
        if best is None or rec.residual < best[1].residual:
            best = (state, rec)
        if ok:
            break
    state, rec = best
    rec.iterations = total_iters
    rec.notes = list(notes)
    if below or rec.pairing <= 0:
        rec.notes.append("BelowThreshold: degree and shift violate the existence condition")
        warnings.warn("below the existence threshold: no solution expected", BelowThreshold, stacklevel=2)
    return state, rec


def epsilon_continuation(state: VortexState, model: WeightModel, eps_schedule,
                         opts: SolveOptions | None = None, states: list | None = None) -> list[ScanRecord]:
    """Warm-started re-solves along a decreasing schedule of ``epsilon``.

    Each record carries ``sup_mu``, the largest site value of ``|mu(z)|``.
    The solved states are appended to ``states`` when given.
    """
    opts = opts or SolveOptions()
    sched = [float(e) for e in eps_schedule]
    if not sched or any(e <= 0 for e in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("eps_schedule must be strictly decreasing positive numbers")
    records = []
    for eps in sched:
        state = state.replace(epsilon=eps)
        state, its, ok, notes, nh = refine_solution(state, model, opts)
        rec = _record(state, model, eps, "epsilon", its, ok, opts, notes=notes, newton_history=nh)
        rec.sup_mu = float(np.max(np.linalg.norm(moment_map(model, state.z), axis=-1)))
        records.append(rec)
        if states is not None:
            states.append(state)
    return records


def tau_scan(geom: lat.TorusGeometry, model_template: WeightModel, d, tau_grid,
             opts: SolveOptions | None = None, init_spec: dict | None = None) -> list[ScanRecord]:
    """Solve at every shift in ``tau_grid`` (scalars scale a rank-1 ``tau``)."""
    opts = opts or SolveOptions()
    out = []
    for k, tau in enumerate(tau_grid):
        model = model_template.with_tau(np.atleast_1d(tau))
        spec = dict(init_spec or {"kind": "random"})
        if spec.get("kind", "random") == "random":
            spec["seed"] = int(np.random.SeedSequence([opts.seed, k]).generate_state(1)[0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BelowThreshold)
            _, rec = solve_vortex(geom, model, d, spec, opts)
        rec.control = float(np.atleast_1d(tau)[0]) if np.size(tau) == 1 else float(np.linalg.norm(tau))
        out.append(rec)
    return out
