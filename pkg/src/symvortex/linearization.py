"""Linearised vortex operator with gauge slice, spectral probe, index arithmetic.

Block layout of :class:`LinearizedOp` (``S`` sites, ``N`` complex
coordinates, ``r`` generators; every block is site-major, component-minor):

    columns  [Re xi (S N) | Im xi (S N) | alpha_s (S r) | alpha_t (S r)]
    rows     [Re res1 (S N) | Im res1 (S N) | slice (S r) | res2 (S r)]

``res1`` and ``res2`` are the linearisations of :func:`symvortex.core.residual`
with the same stencils.  The slice row is the adjoint of the infinitesimal
gauge action ``g -> (i W g z, dg)`` with respect to the unweighted site/link
inner product, so it vanishes exactly on tangent vectors orthogonal to gauge
orbits.  The target is flat with constant ``J``, so the ``nabla J`` term of
the Cauchy-Riemann linearisation is absent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import lattice as lat
from .core import VortexState, _check_model
from .errors import SpectralFailure
from .target import WeightModel


@dataclass(frozen=True, eq=False)
class LinearizedOp:
    matrix: sp.csr_matrix
    N: int
    r: int
    n_sites: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def blocks(self) -> dict[str, slice]:
        S, N, r = self.n_sites, self.N, self.r
        nz, na = S * N, S * r
        return {
            "re": slice(0, nz),
            "im": slice(nz, 2 * nz),
            "s": slice(2 * nz, 2 * nz + na),
            "t": slice(2 * nz + na, 2 * nz + 2 * na),
        }

    def to_coo_text(self) -> str:
        """``row col value`` lines, one per stored entry."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"# shape {coo.shape[0]} {coo.shape[1]}"]
        lines += [f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}" for k in order]
        return "\n".join(lines) + "\n"


@dataclass
class IndexReport:
    singular_values: list[float]
    theta_low: float
    theta_high: float
    gap_ratio: float
    kernel_dimension: int
    conclusive: bool
    formula_index: int | None = None
    op_norm: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "singular_values": [float(v) for v in self.singular_values],
            "theta_low": self.theta_low,
            "theta_high": self.theta_high,
            "gap_ratio": self.gap_ratio,
            "kernel_dimension": self.kernel_dimension,
            "conclusive": self.conclusive,
            "formula_index": self.formula_index,
            "op_norm": self.op_norm,
        }


class _Builder:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(rows, cols, vals)
        self.rows.append(rows.ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel().astype(float))

    def build(self, n) -> sp.csr_matrix:
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.csr_matrix(sp.coo_matrix((vals, (rows, cols)), shape=(n, n)))


def assemble_D(state: VortexState, model: WeightModel) -> LinearizedOp:
    """Sparse Jacobian of ``(res1, slice, res2)`` at ``state``."""
    _check_model(state, model)
    geom, A, z = state.geom, state.A, state.z
    Ns, Nt = geom.shape
    N, r = state.N, state.r
    S = Ns * Nt
    nz, na = S * N, S * r
    hs, ht = geom.hs, geom.ht
    W = np.asarray(model.W, dtype=float)
    eps2 = state.epsilon**2
    lam2 = geom.lam2

    site = np.arange(S).reshape(Ns, Nt)
    sp_s = np.roll(site, -1, axis=0)  # x + s
    sp_t = np.roll(site, -1, axis=1)  # x + t
    sm_s = np.roll(site, 1, axis=0)  # x - s
    sm_t = np.roll(site, 1, axis=1)  # x - t

    nu = np.arange(N)
    jr = np.arange(r)

    def zc(k, part):  # column of z component, k: (...), part 0 real / 1 imag
        return part * nz + k[..., None] * N + nu

    def ac(k, direction):
        return 2 * nz + direction * na + k[..., None] * r + jr

    b = _Builder()
    Us, Ut = lat._phases(geom, A, W)
    zs = np.roll(z, -1, axis=0)
    zt = np.roll(z, -1, axis=1)

    row_re = site[..., None] * N + nu
    row_im = nz + row_re

    def add_complex(coef, cols_re, cols_im):
        b.add(row_re, cols_re, coef.real)
        b.add(row_re, cols_im, -coef.imag)
        b.add(row_im, cols_re, coef.imag)
        b.add(row_im, cols_im, coef.real)

    c0 = -0.5 * (1.0 / hs + 1j / ht) * np.ones((Ns, Nt, N))
    add_complex(c0, zc(site, 0), zc(site, 1))
    add_complex(0.5 * Us / hs, zc(sp_s, 0), zc(sp_s, 1))
    add_complex(0.5j * Ut / ht, zc(sp_t, 0), zc(sp_t, 1))

    # link derivatives of res1: (Ns, Nt, N, r)
    ds = -0.5j * (Us * zs)[..., None] * W[None, None, :, :]
    dt = 0.5 * (Ut * zt)[..., None] * W[None, None, :, :]
    cs = ac(site, 0)[..., None, :]
    ct = ac(site, 1)[..., None, :]
    b.add(row_re[..., None], cs, ds.real)
    b.add(row_im[..., None], cs, ds.imag)
    b.add(row_re[..., None], ct, dt.real)
    b.add(row_im[..., None], ct, dt.imag)

    # slice: sum_nu W Im(conj z dz) - div alpha
    row_sl = 2 * nz + site[..., None] * r + jr
    p, q = z.real, z.imag
    b.add(row_sl[..., None, :], zc(site, 0)[..., :, None], (-q)[..., :, None] * W[None, None])
    b.add(row_sl[..., None, :], zc(site, 1)[..., :, None], p[..., :, None] * W[None, None])
    b.add(row_sl, ac(site, 0), -1.0 / hs)
    b.add(row_sl, ac(sm_s, 0), 1.0 / hs)
    b.add(row_sl, ac(site, 1), -1.0 / ht)
    b.add(row_sl, ac(sm_t, 1), 1.0 / ht)

    # res2: lambda^-2 * site-average curvature + eps^-2 mu
    row_r2 = 2 * nz + na + site[..., None] * r + jr
    b.add(row_r2[..., None, :], zc(site, 0)[..., :, None], (p / eps2)[..., :, None] * W[None, None])
    b.add(row_r2[..., None, :], zc(site, 1)[..., :, None], (q / eps2)[..., :, None] * W[None, None])
    w4 = (0.25 / lam2)[..., None]
    for di, dj in ((0, 0), (-1, 0), (0, -1), (-1, -1)):
        pl = np.roll(np.roll(site, -di, axis=0), -dj, axis=1)  # plaquette lower-left corner
        pl_s = np.roll(pl, -1, axis=0)
        pl_t = np.roll(pl, -1, axis=1)
        b.add(row_r2, ac(pl, 0), w4 / ht)
        b.add(row_r2, ac(pl_s, 1), w4 / hs)
        b.add(row_r2, ac(pl_t, 0), -w4 / ht)
        b.add(row_r2, ac(pl, 1), -w4 / hs)

    return LinearizedOp(b.build(2 * nz + 2 * na), N, r, S)


def residual_vector(state: VortexState, model: WeightModel) -> np.ndarray:
    """Nonlinear residual in the row layout of :func:`assemble_D`, slice block zero."""
    from .core import residual

    r1, r2 = residual(state, model)
    S = state.geom.n_sites
    return np.concatenate([r1.real.ravel(), r1.imag.ravel(), np.zeros(S * state.r), r2.ravel()])


def slice_vector(state: VortexState, model: WeightModel, direction: np.ndarray) -> np.ndarray:
    """Slice functional applied to a tangent vector (linear, evaluated at ``state``)."""
    return assemble_D(state, model).matrix @ direction


def gauge_direction(state: VortexState, model: WeightModel, g: np.ndarray) -> np.ndarray:
    """Tangent vector ``(i W g z, dg)`` of the infinitesimal gauge action."""
    dz = 1j * (g @ np.asarray(model.W, dtype=float).T) * state.z
    dgs, dgt = lat.lattice_differential(state.geom, g)
    return np.concatenate([dz.real.ravel(), dz.imag.ravel(), dgs.ravel(), dgt.ravel()])


def operator_norm(op: LinearizedOp, seed: int = 0) -> float:
    """Largest singular value."""
    try:
        s = spla.svds(op.matrix, k=1, which="LM", return_singular_vectors=False, random_state=seed)
    except Exception as exc:  # pragma: no cover - ARPACK failure
        raise SpectralFailure(f"norm estimate failed: {exc}") from exc
    return float(s[0])


def smallest_singular_values(op: LinearizedOp, k: int, seed: int = 0) -> np.ndarray:
    """The ``k`` smallest singular values via shift-invert on the normal equations.

    Applies ``(M^T M)^{-1} = M^{-1} M^{-T}`` through one sparse LU factorisation
    and extracts the largest eigenvalues with Lanczos.  A matrix that is
    singular to working precision yields zeros for the missing values.
    """
    M = op.matrix.tocsc()
    n = M.shape[0]
    k = min(k, n - 2)
    try:
        lu = spla.splu(M, permc_spec="COLAMD")
    except RuntimeError:
        # exactly singular: shift slightly to keep the factorisation alive
        shift = 1e-14 * max(1.0, abs(M).max())
        lu = spla.splu((M + shift * sp.identity(n, format="csc")).tocsc(), permc_spec="COLAMD")

    def matvec(x):
        return lu.solve(lu.solve(np.asarray(x, dtype=float).ravel(), trans="T"))

    opinv = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    try:
        vals = spla.eigsh(opinv, k=k, which="LM", v0=v0, return_eigenvectors=False, tol=1e-12, maxiter=10 * n)
    except spla.ArpackNoConvergence as exc:
        raise SpectralFailure(f"Lanczos did not converge: {exc}") from exc
    vals = np.sort(np.abs(vals))[::-1]
    with np.errstate(divide="ignore"):
        sv = np.where(vals > 0, 1.0 / np.sqrt(vals), np.inf)
    return np.sort(sv)


def moduli_dimension_probe(
    op: LinearizedOp,
    theta_low: float,
    theta_high: float,
    expected: int = 0,
    seed: int = 0,
    relative: bool = False,
) -> IndexReport:
    """Count small singular values, certified by a gap.

    With ``relative=True`` the thresholds are multiplied by the operator norm.
    The kernel dimension is the number of singular values below ``theta_low``;
    the count is conclusive only if the next one exceeds ``theta_high``.
    """
    if not theta_low < theta_high:
        raise ValueError(f"need theta_low < theta_high, got {theta_low} >= {theta_high}")
    norm = operator_norm(op, seed) if relative else float("nan")
    lo = theta_low * norm if relative else theta_low
    hi = theta_high * norm if relative else theta_high
    sv = smallest_singular_values(op, expected + 2, seed)
    kdim = int(np.sum(sv < lo))
    nxt = sv[kdim] if kdim < len(sv) else math.inf
    below = sv[kdim - 1] if kdim > 0 else 0.0
    gap = float(nxt / below) if below > 0 else math.inf
    conclusive = bool(kdim < len(sv) and nxt > hi)
    return IndexReport(list(sv), lo, hi, gap, kdim, conclusive, None, norm)


def index_formula(g: int, n: int, dimG: int, c1B: int, k: int = 0) -> int:
    """Expected dimension ``(2 - 2g)(n - dim G) + 2 <c1, B> + k (2 + dim G)``."""
    for name, v in (("g", g), ("n", n), ("dimG", dimG), ("c1B", c1B), ("k", k)):
        if int(v) != v:
            raise ValueError(f"{name} must be an integer, got {v!r}")
    if g < 0 or k < 0 or dimG < 0 or n < dimG:
        raise ValueError("need g >= 0, k >= 0 and n >= dimG >= 0")
    return int((2 - 2 * g) * (n - dimG) + 2 * c1B + k * (2 + dimG))
