"""Flat-torus lattice, abelian link fields with integer flux, covariant differences.

Conventions (used consistently across the package):

* sites are indexed ``(i, j)`` with ``i`` along ``s`` and ``j`` along ``t``;
  site fields have shape ``(Ns, Nt, ...)``.
* link ``s`` at site ``x`` joins ``x`` to ``x + s``; its value ``a_s[x]`` is a
  connection component (per unit length), so the transported phase is
  ``theta = a * h``.
* plaquette ``(i, j)`` has corners ``(i, j), (i+1, j), (i+1, j+1), (i, j+1)``
  traversed counterclockwise.
* covariant difference ``D_s z(x) = (exp(-i W theta_s(x)) z(x+s) - z(x)) / hs``,
  the lattice version of ``d z - i W a z``.
* gauge transformations act by ``z -> exp(+i W g) z`` and ``a -> a + dg``.
* the bundle twist is a Dirac string: plaquette ``(Ns-1, Nt-1)`` carries an
  extra ``2 pi d`` in its curvature, so link values stay periodic and real
  while the total flux is exactly ``2 pi d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryMismatch, NonPositiveConformalFactor, NonPositiveDimension, ShapeMismatch

PROFILES = ("uniform", "seam", "random_plus_flux")


@dataclass(frozen=True, eq=False)
class TorusGeometry:
    Ns: int
    Nt: int
    Ls: float
    Lt: float
    lam: np.ndarray = field(repr=False)

    @property
    def hs(self) -> float:
        return self.Ls / self.Ns

    @property
    def ht(self) -> float:
        return self.Lt / self.Nt

    @property
    def area(self) -> float:
        """Coordinate area of one cell."""
        return self.hs * self.ht

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Ns, self.Nt)

    @property
    def n_sites(self) -> int:
        return self.Ns * self.Nt

    @property
    def lam2(self) -> np.ndarray:
        return self.lam**2

    @property
    def volume(self) -> float:
        # mean first so a constant factor gives exactly lam^2 * Ls * Lt
        return float(np.mean(self.lam2) * self.Ls * self.Lt)

    def same_as(self, other: "TorusGeometry") -> bool:
        return (
            self.Ns == other.Ns
            and self.Nt == other.Nt
            and self.Ls == other.Ls
            and self.Lt == other.Lt
            and np.array_equal(self.lam, other.lam)
        )


def make_torus(Ns: int, Nt: int, Ls: float = 1.0, Lt: float = 1.0, lambda_spec=1.0) -> TorusGeometry:
    """Build a torus geometry.

    ``lambda_spec`` is either a positive scalar or a positive ``(Ns, Nt)`` table.
    """
    if int(Ns) != Ns or int(Nt) != Nt or Ns < 4 or Nt < 4:
        raise NonPositiveDimension(f"site counts must be integers >= 4, got {Ns}x{Nt}")
    if not (Ls > 0 and Lt > 0) or not (math.isfinite(Ls) and math.isfinite(Lt)):
        raise NonPositiveDimension(f"side lengths must be positive, got {Ls}, {Lt}")
    lam = np.asarray(lambda_spec, dtype=float)
    if lam.ndim == 0:
        lam = np.full((int(Ns), int(Nt)), float(lam))
    if lam.shape != (Ns, Nt):
        raise GeometryMismatch(f"lambda table has shape {lam.shape}, expected {(Ns, Nt)}")
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        raise NonPositiveConformalFactor("conformal factor must be finite and > 0 at every site")
    lam = lam.copy()
    lam.setflags(write=False)
    return TorusGeometry(int(Ns), int(Nt), float(Ls), float(Lt), lam)


@dataclass(frozen=True, eq=False)
class LinkField:
    """Real link values ``a_s, a_t`` of shape ``(Ns, Nt, r)`` plus the integer degree."""

    a_s: np.ndarray
    a_t: np.ndarray
    degree: np.ndarray

    @property
    def r(self) -> int:
        return self.a_s.shape[-1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.a_s.shape[:2]

    def twist(self) -> np.ndarray:
        """Integer plaquette array carrying the transition (Dirac string) of the bundle."""
        Ns, Nt = self.shape
        n = np.zeros((Ns, Nt, self.r), dtype=np.int64)
        n[Ns - 1, Nt - 1, :] = self.degree
        return n

    def __add__(self, other: "LinkField") -> "LinkField":
        return LinkField(self.a_s + other.a_s, self.a_t + other.a_t, self.degree + other.degree)


def link_field(a_s, a_t, degree) -> LinkField:
    a_s = np.array(a_s, dtype=float)
    a_t = np.array(a_t, dtype=float)
    deg = np.atleast_1d(np.array(degree, dtype=np.int64))
    if a_s.shape != a_t.shape or a_s.ndim != 3 or a_s.shape[-1] != deg.shape[0]:
        raise ShapeMismatch(f"link arrays {a_s.shape}, {a_t.shape} incompatible with degree {deg}")
    return LinkField(a_s, a_t, deg)


def zero_links(geom: TorusGeometry, r: int = 1) -> LinkField:
    z = np.zeros((geom.Ns, geom.Nt, r))
    return LinkField(z, z.copy(), np.zeros(r, dtype=np.int64))


def _check(geom: TorusGeometry, A: LinkField) -> None:
    if A.shape != geom.shape:
        raise GeometryMismatch(f"link field {A.shape} does not live on a {geom.shape} torus")


def plaquette_phase(geom: TorusGeometry, A: LinkField) -> np.ndarray:
    """Oriented sum of link phases around each plaquette (without the twist)."""
    _check(geom, A)
    th_s = A.a_s * geom.hs
    th_t = A.a_t * geom.ht
    return th_s + np.roll(th_t, -1, axis=0) - np.roll(th_s, -1, axis=1) - th_t


def curvature(geom: TorusGeometry, A: LinkField) -> np.ndarray:
    """Curvature density per plaquette, shape ``(Ns, Nt, r)``.

    ``curvature * area`` summed over plaquettes is ``2 pi d`` for each generator.
    """
    return (plaquette_phase(geom, A) + 2.0 * np.pi * A.twist()) / geom.area


def total_flux(geom: TorusGeometry, A: LinkField) -> np.ndarray:
    """Exact total flux per generator.

    The link contributions telescope; summing them with ``math.fsum`` makes the
    cancellation exact, so the result is ``2 pi d`` to the last bit.
    """
    _check(geom, A)
    th_s = A.a_s * geom.hs
    th_t = A.a_t * geom.ht
    out = np.empty(A.r)
    for j in range(A.r):
        terms = np.concatenate(
            [
                th_s[..., j].ravel(),
                np.roll(th_t, -1, axis=0)[..., j].ravel(),
                -np.roll(th_s, -1, axis=1)[..., j].ravel(),
                -th_t[..., j].ravel(),
            ]
        )
        out[j] = math.fsum(terms) + 2.0 * np.pi * float(A.degree[j])
    return out


def site_average(plaq: np.ndarray) -> np.ndarray:
    """Mean of the four plaquettes touching each site."""
    return 0.25 * (
        plaq
        + np.roll(plaq, 1, axis=0)
        + np.roll(plaq, 1, axis=1)
        + np.roll(np.roll(plaq, 1, axis=0), 1, axis=1)
    )


def site_curvature(geom: TorusGeometry, A: LinkField) -> np.ndarray:
    return site_average(curvature(geom, A))


def lattice_differential(geom: TorusGeometry, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences of a site field, as per-length link values."""
    g = np.asarray(g, dtype=float)
    return (np.roll(g, -1, axis=0) - g) / geom.hs, (np.roll(g, -1, axis=1) - g) / geom.ht


def links_from_plaquettes(geom: TorusGeometry, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Periodic link phases whose plaquette sums equal ``theta`` (which must sum to zero).

    Axial construction: ``t``-links accumulate along ``s``; the plaquette row
    totals are absorbed by ``s``-links on the last column.
    """
    Ns, Nt = geom.shape
    theta = np.asarray(theta, dtype=float)
    th_s = np.zeros_like(theta)
    th_t = np.zeros_like(theta)
    rows = theta.sum(axis=0)  # (Nt, r)
    # th_s[Ns-1, j] - th_s[Ns-1, j+1] = rows[j]
    col = np.zeros_like(rows)
    col[1:] = -np.cumsum(rows[:-1], axis=0)
    th_s[Ns - 1] = col
    th_t[1:] = np.cumsum(theta[:-1], axis=0)
    return th_s, th_t


def make_connection_with_flux(
    geom: TorusGeometry,
    d,
    profile: str = "uniform",
    seed: int = 0,
    amplitude: float = 1.0,
) -> LinkField:
    """Connection of degree ``d`` (one integer per generator).

    ``uniform`` spreads the flux so that ``curvature / lambda^2`` is constant on
    plaquettes, ``seam`` leaves it all in the twist plaquette, and
    ``random_plus_flux`` adds seeded random periodic links to ``uniform``.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    d = np.atleast_1d(np.asarray(d, dtype=np.int64))
    r = d.shape[0]
    Ns, Nt = geom.shape
    degree = d.copy()
    if profile == "seam":
        zeros = np.zeros((Ns, Nt, r))
        return LinkField(zeros, zeros.copy(), degree)
    lam2p = site_average_to_plaquette(geom.lam2)
    weights = lam2p / lam2p.sum()
    target = 2.0 * np.pi * weights[..., None] * d[None, None, :].astype(float)
    twist = np.zeros((Ns, Nt, r))
    twist[Ns - 1, Nt - 1] = 2.0 * np.pi * d
    theta = target - twist
    th_s, th_t = links_from_plaquettes(geom, theta)
    a_s = th_s / geom.hs
    a_t = th_t / geom.ht
    if profile == "random_plus_flux":
        rng = np.random.default_rng(seed)
        a_s = a_s + amplitude * rng.standard_normal(a_s.shape)
        a_t = a_t + amplitude * rng.standard_normal(a_t.shape)
    return LinkField(a_s, a_t, degree)


def site_average_to_plaquette(site: np.ndarray) -> np.ndarray:
    """Mean of the four corner values of each plaquette."""
    return 0.25 * (
        site
        + np.roll(site, -1, axis=0)
        + np.roll(site, -1, axis=1)
        + np.roll(np.roll(site, -1, axis=0), -1, axis=1)
    )


def _phases(geom: TorusGeometry, A: LinkField, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Transport factors ``exp(-i W theta)`` on s- and t-links, shape ``(Ns, Nt, N)``."""
    W = np.asarray(W, dtype=float)
    ps = (A.a_s @ W.T) * geom.hs
    pt = (A.a_t @ W.T) * geom.ht
    return np.exp(-1j * ps), np.exp(-1j * pt)


def covariant_differences(geom: TorusGeometry, A: LinkField, W: np.ndarray, z: np.ndarray):
    """Forward covariant differences ``(D_s z, D_t z)`` at every site."""
    _check(geom, A)
    z = np.asarray(z)
    W = np.asarray(W)
    if z.ndim != 3 or z.shape[:2] != geom.shape:
        raise ShapeMismatch(f"section shape {z.shape} does not match torus {geom.shape}")
    if W.shape != (z.shape[2], A.r):
        raise ShapeMismatch(f"weight matrix {W.shape} incompatible with N={z.shape[2]}, r={A.r}")
    Us, Ut = _phases(geom, A, W)
    Ds = (Us * np.roll(z, -1, axis=0) - z) / geom.hs
    Dt = (Ut * np.roll(z, -1, axis=1) - z) / geom.ht
    return Ds, Dt


def covariant_dbar(geom: TorusGeometry, A: LinkField, W: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``(D_s z + i D_t z) / 2`` at every site."""
    Ds, Dt = covariant_differences(geom, A, W, z)
    return 0.5 * (Ds + 1j * Dt)


def gauge_transform(geom: TorusGeometry, g: np.ndarray, z: np.ndarray, A: LinkField, W: np.ndarray):
    """Apply the gauge map ``g`` (shape ``(Ns, Nt, r)``) to a section and connection."""
    _check(geom, A)
    g = np.asarray(g, dtype=float)
    z = np.asarray(z)
    W = np.asarray(W, dtype=float)
    if g.shape != (geom.Ns, geom.Nt, A.r):
        raise ShapeMismatch(f"gauge map shape {g.shape}, expected {(geom.Ns, geom.Nt, A.r)}")
    if z.shape[:2] != geom.shape or W.shape != (z.shape[2], A.r):
        raise ShapeMismatch("section / weight shapes incompatible with gauge map")
    dgs, dgt = lattice_differential(geom, g)
    z_new = np.exp(1j * (g @ W.T)) * z
    return z_new, LinkField(A.a_s + dgs, A.a_t + dgt, A.degree.copy())
