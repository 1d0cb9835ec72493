"""Versioned on-disk formats for vortex states, and atomic file writes.

Binary snapshot (all numbers little-endian)::

    16 bytes   magic  b"SYMVTX-SNAPSHOT\\n"
    uint32 x5  version, Ns, Nt, N, r
    float64 x3 Ls, Lt, epsilon
    int64 x r  degree
    float64    lambda (Ns*Nt), Re z, Im z (Ns*Nt*N each), a_s, a_t (Ns*Nt*r each)

Arrays are stored in C order of their ``(Ns, Nt, ...)`` shapes.

CSV: one header line ``# symvortex-field v1 Ns=.. Nt=.. N=.. r=.. Ls=.. Lt=.. epsilon=.. degree=d1;d2``
then a column header and one row per site:
``i, j, s, t, lambda, re_z0, im_z0, ..., a_s0, a_t0, ...``.  Floats are
written with ``repr`` so a round trip is exact.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile

import numpy as np

from . import lattice as lat
from .core import VortexState
from .errors import SnapshotVersionMismatch

MAGIC = b"SYMVTX-SNAPSHOT\n"
VERSION = 1
CSV_TAG = "symvortex-field"
_HEAD = struct.Struct("<5I3d")


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory and rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def snapshot_bytes(state: VortexState) -> bytes:
    g = state.geom
    parts = [
        MAGIC,
        _HEAD.pack(VERSION, g.Ns, g.Nt, state.N, state.r, g.Ls, g.Lt, state.epsilon),
        np.asarray(state.A.degree, dtype="<i8").tobytes(),
    ]
    for arr in (g.lam, state.z.real, state.z.imag, state.A.a_s, state.A.a_t):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def write_snapshot(path, state: VortexState) -> None:
    atomic_write(path, snapshot_bytes(state))


def parse_snapshot(blob: bytes) -> VortexState:
    if blob[:16] != MAGIC:
        raise SnapshotVersionMismatch("not a snapshot file (bad magic)")
    version, Ns, Nt, N, r, Ls, Lt, eps = _HEAD.unpack_from(blob, 16)
    if version != VERSION:
        raise SnapshotVersionMismatch(f"snapshot version {version}, this build reads {VERSION}")
    off = 16 + _HEAD.size
    degree = np.frombuffer(blob, dtype="<i8", count=r, offset=off).astype(np.int64)
    off += 8 * r

    def take(count, shape):
        nonlocal off
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(float).reshape(shape)
        off += 8 * count
        return arr

    S = Ns * Nt
    lam = take(S, (Ns, Nt))
    z = take(S * N, (Ns, Nt, N)) + 1j * take(S * N, (Ns, Nt, N))
    a_s = take(S * r, (Ns, Nt, r))
    a_t = take(S * r, (Ns, Nt, r))
    if off != len(blob):
        raise SnapshotVersionMismatch(f"snapshot has {len(blob) - off} trailing bytes")
    geom = lat.make_torus(Ns, Nt, Ls, Lt, lam)
    return VortexState(geom, z, lat.link_field(a_s, a_t, degree), eps)


def read_snapshot(path) -> VortexState:
    with open(path, "rb") as fh:
        return parse_snapshot(fh.read())


def csv_text(state: VortexState) -> str:
    g = state.geom
    N, r = state.N, state.r
    buf = io.StringIO()
    deg = ";".join(str(int(v)) for v in state.A.degree)
    buf.write(
        f"# {CSV_TAG} v{VERSION} Ns={g.Ns} Nt={g.Nt} N={N} r={r} "
        f"Ls={g.Ls!r} Lt={g.Lt!r} epsilon={state.epsilon!r} degree={deg}\n"
    )
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "s", "t", "lambda"]
               + [f"{p}_z{k}" for k in range(N) for p in ("re", "im")]
               + [f"a_{p}{k}" for k in range(r) for p in ("s", "t")])
    for i in range(g.Ns):
        for j in range(g.Nt):
            row = [i, j, repr(i * g.hs), repr(j * g.ht), repr(float(g.lam[i, j]))]
            for k in range(N):
                row += [repr(float(state.z[i, j, k].real)), repr(float(state.z[i, j, k].imag))]
            for k in range(r):
                row += [repr(float(state.A.a_s[i, j, k])), repr(float(state.A.a_t[i, j, k]))]
            w.writerow(row)
    return buf.getvalue()


def write_csv(path, state: VortexState) -> None:
    atomic_write(path, csv_text(state))


def parse_csv(text: str) -> VortexState:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# {CSV_TAG} "):
        raise SnapshotVersionMismatch("missing field-CSV header")
    tokens = lines[0][2:].split()
    if tokens[1] != f"v{VERSION}":
        raise SnapshotVersionMismatch(f"CSV version {tokens[1]}, this build reads v{VERSION}")
    meta = dict(t.split("=", 1) for t in tokens[2:])
    Ns, Nt, N, r = (int(meta[k]) for k in ("Ns", "Nt", "N", "r"))
    degree = [int(v) for v in meta["degree"].split(";")]
    rows = list(csv.reader(lines[2:]))
    if len(rows) != Ns * Nt:
        raise ValueError(f"expected {Ns * Nt} site rows, found {len(rows)}")
    lam = np.empty((Ns, Nt))
    z = np.empty((Ns, Nt, N), dtype=complex)
    a_s = np.empty((Ns, Nt, r))
    a_t = np.empty((Ns, Nt, r))
    for row in rows:
        i, j = int(row[0]), int(row[1])
        vals = [float(v) for v in row[4:]]
        lam[i, j] = vals[0]
        zz = vals[1 : 1 + 2 * N]
        z[i, j] = np.array(zz[0::2]) + 1j * np.array(zz[1::2])
        aa = vals[1 + 2 * N :]
        a_s[i, j] = aa[0::2]
        a_t[i, j] = aa[1::2]
    geom = lat.make_torus(Ns, Nt, float(meta["Ls"]), float(meta["Lt"]), lam)
    return VortexState(geom, z, lat.link_field(a_s, a_t, degree), float(meta["epsilon"]))


def read_csv(path) -> VortexState:
    with open(path) as fh:
        return parse_csv(fh.read())
