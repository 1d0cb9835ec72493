"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 honest negative
result (no convergence, a failed check, no balancing point).  Machine output
is JSON (sorted keys, so reruns are byte-identical); plot series are CSV.
Wall-clock timestamps go only to ``run.log`` in the output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

COMMANDS = ("solve", "check", "scan-tau", "scan-eps", "index", "balance", "flow")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="symvortex", description="Abelian vortex solver and diagnostics on lattice tori.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="PRNG seed (overrides seed)")
    p.add_argument("--threads", type=int, help="cap on BLAS/OpenMP worker threads")
    p.add_argument("--snapshot", help="state snapshot for 'check'")
    return p


def _json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def _jsonl(objs) -> str:
    return "".join(json.dumps(_plain(o), sort_keys=True) + "\n" for o in objs)


def _plain(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v != v or v in (float("inf"), float("-inf")):
            return repr(v)
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


class Outputs:
    """Collects artefacts and writes them atomically once a command has finished."""

    def __init__(self, directory: str):
        self.directory = directory
        self.files: dict[str, bytes | str] = {}

    def add(self, name, data):
        self.files[name] = data

    def flush(self, log_line: str):
        from .fieldio import atomic_write

        os.makedirs(self.directory, exist_ok=True)
        for name in sorted(self.files):
            atomic_write(os.path.join(self.directory, name), self.files[name])
        with open(os.path.join(self.directory, "run.log"), "a") as fh:
            fh.write(log_line)


def _geometry(cfg):
    from . import lattice as lat

    g = cfg["geometry"]
    return lat.make_torus(g["Ns"], g["Nt"], g["Ls"], g["Lt"], g["lambda"])


def _model(cfg):
    from .target import make_model

    return make_model(cfg["model"]["W"], cfg["model"]["tau"])


def _init_spec(cfg) -> dict:
    from .config import require_seed

    spec = {k: v for k, v in (cfg["solve"].get("init") or {}).items() if v is not None}
    spec.setdefault("kind", "random")
    if spec["kind"] in ("random", "coarse"):
        spec.setdefault("seed", require_seed(cfg))
    return spec


def cmd_solve(cfg, out: Outputs) -> int:
    from .core import energy_identity
    from .config import solve_options
    from .fieldio import csv_text, snapshot_bytes
    import warnings

    geom, model = _geometry(cfg), _model(cfg)
    opts = solve_options(cfg)
    spec = _init_spec(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        state, rec = solve_vortex_cfg(geom, model, cfg, spec, opts)
    out.add("state.snap", snapshot_bytes(state))
    out.add("state.csv", csv_text(state))
    out.add("energy.json", _json(energy_identity(state, model).to_dict()))
    out.add("record.jsonl", _jsonl([rec.to_dict()]))
    print(_json({"converged": rec.converged, "residual": rec.residual, "energy": rec.energy,
                 "pairing": rec.pairing, "notes": rec.notes}), end="")
    return 0 if rec.converged else 2


def solve_vortex_cfg(geom, model, cfg, spec, opts):
    from .solver import solve_vortex

    return solve_vortex(geom, model, cfg["solve"]["d"], spec, opts, epsilon=cfg["model"]["epsilon"])


def cmd_check(cfg, out: Outputs, snapshot: str | None) -> int:
    import numpy as np

    from . import lattice as lat
    from .core import energy_identity, residual_norms, sup_bound_check, zero_count
    from .errors import AmbiguousZero, NotASolution, NotProper
    from .fieldio import read_snapshot

    path = snapshot or cfg["check"].get("snapshot")
    if not path:
        raise UsageError("check needs --snapshot or check.snapshot")
    state = read_snapshot(path)
    model = _model(cfg)
    c = cfg["check"]
    eb = energy_identity(state, model)
    r1, r2 = residual_norms(state, model)
    verdict: dict = {"energy": eb.to_dict(), "res1_rms": r1, "res2_rms": r2}
    ok_identity = eb.identity_gap <= c["identity_tol"] * max(1.0, abs(eb.E))
    verdict["identity_ok"] = ok_identity

    rng = np.random.default_rng(cfg.get("seed") or 0)
    worst = 0.0
    for _ in range(int(c["gauge_trials"])):
        g = rng.uniform(-np.pi, np.pi, size=(*state.geom.shape, state.r))
        z2, A2 = lat.gauge_transform(state.geom, g, state.z, state.A, model.W)
        eb2 = energy_identity(state.replace(z=z2, A=A2), model)
        for a, b in zip((eb.E, eb.dbar2, eb.resid2, eb.pairing), (eb2.E, eb2.dbar2, eb2.resid2, eb2.pairing)):
            worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    verdict["gauge_defect"] = worst
    ok_gauge = worst <= 1e-10
    verdict["gauge_ok"] = ok_gauge

    solved = max(r1, r2) <= c["residual_tol"]
    verdict["residual_ok"] = solved
    try:
        verdict["sup_bound"] = sup_bound_check(state, model, residual_tol=c["residual_tol"])
        ok_sup = verdict["sup_bound"]["satisfied"]
    except (NotASolution, NotProper) as exc:
        verdict["sup_bound"] = {"error": str(exc)}
        ok_sup = False
    try:
        verdict["zero_count"] = zero_count(state, model)
        ok_zero = verdict["zero_count"] == int(np.sum(np.asarray(state.A.degree) * model.W[0]))
    except AmbiguousZero as exc:
        verdict["zero_count"] = {"error": str(exc)}
        ok_zero = False
    verdict["zero_count_ok"] = ok_zero
    passed = bool(ok_identity and ok_gauge and solved and ok_sup and ok_zero)
    verdict["pass"] = passed
    out.add("check.json", _json(verdict))
    print(_json(verdict), end="")
    return 0 if passed else 2


def cmd_scan_tau(cfg, out: Outputs) -> int:
    import numpy as np

    from .config import require_seed, solve_options
    from .solver import tau_scan

    grid = cfg.get("scan_tau", {}).get("grid") or []
    if not grid:
        raise UsageError("scan-tau needs scan_tau.grid")
    require_seed(cfg)
    geom, model = _geometry(cfg), _model(cfg)
    recs = tau_scan(geom, model, cfg["solve"]["d"], grid, solve_options(cfg))
    out.add("scan_tau.jsonl", _jsonl([r.to_dict() for r in recs]))
    out.add("scan_tau.csv", _csv(["tau", "residual_energy", "pairing", "converged"],
                                 [(r.control, r.residual_energy, r.pairing, float(r.converged)) for r in recs]))
    print(_jsonl([{"tau": r.control, "converged": r.converged, "pairing": r.pairing} for r in recs]), end="")
    return 0 if all(r.converged or r.below_threshold for r in recs) else 2


def cmd_scan_eps(cfg, out: Outputs) -> int:
    import numpy as np

    from .config import solve_options
    from .solver import epsilon_continuation

    sched = cfg.get("scan_eps", {}).get("schedule") or []
    if not sched:
        raise UsageError("scan-eps needs scan_eps.schedule")
    geom, model = _geometry(cfg), _model(cfg)
    opts = solve_options(cfg)
    cfg = dict(cfg, model=dict(cfg["model"], epsilon=sched[0]))
    state, head = solve_vortex_cfg(geom, model, cfg, _init_spec(cfg), opts)
    if not head.converged:
        out.add("scan_eps.jsonl", _jsonl([head.to_dict()]))
        return 2
    recs = epsilon_continuation(state, model, sched, opts)
    out.add("scan_eps.jsonl", _jsonl([r.to_dict() for r in recs]))
    out.add("scan_eps.csv", _csv(["epsilon", "sup_mu"], [(r.control, r.sup_mu) for r in recs]))
    eps = np.array([r.control for r in recs])
    sup = np.array([r.sup_mu for r in recs])
    slope = float(np.polyfit(np.log(eps), np.log(sup), 1)[0]) if len(recs) > 1 else float("nan")
    print(_json({"slope": slope, "converged": [r.converged for r in recs]}), end="")
    return 0 if all(r.converged for r in recs) else 2


def cmd_index(cfg, out: Outputs) -> int:
    from .linearization import assemble_D, index_formula, moduli_dimension_probe

    ix = cfg["index"]
    missing = [k for k in ("g", "n", "dimG", "c1B") if ix.get(k) is None]
    if missing:
        raise UsageError(f"index needs {missing}")
    value = index_formula(ix["g"], ix["n"], ix["dimG"], ix["c1B"], ix.get("k", 0))
    report = {"index": value}
    code = 0
    if ix.get("probe"):
        from .config import solve_options

        geom, model = _geometry(cfg), _model(cfg)
        state, rec = solve_vortex_cfg(geom, model, cfg, _init_spec(cfg), solve_options(cfg))
        if not rec.converged:
            report["probe"] = {"error": "no converged solution to probe"}
            code = 2
        else:
            expected = ix.get("expected")
            expected = value if expected is None else expected
            rep = moduli_dimension_probe(assemble_D(state, model), ix["theta_low"], ix["theta_high"],
                                         expected=expected, seed=cfg.get("seed") or 0, relative=True)
            rep.formula_index = value
            report["probe"] = rep.to_dict()
    out.add("index.json", _json(report))
    print(value)
    return code


def cmd_balance(cfg, out: Outputs) -> int:
    import csv as _csv_mod

    from .errors import NoConvergence
    from .mobius import BalanceOptions, balance, make_measure

    b = cfg["balance"]
    path = b.get("measure")
    if not path:
        raise UsageError("balance needs balance.measure (CSV with x,y,z,w)")
    try:
        with open(path) as fh:
            rows = [r for r in _csv_mod.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise UsageError(f"cannot read measure: {exc}") from None
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    pts = [[float(v) for v in r[:3]] for r in rows]
    w = [float(r[3]) if len(r) > 3 else 1.0 for r in rows]
    measure = make_measure(pts, w, normalize=True)
    kw = {k: b[k] for k in ("max_iters", "homotopy_steps") if b.get(k) is not None}
    try:
        bp = balance(measure, b["tol"], BalanceOptions(**kw))
        result, code = dict(bp.to_dict(), converged=True), 0
    except NoConvergence as exc:
        result = {"converged": False, "eta": [float(v) for v in exc.best], "residual": exc.residual,
                  "message": str(exc)}
        code = 2
    out.add("balance.json", _json(result))
    print(_json(result), end="")
    return code


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def cmd_flow(cfg, out: Outputs) -> int:
    import numpy as np

    from .eqflow import critical_check, flow_integrate, flow_state, lagrangian, parse_hamiltonian

    f = cfg["flow"]
    model = _model(cfg)
    if not f.get("hamiltonian"):
        raise UsageError("flow needs flow.hamiltonian")
    H = parse_hamiltonian(f["hamiltonian"], model.N, f.get("params") or {})
    x0 = f.get("x0")
    if x0 is None:
        raise UsageError("flow needs flow.x0 as [[re, im], ...]")
    x = np.array([complex(a, b) for a, b in x0])
    eta = np.asarray(f.get("eta0") or [0.0] * model.r, dtype=float)
    traj = flow_integrate(flow_state(x, eta), model, H, float(f["dt"]), int(f["steps"]),
                          stop_tol=f.get("stop_tol"))
    rows = []
    for s in traj:
        rows.append([s.t, *np.abs(s.x) ** 2, *s.eta, lagrangian(s.x, s.eta, model, H)])
    header = ["t"] + [f"abs2_x{k}" for k in range(model.N)] + [f"eta{k}" for k in range(model.r)] + ["L"]
    out.add("trajectory.csv", _csv(header, rows))
    end = traj[-1]
    L = np.array([r[-1] for r in rows])
    summary = {
        "steps": len(traj) - 1,
        "final_x": [[float(v.real), float(v.imag)] for v in end.x],
        "final_eta": end.eta,
        "max_L_increase": float(np.max(np.diff(L))) if len(L) > 1 else 0.0,
        "critical": critical_check(end.x, end.eta, model, H, 1e-6),
    }
    out.add("flow.json", _json(summary))
    print(_json(summary), end="")
    return 0 if summary["critical"] else 2


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    if args.threads is not None:
        if args.threads < 1:
            print("usage error: --threads must be >= 1", file=sys.stderr)
            return 1
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .config import load_config
    from .errors import ConfigError, ShapeMismatch, SnapshotVersionMismatch, VortexError

    try:
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.out is not None:
            over["output_dir"] = args.out
        cfg = load_config(args.config, overrides=over)
        out = Outputs(cfg["output_dir"])
        handlers = {
            "solve": lambda: cmd_solve(cfg, out),
            "check": lambda: cmd_check(cfg, out, args.snapshot),
            "scan-tau": lambda: cmd_scan_tau(cfg, out),
            "scan-eps": lambda: cmd_scan_eps(cfg, out),
            "index": lambda: cmd_index(cfg, out),
            "balance": lambda: cmd_balance(cfg, out),
            "flow": lambda: cmd_flow(cfg, out),
        }
        code = handlers[args.command]()
    except (UsageError, ConfigError, ShapeMismatch, SnapshotVersionMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 1
    except VortexError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
    out.flush(f"{stamp} {args.command} exit={code}\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
