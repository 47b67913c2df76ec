"""Command-line front end.

Every subcommand writes CSV data plus a JSON manifest sidecar into the
output directory.  Each CSV starts with a ``#`` comment block carrying the
manifest digest and the unit convention, followed by a header row.

Exit codes: 0 on success, 1 on a numerical failure, 2 on invalid arguments.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binom

from . import __version__
from .dynamics import (
    FockDistribution,
    auto_nmax,
    bose_einstein_reference,
    coefficients,
    distribution_distance,
    fock_distribution,
    master_equation_oracle,
    steady_distribution,
)
from .errors import InvalidParameters, NumericalError, PBGCavityError, StepTooLarge
from .fluctuation import mean_photon_number, thermal_grid_for, v_evolution, v_steady
from .model import ModelParams, params_from_config, read_config, validate
from .propagator import (
    DEFAULT_T_MAX,
    ZERO_THRESHOLD,
    default_dt,
    max_dt,
    solve_u_volterra,
    u_spectral,
)
from .spectral import (
    DEFAULT_TOL,
    Family,
    bose_occupation,
    build_spectral_grid,
    dissipation_spectrum,
    solve_localized_mode,
)

OUT_DIR_ENV = "PBGCAVITY_OUT_DIR"

DEFAULT_DELTAS_FIG1C = (-10.0, -2.5, 0.0, 2.5, 10.0)
DEFAULT_DELTAS = (-10.0, 0.0, 10.0)
DEFAULT_TEMPS = (20.0, 100.0, 1000.0)
DEFAULT_N0S = (5, 15, 25)

UNITS_NOTE = (
    "reduced units: frequencies, detunings and kT share the unit of omega_e; "
    "with C = 1 that unit is C**(2/3) and time is measured in its inverse"
)


# ---------------------------------------------------------------------------
# output plumbing


@dataclass
class RunManifest:
    """Everything that determines a run, plus what it wrote."""

    command: str
    params: dict
    numerics: dict
    outputs: list = field(default_factory=list)
    failed: int = 0

    def digest(self) -> str:
        body = {"command": self.command, "params": self.params, "numerics": self.numerics}
        return hashlib.sha256(_canonical(body).encode()).hexdigest()

    def to_json(self) -> str:
        doc = asdict(self)
        doc.pop("failed")
        doc["digest"] = self.digest()
        doc["version"] = __version__
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


_UMASK = _current_umask()


def atomic_write(path: Path, data: bytes):
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return x


class Writer:
    """Collects CSV outputs for one manifest."""

    def __init__(self, out_dir: Path, manifest: RunManifest):
        self.out_dir = Path(out_dir)
        self.manifest = manifest

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        buf.write(f"# pbgcavity {self.manifest.command}\n")
        buf.write(f"# manifest-sha256: {self.manifest.digest()}\n")
        buf.write(f"# {UNITS_NOTE}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        data = buf.getvalue().encode("utf-8")
        atomic_write(self.out_dir / name, data)
        self.manifest.outputs.append({"path": name, "sha256": hashlib.sha256(data).hexdigest()})

    def finish(self) -> Path:
        path = self.out_dir / f"{self.manifest.command}.manifest.json"
        atomic_write(path, self.manifest.to_json().encode("utf-8"))
        return path


def _tag(x: float) -> str:
    s = f"{x:g}".replace("-", "m").replace("+", "")
    return s.replace(".", "p")


def _pool_map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# per-cell workers (top level so they pickle)


def _series_cell(args):
    p, dt, t_max, tol = args
    u = solve_u_volterra(p, dt, t_max)
    v = v_evolution(u, p, thermal_grid_for(p, u.t_max, tol) if p.kT > 0 else None)
    return u, v


def _steady_cell(args):
    p, tol = args
    vs = v_steady(p, grid=build_spectral_grid(p, Family.THERMAL, tol)) if p.kT > 0 else 0.0
    return vs, float(bose_occupation(p.omega_c, p.kT))


def _fig4_cell(args):
    p, n0s, tol = args
    vs, nbar = _steady_cell((p, tol))
    out = []
    for n0 in n0s:
        nmax = max(auto_nmax(n0, vs), auto_nmax(0, nbar))
        dist = steady_distribution(p, n0, nmax=nmax, v_inf=vs)
        ref = bose_einstein_reference(p, nmax)
        out.append((n0, dist, ref, distribution_distance(dist, ref)))
    return out


def _sweep_cell(args):
    p, n0s, tol = args
    m = solve_localized_mode(p)
    vs, nbar = _steady_cell((p, tol))
    rows = []
    for n0 in n0s:
        nmax = max(auto_nmax(n0, vs), auto_nmax(0, nbar))
        dist = steady_distribution(p, n0, nmax=nmax, v_inf=vs)
        tv = distribution_distance(dist, bose_einstein_reference(p, nmax))
        rows.append((p.delta, p.kT, n0, m.residue_Z, vs, nbar, m.residue_Z**2 * n0 + vs, tv))
    return rows


# ---------------------------------------------------------------------------
# subcommands


def _numerics(args, **extra) -> dict:
    out = {"dt": args.dt, "t_max": args.tmax, "tol": args.tol}
    out.update(extra)
    return out


def _dt_for(args, p: ModelParams) -> float:
    return args.dt if args.dt is not None else default_dt(p)


def cmd_fig1c(args, base: ModelParams) -> RunManifest:
    ps = [base.with_(delta=d) for d in args.deltas]
    man = RunManifest("fig1c", {"base": asdict(base), "deltas": list(args.deltas)},
                      _numerics(args, stride=args.stride))
    out = Writer(args.out_dir, man)
    for p in ps:
        u = solve_u_volterra(p, _dt_for(args, p), args.tmax)
        header, rows = u.csv_rows()
        out.csv(f"fig1c_delta{_tag(p.delta)}.csv", header, list(rows)[:: args.stride])
    out.finish()
    return man


def cmd_fig1d(args, base: ModelParams) -> RunManifest:
    if args.steps < 2:
        raise InvalidParameters("--steps must be at least 2")
    lo, hi = args.delta_range
    deltas = np.linspace(lo, hi, args.steps)
    man = RunManifest("fig1d", {"base": asdict(base), "delta_range": [lo, hi], "steps": args.steps},
                      _numerics(args))
    out = Writer(args.out_dir, man)
    rows = []
    for d in deltas:
        m = solve_localized_mode(base.with_(delta=float(d)))
        rows.append((float(d), m.omega_b, m.residue_Z))
    out.csv("fig1d.csv", ["delta", "omega_b", "Z"], rows)
    out.finish()
    return man


def cmd_fig2(args, base: ModelParams) -> RunManifest:
    cells = [base.with_(delta=d, kT=k) for d in args.deltas for k in args.temps]
    lo, hi = args.sweep_range
    sweep = [base.with_(delta=float(d), kT=k) for k in args.temps for d in np.linspace(lo, hi, args.sweep_steps)]
    man = RunManifest(
        "fig2",
        {"base": asdict(base), "deltas": list(args.deltas), "temps": list(args.temps),
         "sweep_range": [lo, hi], "sweep_steps": args.sweep_steps, "n0": args.n0},
        _numerics(args, stride=args.stride),
    )
    out = Writer(args.out_dir, man)
    series = _pool_map(_series_cell, [(p, _dt_for(args, p), args.tmax, args.tol) for p in cells], args.threads)
    for p, (u, v) in zip(cells, series):
        n = mean_photon_number(args.n0, u, v)
        idx = range(0, len(v), args.stride)
        rows = ((v.times[i], v.values[i], v.v_dot[i], n[i]) for i in idx)
        out.csv(f"fig2_delta{_tag(p.delta)}_kT{_tag(p.kT)}.csv", ["t", "v", "v_dot", "n_mean"], rows)
    steady = _pool_map(_steady_cell, [(p, args.tol) for p in sweep], args.threads)
    rows = [(p.delta, p.kT, vs, nb) for p, (vs, nb) in zip(sweep, steady)]
    out.csv("fig2_steady.csv", ["delta", "kT", "v_steady", "bose_at_omega_c"], rows)
    out.finish()
    return man


def cmd_fig3(args, base: ModelParams) -> RunManifest:
    if args.n0 < 0:
        raise InvalidParameters("--n0 must be nonnegative")
    cells = [base.with_(delta=d, kT=k) for d in args.deltas for k in args.temps]
    man = RunManifest(
        "fig3",
        {"base": asdict(base), "deltas": list(args.deltas), "temps": list(args.temps), "n0": args.n0},
        _numerics(args, stride=args.stride, nmax_policy="auto: tail <= 1e-9 at max v"),
    )
    out = Writer(args.out_dir, man)
    series = _pool_map(_series_cell, [(p, _dt_for(args, p), args.tmax, args.tol) for p in cells], args.threads)
    for p, (u, v) in zip(cells, series):
        idx = np.arange(0, len(u), args.stride)
        nmax = auto_nmax(args.n0, float(np.max(v.values[idx])))
        rows = []
        for i in idx:
            dist = fock_distribution(args.n0, u.values[i], v.values[i], nmax)
            rows.extend((u.times[i], n, pr) for n, pr in enumerate(dist.probs))
        out.csv(f"fig3_delta{_tag(p.delta)}_kT{_tag(p.kT)}.csv", ["t", "n", "prob"], rows)
    out.finish()
    return man


def cmd_fig4(args, base: ModelParams) -> RunManifest:
    cells = [base.with_(delta=d, kT=k) for d in args.deltas for k in args.temps]
    man = RunManifest(
        "fig4",
        {"base": asdict(base), "deltas": list(args.deltas), "temps": list(args.temps), "n0": list(args.n0)},
        _numerics(args, nmax_policy="auto: tail <= 1e-9 for state and reference"),
    )
    out = Writer(args.out_dir, man)
    results = _pool_map(_fig4_cell, [(p, tuple(args.n0), args.tol) for p in cells], args.threads)
    rows = []
    for p, cell in zip(cells, results):
        for n0, dist, ref, tv in cell:
            for n, (pr, br) in enumerate(zip(dist.probs, ref.probs)):
                rows.append((p.delta, p.kT, n0, n, pr, br, tv))
    out.csv("fig4.csv", ["delta", "kT", "n0", "n", "prob", "bose_prob", "tv_distance"], rows)
    out.finish()
    return man


def cmd_sweep(args, base: ModelParams) -> RunManifest:
    cells = [base.with_(delta=d, kT=k) for d in args.deltas for k in args.temps]
    man = RunManifest(
        "sweep",
        {"base": asdict(base), "deltas": list(args.deltas), "temps": list(args.temps), "n0": list(args.n0)},
        _numerics(args),
    )
    out = Writer(args.out_dir, man)
    results = _pool_map(_sweep_cell, [(p, tuple(args.n0), args.tol) for p in cells], args.threads)
    rows = [r for cell in results for r in cell]
    header = ["delta", "kT", "n0", "Z", "v_steady", "bose_at_omega_c", "n_mean_steady", "tv_to_bose"]
    out.csv("sweep.csv", header, rows)
    out.finish()
    return man


# ---------------------------------------------------------------------------
# invariant suite


@dataclass
class CheckResult:
    name: str
    measured: float
    limit: float
    passed: bool
    note: str = ""


def _check(name, measured, limit, note=""):
    return CheckResult(name, float(measured), float(limit), bool(measured <= limit), note)


def _check_anchor(base, inject):
    # at zero detuning the cubic root is C**(1/3): omega_b = omega_e - C**(2/3), Z = 2/3
    p = base.with_(delta=0.0)
    m = solve_localized_mode(p)
    err = max(abs(m.residue_Z - 2.0 / 3.0), abs(m.omega_b - (p.omega_e - p.energy_unit)) / p.energy_unit)
    return _check("localized-mode anchor at delta=0", err, 1e-12)


def _check_sum_rule(base, inject, deltas):
    worst = 0.0
    for d in deltas:
        p = base.with_(delta=d)
        m = solve_localized_mode(p)
        z = m.residue_Z + (1e-3 if inject == "residue" else 0.0)
        grid = build_spectral_grid(p, Family.DISSIPATION, 1e-10)
        total = z + grid.integrate(lambda w: dissipation_spectrum(w, p))
        worst = max(worst, abs(total - 1.0))
    return _check("sum rule Z + int D_d = 1", worst, 1e-6, f"{len(deltas)} detunings")


def _check_routes(base, inject, deltas, t_max):
    worst = 0.0
    for d in deltas:
        p = base.with_(delta=d)
        u = solve_u_volterra(p, None, t_max)
        ref = u_spectral(u.times[::50], p)
        worst = max(worst, float(np.max(np.abs(u.values[::50] - ref))))
    return _check("Volterra vs spectral propagator", worst, 1e-4, f"t in [0, {t_max:g}]")


def _check_convergence(base, inject):
    p = base.with_(delta=0.0)
    t_max = 5.0
    h = default_dt(p)
    if inject == "dt":
        h = 2 * max_dt(p)
    try:
        us = [solve_u_volterra(p, h / k, t_max).values for k in (1, 2, 4)]
    except StepTooLarge as exc:
        return CheckResult("Volterra convergence order", math.nan, 3.5, False, f"StepTooLarge: {exc}")
    e1 = np.max(np.abs(us[0] - us[2][::4]))
    e2 = np.max(np.abs(us[1] - us[2][::2]))
    ratio = e1 / e2
    return CheckResult("Volterra convergence order", ratio, 3.5, bool(ratio >= 3.5), "error ratio per halving")


def _check_fock(base, inject):
    worst_norm = worst_mean = worst_binom = 0.0
    for n0, u, v in [(5, 0.6 + 0.2j, 0.4), (15, 0.3j, 1.7), (25, 0.9, 0.05)]:
        d = fock_distribution(n0, u, v, auto_nmax(n0, v))
        worst_norm = max(worst_norm, abs(d.total() + d.tail_bound - 1.0))
        worst_mean = max(worst_mean, abs(d.mean() - (abs(u) ** 2 * n0 + v)))
    for n0 in range(0, 31):
        om = 0.37
        d = fock_distribution(n0, math.sqrt(om), 0.0, n0)
        worst_binom = max(worst_binom, float(np.max(np.abs(d.probs - binom.pmf(np.arange(n0 + 1), n0, om)))))
    return [
        _check("Fock normalization", worst_norm, 1e-9),
        _check("Fock first moment", worst_mean, 1e-6),
        _check("binomial limit v=0", worst_binom, 1e-12),
    ]


def _check_oracle(base, inject, t_max):
    p = base.with_(delta=0.0, kT=100.0)
    u = solve_u_volterra(p, None, t_max)
    v = v_evolution(u, p)
    c = coefficients(u, v, ZERO_THRESHOLD)
    nmax = 12
    p0 = FockDistribution(np.eye(nmax + 1)[5], 0.0)
    r = master_equation_oracle(c, p0, nmax, closure="geometric")
    worst = 0.0
    for k in range(0, len(r.times), 10):
        ex = fock_distribution(5, u.values[2 * k], v.values[2 * k], 80)
        worst = max(worst, distribution_distance(FockDistribution(r.probs[k], 0.0), ex))
    return _check("master-equation oracle vs closed form", worst, 1e-3, "delta=0, kT=100, n0=5")


def _check_thermal(base, inject):
    p = base.with_(delta=10.0, kT=100.0)
    ratio = v_steady(p) / bose_occupation(p.omega_c, p.kT)
    return _check("thermal recovery at delta=10", abs(ratio - 1.0), 0.02)


def run_invariant_suite(base: ModelParams, profile: str = "default", inject: str = "none") -> list[CheckResult]:
    """Run the invariant checks and return one result per check."""
    quick = profile == "quick"
    deltas = [-10.0, 0.0, 10.0] if quick else list(np.linspace(-15, 15, 25))
    route_deltas = [0.0] if quick else list(DEFAULT_DELTAS_FIG1C)
    results = [
        _check_anchor(base, inject),
        _check_sum_rule(base, inject, deltas),
        _check_routes(base, inject, route_deltas, 3.0 if quick else 10.0),
        _check_convergence(base, inject),
    ]
    results.extend(_check_fock(base, inject))
    if not quick:
        results.append(_check_thermal(base, inject))
        results.append(_check_oracle(base, inject, 10.0))
    return results


def cmd_validate(args, base: ModelParams) -> RunManifest:
    man = RunManifest("validate", {"base": asdict(base)},
                      {"profile": args.profile, "inject": args.inject})
    results = run_invariant_suite(base, args.profile, args.inject)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{status}  {r.name:<{width}}  measured={r.measured:.3e}  limit={r.limit:.1e}"
        print(line + (f"  ({r.note})" if r.note else ""))
    out = Writer(args.out_dir, man)
    out.csv("validate.csv", ["check", "measured", "limit", "status"],
            [(r.name, r.measured, r.limit, "PASS" if r.passed else "FAIL") for r in results])
    out.finish()
    man.failed = sum(not r.passed for r in results)
    return man


# ---------------------------------------------------------------------------
# argument parsing


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _positive(kind):
    def parse(text):
        x = kind(text)
        if not x > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return x

    return parse


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbgcavity", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--omega-e", type=_positive(float), default=None, help="band-edge frequency (default 100)")
    ap.add_argument("--coupling", type=_positive(float), default=None, help="coupling strength C (default 1)")
    ap.add_argument("--dt", type=_positive(float), default=None, help="time step (default: automatic per detuning)")
    ap.add_argument("--tmax", type=_positive(float), default=DEFAULT_T_MAX, help="final time")
    ap.add_argument("--tol", type=_positive(float), default=DEFAULT_TOL, help="spectral quadrature tolerance")
    ap.add_argument("--out-dir", type=Path, default=None,
                    help=f"output directory (default ${OUT_DIR_ENV} or ./pbgcavity-out)")
    ap.add_argument("--threads", type=_positive(int), default=1, help="worker processes for sweeps")
    ap.add_argument("--config", type=Path, default=None, help="key=value file with delta, kT, omega_e, coupling")

    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fig1c", help="|u(t)| for several detunings")
    s.add_argument("--deltas", type=_float_list, default=list(DEFAULT_DELTAS_FIG1C))
    s.add_argument("--stride", type=_positive(int), default=10, help="keep every n-th sample")
    s.set_defaults(func=cmd_fig1c)

    s = sub.add_parser("fig1d", help="steady amplitude Z against detuning")
    s.add_argument("--delta-range", type=float, nargs=2, default=[-15.0, 15.0], metavar=("LO", "HI"))
    s.add_argument("--steps", type=int, default=121)
    s.set_defaults(func=cmd_fig1d)

    s = sub.add_parser("fig2", help="thermal fluctuation v(t) and its steady value")
    s.add_argument("--deltas", type=_float_list, default=list(DEFAULT_DELTAS))
    s.add_argument("--temps", type=_float_list, default=list(DEFAULT_TEMPS))
    s.add_argument("--sweep-range", type=float, nargs=2, default=[-15.0, 15.0], metavar=("LO", "HI"))
    s.add_argument("--sweep-steps", type=_positive(int), default=31)
    s.add_argument("--n0", type=int, default=5, help="initial photon number for n_mean")
    s.add_argument("--stride", type=_positive(int), default=10)
    s.set_defaults(func=cmd_fig2)

    s = sub.add_parser("fig3", help="photon-number distribution in time")
    s.add_argument("--n0", type=int, default=5)
    s.add_argument("--deltas", type=_float_list, default=list(DEFAULT_DELTAS))
    s.add_argument("--temps", type=_float_list, default=list(DEFAULT_TEMPS))
    s.add_argument("--stride", type=_positive(int), default=100)
    s.set_defaults(func=cmd_fig3)

    s = sub.add_parser("fig4", help="steady photon-number distributions with thermal reference")
    s.add_argument("--n0", type=_int_list, default=list(DEFAULT_N0S))
    s.add_argument("--deltas", type=_float_list, default=list(DEFAULT_DELTAS))
    s.add_argument("--temps", type=_float_list, default=list(DEFAULT_TEMPS))
    s.set_defaults(func=cmd_fig4)

    s = sub.add_parser("sweep", help="steady-state quantities on a (delta, kT, n0) grid")
    s.add_argument("--deltas", type=_float_list, default=list(DEFAULT_DELTAS))
    s.add_argument("--temps", type=_float_list, default=list(DEFAULT_TEMPS))
    s.add_argument("--n0", type=_int_list, default=list(DEFAULT_N0S))
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("validate", help="run the invariant suite")
    s.add_argument("--profile", choices=("default", "quick"), default="default")
    s.add_argument("--inject", choices=("none", "residue", "dt"), default="none",
                   help="deliberately corrupt one input to exercise the checks")
    s.set_defaults(func=cmd_validate)
    return ap


def _base_params(args) -> ModelParams:
    base = ModelParams()
    if args.config is not None:
        try:
            entries = read_config(args.config)
        except OSError as exc:
            raise InvalidParameters(f"cannot read config: {exc}") from exc
        base = params_from_config(entries, base)
    changes = {}
    if args.omega_e is not None:
        changes["omega_e"] = args.omega_e
    if args.coupling is not None:
        changes["coupling_C"] = args.coupling
    return base.with_(**changes) if changes else validate(base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out_dir is None:
        args.out_dir = Path(os.environ.get(OUT_DIR_ENV, "pbgcavity-out"))
    try:
        base = _base_params(args)
        man = args.func(args, base)
    except InvalidParameters as exc:
        print(f"pbgcavity: error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, PBGCavityError) as exc:
        print(f"pbgcavity: numerical failure: {exc}", file=sys.stderr)
        return 1
    if getattr(man, "failed", 0):
        return 1
    for o in man.outputs:
        print(args.out_dir / o["path"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
