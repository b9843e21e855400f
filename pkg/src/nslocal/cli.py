"""Command-line pipelines over the library modules.

Five subcommands wire generators, the solver, and the diagnostics into
reproducible runs: ``cover`` and ``norm`` are thin wrappers, ``solve``
produces snapshot directories, ``diagnose`` and ``regularity`` consume
them.  Every command writes a manifest listing each output file with a
content hash plus the constants that were in effect, and ``rerun``
replays a manifest into a fresh directory and verifies the outputs come
back byte-identical.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or input
error, 3 runtime abort (CFL violation, non-finite state).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .cover import build_cover, build_refined_cover, verify_cover_properties, write_cover
from .energy import (
    apriori_bound_check,
    cubic_estimate_check,
    existence_time,
    grad_sq_snapshots,
    lei_residual,
    load_calibration,
    make_cutoff,
    track_series,
)
from .errors import (
    CheckpointError,
    DomainMismatch,
    InvalidArgument,
    NotFound,
    OutOfDomain,
    ResolutionError,
    SingularPoint,
    SolverAbort,
)
from .fields import GridField, read_field
from .generators import GeneratorSpec, generate
from .norms import equivalence_report, herz_norm, m_norm
from .pressure import pressure_estimate_check
from .regularity import cylinders_from_cover, scan, sigma_sq_from_delta, slice_image, write_ppm
from .solver import SolverConfig, read_run, run, write_run

MANIFEST_FORMAT = "nslocal-manifest-v1"

_INPUT_ERRORS = (
    InvalidArgument,
    DomainMismatch,
    OutOfDomain,
    NotFound,
    ResolutionError,
    SingularPoint,
    CheckpointError,
    FileNotFoundError,
    IsADirectoryError,
    json.JSONDecodeError,
)

# output destination flag per subcommand, used when replaying a manifest
_OUT_FLAG = {
    "cover": "--out",
    "norm": "--report",
    "solve": "--out-dir",
    "diagnose": "--report",
    "regularity": "--out",
}
_DIR_VALUED = {"solve", "regularity"}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclasses.dataclass
class RunManifest:
    """Audit record for one CLI invocation.

    ``outputs`` maps paths relative to the manifest's directory to
    content hashes; replaying the recorded command against the same
    inputs must reproduce them hash for hash.
    """

    command: list[str]
    config_digest: str | None = None
    inputs: dict = dataclasses.field(default_factory=dict)
    outputs: dict = dataclasses.field(default_factory=dict)
    constants: dict = dataclasses.field(default_factory=dict)
    timings: dict = dataclasses.field(default_factory=dict)
    exit_code: int = 0

    def add_input(self, path) -> None:
        p = Path(path)
        self.inputs[str(p)] = _sha256(p)

    def add_output(self, path, root: Path) -> None:
        p = Path(path)
        self.outputs[os.path.relpath(p, root)] = _sha256(p)

    def write(self, path) -> None:
        payload = {"format": MANIFEST_FORMAT, **dataclasses.asdict(self)}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load_manifest(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != MANIFEST_FORMAT:
        raise InvalidArgument(f"{path} is not a run manifest")
    return data


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _box_norms(u: GridField) -> tuple[float, float]:
    mag = u.magnitude()
    vol = u.h**3
    return float((mag**2).sum()) * vol, float((mag**3).sum()) * vol


def _thread_setting() -> str | None:
    setting = os.environ.get("NSLOCAL_THREADS")
    if setting:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, setting)
    return setting


# ---------------------------------------------------------------------------
# cover


def _cmd_cover(args) -> int:
    if args.n_max < 1:
        raise InvalidArgument("--n-max must be at least 1")
    started = time.perf_counter()
    manifest = RunManifest(command=args.raw_argv)
    cover = build_cover(args.n_max)
    report = verify_cover_properties(cover)
    out = build_refined_cover(cover, args.refine) if args.refine is not None else cover
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_cover(out, out_path)
    manifest.add_output(out_path, out_path.parent)
    manifest.constants = {
        "n_max": args.n_max,
        "refine": args.refine,
        "cube_count": len(out.cubes),
    }
    manifest.exit_code = 0 if report.passed else 1
    manifest.timings = {"total_s": time.perf_counter() - started}
    manifest.write(str(out_path) + ".manifest.json")
    if args.verify:
        print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    else:
        print(f"wrote {len(out.cubes)} cubes to {out_path}; verification "
              f"{'passed' if report.passed else 'FAILED'}")
    return manifest.exit_code


# ---------------------------------------------------------------------------
# norm


def _cmd_norm(args) -> int:
    started = time.perf_counter()
    manifest = RunManifest(command=args.raw_argv)
    field_path = Path(args.field)
    manifest.add_input(field_path)
    f = read_field(field_path)
    payload = {
        "family": args.family,
        "field": str(field_path),
        "p": args.p,
        "q": args.q,
        "n": args.n,
    }
    if args.family == "cover":
        res = m_norm(f, build_cover(args.n), p=args.p, q=args.q)
        payload["value"] = res.value
        payload["argmax_cube"] = res.argmax_index
    elif args.family == "herz":
        value, per_annulus = herz_norm(
            f, s=-args.q / args.p, p=args.p, q_outer=math.inf,
            homogeneous=False, k_range=(0, args.n),
        )
        payload["value"] = value
        payload["per_annulus"] = list(per_annulus)
    else:
        rep = equivalence_report(f, n_max=args.n, p=args.p, q=args.q)
        payload["value"] = rep.full_norm
        payload["report"] = rep.as_dict()
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(report_path, payload)
    manifest.add_output(report_path, report_path.parent)
    manifest.constants = {"p": args.p, "q": args.q, "n": args.n}
    manifest.timings = {"total_s": time.perf_counter() - started}
    manifest.write(str(report_path) + ".manifest.json")
    print(f"{args.family} norm = {payload['value']:.12g} -> {report_path}")
    return 0


# ---------------------------------------------------------------------------
# solve


def _parse_generator(text: str) -> GeneratorSpec:
    head, *items = text.split(",")
    kwargs = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidArgument(f"malformed generator parameter {item!r}")
        kwargs[key] = int(value) if key == "seed" else float(value)
    return GeneratorSpec(kind=head, **kwargs)


def _load_init(spec: str, cfg: SolverConfig, manifest: RunManifest) -> GridField:
    if spec == "zero":
        return GridField(cfg.L, np.zeros((3, cfg.N, cfg.N, cfg.N)))
    if spec.startswith("gen:"):
        return generate(_parse_generator(spec[4:]), cfg.L, cfg.N)
    path = Path(spec)
    manifest.add_input(path)
    return read_field(path)


def _cmd_solve(args) -> int:
    started = time.perf_counter()
    manifest = RunManifest(command=args.raw_argv)
    config_path = Path(args.config)
    manifest.add_input(config_path)
    with open(config_path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise InvalidArgument("solver config must be a JSON object")
    if args.mode is not None:
        raw["mode"] = args.mode
    try:
        cfg = SolverConfig(**raw)
    except TypeError as exc:
        raise InvalidArgument(f"bad solver config: {exc}") from exc
    u0 = _load_init(args.init, cfg, manifest)
    result = run(cfg, u0)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    index = write_run(result, outdir)
    for rel in index["snapshots"]:
        manifest.add_output(outdir / rel["u"], outdir)
        manifest.add_output(outdir / rel["p"], outdir)
    manifest.add_output(outdir / index["monitor_csv"], outdir)
    manifest.add_output(outdir / "run.json", outdir)
    manifest.config_digest = cfg.digest().hex()
    manifest.constants = {
        "mode": cfg.mode,
        "cfl_factor": cfg.cfl_factor,
        "top_octave_threshold": cfg.top_octave_threshold,
        "resolution_ok": result.resolution_ok,
        "threads": _thread_setting(),
    }
    manifest.timings = {"total_s": time.perf_counter() - started}
    manifest.write(outdir / "manifest.json")
    print(f"{len(result.times)} snapshots -> {outdir} "
          f"(resolution {'ok' if result.resolution_ok else 'marginal'})")
    return 0


# ---------------------------------------------------------------------------
# diagnose


def _load_run_inputs(rundir: Path, manifest: RunManifest):
    result = read_run(rundir)
    manifest.add_input(rundir / "run.json")
    return result


def _cmd_diagnose(args) -> int:
    started = time.perf_counter()
    manifest = RunManifest(command=args.raw_argv)
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    known = {"lei", "pressure", "cubic", "apriori"}
    unknown = sorted(set(checks) - known)
    if not checks or unknown:
        raise InvalidArgument(f"unknown checks {unknown}; choose from {sorted(known)}")
    result = _load_run_inputs(Path(args.run_dir), manifest)
    manifest.config_digest = result.config.digest().hex()
    us = list(result.velocities)
    ps = list(result.pressures)
    cal = load_calibration()
    base = build_cover(args.cover_n)
    refined = build_refined_cover(base, args.n)
    report: dict = {"run_dir": str(args.run_dir), "checks": {}}
    constants: dict = {
        "cover_n": args.cover_n,
        "n": args.n,
        "q": args.q,
        "c0": cal["c0"]["value"],
        "c1": cal["c1"]["value"],
        "threads": _thread_setting(),
    }

    if "lei" in checks:
        gs = grad_sq_snapshots(us)
        l2, l3 = _box_norms(us[0])
        tol = cal["lei_full"]["coeff"] * (result.config.h**2 + result.config.dt) * (l2 + l3)
        worst = math.inf
        for Q in refined:
            value = lei_residual(us, ps, make_cutoff(Q, us[0]), mode="full",
                                 grad_sq_series=gs)
            worst = min(worst, value)
        report["checks"]["lei"] = {
            "min_residual": worst, "tol": tol, "passed": bool(worst >= -tol),
        }
        constants["lei_tol"] = tol

    if "pressure" in checks:
        t = args.t if args.t is not None else us[-1].time
        est = pressure_estimate_check(us, ps, refined, q=args.q, t=t)
        finite = all(math.isfinite(row[5]) for row in est.rows)
        report["checks"]["pressure"] = {
            "max_ratio": est.max_ratio, "cubes": len(est.rows),
            "passed": bool(finite),
        }

    if "cubic" in checks:
        worst_c = 0.0
        for Q in refined:
            margin = cubic_estimate_check(us[-1], Q, q=args.q, epsilon=args.epsilon)
            worst_c = max(worst_c, margin.c_hat)
        report["checks"]["cubic"] = {
            "max_c_hat": worst_c, "epsilon": args.epsilon,
            "passed": bool(math.isfinite(worst_c)),
        }
        constants["cubic_epsilon"] = args.epsilon

    if "apriori" in checks:
        q_int = int(args.q)
        if q_int != args.q:
            raise InvalidArgument("apriori tracking needs integer q")
        series = track_series(us, None, base, n=args.n, q=q_int)
        alpha0 = series.alpha[0]
        horizon = existence_time(alpha0, args.n, q=q_int, c1=cal["c1"]["value"])
        requested = args.t if args.t is not None else min(horizon, series.times[-1])
        bound = apriori_bound_check(series, alpha0, args.n, cal["c0"]["value"], requested)
        report["checks"]["apriori"] = {
            "alpha0": alpha0,
            "existence_time": horizon,
            "horizon": requested,
            "allowed": bound.allowed,
            "used": bound.used,
            "margin": bound.margin,
            "passed": bool(bound.passed),
        }

    passed = all(entry["passed"] for entry in report["checks"].values())
    report["passed"] = passed
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(report_path, report)
    manifest.add_output(report_path, report_path.parent)
    manifest.constants = constants
    manifest.exit_code = 0 if passed else 1
    manifest.timings = {"total_s": time.perf_counter() - started}
    manifest.write(str(report_path) + ".manifest.json")
    for name, entry in report["checks"].items():
        print(f"{name}: {'pass' if entry['passed'] else 'FAIL'}")
    return manifest.exit_code


# ---------------------------------------------------------------------------
# regularity


def _cmd_regularity(args) -> int:
    started = time.perf_counter()
    manifest = RunManifest(command=args.raw_argv)
    result = _load_run_inputs(Path(args.run_dir), manifest)
    manifest.config_digest = result.config.digest().hex()
    us = list(result.velocities)
    ps = list(result.pressures)
    if args.sweep:
        thresholds = [float(x) for x in args.sweep.split(",") if x.strip()]
    else:
        thresholds = [args.eps_star]
    if args.top_times:
        top_times = [float(x) for x in args.top_times.split(",") if x.strip()]
    else:
        top_times = [us[-1].time]
    try:
        sup_coeff = load_calibration()["sup_coefficient"]["value"]
    except NotFound:
        sup_coeff = None
    cover = build_cover(args.cover_n)
    cylinders = cylinders_from_cover(cover, us[0].L, top_times, t_first=us[0].time)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    all_ok = True
    summary_rows = []
    for eps in thresholds:
        mask = scan(us, ps, cylinders, eps_star=eps, delta=args.delta,
                    sup_coefficient=sup_coeff)
        tag = f"eps{eps:g}"
        mask.write_csv(outdir / f"mask_{tag}.csv")
        mask.write_summary(outdir / f"summary_{tag}.json")
        write_ppm(slice_image(mask), outdir / f"slice_{tag}.ppm")
        for name in (f"mask_{tag}.csv", f"summary_{tag}.json", f"slice_{tag}.ppm"):
            manifest.add_output(outdir / name, outdir)
        n_pass = sum(row.passed for row in mask.rows)
        n_incons = sum(not row.consistent for row in mask.rows)
        ok = n_pass == len(mask.rows) and n_incons == 0
        all_ok = all_ok and ok
        summary_rows.append((eps, n_pass, len(mask.rows), n_incons))
        print(f"eps_star={eps:g}: {n_pass}/{len(mask.rows)} cylinders pass, "
              f"{n_incons} inconsistent")
    manifest.constants = {
        "delta": args.delta,
        "sigma_sq": sigma_sq_from_delta(args.delta),
        "eps_star": thresholds,
        "eps_star_origin": "cli default (working value, not a derived constant)"
        if not args.sweep and args.eps_star == 0.05 else "user supplied",
        "sup_coefficient": sup_coeff,
        "top_times": top_times,
        "threads": _thread_setting(),
    }
    manifest.exit_code = 0 if all_ok else 1
    manifest.timings = {"total_s": time.perf_counter() - started}
    manifest.write(outdir / "manifest.json")
    return manifest.exit_code


# ---------------------------------------------------------------------------
# rerun


def _remap_output(argv: list[str], new_root: Path) -> tuple[list[str], Path]:
    """Point the recorded command's output destination into ``new_root``.

    Returns the rewritten argv and the path where the replay's manifest
    will appear.
    """
    if not argv:
        raise InvalidArgument("manifest records an empty command")
    cmd = argv[0]
    if cmd not in _OUT_FLAG:
        raise InvalidArgument(f"manifest command {cmd!r} cannot be replayed")
    flag = _OUT_FLAG[cmd]
    argv = list(argv)
    try:
        at = argv.index(flag)
        old = Path(argv[at + 1])
    except (ValueError, IndexError) as exc:
        raise InvalidArgument(f"recorded command lacks {flag} <path>") from exc
    if cmd in _DIR_VALUED:
        new_value = new_root
        manifest_path = new_root / "manifest.json"
    else:
        new_value = new_root / old.name
        manifest_path = Path(str(new_value) + ".manifest.json")
    argv[at + 1] = str(new_value)
    return argv, manifest_path


def _cmd_rerun(args) -> int:
    recorded = _load_manifest(Path(args.manifest))
    new_root = Path(args.out_dir)
    new_root.mkdir(parents=True, exist_ok=True)
    argv, new_manifest_path = _remap_output(recorded["command"], new_root)
    code = main(argv)
    if code != recorded["exit_code"]:
        print(f"replay exited {code}, manifest recorded {recorded['exit_code']}")
        return 1
    replay = _load_manifest(new_manifest_path)
    old_out, new_out = recorded["outputs"], replay["outputs"]
    mismatched = sorted(
        set(old_out) ^ set(new_out)
        | {k for k in set(old_out) & set(new_out) if old_out[k] != new_out[k]}
    )
    if mismatched:
        for name in mismatched:
            print(f"output differs: {name}")
        return 1
    print(f"replay of {' '.join(recorded['command'])}: "
          f"{len(new_out)} outputs byte-identical")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nslocal",
        description="Cube covers, localized norms, periodic-box flow runs, "
                    "and regularity diagnostics.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_cover = sub.add_parser("cover", help="build and verify a cube cover")
    p_cover.add_argument("--n-max", type=int, required=True)
    p_cover.add_argument("--refine", type=int, default=None)
    p_cover.add_argument("--verify", action="store_true",
                         help="print the full property report")
    p_cover.add_argument("--out", required=True)
    p_cover.set_defaults(func=_cmd_cover)

    p_norm = sub.add_parser("norm", help="evaluate localized norms on a field file")
    p_norm.add_argument("--field", required=True)
    p_norm.add_argument("--family", choices=("cover", "herz", "equivalence"),
                        default="cover")
    p_norm.add_argument("--p", type=float, default=2.0)
    p_norm.add_argument("--q", type=float, default=2.0)
    p_norm.add_argument("--n", type=int, default=2,
                        help="cover size / annulus range end")
    p_norm.add_argument("--report", required=True)
    p_norm.set_defaults(func=_cmd_norm)

    p_solve = sub.add_parser("solve", help="integrate and write a snapshot series")
    p_solve.add_argument("--config", required=True, help="JSON solver config")
    p_solve.add_argument("--init", required=True,
                         help="'zero', a field file, or gen:<kind>[,key=val...]")
    p_solve.add_argument("--mode", choices=("navier_stokes", "stokes_heat"),
                         default=None, help="override the config's mode")
    p_solve.add_argument("--out-dir", required=True)
    p_solve.set_defaults(func=_cmd_solve)

    p_diag = sub.add_parser("diagnose", help="run inequality checks on a run directory")
    p_diag.add_argument("--run-dir", required=True)
    p_diag.add_argument("--checks", default="lei,pressure,cubic,apriori",
                        help="comma list: lei,pressure,cubic,apriori")
    p_diag.add_argument("--cover-n", type=int, default=1)
    p_diag.add_argument("--n", type=int, default=1, help="refinement level")
    p_diag.add_argument("--q", type=float, default=2.0)
    p_diag.add_argument("--t", type=float, default=None,
                        help="horizon for time-integrated checks")
    p_diag.add_argument("--epsilon", type=float, default=1.0,
                        help="gradient weight in the cubic check")
    p_diag.add_argument("--report", required=True)
    p_diag.set_defaults(func=_cmd_diagnose)

    p_reg = sub.add_parser("regularity", help="scan parabolic cylinders on a run")
    p_reg.add_argument("--run-dir", required=True)
    p_reg.add_argument("--delta", type=float, default=1.0)
    p_reg.add_argument("--eps-star", type=float, default=0.05,
                       help="smallness threshold (default is a working value)")
    p_reg.add_argument("--sweep", default=None,
                       help="comma list of thresholds; one mask per value")
    p_reg.add_argument("--cover-n", type=int, default=1)
    p_reg.add_argument("--top-times", default=None,
                       help="comma list of cylinder top times (default: last snapshot)")
    p_reg.add_argument("--out", required=True)
    p_reg.set_defaults(func=_cmd_regularity)

    p_rerun = sub.add_parser("rerun", help="replay a manifest and compare outputs")
    p_rerun.add_argument("--manifest", required=True)
    p_rerun.add_argument("--out-dir", required=True)
    p_rerun.set_defaults(func=_cmd_rerun)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    args.raw_argv = list(argv)
    try:
        return args.func(args)
    except SolverAbort as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return 3
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
