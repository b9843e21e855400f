"""Periodic pseudo-spectral integrator for incompressible flow at unit
viscosity.

The state is the half-complex spectrum of a divergence-free velocity
field on the cell-centered grid of ``fields``.  The diffusion term is
applied through its exact integrating factor, the dealiased nonlinear
term through an explicit Heun (RK2) stage pair, and the incompressibility
constraint through projection after every nonlinear evaluation.  A
``stokes_heat`` mode drops the nonlinearity entirely, which makes the
update an exact one-mode heat kernel and gives calibration runs a known
closed form.

Per-step monitors record max speed, the CFL headroom, energy, enstrophy
dissipation, and the fraction of energy in the top retained octave (the
resolution monitor).  A CFL violation or a non-finite state aborts the
run.  Checkpoints store the raw spectral state plus a digest of the
configuration, so a resumed run reproduces the interrupted one bit for
bit and a resume under any altered parameter is refused.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DomainMismatch, InvalidArgument, SolverAbort
from .fields import (
    GridField,
    _irfftn,
    _rfftn,
    read_field,
    wavenumbers,
    write_field,
)
from .pressure import global_pressure

MODES = ("navier_stokes", "stokes_heat")

_CK_MAGIC = b"NSCK"
_CK_VERSION = 1
_CK_HEADER = struct.Struct("<4sI32sQdI")


@dataclass(frozen=True)
class SolverConfig:
    """Run parameters; every field participates in the config digest."""

    N: int
    L: float
    dt: float
    t_end: float
    mode: str = "navier_stokes"
    dealias: str = "two_thirds"
    cadence: int = 1
    cfl_factor: float = 0.5
    top_octave_threshold: float = 1e-3
    init_label: str = ""

    def __post_init__(self):
        n = self.N
        if not isinstance(n, int) or n < 8 or (n & (n - 1)) != 0:
            raise InvalidArgument(f"N must be a power of two >= 8, got {n!r}")
        if not (self.L > 0.0):
            raise InvalidArgument("L must be positive")
        if not (self.dt > 0.0):
            raise InvalidArgument("dt must be positive")
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dealias != "two_thirds":
            raise InvalidArgument("only the two_thirds dealias rule is supported")
        if not isinstance(self.cadence, int) or self.cadence < 1:
            raise InvalidArgument("cadence must be a positive integer")
        if not (self.cfl_factor > 0.0):
            raise InvalidArgument("cfl_factor must be positive")
        if not (self.top_octave_threshold > 0.0):
            raise InvalidArgument("top_octave_threshold must be positive")
        steps = round(self.t_end / self.dt)
        if steps < 1 or abs(steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise InvalidArgument("t_end must be a positive whole number of steps")

    @property
    def steps(self) -> int:
        return round(self.t_end / self.dt)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        return hashlib.sha256(self.canonical_json().encode()).digest()


@dataclass(frozen=True)
class MonitorRow:
    """State-of-step diagnostics, recorded before advancing."""

    step: int
    t: float
    max_u: float
    cfl_limit: float
    energy: float
    dissipation: float
    top_octave: float


@dataclass(frozen=True)
class SolverRun:
    """Snapshot series plus the per-step monitor log."""

    config: SolverConfig
    snapshot_steps: tuple[int, ...]
    times: tuple[float, ...]
    velocities: tuple[GridField, ...]
    pressures: tuple[GridField, ...]
    monitor: tuple[MonitorRow, ...]

    @property
    def resolution_ok(self) -> bool:
        thr = self.config.top_octave_threshold
        return all(row.top_octave <= thr for row in self.monitor)

    def write_monitor_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["step", "t", "max_u", "cfl_limit", "energy", "dissipation",
                 "top_octave"]
            )
            for r in self.monitor:
                w.writerow(
                    [r.step, repr(r.t), repr(r.max_u), repr(r.cfl_limit),
                     repr(r.energy), repr(r.dissipation), repr(r.top_octave)]
                )


class _Stepper:
    """Spectral workspace bound to one configuration."""

    def __init__(self, config: SolverConfig):
        self.config = config
        N, L = config.N, config.L
        self.shape = (N, N, N)
        kx, ky, kz = wavenumbers(L, N)
        self.kk = (kx, ky, kz)
        k2 = kx**2 + ky**2 + kz**2
        self.k2 = k2
        inv = np.zeros_like(k2)
        np.divide(1.0, k2, out=inv, where=k2 > 0)
        self.inv_k2 = inv
        self.decay = np.exp(-k2 * config.dt)
        cut = N // 3
        nfull = np.rint(np.fft.fftfreq(N) * N).astype(int)
        nhalf = np.arange(N // 2 + 1)
        keep1 = np.abs(nfull) <= cut
        self.mask = (
            keep1[:, None, None] & keep1[None, :, None] & (nhalf <= cut)[None, None, :]
        )
        self.octave = self.mask & (
            (np.abs(nfull) > cut // 2)[:, None, None]
            | (np.abs(nfull) > cut // 2)[None, :, None]
            | (nhalf > cut // 2)[None, None, :]
        )
        w = np.full(N // 2 + 1, 2.0)
        w[0] = 1.0
        if N % 2 == 0:
            w[-1] = 1.0
        self.parseval = w[None, None, :] * (2.0 * L / N) ** 3 / N**3

    def project(self, hat: np.ndarray) -> None:
        kx, ky, kz = self.kk
        k_dot = kx * hat[0] + ky * hat[1] + kz * hat[2]
        k_dot *= self.inv_k2
        hat[0] -= kx * k_dot
        hat[1] -= ky * k_dot
        hat[2] -= kz * k_dot

    def prepare(self, u0: GridField) -> np.ndarray:
        hat = np.stack([_rfftn(u0.data[c]) for c in range(3)])
        hat *= self.mask
        self.project(hat)
        return hat

    def phys(self, hat: np.ndarray) -> np.ndarray:
        return np.stack([_irfftn(hat[c], self.shape) for c in range(3)])

    def nonlinear(self, hat: np.ndarray, u_phys: np.ndarray | None = None):
        """Dealiased, projected transport term -P[(u . grad) u]."""
        if u_phys is None:
            u_phys = self.phys(hat)
        F = np.empty_like(u_phys)
        for i in range(3):
            acc = u_phys[0] * _irfftn(1j * self.kk[0] * hat[i], self.shape)
            acc += u_phys[1] * _irfftn(1j * self.kk[1] * hat[i], self.shape)
            acc += u_phys[2] * _irfftn(1j * self.kk[2] * hat[i], self.shape)
            F[i] = acc
        Fh = np.stack([_rfftn(F[c]) for c in range(3)])
        Fh *= self.mask
        self.project(Fh)
        Fh *= -1.0
        Fh[:, 0, 0, 0] = 0.0
        return Fh

    def advance(self, hat: np.ndarray, u_phys: np.ndarray | None) -> np.ndarray:
        if self.config.mode == "stokes_heat":
            return hat * self.decay
        dt = self.config.dt
        k1 = self.nonlinear(hat, u_phys)
        pred = self.decay * (hat + dt * k1)
        k2 = self.nonlinear(pred)
        return self.decay * (hat + 0.5 * dt * k1) + 0.5 * dt * k2

    def energy(self, hat: np.ndarray) -> float:
        return float(np.sum((hat.real**2 + hat.imag**2) * self.parseval))

    def dissipation(self, hat: np.ndarray) -> float:
        mag = hat.real**2 + hat.imag**2
        return float(np.sum(mag * (self.k2 * self.parseval)))

    def top_octave_fraction(self, hat: np.ndarray) -> float:
        mag = (hat.real**2 + hat.imag**2) * self.parseval
        total = float(mag.sum())
        if total == 0.0:
            return 0.0
        return float(mag[:, self.octave].sum()) / total


def _monitor(stepper: _Stepper, step: int, t: float, hat, u_phys) -> MonitorRow:
    cfg = stepper.config
    max_u = float(np.abs(u_phys).max())
    if not np.isfinite(max_u):
        raise SolverAbort(
            f"non-finite state at step {step} (t={t:.6g}); dt={cfg.dt} too large "
            "or data under-resolved"
        )
    limit = np.inf if max_u == 0.0 else cfg.cfl_factor * cfg.h / max_u
    if cfg.dt > limit:
        raise SolverAbort(
            f"CFL violation at step {step} (t={t:.6g}): dt={cfg.dt} exceeds "
            f"{limit:.6g} = {cfg.cfl_factor} * h / max|u| with max|u|={max_u:.6g}"
        )
    return MonitorRow(
        step=step,
        t=t,
        max_u=max_u,
        cfl_limit=float(limit),
        energy=stepper.energy(hat),
        dissipation=stepper.dissipation(hat),
        top_octave=stepper.top_octave_fraction(hat),
    )


def write_checkpoint(path, config: SolverConfig, step: int, hat: np.ndarray) -> None:
    header = _CK_HEADER.pack(
        _CK_MAGIC, _CK_VERSION, config.digest(), step, step * config.dt, config.N
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(hat, dtype="<c16").tobytes())


def read_checkpoint(path, config: SolverConfig):
    """Load (step, spectral state); refuses any config or format mismatch."""
    with open(path, "rb") as fh:
        raw = fh.read(_CK_HEADER.size)
        if len(raw) < _CK_HEADER.size:
            raise CheckpointError(f"{path}: truncated checkpoint header")
        magic, version, digest, step, t, n = _CK_HEADER.unpack(raw)
        if magic != _CK_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if version != _CK_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version}, this build reads "
                f"version {_CK_VERSION}"
            )
        if digest != config.digest():
            raise CheckpointError(
                f"{path}: checkpoint was written under a different configuration"
            )
        count = 3 * n * n * (n // 2 + 1)
        buf = fh.read(count * 16)
    if len(buf) < count * 16:
        raise CheckpointError(f"{path}: truncated checkpoint payload")
    hat = np.frombuffer(buf, dtype="<c16", count=count).astype(np.complex128)
    return int(step), hat.reshape(3, n, n, n // 2 + 1)


def run(
    config: SolverConfig,
    u0: GridField | None = None,
    resume_from=None,
    checkpoint_path=None,
    checkpoint_step: int | None = None,
) -> SolverRun:
    """Integrate to t_end, returning snapshots at the output cadence.

    Exactly one of ``u0`` and ``resume_from`` must be given.  With
    ``checkpoint_path`` and ``checkpoint_step`` set, the spectral state
    is saved once when that step is reached.
    """
    stepper = _Stepper(config)
    if (u0 is None) == (resume_from is None):
        raise InvalidArgument("pass exactly one of u0 and resume_from")
    if resume_from is not None:
        start, hat = read_checkpoint(resume_from, config)
        if start > config.steps:
            raise CheckpointError("checkpoint lies beyond the configured end time")
    else:
        if u0.ncomp != 3:
            raise InvalidArgument("initial data must have 3 components")
        if (u0.N, u0.L) != (config.N, config.L):
            raise DomainMismatch(
                f"initial data grid ({u0.N}, L={u0.L}) does not match the "
                f"configuration ({config.N}, L={config.L})"
            )
        start = 0
        hat = stepper.prepare(u0)

    steps = config.steps
    rows = []
    snap_steps, snap_times, snap_u, snap_p = [], [], [], []
    for s in range(start, steps + 1):
        t = s * config.dt
        if checkpoint_path is not None and s == checkpoint_step:
            write_checkpoint(checkpoint_path, config, s, hat)
        u_phys = stepper.phys(hat)
        rows.append(_monitor(stepper, s, t, hat, u_phys))
        if s % config.cadence == 0 or s == steps:
            u_snap = GridField(config.L, u_phys, time=t)
            if config.mode == "navier_stokes":
                p_snap = global_pressure(u_snap)
            else:
                p_snap = GridField(
                    config.L, np.zeros((1,) + stepper.shape), time=t
                )
            snap_steps.append(s)
            snap_times.append(t)
            snap_u.append(u_snap)
            snap_p.append(p_snap)
        if s < steps:
            hat = stepper.advance(hat, u_phys)
    return SolverRun(
        config=config,
        snapshot_steps=tuple(snap_steps),
        times=tuple(snap_times),
        velocities=tuple(snap_u),
        pressures=tuple(snap_p),
        monitor=tuple(rows),
    )


def energy_balance_residuals(run: SolverRun) -> list[float]:
    """Per-interval relative defect of dE/dt = -2 D from the monitor log."""
    out = []
    for a, b in zip(run.monitor, run.monitor[1:]):
        dt = b.t - a.t
        resid = b.energy - a.energy + (a.dissipation + b.dissipation) * dt
        scale = max(a.energy, b.energy, 1e-300)
        out.append(abs(resid) / scale)
    return out


# ---------------------------------------------------------------------------
# run directories


def write_run(run: SolverRun, outdir) -> dict:
    """Snapshot files, monitor CSV and a JSON index under ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s, t, u, p in zip(
        run.snapshot_steps, run.times, run.velocities, run.pressures
    ):
        uname, pname = f"u_{s:06d}.nswf", f"p_{s:06d}.nswf"
        write_field(u, out / uname)
        write_field(p, out / pname)
        entries.append({"step": s, "t": t, "u": uname, "p": pname})
    run.write_monitor_csv(out / "monitor.csv")
    index = {
        "format": "nslocal-run-v1",
        "config": asdict(run.config),
        "config_digest": run.config.digest().hex(),
        "resolution_ok": run.resolution_ok,
        "snapshots": entries,
        "monitor_csv": "monitor.csv",
    }
    with open(out / "run.json", "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index


def read_run(rundir):
    """Load a run directory back into a SolverRun (monitor included)."""
    root = Path(rundir)
    try:
        with open(root / "run.json") as fh:
            index = json.load(fh)
    except FileNotFoundError as exc:
        raise InvalidArgument(f"{rundir}: not a run directory (no run.json)") from exc
    if index.get("format") != "nslocal-run-v1":
        raise InvalidArgument(f"{rundir}: unrecognized run format")
    config = SolverConfig(**index["config"])
    us, ps, steps, times = [], [], [], []
    for ent in index["snapshots"]:
        u = read_field(root / ent["u"])
        p = read_field(root / ent["p"])
        steps.append(int(ent["step"]))
        times.append(float(ent["t"]))
        us.append(u)
        ps.append(p)
    rows = []
    with open(root / "monitor.csv", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                MonitorRow(
                    step=int(rec["step"]),
                    t=float(rec["t"]),
                    max_u=float(rec["max_u"]),
                    cfl_limit=float(rec["cfl_limit"]),
                    energy=float(rec["energy"]),
                    dissipation=float(rec["dissipation"]),
                    top_octave=float(rec["top_octave"]),
                )
            )
    return SolverRun(
        config=config,
        snapshot_steps=tuple(steps),
        times=tuple(times),
        velocities=tuple(us),
        pressures=tuple(ps),
        monitor=tuple(rows),
    )
