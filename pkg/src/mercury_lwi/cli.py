"""Command-line front end: config file in, CSV / binary data and a run manifest out."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import os
import platform
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy
from scipy.sparse.linalg import ArpackNoConvergence

from . import __version__
from . import atom_model as am
from . import cavity_optics as co
from . import doppler as dp
from . import gain_field as gf
from . import laser_power as lp
from . import liouvillian as lv
from .config import ConfigError, RunConfig, default_config, load_config
from .constants import TWO_PI

log = logging.getLogger("mercury_lwi")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICS = 0, 1, 2, 3

NUMERICAL_ERRORS = (lv.SteadyStateError, co.ModeSolverError, lp.ThresholdNotFound, lp.UnphysicalSaturation,
                    ArpackNoConvergence, np.linalg.LinAlgError)

POLARIZATIONS = {"x": am.E_X, "y": am.E_Y, "z": am.E_Z}


# --- building simulation objects from a config ---------------------------------------------

def build_scheme(cfg: RunConfig) -> am.LevelScheme:
    trs = dict(am.MERCURY_TRANSITIONS)
    for key, over in cfg.transitions.items():
        base = trs[key]
        trs[key] = am.Transition(base.upper, base.lower, over.get("wavelength", base.wavelength),
                                 TWO_PI * over["linewidth"] if "linewidth" in over else base.gamma,
                                 over.get("strength", base.strength))
    if cfg["atom_model"]["scheme"] == "4-level":
        return am.four_level_scheme(trs)
    return am.mercury_scheme(trs)


def build_geometry(scheme: am.LevelScheme) -> dp.BeamGeometry:
    t = scheme.transitions
    lam_r = t["ce"].wavelength if "ce" in t else am.MERCURY_TRANSITIONS["ce"].wavelength
    return dp.three_photon_geometry(t["ab"].wavelength, t["ca"].wavelength, t["cd"].wavelength, lam_r)


def build_system(cfg: RunConfig, noise: bool = True, temperature: float | None = None) -> lv.AtomSystem:
    """AtomSystem for the configured scheme; ``noise`` switches the drive linewidths on.

    The c-d repump belongs to the Zeeman-resolved scheme; the 4-level ladder
    only sees the probe-transition pump.
    """
    scheme = build_scheme(cfg)
    a, li = cfg["atom_model"], cfg["liouvillian"]
    names = ("s", "w") if scheme.scalar else ("s", "w", "r")
    drives = {}
    for name in names:
        pol = am.E_Z if scheme.scalar else POLARIZATIONS[a[f"polarization_{name}"]]
        drives[name] = am.DriveField.from_component(name, TWO_PI * a[f"rabi_{name}"], pol,
                                                    detuning=TWO_PI * a[f"detuning_{name}"])
    T = temperature if temperature is not None else cfg["doppler"]["temperature"]
    density = li["density"] if li["density"] is not None else dp.vapor_density(T)
    widths = (TWO_PI * li["b_s"], TWO_PI * li["b_w"], TWO_PI * li["b_r"]) if noise else (0.0, 0.0, 0.0)
    dephasing = {"ab": TWO_PI * li["dephasing_ab"]} if li["dephasing_ab"] > 0 else {}
    return lv.AtomSystem(scheme, drives, probe_rabi=TWO_PI * a["probe_rabi"], pump_r=li["pump_r"],
                         pump_cd=0.0 if scheme.scalar else li["pump_cd"], linewidths=widths,
                         density=density, dephasing=dephasing,
                         probe_polarization=POLARIZATIONS[a["probe_polarization"]])


def build_doppler(cfg: RunConfig, scheme: am.LevelScheme, enabled: bool, temperature: float | None = None):
    """(quadrature, geometry), both None when atoms are at rest."""
    if not enabled:
        return None, None
    d = cfg["doppler"]
    T = temperature if temperature is not None else d["temperature"]
    geo = build_geometry(scheme)
    if d["method"] == "line":
        return dp.line_quadrature(T, d["nodes"], geo), geo
    return dp.gauss_hermite_quadrature(T, d["nodes"], geo), geo


def build_cavity_params(cfg: RunConfig) -> lp.CavityParams:
    p = cfg["laser_power"]
    return lp.CavityParams.gaussian(p["Q"], p["mode_waist"], p["round_trip_length"], p["overlap_ratio"])


def build_cavity(cfg: RunConfig, loaded: bool) -> co.CavitySpec:
    c = cfg["cavity_optics"]
    mirror = co.MirrorSpec(c["mirror_radius"], c["aperture"])
    return co.CavitySpec(arm=c["arm"], mirrors=(mirror,) * 4, medium_length=c["medium_length"],
                         slices=c["slices"], loss_factor=c["loss_factor"] if loaded else 1.0,
                         grid=c["grid"], window=c["window"])


def build_beams(cfg: RunConfig, geometry: dp.BeamGeometry, waist: float | None = None):
    """Drive beams; with ``waist`` the powers scale as waist^2 so peak intensities stay fixed."""
    g, a = cfg["gain_field"], cfg["atom_model"]
    scale = 1.0 if waist is None else (waist / g["waist"]) ** 2
    w0 = g["waist"] if waist is None else waist
    beams = gf.drive_beams(geometry, w0, g["power_s"] * scale, g["power_w"] * scale)
    return {k: gf.GaussianBeamSpec(b.waist, b.power, b.wavelength, b.direction,
                                   polarization=POLARIZATIONS[a[f"polarization_{k}"]])
            for k, b in beams.items()}


# --- output helpers --------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (str, int)) and not isinstance(x, bool):
        return str(x)
    return repr(float(x))


class Run:
    """Output directory bookkeeping for one command invocation."""

    def __init__(self, cfg: RunConfig, command: str, out: Path, argv, threads: int, seed: int):
        self.cfg = cfg
        self.command = command
        self.out = Path(out)
        self.argv = list(argv)
        self.threads = max(1, threads)
        self.seed = seed
        self.outputs: list[Path] = []
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()

    def header(self, extra: dict | None = None) -> list[str]:
        lines = [f"mercury_lwi {__version__}", f"command = {self.command}", f"seed = {self.seed}"]
        lines += self.cfg.echo()
        for k, v in (extra or {}).items():
            lines.append(f"{k} = {json.dumps(v)}")
        return lines

    def write_csv(self, name: str, columns, rows, extra: dict | None = None) -> Path:
        buf = io.StringIO()
        for line in self.header(extra):
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        return self._write(name, buf.getvalue().encode())

    def write_bytes(self, name: str, writer) -> Path:
        path = self.out / name
        self.out.mkdir(parents=True, exist_ok=True)
        writer(path)
        self.outputs.append(path)
        return path

    def _write(self, name: str, data: bytes) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_bytes(data)
        self.outputs.append(path)
        return path

    def manifest(self, status: str = "ok") -> Path:
        doc = {
            "command": self.command,
            "argv": self.argv,
            "status": status,
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "seed": self.seed,
            "threads": self.threads,
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "config": self.cfg.to_dict(),
            "config_toml": self.cfg.to_toml(),
            "outputs": {p.name: {"sha256": hashlib.sha256(p.read_bytes()).hexdigest(), "bytes": p.stat().st_size}
                        for p in self.outputs},
        }
        self.out.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        target = self.out / "manifest.json"
        os.replace(tmp, target)
        return target

    def pmap(self, fn, items):
        """Order-preserving map over independent work items."""
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))


# --- commands --------------------------------------------------------------------------------

def cmd_spectrum(run: Run, args) -> None:
    cfg = run.cfg
    sp = cfg["spectrum"]
    doppler = cfg["doppler"]["enabled"] if args.doppler is None else args.doppler
    noise = True if args.noise is None else args.noise
    system = build_system(cfg, noise)
    quad, geo = build_doppler(cfg, system.scheme, doppler)
    if sp["points"] == 1:
        grid = np.array([sp["detuning_min"]])
    else:
        grid = np.linspace(sp["detuning_min"], sp["detuning_max"], sp["points"])
    rates = sp["pump_rates"] if sp["pump_rates"] is not None else [cfg["liouvillian"]["pump_r"]]
    check = cfg["liouvillian"]["check_linear"]
    jobs = [(r, d) for r in rates for d in grid]

    def one(job):
        r, d = job
        return lv.spectrum_scan(system.with_(pump_r=r), [TWO_PI * d], quad, geo, check)[0]

    chis = run.pmap(one, jobs)
    rows = [(r, TWO_PI * d, chi.real, chi.imag) for (r, d), chi in zip(jobs, chis)]
    run.write_csv("spectrum.csv", ["pump_r", "delta_p", "re_chi", "im_chi"], rows,
                  {"doppler": doppler, "noise": noise})


def cmd_noise_sweep(run: Run, args) -> None:
    cfg = run.cfg
    ns = cfg["noise_sweep"]
    doppler = cfg["doppler"]["enabled"] if args.doppler is None else args.doppler
    if ns["mode"] == "linewidth":
        jobs = [(T, b, cfg["liouvillian"]["pump_r"]) for T in ns["temperatures"] for b in ns["linewidths"]]
    else:
        T = cfg["doppler"]["temperature"]
        jobs = [(T, b, r) for b in ns["linewidths"] for r in ns["pump_rates"]]

    def one(job):
        T, b, r = job
        s = build_system(cfg, True, T)
        s = s.with_(pump_r=r, linewidths=(TWO_PI * b, TWO_PI * b, s.linewidths[2]))
        quad, geo = build_doppler(cfg, s.scheme, doppler, T)
        return lv.averaged_susceptibility(s, 0.0, quad, geo)

    chis = run.pmap(one, jobs)
    rows = [(T, b, r, chi.real, chi.imag) for (T, b, r), chi in zip(jobs, chis)]
    run.write_csv("noise_sweep.csv", ["temperature", "b", "pump_r", "re_chi", "im_chi"], rows,
                  {"doppler": doppler})


def cmd_power(run: Run, args) -> None:
    cfg = run.cfg
    p = cfg["laser_power"]
    doppler = cfg["doppler"]["enabled"] if args.doppler is None else args.doppler
    system = build_system(cfg)
    quad, geo = build_doppler(cfg, system.scheme, doppler)
    cavity = build_cavity_params(cfg)
    sigma = TWO_PI * p["sigma_omega"]
    omega_p = lp.probe_omega(system.scheme)

    def one(pair):
        b_s, b_w = pair
        s = system.with_(linewidths=(TWO_PI * b_s, TWO_PI * b_w, system.linewidths[2]))
        curve = lp.power_curve(s, p["pump_rates"], cavity, quad, geo, p["area"], sigma, p["order"])
        try:
            r_thr = lp.threshold_rate(s, cavity, quad, geo, p["r_max"], p["iterations"])
        except lp.ThresholdNotFound as exc:
            log.warning("b_s=%g Hz b_w=%g Hz: %s", b_s, b_w, exc)
            r_thr = float("nan")
        return curve, r_thr

    results = run.pmap(one, p["linewidth_sets"])
    rows, thr = [], []
    for (b_s, b_w), (curve, r_thr) in zip(p["linewidth_sets"], results):
        for pt in curve:
            rows.append((b_s, b_w, pt.r, pt.pump_power, pt.power, pt.alpha, pt.beta, pt.gamma, pt.photons))
        p_thr = lp.pump_power(r_thr, p["area"], sigma, omega_p=omega_p) if np.isfinite(r_thr) else float("nan")
        thr.append((b_s, b_w, r_thr, p_thr))
    run.write_csv("power.csv", ["b_s", "b_w", "pump_r", "P_pump", "P", "alpha", "beta", "gamma", "n_st"], rows,
                  {"doppler": doppler})
    run.write_csv("power_thresholds.csv", ["b_s", "b_w", "r_thr", "P_thr"], thr, {"doppler": doppler})


def cmd_threshold(run: Run, args) -> None:
    cfg = run.cfg
    p = cfg["laser_power"]
    doppler = cfg["doppler"]["enabled"] if args.doppler is None else args.doppler
    system = build_system(cfg)
    quad, geo = build_doppler(cfg, system.scheme, doppler)
    cavity = build_cavity_params(cfg)
    sigma = TWO_PI * p["sigma_omega"]
    bs = [TWO_PI * b for b in p["b_s_grid"]]

    def one(b):
        return lp.threshold_scan(system, [b], [TWO_PI * x for x in p["b_w_grid"]], cavity, quad, geo,
                                 p["area"], sigma, p["r_max"], p["iterations"])

    maps = run.pmap(one, bs)
    rows = []
    for b_s, m in zip(p["b_s_grid"], maps):
        for j, b_w in enumerate(p["b_w_grid"]):
            rows.append((b_s, b_w, m.rate_threshold[0, j], m.pump_threshold[0, j]))
    run.write_csv("threshold.csv", ["b_s", "b_w", "r_thr", "P_thr"], rows, {"doppler": doppler})


def _iso_rows(field: gf.ComplexField3D) -> list[tuple]:
    vals = field.values.imag
    axes = field.axes()
    cell = np.prod([a[1] - a[0] for a in axes])
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    rows = []
    lo, hi = vals.min(), vals.max()
    levels = [f * lo for f in (0.75, 0.5, 0.25) if lo < 0] + [f * hi for f in (0.25, 0.5, 0.75) if hi > 0]
    for level in levels:
        inside = vals <= level if level < 0 else vals >= level
        n = int(inside.sum())
        c = [float(A[inside].mean()) if n else float("nan") for A in (X, Y, Z)]
        rows.append((level, n, n * cell, *c))
    return rows


def cmd_gain3d(run: Run, args) -> None:
    cfg = run.cfg
    g = cfg["gain_field"]
    doppler = cfg["doppler"]["enabled"] if args.doppler is None else args.doppler
    system = build_system(cfg)
    geo_beams = build_geometry(system.scheme)
    quad, geo = build_doppler(cfg, system.scheme, doppler)
    beams = build_beams(cfg, geo_beams)
    hx, hy, hz = g["half_width"]
    grid = gf.GridSpec(tuple(g["shape"]), (-hx, hx, -hy, hy, -hz, hz))
    field = gf.sample_gain_distribution(beams, system, grid, quad, geo, g["table_size"],
                                        table_method=g["table_method"])
    run.write_bytes("gain3d.bin", field.save)
    vals = field.values.imag
    k = np.unravel_index(np.argmin(vals), vals.shape)
    pos = [a[i] for a, i in zip(field.axes(), k)]
    run.write_csv("gain3d_summary.csv", ["level", "voxels", "volume", "centroid_x", "centroid_y", "centroid_z"],
                  _iso_rows(field), {"doppler": doppler, "min_im_chi": float(vals.min()),
                                     "max_im_chi": float(vals.max()), "argmin": pos})


def cmd_cavity(run: Run, args) -> None:
    cfg = run.cfg
    c = cfg["cavity_optics"]
    loaded = c["loaded"] if args.loaded is None else args.loaded
    cavity = build_cavity(cfg, loaded)
    solve = dict(count=c["modes"], ncv=c["krylov"], restarts=c["restarts"], tol=c["tol"], with_m2=True,
                 sampling=c["sampling"])
    rows = []
    if not loaded:
        sweep = [(float("nan"), co.dominant_modes(cavity, None, **solve))]
    else:
        doppler = cfg["doppler"]["enabled"] if args.doppler is None else args.doppler
        system = build_system(cfg)
        geo_beams = build_geometry(system.scheme)
        quad, geo = build_doppler(cfg, system.scheme, doppler)
        # peak intensities are fixed across the waist sweep, so one table serves every waist
        g = cfg["gain_field"]
        table = gf.make_table(build_beams(cfg, geo_beams), system, quad, geo, g["table_size"], g["table_method"])
        table.build()

        def one(w0):
            chi = gf.susceptibility_at(build_beams(cfg, geo_beams, w0), system, table)
            return co.dominant_modes(cavity, chi, **solve)

        sweep = list(zip(c["drive_waists"], run.pmap(one, c["drive_waists"])))
    for i, (w0, modes) in enumerate(sweep):
        for k, m in enumerate(modes):
            rows.append((w0, k, m.gamma.real, m.gamma.imag, m.gain, m.m2[0], m.m2[1], m.residual))
            run.write_bytes(f"mode_{i:02d}_{k:02d}.bin", _mode_writer(m.profile))
    run.write_csv("modes.csv", ["drive_waist", "index", "re_gamma", "im_gamma", "gain", "m2_x", "m2_y",
                                "residual"], rows, {"loaded": loaded})


def _mode_writer(psi: co.ComplexField2D):
    x = psi.x
    half = psi.dx / 2
    field = gf.ComplexField3D(psi.values[:, :, None], (x[0], x[-1], x[0], x[-1], -half, half))
    return field.save


def selfcheck(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Fast invariant checks; returns (name, passed, detail) per check."""
    rng = np.random.default_rng(seed)
    out = []

    def record(name, ok, detail):
        out.append((name, bool(ok), detail))

    scheme = am.mercury_scheme()
    worst_t = worst_h = 0.0
    for _ in range(10):
        drv = {k: am.DriveField(k, detuning=rng.normal() * 1e7, polarization=rng.normal(size=3) + 1j * rng.normal(size=3),
                                rabi=rng.uniform(0, 1e8)) for k in "swr"}
        s = lv.AtomSystem(scheme, drv, pump_r=rng.uniform(0, 1e7), pump_cd=rng.uniform(0, 1e7),
                          linewidths=tuple(rng.uniform(0, 1e6, 3)))
        L = s.liouvillian(rng.normal() * 1e6)
        t = lv.trace_row(scheme.dimension)
        worst_t = max(worst_t, np.linalg.norm(t @ L) / np.linalg.norm(L))
        A = rng.normal(size=(13, 13)) + 1j * rng.normal(size=(13, 13))
        rho = A + A.conj().T
        out_rho = lv.apply(L, rho)
        worst_h = max(worst_h, np.abs(out_rho - out_rho.conj().T).max() / np.abs(out_rho).max())
    record("trace preservation", worst_t < 1e-10, f"{worst_t:.2e}")
    record("hermiticity preservation", worst_h < 1e-12, f"{worst_h:.2e}")

    geo = dp.mercury_geometry()
    v = rng.normal(size=(100, 3)) * 300
    d3 = [dp.three_photon_detuning([0, 0, 0, 0], geo, x) for x in v]
    record("three-photon closure", np.max(np.abs(d3)) < 1e-6, f"{np.max(np.abs(d3)):.2e} rad/s")

    psi = co.ComplexField2D(rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64)), 4e-3, 253.7)
    p2 = co.fresnel_propagate(psi, 0.05)
    err = abs(p2.power() - psi.power()) / psi.power()
    record("free propagation unitary", err < 1e-12, f"{err:.2e}")
    a = co.medium_propagate(psi, 0.0, 0.05, 8)
    b = co.fresnel_propagate(psi, 0.05)
    err = np.linalg.norm(a.values - b.values) / np.linalg.norm(b.values)
    record("split operator chi=0 identity", err < 1e-12, f"{err:.2e}")

    n1 = lp.stationary_photon_number(lp.GainParameters(2.0, 1.0, 0.0))
    n2 = lp.stationary_photon_number(lp.GainParameters(1.0, 1.0, 1.0))
    n0 = lp.stationary_photon_number(lp.GainParameters(-1.0, 1.0, 1.0))
    record("photon number branches", n0 == 0 and abs(n1 - 2) < 1e-12 and abs(n2 - (5 ** 0.5 - 1) / 2) < 1e-12,
           f"{n0}, {n1}, {n2:.6f}")
    ratio = lp.pump_power(2e6, 4e-6) / lp.pump_power(1e6, 4e-6)
    record("pump power linear", abs(ratio - 2) < 1e-12, f"{ratio:.15f}")
    return out


def cmd_selfcheck(run: Run, args) -> bool:
    results = selfcheck(run.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    run.write_csv("selfcheck.csv", ["check", "passed", "detail"], [(n, str(ok), d) for n, ok, d in results])
    return all(ok for _, ok, _ in results)


COMMANDS = {
    "spectrum": cmd_spectrum,
    "noise-sweep": cmd_noise_sweep,
    "power": cmd_power,
    "threshold": cmd_threshold,
    "gain3d": cmd_gain3d,
    "cavity": cmd_cavity,
    "selfcheck": cmd_selfcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mercury-lwi", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML configuration file (defaults when omitted)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads for independent sweep points")
        p.add_argument("--seed", type=int, default=None, help="overrides run.seed")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("spectrum", "noise-sweep", "power", "threshold", "gain3d", "cavity"):
            p.add_argument("--doppler", action=argparse.BooleanOptionalAction, default=None,
                           help="velocity averaging (default: doppler.enabled)")
        if name == "spectrum":
            p.add_argument("--noise", action=argparse.BooleanOptionalAction, default=None,
                           help="phase-diffusion averaging with the configured linewidths (default: on)")
        if name == "cavity":
            p.add_argument("--loaded", action=argparse.BooleanOptionalAction, default=None,
                           help="include the gain medium (default: cavity_optics.loaded)")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        seed = cfg["run"]["seed"] if args.seed is None else args.seed
        if seed < 0:
            raise ConfigError("--seed must be >= 0")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(cfg, args.command, args.out, argv, args.threads, seed)
    try:
        ok = COMMANDS[args.command](run, args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        run.manifest("non-convergence")
        return EXIT_NUMERICS
    except (ConfigError, ValueError) as exc:
        # parameter combinations the schema cannot catch, e.g. an infeasible geometry
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run.manifest()
    return EXIT_FAIL if ok is False else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
