"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The lines are collected again in the terminal summary (see conftest.py).
"""

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.optimize import curve_fit

from mercury_lwi import atom_model as am
from mercury_lwi import cavity_optics as co
from mercury_lwi import cli
from mercury_lwi import doppler as dp
from mercury_lwi import gain_field as gf
from mercury_lwi import laser_power as lp
from mercury_lwi import liouvillian as lv
from mercury_lwi.config import default_config, parse_config
from mercury_lwi.constants import TWO_PI, mhz


def test_criterion_01_doppler_fwhm(report):
    fwhm = dp.doppler_fwhm(253.7, 300.0, 200.6)
    ok = abs(fwhm / 1.04e9 - 1) <= 0.01
    report(1, ok, f"Doppler FWHM {fwhm / 1e9:.4f} GHz (target 1.04 GHz +-1%)")
    assert ok


def test_criterion_02_vapor_density(report):
    n = dp.vapor_density(300.0) * 1e-6
    ok = abs(n / 9.2e13 - 1) <= 0.02
    report(2, ok, f"N(300 K) = {n:.4g} cm^-3 (target 9.2e13 +-2%)")
    assert ok


def test_criterion_03_recoil_shift(report):
    f = dp.recoil_shift(253.7, 200.6) / TWO_PI
    ok = abs(f / 15e3 - 1) <= 0.02
    report(3, ok, f"recoil shift 2pi x {f / 1e3:.3f} kHz (target 15 kHz +-2%)")
    assert ok


def test_criterion_04_rabi_calibration(report):
    sch = am.mercury_scheme()
    out = []
    for tr_name, P, lam, S, target in (("ca", 0.2, 435.8, 6.83, 33.5e6), ("cd", 1.4e-3, 546.1, 11.8, 3.7e6)):
        tr = sch.transitions[tr_name]
        assert tr.strength == pytest.approx(S)
        beam = gf.GaussianBeamSpec(2e-3, P, lam, polarization=am.E_Y)
        comps = gf.power_to_peak_rabi(beam, tr, sch.J(tr.upper))
        out.append((max(abs(v) for v in comps.values()) / TWO_PI, target))
    ok = all(abs(v / t - 1) <= 0.05 for v, t in out)
    report(4, ok, ", ".join(f"{v / 1e6:.3f} MHz (target {t / 1e6:.1f})" for v, t in out))
    assert ok


def _four_level(r):
    drives = {"s": am.DriveField("s", polarization=am.E_Z, rabi=mhz(20.7)),
              "w": am.DriveField("w", polarization=am.E_Z, rabi=mhz(0.3))}
    return lv.AtomSystem(am.four_level_scheme(), drives, probe_rabi=TWO_PI * 10.0, pump_r=r)


def _fwhm_of_peak(x, y):
    """Full width at half height above the window edges of the extremum at the centre."""
    base = 0.5 * (y[0] + y[-1])
    i0 = np.argmax(np.abs(y - base))
    half = base + 0.5 * (y[i0] - base)
    above = np.abs(y - base) >= np.abs(half - base)
    lo = hi = i0
    while lo > 0 and above[lo - 1]:
        lo -= 1
    while hi < len(y) - 1 and above[hi + 1]:
        hi += 1
    # linear interpolation at both crossings
    def cross(i, j):
        return x[i] + (half - y[i]) * (x[j] - x[i]) / (y[j] - y[i])

    return cross(hi, hi + 1) - cross(lo - 1, lo)


def test_criterion_05_four_level_spectrum(report):
    step = mhz(0.1)
    coarse = np.arange(-400, 401) * step
    fine = TWO_PI * np.linspace(-20e3, 20e3, 801)
    s0, s5 = _four_level(0.0), _four_level(5e3)
    im0 = np.concatenate([lv.spectrum_scan(s0, coarse).imag, lv.spectrum_scan(s0, fine).imag])
    nonneg = im0.min() >= -1e-12 * im0.max()

    chi = lv.spectrum_scan(s0, coarse).imag
    side = np.abs(coarse) > mhz(1.0)
    pos = coarse[side & (coarse > 0)][np.argmax(chi[side & (coarse > 0)])]
    neg = coarse[side & (coarse < 0)][np.argmax(chi[side & (coarse < 0)])]
    at_ok = abs(pos - mhz(20.7)) <= step / 2 + 1e-6 and abs(neg + mhz(20.7)) <= step / 2 + 1e-6

    width = _fwhm_of_peak(fine, lv.spectrum_scan(s0, fine).imag) / TWO_PI
    width_ok = 100.0 <= width <= 10e3
    centre = s5.susceptibility(0.0).imag
    gain_ok = centre < 0

    ok = nonneg and at_ok and width_ok and gain_ok
    report(5, ok, f"chi''>=0 at r=0: {nonneg}; AT maxima at {neg / TWO_PI / 1e6:+.2f}/{pos / TWO_PI / 1e6:+.2f} MHz "
                  f"(grid 0.1 MHz, target +-20.7): {at_ok}; central FWHM {width:.0f} Hz (order 1 kHz): {width_ok}; "
                  f"chi''(0) at r=5 kHz = {centre:.3g}: {gain_ok}")
    assert ok


def _lorentz(x, c, a, x0, hw):
    return c + a / (1 + ((x - x0) / hw) ** 2)


def _fit_central_peak(system, quad=None, geo=None, span=2e6, points=81):
    d = TWO_PI * np.linspace(-span, span, points)
    im = lv.spectrum_scan(system, d, quad, geo).imag
    edge = 0.5 * (im[0] + im[-1])
    p0 = (edge, im[points // 2] - edge, 0.0, TWO_PI * 100e3)
    (c, a, x0, hw), _ = curve_fit(_lorentz, d, im, p0=p0, maxfev=20000)
    return 2 * abs(hw) / TWO_PI, a, im[points // 2]


@pytest.mark.slow
def test_criterion_06_thirteen_level_widths(report):
    system = cli.build_system(default_config())
    w_rest, a_rest, c_rest = _fit_central_peak(system)
    geo = dp.mercury_geometry()
    quad = dp.line_quadrature(300.0, 24, geo)
    w_dop, a_dop, c_dop = _fit_central_peak(system, quad, geo)
    ok_rest = a_rest < 0 and abs(w_rest / 171e3 - 1) <= 0.1
    ok_dop = a_dop < 0 and abs(w_dop / 256e3 - 1) <= 0.1
    ok = ok_rest and ok_dop
    shape = {True: "dip", False: "bump"}
    report(6, ok, f"at rest: FWHM {w_rest / 1e3:.0f} kHz, central {shape[a_rest < 0]} in chi'' "
                  f"(chi''(0) = {c_rest:.3g}), target 171 kHz dip; Doppler: FWHM {w_dop / 1e3:.0f} kHz, "
                  f"{shape[a_dop < 0]} (chi''(0) = {c_dop:.3g}), target 256 kHz dip")
    assert ok


def _ladder_mc(system, b_s, n, dt, t_end, seed):
    """Ensemble of density matrices under a randomly diffusing strong-drive phase.

    The drive phase performs a Wiener process with diffusion 2 b_s; each
    trajectory evolves under the noise-free Lindblad generator between
    phase kicks (Strang splitting), and the kick rotates the coherences of
    c against a and b.
    """
    sch = system.scheme
    a, b, c = 0, 1, 2
    H = np.zeros((3, 3), complex)
    H[b, a] = H[a, b] = -system.probe_rabi
    H[a, c] = H[c, a] = -system.drives["s"].rabi
    eye = np.eye(3)
    L = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for name, (lo, up) in (("ab", (b, a)), ("ca", (a, c))):
        s = np.zeros((3, 3))
        s[lo, up] = 1
        L += sch.transitions[name].gamma * (np.kron(s.conj(), s) - 0.5 * np.kron(eye, s.T @ s)
                                             - 0.5 * np.kron((s.T @ s).T, eye))
    p = np.array([0.0, 0.0, 1.0])
    dphase = (p[:, None] - p[None, :]).reshape(-1, order="F")
    half = expm(L * dt / 2).T
    rng = np.random.default_rng(seed)
    v = np.zeros((n, 9), complex)
    v[:, b + 3 * b] = 1
    for _ in range(int(round(t_end / dt))):
        v = v @ half
        kick = np.sqrt(2 * b_s * dt) * rng.standard_normal(n)
        v = v * np.exp(-1j * np.outer(kick, dphase))
        v = v @ half
    return v.reshape(-1, 3, 3).transpose(0, 2, 1)


@pytest.mark.slow
def test_criterion_07_phase_diffusion_oracle(report):
    trs = {k: am.MERCURY_TRANSITIONS[k] for k in ("ab", "ca")}
    sch = am.LevelScheme(tuple(am.Level(x, 6, 0, 0) for x in "abc"), trs, scalar=True)
    b_s = mhz(3.0)
    system = lv.AtomSystem(sch, {"s": am.DriveField("s", rabi=mhz(6.0))}, probe_rabi=mhz(2.0),
                           linewidths=(b_s, 0.0, 0.0), density=1.0)
    ref = lv.steady_state(system.liouvillian(0.0)).rho
    rho = _ladder_mc(system, b_s, n=10_000, dt=4e-10, t_end=2e-6, seed=2024)
    parts = []
    ok = True
    for label, (i, j), f in (("aa", (0, 0), np.real), ("cc", (2, 2), np.real),
                             ("Re ba", (1, 0), np.real), ("Im ba", (1, 0), np.imag)):
        x = f(rho[:, i, j])
        se = x.std(ddof=1) / np.sqrt(len(x))
        z = (x.mean() - f(ref[i, j])) / se
        ok &= abs(z) <= 3
        parts.append(f"{label} z={z:+.2f}")
    report(7, ok, "MC (1e4 trajectories) vs steady state: " + ", ".join(parts))
    assert ok


def test_criterion_08_superoperator_properties(report):
    rng = np.random.default_rng(8)
    worst_t = worst_h = 0.0
    for i in range(100):
        scheme = am.mercury_scheme() if i % 2 else am.four_level_scheme()
        names = ("s", "w") if scheme.scalar else ("s", "w", "r")
        drives = {n: am.DriveField(n, detuning=rng.normal() * 1e7,
                                   polarization=rng.normal(size=3) + 1j * rng.normal(size=3),
                                   rabi=rng.uniform(0, 1e8) * np.exp(1j * rng.uniform(0, 2 * np.pi)))
                  for n in names}
        s = lv.AtomSystem(scheme, drives, probe_rabi=rng.uniform(1e2, 1e6), pump_r=rng.uniform(0, 1e7),
                          pump_cd=rng.uniform(0, 1e7), linewidths=tuple(rng.uniform(0, 1e6, 3)))
        L = s.liouvillian(rng.normal() * 1e7)
        dim = scheme.dimension
        worst_t = max(worst_t, np.linalg.norm(lv.trace_row(dim) @ L) / np.linalg.norm(L))
        A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        out = lv.apply(L, A + A.conj().T)
        worst_h = max(worst_h, np.abs(out - out.conj().T).max() / np.abs(out).max())
    ok = worst_t < 1e-10 and worst_h < 1e-12
    report(8, ok, f"100 configs: trace {worst_t:.1e} (<1e-10), hermiticity {worst_h:.1e} (<1e-12)")
    assert ok


def test_criterion_09_photon_number(report):
    below = [lp.stationary_photon_number(lp.GainParameters(a, 1.0, 0.5)) for a in (-2.0, -1e-9, 0.0)]
    limit = [lp.stationary_photon_number(lp.GainParameters(3.0, 2.0, g)) for g in (1e-10, 1e-14, 0.0)]
    near = [lp.stationary_photon_number(lp.GainParameters(a, 1.0, 0.5)) for a in (1e-7, 1e-9, 1e-12)]
    ok = (all(n == 0 for n in below) and all(abs(n - 1.5) < 1e-6 for n in limit)
          and all(0 <= n < 1e-6 for n in near))
    report(9, ok, f"below threshold {below}; gamma->0 {[f'{n:.8f}' for n in limit]} (alpha/beta = 1.5); "
                  f"alpha->0+ {[f'{n:.1e}' for n in near]}")
    assert ok


@pytest.mark.slow
def test_criterion_10_threshold_shapes(report):
    cfg = parse_config("[doppler]\nenabled = true\n")
    p = cfg["laser_power"]
    system = cli.build_system(cfg)
    quad, geo = cli.build_doppler(cfg, system.scheme, True)
    cavity = cli.build_cavity_params(cfg)
    b_r = system.linewidths[2]
    thresholds = []
    for b_s, b_w in p["linewidth_sets"]:
        s = system.with_(linewidths=(TWO_PI * b_s, TWO_PI * b_w, b_r))
        try:
            thresholds.append(lp.threshold_rate(s, cavity, quad, geo, p["r_max"], p["iterations"]))
        except lp.ThresholdNotFound:
            thresholds.append(float("nan"))
    found = np.all(np.isfinite(thresholds))
    ordered = found and all(a < b for a, b in zip(thresholds, thresholds[1:]))
    r2 = []
    if found:
        for (b_s, b_w), r_thr in zip(p["linewidth_sets"], thresholds):
            s = system.with_(linewidths=(TWO_PI * b_s, TWO_PI * b_w, b_r))
            pts = lp.power_curve(s, r_thr * np.array([1.5, 2.0, 3.0, 4.0]), cavity, quad, geo, p["area"])
            x = np.array([q.pump_power for q in pts])
            y = np.array([q.power for q in pts])
            resid = y - np.polyval(np.polyfit(x, y, 1), x)
            r2.append(1 - resid @ resid / np.sum((y - y.mean()) ** 2))
    linear = found and min(r2) > 0.99
    surface = lp.threshold_scan(system, [TWO_PI * b for b in p["b_s_grid"]], [TWO_PI * b for b in p["b_w_grid"]],
                                cavity, quad, geo, p["area"], r_max=p["r_max"], iterations=p["iterations"])
    R = surface.rate_threshold
    monotone = bool(np.all(np.isfinite(R)) and np.all(np.diff(R, axis=0) >= 0) and np.all(np.diff(R, axis=1) >= 0))
    alpha_max = [-lp.probe_omega(system.scheme) / cavity.Q - lp.probe_omega(system.scheme) * cavity.overlap_ratio
                 * lp.linear_chi_imag(system.with_(pump_r=p["r_max"], linewidths=(TWO_PI * b_s, TWO_PI * b_w, b_r)),
                                      quad, geo)
                 for b_s, b_w in p["linewidth_sets"][:1]]
    ok = ordered and linear and monotone
    report(10, ok, f"thresholds r = {[f'{t:.3g}' for t in thresholds]} s^-1 (ordered: {ordered}); "
                   f"R^2 {[f'{v:.4f}' for v in r2]} (linear: {linear}); surface finite and monotone: {monotone}; "
                   f"alpha at r_max for the first set {alpha_max[0]:.3g} s^-1")
    assert ok


@pytest.fixture(scope="module")
def empty_cavity():
    cav = co.CavitySpec()
    return cav, co.dominant_modes(cav, None, count=4)


def test_criterion_11_cavity_optics(report, empty_cavity):
    w0 = 2e-4
    psi = co.ComplexField2D(np.zeros((256, 256)), 8e-3, 253.7)
    X, Y = psi.mesh()
    psi = psi.with_values(np.exp(-(X ** 2 + Y ** 2) / w0 ** 2))
    zr = np.pi * w0 ** 2 / 253.7e-9
    waist_err = max(abs(2 * np.sqrt(co.second_moments(co.fresnel_propagate(psi, dz))[2])
                        / (w0 * np.sqrt(1 + (dz / zr) ** 2)) - 1) for dz in (0.2, 0.5, 0.9))
    a = co.medium_propagate(psi, 0.0, 0.05, 32).values
    b = co.fresnel_propagate(psi, 0.05).values
    ident = np.linalg.norm(a - b) / np.linalg.norm(b)
    chi = -3e-7j
    gain = co.medium_propagate(psi, chi, 0.05, 16).power() / psi.power()
    slab = abs(gain / np.exp(-psi.k * chi.imag * 0.05) - 1)

    cav, modes = empty_cavity
    wx, wy = co.cavity_waists(cav)
    ref = co.hermite_gauss_mode(0, 0, wx, -cav.arm / 2, modes[0].profile, waist_y=wy)
    overlap = abs(np.vdot(ref.values, modes[0].profile.values))

    grid = co.ComplexField2D(np.zeros((256, 256)), 4e-3, 253.7)
    m2 = [co.beam_quality_m2(co.hermite_gauss_mode(m, 0, 2.5e-4, 0.05, grid))[0] for m in range(4)]
    m2_err = max(abs(v / (2 * m + 1) - 1) for m, v in enumerate(m2))

    ok = waist_err < 5e-3 and ident < 1e-12 and slab < 1e-6 and overlap > 0.99 and m2_err < 0.02
    report(11, ok, f"waist law {waist_err:.1e} (<5e-3); chi=0 identity {ident:.1e}; slab {slab:.1e} (<1e-6); "
                   f"TEM00 overlap {overlap:.4f} (>0.99); HG(m,0) M^2 {[f'{v:.3f}' for v in m2]} "
                   f"(max rel err {m2_err:.1e} < 2e-2)")
    assert ok


def _fundamental(modes, cav):
    wx, wy = co.cavity_waists(cav)
    ref = co.hermite_gauss_mode(0, 0, wx, -cav.arm / 2, modes[0].profile, waist_y=wy).values
    return max(modes, key=lambda m: abs(np.vdot(ref, m.profile.values)))


@pytest.mark.slow
def test_criterion_12_loaded_cavity(report, empty_cavity):
    cfg = parse_config("[doppler]\nenabled = true\n[cavity_optics]\nloss_factor = 0.95\n")
    system = cli.build_system(cfg)
    geo_beams = cli.build_geometry(system.scheme)
    quad, geo = cli.build_doppler(cfg, system.scheme, True)
    table = gf.make_table(cli.build_beams(cfg, geo_beams), system, quad, geo, 16, "cubic").build()
    cav = cli.build_cavity(cfg, True)
    waists = np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0]) * 1e-3
    gains, m2x = [], []
    for w0 in waists:
        chi = gf.susceptibility_at(cli.build_beams(cfg, geo_beams, w0), system, table)
        modes = co.dominant_modes(cav, chi, count=4)
        m = _fundamental(modes, cav)
        gains.append(m.gain)
        m2x.append(co.beam_quality_m2(m.profile)[0])
    gains, m2x = np.array(gains), np.array(m2x)
    empty_m2 = co.beam_quality_m2(_fundamental(empty_cavity[1], empty_cavity[0]).profile)[0]

    crosses = bool(gains.min() < 1 < gains.max())
    saturates = abs(gains[-1] - gains[-2]) < 0.1 * abs(gains[-1] - gains[0])
    interior = 0 < int(np.argmin(m2x)) < len(m2x) - 1
    approaches = abs(m2x[-1] - empty_m2) < abs(m2x[np.argmin(m2x)] - empty_m2) + 0.1 * abs(empty_m2)
    ok = crosses and saturates and interior and approaches
    report(12, ok, f"|gamma00|^2(w0) {[f'{g:.4f}' for g in gains]} crosses 1: {crosses}, saturates: {saturates}; "
                   f"M2_x {[f'{v:.3f}' for v in m2x]} (empty {empty_m2:.3f}) interior min: {interior}, "
                   f"approaches empty: {approaches}")
    assert ok
