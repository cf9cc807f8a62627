"""Three-wave sum-frequency mixing of a short pump gate with a signal.

Envelopes are in sqrt(W), time in ps, position in mm, coupling ``kappa`` in
W^-1/2 mm^-1. The solver works in the frame moving with the pump:

    dA_s/dz + d_s dA_s/dt = i k_s A_f A_p* exp(-i dk z)
    dA_p/dz               = i k_p A_f A_s* exp(-i dk z)
    dA_f/dz + d_f dA_f/dt = i k_f A_s A_p  exp(+i dk z)

with d_j the group-slowness offsets from the pump (ps/mm) and
k_j = kappa * omega_j / omega_f, which makes both Manley-Rowe photon-flux
sums exact invariants of the nonlinear step. Linear advection is applied
spectrally (Strang splitting) and the nonlinear part with classical RK4.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from . import dispersion
from .dispersion import CrystalSpec
from .errors import ConfigurationError, DomainError, EmptyResponseError, FitError, SolverAccuracyError
from .io import write_csv, write_json

SECH2_FWHM_FACTOR = 2.0 * math.log(1.0 + math.sqrt(2.0))
REP_RATE_MHZ = 76.0

# kappa such that the dip FWHM is 4.0 ps at 1.5 mW average pump power on
# DEFAULT_GRID (see calibrate_kappa; re-checked in the test suite).
DEFAULT_KAPPA = 0.08822

MANLEY_ROWE_TOL = 1e-4
EDGE_TOL = 1e-6


@dataclass(frozen=True)
class PulseSpec:
    shape: str = "sech2"
    fwhm_ps: float = 2.5
    peak_power_mw: float = 0.0
    center_nm: float = 990.0
    delay_ps: float = 0.0

    def __post_init__(self):
        if self.shape not in ("sech2", "gaussian", "cw"):
            raise ConfigurationError(f"unknown pulse shape {self.shape!r}")
        if self.shape != "cw" and not self.fwhm_ps > 0:
            raise ConfigurationError("pulse FWHM must be positive")
        if not self.peak_power_mw >= 0:
            raise ConfigurationError("peak power must be non-negative")

    @property
    def tau0_ps(self):
        """sech^2 width parameter (FWHM = 2 ln(1 + sqrt 2) tau0)."""
        return self.fwhm_ps / SECH2_FWHM_FACTOR

    def energy_pj(self):
        """Pulse energy for the given peak power; per ps for cw."""
        p_w = self.peak_power_mw * 1e-3
        if self.shape == "sech2":
            return p_w * 2.0 * self.tau0_ps
        if self.shape == "gaussian":
            return p_w * self.fwhm_ps * math.sqrt(math.pi / (4.0 * math.log(2.0)))
        return p_w


def peak_power_from_average(avg_power_mw, fwhm_ps, shape="sech2", rep_rate_mhz=REP_RATE_MHZ):
    """Peak power (mW) of a pulse train with the given average power.

    Energy per pulse is avg / rep_rate; the peak follows from the integral
    of the normalised intensity profile (2 tau0 for sech^2).
    """
    energy = avg_power_mw / (rep_rate_mhz * 1e6)  # mJ
    width = PulseSpec(shape, fwhm_ps, 1000.0).energy_pj()  # ps, for 1 W peak
    if shape == "cw":
        return float(avg_power_mw)
    return energy / (width * 1e-12)


@dataclass(frozen=True)
class GridSpec:
    time_window_ps: float = 80.0
    n_time: int = 2048
    n_z: int = 400

    def __post_init__(self):
        if self.n_time < 1024 or self.n_time & (self.n_time - 1):
            raise ConfigurationError("n_time must be a power of two >= 1024")
        if self.n_z < 100:
            raise ConfigurationError("n_z must be >= 100")
        if not self.time_window_ps > 0:
            raise ConfigurationError("time window must be positive")

    @property
    def dt(self):
        return self.time_window_ps / self.n_time

    def t(self):
        return (np.arange(self.n_time) - self.n_time // 2) * self.dt


DEFAULT_GRID = GridSpec()


def make_pulse(spec: PulseSpec, grid: GridSpec) -> np.ndarray:
    """Complex envelope (sqrt W) with max |A|^2 = peak power."""
    t = grid.t()
    amp = math.sqrt(spec.peak_power_mw * 1e-3)
    if spec.shape == "cw":
        return np.full(t.shape, amp, dtype=complex)
    half = grid.time_window_ps / 2
    if abs(spec.delay_ps) + 3 * spec.fwhm_ps > half:
        raise ConfigurationError(
            f"time window {grid.time_window_ps} ps too small for a {spec.fwhm_ps} ps pulse at {spec.delay_ps} ps"
        )
    x = t - spec.delay_ps
    if spec.shape == "sech2":
        env = 1.0 / np.cosh(x / spec.tau0_ps)
    else:
        env = np.exp(-2.0 * math.log(2.0) * (x / spec.fwhm_ps) ** 2)
    return (amp * env).astype(complex)


@dataclass
class FieldRecord:
    """Envelopes of pump, signal and SFG at checkpoints along the crystal.

    Array shapes are (n_checkpoints, n_time).
    """

    t: np.ndarray
    z: np.ndarray
    pump: np.ndarray
    signal: np.ndarray
    sfg: np.ndarray
    crystal: CrystalSpec
    pump_spec: PulseSpec
    signal_spec: PulseSpec
    grid: GridSpec
    delta_signal: float
    delta_sfg: float
    delta_k: float
    sfg_nm: float
    manley_rowe_drift: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def dt(self):
        return self.t[1] - self.t[0]

    def energy(self, wave, index=-1):
        """Integral of |A|^2 dt (pJ) at a checkpoint."""
        return float(np.sum(np.abs(getattr(self, wave)[index]) ** 2) * self.dt)

    def photon_fluxes(self, index):
        """Manley-Rowe sums (signal+SFG, pump+SFG), photon energies as 1/lambda."""
        ws = 1.0 / self.signal_spec.center_nm
        wp = 1.0 / self.pump_spec.center_nm
        wf = 1.0 / self.sfg_nm
        es, ep, ef = (self.energy(w, index) for w in ("signal", "pump", "sfg"))
        return es / ws + ef / wf, ep / wp + ef / wf

    def metadata(self):
        return {
            "crystal": vars(self.crystal),
            "pump": vars(self.pump_spec),
            "signal": vars(self.signal_spec),
            "grid": vars(self.grid),
            "delta_signal_ps_per_mm": self.delta_signal,
            "delta_sfg_ps_per_mm": self.delta_sfg,
            "delta_k_rad_per_mm": self.delta_k,
            "sfg_nm": self.sfg_nm,
            "z_mm": self.z,
            "manley_rowe_drift": self.manley_rowe_drift,
        }

    def export(self, stem):
        """Write ``<stem>_meta.json`` and one power matrix CSV per wave."""
        stem = Path(stem)
        write_json(f"{stem}_meta.json", self.metadata())
        header = ["t_ps"] + [f"z_{z!r}" for z in self.z]
        for wave in ("pump", "signal", "sfg"):
            power = np.abs(getattr(self, wave)) ** 2
            write_csv(f"{stem}_{wave}.csv", header, [self.t, *power])


def _check_window(crystal, pump, grid, delta_s, delta_f):
    L = crystal.length_mm
    walk = max(abs(delta_f), abs(delta_s)) * L
    need = 6 * pump.fwhm_ps + walk
    if grid.time_window_ps < need:
        raise ConfigurationError(
            f"time window {grid.time_window_ps} ps < 6 x FWHM + walk-off = {need:.3g} ps"
        )
    lo = pump.delay_ps - 3 * pump.fwhm_ps + min(0.0, delta_f * L, delta_s * L)
    hi = pump.delay_ps + 3 * pump.fwhm_ps + max(0.0, delta_f * L, delta_s * L)
    half = grid.time_window_ps / 2
    if lo < -half or hi > half:
        raise ConfigurationError(
            f"pump plus walk-off spans [{lo:.3g}, {hi:.3g}] ps, outside the window +-{half:.3g} ps;"
            " shift the pump delay or widen the window"
        )


def propagate(
    crystal: CrystalSpec,
    pump: PulseSpec,
    signal: PulseSpec,
    grid: GridSpec = DEFAULT_GRID,
    checkpoints: int = 64,
    delta_k: float = 0.0,
    model=None,
    check: bool = True,
) -> FieldRecord:
    """Integrate the coupled SFG equations over the crystal length."""
    if pump.shape == "cw":
        raise ConfigurationError("the pump must be pulsed")
    if checkpoints < 2 or checkpoints - 1 > grid.n_z:
        raise ConfigurationError("need 2 <= checkpoints <= n_z + 1")
    T = crystal.temperature_c
    lam_f = dispersion.sfg_wavelength(signal.center_nm, pump.center_nm)
    d_s = dispersion.group_slowness_difference(signal.center_nm, pump.center_nm, T, model)
    d_f = dispersion.group_slowness_difference(lam_f, pump.center_nm, T, model)
    _check_window(crystal, pump, grid, d_s, d_f)

    a_s = make_pulse(signal, grid)
    a_p = make_pulse(pump, grid)
    a_f = np.zeros_like(a_p)

    wf = 1.0 / lam_f
    k_s = crystal.kappa * (1.0 / signal.center_nm) / wf
    k_p = crystal.kappa * (1.0 / pump.center_nm) / wf
    k_f = crystal.kappa

    L = crystal.length_mm
    n_z = grid.n_z
    dz = L / n_z
    omega = 2 * np.pi * np.fft.fftfreq(grid.n_time, grid.dt)
    # a delay of d*dz/2 is a factor exp(-i omega d dz/2) with numpy's FFT sign
    half_s = np.exp(-1j * omega * d_s * dz / 2)
    half_f = np.exp(-1j * omega * d_f * dz / 2)

    def advect(s, f):
        return np.fft.ifft(np.fft.fft(s) * half_s), np.fft.ifft(np.fft.fft(f) * half_f)

    def rhs(z, s, p, f):
        ph = np.exp(-1j * delta_k * z) if delta_k else 1.0
        return (
            1j * k_s * f * np.conj(p) * ph,
            1j * k_p * f * np.conj(s) * ph,
            1j * k_f * s * p * np.conj(ph),
        )

    ck_steps = np.round(np.linspace(0, n_z, checkpoints)).astype(int)
    out_s = np.empty((checkpoints, grid.n_time), complex)
    out_p = np.empty_like(out_s)
    out_f = np.empty_like(out_s)
    out_s[0], out_p[0], out_f[0] = a_s, a_p, a_f
    ck = 1
    coupled = crystal.kappa > 0 and pump.peak_power_mw > 0
    for step in range(1, n_z + 1):
        z0 = (step - 1) * dz
        a_s, a_f = advect(a_s, a_f)
        if coupled:
            s1, p1, f1 = rhs(z0, a_s, a_p, a_f)
            s2, p2, f2 = rhs(z0 + dz / 2, a_s + dz / 2 * s1, a_p + dz / 2 * p1, a_f + dz / 2 * f1)
            s3, p3, f3 = rhs(z0 + dz / 2, a_s + dz / 2 * s2, a_p + dz / 2 * p2, a_f + dz / 2 * f2)
            s4, p4, f4 = rhs(z0 + dz, a_s + dz * s3, a_p + dz * p3, a_f + dz * f3)
            a_s = a_s + dz / 6 * (s1 + 2 * s2 + 2 * s3 + s4)
            a_p = a_p + dz / 6 * (p1 + 2 * p2 + 2 * p3 + p4)
            a_f = a_f + dz / 6 * (f1 + 2 * f2 + 2 * f3 + f4)
        a_s, a_f = advect(a_s, a_f)
        if ck < checkpoints and step == ck_steps[ck]:
            out_s[ck], out_p[ck], out_f[ck] = a_s, a_p, a_f
            ck += 1

    rec = FieldRecord(
        t=grid.t(),
        z=ck_steps * dz,
        pump=out_p,
        signal=out_s,
        sfg=out_f,
        crystal=crystal,
        pump_spec=pump,
        signal_spec=signal,
        grid=grid,
        delta_signal=float(d_s),
        delta_sfg=float(d_f),
        delta_k=float(delta_k),
        sfg_nm=float(lam_f),
    )
    rec.manley_rowe_drift = _manley_rowe_drift(rec)
    if check:
        if rec.manley_rowe_drift > MANLEY_ROWE_TOL:
            raise SolverAccuracyError(
                f"Manley-Rowe drift {rec.manley_rowe_drift:.3g} exceeds {MANLEY_ROWE_TOL}; increase n_z"
            )
        _check_edges(rec)
    return rec


def _manley_rowe_drift(rec):
    s0 = np.array(rec.photon_fluxes(0))
    worst = 0.0
    for i in range(1, len(rec.z)):
        s = np.array(rec.photon_fluxes(i))
        ok = s0 > 0
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(s[ok] - s0[ok]) / s0[ok])))
    return worst


def _edge_fraction(y):
    m = np.max(y)
    if m == 0:
        return 0.0
    n = max(1, len(y) // 256)
    return float(max(np.max(y[:n]), np.max(y[-n:])) / m)


def _check_edges(rec):
    waves = {
        "pump": np.abs(rec.pump[-1]),
        "sfg": np.abs(rec.sfg[-1]),
        "signal depletion": np.abs(_reference_signal(rec) - np.abs(rec.signal[-1]) ** 2),
    }
    for name, y in waves.items():
        frac = _edge_fraction(y)
        if frac > EDGE_TOL:
            raise ConfigurationError(
                f"{name} envelope reaches {frac:.2g} of its maximum at the grid edge (wraparound);"
                " widen the time window"
            )


def _reference_signal(rec):
    """Input signal power advected to z = L without coupling."""
    a0 = rec.signal[0]
    omega = 2 * np.pi * np.fft.fftfreq(len(a0), rec.dt)
    shift = np.exp(-1j * omega * rec.delta_signal * rec.z[-1])
    return np.abs(np.fft.ifft(np.fft.fft(a0) * shift)) ** 2


def fwhm(t, y):
    """Full width at half maximum by linear interpolation between samples."""
    y = np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    half = y[i] / 2
    if not half > 0:
        raise EmptyResponseError("profile has no positive maximum")
    left = np.flatnonzero(y[:i] < half)
    right = np.flatnonzero(y[i:] < half)
    if left.size == 0 or right.size == 0:
        raise EmptyResponseError("profile does not fall to half maximum inside the window")
    a = left[-1]
    b = i + right[0]
    tl = t[a] + (half - y[a]) * (t[a + 1] - t[a]) / (y[a + 1] - y[a])
    tr = t[b - 1] + (half - y[b - 1]) * (t[b] - t[b - 1]) / (y[b] - y[b - 1])
    return float(tr - tl)


@dataclass
class GateResponse:
    """Normalised instrument response h(t) (unit area, 1/ps)."""

    t: np.ndarray
    h: np.ndarray
    fwhm: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.h = np.asarray(self.h, dtype=float)

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    @property
    def span(self):
        return float(self.t[-1] - self.t[0])

    @classmethod
    def from_samples(cls, t, y):
        t = np.asarray(t, dtype=float)
        y = np.clip(np.asarray(y, dtype=float), 0.0, None)
        area = np.sum(y) * (t[1] - t[0])
        if not area > 0:
            raise EmptyResponseError("response has zero area")
        return cls(t, y / area, fwhm(t, y))

    @classmethod
    def gaussian(cls, fwhm_ps, dt=0.05, half_width=None):
        """Synthetic Gaussian gate, mostly for tests and quick studies."""
        half_width = half_width or 4 * fwhm_ps
        n = int(round(half_width / dt))
        t = np.arange(-n, n + 1) * dt
        return cls.from_samples(t, np.exp(-4 * math.log(2) * (t / fwhm_ps) ** 2))

    def to_csv(self, path):
        write_csv(path, ["t_ps", "h"], [self.t, self.h])


def gate_response(record: FieldRecord) -> GateResponse:
    """Instrument response from the depletion dip of a CW signal."""
    ref = _reference_signal(record)
    dip = ref - np.abs(record.signal[-1]) ** 2
    peak = np.max(ref)
    if not np.max(dip) > 1e-12 * peak:
        raise EmptyResponseError("no conversion dip in the signal (zero coupling or zero pump)")
    return GateResponse.from_samples(record.t, dip)


@dataclass
class SweepTable:
    power_mw: list = field(default_factory=list)
    sfg_energy: list = field(default_factory=list)
    resolution_ps: list = field(default_factory=list)

    def to_csv(self, path):
        write_csv(path, ["power_mW", "sfg_energy", "resolution_ps"],
                  [self.power_mw, self.sfg_energy, self.resolution_ps])


def _sweep_point(args):
    crystal, pump, signal, grid, rep_rate_mhz, power = args
    peak = peak_power_from_average(power, pump.fwhm_ps, pump.shape, rep_rate_mhz)
    rec = propagate(crystal, replace(pump, peak_power_mw=peak), signal, grid, checkpoints=2)
    return rec.energy("sfg"), gate_response(rec).fwhm


def sweep_pump_power(powers_mw, crystal, pump, signal, grid=DEFAULT_GRID,
                     rep_rate_mhz=REP_RATE_MHZ, workers=None) -> SweepTable:
    """One solver run per average pump power.

    On a failing point the exception is re-raised with ``.partial`` holding
    the rows computed before it.
    """
    powers = [float(p) for p in powers_mw]
    if any(p <= 0 for p in powers) or any(b < a for a, b in zip(powers, powers[1:])):
        raise ConfigurationError("powers must be positive and ascending")
    table = SweepTable()
    jobs = [(crystal, pump, signal, grid, rep_rate_mhz, p) for p in powers]
    with ThreadPoolExecutor(max_workers=workers or 1) as ex:
        results = ex.map(_sweep_point, jobs)
        for p in powers:
            try:
                energy, res = next(results)
            except Exception as exc:
                exc.partial = table
                raise
            table.power_mw.append(p)
            table.sfg_energy.append(energy)
            table.resolution_ps.append(res)
    return table


def _best_scale(model, measured):
    r = model / measured
    return float(np.sum(r) / np.sum(r * r))


def fit_saturation(powers_mw, measured, initial_kappa, crystal, pump, signal, grid=DEFAULT_GRID,
                   rep_rate_mhz=REP_RATE_MHZ, span=4.0, maxiter=60, workers=None, full_output=False):
    """Fit the single coupling ``kappa`` to a measured saturation curve.

    Minimises relative residuals between the simulated SFG energy (times a
    free global scale, solved in closed form) and ``measured``. The search is
    over log(kappa) within ``initial_kappa`` x/÷ ``span``.
    """
    powers = np.asarray(powers_mw, dtype=float)
    y = np.asarray(measured, dtype=float)
    if len(powers) < 4 or len(powers) != len(y):
        raise FitError("need at least 4 (power, output) points")
    if not np.all(y > 0):
        raise FitError("measured outputs must be positive", residuals=y)
    if not initial_kappa > 0:
        raise DomainError("initial kappa must be positive")

    cache = {}

    def residuals(log_k):
        if log_k not in cache:
            c = replace(crystal, kappa=float(math.exp(log_k)))
            m = np.asarray(sweep_pump_power(powers, c, pump, signal, grid, rep_rate_mhz, workers).sfg_energy)
            s = _best_scale(m, y)
            cache[log_k] = (s * m - y) / y
        return cache[log_k]

    def cost(log_k):
        return float(np.sum(residuals(log_k) ** 2))

    k0 = math.log(initial_kappa)
    res = minimize_scalar(cost, bounds=(k0 - math.log(span), k0 + math.log(span)), method="bounded",
                          options={"xatol": 1e-6, "maxiter": maxiter})
    if not res.success:
        raise FitError(f"saturation fit did not converge: {res.message}", residuals=residuals(res.x))
    kappa = float(math.exp(res.x))
    if full_output:
        return kappa, {"residuals": residuals(res.x), "cost": float(res.fun), "n_eval": int(res.nfev),
                       "at_bound": bool(abs(res.x - k0) > 0.999 * math.log(span))}
    return kappa


def resolution_at(kappa, avg_power_mw=1.5, crystal=None, pump=None, signal=None, grid=DEFAULT_GRID):
    crystal, pump, signal = experiment_setup(avg_power_mw, kappa) if crystal is None else (crystal, pump, signal)
    return gate_response(propagate(crystal, pump, signal, grid, checkpoints=2)).fwhm


def calibrate_kappa(target_fwhm_ps=4.0, avg_power_mw=1.5, bracket=(0.02, 0.3), grid=DEFAULT_GRID):
    """Coupling that yields ``target_fwhm_ps`` at ``avg_power_mw``."""
    def f(k):
        return resolution_at(k, avg_power_mw, grid=grid) - target_fwhm_ps
    try:
        return float(brentq(f, *bracket, xtol=1e-6))
    except ValueError as exc:
        raise FitError(f"target resolution not reachable in kappa bracket {bracket}: {exc}") from None


def experiment_setup(avg_power_mw=1.5, kappa=DEFAULT_KAPPA, signal_nm=812.0, pump_nm=None,
                signal_power_mw=1e-3, pump_fwhm_ps=2.5, rep_rate_mhz=REP_RATE_MHZ):
    """Crystal, sech^2 pump and CW signal at the operating point of the experiment.

    The pump is tuned to QPM for ``signal_nm`` unless given, and delayed so
    that the slower SFG trail stays centred in the default window.
    """
    crystal = CrystalSpec(poling_period_um=3.96, length_mm=12.5, temperature_c=25.0, kappa=kappa)
    if pump_nm is None:
        pump_nm = dispersion.solve_qpm_pump(signal_nm, crystal)
    lam_f = dispersion.sfg_wavelength(signal_nm, pump_nm)
    d_f = dispersion.group_slowness_difference(lam_f, pump_nm, crystal.temperature_c)
    peak = peak_power_from_average(avg_power_mw, pump_fwhm_ps, "sech2", rep_rate_mhz)
    pump = PulseSpec("sech2", pump_fwhm_ps, peak, pump_nm, delay_ps=-0.5 * d_f * crystal.length_mm)
    signal = PulseSpec("cw", 1.0, signal_power_mw, signal_nm)
    return crystal, pump, signal
