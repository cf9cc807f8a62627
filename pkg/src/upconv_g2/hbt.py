"""Monte Carlo of the gated Hanbury Brown-Twiss measurement and g2 recovery.

Each pump period carries two gates separated by ``dt``. Converted photons
are split onto detectors A and B; both detectors are far slower than the
gate separation, so a period yields at most one click per detector.
Same-period A&B coincidences give C(dt); A in period k with B in period
k + n (0 < |n| <= 5) give the accidentals used for normalisation:

    c(dt) = C(dt) / <C(dt + nT)>_{n != 0} = (g2(dt) + g2(0)) / 2
    g2(dt) = 2 c(dt) - c(0)

Rates are per pump period. ``mean_rate`` of CW sources is the mean number of
signal photons inside one gate (gate FWHM times photon flux); the converted
count of a gate is efficiency x gate_fwhm x integral(h(t) I(t) dt).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import (
    ConfigurationError,
    RegimeViolation,
    UndefinedNormalizationError,
    UnsupportedOracleError,
)
from .io import write_csv
from .propagation import SECH2_FWHM_FACTOR, GateResponse

ACCIDENTAL_LAGS = np.array([-5, -4, -3, -2, -1, 1, 2, 3, 4, 5])
MAX_CLICK_PROBABILITY = 0.1
PUMP_PERIOD_NS = 1e3 / 76.0
SSPD_RESPONSE_FWHM_PS = 80.0


# --------------------------------------------------------------- sources


@dataclass(frozen=True)
class CoherentCW:
    mean_rate: float
    kind = "coherent_cw"

    def __post_init__(self):
        _nonneg(self.mean_rate, "mean_rate")

    def g2(self, tau):
        return np.ones_like(np.asarray(tau, dtype=float))


@dataclass(frozen=True)
class ModulatedCW:
    """CW light with sinusoidal intensity 1 + m cos(2 pi f t + phi)."""

    mean_rate: float
    depth: float
    frequency_ghz: float
    phase_random: bool = True
    phase: float = 0.0
    kind = "modulated_cw"

    def __post_init__(self):
        _nonneg(self.mean_rate, "mean_rate")
        if not 0.0 <= self.depth <= 1.0:
            raise ConfigurationError("modulation depth must be in [0, 1]")
        if not self.frequency_ghz > 0:
            raise ConfigurationError("modulation frequency must be positive")

    def g2(self, tau):
        tau = np.asarray(tau, dtype=float)
        return 1.0 + 0.5 * self.depth**2 * np.cos(2 * np.pi * self.frequency_ghz * 1e-3 * tau)


@dataclass(frozen=True)
class PulsedCoherent:
    """Pulse train; with ``rep_incommensurate`` the arrival time relative to
    the pump is uniform over one signal period, independently per period."""

    pulse_fwhm_ps: float
    mean_photons_per_pulse: float
    shape: str = "sech2"
    rep_incommensurate: bool = True
    rep_period_ns: float = 12.5
    arrival_ps: float = 0.0
    kind = "pulsed_coherent"

    def __post_init__(self):
        _nonneg(self.mean_photons_per_pulse, "mean_photons_per_pulse")
        if not self.pulse_fwhm_ps > 0:
            raise ConfigurationError("pulse FWHM must be positive")
        if self.shape not in ("sech2", "gaussian"):
            raise ConfigurationError(f"unknown pulse shape {self.shape!r}")
        if not self.rep_period_ns * 1e3 > 4 * self.pulse_fwhm_ps:
            raise ConfigurationError("signal repetition period must exceed a few pulse widths")

    @property
    def rep_period_ps(self):
        return self.rep_period_ns * 1e3

    def profile(self, t):
        """Unit-area intensity profile (1/ps)."""
        t = np.asarray(t, dtype=float)
        w = self.pulse_fwhm_ps
        if self.shape == "sech2":
            tau0 = w / SECH2_FWHM_FACTOR
            e = np.exp(-2.0 * np.abs(t) / tau0)
            return 4.0 * e / (1.0 + e) ** 2 / (2 * tau0)
        return np.exp(-4 * math.log(2) * (t / w) ** 2) / (w * math.sqrt(math.pi / (4 * math.log(2))))

    def g2(self, tau):
        """Random-phase pulse train: T_s times the pulse autocorrelation, periodised."""
        tau = np.asarray(tau, dtype=float)
        w = self.pulse_fwhm_ps
        s = np.arange(-10 * w, 10 * w, w / 200)
        p = self.profile(s)
        ds = s[1] - s[0]
        ac = np.correlate(p, p, "full") * ds
        lags = (np.arange(ac.size) - (p.size - 1)) * ds
        Ts = self.rep_period_ps
        folded = (tau + Ts / 2) % Ts - Ts / 2
        return Ts * np.interp(folded, lags, ac, left=0.0, right=0.0)


@dataclass(frozen=True)
class AnalyticG2:
    """Stationary source given only through g2(tau); g2 -> 1 past ``horizon_ps``."""

    mean_rate: float
    g2_curve: Callable
    horizon_ps: float
    params: dict = field(default_factory=dict, compare=False)
    kind = "analytic_g2"

    def __post_init__(self):
        _nonneg(self.mean_rate, "mean_rate")
        probe = np.linspace(-3 * self.horizon_ps, 3 * self.horizon_ps, 601)
        vals = np.asarray(self.g2_curve(probe), dtype=float)
        if np.any(vals < 0):
            raise ConfigurationError("g2 curve must be non-negative")
        far = np.asarray(self.g2_curve(np.array([-10 * self.horizon_ps, 10 * self.horizon_ps])), dtype=float)
        if np.any(np.abs(far - 1.0) > 1e-3):
            raise ConfigurationError("g2 curve must tend to 1 beyond the correlation horizon")

    def g2(self, tau):
        return np.asarray(self.g2_curve(np.asarray(tau, dtype=float)), dtype=float)


def _nonneg(x, name):
    if not x >= 0:
        raise ConfigurationError(f"{name} must be non-negative")


def polariton_model(mean_rate, g2_zero=0.94, g2_peak=1.08, tau_a_ps=8.0, tau_b_ps=35.0,
                    gate: GateResponse | None = None) -> AnalyticG2:
    """g2 = 1 + b exp(-|t|/tau_b) - a exp(-|t|/tau_a) with a, b fixed by
    g2(0) = ``g2_zero`` and max g2 = ``g2_peak``.

    With ``gate`` the two constraints apply to the g2 seen through that gate
    (the source curve convolved with the gate autocorrelation), which is what
    the estimator recovers.
    """
    if not tau_a_ps < tau_b_ps:
        raise ConfigurationError("antibunching time must be shorter than the bunching time")
    if not g2_zero < 1.0 < g2_peak:
        raise ConfigurationError("need g2_zero < 1 < g2_peak")
    tau = np.linspace(0.0, 6 * tau_b_ps, 6001)
    if gate is None:
        A = np.exp(-tau / tau_a_ps)
        B = np.exp(-tau / tau_b_ps)
    else:
        k = _Kernels(gate)
        A = np.array([k.smeared(lambda x: np.exp(-np.abs(x) / tau_a_ps), t) for t in tau])
        B = np.array([k.smeared(lambda x: np.exp(-np.abs(x) / tau_b_ps), t) for t in tau])

    def a_of(b):
        return (1.0 - g2_zero + b * B[0]) / A[0]

    def excess(b):
        y = b * B - a_of(b) * A
        i = min(max(int(np.argmax(y)), 1), y.size - 2)
        # parabolic vertex through the three samples around the grid maximum
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        den = y0 - 2 * y1 + y2
        top = y1 - (y2 - y0) ** 2 / (8 * den) if den < 0 else y1
        return top - (g2_peak - 1.0)

    b = brentq(excess, 1e-9, 1e3, xtol=1e-14)
    a = float(a_of(b))
    params = {"g2_zero": g2_zero, "g2_peak": g2_peak, "gate_referenced": gate is not None}
    return _polariton(mean_rate, a, b, tau_a_ps, tau_b_ps, params)


def _polariton(mean_rate, a, b, tau_a_ps, tau_b_ps, extra=None):
    def curve(tau, a=a, b=b):
        x = np.abs(tau)
        return 1.0 + b * np.exp(-x / tau_b_ps) - a * np.exp(-x / tau_a_ps)

    params = {"model": "polariton", "a": a, "b": b, "tau_a_ps": tau_a_ps, "tau_b_ps": tau_b_ps,
              **(extra or {})}
    return AnalyticG2(mean_rate, curve, horizon_ps=12 * tau_b_ps, params=params)


def tabulated_g2(mean_rate, tau_ps, g2_values) -> AnalyticG2:
    tau = np.asarray(tau_ps, dtype=float)
    g = np.asarray(g2_values, dtype=float)
    order = np.argsort(tau)
    tau, g = tau[order], g[order]

    def curve(x):
        return np.interp(np.abs(x), tau, g, right=1.0)

    return AnalyticG2(mean_rate, curve, horizon_ps=float(tau[-1]),
                      params={"model": "table", "tau_ps": tau.tolist(), "g2": g.tolist()})


def source_from_dict(d) -> object:
    kind = d.get("kind")
    args = {k: v for k, v in d.items() if k != "kind"}
    if kind == "coherent_cw":
        return CoherentCW(**args)
    if kind == "modulated_cw":
        return ModulatedCW(**args)
    if kind == "pulsed_coherent":
        return PulsedCoherent(**args)
    if kind == "analytic_g2":
        model = args.pop("model", "polariton")
        if model == "polariton":
            if "a" in args:
                return _polariton(args["mean_rate"], args["a"], args["b"], args.get("tau_a_ps", 8.0),
                                  args.get("tau_b_ps", 35.0))
            return polariton_model(**args)
        if model == "table":
            return tabulated_g2(args["mean_rate"], args["tau_ps"], args["g2"])
        raise ConfigurationError(f"unknown analytic_g2 model {model!r}")
    raise ConfigurationError(f"unknown source kind {kind!r}")


def source_to_dict(src) -> dict:
    if isinstance(src, AnalyticG2):
        d = {"kind": src.kind, "mean_rate": src.mean_rate}
        p = dict(src.params)
        model = p.pop("model", None)
        if model == "polariton":
            d.update(model="polariton", a=p["a"], b=p["b"], tau_a_ps=p["tau_a_ps"], tau_b_ps=p["tau_b_ps"])
        elif model == "table":
            d.update(model="table", tau_ps=p["tau_ps"], g2=p["g2"])
        return d
    return {"kind": src.kind, **vars(src)}


# --------------------------------------------------------- configuration


@dataclass
class MeasurementConfig:
    gate: GateResponse
    delays_ps: tuple
    n_periods: int = 1_000_000
    rep_period_ns: float = PUMP_PERIOD_NS
    conversion_efficiency: float = 1.0
    path_transmission: float = 1.0
    detector_efficiency: float = 1.0
    splitter_ratio: float = 0.5
    rng_seed: int = 0
    dark_count_prob: float = 0.0
    chunk_periods: int = 1 << 22
    workers: int | None = None

    def __post_init__(self):
        self.delays_ps = tuple(float(d) for d in np.atleast_1d(self.delays_ps))
        if not self.delays_ps:
            raise ConfigurationError("delay list is empty")
        for name in ("conversion_efficiency", "path_transmission", "detector_efficiency", "splitter_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1]")
        if not 0.0 <= self.dark_count_prob <= MAX_CLICK_PROBABILITY:
            raise ConfigurationError("dark count probability must be in [0, 0.1]")
        if self.n_periods < 12:
            raise ConfigurationError("need at least 12 periods")
        if not self.rep_period_ns * 1e3 > self.gate.span + max(abs(d) for d in self.delays_ps):
            raise ConfigurationError("pump period must exceed the gate span plus the largest delay")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigurationError("rng_seed must be a 64-bit unsigned integer")

    @property
    def efficiency(self):
        return self.conversion_efficiency * self.path_transmission * self.detector_efficiency


# ----------------------------------------------------- per-period models


class _Kernels:
    """Gate-derived quantities shared across delays."""

    def __init__(self, gate: GateResponse):
        self.gate = gate
        self.dt = gate.dt
        self.width = gate.fwhm
        h = gate.h
        self.R = np.correlate(h, h, "full") * self.dt
        self.R_lags = (np.arange(self.R.size) - (h.size - 1)) * self.dt

    def transfer(self, f_per_ps):
        """H(f) = integral h(t) exp(i 2 pi f t) dt."""
        return complex(np.sum(self.gate.h * np.exp(2j * np.pi * f_per_ps * self.gate.t)) * self.dt)

    def smeared(self, g2, dt):
        """integral g2(s + dt) R(s) ds."""
        return float(np.sum(g2(self.R_lags + dt) * self.R) * self.dt)

    def pulse_overlap(self, src: PulsedCoherent):
        """q(v) = integral h(t) p(t - v) dt on its own grid."""
        key = ("q", src.pulse_fwhm_ps, src.shape)
        if not hasattr(self, "_q") or self._q[0] != key:
            hw = 8 * src.pulse_fwhm_ps
            n = int(math.ceil(hw / self.dt))
            tp = np.arange(-n, n + 1) * self.dt
            p = src.profile(tp)
            q = np.convolve(self.gate.h, p) * self.dt
            v = self.gate.t[0] + tp[0] + np.arange(q.size) * self.dt
            self._q = (key, v, q)
        return self._q[1], self._q[2]


class _Classical:
    """Classical intensity source: given a per-period random variable x the
    two detectors click independently with probabilities r*L(x), (1-r)*L(x)."""

    random = True

    def draw(self, rng, n):
        raise NotImplementedError

    def lam(self, x):
        raise NotImplementedError

    def support_fraction(self):
        return 1.0


class _Constant(_Classical):
    random = False

    def __init__(self, value):
        self.value = value
        self.fixed = 0.0

    def lam(self, x):
        return np.full(np.shape(x), self.value)

    def average(self):
        return self.value, self.value**2

    def max(self):
        return self.value


class _Modulated(_Classical):
    def __init__(self, src: ModulatedCW, k: _Kernels, eta, dt):
        self.random = src.phase_random
        self.fixed = src.phase
        self.scale = eta * src.mean_rate
        H = k.transfer(src.frequency_ghz * 1e-3)
        self.c = src.depth * H * (1 + np.exp(2j * np.pi * src.frequency_ghz * 1e-3 * dt))

    def draw(self, rng, n):
        return rng.uniform(0.0, 2 * np.pi, n)

    def lam(self, phi):
        return self.scale * (2.0 + np.real(self.c * np.exp(1j * np.asarray(phi))))

    def average(self):
        if not self.random:
            v = float(self.lam(self.fixed))
            return v, v * v
        phi = np.arange(64) * (2 * np.pi / 64)
        L = self.lam(phi)
        return float(L.mean()), float((L * L).mean())

    def max(self):
        return self.scale * (2.0 + abs(self.c)) if self.random else float(self.lam(self.fixed))


class _Pulsed(_Classical):
    def __init__(self, src: PulsedCoherent, k: _Kernels, eta, dt):
        self.random = src.rep_incommensurate
        self.fixed = src.arrival_ps
        self.Ts = src.rep_period_ps
        self.dt = dt
        self.scale = eta * src.mean_photons_per_pulse * k.width
        self.v, self.q = k.pulse_overlap(src)
        self.step = k.dt
        self.lo = self.v[0] + min(0.0, dt)
        self.hi = self.v[-1] + max(0.0, dt)

    def _lookup(self, v):
        # linear interpolation on the uniform grid of q, zero outside
        x = (v - self.v[0]) / self.step
        i = np.floor(x)
        ok = (i >= 0) & (i < self.q.size - 1)
        i = np.where(ok, i, 0).astype(np.intp)
        f = x - i
        return np.where(ok, self.q[i] * (1.0 - f) + self.q[i + 1] * f, 0.0)

    def _single(self, v):
        return self._lookup(v) + self._lookup(v - self.dt)

    def lam(self, u):
        u = np.asarray(u, dtype=float)
        if self.hi - self.lo <= self.Ts:
            # a single image of the train can overlap the gates
            return self.scale * self._single(self.lo + (u - self.lo) % self.Ts)
        k0 = math.floor((self.lo - self.Ts) / self.Ts)
        k1 = math.ceil(self.hi / self.Ts)
        out = np.zeros(u.shape)
        for k in range(k0, k1 + 1):
            out += self._single(u + k * self.Ts)
        return self.scale * out

    def draw(self, rng, n):
        return rng.uniform(0.0, self.Ts, n)

    def support_fraction(self):
        return (self.hi - self.lo) / self.Ts

    def draw_active(self, rng, n):
        """Arrival times restricted to the support (sparse sampling)."""
        return rng.uniform(self.lo, self.hi, n)

    def average(self):
        if not self.random:
            v = float(self.lam(self.fixed))
            return v, v * v
        n = int(math.ceil(self.Ts / self.step))
        u = (np.arange(n) + 0.5) * (self.Ts / n)
        L = self.lam(u)
        return float(L.mean()), float((L * L).mean())

    def max(self):
        if not self.random:
            return float(self.lam(self.fixed))
        u = np.arange(self.lo, self.hi, self.step)
        return float(np.max(self.lam(u)))


def _classical_model(source, k, eta, dt):
    if isinstance(source, CoherentCW):
        return _Constant(2.0 * eta * source.mean_rate)
    if isinstance(source, ModulatedCW):
        return _Modulated(source, k, eta, dt)
    if isinstance(source, PulsedCoherent):
        return _Pulsed(source, k, eta, dt)
    return None


@dataclass(frozen=True)
class PairProbabilities:
    p_single_A: float
    p_single_B: float
    p_pair: float


def _pair_probabilities(source, k: _Kernels, dt, eta, r):
    model = _classical_model(source, k, eta, dt)
    if model is not None:
        m1, m2 = model.average()
        peak = model.max()
        probs = PairProbabilities(r * m1, (1 - r) * m1, r * (1 - r) * m2)
    elif isinstance(source, AnalyticG2):
        mu = eta * source.mean_rate
        pair = r * (1 - r) * mu * mu * (2 * k.smeared(source.g2, 0.0) + 2 * k.smeared(source.g2, dt))
        peak = 2 * mu
        probs = PairProbabilities(r * 2 * mu, (1 - r) * 2 * mu, pair)
    else:
        raise ConfigurationError(f"unsupported source {type(source).__name__}")
    worst = max(r, 1 - r) * peak
    if worst > MAX_CLICK_PROBABILITY:
        raise RegimeViolation(
            f"single-detector click probability up to {worst:.3g} per period exceeds {MAX_CLICK_PROBABILITY};"
            " reduce the source rate or efficiencies"
        )
    if isinstance(source, AnalyticG2):
        pa, pb, pab = probs.p_single_A, probs.p_single_B, probs.p_pair
        if pab > min(pa, pb) or pa + pb - pab > 1:
            raise RegimeViolation("pair probability inconsistent with single-click probabilities")
    return model, probs


def pair_detection_probability(source, gate: GateResponse, dt_ps, efficiency=1.0,
                               splitter_ratio=0.5) -> PairProbabilities:
    """Single-click and A&B pair probabilities for one period with two gates
    ``dt_ps`` apart (ensemble-averaged over the source phase when random)."""
    return _pair_probabilities(source, _Kernels(gate), float(dt_ps), efficiency, splitter_ratio)[1]


def expected_g2(source, gate: GateResponse, delays_ps, efficiency=1.0, splitter_ratio=0.5):
    """Expectation of the g2 estimator for the given gate (no shot noise)."""
    k = _Kernels(gate)
    delays = np.asarray(delays_ps, dtype=float)
    c = []
    for d in np.concatenate([[0.0], delays]):
        p = _pair_probabilities(source, k, float(d), efficiency, splitter_ratio)[1]
        c.append(p.p_pair / (p.p_single_A * p.p_single_B))
    c = np.array(c)
    return 2 * c[1:] - c[0]


# -------------------------------------------------------------- sampling


@dataclass
class CoincidenceHistogram:
    dt_ps: np.ndarray
    coincidences: np.ndarray
    accidentals: np.ndarray
    singles_A: np.ndarray
    singles_B: np.ndarray
    n_periods: int
    lags: np.ndarray = field(default_factory=lambda: ACCIDENTAL_LAGS.copy())

    @property
    def acc_mean(self):
        return self.accidentals.mean(axis=1)

    def to_csv(self, path):
        n = np.full(len(self.dt_ps), int(self.n_periods))
        write_csv(path, ["dt_ps", "C", "acc_mean", "singles_A", "singles_B", "n_periods"],
                  [self.dt_ps, self.coincidences, self.acc_mean, self.singles_A, self.singles_B, n])

    def __eq__(self, other):
        return (isinstance(other, CoincidenceHistogram) and self.n_periods == other.n_periods
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("dt_ps", "coincidences", "accidentals", "singles_A", "singles_B", "lags")))


def _count_dense(a, b):
    acc = np.empty(len(ACCIDENTAL_LAGS), np.int64)
    for j, n in enumerate(ACCIDENTAL_LAGS):
        acc[j] = np.count_nonzero(a[:-n] & b[n:]) if n > 0 else np.count_nonzero(a[-n:] & b[:n])
    return np.array([np.count_nonzero(a & b), *acc, np.count_nonzero(a), np.count_nonzero(b)], np.int64)


def _count_sparse(ia, ib):
    acc = [np.intersect1d(ia + n, ib, assume_unique=True).size for n in ACCIDENTAL_LAGS]
    c = np.intersect1d(ia, ib, assume_unique=True).size
    return np.array([c, *acc, ia.size, ib.size], np.int64)


def _bernoulli_indices(rng, n, p):
    """Sorted indices of successes of n Bernoulli(p) trials via geometric gaps."""
    if p <= 0:
        return np.empty(0, np.int64)
    if p >= 1:
        return np.arange(n, dtype=np.int64)
    out = []
    pos = -1
    expect = int(n * p + 10 * math.sqrt(n * p) + 16)
    while True:
        gaps = rng.geometric(p, size=expect)
        idx = pos + np.cumsum(gaps)
        if idx[-1] >= n:
            out.append(idx[idx < n])
            break
        out.append(idx)
        pos = idx[-1]
    return np.concatenate(out).astype(np.int64)


def _sample_chunk(plan, m, rng):
    kind, model, probs, r, dark = plan
    if kind == "analytic":
        pa, pb, pab = probs.p_single_A, probs.p_single_B, probs.p_pair
        x = rng.random(m)
        a = x < pa
        b = (x < pab) | ((x >= pa) & (x < pa + pb - pab))
    elif kind == "sparse":
        f = model.support_fraction()
        active = _bernoulli_indices(rng, m, f)
        L = model.lam(model.draw_active(rng, active.size))
        ia = active[rng.random(active.size) < r * L]
        ib = active[rng.random(active.size) < (1 - r) * L]
        if dark > 0:
            ia = np.union1d(ia, _bernoulli_indices(rng, m, dark))
            ib = np.union1d(ib, _bernoulli_indices(rng, m, dark))
        return _count_sparse(ia, ib)
    else:
        L = model.lam(model.draw(rng, m)) if model.random else model.lam(model.fixed)
        a = rng.random(m) < r * L
        b = rng.random(m) < (1 - r) * L
    if dark > 0:
        a |= rng.random(m) < dark
        b |= rng.random(m) < dark
    return _count_dense(a, b)


def _plans(source, cfg: MeasurementConfig):
    k = _Kernels(cfg.gate)
    r = cfg.splitter_ratio
    plans = []
    for d in cfg.delays_ps:
        model, probs = _pair_probabilities(source, k, d, cfg.efficiency, r)
        if model is None:
            kind = "analytic"
        elif isinstance(model, _Pulsed) and model.random and model.hi - model.lo < 0.05 * model.Ts:
            kind = "sparse"
        else:
            kind = "dense"
        plans.append((kind, model, probs, r, cfg.dark_count_prob))
    return plans


def _chunks(n, size):
    starts = range(0, n, size)
    return [min(size, n - s) for s in starts]


def _run(cfg, plans, sample):
    sizes = _chunks(cfg.n_periods, cfg.chunk_periods)
    tasks = [(i, j, m) for i in range(len(plans)) for j, m in enumerate(sizes)]

    def work(task):
        i, j, m = task
        rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, i, j]))
        return i, sample(plans[i], m, rng)

    totals = np.zeros((len(plans), 1 + len(ACCIDENTAL_LAGS) + 2), np.int64)
    if cfg.workers and cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(work, tasks))
    else:
        results = map(work, tasks)
    for i, counts in results:
        totals[i] += counts
    return CoincidenceHistogram(
        dt_ps=np.array(cfg.delays_ps),
        coincidences=totals[:, 0],
        accidentals=totals[:, 1:1 + len(ACCIDENTAL_LAGS)],
        singles_A=totals[:, -2],
        singles_B=totals[:, -1],
        n_periods=cfg.n_periods,
    )


def simulate_coincidences(source, cfg: MeasurementConfig) -> CoincidenceHistogram:
    """Per-period Bernoulli sampling of both detectors.

    Chunks of periods use independent substreams seeded from
    (rng_seed, delay index, chunk index); accidental lags are counted
    within a chunk. The result does not depend on ``workers``.
    """
    return _run(cfg, _plans(source, cfg), _sample_chunk)


# -------------------------------------------------------- normalisation


@dataclass
class NormalizedRates:
    dt_ps: np.ndarray
    c: np.ndarray
    c_err: np.ndarray


def normalize(hist: CoincidenceHistogram) -> NormalizedRates:
    C = np.asarray(hist.coincidences, dtype=float)
    acc = np.asarray(hist.accidentals, dtype=float)
    total = acc.sum(axis=1)
    for d, t in zip(hist.dt_ps, total):
        if not t > 0:
            raise UndefinedNormalizationError(f"no accidental coincidences in the bin dt = {d} ps")
    mean = total / acc.shape[1]
    c = C / mean
    # Poisson errors on numerator and denominator, independent
    err = np.where(C > 0, c * np.sqrt(1.0 / np.maximum(C, 1) + 1.0 / total), 1.0 / mean)
    return NormalizedRates(np.asarray(hist.dt_ps, dtype=float), c, err)


@dataclass
class G2Estimate:
    """g2 per bin. ``cov_zero[i]`` is cov(g2[i], g2(0)), nonzero because
    every bin shares the c(0) term."""

    dt_ps: np.ndarray
    g2: np.ndarray
    g2_err: np.ndarray
    c: np.ndarray | None = None
    c_err: np.ndarray | None = None
    cov_zero: np.ndarray | None = None

    def __post_init__(self):
        self.dt_ps = np.asarray(self.dt_ps, dtype=float)
        self.g2 = np.asarray(self.g2, dtype=float)
        self.g2_err = np.asarray(self.g2_err, dtype=float)
        if self.cov_zero is None:
            self.cov_zero = np.zeros_like(self.g2)
            self.cov_zero[self.zero_index] = self.g2_err[self.zero_index] ** 2

    @property
    def zero_index(self):
        idx = np.flatnonzero(self.dt_ps == 0.0)
        if idx.size == 0:
            raise ConfigurationError("the delay list has no dt = 0 bin")
        return int(idx[0])

    def to_csv(self, path):
        c = self.c if self.c is not None else np.full_like(self.g2, np.nan)
        ce = self.c_err if self.c_err is not None else np.full_like(self.g2, np.nan)
        write_csv(path, ["dt_ps", "c", "c_err", "g2", "g2_err"], [self.dt_ps, c, ce, self.g2, self.g2_err])


def estimate_g2(c: NormalizedRates) -> G2Estimate:
    """g2(dt) = 2 c(dt) - c(0)."""
    dt = np.asarray(c.dt_ps, dtype=float)
    idx = np.flatnonzero(dt == 0.0)
    if idx.size == 0:
        raise ConfigurationError("the delay list has no dt = 0 bin")
    i0 = int(idx[0])
    cv = np.asarray(c.c, dtype=float)
    ce = np.asarray(c.c_err, dtype=float)
    c0, e0 = cv[i0], ce[i0]
    g2 = 2.0 * cv - c0
    var = 4.0 * ce**2 + e0**2
    cov = np.full(cv.shape, -(e0**2))
    g2[i0] = c0
    var[i0] = e0**2
    cov[i0] = e0**2
    return G2Estimate(dt, g2, np.sqrt(var), cv, ce, cov)


# ---------------------------------------------------------------- oracle


def _trace(source, t, draws, gate_width_ps):
    """Intensity (photons/ps) on times ``t`` for each row of ``draws``."""
    t = np.asarray(t, dtype=float)[None, :]
    x = np.asarray(draws, dtype=float)[:, None]
    if isinstance(source, CoherentCW):
        return np.full((x.shape[0], t.shape[1]), source.mean_rate / gate_width_ps)
    if isinstance(source, ModulatedCW):
        w = 2 * np.pi * source.frequency_ghz * 1e-3
        return source.mean_rate / gate_width_ps * (1.0 + source.depth * np.cos(w * t + x))
    if isinstance(source, PulsedCoherent):
        Ts = source.rep_period_ps
        rel = t - x
        k0 = math.floor((rel.min() - 20 * source.pulse_fwhm_ps) / Ts)
        k1 = math.ceil((rel.max() + 20 * source.pulse_fwhm_ps) / Ts)
        out = np.zeros(np.broadcast_shapes(t.shape, x.shape))
        for k in range(k0, k1 + 1):
            out += source.profile(rel - k * Ts)
        return source.mean_photons_per_pulse * out
    raise UnsupportedOracleError(
        f"no classical intensity trace for {type(source).__name__}; the oracle covers classical sources only"
    )


def _draw_phase(source, rng, n):
    if isinstance(source, ModulatedCW):
        return rng.uniform(0, 2 * np.pi, n) if source.phase_random else np.full(n, source.phase)
    if isinstance(source, PulsedCoherent):
        if source.rep_incommensurate:
            return rng.uniform(0, source.rep_period_ps, n)
        return np.full(n, source.arrival_ps)
    return np.zeros(n)


def oracle_intensity_trace(source, duration_ns, dt_ps, seed=0, gate_width_ps=1.0):
    """Explicit classical intensity trace (photons/ps) over ``duration_ns``.

    One realisation: the modulation phase or pulse-train offset is drawn once.
    CW rates given per gate are converted with ``gate_width_ps``.
    """
    if isinstance(source, AnalyticG2):
        _trace(source, [0.0], [0.0], gate_width_ps)
    rng = np.random.default_rng(seed)
    t = np.arange(0.0, duration_ns * 1e3, dt_ps)
    return t, _trace(source, t, _draw_phase(source, rng, 1), gate_width_ps)[0]


def oracle_coincidences(source, cfg: MeasurementConfig, trace_dt_ps=0.1, batch=50_000):
    """Independent route to the histogram: per period, build the intensity
    trace on a time grid, integrate it against the two gates numerically and
    draw Poisson photon numbers for each detector."""
    _trace(source, [0.0], [0.0], 1.0)  # reject non-classical sources early
    g = cfg.gate
    mask = g.h > 1e-9 * g.h.max()
    t_lo, t_hi = g.t[mask][0], g.t[mask][-1]
    eta = cfg.efficiency
    r = cfg.splitter_ratio
    width = g.fwhm
    plans = []
    for d in cfg.delays_ps:
        t = np.arange(t_lo + min(0.0, d), t_hi + max(0.0, d) + trace_dt_ps, trace_dt_ps)
        w = np.interp(t, g.t, g.h, left=0, right=0) + np.interp(t - d, g.t, g.h, left=0, right=0)
        plans.append((t, w))

    def sample(plan, m, rng):
        t, w = plan
        a = np.empty(m, bool)
        b = np.empty(m, bool)
        for s in range(0, m, batch):
            n = min(batch, m - s)
            I = _trace(source, t, _draw_phase(source, rng, n), width)
            lam = eta * width * (I @ w) * trace_dt_ps
            a[s:s + n] = rng.poisson(r * lam) > 0
            b[s:s + n] = rng.poisson((1 - r) * lam) > 0
        if cfg.dark_count_prob > 0:
            a |= rng.random(m) < cfg.dark_count_prob
            b |= rng.random(m) < cfg.dark_count_prob
        return _count_dense(a, b)

    ocfg = MeasurementConfig(**{**vars(cfg), "rng_seed": (cfg.rng_seed + 0x5EED) % 2**64})
    return _run(ocfg, plans, sample)


# ---------------------------------------------- detector-limited reference


def detector_smeared_g2(source, delays_ps, fwhm_ps=SSPD_RESPONSE_FWHM_PS, order=80):
    """g2 of ``source`` convolved with a Gaussian timing response (start-stop
    histogram of a jitter-limited detector pair)."""
    x, w = np.polynomial.hermite.hermgauss(order)
    sigma = fwhm_ps / (2 * math.sqrt(2 * math.log(2)))
    delays = np.asarray(delays_ps, dtype=float)
    shifts = math.sqrt(2) * sigma * x
    vals = source.g2(delays[:, None] - shifts[None, :])
    return vals @ w / math.sqrt(math.pi)
