"""Fits and derived quantities on recovered g2 traces."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigurationError, DomainError, FitError
from .hbt import G2Estimate

FOUR_LN2 = 4.0 * math.log(2.0)


@dataclass
class PeakFit:
    center: float
    fwhm: float
    amplitude: float
    baseline: float
    errors: dict
    reduced_chi2: float
    is_dip: bool = False
    fwhm_constrained: bool = True

    def model(self, x):
        return _gauss(np.asarray(x, dtype=float), self.baseline, self.amplitude, self.center, self.fwhm)


def _gauss(x, b, a, c, w):
    return b + a * np.exp(-FOUR_LN2 * (x - c) ** 2 / w**2)


def _initial_fwhm(x, dev, i):
    above = np.flatnonzero(dev >= 0.5 * dev[i])
    width = x[above[-1]] - x[above[0]] if above.size > 1 else 0.0
    return width if width > 0 else (x[-1] - x[0]) / 4


def fit_gaussian_peak(dt, g2, sigma) -> PeakFit:
    """Weighted least squares of baseline + amplitude * exp(-4 ln2 (x-c)^2 / w^2).

    Starts from baseline = median and center = the sample farthest from the
    median (the argmax for a peak), amplitude = that deviation, width from
    the half-deviation crossings. A negative amplitude marks a dip.
    """
    x = np.asarray(dt, dtype=float)
    y = np.asarray(g2, dtype=float)
    s = np.asarray(sigma, dtype=float) * np.ones_like(y)
    if x.size < 8:
        raise ConfigurationError("need at least 8 points for a peak fit")
    if np.any(~(s > 0)):
        raise ConfigurationError("uncertainties must be positive")
    order = np.argsort(x)
    x, y, s = x[order], y[order], s[order]
    span = x[-1] - x[0]
    step = np.min(np.diff(x))

    base = float(np.median(y))
    dev = np.abs(y - base)
    i = int(np.argmax(dev))
    p0 = np.array([base, y[i] - base, x[i], _initial_fwhm(x, dev, i)])
    if p0[1] == 0:
        p0[1] = float(np.std(y)) or 1e-3
    lo = [-np.inf, -np.inf, x[0] - span, step / 10]
    hi = [np.inf, np.inf, x[-1] + span, 10 * span]
    p0[3] = np.clip(p0[3], lo[3] * 1.01, hi[3] * 0.99)

    def resid(p):
        return (_gauss(x, *p) - y) / s

    def jac(p):
        b, a, c, w = p
        e = np.exp(-FOUR_LN2 * (x - c) ** 2 / w**2)
        J = np.empty((x.size, 4))
        J[:, 0] = 1.0
        J[:, 1] = e
        J[:, 2] = a * e * 2 * FOUR_LN2 * (x - c) / w**2
        J[:, 3] = a * e * 2 * FOUR_LN2 * (x - c) ** 2 / w**3
        return J / s[:, None]

    res = least_squares(resid, p0, jac=jac, bounds=(lo, hi), method="trf",
                        xtol=1e-10, ftol=1e-12, gtol=1e-12, max_nfev=2000)
    if res.status <= 0:
        raise FitError(f"Gaussian fit did not converge: {res.message}", residuals=res.fun)
    b, a, c, w = res.x
    cov = np.linalg.pinv(res.jac.T @ res.jac)
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    err = np.where(err > 0, err, np.inf)
    dof = max(x.size - 4, 1)
    fit = PeakFit(
        center=float(c), fwhm=float(w), amplitude=float(a), baseline=float(b),
        errors={"baseline": err[0], "amplitude": err[1], "center": err[2], "fwhm": err[3]},
        reduced_chi2=float(np.sum(res.fun**2) / dof),
        is_dip=bool(a < 0),
    )
    fit.fwhm_constrained = bool(abs(a) > 3 * err[1] and err[3] < w)
    return fit


def deconvolve_resolution(measured_fwhm, pulse_fwhm, measured_err=None, pulse_err=None):
    """Gate resolution from the cross-correlation peak of a pulsed source.

    The peak is the autocorrelation of pulse * gate, so with Gaussian widths
    measured^2 = 2 (pulse^2 + resolution^2). Returns the resolution, or
    ``(resolution, error)`` when either input error is given.
    """
    m = float(measured_fwhm)
    p = float(pulse_fwhm)
    inner = m * m / 2 - p * p
    if not inner > 0:
        raise DomainError(
            f"peak narrower than pulse-limited minimum: {m} ps <= sqrt(2) x {p} ps"
        )
    r = math.sqrt(inner)
    if measured_err is None and pulse_err is None:
        return r
    dm = (measured_err or 0.0) * m / (2 * r)
    dp = (pulse_err or 0.0) * p / r
    return r, math.hypot(dm, dp)


@dataclass
class VisibilityFit:
    visibility: float
    error: float
    offset: float
    amplitude: float
    phase: float
    cov: np.ndarray = field(repr=False, default=None)


def visibility(dt, g2, frequency_ghz, sigma=None) -> VisibilityFit:
    """Fit offset + V cos(2 pi f dt + phi) and return V / offset.

    The model is linear in (offset, V cos phi, -V sin phi), so the weighted
    least-squares solution is exact; errors follow from its covariance.
    """
    x = np.asarray(dt, dtype=float)
    y = np.asarray(g2, dtype=float)
    s = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=float) * np.ones_like(y)
    f = float(frequency_ghz) * 1e-3
    if (x.max() - x.min()) * f < 2:
        raise ConfigurationError("trace must span at least two oscillation periods")
    w = 2 * np.pi * f * x
    A = np.column_stack([np.ones_like(x), np.cos(w), np.sin(w)]) / s[:, None]
    coef, *_ = np.linalg.lstsq(A, y / s, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    if sigma is None:
        r = A @ coef - y
        cov = cov * np.sum(r**2) / max(len(y) - 3, 1)
    o, ca, sb = coef
    amp = math.hypot(ca, sb)
    V = amp / o
    if amp > 0:
        g = np.array([-amp / o**2, ca / (amp * o), sb / (amp * o)])
    else:
        g = np.array([0.0, 1 / o, 0.0])
    err = math.sqrt(max(g @ cov @ g, 0.0))
    return VisibilityFit(float(V), err, float(o), float(amp), float(math.atan2(-sb, ca)), cov)


@dataclass
class Violation:
    significance: float
    argmax_dt: float
    z: np.ndarray


def classical_violation(estimate: G2Estimate) -> Violation:
    """Largest (g2(dt) - g2(0)) / sigma_diff over dt != 0; positive values
    violate g2(0) >= g2(tau)."""
    i0 = estimate.zero_index
    if estimate.g2.size < 2:
        raise ConfigurationError("need at least two bins")
    var = estimate.g2_err**2 + estimate.g2_err[i0] ** 2 - 2 * estimate.cov_zero
    diff = estimate.g2 - estimate.g2[i0]
    z = np.full(diff.shape, np.nan)
    others = np.arange(diff.size) != i0
    z[others] = diff[others] / np.sqrt(var[others])
    j = int(np.nanargmax(z))
    return Violation(float(z[j]), float(estimate.dt_ps[j]), z)


def mean_g2(estimate: G2Estimate):
    """Mean of g2 over bins and its error, including the shared c(0) term."""
    n = estimate.g2.size
    if estimate.c_err is None:
        return float(estimate.g2.mean()), float(np.sqrt(np.sum(estimate.g2_err**2)) / n)
    i0 = estimate.zero_index
    # g2 = M c with M = 2 I - 1 e0^T, except row i0 which is e0^T
    weights = 2.0 * np.ones(n)
    weights[i0] = 1.0 - (n - 1)
    return float(estimate.g2.mean()), float(np.sqrt(np.sum((weights * estimate.c_err) ** 2)) / n)


# ------------------------------------------------------------- budget


def gate_duty_cycle(resolution_ps, rep_rate_mhz=76.0):
    """Fraction of the pump period covered by the gate."""
    return float(resolution_ps) / (1e6 / float(rep_rate_mhz))


# Illustrative factor set: duty cycle from the 4 ps gate at 76 MHz, peak
# conversion of the simulated dip at 1.5 mW, coupling/filter/fiber
# transmission, Si APD efficiency in the blue.
DEFAULT_BUDGET_FACTORS = {
    "gate_duty_cycle": gate_duty_cycle(4.0, 76.0),
    "conversion": 0.8,
    "transmission": 0.1,
    "detector": 0.25,
    "other": 1.0,
}


@dataclass
class EfficiencyBudget:
    factors: dict
    product: float

    def report(self):
        lines = [f"{k:>16s}  {v:.4g}" for k, v in self.factors.items()]
        lines.append(f"{'product':>16s}  {self.product:.4g}")
        return "\n".join(lines)


def efficiency_budget(factors=None) -> EfficiencyBudget:
    factors = dict(DEFAULT_BUDGET_FACTORS if factors is None else factors)
    for k, v in factors.items():
        if not 0.0 < v <= 1.0:
            raise DomainError(f"efficiency factor {k} = {v} outside (0, 1]")
    return EfficiencyBudget(factors, float(math.prod(factors.values())))
