"""Extraordinary-index dispersion and quasi-phase matching for PPLN.

Wavelengths are vacuum wavelengths in nm, temperatures in degC, phase
mismatch in rad/mm. All functions are pure.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, MultipleRootsWarning, NoRootError

C_MM_PER_PS = 0.299792458

# Ti:sapphire tuning range used as the default pump bracket.
PUMP_TUNING_RANGE_NM = (700.0, 1100.0)


@dataclass(frozen=True)
class SellmeierModel:
    """Temperature-dependent extraordinary index of MgO:LiNbO3.

    ``coefficients`` follows the file layout ``[a1..a6, b1..b4]``.
    """

    name: str
    coefficients: tuple
    validity_nm: tuple
    citation: str = ""
    version: str = ""

    def __post_init__(self):
        if len(self.coefficients) != 10:
            raise ValueError("expected 10 coefficients [a1..a6, b1..b4]")
        lo, hi = self.validity_nm
        if not 0 < lo < hi:
            raise ValueError(f"bad validity window {self.validity_nm}")

    @classmethod
    def from_json(cls, path) -> "SellmeierModel":
        with open(path) as fh:
            return cls._from_dict(json.load(fh))

    @classmethod
    def _from_dict(cls, d) -> "SellmeierModel":
        return cls(
            name=d["name"],
            coefficients=tuple(float(c) for c in d["coefficients"]),
            validity_nm=tuple(float(v) for v in d["validity_nm"]),
            citation=d.get("citation", ""),
            version=str(d.get("version", "")),
        )

    def check(self, wavelength_nm, strict=False):
        lam = np.asarray(wavelength_nm, dtype=float)
        lo, hi = self.validity_nm
        bad = (lam <= lo) | (lam >= hi) if strict else (lam < lo) | (lam > hi)
        if np.any(bad) or np.any(~np.isfinite(lam)):
            raise DomainError(
                f"wavelength {lam[bad] if lam.ndim else lam} nm outside the "
                f"validity window [{lo}, {hi}] nm of '{self.name}'"
            )
        return lam

    def _terms(self, lam_um, temperature):
        a1, a2, a3, a4, a5, a6, b1, b2, b3, b4 = self.coefficients
        f = (temperature - 24.5) * (temperature + 570.82)
        l2 = lam_um * lam_um
        d1 = l2 - (a3 + b3 * f) ** 2
        d2 = l2 - a5**2
        n2 = a1 + b1 * f + (a2 + b2 * f) / d1 + (a4 + b4 * f) / d2 - a6 * l2
        # d(n^2)/d(lambda_um)
        dn2 = -2 * lam_um * ((a2 + b2 * f) / d1**2 + (a4 + b4 * f) / d2**2 + a6)
        return n2, dn2


@lru_cache(maxsize=None)
def default_model() -> SellmeierModel:
    text = resources.files("upconv_g2.data").joinpath("mgo_cln_gayer2008.json").read_text()
    return SellmeierModel._from_dict(json.loads(text))


@dataclass(frozen=True)
class CrystalSpec:
    poling_period_um: float = 3.96
    length_mm: float = 12.5
    temperature_c: float = 25.0
    kappa: float = 0.0
    qpm_order: int = 1

    def __post_init__(self):
        if not self.poling_period_um > 0:
            raise DomainError("poling period must be positive")
        if not self.length_mm > 0:
            raise DomainError("crystal length must be positive")
        if not self.kappa >= 0:
            raise DomainError("effective coupling must be non-negative")
        if self.qpm_order < 1 or self.qpm_order % 2 == 0:
            raise DomainError("QPM order must be an odd positive integer")


@dataclass(frozen=True)
class WaveTriplet:
    signal_nm: float
    pump_nm: float
    sfg_nm: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sfg_nm", sfg_wavelength(self.signal_nm, self.pump_nm))


def refractive_index(wavelength_nm, temperature_c=25.0, model: SellmeierModel | None = None):
    """Extraordinary index n_e(lambda, T)."""
    model = model or default_model()
    lam = model.check(wavelength_nm)
    n2, _ = model._terms(lam / 1000.0, temperature_c)
    n = np.sqrt(n2)
    return float(n) if n.ndim == 0 else n


def dn_dlambda(wavelength_nm, temperature_c=25.0, model: SellmeierModel | None = None):
    """Analytic dn/dlambda in 1/nm."""
    model = model or default_model()
    lam = model.check(wavelength_nm, strict=True)
    n2, dn2 = model._terms(lam / 1000.0, temperature_c)
    d = dn2 / (2 * np.sqrt(n2)) / 1000.0
    return float(d) if d.ndim == 0 else d


def group_index(wavelength_nm, temperature_c=25.0, model: SellmeierModel | None = None):
    """n_g = n - lambda dn/dlambda using the analytic derivative."""
    model = model or default_model()
    lam = model.check(wavelength_nm, strict=True)
    n2, dn2 = model._terms(lam / 1000.0, temperature_c)
    n = np.sqrt(n2)
    ng = n - (lam / 1000.0) * dn2 / (2 * n)
    return float(ng) if ng.ndim == 0 else ng


def group_slowness_difference(lam_nm, ref_nm, temperature_c=25.0, model=None):
    """(n_g(lam) - n_g(ref)) / c in ps/mm; positive means ``lam`` lags ``ref``."""
    return (group_index(lam_nm, temperature_c, model) - group_index(ref_nm, temperature_c, model)) / C_MM_PER_PS


def sfg_wavelength(signal_nm, pump_nm):
    s = np.asarray(signal_nm, dtype=float)
    p = np.asarray(pump_nm, dtype=float)
    if np.any(~(s > 0)) or np.any(~(p > 0)):
        raise DomainError("wavelengths must be positive")
    out = 1.0 / (1.0 / s + 1.0 / p)
    return float(out) if out.ndim == 0 else out


def qpm_mismatch(triplet: WaveTriplet, crystal: CrystalSpec, model: SellmeierModel | None = None) -> float:
    """Delta k = 2 pi [n_f/l_f - n_p/l_p - n_s/l_s] - 2 pi m / Lambda, in rad/mm."""
    return _mismatch(triplet.signal_nm, triplet.pump_nm, crystal, model or default_model())


def _mismatch(signal_nm, pump_nm, crystal, model):
    T = crystal.temperature_c
    lf = sfg_wavelength(signal_nm, pump_nm)
    k = (
        refractive_index(lf, T, model) / lf
        - refractive_index(pump_nm, T, model) / pump_nm
        - refractive_index(signal_nm, T, model) / signal_nm
    )
    return 2 * math.pi * k * 1e6 - 2 * math.pi * crystal.qpm_order / crystal.poling_period_um * 1e3


def solve_qpm_pump(
    signal_nm: float,
    crystal: CrystalSpec,
    model: SellmeierModel | None = None,
    bracket=PUMP_TUNING_RANGE_NM,
    n_scan: int = 64,
) -> float:
    """Pump wavelength that phase-matches ``signal_nm``.

    The bracket is scanned for sign changes first; if more than one is found
    the root nearest the bracket centre is returned and a
    ``MultipleRootsWarning`` is emitted.
    """
    model = model or default_model()
    lo, hi = float(bracket[0]), float(bracket[1])
    grid = np.linspace(lo, hi, n_scan + 1)
    vals = np.array([_mismatch(signal_nm, p, crystal, model) for p in grid])
    idx = np.flatnonzero((vals[:-1] * vals[1:] < 0) | (vals[:-1] == 0))
    if vals[-1] == 0:
        idx = np.append(idx, n_scan - 1)
    if idx.size == 0:
        raise NoRootError(
            f"no QPM root for signal {signal_nm} nm in pump bracket [{lo}, {hi}] nm"
            f" (delta k from {vals[0]:.4g} to {vals[-1]:.4g} rad/mm)"
        )
    if idx.size > 1:
        centre = 0.5 * (lo + hi)
        idx = idx[np.argsort(np.abs(grid[idx] - centre))]
        warnings.warn(
            f"{idx.size} QPM roots in [{lo}, {hi}] nm for signal {signal_nm} nm;"
            " returning the one nearest the bracket centre",
            MultipleRootsWarning,
            stacklevel=2,
        )
    i = idx[0]
    a, b = grid[i], grid[i + 1]
    if vals[i] == 0:
        return float(a)
    if vals[i + 1] == 0:
        return float(b)
    return float(brentq(lambda p: _mismatch(signal_nm, p, crystal, model), a, b, xtol=1e-10, rtol=1e-15))


@dataclass
class QPMTable:
    """Solved QPM curve; unsolved points are NaN gaps."""

    signal_nm: np.ndarray
    pump_nm: np.ndarray
    sfg_nm: np.ndarray
    delta_k: np.ndarray

    def __len__(self):
        return len(self.signal_nm)

    @property
    def solved(self):
        return np.isfinite(self.pump_nm)

    def triplets(self):
        return [WaveTriplet(s, p) for s, p in zip(self.signal_nm[self.solved], self.pump_nm[self.solved])]

    def to_csv(self, path):
        from .io import write_csv

        write_csv(
            path,
            ["lambda_signal_nm", "lambda_pump_nm", "lambda_sfg_nm", "delta_k_rad_per_mm"],
            [self.signal_nm, self.pump_nm, self.sfg_nm, self.delta_k],
        )


def qpm_curve(signal_range_nm, crystal: CrystalSpec, model: SellmeierModel | None = None,
              bracket=PUMP_TUNING_RANGE_NM) -> QPMTable:
    model = model or default_model()
    signal = np.atleast_1d(np.asarray(signal_range_nm, dtype=float))
    model.check(signal)
    pump = np.full(signal.shape, np.nan)
    sfg = np.full(signal.shape, np.nan)
    dk = np.full(signal.shape, np.nan)
    for i, s in enumerate(signal):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MultipleRootsWarning)
                p = solve_qpm_pump(s, crystal, model, bracket)
        except NoRootError:
            continue
        pump[i] = p
        sfg[i] = sfg_wavelength(s, p)
        dk[i] = _mismatch(s, p, crystal, model)
    return QPMTable(signal, pump, sfg, dk)


def degenerate_wavelength(crystal: CrystalSpec, model: SellmeierModel | None = None,
                          bracket=PUMP_TUNING_RANGE_NM) -> float:
    """Signal wavelength at which the QPM pump equals the signal (SHG point)."""
    model = model or default_model()
    return float(brentq(lambda x: _mismatch(x, x, crystal, model), *bracket, xtol=1e-10))


def load_model(path: str | Path | None = None) -> SellmeierModel:
    return default_model() if path is None else SellmeierModel.from_json(path)
