"""Simulation and analysis of g2 measurements by pulsed frequency upconversion."""
from __future__ import annotations

__version__ = "0.1.0"

from .analysis import (
    EfficiencyBudget,
    PeakFit,
    classical_violation,
    deconvolve_resolution,
    efficiency_budget,
    fit_gaussian_peak,
    gate_duty_cycle,
    mean_g2,
    visibility,
)
from .dispersion import (
    CrystalSpec,
    SellmeierModel,
    WaveTriplet,
    group_index,
    qpm_curve,
    qpm_mismatch,
    refractive_index,
    sfg_wavelength,
    solve_qpm_pump,
)
from .errors import (
    ConfigurationError,
    DomainError,
    EmptyResponseError,
    FitError,
    NoRootError,
    RegimeViolation,
    SolverAccuracyError,
    UndefinedNormalizationError,
    UnsupportedOracleError,
    UpconvError,
)
from .hbt import (
    AnalyticG2,
    CoherentCW,
    CoincidenceHistogram,
    G2Estimate,
    MeasurementConfig,
    ModulatedCW,
    PulsedCoherent,
    estimate_g2,
    normalize,
    oracle_intensity_trace,
    pair_detection_probability,
    polariton_model,
    simulate_coincidences,
)
from .propagation import (
    FieldRecord,
    GateResponse,
    GridSpec,
    PulseSpec,
    fit_saturation,
    gate_response,
    make_pulse,
    propagate,
    sweep_pump_power,
)
