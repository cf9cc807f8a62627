"""Gate response at the operating point, then a pump-power sweep.

    python3 demos/gate_and_sweep.py [out_dir]
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from upconv_g2 import propagation as P

crystal, pump, signal = P.experiment_setup(1.5)
rec = P.propagate(crystal, pump, signal)
gate = P.gate_response(rec)
print(f"kappa {crystal.kappa}  pump {pump.center_nm:.2f} nm  peak {pump.peak_power_mw:.0f} mW")
print(f"gate FWHM {gate.fwhm:.3f} ps, Manley-Rowe drift {rec.manley_rowe_drift:.1e}")
ref = np.max(np.abs(rec.signal[0]) ** 2)
print(f"peak signal conversion {1 - np.min(np.abs(rec.signal[-1]) ** 2) / ref:.3f}")

powers = [0.1, 0.3, 1.0, 1.5, 3.0, 5.0]
table = P.sweep_pump_power(powers, crystal, pump, signal)
print(f"{'P (mW)':>7s} {'SFG (pJ)':>10s} {'FWHM (ps)':>9s}")
for p, e, r in zip(table.power_mw, table.sfg_energy, table.resolution_ps):
    print(f"{p:7.2f} {e:10.3e} {r:9.3f}")

if len(sys.argv) > 1:
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    gate.to_csv(out / "gate.csv")
    table.to_csv(out / "sweep.csv")
