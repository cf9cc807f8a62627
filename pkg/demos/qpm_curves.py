"""Pump wavelength and SFG wavelength versus signal for the 3.96 um grating.

    python3 demos/qpm_curves.py [out.csv]
"""
from __future__ import annotations

import sys

import numpy as np

from upconv_g2 import dispersion as D

crystal = D.CrystalSpec(poling_period_um=3.96, length_mm=12.5, temperature_c=25.0)

pump = D.solve_qpm_pump(812.0, crystal)
print(f"812 nm signal: pump {pump:.2f} nm, SFG {D.sfg_wavelength(812.0, pump):.2f} nm")
print(f"degenerate point: {D.degenerate_wavelength(crystal):.2f} nm")

table = D.qpm_curve(np.arange(750.0, 1151.0, 25.0), crystal)
print(f"{'signal':>8s} {'pump':>9s} {'sfg':>8s}")
for s, p, f in zip(table.signal_nm, table.pump_nm, table.sfg_nm):
    print(f"{s:8.1f} {p:9.2f} {f:8.2f}")

# the SFG line barely moves while the pump tunes over ~300 nm
print(f"SFG span: {np.ptp(table.sfg_nm):.2f} nm, pump span: {np.ptp(table.pump_nm):.1f} nm")

if len(sys.argv) > 1:
    table.to_csv(sys.argv[1])
