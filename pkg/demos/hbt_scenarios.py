"""The four g2 scenarios: coherent, modulated, pulsed, antibunched.

Runs each experiment file in demos/experiments and prints the headline
number. Takes a minute or two.

    python3 demos/hbt_scenarios.py
"""
from __future__ import annotations

from pathlib import Path

from upconv_g2 import analysis as A
from upconv_g2 import hbt as H
from upconv_g2.cli import load_experiment

HERE = Path(__file__).parent / "experiments"


def run(name):
    source, cfg, _ = load_experiment(HERE / f"{name}.json")
    return source, cfg, H.estimate_g2(H.normalize(H.simulate_coincidences(source, cfg)))


_, _, est = run("coherent")
m, e = A.mean_g2(est)
print(f"coherent:   mean g2 = {m:.3f} +- {e:.3f}")

_, _, est = run("modulated")
v = A.visibility(est.dt_ps, est.g2, 4.0, est.g2_err)
print(f"modulated:  visibility = {v.visibility:.3f} +- {v.error:.3f}")

_, cfg, est = run("pulsed")
fit = A.fit_gaussian_peak(est.dt_ps, est.g2, est.g2_err)
r = A.deconvolve_resolution(fit.fwhm, 2.5)
print(f"pulsed:     peak FWHM = {fit.fwhm:.2f} +- {fit.errors['fwhm']:.2f} ps -> gate {r:.2f} ps "
      f"(gate FWHM {cfg.gate.fwhm:.2f} ps)")

_, _, est = run("polariton")
i0 = est.zero_index
viol = A.classical_violation(est)
print(f"polariton:  g2(0) = {est.g2[i0]:.3f} +- {est.g2_err[i0]:.3f}, "
      f"g2(0) >= g2(tau) violated by {viol.significance:.1f} sigma at {viol.argmax_dt:g} ps")
