from __future__ import annotations

import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upconv_g2 import dispersion as D
from upconv_g2.errors import DomainError, MultipleRootsWarning, NoRootError

CRYSTAL = D.CrystalSpec(poling_period_um=3.96, length_mm=12.5)

# frozen from tests/oracles/derive_values.py (mpmath evaluation)
N_E_1064 = 2.148288130425947
WALKOFF_812_990 = 0.12811595274975265
QPM_PUMP_812 = 990.3694326317705


def test_index_anchor():
    assert D.refractive_index(1064.0, 25.0) == pytest.approx(N_E_1064, rel=1e-13)
    assert 2.10 <= D.refractive_index(1064.0, 25.0) <= 2.20


def test_index_continuity():
    a = D.refractive_index(1064.0)
    b = D.refractive_index(1064.001)
    assert abs(a - b) / a < 1e-5


@pytest.mark.parametrize("lam", [300.0, 349.9, 4000.1, float("nan")])
def test_outside_window_is_error(lam):
    with pytest.raises(DomainError, match="validity window"):
        D.refractive_index(lam)


def test_index_range_over_window():
    m = D.default_model()
    lam = np.arange(m.validity_nm[0], m.validity_nm[1] + 1, 1.0)
    n = D.refractive_index(lam)
    assert n.min() >= 2.0 and n.max() <= 2.6


def test_derivative_matches_finite_difference():
    m = D.default_model()
    lo, hi = m.validity_nm
    for lam in np.linspace(lo + 50, hi - 50, 20):
        h = 0.01
        fd = (D.refractive_index(lam + h) - D.refractive_index(lam - h)) / (2 * h)
        assert D.dn_dlambda(lam) == pytest.approx(fd, rel=1e-6)


def test_group_index_exceeds_phase_index():
    lam = np.linspace(400, 3000, 60)
    assert np.all(D.group_index(lam) > D.refractive_index(lam))


def test_group_index_strict_window():
    lo = D.default_model().validity_nm[0]
    with pytest.raises(DomainError):
        D.group_index(lo)


def test_walkoff_812_990():
    w = D.group_slowness_difference(812.0, 990.0)
    assert 0 < w < 0.5
    assert w == pytest.approx(WALKOFF_812_990, rel=1e-8)


def test_sfg_wavelength_examples():
    assert D.sfg_wavelength(812, 990) == pytest.approx(446.1, abs=0.05)
    assert D.sfg_wavelength(900, 900) == pytest.approx(450.0, rel=1e-15)
    with pytest.raises(DomainError):
        D.sfg_wavelength(-1, 990)
    with pytest.raises(DomainError):
        D.sfg_wavelength(812, 0)


@given(st.floats(300, 3000), st.floats(300, 3000))
def test_sfg_symmetric(a, b):
    assert D.sfg_wavelength(a, b) == D.sfg_wavelength(b, a)


@given(st.floats(400, 3900), st.floats(400, 3900))
def test_triplet_energy_conservation(s, p):
    t = D.WaveTriplet(s, p)
    assert abs(1 / t.sfg_nm - 1 / s - 1 / p) < 1e-12


def test_qpm_point():
    p = D.solve_qpm_pump(812.0, CRYSTAL)
    assert p == pytest.approx(QPM_PUMP_812, abs=1e-6)
    assert abs(D.qpm_mismatch(D.WaveTriplet(812.0, p), CRYSTAL)) < 1e-6
    assert 443 <= D.sfg_wavelength(812.0, p) <= 449


def test_qpm_near_phase_matching_at_990():
    # "990 nm" to the nearest nm: phase matching lies inside 990 +- 0.5 nm
    lo = D.qpm_mismatch(D.WaveTriplet(812.0, 989.5), CRYSTAL)
    hi = D.qpm_mismatch(D.WaveTriplet(812.0, 990.5), CRYSTAL)
    assert lo * hi < 0
    assert round(D.solve_qpm_pump(812.0, CRYSTAL)) == 990


def test_poling_perturbation_identity():
    t = D.WaveTriplet(812.0, 990.0)
    lam = CRYSTAL.poling_period_um
    other = D.CrystalSpec(poling_period_um=lam * (1 + 1e-3), length_mm=12.5)
    change = D.qpm_mismatch(t, other) - D.qpm_mismatch(t, CRYSTAL)
    expected = 2 * math.pi / lam * 1e3 * (1e-3 / (1 + 1e-3))
    assert change == pytest.approx(expected, rel=1e-9)


def test_no_root_error():
    with pytest.raises(NoRootError, match="no QPM root"):
        D.solve_qpm_pump(812.0, CRYSTAL, bracket=(1050.0, 1100.0))


def test_multiple_roots_flagged(monkeypatch):
    # delta k is monotonic in the pump for real data; substitute a two-root curve
    monkeypatch.setattr(D, "_mismatch", lambda s, p, c, m: (p - 780.0) * (p - 950.0))
    with pytest.warns(MultipleRootsWarning):
        p = D.solve_qpm_pump(812.0, CRYSTAL, bracket=(700.0, 1100.0))
    assert p == pytest.approx(950.0, abs=1e-8)


def test_degenerate_point_symmetry():
    x = D.degenerate_wavelength(CRYSTAL)
    assert D.solve_qpm_pump(x, CRYSTAL, bracket=(x - 100, x + 100)) == pytest.approx(x, abs=1e-6)


def test_qpm_curve_range_and_continuity():
    sig = np.arange(750.0, 1151.0, 1.0)
    table = D.qpm_curve(sig, CRYSTAL)
    assert table.solved.all()
    assert np.all(np.abs(table.sfg_nm - 445.0) <= 10.0)
    assert np.ptp(table.sfg_nm) < 10.0
    assert np.max(np.abs(np.diff(table.pump_nm))) < 5.0
    assert np.all(np.abs(table.delta_k) < 1e-6)
    assert np.all(table.pump_nm >= 700) and np.all(table.pump_nm <= 1100)


def test_qpm_curve_single_point_and_gaps():
    one = D.qpm_curve([812.0], CRYSTAL)
    assert len(one) == 1 and one.pump_nm[0] == D.solve_qpm_pump(812.0, CRYSTAL)
    gappy = D.qpm_curve([812.0, 900.0], CRYSTAL, bracket=(980.0, 1000.0))
    assert gappy.solved.tolist() == [True, False]
    assert len(gappy.triplets()) == 1


def test_qpm_csv(tmp_path):
    from upconv_g2.io import read_csv

    table = D.qpm_curve([750.0, 812.0], CRYSTAL)
    table.to_csv(tmp_path / "q.csv")
    d = read_csv(tmp_path / "q.csv")
    assert list(d) == ["lambda_signal_nm", "lambda_pump_nm", "lambda_sfg_nm", "delta_k_rad_per_mm"]
    assert np.array_equal(d["lambda_pump_nm"], table.pump_nm)


def test_crystal_invariants():
    for bad in (dict(poling_period_um=0), dict(length_mm=-1), dict(kappa=-0.1), dict(qpm_order=2)):
        with pytest.raises(DomainError):
            D.CrystalSpec(**bad)


def test_model_file_roundtrip(tmp_path):
    import json

    m = D.default_model()
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"name": "copy", "coefficients": list(m.coefficients),
                                "validity_nm": list(m.validity_nm), "citation": m.citation}))
    copy = D.load_model(path)
    assert D.refractive_index(1064.0, model=copy) == D.refractive_index(1064.0)
    assert m.citation


@settings(max_examples=25, deadline=None)
@given(st.floats(750, 1150))
def test_root_consistency(sig):
    p = D.solve_qpm_pump(sig, CRYSTAL)
    assert abs(D.qpm_mismatch(D.WaveTriplet(sig, p), CRYSTAL)) < 1e-6
