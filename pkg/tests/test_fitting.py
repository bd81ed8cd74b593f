import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbregsim import fitting as F
from tbregsim.fitting import AssayConfig, FitError
from tbregsim.model import DomainError

# lysis fractions at LYSIS_RATIOS for the MDA-MB-231 rational fit (T_E = 2e5,
# theta = 0.7414, 5 h), from a 30-digit Taylor-series integration (mpmath.odefun)
RATIONAL_231_ORACLE = (0.028576542761296942, 0.071128211503718752, 0.17319885257741645, 0.39168400068393469,
                       0.68710821957686812, 0.83593261453044989, 0.88031484045145357, 0.89487834758970568)


def _response(kind, coeffs, prey, pred):
    if pred <= 0:
        return 0.0
    if kind == "power":
        m, e = coeffs
        return m * pred ** e
    if kind == "michaelis-menten":
        m, k = coeffs
        return m * pred / (k + pred)
    m, e, s = coeffs
    return m * pred ** e / (s * prey ** e + pred ** e)


def _rk4_lysis(cfg, kind, coeffs, ratio, steps=10_000):
    """Classical RK4 on the two-species assay, written independently of the package."""
    def f(y):
        prey, pred = max(y[0], 0.0), max(y[1], 0.0)
        return np.array([-cfg.prey_decay * prey - _response(kind, coeffs, prey, pred) * prey,
                         -cfg.predator_decay * pred])
    h = cfg.duration / steps
    y = np.array([cfg.prey_initial, ratio * cfg.prey_initial])
    for _ in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    ref = cfg.prey_initial
    if cfg.normalization == "attributable":
        ref *= math.exp(-cfg.prey_decay * cfg.duration)
    return 1.0 - y[0] / ref


CASES = [(AssayConfig.tumor_assay("MDA-MB-231"), form, F.LYSIS_FITS["MDA-MB-231"][form]) for form in F.FORMS] + \
        [(AssayConfig.tumor_assay("MDA-MB-453"), form, F.LYSIS_FITS["MDA-MB-453"][form]) for form in F.FORMS] + \
        [(AssayConfig.nk_assay(), form, F.APOPTOSIS_FITS[form]) for form in F.FORMS] + \
        [(AssayConfig.nk_assay(normalization="total"), "power", F.APOPTOSIS_FITS["power"])]


@pytest.mark.parametrize("cfg, kind, coeffs", CASES)
def test_adaptive_matches_rk4(cfg, kind, coeffs):
    ratios = [0.125, 1.0, 4.0, 20.0]
    got = F.lysis_curve(cfg.with_form(kind, coeffs), ratios)
    ref = [_rk4_lysis(cfg, kind, coeffs, r) for r in ratios]
    assert np.max(np.abs(got - ref)) < 1e-6


def test_power_closed_form():
    # prey(t) = prey0 exp(-m P0^e (1 - exp(-e theta t)) / (e theta)) for a decaying predator
    cfg = AssayConfig.tumor_assay()
    m, e = F.LYSIS_FITS["MDA-MB-231"]["power"]
    th, tf = cfg.predator_decay, cfg.duration
    ratios = np.array(F.LYSIS_RATIOS)
    P0 = ratios * cfg.prey_initial
    exact = 1.0 - np.exp(-m * P0 ** e * (1 - math.exp(-e * th * tf)) / (e * th))
    assert np.allclose(F.lysis_curve(cfg.with_form("power", (m, e)), ratios), exact, rtol=0, atol=1e-9)


def test_michaelis_menten_closed_form_nk_assay():
    # attributable kill: prey ratio exp(-(m / theta) ln((K + P0) / (K + P0 e^{-theta t})))
    cfg = AssayConfig.nk_assay()
    m, K = F.APOPTOSIS_FITS["michaelis-menten"]
    th, tf = cfg.predator_decay, cfg.duration
    ratios = np.array(F.APOPTOSIS_RATIOS)
    P0 = ratios * cfg.prey_initial
    exact = 1.0 - np.exp(-(m / th) * np.log((K + P0) / (K + P0 * math.exp(-th * tf))))
    assert np.allclose(F.lysis_curve(cfg.with_form("michaelis-menten", (m, K)), ratios), exact, rtol=0, atol=1e-9)


def test_rational_curve_oracle():
    cfg = AssayConfig(F.TUMOR_ASSAY, 2e5, 0.7414, 0.0, 5 / 24).with_form("rational-hill", (11.2263, 1.33332, 39.222))
    assert np.allclose(F.lysis_curve(cfg, F.LYSIS_RATIOS), RATIONAL_231_ORACLE, rtol=0, atol=1e-8)


def test_trivial_assay_values():
    cfg = AssayConfig.tumor_assay().with_form("rational-hill", F.LYSIS_FITS["MDA-MB-231"]["rational-hill"])
    assert F.percent_specific_lysis(cfg, 0.0) == 0.0
    nk = AssayConfig.nk_assay().with_form("power", (2.92131e-6, 0.499502))
    assert F.percent_specific_lysis(nk, 0.0) == 0.0
    total = AssayConfig.nk_assay(normalization="total").with_form("power", (2.92131e-6, 0.499502))
    assert F.percent_specific_lysis(total, 0.0) == pytest.approx(1 - math.exp(-F.THETA_NE * 16 / 24), rel=1e-12)
    for kind, coeffs in (("power", (0.0, 1.0)), ("michaelis-menten", (0.0, 1e6)), ("rational-hill", (0.0, 1.0, 1.0))):
        assert np.allclose(F.lysis_curve(AssayConfig.nk_assay().with_form(kind, coeffs), [0.5, 4.0]), 0.0, atol=1e-9)
    with pytest.raises(DomainError):
        F.lysis_curve(cfg, [-1.0])


def test_production_nk_values_increase_with_ratio():
    cfg = AssayConfig.nk_assay().with_form("power", (1e-6, 0.5))
    y = F.lysis_curve(cfg, F.APOPTOSIS_RATIOS)
    assert np.all(np.diff(y) > 0)


def test_assay_config_validation():
    with pytest.raises(DomainError):
        AssayConfig(F.TUMOR_ASSAY, 0.0, 0.7, 0.0, 1.0)
    with pytest.raises(ValueError):
        AssayConfig("cytokine", 1.0, 0.7, 0.0, 1.0)
    with pytest.raises(ValueError):
        AssayConfig.tumor_assay("MCF-7")
    with pytest.raises(ValueError):
        AssayConfig.nk_assay(normalization="other")
    assert AssayConfig.nk_assay().duration == pytest.approx(16 / 24)
    assert AssayConfig.tumor_assay().duration == pytest.approx(5 / 24)


@settings(max_examples=150)
@given(st.sampled_from(F.FORMS), st.floats(0.05, 50.0), st.floats(0.2, 2.5), st.floats(0.1, 50.0))
def test_lysis_in_unit_interval_and_monotone(kind, mag, expo, half):
    # power magnitude scaled so the per-day kill rate at the top ratio is mag
    top = F.LYSIS_RATIOS[-1] * AssayConfig.tumor_assay().prey_initial
    coeffs = {"power": (mag / top ** expo, expo), "rational-hill": (mag, expo, half),
              "michaelis-menten": (mag, half * 1e5)}[kind]
    y = F.lysis_curve(AssayConfig.tumor_assay().with_form(kind, coeffs), F.LYSIS_RATIOS)
    assert np.all((y >= -1e-12) & (y <= 1 + 1e-12))
    assert np.all(np.diff(y) >= -1e-12)


# -- fits ---------------------------------------------------------------------

def test_power_recovery_zero_noise():
    cfg = AssayConfig.tumor_assay("MDA-MB-231")
    true = (1.462e-7, 1.2089)
    x, y = F.synthetic_lysis(cfg, "power", true)
    res = F.fit_lysis_curve(x, y, cfg, "power")
    assert res.converged and not res.degenerate
    assert np.allclose(res.parameters, true, rtol=0.005)
    assert len(res.residuals) == len(y)


def test_rational_recovery_zero_noise():
    cfg = AssayConfig.tumor_assay("MDA-MB-453")
    true = (19.6448, 0.8249, 3.85119)
    x, y = F.synthetic_lysis(cfg, "rational-hill", true)
    res = F.fit_lysis_curve(x, y, cfg, "rational-hill")
    assert np.allclose(res.parameters, true, rtol=0.01)


def test_nk_power_recovery_zero_noise():
    cfg = AssayConfig.nk_assay()
    true = (2.92131e-6, 0.499502)
    x, y = F.synthetic_lysis(cfg, "power", true, ratios=F.APOPTOSIS_RATIOS)
    res = F.fit_nk_apoptosis_curve(x, y, cfg, "power")
    assert np.allclose(res.parameters, true, rtol=0.01)


def test_zero_data_degenerate():
    cfg = AssayConfig.tumor_assay()
    res = F.fit_lysis_curve(F.LYSIS_RATIOS, np.zeros(len(F.LYSIS_RATIOS)), cfg, "power")
    assert res.parameters[0] == 0.0
    assert np.all(res.predicted == 0.0) and res.rss == 0.0
    assert res.degenerate


def test_flat_growth_degenerate():
    t, y = F.synthetic_growth("logistic", 0.2, 1e9, p0=1e9)
    res = F.fit_growth_model(t, y, "logistic")
    assert res.degenerate


def test_decreasing_growth_rejected():
    with pytest.raises(DomainError):
        F.fit_growth_model([0, 1, 2], [3e6, 2e6, 1e6])
    with pytest.raises(ValueError):
        F.fit_growth_model([0, 1], [1e6, 2e6])


@pytest.mark.parametrize("kind, line", [("logistic", "MDA-231"), ("gompertz", "CN34BrM")])
def test_growth_recovery(kind, line):
    r, K = F.GROWTH_FITS[line][kind]
    t, y = F.synthetic_growth(kind, r, K)
    res = F.fit_growth_model(t, y, kind)
    assert np.allclose(res.parameters[:2], (r, K), rtol=0.01)
    fixed = F.fit_growth_model(t, y, kind, fit_p0=False)
    assert fixed.parameters[2] == y[0]
    assert np.allclose(fixed.parameters[:2], (r, K), rtol=0.01)


@pytest.mark.parametrize("form", F.FORMS)
def test_fit_never_worse_than_truth(form):
    cfg = AssayConfig.tumor_assay("MDA-MB-231")
    true = F.LYSIS_FITS["MDA-MB-231"][form]
    x, y = F.synthetic_lysis(cfg, form, true, noise=0.02, seed=3, replicates=3)
    res = F.fit_lysis_curve(x, y, cfg, form)
    truth = F.lysis_curve(cfg.with_form(form, true), x) - y
    assert res.rss <= truth @ truth + 1e-12


def test_growth_fit_never_worse_than_truth():
    r, K = F.GROWTH_FITS["MDA-231"]["gompertz"]
    t, y = F.synthetic_growth("gompertz", r, K, noise=0.02, seed=5, replicates=3)
    res = F.fit_growth_model(t, y, "gompertz")
    truth = F.growth_curve("gompertz", F.GROWTH_P0, r, K, t) - y
    assert res.rss <= (truth @ truth) * (1 + 1e-12) + 1e-12


def test_multistart_determinism():
    cfg = AssayConfig.tumor_assay("MDA-MB-453")
    x, y = F.synthetic_lysis(cfg, "michaelis-menten", F.LYSIS_FITS["MDA-MB-453"]["michaelis-menten"],
                             noise=0.02, seed=1, replicates=2)
    a = F.fit_lysis_curve(x, y, cfg, "michaelis-menten", seed=7)
    b = F.fit_lysis_curve(x, y, cfg, "michaelis-menten", seed=7)
    assert a.report() == b.report()
    assert np.array_equal(a.residuals, b.residuals)
    assert a.start_costs == b.start_costs


def test_fit_report_and_files(tmp_path):
    cfg = AssayConfig.tumor_assay()
    x, y = F.synthetic_lysis(cfg, "power", F.LYSIS_FITS["MDA-MB-231"]["power"])
    res = F.fit_lysis_curve(x, y, cfg, "power")
    report, resid = res.write(tmp_path, "demo", "ratio")
    text = report.read_text()
    assert "magnitude = " in text and "rss = " in text and "starts = 16" in text
    lines = resid.read_text().splitlines()
    assert lines[0] == "ratio,observed,predicted,residual" and len(lines) == len(x) + 1


def test_nk_fit_needs_nk_assay():
    with pytest.raises(ValueError):
        F.fit_nk_apoptosis_curve([1, 2, 3], [0.1, 0.2, 0.3], AssayConfig.tumor_assay())


def test_fit_needs_enough_points():
    with pytest.raises((ValueError, FitError)):
        F.fit_lysis_curve([1.0, 2.0], [0.1, 0.2], AssayConfig.tumor_assay(), "rational-hill")


# -- data files ------------------------------------------------------------------

def test_growth_csv_volume_conversion():
    t, cells = F.parse_growth_csv("t_days,volume_mm3\n0,1\n7,2\n")
    assert list(t) == [0.0, 7.0]
    assert cells[0] == pytest.approx(5.49e5, rel=0.005)


def test_csv_errors_name_lines():
    with pytest.raises(ValueError, match="line 1"):
        F.parse_growth_csv("time,cells\n0,1\n")
    with pytest.raises(ValueError, match="line 3"):
        F.parse_lysis_csv("ratio,lysis_percent\n1,10\n2,x\n")
    with pytest.raises(ValueError, match="line 2"):
        F.parse_lysis_csv("ratio,lysis_percent\n1,10,3\n")
    with pytest.raises(ValueError):
        F.parse_lysis_csv("ratio,lysis_percent\n1,120\n")
    with pytest.raises(ValueError, match="empty"):
        F.parse_lysis_csv("\n# only a comment\n")


def test_csv_round_trip():
    x, y = F.synthetic_lysis(AssayConfig.tumor_assay(), "power", F.LYSIS_FITS["MDA-MB-231"]["power"])
    rx, ry = F.parse_lysis_csv(F.format_lysis_csv(x, y))
    assert np.allclose(rx, x) and np.allclose(ry, y, rtol=1e-15)
    t, c = F.synthetic_growth("logistic", 0.2, 1e9)
    rt, rc = F.parse_growth_csv(F.format_growth_csv(t, c))
    assert np.array_equal(rt, t) and np.array_equal(rc, c)


def test_noise_is_seeded():
    a = F.add_noise(np.ones(5), 0.02, seed=4)
    b = F.add_noise(np.ones(5), 0.02, seed=4)
    assert np.array_equal(a, b) and not np.array_equal(a, np.ones(5))
    _, y = F.synthetic_lysis(AssayConfig.tumor_assay(), "rational-hill",
                             F.LYSIS_FITS["MDA-MB-231"]["rational-hill"], noise=0.5, seed=1)
    assert np.all((y >= 0) & (y <= 1))
