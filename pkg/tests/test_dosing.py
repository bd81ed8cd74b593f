import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from tbregsim.dosing import (PRESET_CASES, DoseSchedule, DoseWindow, dose_to_concentration, format_schedule,
                             infusion_rate, parse_schedule, preset_schedule, standard_schedule, v_of_t)
from tbregsim.model import DomainError


def test_dose_to_concentration():
    assert dose_to_concentration(375, 1.7, 5) == pytest.approx(127.5)
    assert dose_to_concentration(1000, 1.7, 5) == pytest.approx(340.0)
    assert dose_to_concentration(42.0, 3.0, 3.0) == pytest.approx(42.0)
    for bad in ((0, 1.7, 5), (375, 0, 5), (375, 1.7, -5)):
        with pytest.raises(DomainError):
            dose_to_concentration(*bad)


def test_infusion_rate():
    assert infusion_rate(127.5, 4 / 24) == pytest.approx(765.0)
    assert infusion_rate(340, 4 / 24) == pytest.approx(2040.0)
    assert infusion_rate(12.0, 1.0) == 12.0
    with pytest.raises(DomainError):
        infusion_rate(127.5, 0.0)


def test_v_of_t_standard():
    s = standard_schedule()
    assert v_of_t(s, 7.05) == pytest.approx(765.0)
    assert v_of_t(s, 3.0) == 0.0
    assert v_of_t(DoseSchedule(), 12.0) == 0.0
    # half-open windows
    assert v_of_t(s, 7.0) == pytest.approx(765.0)
    assert v_of_t(s, 7.0 + 4 / 24) == 0.0


def test_preset_cases():
    s = preset_schedule(1)
    assert [w.start for w in s] == [0, 7, 14, 21]
    assert all(w.rate == pytest.approx(765.0) and w.duration == pytest.approx(1 / 6) for w in s)
    s3 = preset_schedule(3)
    assert len(s3) == 8 and [w.start for w in s3] == [7.0 * k for k in range(8)]
    s4 = preset_schedule(4)
    assert [w.start for w in s4] == [0, 5, 10, 15]
    assert all(w.rate == pytest.approx(250.0, rel=1e-5) for w in s4)
    assert [w.start for w in preset_schedule(2, start=3.0)] == [3.0, 10.0]
    with pytest.raises(ValueError):
        preset_schedule(6)


@pytest.mark.parametrize("case", sorted(PRESET_CASES))
def test_dose_conservation(case):
    n, _, dose = PRESET_CASES[case]
    s = preset_schedule(case)
    per_dose = dose_to_concentration(dose)
    for w in s:
        assert w.rate * w.duration == pytest.approx(per_dose, rel=1e-12)
    horizon = s.windows[-1].end + 10.0
    pts = sorted({x for w in s for x in (w.start, w.end)})
    total, _ = quad(lambda t: v_of_t(s, t), 0.0, horizon, points=pts, limit=500, epsabs=0, epsrel=1e-12)
    assert total == pytest.approx(n * per_dose, rel=1e-9)


def test_schedule_validation():
    with pytest.raises(ValueError):
        DoseSchedule((DoseWindow(0.0, 1.0, 1.0), DoseWindow(0.5, 1.0, 1.0)))
    with pytest.raises(DomainError):
        DoseWindow(-1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        DoseWindow(0.0, 0.0, 1.0)
    s = DoseSchedule((DoseWindow(5.0, 1.0, 1.0), DoseWindow(0.0, 1.0, 2.0)))
    assert [w.start for w in s] == [0.0, 5.0]


def test_breakpoints():
    s = standard_schedule()
    assert s.breakpoints(0.0, 10.0) == pytest.approx([1 / 6, 7.0, 7 + 1 / 6])
    assert s.breakpoints(7.0, 7.1) == []


def test_schedule_file_round_trip():
    text = format_schedule([0, 7, 14, 21], [375] * 4)
    s = parse_schedule(text)
    assert s == standard_schedule()
    alt = parse_schedule("# bsa = 2.0\n# infusion_hours = 2\nstart_days,dose_mg_per_m2\n0,100\n")
    assert alt.windows[0].rate == pytest.approx(100 * 2.0 / 5 / (2 / 24))


def test_schedule_file_errors():
    with pytest.raises(ValueError, match="header"):
        parse_schedule("0,375\n")
    with pytest.raises(ValueError, match="line 3"):
        parse_schedule("start_days,dose_mg_per_m2\n0,375\n7,abc\n")
    with pytest.raises(KeyError):
        parse_schedule("# weight = 70\nstart_days,dose_mg_per_m2\n0,375\n")


@settings(max_examples=200)
@given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=6, unique=True),
       st.floats(10.0, 1000.0))
def test_quadrature_of_random_schedules(starts, dose):
    starts = sorted(starts)
    # keep windows apart so they cannot overlap
    starts = [s + 1.0 * i for i, s in enumerate(starts)]
    s = DoseSchedule.from_doses(starts, [dose] * len(starts))
    pts = sorted({x for w in s for x in (w.start, w.end)})
    total, _ = quad(lambda t: v_of_t(s, t), 0.0, pts[-1] + 1.0, points=pts, limit=500, epsabs=0, epsrel=1e-12)
    assert total == pytest.approx(s.total_amount(), rel=1e-9)
    assert s.total_amount() == pytest.approx(len(starts) * dose_to_concentration(dose), rel=1e-12)
