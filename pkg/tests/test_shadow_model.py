import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shadowgrid.shadow_model import ShadowScenario, apparent_mean_shift, shadow_edge_shift
from shadowgrid.sim import measure_shadow_mean_shift

pos = st.floats(0.1, 100.0)


@pytest.mark.parametrize("rho_l, rho_v, delta, expect", [
    (10.0, 10.0, 0.5, 0.5),
    (10.0, 0.0, 0.5, 0.0),
    (10.0, 20.0, 0.5, 1.0),
])
def test_edge_shift_values(rho_l, rho_v, delta, expect):
    assert shadow_edge_shift(ShadowScenario(rho_l, rho_v, delta)) == pytest.approx(expect)


@pytest.mark.parametrize("rho_l, rho_v, delta, expect", [
    (10.0, 10.0, 1.0, 0.5),
    (10.0, 20.0, 0.0, 0.0),
    (10.0, 30.0, 0.5, 0.75),
])
def test_mean_shift_values(rho_l, rho_v, delta, expect):
    assert apparent_mean_shift(ShadowScenario(rho_l, rho_v, delta)) == pytest.approx(expect)


@given(pos, st.floats(0.0, 100.0), st.floats(0.0, 5.0))
def test_mean_shift_is_half_edge_shift(rho_l, rho_v, delta):
    s = ShadowScenario(rho_l, rho_v, delta)
    assert apparent_mean_shift(s) == 0.5 * shadow_edge_shift(s)


@given(pos, pos, st.floats(0.01, 5.0), st.floats(1.01, 3.0))
def test_monotonicity(rho_l, rho_v, delta, k):
    base = apparent_mean_shift(ShadowScenario(rho_l, rho_v, delta))
    assert apparent_mean_shift(ShadowScenario(rho_l, rho_v * k, delta)) > base
    assert apparent_mean_shift(ShadowScenario(rho_l, rho_v, delta * k)) > base
    assert apparent_mean_shift(ShadowScenario(rho_l * k, rho_v, delta)) < base


def test_invalid_scenarios():
    with pytest.raises(ValueError):
        ShadowScenario(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        ShadowScenario(10.0, -1.0, 0.5)


@pytest.mark.parametrize("rho_v", [10.0, 20.0, 30.0])
def test_simulated_shift_follows_law(rho_v):
    # a thin column keeps the occluder close to the point-like case
    measured = measure_shadow_mean_shift(10.0, rho_v, 0.5, radius=0.45)
    predicted = apparent_mean_shift(ShadowScenario(10.0, rho_v, 0.5))
    # the mean moves against the sensor displacement
    assert measured < 0
    assert abs(abs(measured) - predicted) <= 0.2 * predicted
