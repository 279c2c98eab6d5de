import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spnoise.nau import (
    NauHandle,
    NauParams,
    activation,
    full_period_power_mw,
    ideal_nau,
    nau_input,
    nau_mse,
    nonideal_nau,
    photocurrent,
    plain_relu,
)

complex_fields = st.complex_numbers(max_magnitude=50.0, allow_nan=False, allow_infinity=False)


def test_ideal_nau_hand_values():
    p = NauParams()
    # 1000 mW drives the detector to 10 V, one half period: dphi = 2 pi
    out = ideal_nau(np.array([math.sqrt(1000.0), 0.0]), p)
    assert out[0] == pytest.approx(1j * math.sqrt(0.9 * 1000.0), abs=1e-9)
    assert out[1] == 0.0


def test_full_period_power():
    assert full_period_power_mw() == pytest.approx(2000.0)


def test_ideal_response_is_relu_like_in_power():
    powers = np.linspace(0.0, 1000.0, 501)
    out = np.abs(ideal_nau(np.sqrt(powers))) ** 2
    assert out[0] == 0.0
    assert np.all(np.diff(out) >= 0)
    # small inputs are strongly suppressed
    assert out[5] / (0.9 * powers[5]) < 1e-3


@settings(max_examples=100)
@given(st.lists(complex_fields, min_size=1, max_size=8))
def test_nonideal_degenerates_to_ideal(values):
    p = NauParams.ideal()
    o = np.array(values)
    assert np.allclose(nonideal_nau(o, p), ideal_nau(o, p), atol=1e-10, rtol=0)


def test_sensitivity_cutoff_gives_exact_zero():
    p = NauParams()  # default dark current and shot noise included
    threshold = 10 ** (p.s_pd / 10)
    o = np.sqrt(np.array([0.0, 0.5 * threshold, threshold]))
    assert np.array_equal(photocurrent(np.abs(o) ** 2, p), np.zeros(3))
    assert np.array_equal(nonideal_nau(o, p), np.zeros(3, dtype=complex))
    assert photocurrent(1.01 * threshold, p) > 0


def test_photocurrent_shot_noise_forms():
    base = NauParams()
    i_sig = 1e-3  # 10 mW * 0.1 tap * 1 A/W
    quadratic = photocurrent(10.0, base)
    assert quadratic == pytest.approx(i_sig + math.sqrt(2 * 1.6e-19 * i_sig**2 * 42.5e9) + 3.5e-6, rel=1e-12)
    text = photocurrent(10.0, base.with_(shot_noise="textbook"))
    assert text == pytest.approx(i_sig + math.sqrt(2 * 1.6e-19 * i_sig * 42.5e9) + 3.5e-6, rel=1e-12)
    off = photocurrent(10.0, base.with_(shot_noise="off"))
    assert off == pytest.approx(i_sig + 3.5e-6, rel=1e-12)


def test_stochastic_shot_noise_uses_caller_rng():
    p = NauParams(shot_noise="textbook", shot_stochastic=True)
    a = photocurrent(np.full(1000, 10.0), p, np.random.default_rng(1))
    b = photocurrent(np.full(1000, 10.0), p, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert a.std() == pytest.approx(math.sqrt(2 * 1.6e-19 * 1e-3 * 42.5e9), rel=0.1)


def test_nau_input_formula():
    o = np.array([1.0 + 1.0j])
    out = nau_input(o, oiu_il=0.25, g=4.0, xp=0.1, theta_err=math.pi / 2)
    assert out[0] == pytest.approx(1.0 + 1.0j - 0.1j)
    with pytest.raises(ValueError):
        nau_input(o, oiu_il=-1.0)


def test_modulator_loss_and_leak():
    p = NauParams.ideal(l_mod=3.0)
    o = np.array([30.0 + 0j])
    assert abs(nonideal_nau(o, p)[0]) ** 2 == pytest.approx(abs(ideal_nau(o, p)[0]) ** 2 * 10 ** -0.3, rel=1e-12)
    leaky = NauParams.ideal(x_mod=0.1, theta_mod=0.5)
    zero_in = np.array([0.01 + 0j])
    # the modulator is closed at tiny input; only the leak term remains
    assert nonideal_nau(zero_in, leaky)[0] == pytest.approx(
        math.sqrt(0.9) * 0.01 * 0.1 * np.exp(0.5j) + ideal_nau(zero_in, leaky)[0], abs=1e-15)


def test_conditioning_function_applied():
    clip = NauParams.ideal(conditioning=lambda v: np.minimum(v, 5.0))
    big = np.array([math.sqrt(1500.0)])
    ref = ideal_nau(big, NauParams.ideal().with_(g_tia=100.0 * 5.0 / 15.0))
    assert np.allclose(ideal_nau(big, clip), ref)


def test_params_validation():
    with pytest.raises(ValueError):
        NauParams(alpha=1.5)
    with pytest.raises(ValueError):
        NauParams(v_pi=0.0)
    with pytest.raises(ValueError):
        NauParams(shot_noise="poisson")
    with pytest.raises(ValueError):
        NauParams(i_dark=-1.0)


def test_plain_relu_and_handles():
    o = np.array([1 + 2j, -1 + 5j, 0.0, 2 - 3j])
    assert np.array_equal(plain_relu(o), np.array([1 + 2j, 0, 0, 2 - 3j]))
    assert activation("plain_relu") is plain_relu
    assert np.allclose(activation(NauHandle.IDEAL_EQ6)(o), ideal_nau(o))
    assert np.allclose(activation("NONIDEAL_EQ10")(o), nonideal_nau(o))
    with pytest.raises(ValueError):
        NauHandle.parse("tanh")


def test_mse_zero_without_impairments():
    r = nau_mse(np.linspace(0, 2000, 21), NauParams.ideal(), oiu_il_db=0.0, xp_rel_db=-math.inf, trials=4, rng=0)
    assert np.allclose(r.mse, 0.0)


def test_mse_monotone_in_crosstalk():
    powers = np.linspace(0, 2000, 101)
    peaks = [nau_mse(powers, xp_rel_db=x, trials=200, rng=0).peak for x in (-40.0, -30.0, -24.3, -20.0)]
    assert np.all(np.diff(peaks) > 0)
