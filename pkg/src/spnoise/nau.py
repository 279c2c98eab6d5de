"""Optoelectronic nonlinear activation units.

Fields are complex amplitudes in sqrt(mW): ``|o|**2`` is optical power in mW.
A tap of ratio ``alpha`` feeds a photodetector and TIA whose voltage, plus a
bias, drives an MZI intensity modulator on the remaining ``1 - alpha``
branch. With ``v_b = v_pi`` the response is ReLU-like in optical power.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from spnoise.core import db_to_amplitude, db_to_power, make_rng

Q_ELECTRON = 1.60e-19  # C
_MW_TO_W = 1e-3


def _identity(v):
    return v


@dataclass(frozen=True)
class NauParams:
    alpha: float = 0.1
    v_pi: float = 10.0
    v_b: float = 10.0
    g_tia: float = 100.0
    resp: float = 1.0
    bandwidth: float = 42.5e9
    i_dark: float = 3.5e-6
    s_pd: float = -11.7
    l_mod: float = 0.0
    x_mod: float = 0.0
    theta_mod: float = 0.0
    conditioning: Callable = field(default=_identity, compare=False)
    shot_noise: str = "quadratic"
    shot_stochastic: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.v_pi > 0:
            raise ValueError("v_pi must be positive")
        for name in ("g_tia", "resp", "bandwidth", "i_dark", "l_mod", "x_mod"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.shot_noise not in ("quadratic", "textbook", "off"):
            raise ValueError("shot_noise must be 'quadratic', 'textbook' or 'off'")

    @classmethod
    def ideal(cls, **kw) -> "NauParams":
        """Parameters under which the nonideal model reduces to the ideal response."""
        base = dict(i_dark=0.0, s_pd=-math.inf, l_mod=0.0, x_mod=0.0, shot_noise="off")
        base.update(kw)
        return cls(**base)

    def with_(self, **kw) -> "NauParams":
        return replace(self, **kw)


class NauHandle(str, enum.Enum):
    IDEAL_EQ6 = "ideal_eq6"
    NONIDEAL_EQ10 = "nonideal_eq10"
    PLAIN_RELU = "plain_relu"

    @classmethod
    def parse(cls, value) -> "NauHandle":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown activation {value!r}; choose from {[h.value for h in cls]}") from None


def _modulator(o, v_drive, p: NauParams):
    """``j o exp(-j dphi/2) cos(dphi/2)`` with ``dphi = pi (v_b + v) / v_pi``.

    The cosine is evaluated as ``sin(pi/2 - dphi/2)`` so that the fully
    closed state (``v_b + v = v_pi``) gives an exact zero.
    """
    half = 0.5 * math.pi * (p.v_b + v_drive) / p.v_pi
    closed = np.sin(0.5 * math.pi * (p.v_pi - p.v_b - v_drive) / p.v_pi)
    return 1j * o * np.exp(-1j * half) * closed


def ideal_nau(o, p: NauParams | None = None):
    """Ideal electro-optic activation (no loss, no detector nonidealities)."""
    p = p or NauParams()
    o = np.asarray(o, dtype=complex)
    drive = p.conditioning(p.g_tia * p.resp * p.alpha * np.abs(o) ** 2 * _MW_TO_W)
    return _modulator(o * math.sqrt(1.0 - p.alpha), drive, p)


def photocurrent(power_mw, p: NauParams, rng=None):
    """Detector current (A) for total optical power ``power_mw`` at the NAU input.

    The detector sees the ``alpha`` tap. Below the sensitivity the current is
    zero; above it shot noise and dark current are added.
    """
    power_mw = np.asarray(power_mw, dtype=float)
    i_sig = p.resp * p.alpha * power_mw * _MW_TO_W
    if p.shot_noise == "quadratic":
        i_shot = np.sqrt(2.0 * Q_ELECTRON * i_sig**2 * p.resp * p.bandwidth)
    elif p.shot_noise == "textbook":
        i_shot = np.sqrt(2.0 * Q_ELECTRON * i_sig * p.bandwidth)
    else:
        i_shot = np.zeros_like(i_sig)
    if p.shot_stochastic and p.shot_noise != "off":
        i_shot = i_shot * make_rng(rng).standard_normal(i_sig.shape)
    i_pd = i_sig + i_shot + p.i_dark
    threshold = db_to_power(p.s_pd) if math.isfinite(p.s_pd) else -math.inf
    return np.where(power_mw <= threshold, 0.0, i_pd)


def nau_input(o, oiu_il: float = 1.0, g: float = 1.0, xp=0.0, theta_err=0.0):
    """Field reaching the NAU: ``sqrt(oiu_il * g) * (o + xp exp(-j theta_err))``.

    ``oiu_il`` and ``g`` are power coefficients (attenuation <= 1, gain >= 1).
    """
    if oiu_il < 0 or g < 0:
        raise ValueError("power coefficients must be non-negative")
    o = np.asarray(o, dtype=complex)
    return math.sqrt(oiu_il * g) * (o + np.asarray(xp, dtype=complex) * np.exp(-1j * np.asarray(theta_err)))


def nonideal_nau(o, p: NauParams | None = None, oiu_il: float = 1.0, g: float = 1.0, xp=0.0, theta_err=0.0, rng=None):
    """Activation including OIU loss/gain, OIU crosstalk and detector/modulator nonidealities."""
    p = p or NauParams()
    o_in = nau_input(o, oiu_il, g, xp, theta_err)
    i_pd = photocurrent(np.abs(o_in) ** 2, p, rng)
    v_h = p.conditioning(p.g_tia * i_pd)
    branch = db_to_amplitude(p.l_mod) * math.sqrt(1.0 - p.alpha) * o_in
    return _modulator(branch, v_h, p) + branch * p.x_mod * np.exp(1j * p.theta_mod)


def plain_relu(o):
    """Keep amplitudes with positive real part, zero the rest (elementwise)."""
    o = np.asarray(o, dtype=complex)
    return np.where(o.real > 0, o, 0.0 + 0.0j)


def activation(handle, p: NauParams | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Elementwise activation function for a :class:`NauHandle`.

    The nonideal variant here only applies the unit's own nonidealities; OIU
    loss and crosstalk are already present in the fields produced by the mesh.
    """
    handle = NauHandle.parse(handle)
    p = p or NauParams()
    if handle is NauHandle.PLAIN_RELU:
        return plain_relu
    if handle is NauHandle.IDEAL_EQ6:
        return lambda o: ideal_nau(o, p)
    return lambda o: nonideal_nau(o, p)


@dataclass
class NauMseResult:
    powers_mw: np.ndarray
    mse: np.ndarray  # per input power, averaged over crosstalk phases

    @property
    def peak(self) -> float:
        return float(self.mse.max())

    @property
    def mean(self) -> float:
        return float(self.mse.mean())


def full_period_power_mw(p: NauParams | None = None) -> float:
    """Input power (mW) whose detector voltage equals ``2 v_pi``: one full modulator period."""
    p = p or NauParams()
    return 2.0 * p.v_pi / (p.g_tia * p.resp * p.alpha * _MW_TO_W)


def nau_mse(
    powers_mw,
    p: NauParams | None = None,
    oiu_il_db: float = 6.5,
    gain_db: float | None = None,
    xp_rel_db: float = -24.3,
    trials: int = 1000,
    rng=None,
) -> NauMseResult:
    """Mean-square deviation of the nonideal response from the ideal one.

    For each input power the victim is a real amplitude ``sqrt(P)``; the OIU
    crosstalk field has power ``xp_rel_db`` relative to it and a uniformly
    random phase ``theta_err`` (``trials`` draws, shared across powers).
    ``gain_db=None`` lets the gain exactly compensate the OIU loss.
    """
    p = p or NauParams()
    if gain_db is None:
        gain_db = oiu_il_db
    rng = make_rng(rng)
    powers = np.asarray(powers_mw, dtype=float)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=trials)
    o = np.sqrt(powers)[:, None] * np.ones((1, trials))
    ref = ideal_nau(o, p)
    xp = o * db_to_amplitude(-xp_rel_db) if math.isfinite(xp_rel_db) else 0.0
    out = nonideal_nau(o, p, db_to_power(-oiu_il_db), db_to_power(gain_db), xp, theta[None, :], rng)
    return NauMseResult(powers, np.mean(np.abs(out - ref) ** 2, axis=1))
