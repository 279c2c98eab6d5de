"""2x2 MZI transfer matrices: ideal, loss-aware and crosstalk-perturbed.

Port convention: index 0 is the upper port (I1/O1), index 1 the lower port.
Both phase shifters sit on the upper arm; ``phi`` acts on the upper input
before the first coupler and ``theta`` on the upper arm between couplers.
theta = 0 is the Cross state, theta = pi the Bar state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from spnoise.core import db_to_amplitude, make_rng

TWO_PI = 2.0 * math.pi
_SWAP = np.array([[0, 1], [1, 0]], dtype=complex)


@dataclass(frozen=True)
class PhasePair:
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi) or not math.isfinite(self.theta):
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")
        if not (0.0 <= self.phi <= TWO_PI) or not math.isfinite(self.phi):
            raise ValueError(f"phi must lie in [0, 2pi], got {self.phi}")


@dataclass(frozen=True)
class LossModel:
    """Device loss parameters. Defaults are the nominal silicon values.

    l_dc and l_m are per-pass losses in dB, l_p is in dB/cm and l_mzi in cm.
    kappa1/kappa2 are the power cross-coupling ratios of the two couplers.
    """

    l_dc: float = 0.1
    l_m: float = 0.2
    l_p: float = 2.0
    l_mzi: float = 0.03
    kappa1: float = 0.5
    kappa2: float = 0.5

    def __post_init__(self):
        for name in ("l_dc", "l_m", "l_p", "l_mzi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("kappa1", "kappa2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def lossless(cls) -> "LossModel":
        return cls(l_dc=0.0, l_m=0.0, l_p=0.0, l_mzi=0.0)

    @property
    def propagation_db(self) -> float:
        return self.l_p * self.l_mzi

    @property
    def is_lossless(self) -> bool:
        return self.l_dc == 0 and self.l_m == 0 and self.propagation_db == 0

    def scaled(self, **overrides) -> "LossModel":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(overrides)
        return LossModel(**fields)


@dataclass(frozen=True)
class CrosstalkModel:
    """Phase-dependent coherent crosstalk coefficient.

    The mean is interpolated linearly in dB between the Cross-state value
    (theta = 0) and the Bar-state value (theta = pi). The Gaussian spread is
    ``sigma_frac`` times the mean, taken on the linear power fraction when
    ``sigma_domain == "linear"`` or on the dB value when ``"db"``.
    """

    x_bar: float = -25.0
    x_cross: float = -18.0
    sigma_frac: float = 0.05
    enabled: bool = True
    sigma_domain: str = "linear"

    def __post_init__(self):
        if self.x_bar > self.x_cross:
            raise ValueError("expected x_bar <= x_cross")
        if self.sigma_frac < 0:
            raise ValueError("sigma_frac must be >= 0")
        if self.sigma_domain not in ("linear", "db"):
            raise ValueError(f"unknown sigma_domain {self.sigma_domain!r}")

    @classmethod
    def disabled(cls) -> "CrosstalkModel":
        return cls(enabled=False)


def _check_theta(theta) -> None:
    theta = np.asarray(theta)
    if np.any(theta < 0) or np.any(theta > math.pi):
        raise ValueError("theta must lie in [0, pi]")


def ideal_mzi(phases: PhasePair) -> np.ndarray:
    """Lossless MZI transfer matrix T_DC2 . T_theta . T_DC1 . T_phi."""
    et = np.exp(1j * phases.theta)
    ep = np.exp(1j * phases.phi)
    return np.array(
        [
            [ep * (et - 1) / 2, 1j * (et + 1) / 2],
            [1j * ep * (et + 1) / 2, -(et - 1) / 2],
        ],
        dtype=complex,
    )


def _coupler(kappa: float, amp: float) -> np.ndarray:
    t = math.sqrt(1.0 - kappa)
    k = math.sqrt(kappa)
    return amp * np.array([[t, 1j * k], [1j * k, t]], dtype=complex)


def lossy_mzi(phases: PhasePair, loss: LossModel) -> np.ndarray:
    """Loss-aware MZI matrix with every dB loss applied as a field factor."""
    a_dc = db_to_amplitude(loss.l_dc)
    a_m = db_to_amplitude(loss.l_m)
    a_p = db_to_amplitude(loss.propagation_db)
    t_dc1 = _coupler(loss.kappa1, a_dc)
    t_dc2 = _coupler(loss.kappa2, a_dc)
    t_theta = np.diag([a_p * a_m * np.exp(1j * phases.theta), a_p]).astype(complex)
    t_phi = np.diag([a_m * np.exp(1j * phases.phi), 1.0]).astype(complex)
    return t_dc2 @ t_theta @ t_dc1 @ t_phi


LEAK_AMPLITUDES = ("field", "power")


def leak_amplitude(x, mode: str = "field"):
    """Amplitude of the leak term for crosstalk fraction ``x``.

    ``"field"`` scales the swapped field by ``x`` itself; ``"power"`` scales it
    by ``sqrt(x)`` so the leaked *power* is the fraction ``x``.
    """
    if mode == "field":
        return x
    if mode == "power":
        return np.sqrt(x)
    raise ValueError(f"leak amplitude mode must be one of {LEAK_AMPLITUDES}, got {mode!r}")


def mix_crosstalk(t: np.ndarray, x: float, leak_phase: float = 0.0, amplitude: str = "field") -> np.ndarray:
    """Combine a 2x2 matrix with its row-swapped copy: (1-x) T + a e^{i rho} P T.

    ``a`` is ``x`` (``amplitude="field"``) or ``sqrt(x)`` (``"power"``).
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"crosstalk fraction must lie in [0, 1], got {x}")
    leak = leak_amplitude(x, amplitude) * np.exp(1j * leak_phase)
    return (1.0 - x) * t + leak * (_SWAP @ t)


def noisy_mzi(
    phases: PhasePair, loss: LossModel, x: float, leak_phase: float = 0.0, amplitude: str = "field"
) -> np.ndarray:
    """Crosstalk-perturbed lossy MZI.

    The main term keeps ``(1 - x)`` of every coefficient and the leak term adds
    ``x`` times the coefficients of the opposite output row. ``leak_phase``
    rotates the leak term; 0 reproduces the plain form.
    """
    return mix_crosstalk(lossy_mzi(phases, loss), x, leak_phase, amplitude)


def crosstalk_mean_db(theta, model: CrosstalkModel):
    """Mean crosstalk coefficient in dB at internal phase ``theta``."""
    _check_theta(theta)
    return (model.x_bar - model.x_cross) / math.pi * np.asarray(theta, dtype=float) + model.x_cross


def sample_crosstalk(theta, model: CrosstalkModel, rng=None):
    """Draw the linear crosstalk power fraction X for one or many MZIs.

    Accepts a scalar theta or an array; returns the same shape. Disabled
    models return exactly 0 without touching the generator.
    """
    theta_arr = np.asarray(theta, dtype=float)
    _check_theta(theta_arr)
    if not model.enabled:
        out = np.zeros_like(theta_arr)
        return out if out.ndim else 0.0
    mu_db = crosstalk_mean_db(theta_arr, model)
    if model.sigma_frac == 0:
        x = 10.0 ** (mu_db / 10.0)
    else:
        rng = make_rng(rng)
        z = rng.standard_normal(theta_arr.shape)
        if model.sigma_domain == "db":
            x = 10.0 ** ((mu_db + model.sigma_frac * np.abs(mu_db) * z) / 10.0)
        else:
            mu = 10.0 ** (mu_db / 10.0)
            x = mu * (1.0 + model.sigma_frac * z)
    x = np.clip(x, 0.0, 1.0)
    return x if x.ndim else float(x)


def port_insertion_loss(phases: PhasePair, loss: LossModel, input_port: int | None = None) -> np.ndarray:
    """Per-output insertion loss (dB) of one MZI.

    With ``input_port=None`` both inputs are driven with equal power and the
    output power is compared against the lossless device; otherwise only the
    given input is driven.
    """
    t = lossy_mzi(phases, loss)
    t0 = ideal_mzi(phases)
    if input_port is None:
        num = np.sum(np.abs(t) ** 2, axis=1)
        den = np.sum(np.abs(t0) ** 2, axis=1)
    else:
        num = np.abs(t[:, input_port]) ** 2
        den = np.abs(t0[:, input_port]) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return -10.0 * np.log10(num / den)


def crosstalk_power_dbm(theta, model: CrosstalkModel, rng=None, p_in_dbm: float = 0.0):
    """Power (dBm) leaked by one MZI for a ``p_in_dbm`` input signal."""
    x = np.asarray(sample_crosstalk(theta, model, rng))
    with np.errstate(divide="ignore"):
        out = p_in_dbm + 10.0 * np.log10(x)
    return out if out.ndim else float(out)


def lossy_mzi_batch(thetas, phis, loss: LossModel) -> np.ndarray:
    """Stack of lossy MZI matrices, shape ``(K, 2, 2)``."""
    thetas = np.asarray(thetas, dtype=float)
    phis = np.asarray(phis, dtype=float)
    a_dc = db_to_amplitude(loss.l_dc)
    a_m = db_to_amplitude(loss.l_m)
    a_p = db_to_amplitude(loss.propagation_db)
    t1, k1 = math.sqrt(1 - loss.kappa1), math.sqrt(loss.kappa1)
    t2, k2 = math.sqrt(1 - loss.kappa2), math.sqrt(loss.kappa2)
    upper = a_p * a_m * np.exp(1j * thetas)  # theta arm
    lower = a_p
    ep = a_m * np.exp(1j * phis)
    g = a_dc * a_dc
    out = np.empty(thetas.shape + (2, 2), dtype=complex)
    # T_DC2 . diag(upper, lower) . T_DC1, then the phi column factor
    out[..., 0, 0] = g * (t2 * upper * t1 - k2 * lower * k1) * ep
    out[..., 0, 1] = g * 1j * (t2 * upper * k1 + k2 * lower * t1)
    out[..., 1, 0] = g * 1j * (k2 * upper * t1 + t2 * lower * k1) * ep
    out[..., 1, 1] = g * (t2 * lower * t1 - k2 * upper * k1)
    return out


def ideal_mzi_batch(thetas, phis) -> np.ndarray:
    return lossy_mzi_batch(thetas, phis, LossModel.lossless())
