"""Unit conventions, unitarity checks and seeded random streams.

Field amplitudes are in sqrt(mW): ``abs(a)**2`` is optical power in mW and
0 dBm is 1 mW. Losses are positive attenuations in dB and enter transfer
matrices as amplitude factors ``10**(-dB/20)``.
"""

from __future__ import annotations

import numpy as np

# Sentinel for zero optical power. Never NaN.
NEG_INF_DBM = float("-inf")


def db_to_amplitude(loss_db: float) -> float:
    """Amplitude factor that attenuates power by ``loss_db`` dB."""
    if loss_db < 0:
        raise ValueError(f"loss must be a non-negative attenuation, got {loss_db} dB")
    return 10.0 ** (-loss_db / 20.0)


def db_to_power(value_db):
    """Linear power ratio of a dB value (gain positive)."""
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def power_to_db(ratio):
    """dB value of a linear power ratio; zero maps to -inf."""
    ratio = np.asarray(ratio, dtype=float)
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(ratio)
    return out if out.ndim else float(out)


def amplitude_to_db(amp):
    """Loss in dB (positive) of a field amplitude factor."""
    return -power_to_db(np.abs(amp) ** 2)


def power_dbm(field, port: int) -> float:
    """Optical power at ``port`` in dBm; ``NEG_INF_DBM`` for a dark port."""
    field = np.asarray(field)
    if not 0 <= port < field.shape[0]:
        raise IndexError(f"port {port} out of range for a {field.shape[0]}-port field")
    p = float(np.abs(field[port]) ** 2)
    if p == 0.0:
        return NEG_INF_DBM
    return 10.0 * np.log10(p)


def unitarity_error(t: np.ndarray) -> float:
    """Max-norm of ``T^H T - I``."""
    t = np.asarray(t)
    return float(np.max(np.abs(t.conj().T @ t - np.eye(t.shape[1]))))


def is_unitary(t: np.ndarray, tol: float = 1e-8) -> bool:
    t = np.asarray(t)
    return t.ndim == 2 and t.shape[0] == t.shape[1] and unitarity_error(t) < tol


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator. Accepts an int, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Independent per-trial substreams derived from one master seed.

    Trial ``k`` always receives the same substream regardless of how trials
    are later distributed over workers.
    """
    return np.random.SeedSequence(seed).spawn(count)


def haar_unitary(n: int, rng) -> np.ndarray:
    """Haar-distributed ``n x n`` unitary (QR of a complex Ginibre matrix)."""
    rng = make_rng(rng)
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))
