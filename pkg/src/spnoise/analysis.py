"""Monte-Carlo statistics, RVD, laser power penalty and static tuning power."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from spnoise.core import haar_unitary, make_rng, spawn_seeds
from spnoise.device import LossModel
from spnoise.mesh import MeshKind, PhaseProgram, SvdProgram, map_weights
from spnoise.netsim import LayerSpec, NoiseSpec, OguSpec, OutputNoiseMap, network_noise_map

SCHEMA_VERSION = 1
S_PD_DBM = -11.7
HEATER_OHMS = 507.0


# --- RVD -------------------------------------------------------------------------

def rvd(t, t_tilde) -> float:
    """Relative variation distance ``sum|T - T~| / sum|T|`` (entrywise moduli)."""
    t = np.asarray(t, dtype=complex)
    t_tilde = np.asarray(t_tilde, dtype=complex)
    if t.shape != t_tilde.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {t_tilde.shape}")
    den = float(np.sum(np.abs(t)))
    if den == 0.0:
        raise ValueError("reference matrix is all zeros")
    return float(np.sum(np.abs(t - t_tilde)) / den)


# --- power penalty -----------------------------------------------------------------

@dataclass
class PenaltyReport:
    """Required laser power per output (dBm; ``inf`` where the bound diverges)."""

    p_lsr_dbm: np.ndarray
    diverged: np.ndarray
    s_pd: float = S_PD_DBM
    mode: str = "linear"

    @property
    def any_diverged(self) -> bool:
        return bool(np.any(self.diverged))

    @property
    def average(self) -> float:
        return float(np.mean(self.p_lsr_dbm))

    @property
    def worst(self) -> float:
        return float(np.max(self.p_lsr_dbm))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "s_pd_dbm": self.s_pd,
            "p_lsr_dbm": [_json_float(v) for v in self.p_lsr_dbm],
            "diverged": [bool(v) for v in self.diverged],
            "average_dbm": _json_float(self.average),
            "worst_dbm": _json_float(self.worst),
        }


def _json_float(v: float):
    v = float(v)
    if math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


def power_penalty(il_db, xp_dbm, s_pd: float = S_PD_DBM, mode: str = "linear", max_iter: int = 100) -> PenaltyReport:
    """Smallest laser power satisfying ``P >= s_pd + IL + XP(P)`` per output.

    ``mode="linear"``: crosstalk scales with the laser, ``XP(P) = XP_0 + P``
    with ``XP_0`` the 0 dBm reference value; the bound is iterated from
    ``s_pd + IL`` and flagged as diverged if it keeps growing.
    ``mode="reference"``: ``XP`` is held at its 0 dBm reference value, giving
    the closed form ``s_pd + IL + XP_0``.
    """
    il = np.atleast_1d(np.asarray(il_db, dtype=float))
    xp = np.atleast_1d(np.asarray(xp_dbm, dtype=float))
    if il.shape != xp.shape:
        raise ValueError("il_db and xp_dbm must have the same shape")
    if not np.all(np.isfinite(il)):
        raise ValueError("insertion loss must be finite")
    if mode not in ("linear", "reference"):
        raise ValueError(f"unknown penalty mode {mode!r}")
    if mode == "reference":
        p = s_pd + il + np.where(np.isfinite(xp), xp, 0.0)
        p = np.where(np.isneginf(xp), s_pd + il, p)
        return PenaltyReport(p, np.zeros(il.shape, dtype=bool), s_pd, mode)

    p = s_pd + il
    diverged = np.zeros(il.shape, dtype=bool)
    for y in range(il.size):
        if np.isneginf(xp[y]):
            continue
        cur = p[y]
        for _ in range(max_iter):
            nxt = max(cur, s_pd + il[y] + xp[y] + cur)
            if nxt - cur <= 1e-9:
                break
            cur = nxt
        else:
            diverged[y] = True
            cur = math.inf
        p[y] = cur
    return PenaltyReport(p, diverged, s_pd, mode)


# --- sweeps --------------------------------------------------------------------------

@dataclass
class SweepReport:
    kind: str
    n: int
    m: int
    trials: int
    xp_trials: int
    seed: int
    weights: str
    mean_il_db: np.ndarray  # per output
    worst_il_db: np.ndarray
    mean_xp_dbm: np.ndarray
    worst_xp_dbm: np.ndarray
    maps: list = field(default_factory=list, repr=False)  # per-trial OutputNoiseMaps

    @property
    def mean_il(self) -> float:
        return float(np.mean(self.mean_il_db))

    @property
    def worst_il(self) -> float:
        return float(np.max(self.worst_il_db))

    @property
    def mean_xp(self) -> float:
        return float(np.mean(self.mean_xp_dbm))

    @property
    def worst_xp(self) -> float:
        return float(np.max(self.worst_xp_dbm))

    def penalty(self, s_pd: float = S_PD_DBM, mode: str = "linear") -> tuple[PenaltyReport, PenaltyReport]:
        """(average-case, worst-case) penalties from the per-output statistics."""
        avg = power_penalty(self.mean_il_db, self.mean_xp_dbm, s_pd, mode)
        worst = power_penalty(self.worst_il_db, self.worst_xp_dbm, s_pd, mode)
        return avg, worst

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind, "N": self.n, "M": self.m,
            "trials": self.trials, "xp_trials": self.xp_trials,
            "seed": self.seed, "weights": self.weights,
            "mean_il_db": self.mean_il, "worst_il_db": self.worst_il,
            "mean_xp_dbm": _json_float(self.mean_xp), "worst_xp_dbm": _json_float(self.worst_xp),
            "per_output": [
                {"output_id": y, "mean_il_db": float(a), "worst_il_db": float(b),
                 "mean_xp_dbm": _json_float(c), "worst_xp_dbm": _json_float(d)}
                for y, (a, b, c, d) in enumerate(
                    zip(self.mean_il_db, self.worst_il_db, self.mean_xp_dbm, self.worst_xp_dbm))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def trial_rows(self) -> list[dict]:
        config = f"{self.kind}-N{self.n}-M{self.m}"
        rows = []
        for t, mp in enumerate(self.maps):
            rows.extend(mp.rows(config, self.n, self.m, t))
        return rows

    def to_csv(self) -> str:
        """Per-output statistics as CSV (schema version in the header comment)."""
        buf = io.StringIO()
        buf.write(f"# spnoise sweep schema v{SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "N", "M", "output_id", "mean_il_db", "worst_il_db", "mean_xp_dbm", "worst_xp_dbm"])
        for y in range(self.n):
            w.writerow([self.kind, self.n, self.m, y, repr(float(self.mean_il_db[y])),
                        repr(float(self.worst_il_db[y])), repr(float(self.mean_xp_dbm[y])),
                        repr(float(self.worst_xp_dbm[y]))])
        return buf.getvalue()


def random_weights(n: int, rng, weights: str = "haar") -> np.ndarray:
    """A random n x n weight matrix: Haar unitary or i.i.d. complex Gaussian."""
    if weights == "haar":
        return haar_unitary(n, rng)
    if weights == "gaussian":
        return (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    raise ValueError(f"weights must be 'haar' or 'gaussian', got {weights!r}")


def _sweep_trial(args) -> OutputNoiseMap:
    kind, n, m, noise, ogu, nau_loss, weights, p_in_dbm, seed = args
    rng = np.random.default_rng(seed)
    layers = [LayerSpec(map_weights(random_weights(n, rng, weights), kind), ogu, nau_loss) for _ in range(m)]
    return network_noise_map(layers, noise, p_in_dbm, rng)


def _run_parallel(fn: Callable, jobs: list, workers: int | None) -> list:
    if workers is None or workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def sweep(
    kind,
    n: int,
    m_layers: int = 1,
    trials: int = 100,
    noise: NoiseSpec | None = None,
    ogu: OguSpec | None = None,
    seed: int = 0,
    weights: str = "haar",
    workers: int | None = 1,
    xp_trials: int | None = None,
    p_in_dbm: float = 0.0,
    nau_loss: float = 0.0,
    keep_maps: bool = False,
) -> SweepReport:
    """Monte-Carlo insertion-loss and crosstalk statistics over random weights.

    Trial ``t`` uses its own child seed, so results do not depend on
    ``workers``. Insertion-loss statistics use the first ``trials`` trials and
    crosstalk statistics the first ``xp_trials`` (default: same count).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    xp_trials = trials if xp_trials is None else xp_trials
    if xp_trials < 1:
        raise ValueError("xp_trials must be >= 1")
    kind = MeshKind.parse(kind)
    noise = noise or NoiseSpec()
    ogu = ogu or OguSpec()
    total = max(trials, xp_trials)
    seeds = spawn_seeds(seed, total)
    jobs = [(kind, n, m_layers, noise, ogu, nau_loss, weights, p_in_dbm, s) for s in seeds]
    maps = _run_parallel(_sweep_trial, jobs, workers)
    il = np.array([mp.il_db for mp in maps[:trials]])
    xp = np.array([mp.xp_dbm for mp in maps[:xp_trials]])
    return SweepReport(
        kind=kind.value, n=n, m=m_layers, trials=trials, xp_trials=xp_trials, seed=seed, weights=weights,
        mean_il_db=il.mean(axis=0), worst_il_db=il.max(axis=0),
        mean_xp_dbm=xp.mean(axis=0), worst_xp_dbm=xp.max(axis=0),
        maps=maps if keep_maps else [],
    )


# --- RVD under noise ------------------------------------------------------------------

def _rvd_trial(args) -> float:
    from spnoise.netsim import layer_matrix
    from spnoise.mesh import svd_matrix

    kind, n, noise, weights, compensate, seed = args
    rng = np.random.default_rng(seed)
    layer = LayerSpec(map_weights(random_weights(n, rng, weights), kind))
    target = svd_matrix(layer.svd)
    realised = layer_matrix(layer, noise, rng)
    if compensate:
        realised = compensate_gain(target, realised)
    return rvd(target, realised)


def compensate_gain(target, realised) -> np.ndarray:
    """Scale ``realised`` by the real gain that restores the total power of ``target``."""
    norm = np.linalg.norm(realised)
    if norm == 0:
        return np.asarray(realised)
    return np.asarray(realised) * (np.linalg.norm(target) / norm)


def rvd_sweep(kind, n: int, trials: int = 100, noise: NoiseSpec | None = None, seed: int = 0,
              weights: str = "haar", workers: int | None = 1, compensate: bool = True) -> np.ndarray:
    """RVD between intended and noisy single-layer matrices, one value per trial.

    With ``compensate`` (default) a scalar gain first restores the realised
    matrix's total power, so the metric measures the distortion an amplifier
    cannot undo rather than the plain attenuation.
    """
    kind = MeshKind.parse(kind)
    noise = noise or NoiseSpec()
    jobs = [(kind, n, noise, weights, compensate, s) for s in spawn_seeds(seed, trials)]
    return np.array(_run_parallel(_rvd_trial, jobs, workers))


# --- static tuning power ------------------------------------------------------------------

def _voltage_fn(v_of_phase) -> Callable:
    if callable(v_of_phase):
        return v_of_phase
    coeffs = np.asarray(v_of_phase, dtype=float)
    return lambda phase: np.polynomial.polynomial.polyval(phase, coeffs)


def static_power(prog, v_of_phase, r_ohm: float = HEATER_OHMS) -> float:
    """Total heater power (W): ``sum V(theta)^2/R + V(phi)^2/R`` over all MZIs.

    ``v_of_phase`` is a callable radians -> volts or polynomial coefficients in
    ascending order. An SvdProgram sums both of its meshes.
    """
    if r_ohm <= 0:
        raise ValueError("heater resistance must be positive")
    if isinstance(prog, SvdProgram):
        return static_power(prog.u_prog, v_of_phase, r_ohm) + static_power(prog.v_prog, v_of_phase, r_ohm)
    if not isinstance(prog, PhaseProgram):
        raise TypeError("expected a PhaseProgram or SvdProgram")
    volt = _voltage_fn(v_of_phase)
    v_t = np.asarray(volt(prog.thetas), dtype=float)
    v_p = np.asarray(volt(prog.phis), dtype=float)
    return float(np.sum(v_t**2) / r_ohm + np.sum(v_p**2) / r_ohm)


# --- half-normal loss experiments ------------------------------------------------------------

# Expected device-level ranges (dB): DC loss, phase-shifter metal loss, propagation loss per MZI.
LOSS_RANGES = {"l_dc": (0.1, 0.4), "l_m": (0.1, 0.3), "l_prop": (0.03, 0.12)}


@dataclass(frozen=True)
class LossExperiment:
    name: str
    use_min_mean: bool

    def sample(self, count: int, rng=None, base: LossModel | None = None) -> list[LossModel]:
        """Draw ``count`` loss models: ``mu + |N(0, sigma)|`` with ``3 sigma = max``."""
        rng = make_rng(rng)
        base = base or LossModel()
        out = []
        draws = {k: np.abs(rng.standard_normal(count)) * hi / 3.0 + (lo if self.use_min_mean else 0.0)
                 for k, (lo, hi) in LOSS_RANGES.items()}
        for i in range(count):
            out.append(base.scaled(
                l_dc=float(draws["l_dc"][i]),
                l_m=float(draws["l_m"][i]),
                l_p=float(draws["l_prop"][i]) / base.l_mzi,
            ))
        return out


EXPT1 = LossExperiment("EXPT1", use_min_mean=True)
EXPT2 = LossExperiment("EXPT2", use_min_mean=False)


def report_json(obj: dict) -> str:
    """Stable JSON rendering used for every report file."""
    return json.dumps(obj, indent=2, sort_keys=True)
