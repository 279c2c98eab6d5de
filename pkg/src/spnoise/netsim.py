"""Layer- and network-level propagation with insertion loss and coherent crosstalk.

A layer is ``W = U diag(sigma) V^H`` realised as two MZI meshes around an
attenuator stage, followed by an optical gain unit (OGU) and the insertion
loss of the activation unit (NAU). Crosstalk bookkeeping follows a ledger:
every MZI leaks a small field at its outputs, each leak is carried through
the (lossy) remainder of the network, and all leaks are summed coherently
per output.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from spnoise.core import NEG_INF_DBM, db_to_amplitude, make_rng
from spnoise.device import (
    LEAK_AMPLITUDES,
    TWO_PI,
    CrosstalkModel,
    LossModel,
    leak_amplitude,
    lossy_mzi_batch,
    sample_crosstalk,
)
from spnoise.mesh import MeshKind, PhaseProgram, SvdProgram

CSV_COLUMNS = ("config", "N", "M", "output_id", "trial", "il_db", "xp_dbm")


@dataclass(frozen=True)
class NoiseSpec:
    """Which impairments are active and how crosstalk phases are drawn.

    ``phase_mode="random"`` draws an independent uniform leak phase per MZI;
    ``"fixed"`` uses ``fixed_phase`` everywhere (used by oracle checks).
    ``leak_amplitude`` picks how the crosstalk fraction scales the leaked
    field during propagation (``"power"``: sqrt(X), ``"field"``: X).
    """

    loss: LossModel = field(default_factory=LossModel)
    crosstalk: CrosstalkModel = field(default_factory=CrosstalkModel)
    seed: int | None = 0
    phase_mode: str = "random"
    fixed_phase: float = 0.0
    leak_amplitude: str = "power"

    def __post_init__(self):
        if self.phase_mode not in ("random", "fixed"):
            raise ValueError(f"phase_mode must be 'random' or 'fixed', got {self.phase_mode!r}")
        if self.leak_amplitude not in LEAK_AMPLITUDES:
            raise ValueError(f"leak_amplitude must be one of {LEAK_AMPLITUDES}")
        if not math.isfinite(self.fixed_phase):
            raise ValueError("fixed_phase must be finite")

    @classmethod
    def noiseless(cls, **kw) -> "NoiseSpec":
        return cls(loss=LossModel.lossless(), crosstalk=CrosstalkModel.disabled(), **kw)

    @classmethod
    def loss_only(cls, loss: LossModel | None = None, **kw) -> "NoiseSpec":
        return cls(loss=loss or LossModel(), crosstalk=CrosstalkModel.disabled(), **kw)

    @classmethod
    def crosstalk_only(cls, crosstalk: CrosstalkModel | None = None, **kw) -> "NoiseSpec":
        return cls(loss=LossModel.lossless(), crosstalk=crosstalk or CrosstalkModel(), **kw)

    def rng(self) -> np.random.Generator:
        return make_rng(self.seed)

    @property
    def has_crosstalk(self) -> bool:
        return self.crosstalk.enabled


@dataclass(frozen=True)
class OguSpec:
    """Optical gain unit. Unity mode ignores ``gain_db``."""

    gain_db: float = 17.0
    mode: str = "unity"

    def __post_init__(self):
        if self.mode not in ("unity", "fixed"):
            raise ValueError(f"OGU mode must be 'unity' or 'fixed', got {self.mode!r}")
        if not math.isfinite(self.gain_db) or (self.mode == "fixed" and self.gain_db < 0):
            raise ValueError(f"OGU gain must be a finite, non-negative dB value, got {self.gain_db}")

    @classmethod
    def fixed(cls, gain_db: float = 17.0) -> "OguSpec":
        return cls(gain_db=gain_db, mode="fixed")

    @property
    def effective_db(self) -> float:
        return self.gain_db if self.mode == "fixed" else 0.0


@dataclass(frozen=True)
class LayerSpec:
    svd: SvdProgram
    ogu: OguSpec = field(default_factory=OguSpec)
    nau_loss: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.nau_loss <= 1.0:
            raise ValueError(f"NAU insertion loss must lie in [0, 1] dB, got {self.nau_loss}")

    @property
    def n(self) -> int:
        return self.svd.n

    @property
    def kind(self) -> MeshKind:
        return self.svd.kind

    def sigma_stage(self) -> tuple[np.ndarray, float]:
        """Attenuator amplitudes (all <= 1) and the gain (dB) folded into the OGU.

        Singular values above one cannot be realised passively; they are
        rescaled by the largest one and the difference is handed to the OGU.
        """
        s = np.asarray(self.svd.sigma, dtype=float)
        top = float(s.max()) if s.size else 0.0
        if top > 1.0:
            return s / top, 20.0 * math.log10(top)
        return s, 0.0

    def output_amplitude(self) -> float:
        """Scalar field factor of the OGU (including folded sigma gain) and NAU loss."""
        _, fold_db = self.sigma_stage()
        return db_to_amplitude(self.nau_loss) * 10.0 ** ((self.ogu.effective_db + fold_db) / 20.0)


@dataclass
class OutputNoiseMap:
    il_db: np.ndarray
    xp_dbm: np.ndarray

    def __post_init__(self):
        self.il_db = np.asarray(self.il_db, dtype=float)
        self.xp_dbm = np.asarray(self.xp_dbm, dtype=float)
        if self.il_db.shape != self.xp_dbm.shape:
            raise ValueError("il_db and xp_dbm must have one entry per output")

    def rows(self, config: str, n: int, m: int, trial: int) -> list[dict]:
        return [
            {"config": config, "N": n, "M": m, "output_id": y, "trial": trial,
             "il_db": float(il), "xp_dbm": float(xp)}
            for y, (il, xp) in enumerate(zip(self.il_db, self.xp_dbm))
        ]


def write_noise_csv(path, rows: Iterable[dict]) -> None:
    """Write OutputNoiseMap rows (see :meth:`OutputNoiseMap.rows`) as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# --- per-mesh realisations ------------------------------------------------------

@dataclass
class _MeshDraw:
    """One noise realisation of a mesh: lossy matrices, crosstalk fractions, leak phases."""

    prog: PhaseProgram
    lossy: np.ndarray
    x: np.ndarray
    rho: np.ndarray

    @property
    def victim(self) -> np.ndarray:
        """Main-path matrices, each scaled by (1 - X)."""
        return (1.0 - self.x)[:, None, None] * self.lossy

    def noisy(self, amplitude: str) -> np.ndarray:
        leak = (leak_amplitude(self.x, amplitude) * np.exp(1j * self.rho))[:, None, None]
        return self.victim + leak * self.lossy[:, ::-1, :]


def _draw_mesh(prog: PhaseProgram, noise: NoiseSpec, rng: np.random.Generator) -> _MeshDraw:
    lossy = lossy_mzi_batch(prog.thetas, prog.phis, noise.loss)
    k = len(prog.placements)
    if noise.has_crosstalk:
        x = np.asarray(sample_crosstalk(prog.thetas, noise.crosstalk, rng), dtype=float).reshape(k)
        if noise.phase_mode == "random":
            rho = rng.uniform(0.0, TWO_PI, size=k)
        else:
            rho = np.full(k, float(noise.fixed_phase))
    else:
        x = np.zeros(k)
        rho = np.zeros(k)
    return _MeshDraw(prog, lossy, x, rho)


def _mesh_matrix(prog: PhaseProgram, mats: np.ndarray) -> np.ndarray:
    """Full-width transfer matrix of a mesh given its per-MZI matrices."""
    t = np.eye(prog.width, dtype=complex)
    for k, m in enumerate(prog.ports):
        t[m : m + 2] = mats[k] @ t[m : m + 2]
    return prog.diag[:, None] * t


def _sandwich(layer: LayerSpec, u_full: np.ndarray, v_full: np.ndarray) -> np.ndarray:
    """Logical n x n matrix ``amp * U diag(att) V^H`` from full-width mesh matrices."""
    att, _ = layer.sigma_stage()
    lu = layer.svd.u_prog.logical_ports
    lv = layer.svd.v_prog.logical_ports
    return layer.output_amplitude() * (u_full[lu, lu] * att[None, :]) @ v_full[lv, lv]


@dataclass
class _LayerDraw:
    layer: LayerSpec
    v: _MeshDraw
    u: _MeshDraw

    def lossy_matrix(self) -> np.ndarray:
        """Crosstalk-free lossy matrix (used for insertion loss)."""
        return _sandwich(self.layer, _mesh_matrix(self.u.prog, self.u.lossy), _mesh_matrix(self.v.prog, self.v.lossy))

    def victim_matrix(self) -> np.ndarray:
        return _sandwich(self.layer, _mesh_matrix(self.u.prog, self.u.victim), _mesh_matrix(self.v.prog, self.v.victim))

    def noisy_matrix(self, amplitude: str) -> np.ndarray:
        return _sandwich(
            self.layer,
            _mesh_matrix(self.u.prog, self.u.noisy(amplitude)),
            _mesh_matrix(self.v.prog, self.v.noisy(amplitude)),
        )

    def leak_field(self, port_power_mw: float) -> np.ndarray:
        """Coherent sum at the layer outputs of every MZI leak in this layer.

        Each MZI injects a field of power ``port_power_mw * X`` with its leak
        phase at both of its outputs; the leak then follows the victim path.
        """
        layer = self.layer
        att, _ = layer.sigma_stage()
        amp = layer.output_amplitude()
        uprog, vprog = self.u.prog, self.v.prog
        lu, lv = uprog.logical_ports, vprog.logical_ports
        u_full = _mesh_matrix(uprog, self.u.victim)
        # Map from V-mesh full-width outputs to layer outputs.
        left_v = np.zeros((layer.n, vprog.width), dtype=complex)
        left_v[:, lv] = amp * u_full[lu, lu] * att[None, :]
        left_u = np.zeros((layer.n, uprog.width), dtype=complex)
        left_u[:, lu] = amp * np.eye(layer.n)
        return _ledger(vprog, self.v, left_v, port_power_mw) + _ledger(uprog, self.u, left_u, port_power_mw)


def _ledger(prog: PhaseProgram, draw: _MeshDraw, left: np.ndarray, port_power_mw: float) -> np.ndarray:
    """Sum of leak fields of one mesh seen through ``left`` (outputs x mesh width).

    Walks the columns backwards keeping ``acc`` = map from the outputs of the
    current column to the final outputs.
    """
    acc = left * prog.diag[None, :]
    out = np.zeros(left.shape[0], dtype=complex)
    if not np.any(draw.x):
        return out
    a = np.sqrt(port_power_mw * draw.x) * np.exp(1j * draw.rho)
    victim = draw.victim
    cols = prog.columns
    ports = prog.ports
    for c in range(prog.n_columns - 1, -1, -1):
        idx = np.flatnonzero(cols == c)
        m = ports[idx]
        out += (acc[:, m] + acc[:, m + 1]) @ a[idx]
        for k, p in zip(idx, m):
            acc[:, p : p + 2] = acc[:, p : p + 2] @ victim[k]
    return out


def _draw_layer(layer: LayerSpec, noise: NoiseSpec, rng: np.random.Generator) -> _LayerDraw:
    v = _draw_mesh(layer.svd.v_prog, noise, rng)
    u = _draw_mesh(layer.svd.u_prog, noise, rng)
    return _LayerDraw(layer, v, u)


def _check_chain(layers: Sequence[LayerSpec]) -> None:
    if not layers:
        raise ValueError("at least one layer is required")
    for a, b in zip(layers, layers[1:]):
        if a.n != b.n:
            raise ValueError(f"layer widths {a.n} and {b.n} are not compatible")


# --- public operations ------------------------------------------------------------

def layer_matrix(layer: LayerSpec, noise: NoiseSpec | None = None, rng=None) -> np.ndarray:
    """One realisation of the layer's n x n field transfer matrix.

    ``noise=None`` gives the ideal (lossless, crosstalk-free) matrix including
    OGU gain and NAU loss.
    """
    if noise is None:
        noise = NoiseSpec.noiseless()
    rng = noise.rng() if rng is None else make_rng(rng)
    return _draw_layer(layer, noise, rng).noisy_matrix(noise.leak_amplitude)


def propagate(field_in, layer: LayerSpec, noise: NoiseSpec, rng=None) -> np.ndarray:
    """Push a field (shape ``(n,)``) or a batch of fields (``(n, B)``) through a layer.

    One noise realisation is drawn per call and shared by the whole batch.
    Without ``rng`` the generator is seeded from ``noise.seed``.
    """
    x = np.asarray(field_in, dtype=complex)
    if x.shape[0] != layer.n:
        raise ValueError(f"field width {x.shape[0]} does not match layer width {layer.n}")
    return layer_matrix(layer, noise, rng) @ x


def _row_power(t: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(t) ** 2, axis=1)


def _il_from(lossy: np.ndarray, ideal: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return -10.0 * np.log10(_row_power(lossy) / _row_power(ideal))


def _ideal_chain(layers: Sequence[LayerSpec]) -> np.ndarray:
    from spnoise.mesh import svd_matrix

    t = np.eye(layers[0].n, dtype=complex)
    for layer in layers:
        t = svd_matrix(layer.svd) @ t
    return t


def insertion_loss_map(layer: LayerSpec, loss: LossModel) -> np.ndarray:
    """Per-output insertion loss (dB) of a layer under uniform-power excitation.

    Compares row powers of the lossy and ideal ``W``; OGU gain lowers and NAU
    loss raises the result. Crosstalk is not included.
    """
    return network_insertion_loss([layer], loss)


def network_insertion_loss(layers: Sequence[LayerSpec], loss: LossModel) -> np.ndarray:
    """Insertion loss per network output for a chain of layers (linear part only)."""
    _check_chain(layers)
    noise = NoiseSpec.loss_only(loss)
    rng = make_rng(0)  # no random draws happen without crosstalk
    t = np.eye(layers[0].n, dtype=complex)
    for layer in layers:
        t = _draw_layer(layer, noise, rng).lossy_matrix() @ t
    return _il_from(t, _ideal_chain(layers))


def _per_port_mw(p_in_dbm: float, n: int) -> float:
    return 10.0 ** (p_in_dbm / 10.0) / n


def _to_dbm(field_out: np.ndarray) -> np.ndarray:
    p = np.abs(field_out) ** 2
    with np.errstate(divide="ignore"):
        return np.where(p > 0, 10.0 * np.log10(np.where(p > 0, p, 1.0)), NEG_INF_DBM)


def crosstalk_power_map(layer: LayerSpec, noise: NoiseSpec, p_in_dbm: float = 0.0, rng=None) -> np.ndarray:
    """Per-output coherent crosstalk power (dBm) of one layer.

    ``p_in_dbm`` is the total optical power launched into the layer, split
    evenly over its n input ports. Disabled crosstalk gives -inf everywhere.
    """
    return network_noise_map([layer], noise, p_in_dbm, rng).xp_dbm


def network_noise_map(
    layers: Sequence[LayerSpec], noise: NoiseSpec, p_in_dbm: float = 0.0, rng=None
) -> OutputNoiseMap:
    """Insertion loss and crosstalk power at the outputs of a chain of layers.

    Every layer draws one noise realisation. Leaks created in layer ``l`` see
    the victim paths of all later layers, including their OGU gains. Every
    MZI leaks relative to the same per-port launch power.
    """
    _check_chain(layers)
    rng = noise.rng() if rng is None else make_rng(rng)
    n = layers[0].n
    port_mw = _per_port_mw(p_in_dbm, n)
    draws = [_draw_layer(layer, noise, rng) for layer in layers]
    victims = [d.victim_matrix() for d in draws]

    total = np.eye(n, dtype=complex)
    for d in draws:
        total = d.lossy_matrix() @ total
    il = _il_from(total, _ideal_chain(layers))

    leak = np.zeros(n, dtype=complex)
    if noise.has_crosstalk:
        for d, t in zip(draws, victims):
            leak = t @ leak + d.leak_field(port_mw)
        xp = _to_dbm(leak)
    else:
        xp = np.full(n, NEG_INF_DBM)
    return OutputNoiseMap(il, xp)


def run_network(
    inputs,
    layers: Sequence[LayerSpec],
    noise: NoiseSpec,
    activation: Callable[[np.ndarray], np.ndarray] | None = None,
    rng=None,
    noisy_layers: Sequence[bool] | None = None,
    final_activation: bool = False,
) -> np.ndarray:
    """Run fields through ``layers`` with ``activation`` between consecutive layers.

    ``noisy_layers`` toggles noise per layer (default: all noisy). Inputs may
    be a single field ``(n,)`` or a batch ``(n, B)``; one noise realisation
    per layer is shared by the batch.
    """
    _check_chain(layers)
    rng = noise.rng() if rng is None else make_rng(rng)
    if noisy_layers is None:
        noisy_layers = [True] * len(layers)
    if len(noisy_layers) != len(layers):
        raise ValueError("noisy_layers needs one flag per layer")
    x = np.asarray(inputs, dtype=complex)
    if x.shape[0] != layers[0].n:
        raise ValueError(f"input width {x.shape[0]} does not match first layer width {layers[0].n}")
    quiet = NoiseSpec.noiseless()
    for i, (layer, noisy) in enumerate(zip(layers, noisy_layers)):
        x = layer_matrix(layer, noise if noisy else quiet, rng) @ x
        last = i == len(layers) - 1
        if activation is not None and (not last or final_activation):
            x = activation(x)
    return x
