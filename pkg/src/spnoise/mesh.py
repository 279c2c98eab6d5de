"""MZI mesh layouts, unitary decomposition and matrix reconstruction.

A unitary is written ``U = D . T_K ... T_1`` where ``T_1`` is the first MZI
the light meets and ``D`` a diagonal of unit-modulus phases on the outputs.
Placements are stored in traversal order and grouped into columns of
port-disjoint MZIs by greedy layering.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from spnoise.core import is_unitary, make_rng
from spnoise.device import (
    TWO_PI,
    CrosstalkModel,
    LossModel,
    PhasePair,
    leak_amplitude,
    lossy_mzi_batch,
    sample_crosstalk,
)

_UNITARY_TOL = 1e-8


class MeshKind(str, enum.Enum):
    RECK = "reck"
    CLEMENTS = "clements"
    DIAMOND = "diamond"

    @classmethod
    def parse(cls, value) -> "MeshKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown mesh kind {value!r}; expected one of {[k.value for k in cls]}") from None


def mzi_count(kind: MeshKind, n: int) -> int:
    kind = MeshKind.parse(kind)
    if kind is MeshKind.DIAMOND:
        return (n - 1) ** 2
    return n * (n - 1) // 2


def mesh_width(kind: MeshKind, n: int) -> int:
    return 2 * n - 2 if MeshKind.parse(kind) is MeshKind.DIAMOND and n > 2 else n


@dataclass(frozen=True)
class PlacedMzi:
    column: int
    m: int
    phases: PhasePair

    @property
    def n(self) -> int:
        return self.m + 1


@dataclass(frozen=True, eq=False)
class PhaseProgram:
    """Phase settings of one mesh, enough to rebuild its transfer matrix."""

    kind: MeshKind
    width: int
    logical_n: int
    placements: tuple[PlacedMzi, ...]
    diag: np.ndarray

    def __post_init__(self):
        expected = mzi_count(self.kind, self.logical_n)
        if len(self.placements) != expected:
            raise ValueError(f"{self.kind.value} mesh with n={self.logical_n} needs {expected} MZIs, got {len(self.placements)}")
        if self.width != mesh_width(self.kind, self.logical_n):
            raise ValueError("width does not match mesh kind")
        for p in self.placements:
            if not 0 <= p.m < self.width - 1:
                raise ValueError(f"MZI at port {p.m} lies outside a {self.width}-port mesh")
        diag = np.asarray(self.diag, dtype=complex)
        if diag.shape != (self.width,) or not np.allclose(np.abs(diag), 1.0, atol=1e-12, rtol=0):
            raise ValueError("diag must hold one unit-modulus entry per port")
        object.__setattr__(self, "diag", diag)

    def __eq__(self, other):
        if not isinstance(other, PhaseProgram):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.width == other.width
            and self.logical_n == other.logical_n
            and self.placements == other.placements
            and np.array_equal(self.diag, other.diag)
        )

    __hash__ = None

    @cached_property
    def thetas(self) -> np.ndarray:
        return np.array([p.phases.theta for p in self.placements])

    @cached_property
    def phis(self) -> np.ndarray:
        return np.array([p.phases.phi for p in self.placements])

    @cached_property
    def ports(self) -> np.ndarray:
        return np.array([p.m for p in self.placements], dtype=int)

    @cached_property
    def columns(self) -> np.ndarray:
        return np.array([p.column for p in self.placements], dtype=int)

    @property
    def n_columns(self) -> int:
        return int(self.columns.max()) + 1 if self.placements else 0

    @property
    def logical_ports(self) -> slice:
        return slice(self.width - self.logical_n, self.width)

    def with_phases(self, thetas, phis) -> "PhaseProgram":
        placements = tuple(
            PlacedMzi(p.column, p.m, PhasePair(float(t), float(f)))
            for p, t, f in zip(self.placements, thetas, phis)
        )
        return PhaseProgram(self.kind, self.width, self.logical_n, placements, self.diag)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "n": self.logical_n,
            "placements": [
                {"col": p.column, "m": p.m, "theta": p.phases.theta, "phi": p.phases.phi}
                for p in self.placements
            ],
            "diag": [{"re": float(d.real), "im": float(d.imag)} for d in self.diag],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseProgram":
        kind = MeshKind.parse(data["kind"])
        n = int(data["n"])
        placements = tuple(
            PlacedMzi(int(p["col"]), int(p["m"]), PhasePair(float(p["theta"]), float(p["phi"])))
            for p in data["placements"]
        )
        diag = np.array([complex(d["re"], d["im"]) for d in data["diag"]])
        return cls(kind, mesh_width(kind, n), n, placements, diag)

    @classmethod
    def from_json(cls, text: str) -> "PhaseProgram":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class SvdProgram:
    """``W = U diag(sigma) V^H`` with both unitaries programmed on meshes.

    ``v_prog`` implements V^H (it is traversed first).
    """

    u_prog: PhaseProgram
    sigma: np.ndarray
    v_prog: PhaseProgram

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if np.any(sigma < 0) or np.any(np.diff(sigma) > 0):
            raise ValueError("singular values must be non-negative and sorted descending")
        if sigma.shape != (self.u_prog.logical_n,) or self.v_prog.logical_n != self.u_prog.logical_n:
            raise ValueError("singular value count does not match mesh size")
        object.__setattr__(self, "sigma", sigma)

    @property
    def n(self) -> int:
        return self.u_prog.logical_n

    @property
    def kind(self) -> MeshKind:
        return self.u_prog.kind


# --- layout -----------------------------------------------------------------

def _layer_columns(ports: Sequence[int], width: int) -> list[int]:
    """Greedy layering: each MZI goes one column after the last use of its ports."""
    last = [-1] * width
    cols = []
    for m in ports:
        c = max(last[m], last[m + 1]) + 1
        last[m] = last[m + 1] = c
        cols.append(c)
    return cols


def _reck_ports(n: int) -> list[int]:
    ports = []
    for r in range(n - 1, 0, -1):
        ports.extend(range(r))
    return ports


def _clements_ports(n: int) -> tuple[list[int], list[int]]:
    """Ports nulled from the input side and from the output side."""
    right, left = [], []
    for i in range(n - 1):
        for j in range(i + 1):
            if i % 2 == 0:
                right.append(i - j)
            else:
                left.append(n - 2 - i + j)
    return right, left


def _diamond_extra(n: int) -> list[tuple[int, int]]:
    """(column, port) of the calibration MZIs that complete the diamond."""
    cells = []
    for c in range(2 * n - 3):
        k = min(c, 2 * n - 4 - c)
        for m in range(n - 2 - k, n - 1 + k, 2):
            if m < n - 2:
                cells.append((c, m))
    return cells


def _assemble(kind: MeshKind, n: int, ports: list[int], phases: list[PhasePair], diag) -> PhaseProgram:
    if kind is MeshKind.DIAMOND and n > 2:
        width = 2 * n - 2
        shift = n - 2
        ports = [m + shift for m in ports]
        cols = _layer_columns(ports, width)
        items = [(c, m, ph) for c, m, ph in zip(cols, ports, phases)]
        items += [(c, m, PhasePair(math.pi, 0.0)) for c, m in _diamond_extra(n)]
        # stable sort keeps the decomposition order within dependent chains
        items.sort(key=lambda it: it[0])
        placements = tuple(PlacedMzi(c, m, ph) for c, m, ph in items)
        full_diag = np.ones(width, dtype=complex)
        full_diag[shift:] = diag
        return PhaseProgram(kind, width, n, placements, full_diag)
    cols = _layer_columns(ports, n)
    order = sorted(range(len(ports)), key=lambda i: cols[i])
    placements = tuple(PlacedMzi(cols[i], ports[i], phases[i]) for i in order)
    return PhaseProgram(kind, n, n, placements, np.asarray(diag, dtype=complex))


def build_layout(kind, n: int) -> PhaseProgram:
    """Mesh geometry with every MZI at theta = phi = 0 and D = I."""
    kind = MeshKind.parse(kind)
    if n < 2:
        raise ValueError("a mesh needs at least 2 ports")
    if kind is MeshKind.CLEMENTS:
        right, left = _clements_ports(n)
        ports = right + left[::-1]
    else:
        ports = _reck_ports(n)
    zero = PhasePair(0.0, 0.0)
    return _assemble(kind, n, ports, [zero] * len(ports), np.ones(n, dtype=complex))


# --- decomposition ------------------------------------------------------------

def _wrap(phi: float) -> float:
    phi = math.fmod(phi, TWO_PI)
    if phi < 0:
        phi += TWO_PI
    return min(phi, TWO_PI)


def _mzi(theta: float, phi: float) -> np.ndarray:
    et = complex(math.cos(theta), math.sin(theta))
    ep = complex(math.cos(phi), math.sin(phi))
    return np.array([[ep * (et - 1) / 2, 1j * (et + 1) / 2], [1j * ep * (et + 1) / 2, -(et - 1) / 2]])


def _null_right(u: np.ndarray, r: int, m: int) -> tuple[float, float]:
    """Zero ``u[r, m]`` by right-multiplying columns (m, m+1) with T^H."""
    a, b = u[r, m], u[r, m + 1]
    if abs(a) == 0 and abs(b) == 0:
        theta, phi = math.pi, 0.0
    else:
        theta = 2.0 * math.atan2(abs(b), abs(a))
        phi = _wrap(np.angle(a) - np.angle(b) - math.pi)
    t = _mzi(theta, phi)
    u[:, m : m + 2] = u[:, m : m + 2] @ t.conj().T
    return theta, phi


def _null_left(u: np.ndarray, r: int, c: int) -> tuple[float, float]:
    """Zero ``u[r, c]`` by left-multiplying rows (r-1, r) with T."""
    a, b = u[r - 1, c], u[r, c]
    if abs(a) == 0 and abs(b) == 0:
        theta, phi = math.pi, 0.0
    else:
        theta = 2.0 * math.atan2(abs(a), abs(b))
        phi = _wrap(np.angle(b) - np.angle(a))
    t = _mzi(theta, phi)
    u[r - 1 : r + 1, :] = t @ u[r - 1 : r + 1, :]
    return theta, phi


def _decompose_reck(u: np.ndarray):
    n = u.shape[0]
    ports, phases = [], []
    for r in range(n - 1, 0, -1):
        for j in range(r):
            theta, phi = _null_right(u, r, j)
            ports.append(j)
            phases.append(PhasePair(theta, phi))
    return ports, phases, np.diag(u).copy()


def _decompose_clements(u: np.ndarray):
    n = u.shape[0]
    right, left = [], []
    for i in range(n - 1):
        for j in range(i + 1):
            if i % 2 == 0:
                col = i - j
                right.append((col, _null_right(u, n - 1 - j, col)))
            else:
                row = n - 1 - i + j
                left.append((row - 1, _null_left(u, row, j)))
    d = np.diag(u).copy()
    # T^H(theta, phi) . D == D' . T(theta, phi') moves D past each left MZI
    pushed = []
    for m, (theta, phi) in reversed(left):
        dm, dn = d[m], d[m + 1]
        phase = np.exp(-1j * theta)
        new_phi = _wrap(float(np.angle(dm / dn)))
        d[m] = -phase * np.exp(-1j * phi) * dn
        d[m + 1] = -phase * dn
        pushed.append((m, PhasePair(theta, new_phi)))
    ports = [m for m, _ in right] + [m for m, _ in pushed]
    phases = [PhasePair(*tp) for _, tp in right] + [ph for _, ph in pushed]
    return ports, phases, d


def decompose(u, kind) -> PhaseProgram:
    """Program a mesh of the given kind so that it implements ``u``.

    Diamond meshes embed the triangular program on their last N ports and
    leave the calibration MZIs in the Bar state.
    """
    kind = MeshKind.parse(kind)
    u = np.array(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {u.shape}")
    if u.shape[0] < 2:
        raise ValueError("a mesh needs at least 2 ports")
    if not is_unitary(u, _UNITARY_TOL):
        raise ValueError("matrix is not unitary")
    if kind is MeshKind.CLEMENTS:
        ports, phases, d = _decompose_clements(u)
    else:
        ports, phases, d = _decompose_reck(u)
    d = d / np.abs(d)
    return _assemble(kind, u.shape[0], ports, phases, d)


# --- reconstruction -------------------------------------------------------------

def mzi_matrices(
    prog: PhaseProgram,
    loss: LossModel | None = None,
    crosstalk: CrosstalkModel | None = None,
    rng=None,
    leak_phase="random",
    amplitude: str = "field",
) -> np.ndarray:
    """Per-MZI 2x2 matrices of a program, shape ``(K, 2, 2)``.

    With a crosstalk model each MZI receives a fresh crosstalk sample and
    (for ``leak_phase="random"``) a fresh uniform leak phase; a float fixes
    the leak phase for every MZI. ``amplitude`` selects how the crosstalk
    fraction scales the leak field (see :func:`spnoise.device.leak_amplitude`).
    """
    t = lossy_mzi_batch(prog.thetas, prog.phis, loss or LossModel.lossless())
    if crosstalk is not None and crosstalk.enabled:
        rng = make_rng(rng)
        x = sample_crosstalk(prog.thetas, crosstalk, rng)
        if isinstance(leak_phase, str):
            if leak_phase != "random":
                raise ValueError(f"unknown leak phase mode {leak_phase!r}")
            rho = rng.uniform(0.0, TWO_PI, size=x.shape)
        else:
            rho = np.full(x.shape, float(leak_phase))
        leak = (leak_amplitude(x, amplitude) * np.exp(1j * rho))[:, None, None]
        t = (1.0 - x)[:, None, None] * t + leak * t[:, ::-1, :]
    return t


def apply_program(prog: PhaseProgram, mats: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Push a full-width field (or a matrix of fields as columns) through the mesh."""
    out = np.array(field, dtype=complex)
    for k, m in enumerate(prog.ports):
        out[m : m + 2] = mats[k] @ out[m : m + 2]
    return prog.diag.reshape((-1,) + (1,) * (out.ndim - 1)) * out


def reconstruct(
    prog: PhaseProgram,
    loss: LossModel | None = None,
    crosstalk: CrosstalkModel | None = None,
    rng=None,
    leak_phase="random",
    full: bool = False,
    amplitude: str = "field",
) -> np.ndarray:
    """Transfer matrix of a programmed mesh.

    ``loss=None`` and ``crosstalk=None`` give the ideal matrix; a LossModel
    gives the lossy matrix; adding a CrosstalkModel (and an rng) gives one
    noisy realisation. Diamond meshes return the logical N x N block on their
    last N ports unless ``full`` is set.
    """
    mats = mzi_matrices(prog, loss, crosstalk, rng, leak_phase, amplitude)
    t = apply_program(prog, mats, np.eye(prog.width, dtype=complex))
    if full:
        return t
    sl = prog.logical_ports
    return t[sl, sl]


# --- weight mapping ------------------------------------------------------------

def map_weights(w, kind=MeshKind.CLEMENTS) -> SvdProgram:
    """SVD-map a complex weight matrix onto two meshes and a diagonal stage.

    Non-square matrices are zero-padded to square first.
    """
    w = np.array(w, dtype=complex)
    if w.ndim != 2:
        raise ValueError("weights must be a matrix")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    n = max(w.shape)
    if w.shape != (n, n):
        padded = np.zeros((n, n), dtype=complex)
        padded[: w.shape[0], : w.shape[1]] = w
        w = padded
    u, s, vh = np.linalg.svd(w)
    return SvdProgram(decompose(u, kind), s, decompose(vh, kind))


def svd_matrix(svd: SvdProgram, loss: LossModel | None = None) -> np.ndarray:
    """Deterministic (crosstalk-free) matrix ``U diag(sigma) V^H``."""
    u = reconstruct(svd.u_prog, loss)
    vh = reconstruct(svd.v_prog, loss)
    return u @ (svd.sigma[:, None] * vh)
