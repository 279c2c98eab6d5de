import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spnoise.analysis import rvd
from spnoise.core import haar_unitary, is_unitary
from spnoise.device import CrosstalkModel, LossModel, PhasePair, ideal_mzi
from spnoise.mesh import (
    MeshKind,
    PhaseProgram,
    build_layout,
    decompose,
    map_weights,
    mesh_width,
    mzi_count,
    reconstruct,
    svd_matrix,
)

KINDS = list(MeshKind)


def _embedded_product(prog):
    """Full-width matrix built by multiplying explicit N x N embeddings (oracle)."""
    t = np.eye(prog.width, dtype=complex)
    for p in prog.placements:
        e = np.eye(prog.width, dtype=complex)
        e[p.m : p.m + 2, p.m : p.m + 2] = ideal_mzi(p.phases)
        t = e @ t
    return np.diag(prog.diag) @ t


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", [2, 3, 4, 5, 8])
def test_roundtrip(kind, n):
    u = haar_unitary(n, 11 * n)
    prog = decompose(u, kind)
    assert np.max(np.abs(reconstruct(prog) - u)) < 1e-10
    assert rvd(u, reconstruct(prog)) < 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_reconstruct_matches_embedding_oracle(kind):
    prog = decompose(haar_unitary(6, 2), kind)
    full = reconstruct(prog, full=True)
    assert np.allclose(full, _embedded_product(prog), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(KINDS), st.integers(2, 10), st.integers(0, 10**6))
def test_roundtrip_property(kind, n, seed):
    u = haar_unitary(n, seed)
    prog = decompose(u, kind)
    assert len(prog.placements) == mzi_count(kind, n)
    assert np.allclose(reconstruct(prog), u, atol=1e-9)
    for p in prog.placements:
        assert 0.0 <= p.phases.theta <= math.pi
        assert 0.0 <= p.phases.phi <= 2 * math.pi


def test_roundtrip_special_matrices():
    for u in (np.eye(4), np.eye(4)[::-1], np.diag(np.exp(1j * np.arange(4)))):
        for kind in KINDS:
            assert np.allclose(reconstruct(decompose(u, kind)), u, atol=1e-10)


@pytest.mark.parametrize("n", [2, 3, 4, 7, 16, 33, 64])
def test_counts(n):
    assert len(build_layout("reck", n).placements) == n * (n - 1) // 2
    assert len(build_layout("clements", n).placements) == n * (n - 1) // 2
    assert len(build_layout("diamond", n).placements) == (n - 1) ** 2


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", [3, 4, 8, 9])
def test_columns_never_share_ports(kind, n):
    prog = build_layout(kind, n)
    for c in range(prog.n_columns):
        used = []
        for p in prog.placements:
            if p.column == c:
                used += [p.m, p.m + 1]
        assert len(used) == len(set(used))


def test_depths():
    # rectangular mesh is N columns deep; the triangle 2N - 3
    assert build_layout("clements", 8).n_columns == 8
    assert build_layout("reck", 8).n_columns == 13
    assert build_layout("diamond", 8).n_columns == 13
    assert mesh_width("diamond", 8) == 14
    assert mesh_width("clements", 8) == 8


def test_diamond_calibration_mzis_in_bar_state():
    prog = decompose(haar_unitary(5, 0), "diamond")
    lower = [p for p in prog.placements if p.m < prog.logical_ports.start]
    assert lower
    assert all(p.phases.theta == math.pi and p.phases.phi == 0.0 for p in lower)
    full = reconstruct(prog, full=True)
    # the logical block is decoupled from the calibration ports
    sl = prog.logical_ports
    assert np.allclose(full[sl, : sl.start], 0, atol=1e-12)


def test_decompose_rejects_bad_input():
    with pytest.raises(ValueError):
        decompose(np.ones((3, 3)), "clements")
    with pytest.raises(ValueError):
        decompose(np.eye(3)[:2], "reck")
    with pytest.raises(ValueError):
        decompose(np.eye(1), "reck")
    with pytest.raises(ValueError):
        MeshKind.parse("butterfly")


def test_program_json_roundtrip():
    prog = decompose(haar_unitary(4, 9), "clements")
    again = PhaseProgram.from_json(prog.to_json())
    assert again == prog
    assert np.allclose(reconstruct(again), reconstruct(prog))


def test_program_validation():
    prog = build_layout("reck", 3)
    with pytest.raises(ValueError):
        PhaseProgram(prog.kind, prog.width, prog.logical_n, prog.placements[:-1], prog.diag)
    with pytest.raises(ValueError):
        PhaseProgram(prog.kind, prog.width, prog.logical_n, prog.placements, 2 * prog.diag)


@pytest.mark.parametrize("kind", KINDS)
def test_lossy_reconstruction_is_passive(kind):
    prog = decompose(haar_unitary(6, 4), kind)
    t = reconstruct(prog, LossModel())
    assert np.linalg.norm(t, 2) < 1.0


def test_crosstalk_reconstruction_deterministic_per_rng():
    prog = decompose(haar_unitary(4, 4), "clements")
    a = reconstruct(prog, LossModel(), CrosstalkModel(), np.random.default_rng(3))
    b = reconstruct(prog, LossModel(), CrosstalkModel(), np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert not is_unitary(a)


@pytest.mark.parametrize("kind", KINDS)
def test_map_weights_rebuilds_matrix(kind):
    rng = np.random.default_rng(0)
    w = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    svd = map_weights(w, kind)
    assert np.allclose(svd_matrix(svd), w, atol=1e-9)
    assert np.all(np.diff(svd.sigma) <= 0)


def test_map_weights_pads_rectangular():
    w = np.arange(6, dtype=complex).reshape(2, 3)
    svd = map_weights(w, "reck")
    assert svd.n == 3
    assert np.allclose(svd_matrix(svd)[:2, :3], w, atol=1e-9)


def test_map_weights_rejects_nonfinite():
    with pytest.raises(ValueError):
        map_weights(np.array([[np.nan, 0], [0, 1]]))


def test_single_mzi_program_matches_device():
    prog = decompose(ideal_mzi(PhasePair(1.2, 0.4)), "reck")
    assert prog.placements[0].phases.theta == pytest.approx(1.2)
