import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spnoise.core import haar_unitary
from spnoise.device import CrosstalkModel, LossModel, lossy_mzi
from spnoise.mesh import MeshKind, SvdProgram, map_weights, svd_matrix
from spnoise.nau import plain_relu
from spnoise.netsim import (
    CSV_COLUMNS,
    LayerSpec,
    NoiseSpec,
    OguSpec,
    OutputNoiseMap,
    crosstalk_power_map,
    insertion_loss_map,
    layer_matrix,
    network_insertion_loss,
    network_noise_map,
    propagate,
    run_network,
    write_noise_csv,
)

KINDS = list(MeshKind)


def _layer(kind, n, seed=0, scale=1.0, ogu=None, nau_loss=0.0):
    w = scale * haar_unitary(n, seed)
    return LayerSpec(map_weights(w, kind), ogu or OguSpec(), nau_loss)


# --- brute-force crosstalk oracle --------------------------------------------------

def _embed(width, m, block):
    e = np.eye(width, dtype=complex)
    e[m : m + 2, m : m + 2] = block
    return e


def _victims(prog, loss, xt):
    out = []
    for p in prog.placements:
        x = 10 ** ((xt.x_bar - xt.x_cross) / math.pi * p.phases.theta / 10 + xt.x_cross / 10)
        out.append((x, (1 - x) * lossy_mzi(p.phases, loss)))
    return out


def _mesh_leaks(prog, loss, xt, port_mw, rho):
    """Every single-leak path of one mesh: list of full-width output fields."""
    vics = _victims(prog, loss, xt)
    fields = []
    for j, (pj, (xj, _)) in enumerate(zip(prog.placements, vics)):
        inj = np.zeros(prog.width, dtype=complex)
        inj[pj.m] = inj[pj.m + 1] = math.sqrt(port_mw * xj) * np.exp(1j * rho)
        post = np.eye(prog.width, dtype=complex)
        for k in range(j + 1, len(vics)):
            post = _embed(prog.width, prog.placements[k].m, vics[k][1]) @ post
        fields.append(np.diag(prog.diag) @ post @ inj)
    return fields


def _mesh_victim(prog, loss, xt):
    t = np.eye(prog.width, dtype=complex)
    for p, (_, v) in zip(prog.placements, _victims(prog, loss, xt)):
        t = _embed(prog.width, p.m, v) @ t
    sl = prog.logical_ports
    return (np.diag(prog.diag) @ t)[sl, sl]


def _stage(layer):
    s = layer.svd.sigma
    fold = 20 * math.log10(s.max()) if s.max() > 1 else 0.0
    att = s / s.max() if s.max() > 1 else s
    amp = 10 ** ((layer.ogu.effective_db + fold) / 20) * 10 ** (-layer.nau_loss / 20)
    return att, amp


def brute_force_leak(layer, loss, xt, port_mw, rho):
    att, amp = _stage(layer)
    u_prog, v_prog = layer.svd.u_prog, layer.svd.v_prog
    u_vic = _mesh_victim(u_prog, loss, xt)
    total = np.zeros(layer.n, dtype=complex)
    for f in _mesh_leaks(v_prog, loss, xt, port_mw, rho):
        total += amp * u_vic @ (att * f[v_prog.logical_ports])
    for f in _mesh_leaks(u_prog, loss, xt, port_mw, rho):
        total += amp * f[u_prog.logical_ports]
    victim = amp * u_vic @ (att[:, None] * _mesh_victim(v_prog, loss, xt))
    return total, victim


ORACLE_NOISE = dict(crosstalk=CrosstalkModel(sigma_frac=0.0), phase_mode="fixed", fixed_phase=0.7)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("n", [2, 3, 4])
def test_ledger_matches_brute_force(kind, n):
    layer = _layer(kind, n, seed=n, scale=1.7)  # sigma > 1 exercises the OGU fold
    noise = NoiseSpec(**ORACLE_NOISE)
    xp = crosstalk_power_map(layer, noise, p_in_dbm=3.0)
    field, _ = brute_force_leak(layer, noise.loss, noise.crosstalk, 10 ** 0.3 / n, 0.7)
    assert np.allclose(10 ** (xp / 10), np.abs(field) ** 2, rtol=1e-9, atol=0)


@pytest.mark.parametrize("kind", KINDS)
def test_ledger_matches_brute_force_two_layers(kind):
    layers = [_layer(kind, 4, seed=1, ogu=OguSpec.fixed(3.0), nau_loss=0.5), _layer(kind, 4, seed=2)]
    noise = NoiseSpec(**ORACLE_NOISE)
    xp = network_noise_map(layers, noise).xp_dbm
    f1, _ = brute_force_leak(layers[0], noise.loss, noise.crosstalk, 0.25, 0.7)
    f2, v2 = brute_force_leak(layers[1], noise.loss, noise.crosstalk, 0.25, 0.7)
    assert np.allclose(10 ** (xp / 10), np.abs(v2 @ f1 + f2) ** 2, rtol=1e-9, atol=0)


# --- insertion loss ---------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_noiseless_layer_is_ideal(kind):
    layer = _layer(kind, 5, scale=0.5)
    assert np.allclose(layer_matrix(layer), svd_matrix(layer.svd), atol=1e-12)
    assert np.allclose(insertion_loss_map(layer, LossModel.lossless()), 0.0, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_il_positive_and_gain_shifts(kind):
    base = insertion_loss_map(_layer(kind, 6), LossModel())
    assert np.all(base > 0)
    gained = insertion_loss_map(_layer(kind, 6, ogu=OguSpec.fixed(17.0)), LossModel())
    assert np.allclose(gained, base - 17.0)
    nau = insertion_loss_map(_layer(kind, 6, nau_loss=0.4), LossModel())
    assert np.allclose(nau, base + 0.4)


def test_sigma_fold_keeps_loss_of_unitary_part():
    svd = map_weights(haar_unitary(4, 0), "clements")
    base = insertion_loss_map(LayerSpec(svd), LossModel())
    scaled = SvdProgram(svd.u_prog, 3.0 * svd.sigma, svd.v_prog)
    assert np.allclose(insertion_loss_map(LayerSpec(scaled), LossModel()), base)
    assert LayerSpec(scaled).sigma_stage()[1] == pytest.approx(20 * math.log10(3.0))


def test_unity_ogu_ignores_gain_value():
    assert OguSpec(gain_db=30.0).effective_db == 0.0
    with pytest.raises(ValueError):
        OguSpec(mode="boost")
    with pytest.raises(ValueError):
        OguSpec.fixed(-1.0)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(KINDS), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_il_monotone_in_device_loss(kind, l1, extra):
    layer = _layer(kind, 4, seed=3)
    a = insertion_loss_map(layer, LossModel(l_dc=l1))
    b = insertion_loss_map(layer, LossModel(l_dc=l1 + extra))
    assert np.all(b >= a - 1e-12)


def test_network_il_adds_up_for_unitary_layers_roughly():
    l1, l2 = _layer("clements", 4, 1), _layer("clements", 4, 2)
    both = network_insertion_loss([l1, l2], LossModel()).mean()
    single = insertion_loss_map(l1, LossModel()).mean() + insertion_loss_map(l2, LossModel()).mean()
    assert both == pytest.approx(single, rel=0.2)


def test_chain_width_checked():
    with pytest.raises(ValueError):
        network_noise_map([_layer("reck", 3), _layer("reck", 4)], NoiseSpec())
    with pytest.raises(ValueError):
        network_noise_map([], NoiseSpec())


# --- crosstalk power --------------------------------------------------------------

def test_crosstalk_disabled_gives_neg_inf():
    xp = crosstalk_power_map(_layer("reck", 4), NoiseSpec.loss_only())
    assert np.all(np.isneginf(xp))


def test_crosstalk_scales_with_launch_power():
    layer = _layer("diamond", 4)
    a = crosstalk_power_map(layer, NoiseSpec(seed=5), p_in_dbm=0.0)
    b = crosstalk_power_map(layer, NoiseSpec(seed=5), p_in_dbm=10.0)
    assert np.allclose(b - a, 10.0)


def test_noise_map_deterministic_per_seed():
    layer = _layer("clements", 6)
    a = network_noise_map([layer], NoiseSpec(seed=4))
    b = network_noise_map([layer], NoiseSpec(seed=4))
    c = network_noise_map([layer], NoiseSpec(seed=5))
    assert np.array_equal(a.xp_dbm, b.xp_dbm)
    assert not np.array_equal(a.xp_dbm, c.xp_dbm)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(phase_mode="sometimes")
    with pytest.raises(ValueError):
        NoiseSpec(leak_amplitude="volts")
    with pytest.raises(ValueError):
        LayerSpec(map_weights(np.eye(2)), nau_loss=2.0)


# --- propagation -------------------------------------------------------------------

def test_propagate_and_run_network_noiseless():
    rng = np.random.default_rng(0)
    w1 = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    w2 = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    layers = [LayerSpec(map_weights(w1)), LayerSpec(map_weights(w2))]
    x = rng.standard_normal((4, 7)) + 1j * rng.standard_normal((4, 7))
    quiet = NoiseSpec.noiseless()
    assert np.allclose(propagate(x, layers[0], quiet), w1 @ x)
    out = run_network(x, layers, quiet, activation=plain_relu)
    assert np.allclose(out, w2 @ plain_relu(w1 @ x))
    with pytest.raises(ValueError):
        propagate(np.ones(3), layers[0], quiet)


def test_run_network_noisy_layer_toggle():
    layers = [_layer("clements", 4, 1), _layer("clements", 4, 2)]
    x = np.ones(4, dtype=complex)
    quiet = run_network(x, layers, NoiseSpec(), noisy_layers=[False, False])
    ideal = svd_matrix(layers[1].svd) @ svd_matrix(layers[0].svd) @ x
    assert np.allclose(quiet, ideal)
    assert not np.allclose(run_network(x, layers, NoiseSpec()), ideal)


def test_csv_rows(tmp_path):
    m = OutputNoiseMap([1.0, 2.0], [-20.0, -np.inf])
    rows = m.rows("clements", 2, 1, 0)
    path = tmp_path / "noise.csv"
    write_noise_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[2] == "clements,2,1,1,0,2.0,-inf"
    with pytest.raises(ValueError):
        OutputNoiseMap([1.0], [1.0, 2.0])
