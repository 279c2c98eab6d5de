"""Optical loss and coherent crosstalk simulation for MZI-based photonic neural networks."""

from spnoise.core import (
    NEG_INF_DBM,
    amplitude_to_db,
    db_to_amplitude,
    db_to_power,
    make_rng,
    power_dbm,
    power_to_db,
    spawn_seeds,
)
from spnoise.device import (
    CrosstalkModel,
    LossModel,
    PhasePair,
    crosstalk_mean_db,
    ideal_mzi,
    lossy_mzi,
    noisy_mzi,
    sample_crosstalk,
)
from spnoise.mesh import (
    MeshKind,
    PhaseProgram,
    PlacedMzi,
    SvdProgram,
    build_layout,
    decompose,
    map_weights,
    reconstruct,
)

from spnoise.netsim import (
    LayerSpec,
    NoiseSpec,
    OguSpec,
    OutputNoiseMap,
    crosstalk_power_map,
    insertion_loss_map,
    network_noise_map,
    propagate,
    run_network,
)
from spnoise.nau import NauHandle, NauParams, ideal_nau, nonideal_nau, plain_relu
from spnoise.analysis import PenaltyReport, SweepReport, power_penalty, rvd, static_power, sweep

__version__ = "0.1.0"
