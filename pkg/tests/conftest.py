import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mcisac.scenario import ArrayGeometry, CellTopology


def random_topology(rng, j=2, k=3, complex_amps=True) -> CellTopology:
    arrival = rng.uniform(-1.2, 1.2, size=j)
    departure = rng.uniform(-1.2, 1.2, size=(j, j))
    departure[np.arange(j), np.arange(j)] = arrival
    if complex_amps:
        amps = 0.05 * (rng.standard_normal((j, j)) + 1j * rng.standard_normal((j, j)))
    else:
        amps = 0.05 * rng.random((j, j)) + 0.01
    return CellTopology(
        j_cells=j, k_users=k, arrival_angles=arrival,
        departure_angles=departure, amplitudes=amps,
    )


def random_psd(rng, n, rank=None, scale=1.0):
    rank = rank or n
    b = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    w = scale * (b @ b.conj().T) / rank
    return 0.5 * (w + w.conj().T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)


@pytest.fixture
def geometry():
    return ArrayGeometry(n_tx=4, n_rx=4)
