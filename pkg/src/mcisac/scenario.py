"""Physical model types, steering vectors, channels, and experiment configuration.

Angle convention: broadside-referenced half-wavelength ULA, phase reference at
element 0, so element i of a steering vector carries phase pi * i * sin(theta).
Angles are stored in radians internally; configuration documents use degrees.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArrayGeometry",
    "CellTopology",
    "ChannelSet",
    "InterferenceCaps",
    "Scenario",
    "ScenarioError",
    "steering",
    "target_response",
    "generate_channels",
    "load_scenario",
    "dump_scenario",
    "preset_names",
]


class ScenarioError(ValueError):
    """Raised on configuration schema or invariant violations."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrayGeometry:
    """Transmit/receive ULA sizes; spacing is fixed at half a wavelength."""

    n_tx: int
    n_rx: int
    spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if self.n_tx < 1 or self.n_rx < 1:
            raise ScenarioError("array sizes must be >= 1")
        if self.spacing_wavelengths != 0.5:
            raise ScenarioError("only half-wavelength spacing is supported")


@dataclass(frozen=True, eq=False)
class CellTopology:
    """Cells, users, target angles and echo amplitudes.

    arrival_angles[m] is the angle of arrival of cell m's target echo at BS m;
    departure_angles[n, m] is the angle of departure from BS n toward cell m's
    target.  amplitudes[n, m] is the complex echo amplitude of that path.
    """

    j_cells: int
    k_users: int
    arrival_angles: np.ndarray
    departure_angles: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        j = self.j_cells
        if j < 1 or self.k_users < 1:
            raise ScenarioError("j_cells and k_users must be >= 1")
        object.__setattr__(self, "arrival_angles", np.asarray(self.arrival_angles, dtype=float))
        object.__setattr__(self, "departure_angles", np.asarray(self.departure_angles, dtype=float))
        object.__setattr__(self, "amplitudes", np.asarray(self.amplitudes, dtype=complex))
        if self.arrival_angles.shape != (j,):
            raise ScenarioError(f"arrival_angles must have shape ({j},)")
        if self.departure_angles.shape != (j, j):
            raise ScenarioError(f"departure_angles must have shape ({j}, {j})")
        if self.amplitudes.shape != (j, j):
            raise ScenarioError(f"amplitudes must have shape ({j}, {j})")
        if not np.all(np.isfinite(self.arrival_angles)) or not np.all(
            np.isfinite(self.departure_angles)
        ):
            raise ScenarioError("target angles must be finite")
        if not np.all(np.isfinite(self.amplitudes)):
            raise ScenarioError("echo amplitudes must be finite")
        if not np.allclose(np.diag(self.departure_angles), self.arrival_angles, atol=1e-12):
            raise ScenarioError(
                "departure_angles diagonal must equal the mono-static arrival angles"
            )

    def __eq__(self, other):
        if not isinstance(other, CellTopology):
            return NotImplemented
        return (
            self.j_cells == other.j_cells
            and self.k_users == other.k_users
            and np.array_equal(self.arrival_angles, other.arrival_angles)
            and np.array_equal(self.departure_angles, other.departure_angles)
            and np.array_equal(self.amplitudes, other.amplitudes)
        )


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Nominal downlink channels plus the CSI uncertainty radius.

    nominal[n, m, k] is the length-n_tx channel from BS n to user (m, k).  The
    per-user error ball has radius delta; the CoMP stacked channel of length
    J*n_tx uses radius sqrt(J)*delta.
    """

    nominal: np.ndarray
    delta: float
    rng_seed: int

    def __post_init__(self):
        object.__setattr__(self, "nominal", np.asarray(self.nominal, dtype=complex))
        if self.nominal.ndim != 4 or self.nominal.shape[0] != self.nominal.shape[1]:
            raise ScenarioError("nominal channels must have shape (J, J, K, n_tx)")
        if self.delta < 0:
            raise ScenarioError("delta must be >= 0")

    def vector(self, n: int, m: int, k: int) -> np.ndarray:
        """Channel from BS n to user (m, k)."""
        return self.nominal[n, m, k]

    def stacked(self, m: int, k: int) -> np.ndarray:
        """CoMP channel to user (m, k): per-BS channels stacked over n."""
        return np.concatenate([self.nominal[n, m, k] for n in range(self.nominal.shape[0])])

    @property
    def comp_delta(self) -> float:
        """Effective error-ball radius for the stacked CoMP channel."""
        return math.sqrt(self.nominal.shape[0]) * self.delta

    def __eq__(self, other):
        if not isinstance(other, ChannelSet):
            return NotImplemented
        return (
            np.array_equal(self.nominal, other.nominal)
            and self.delta == other.delta
            and self.rng_seed == other.rng_seed
        )


@dataclass(frozen=True)
class InterferenceCaps:
    """Maximum tolerable leakage/interference constants, linear units."""

    p_leak_max: float
    i_intra_max: float
    i_inter_max: float
    i_max: float

    def __post_init__(self):
        for name in ("p_leak_max", "i_intra_max", "i_inter_max", "i_max"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"caps.{name} must be > 0")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Full experiment description.

    config is the canonical resolved configuration document (JSON-compatible,
    degrees for angles); all array-valued fields are derived from it at load
    time, so scenarios compare equal iff their configs are equal.
    """

    geometry: ArrayGeometry
    topology: CellTopology
    channels: ChannelSet
    p_t: float
    sigma_c_sq: float
    sigma_r_sq: float
    frame_len: int
    mpsk_order: int
    caps: InterferenceCaps
    config: dict = field(repr=False)

    def __post_init__(self):
        if self.p_t < 0:
            raise ScenarioError("p_t must be >= 0")
        if self.sigma_c_sq <= 0 or self.sigma_r_sq <= 0:
            raise ScenarioError("noise powers must be > 0")
        if self.frame_len <= self.geometry.n_tx:
            raise ScenarioError(
                f"frame.l must exceed array.n_tx (got l={self.frame_len}, "
                f"n_tx={self.geometry.n_tx})"
            )
        if self.mpsk_order < 2:
            raise ScenarioError("frame.mpsk must be >= 2")

    @property
    def psi(self) -> float:
        """PSK half decision-sector angle pi / M."""
        return math.pi / self.mpsk_order

    @property
    def j_cells(self) -> int:
        return self.topology.j_cells

    @property
    def k_users(self) -> int:
        return self.topology.k_users

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.config == other.config


# ---------------------------------------------------------------------------
# steering-vector math
# ---------------------------------------------------------------------------


def steering(theta: float, n: int, order: str = "value") -> np.ndarray:
    """Half-wavelength ULA response at angle theta, or its theta-derivative.

    Element i (0-based) of the value is exp(1j*pi*i*sin(theta)); the
    derivative is taken analytically with respect to theta.
    """
    if not math.isfinite(theta):
        raise ScenarioError("steering angle must be finite")
    if n < 1:
        raise ScenarioError("steering length must be >= 1")
    idx = np.arange(n)
    phase = np.exp(1j * math.pi * idx * math.sin(theta))
    if order == "value":
        return phase
    if order == "derivative":
        return 1j * math.pi * idx * math.cos(theta) * phase
    raise ScenarioError(f"unknown steering order {order!r}")


def target_response(
    alpha: complex, theta_arrival: float, theta_departure: float, geometry: ArrayGeometry
) -> np.ndarray:
    """Rank-one echo response alpha * a(theta_arrival) v(theta_departure)^T."""
    a = steering(theta_arrival, geometry.n_rx)
    v = steering(theta_departure, geometry.n_tx)
    return alpha * np.outer(a, v)


# ---------------------------------------------------------------------------
# channel generation
# ---------------------------------------------------------------------------


def generate_channels(
    topology: CellTopology,
    geometry: ArrayGeometry,
    inter_cell_factor: float,
    rng_seed: int,
    delta: float = 0.0,
) -> ChannelSet:
    """Draw i.i.d. unit-variance Rayleigh channels, inter-cell links scaled down.

    Intra-cell entries are circularly-symmetric complex Gaussian with unit
    variance per element; channels from BS n to cell m != n are scaled by
    1/sqrt(inter_cell_factor).  Deterministic for a fixed seed.
    """
    if inter_cell_factor <= 0:
        raise ScenarioError("inter_cell_factor must be > 0")
    rng = np.random.default_rng(rng_seed)
    j, k, n_tx = topology.j_cells, topology.k_users, geometry.n_tx
    shape = (j, j, k, n_tx)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    scale = np.full((j, j), 1.0 / math.sqrt(inter_cell_factor))
    np.fill_diagonal(scale, 1.0)
    h *= scale[:, :, None, None]
    return ChannelSet(nominal=h, delta=delta, rng_seed=rng_seed)


# ---------------------------------------------------------------------------
# configuration documents
# ---------------------------------------------------------------------------

_PAPER_ANGLES = {
    "arrival_deg": [-50.0, 50.0],
    "departure_deg": [[-50.0, 60.0], [-60.0, 50.0]],
}

_BASE_CONFIG = {
    "cells": {"j": 2, "k": 3},
    "array": {"n_tx": 6, "n_rx": 6},
    "targets": {**_PAPER_ANGLES, "amplitude_ratio_db": 10.0 * math.log10(3.0)},
    "power": {"pt_over_noise_db": 40.0},
    "uncertainty": {"delta": 0.0},
    "frame": {"l": 20, "mpsk": 4},
    "caps": {
        "p_leak_max": 4.0 * math.pi,
        "i_intra_max_db": 10.0,
        "i_inter_max_db": 10.0,
    },
    "seed": 1,
}

# Per-figure parameter sets from the experiment captions.
_PRESETS = {
    "fig2": {"array": {"n_tx": 16, "n_rx": 6}, "uncertainty": {"delta": 0.0}},
    "fig3": {"array": {"n_tx": 6, "n_rx": 6}, "uncertainty": {"delta": 0.0}},
    "fig4": {"array": {"n_tx": 6, "n_rx": 6}, "uncertainty": {"delta": 0.01}},
    "fig5": {"array": {"n_tx": 16, "n_rx": 6}, "uncertainty": {"delta": 0.01}},
    "fig7": {"array": {"n_tx": 10, "n_rx": 6}, "uncertainty": {"delta": 0.01}},
    "fig8": {"array": {"n_tx": 10, "n_rx": 6}, "uncertainty": {"delta": 0.01}},
}

_SCHEMA = {
    "preset": str,
    "cells": {"j": int, "k": int},
    "array": {"n_tx": int, "n_rx": int},
    "targets": {"arrival_deg": list, "departure_deg": list, "amplitude_ratio_db": (int, float)},
    "power": {"pt_over_noise_db": (int, float)},
    "uncertainty": {"delta": (int, float)},
    "frame": {"l": int, "mpsk": int},
    "caps": {
        "p_leak_max": (int, float),
        "i_intra_max_db": (int, float),
        "i_inter_max_db": (int, float),
    },
    "seed": int,
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def _check_schema(doc: dict, schema: dict, path: str = "") -> None:
    for key in doc:
        if key not in schema:
            raise ScenarioError(f"unknown configuration field {path + key!r}")
    for key, val in doc.items():
        spec = schema[key]
        where = path + key
        if isinstance(spec, dict):
            if not isinstance(val, dict):
                raise ScenarioError(f"field {where!r} must be an object")
            _check_schema(val, spec, where + ".")
        elif spec is int:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ScenarioError(f"field {where!r} must be an integer")
        elif spec is list:
            if not isinstance(val, list):
                raise ScenarioError(f"field {where!r} must be a list")
        else:
            if isinstance(val, bool) or not isinstance(val, spec):
                raise ScenarioError(f"field {where!r} must be a number")


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_scenario(text: str | dict) -> Scenario:
    """Parse and validate a configuration document into a Scenario.

    Accepts a JSON string or an equivalent dict.  Absent optional fields take
    the experiment defaults; a "preset" field selects a per-figure parameter
    set before the document's own fields are applied.
    """
    if isinstance(text, str):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"configuration is not valid JSON: {exc}") from exc
    else:
        doc = dict(text)
    if not isinstance(doc, dict):
        raise ScenarioError("configuration document must be a JSON object")
    _check_schema(doc, _SCHEMA)

    resolved = dict(_BASE_CONFIG)
    preset = doc.pop("preset", None)
    if preset is not None:
        key = preset[len("paper-"):] if preset.startswith("paper-") else preset
        if key not in _PRESETS:
            raise ScenarioError(
                f"unknown preset {preset!r}; available: {', '.join(preset_names())}"
            )
        resolved = _merge(resolved, _PRESETS[key])
    resolved = _merge(resolved, doc)
    return _scenario_from_resolved(resolved)


def _scenario_from_resolved(cfg: dict) -> Scenario:
    j = cfg["cells"]["j"]
    k = cfg["cells"]["k"]
    geometry = ArrayGeometry(n_tx=cfg["array"]["n_tx"], n_rx=cfg["array"]["n_rx"])

    arrival_deg = np.asarray(cfg["targets"]["arrival_deg"], dtype=float)
    departure_deg = np.asarray(cfg["targets"]["departure_deg"], dtype=float)
    if arrival_deg.shape != (j,):
        raise ScenarioError(f"targets.arrival_deg must list {j} angles")
    if departure_deg.shape != (j, j):
        raise ScenarioError(f"targets.departure_deg must be a {j}x{j} matrix")

    sigma_c_sq = 1.0
    sigma_r_sq = 1.0
    p_t = sigma_c_sq * 10.0 ** (cfg["power"]["pt_over_noise_db"] / 10.0)
    frame_len = cfg["frame"]["l"]
    ratio = 10.0 ** (cfg["targets"]["amplitude_ratio_db"] / 10.0)

    # Intra-cell echo amplitude normalized so |a_mm|^2 * L * P_t / sigma_r^2 = 1;
    # cross amplitudes reduced by the configured ratio.
    alpha_intra = math.sqrt(sigma_r_sq / (frame_len * p_t))
    amplitudes = np.full((j, j), alpha_intra / math.sqrt(ratio), dtype=complex)
    np.fill_diagonal(amplitudes, alpha_intra)

    topology = CellTopology(
        j_cells=j,
        k_users=k,
        arrival_angles=np.deg2rad(arrival_deg),
        departure_angles=np.deg2rad(departure_deg),
        amplitudes=amplitudes,
    )
    channels = generate_channels(
        topology,
        geometry,
        inter_cell_factor=ratio,
        rng_seed=cfg["seed"],
        delta=float(cfg["uncertainty"]["delta"]),
    )
    caps = InterferenceCaps(
        p_leak_max=cfg["caps"]["p_leak_max"] * p_t,
        i_intra_max=sigma_c_sq * 10.0 ** (cfg["caps"]["i_intra_max_db"] / 10.0),
        i_inter_max=sigma_c_sq * 10.0 ** (cfg["caps"]["i_inter_max_db"] / 10.0),
        # The symbol-level stage-B normalization constant reuses the inter-cell cap.
        i_max=sigma_c_sq * 10.0 ** (cfg["caps"]["i_inter_max_db"] / 10.0),
    )
    return Scenario(
        geometry=geometry,
        topology=topology,
        channels=channels,
        p_t=p_t,
        sigma_c_sq=sigma_c_sq,
        sigma_r_sq=sigma_r_sq,
        frame_len=frame_len,
        mpsk_order=cfg["frame"]["mpsk"],
        caps=caps,
        config=_canonical(cfg),
    )


def _canonical(cfg: dict) -> dict:
    """Resolved config with plain JSON types, suitable for exact comparison."""
    return json.loads(json.dumps(cfg, sort_keys=True))


def dump_scenario(scenario: Scenario) -> str:
    """Serialize a Scenario back to its canonical configuration document."""
    return json.dumps(scenario.config, indent=2, sort_keys=True)
