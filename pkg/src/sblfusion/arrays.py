"""Sensor geometry and steering-vector dictionary for co-located MIMO radars.

A radar observes a 2-D scene through a parameterized dictionary: for every
candidate position the sensor response is the Kronecker product of an
angle-dependent steering vector (virtual linear array) and a
distance-dependent steering vector (sampled channel frequency response),
optionally attenuated by a 1/d^2 path-loss factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

SPEED_OF_LIGHT = 299792458.0


@runtime_checkable
class ParameterizedDictionary(Protocol):
    """What the solver needs from a sensor model: the response to a source
    at a continuous 2-D position, and the sample count. Any modality that
    provides these plugs into the engine."""

    @property
    def n_samples(self) -> int: ...

    def atom(self, position) -> np.ndarray: ...


class DegenerateGeometryError(ValueError):
    """Requested position coincides with the sensor position."""


@dataclass(frozen=True)
class SteeringParams:
    """Angle (radians, relative to broadside) and distance (m) seen by one sensor."""

    angle: float
    distance: float


@dataclass(frozen=True)
class RadarGeometry:
    """One radar's virtual array, frequency grid and pose.

    Parameters
    ----------
    sensor_position : array_like, shape (2,)
        XY position of the array center in meters.
    broadside : float
        Broadside direction in radians, measured counterclockwise from the
        +x axis.
    element_offsets : array_like
        Virtual-array element offsets from the array center along the array
        axis, in meters.
    freq_grid : array_like
        Baseband frequency sample points in Hz, equally spaced.
    carrier_wavelength : float
        Carrier wavelength in meters.
    freq_spacing : float
        Spacing of ``freq_grid`` in Hz.
    path_loss_enabled : bool
        Apply the lambda_c / ((4 pi)^(3/2) d^2) amplitude decay to the
        distance steering vector.
    speed_of_light : float
        Propagation speed in m/s.
    """

    sensor_position: np.ndarray
    broadside: float
    element_offsets: np.ndarray
    freq_grid: np.ndarray
    carrier_wavelength: float
    freq_spacing: float
    path_loss_enabled: bool = False
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        object.__setattr__(self, "sensor_position",
                           np.asarray(self.sensor_position, dtype=float).reshape(2))
        object.__setattr__(self, "element_offsets",
                           np.asarray(self.element_offsets, dtype=float).ravel())
        object.__setattr__(self, "freq_grid",
                           np.asarray(self.freq_grid, dtype=float).ravel())
        diffs = np.diff(self.freq_grid)
        if diffs.size and not np.allclose(diffs, self.freq_spacing, rtol=1e-9, atol=1e-3):
            raise ValueError("freq_grid is not equally spaced by freq_spacing")

    @property
    def n_samples(self) -> int:
        """Total number of samples N = N_f * N_Tx * N_Rx."""
        return self.freq_grid.size * self.element_offsets.size

    def steering_params(self, position) -> SteeringParams:
        return to_steering_params(position, self)

    def atom(self, position) -> np.ndarray:
        return atom(position, self)


def centered_freq_grid(n_freq: int, spacing: float) -> np.ndarray:
    """Equally spaced baseband frequencies centered at 0 (odd/even rule)."""
    if n_freq % 2:
        offsets = np.arange(n_freq) - (n_freq - 1) / 2
    else:
        offsets = np.arange(n_freq) - n_freq / 2
    return offsets * spacing


# Virtual linear array of the 3x3 MIMO setup: Tx spaced lambda/2, Rx spaced
# lambda, giving element offsets (in carrier wavelengths) below.
VIRTUAL_ARRAY_3X3 = np.array([-1.5, -1.0, -0.5, -0.5, 0.0, 0.5, 0.5, 1.0, 1.5])

DEFAULT_BANDWIDTH = 20e6
DEFAULT_N_FREQ = 15
DEFAULT_CARRIER_WAVELENGTH = 0.3


def mimo_3x3_geometry(sensor_position=(0.0, 0.0), broadside=np.pi / 2,
                      path_loss_enabled=False,
                      carrier_wavelength=DEFAULT_CARRIER_WAVELENGTH,
                      n_freq=DEFAULT_N_FREQ, bandwidth=DEFAULT_BANDWIDTH,
                      speed_of_light=SPEED_OF_LIGHT) -> RadarGeometry:
    """Default 3x3 MIMO radar: 9-element virtual array, 15 frequency samples
    spanning 20 MHz (N = 135)."""
    spacing = bandwidth / (n_freq - 1)
    return RadarGeometry(
        sensor_position=np.asarray(sensor_position, dtype=float),
        broadside=float(broadside),
        element_offsets=carrier_wavelength * VIRTUAL_ARRAY_3X3,
        freq_grid=centered_freq_grid(n_freq, spacing),
        carrier_wavelength=carrier_wavelength,
        freq_spacing=spacing,
        path_loss_enabled=path_loss_enabled,
        speed_of_light=speed_of_light,
    )


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(angle + np.pi, 2.0 * np.pi) - np.pi
    if wrapped == -np.pi:
        return np.pi
    return wrapped


def to_steering_params(position, geom: RadarGeometry) -> SteeringParams:
    """Convert an XY position to (angle from broadside, distance) for one sensor."""
    delta = np.asarray(position, dtype=float).reshape(2) - geom.sensor_position
    distance = float(np.hypot(delta[0], delta[1]))
    if distance < 1e-9:
        raise DegenerateGeometryError(
            "position coincides with sensor at %s" % geom.sensor_position)
    bearing = np.arctan2(delta[1], delta[0])
    return SteeringParams(angle=wrap_angle(bearing - geom.broadside), distance=distance)


def angle_steering(angle: float, geom: RadarGeometry) -> np.ndarray:
    """Unit-modulus steering vector of the virtual array for a given angle."""
    if not np.isfinite(angle):
        raise ValueError("angle must be finite")
    phase = -2.0 * np.pi * np.sin(angle) / geom.carrier_wavelength * geom.element_offsets
    return np.exp(1j * phase)


def path_loss_gain(distance: float, geom: RadarGeometry) -> float:
    return geom.carrier_wavelength / ((4.0 * np.pi) ** 1.5 * distance ** 2)


def range_steering(distance: float, geom: RadarGeometry) -> np.ndarray:
    """Steering vector over the frequency grid for a given distance, with
    optional path-loss attenuation."""
    if distance <= 0.0:
        raise ValueError("distance must be positive")
    phase = -2.0 * np.pi * (2.0 * distance / geom.speed_of_light) * geom.freq_grid
    vec = np.exp(1j * phase)
    if geom.path_loss_enabled:
        vec = vec * path_loss_gain(distance, geom)
    return vec


def atom_from_params(params: SteeringParams, geom: RadarGeometry) -> np.ndarray:
    psi_angle = angle_steering(params.angle, geom)
    psi_range = range_steering(params.distance, geom)
    # Kronecker product written as an outer product; identical layout,
    # much cheaper than np.kron in this hot path.
    out = psi_angle[:, None] * psi_range[None, :]
    return out.reshape(-1) / np.sqrt(geom.n_samples)


def atom(position, geom: RadarGeometry) -> np.ndarray:
    """Dictionary atom psi(theta): the length-N sensor response to a
    unit-amplitude source at ``position``.

    With path loss disabled the atom has unit Euclidean norm; with path loss
    enabled the norm equals the path-loss gain at the source distance.
    """
    return atom_from_params(to_steering_params(position, geom), geom)


def atom_matrix(positions, geom: RadarGeometry) -> np.ndarray:
    """Atoms for many positions, stacked as columns of an (N, G) matrix."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    delta = positions - geom.sensor_position
    distances = np.hypot(delta[:, 0], delta[:, 1])
    if np.any(distances < 1e-9):
        raise DegenerateGeometryError("grid contains a sensor position")
    angles = np.arctan2(delta[:, 1], delta[:, 0]) - geom.broadside
    ang_phase = (-2.0 * np.pi / geom.carrier_wavelength) * np.outer(
        geom.element_offsets, np.sin(angles))
    rng_phase = (-4.0 * np.pi / geom.speed_of_light) * np.outer(
        geom.freq_grid, distances)
    # column g is kron(angle_g, range_g); broadcasting keeps it vectorized
    atoms = np.exp(1j * (ang_phase[:, None, :] + rng_phase[None, :, :]))
    atoms = atoms.reshape(geom.n_samples, positions.shape[0])
    atoms /= np.sqrt(geom.n_samples)
    if geom.path_loss_enabled:
        atoms *= geom.carrier_wavelength / ((4.0 * np.pi) ** 1.5 * distances ** 2)
    return atoms
