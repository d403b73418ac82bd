"""Parametric full-waveform return-pulse simulator.

A return is modelled as a Gaussian main lobe plus an exponential tail on a
flat baseline, with Lambertian cosine attenuation and footprint widening
under yaw, additive Gaussian receiver noise, and clipping at the saturation
ceiling. The capture protocol (fixed range, yaw sweep, repeated shots) mirrors
a calibration-bench rig: one board material at a time, rotated about the
vertical axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as cfg
from .core import (
    N_SAMPLES,
    PROTOCOL_DISTANCE_M,
    PROTOCOL_REPETITIONS,
    PROTOCOL_YAW_GRID,
    UNKNOWN,
    CaptureMeta,
    Dataset,
    LabeledSample,
    MaterialClass,
    Waveform,
)
from .rng import derive_seed, generator

# Upper bound on reflectivity * colour_scale. Values above 1.0 are allowed:
# they overdrive the receiver and clip at the saturation ceiling.
R_MAX = 4.0


@dataclass(frozen=True)
class MaterialProfile:
    """Shape and strength of a material's return pulse.

    reflectivity   peak return fraction at zero yaw (of the saturation ceiling)
    tail_gain      post-peak tail amplitude relative to the peak
    tail_decay     exponential tail decay constant, in sample indices
    width_scale    pulse-width multiplier against the emitted pulse
    colour_scale   colour-dependent amplitude multiplier in (0, 1]
    """

    name: str
    reflectivity: float
    tail_gain: float
    tail_decay: float
    width_scale: float
    colour_scale: float = 1.0

    def __post_init__(self):
        values = (self.reflectivity, self.tail_gain, self.tail_decay, self.width_scale, self.colour_scale)
        if not all(np.isfinite(v) for v in values):
            raise ValueError(f"material {self.name!r} has non-finite parameters")
        if not 0.0 < self.reflectivity <= R_MAX:
            raise ValueError(f"material {self.name!r}: reflectivity must lie in (0, {R_MAX}]")
        if self.tail_gain < 0.0:
            raise ValueError(f"material {self.name!r}: tail_gain must be >= 0")
        if self.tail_decay <= 0.0:
            raise ValueError(f"material {self.name!r}: tail_decay must be > 0")
        if self.width_scale <= 0.0:
            raise ValueError(f"material {self.name!r}: width_scale must be > 0")
        if not 0.0 < self.colour_scale <= 1.0:
            raise ValueError(f"material {self.name!r}: colour_scale must lie in (0, 1]")
        if self.reflectivity * self.colour_scale > R_MAX:
            raise ValueError(f"material {self.name!r}: reflectivity * colour_scale exceeds {R_MAX}")


@dataclass(frozen=True)
class SensorModel:
    """Receiver geometry and noise for the low-power channel."""

    pulse_width: float
    samples_per_metre: float
    a_sat: float
    noise_std: float
    baseline: float
    n_samples: int = N_SAMPLES

    def __post_init__(self):
        if self.n_samples != N_SAMPLES:
            raise ValueError(f"sensor must record exactly {N_SAMPLES} samples, got {self.n_samples}")
        if self.pulse_width <= 0.0:
            raise ValueError("pulse_width must be > 0")
        if self.samples_per_metre <= 0.0:
            raise ValueError("samples_per_metre must be > 0")
        if self.a_sat <= 0.0:
            raise ValueError("a_sat must be > 0")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")
        if not 0.0 <= self.baseline <= self.a_sat:
            raise ValueError("baseline must lie in [0, a_sat]")


@dataclass(frozen=True)
class ProtocolSpec:
    """One capture campaign: materials x yaw angles x repetitions."""

    materials: tuple[MaterialProfile, ...]
    angles_deg: tuple[float, ...]
    distance_m: float = PROTOCOL_DISTANCE_M
    repetitions: int = PROTOCOL_REPETITIONS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "materials", tuple(self.materials))
        object.__setattr__(self, "angles_deg", tuple(float(a) for a in self.angles_deg))
        if not self.materials:
            raise ValueError("protocol needs at least one material")
        names = [m.name for m in self.materials]
        if len(set(names)) != len(names):
            raise ValueError("protocol material names must be unique")
        if not self.angles_deg:
            raise ValueError("protocol needs at least one angle")
        if any(not abs(a) < 90.0 for a in self.angles_deg):
            raise ValueError("protocol angles must lie in (-90, 90)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.distance_m <= 0.0:
            raise ValueError("distance_m must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def simulate_return(
    material: MaterialProfile,
    sensor: SensorModel,
    yaw_deg: float,
    distance_m: float,
    noise_seed: int,
) -> Waveform:
    """Simulate one return pulse; a pure function of its arguments.

    Construction: onset index from the two-way travel distance, Gaussian
    main lobe attenuated by cos(yaw) and widened by 1/cos(yaw), exponential
    tail after the peak, Gaussian noise from a counter-based generator, then
    clipping to [0, a_sat].
    """
    if not abs(yaw_deg) < 90.0:
        raise ValueError(f"yaw_deg must lie in (-90, 90), got {yaw_deg}")
    if distance_m <= 0.0:
        raise ValueError(f"distance_m must be > 0, got {distance_m}")

    cos_yaw = math.cos(math.radians(yaw_deg))
    onset = round(2.0 * distance_m * sensor.samples_per_metre)
    sigma = sensor.pulse_width * material.width_scale / cos_yaw
    peak_pos = onset + 3.0 * sigma
    if onset - 3.0 * sigma < 0.0:
        raise ValueError(
            f"pulse onset precedes the capture window: distance_m={distance_m} with "
            f"samples_per_metre={sensor.samples_per_metre} puts the onset at index {onset}, "
            f"inside 3 pulse widths of zero"
        )
    if peak_pos + 3.0 * sigma > sensor.n_samples - 1:
        raise ValueError(
            f"pulse exceeds the capture window: distance_m={distance_m} with "
            f"samples_per_metre={sensor.samples_per_metre} and effective width {sigma:.2f} "
            f"puts the main lobe end at index {peak_pos + 3.0 * sigma:.1f} > {sensor.n_samples - 1}"
        )

    amplitude = sensor.a_sat * material.reflectivity * material.colour_scale * cos_yaw
    idx = np.arange(sensor.n_samples, dtype=np.float64)
    lobe = amplitude * np.exp(-0.5 * ((idx - peak_pos) / sigma) ** 2)
    lobe[idx < onset - 3.0 * sigma] = 0.0  # keep the pre-return head exactly flat
    tail = np.where(
        idx > peak_pos,
        amplitude * material.tail_gain * np.exp(-(idx - peak_pos) / material.tail_decay),
        0.0,
    )
    signal = sensor.baseline + lobe + tail
    if sensor.noise_std > 0.0:
        noise = generator(noise_seed).normal(0.0, sensor.noise_std, sensor.n_samples)
        signal = signal + noise
    return Waveform(np.clip(signal, 0.0, sensor.a_sat))


def generate_dataset(spec: ProtocolSpec, sensor: SensorModel) -> Dataset:
    """One labelled sample per (material, angle, repetition).

    Per-sample noise seeds are derived from the material name, yaw value, and
    repetition index, so the output is independent of list order, generation
    order, and thread count.
    """
    class_table = tuple(MaterialClass(i, m.name) for i, m in enumerate(spec.materials))
    samples = []
    for mi, material in enumerate(spec.materials):
        for angle in spec.angles_deg:
            for rep in range(1, spec.repetitions + 1):
                noise_seed = derive_seed(spec.seed, material.name, float(angle), rep)
                waveform = simulate_return(material, sensor, angle, spec.distance_m, noise_seed)
                samples.append(
                    LabeledSample(
                        waveform,
                        CaptureMeta(float(angle), spec.distance_m, rep),
                        class_table[mi],
                    )
                )
    return Dataset(tuple(samples), class_table, spec.seed)


def material_bank_from_config(config: dict[str, str]) -> tuple[MaterialProfile, ...]:
    """Build the material bank from a key-value config, in file order."""
    bank = []
    for name in cfg.material_names(config):
        prefix = f"material.{name}."
        bank.append(
            MaterialProfile(
                name=name,
                reflectivity=cfg.get_float(config, prefix + "reflectivity"),
                tail_gain=cfg.get_float(config, prefix + "tail_gain"),
                tail_decay=cfg.get_float(config, prefix + "tail_decay"),
                width_scale=cfg.get_float(config, prefix + "width_scale"),
                colour_scale=cfg.get_float(config, prefix + "colour_scale"),
            )
        )
    return tuple(bank)


def sensor_from_config(config: dict[str, str]) -> SensorModel:
    return SensorModel(
        pulse_width=cfg.get_float(config, "sensor.pulse_width"),
        samples_per_metre=cfg.get_float(config, "sensor.samples_per_metre"),
        a_sat=cfg.get_float(config, "sensor.a_sat"),
        noise_std=cfg.get_float(config, "sensor.noise_std"),
        baseline=cfg.get_float(config, "sensor.baseline"),
        n_samples=cfg.get_int(config, "sensor.n_samples"),
    )


def default_material_bank() -> tuple[MaterialProfile, ...]:
    """The checked-in bank: four board materials and five cardboard colours."""
    return material_bank_from_config(cfg.load_config())


def default_sensor_model() -> SensorModel:
    return sensor_from_config(cfg.load_config())


def pre_onset_cutoff(sensor: SensorModel, materials: Sequence[MaterialProfile], max_angle_deg: float = 60.0) -> int:
    """Last index guaranteed to be pre-return for every listed material and
    any |yaw| up to ``max_angle_deg`` at the protocol distance."""
    sigma_max = max(
        sensor.pulse_width * m.width_scale / math.cos(math.radians(max_angle_deg)) for m in materials
    )
    onset = round(2.0 * PROTOCOL_DISTANCE_M * sensor.samples_per_metre)
    return int(math.floor(onset - 4.0 * sigma_max))


def label_board_points(
    points: Sequence[tuple[Sequence[float], int]],
    board_center: Sequence[float],
    board_extent: Sequence[float],
    material: MaterialClass,
) -> list[MaterialClass]:
    """Label points inside the axis-aligned board box with ``material``;
    everything else is the unknown background class."""
    center = np.asarray(board_center, dtype=np.float64)
    extent = np.asarray(board_extent, dtype=np.float64)
    if center.shape != (3,) or extent.shape != (3,):
        raise ValueError("board_center and board_extent must be 3-vectors")
    if np.any(extent <= 0.0):
        raise ValueError("board extents must be positive")
    labels = []
    for position, _waveform_index in points:
        pos = np.asarray(position, dtype=np.float64)
        inside = bool(np.all(np.abs(pos - center) <= extent))
        labels.append(material if inside else UNKNOWN)
    return labels
