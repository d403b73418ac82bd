"""Domain types, label vocabulary, and the dataset file format.

A capture is a fixed-length return waveform (256 amplitude samples) plus the
geometry it was recorded under (yaw, distance, repetition). Labelled captures
are bundled into immutable datasets that serialize to a CSV + sidecar pair
with exact round-trip semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_SAMPLES = 256
PROTOCOL_YAW_GRID = (-60.0, -45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0, 60.0)
PROTOCOL_DISTANCE_M = 1.0
PROTOCOL_REPETITIONS = 5
POWER_MODE_LOW = "LOW"

UNKNOWN_ID = -1

_CSV_HEADER = (
    "sample_id,label_id,label_name,yaw_deg,distance_m,repetition,power_mode,"
    + ",".join(f"s{i:03d}" for i in range(N_SAMPLES))
)
_N_COLUMNS = 7 + N_SAMPLES


class FormatError(ValueError):
    """A dataset file that does not match the documented schema."""


@dataclass(frozen=True)
class MaterialClass:
    """A material label. Ids are dense 0..K-1; id -1 is the reserved
    unknown/background class, which is never a training target."""

    id: int
    name: str

    def __post_init__(self):
        if self.id < 0 and self.id != UNKNOWN_ID:
            raise ValueError(f"material class id must be >= 0 (or {UNKNOWN_ID} for unknown), got {self.id}")
        if not self.name:
            raise ValueError("material class name must be non-empty")
        if "," in self.name or "\n" in self.name or "=" in self.name:
            raise ValueError(f"material class name {self.name!r} contains a reserved character")

    @property
    def is_unknown(self) -> bool:
        return self.id == UNKNOWN_ID


UNKNOWN = MaterialClass(UNKNOWN_ID, "unknown")


@dataclass(frozen=True, eq=False)
class Waveform:
    """One full-waveform return: exactly 256 finite, non-negative amplitudes
    in sensor units. Amplitudes never exceed the sensor's saturation ceiling;
    the simulator enforces that by clipping."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.shape != (N_SAMPLES,):
            raise ValueError(f"waveform must have exactly {N_SAMPLES} samples, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform contains non-finite samples")
        if np.any(arr < 0.0):
            raise ValueError("waveform contains negative samples")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Waveform):
            return NotImplemented
        return np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash(self.samples.tobytes())


@dataclass(frozen=True)
class CaptureMeta:
    """Provenance of one waveform: board yaw, range, repetition, power mode.

    Yaw on the 15-degree protocol grid and repetition <= 5 are only required
    for protocol-conformant data; strict loading checks them, construction
    does not.
    """

    yaw_deg: float
    distance_m: float
    repetition: int
    power_mode: str = POWER_MODE_LOW

    def __post_init__(self):
        if not np.isfinite(self.yaw_deg) or not abs(self.yaw_deg) < 90.0:
            raise ValueError(f"yaw_deg must lie in (-90, 90), got {self.yaw_deg}")
        if not np.isfinite(self.distance_m) or self.distance_m <= 0.0:
            raise ValueError(f"distance_m must be positive, got {self.distance_m}")
        if self.repetition < 1:
            raise ValueError(f"repetition must be >= 1, got {self.repetition}")
        if self.power_mode != POWER_MODE_LOW:
            raise ValueError(f"unsupported power mode {self.power_mode!r}")

    def is_protocol_conformant(self) -> bool:
        return (
            self.yaw_deg in PROTOCOL_YAW_GRID
            and 1 <= self.repetition <= PROTOCOL_REPETITIONS
        )


@dataclass(frozen=True)
class LabeledSample:
    waveform: Waveform
    meta: CaptureMeta
    label: MaterialClass

    def __post_init__(self):
        if self.label.is_unknown:
            raise ValueError("labelled samples must carry a real material class, not unknown")


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of labelled waveforms plus its class table and
    the seed the data was generated from."""

    samples: tuple[LabeledSample, ...]
    class_table: tuple[MaterialClass, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "class_table", tuple(self.class_table))
        if not self.class_table:
            raise ValueError("class table must be non-empty")
        for i, cls in enumerate(self.class_table):
            if cls.id != i:
                raise ValueError(f"class table ids must be dense 0..K-1; slot {i} holds id {cls.id}")
        names = [c.name for c in self.class_table]
        if len(set(names)) != len(names):
            raise ValueError("class table names must be unique")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        for k, s in enumerate(self.samples):
            if s.label.id >= len(self.class_table) or self.class_table[s.label.id] != s.label:
                raise ValueError(f"sample {k} label {s.label} is not in the class table")

    def __len__(self) -> int:
        return len(self.samples)

    def features(self) -> np.ndarray:
        """All waveforms stacked into an (n, 256) float64 matrix."""
        if not self.samples:
            return np.zeros((0, N_SAMPLES))
        return np.stack([s.waveform.samples for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label.id for s in self.samples], dtype=np.int64)

    def n_classes(self) -> int:
        return len(self.class_table)


def _format_float(x: float) -> str:
    # repr() is the shortest decimal string that round-trips a double
    return repr(float(x))


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` as CSV plus a ``.meta`` sidecar (seed + class table).

    Output is deterministic byte-for-byte: UTF-8, LF line endings, floats in
    shortest round-trip form.
    """
    path = Path(path)
    for k, s in enumerate(dataset.samples):
        if not np.all(np.isfinite(s.waveform.samples)):
            raise ValueError(f"sample {k} contains non-finite amplitudes; refusing to write")

    lines = [_CSV_HEADER]
    for k, s in enumerate(dataset.samples):
        fields = [
            str(k),
            str(s.label.id),
            s.label.name,
            _format_float(s.meta.yaw_deg),
            _format_float(s.meta.distance_m),
            str(s.meta.repetition),
            s.meta.power_mode,
        ]
        fields.extend(_format_float(v) for v in s.waveform.samples)
        lines.append(",".join(fields))

    meta_lines = [f"seed={dataset.seed}"]
    meta_lines.extend(f"class.{c.id}={c.name}" for c in dataset.class_table)

    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        _meta_path(path).write_text("\n".join(meta_lines) + "\n", encoding="utf-8", newline="\n")
    except OSError as exc:
        raise OSError(f"failed to write dataset to {path}: {exc}") from exc


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta")


def _read_sidecar(path: Path) -> tuple[int, tuple[MaterialClass, ...]]:
    meta_path = _meta_path(path)
    if not meta_path.exists():
        raise FormatError(f"missing sidecar file {meta_path}")
    seed = None
    classes: dict[int, str] = {}
    for lineno, raw in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{meta_path} line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        if key == "seed":
            seed = int(value)
        elif key.startswith("class."):
            classes[int(key[len("class."):])] = value
        else:
            raise FormatError(f"{meta_path} line {lineno}: unknown key {key!r}")
    if seed is None:
        raise FormatError(f"{meta_path}: missing seed")
    if sorted(classes) != list(range(len(classes))):
        raise FormatError(f"{meta_path}: class ids must be dense 0..K-1, got {sorted(classes)}")
    table = tuple(MaterialClass(i, classes[i]) for i in range(len(classes)))
    return seed, table


def read_dataset(path: str | Path, strict: bool = False) -> Dataset:
    """Inverse of :func:`write_dataset`; validates every invariant on load.

    ``strict`` additionally rejects rows whose yaw is off the protocol grid
    or whose repetition exceeds the protocol's five captures.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    seed, class_table = _read_sidecar(path)

    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != _CSV_HEADER:
        raise FormatError(f"{path}: missing or malformed header row")

    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != _N_COLUMNS:
            raise FormatError(f"{path} row {lineno}: expected {_N_COLUMNS} columns, got {len(fields)}")
        try:
            label_id = int(fields[1])
            yaw = float(fields[3])
            distance = float(fields[4])
            repetition = int(fields[5])
            amplitudes = np.array([float(v) for v in fields[7:]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path} row {lineno}: {exc}") from exc
        if not 0 <= label_id < len(class_table):
            raise FormatError(f"{path} row {lineno}: label id {label_id} outside class table of size {len(class_table)}")
        if fields[2] != class_table[label_id].name:
            raise FormatError(
                f"{path} row {lineno}: label name {fields[2]!r} does not match class table entry "
                f"{class_table[label_id].name!r}"
            )
        if strict and yaw not in PROTOCOL_YAW_GRID:
            raise FormatError(f"{path} row {lineno}: yaw {yaw} is off the protocol grid")
        if strict and not 1 <= repetition <= PROTOCOL_REPETITIONS:
            raise FormatError(f"{path} row {lineno}: repetition {repetition} outside 1..{PROTOCOL_REPETITIONS}")
        try:
            sample = LabeledSample(
                Waveform(amplitudes),
                CaptureMeta(yaw, distance, repetition, fields[6]),
                class_table[label_id],
            )
        except ValueError as exc:
            raise FormatError(f"{path} row {lineno}: {exc}") from exc
        samples.append(sample)

    return Dataset(tuple(samples), class_table, seed)


def split_by_repetition(dataset: Dataset, test_reps: Iterable[int]) -> tuple[Dataset, Dataset]:
    """Partition into (train, test): a sample lands in test iff its
    repetition index is in ``test_reps``. Disjoint and exhaustive."""
    reps = frozenset(int(r) for r in test_reps)
    if not reps:
        raise ValueError("test_reps must be non-empty")
    all_reps = frozenset(range(1, PROTOCOL_REPETITIONS + 1))
    if not reps <= all_reps:
        raise ValueError(f"test_reps must be a subset of 1..{PROTOCOL_REPETITIONS}, got {sorted(reps)}")
    if reps == all_reps:
        raise ValueError("test_reps covers every repetition; split would leave no training data")
    train = tuple(s for s in dataset.samples if s.meta.repetition not in reps)
    test = tuple(s for s in dataset.samples if s.meta.repetition in reps)
    return (
        Dataset(train, dataset.class_table, dataset.seed),
        Dataset(test, dataset.class_table, dataset.seed),
    )
