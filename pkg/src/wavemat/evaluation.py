"""IOU metrics, the three-way material benchmark, importance reports, and
the material-channel segmentation ablation.

mIOU is the unweighted mean of per-class TP/(TP+FP+FN); unknown-background
ground truth is skipped entirely and classes with no counts at all are left
out of the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import config as cfg
from .core import PROTOCOL_YAW_GRID, Dataset, MaterialClass, split_by_repetition
from .forest import Forest, ForestParams, feature_importance, fit_forest, predict_many, train_forest
from .rng import derive_seed, generator
from .simgen import ProtocolSpec, SensorModel, material_bank_from_config, pre_onset_cutoff, sensor_from_config
from .tcn import TcnModel, TcnParams, train_tcn
from .tcn import predict_many as tcn_predict_many

EXPERIMENT_NAMES = ("pair", "all_materials", "colours")
ANGLE_MODES = ("zero", "all")
MODEL_NAMES = ("rf", "tcn")

PRESET_MATERIALS = {
    "pair": ("aluminum", "black_cloth"),
    "all_materials": ("aluminum", "wood", "black_cardboard", "black_cloth"),
    "colours": (
        "cardboard_black",
        "cardboard_white",
        "cardboard_blue",
        "cardboard_orange",
        "cardboard_yellow",
    ),
}


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class true-positive / false-positive / false-negative tallies over
    the non-unknown ground-truth positions."""

    class_ids: tuple[int, ...]
    tp: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]
    n_evaluated: int

    def as_dict(self) -> dict[int, tuple[int, int, int]]:
        return {c: (self.tp[i], self.fp[i], self.fn[i]) for i, c in enumerate(self.class_ids)}


@dataclass(frozen=True)
class IouReport:
    per_class_iou: dict[int, float]
    miou: float


def confusion(preds: list[MaterialClass], truth: list[MaterialClass]) -> ConfusionCounts:
    """Multi-class counts; positions whose truth is unknown are skipped."""
    if len(preds) != len(truth):
        raise ValueError(f"prediction/truth length mismatch: {len(preds)} vs {len(truth)}")
    tp: dict[int, int] = {}
    fp: dict[int, int] = {}
    fn: dict[int, int] = {}

    def touch(cid: int):
        tp.setdefault(cid, 0)
        fp.setdefault(cid, 0)
        fn.setdefault(cid, 0)

    n_evaluated = 0
    for p, t in zip(preds, truth):
        if t.is_unknown:
            continue
        n_evaluated += 1
        touch(t.id)
        if not p.is_unknown:
            touch(p.id)
        if p.id == t.id:
            tp[t.id] += 1
        else:
            fn[t.id] += 1
            if not p.is_unknown:
                fp[p.id] += 1
    ids = tuple(sorted(tp))
    return ConfusionCounts(
        class_ids=ids,
        tp=tuple(tp[c] for c in ids),
        fp=tuple(fp[c] for c in ids),
        fn=tuple(fn[c] for c in ids),
        n_evaluated=n_evaluated,
    )


def iou_report(counts: ConfusionCounts) -> IouReport:
    """Per-class IOU = TP/(TP+FP+FN); zero-denominator classes are excluded
    from the mean (they never appeared in either predictions or truth)."""
    per_class: dict[int, float] = {}
    for i, cid in enumerate(counts.class_ids):
        denom = counts.tp[i] + counts.fp[i] + counts.fn[i]
        if denom > 0:
            per_class[cid] = counts.tp[i] / denom
    if not per_class:
        raise ValueError("confusion counts are all zero; IOU undefined")
    return IouReport(per_class_iou=per_class, miou=float(np.mean(list(per_class.values()))))


@dataclass(frozen=True)
class ExperimentSpec:
    """One cell of the benchmark: material set x angle mode x model."""

    name: str
    angles: str
    model: str
    seed: int
    forest_params: ForestParams
    tcn_params: TcnParams
    test_repetitions: frozenset = frozenset({5})

    def __post_init__(self):
        if self.name not in EXPERIMENT_NAMES:
            raise ValueError(f"experiment name must be one of {EXPERIMENT_NAMES}, got {self.name!r}")
        if self.angles not in ANGLE_MODES:
            raise ValueError(f"angles must be one of {ANGLE_MODES}, got {self.angles!r}")
        if self.model not in MODEL_NAMES:
            raise ValueError(f"model must be one of {MODEL_NAMES}, got {self.model!r}")


@dataclass
class ExperimentResult:
    report: IouReport
    row: dict
    model: object  # Forest or TcnModel
    train: Dataset
    test: Dataset


def experiment_angles(mode: str) -> tuple[float, ...]:
    return (0.0,) if mode == "zero" else tuple(PROTOCOL_YAW_GRID)


def experiment_protocol(spec: ExperimentSpec, config: dict[str, str]) -> ProtocolSpec:
    bank = {m.name: m for m in material_bank_from_config(config)}
    missing = [n for n in PRESET_MATERIALS[spec.name] if n not in bank]
    if missing:
        raise ValueError(f"config lacks materials {missing} needed by preset {spec.name!r}")
    return ProtocolSpec(
        materials=tuple(bank[n] for n in PRESET_MATERIALS[spec.name]),
        angles_deg=experiment_angles(spec.angles),
        distance_m=cfg.get_float(config, "protocol.distance_m"),
        repetitions=cfg.get_int(config, "protocol.repetitions"),
        seed=derive_seed(spec.seed, spec.name, spec.angles),
    )


def run_experiment(spec: ExperimentSpec, config: dict[str, str] | None = None) -> ExperimentResult:
    """Generate the preset's dataset, split by repetition, train the chosen
    model, and score the held-out repetition."""
    from .simgen import generate_dataset  # local import to keep module load light

    if config is None:
        config = cfg.load_config()
    sensor = sensor_from_config(config)
    dataset = generate_dataset(experiment_protocol(spec, config), sensor)
    train, test = split_by_repetition(dataset, spec.test_repetitions)

    if spec.model == "rf":
        model = train_forest(train, spec.forest_params)
        pred_ids = predict_many(model, test.features())
    else:
        model = train_tcn(train, spec.tcn_params, a_sat=sensor.a_sat)
        pred_ids = tcn_predict_many(model, test.features())

    preds = [test.class_table[i] for i in pred_ids]
    truth = [s.label for s in test.samples]
    report = iou_report(confusion(preds, truth))
    row = {
        "experiment": spec.name,
        "model": spec.model,
        "angles": spec.angles,
        "miou": report.miou,
    }
    return ExperimentResult(report=report, row=row, model=model, train=train, test=test)


def forest_params_from_config(config: dict[str, str], seed: int, prefix: str = "experiment.forest.") -> ForestParams:
    return ForestParams(
        n_trees=cfg.get_int(config, prefix + "n_trees"),
        max_depth=cfg.get_int(config, prefix + "max_depth"),
        features_per_node=cfg.get_int(config, prefix + "features_per_node"),
        min_samples_leaf=cfg.get_int(config, prefix + "min_samples_leaf"),
        min_split_margin=cfg.get_float(config, prefix + "min_split_margin"),
        seed=seed,
    )


def tcn_params_from_config(config: dict[str, str], seed: int, prefix: str = "experiment.tcn.") -> TcnParams:
    return TcnParams(
        kernel_size=cfg.get_int(config, prefix + "kernel_size"),
        dropout=cfg.get_float(config, prefix + "dropout"),
        channel_sizes=cfg.get_int_list(config, prefix + "channel_sizes"),
        batch_size=cfg.get_int(config, prefix + "batch_size"),
        iterations=cfg.get_int(config, prefix + "iterations"),
        learning_rate=cfg.get_float(config, prefix + "learning_rate"),
        readout=cfg.get_str(config, prefix + "readout"),
        arch=cfg.get_str(config, prefix + "arch"),
        seed=seed,
    )


def default_experiment_spec(name: str, angles: str, model: str, config: dict[str, str] | None = None) -> ExperimentSpec:
    if config is None:
        config = cfg.load_config()
    seed = cfg.get_int(config, "experiment.seed")
    test_reps = frozenset({cfg.get_int(config, "experiment.test_repetitions")})
    return ExperimentSpec(
        name=name,
        angles=angles,
        model=model,
        seed=seed,
        forest_params=forest_params_from_config(config, seed=derive_seed(seed, name, angles, model, "rf")),
        tcn_params=tcn_params_from_config(config, seed=derive_seed(seed, name, angles, model, "tcn")),
        test_repetitions=test_reps,
    )


def importance_report(forest: Forest) -> list[tuple[int, float]]:
    """(index, importance) rows for every feature bin; importances sum to 1."""
    imp = feature_importance(forest)
    return [(i, float(v)) for i, v in enumerate(imp)]


def importance_region_masses(forest: Forest, sensor: SensorModel, materials) -> dict[str, float]:
    """Importance mass in the pre-onset head versus the rest, plus argmax bin."""
    imp = feature_importance(forest)
    cut = pre_onset_cutoff(sensor, materials)
    return {
        "pre_onset_end": float(cut),
        "pre_onset_mass": float(imp[: cut + 1].sum()),
        "argmax_index": float(int(np.argmax(imp))),
    }


# Simulated material association for twenty indoor semantic classes.
_SEMANTIC_TO_MATERIAL_NAME = {
    "Wall": "Drywall",
    "Floor": "Vinyl Laminate",
    "Counter": "Granite",
    "Window": "Glass",
    "Picture": "Paper",
    "Bathtub": "Enamel",
    "Toilet": "Enamel",
    "Sink": "Enamel",
    "Refrigerator": "Enamel",
    "Bed": "Fabric",
    "Sofa": "Fabric",
    "Curtain": "Fabric",
    "Shower Curtain": "Fabric",
    "Cabinet": "Wood",
    "Chair": "Wood",
    "Table": "Wood",
    "Door": "Wood",
    "Bookshelf": "Wood",
    "Desk": "Wood",
    "Other Furniture": "Wood",
}

_MATERIAL_ORDER = ("Drywall", "Vinyl Laminate", "Granite", "Glass", "Paper", "Enamel", "Fabric", "Wood")
SEGMENTATION_MATERIALS = {name: MaterialClass(i, name) for i, name in enumerate(_MATERIAL_ORDER)}


def map_semantic_to_material(semantic_label: str) -> MaterialClass:
    """Material class simulated for an indoor semantic label."""
    try:
        return SEGMENTATION_MATERIALS[_SEMANTIC_TO_MATERIAL_NAME[semantic_label]]
    except KeyError:
        raise ValueError(f"unknown semantic label {semantic_label!r}") from None


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic point scene: per-class colour Gaussians in RGB space.

    The default scene makes two class pairs nearly colour-identical (wall vs
    door, floor vs counter) while their simulated materials differ, so a
    material channel carries real signal.
    """

    classes: tuple[str, ...] = ("Wall", "Door", "Floor", "Counter", "Bed", "Sofa")
    colour_means: tuple[tuple[float, float, float], ...] = (
        (0.80, 0.78, 0.74),
        (0.78, 0.76, 0.72),
        (0.45, 0.40, 0.35),
        (0.43, 0.42, 0.37),
        (0.30, 0.45, 0.65),
        (0.55, 0.35, 0.30),
    )
    colour_std: float = 0.06
    points_per_class: int = 120
    train_fraction: float = 0.5
    forest_params: ForestParams = ForestParams(n_trees=50, max_depth=50, features_per_node=4, min_samples_leaf=1)

    def __post_init__(self):
        if len(self.classes) != len(self.colour_means):
            raise ValueError("one colour mean per class required")
        if self.points_per_class < 4:
            raise ValueError("points_per_class must be >= 4")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


def scene_spec_from_config(config: dict[str, str]) -> SceneSpec:
    return SceneSpec(
        colour_std=cfg.get_float(config, "ablation.colour_std"),
        points_per_class=cfg.get_int(config, "ablation.points_per_class"),
        train_fraction=cfg.get_float(config, "ablation.train_fraction"),
        forest_params=forest_params_from_config(config, seed=0, prefix="ablation.forest."),
    )


def segmentation_ablation(scene_seed: int, with_material: bool, scene: SceneSpec | None = None) -> float:
    """Test mIOU of a point-wise semantic classifier on a synthetic scene,
    trained on colour features, optionally with the material channel."""
    if scene is None:
        scene = SceneSpec()
    rng = generator(derive_seed(scene_seed, "scene"))
    n = scene.points_per_class
    colours = []
    materials = []
    labels = []
    for ci, name in enumerate(scene.classes):
        colours.append(np.asarray(scene.colour_means[ci]) + rng.normal(0.0, scene.colour_std, (n, 3)))
        materials.append(np.full(n, map_semantic_to_material(name).id, dtype=np.float64))
        labels.append(np.full(n, ci, dtype=np.int64))
    X = np.concatenate(colours)
    if with_material:
        X = np.hstack([X, np.concatenate(materials)[:, None]])
    y = np.concatenate(labels)

    # deterministic per-class split so both feature settings share it
    n_train = int(round(scene.train_fraction * n))
    split_rng = generator(derive_seed(scene_seed, "split"))
    train_mask = np.zeros(X.shape[0], dtype=bool)
    for ci in range(len(scene.classes)):
        perm = split_rng.permutation(n)
        train_mask[ci * n + perm[:n_train]] = True

    table = tuple(MaterialClass(i, name) for i, name in enumerate(scene.classes))
    params = replace(scene.forest_params, seed=derive_seed(scene_seed, "forest"))
    model = fit_forest(X[train_mask], y[train_mask], table, params)
    pred_ids = predict_many(model, X[~train_mask])
    preds = [table[i] for i in pred_ids]
    truth = [table[i] for i in y[~train_mask]]
    return iou_report(confusion(preds, truth)).miou
