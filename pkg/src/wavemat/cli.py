"""Command-line surface: generate, train, evaluate, experiment, importance.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 data or validation error. Every subcommand is deterministic given its
flags and seeds; all CSV outputs are byte-stable across reruns.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from .core import Dataset, read_dataset, split_by_repetition, write_dataset
from .evaluation import (
    ANGLE_MODES,
    EXPERIMENT_NAMES,
    MODEL_NAMES,
    PRESET_MATERIALS,
    default_experiment_spec,
    experiment_angles,
    importance_region_masses,
    importance_report,
    iou_report,
    confusion,
    forest_params_from_config,
    run_experiment,
)
from .forest import Forest, load_forest, predict_many, save_forest, train_forest
from .rng import derive_seed
from .simgen import ProtocolSpec, generate_dataset, material_bank_from_config, sensor_from_config
from .tcn import TcnModel, load_tcn, save_tcn, train_tcn
from .tcn import predict_many as tcn_predict_many

_PRESET_KEYS = {"pair": "pair", "all-materials": "all_materials", "colours": "colours"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's default 2
        raise _UsageError(message)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _load_model(path: Path):
    with open(path, "rb") as f:
        magic = f.read(2)
    return load_tcn(path) if magic == b"PK" else load_forest(path)


def _resolve_seed(args, config) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.get_int(config, "experiment.seed")


def _parse_reps(spec: str) -> frozenset:
    try:
        return frozenset(int(r) for r in spec.split(",") if r.strip())
    except ValueError:
        raise _UsageError(f"cannot parse repetition list {spec!r}") from None


def _protocol_from_args(args, config, seed: int) -> ProtocolSpec:
    preset = _PRESET_KEYS[args.preset]
    bank = {m.name: m for m in material_bank_from_config(config)}
    missing = [n for n in PRESET_MATERIALS[preset] if n not in bank]
    if missing:
        raise ValueError(f"config lacks materials {missing} for preset {args.preset!r}")
    return ProtocolSpec(
        materials=tuple(bank[n] for n in PRESET_MATERIALS[preset]),
        angles_deg=experiment_angles(args.angles),
        distance_m=args.distance if args.distance is not None else cfg.get_float(config, "protocol.distance_m"),
        repetitions=args.repetitions if args.repetitions is not None else cfg.get_int(config, "protocol.repetitions"),
        seed=seed,
    )


def _split_dataset(dataset: Dataset, reps: frozenset, which: str) -> Dataset:
    if which == "all":
        return dataset
    train, test = split_by_repetition(dataset, reps)
    return train if which == "train" else test


def _evaluate_model(model, dataset: Dataset):
    if isinstance(model, TcnModel):
        pred_ids = tcn_predict_many(model, dataset.features())
    else:
        pred_ids = predict_many(model, dataset.features())
    preds = [dataset.class_table[i] for i in pred_ids]
    truth = [s.label for s in dataset.samples]
    return iou_report(confusion(preds, truth))


def cmd_generate(args) -> int:
    config = cfg.load_config(args.config)
    seed = _resolve_seed(args, config)
    dataset = generate_dataset(_protocol_from_args(args, config, seed), sensor_from_config(config))
    write_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = cfg.load_config(args.config)
    seed = _resolve_seed(args, config)
    dataset = read_dataset(args.dataset)
    reps = _parse_reps(args.test_reps)
    train, test = split_by_repetition(dataset, reps)
    out = Path(args.out)

    if args.model == "rf":
        params = forest_params_from_config(config, seed=seed)
        if args.trees is not None:
            params = params.__class__(**{**params.__dict__, "n_trees": args.trees})
        if args.max_depth is not None:
            params = params.__class__(**{**params.__dict__, "max_depth": args.max_depth})
        model = train_forest(train, params)
        save_forest(model, out)
    else:
        from .evaluation import tcn_params_from_config

        params = tcn_params_from_config(config, seed=seed)
        if args.iterations is not None:
            params = params.__class__(**{**params.__dict__, "iterations": args.iterations})
        if args.batch_size is not None:
            params = params.__class__(**{**params.__dict__, "batch_size": args.batch_size})
        sensor = sensor_from_config(config)
        model = train_tcn(train, params, a_sat=sensor.a_sat)
        save_tcn(model, out)
        log_path = Path(args.loss_log) if args.loss_log else out.with_suffix(out.suffix + ".loss.csv")
        _write_text(log_path, "".join(f"{step},{_fmt(loss)}\n" for step, loss in model.loss_log))

    train_miou = _evaluate_model(model, train).miou
    test_miou = _evaluate_model(model, test).miou
    print(f"checkpoint={out}")
    print(f"train_miou={_fmt(train_miou)}")
    print(f"test_miou={_fmt(test_miou)}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = read_dataset(args.dataset)
    part = _split_dataset(dataset, _parse_reps(args.test_reps), args.split)
    model = _load_model(Path(args.model_file))
    report = _evaluate_model(model, part)

    out = Path(args.out)
    per_class = ["class_id,class_name,iou"]
    for cid in sorted(report.per_class_iou):
        per_class.append(f"{cid},{dataset.class_table[cid].name},{_fmt(report.per_class_iou[cid])}")
    _write_text(out / "per_class.csv", "\n".join(per_class) + "\n")
    _write_text(out / "summary.csv", f"metric,value\nmiou,{_fmt(report.miou)}\n")
    print(f"miou={_fmt(report.miou)}")
    return 0


def _grid_cells(args) -> list[tuple[str, str, str]]:
    if args.grid == "full":
        return [(n, a, m) for n in EXPERIMENT_NAMES for a in ANGLE_MODES for m in MODEL_NAMES]
    if args.experiment is None or args.angles is None or args.model is None:
        raise _UsageError("either --grid full or all of --experiment/--angles/--model are required")
    return [(_PRESET_KEYS[args.experiment], args.angles, args.model)]


def _run_dir(out: Path, config, cells, seed: int) -> Path:
    digest = hashlib.sha256()
    digest.update(cfg.config_text(config).encode("utf-8"))
    digest.update(repr(cells).encode("utf-8"))
    digest.update(str(seed).encode("utf-8"))
    return out / f"run-{digest.hexdigest()[:12]}"


def cmd_experiment(args) -> int:
    config = cfg.load_config(args.config)
    seed = _resolve_seed(args, config)
    cells = _grid_cells(args)
    run_dir = _run_dir(Path(args.out), config, cells, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_text(run_dir / "config.cfg", cfg.config_text(config))

    rows = ["experiment,model,angles,miou"]
    for name, angles, model_name in cells:
        spec = default_experiment_spec(name, angles, model_name, config)
        if args.seed is not None:
            spec = spec.__class__(**{**spec.__dict__, "seed": seed})
        result = run_experiment(spec, config)
        rows.append(f"{name},{model_name},{angles},{_fmt(result.row['miou'])}")
        per_class = ["class_id,class_name,iou"]
        for cid in sorted(result.report.per_class_iou):
            per_class.append(
                f"{cid},{result.test.class_table[cid].name},{_fmt(result.report.per_class_iou[cid])}"
            )
        _write_text(run_dir / f"per_class_{name}_{model_name}_{angles}.csv", "\n".join(per_class) + "\n")
        if model_name == "tcn":
            _write_text(
                run_dir / f"loss_{name}_{angles}.csv",
                "".join(f"{step},{_fmt(loss)}\n" for step, loss in result.model.loss_log),
            )
        print(rows[-1])

    _write_text(run_dir / "results.csv", "\n".join(rows) + "\n")
    print(f"results written to {run_dir}")
    return 0


def cmd_importance(args) -> int:
    config = cfg.load_config(args.config)
    seed = _resolve_seed(args, config)
    if args.dataset is not None:
        dataset = read_dataset(args.dataset)
    else:
        dataset = generate_dataset(_protocol_from_args(args, config, seed), sensor_from_config(config))
    train, _ = split_by_repetition(dataset, _parse_reps(args.test_reps))
    params = forest_params_from_config(config, seed=derive_seed(seed, "importance"))
    model = train_forest(train, params)

    out = Path(args.out)
    rows = ["index,importance"]
    rows.extend(f"{i},{_fmt(v)}" for i, v in importance_report(model))
    _write_text(out / "importance.csv", "\n".join(rows) + "\n")

    if args.waveforms_out:
        X = dataset.features()
        y = dataset.labels()
        names = [c.name for c in dataset.class_table]
        means = [X[y == cid].mean(axis=0) for cid in range(len(names))]
        wrows = ["index," + ",".join(names)]
        for i in range(X.shape[1]):
            wrows.append(f"{i}," + ",".join(_fmt(m[i]) for m in means))
        _write_text(out / "waveforms.csv", "\n".join(wrows) + "\n")

    bank = {m.name: m for m in material_bank_from_config(config)}
    used = [bank[c.name] for c in dataset.class_table if c.name in bank]
    if used:
        masses = importance_region_masses(model, sensor_from_config(config), used)
        print(f"pre_onset_mass={_fmt(masses['pre_onset_mass'])}")
        print(f"argmax_index={int(masses['argmax_index'])}")
    print(f"importance written to {out / 'importance.csv'}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="wavemat", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", default=None, help="key-value config file (defaults to the packaged one)")
        p.add_argument("--seed", type=int, default=None, help="base seed (defaults to experiment.seed from config)")
        p.add_argument("--ci", action="store_true", help="CI mode: --seed must be given explicitly")

    p = sub.add_parser("generate", help="generate a synthetic labelled dataset")
    common(p)
    p.add_argument("--preset", choices=sorted(_PRESET_KEYS), required=True)
    p.add_argument("--angles", choices=ANGLE_MODES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--distance", type=float, default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a classifier on a dataset file")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=MODEL_NAMES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-reps", default="5")
    p.add_argument("--trees", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--loss-log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model-file", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-reps", default="5")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the benchmark grid")
    common(p)
    p.add_argument("--grid", choices=("full",), default=None)
    p.add_argument("--experiment", choices=sorted(_PRESET_KEYS), default=None)
    p.add_argument("--angles", choices=ANGLE_MODES, default=None)
    p.add_argument("--model", choices=MODEL_NAMES, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("importance", help="split-frequency feature importance report")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--preset", choices=sorted(_PRESET_KEYS), default="all-materials")
    p.add_argument("--angles", choices=ANGLE_MODES, default="all")
    p.add_argument("--out", required=True)
    p.add_argument("--test-reps", default="5")
    p.add_argument("--distance", type=float, default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--waveforms-out", action="store_true")
    p.set_defaults(func=cmd_importance)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            raise _UsageError("a subcommand is required (generate, train, evaluate, experiment, importance)")
        if args.ci and args.seed is None:
            raise _UsageError("--seed is mandatory in CI mode")
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
