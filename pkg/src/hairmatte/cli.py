"""``hairmatte`` command line: synth, train, infer, eval, refine, recolor, bench.

Every command builds a :class:`RunConfig` from its flags; ``--config FILE``
is applied on top (file values win). Exit codes: 0 success, 2 usage error,
3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .bench import BenchError, run_bench
from .checkpoint import CheckpointError, read_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import (
    Dataset,
    DatasetError,
    ImageFormatError,
    SynthConfig,
    flip_augment,
    generate_synthetic,
    load_dataset,
    load_image,
    resize_bilinear,
    save_image,
    write_dataset,
)
from .guided_filter import GuidedFilterError, refine_mask
from .metrics import evaluate_dataset, evaluate_predictions, format_table, reports_to_csv
from .model import Model, ModelSpec, SpecError, build_model
from .recolor import RecolorError, parse_color, recolor
from .train import TrainingDiverged, fit, history_to_csv

log = logging.getLogger("hairmatte")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
IMAGE_SUFFIXES = (".ppm", ".pgm", ".png")


class UsageError(ValueError):
    pass


# -- argument parsing --------------------------------------------------------
def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = p.add_argument_group("model")
    g.add_argument("--spec", default=S, help="model spec as a JSON file or inline JSON object")
    g.add_argument("--variant", default=S, choices=["hairsegnet", "hairmattenet"])
    g.add_argument("--width", type=float, default=S, help="width multiplier in (0, 1]")
    g.add_argument("--input-size", type=int, default=S, help="square input side, a multiple of 32")
    g.add_argument("--classes", type=int, default=S, help="number of output classes")
    g.add_argument("--decoder-depth", type=int, default=S)
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=S)
    g.add_argument("--batch", type=int, default=S)
    g.add_argument("--w-gradcons", type=float, default=S, help="weight of the gradient consistency loss")
    g.add_argument("--l2", type=float, default=S, help="L2 weight for dense and pointwise kernels")
    g.add_argument("--hair-class", type=int, default=S)
    g.add_argument("--flip", action="store_true", default=S, help="append horizontally flipped training images")
    g = p.add_argument_group("guided filter")
    g.add_argument("--refine", action="store_true", default=S, help="guided-filter the hair probability")
    g.add_argument("--radius", type=int, default=S)
    g.add_argument("--eps", type=float, default=S)
    g.add_argument("--guide-mode", choices=["gray", "rgb"], default=S)
    g = p.add_argument_group("io")
    g.add_argument("--data", default=S, help="dataset directory (manifest.json, images/, masks/)")
    g.add_argument("--split", default=S)
    g.add_argument("--checkpoint", default=S)
    g.add_argument("--out", default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--config", default=S, help="JSON RunConfig file; its values override flags")
    g.add_argument("--print-config", action="store_true", help="print the canonical config and exit")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="hairmatte", description="Real-time hair segmentation and matting on CPU.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a procedural synthetic dataset")
    _common(p)
    p.add_argument("--count", type=int, default=S)
    p.add_argument("--size", type=int, default=S)
    p.add_argument("--val", type=int, default=S)
    p.add_argument("--test", type=int, default=S)
    p.add_argument("--coarse", type=int, default=S, help="coarse-label radius for train/val masks")

    p = sub.add_parser("train", help="train a model and write checkpoint, history and summary")
    _common(p)

    p = sub.add_parser("infer", help="write 8-bit hair probability maps")
    _common(p)
    p.add_argument("inputs", nargs="*", default=S, help="image files or directories")

    p = sub.add_parser("eval", help="segmentation and matting metrics on a labeled split")
    _common(p)
    p.add_argument("--predictions", default=S, help="score precomputed maps <id>.pgm/png instead of a checkpoint")

    p = sub.add_parser("refine", help="guided-filter a probability map with its image as guide")
    _common(p)
    p.add_argument("--image", default=S)
    p.add_argument("--mask", default=S)

    p = sub.add_parser("recolor", help="recolor hair using a soft matte")
    _common(p)
    p.add_argument("--image", default=S)
    p.add_argument("--mask", default=S)
    p.add_argument("--color", default=S, help="#rrggbb or r,g,b in [0, 1]")

    p = sub.add_parser("bench", help="time forward passes and report MACs")
    _common(p)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--warmup", type=int, default=S)
    return parser


_MODEL_FLAGS = {"variant": "variant", "width": "width_multiplier", "input_size": "input_size", "classes": "num_classes", "decoder_depth": "decoder_depth"}
_FLAT_FLAGS = {
    "epochs": ("epochs",), "batch": ("batch",), "w_gradcons": ("loss", "w"), "l2": ("loss", "l2_weight"),
    "hair_class": ("loss", "hair_class_index"), "flip": ("flip",), "refine": ("refine", "enabled"),
    "radius": ("refine", "radius"), "eps": ("refine", "eps"), "guide_mode": ("refine", "guide_mode"),
    "data": ("data",), "split": ("split",), "checkpoint": ("checkpoint",), "out": ("out",), "seed": ("seed",),
    "inputs": ("inputs",), "predictions": ("predictions",), "image": ("image",), "mask": ("mask",),
    "color": ("color",), "iters": ("bench_iters",), "warmup": ("bench_warmup",), "count": ("synth", "count"),
    "size": ("synth", "size"), "val": ("synth", "val"), "test": ("synth", "test"), "coarse": ("synth", "coarse_radius"),
}


def _spec_overrides(text: str) -> dict:
    path = Path(text)
    raw = path.read_text() if not text.lstrip().startswith("{") and path.exists() else text
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--spec is neither a readable JSON file nor inline JSON: {text!r}") from exc
    if not isinstance(data, dict):
        raise UsageError("--spec must describe a JSON object")
    return data


def config_from_args(ns: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """RunConfig from parsed flags plus the names of model fields set explicitly."""
    given = vars(ns)
    over: dict = {"command": ns.command, "model": {}}
    if "spec" in given:
        over["model"].update(_spec_overrides(given["spec"]))
    for flag, key in _MODEL_FLAGS.items():
        if flag in given:
            over["model"][key] = given[flag]
    for flag, path in _FLAT_FLAGS.items():
        if flag in given:
            node = over
            for k in path[:-1]:
                node = node.setdefault(k, {})
            node[path[-1]] = given[flag]
    explicit = set(over["model"])
    cfg = RunConfig().merged(over)
    if "config" in given:
        try:
            file_data = json.loads(Path(given["config"]).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read --config {given['config']}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config {given['config']} is not valid JSON: {exc}") from exc
        if not isinstance(file_data, dict):
            raise ConfigError("--config must hold a JSON object")
        file_data.pop("command", None)
        explicit |= set(file_data.get("model", {}))
        cfg = cfg.merged(file_data)
    return cfg, explicit


# -- helpers -----------------------------------------------------------------
def _require(value, flag: str):
    if value in (None, "", ()):
        raise UsageError(f"{flag} is required")
    return value


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(_require(cfg.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(cfg: RunConfig, explicit: set[str]) -> Model:
    path = _require(cfg.checkpoint, "--checkpoint")
    if not Path(path).exists():
        raise DatasetError(f"checkpoint {path} does not exist")
    model = read_checkpoint(path).model
    wanted = asdict(cfg.model)
    have = asdict(model.spec)
    diff = {k: (have[k], wanted[k]) for k in explicit if have[k] != wanted[k]}
    if diff:
        raise UsageError(
            f"checkpoint {path} has spec {model.spec.to_text()} but the requested spec is "
            f"{cfg.model.to_text()} (differs in {sorted(diff)})"
        )
    return model


def _load_split(cfg: RunConfig, split: str, size: int) -> Dataset:
    root = _require(cfg.data, "--data")
    ds = load_dataset(root, split, size)
    if len(ds) == 0:
        raise DatasetError(f"split {split!r} of {root} is empty")
    return ds


def _rgb(img: np.ndarray) -> np.ndarray:
    return np.repeat(img, 3, axis=0) if img.shape[0] == 1 else img


def _expand_inputs(inputs) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES))
        elif p.exists():
            paths.append(p)
        else:
            raise DatasetError(f"input {item} does not exist")
    return paths


# -- commands ----------------------------------------------------------------
def cmd_synth(cfg: RunConfig, explicit: set[str]) -> int:
    o = cfg.synth
    if o.val + o.test >= o.count:
        raise UsageError("--count must exceed --val + --test")
    exact = generate_synthetic(SynthConfig(seed=cfg.seed, count=o.count, size=o.size))
    n_train = o.count - o.val - o.test
    labels = exact
    if o.coarse_radius:
        labels = generate_synthetic(SynthConfig(seed=cfg.seed, count=n_train + o.val, size=o.size, coarse_radius=o.coarse_radius))
    splits = {
        "train": labels.subset(range(n_train)),
        "val": labels.subset(range(n_train, n_train + o.val)),
        "test": exact.subset(range(n_train + o.val, o.count)),
    }
    root = _out_dir(cfg)
    write_dataset(root, splits)
    print(f"wrote {o.count} samples ({n_train} train / {o.val} val / {o.test} test) to {root}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, explicit: set[str]) -> int:
    spec = cfg.model.validate()
    train = _load_split(cfg, "train", spec.input_size)
    val = _load_split(cfg, "val", spec.input_size)
    if train.num_classes != spec.num_classes:
        raise UsageError(f"dataset has {train.num_classes} classes but the spec asks for {spec.num_classes}")
    if cfg.flip:
        train = flip_augment(train)
    out = _out_dir(cfg)
    model = build_model(spec, seed=cfg.seed)
    result = fit(model, train, val, cfg.epochs, cfg.batch, cfg.loss, cfg.seed, cfg.optimizer.build())
    meta = {"best_epoch": result.best_epoch, "epochs": cfg.epochs, "seed": cfg.seed, "loss": asdict(cfg.loss)}
    save_checkpoint(result.model, out / "model.ckpt", meta, result.optimizer.state_arrays())
    (out / "history.csv").write_text(history_to_csv(result.history))
    (out / "config.json").write_text(cfg.to_text())
    reports = [evaluate_dataset(result.model, val, hair_class_index=cfg.loss.hair_class_index, label=spec.variant)]
    if cfg.refine.enabled:
        reports.append(evaluate_dataset(result.model, val, cfg.refine.params(), cfg.loss.hair_class_index, label=f"{spec.variant} + GF"))
    table = format_table(reports)
    (out / "summary.txt").write_text(f"best epoch {result.best_epoch} of {cfg.epochs} (validation split)\n{table}\n")
    (out / "metrics.csv").write_text(reports_to_csv(reports))
    print(table)
    return EXIT_OK


def cmd_infer(cfg: RunConfig, explicit: set[str]) -> int:
    model = _load_model(cfg, explicit)
    paths = _expand_inputs(_require(cfg.inputs, "at least one input"))
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        raise UsageError("input file names must be unique (outputs are named after them)")
    out = _out_dir(cfg)
    s = model.spec.input_size
    hair = cfg.loss.hair_class_index
    for path in paths:
        img = _rgb(load_image(path))
        x = resize_bilinear(img, s)
        prob = model.predict(x[None].astype(model.dtype))[0, hair]
        if cfg.refine.enabled:
            prob = refine_mask(x, prob, cfg.refine.params())
        prob = np.clip(resize_bilinear(prob[None], img.shape[1:]), 0.0, 1.0)
        target = out / f"{path.stem}.pgm"
        save_image(target, prob)
        print(target)
    return EXIT_OK


def cmd_eval(cfg: RunConfig, explicit: set[str]) -> int:
    split = cfg.split or "test"
    params = cfg.refine.params() if cfg.refine.enabled else None
    if cfg.predictions:
        ds = _load_split(cfg, split, None)
        pred_dir = Path(cfg.predictions)
        probs = []
        for ident in ds.ids:
            found = [pred_dir / f"{ident}{ext}" for ext in IMAGE_SUFFIXES if (pred_dir / f"{ident}{ext}").exists()]
            if not found:
                raise DatasetError(f"no prediction for sample {ident} in {pred_dir}")
            probs.append(load_image(found[0])[0])
        images, masks = ds.arrays()
        gt = (np.rint(masks[:, 0]) == cfg.loss.hair_class_index).astype(np.float32)
        reports = [evaluate_predictions(images, probs, gt, ds.ids, label="predictions")]
        if params:
            reports.append(evaluate_predictions(images, probs, gt, ds.ids, params, label="predictions + GF"))
    else:
        model = _load_model(cfg, explicit)
        ds = _load_split(cfg, split, model.spec.input_size)
        name = model.spec.variant
        reports = [evaluate_dataset(model, ds, hair_class_index=cfg.loss.hair_class_index, label=name)]
        if params:
            reports.append(evaluate_dataset(model, ds, params, cfg.loss.hair_class_index, label=f"{name} + GF"))
    print(format_table(reports))
    if cfg.out:
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.out).write_text(reports_to_csv(reports))
    return EXIT_OK


def _image_and_mask(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    img = _rgb(load_image(_require(cfg.image, "--image")))
    mask = load_image(_require(cfg.mask, "--mask"))[0]
    if mask.shape != img.shape[1:]:
        raise DatasetError(f"mask {mask.shape} and image {img.shape[1:]} differ in size")
    return img, mask


def cmd_refine(cfg: RunConfig, explicit: set[str]) -> int:
    img, mask = _image_and_mask(cfg)
    refined = refine_mask(img, mask, cfg.refine.params())
    save_image(_require(cfg.out, "--out"), refined)
    print(cfg.out)
    return EXIT_OK


def cmd_recolor(cfg: RunConfig, explicit: set[str]) -> int:
    img, mask = _image_and_mask(cfg)
    try:
        color = parse_color(cfg.color)
    except RecolorError as exc:
        raise UsageError(str(exc)) from exc
    save_image(_require(cfg.out, "--out"), recolor(img, mask, color))
    print(cfg.out)
    return EXIT_OK


def cmd_bench(cfg: RunConfig, explicit: set[str]) -> int:
    if cfg.checkpoint:
        model = _load_model(cfg, explicit)
    else:
        model = build_model(cfg.model, seed=cfg.seed)
    report = run_bench(model, cfg.bench_iters, cfg.bench_warmup)
    print(report.to_text())
    if cfg.out:
        Path(cfg.out).write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


COMMAND_FUNCS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "refine": cmd_refine,
    "recolor": cmd_recolor,
    "bench": cmd_bench,
}


def _validate(cfg: RunConfig) -> None:
    cfg.model.validate()
    try:
        cfg.refine.params()
    except GuidedFilterError as exc:
        raise UsageError(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if ns.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg, explicit = config_from_args(ns)
        if ns.print_config:
            sys.stdout.write(cfg.to_text())
            return EXIT_OK
        _validate(cfg)
        return COMMAND_FUNCS[cfg.command](cfg, explicit)
    except (UsageError, ConfigError, SpecError) as exc:
        print(f"hairmatte: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, ImageFormatError, CheckpointError, RecolorError, OSError) as exc:
        print(f"hairmatte: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError, GuidedFilterError, BenchError) as exc:
        print(f"hairmatte: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
