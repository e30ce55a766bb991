"""
crossnet command-line entry point.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error.
"""
import argparse
import logging
import math
import shutil
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from crossnet.config.run_config import RunConfig
from crossnet.config.settings import settings
from crossnet.engine.tensor import set_default_dtype
from crossnet.engine.tnsr import save_tensor
from crossnet.exceptions import ConfigError, CrossNetError
from crossnet.models.config_models import CrossViewConfig
from crossnet.models.label_models import LabelMap
from crossnet.network.crossview import CrossViewModel, load_model, save_model
from crossnet.services import geocalib, labelviz, trainer, verify
from crossnet.services.logging_service import logging_service
from crossnet.utils.helpers import (format_validation_error, is_nonempty_dir, parse_assignments,
                                    parse_bool, parse_pair)
from crossnet.world.dataset import PairDataset, load_dataset, make_dataset
from crossnet.world.render import ground_classes, render_aerial
from crossnet.world.scene import generate_scene

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


# -- shared helpers -------------------------------------------------------------

def resolve_config(args: argparse.Namespace, flags: Dict[str, Any]) -> RunConfig:
    overrides: Dict[str, Any] = {}
    if args.threads is not None:
        overrides["threads"] = args.threads
    overrides.update({k: v for k, v in flags.items() if v is not None})
    overrides.update(parse_assignments(args.set))
    config_path = args.config or settings.config_path
    run = RunConfig.resolve(config_path, overrides)
    set_default_dtype(run.precision)
    return run


def ensure_compatible(config: CrossViewConfig, dataset: PairDataset, source: str) -> None:
    """Checkpoint and dataset must agree on every shape before any compute."""
    if len(dataset) == 0:
        return
    problems = []
    if dataset.image_size != config.image_size:
        problems.append(f"image size {dataset.image_size} vs {config.image_size}")
    if dataset.aerial_labels.shape[1:] != (config.h_a, config.w_a, config.num_classes):
        problems.append(f"aerial labels {dataset.aerial_labels.shape[1:]} vs "
                        f"{(config.h_a, config.w_a, config.num_classes)}")
    if dataset.ground_labels.shape[1:] != (config.h_g, config.w_g, config.num_classes):
        problems.append(f"ground labels {dataset.ground_labels.shape[1:]} vs "
                        f"{(config.h_g, config.w_g, config.num_classes)}")
    if problems:
        raise ConfigError(f"checkpoint {source} does not fit the dataset: " + "; ".join(problems))


def load_checked(ckpt: str, data: str, split: str):
    dataset = load_dataset(data, split)
    model = load_model(ckpt)
    ensure_compatible(model.config, dataset, ckpt)
    model.eval()
    return model, dataset


def pick_pair(dataset: PairDataset, index: int):
    if not 0 <= index < len(dataset):
        raise ConfigError(f"pair index {index} outside [0, {len(dataset)})")
    return dataset.pair(index)


def output_dir(path: str, run: RunConfig) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    run.dump(out)
    return out


# -- commands -------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    test_scenes = args.test_scenes
    if test_scenes is None and args.scenes is not None:
        test_scenes = args.scenes // 4
    run = resolve_config(args, {"seed": args.seed, "train_scenes": args.scenes,
                                "test_scenes": test_scenes, "label_noise": args.label_noise,
                                "asymmetric": None if args.asymmetric is None else parse_bool(args.asymmetric)})
    out = Path(args.out)
    if is_nonempty_dir(out):
        if not args.force:
            raise ConfigError(f"{out} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(out)
    make_dataset(out, run.train_scenes, run.test_scenes, run.seed, run.world_config(), threads=run.threads)
    run.dump(out)
    print(f"wrote {run.train_scenes} train / {run.test_scenes} test pairs to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    run = resolve_config(args, {"epochs": args.epochs, "seed": args.seed, "lr": args.lr,
                                "batch_size": args.batch_size})
    train_set = load_dataset(args.data, "train")
    test_set = load_dataset(args.data, "test")
    model_cfg = run.crossview_config()
    ensure_compatible(model_cfg, train_set, "config")
    model = CrossViewModel(model_cfg)
    model, log = trainer.train_crossview(train_set, model, run.train_config(),
                                         eval_set=test_set if len(test_set) else None)
    out = output_dir(args.out, run)
    save_model(model, out / "model.ckpt")
    (out / "train_log.txt").write_text(log.to_text())
    if len(test_set):
        metrics = trainer.evaluate(model, test_set)
        (out / "metrics.txt").write_text(metrics.to_text() + "\n")
        print(metrics.to_text())
    return EXIT_OK


def cmd_finetune(args: argparse.Namespace) -> int:
    run = resolve_config(args, {"finetune_sizes": args.sizes, "finetune_repeats": args.repeats})
    pretrained, pool = load_checked(args.ckpt, args.data, "train")
    eval_set = load_dataset(args.data, "test")
    if len(eval_set) == 0:
        eval_set = pool
    cfg = run.train_config(epochs=run.finetune_epochs, max_steps=None)
    rows = trainer.pretraining_comparison(pool, eval_set, pretrained, run.finetune_sizes,
                                          run.finetune_repeats, cfg)
    out = output_dir(args.out, run)
    text = "\n".join(row.to_text() for row in rows) + "\n"
    (out / "comparison.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    resolve_config(args, {})
    model, dataset = load_checked(args.ckpt, args.data, args.split)
    print(trainer.evaluate(model, dataset).to_text())
    return EXIT_OK


def cmd_predict_ground(args: argparse.Namespace) -> int:
    run = resolve_config(args, {})
    model, dataset = load_checked(args.ckpt, args.data, args.split)
    pair = pick_pair(dataset, args.index)
    labels = model.predict_ground_labels(pair.aerial_image)[0]
    out = output_dir(args.out, run)
    save_tensor(out / "ground.tnsr", labels.probs.astype(np.float32))
    spec = run.render_spec()
    labelviz.render_labelmap(labels, out / "ground.ppm", spec)
    labelviz.render_labelmap(pair.ground_labels, out / "ground_truth.ppm", spec)
    print(f"predicted {labels.probs.shape[0] * labels.probs.shape[1]} ground rows")
    return EXIT_OK


def cmd_segment_aerial(args: argparse.Namespace) -> int:
    run = resolve_config(args, {})
    model, dataset = load_checked(args.ckpt, args.data, args.split)
    pair = pick_pair(dataset, args.index)
    labels = model.predict_aerial_labels(pair.aerial_image)[0]
    out = output_dir(args.out, run)
    save_tensor(out / "aerial.tnsr", labels.probs.astype(np.float32))
    spec = run.render_spec()
    labelviz.render_labelmap(labels, out / "aerial.ppm", spec)
    labelviz.render_labelmap(pair.aerial_labels, out / "aerial_truth.ppm", spec)
    return EXIT_OK


def cmd_estimate_orientation(args: argparse.Namespace) -> int:
    run = resolve_config(args, {})
    model, dataset = load_checked(args.ckpt, args.data, args.split)
    pair = pick_pair(dataset, args.index)
    query = pair.ground_labels.shifted(-args.rotate)
    pdf = geocalib.estimate_orientation(model, pair.aerial_image, query, temperature=run.temperature)
    out = output_dir(args.out, run)
    probs = pdf.probs
    lines = [f"{b} {pdf.energies[b]:.9g} {probs[b]:.9g}" for b in range(pdf.n_bins)]
    (out / "orientation.txt").write_text("\n".join(lines) + "\n")
    print(f"best_bin={pdf.argmin_bin} true_bin={args.rotate % pdf.n_bins} "
          f"orientation={pdf.best_orientation:.6f} energy={pdf.best_energy:.6f}")
    return EXIT_OK


def cmd_geocalibrate(args: argparse.Namespace) -> int:
    run = resolve_config(args, {"geocal_grid": args.grid, "geocal_cell_px": args.cell_px})
    model = load_model(args.ckpt).eval()
    cfg = model.config
    n, cell = run.geocal_grid, run.geocal_cell_px
    radius_px = (n // 2) * cell
    true_dx, true_dy = parse_pair(args.true_offset)
    if abs(true_dx) > n // 2 or abs(true_dy) > n // 2:
        raise ConfigError(f"true offset {(true_dx, true_dy)} lies outside the {n}x{n} grid")
    world = run.world_config(cfg)
    mpp = world.meters_per_pixel
    world = run.world_config(cfg, clearance=max(world.clearance, radius_px * mpp * math.sqrt(2) + 1.0))
    scene = generate_scene(args.scene_seed, world)
    size = args.aerial_size or cfg.image_size + 2 * radius_px
    large, _ = render_aerial(scene, world, size=size)
    heading = 2 * math.pi * (args.true_rotate % cfg.w_g) / cfg.w_g
    true_offset_world = (true_dx * cell * mpp, -true_dy * cell * mpp)
    query = LabelMap.from_classes(ground_classes(scene, world, heading, true_offset_world), cfg.num_classes)
    offsets = geocalib.offset_grid(n, n, cell)
    result = geocalib.geocalibrate(model, large, query, offsets, (n, n), meters_per_pixel=mpp,
                                   threads=run.threads, temperature=run.temperature)
    out = output_dir(args.out, run)
    (out / "geocalib.txt").write_text(result.to_text())
    truth_index = (true_dy + n // 2) * n + (true_dx + n // 2)
    labelviz.render_orientation_map(result, out / "orientation_map.ppm", run.render_spec(),
                                    truth=(truth_index, heading))
    best_row, best_col = divmod(result.best_index, n)
    print(f"best_cell={best_col - n // 2},{best_row - n // 2} best_bin={result.best_bin} "
          f"true_cell={true_dx},{true_dy} true_bin={args.true_rotate % cfg.w_g} "
          f"energy={result.best_energy:.6f}")
    return EXIT_OK


def cmd_render_transform(args: argparse.Namespace) -> int:
    run = resolve_config(args, {})
    model, dataset = load_checked(args.ckpt, args.data, args.split)
    pair = pick_pair(dataset, args.index)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    labelviz.render_transform_matrix(model, pair.aerial_image, out, mode=args.mode,
                                     spec=run.render_spec())
    run.dump(out.parent)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    run = resolve_config(args, {"seed": args.seed})
    results = verify.run_suite(args.suite, run.seed)
    for result in results:
        print(result.to_text())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_RUNTIME if failed else EXIT_OK


# -- parser ---------------------------------------------------------------------

def _data_flags(p: argparse.ArgumentParser, index: bool = True) -> None:
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--split", choices=["train", "test"], default="test")
    if index:
        p.add_argument("--index", type=int, default=0, help="pair index within the split")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossnet",
                                     description="Cross-view aerial-to-ground semantic transformation")
    parser.add_argument("--config", help="run config file (key = value)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--threads", type=int, help="worker threads for fan-out points")
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--log-dir", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, help="training pairs")
    p.add_argument("--test-scenes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--asymmetric")
    p.add_argument("--label-noise", type=float)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the cross-view model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="pretrained vs random aerial finetune comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", help="comma-separated training-set sizes")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="ground-label metrics of a checkpoint")
    _data_flags(p, index=False)
    p.set_defaults(func=cmd_evaluate)

    for name, func, help_text in (("predict-ground", cmd_predict_ground, "predict ground labels"),
                                  ("segment-aerial", cmd_segment_aerial, "label the aerial image")):
        p = sub.add_parser(name, help=help_text)
        _data_flags(p)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("estimate-orientation", help="orientation PDF of a rotated query")
    _data_flags(p)
    p.add_argument("--rotate", type=int, default=0, help="query rotation in panorama columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_orientation)

    p = sub.add_parser("geocalibrate", help="joint offset and orientation search")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--grid", type=int)
    p.add_argument("--cell-px", type=int)
    p.add_argument("--aerial-size", type=int)
    p.add_argument("--true-offset", default="0,0", help="true cell as dx,dy (east, south)")
    p.add_argument("--true-rotate", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_geocalibrate)

    p = sub.add_parser("render-transform", help="render M or receptive fields")
    _data_flags(p)
    p.add_argument("--mode", choices=list(labelviz.TRANSFORM_MODES), default="raw")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_transform)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", required=True, choices=sorted(verify.SUITES))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging_service.configure(args.log_dir, args.log_level)
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as e:
        message = format_validation_error(e) if isinstance(e, ValidationError) else str(e)
        logger.error(f"{args.command}: {message}")
        logging_service.log_error(args.command, message, "config")
        print(f"error: {message}", file=sys.stderr)
        return EXIT_USAGE
    except (CrossNetError, OSError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        logging_service.log_error(args.command, str(e), type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
