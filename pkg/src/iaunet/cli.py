"""Command-line interface: generate, train, eval, predict, gradcheck.

Exit codes: 0 success, 1 usage, 2 validation, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .core import CheckpointError, NumericError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config field; VALUE is parsed as JSON when possible")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iaunet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--count", type=int, help="number of images")
    p.add_argument("--size", type=int, help="image side in pixels (multiple of 32)")

    p = sub.add_parser("train", help="train and write a checkpoint plus loss log")
    _common(p)
    p.add_argument("--data", help="dataset directory (default: synthetic set from the config)")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint and write results JSON")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory (default: synthetic set from the config)")

    p = sub.add_parser("predict", help="segment one PPM image")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="binary PPM (P6) image")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    _common(p)
    p.add_argument("--samples", type=int, default=3, help="entries checked per parameter tensor")
    p.add_argument("--corrupt-op", help=argparse.SUPPRESS)
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args) -> RunConfig:
    """Config file (or the one saved beside ``--checkpoint``, or defaults), then flag overrides."""
    source = args.config
    checkpoint = getattr(args, "checkpoint", None)
    if source is None and checkpoint and (Path(checkpoint).parent / "config.json").is_file():
        source = Path(checkpoint).parent / "config.json"
    raw = RunConfig.load(source).to_dict() if source else RunConfig().to_dict()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        *sections, leaf = key.split(".")
        node = raw
        for s in sections:
            if not isinstance(node.get(s), dict):
                raise ConfigError(f"--set: unknown section {s!r} in {key!r}")
            node = node[s]
        if leaf not in node:
            raise ConfigError(f"--set: unknown key {key!r}")
        node[leaf] = _parse_value(value)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out_dir"] = args.out
    for attr, section, key in (("count", "data", "count"), ("size", "data", "image_size"),
                               ("data", "data", "root"), ("steps", "optim", "steps"),
                               ("lr", "optim", "lr"), ("batch_size", "optim", "batch_size")):
        value = getattr(args, attr, None)
        if value is not None:
            raw[section][key] = value
    return RunConfig.from_dict(raw)


# -- commands ---------------------------------------------------------------------------

def cmd_generate(cfg: RunConfig, args) -> int:
    from .data import generate_dataset, save_dataset

    if cfg.data.count < 0:
        raise ConfigError("data.count must be >= 0")
    samples = generate_dataset(cfg.data, cfg.seed)
    out = Path(cfg.out_dir)
    save_dataset(out, samples)
    for _, rec in samples:
        print(f"{rec.image_id}: {len(rec.instances)} instances")
    print(f"wrote {len(samples)} images to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    from .train import load_samples, train

    samples = load_samples(cfg)

    def progress(row):
        if not args.quiet and (row["step"] == 1 or row["step"] % 25 == 0 or row["step"] == cfg.optim.steps):
            print(f"step {row['step']:5d}  lr {row['lr']:.2e}  cls {row['cls']:.4f}  dice {row['dice']:.4f}  "
                  f"bce {row['bce']:.4f}  total {row['total']:.4f}", flush=True)

    result = train(cfg, samples, cfg.out_dir, progress=progress)
    print(f"trained {len(result.log)} steps; checkpoint {Path(cfg.out_dir) / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from .train import evaluate_model, load_model, load_samples

    model = load_model(cfg, args.checkpoint)
    result = evaluate_model(model, load_samples(cfg))
    text = json.dumps(result.to_json_dict(), indent=2)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


PALETTE = np.array([[230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
                    [145, 30, 180], [70, 240, 240], [240, 50, 230]], dtype=np.float64) / 255.0


def cmd_predict(cfg: RunConfig, args) -> int:
    from .data import read_ppm, write_pgm, write_ppm
    from .train import load_model

    image = read_ppm(args.image)
    _, h, w = image.shape
    ph, pw = -(-h // 32) * 32, -(-w // 32) * 32
    padded = np.zeros((3, ph, pw))
    padded[:, :h, :w] = image
    model = load_model(cfg, args.checkpoint)
    instances = model.predict(padded[None])[0]
    out = Path(cfg.out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    overlay = image.copy()
    listing = []
    for k, inst in enumerate(instances):
        mask = inst.mask[:h, :w]
        rel = f"masks/instance_{k:03d}.pgm"
        write_pgm(out / rel, mask)
        listing.append({"class_id": inst.class_id, "score": inst.score, "query": inst.query, "mask": rel})
        color = PALETTE[k % len(PALETTE)][:, None]
        overlay[:, mask] = 0.5 * overlay[:, mask] + 0.5 * color
    doc = {"image_id": Path(args.image).stem, "height": h, "width": w,
           "padded": {"height": ph, "width": pw} if (ph, pw) != (h, w) else None,
           "instances": listing}
    (out / "instances.json").write_text(json.dumps(doc, indent=2) + "\n")
    write_ppm(out / "overlay.ppm", overlay)
    print(f"{len(listing)} instances written to {out}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .verify import TOLERANCE, run_gradcheck

    report = run_gradcheck(seed=cfg.seed, samples_per_tensor=args.samples, corrupt_op=args.corrupt_op)
    for name, err in report.params.items():
        flag = "ok" if err < TOLERANCE else "FAIL"
        print(f"param {name:60s} {err:.3e} {flag}")
    for mod, err in report.module_worst().items():
        print(f"module {mod:20s} worst {err:.3e}")
    for name, err in report.ops.items():
        print(f"op {name:20s} {err:.3e} {'ok' if err < TOLERANCE else 'FAIL'}")
    for name in report.skipped:
        print(f"skipped {name}: no entry away from a kink")
    print(f"{len(report.params)} parameter groups, {len(report.ops)} ops, {report.seconds:.1f}s")
    if report.passed:
        print("gradcheck passed")
        return EXIT_OK
    if report.failing_ops:
        print("gradcheck FAILED; broken op(s): " + ", ".join(report.failing_ops))
    else:
        print("gradcheck FAILED; parameter group(s): " + ", ".join(report.failing_params))
    return EXIT_NUMERIC


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    from .data import DatasetError
    from .train import TrainingDiverged

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, DatasetError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
