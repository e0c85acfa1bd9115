"""Command-line entry point.

Exit codes: 0 success, 2 bad configuration or usage, 3 data / checkpoint /
image errors, 4 training divergence, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import checkpoint as ckpt_io
from .config import ConfigError, ModelConfig, RunConfig
from .data import IngestionError, Sample, SplitSpec, load_dataset, read_image, read_mask, resize_sample, split, synth_generate, write_dataset
from .decoder import count_params
from .iscf import iscf_param_count
from .overlay import render_overlay
from .training import DivergenceError, evaluate, predict, train

log = logging.getLogger("iscfseg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5
REFERENCE_PARAMS_M = {"with_iscf": 23.43, "without_iscf": 22.31}


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _split_spec(n: int, counts, seed: int) -> SplitSpec:
    if counts is None:
        return SplitSpec.proportional(n, seed)
    return SplitSpec(*[int(c) for c in counts], seed=seed)


def _load_splits(data_dir, image_size: int, counts, seed: int) -> dict[str, list[Sample]]:
    if data_dir is None:
        raise CommandError(EXIT_CONFIG, "no data_dir configured")
    try:
        samples = load_dataset(data_dir, size=image_size)
        if not samples:
            raise CommandError(EXIT_DATA, f"no samples found in {data_dir}")
        parts = split(samples, _split_spec(len(samples), counts, seed))
    except (OSError, IngestionError, ValueError) as exc:
        raise CommandError(EXIT_DATA, f"data error: {exc}") from exc
    return dict(zip(("train", "val", "test"), parts))


# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    try:
        run = RunConfig.load(args.config)
        if args.seed is not None:
            run.model.seed = args.seed
        if args.out_dir is not None:
            run.out_dir = args.out_dir
        if args.data_dir is not None:
            run.data_dir = args.data_dir
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, f"bad config: {exc}") from exc
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = _load_splits(run.data_dir, run.model.image_size, run.split_counts, run.split_seed)
    _write_json(out / "config.json", run.to_dict())
    run_info = {"data_dir": run.data_dir, "split_counts": run.split_counts, "threshold": run.threshold}
    try:
        result = train(
            run.model,
            splits["train"],
            splits["val"],
            split_seed=run.split_seed,
            max_steps=run.max_steps,
            log_path=out / "train.log",
            run=run_info,
            threshold=run.threshold,
        )
    except DivergenceError as exc:
        raise CommandError(EXIT_DIVERGED, f"training diverged: {exc}") from exc
    ckpt_io.save(result.best, out / "best.ckpt")
    ckpt_io.save(result.last, out / "last.ckpt")
    print(f"best epoch {result.best.epoch} val DSC {result.best.best_val_dsc:.4f}; wrote {out}")
    return EXIT_OK


def _load_ckpt(path) -> ckpt_io.Checkpoint:
    try:
        return ckpt_io.load(path)
    except (OSError, ckpt_io.CheckpointError) as exc:
        raise CommandError(EXIT_DATA, f"cannot load checkpoint {path}: {exc}") from exc


def cmd_eval(args) -> int:
    ck = _load_ckpt(args.ckpt)
    run = ck.run
    data_dir = args.data_dir or run.get("data_dir")
    splits = _load_splits(data_dir, ck.config.image_size, run.get("split_counts"), ck.split_seed)
    threshold = args.threshold if args.threshold is not None else run.get("threshold", 0.5)
    try:
        report = evaluate(ck, splits[args.split], threshold)
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, str(exc)) from exc
    out = Path(args.out_dir) if args.out_dir else Path(args.ckpt).parent / f"eval-{args.split}"
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc.update({"split": args.split, "epoch": ck.epoch, "threshold": threshold})
    _write_json(out / "metrics.json", doc)
    print(f"DSC {report.mean_dsc:.4f} SE {report.mean_se:.4f} SP {report.mean_sp:.4f} ACC {report.mean_acc:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ck = _load_ckpt(args.ckpt)
    size = ck.config.image_size
    try:
        image = read_image(args.image)
        mask = read_mask(args.mask) if args.mask else np.zeros((1, *image.shape[1:]), dtype=np.uint8)
        sample = resize_sample(Sample("input", image, mask), size)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise CommandError(EXIT_DATA, f"cannot read input: {exc}") from exc
    threshold = args.threshold if args.threshold is not None else ck.run.get("threshold", 0.5)
    probs = predict(ck.params, ck.config, sample.image[None])[0]
    pred = (probs >= threshold).astype(np.uint8)
    overlay = render_overlay(sample.image, pred, sample.mask if args.mask else None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay, "RGB").save(out)
    mask_path = out.with_name(out.stem + "_mask.png")
    Image.fromarray(pred[0] * 255, "L").save(mask_path)
    print(f"wrote {out} and {mask_path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    samples = synth_generate(args.n, args.size, args.seed)
    write_dataset(samples, args.out_dir)
    print(f"wrote {len(samples)} samples to {args.out_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_attention, growth_factors, sanity_check, to_csv

    tokens = [int(t) for t in args.tokens.split(",")]
    if any(t < 64 for t in tokens):
        raise CommandError(EXIT_CONFIG, "token counts must be at least 64")
    diff = sanity_check(args.dim)
    print(f"sanity: efficient vs materialised-map oracle at N=64, max |diff| = {diff:.2e}")
    if diff > 1e-4:
        raise CommandError(EXIT_DATA, "efficient attention disagrees with its oracle")
    rows = bench_attention(tokens, args.dim, args.repeats, args.dense)
    csv = to_csv(rows)
    if args.out:
        Path(args.out).write_text(csv)
    sys.stdout.write(csv)
    for n0, n1, fe, fd in growth_factors(rows):
        print(f"growth {n0}->{n1}: efficient x{fe:.2f}, dense ({args.dense}) x{fd:.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    try:
        results = run_suite(args.scope, args.seeds, args.tol)
    except KeyError as exc:
        raise CommandError(EXIT_CONFIG, str(exc.args[0])) from exc
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:32s} worst rel err {r.worst:.3e}  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("gradient check failed for: " + ", ".join(failed))
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_params(args) -> int:
    try:
        model = RunConfig.load(args.config).model if args.config else ModelConfig()
    except ConfigError as exc:
        raise CommandError(EXIT_CONFIG, f"bad config: {exc}") from exc
    base = model.to_dict()
    with_iscf = count_params(ModelConfig(**{**base, "iscf_enabled": True}))
    without = count_params(ModelConfig(**{**base, "iscf_enabled": False}))
    closed = iscf_param_count(model)
    for label, c in (("with ISCF", with_iscf), ("without ISCF", without)):
        print(
            f"{label:13s} total {c['total']:>11,d} ({c['total'] / 1e6:.2f}M)  "
            f"encoder {c['encoder']:,d}  decoder {c['decoder']:,d}  iscf {c['iscf']:,d}"
        )
    print(f"difference {with_iscf['total'] - without['total']:,d}; ISCF closed form {closed:,d}")
    if not args.config:
        for key, c in (("with_iscf", with_iscf), ("without_iscf", without)):
            ref = REFERENCE_PARAMS_M[key]
            print(f"reference {key}: {ref}M, achieved {c['total'] / 1e6:.2f}M ({100 * (c['total'] / 1e6 / ref - 1):+.1f}%)")
    return EXIT_OK


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CommandError(EXIT_CONFIG, message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iscfseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--data-dir")
    p.add_argument("--out-dir")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one image and write a contour overlay")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth-data", help="write a synthetic lesion dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench-attention", help="efficient vs dense attention runtime scaling")
    p.add_argument("--tokens", default="1024,2048")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--repeats", type=int, default=9)
    p.add_argument("--dense", choices=("softmax", "oracle"), default="softmax")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--scope", default="full")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter accounting")
    p.add_argument("--config")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
