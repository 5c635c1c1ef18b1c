"""Command-line entry point: ``amsdb {synth,split,train,infer,eval,baseline}``.

Exit codes: 0 success, 1 configuration, 2 data/IO, 3 numeric failure.
Outputs go to ``--out-dir``, which defaults to ``$AMSDB_OUTPUT_DIR`` or
``./amsdb-out``.  Reports are written twice, as ``key=value`` lines and as
JSON, and both start with the fully resolved command configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import AmsdbError, ConfigError, DataError
from .evalkit import thresholds
from .evalkit.metrics import MetricsReport, evaluate, mean_report
from .model import ModelConfig, SkipMode
from .pipeline.checkpoint import load_checkpoint, save_checkpoint
from .pipeline.infer import infer, model_from_checkpoint
from .pipeline.io import (IMAGE_SUFFIXES, atomic_write_text, list_images, read_binary, read_gray,
                          read_manifest, read_rgb, write_binary, write_manifest)
from .pipeline.split import leave_one_out_split
from .pipeline.synth import write_corpus
from .pipeline.train import TrainConfig, train

OUTPUT_ENV = "AMSDB_OUTPUT_DIR"
log = logging.getLogger("amsdb")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUTPUT_ENV) or "amsdb-out")
    out.mkdir(parents=True, exist_ok=True)
    args.out_dir = out  # echo the resolved directory in reports
    return out


def _plain(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _config_of(args) -> dict:
    return {k: _plain(v) for k, v in sorted(vars(args).items()) if k != "func"}


def _write_reports(out: Path, stem: str, config: dict, rows: List[dict], summary: Optional[dict] = None) -> None:
    lines = [f"# config {k}={json.dumps(v)}" for k, v in config.items()]
    for row in rows:
        lines.append(" ".join(f"{k}={v}" for k, v in row.items()))
    atomic_write_text(out / f"{stem}.txt", "\n".join(lines) + "\n")
    doc = {"config": config, "rows": rows}
    if summary is not None:
        doc["summary"] = summary
    atomic_write_text(out / f"{stem}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = _out_dir(args)
    manifest = write_corpus(out, count=args.count, size=args.size, seed=args.seed,
                            years=args.years, noise=args.noise)
    print(f"manifest={manifest}")
    return 0


def cmd_split(args) -> int:
    index = read_manifest(args.manifest)
    train_idx, test_idx = leave_one_out_split(index, args.hold_out)
    out = _out_dir(args)
    write_manifest(out / "train.manifest", train_idx.records)
    write_manifest(out / "test.manifest", test_idx.records)
    print(f"train={len(train_idx)} test={len(test_idx)} train_years={','.join(train_idx.years)} "
          f"held_out={args.hold_out}")
    return 0


def model_config_from_args(args) -> ModelConfig:
    return ModelConfig(
        dims=args.dims, depths=args.depths if args.depths else [1] * len(args.dims),
        patch_size=args.patch_embed, state_dim=args.state_dim, expand_ratio=args.expand_ratio,
        skip_mode=args.skip_mode, dog_scales=args.dog_scales, dog_sigma0=args.dog_sigma0,
    )


def cmd_train(args) -> int:
    mcfg = model_config_from_args(args)
    tcfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                       stride=args.stride, augment=not args.no_augment, val_fraction=args.val_fraction,
                       eval_every=args.eval_every)
    index = read_manifest(args.manifest)
    result = train(mcfg, tcfg, index)
    out = _out_dir(args)
    ckpt_path = out / args.checkpoint_name
    save_checkpoint(ckpt_path, result.checkpoint)
    atomic_write_text(out / "loss.csv", result.csv())
    config = _config_of(args)
    config["model"] = mcfg.to_dict()
    config["train"] = tcfg.to_dict()
    rows = [{"step": r.step, "loss": round(r.loss, 6), "val_FM": r.val_fm} for r in result.log]
    _write_reports(out, "train_report", config, rows[-1:] if rows else [],
                   {"checkpoint": str(ckpt_path), "steps": len(rows)})
    final = result.log[-1].loss if result.log else float("nan")
    print(f"checkpoint={ckpt_path} steps={len(result.log)} final_loss={final:.6f}")
    return 0


def _inputs(paths) -> List[Path]:
    files: List[Path] = []
    for p in paths:
        files.extend(list_images(p))
    if not files:
        raise DataError("no input images found")
    return files


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    out = _out_dir(args)
    rows = []
    for path in _inputs(args.input):
        img = read_rgb(path)
        _, binary = infer(model, img, stride=args.stride, batch_size=args.batch_size)
        write_binary(out / f"{path.stem}.png", binary)
        write_binary(out / f"{path.stem}.pgm", binary)
        rows.append({"image": path.stem, "height": binary.shape[0], "width": binary.shape[1],
                     "ink_fraction": round(float(binary.mean()), 6)})
    _write_reports(out, "infer_report", _config_of(args), rows)
    print(f"wrote {len(rows)} image(s) to {out}")
    return 0


def _by_stem(folder) -> dict:
    folder = Path(folder)
    if not folder.is_dir():
        raise DataError(f"not a directory: {folder}")
    found = {}
    for p in sorted(folder.iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            # prefer PNG when both PNG and PGM exist for a stem
            if p.stem not in found or p.suffix.lower() == ".png":
                found[p.stem] = p
    return found


def _fmt(v):
    return "error" if v is None else (round(v, 4) if isinstance(v, float) else v)


def cmd_eval(args) -> int:
    preds, gts = _by_stem(args.pred), _by_stem(args.gt)
    unpaired = sorted(set(preds) ^ set(gts))
    if unpaired:
        raise DataError(f"unpaired files: {', '.join(unpaired)}")
    if not preds:
        raise DataError("no images to evaluate")
    reports, rows = [], []
    for stem in sorted(preds):
        rep = evaluate(read_binary(preds[stem]), read_binary(gts[stem]))
        reports.append(rep)
        rows.append({"image": stem, **{k: _fmt(v) for k, v in rep.to_dict().items() if k != "error"},
                     **({"error": rep.error.replace(" ", "_")} if rep.error else {})})
    mean = mean_report(reports)
    mrow = {"image": "MEAN", **{k: _fmt(getattr(mean, k)) for k in MetricsReport.NUMERIC}}
    out = _out_dir(args)
    _write_reports(out, "eval_report", _config_of(args), rows + [mrow], mrow)
    for row in rows + [mrow]:
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    return 0


def cmd_baseline(args) -> int:
    if args.method == "sauvola":
        kwargs = {"window": args.window or 25, "k": args.k, "R": args.R}
    elif args.method == "bradley":
        kwargs = {"window": args.window, "t_percent": args.t_percent}
    else:
        kwargs = {}
    for key in ("window",):
        w = kwargs.get(key)
        if w is not None and (w < 3 or w % 2 == 0):
            raise ConfigError(f"--window must be an odd integer >= 3, got {w}")
    out = _out_dir(args)
    rows = []
    for path in _inputs(args.input):
        gray = read_gray(path)
        if args.method == "otsu":
            t, ink = thresholds.otsu(gray)
            extra = {"threshold_bin": t}
        else:
            ink = thresholds.METHODS[args.method](gray, **kwargs)
            extra = {}
        write_binary(out / f"{path.stem}.png", ink)
        write_binary(out / f"{path.stem}.pgm", ink)
        rows.append({"image": path.stem, **extra, "ink_fraction": round(float(ink.mean()), 6)})
    _write_reports(out, "baseline_report", _config_of(args), rows)
    print(f"wrote {len(rows)} image(s) to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="amsdb", description="Document binarisation with a selective-scan U-network.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--out-dir", type=Path, default=None,
                        help=f"output directory (default ${OUTPUT_ENV} or ./amsdb-out)")

    s = sub.add_parser("synth", help="write a synthetic text-stroke corpus")
    common(s)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.08)
    s.add_argument("--years", type=_ints, default=None, help="year tags cycled over records")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="leave-one-year-out split of a manifest")
    common(s)
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--hold-out", required=True, help="year tag used as the test set")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train a model from a manifest")
    common(s)
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stride", type=int, default=64)
    s.add_argument("--val-fraction", type=float, default=0.0)
    s.add_argument("--eval-every", type=int, default=50)
    s.add_argument("--no-augment", action="store_true")
    s.add_argument("--dims", type=_ints, default=[16, 32])
    s.add_argument("--depths", type=_ints, default=None, help="blocks per stage (default 1 each)")
    s.add_argument("--patch-embed", type=int, default=4, help="patch-embedding factor")
    s.add_argument("--state-dim", type=int, default=8)
    s.add_argument("--expand-ratio", type=int, default=2)
    s.add_argument("--skip-mode", choices=[m.value for m in SkipMode], default=SkipMode.DOG_RESIDUAL.value)
    s.add_argument("--dog-scales", type=int, default=3)
    s.add_argument("--dog-sigma0", type=float, default=0.8)
    s.add_argument("--checkpoint-name", default="model.amsdb")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="binarise images with a trained checkpoint")
    common(s)
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--input", type=Path, nargs="+", required=True, help="image files or directories")
    s.add_argument("--stride", type=int, default=64)
    s.add_argument("--batch-size", type=int, default=16)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="score predictions against ground truth")
    common(s)
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--gt", type=Path, required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", help="classical thresholding baselines")
    common(s)
    s.add_argument("--method", choices=sorted(thresholds.METHODS), required=True)
    s.add_argument("--input", type=Path, nargs="+", required=True)
    s.add_argument("--window", type=int, default=None, help="local window (odd)")
    s.add_argument("--k", type=float, default=0.2, help="Sauvola sensitivity")
    s.add_argument("--R", type=float, default=0.5, help="Sauvola dynamic range of the std")
    s.add_argument("--t-percent", type=float, default=15.0, help="Bradley threshold percentage")
    s.set_defaults(func=cmd_baseline)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AmsdbError as exc:
        print(f"amsdb {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"amsdb {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
