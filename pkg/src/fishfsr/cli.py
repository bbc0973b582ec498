"""Command-line interface: ``synth``, ``train``, ``infer``, ``eval``, ``gradcheck``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
4 verification failure. Every command prints its resolved configuration
and then ``WROTE:`` followed by each written path on its own line.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .blocks import ConfigError
from .checkpoint import format_value, load_checkpoint, parse_bool
from .data import (
    ensure_writable,
    generate_dataset,
    load_dataset,
    load_manifest,
    read_ften,
    read_image,
    rotate_map,
    write_ften,
    write_ppm,
)
from .metrics import MetricReport, parsing_accuracy, sr_metrics
from .networks import ModelConfig
from .tensor import ContractError, NumericalError, Tensor
from .train import Models, TrainConfig, loss_csv, train_fishfsrnet, train_parsingnet

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

MODEL_KEYS = ("scale", "channels", "pafb_per_stage", "parsingnet_resblocks",
              "use_msrb", "use_ca", "use_sa", "use_pmb", "ablation")
TRAIN_KEYS = ("batch_size", "steps", "lr", "seed", "checkpoint_interval", "joint")
_BOOL_KEYS = {"use_msrb", "use_ca", "use_sa", "use_pmb", "joint"}
_FLOAT_KEYS = {"lr"}


class UsageError(Exception):
    pass


class VerificationError(Exception):
    pass


# ---------------------------------------------------------------- config files

def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in MODEL_KEYS + TRAIN_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def _typed(key: str, value):
    if isinstance(value, str):
        if key in _BOOL_KEYS:
            return parse_bool(value)
        return float(value) if key in _FLOAT_KEYS else int(value)
    return value


def _print_config(config: dict) -> None:
    print("config:")
    for key, value in config.items():
        print(f"  {key} = {format_value(value)}")


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> list[Path]:
    _emit_resolved(args, None)
    out = ensure_writable(args.out)
    manifest = generate_dataset(args.seed, args.count, args.scale, out, hr_size=args.hr_size)
    written = [manifest.path]
    for sid in manifest.ids:
        for sub, ext in (("hr", "ften"), ("hr", "ppm"), ("lr", "ften"), ("lr", "ppm"), ("parsing", "ften")):
            written.append(out / sub / f"{sid}.{ext}")
    print(f"manifest: {manifest.path}")
    return written


def _train_settings(args) -> dict:
    values = read_config_file(args.config) if args.config else {}
    for key in ("steps", "seed", "lr", "batch_size", "checkpoint_interval"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if args.joint:
        values["joint"] = True
    return {k: _typed(k, v) for k, v in values.items()}


def _model_config(settings: dict, scale: int) -> ModelConfig:
    if settings.get("scale", scale) != scale:
        raise ConfigError(f"config scale {settings['scale']} != dataset scale {scale}")
    kwargs = {k: settings[k] for k in MODEL_KEYS if k in settings and k not in ("scale", "ablation")}
    kwargs.update(scale=scale, seed=settings.get("seed", 0))
    if "ablation" in settings:
        base = ModelConfig.ablation(settings["ablation"], scale=scale)
        return base.replace(**kwargs)
    return ModelConfig(**kwargs)


def cmd_train(args) -> list[Path]:
    settings = _train_settings(args)
    manifest = load_manifest(args.data, split="train")
    dataset = load_dataset(manifest)
    ckpt_dir = ensure_writable(args.ckpt_dir)
    defaults = TrainConfig()
    tcfg = dict(batch_size=settings.get("batch_size", defaults.batch_size),
                max_steps=settings.get("steps", defaults.max_steps),
                lr=settings.get("lr", defaults.lr),
                seed=settings.get("seed", defaults.seed),
                checkpoint_interval=settings.get("checkpoint_interval", defaults.checkpoint_interval),
                data=str(args.data), ckpt_dir=str(ckpt_dir),
                joint=settings.get("joint", False))

    if args.stage == "sr":
        parsing_ckpt = Path(args.parsing_ckpt) if args.parsing_ckpt else ckpt_dir / "parsingnet.fckp"
        if not parsing_ckpt.exists():
            raise UsageError(f"stage sr needs a ParsingNet checkpoint: {parsing_ckpt} not found")
        ckpt = load_checkpoint(parsing_ckpt)
        if "parsing" not in ckpt.trained:
            raise UsageError(f"{parsing_ckpt}: ParsingNet is not trained")
        models = Models.from_checkpoint(ckpt)
        if models.config.scale != manifest.scale:
            raise ConfigError(f"checkpoint scale {models.config.scale} != dataset scale {manifest.scale}")
    else:
        models = Models.build(_model_config(settings, manifest.scale))

    _print_config({"command": "train", "stage": args.stage, "data": manifest.root,
                   **{f.name: getattr(models.config, f.name) for f in dataclasses.fields(ModelConfig)},
                   **tcfg})

    results = []
    if args.stage in ("parsing", "both"):
        results.append(train_parsingnet(TrainConfig(stage="parsingnet", **tcfg), dataset, models))
    if args.stage in ("sr", "both"):
        results.append(train_fishfsrnet(TrainConfig(stage="fishfsrnet", **tcfg), dataset, models))
    csv_path = ckpt_dir / f"loss_{args.stage}.csv"
    csv_path.write_text(loss_csv(results))
    for res in results:
        print(f"{res.stage}: loss {res.trace[0]:.6g} -> {res.trace[-1]:.6g} over {len(res.trace)} steps")
    last = results[-1].trace[-1]
    if not math.isfinite(last):
        raise NumericalError(f"final loss is {last}")
    return [p for res in results for p in res.checkpoints] + [csv_path]


def _load_models(path) -> Models:
    ckpt = load_checkpoint(path)
    if "sr" not in ckpt.trained:
        raise UsageError(f"{path}: checkpoint holds no trained FishFSRNet")
    return Models.from_checkpoint(ckpt)


def _input_image(path) -> Tensor:
    try:
        img = read_image(path)
    except FileNotFoundError:
        raise UsageError(f"input not found: {path}") from None
    if img.shape[0] != 1 or img.shape[1] != 3:
        raise UsageError(f"{path}: expected a (1, 3, H, W) RGB image, got {img.shape}")
    return img


def cmd_infer(args) -> list[Path]:
    if args.zero_parsing and args.parsing_map:
        raise UsageError("--zero-parsing and --parsing-map are mutually exclusive")
    models = _load_models(args.ckpt)
    lr = _input_image(args.input)
    if lr.shape[2] < 4 or lr.shape[3] < 4:
        raise UsageError(f"input {lr.shape[2:]} is below the 4x4 minimum")
    parsing = None
    if models.config.use_pmb:
        if args.zero_parsing:
            parsing = Tensor(np.zeros((1, 1) + lr.shape[2:], dtype=lr.dtype))
        elif args.parsing_map:
            try:
                parsing = read_ften(args.parsing_map)
            except FileNotFoundError as exc:
                raise UsageError(str(exc)) from None
            if parsing.shape != (1, 1) + lr.shape[2:]:
                raise UsageError(f"parsing map {parsing.shape} does not match input {(1, 1) + lr.shape[2:]}")
            parsing = parsing.astype(lr.dtype)
        else:
            parsing = models.predict_parsing(lr)
        if args.rotate_parsing:
            parsing = rotate_map(parsing, args.rotate_parsing)
    sr = models.super_resolve(lr, parsing)
    _emit_resolved(args, models)
    out = Path(args.out)
    if out.suffix in (".ften", ".ppm"):
        out = out.with_suffix("")
    ensure_writable(out.parent if str(out.parent) else Path("."))
    return [write_ften(out.with_suffix(".ften"), sr), write_ppm(out.with_suffix(".ppm"), sr)]


def cmd_eval(args) -> list[Path]:
    if not args.ckpt and not args.sr_dir:
        raise UsageError("eval needs --ckpt or --sr-dir")
    manifest = load_manifest(args.data, split=args.split)
    models = _load_models(args.ckpt) if args.ckpt else None
    if models is not None and models.config.scale != manifest.scale:
        raise UsageError(f"checkpoint scale {models.config.scale} != dataset scale {manifest.scale}")
    report = MetricReport()
    for sample in load_dataset(manifest):
        acc = math.nan
        if args.sr_dir:
            sr = read_ften(Path(args.sr_dir) / f"{sample.id}.ften")
        else:
            sr = models.super_resolve(sample.lr)
        if models is not None and models.config.use_pmb:
            acc = parsing_accuracy(models.predict_parsing(sample.lr), sample.parsing_gt)
        if sr.shape != sample.hr.shape:
            raise UsageError(f"{sample.id}: SR {sr.shape} != HR {sample.hr.shape}")
        report.add(sample.id, *sr_metrics(sr, sample.hr), acc)
    _emit_resolved(args, models)
    out = Path(args.out)
    ensure_writable(out.parent if str(out.parent) else Path("."))
    out.write_text(report.to_csv())
    print(f"mean psnr {report.mean_psnr:.4f} dB over finite entries; "
          f"infinite psnr entries: {report.psnr_infinite_count}")
    print(f"mean ssim {report.mean_ssim:.6f}")
    return [out]


def cmd_gradcheck(args) -> list[Path]:
    names = list(gradcheck.SUITE) if args.block == "all" else [args.block]
    if args.block != "all" and args.block not in gradcheck.SUITE:
        raise UsageError(f"unknown block {args.block!r}; choose from {', '.join(gradcheck.SUITE)} or all")
    _emit_resolved(args, None)
    failed = []
    for name in names:
        try:
            res = gradcheck.run_check(name, args.seed)
        except gradcheck.KinkError as exc:
            print(f"{name}: {exc} FAIL")
            failed.append(name)
            continue
        status = "ok" if res.passed else "FAIL"
        print(f"{name}: max relative error {res.error:.3e} (tolerance {res.tolerance:g}, "
              f"{res.checked} coords, {res.skipped} skipped) {status}")
        if not res.passed:
            failed.append(name)
    if failed:
        raise VerificationError(f"gradient check failed for: {', '.join(failed)}")
    return []


def _emit_resolved(args, models) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    if models is not None:
        config.update({f"model.{f.name}": getattr(models.config, f.name)
                       for f in dataclasses.fields(ModelConfig)})
    _print_config(config)


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fishfsr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic face dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--scale", type=int, choices=(4, 8, 16), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hr-size", type=int, choices=(32, 64, 128), default=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train ParsingNet, FishFSRNet or both")
    p.add_argument("--stage", choices=("parsing", "sr", "both"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--parsing-ckpt", help="ParsingNet checkpoint for --stage sr")
    p.add_argument("--joint", action="store_true", help="update ParsingNet through the SR loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one LR image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parsing-map")
    p.add_argument("--zero-parsing", action="store_true")
    p.add_argument("--rotate-parsing", type=float, default=0.0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR / SSIM / parsing accuracy over a dataset")
    p.add_argument("--ckpt")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--sr-dir", help="read SR images (<id>.ften) instead of running the model")
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference oracle suite")
    p.add_argument("--block", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        written = args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VerificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (UsageError, ConfigError, ContractError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print("WROTE:")
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
