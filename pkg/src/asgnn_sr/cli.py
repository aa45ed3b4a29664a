"""Command-line entry point: toydata, degrade, train, infer, eval, gradcheck, ablate.

Exit codes: 0 success, 1 verification failure, 2 usage/config error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import io
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .degradation import (DatasetManifest, DegradationConfig, atomic_write_bytes, bicubic_resample, degrade,
                          read_image, write_image)
from .errors import ConfigMismatchError, ConfigurationError, FormatError
from .metrics import psnr, ssim
from .network import NetworkConfig, load_params, param_init
from .toydata import toy_network, toy_pairs, toy_run, write_toy_dataset
from .trainer import TrainRunConfig, bicubic_baseline, gradcheck_suite, load_pairs, super_resolve, train_pairs

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
OUT_ENV = "ASGNN_SR_OUT"
METHOD_NAME = "ASGNN-SR"
TOY_NOTE = "# toy-scale values from a desk-sized run; not comparable to published magnitudes"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------- config file + overrides

SECTIONS = {"network": NetworkConfig, "train": TrainRunConfig, "degradation": DegradationConfig}


def _cast(cls, key: str, raw: str):
    types = {f.name: str(f.type) for f in fields(cls)}
    if key not in types:
        raise ConfigurationError(f"unknown key {key!r} for section [{_section_of(cls)}]")
    t = types[key]
    if raw.strip().lower() == "none" and "None" in t:
        return None
    try:
        if t.startswith("bool"):
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"[{_section_of(cls)}] {key}: cannot parse {raw!r} as {t}") from None
    return raw


def _section_of(cls) -> str:
    return next(name for name, c in SECTIONS.items() if c is cls)


@dataclass
class EffectiveConfig:
    network: NetworkConfig
    train: TrainRunConfig
    degradation: DegradationConfig
    explicit: set = field(default_factory=set)

    def dumps(self) -> str:
        cp = configparser.ConfigParser()
        for name in SECTIONS:
            obj = getattr(self, name)
            cp[name] = {f.name: str(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def echo(self, out_dir: Path) -> None:
        atomic_write_bytes(out_dir / "effective_config.ini", self.dumps().encode("utf-8"))


FLAG_MAP = {
    "scale": [("network", "scale"), ("degradation", "scale")],
    "width": [("network", "width")],
    "fem": [("network", "fem_count")],
    "dfcm": [("network", "dfcm_per_fem")],
    "patch": [("network", "patch")],
    "alpha": [("network", "alpha")],
    "epochs": [("train", "epochs")],
    "steps": [("train", "steps_per_epoch")],
    "batch_size": [("train", "batch_size")],
    "crop_size": [("train", "crop_size")],
    "lr": [("train", "lr")],
    "seed": [("train", "seed")],
}


def build_config(args, base_network: NetworkConfig | None = None, base_train: TrainRunConfig | None = None) -> EffectiveConfig:
    """Defaults, then the INI file, then command-line flags (flags win)."""
    values = {
        "network": (base_network or NetworkConfig()).to_dict(),
        "train": dict((base_train or TrainRunConfig()).__dict__),
        "degradation": dict(DegradationConfig().__dict__),
    }
    explicit = set()
    path = getattr(args, "config", None)
    if path:
        cp = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise CliError(f"cannot read config file {path}: {exc}", EXIT_IO) from exc
        except configparser.Error as exc:
            raise ConfigurationError(f"config file {path}: {exc}") from exc
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigurationError(f"config file {path}: unknown section [{section}]")
            explicit.add(section)
            for key, raw in cp[section].items():
                values[section][key] = _cast(SECTIONS[section], key, raw)
    for flag, targets in FLAG_MAP.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        for section, key in targets:
            values[section][key] = v
            explicit.add(section)
    return EffectiveConfig(NetworkConfig.from_dict(values["network"]), TrainRunConfig(**values["train"]),
                           DegradationConfig(**values["degradation"]), explicit)


def out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "asgnn_out")


def _pgm_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"not a directory: {d}", EXIT_IO)
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".pgm")


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ----------------------------------------------------------------- commands

def cmd_toydata(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    tr, te = write_toy_dataset(out, count=args.count, held_out=args.held_out, size=args.size,
                               scale=cfg.network.scale, seed=cfg.train.seed)
    cfg.echo(out)
    _emit(f"wrote {len(tr)} train + {len(te)} test pairs under {out}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    scale = cfg.degradation.scale
    files = _pgm_files(args.hr_dir)
    if not files:
        raise CliError(f"no .pgm files in {args.hr_dir}", EXIT_IO)
    written, errors, entries = [], [], []
    for k, path in enumerate(files):
        try:
            hr = read_image(path)
        except (OSError, FormatError) as exc:
            errors.append(f"{path}: {exc}")
            continue
        seed = cfg.train.seed + k
        pair = degrade(hr, scale, seed=seed, config=cfg.degradation)
        hr_rel, lr_rel = f"hr/{path.name}", f"lr_x{scale}/{path.name}"
        for rel, img in ((hr_rel, pair.hr), (lr_rel, pair.lr)):
            write_image(out / rel, img, maxval=65535)
            written.append(out / rel)
        entries.append((hr_rel, lr_rel, seed))
    if errors:
        for p in written:
            p.unlink(missing_ok=True)
        raise CliError("degrade failed; partial outputs removed:\n  " + "\n  ".join(errors), EXIT_IO)
    DatasetManifest(entries, "all").save(out / "manifest.tsv")
    cfg.echo(out)
    _emit(f"degraded {len(entries)} images at x{scale} into {out}")
    return EXIT_OK


def _resolve_manifests(args):
    if args.data:
        root = Path(args.data)
        train_m = DatasetManifest.load(root / "train.tsv")
        test_path = root / "test.tsv"
        test_m = DatasetManifest.load(test_path) if test_path.exists() else None
        return train_m, test_m, root
    if not args.manifest:
        raise ConfigurationError("train needs --data DIR or --manifest FILE")
    train_m = DatasetManifest.load(args.manifest)
    test_m = DatasetManifest.load(args.test_manifest) if args.test_manifest else None
    return train_m, test_m, Path(args.manifest).parent


def cmd_train(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    train_m, test_m, root = _resolve_manifests(args)
    run = replace(cfg.train, checkpoint_path=str(out / "model.bin"))
    train_set = load_pairs(train_m, root)
    test_set = load_pairs(test_m, root) if test_m else []
    params = param_init(cfg.network, seed=run.seed)
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    result = train_pairs(params, train_set, test_set, run, on_epoch=lambda e: _emit(e.line()))
    atomic_write_bytes(out / "train_log.tsv", result.log_text().encode("utf-8"))
    if test_set:
        bp, bs = bicubic_baseline(test_set, cfg.network.scale)
        _emit(f"bicubic baseline\t{bp:.6f}\t{bs:.6f}")
    _emit(f"{result.steps} steps in {result.seconds:.1f}s; checkpoint {out / 'model.bin'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    params = load_params(args.checkpoint, cfg.network if "network" in cfg.explicit else None)
    files = _pgm_files(args.input_dir)
    if not files:
        raise CliError(f"no .pgm files in {args.input_dir}", EXIT_IO)
    for path in files:
        write_image(out / path.name, super_resolve(read_image(path), params), maxval=65535)
    cfg.echo(out)
    _emit(f"wrote {len(files)} SR images (x{params.config.scale}) to {out}")
    return EXIT_OK


def _match(hr_dir, other_dir, label) -> list[tuple[Path, Path]]:
    hr = {p.name: p for p in _pgm_files(hr_dir)}
    other = {p.name: p for p in _pgm_files(other_dir)}
    missing = sorted(set(hr) ^ set(other))
    if missing:
        lines = [f"{n} (only in {'hr' if n in hr else label})" for n in missing]
        raise CliError("unmatched files:\n  " + "\n  ".join(lines), EXIT_IO)
    if not hr:
        raise CliError(f"no .pgm files in {hr_dir}", EXIT_IO)
    return [(hr[n], other[n]) for n in sorted(hr)]


def _score(pairs) -> tuple[float, float]:
    ps, ss = zip(*[(psnr(a, b), ssim(a, b)) for a, b in pairs])
    return float(np.mean(ps)), float(np.mean(ss))


def eval_report(rows: list[tuple[str, int, float, float]]) -> str:
    lines = ["method\tscale\tpsnr/ssim"]
    for name, scale, p, s in rows:
        lines.append(f"{name}\tx{scale}\t{'inf' if np.isinf(p) else f'{p:.4f}'}/{s:.4f}")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    cfg = build_config(args)
    out = out_dir(args)
    scale = cfg.network.scale
    rows = []
    if args.lr_dir:
        pairs = _match(args.hr_dir, args.lr_dir, "lr")
        imgs = [(read_image(h), read_image(l)) for h, l in pairs]
        for h, l in imgs:
            if h.shape != (l.shape[0] * scale, l.shape[1] * scale):
                raise ConfigurationError(f"HR {h.shape} is not x{scale} of LR {l.shape}")
        rows.append(("Bicubic", scale, *_score(
            [(bicubic_resample(l, *h.shape), h) for h, l in imgs])))
        if args.checkpoint:
            params = load_params(args.checkpoint, cfg.network if "network" in cfg.explicit else None)
            rows.append((METHOD_NAME, params.config.scale, *_score([(super_resolve(l, params), h) for h, l in imgs])))
    if args.sr_dir:
        pairs = _match(args.hr_dir, args.sr_dir, "sr")
        rows.append((METHOD_NAME, scale, *_score([(read_image(s), read_image(h)) for h, s in pairs])))
    if not rows:
        raise ConfigurationError("eval needs --sr-dir and/or --lr-dir")
    text = eval_report(rows)
    atomic_write_bytes(out / "eval_report.tsv", text.encode("utf-8"))
    cfg.echo(out)
    _emit(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradcheck_suite(tolerance=args.tolerance, seed=args.seed or 0, blocks=args.blocks)
    _emit(report.text())
    if args.out:
        atomic_write_bytes(Path(args.out) / "gradcheck.tsv", report.text().encode("utf-8"))
    return EXIT_OK if report.passed else EXIT_VERIFY


# ----------------------------------------------------------------- ablation

def ablation_arms(axis: str) -> tuple[list[str], list[tuple[list[str], dict]]]:
    """Row labels and network overrides for each sweep."""
    if axis == "alpha":
        return ["Parameters"], [(["0.5"], dict(alpha=0.5)), (["0.75"], dict(alpha=0.75)), (["1"], dict(alpha=1.0))]
    if axis == "fem":
        return ["Parameters"], [(["3"], dict(fem_count=3)), (["4"], dict(fem_count=4))]
    if axis == "bicubic":
        return ["Parameters"], [(["No BiCubic"], dict(use_bicubic_skip=False)), (["BiCubic"], dict(use_bicubic_skip=True))]
    if axis == "attention":
        return ["Parameters"], [(["No Attention"], dict(use_asgnn=False)), (["Attention"], dict(use_asgnn=True))]
    if axis == "mco-msc":
        combos = [(0, 1, True), (1, 0, True), (2, 1, True), (1, 2, True), (2, 2, True), (2, 2, False)]
        return ["MCO", "MSC", "Attention"], [
            ([str(m), str(s), "√" if a else "×"], dict(mco_count=m, msc_count=s, use_asgnn=a)) for m, s, a in combos]
    raise ConfigurationError(f"unknown ablation axis {axis!r}")


def run_ablation(axis: str, train_set, test_set, network: NetworkConfig, run: TrainRunConfig,
                 log=None) -> str:
    """Train one model per arm with identical seeds; return the table text."""
    label_cols, arms = ablation_arms(axis)
    lines = [TOY_NOTE, "\t".join(label_cols + ["Scale", "Toy"])]
    for labels, overrides in arms:
        net = replace(network, **overrides)
        result = train_pairs(param_init(net, seed=run.seed), train_set, test_set, run)
        final = result.log[-1]
        lines.append("\t".join(labels + [f"×{net.scale}", f"{final.psnr:.4f}/{final.ssim:.4f}"]))
        if log:
            log(lines[-1])
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    cfg = build_config(args, base_network=toy_network(), base_train=toy_run())
    out = out_dir(args)
    if args.data:
        root = Path(args.data)
        train_set = load_pairs(DatasetManifest.load(root / "train.tsv"), root)
        test_set = load_pairs(DatasetManifest.load(root / "test.tsv"), root)
    else:
        pairs = toy_pairs(count=20, size=96, scale=cfg.network.scale, seed=cfg.train.seed)
        train_set, test_set = pairs[:15], pairs[15:]
    text = run_ablation(args.axis, train_set, test_set, cfg.network, cfg.train)
    atomic_write_bytes(out / f"ablation_{args.axis}.tsv", text.encode("utf-8"))
    cfg.echo(out)
    _emit(text)
    return EXIT_OK


# ----------------------------------------------------------------- parser

def _add_common(p: argparse.ArgumentParser, model: bool = True, training: bool = False) -> None:
    p.add_argument("--config", help="INI file with [network], [train], [degradation] sections")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./asgnn_out)")
    p.add_argument("--seed", type=int)
    if model:
        p.add_argument("--scale", type=int, choices=(2, 4))
        p.add_argument("--width", type=int)
        p.add_argument("--fem", type=int)
        p.add_argument("--dfcm", type=int)
        p.add_argument("--patch", type=int)
        p.add_argument("--alpha", type=float)
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--steps", type=int, help="optimizer steps per epoch")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--crop-size", type=int, help="HR crop side")
        p.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asgnn-sr", description="Graph-attention MRI super-resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toydata", help="write a procedural textured HR/LR dataset")
    _add_common(p)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--held-out", type=int, default=5)
    p.add_argument("--size", type=int, default=96)
    p.set_defaults(func=cmd_toydata)

    p = sub.add_parser("degrade", help="synthesize LR images and a manifest from a directory of HR PGMs")
    _add_common(p)
    p.add_argument("--hr-dir", required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train on a manifest; writes model.bin and train_log.tsv")
    _add_common(p, training=True)
    p.add_argument("--data", help="directory holding train.tsv (and optionally test.tsv)")
    p.add_argument("--manifest")
    p.add_argument("--test-manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve a directory of LR PGMs")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input-dir", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM report against HR ground truth")
    _add_common(p)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--sr-dir")
    p.add_argument("--lr-dir", help="adds a bicubic baseline row (and a model row with --checkpoint)")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--seed", type=int)
    p.add_argument("--blocks", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="toy-scale sweep over one design axis")
    _add_common(p, training=True)
    p.add_argument("--axis", required=True, choices=["alpha", "fem", "bicubic", "attention", "mco-msc"])
    p.add_argument("--data", help="toy dataset directory (default: generated in memory)")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"asgnn-sr {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigurationError, ConfigMismatchError) as exc:
        print(f"asgnn-sr {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"asgnn-sr {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
