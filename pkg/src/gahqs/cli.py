"""``gahqs`` command line: maskgen, train, reconstruct, ablate, check, plot.

Exit codes
    0  success
    2  bad flags, unparseable config or input file
    3  I/O failure
    4  non-finite loss or activation
    5  checkpoint manifest does not match the request
    6  one or more invariant checks failed
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import checkpoint, checks, data, kspace, metrics, training, unfold
from .numerics import NonFiniteError

logger = logging.getLogger("gahqs")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NONFINITE, EXIT_MANIFEST, EXIT_CHECK = 0, 2, 3, 4, 5, 6


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class ModelSection:
    variant: str = "gahqs"
    k: int = 2
    S: int = 4
    C: int = 16
    window: int = 8
    heads: int = 4
    variants: tuple = ("gahqs", "baseline1", "baseline2", "baseline3")  # used by ablate


@dataclass(frozen=True)
class MaskSection:
    kind: str = "radial"
    R: int = 4
    seed: int = 0
    acs: int | None = None


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 20
    batch_size: int = 2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    loss: str = "l1"
    seed: int = 0
    checkpoint_every: int = 1
    max_steps: int | None = 200


@dataclass(frozen=True)
class DataSection:
    manifest: str | None = None  # when empty, synthetic phantoms below
    phantom: str = "random_ellipses"
    size: int = 64
    train_count: int = 20
    val_count: int = 5
    train_seed: int = 0
    val_seed: int = 1000


@dataclass(frozen=True)
class OutSection:
    dir: str = "run"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    mask: MaskSection = field(default_factory=MaskSection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)
    out: OutSection = field(default_factory=OutSection)

    def unfold_config(self, variant=None, img_size=None):
        m = self.model
        return unfold.UnfoldConfig(
            num_stages=m.k, num_splits=m.S, channels=m.C, variant=variant or m.variant,
            window_size=m.window, heads=m.heads, img_size=img_size or self.data.size,
        )

    def train_config(self):
        t = self.train
        return training.TrainConfig(
            epochs=t.epochs, batch_size=t.batch_size, learning_rate=t.learning_rate,
            momentum_pair=(t.beta1, t.beta2), loss=t.loss, seed=t.seed,
            checkpoint_every=t.checkpoint_every, max_steps=t.max_steps,
        )

    def dumps(self):
        lines = []
        for sec in fields(self):
            lines.append(f"[{sec.name}]")
            for f in fields(getattr(self, sec.name)):
                lines.append(f"{f.name} = {_format_value(getattr(getattr(self, sec.name), f.name))}")
            lines.append("")
        return "\n".join(lines)


def _format_value(v):
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(section, key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if raw == "" or raw.lower() == "none":
            return None
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise CliError(EXIT_USAGE, f"config [{section}] {key}: cannot parse {raw!r}") from None


def parse_run_config(text, source="<config>"):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (S, C, R)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise CliError(EXIT_USAGE, f"cannot parse config {source}: {exc}") from None
    base = RunConfig()
    sections = {f.name: getattr(base, f.name) for f in fields(base)}
    for name in parser.sections():
        if name not in sections:
            raise CliError(EXIT_USAGE, f"unknown config section [{name}]")
        sec = sections[name]
        defaults = {f.name: getattr(sec, f.name) for f in fields(sec)}
        changes = {}
        for key, raw in parser.items(name):
            if key not in defaults:
                raise CliError(EXIT_USAGE, f"unknown config key [{name}] {key}")
            changes[key] = _parse_value(name, key, raw, defaults[key])
        sections[name] = replace(sec, **changes)
    cfg = RunConfig(**sections)
    try:  # validate eagerly so a bad value is reported as a config error
        cfg.unfold_config()
        cfg.train_config()
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"invalid config {source}: {exc}") from None
    return cfg


def load_run_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from None
    return parse_run_config(text, str(path))


# --------------------------------------------------------------------------
# shared helpers


def _out_dir(path):
    try:
        p = Path(path)
        p.mkdir(parents=True, exist_ok=True)
        return p
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {path}: {exc}") from None


def _mask_from(cfg: RunConfig, height, width):
    m = cfg.mask
    try:
        return kspace.make_mask(m.kind, height, width, m.R, seed=m.seed, acs_lines=m.acs)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"mask: {exc}") from None


def load_datasets(cfg: RunConfig):
    """(train images, val images, val ids) from the manifest or from phantoms."""
    d = cfg.data
    if d.manifest:
        try:
            manifest = data.DatasetManifest.load(d.manifest)
            tr, va, _ = data.split_dataset(manifest, manifest.split, manifest.seed)
            train_imgs = data.DatasetManifest(tr).load_images()
            val_imgs = data.DatasetManifest(va).load_images()
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot load dataset: {exc}") from None
        except ValueError as exc:
            raise CliError(EXIT_USAGE, f"bad dataset: {exc}") from None
        return train_imgs, val_imgs, [e.sample_id for e in va]
    try:
        train_imgs = data.phantom_set(d.train_count, d.size, d.train_seed, d.phantom)
        val_imgs = data.phantom_set(d.val_count, d.size, d.val_seed, d.phantom)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"data: {exc}") from None
    return train_imgs, val_imgs, [f"{d.phantom}-{d.val_seed + i}" for i in range(d.val_count)]


def write_trace(path, trace):
    lines = ["# psnr ssim"] + [f"{p!r} {s!r}" for p, s in trace]
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path):
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: expected two columns, got {line!r}")
        rows.append((float(parts[0]), float(parts[1])))
    if not rows:
        raise ValueError(f"{path}: empty trace")
    return rows


def read_report(path):
    samples = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if not rec.get("summary"):
            samples.append(rec)
    if not samples:
        raise ValueError(f"{path}: report has no samples")
    return samples


def box_summary(values):
    """Quartiles and whisker ends of one per-sample metric column."""
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3), "max": float(v.max()), "n": int(v.size)}


def _train_variant(cfg: RunConfig, variant, train_imgs, val_imgs, val_ids, mask, out, tag=""):
    size = np.shape(train_imgs[0])[-1]
    torch.manual_seed(cfg.train.seed)
    model = unfold.make_variant(cfg.unfold_config(variant, size))
    extra = {"mask": mask.metadata(), "train": asdict(cfg.train)}
    last = out / f"last{tag}.ckpt"
    result = training.train(
        model, train_imgs, val_imgs, mask, cfg.train_config(),
        on_checkpoint=lambda epoch, m: checkpoint.save_checkpoint(last, m, extra),
    )
    final = unfold.make_variant(model.config)
    final.load_state_dict(result.final_state_dict)
    checkpoint.save_checkpoint(out / f"best{tag}.ckpt", model, extra)
    checkpoint.save_checkpoint(out / f"final{tag}.ckpt", final, extra)
    write_trace(out / f"trace{tag}.txt", result.trace)
    report = training.evaluate(model, val_imgs, mask, val_ids, result.trace)
    (out / f"report{tag}.jsonl").write_text(report.dumps())
    return model, result, report


# --------------------------------------------------------------------------
# commands


def cmd_maskgen(args):
    try:
        mask = kspace.make_mask(args.kind, args.height or args.size, args.width or args.size, args.accel,
                                seed=args.seed, acs_lines=args.acs)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from None
    out = Path(args.out)
    try:
        if out.parent != Path(""):
            out.parent.mkdir(parents=True, exist_ok=True)
        data.write_tensor(out, mask.pattern.astype(np.float32))
        meta = dict(mask.metadata(), height=mask.shape[0], width=mask.shape[1], fraction=mask.fraction)
        Path(str(out) + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write mask: {exc}") from None
    print(f"fraction {mask.fraction:.4f}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_run_config(args.config)
    if args.out:
        cfg = replace(cfg, out=OutSection(args.out))
    out = _out_dir(cfg.out.dir)
    (out / "config.ini").write_text(cfg.dumps())
    train_imgs, val_imgs, val_ids = load_datasets(cfg)
    mask = _mask_from(cfg, *np.shape(train_imgs[0]))
    data.write_tensor(out / "mask.tensor", mask.pattern.astype(np.float32))
    _, result, report = _train_variant(cfg, cfg.model.variant, train_imgs, val_imgs, val_ids, mask, out)
    print(f"steps {result.steps} best_epoch {result.best_epoch} val_psnr {report.mean_psnr:.3f} "
          f"val_ssim {report.mean_ssim:.4f} zero_filled_psnr {np.mean(report.zero_filled_psnr):.3f}")
    return EXIT_OK


def _read_array(path, what):
    try:
        return data.read_tensor(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {what} {path}: {exc}") from None
    except data.ContainerError as exc:
        raise CliError(EXIT_USAGE, f"bad {what} file {path}: {exc}") from None


def cmd_reconstruct(args):
    try:
        model, man = checkpoint.load_checkpoint(args.checkpoint, variant=args.variant)
    except checkpoint.ManifestMismatch as exc:
        raise CliError(EXIT_MANIFEST, str(exc)) from None
    except (OSError, KeyError) as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint {args.checkpoint}: {exc}") from None
    mask = _read_array(args.mask, "mask") != 0
    truth = None
    if args.image:
        truth = data._as_complex_image(_read_array(args.image, "image"))
        y = kspace.apply_forward(truth, mask)
    else:
        y = data._as_complex_image(_read_array(args.kspace, "k-space")) * mask
        if args.truth:
            truth = data._as_complex_image(_read_array(args.truth, "truth"))
    if np.shape(y) != mask.shape:
        raise CliError(EXIT_USAGE, f"input shape {np.shape(y)} does not match mask {mask.shape}")
    model.eval()
    with torch.no_grad():
        recon = model(torch.as_tensor(y).to(torch.complex64), mask).numpy()
    out = _out_dir(args.out)
    data.write_tensor(out / "recon.tensor", recon.astype(np.complex64))
    data.write_tensor(out / "magnitude.tensor", np.abs(recon).astype(np.float32))
    report = {"checkpoint_variant": man["variant"], "finite": bool(np.isfinite(recon).all())}
    if truth is None:
        report.update(psnr=None, ssim=None, metrics="absent")
    else:
        report.update(psnr=metrics.psnr(recon, truth), ssim=metrics.ssim(recon, truth),
                      zero_filled_psnr=metrics.psnr(kspace.apply_adjoint(y, mask), truth))
        data.write_tensor(out / "error_map.tensor", metrics.error_map(recon, truth).astype(np.float32))
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args):
    cfg = load_run_config(args.config)
    if args.out:
        cfg = replace(cfg, out=OutSection(args.out))
    variants = tuple(args.variants.split(",")) if args.variants else cfg.model.variants
    out = _out_dir(cfg.out.dir)
    (out / "config.ini").write_text(cfg.dumps())
    train_imgs, val_imgs, val_ids = load_datasets(cfg)
    mask = _mask_from(cfg, *np.shape(train_imgs[0]))
    rows = []
    for v in variants:
        try:
            model, _, report = _train_variant(cfg, v, train_imgs, val_imgs, val_ids, mask, out, f"_{v}")
            rows.append({"variant": v, "psnr": report.mean_psnr, "ssim": report.mean_ssim,
                         "params": model.num_parameters(), "status": "ok"})
        except (NonFiniteError, ValueError) as exc:  # keep sweeping past a failed variant
            logger.error("variant %s failed: %s", v, exc)
            rows.append({"variant": v, "psnr": float("nan"), "ssim": float("nan"), "params": 0,
                         "status": f"failed: {exc}"})
    lines = ["variant\tpsnr\tssim\tparams\tstatus"]
    lines += [f"{r['variant']}\t{r['psnr']:.4f}\t{r['ssim']:.4f}\t{r['params']}\t{r['status']}" for r in rows]
    table = "\n".join(lines) + "\n"
    (out / "ablation.tsv").write_text(table)
    print(table, end="")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_NONFINITE


def cmd_check(args):
    try:
        results = checks.run_checks(args.only, quick=args.quick)
    except KeyError as exc:
        raise CliError(EXIT_USAGE, str(exc.args[0])) from None
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}")
        return EXIT_CHECK
    return EXIT_OK


def cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    traces, reports = {}, {}
    for f in args.files:
        try:
            if str(f).endswith((".jsonl", ".json")):
                reports[Path(f).stem] = read_report(f)
            else:
                traces[Path(f).stem] = read_trace(f)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {f}: {exc}") from None
        except ValueError as exc:  # includes json decode errors
            raise CliError(EXIT_USAGE, f"unparseable input {f}: {exc}") from None
    out = _out_dir(args.out)
    written = []
    if traces:
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for name, rows in traces.items():
            epochs = np.arange(1, len(rows) + 1)
            axes[0].plot(epochs, [r[0] for r in rows], label=name)
            axes[1].plot(epochs, [r[1] for r in rows], label=name)
        axes[0].set(xlabel="epoch", ylabel="PSNR (dB)")
        axes[1].set(xlabel="epoch", ylabel="SSIM")
        axes[0].legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(out / f"convergence.{args.format}")
        plt.close(fig)
        written.append(f"convergence.{args.format}")
    if reports:
        summary = {}
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for ax, key in zip(axes, ("psnr", "ssim")):
            cols = [[float(s[key]) for s in samples] for samples in reports.values()]
            ax.boxplot(cols)
            ax.set_xticks(range(1, len(cols) + 1), list(reports), rotation=20, fontsize="small")
            ax.set_ylabel(key.upper())
            for name, col in zip(reports, cols):
                summary.setdefault(name, {})[key] = box_summary(col)
        fig.tight_layout()
        fig.savefig(out / f"boxplot.{args.format}")
        plt.close(fig)
        (out / "box_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        written += [f"boxplot.{args.format}", "box_summary.json"]
    for w in written:
        print(out / w)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="gahqs", description="Deep-unfolding CS-MRI reconstruction toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("maskgen", help="generate an undersampling mask")
    m.add_argument("--kind", required=True, choices=kspace.MASK_KINDS)
    m.add_argument("--accel", required=True, type=int)
    m.add_argument("--size", type=int, default=64)
    m.add_argument("--height", type=int)
    m.add_argument("--width", type=int)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--acs", type=int)
    m.add_argument("--out", default="mask.tensor")
    m.set_defaults(func=cmd_maskgen)

    t = sub.add_parser("train", help="train one variant from a run config")
    t.add_argument("config")
    t.add_argument("--out", help="override [out] dir")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reconstruct", help="reconstruct with a trained checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--variant", help="expected variant; mismatch exits 5")
    r.add_argument("--mask", required=True)
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="complex image; measurements are simulated and it serves as truth")
    src.add_argument("--kspace", help="measured k-space")
    r.add_argument("--truth", help="ground truth for --kspace input")
    r.add_argument("--out", default="recon")
    r.set_defaults(func=cmd_reconstruct)

    a = sub.add_parser("ablate", help="train and compare several variants")
    a.add_argument("config")
    a.add_argument("--variants", help="comma-separated; overrides [model] variants")
    a.add_argument("--out", help="override [out] dir")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("check", help="run the invariant battery")
    c.add_argument("--only", nargs="+", metavar="CHECK", help=f"subset of {', '.join(checks.CHECKS)}")
    c.add_argument("--quick", action="store_true", help="smaller trial counts")
    c.set_defaults(func=cmd_check)

    pl = sub.add_parser("plot", help="plot traces (.txt) and reports (.jsonl)")
    pl.add_argument("files", nargs="+")
    pl.add_argument("--out", default="plots")
    pl.add_argument("--format", default="png", choices=("png", "pdf", "svg"))
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"gahqs: error: {exc}", file=sys.stderr)
        return exc.code
    except NonFiniteError as exc:
        print(f"gahqs: error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except OSError as exc:
        print(f"gahqs: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
