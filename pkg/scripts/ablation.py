"""Desk-scale ablation: every variant over several seeds, mean validation PSNR per variant.

    python3 scripts/ablation.py --seeds 0 1 2 --out runs/ablation
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from gahqs import cli, kspace

VARIANTS = ("gahqs", "baseline1", "baseline2", "baseline3")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS))
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    base = cli.RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_imgs, val_imgs, val_ids = cli.load_datasets(base)
    mask = kspace.make_mask(base.mask.kind, base.data.size, base.data.size, base.mask.R, seed=base.mask.seed)

    table = {v: [] for v in args.variants}
    for seed in args.seeds:
        cfg = replace(base, train=replace(base.train, seed=seed))
        for v in args.variants:
            model, _, report = cli._train_variant(cfg, v, train_imgs, val_imgs, val_ids, mask, out, f"_{v}_{seed}")
            table[v].append(report.mean_psnr)
            print(f"{v:10s} seed {seed}  {report.mean_psnr:.3f} dB  ({model.num_parameters()} params)", flush=True)

    lines = ["variant\t" + "\t".join(f"seed{s}" for s in args.seeds) + "\tmean"]
    for v, vals in table.items():
        lines.append(f"{v}\t" + "\t".join(f"{p:.3f}" for p in vals) + f"\t{np.mean(vals):.3f}")
    (out / "ablation_seeds.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


if __name__ == "__main__":
    main()
