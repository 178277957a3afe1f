"""Classical HQS against its momentum variant on random convex problems.

Prints iterations to 1e-6 relative error for each instance and plots the
error curves of the first one.

    python3 scripts/convergence_demo.py --trials 10 --plot convergence.png
"""

import argparse

import numpy as np

from gahqs import checks, kspace, unfold


def error_curve(y, mask, anchor, reg, x_star, accelerate, iters):
    z = z_hat = kspace.apply_adjoint(y, mask)
    errs = []
    for k in range(1, iters + 1):
        x = kspace.data_consistency(z_hat, y, 0.5, mask)
        z_next = (x + reg * anchor) / (1 + reg)
        beta = unfold.momentum_schedule(k) if accelerate else 0.0
        z_hat = (1 + beta) * z_next - beta * z
        z = z_next
        errs.append(np.linalg.norm(x - x_star) / np.linalg.norm(x_star))
    return errs


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--plot")
    args = ap.parse_args()

    ratios = []
    for s in range(args.trials):
        plain, fast = checks.acceleration_counts(s, args.size)
        ratios.append(fast / plain)
        print(f"instance {s:3d}  hqs {plain:6d}  accelerated {fast:6d}  ratio {fast / plain:.3f}")
    print(f"median ratio {np.median(ratios):.3f}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        y, mask, anchor, reg = checks.acceleration_instance(0, args.size)
        x_star = unfold.quadratic_fixed_point(y, mask, anchor, reg)
        plain, _ = checks.acceleration_counts(0, args.size)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for acc, label in ((False, "HQS"), (True, "accelerated")):
            ax.semilogy(error_curve(y, mask, anchor, reg, x_star, acc, plain), label=label)
        ax.set(xlabel="iteration", ylabel="relative error")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot)
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
