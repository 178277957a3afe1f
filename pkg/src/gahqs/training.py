"""Training, evaluation and the finite-difference gradient harness."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import kspace, metrics
from .numerics import NonFiniteError

logger = logging.getLogger(__name__)


class NonFiniteLossError(NonFiniteError):
    def __init__(self, step, batch_ids):
        super().__init__(f"non-finite loss at step {step}, batch {list(batch_ids)}")
        self.step = step
        self.batch_ids = list(batch_ids)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 2
    learning_rate: float = 1e-4
    momentum_pair: tuple = (0.9, 0.999)
    loss: str = "l1"
    seed: int = 0
    checkpoint_every: int = 1
    max_steps: int | None = None  # stop early after this many optimizer steps

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.learning_rate <= 0 or self.checkpoint_every <= 0:
            raise ValueError("epochs must be >= 0; batch_size, learning_rate, checkpoint_every > 0")
        if not all(0 < m < 1 for m in self.momentum_pair):
            raise ValueError("momentum_pair entries must lie in (0, 1)")
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"loss must be 'l1' or 'l2', got {self.loss!r}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass
class TrainResult:
    state_dict: dict
    trace: list = field(default_factory=list)  # per-epoch (val psnr, val ssim)
    losses: list = field(default_factory=list)  # per-step training loss
    best_epoch: int | None = None
    steps: int = 0
    final_state_dict: dict | None = None  # weights after the last step


def _stack(images, dtype=torch.complex64):
    return torch.as_tensor(np.stack([np.asarray(im) for im in images])).to(dtype)


def _loss(recon, truth, kind):
    a, b = recon.abs(), truth.abs()
    return F.l1_loss(a, b) if kind == "l1" else F.mse_loss(a, b)


@torch.no_grad()
def reconstruct(model, images, mask, batch_size=4):
    """Simulate measurements of ``images`` under ``mask`` and run ``model`` on them."""
    dtype = torch.complex128 if next(model.parameters(), torch.empty(0)).dtype == torch.float64 else torch.complex64
    x = _stack(images, dtype)
    y = kspace.apply_forward(x, mask)
    out = [model(y[i:i + batch_size], mask) for i in range(0, len(x), batch_size)]
    return torch.cat(out).numpy() if out else np.empty((0,) + x.shape[1:])


def validate(model, images, mask):
    recons = reconstruct(model, images, mask)
    p = [metrics.psnr(r, t) for r, t in zip(recons, images)]
    s = [metrics.ssim(r, t) for r, t in zip(recons, images)]
    return float(np.mean(p)), float(np.mean(s))


def train(model, train_images, val_images, mask, config: TrainConfig, on_checkpoint=None):
    """Adam on the magnitude loss; keeps the best-validation weights (loaded into ``model``).

    Data order comes from ``config.seed``; model initialisation is the caller's
    job, so seed torch before building the model for a fully reproducible run.
    ``on_checkpoint(epoch, model)`` is called every ``checkpoint_every`` epochs.
    """
    if not len(train_images):
        raise ValueError("training split is empty")
    torch.use_deterministic_algorithms(True, warn_only=True)
    dtype = torch.complex128 if next(model.parameters()).dtype == torch.float64 else torch.complex64
    x_all = _stack(train_images, dtype)
    y_all = kspace.apply_forward(x_all, mask)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=tuple(config.momentum_pair))
    rng = np.random.default_rng(config.seed)

    result = TrainResult(copy.deepcopy(model.state_dict()))
    best_key = None
    for epoch in range(config.epochs):
        if config.max_steps is not None and result.steps >= config.max_steps:
            break
        model.train()
        order = rng.permutation(len(x_all))
        for start in range(0, len(order), config.batch_size):
            if config.max_steps is not None and result.steps >= config.max_steps:
                break
            idx = order[start:start + config.batch_size]
            recon = model(y_all[idx], mask)
            loss = _loss(recon, x_all[idx], config.loss)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(result.steps, idx.tolist())
            opt.zero_grad()
            loss.backward()
            opt.step()
            result.steps += 1
            result.losses.append(loss.item())
        model.eval()
        p, s = validate(model, val_images, mask) if len(val_images) else (float("nan"), float("nan"))
        result.trace.append((p, s))
        logger.info("epoch %d step %d loss %.5f val psnr %.3f ssim %.4f", epoch, result.steps, result.losses[-1], p, s)
        key = (p, s, -epoch)
        if best_key is None or key > best_key:
            best_key = key
            result.best_epoch = epoch
            result.state_dict = copy.deepcopy(model.state_dict())
        if on_checkpoint is not None and (epoch + 1) % config.checkpoint_every == 0:
            on_checkpoint(epoch, model)
    result.final_state_dict = copy.deepcopy(model.state_dict())
    model.load_state_dict(result.state_dict)
    return result


# --------------------------------------------------------------------------
# evaluation


@dataclass
class ReconstructionReport:
    psnr: list
    ssim: list
    zero_filled_psnr: list
    zero_filled_ssim: list
    num_parameters: int
    error_maps: list = field(default_factory=list, repr=False)
    convergence_trace: list = field(default_factory=list)
    config_hash: str = ""
    sample_ids: list = field(default_factory=list)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim))

    def records(self):
        for i, sid in enumerate(self.sample_ids or range(len(self.psnr))):
            yield {
                "sample": str(sid),
                "psnr": self.psnr[i],
                "ssim": self.ssim[i],
                "zero_filled_psnr": self.zero_filled_psnr[i],
                "zero_filled_ssim": self.zero_filled_ssim[i],
            }

    def dumps(self):
        """JSON lines: one record per sample, then a summary record."""
        lines = [json.dumps(r) for r in self.records()]
        lines.append(json.dumps({
            "summary": True,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "num_parameters": self.num_parameters,
            "config_hash": self.config_hash,
        }))
        return "\n".join(lines) + "\n"


def config_hash(*objs):
    blob = json.dumps([asdict(o) if hasattr(o, "__dataclass_fields__") else o for o in objs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def evaluate(model, images, mask, sample_ids=None, trace=(), workers=1):
    """Per-sample PSNR/SSIM of ``model`` and of the zero-filled input, with error maps."""
    if not len(images):
        raise ValueError("evaluation split is empty")
    model.eval()
    recons = reconstruct(model, images, mask)
    zero = [kspace.apply_adjoint(kspace.apply_forward(np.asarray(im), mask), mask) for im in images]

    def score(i):
        return (
            metrics.psnr(recons[i], images[i]),
            metrics.ssim(recons[i], images[i]),
            metrics.psnr(zero[i], images[i]),
            metrics.ssim(zero[i], images[i]),
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        scores = list(pool.map(score, range(len(images))))
    cols = list(zip(*scores))
    return ReconstructionReport(
        psnr=list(cols[0]),
        ssim=list(cols[1]),
        zero_filled_psnr=list(cols[2]),
        zero_filled_ssim=list(cols[3]),
        num_parameters=sum(p.numel() for p in model.parameters()),
        error_maps=[metrics.error_map(r, t) for r, t in zip(recons, images)],
        convergence_trace=list(trace),
        config_hash=config_hash(model.config) if hasattr(model, "config") else "",
        sample_ids=list(sample_ids) if sample_ids is not None else [str(i) for i in range(len(images))],
    )


# --------------------------------------------------------------------------
# gradient checks


@dataclass
class GradCheckReport:
    module: str
    checked: int
    max_rel_error: float
    all_finite: bool
    details: list = field(default_factory=list)

    @property
    def passed(self):
        return self.all_finite and self.max_rel_error <= 1e-4


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(fn, params, count=20, step=1e-5, seed=0, floor=1e-6):
    """Compare autograd against central differences on ``count`` random parameter entries.

    ``fn`` maps nothing to a scalar loss and must read ``params`` in place.
    Returns (max relative error, all gradients finite, per-entry details).
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    grads = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    finite = all(torch.isfinite(g).all() for g in grads)
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(seed)
    flat_idx = rng.choice(sizes.sum(), size=min(count, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    details = []
    worst = 0.0
    with torch.no_grad():
        for fi in sorted(flat_idx):
            pi = int(np.searchsorted(offsets, fi, side="right") - 1)
            j = int(fi - offsets[pi])
            flat = params[pi].view(-1)
            orig = flat[j].item()
            flat[j] = orig + step
            up = fn().item()
            flat[j] = orig - step
            down = fn().item()
            flat[j] = orig
            numeric = (up - down) / (2 * step)
            analytic = grads[pi].view(-1)[j].item()
            err = relative_error(analytic, numeric, floor)
            worst = max(worst, err)
            details.append((pi, j, analytic, numeric, err))
    return worst, bool(finite), details


def _grad_target(module_name, config, generator):
    """Build (module, forward closure inputs) in float64 for the named check."""
    from . import unfold
    from .msst import MSST
    from .pgsa import PGSA

    size = config.get("size", 8)
    channels = config.get("channels", 8)
    splits = config.get("num_splits", 2)
    if module_name == "pgsa":
        mod = PGSA(channels, splits).double()
        x = torch.randn(1, channels, size, size, dtype=torch.float64, generator=generator)
        return mod, lambda: mod(x)
    if module_name == "msst":
        ws = config.get("window_size", 4)
        mod = MSST(channels, splits, window_size=ws, heads=config.get("heads", 4), img_size=size).double()
        x = torch.randn(1, channels, size, size, dtype=torch.float64, generator=generator)
        return mod, lambda: mod(x)
    mask = kspace.make_mask(config.get("mask_kind", "radial"), size, size, config.get("acceleration", 4))
    variant = config.get("variant", "gahqs")
    cfg = unfold.UnfoldConfig(
        num_stages=config.get("num_stages", 1 if module_name == "stage" else 2),
        num_splits=splits,
        channels=channels,
        variant=variant,
        window_size=config.get("window_size", 4),
        heads=config.get("heads", 4),
        img_size=size,
        fusion=config.get("fusion"),
        denoiser=config.get("denoiser"),
    )
    model = unfold.make_variant(cfg).double()
    x = torch.randn(1, size, size, dtype=torch.complex128, generator=generator)
    y = kspace.apply_forward(x, mask.pattern)
    if module_name == "stage":
        stage = model.stages[0]
        state = unfold.lift(kspace.apply_adjoint(y, mask.pattern), channels)
        prev = torch.randn(state.z.shape, dtype=torch.float64, generator=generator)
        state = unfold.StageState(state.x, prev, state.z_hat, 0)
        m = torch.as_tensor(mask.pattern, dtype=torch.float64)

        def run():
            s = stage(state, y, m)
            return torch.cat([s.x, s.z, s.z_hat], dim=1)

        return stage, run
    if module_name == "full_model":
        return model, lambda: torch.view_as_real(model(y, mask))
    raise ValueError(f"unknown gradient-check target {module_name!r}")


def gradient_check(module_name, config=None, count=20, step=1e-5, seed=0, floor=1e-5):
    """Finite-difference gradient check of ``pgsa``, ``msst``, ``stage`` or ``full_model`` at float64.

    The scalar loss is a fixed random projection of the module output.
    ``config`` keys: size, channels, num_splits, window_size, heads, variant,
    zero (zero input and parameters corner case). Gradients below ``floor``
    in magnitude are compared absolutely (float64 differences at this step
    carry ~1e-10 of noise).
    """
    config = dict(config or {})
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    mod, run = _grad_target(module_name, config, gen)
    if config.get("zero"):
        with torch.no_grad():
            for p in mod.parameters():
                p.zero_()
    with torch.no_grad():
        base = run().clone()
        probe = torch.randn(base.shape, dtype=torch.float64, generator=gen)

    # subtracting the initial output leaves the gradient alone but keeps the
    # summed loss small, which cuts cancellation noise in the differences
    def fn():
        return ((run() - base) * probe).sum()

    worst, finite, details = finite_difference_check(fn, list(mod.parameters()), count, step, seed, floor)
    return GradCheckReport(module_name, len(details), worst, finite, details)
