"""Single-file model checkpoints.

A checkpoint is a zip archive (stored, fixed timestamps, sorted entries, so
equal weights give equal bytes) holding ``manifest.json`` and one tensor
container per state-dict entry under ``params/``.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, fields

import numpy as np
import torch

from .data import decode_tensor, encode_tensor
from .unfold import UnfoldConfig, UnfoldingNet, make_variant

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class ManifestMismatch(ValueError):
    pass


def manifest_for(model: UnfoldingNet, extra=None):
    cfg = model.config
    state = model.state_dict()
    stages = []
    for k in range(cfg.num_stages):
        prefix = f"stages.{k}."
        stages.append({"index": k, "parameters": sorted(n[len(prefix):] for n in state if n.startswith(prefix))})
    man = {
        "format_version": FORMAT_VERSION,
        "variant": cfg.variant,
        "k": cfg.num_stages,
        "S": cfg.num_splits,
        "C": cfg.channels,
        "window": cfg.window_size,
        "heads": cfg.heads,
        "img_size": cfg.img_size,
        "fusion": cfg.resolved_fusion,
        "denoiser": cfg.resolved_denoiser,
        "config": asdict(cfg),
        "stages": stages,
        "tensors": {n: list(t.shape) for n, t in sorted(state.items())},
    }
    if extra:
        man["extra"] = extra
    return man


def _entry(name, payload):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info, payload


def save_checkpoint(path, model: UnfoldingNet, extra=None):
    man = manifest_for(model, extra)
    entries = [_entry("manifest.json", json.dumps(man, indent=1, sort_keys=True).encode())]
    for name, t in sorted(model.state_dict().items()):
        entries.append(_entry(f"params/{name}", encode_tensor(t.detach().cpu().numpy())))
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for info, payload in entries:
            zf.writestr(info, payload)
    return man


def read_manifest(path):
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("manifest.json"))


def _config_from(man):
    known = {f.name for f in fields(UnfoldConfig)}
    cfg = UnfoldConfig(**{k: v for k, v in man["config"].items() if k in known})
    if len(man["stages"]) != cfg.num_stages or man["k"] != cfg.num_stages:
        raise ManifestMismatch(f"manifest lists {len(man['stages'])} stages but k={man['k']}")
    return cfg


def load_checkpoint(path, variant=None, dtype=torch.float32):
    """Rebuild the model stored at ``path``; raises ManifestMismatch if ``variant`` disagrees."""
    with zipfile.ZipFile(path) as zf:
        man = json.loads(zf.read("manifest.json"))
        if man.get("format_version") != FORMAT_VERSION:
            raise ManifestMismatch(f"unsupported checkpoint format {man.get('format_version')!r}")
        if variant is not None and man["variant"] != variant:
            raise ManifestMismatch(f"checkpoint holds variant {man['variant']!r}, requested {variant!r}")
        cfg = _config_from(man)
        model = make_variant(cfg).to(dtype)
        expected = model.state_dict()
        stored = {n[len("params/"):] for n in zf.namelist() if n.startswith("params/")}
        if stored != set(expected):
            missing = sorted(set(expected) - stored)[:3]
            extra = sorted(stored - set(expected))[:3]
            raise ManifestMismatch(f"parameter set differs (missing {missing}, unexpected {extra})")
        state = {}
        for name, ref in expected.items():
            arr = decode_tensor(zf.read(f"params/{name}"))
            if tuple(arr.shape) != tuple(ref.shape):
                raise ManifestMismatch(f"{name}: stored shape {arr.shape}, model expects {tuple(ref.shape)}")
            state[name] = torch.from_numpy(np.array(arr)).to(ref.dtype)
    model.load_state_dict(state)
    return model, man
