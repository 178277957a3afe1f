import zipfile

import pytest
import torch

from gahqs import checkpoint
from gahqs.checkpoint import ManifestMismatch
from gahqs.unfold import UnfoldConfig, make_variant


def model(variant="gahqs", seed=0, **kw):
    torch.manual_seed(seed)
    base = dict(num_stages=2, num_splits=2, channels=8, variant=variant, window_size=4, heads=2, img_size=16)
    base.update(kw)
    return make_variant(UnfoldConfig(**base))


def test_round_trip(tmp_path):
    m = model()
    checkpoint.save_checkpoint(tmp_path / "a.ckpt", m, extra={"epoch": 3})
    back, man = checkpoint.load_checkpoint(tmp_path / "a.ckpt", variant="gahqs")
    assert man["variant"] == "gahqs" and man["k"] == 2 and man["extra"] == {"epoch": 3}
    assert back.config == m.config
    for k, v in m.state_dict().items():
        assert torch.equal(back.state_dict()[k], v)
    assert [s["index"] for s in man["stages"]] == [0, 1]


def test_bytes_are_deterministic(tmp_path):
    checkpoint.save_checkpoint(tmp_path / "a.ckpt", model())
    checkpoint.save_checkpoint(tmp_path / "b.ckpt", model())
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    with zipfile.ZipFile(tmp_path / "a.ckpt") as zf:
        names = zf.namelist()
    assert names[0] == "manifest.json" and names[1:] == sorted(names[1:])


def test_variant_mismatch(tmp_path):
    checkpoint.save_checkpoint(tmp_path / "a.ckpt", model("baseline1"))
    with pytest.raises(ManifestMismatch, match="baseline1"):
        checkpoint.load_checkpoint(tmp_path / "a.ckpt", variant="gahqs")


def _rewrite(src, dst, edit_manifest=None, drop=()):
    import json

    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for info in zin.infolist():
            if info.filename in drop:
                continue
            payload = zin.read(info)
            if info.filename == "manifest.json" and edit_manifest:
                man = json.loads(payload)
                edit_manifest(man)
                payload = json.dumps(man).encode()
            zout.writestr(info, payload)


def test_stage_count_mismatch(tmp_path):
    checkpoint.save_checkpoint(tmp_path / "a.ckpt", model())
    _rewrite(tmp_path / "a.ckpt", tmp_path / "b.ckpt", lambda m: m.update(k=3))
    with pytest.raises(ManifestMismatch, match="stages"):
        checkpoint.load_checkpoint(tmp_path / "b.ckpt")


def test_parameter_set_mismatch(tmp_path):
    checkpoint.save_checkpoint(tmp_path / "a.ckpt", model("ahqs"))
    _rewrite(tmp_path / "a.ckpt", tmp_path / "b.ckpt", drop={"params/stages.1.beta"})
    with pytest.raises(ManifestMismatch, match="missing"):
        checkpoint.load_checkpoint(tmp_path / "b.ckpt")


def test_format_version(tmp_path):
    checkpoint.save_checkpoint(tmp_path / "a.ckpt", model("hqs"))
    _rewrite(tmp_path / "a.ckpt", tmp_path / "b.ckpt", lambda m: m.update(format_version=99))
    with pytest.raises(ManifestMismatch, match="format"):
        checkpoint.load_checkpoint(tmp_path / "b.ckpt")
