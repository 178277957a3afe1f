import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gahqs import data
from gahqs.data import ContainerError


# ---------------------------------------------------------------- container


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.complex64, np.complex128])
def test_round_trip_bit_exact(tmp_path, dtype):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 5, 2)).astype(dtype)
    if np.iscomplexobj(a):
        a = a + 1j * rng.standard_normal(a.shape).astype(a.real.dtype)
    data.write_tensor(tmp_path / "a.tensor", a)
    b = data.read_tensor(tmp_path / "a.tensor")
    assert b.dtype == a.dtype and b.shape == a.shape
    assert b.tobytes() == a.tobytes()


def test_header_layout():
    blob = data.encode_tensor(np.zeros((2, 3), np.complex64))
    assert blob[:8] == b"UNFMRI01"
    assert blob[8] == 2 and blob[9] == 2
    assert struct.unpack("<2I", blob[10:18]) == (2, 3)
    assert len(blob) == 18 + 6 * 8


def test_error_codes():
    good = data.encode_tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    cases = {
        "BAD_MAGIC": b"NOTMAGIC" + good[8:],
        "BAD_DTYPE": good[:8] + bytes([9]) + good[9:],
        "TRUNCATED": good[:-1],
        "TRAILING_BYTES": good + b"\0",
    }
    for code, blob in cases.items():
        with pytest.raises(ContainerError) as exc:
            data.decode_tensor(blob)
        assert exc.value.code == code
    with pytest.raises(ContainerError) as exc:
        data.decode_tensor(good[:12])
    assert exc.value.code == "TRUNCATED"


def test_unsupported_array_dtype():
    with pytest.raises(ContainerError) as exc:
        data.encode_tensor(np.zeros(3, np.int32))
    assert exc.value.code == "BAD_DTYPE"


def test_pair_encoded_matches_complex(tmp_path):
    rng = np.random.default_rng(1)
    img = (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))).astype(np.complex64)
    data.save_image(tmp_path / "c.tensor", img, "c64")
    data.save_image(tmp_path / "f.tensor", img, "f32")
    assert data.read_tensor(tmp_path / "f.tensor").shape == (8, 8, 2)
    a, b = data.load_image(tmp_path / "c.tensor"), data.load_image(tmp_path / "f.tensor")
    assert a.tobytes() == b.tobytes()


def test_image_shape_errors(tmp_path):
    data.write_tensor(tmp_path / "bad.tensor", np.zeros((4, 4, 3), np.float32))
    with pytest.raises(ContainerError) as exc:
        data.load_image(tmp_path / "bad.tensor")
    assert exc.value.code == "BAD_SHAPE"


@settings(max_examples=40, deadline=None)
@given(shape=st.lists(st.integers(0, 4), min_size=0, max_size=4), code=st.sampled_from(list(data.DTYPES)))
def test_round_trip_any_shape(shape, code):
    dt = data.DTYPES[code][1]
    a = np.arange(int(np.prod(shape)), dtype=dt).reshape(shape)
    b = data.decode_tensor(data.encode_tensor(a))
    assert b.shape == tuple(shape) and b.tobytes() == a.tobytes()


# ---------------------------------------------------------------- phantoms


def test_shepp_logan_range():
    p = data.make_phantom("shepp_logan", 64, 64)
    mag = np.abs(p)
    # |m e^{i phi}| is exact up to the rounding of cos/sin/hypot
    assert abs(mag.max() - 1.0) <= 4 * np.finfo(float).eps
    assert mag[0, 0] == 0.0 and mag[-1, -1] == 0.0
    assert np.all(np.abs(np.angle(p[mag > 0])) <= np.pi / 4 + 1e-12)


def test_phantom_deterministic():
    a = data.make_phantom("random_ellipses", 32, 48, seed=5)
    b = data.make_phantom("random_ellipses", 32, 48, seed=5)
    c = data.make_phantom("random_ellipses", 32, 48, seed=6)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def _inside_oracle(e, h, w):
    """Scalar point-in-ellipse test at every pixel center."""
    out = np.zeros((h, w), bool)
    c, s = np.cos(e.theta), np.sin(e.theta)
    for r in range(h):
        for q in range(w):
            x = -1 + (2 * q + 1) / w
            y = -1 + (2 * r + 1) / h
            u = (x - e.x0) * c + (y - e.y0) * s
            v = -(x - e.x0) * s + (y - e.y0) * c
            out[r, q] = (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0
    return out


def test_random_ellipses_match_rasterization_oracle():
    params = data.random_ellipse_params(3)
    mag = np.zeros((32, 32))
    for e in params:
        inside = _inside_oracle(e, 32, 32)
        assert inside.sum() == data.ellipse_interior(e, 32, 32).sum()
        mag[inside] = e.intensity
    mag /= mag.max()
    np.testing.assert_allclose(np.abs(data.make_phantom("random_ellipses", 32, 32, 3)), mag, atol=1e-12)


def test_phantom_errors():
    with pytest.raises(ValueError):
        data.make_phantom("shepp_logan", 8, 64)
    with pytest.raises(ValueError):
        data.make_phantom("brain", 32, 32)


# ---------------------------------------------------------------- manifests and splits


def _entries(n):
    return [data.ManifestEntry(f"s{i}", f"s{i}.tensor", 16, 16, "synthetic") for i in range(n)]


def test_split_7_1_2():
    tr, va, te = data.split_dataset(_entries(10), (7, 1, 2), seed=0)
    assert (len(tr), len(va), len(te)) == (7, 1, 2)


def test_split_single_entry_warns():
    with pytest.warns(UserWarning, match="empty subset"):
        sizes = tuple(map(len, data.split_dataset(_entries(1), (7, 1, 2))))
    assert sizes == (1, 0, 0)


def _largest_remainder(n, ratios):
    total = sum(ratios)
    quotas = [n * r / total for r in ratios]
    floors = [int(q) for q in quotas]
    left = n - sum(floors)
    order = sorted(range(len(ratios)), key=lambda i: (floors[i] - quotas[i], i))
    for i in order[:left]:
        floors[i] += 1
    return tuple(floors)


def test_split_578():
    assert data.apportion(578, (7, 1, 2)) == (405, 58, 115) == _largest_remainder(578, (7, 1, 2))


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 400), seed=st.integers(0, 1000))
def test_split_is_disjoint_cover(n, seed):
    entries = _entries(n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        parts = data.split_dataset(entries, (7, 1, 2), seed)
        again = data.split_dataset(entries, (7, 1, 2), seed)
    ids = [e.sample_id for p in parts for e in p]
    assert sorted(ids) == sorted(e.sample_id for e in entries)
    assert tuple(map(len, parts)) == _largest_remainder(n, (7, 1, 2))
    assert parts == again


def test_split_errors():
    with pytest.raises(ValueError, match="empty"):
        data.split_dataset([], (7, 1, 2))
    with pytest.raises(ValueError, match="positive"):
        data.apportion(5, (1, 0, 1))


def test_manifest_round_trip(tmp_path):
    imgs = data.phantom_set(3, 16, seed=0)
    entries = []
    for i, im in enumerate(imgs):
        data.save_image(tmp_path / f"p{i}.tensor", im)
        entries.append(data.ManifestEntry(f"p{i}", f"p{i}.tensor", 16, 16, "synthetic"))
    man = data.DatasetManifest(entries, (7, 1, 2), 4)
    man.save(tmp_path / "manifest.txt")
    back = data.DatasetManifest.load(tmp_path / "manifest.txt")
    assert back.split == (7, 1, 2) and back.seed == 4 and len(back) == 3
    loaded = back.load_images()
    for a, b in zip(loaded, imgs):
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_manifest_bad_line():
    with pytest.raises(ValueError, match="line 2"):
        data.DatasetManifest.loads("# seed 1\nonly\ttwo\n")
