"""Synthetic phantoms, dataset manifests and the ``UNFMRI01`` tensor container."""

from __future__ import annotations

import io
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# --------------------------------------------------------------------------
# tensor container
#
#   magic   8 bytes  b"UNFMRI01"
#   dtype   u8       0=f32 1=f64 2=c64 3=c128
#   rank    u8
#   shape   rank x u32, little endian
#   payload row-major little-endian values, nothing after it

MAGIC = b"UNFMRI01"
DTYPES = {
    "f32": (0, np.dtype("<f4")),
    "f64": (1, np.dtype("<f8")),
    "c64": (2, np.dtype("<c8")),
    "c128": (3, np.dtype("<c16")),
}
_BY_CODE = {code: (name, dt) for name, (code, dt) in DTYPES.items()}
_BY_NUMPY = {np.dtype(dt).newbyteorder("="): name for name, (_, dt) in DTYPES.items()}


class ContainerError(ValueError):
    """Malformed tensor container. ``code`` is one of BAD_MAGIC, BAD_DTYPE,
    BAD_SHAPE, TRUNCATED, TRAILING_BYTES."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


def dtype_name(array):
    try:
        return _BY_NUMPY[np.dtype(array.dtype).newbyteorder("=")]
    except KeyError:
        raise ContainerError("BAD_DTYPE", f"unsupported array dtype {array.dtype}") from None


def encode_tensor(array) -> bytes:
    array = np.asarray(array)
    name = dtype_name(array)
    code, dt = DTYPES[name]
    if array.ndim > 255:
        raise ContainerError("BAD_SHAPE", "rank above 255")
    header = MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=dt).tobytes(order="C")


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise ContainerError("BAD_MAGIC", "not a UNFMRI01 container")
    pos = len(MAGIC)
    if len(blob) < pos + 2:
        raise ContainerError("TRUNCATED", "header ends before dtype/rank")
    code, rank = struct.unpack_from("<BB", blob, pos)
    pos += 2
    if code not in _BY_CODE:
        raise ContainerError("BAD_DTYPE", f"unknown dtype code {code}")
    _, dt = _BY_CODE[code]
    if len(blob) < pos + 4 * rank:
        raise ContainerError("TRUNCATED", "header ends inside the shape block")
    shape = struct.unpack_from(f"<{rank}I", blob, pos)
    pos += 4 * rank
    expected = math.prod(shape) * dt.itemsize
    payload = len(blob) - pos
    if payload < expected:
        raise ContainerError("TRUNCATED", f"payload has {payload} bytes, expected {expected}")
    if payload > expected:
        raise ContainerError("TRAILING_BYTES", f"{payload - expected} bytes after the payload")
    return np.frombuffer(blob, dtype=dt, offset=pos, count=math.prod(shape)).reshape(shape).copy()


def write_tensor(path, array):
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def save_image(path, image, dtype="c64"):
    """Save a complex image. Real dtypes store it pair-encoded as ``H x W x 2``."""
    image = np.asarray(image)
    if dtype in ("c64", "c128"):
        out = image.astype(DTYPES[dtype][1].newbyteorder("="))
    elif dtype in ("f32", "f64"):
        out = np.stack([image.real, image.imag], axis=-1).astype(DTYPES[dtype][1].newbyteorder("="))
    else:
        raise ContainerError("BAD_DTYPE", f"unknown dtype {dtype!r}")
    write_tensor(path, out)


def load_image(path) -> np.ndarray:
    return _as_complex_image(read_tensor(path))


def _as_complex_image(array):
    if np.iscomplexobj(array):
        if array.ndim != 2:
            raise ContainerError("BAD_SHAPE", f"complex image must be rank 2, got rank {array.ndim}")
        return array
    if array.ndim == 3:
        if array.shape[-1] != 2:
            raise ContainerError("BAD_SHAPE", f"pair-encoded image needs trailing dim 2, got {array.shape}")
        ctype = np.complex64 if array.dtype == np.float32 else np.complex128
        return (array[..., 0] + 1j * array[..., 1]).astype(ctype)
    if array.ndim == 2:
        ctype = np.complex64 if array.dtype == np.float32 else np.complex128
        return array.astype(ctype)
    raise ContainerError("BAD_SHAPE", f"image container must be rank 2 or 3, got rank {array.ndim}")


# --------------------------------------------------------------------------
# phantoms

# modified Shepp-Logan: (intensity, semi-axis a, semi-axis b, x0, y0, angle in degrees)
SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

PHANTOM_KINDS = ("shepp_logan", "random_ellipses")


@dataclass(frozen=True)
class Ellipse:
    intensity: float
    a: float
    b: float
    x0: float
    y0: float
    theta: float  # radians


def pixel_grid(height, width):
    """Pixel-center coordinates in (-1, 1); ``x`` runs along columns, ``y`` along rows."""
    x = (2.0 * np.arange(width) + 1.0) / width - 1.0
    y = (2.0 * np.arange(height) + 1.0) / height - 1.0
    return np.meshgrid(x, y)


def ellipse_interior(e: Ellipse, height, width):
    xx, yy = pixel_grid(height, width)
    dx, dy = xx - e.x0, yy - e.y0
    c, s = np.cos(e.theta), np.sin(e.theta)
    return ((dx * c + dy * s) / e.a) ** 2 + ((-dx * s + dy * c) / e.b) ** 2 <= 1.0


def random_ellipse_params(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9))
    return [
        Ellipse(
            intensity=float(rng.uniform(0.2, 1.0)),
            a=float(rng.uniform(0.08, 0.45)),
            b=float(rng.uniform(0.08, 0.45)),
            x0=float(rng.uniform(-0.6, 0.6)),
            y0=float(rng.uniform(-0.6, 0.6)),
            theta=float(rng.uniform(0.0, np.pi)),
        )
        for _ in range(n)
    ]


def _phase_field(height, width, rng):
    xx, yy = pixel_grid(height, width)
    c = rng.uniform(-1.5, 1.5, size=3)
    return (np.pi / 4) * np.sin(c[0] * xx + c[1] * yy + c[2] * xx * yy)


def make_phantom(kind, height, width, seed=0) -> np.ndarray:
    """Piecewise-constant magnitude in [0, 1] (max exactly 1) times a smooth phase
    of amplitude at most pi/4. Pure function of ``(kind, height, width, seed)``."""
    if min(height, width) < 16:
        raise ValueError(f"phantom needs both sides >= 16, got {height}x{width}")
    mag = np.zeros((height, width))
    if kind == "shepp_logan":
        for rho, a, b, x0, y0, deg in SHEPP_LOGAN:
            mag[ellipse_interior(Ellipse(rho, a, b, x0, y0, np.deg2rad(deg)), height, width)] += rho
        mag = np.clip(mag, 0.0, None)
        mag[mag < 1e-12] = 0.0
    elif kind == "random_ellipses":
        for e in random_ellipse_params(seed):
            mag[ellipse_interior(e, height, width)] = e.intensity
    else:
        raise ValueError(f"unknown phantom kind {kind!r}; expected one of {PHANTOM_KINDS}")
    peak = mag.max()
    if peak <= 0:
        raise ValueError("phantom has no support at this resolution")
    mag = mag / peak
    # seed offset keeps shepp_logan/random_ellipses phase streams distinct
    phase = _phase_field(height, width, np.random.default_rng([seed, PHANTOM_KINDS.index(kind)]))
    return mag * np.exp(1j * phase)


def normalize(image):
    """Scale so the maximum magnitude is 1."""
    peak = np.abs(image).max()
    return image / peak if peak > 0 else image


def phantom_set(count, size, seed=0, kind="random_ellipses"):
    """``count`` phantoms with consecutive seeds starting at ``seed``."""
    return [make_phantom(kind, size, size, seed + i) for i in range(count)]


# --------------------------------------------------------------------------
# manifests and splitting


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    path: str
    height: int
    width: int
    modality: str = "unknown"


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    split: tuple = (7, 1, 2)
    seed: int = 0

    def __len__(self):
        return len(self.entries)

    def dumps(self):
        buf = io.StringIO()
        buf.write(f"# split {':'.join(str(r) for r in self.split)}\n")
        buf.write(f"# seed {self.seed}\n")
        for e in self.entries:
            buf.write(f"{e.sample_id}\t{e.path}\t{e.height}\t{e.width}\t{e.modality}\n")
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text):
        manifest = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                if key == "split":
                    manifest.split = tuple(float(v) for v in value.split(":"))
                elif key == "seed":
                    manifest.seed = int(value)
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"manifest line {lineno}: expected 5 tab-separated fields")
            sid, p, h, w, mod = parts
            manifest.entries.append(ManifestEntry(sid, p, int(h), int(w), mod))
        return manifest

    @classmethod
    def load(cls, path):
        manifest = cls.loads(Path(path).read_text())
        base = Path(path).parent
        manifest.entries = [
            e if Path(e.path).is_absolute() else ManifestEntry(e.sample_id, str(base / e.path), e.height, e.width, e.modality)
            for e in manifest.entries
        ]
        return manifest

    def load_images(self):
        return [normalize(load_image(e.path)) for e in self.entries]


def apportion(n, ratios):
    """Largest-remainder split of ``n`` items by ``ratios`` (ties go to the earlier slot)."""
    ratios = np.asarray(ratios, dtype=float)
    if (ratios <= 0).any():
        raise ValueError("split ratios must be positive")
    quotas = n * ratios / ratios.sum()
    sizes = np.floor(quotas).astype(int)
    remainder = quotas - sizes
    order = sorted(range(len(ratios)), key=lambda i: (-remainder[i], i))
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    return tuple(int(s) for s in sizes)


def split_dataset(entries, ratios=(7, 1, 2), seed=0):
    """Deterministic shuffled (train, val, test) partition sized by :func:`apportion`."""
    entries = list(entries.entries if isinstance(entries, DatasetManifest) else entries)
    if not entries:
        raise ValueError("cannot split an empty manifest")
    sizes = apportion(len(entries), ratios)
    if 0 in sizes:
        warnings.warn(f"split of {len(entries)} entries by {tuple(ratios)} leaves an empty subset {sizes}")
    order = np.random.default_rng(seed).permutation(len(entries))
    shuffled = [entries[i] for i in order]
    a, b = sizes[0], sizes[0] + sizes[1]
    return shuffled[:a], shuffled[a:b], shuffled[b:]
