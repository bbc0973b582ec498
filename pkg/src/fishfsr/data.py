"""Synthetic faces with analytic parsing masks, degradation, colour
conversion and the on-disk formats (FTEN tensors, PPM images, manifests).

FTEN layout (little-endian)::

    offset  size  field
    0       4     magic b"FTEN"
    4       1     version = 1
    5       1     dtype: 0 = float32, 1 = float64
    6       1     ndim = 4
    7       16    N, C, H, W as uint32
    23      ...   payload, row-major (N, C, H, W)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .blocks import ConfigError
from .rng import Rng
from .tensor import ContractError, Tensor

FTEN_MAGIC = b"FTEN"
FTEN_VERSION = 1
_FTEN_HEADER = struct.Struct("<4sBBB4I")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

HR_SIZES = (32, 64, 128)


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------- FTEN

def ften_bytes(x) -> bytes:
    arr = _array(x)
    if arr.ndim != 4:
        raise ContractError(f"FTEN stores 4-D tensors, got ndim={arr.ndim}")
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ContractError(f"FTEN stores float32/float64, got {arr.dtype}")
    header = _FTEN_HEADER.pack(FTEN_MAGIC, FTEN_VERSION, code, 4, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def parse_ften(buf: bytes, source: str = "<bytes>") -> Tensor:
    if len(buf) < _FTEN_HEADER.size:
        raise ValueError(f"{source}: truncated FTEN header")
    magic, version, code, ndim, *dims = _FTEN_HEADER.unpack_from(buf)
    if magic != FTEN_MAGIC or version != FTEN_VERSION or ndim != 4 or code not in _DTYPES:
        raise ValueError(f"{source}: not an FTEN v1 4-D file")
    dtype = _DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = buf[_FTEN_HEADER.size:]
    if len(payload) != expected:
        raise ValueError(f"{source}: payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    return Tensor(arr)


def write_ften(path, x) -> Path:
    path = Path(path)
    path.write_bytes(ften_bytes(x))
    return path


def read_ften(path) -> Tensor:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"tensor file not found: {path}") from None
    return parse_ften(buf, str(path))


# ---------------------------------------------------------------- PPM

def to_uint8(img) -> np.ndarray:
    """[0, 1] floats to 8-bit with round-half-up."""
    return np.floor(np.clip(_array(img), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, img) -> Path:
    """Write a (1, 3, H, W) image in [0, 1] as binary P6."""
    arr = _array(img)
    if arr.ndim != 4 or arr.shape[0] != 1 or arr.shape[1] != 3:
        raise ContractError(f"PPM export needs a (1,3,H,W) image, got {arr.shape}")
    _, _, h, w = arr.shape
    pixels = to_uint8(arr[0]).transpose(1, 2, 0)
    path = Path(path)
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def read_ppm(path) -> Tensor:
    """Read a binary P6 file into a (1, 3, H, W) float32 tensor in [0, 1]."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"image file not found: {path}") from None
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: only binary P6 PPM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    pixels = np.frombuffer(buf[pos + 1:pos + 1 + 3 * w * h], dtype=np.uint8)
    if pixels.size != 3 * w * h:
        raise ValueError(f"{path}: truncated pixel data")
    img = pixels.reshape(h, w, 3).transpose(2, 0, 1)[None].astype(np.float32) / 255.0
    return Tensor(img)


def read_image(path) -> Tensor:
    """FTEN or PPM, chosen by extension."""
    return read_ppm(path) if str(path).lower().endswith(".ppm") else read_ften(path)


# ---------------------------------------------------------------- synthesis

def _ellipse_level(xx, yy, cx, cy, ax, ay):
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2


def _coverage(q, radius, edge):
    # approximate signed distance to the ellipse boundary, in image units
    dist = (1.0 - np.sqrt(q)) * radius
    return np.clip(dist / edge + 0.5, 0.0, 1.0)


def synth_face(seed: int, size: int = 128) -> tuple[Tensor, Tensor]:
    """Procedural face image ``(1, 3, size, size)`` and binary skin mask
    ``(1, 1, size, size)``.

    A linear background gradient, a shaded skin ellipse, and two eyes plus a
    mouth painted over it in darker tones. Colour edges are softened over
    about 1.5 pixels of a 128-pixel image; the mask is the hard set of pixel
    centres inside the skin ellipse and outside every component.
    """
    if size not in HR_SIZES:
        raise ConfigError(f"synth_face size must be one of {HR_SIZES}, got {size}")
    rng = Rng(seed)
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    edge = 1.5 / 128

    c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    theta = rng.uniform(0.0, 2 * np.pi)
    t = (xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta)
    t = (t - t.min()) / (t.max() - t.min())
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t

    cx, cy = 0.5 + rng.uniform(-0.1, 0.1), 0.5 + rng.uniform(-0.1, 0.1)
    ax, ay = rng.uniform(0.3, 0.45), rng.uniform(0.3, 0.45)
    r = rng.uniform(0.6, 0.95)
    g = r * rng.uniform(0.7, 0.85)
    b = g * rng.uniform(0.7, 0.9)
    sx, sy = rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)
    shade = 1.0 + sx * (xx - cx) / ax + sy * (yy - cy) / ay
    skin = np.array([r, g, b])[:, None, None] * shade

    q_face = _ellipse_level(xx, yy, cx, cy, ax, ay)
    img = img + (skin - img) * _coverage(q_face, min(ax, ay), edge)
    mask = q_face <= 1.0

    eye_tone = rng.uniform(0.05, 0.25)
    eye_color = np.array([eye_tone, eye_tone * 0.9, eye_tone * 0.8])
    mouth_color = np.array([rng.uniform(0.4, 0.6), rng.uniform(0.1, 0.25), rng.uniform(0.1, 0.25)])
    components = [
        (cx - 0.38 * ax, cy - 0.25 * ay, 0.18 * ax, 0.10 * ay, eye_color),
        (cx + 0.38 * ax, cy - 0.25 * ay, 0.18 * ax, 0.10 * ay, eye_color),
        (cx, cy + 0.50 * ay, 0.40 * ax, 0.12 * ay, mouth_color),
    ]
    for ccx, ccy, cax, cay, color in components:
        q = _ellipse_level(xx, yy, ccx, ccy, cax, cay)
        img = img + (color[:, None, None] - img) * _coverage(q, min(cax, cay), edge)
        mask &= q > 1.0

    hr = np.clip(img, 0.0, 1.0)[None].astype(np.float32)
    return Tensor(hr), Tensor(mask[None, None].astype(np.float32))


# ---------------------------------------------------------------- resampling

def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def cubic_weights(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` Catmull-Rom resampling matrix, centre-aligned,
    with edge-clamped taps."""
    dst = np.arange(n_out)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    mat = np.zeros((n_out, n_in))
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, n_in - 1)
        np.add.at(mat, (dst, idx), _cubic(frac - tap))
    return mat


def bicubic_resize(img, out_h: int, out_w: int):
    """Separable bicubic resize of the last two axes (Tensor in, Tensor out)."""
    arr = _array(img)
    h, w = arr.shape[-2:]
    wy, wx = cubic_weights(h, out_h), cubic_weights(w, out_w)
    out = np.einsum("oh,...hw,pw->...op", wy, arr.astype(np.float64), wx, optimize=True)
    out = out.astype(arr.dtype)
    return Tensor(out) if isinstance(img, Tensor) else out


def parsing_downsample(mask, scale: int):
    """Block-average over ``scale x scale`` cells, then threshold: mean >= 0.5 -> 1."""
    arr = _array(mask)
    n, c, h, w = arr.shape
    if h % scale or w % scale:
        raise ContractError(f"parsing_downsample: dims {(h, w)} not divisible by scale {scale}")
    means = arr.reshape(n, c, h // scale, scale, w // scale, scale).mean(axis=(3, 5))
    out = (means >= 0.5).astype(arr.dtype)
    return Tensor(out) if isinstance(mask, Tensor) else out


def rgb_to_y(img):
    """BT.601 studio-swing luma of a [0, 1] RGB image, returned in [0, 1]."""
    arr = _array(img)
    r, g, b = arr[:, 0:1], arr[:, 1:2], arr[:, 2:3]
    y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    return Tensor(y) if isinstance(img, Tensor) else y


def rotate_map(parsing, degrees: float):
    """Rotate a (N, 1, H, W) map about its centre, nearest sampling, zero fill."""
    arr = _array(parsing)
    out = ndimage.rotate(arr, degrees, axes=(3, 2), reshape=False, order=0,
                         mode="constant", cval=0.0, prefilter=False)
    out = out.astype(arr.dtype)
    return Tensor(out) if isinstance(parsing, Tensor) else out


# ---------------------------------------------------------------- datasets

@dataclass
class Sample:
    id: str
    hr: Tensor
    lr: Tensor
    parsing_gt: Tensor


@dataclass
class DatasetManifest:
    root: Path
    scale: int
    ids: list[str] = field(default_factory=list)
    split: str = "train"

    @property
    def path(self) -> Path:
        return self.root / "manifest.txt"


def make_sample(sample_id: str, seed: int, scale: int, hr_size: int = 128) -> Sample:
    hr, hr_mask = synth_face(seed, hr_size)
    lr_size = hr_size // scale
    lr = Tensor(np.clip(bicubic_resize(hr.data, lr_size, lr_size), 0.0, 1.0))
    return Sample(sample_id, hr, lr, parsing_downsample(hr_mask, scale))


def sample_seeds(seed: int, n_samples: int) -> list[int]:
    rng = Rng(seed)
    return [int(s) for s in rng.next_u64(n_samples) >> np.uint64(1)]


def generate_dataset(seed: int, n_samples: int, scale: int, out_dir,
                     hr_size: int = 128, split: str = "train") -> DatasetManifest:
    """Write ``n_samples`` synthetic samples under ``out_dir``::

        manifest.txt              "scale=<s>" then one id per line
        hr/<id>.ften, hr/<id>.ppm
        lr/<id>.ften, lr/<id>.ppm
        parsing/<id>.ften
    """
    if scale not in (4, 8, 16):
        raise ConfigError(f"scale must be 4, 8 or 16, got {scale}")
    if hr_size % scale:
        raise ConfigError(f"HR size {hr_size} not divisible by scale {scale}")
    root = Path(out_dir)
    for sub in ("hr", "lr", "parsing"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(root, scale, [], split)
    for i, s in enumerate(sample_seeds(seed, n_samples)):
        sample = make_sample(f"{i:05d}", s, scale, hr_size)
        write_ften(root / "hr" / f"{sample.id}.ften", sample.hr)
        write_ppm(root / "hr" / f"{sample.id}.ppm", sample.hr)
        write_ften(root / "lr" / f"{sample.id}.ften", sample.lr)
        write_ppm(root / "lr" / f"{sample.id}.ppm", sample.lr)
        write_ften(root / "parsing" / f"{sample.id}.ften", sample.parsing_gt)
        manifest.ids.append(sample.id)
    manifest.path.write_text(f"scale={scale}\n" + "".join(f"{i}\n" for i in manifest.ids))
    return manifest


def load_manifest(root, split: str | None = None) -> DatasetManifest:
    """Read ``root/manifest.txt``; with ``split``, prefer ``root/<split>/manifest.txt``."""
    root = Path(root)
    if split is not None and (root / split / "manifest.txt").exists():
        root = root / split
    path = root / "manifest.txt"
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise FileNotFoundError(f"manifest not found: {path}") from None
    if not lines or not lines[0].startswith("scale="):
        raise ValueError(f"{path}: first line must be 'scale=<s>'")
    scale = int(lines[0].split("=", 1)[1])
    ids = [ln.strip() for ln in lines[1:] if ln.strip()]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sample ids")
    return DatasetManifest(root, scale, ids, split or "train")


def load_sample(manifest: DatasetManifest, sample_id: str) -> Sample:
    root = manifest.root
    return Sample(
        sample_id,
        read_ften(root / "hr" / f"{sample_id}.ften"),
        read_ften(root / "lr" / f"{sample_id}.ften"),
        read_ften(root / "parsing" / f"{sample_id}.ften"),
    )


def load_dataset(manifest: DatasetManifest) -> list[Sample]:
    return [load_sample(manifest, i) for i in manifest.ids]


def stack(tensors) -> Tensor:
    return Tensor(np.concatenate([t.data for t in tensors], axis=0))


def ensure_writable(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"directory not writable: {path}")
    return path
