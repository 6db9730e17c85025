"""On-disk formats: AMRI images, PGM import, dataset manifests, checkpoints.

AMRI layout (all little-endian)::

    b"AMRI" | version u16 | height u32 | width u32 | channels u16 | float32 payload

The payload is row-major with the channel index varying fastest.
"""

import io
import json
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "FormatError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedPayloadError",
    "AMRI_VERSION",
    "save_image",
    "load_image",
    "load_pgm",
    "DatasetManifest",
    "save_manifest",
    "load_manifest",
    "load_split",
    "random_phantom",
    "generate_phantoms",
    "write_npz",
    "read_npz",
]

AMRI_MAGIC = b"AMRI"
AMRI_VERSION = 1
_HEADER = struct.Struct("<4sHIIH")


class FormatError(ValueError):
    """Base class for malformed input files."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


def save_image(path, img):
    """Write a ``(C, H, W)`` or ``(H, W)`` image as AMRI."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    c, h, w = img.shape
    payload = np.ascontiguousarray(img.transpose(1, 2, 0), dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(AMRI_MAGIC, AMRI_VERSION, h, w, c))
        fh.write(payload)


def load_image(path):
    """Read an AMRI file into a float64 ``(C, H, W)`` array."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != AMRI_MAGIC:
        raise BadMagicError(f"{path}: magic bytes {data[:4]!r} are not {AMRI_MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated at {len(data)} bytes")
    _, version, h, w, c = _HEADER.unpack_from(data)
    if version != AMRI_VERSION:
        raise UnsupportedVersionError(f"{path}: version {version} unsupported (expected {AMRI_VERSION})")
    n = h * w * c
    have = (len(data) - _HEADER.size) // 4
    if have < n:
        raise TruncatedPayloadError(f"{path}: payload holds {have} floats, header declares {n}")
    vals = np.frombuffer(data, dtype="<f4", count=n, offset=_HEADER.size)
    return vals.reshape(h, w, c).transpose(2, 0, 1).astype(np.float64)


def load_pgm(path):
    """Read a binary (P5) PGM as a single-channel image scaled to ``[0, 1]``."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedPayloadError(f"{path}: PGM header truncated")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise BadMagicError(f"{path}: magic {tokens[0]!r} is not b'P5'")
    w, h, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: maxval {maxval} out of range")
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h
    if len(data) - pos < n * np.dtype(dtype).itemsize:
        raise TruncatedPayloadError(f"{path}: PGM payload shorter than {w}x{h}")
    vals = np.frombuffer(data, dtype=dtype, count=n, offset=pos)
    return (vals.reshape(h, w) / maxval)[None].astype(np.float64)


@dataclass
class DatasetManifest:
    root: Path
    side: int
    channels: int
    splits: dict = field(default_factory=lambda: {"train": [], "val": [], "test": []})
    sources: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [i for ids in self.splits.values() for i in ids]
        if len(ids) != len(set(ids)):
            raise FormatError("manifest image ids must be unique across splits")

    def path(self, image_id):
        return Path(self.root) / f"{image_id}.amri"


def save_manifest(manifest, path=None):
    path = Path(path) if path else Path(manifest.root) / "manifest.json"
    doc = {
        "side": manifest.side,
        "channels": manifest.channels,
        "splits": manifest.splits,
        "sources": manifest.sources,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"dataset manifest not found: {path}") from None
    splits = {"train": [], "val": [], "test": []}
    splits.update(doc["splits"])
    return DatasetManifest(path.parent, doc["side"], doc["channels"], splits, doc.get("sources", {}))


def load_split(manifest, split):
    """``(ids, images)`` for one split, checked against the manifest shape."""
    ids = list(manifest.splits.get(split, []))
    images = []
    for image_id in ids:
        img = load_image(manifest.path(image_id))
        if img.shape != (manifest.channels, manifest.side, manifest.side):
            raise FormatError(f"{manifest.path(image_id)}: shape {img.shape} disagrees with manifest")
        images.append(img)
    return ids, images


def random_phantom(side, rng):
    """Piecewise-constant phantom of ellipses and rectangles, values in ``[0, 1]``."""
    yy, xx = np.mgrid[0:side, 0:side] / side - 0.5
    img = np.zeros((side, side))
    a, b = rng.uniform(0.3, 0.45, size=2)
    img[(xx / a) ** 2 + (yy / b) ** 2 <= 1] = rng.uniform(0.2, 0.5)
    for _ in range(int(rng.integers(2, 6))):
        cx, cy = rng.uniform(-0.25, 0.25, size=2)
        rx, ry = rng.uniform(0.05, 0.2, size=2)
        val = rng.uniform(0.0, 1.0)
        if rng.random() < 0.5:
            th = rng.uniform(0, np.pi)
            u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
            v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
            inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1
        else:
            inside = (np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)
        img[inside] = val
    return np.clip(img, 0.0, 1.0)[None]


def generate_phantoms(out_dir, count, side, seed=0, test_fraction=0.25):
    """Write ``count`` AMRI phantoms plus ``manifest.json`` into ``out_dir``."""
    if side < 1 or side & (side - 1):
        raise ValueError(f"side must be a power of two, got {side}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids = [f"phantom_{i:05d}" for i in range(count)]
    for image_id in ids:
        save_image(out_dir / f"{image_id}.amri", random_phantom(side, rng).astype(np.float32))
    n_test = int(round(count * test_fraction))
    manifest = DatasetManifest(out_dir, side, 1, {"train": ids[n_test:], "val": [], "test": ids[:n_test]})
    save_manifest(manifest)
    return manifest


def write_npz(path, arrays):
    """``np.savez`` with fixed zip timestamps so equal inputs give equal bytes."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[key]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def read_npz(path):
    with np.load(path, allow_pickle=False) as f:
        return {k: f[k] for k in f.files}
