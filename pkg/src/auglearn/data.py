"""Procedural multi-domain image data, plus a fixed binary exchange format.

Each class is a parametric glyph rendered analytically on a coordinate
grid; each domain is a transform of the rendering (grid rotation, channel
gains, background level, additive texture). Class geometry is sampled
independently of the domain, so domain and label are independent factors
and two domains with the identity transform contain byte-identical
images.

Datasets travel as a directory: manifest.json describing domains, class
count and image shape, plus one "AUGT" binary tensor file per domain
(u16 version, u16 rank, u64 dims, little-endian float32 image payload,
then one u16 label per sample).
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractViolation, IngestionError
from .params import Tensor

# rng stream tags; distinct constants keep the derived streams independent
TAG_SHAPE = 11
TAG_TEXTURE = 12

DATA_MAGIC = b"AUGT"
DATA_VERSION = 1

_DHEAD = struct.Struct("<4sH")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")


@dataclass(frozen=True)
class Sample:
    image: Tensor
    label: int
    domain: str


@dataclass(frozen=True)
class DomainTransform:
    """What one domain does to the shared glyph rendering."""

    domain_id: str
    rotation_deg: float = 0.0
    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    background: float = 0.1
    texture: float = 0.0

    def __post_init__(self):
        if not self.domain_id:
            raise ContractViolation("domain_id must be non-empty")
        if len(self.gains) != 3:
            raise ContractViolation(f"gains must be a triple, got {self.gains!r}")
        if not (0.0 <= self.background <= 1.0):
            raise ContractViolation(f"background must be in [0,1], got {self.background}")
        if self.texture < 0.0:
            raise ContractViolation(f"texture amplitude must be >= 0, got {self.texture}")


@dataclass(frozen=True)
class SyntheticSpec:
    domains: tuple[DomainTransform, ...]
    classes: int = 10
    samples_per_class: int = 64
    image_hw: tuple[int, int] = (32, 32)

    def __post_init__(self):
        if len(self.domains) < 2:
            raise ContractViolation(f"need >= 2 domains, got {len(self.domains)}")
        if self.classes < 2 or self.classes > 10:
            raise ContractViolation(f"classes must be in [2, 10], got {self.classes}")
        if self.samples_per_class < 1:
            raise ContractViolation("samples_per_class must be >= 1")
        ids = [d.domain_id for d in self.domains]
        if len(set(ids)) != len(ids):
            raise ContractViolation(f"duplicate domain ids in {ids}")


class DomainDataset:
    """Immutable bundle of images, labels, and a domain id."""

    def __init__(self, domain_id: str, images: Tensor, labels: Tensor, classes: int):
        if images.dim() != 4:
            raise ContractViolation(f"images must be (N, C, H, W), got {tuple(images.shape)}")
        if images.shape[0] == 0:
            raise ContractViolation("dataset must be non-empty")
        labels = torch.as_tensor(labels, dtype=torch.long)
        if labels.shape != (images.shape[0],):
            raise ContractViolation("one label per image required")
        if bool((labels < 0).any()) or bool((labels >= classes).any()):
            raise ContractViolation(f"label out of range [0, {classes})")
        lo, hi = float(images.min()), float(images.max())
        if lo < 0.0 or hi > 1.0:
            raise ContractViolation(f"pixel values must lie in [0,1], found [{lo}, {hi}]")
        self.domain_id = domain_id
        self.images = images
        self.labels = labels
        self.classes = int(classes)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def sample(self, i: int) -> Sample:
        return Sample(self.images[i], int(self.labels[i]), self.domain_id)

    def equal(self, other: "DomainDataset") -> bool:
        return (
            self.domain_id == other.domain_id
            and self.classes == other.classes
            and torch.equal(self.images, other.images)
            and torch.equal(self.labels, other.labels)
        )


def _soft(d: np.ndarray, eps: float = 0.08) -> np.ndarray:
    """1 well inside (d << 0), 0 well outside, linear ramp of width 2*eps."""
    return np.clip(0.5 - d / (2.0 * eps), 0.0, 1.0)


def _glyph(c: int, u: np.ndarray, v: np.ndarray, s: float) -> np.ndarray:
    """Signed-distance-style rendering of class ``c`` at scale ``s``.

    Classes 0, 4, 5, 6 and 9 are orientation-coded, so large domain
    rotations genuinely change the evidence a classifier can use.
    """
    r = np.sqrt(u * u + v * v)
    box = np.maximum(np.abs(u), np.abs(v)) - 0.72 * s
    if c == 0:  # half disk, flat side down
        d = np.maximum(r - 0.58 * s, -v)
    elif c == 1:  # ring
        d = np.abs(r - 0.5 * s) - 0.16 * s
    elif c == 2:  # plus
        d = np.maximum(np.minimum(np.abs(u), np.abs(v)) - 0.17 * s, box)
    elif c == 3:  # filled square
        d = np.maximum(np.abs(u), np.abs(v)) - 0.5 * s
    elif c == 4:  # triangle pointing up
        d = np.maximum(np.abs(u) - 0.62 * (0.45 * s - v), np.abs(v) - 0.45 * s)
    elif c == 5:  # horizontal bars
        d = np.maximum(np.cos(math.pi * 3.0 * v / s) * 0.25, box)
    elif c == 6:  # vertical bars
        d = np.maximum(np.cos(math.pi * 3.0 * u / s) * 0.25, box)
    elif c == 7:  # checkerboard
        d = np.maximum(np.cos(math.pi * 2.0 * u / s) * np.cos(math.pi * 2.0 * v / s) * 0.25, box)
    elif c == 8:  # diagonal cross
        d = np.maximum(np.minimum(np.abs(u - v), np.abs(u + v)) / math.sqrt(2.0) - 0.15 * s, box)
    elif c == 9:  # horizontal dot pair
        d = np.minimum(
            np.sqrt((u - 0.33 * s) ** 2 + v * v), np.sqrt((u + 0.33 * s) ** 2 + v * v)
        ) - 0.21 * s
    else:
        raise ContractViolation(f"no glyph for class {c}")
    return _soft(d)


def _texture_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Blocky low-frequency field in [-1, 1]."""
    cells = rng.uniform(-1.0, 1.0, size=(8, 8))
    reps = (max(1, h // 8 + 1), max(1, w // 8 + 1))
    return np.kron(cells, np.ones(reps))[:h, :w]


def generate(spec: SyntheticSpec, seed: int) -> list[DomainDataset]:
    """Render every domain's dataset deterministically from ``seed``.

    Per-sample geometry (scale, rotation jitter, offset) is keyed by
    (seed, class, index) only, never by domain, so the same underlying
    sample appears in every domain under that domain's transform.
    """
    h, w = spec.image_hw
    ys = np.linspace(-1.0, 1.0, h)
    xs = np.linspace(-1.0, 1.0, w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = []
    for d_idx, dom in enumerate(spec.domains):
        images = np.empty((spec.classes * spec.samples_per_class, 3, h, w), dtype=np.float32)
        labels = np.empty(spec.classes * spec.samples_per_class, dtype=np.int64)
        row = 0
        for c in range(spec.classes):
            for i in range(spec.samples_per_class):
                g_shape = np.random.default_rng(np.random.SeedSequence([seed, TAG_SHAPE, c, i]))
                s = g_shape.uniform(0.85, 1.15)
                rot_j = g_shape.uniform(-8.0, 8.0)
                ox = g_shape.uniform(-0.12, 0.12)
                oy = g_shape.uniform(-0.12, 0.12)
                th = math.radians(dom.rotation_deg + rot_j)
                u = math.cos(th) * xx + math.sin(th) * yy - ox
                v = -math.sin(th) * xx + math.cos(th) * yy - oy
                g = _glyph(c, u, v, s)
                base = dom.background + (0.9 - dom.background) * g
                img = np.stack([gain * base for gain in dom.gains])
                if dom.texture > 0.0:
                    g_tex = np.random.default_rng(
                        np.random.SeedSequence([seed, TAG_TEXTURE, d_idx, c, i])
                    )
                    img = img + dom.texture * _texture_field(g_tex, h, w)[None, :, :]
                images[row] = np.clip(img, 0.0, 1.0)
                labels[row] = c
                row += 1
        out.append(
            DomainDataset(dom.domain_id, torch.from_numpy(images), torch.from_numpy(labels), spec.classes)
        )
    return out


def write_domain_file(path, images: Tensor, labels: Tensor) -> None:
    """Write one domain's tensors in the AUGT layout, atomically."""
    path = os.fspath(path)
    if images.dim() != 4:
        raise ContractViolation(f"images must be (N, C, H, W), got {tuple(images.shape)}")
    labels = torch.as_tensor(labels, dtype=torch.long)
    n = images.shape[0]
    if labels.shape != (n,):
        raise ContractViolation("one label per image required")
    if bool((labels < 0).any()) or bool((labels > 0xFFFF).any()):
        raise ContractViolation("labels must fit in u16")
    out = bytearray()
    out += _DHEAD.pack(DATA_MAGIC, DATA_VERSION)
    out += _U16.pack(4)
    for d in images.shape:
        out += _U64.pack(int(d))
    arr = images.detach().to(torch.float32).numpy()
    out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += np.ascontiguousarray(labels.numpy(), dtype="<u2").tobytes()
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(bytes(out))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_domain_file(path) -> tuple[Tensor, Tensor]:
    """Read one AUGT file; returns (float32 images, long labels)."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IngestionError(str(e), path=path) from e
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise IngestionError("truncated file", path=path)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    magic, version = _DHEAD.unpack(take(_DHEAD.size))
    if magic != DATA_MAGIC:
        raise IngestionError(f"bad magic {magic!r}, expected {DATA_MAGIC!r}", path=path)
    if version != DATA_VERSION:
        raise IngestionError(f"unsupported format version {version}", path=path)
    rank = _U16.unpack(take(2))[0]
    if rank != 4:
        raise IngestionError(f"expected rank 4 image tensor, got rank {rank}", path=path)
    dims = tuple(_U64.unpack(take(8))[0] for _ in range(rank))
    count = 1
    for d in dims:
        count *= d
    if count == 0 or count > 500_000_000:
        raise IngestionError(f"implausible tensor of {count} elements", path=path)
    images = np.frombuffer(take(count * 4), dtype="<f4").reshape(dims).copy()
    labels = np.frombuffer(take(dims[0] * 2), dtype="<u2").astype(np.int64)
    if pos != len(data):
        raise IngestionError(f"{len(data) - pos} trailing bytes after labels", path=path)
    return torch.from_numpy(images), torch.from_numpy(labels)


def save_dataset(dirpath, datasets: list[DomainDataset]) -> str:
    """Write a dataset directory (manifest.json + one AUGT file per domain)."""
    dirpath = os.fspath(dirpath)
    if not datasets:
        raise ContractViolation("no datasets to save")
    classes = datasets[0].classes
    shape = list(datasets[0].images.shape[1:])
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    for ds in datasets:
        if ds.classes != classes or list(ds.images.shape[1:]) != shape:
            raise ContractViolation("all domains must share class count and image shape")
        fname = f"{ds.domain_id}.augt"
        write_domain_file(os.path.join(dirpath, fname), ds.images, ds.labels)
        entries.append({"id": ds.domain_id, "file": fname, "samples": len(ds)})
    manifest = {
        "format": "auglearn-dataset",
        "version": DATA_VERSION,
        "classes": classes,
        "image_shape": shape,
        "domains": entries,
    }
    mpath = os.path.join(dirpath, "manifest.json")
    fd, tmp = tempfile.mkstemp(dir=dirpath, suffix=".tmp")
    with os.fdopen(fd, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, mpath)
    return mpath


def load_dataset(manifest_path) -> list[DomainDataset]:
    """Load a dataset directory back; validates everything it reads."""
    manifest_path = os.fspath(manifest_path)
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, "manifest.json")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as e:
        raise IngestionError(str(e), path=manifest_path) from e
    except json.JSONDecodeError as e:
        raise IngestionError(f"invalid JSON: {e}", path=manifest_path) from e
    for key in ("format", "version", "classes", "image_shape", "domains"):
        if key not in manifest:
            raise IngestionError(f"manifest missing key {key!r}", path=manifest_path)
    if manifest["format"] != "auglearn-dataset":
        raise IngestionError(f"unknown format {manifest['format']!r}", path=manifest_path)
    if manifest["version"] != DATA_VERSION:
        raise IngestionError(f"unsupported version {manifest['version']}", path=manifest_path)
    classes = int(manifest["classes"])
    shape = tuple(manifest["image_shape"])
    base = os.path.dirname(manifest_path)
    out = []
    for entry in manifest["domains"]:
        fpath = os.path.join(base, entry["file"])
        images, labels = read_domain_file(fpath)
        if tuple(images.shape[1:]) != shape:
            raise IngestionError(
                f"image shape {tuple(images.shape[1:])} does not match manifest {shape}", path=fpath
            )
        if images.shape[0] != entry["samples"]:
            raise IngestionError(
                f"{images.shape[0]} samples on disk, manifest says {entry['samples']}", path=fpath
            )
        if bool((labels >= classes).any()):
            raise IngestionError(f"label out of range [0, {classes})", path=fpath)
        try:
            out.append(DomainDataset(entry["id"], images, labels, classes))
        except ContractViolation as e:
            raise IngestionError(str(e), path=fpath) from e
    if not out:
        raise IngestionError("manifest lists no domains", path=manifest_path)
    return out
