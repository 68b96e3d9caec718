"""Deterministic multi-domain synthetic segmentation data.

Every sample is a handful of random ellipses and rectangles (foreground
class 1) on a plain background. Content (shape geometry, base colors) is
drawn from a stream keyed only by (seed, sample index), so two domains built
on the same seed produce byte-identical masks; the domain then styles the
rendering with a per-channel affine transform plus pixel noise:

    pixel = clip(gain * base + bias + noise * N(0, 1), 0, 1)

Datasets are written as binary PPM (P6) images and PGM (P5) class masks with
a plain-text manifest, one line per sample: image path, mask path, domain.
"""

import os
from dataclasses import dataclass

import numpy as np

from .mixup import Sample, make_sample

NUM_CLASSES = 2

SPLIT_SOURCE = "source"
SPLIT_SEEN = "target-seen-style"
SPLIT_UNSEEN = "target-unseen-style"
SPLITS = (SPLIT_SOURCE, SPLIT_SEEN, SPLIT_UNSEEN)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    gain: tuple[float, float, float]
    bias: tuple[float, float, float]
    noise: float
    shape_count: tuple[int, int] = (1, 3)
    seed: int = 0

    def __post_init__(self):
        if any(g <= 0 for g in self.gain):
            raise ValueError(f"gains must be positive, got {self.gain}")
        if any(abs(b) > 0.5 for b in self.bias):
            raise ValueError(f"biases must lie in [-0.5, 0.5], got {self.bias}")
        if not 0.0 <= self.noise <= 0.3:
            raise ValueError(f"noise amplitude must lie in [0, 0.3], got {self.noise}")
        lo, hi = self.shape_count
        if lo < 1 or hi < lo:
            raise ValueError(f"bad shape count range {self.shape_count}")


@dataclass
class DomainDataset:
    name: str
    samples: list[Sample]
    split: str = SPLIT_SOURCE

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


def _render_content(rng: np.random.Generator, size: int, shape_count: tuple[int, int]):
    """Domain-independent content: base (3, size, size) rendering and class mask."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=np.int64)
    count = int(rng.integers(shape_count[0], shape_count[1] + 1))
    for _ in range(count):
        cx, cy = rng.uniform(0.15 * size, 0.85 * size, size=2)
        if rng.random() < 0.5:
            a, b = rng.uniform(0.10 * size, 0.26 * size, size=2)
            theta = rng.uniform(0.0, np.pi)
            u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
            v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
            mask[(u / a) ** 2 + (v / b) ** 2 <= 1.0] = 1
        else:
            w, h = rng.uniform(0.12 * size, 0.38 * size, size=2)
            inside = ((np.abs(xx - cx) <= w / 2) & (np.abs(yy - cy) <= h / 2))
            mask[inside] = 1
    bg = 0.26 + 0.08 * rng.random(3)
    fg = 0.70 + 0.08 * rng.random(3)
    base = np.where(mask[None, :, :] == 1, fg[:, None, None], bg[:, None, None])
    return base, mask


def gen_sample(spec: DomainSpec, index: int, size: int) -> Sample:
    """One styled sample; content depends only on (seed, index), not the style."""
    root = np.random.SeedSequence(entropy=spec.seed, spawn_key=(index,))
    content_ss, noise_ss = root.spawn(2)
    base, mask = _render_content(np.random.default_rng(content_ss), size, spec.shape_count)
    gain = np.asarray(spec.gain)[:, None, None]
    bias = np.asarray(spec.bias)[:, None, None]
    noise = spec.noise * np.random.default_rng(noise_ss).standard_normal(base.shape)
    image = np.clip(gain * base + bias + noise, 0.0, 1.0)
    return make_sample(image, mask, NUM_CLASSES, spec.name)


def gen_domain(spec: DomainSpec, count: int, size: int, split: str = SPLIT_SOURCE) -> DomainDataset:
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if size % 4:
        raise ValueError(f"size must be a multiple of 4, got {size}")
    return DomainDataset(name=spec.name,
                         samples=[gen_sample(spec, i, size) for i in range(count)],
                         split=split)


# ---------------------------------------------------------------------------
# default experiment layout: 3 source domains x 60 images, 3 same-style and
# 3 new-style target domains x 20 images each
# ---------------------------------------------------------------------------

SOURCE_STYLES = {
    "src_a": {"gain": (1.00, 0.95, 1.05), "bias": (0.00, 0.02, -0.02), "noise": 0.04},
    "src_b": {"gain": (1.10, 1.00, 0.92), "bias": (0.05, 0.00, 0.03), "noise": 0.06},
    "src_c": {"gain": (0.92, 1.06, 1.00), "bias": (-0.04, 0.03, 0.00), "noise": 0.05},
}

# styled well outside the convex hull of the source gains/biases
UNSEEN_STYLES = {
    "new_d": {"gain": (0.45, 0.50, 0.55), "bias": (0.38, 0.34, 0.36), "noise": 0.10},
    "new_e": {"gain": (1.65, 1.55, 1.60), "bias": (-0.38, -0.34, -0.36), "noise": 0.08},
    "new_f": {"gain": (0.50, 1.60, 0.55), "bias": (0.30, -0.30, 0.26), "noise": 0.12},
}


def default_layout(seed: int, size: int = 32, source_count: int = 60,
                   target_count: int = 20) -> list[DomainDataset]:
    """The stock experiment: sources, same-style targets, new-style targets."""
    dom_seeds = np.random.SeedSequence(seed).generate_state(9)
    datasets = []
    for i, (name, style) in enumerate(sorted(SOURCE_STYLES.items())):
        spec = DomainSpec(name=name, seed=int(dom_seeds[i]), **style)
        datasets.append(gen_domain(spec, source_count, size, SPLIT_SOURCE))
    for i, (name, style) in enumerate(sorted(SOURCE_STYLES.items())):
        spec = DomainSpec(name=f"seen_{name[-1]}", seed=int(dom_seeds[3 + i]), **style)
        datasets.append(gen_domain(spec, target_count, size, SPLIT_SEEN))
    for i, (name, style) in enumerate(sorted(UNSEEN_STYLES.items())):
        spec = DomainSpec(name=name, seed=int(dom_seeds[6 + i]), **style)
        datasets.append(gen_domain(spec, target_count, size, SPLIT_UNSEEN))
    return datasets


# ---------------------------------------------------------------------------
# on-disk format: PPM(P6) images, PGM(P5) masks, text manifest
# ---------------------------------------------------------------------------

def write_ppm(path: str, image: np.ndarray):
    """(3, H, W) floats in [0, 1] -> binary P6, 8-bit."""
    arr = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = arr.shape[1], arr.shape[2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.transpose(1, 2, 0).tobytes())


def write_pgm(path: str, mask: np.ndarray):
    """(H, W) small nonnegative integers -> binary P5, 8-bit."""
    arr = np.asarray(mask)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("mask values must fit in one byte")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.astype(np.uint8).tobytes())


class PnmFormatError(ValueError):
    """Malformed or truncated PPM/PGM file."""


def _read_pnm(path: str, magic: bytes):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != magic:
        raise PnmFormatError(f"{path}: expected magic {magic!r} at byte 0, found {blob[:2]!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise PnmFormatError(f"{path}: bad header token {token!r} at byte {start}")
        fields.append(int(token))
    if pos >= len(blob):
        raise PnmFormatError(f"{path}: header ends at byte {pos} with no pixel data")
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise PnmFormatError(f"{path}: unsupported maxval {maxval} (only 255)")
    depth = 3 if magic == b"P6" else 1
    need = w * h * depth
    data = blob[pos:pos + need]
    if len(data) != need:
        raise PnmFormatError(f"{path}: truncated pixel data at byte {pos + len(data)} "
                             f"(expected {need} bytes)")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, depth), w, h


def read_ppm(path: str) -> np.ndarray:
    arr, _, _ = _read_pnm(path, b"P6")
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path: str) -> np.ndarray:
    arr, _, _ = _read_pnm(path, b"P5")
    return arr[:, :, 0].astype(np.int64)


def write_dataset(ds: DomainDataset, directory: str):
    """Write images, masks, the per-sample manifest, and domain metadata."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, sample in enumerate(ds.samples):
        img_name = f"img_{i:04d}.ppm"
        msk_name = f"msk_{i:04d}.pgm"
        write_ppm(os.path.join(directory, img_name), sample.image)
        write_pgm(os.path.join(directory, msk_name), sample.mask)
        lines.append(f"{img_name} {msk_name} {sample.domain_id}")
    with open(os.path.join(directory, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(directory, "domain.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"name = {ds.name}\nsplit = {ds.split}\n")


def read_dataset(directory: str) -> DomainDataset:
    manifest = os.path.join(directory, "manifest.txt")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no manifest.txt in {directory}")
    meta = {"name": os.path.basename(directory.rstrip("/")), "split": SPLIT_SOURCE}
    meta_path = os.path.join(directory, "domain.txt")
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    key, value = line.split("=", 1)
                    meta[key.strip()] = value.strip()
    samples = []
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{manifest}:{lineno}: expected 'image mask domain', got {line!r}")
            img_path = os.path.join(directory, parts[0])
            msk_path = os.path.join(directory, parts[1])
            for p in (img_path, msk_path):
                if not os.path.exists(p):
                    raise FileNotFoundError(f"{manifest}:{lineno}: missing file {p}")
            image = read_ppm(img_path)
            mask = read_pgm(msk_path)
            samples.append(make_sample(image, mask, NUM_CLASSES, parts[2]))
    return DomainDataset(name=meta["name"], samples=samples, split=meta["split"])


def write_root(datasets: list[DomainDataset], root: str):
    os.makedirs(root, exist_ok=True)
    for ds in datasets:
        write_dataset(ds, os.path.join(root, ds.name))


def read_root(root: str) -> list[DomainDataset]:
    """Load every domain directory (one manifest.txt each) under a root, sorted."""
    names = sorted(d for d in os.listdir(root)
                   if os.path.exists(os.path.join(root, d, "manifest.txt")))
    if not names:
        raise FileNotFoundError(f"no domain directories under {root}")
    return [read_dataset(os.path.join(root, d)) for d in names]
