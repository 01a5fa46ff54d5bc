"""Synthetic two-modality datasets, PPM/PGM image I/O, and split management.

The generators render modality A as oriented sinusoidal stripes and modality
B as a bright square in one cell of a grid layout. In the xor regime the
label is the modular sum of the two latent codes, so neither modality alone
carries any label information; in the correlated regime both encode the
label directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class SamplePair:
    id: str
    modality_a: np.ndarray   # (Ca, S, S) in [0, 1]
    modality_b: np.ndarray   # (Cb, S, S) in [0, 1]
    label: int


@dataclass
class ManifestEntry:
    id: str
    label: int
    path_a: str
    path_b: str


@dataclass
class DatasetManifest:
    root: str
    entries: list[ManifestEntry]
    num_classes: int
    seed: int
    split: dict = field(default_factory=lambda: {"train": 0.70, "val": 0.10, "test": 0.20})
    latents_a: list[int] | None = None   # in-memory only, for diagnostics

    def save(self) -> Path:
        path = Path(self.root) / "manifest.tsv"
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(f"{e.id}\t{e.label}\t{e.path_a}\t{e.path_b}\n")
        return path

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        path = Path(root) / "manifest.tsv"
        if not path.exists():
            raise FileNotFoundError(f"no manifest.tsv under {root}")
        entries = []
        labels = set()
        for line in path.read_text().splitlines():
            if not line.strip():
                continue
            sid, label, pa, pb = line.split("\t")
            entries.append(ManifestEntry(sid, int(label), pa, pb))
            labels.add(int(label))
        return cls(str(root), entries, num_classes=max(labels) + 1, seed=-1)


# ---------------------------------------------------------------------------
# renderers

def _stripes(size: int, angle_index: int, num_angles: int, cycles: float = 4.0) -> np.ndarray:
    """Sinusoidal grating at angle index*180/num_angles degrees, in [0,1]."""
    theta = angle_index * math.pi / num_angles
    ax = np.linspace(0.0, 1.0, size, dtype=np.float64)
    u = np.cos(theta) * ax[None, :] + np.sin(theta) * ax[:, None]
    return 0.5 + 0.5 * np.sin(2 * math.pi * cycles * u)


def grid_cell_bounds(size: int, cell_index: int, num_cells: int):
    """Bounds (r0, r1, c0, c1) of the bright square for a given grid cell."""
    g = math.ceil(math.sqrt(num_cells))
    row, col = divmod(cell_index, g)
    cell = size // g
    r0, c0 = row * cell, col * cell
    side = max(2, cell // 2)
    mr = (cell - side) // 2
    return r0 + mr, r0 + mr + side, c0 + mr, c0 + mr + side


def grid_quadrant_bounds(size: int, cell_index: int, num_cells: int):
    """Bounds of the whole grid cell that hosts the square (its 'quadrant')."""
    g = math.ceil(math.sqrt(num_cells))
    row, col = divmod(cell_index, g)
    cell = size // g
    return row * cell, (row + 1) * cell, col * cell, (col + 1) * cell


def _square(size: int, cell_index: int, num_cells: int) -> np.ndarray:
    """Dim background with a bright square centred in one grid cell."""
    img = np.full((size, size), 0.15, dtype=np.float64)
    r0, r1, c0, c1 = grid_cell_bounds(size, cell_index, num_cells)
    img[r0:r1, c0:c1] = 0.9
    return img


def _render_pair(sid, size, a_code, b_code, num_classes, noise, rng,
                 a_channels=3, b_channels=1) -> SamplePair:
    stripes = _stripes(size, a_code, num_classes)
    mod_a = np.stack([stripes] * a_channels)
    square = _square(size, b_code, num_classes)
    mod_b = np.stack([square] * b_channels)
    if noise > 0:
        mod_a = mod_a + rng.normal(0.0, noise, mod_a.shape)
        mod_b = mod_b + rng.normal(0.0, noise, mod_b.shape)
    return SamplePair(sid, np.clip(mod_a, 0.0, 1.0).astype(np.float32),
                      np.clip(mod_b, 0.0, 1.0).astype(np.float32), 0)


def _gen_dataset(kind: str, num_classes: int, count: int, size: int,
                 noise: float, seed: int, out_dir) -> DatasetManifest:
    if num_classes < 2:
        raise ValueError(f"need >= 2 classes, got {num_classes}")
    if size < 16:
        raise ValueError(f"image size must be >= 16, got {size}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries, latents = [], []
    for i in range(count):
        label = int(rng.integers(0, num_classes))
        if kind == "xor":
            a_code = int(rng.integers(0, num_classes))
            b_code = (label - a_code) % num_classes
        elif kind == "correlated":
            a_code = b_code = label
        else:
            raise ValueError(f"unknown dataset kind {kind!r}")
        sid = f"s{i:05d}"
        pair = _render_pair(sid, size, a_code, b_code, num_classes, noise, rng)
        pair.label = label
        path_a = f"images/{sid}_a.ppm"
        path_b = f"images/{sid}_b.pgm"
        save_image(root / path_a, pair.modality_a)
        save_image(root / path_b, pair.modality_b)
        entries.append(ManifestEntry(sid, label, path_a, path_b))
        latents.append(a_code)
    manifest = DatasetManifest(str(root), entries, num_classes, seed, latents_a=latents)
    manifest.save()
    return manifest


def gen_xor_dataset(num_classes: int, count: int, size: int, noise: float,
                    seed: int, out_dir) -> DatasetManifest:
    """Label = (a + b) mod C with latent a on the stripes and b on the square;
    each modality alone is independent of the label."""
    return _gen_dataset("xor", num_classes, count, size, noise, seed, out_dir)


def gen_correlated_dataset(num_classes: int, count: int, size: int, noise: float,
                           seed: int, out_dir) -> DatasetManifest:
    """Both modalities encode the label directly (stripes angle == square cell)."""
    return _gen_dataset("correlated", num_classes, count, size, noise, seed, out_dir)


# ---------------------------------------------------------------------------
# unpaired translation pools

def box_blur3(img: np.ndarray) -> np.ndarray:
    """3x3 box blur with edge replication, same shape; channels first."""
    xp = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(img)
    for i in range(3):
        for j in range(3):
            out += xp[:, i:i + img.shape[1], j:j + img.shape[2]]
    return out / 9.0


def render_scene(size: int, rng: np.random.Generator, channels: int = 3) -> np.ndarray:
    """Random smooth texture: a few sinusoidal gratings around mid grey."""
    ax = np.linspace(0.0, 1.0, size, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    img = np.full((channels, size, size), 0.5)
    for c in range(channels):
        for _ in range(3):
            theta = rng.uniform(0, math.pi)
            freq = rng.uniform(1.0, 4.0)
            phase = rng.uniform(0, 2 * math.pi)
            amp = rng.uniform(0.05, 0.15)
            u = np.cos(theta) * xx + np.sin(theta) * yy
            img[c] += amp * np.sin(2 * math.pi * freq * u + phase)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def invert_blur_transform(scene: np.ndarray) -> np.ndarray:
    """The known cross-domain map: channel inversion then 3x3 box blur."""
    return box_blur3(1.0 - scene).astype(np.float32)


def gen_transform_pairs(count: int, size: int, seed: int, out_dir=None,
                        channels: int = 3):
    """Two unpaired pools from one scene generator.

    Domain W holds raw textured scenes; domain N holds channel-inverted,
    box-blurred renderings of *different* scenes. Returns (pool_w, pool_n),
    each a list of SamplePair with only modality_a populated.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    rng = np.random.default_rng(seed)
    pool_w, pool_n = [], []
    for i in range(count):
        scene = render_scene(size, rng, channels)
        pool_w.append(SamplePair(f"w{i:05d}", scene, scene[:0], 0))
    for i in range(count):
        scene = render_scene(size, rng, channels)
        pool_n.append(SamplePair(f"n{i:05d}", invert_blur_transform(scene), scene[:0], 0))
    if out_dir is not None:
        root = Path(out_dir)
        for sub, pool in (("w", pool_w), ("n", pool_n)):
            d = root / sub
            d.mkdir(parents=True, exist_ok=True)
            for p in pool:
                save_image(d / f"{p.id}.ppm", p.modality_a)
    return pool_w, pool_n


# ---------------------------------------------------------------------------
# PPM / PGM I/O

class ImageFormatError(Exception):
    pass


def save_image(path, tensor: np.ndarray) -> None:
    """Write (C,H,W) values in [0,1] as binary PPM (C=3) or PGM (C=1)."""
    arr = np.asarray(tensor)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ImageFormatError(f"expected (1|3, H, W) tensor, got {arr.shape}")
    if arr.min() < 0 or arr.max() > 1:
        raise ImageFormatError("pixel values must lie in [0, 1]")
    c, h, w = arr.shape
    data = np.rint(arr * 255.0).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n255\n".encode())
        fh.write(data.transpose(1, 2, 0).tobytes())


def load_image(path) -> np.ndarray:
    """Read a binary PPM/PGM back to a (C,H,W) float32 tensor in [0,1]."""
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: bad magic {magic!r}")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: malformed header")
        fields.append(raw[start:pos])
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric header fields {fields}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval} (expected 255)")
    pos += 1  # single whitespace after maxval
    c = 3 if magic == b"P6" else 1
    need = w * h * c
    payload = raw[pos:pos + need]
    if len(payload) != need:
        raise ImageFormatError(f"{path}: truncated payload "
                               f"({len(payload)} of {need} bytes)")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c)
    return (img.transpose(2, 0, 1).astype(np.float32) / 255.0)


# ---------------------------------------------------------------------------
# splits and batching

def split_dataset(manifest: DatasetManifest, seed: int) -> dict[str, list[ManifestEntry]]:
    """Deterministic stratified 70/10/20 partition.

    Global split sizes are fixed by rounding; classes are apportioned with a
    largest-deficit rule so per-class proportions stay within one sample of
    the global ratios.
    """
    entries = manifest.entries
    n = len(entries)
    if n < 10:
        raise ValueError(f"need >= 10 entries to split, got {n}")
    fracs = manifest.split
    targets = {"train": round(fracs["train"] * n), "val": round(fracs["val"] * n)}
    targets["test"] = n - targets["train"] - targets["val"]

    rng = np.random.default_rng([seed, 5])
    by_class: dict[int, list[ManifestEntry]] = {}
    for e in entries:
        by_class.setdefault(e.label, []).append(e)

    out = {"train": [], "val": [], "test": []}
    assigned = {k: 0 for k in out}
    for label in sorted(by_class):
        rows = by_class[label]
        order = rng.permutation(len(rows))
        rows = [rows[i] for i in order]
        quota = {k: int(math.floor(fracs[k] * len(rows))) for k in out}
        leftover = len(rows) - sum(quota.values())
        for _ in range(leftover):
            deficits = {k: (targets[k] - assigned[k] - quota[k]) / max(targets[k], 1)
                        for k in out}
            quota[max(deficits, key=lambda k: (deficits[k], k))] += 1
        pos = 0
        for k in ("train", "val", "test"):
            out[k].extend(rows[pos:pos + quota[k]])
            assigned[k] += quota[k]
            pos += quota[k]
    return out


def batch_iter(entries: list, batch_size: int, shuffle: bool, seed: int, epoch: int):
    """Yield index lists; epoch-keyed shuffle, final partial batch included."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    idx = np.arange(len(entries))
    if shuffle:
        idx = np.random.default_rng([seed, 17, epoch]).permutation(idx)
    for start in range(0, len(entries), batch_size):
        yield [entries[i] for i in idx[start:start + batch_size]]


def load_split_arrays(manifest: DatasetManifest, entries: list[ManifestEntry]):
    """Materialize a split as (Xa, Xb, labels) float32/int64 arrays."""
    root = Path(manifest.root)
    xa = np.stack([load_image(root / e.path_a) for e in entries])
    xb = np.stack([load_image(root / e.path_b) for e in entries])
    y = np.asarray([e.label for e in entries], dtype=np.int64)
    return xa, xb, y
