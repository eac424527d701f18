"""Images, masks and datasets.

Native image format is binary netpbm (P5 gray / P6 RGB, maxval 255): a short
ASCII header followed by raw bytes, so save/load is lossless and needs no
codec. PNG is accepted as well through Pillow.

Dataset directory layout::

    root/manifest.json
    root/images/NNNN.ppm
    root/masks/NNNN.pgm

Inputs are expected to be pre-cropped around the face; no detection or
cropping happens here.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "hairmatte-dataset"
MANIFEST_VERSION = 1


class ImageFormatError(ValueError):
    code = "unsupported_format"


class TruncatedImageError(ImageFormatError):
    code = "truncated_image"


class DatasetError(ValueError):
    pass


# -- image I/O ---------------------------------------------------------------
_HEADER = re.compile(rb"\A(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def decode_netpbm(raw: bytes) -> np.ndarray:
    if raw[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported image magic {raw[:2]!r}")
    m = _HEADER.match(raw)
    if m is None:
        raise TruncatedImageError("truncated or malformed netpbm header")
    kind, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit netpbm is supported (maxval {maxval})")
    c = 3 if kind == b"P6" else 1
    body = raw[m.end():]
    need = w * h * c
    if len(body) < need:
        raise TruncatedImageError(f"truncated image: {len(body)} of {need} pixel bytes")
    arr = np.frombuffer(body[:need], dtype=np.uint8).reshape(h, w, c)
    return (arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def encode_netpbm(image) -> bytes:
    arr = _to_uint8(image)
    c, h, w = arr.shape
    if c not in (1, 3):
        raise ImageFormatError(f"netpbm needs 1 or 3 channels, got {c}")
    header = f"{'P6' if c == 3 else 'P5'}\n{w} {h}\n255\n".encode("ascii")
    return header + arr.transpose(1, 2, 0).tobytes()


def _to_uint8(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Read an image as float32 ``(c, h, w)`` in [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] in (b"P5", b"P6"):
        return decode_netpbm(raw)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("L" if im.mode in ("L", "1", "I", "I;16") else "RGB"))
        arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
        return arr.astype(np.float32) / np.float32(255.0)
    raise ImageFormatError(f"unsupported image magic {raw[:8]!r} in {path}")


def save_image(path, image) -> None:
    """Write ``(c, h, w)`` or ``(h, w)`` data in [0, 1]; format chosen by extension."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = _to_uint8(image)
        Image.fromarray(arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)).save(path)
        return
    path.write_bytes(encode_netpbm(image))


def load_mask(path, num_classes: int = 2) -> np.ndarray:
    """Read a label mask written by :func:`save_mask` as float32 ``(1, h, w)`` labels."""
    gray = load_image(path)[:1]
    return np.rint(gray * (num_classes - 1)).astype(np.float32)


def save_mask(path, labels, num_classes: int = 2) -> None:
    lab = np.asarray(labels, dtype=np.float64)
    save_image(path, lab / (num_classes - 1))


# -- geometry ----------------------------------------------------------------
def resize_bilinear(image, target) -> np.ndarray:
    """Bilinear resize of ``(c, h, w)`` with half-pixel centres; ``target`` is int or (h, w)."""
    arr = np.asarray(image)
    th, tw = (target, target) if isinstance(target, int) else target
    if th < 1 or tw < 1:
        raise ValueError("target size must be >= 1")
    h, w = arr.shape[-2:]
    if (th, tw) == (h, w):
        return arr.copy()

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo)

    y0, y1, fy = coords(th, h)
    x0, x1, fx = coords(tw, w)
    a = arr.astype(np.float64)
    top = a[..., y0, :] * (1 - fy)[:, None] + a[..., y1, :] * fy[:, None]
    out = top[..., x0] * (1 - fx) + top[..., x1] * fx
    return out.astype(arr.dtype if arr.dtype.kind == "f" else np.float32)


# -- samples and datasets ----------------------------------------------------
@dataclass
class Sample:
    """``image`` is float32 (3, h, w) in [0, 1]; ``mask`` holds integer class labels as float32 (1, h, w)."""

    image: np.ndarray
    mask: np.ndarray
    source: str = ""


def validate_sample(s: Sample, num_classes: int = 2) -> None:
    if s.image.ndim != 3 or s.image.shape[0] != 3:
        raise DatasetError(f"{s.source}: image must be (3, h, w), got {s.image.shape}")
    if s.mask.shape != (1,) + s.image.shape[1:]:
        raise DatasetError(f"{s.source}: mask {s.mask.shape} does not match image {s.image.shape}")
    if s.image.min() < 0 or s.image.max() > 1:
        raise DatasetError(f"{s.source}: image values outside [0, 1]")
    labels = np.unique(s.mask)
    if not np.all(np.isin(labels, np.arange(num_classes))):
        raise DatasetError(f"{s.source}: mask labels {labels} outside 0..{num_classes - 1}")


@dataclass
class Dataset:
    samples: list[Sample]
    num_classes: int = 2
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.ids:
            self.ids = [f"{i:04d}" for i in range(len(self.samples))]

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i) -> Sample:
        return self.samples[i]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(n, 3, h, w)`` images and ``(n, 1, h, w)`` label masks."""
        if not self.samples:
            return np.zeros((0, 3, 0, 0), np.float32), np.zeros((0, 1, 0, 0), np.float32)
        return (
            np.stack([s.image for s in self.samples]).astype(np.float32),
            np.stack([s.mask for s in self.samples]).astype(np.float32),
        )

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset([self.samples[i] for i in idx], self.num_classes, [self.ids[i] for i in idx])

    def validate(self) -> None:
        for s in self.samples:
            validate_sample(s, self.num_classes)


def flip_augment(dataset: Dataset) -> Dataset:
    """Originals followed by their horizontal mirrors (image and mask together)."""
    flipped = [
        Sample(s.image[..., ::-1].copy(), s.mask[..., ::-1].copy(), f"{s.source}+flip") for s in dataset.samples
    ]
    return Dataset(dataset.samples + flipped, dataset.num_classes, dataset.ids + [f"{i}f" for i in dataset.ids])


def resize_sample(s: Sample, size: int) -> Sample:
    if s.image.shape[1:] == (size, size):
        return s
    img = np.clip(resize_bilinear(s.image, size), 0, 1)
    mask = np.rint(resize_bilinear(s.mask.astype(np.float32), size))
    return Sample(img.astype(np.float32), mask.astype(np.float32), s.source)


# -- synthetic hair ----------------------------------------------------------
@dataclass
class SynthConfig:
    """Procedural "selfie" generator: background, a skin-toned face and Bezier hair strands.

    Samples whose hair coverage falls outside ``coverage_bounds`` are redrawn
    (up to ``max_redraws`` times); bounds are ignored when no strands are drawn.
    ``coarse_radius`` > 0 replaces the exact mask with a randomly dilated or
    eroded one, imitating coarse crowd-sourced labels.
    """

    seed: int = 0
    count: int = 10
    size: int = 64
    strand_count: tuple[int, int] = (28, 44)
    strand_width: tuple[float, float] = (1.2, 3.0)
    background: str = "mixed"
    hair_albedo: tuple[float, float] = (0.05, 0.45)
    highlight_prob: float = 0.15
    noise_sigma: float = 0.01
    coverage_bounds: tuple[float, float] = (0.08, 0.6)
    max_redraws: int = 20
    coarse_radius: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


BACKGROUNDS = ("flat", "gradient", "textured")


def _bezier(p0, p1, p2, n: int = 24) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def _polyline_distance(px: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Distance from each pixel centre ``px`` (m, 2) to the polyline ``pts`` (k, 2)."""
    a, b = pts[:-1], pts[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(1), 1e-12)
    ap = px[:, None, :] - a[None]
    t = np.clip((ap * ab[None]).sum(-1) / denom[None], 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(((px[:, None, :] - closest) ** 2).sum(-1)).min(axis=1)


def _background(rng: np.random.Generator, size: int, mode: str) -> np.ndarray:
    if mode == "mixed":
        mode = BACKGROUNDS[rng.integers(len(BACKGROUNDS))]
    c0 = rng.uniform(0.45, 0.95, 3)
    if mode == "flat":
        return np.broadcast_to(c0[:, None, None], (3, size, size)).copy()
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    if mode == "gradient":
        c1 = rng.uniform(0.45, 0.95, 3)
        ang = rng.uniform(0, 2 * np.pi)
        t = (np.cos(ang) * (xx - 0.5) + np.sin(ang) * (yy - 0.5)) / np.sqrt(0.5) + 0.5
        t = np.clip(t, 0, 1)
        return c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    if mode == "textured":
        coarse = rng.uniform(-1, 1, (3, 6, 6))
        tex = resize_bilinear(coarse, size)
        return np.clip(c0[:, None, None] + 0.12 * tex, 0, 1)
    raise ValueError(f"unknown background mode {mode!r}")


def _render(rng: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    s = cfg.size
    img = _background(rng, s, cfg.background)
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5

    # face: skin ellipse under the hair
    cx = s * rng.uniform(0.4, 0.6)
    cy = s * rng.uniform(0.5, 0.62)
    rad = s * rng.uniform(0.2, 0.28)
    skin = np.array([0.85, 0.65, 0.52]) * rng.uniform(0.8, 1.1)
    face = ((xx - cx) / (rad * 0.85)) ** 2 + ((yy - cy) / rad) ** 2
    face_alpha = np.clip((1.0 - face) * rad * 0.5, 0, 1)
    img = img * (1 - face_alpha) + np.clip(skin, 0, 1)[:, None, None] * face_alpha

    mask = np.zeros((s, s), dtype=bool)
    n_strands = int(rng.integers(cfg.strand_count[0], cfg.strand_count[1] + 1)) if cfg.strand_count[1] > 0 else 0
    base = rng.uniform(*cfg.hair_albedo) * np.array([1.0, rng.uniform(0.7, 0.95), rng.uniform(0.45, 0.8)])
    for _ in range(n_strands):
        # roots on the upper scalp arc, tips falling down the sides
        theta = rng.uniform(np.pi * 1.05, np.pi * 1.95)
        root = np.array([cx + rad * 0.9 * np.cos(theta), cy + rad * 1.05 * np.sin(theta)])
        side = np.sign(np.cos(theta)) or 1.0
        length = rad * rng.uniform(0.8, 2.0)
        ctrl = root + np.array([side * rad * rng.uniform(0.3, 0.8), -rad * rng.uniform(0.0, 0.3)])
        tip = np.array([root[0] + side * rad * rng.uniform(0.3, 0.7), root[1] + length])
        half = rng.uniform(*cfg.strand_width) / 2.0
        pts = _bezier(root, ctrl, tip)
        # the curve lies in the hull of its control points, so only nearby pixels can be covered
        ctl = np.stack([root, ctrl, tip])
        x0, y0 = np.floor(ctl.min(0) - half - 1).astype(int).clip(0, s)
        x1, y1 = np.ceil(ctl.max(0) + half + 1).astype(int).clip(0, s)
        dist = np.full((s, s), np.inf)
        if x1 > x0 and y1 > y0:
            box = np.stack([xx[y0:y1, x0:x1].ravel(), yy[y0:y1, x0:x1].ravel()], axis=1)
            dist[y0:y1, x0:x1] = _polyline_distance(box, pts).reshape(y1 - y0, x1 - x0)
        alpha = np.clip(half + 0.5 - dist, 0.0, 1.0)
        mask |= dist <= half
        color = base * rng.uniform(0.8, 1.2)
        if rng.random() < cfg.highlight_prob:
            color = color + rng.uniform(0.15, 0.35)
        img = img * (1 - alpha) + np.clip(color, 0, 1)[:, None, None] * alpha
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    return np.clip(img, 0, 1).astype(np.float32), mask


def coarsen_mask(mask: np.ndarray, rng: np.random.Generator, radius: int) -> np.ndarray:
    """Randomly dilate (and fill holes) or erode a binary mask by up to ``radius`` pixels."""
    if radius <= 0 or not mask.any():
        return mask
    k = int(rng.integers(1, radius + 1))
    disk = np.hypot(*np.mgrid[-k:k + 1, -k:k + 1]) <= k
    if rng.random() < 0.5:
        return ndimage.binary_fill_holes(ndimage.binary_dilation(mask, disk))
    return ndimage.binary_erosion(mask, disk)


def synth_sample(cfg: SynthConfig, index: int) -> Sample:
    """Sample ``index`` of the synthetic set; depends only on ``(cfg, index)``."""
    rng = np.random.default_rng([cfg.seed, index])
    lo, hi = cfg.coverage_bounds
    for _ in range(cfg.max_redraws + 1):
        img, mask = _render(rng, cfg)
        cov = mask.mean()
        if cfg.strand_count[1] == 0 or lo <= cov <= hi:
            break
    if cfg.coarse_radius:
        mask = coarsen_mask(mask, rng, cfg.coarse_radius)
    return Sample(img, mask[None].astype(np.float32), f"synthetic:seed={cfg.seed}:index={index}")


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    return Dataset([synth_sample(cfg, i) for i in range(cfg.count)], num_classes=2)


# -- directory layout --------------------------------------------------------
def write_dataset(root, splits: dict[str, Dataset], image_ext: str = ".ppm") -> Path:
    """Write ``{split_name: dataset}`` under ``root`` with a manifest."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    num_classes = {ds.num_classes for ds in splits.values()} or {2}
    if len(num_classes) != 1:
        raise DatasetError("all splits must share num_classes")
    nc = num_classes.pop()
    entries = []
    k = 0
    for split, ds in splits.items():
        for s in ds.samples:
            name = f"{k:04d}"
            img_rel = f"images/{name}{image_ext}"
            mask_rel = f"masks/{name}{'.pgm' if image_ext == '.ppm' else image_ext}"
            save_image(root / img_rel, s.image)
            save_mask(root / mask_rel, s.mask, nc)
            entries.append({"id": name, "image": img_rel, "mask": mask_rel, "split": split, "source": s.source})
            k += 1
    manifest = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "num_classes": nc, "samples": entries}
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return root


def read_manifest(root) -> dict:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no {MANIFEST_NAME} in {root}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT or manifest.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest format/version")
    return manifest


def load_dataset(root, split: str | None = None, size: int | None = None) -> Dataset:
    """Load one split (or everything) from a dataset directory, optionally resizing to ``size``."""
    root = Path(root)
    manifest = read_manifest(root)
    nc = int(manifest["num_classes"])
    samples, ids = [], []
    for e in manifest["samples"]:
        if split is not None and e["split"] != split:
            continue
        img = load_image(root / e["image"])
        if img.shape[0] == 1:
            img = np.repeat(img, 3, axis=0)
        s = Sample(img, load_mask(root / e["mask"], nc), e.get("source", e["id"]))
        if size is not None:
            s = resize_sample(s, size)
        samples.append(s)
        ids.append(e["id"])
    ds = Dataset(samples, nc, ids)
    ds.validate()
    return ds
