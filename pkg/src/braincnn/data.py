"""Dataset ingestion, preprocessing, augmentation, splitting, batching.

Datasets are directory trees with one subdirectory per class.  Class ids
follow lexicographic directory-name order so labels are stable across
machines.  Everything downstream works on float32 images in [0,1] with
shape (H, W, 3).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .rng import derived_rng, seeded_rng

IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp"}


@dataclass
class DatasetIndex:
    entries: list[tuple[str, int]]          # (path, class_id)
    class_names: list[str]
    warnings: int = 0

    @property
    def class_counts(self) -> list[int]:
        counts = [0] * len(self.class_names)
        for _, cid in self.entries:
            counts[cid] += 1
        return counts

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    seed: int = 1234

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0:
            raise DataError("split ratios must be nonnegative")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise DataError(f"split ratios must sum to 1, got {self}")


@dataclass(frozen=True)
class AugmentParams:
    max_rotation_degrees: float = 40.0
    max_shift_fraction: float = 0.20
    shear_enabled: bool = True
    max_shear_degrees: float = 10.0
    max_zoom_fraction: float = 0.20
    horizontal_flip_enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.max_rotation_degrees <= 180:
            raise DataError("rotation must be in [0,180] degrees")
        for f in (self.max_shift_fraction, self.max_zoom_fraction):
            if not 0 <= f <= 1:
                raise DataError("shift/zoom fractions must be in [0,1]")


def scan_dataset(root) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not readable: {root}")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DataError(f"no class directories under {root}")
    entries = []
    warnings = 0
    names = [d.name for d in class_dirs]
    for cid, d in enumerate(class_dirs):
        files = sorted(d.iterdir())
        kept = 0
        for f in files:
            if f.is_file() and f.suffix.lower() in IMAGE_EXTS:
                entries.append((str(f), cid))
                kept += 1
            elif f.is_file():
                warnings += 1
        if kept == 0:
            raise DataError(f"class directory {d} holds no images")
    return DatasetIndex(entries, names, warnings)


def load_and_preprocess(path, size=224) -> np.ndarray:
    """Decode, force RGB, bilinear-resize to (size, size), scale to [0,1]."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32)
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from None
    if arr.size == 0:
        raise DataError(f"degenerate image {path}")
    return arr / 255.0


# ------------------------------------------------------------- augmentation

def _affine_about_center(h, w, rotation_deg, shift_y, shift_x,
                         shear_deg, zoom, flip):
    """Forward 3x3 affine composed about the image center.

    Order: flip, rotate, shear, zoom, then translate.  Returns the matrix
    mapping input coords (row, col, 1) to output coords.
    """
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    to_center = np.array([[1, 0, -cy], [0, 1, -cx], [0, 0, 1.0]])
    back = np.array([[1, 0, cy], [0, 1, cx], [0, 0, 1.0]])
    th = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(th), -np.sin(th), 0],
                    [np.sin(th), np.cos(th), 0],
                    [0, 0, 1.0]])
    sh = np.deg2rad(shear_deg)
    shear = np.array([[1, np.tan(sh), 0], [0, 1, 0], [0, 0, 1.0]])
    scale = np.array([[zoom, 0, 0], [0, zoom, 0], [0, 0, 1.0]])
    fl = np.array([[1, 0, 0], [0, -1.0 if flip else 1.0, 0], [0, 0, 1.0]])
    shift = np.array([[1, 0, shift_y], [0, 1, shift_x], [0, 0, 1.0]])
    return shift @ back @ scale @ shear @ rot @ fl @ to_center


def apply_affine(image: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Warp with bilinear sampling and nearest-edge fill.

    Output pixel (r, c) samples the input at matrix^-1 @ (r, c, 1); sample
    coordinates are clamped to the image, which implements the edge fill.
    """
    h, w = image.shape[:2]
    inv = np.linalg.inv(matrix)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    src_r = inv[0, 0] * rr + inv[0, 1] * cc + inv[0, 2]
    src_c = inv[1, 0] * rr + inv[1, 1] * cc + inv[1, 2]
    src_r = np.clip(src_r, 0, h - 1)
    src_c = np.clip(src_c, 0, w - 1)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (src_r - r0)[..., None].astype(image.dtype)
    fc = (src_c - c0)[..., None].astype(image.dtype)
    top = image[r0, c0] * (1 - fc) + image[r0, c1] * fc
    bot = image[r1, c0] * (1 - fc) + image[r1, c1] * fc
    out = top * (1 - fr) + bot * fr
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def sample_augment_matrix(shape, params: AugmentParams, rng: np.random.Generator):
    h, w = shape[:2]
    rot = rng.uniform(-params.max_rotation_degrees, params.max_rotation_degrees)
    shift_y = rng.uniform(-params.max_shift_fraction, params.max_shift_fraction) * h
    shift_x = rng.uniform(-params.max_shift_fraction, params.max_shift_fraction) * w
    shear = (rng.uniform(-params.max_shear_degrees, params.max_shear_degrees)
             if params.shear_enabled else 0.0)
    zoom = rng.uniform(1 - params.max_zoom_fraction, 1 + params.max_zoom_fraction)
    flip = params.horizontal_flip_enabled and rng.random() < 0.5
    return _affine_about_center(h, w, rot, shift_y, shift_x, shear, zoom, flip)


def _is_identity_params(params: AugmentParams) -> bool:
    return (params.max_rotation_degrees == 0 and params.max_shift_fraction == 0
            and not params.shear_enabled and params.max_zoom_fraction == 0
            and not params.horizontal_flip_enabled)


def augment(image: np.ndarray, params: AugmentParams,
            rng: np.random.Generator) -> np.ndarray:
    if _is_identity_params(params):
        return image
    return apply_affine(image, sample_augment_matrix(image.shape, params, rng))


# ------------------------------------------------------ splitting & batching

def stratified_split(index: DatasetIndex, spec: SplitSpec):
    """Per-class shuffle then floor allocation; remainders go to train."""
    for name, count in zip(index.class_names, index.class_counts):
        if count < 3:
            raise DataError(f"class {name!r} has {count} entries; need >= 3 to split")
    rng = seeded_rng(spec.seed)
    parts: list[list[tuple[str, int]]] = [[], [], []]
    for cid in range(len(index.class_names)):
        members = [e for e in index.entries if e[1] == cid]
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        n = len(members)
        n_val = int(n * spec.val)
        n_test = int(n * spec.test)
        n_train = n - n_val - n_test
        parts[0].extend(members[:n_train])
        parts[1].extend(members[n_train:n_train + n_val])
        parts[2].extend(members[n_train + n_val:])
    return tuple(DatasetIndex(p, list(index.class_names)) for p in parts)


def one_hot(class_id: int, class_count: int) -> np.ndarray:
    if not 0 <= class_id < class_count:
        raise DataError(f"class id {class_id} outside [0, {class_count})")
    v = np.zeros(class_count, dtype=np.float32)
    v[class_id] = 1.0
    return v


def make_batches(index: DatasetIndex, batch_size: int, shuffle=False,
                 shuffle_seed: int = 0, augment_params: AugmentParams | None = None,
                 augment_seed: int = 0, loader=load_and_preprocess,
                 image_size=224, dtype=np.float32):
    """Yield (images[B,S,S,3], onehot[B,C]) covering every entry once.

    Augmentation draws come from per-sample streams keyed by
    (augment_seed, entry index), so results do not depend on batch order.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if not index.entries:
        raise DataError("empty dataset index")
    order = np.arange(len(index.entries))
    if shuffle:
        order = seeded_rng(shuffle_seed).permutation(order)
    c = len(index.class_names)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        images = np.empty((len(chunk), image_size, image_size, 3), dtype=dtype)
        labels = np.zeros((len(chunk), c), dtype=dtype)
        for row, idx in enumerate(chunk):
            path, cid = index.entries[idx]
            img = loader(path, image_size)
            if augment_params is not None:
                img = augment(img, augment_params, derived_rng(augment_seed, int(idx)))
            images[row] = img
            labels[row, cid] = 1.0
        yield images, labels


# ------------------------------------------------------------------ fixtures

FIXTURE_CLASSES = ("checker", "gradient", "rings", "speckle")


def _fixture_image(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    img = np.zeros((size, size, 3), dtype=np.float64)
    if kind == "checker":
        cell = max(size // 8, 2)
        mask = ((yy // cell) + (xx // cell)) % 2
        img[..., 0] = 0.2 + 0.7 * mask
        img[..., 1] = 0.2 + 0.3 * mask
    elif kind == "gradient":
        img[..., 1] = yy / (size - 1)
        img[..., 2] = xx / (size - 1)
    elif kind == "rings":
        r = np.hypot(yy - (size - 1) / 2, xx - (size - 1) / 2)
        band = (np.sin(r / size * 24) + 1) / 2
        img[..., 2] = band
        img[..., 0] = 0.3 * band
    elif kind == "speckle":
        dots = rng.random((size, size)) > 0.92
        img[..., 0] = 0.9 * dots
        img[..., 1] = 0.8 * dots
        img[..., 2] = 0.2
    else:
        raise DataError(f"unknown fixture class {kind}")
    img += rng.normal(0, 0.04, img.shape)
    return np.clip(img, 0, 1)


def make_fixtures(root, per_class=25, seed=0, size=64) -> int:
    """Write a synthetic 4-class dataset in the class-per-directory layout.

    Deterministic under seed (PNG bytes included).  Returns files written.
    """
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create fixture root {root}: {e}") from None
    written = 0
    for cid, kind in enumerate(FIXTURE_CLASSES):
        d = root / kind
        d.mkdir(exist_ok=True)
        for i in range(per_class):
            img = _fixture_image(kind, size, derived_rng(seed, cid, i))
            arr = (img * 255).round().astype(np.uint8)
            Image.fromarray(arr).save(d / f"{kind}_{i:04d}.png")
            written += 1
    return written
