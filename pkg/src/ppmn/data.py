"""Dataset ingestion, identity splits, pair sampling, augmentation, synthetic data.

On-disk layout: ``<root>/<identity_id>/<camera_id>/<name>.ppm`` with camera ids
``A`` and ``B`` and binary 8-bit P6 images. Images are held as float32 arrays
(3, H, W) scaled to [0, 1].
"""
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError

CAMERAS = ("A", "B")
INPUT_SIZE = (160, 80)
# translation range (rows, cols) for a 160x80 image
MAX_SHIFT = (8, 4)
N_AUGMENTED = 5


# -- PPM / PGM -----------------------------------------------------------------------

_HEADER = re.compile(rb"(P[1-7])((?:\s+|#[^\n]*\n)+)")
_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\d+)")


def read_ppm(path):
    """Decode a binary P6 file with maxval <= 255 into a uint8 (H, W, 3) array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise DatasetError(f"{path}: not a binary P6 PPM (magic {data[:2]!r})")
    pos = 2
    values = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise DatasetError(f"{path}: malformed PPM header")
        values.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = values
    if not data[pos:pos + 1].isspace():
        raise DatasetError(f"{path}: malformed PPM header")
    pos += 1
    if not 0 < maxval <= 255:
        raise DatasetError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    if width < 1 or height < 1:
        raise DatasetError(f"{path}: empty image {width}x{height}")
    need = width * height * 3
    if len(data) - pos < need:
        raise DatasetError(f"{path}: truncated pixel data ({len(data) - pos} of {need} bytes)")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(height, width, 3)
    if maxval != 255:
        pixels = np.round(pixels.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return pixels


def write_ppm(path, pixels):
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


def write_pgm(path, values):
    """Min-max normalize a 2-D map to 8 bits and write it as binary P5."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (v.shape[1], v.shape[0]))
        fh.write(pixels.tobytes())


def to_pixels(image):
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8."""
    return np.round(np.clip(image, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8)


def from_pixels(pixels):
    return (pixels.transpose(2, 0, 1).astype(np.float32) / np.float32(255)).copy()


def resize_bilinear(image, size):
    """Resize (C, H, W) to ``size`` = (h, w) with half-pixel-centred bilinear sampling."""
    c, h, w = image.shape
    oh, ow = size
    if (h, w) == (oh, ow):
        return image.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo).astype(np.float32)

    y0, y1, fy = axis(h, oh)
    x0, x1, fx = axis(w, ow)
    top = image[:, y0][:, :, x0] * (1 - fx) + image[:, y0][:, :, x1] * fx
    bot = image[:, y1][:, :, x0] * (1 - fx) + image[:, y1][:, :, x1] * fx
    return (top * (1 - fy)[:, None] + bot * fy[:, None]).astype(np.float32)


# -- dataset types -------------------------------------------------------------------


@dataclass
class ImageRecord:
    camera: str
    image: np.ndarray = field(repr=False)
    path: str = None


@dataclass
class Identity:
    identity_id: str
    images: list

    def camera(self, cam):
        return [rec for rec in self.images if rec.camera == cam]


@dataclass
class IdentityDataset:
    identities: list
    source: str = ""

    def __len__(self):
        return len(self.identities)

    @property
    def n_images(self):
        return sum(len(ident.images) for ident in self.identities)

    @property
    def ids(self):
        return [ident.identity_id for ident in self.identities]

    def subset(self, ids):
        wanted = set(ids)
        return IdentityDataset([i for i in self.identities if i.identity_id in wanted], self.source)


@dataclass
class PairSample:
    image_a: np.ndarray = field(repr=False)
    image_b: np.ndarray = field(repr=False)
    label: int
    id_a: str
    id_b: str
    # (identity index, image index) of each side, stable within a dataset
    key_a: tuple = None
    key_b: tuple = None


# -- loading -------------------------------------------------------------------------


def load_dataset(root, input_size=INPUT_SIZE):
    """Read the ``<id>/<camera>/<name>.ppm`` tree, resizing every image to ``input_size``."""
    if not os.path.isdir(root):
        raise DatasetError(f"dataset root {root} is not a directory")
    identities = []
    for ident in sorted(os.listdir(root)):
        id_dir = os.path.join(root, ident)
        if not os.path.isdir(id_dir):
            continue
        records = []
        for cam in sorted(os.listdir(id_dir)):
            cam_dir = os.path.join(id_dir, cam)
            if not os.path.isdir(cam_dir):
                continue
            if cam not in CAMERAS:
                raise DatasetError(f"{cam_dir}: unknown camera id {cam!r}; expected one of {CAMERAS}")
            for name in sorted(os.listdir(cam_dir)):
                if not name.endswith(".ppm"):
                    continue
                path = os.path.join(cam_dir, name)
                image = resize_bilinear(from_pixels(read_ppm(path)), input_size)
                records.append(ImageRecord(cam, image, path))
        if not records:
            raise DatasetError(f"{id_dir}: identity has no images")
        identities.append(Identity(ident, records))
    if not identities:
        raise DatasetError(f"{root}: no identities found")
    return IdentityDataset(identities, os.path.abspath(root))


def write_dataset(dataset, root):
    """Write ``dataset`` in the canonical layout; returns the list of written paths."""
    paths = []
    for ident in dataset.identities:
        counters = {cam: 0 for cam in CAMERAS}
        for rec in ident.images:
            cam_dir = os.path.join(root, ident.identity_id, rec.camera)
            os.makedirs(cam_dir, exist_ok=True)
            path = os.path.join(cam_dir, f"{counters[rec.camera]:03d}.ppm")
            counters[rec.camera] += 1
            write_ppm(path, to_pixels(rec.image))
            paths.append(path)
    return paths


# -- splits and pairs ----------------------------------------------------------------


def split_identities(dataset, n_train, n_test, seed):
    """Disjoint seeded identity-level partition into (train, test)."""
    if n_train < 0 or n_test < 0:
        raise DatasetError("split sizes must be non-negative")
    if n_train + n_test > len(dataset):
        raise DatasetError(
            f"cannot split {len(dataset)} identities into {n_train} train + {n_test} test"
        )
    order = np.random.default_rng(seed).permutation(len(dataset))
    pick = lambda idx: IdentityDataset([dataset.identities[i] for i in sorted(idx)], dataset.source)
    return pick(order[:n_train]), pick(order[n_train:n_train + n_test])


def _camera_index(dataset):
    """Flat lists of (identity index, image index) per camera."""
    out = {cam: [] for cam in CAMERAS}
    for i, ident in enumerate(dataset.identities):
        for j, rec in enumerate(ident.images):
            out[rec.camera].append((i, j))
    return out


def make_pair(dataset, key_a, key_b):
    ia, ja = key_a
    ib, jb = key_b
    id_a = dataset.identities[ia].identity_id
    id_b = dataset.identities[ib].identity_id
    return PairSample(dataset.identities[ia].images[ja].image, dataset.identities[ib].images[jb].image,
                      int(id_a == id_b), id_a, id_b, key_a, key_b)


def positive_pairs(dataset):
    """Every cross-camera (A, B) pair of the same identity, in dataset order."""
    pairs = []
    for i, ident in enumerate(dataset.identities):
        a_idx = [j for j, rec in enumerate(ident.images) if rec.camera == "A"]
        b_idx = [j for j, rec in enumerate(ident.images) if rec.camera == "B"]
        pairs.extend(make_pair(dataset, (i, ja), (i, jb)) for ja in a_idx for jb in b_idx)
    return pairs


def negative_keys(dataset):
    """All cross-camera (A, B) key pairs with distinct identities, in dataset order."""
    cams = _camera_index(dataset)
    return [(ka, kb) for ka in cams["A"] for kb in cams["B"] if ka[0] != kb[0]]


def generate_pairs(dataset, negative_ratio, seed):
    """One epoch: all positives plus ``negative_ratio`` x as many uniform negatives, shuffled."""
    if len(dataset) < 2:
        raise DatasetError("pair generation needs at least 2 identities")
    if negative_ratio < 0:
        raise DatasetError("negative_ratio must be >= 0")
    positives = positive_pairs(dataset)
    if not positives:
        raise DatasetError("no cross-camera positive pairs available")
    rng = np.random.default_rng(seed)
    cams = _camera_index(dataset)
    n_neg = int(round(negative_ratio * len(positives)))
    negatives = []
    while len(negatives) < n_neg:
        ka = cams["A"][rng.integers(len(cams["A"]))]
        kb = cams["B"][rng.integers(len(cams["B"]))]
        if ka[0] != kb[0]:
            negatives.append(make_pair(dataset, ka, kb))
    pairs = positives + negatives
    return [pairs[i] for i in rng.permutation(len(pairs))]


def fixed_pairs_epochs(pairs, seed):
    """Epoch factory that reshuffles a fixed pair list (seed, epoch)-deterministically."""

    def epoch(e):
        rng = np.random.default_rng([seed, e])
        return [pairs[i] for i in rng.permutation(len(pairs))]

    return epoch


# -- augmentation --------------------------------------------------------------------


def max_shift_for(size):
    """Translation range scaled from the 160x80 reference to ``size``."""
    h, w = size
    return (max(int(round(MAX_SHIFT[0] * h / INPUT_SIZE[0])), 0),
            max(int(round(MAX_SHIFT[1] * w / INPUT_SIZE[1])), 0))


def translate(image, dy, dx):
    """Window of the same size centred at (centre + (dy, dx)); out-of-image pixels are 0.

    ``out[y, x] = image[y + dy, x + dx]``, so a positive offset empties the
    bottom ``dy`` rows and right ``dx`` columns.
    """
    c, h, w = image.shape
    out = np.zeros_like(image)
    ys, yd = max(dy, 0), max(-dy, 0)
    xs, xd = max(dx, 0), max(-dx, 0)
    hh, ww = h - abs(dy), w - abs(dx)
    if hh > 0 and ww > 0:
        out[:, yd:yd + hh, xd:xd + ww] = image[:, ys:ys + hh, xs:xs + ww]
    return out


def sample_offsets(rng, n=N_AUGMENTED, max_shift=MAX_SHIFT):
    """``n`` integer offsets (dy, dx), uniform on [-my, my] x [-mx, mx]."""
    my, mx = max_shift
    return np.stack([rng.integers(-my, my + 1, size=n), rng.integers(-mx, mx + 1, size=n)], axis=1)


def augment_translations(image, rng=None, n=N_AUGMENTED, max_shift=None):
    """``n`` translated copies of ``image`` and the offsets used."""
    rng = rng if rng is not None else np.random.default_rng(0)
    max_shift = max_shift or max_shift_for(image.shape[1:])
    offsets = sample_offsets(rng, n, max_shift)
    return [translate(image, int(dy), int(dx)) for dy, dx in offsets], offsets


# -- synthetic identities ------------------------------------------------------------

PALETTE = np.array([
    [0.85, 0.10, 0.10], [0.10, 0.65, 0.15], [0.15, 0.25, 0.85], [0.90, 0.80, 0.10],
    [0.60, 0.15, 0.70],
], dtype=np.float32)
HAIR = np.array([[0.10, 0.07, 0.05], [0.45, 0.30, 0.15], [0.85, 0.75, 0.45], [0.55, 0.55, 0.55]],
                dtype=np.float32)
SKIN = np.array([0.90, 0.75, 0.62], dtype=np.float32)
TORSO_WIDTHS = (26, 32, 38)


@dataclass(frozen=True)
class Appearance:
    hair: int
    upper: int
    lower: int
    width: int
    bag: bool
    bag_color: int
    bag_side: int  # -1 left, +1 right (camera A view)

    def key(self):
        # a missing bag makes its colour/side irrelevant
        return (self.hair, self.upper, self.lower, self.width, self.bag,
                self.bag_color if self.bag else -1, self.bag_side if self.bag else 0)

    @property
    def clothing(self):
        return (self.upper, self.lower)


def _draw_appearance(rng):
    return Appearance(
        hair=int(rng.integers(len(HAIR))),
        upper=int(rng.integers(len(PALETTE))),
        lower=int(rng.integers(len(PALETTE))),
        width=int(TORSO_WIDTHS[rng.integers(len(TORSO_WIDTHS))]),
        bag=bool(rng.random() < 0.6),
        bag_color=int(rng.integers(len(PALETTE))),
        bag_side=int(rng.choice([-1, 1])),
    )


def synth_appearances(n_ids, seed):
    """Distinct appearances, redrawn on collision.

    Up to ``len(PALETTE)**2`` identities, the (upper, lower) clothing colours
    are unique per identity; beyond that only the full attribute tuple is.
    """
    rng = np.random.default_rng([seed, 0])
    unique_clothing = n_ids <= len(PALETTE) ** 2
    seen, out = set(), []
    while len(out) < n_ids:
        app = _draw_appearance(rng)
        key = app.clothing if unique_clothing else app.key()
        if key not in seen:
            seen.add(key)
            out.append(app)
    return out


def render_person(app, camera, rng, size=INPUT_SIZE):
    """Render one view. Camera B mirrors the layout, jitters it by up to 12 px and shifts brightness."""
    h, w = size
    sy, sx = h / INPUT_SIZE[0], w / INPUT_SIZE[1]
    jitter = 12 if camera == "B" else 3
    dy, dx = (int(v) for v in rng.integers(-jitter, jitter + 1, size=2))
    img = np.empty((3, h, w), dtype=np.float32)
    img[:] = np.float32(0.55) + rng.normal(0, 0.03, size=(3, 1, 1)).astype(np.float32)
    img += rng.normal(0, 0.02, size=img.shape).astype(np.float32)
    yy, xx = np.mgrid[0:h, 0:w]
    cx = w / 2 + dx * sx
    oy = dy * sy

    def rect(y0, y1, x0, x1, color):
        m = (yy >= oy + y0 * sy) & (yy < oy + y1 * sy) & (xx >= x0) & (xx < x1)
        img[:, m] = color[:, None]

    half = app.width / 2 * sx
    # legs, torso, head (skin with hair cap)
    rect(92, 150, cx - half + 3 * sx, cx + half - 3 * sx, PALETTE[app.lower])
    rect(36, 92, cx - half, cx + half, PALETTE[app.upper])
    head = ((yy - (oy + 22 * sy)) / (11 * sy)) ** 2 + ((xx - cx) / (9 * sx)) ** 2 <= 1
    img[:, head] = SKIN[:, None]
    hair = head & (yy < oy + 18 * sy)
    img[:, hair] = HAIR[app.hair][:, None]
    if app.bag:
        bx = cx + app.bag_side * (half + 7 * sx)
        rect(48, 80, bx - 7 * sx, bx + 7 * sx, PALETTE[app.bag_color])
    if camera == "B":
        img = img[:, :, ::-1]
        img = img + np.float32(rng.uniform(-0.15, 0.15))
    else:
        img = img + np.float32(rng.uniform(-0.04, 0.04))
    img = np.clip(img, 0, 1)
    # quantize to 8-bit levels so a PPM round trip is lossless
    return (np.round(img * 255) / 255).astype(np.float32)


def synth_dataset(n_ids, imgs_per_id_per_camera, seed, size=INPUT_SIZE):
    """Deterministic synthetic re-ID dataset with misaligned cross-camera views."""
    if n_ids < 2:
        raise DatasetError("synthetic dataset needs at least 2 identities")
    identities = []
    for k, app in enumerate(synth_appearances(n_ids, seed)):
        records = []
        for c, cam in enumerate(CAMERAS):
            for j in range(imgs_per_id_per_camera):
                rng = np.random.default_rng([seed, 1, k, c, j])
                records.append(ImageRecord(cam, render_person(app, cam, rng, size)))
        identities.append(Identity(f"id{k:04d}", records))
    return IdentityDataset(identities, f"synthetic(seed={seed})")
