"""Synthetic 9-class head phantoms with controllable structured label noise.

Each sample is a single grayscale slice of nested ellipses: an outer skin
shell, a bone shell with an anterior air cavity, a CSF shell, grey and
white matter, two ventricles inside the WM, and two small anterior eyes.
Intensities are per-class means plus Gaussian noise, with the CSF and bone
means deliberately close so intensity alone does not separate them.

Label noise is boundary-banded class swapping: within a configurable
Chebyshev distance of an a/b class boundary, pixels of class a flip to b
(and b to a) with a given rate. This models a labeler that confuses two
specific tissues near their shared interface rather than flipping pixels
uniformly at random.

All randomness is derived from (seed, sample index), so samples can be
generated in any order or in parallel with identical results.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation

from .errors import ConfigError, FormatError, ShapeError

CLASS_NAMES = ("background", "wm", "gm", "csf", "bone", "skin",
               "cavities", "eyes", "ventricles")
NUM_CLASSES = len(CLASS_NAMES)
(BACKGROUND, WM, GM, CSF, BONE, SKIN, CAVITIES, EYES, VENTRICLES) = range(NUM_CLASSES)

# mean intensities in [0,1]; CSF (0.30) and bone (0.34) overlap on purpose
DEFAULT_CLASS_MEANS = (0.02, 0.85, 0.65, 0.30, 0.34, 0.55, 0.08, 0.95, 0.26)

DATASET_FORMAT_VERSION = 1
SPLIT_TAGS = ("train", "val", "test")

# (class, cy, cx, semi_axis_y, semi_axis_x, paint_only_over) in normalized
# [0,1] image coordinates; painted top to bottom, later entries overwrite.
# paint_only_over None means unconditional, "head" means any non-background.
_ELLIPSES = (
    (SKIN,       0.500, 0.500, 0.455, 0.375, None),
    (BONE,       0.500, 0.500, 0.405, 0.325, None),
    (CSF,        0.500, 0.500, 0.355, 0.270, None),
    (GM,         0.505, 0.500, 0.305, 0.225, None),
    (WM,         0.520, 0.500, 0.240, 0.160, None),
    (VENTRICLES, 0.510, 0.455, 0.055, 0.022, WM),
    (VENTRICLES, 0.510, 0.545, 0.055, 0.022, WM),
    (CAVITIES,   0.125, 0.500, 0.045, 0.090, BONE),
    (EYES,       0.135, 0.345, 0.021, 0.021, "head"),
    (EYES,       0.135, 0.655, 0.021, 0.021, "head"),
)
_NESTED_SHELLS = ((SKIN, BONE), (BONE, CSF), (CSF, GM), (GM, WM))
_MIN_RESOLUTION = 32


@dataclass(frozen=True)
class PhantomSpec:
    resolution: tuple = (64, 64)
    center_jitter: float = 0.012   # uniform, normalized units, per ellipse
    axis_jitter: float = 0.02      # uniform multiplicative, per semi-axis
    class_means: tuple = DEFAULT_CLASS_MEANS
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if len(self.resolution) != 2:
            raise ConfigError(f"resolution must be (H, W), got {self.resolution}")
        if len(self.class_means) != NUM_CLASSES:
            raise ConfigError(f"class_means must have {NUM_CLASSES} entries")
        if not 0.0 <= self.center_jitter < 0.1 or not 0.0 <= self.axis_jitter < 0.5:
            raise ConfigError("jitter ranges out of bounds")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit int")
        _validate_geometry(self)


def _validate_geometry(spec: PhantomSpec) -> None:
    """Reject resolutions/jitters where the nested shells could collide.

    Uses worst-case bounds: every inner ellipse inflated by its axis jitter
    plus both center jitters must stay inside the outer ellipse shrunk by
    its axis jitter, checked on a dense angle grid. Conservative but cheap.
    """
    h, w = spec.resolution
    if h < _MIN_RESOLUTION or w < _MIN_RESOLUTION:
        raise ConfigError(
            f"resolution {h}x{w} too small, the nested geometry needs at least "
            f"{_MIN_RESOLUTION} pixels per side")
    by_class = {e[0]: e for e in _ELLIPSES}
    slack = 1.1 * spec.center_jitter  # absorbs one center jitter per side
    grow = 1.0 + spec.axis_jitter
    shrink = 1.0 - spec.axis_jitter
    theta = np.linspace(0.0, 2.0 * math.pi, 720)
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    _, cy, cx, ay, ax, _ = by_class[SKIN]
    if not (0 < cy - (ay * grow + slack) and cy + ay * grow + slack < 1
            and 0 < cx - (ax * grow + slack) and cx + ax * grow + slack < 1):
        raise ConfigError("outer skin ellipse does not fit inside the image")

    for outer_cls, inner_cls in _NESTED_SHELLS:
        _, ocy, ocx, oay, oax, _ = by_class[outer_cls]
        _, icy, icx, iay, iax, _ = by_class[inner_cls]
        py = icy + (iay * grow + slack) * sin_t
        px = icx + (iax * grow + slack) * cos_t
        oy = oay * shrink - slack
        ox = oax * shrink - slack
        if oy <= 0 or ox <= 0:
            raise ConfigError("jitter too large for the shell spacing")
        if np.any(((py - ocy) / oy) ** 2 + ((px - ocx) / ox) ** 2 > 0.99):
            raise ConfigError(
                f"worst-case jitter lets class {CLASS_NAMES[inner_cls]} escape "
                f"its enclosing {CLASS_NAMES[outer_cls]} shell")

    for cls, _, _, ay, ax, _ in _ELLIPSES:
        if cls == EYES and math.pi * (ay * grow) * (ax * grow) * 2 >= 0.005:
            raise ConfigError("eyes region would exceed 0.5% of pixels")


def generate_phantom(spec: PhantomSpec, index: int):
    """One (image, labels) pair, deterministic in (spec.seed, index).

    Returns image (1,H,W) float32 and labels (H,W) uint8.
    """
    _validate_geometry(spec)
    h, w = spec.resolution
    rng = np.random.default_rng([spec.seed, index, 1])
    yy = (np.arange(h, dtype=np.float64)[:, None] + 0.5) / h
    xx = (np.arange(w, dtype=np.float64)[None, :] + 0.5) / w
    labels = np.full((h, w), BACKGROUND, dtype=np.uint8)
    for cls, cy, cx, ay, ax, over in _ELLIPSES:
        dy, dx = rng.uniform(-spec.center_jitter, spec.center_jitter, size=2)
        sy, sx = rng.uniform(1.0 - spec.axis_jitter, 1.0 + spec.axis_jitter, size=2)
        inside = (((yy - (cy + dy)) / (ay * sy)) ** 2
                  + ((xx - (cx + dx)) / (ax * sx)) ** 2) <= 1.0
        if over == "head":
            inside &= labels != BACKGROUND
        elif over is not None:
            inside &= labels == over
        labels[inside] = cls
    means = np.asarray(spec.class_means, dtype=np.float32)
    image = means[labels] + spec.noise_sigma * rng.standard_normal(
        (h, w), dtype=np.float32)
    return image[None, :, :], labels


@dataclass(frozen=True)
class NoiseSpec:
    """Boundary-banded class-swap noise.

    swap_pairs entries are (class_a, class_b, rate); each pixel of class a
    within band_width (Chebyshev) of a class-b pixel flips to b with the
    given rate, and symmetrically. Band membership and flip decisions both
    come from the uncorrupted labels, so pair order does not matter.
    """
    swap_pairs: tuple = ((CSF, BONE, 0.3), (CAVITIES, BONE, 0.3))
    band_width: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "swap_pairs", tuple(tuple(p) for p in self.swap_pairs))
        for pair in self.swap_pairs:
            if len(pair) != 3:
                raise ConfigError(f"swap pair must be (class_a, class_b, rate), got {pair}")
            a, b, rate = pair
            if not (0 <= a < NUM_CLASSES and 0 <= b < NUM_CLASSES) or a == b:
                raise ConfigError(f"invalid class pair ({a}, {b})")
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"swap rate must be in [0,1], got {rate}")
        if self.band_width < 1:
            raise ConfigError(f"band_width must be >= 1, got {self.band_width}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit int")


def corrupt_labels(labels: np.ndarray, noise: NoiseSpec, index: int = 0) -> np.ndarray:
    """Apply banded swap noise; deterministic in (labels, noise.seed, index)."""
    if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError(f"labels must be a 2D integer map, got {labels.shape} {labels.dtype}")
    rng = np.random.default_rng([noise.seed, index, 2])
    out = labels.copy()
    structure = np.ones((3, 3), dtype=bool)  # Chebyshev unit ball
    for a, b, rate in noise.swap_pairs:
        field = rng.random(size=labels.shape)
        near_b = binary_dilation(labels == b, structure, iterations=noise.band_width)
        near_a = binary_dilation(labels == a, structure, iterations=noise.band_width)
        flip = field < rate
        out[(labels == a) & near_b & flip] = b
        out[(labels == b) & near_a & flip] = a
    return out


@dataclass
class Dataset:
    """Parallel arrays of images, clean labels, noisy labels, split tags."""
    images: np.ndarray        # (N, 1, H, W) float32
    clean_labels: np.ndarray  # (N, H, W) uint8
    noisy_labels: np.ndarray  # (N, H, W) uint8
    split_tags: tuple         # length N, entries in SPLIT_TAGS

    def __post_init__(self):
        n = len(self.images)
        if not (len(self.clean_labels) == len(self.noisy_labels)
                == len(self.split_tags) == n):
            raise ShapeError("dataset arrays must have equal length")

    def __len__(self) -> int:
        return len(self.images)

    def split_indices(self, tag: str) -> np.ndarray:
        if tag not in SPLIT_TAGS:
            raise ConfigError(f"unknown split tag {tag!r}")
        return np.array([i for i, t in enumerate(self.split_tags) if t == tag])

    def subset(self, tag: str):
        """(images, clean_labels, noisy_labels) of one split."""
        idx = self.split_indices(tag)
        return self.images[idx], self.clean_labels[idx], self.noisy_labels[idx]


def split_sizes(n: int, split) -> tuple:
    """Floor-based split sizes with the remainder assigned to train."""
    if len(split) != 3 or any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"split must be 3 nonnegative fractions summing to 1, got {split}")
    n_train = math.floor(n * split[0] + 1e-9)
    n_val = math.floor(n * split[1] + 1e-9)
    n_test = math.floor(n * split[2] + 1e-9)
    n_train += n - (n_train + n_val + n_test)
    return n_train, n_val, n_test


def build_dataset(n: int, spec: PhantomSpec, noise: NoiseSpec,
                  split=(0.6, 0.2, 0.2), seed: int = 0) -> Dataset:
    """Generate n phantoms with noisy labels and a seeded split assignment."""
    if n < 5:
        raise ConfigError(f"need at least 5 samples to populate all splits, got {n}")
    n_train, n_val, n_test = split_sizes(n, split)
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"split {split} leaves an empty split at n={n}")
    images, clean, noisy = [], [], []
    for index in range(n):
        image, labels = generate_phantom(spec, index)
        images.append(image)
        clean.append(labels)
        noisy.append(corrupt_labels(labels, noise, index))
    perm = np.random.default_rng([seed, 3]).permutation(n)
    tags = [""] * n
    for pos, sample in enumerate(perm):
        if pos < n_train:
            tags[sample] = "train"
        elif pos < n_train + n_val:
            tags[sample] = "val"
        else:
            tags[sample] = "test"
    return Dataset(np.stack(images), np.stack(clean), np.stack(noisy), tuple(tags))


def write_dataset(dataset: Dataset, out_dir) -> None:
    """Persist to manifest.txt + raw little-endian binaries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, _, h, w = dataset.images.shape
    manifest = (f"format_version={DATASET_FORMAT_VERSION}\n"
                f"count={n}\nheight={h}\nwidth={w}\nclass_count={NUM_CLASSES}\n"
                f"splits={','.join(dataset.split_tags)}\n")
    (out / "manifest.txt").write_text(manifest)
    (out / "images.f32").write_bytes(
        np.ascontiguousarray(dataset.images, dtype="<f4").tobytes())
    (out / "labels_clean.u8").write_bytes(
        np.ascontiguousarray(dataset.clean_labels, dtype=np.uint8).tobytes())
    (out / "labels_noisy.u8").write_bytes(
        np.ascontiguousarray(dataset.noisy_labels, dtype=np.uint8).tobytes())


def _parse_manifest(path: Path) -> dict:
    if not path.is_file():
        raise FormatError(f"missing manifest: {path}")
    entries = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"malformed manifest line: {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    required = {"format_version", "count", "height", "width", "class_count", "splits"}
    if set(entries) != required:
        raise FormatError(f"manifest keys {sorted(entries)} != expected {sorted(required)}")
    return entries


def _read_exact(path: Path, n_bytes: int, dtype) -> np.ndarray:
    if not path.is_file():
        raise FormatError(f"missing dataset file: {path}")
    data = path.read_bytes()
    if len(data) != n_bytes:
        raise FormatError(f"{path.name}: expected {n_bytes} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=dtype)


def read_dataset(in_dir) -> Dataset:
    """Read a dataset directory; all shapes come from the manifest."""
    src = Path(in_dir)
    entries = _parse_manifest(src / "manifest.txt")
    try:
        version = int(entries["format_version"])
        n = int(entries["count"])
        h = int(entries["height"])
        w = int(entries["width"])
        k = int(entries["class_count"])
    except ValueError as e:
        raise FormatError(f"non-integer manifest value: {e}") from e
    if version != DATASET_FORMAT_VERSION:
        raise FormatError(f"unsupported dataset format version {version}")
    if k != NUM_CLASSES:
        raise FormatError(f"expected {NUM_CLASSES} classes, manifest says {k}")
    if n < 1 or h < 1 or w < 1:
        raise FormatError("count/height/width must be positive")
    tags = tuple(entries["splits"].split(","))
    if len(tags) != n or any(t not in SPLIT_TAGS for t in tags):
        raise FormatError("splits entry does not match count or uses unknown tags")
    images = _read_exact(src / "images.f32", n * h * w * 4, "<f4").reshape(n, 1, h, w)
    clean = _read_exact(src / "labels_clean.u8", n * h * w, np.uint8).reshape(n, h, w)
    noisy = _read_exact(src / "labels_noisy.u8", n * h * w, np.uint8).reshape(n, h, w)
    for name, arr in (("labels_clean.u8", clean), ("labels_noisy.u8", noisy)):
        if arr.max(initial=0) >= k:
            raise FormatError(f"{name}: label out of range for class_count={k}")
    return Dataset(images.copy(), clean.copy(), noisy.copy(), tags)


def intensity_overlap(spec: PhantomSpec, class_a: int, class_b: int) -> float:
    """Bhattacharyya coefficient of the two classes' intensity Gaussians."""
    mu_a, mu_b = spec.class_means[class_a], spec.class_means[class_b]
    if spec.noise_sigma == 0:
        return 1.0 if mu_a == mu_b else 0.0
    return math.exp(-((mu_a - mu_b) ** 2) / (8.0 * spec.noise_sigma ** 2))
