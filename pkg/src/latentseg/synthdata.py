"""Synthetic latent fingerprints with exact ground-truth masks.

A fingermark is an oriented ridge sinusoid (smoothly warped orientation
field) clipped to a wobbly elliptical support. The support is the
ground-truth mask. Clutter strokes and blobs, low-frequency shading and
sensor noise go underneath / on top, and an optional dark marker ellipse
around a fingermark plays the role of an examiner's markup.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import LatentImage, load_grayscale, save_grayscale

MARKER_WIDTH = 3.0
MIN_FOREGROUND = 0.02
MAX_FOREGROUND = 0.9

# augmentation ranges
MAX_ROTATION_DEG = 30.0
MAX_SHIFT_FRAC = 0.15
SCALE_RANGE = (0.8, 1.25)
MIN_CROP_AREA = 0.75
AUGMENT_TRIES = 10

BACKGROUND, FINGERMARK, ATTENTION = 0, 1, 2


class SynthError(ValueError):
    pass


class DatasetError(OSError):
    pass


@dataclass(frozen=True)
class SynthParams:
    image_size: int = 256
    ridge_period: float = 9.0
    n_fingermarks: int = 1
    clutter_level: float = 0.5
    marker_probability: float = 0.5

    def validate(self) -> None:
        if self.image_size < 128:
            raise SynthError(f"image_size must be >= 128, got {self.image_size}")
        if self.ridge_period < 4:
            raise SynthError(f"ridge_period must be >= 4, got {self.ridge_period}")
        if not 1 <= self.n_fingermarks <= 3:
            raise SynthError(f"n_fingermarks must be in 1..3, got {self.n_fingermarks}")
        if not 0.0 <= self.clutter_level <= 1.0:
            raise SynthError(f"clutter_level must be in [0, 1], got {self.clutter_level}")
        if not 0.0 <= self.marker_probability <= 1.0:
            raise SynthError(f"marker_probability must be in [0, 1], got {self.marker_probability}")


@dataclass(eq=False)
class GroundTruthSample:
    image: LatentImage
    mask: np.ndarray
    attention_regions: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))
    seed: int = 0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.attention_regions = np.asarray(self.attention_regions, dtype=np.int64).reshape(-1, 4)
        if self.mask.shape != self.image.shape:
            raise SynthError(f"mask shape {self.mask.shape} != image shape {self.image.shape}")
        h, w = self.image.shape
        r = self.attention_regions
        if len(r) and (
            np.any(r[:, 0] < 0) or np.any(r[:, 1] < 0) or np.any(r[:, 2] > w) or np.any(r[:, 3] > h)
            or np.any(r[:, 2] <= r[:, 0]) or np.any(r[:, 3] <= r[:, 1])
        ):
            raise SynthError(f"attention regions out of bounds for {w}x{h} image: {r.tolist()}")

    @property
    def id(self) -> str:
        return self.image.id

    @property
    def foreground_fraction(self) -> float:
        return float(self.mask.mean())


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return xx + 0.5, yy + 0.5


def _smooth_noise(rng, size, sigma, amplitude):
    n = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    std = n.std()
    return n * (amplitude / std) if std > 0 else n


def marker_ring(box, shape, width: float = MARKER_WIDTH) -> np.ndarray:
    """Pixels of the elliptical marker stroke inscribed in ``box``."""
    h, w = shape
    x0, y0, x1, y1 = (float(v) for v in box)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    rx = max(0.5 * (x1 - x0) - width / 2, 1.0)
    ry = max(0.5 * (y1 - y0) - width / 2, 1.0)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = (xx + 0.5 - cx) / rx, (yy + 0.5 - cy) / ry
    rho = np.hypot(u, v)
    # first-order distance to the ellipse: (rho - 1) / |grad rho|
    grad = np.hypot(u / rx, v / ry) / np.maximum(rho, 1e-12)
    dist = np.abs(rho - 1.0) / np.maximum(grad, 1e-12)
    inside = (xx >= math.floor(x0)) & (xx < math.ceil(x1)) & (yy >= math.floor(y0)) & (yy < math.ceil(y1))
    return (dist <= width / 2) & inside


def _place_supports(rng, params):
    size = params.image_size
    scale = 1.0 / math.sqrt(params.n_fingermarks)
    placed = []
    for _ in range(params.n_fingermarks):
        for attempt in range(200):
            shrink = 0.85 ** (attempt // 40)
            a = rng.uniform(0.14, 0.26) * size * scale * shrink
            b = a * rng.uniform(0.6, 0.95)
            theta = rng.uniform(0.0, math.pi)
            wobble = rng.uniform(-0.05, 0.05, size=3)
            phases = rng.uniform(0.0, 2 * math.pi, size=3)
            reach = 1.0 + np.abs(wobble).sum()
            hx = reach * math.sqrt((a * math.cos(theta)) ** 2 + (b * math.sin(theta)) ** 2)
            hy = reach * math.sqrt((a * math.sin(theta)) ** 2 + (b * math.cos(theta)) ** 2)
            if 2 * hx + 8 >= size or 2 * hy + 8 >= size:
                continue
            cx = rng.uniform(hx + 4, size - hx - 4)
            cy = rng.uniform(hy + 4, size - hy - 4)
            bbox = (cx - hx, cy - hy, cx + hx, cy + hy)
            gap = 6.0
            if any(
                bbox[0] < o["bbox"][2] + gap and o["bbox"][0] < bbox[2] + gap
                and bbox[1] < o["bbox"][3] + gap and o["bbox"][1] < bbox[3] + gap
                for o in placed
            ):
                continue
            placed.append(dict(cx=cx, cy=cy, a=a, b=b, theta=theta, wobble=wobble,
                               phases=phases, bbox=bbox))
            break
        else:
            raise SynthError(f"could not place {params.n_fingermarks} fingermarks in {size}px image")
    return placed


def _support(xx, yy, s):
    c, si = math.cos(s["theta"]), math.sin(s["theta"])
    u = ((xx - s["cx"]) * c + (yy - s["cy"]) * si) / s["a"]
    v = (-(xx - s["cx"]) * si + (yy - s["cy"]) * c) / s["b"]
    rho = np.hypot(u, v)
    ang = np.arctan2(v, u)
    edge = 1.0 + sum(
        s["wobble"][k] * np.cos((k + 2) * ang + s["phases"][k]) for k in range(3)
    )
    return rho <= edge


def _ridges(rng, xx, yy, s, period, size):
    # radial phase around an off-centre core gives a loop/whorl-like
    # orientation field; a linear term and a smooth warp bend it further
    core_x = s["cx"] + rng.normal(0.0, 0.3) * s["a"]
    core_y = s["cy"] + rng.normal(0.0, 0.3) * s["b"]
    squash = rng.uniform(0.5, 1.5)
    psi = rng.uniform(0.0, 2 * math.pi)
    slope = rng.uniform(0.0, 0.6)
    c, si = math.cos(s["theta"]), math.sin(s["theta"])
    u = (xx - core_x) * c + (yy - core_y) * si
    v = -(xx - core_x) * si + (yy - core_y) * c
    phase = np.hypot(u, squash * v) + slope * (xx * math.cos(psi) + yy * math.sin(psi))
    phase = phase + _smooth_noise(rng, size, size / 10, period * 1.2)
    wave = 0.5 * (1.0 + np.cos(2 * math.pi * phase / period))
    duty = rng.uniform(0.4, 0.6)
    return ndimage.gaussian_filter((wave > duty).astype(np.float64), 0.8)


def _draw_segment(xx, yy, p0, p1, width):
    d = p1 - p0
    length2 = float(d @ d) or 1.0
    t = np.clip(((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / length2, 0.0, 1.0)
    dist = np.hypot(xx - (p0[0] + t * d[0]), yy - (p0[1] + t * d[1]))
    return np.clip(width / 2 + 0.5 - dist, 0.0, 1.0)


def synth_latent(params: SynthParams = SynthParams(), seed: int = 0, image_id: str | None = None) -> GroundTruthSample:
    """Generate one sample; a pure function of ``(params, seed)``."""
    params.validate()
    rng = np.random.default_rng(seed)
    size = params.image_size
    xx, yy = _grid(size)
    clutter = params.clutter_level

    canvas = rng.uniform(130.0, 200.0) + _smooth_noise(rng, size, size / 8, rng.uniform(4.0, 15.0))

    supports = _place_supports(rng, params)
    mask = np.zeros((size, size), dtype=bool)
    for s in supports:
        region = _support(xx, yy, s)
        ridges = _ridges(rng, xx, yy, s, params.ridge_period, size)
        gain = np.clip(1.0 + _smooth_noise(rng, size, size / 12, 0.2), 0.4, 1.3)
        contrast = rng.uniform(30.0, 75.0)
        canvas -= contrast * gain * ridges * region
        mask |= region

    for _ in range(rng.poisson(8 * clutter)):
        p0 = rng.uniform(0, size, 2)
        p1 = p0 + rng.normal(0, size / 3, 2)
        ink = rng.uniform(20.0, 60.0) * rng.choice([-1.0, 1.0])
        canvas -= ink * _draw_segment(xx, yy, p0, p1, rng.uniform(1.0, 3.5))
    for _ in range(rng.poisson(5 * clutter)):
        c = rng.uniform(0, size, 2)
        sig = rng.uniform(3.0, 15.0)
        amp = rng.uniform(15.0, 50.0) * rng.choice([-1.0, 1.0])
        canvas -= amp * np.exp(-((xx - c[0]) ** 2 + (yy - c[1]) ** 2) / (2 * sig**2))

    regions = []
    for s in supports:
        if rng.random() >= params.marker_probability:
            continue
        bx0, by0, bx1, by1 = s["bbox"]
        hx = 0.5 * (bx1 - bx0) * math.sqrt(2) + 4
        hy = 0.5 * (by1 - by0) * math.sqrt(2) + 4
        cx, cy = 0.5 * (bx0 + bx1), 0.5 * (by0 + by1)
        box = (
            max(0, int(math.floor(cx - hx))),
            max(0, int(math.floor(cy - hy))),
            min(size, int(math.ceil(cx + hx))),
            min(size, int(math.ceil(cy + hy))),
        )
        ring = marker_ring(box, (size, size))
        ink = rng.uniform(10.0, 45.0)
        canvas = np.where(ring, 0.1 * canvas + 0.9 * ink, canvas)
        regions.append(box)

    canvas += rng.normal(0.0, 3.0 + 9.0 * clutter, canvas.shape)
    pixels = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)
    sample = GroundTruthSample(
        image=LatentImage(pixels, id=image_id if image_id is not None else f"synth_{seed}"),
        mask=mask,
        attention_regions=np.array(regions, dtype=np.int64).reshape(-1, 4),
        seed=int(seed),
    )
    frac = sample.foreground_fraction
    if not MIN_FOREGROUND < frac < MAX_FOREGROUND:
        raise SynthError(f"seed {seed}: foreground fraction {frac:.3f} outside ({MIN_FOREGROUND}, {MAX_FOREGROUND})")
    return sample


def label_map(sample: GroundTruthSample) -> np.ndarray:
    """Per-pixel class labels: 0 background, 1 fingermark, 2 marker stroke."""
    labels = np.zeros(sample.mask.shape, dtype=np.int64)
    for box in sample.attention_regions:
        labels[marker_ring(box, sample.mask.shape)] = ATTENTION
    labels[sample.mask] = FINGERMARK
    return labels


def instance_boxes(mask: np.ndarray, min_area: int = 30) -> np.ndarray:
    """Tight (x0, y0, x1, y1) boxes of the connected foreground components."""
    lab, n = ndimage.label(mask)
    boxes = []
    for k, sl in enumerate(ndimage.find_objects(lab), start=1):
        if sl is None or (lab[sl] == k).sum() < min_area:
            continue
        boxes.append((sl[1].start, sl[0].start, sl[1].stop, sl[0].stop))
    return np.array(boxes, dtype=np.float64).reshape(-1, 4)


# ---------------------------------------------------------------- augmentation

def _translate(tx, ty):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def _rotate_scale(deg, scale):
    t = math.radians(deg)
    c, s = math.cos(t) * scale, math.sin(t) * scale
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def affine_matrix(size, rotation_deg=0.0, scale=1.0, shift=(0.0, 0.0), crop_frac=1.0, crop_center=None):
    """Forward map (x, y, 1) -> output coordinates, about the image centre.

    Rotation/scale/shift act first; then a crop window of ``crop_frac`` of the
    area centred at ``crop_center`` is zoomed back to full size.
    """
    h, w = (size, size) if np.isscalar(size) else size
    cx, cy = w / 2.0, h / 2.0
    m = _translate(cx + shift[0], cy + shift[1]) @ _rotate_scale(rotation_deg, scale) @ _translate(-cx, -cy)
    if crop_frac < 1.0:
        ccx, ccy = crop_center if crop_center is not None else (cx, cy)
        zoom = 1.0 / math.sqrt(crop_frac)
        m = _translate(cx, cy) @ _rotate_scale(0.0, zoom) @ _translate(-ccx, -ccy) @ m
    return m


def random_affine(rng, size) -> np.ndarray:
    rot = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)
    scale = math.exp(rng.uniform(math.log(SCALE_RANGE[0]), math.log(SCALE_RANGE[1])))
    shift = rng.uniform(-MAX_SHIFT_FRAC, MAX_SHIFT_FRAC, 2) * size
    frac = rng.uniform(MIN_CROP_AREA, 1.0)
    half = 0.5 * size * math.sqrt(frac)
    centre = rng.uniform(half, size - half, 2)
    return affine_matrix(size, rot, scale, tuple(shift), frac, tuple(centre))


def _warp(array, matrix, order, cval):
    inv = np.linalg.inv(matrix)
    # (row, col) index space with pixel centres at +0.5
    lin = np.array([[inv[1, 1], inv[1, 0]], [inv[0, 1], inv[0, 0]]])
    c = np.array([0.5, 0.5])
    t = np.array([inv[1, 2], inv[0, 2]])
    offset = lin @ c + t - c
    return ndimage.affine_transform(
        array, lin, offset=offset, order=order, mode="constant", cval=cval, prefilter=False
    )


def warp_mask(mask, matrix):
    return _warp(np.asarray(mask, dtype=np.uint8), matrix, 0, 0).astype(bool)


def warp_labels(labels, matrix):
    return _warp(np.asarray(labels, dtype=np.int64), matrix, 0, 0)


def warp_boxes(boxes, matrix, shape):
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    h, w = shape
    out = []
    for x0, y0, x1, y1 in boxes:
        pts = np.array([[x0, y0, 1], [x1, y0, 1], [x0, y1, 1], [x1, y1, 1]], dtype=np.float64).T
        q = matrix @ pts
        nx0, ny0 = max(0.0, q[0].min()), max(0.0, q[1].min())
        nx1, ny1 = min(float(w), q[0].max()), min(float(h), q[1].max())
        if nx1 - nx0 >= 1 and ny1 - ny0 >= 1:
            out.append((nx0, ny0, nx1, ny1))
    return np.array(out, dtype=np.float64).reshape(-1, 4)


def warp_sample(sample: GroundTruthSample, matrix) -> GroundTruthSample:
    if np.allclose(matrix, np.eye(3), rtol=0, atol=1e-12):
        return GroundTruthSample(sample.image, sample.mask.copy(), sample.attention_regions.copy(), sample.seed)
    px = sample.image.pixels.astype(np.float64)
    warped = _warp(px, matrix, 1, float(np.median(px)))
    pixels = np.clip(np.floor(warped + 0.5), 0, 255).astype(np.uint8)
    boxes = warp_boxes(sample.attention_regions, matrix, sample.mask.shape)
    h, w = sample.mask.shape
    int_boxes = np.column_stack([
        np.floor(boxes[:, 0]), np.floor(boxes[:, 1]),
        np.minimum(np.ceil(boxes[:, 2]), w), np.minimum(np.ceil(boxes[:, 3]), h),
    ]).astype(np.int64) if len(boxes) else np.zeros((0, 4), dtype=np.int64)
    return GroundTruthSample(
        image=sample.image.with_pixels(pixels),
        mask=warp_mask(sample.mask, matrix),
        attention_regions=int_boxes,
        seed=sample.seed,
    )


def draw_augmentation(sample: GroundTruthSample, seed: int) -> np.ndarray:
    """Draw a transform that keeps at least 2% foreground (up to 10 tries)."""
    rng = np.random.default_rng(seed)
    size = sample.mask.shape[0]
    for _ in range(AUGMENT_TRIES):
        m = random_affine(rng, size)
        if warp_mask(sample.mask, m).mean() >= MIN_FOREGROUND:
            return m
    raise SynthError(f"no augmentation of sample {sample.id!r} kept >= {MIN_FOREGROUND:.0%} foreground "
                     f"in {AUGMENT_TRIES} tries")


def augment(sample: GroundTruthSample, seed: int) -> GroundTruthSample:
    """Random rotation/translation/scaling/cropping, applied identically to
    image, mask and attention regions; output size equals input size."""
    return warp_sample(sample, draw_augmentation(sample, seed))


# ---------------------------------------------------------------- dataset I/O

def sample_seeds(base_seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(base_seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(count)]


def generate_dataset(count: int, seed: int, params: SynthParams = SynthParams()) -> list[GroundTruthSample]:
    return [
        synth_latent(params, s, image_id=f"{i:05d}")
        for i, s in enumerate(sample_seeds(seed, count))
    ]


def write_dataset(samples, directory, params: SynthParams | None = None, base_seed: int | None = None) -> dict:
    root = Path(directory)
    for sub in ("images", "masks", "attention"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        if not s.id:
            raise DatasetError("every sample needs a non-empty image id")
        save_grayscale(s.image, root / "images" / f"{s.id}.png")
        save_grayscale(s.mask.astype(np.uint8) * 255, root / "masks" / f"{s.id}.png")
        with open(root / "attention" / f"{s.id}.json", "w") as fh:
            json.dump(s.attention_regions.astype(int).tolist(), fh)
        ids.append(s.id)
    manifest = {
        "ids": ids,
        "seeds": [int(s.seed) for s in samples],
        "params": asdict(params) if params is not None else None,
        "base_seed": base_seed,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def load_dataset(directory) -> list[GroundTruthSample]:
    root = Path(directory)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError(f"dataset {root} has no manifest.json")
    for sub in ("images", "masks", "attention"):
        if not (root / sub).is_dir():
            raise DatasetError(f"dataset {root} is missing the {sub}/ folder")
    try:
        manifest = json.loads(manifest_path.read_text())
        ids = manifest["ids"]
        seeds = manifest.get("seeds") or [0] * len(ids)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"malformed manifest {manifest_path}: {exc}") from exc
    samples = []
    for image_id, seed in zip(ids, seeds):
        try:
            img = load_grayscale(root / "images" / f"{image_id}.png", image_id=image_id)
            mask_px = load_grayscale(root / "masks" / f"{image_id}.png").pixels
            boxes = json.loads((root / "attention" / f"{image_id}.json").read_text())
        except FileNotFoundError as exc:
            raise DatasetError(f"dataset {root}: missing file for id {image_id!r}: {exc.filename}") from exc
        if not np.all((mask_px == 0) | (mask_px == 255)):
            raise DatasetError(f"mask for {image_id!r} has values other than 0 and 255")
        samples.append(GroundTruthSample(img, mask_px == 255, np.array(boxes, dtype=np.int64).reshape(-1, 4), int(seed)))
    return samples
