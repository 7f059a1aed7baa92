"""On-disk dataset format, synthetic eye-pair generation, sample assembly,
and the person-exclusive leave-one-out splitter.

A dataset is a UTF-8 CSV manifest plus binary PGM (P5) eye crops, all
60x36 with maxval 255.  Manifest columns::

    person_id,frame_id,left_path,right_path,
    l_gaze_yaw,l_gaze_pitch,r_gaze_yaw,r_gaze_pitch,
    l_head_yaw,l_head_pitch,r_head_yaw,r_head_pitch

Angles are radians in decimal notation; image paths are relative to the
manifest's directory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import imaging
from .geometry import average_pair, flip_gaze
from .imaging import NET_HEIGHT, NET_WIDTH, mirror_horizontal, normalize_for_net

MANIFEST_COLUMNS = [
    "person_id", "frame_id", "left_path", "right_path",
    "l_gaze_yaw", "l_gaze_pitch", "r_gaze_yaw", "r_gaze_pitch",
    "l_head_yaw", "l_head_pitch", "r_head_yaw", "r_head_pitch",
]

SINGLE_MODES = ("left-only", "right-only", "both-with-flip")


class DatasetError(ValueError):
    """Malformed manifest, image, or split request."""


# ---------------------------------------------------------------------------
# PGM (binary, P5) reading and writing
# ---------------------------------------------------------------------------


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM with maxval 255 into a (h, w) uint8 array."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise DatasetError(f"{path}: not a binary (P5) PGM")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PGM header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise DatasetError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise DatasetError(f"{path}: PGM maxval must be 255, got {maxval}")
    payload = raw[pos : pos + width * height]
    if len(payload) != width * height:
        raise DatasetError(
            f"{path}: PGM payload has {len(payload)} bytes, expected {width * height}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, img: np.ndarray) -> None:
    if img.dtype != np.uint8 or img.ndim != 2:
        raise DatasetError("write_pgm expects a 2-D uint8 image")
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + img.tobytes())


# ---------------------------------------------------------------------------
# Frames and manifests
# ---------------------------------------------------------------------------


@dataclass
class EyeFrame:
    """One capture instant: a left/right eye pair with per-eye labels."""

    person_id: str
    frame_id: str
    left_image: np.ndarray
    right_image: np.ndarray
    left_gaze: tuple[float, float]
    right_gaze: tuple[float, float]
    left_head: tuple[float, float]
    right_head: tuple[float, float]

    def with_images(self, left: np.ndarray, right: np.ndarray) -> "EyeFrame":
        return replace(self, left_image=left, right_image=right)


def _check_dims(img: np.ndarray, path, row: int):
    if img.shape != (NET_HEIGHT, NET_WIDTH):
        raise DatasetError(
            f"row {row}: image {path} is {img.shape[1]}x{img.shape[0]}, "
            f"expected {NET_WIDTH}x{NET_HEIGHT}")


def load_manifest(paths) -> list[EyeFrame]:
    """Load and concatenate one or more manifests.

    Duplicate (person_id, frame_id) keys across files are rejected, every
    referenced image is read and validated to be 60x36.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    frames: list[EyeFrame] = []
    seen: set[tuple[str, str]] = set()
    for manifest_path in paths:
        manifest_path = Path(manifest_path)
        base = manifest_path.parent
        with open(manifest_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MANIFEST_COLUMNS:
                raise DatasetError(f"{manifest_path}: unexpected manifest header {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(MANIFEST_COLUMNS):
                    raise DatasetError(
                        f"{manifest_path} row {lineno}: {len(row)} fields, "
                        f"expected {len(MANIFEST_COLUMNS)}")
                person, frame = row[0], row[1]
                if not person:
                    raise DatasetError(f"{manifest_path} row {lineno}: empty person_id")
                key = (person, frame)
                if key in seen:
                    raise DatasetError(
                        f"{manifest_path} row {lineno}: duplicate frame {key}")
                seen.add(key)
                try:
                    angles = [float(v) for v in row[4:12]]
                except ValueError as exc:
                    raise DatasetError(
                        f"{manifest_path} row {lineno}: bad angle value ({exc})") from None
                left_path, right_path = base / row[2], base / row[3]
                try:
                    left = read_pgm(left_path)
                    right = read_pgm(right_path)
                except FileNotFoundError as exc:
                    raise DatasetError(
                        f"{manifest_path} row {lineno}: missing image {exc.filename}") from None
                _check_dims(left, left_path, lineno)
                _check_dims(right, right_path, lineno)
                frames.append(EyeFrame(
                    person_id=person, frame_id=frame,
                    left_image=left, right_image=right,
                    left_gaze=(angles[0], angles[1]), right_gaze=(angles[2], angles[3]),
                    left_head=(angles[4], angles[5]), right_head=(angles[6], angles[7]),
                ))
    return frames


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Synthetic eye-pair generation
# ---------------------------------------------------------------------------
#
# Desk-scale stand-in for a real gaze corpus.  Each synthetic person gets a
# fixed appearance (eye aperture ellipse, iris size, intensities); each frame
# draws gaze angles and renders the iris displaced proportionally to
# tan(yaw)/tan(pitch), so the image-to-angle mapping is shared across persons
# while appearance is not.  That makes person-exclusive evaluation meaningful
# while staying learnable.

GAZE_YAW_RANGE = (math.radians(-25.0), math.radians(25.0))
GAZE_PITCH_RANGE = (math.radians(-20.0), math.radians(10.0))
HEAD_OFFSET = math.radians(10.0)
VERGENCE = math.radians(1.0)
PIXEL_NOISE_SIGMA = 4.0
IRIS_SHIFT_GAIN = 26.0      # px of horizontal iris travel per unit tan(yaw)
IRIS_SHIFT_GAIN_V = 20.0    # vertical gain; travel is centered on the pitch range
_TAN_PITCH_MID = math.tan(math.radians(-5.0))
GLINT_DX, GLINT_DY = 3.0, -2.0  # camera-fixed specular highlight offset

_YY, _XX = np.mgrid[0:NET_HEIGHT, 0:NET_WIDTH]


@dataclass
class _Person:
    aperture_w: float
    aperture_h: float
    iris_radius: float
    skin: float
    sclera: float
    iris: float
    center_dx: float
    center_dy: float
    striation_count: int
    striation_phase: float
    striation_depth: float


def _draw_person(rng: np.random.Generator) -> _Person:
    skin = rng.uniform(110.0, 170.0)
    return _Person(
        aperture_w=rng.uniform(20.0, 26.0),
        aperture_h=rng.uniform(9.0, 13.0),
        iris_radius=rng.uniform(5.0, 9.0),
        skin=skin,
        sclera=rng.uniform(skin + 60.0, 250.0),
        iris=rng.uniform(10.0, 45.0),
        center_dx=rng.uniform(-0.75, 0.75),
        center_dy=rng.uniform(-0.5, 0.5),
        striation_count=int(rng.integers(9, 14)),
        striation_phase=rng.uniform(0.0, 2.0 * math.pi),
        striation_depth=rng.uniform(20.0, 35.0),
    )


def _render_eye(person: _Person, gaze, rng: np.random.Generator) -> np.ndarray:
    """Anti-aliased eye rendering.

    The eyeball (iris, pupil, glint) is anchored to the person's eye center,
    while the lid aperture squints and shifts per frame and a smooth
    illumination ramp moves the apparent mass of every soft edge.  The only
    frame-stable precise cue is the iris position against the camera-fixed
    glint, which lives at a scale that resolution loss destroys; coarser
    anchors survive downsampling but are noisy per frame.
    """
    yaw, pitch = gaze
    cx = NET_WIDTH / 2.0 + person.center_dx
    cy = NET_HEIGHT / 2.0 + person.center_dy
    ix = cx + IRIS_SHIFT_GAIN * math.tan(yaw)
    iy = cy - IRIS_SHIFT_GAIN_V * (math.tan(pitch) - _TAN_PITCH_MID)
    # per-frame lid state: the aperture does not track the eyeball
    ap_cx = cx + rng.uniform(-1.0, 1.0)
    ap_cy = cy + rng.uniform(-1.5, 1.5)
    ap_h = person.aperture_h * rng.uniform(0.9, 1.1)

    canvas = np.full((NET_HEIGHT, NET_WIDTH), person.skin)
    d_ell = np.sqrt(((_XX - ap_cx) / person.aperture_w) ** 2
                    + ((_YY - ap_cy) / ap_h) ** 2)
    inner_px = (1.0 - d_ell) * person.aperture_w  # ~distance inside the rim
    aperture = np.clip(inner_px / 1.2, 0.0, 1.0)
    canvas += aperture * (person.sclera - canvas)

    # per-frame upper lid shadow hugging the rim
    lid_dark = rng.uniform(20.0, 55.0)
    lid_width = rng.uniform(1.5, 3.5)
    lid = np.clip(1.0 - inner_px / lid_width, 0.0, 1.0) * aperture * (_YY < ap_cy)
    canvas -= lid * lid_dark

    d_iris = np.sqrt((_XX - ix) ** 2 + (_YY - iy) ** 2)
    iris = np.clip((person.iris_radius - d_iris) / 1.2, 0.0, 1.0) * aperture
    canvas += iris * (person.iris - canvas)
    # radial striations ride rigidly on the iris: fine-scale, high-contrast
    # texture that pins the iris position at native resolution and aliases
    # away under resolution loss
    theta = np.arctan2(_YY - iy, _XX - ix)
    spokes = 0.5 + 0.5 * np.cos(person.striation_count * theta + person.striation_phase)
    ring = iris * (d_iris > person.iris_radius / 2.5) * (d_iris > 1.0)
    canvas += ring * spokes * person.striation_depth
    pupil = np.clip((person.iris_radius / 2.5 - d_iris) / 1.2, 0.0, 1.0) * aperture
    canvas += pupil * (person.iris * 0.4 - canvas)

    # lash strokes: thin and dark near the upper rim
    n_lash = rng.integers(3, 6)
    for _ in range(n_lash):
        lx = ap_cx + rng.uniform(-0.75, 0.75) * person.aperture_w
        ly = ap_cy - ap_h * rng.uniform(0.55, 0.95)
        slope = rng.uniform(-0.6, 0.6)
        length = rng.uniform(2.0, 4.0)
        stroke = (np.abs((_XX - lx) - slope * (_YY - ly)) < 0.7) \
            & (_YY >= ly - length) & (_YY <= ly)
        canvas[stroke] -= rng.uniform(40.0, 80.0)

    # specular glint from the shared illumination rig: same offset for every
    # person, so iris-to-glint geometry is a person-invariant gaze cue
    d_glint = np.sqrt((_XX - (cx + GLINT_DX)) ** 2 + (_YY - (cy + GLINT_DY)) ** 2)
    glint = np.clip((1.3 - d_glint) / 0.9, 0.0, 1.0) * aperture
    canvas += glint * (245.0 - canvas)

    # smooth per-frame illumination gradient
    gx = rng.uniform(-12.0, 12.0)
    gy = rng.uniform(-12.0, 12.0)
    canvas += gx * (_XX - NET_WIDTH / 2.0) / NET_WIDTH \
        + gy * (_YY - NET_HEIGHT / 2.0) / NET_HEIGHT

    canvas += rng.normal(0.0, PIXEL_NOISE_SIGMA, canvas.shape)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def synth_generate(out_dir, persons: int, frames_per_person: int, seed: int) -> Path:
    """Render a synthetic dataset; returns the manifest path.

    Deterministic per seed: the same call produces byte-identical files.
    """
    if persons < 1 or frames_per_person < 1:
        raise DatasetError("persons and frames_per_person must be >= 1")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for p in range(persons):
        person_id = f"p{p:02d}"
        person = _draw_person(rng)
        pdir = image_dir / person_id
        pdir.mkdir(exist_ok=True)
        for f in range(frames_per_person):
            frame_id = f"f{f:05d}"
            left_gaze = (rng.uniform(*GAZE_YAW_RANGE), rng.uniform(*GAZE_PITCH_RANGE))
            right_gaze = (
                float(np.clip(left_gaze[0] + rng.uniform(-VERGENCE, VERGENCE),
                              *GAZE_YAW_RANGE)),
                float(np.clip(left_gaze[1] + rng.uniform(-VERGENCE, VERGENCE),
                              *GAZE_PITCH_RANGE)),
            )
            head_off = (rng.uniform(-HEAD_OFFSET, HEAD_OFFSET),
                        rng.uniform(-HEAD_OFFSET, HEAD_OFFSET))
            left_head = (left_gaze[0] + head_off[0], left_gaze[1] + head_off[1])
            right_head = (right_gaze[0] + head_off[0], right_gaze[1] + head_off[1])
            left_img = _render_eye(person, left_gaze, rng)
            right_img = _render_eye(person, right_gaze, rng)
            lname = f"images/{person_id}/{frame_id}_L.pgm"
            rname = f"images/{person_id}/{frame_id}_R.pgm"
            write_pgm(out_dir / lname, left_img)
            write_pgm(out_dir / rname, right_img)
            rows.append([person_id, frame_id, lname, rname]
                        + [repr(v) for v in (*left_gaze, *right_gaze,
                                             *left_head, *right_head)])
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest


# ---------------------------------------------------------------------------
# Sample assembly
# ---------------------------------------------------------------------------


@dataclass
class DualSample:
    """Two-channel input (channel 0 = left eye, 1 = right eye) with labels
    averaged between the eyes."""

    input: np.ndarray  # (2, 36, 60) float32
    pose: np.ndarray   # (yaw, pitch) radians
    target: np.ndarray


@dataclass
class SingleSample:
    input: np.ndarray  # (1, 36, 60) float32
    pose: np.ndarray
    target: np.ndarray
    provenance: str    # left | right | right-flipped


def assemble_dual(frames) -> list[DualSample]:
    out = []
    for f in frames:
        x = np.stack([normalize_for_net(f.left_image), normalize_for_net(f.right_image)])
        out.append(DualSample(
            input=x,
            pose=average_pair(f.left_head, f.right_head),
            target=average_pair(f.left_gaze, f.right_gaze),
        ))
    return out


def assemble_single(frames, mode: str) -> list[SingleSample]:
    """One-eye samples; `both-with-flip` mirrors the right eye and negates
    the yaw of its gaze and head labels, emitting two samples per frame."""
    if mode not in SINGLE_MODES:
        raise DatasetError(f"unknown single-eye mode '{mode}'")
    out = []
    for f in frames:
        if mode in ("left-only", "both-with-flip"):
            out.append(SingleSample(
                input=normalize_for_net(f.left_image)[np.newaxis],
                pose=np.asarray(f.left_head, dtype=np.float64),
                target=np.asarray(f.left_gaze, dtype=np.float64),
                provenance="left",
            ))
        if mode == "right-only":
            out.append(SingleSample(
                input=normalize_for_net(f.right_image)[np.newaxis],
                pose=np.asarray(f.right_head, dtype=np.float64),
                target=np.asarray(f.right_gaze, dtype=np.float64),
                provenance="right",
            ))
        if mode == "both-with-flip":
            out.append(SingleSample(
                input=normalize_for_net(mirror_horizontal(f.right_image))[np.newaxis],
                pose=flip_gaze(f.right_head),
                target=flip_gaze(f.right_gaze),
                provenance="right-flipped",
            ))
    return out


def stack_samples(samples):
    """Samples -> (inputs (n,c,36,60) f32, poses (n,2) f32, targets (n,2) f32)."""
    x = np.stack([s.input for s in samples]).astype(np.float32)
    pose = np.stack([np.asarray(s.pose, dtype=np.float32) for s in samples])
    target = np.stack([np.asarray(s.target, dtype=np.float32) for s in samples])
    return x, pose, target


def augment_frames(frames, cfg: imaging.AugmentConfig, rng: np.random.Generator):
    """Per-epoch augmentation: degrade each eye image independently."""
    if cfg.degrade_probability <= 0.0:
        return frames
    return [
        f.with_images(imaging.augment_sample(f.left_image, cfg, rng),
                      imaging.augment_sample(f.right_image, cfg, rng))
        for f in frames
    ]


def degrade_frames(frames, target: tuple[int, int], filt: str):
    """Evaluation-time degradation of every eye image."""
    return [
        f.with_images(imaging.degrade(f.left_image, target, filt),
                      imaging.degrade(f.right_image, target, filt))
        for f in frames
    ]


# ---------------------------------------------------------------------------
# Person-exclusive leave-one-out split
# ---------------------------------------------------------------------------


@dataclass
class Fold:
    held_out: str
    train_persons: tuple


@dataclass
class FoldPlan:
    folds: list

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)


def loocv_split(frames) -> FoldPlan:
    """One fold per person, ordered lexicographically by person id."""
    persons = sorted({f.person_id for f in frames})
    if len(persons) < 2:
        raise DatasetError(
            f"leave-one-out needs at least 2 persons, found {len(persons)}")
    folds = [Fold(held_out=p, train_persons=tuple(q for q in persons if q != p))
             for p in persons]
    return FoldPlan(folds=folds)


def split_frames(frames, held_out: str):
    """(train frames, test frames) for one held-out person."""
    train = [f for f in frames if f.person_id != held_out]
    test = [f for f in frames if f.person_id == held_out]
    if not test:
        raise DatasetError(f"person '{held_out}' not present in dataset")
    # person exclusivity is asserted here, not only in the splitter
    assert not any(f.person_id == held_out for f in train)
    return train, test
