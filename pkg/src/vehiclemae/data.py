"""Dataset manifests, synthetic symmetric "vehicles", and in-memory datasets.

A manifest is newline-delimited JSON, one record per image. Paths are stored
relative to the manifest's directory.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .exceptions import MissingImage, ParseError, ValidationError
from .geometry import Annotation, AnnotationKind, unit_direction
from .masking import derive_seed
from .teachers import sobel_contour
from .textgen import generate_prompt, synth_attribute_corpus

logger = logging.getLogger(__name__)

KIND_MIXTURE = (0.1, 0.2, 0.7)  # NONE, BOX_ONLY, BOX_AND_ANGLE
_KINDS = (AnnotationKind.NONE, AnnotationKind.BOX_ONLY, AnnotationKind.BOX_AND_ANGLE)
_FIELDS = ("image_path", "contour_path", "box", "angle", "prompt", "has_pair")


@dataclass
class ManifestRecord:
    image_path: str
    contour_path: Optional[str] = None
    box: Optional[Tuple[float, float, float, float]] = None
    angle: Optional[float] = None
    prompt: Optional[str] = None
    has_pair: bool = False

    def __post_init__(self):
        if self.box is not None:
            self.box = tuple(float(v) for v in self.box)
        if self.angle is not None:
            self.angle = float(self.angle)
        # raises on an angle without a box, degenerate boxes, bad angles
        Annotation(self.box, self.angle)
        if self.has_pair != (self.prompt is not None):
            raise ValidationError("prompt must be present exactly when has_pair is true")

    @property
    def annotation(self) -> Annotation:
        return Annotation(self.box, self.angle)

    def to_json(self) -> str:
        d = asdict(self)
        if d["box"] is not None:
            d["box"] = list(d["box"])
        return json.dumps(d, sort_keys=True, ensure_ascii=False)


def parse_record(line: str, lineno: Optional[int] = None) -> ManifestRecord:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
    if not isinstance(raw, dict):
        raise ParseError("record must be a JSON object", line=lineno)
    unknown = set(raw) - set(_FIELDS)
    if unknown:
        raise ParseError(f"unknown fields {sorted(unknown)}", line=lineno)
    if "image_path" not in raw:
        raise ParseError("missing image_path", line=lineno)
    raw.setdefault("has_pair", raw.get("prompt") is not None)
    try:
        return ManifestRecord(**raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), line=lineno) from exc


def load_manifest(path, check_files: bool = True) -> List[ManifestRecord]:
    """Parse a manifest; malformed lines are fatal, missing images are skipped."""
    path = Path(path)
    base = path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = parse_record(line, lineno)
            if check_files and not (base / rec.image_path).is_file():
                logger.warning("line %d: image %s missing, record skipped", lineno, rec.image_path)
                continue
            records.append(rec)
    return records


def write_manifest(path, records: Sequence[ManifestRecord]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    os.replace(tmp, path)


def read_image(path) -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingImage(f"image not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def read_contour(path) -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingImage(f"contour map not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float32) / 255.0


def write_image(path, array: np.ndarray) -> None:
    data = np.clip(np.rint(np.asarray(array) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def quantize(array: np.ndarray) -> np.ndarray:
    """Round to 8-bit levels so in-memory samples equal their PNG round trip."""
    return (np.clip(np.rint(np.asarray(array) * 255.0), 0, 255) / 255.0).astype(np.float32)


# -- synthetic vehicles -----------------------------------------------------


@dataclass
class SynthSample:
    image: np.ndarray  # [S, S, 3] float32 on 8-bit levels
    annotation: Annotation
    contour: np.ndarray  # [S, S] float32 on 8-bit levels
    prompt: Optional[str]
    true_box: Tuple[float, float, float, float]
    true_angle: float
    kind: AnnotationKind


def _render_vehicle(rng, size: int, angle: float):
    """Draw a shape symmetric about the axis through (cx, cy) with direction ``angle``.

    Colours depend only on the along-axis coordinate and the absolute
    across-axis coordinate, so the drawing is mirror-symmetric by construction.
    The center is integral, which makes the 90 degree case pixel-exact.
    """
    smooth = ndimage.gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(size / 16, size / 16, 0))
    smooth = smooth / (np.abs(smooth).max() + 1e-12)
    image = rng.uniform(0.3, 0.7, 3) + 0.2 * smooth

    cx = int(rng.integers(size // 2 - size // 10, size // 2 + size // 10 + 1))
    cy = int(rng.integers(size // 2 - size // 10, size // 2 + size // 10 + 1))
    half_len = rng.uniform(0.20, 0.28) * size
    half_wid = rng.uniform(0.55, 0.75) * half_len
    dx_, dy_ = unit_direction(angle)

    ys, xs = np.mgrid[0:size, 0:size]
    px = xs + 0.5 - cx
    py = ys + 0.5 - cy
    u = px * dx_ + py * dy_
    a = np.abs(py * dx_ - px * dy_)

    body = (np.abs(u) <= half_len) & (a <= half_wid)
    cabin = ((u + 0.1 * half_len) / (0.5 * half_len)) ** 2 + (a / (0.7 * half_wid)) ** 2 <= 1.0
    wheel_r = 0.22 * half_len
    wheels = np.zeros_like(body)
    for u0 in (-0.6 * half_len, 0.6 * half_len):
        wheels |= (u - u0) ** 2 + (a - half_wid) ** 2 <= wheel_r**2
    lights = (u >= 0.85 * half_len) & (u <= half_len) & (a >= 0.45 * half_wid) & (a <= 0.8 * half_wid)

    body_color = rng.uniform(0.0, 1.0, 3)
    image[body] = body_color
    image[body & cabin] = 0.5 * body_color + 0.1
    image[wheels & body] = 0.05
    image[lights & body] = (1.0, 0.9, 0.3)
    # a stripe varying along the axis gives the decoder some texture to learn
    stripe = body & (a <= 0.15 * half_wid)
    image[stripe] = image[stripe] * (0.75 + 0.25 * np.cos(u[stripe] / half_len * np.pi))[:, None]

    yy, xx = np.nonzero(body)
    box = (float(xx.min()), float(yy.min()), float(xx.max() + 1), float(yy.max() + 1))
    return np.clip(image, 0.0, 1.0), box


def synth_sample(
    seed: int,
    image_size: int = 64,
    mixture: Sequence[float] = KIND_MIXTURE,
    angle: Optional[float] = None,
    kind: Optional[AnnotationKind] = None,
) -> SynthSample:
    """Deterministic symmetric vehicle-like sample with annotation, contour and prompt."""
    rng = np.random.default_rng([int(seed), 0x5A])
    drawn_kind = _KINDS[int(rng.choice(3, p=np.asarray(mixture, dtype=np.float64)))]
    drawn_angle = float(np.round(rng.uniform(0.0, 360.0), 3)) % 360.0
    kind = drawn_kind if kind is None else kind
    angle = drawn_angle if angle is None else float(angle)
    image, box = _render_vehicle(rng, image_size, angle)
    image = quantize(image)
    contour = quantize(sobel_contour(image))
    if kind is AnnotationKind.NONE:
        ann = Annotation()
    elif kind is AnnotationKind.BOX_ONLY:
        ann = Annotation(box)
    else:
        ann = Annotation(box, angle)
    prompt = generate_prompt(ann, (image_size, image_size))
    return SynthSample(image, ann, contour, prompt.text if prompt else None, box, angle, kind)


def write_synthetic_dataset(
    out_dir,
    n: int,
    seed: int = 0,
    image_size: int = 64,
    mixture: Sequence[float] = KIND_MIXTURE,
    corpus_size: int = 64,
) -> Path:
    """Render ``n`` samples to PNGs plus ``manifest.jsonl`` and ``corpus.txt``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "contours").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n):
        s = synth_sample(derive_seed(seed, i), image_size, mixture)
        img_rel = f"images/{i:05d}.png"
        con_rel = f"contours/{i:05d}.png"
        write_image(out / img_rel, s.image)
        write_image(out / con_rel, s.contour)
        records.append(
            ManifestRecord(
                image_path=img_rel,
                contour_path=con_rel,
                box=s.annotation.box,
                angle=s.annotation.angle,
                prompt=s.prompt,
                has_pair=s.prompt is not None,
            )
        )
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records)
    with open(out / "corpus.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(synth_attribute_corpus(corpus_size, seed)) + "\n")
    return manifest


def add_prompts(records: Sequence[ManifestRecord], base_dir) -> List[ManifestRecord]:
    """Fill ``prompt``/``has_pair`` from each record's annotation and image size."""
    out = []
    for rec in records:
        with Image.open(Path(base_dir) / rec.image_path) as im:
            width, height = im.size
        rec.annotation.check_within(height, width)
        prompt = generate_prompt(rec.annotation, (height, width))
        text = prompt.text if prompt else None
        out.append(
            ManifestRecord(rec.image_path, rec.contour_path, rec.box, rec.angle, text, text is not None)
        )
    return out


# -- in-memory dataset --------------------------------------------------------


@dataclass
class PretrainData:
    images: np.ndarray  # [n, H, W, 3] float32
    contours: np.ndarray  # [n, H, W] float32
    annotations: List[Annotation]
    prompts: List[Optional[str]]
    corpus: List[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.images)
        if not (len(self.contours) == len(self.annotations) == len(self.prompts) == n):
            raise ValidationError("images, contours, annotations and prompts must align")
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValidationError(f"images must be [n, H, W, 3], got {self.images.shape}")
        if self.contours.shape != self.images.shape[:3]:
            raise ValidationError("contour maps must match image spatial dimensions")
        h, w = self.images.shape[1:3]
        for ann in self.annotations:
            ann.check_within(h, w)

    def __len__(self):
        return len(self.images)

    def kind_counts(self) -> dict:
        counts = {k.value: 0 for k in _KINDS}
        for ann in self.annotations:
            counts[ann.kind.value] += 1
        return counts

    @classmethod
    def from_manifest(cls, path, corpus_path=None) -> "PretrainData":
        from .textgen import load_attribute_corpus

        base = Path(path).parent
        records = load_manifest(path)
        if not records:
            raise ValidationError(f"manifest {path} has no usable records")
        images = np.stack([read_image(base / r.image_path) for r in records])
        contours = np.stack(
            [
                read_contour(base / r.contour_path)
                if r.contour_path
                else quantize(sobel_contour(img))
                for r, img in zip(records, images)
            ]
        )
        if corpus_path is None and (base / "corpus.txt").is_file():
            corpus_path = base / "corpus.txt"
        corpus = list(load_attribute_corpus(corpus_path).texts) if corpus_path else []
        return cls(
            images=images,
            contours=contours,
            annotations=[r.annotation for r in records],
            prompts=[r.prompt for r in records],
            corpus=corpus,
        )

    @classmethod
    def synthetic(cls, n: int, seed: int = 0, image_size: int = 64, mixture=KIND_MIXTURE, corpus_size: int = 64):
        samples = [synth_sample(derive_seed(seed, i), image_size, mixture) for i in range(n)]
        return cls(
            images=np.stack([s.image for s in samples]),
            contours=np.stack([s.contour for s in samples]),
            annotations=[s.annotation for s in samples],
            prompts=[s.prompt for s in samples],
            corpus=synth_attribute_corpus(corpus_size, seed),
        )
