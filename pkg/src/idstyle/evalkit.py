"""Identity-preservation scoring.

Faces are cropped at the same boxes from the original and each stylized
output, embedded, and compared by cosine similarity.  Images are binned
into three categories by their largest face's share of the image area
(< 10%, 10-20% inclusive, > 20%), and results aggregate into a
candidate-vs-baseline table with per-cell improvement percentages.
"""
from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DegenerateInputError, FormatError, ParameterError,
                     ShapeError)
from .imageio import Image, crop, load_image, resize, validate_image
from .mosaic import ConstantColorDetector, FaceBox, FaceDetector, detect_faces

CATEGORY_SMALL_MAX = 0.10   # ratio below this -> category 1
CATEGORY_MEDIUM_MAX = 0.20  # ratio above this -> category 3; boundaries -> 2

MEAN_DECIMALS = 4
IMPROVEMENT_DECIMALS = 2

ARITHMETIC_FOOTNOTE = (
    "Improvement % is recomputed from the cell means exactly as printed "
    f"({MEAN_DECIMALS} decimals); tables computed from unrounded means can "
    "differ by a few hundredths of a percent.")


def face_area_category(box: FaceBox, img_w: int, img_h: int) -> tuple[float, int]:
    """Face-to-image area ratio and its category (1, 2, or 3).

    Boundary ratios (exactly 0.10 or 0.20) fall in category 2.
    """
    if img_w < 1 or img_h < 1:
        raise ParameterError(f"image area is zero ({img_w}x{img_h})")
    if box.w < 1 or box.h < 1 or box.x < 0 or box.y < 0 \
            or box.x + box.w > img_w or box.y + box.h > img_h:
        raise ParameterError(
            f"box (x={box.x}, y={box.y}, w={box.w}, h={box.h}) "
            f"outside image {img_w}x{img_h}")
    ratio = (box.w * box.h) / (img_w * img_h)
    if ratio < CATEGORY_SMALL_MAX:
        return ratio, 1
    if ratio <= CATEGORY_MEDIUM_MAX:
        return ratio, 2
    return ratio, 3


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

class Embedder(ABC):
    """Pluggable face embedding; the built-in one is a toy."""

    @abstractmethod
    def embed(self, face: Image) -> np.ndarray:
        ...


class ToyEmbedder(Embedder):
    """Grayscale, bicubic-resize to ``size`` x ``size``, subtract the
    mean, L2-normalize.  Scale-robust enough to compare a crop against
    its resampled self; constant crops carry no signal and are rejected."""

    def __init__(self, size: int = 16):
        if size < 2:
            raise ParameterError(f"embedder size must be >= 2, got {size}")
        self.size = size

    def embed(self, face: Image) -> np.ndarray:
        face = validate_image(face, "face")
        gray = face.mean(axis=2, keepdims=True)
        flat = resize(gray, self.size, self.size, "bicubic").ravel()
        centered = flat - flat.mean()
        norm = float(np.linalg.norm(centered))
        if norm < 1e-12:
            raise DegenerateInputError(
                "face crop has zero variance; toy embedding undefined")
        return centered / norm


def embed(face: Image, embedder: Embedder) -> np.ndarray:
    vec = np.asarray(embedder.embed(face), dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise ShapeError(f"embedding must be a nonempty vector, got {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ParameterError("embedding contains non-finite values")
    return vec


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"embedding dims differ: {a.size} vs {b.size}")
    aa, bb = float(np.dot(a, a)), float(np.dot(b, b))
    if aa == 0.0 or bb == 0.0:
        raise ParameterError("cosine similarity of a zero vector is undefined")
    # sqrt(aa * bb) rather than norm(a) * norm(b): for b == +-a the
    # denominator then equals |dot(a, b)| exactly, so self-similarity
    # is exactly +-1.0.
    return float(np.clip(np.dot(a, b) / np.sqrt(aa * bb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Records and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    style: str
    face_ratio: float
    category: int
    cosine: float

    def __post_init__(self):
        expected = 1 if self.face_ratio < CATEGORY_SMALL_MAX else \
            (2 if self.face_ratio <= CATEGORY_MEDIUM_MAX else 3)
        if self.category != expected:
            raise ParameterError(
                f"category {self.category} inconsistent with ratio "
                f"{self.face_ratio}")
        if not -1.0 <= self.cosine <= 1.0:
            raise ParameterError(f"cosine {self.cosine} outside [-1, 1]")


@dataclass(frozen=True)
class EvalCell:
    category: int
    style: str
    candidate_mean: float | None
    baseline_mean: float | None
    improvement: float | None
    note: str = ""


@dataclass
class EvalReport:
    cells: list[EvalCell]
    footnotes: list[str] = field(default_factory=list)


def _cell_means(records) -> dict[tuple[int, str], float]:
    groups: dict[tuple[int, str], list[float]] = {}
    for rec in records:
        groups.setdefault((rec.category, rec.style), []).append(rec.cosine)
    return {key: round(float(np.mean(vals)), MEAN_DECIMALS)
            for key, vals in groups.items()}


def build_report(records_candidate, records_baseline) -> EvalReport:
    """Aggregate per-face records into the category x style table.

    Improvement is ``(candidate - baseline) / baseline * 100`` computed
    from the rounded means the report prints, so the table's arithmetic
    can be checked from the table alone.  Cells missing one side, or
    with a non-positive baseline mean, are kept and flagged.
    """
    records_candidate = list(records_candidate)
    records_baseline = list(records_baseline)
    if not records_candidate or not records_baseline:
        raise ParameterError("both record sets must be nonempty")
    ours = _cell_means(records_candidate)
    base = _cell_means(records_baseline)
    cells = []
    for key in sorted(set(ours) | set(base)):
        category, style = key
        o, b = ours.get(key), base.get(key)
        improvement = None
        note = ""
        if o is None:
            note = "missing candidate records"
        elif b is None:
            note = "missing baseline records"
        elif b <= 0.0:
            note = "improvement undefined (baseline mean <= 0)"
        else:
            improvement = round((o - b) / b * 100.0, IMPROVEMENT_DECIMALS)
        cells.append(EvalCell(category, style, o, b, improvement, note))
    return EvalReport(cells, footnotes=[ARITHMETIC_FOOTNOTE])


def report_csv(report: EvalReport) -> str:
    lines = ["category,style,ours,baseline,improvement_pct,note"]
    for c in report.cells:
        ours = "" if c.candidate_mean is None else f"{c.candidate_mean:.{MEAN_DECIMALS}f}"
        base = "" if c.baseline_mean is None else f"{c.baseline_mean:.{MEAN_DECIMALS}f}"
        imp = "" if c.improvement is None else f"{c.improvement:.{IMPROVEMENT_DECIMALS}f}"
        lines.append(f"{c.category},{c.style},{ours},{base},{imp},{c.note}")
    for note in report.footnotes:
        lines.append(f"# {note}")
    return "\n".join(lines) + "\n"


def report_text(report: EvalReport) -> str:
    header = ("Category", "Style", "Ours", "Baseline", "Improvement (%)")
    rows = [header]
    for c in report.cells:
        ours = "-" if c.candidate_mean is None else f"{c.candidate_mean:.{MEAN_DECIMALS}f}"
        base = "-" if c.baseline_mean is None else f"{c.baseline_mean:.{MEAN_DECIMALS}f}"
        if c.improvement is None:
            imp = f"n/a ({c.note})" if c.note else "n/a"
        else:
            imp = f"{c.improvement:+.{IMPROVEMENT_DECIMALS}f}%"
        rows.append((f"Category {c.category}", c.style, ours, base, imp))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
             for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    for note in report.footnotes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Manifest-driven evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalEntry:
    image_id: str
    style: str
    content_path: str
    variants: dict[str, str]
    boxes: tuple[FaceBox, ...] | None = None
    detector: FaceDetector | None = None
    line: int = 0


_ENTRY_KEYS = {"id", "style", "content", "boxes", "detector", "variants"}


def load_eval_manifest(path) -> list[EvalEntry]:
    """Parse a JSON-lines manifest; each line is one content image entry.

    Relative image paths are resolved against the manifest's directory,
    so a manifest can travel with its fixtures.
    """
    root = Path(path).parent

    def _resolve(p: str) -> str:
        q = Path(p)
        return p if q.is_absolute() else str(root / q)

    entries = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as err:
            raise FormatError(f"{path}:{lineno}: invalid JSON ({err})")
        if not isinstance(obj, dict):
            raise FormatError(f"{path}:{lineno}: entry must be an object")
        unknown = set(obj) - _ENTRY_KEYS
        if unknown:
            raise FormatError(
                f"{path}:{lineno}: unknown keys {sorted(unknown)}")
        try:
            image_id = str(obj["id"])
            style = str(obj["style"])
            content = _resolve(str(obj["content"]))
            variants = {str(k): _resolve(str(v))
                        for k, v in obj["variants"].items()}
        except (KeyError, TypeError, AttributeError) as err:
            raise FormatError(f"{path}:{lineno}: missing or bad field ({err})")
        boxes = None
        detector = None
        if "boxes" in obj:
            try:
                boxes = tuple(FaceBox(x=int(b["x"]), y=int(b["y"]),
                                      w=int(b["w"]), h=int(b["h"]),
                                      id=int(b["id"]))
                              for b in obj["boxes"])
            except (KeyError, TypeError, ValueError) as err:
                raise FormatError(f"{path}:{lineno}: bad box entry ({err})")
        elif "detector" in obj:
            detector = _detector_from_json(obj["detector"], f"{path}:{lineno}")
        else:
            raise FormatError(f"{path}:{lineno}: needs 'boxes' or 'detector'")
        entries.append(EvalEntry(image_id, style, content, variants,
                                 boxes=boxes, detector=detector, line=lineno))
    if not entries:
        raise FormatError(f"{path}: empty manifest")
    return entries


def _detector_from_json(obj, where: str) -> FaceDetector:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise FormatError(f"{where}: detector needs a 'kind'")
    if obj["kind"] == "constant_color":
        color = obj.get("color", [1.0, 0.0, 1.0])
        return ConstantColorDetector(tuple(float(c) for c in color),
                                     tol=float(obj.get("tol", 1e-9)))
    raise FormatError(f"{where}: unknown detector kind {obj['kind']!r}")


def _load_for_entry(path: str, entry: EvalEntry) -> Image:
    try:
        return load_image(path)
    except OSError as err:
        raise OSError(
            f"manifest line {entry.line} (image {entry.image_id!r}): {err}") from err


def collect_records(entries, variant: str, embedder: Embedder) -> list[EvalRecord]:
    """Per-face cosine records for one variant across all entries.

    Every record of a multi-face image carries the image-level category,
    taken from the largest face's area ratio.
    """
    records = []
    for entry in entries:
        content = _load_for_entry(entry.content_path, entry)
        h, w = content.shape[:2]
        if entry.boxes is not None:
            boxes = list(entry.boxes)
            for box in boxes:
                face_area_category(box, w, h)  # bounds + ratio validation
        else:
            boxes = detect_faces(content, entry.detector)
        if not boxes:
            continue
        if variant not in entry.variants:
            raise ParameterError(
                f"manifest line {entry.line}: no variant {variant!r}")
        stylized = _load_for_entry(entry.variants[variant], entry)
        if stylized.shape != content.shape:
            raise ShapeError(
                f"manifest line {entry.line}: stylized image "
                f"{stylized.shape[1]}x{stylized.shape[0]} does not match "
                f"content {w}x{h}")
        largest = max(boxes, key=lambda b: (b.area, -b.y, -b.x))
        ratio, category = face_area_category(largest, w, h)
        for box in boxes:
            ref = embed(crop(content, box), embedder)
            got = embed(crop(stylized, box), embedder)
            records.append(EvalRecord(entry.image_id, entry.style, ratio,
                                      category, cosine_similarity(ref, got)))
    return records


def run_eval(entries, candidate: str, baseline: str,
             embedder: Embedder) -> EvalReport:
    """Score two variants named in the manifest and tabulate them."""
    return build_report(collect_records(entries, candidate, embedder),
                        collect_records(entries, baseline, embedder))
