"""Face-tile mosaic pipeline.

The content image is kept bit-identical as the top of a taller canvas
and a strip of square tiles is appended below it, one tile per face.
Each tile holds the face crop upscaled into an aspect-preserving
letterbox (mid-gray bars); the layout records both the tile square and
the letterbox interior, which makes the construction exactly
invertible.  After the whole canvas has been stylized, the face
interiors are cropped back out and pasted into the stylized background
at their source boxes, optionally feathered.

Face regions inside the background are left in place rather than
blanked: the stylizer benefits from scene context and reinsertion
overwrites them anyway.

A separate helper arranges several style images into one reference
grid so that no single style image dominates color or identity.
"""
from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DetectorError, FormatError, ParameterError, ShapeError
from .imageio import Image, crop, resize, validate_image

FILL_GRAY = 0.5


@dataclass(frozen=True)
class FaceBox:
    """Axis-aligned face rectangle in pixel coordinates."""

    x: int
    y: int
    w: int
    h: int
    id: int = 0

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class TileSlot:
    """One face's geometry: its tile square, the letterbox interior
    (both in canvas coordinates), and the source box in the original."""

    face_id: int
    tile: Rect
    inner: Rect
    source: FaceBox


@dataclass(frozen=True)
class MosaicLayout:
    canvas_w: int
    canvas_h: int
    background: Rect
    tiles: tuple[TileSlot, ...]


@dataclass(frozen=True)
class StyleMosaicSpec:
    rows: int
    cols: int
    cell_size: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.cell_size < 1:
            raise ParameterError(
                f"style grid needs positive rows/cols/cell_size, got "
                f"{self.rows}x{self.cols} @ {self.cell_size}")


def validate_boxes(boxes, img_w: int, img_h: int) -> list[FaceBox]:
    out = []
    seen = set()
    for box in boxes:
        if box.w < 1 or box.h < 1 or box.x < 0 or box.y < 0 \
                or box.x + box.w > img_w or box.y + box.h > img_h:
            raise ParameterError(
                f"face box id={box.id} (x={box.x}, y={box.y}, w={box.w}, "
                f"h={box.h}) outside image {img_w}x{img_h}")
        if box.id in seen:
            raise ParameterError(f"duplicate face id {box.id}")
        seen.add(box.id)
        out.append(box)
    return out


# ---------------------------------------------------------------------------
# Detectors
# ---------------------------------------------------------------------------

class FaceDetector(ABC):
    """Pluggable detector returning raw (x, y, w, h) rectangles."""

    @abstractmethod
    def detect(self, img: Image):
        ...


class ManifestDetector(FaceDetector):
    """Pass-through of externally annotated boxes (sidecar manifests)."""

    def __init__(self, boxes):
        self.boxes = [(b.x, b.y, b.w, b.h) for b in boxes]

    def detect(self, img: Image):
        return list(self.boxes)


class ConstantColorDetector(FaceDetector):
    """Boxes of connected regions matching one exact color.

    Toy stand-in for a detector network: faces are marked in fixtures
    with a reserved flat color (pure magenta by default).
    """

    def __init__(self, color=(1.0, 0.0, 1.0), tol: float = 1e-9):
        self.color = tuple(float(c) for c in color)
        self.tol = float(tol)

    def detect(self, img: Image):
        img = validate_image(img)
        if img.shape[2] != len(self.color):
            raise ShapeError(
                f"detector color has {len(self.color)} channels, "
                f"image has {img.shape[2]}")
        target = np.array(self.color, dtype=np.float64)
        mask = np.all(np.abs(img - target) <= self.tol, axis=2)
        return _component_boxes(mask)


def _component_boxes(mask: np.ndarray):
    """Bounding boxes of the 4-connected components of a boolean mask."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    boxes = []
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            x0 = x1 = sx
            y0 = y1 = sy
            queue = deque([(sy, sx)])
            seen[sy, sx] = True
            while queue:
                cy, cx = queue.popleft()
                x0, x1 = min(x0, cx), max(x1, cx)
                y0, y1 = min(y0, cy), max(y1, cy)
                for ny, nx in ((cy - 1, cx), (cy + 1, cx),
                               (cy, cx - 1), (cy, cx + 1)):
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] \
                            and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            boxes.append((x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    return boxes


def detect_faces(img: Image, detector: FaceDetector) -> list[FaceBox]:
    """Run a detector; boxes come back area-sorted with ids 0..n-1."""
    img = validate_image(img)
    try:
        raw = list(detector.detect(img))
    except Exception as err:
        raise DetectorError(f"detector failed: {err}") from err
    h, w = img.shape[:2]
    for x, y, bw, bh in raw:
        if bw < 1 or bh < 1 or x < 0 or y < 0 or x + bw > w or y + bh > h:
            raise DetectorError(
                f"detector returned invalid box (x={x}, y={y}, w={bw}, h={bh}) "
                f"for image {w}x{h}")
    # Deterministic order: largest first, position as tie-break.
    raw.sort(key=lambda b: (-(b[2] * b[3]), b[1], b[0]))
    return [FaceBox(x, y, bw, bh, id=i) for i, (x, y, bw, bh) in enumerate(raw)]


# ---------------------------------------------------------------------------
# Enhancement (pluggable upscaler, bicubic built in)
# ---------------------------------------------------------------------------

class Upscaler(ABC):
    """Pluggable face enhancer; the built-in one is plain bicubic."""

    @abstractmethod
    def upscale(self, img: Image, new_w: int, new_h: int) -> Image:
        ...


class BicubicUpscaler(Upscaler):
    def upscale(self, img: Image, new_w: int, new_h: int) -> Image:
        return resize(img, new_w, new_h, "bicubic")


def letterbox_geometry(w: int, h: int, size: int) -> Rect:
    """Interior rectangle of a ``size`` x ``size`` letterbox that
    preserves the w:h aspect (integer round-half-up, centered)."""
    if w >= h:
        iw = size
        ih = max(1, (2 * h * size + w) // (2 * w))
    else:
        ih = size
        iw = max(1, (2 * w * size + h) // (2 * h))
    return Rect((size - iw) // 2, (size - ih) // 2, iw, ih)


def _fit_to_square(face: Image, upscaler: Upscaler, size: int) -> tuple[Image, Rect]:
    h, w = face.shape[:2]
    inner = letterbox_geometry(w, h, size)
    scaled = upscaler.upscale(face, inner.w, inner.h)
    tile = np.full((size, size, face.shape[2]), FILL_GRAY, dtype=np.float64)
    tile[inner.y:inner.y + inner.h, inner.x:inner.x + inner.w] = scaled
    return tile, inner


def enhance_face(face: Image, upscaler: Upscaler, target: int) -> Image:
    """Upscale a face crop into a ``target`` x ``target`` letterboxed square."""
    face = validate_image(face, "face crop")
    h, w = face.shape[:2]
    if target < max(w, h):
        raise ParameterError(
            f"enhancement target {target} smaller than crop {w}x{h}")
    return _fit_to_square(face, upscaler, target)[0]


# ---------------------------------------------------------------------------
# Content mosaic
# ---------------------------------------------------------------------------

def build_content_mosaic(img: Image, boxes, upscaler: Upscaler,
                         tile_size: int) -> tuple[Image, MosaicLayout]:
    """Append a strip of enhanced-face tiles below the untouched image.

    Tiles are laid out row-major, ``floor(width / tile_size)`` per row;
    unused strip area stays mid-gray.  The returned layout is the exact
    inverse mapping needed by :func:`extract_stylized_faces`.
    """
    img = validate_image(img)
    h, w = img.shape[:2]
    if tile_size < 1:
        raise ParameterError(f"tile_size must be >= 1, got {tile_size}")
    if tile_size > w:
        raise ParameterError(
            f"tile_size {tile_size} wider than the image ({w} px)")
    boxes = validate_boxes(boxes, w, h)

    cols = max(1, w // tile_size)
    rows = math.ceil(len(boxes) / cols) if boxes else 0
    canvas = np.full((h + rows * tile_size, w, img.shape[2]), FILL_GRAY,
                     dtype=np.float64)
    canvas[:h] = img

    slots = []
    for k, box in enumerate(boxes):
        row, col = divmod(k, cols)
        tx, ty = col * tile_size, h + row * tile_size
        tile, inner = _fit_to_square(crop(img, box), upscaler, tile_size)
        canvas[ty:ty + tile_size, tx:tx + tile_size] = tile
        slots.append(TileSlot(
            face_id=box.id,
            tile=Rect(tx, ty, tile_size, tile_size),
            inner=Rect(tx + inner.x, ty + inner.y, inner.w, inner.h),
            source=box))
    layout = MosaicLayout(w, h + rows * tile_size, Rect(0, 0, w, h),
                          tuple(slots))
    return canvas, layout


def extract_stylized_faces(stylized_mosaic: Image,
                           layout: MosaicLayout) -> list[tuple[int, Image]]:
    """Crop each face's letterbox interior back out of the stylized canvas."""
    stylized_mosaic = validate_image(stylized_mosaic, "stylized mosaic")
    sh, sw = stylized_mosaic.shape[:2]
    if (sw, sh) != (layout.canvas_w, layout.canvas_h):
        raise ShapeError(
            f"stylized mosaic is {sw}x{sh}, layout expects "
            f"{layout.canvas_w}x{layout.canvas_h}")
    return [(slot.face_id, crop(stylized_mosaic, slot.inner))
            for slot in layout.tiles]


def _feather_mask(w: int, h: int, feather: int) -> np.ndarray:
    if feather == 0:
        return np.ones((h, w), dtype=np.float64)
    dx = np.minimum(np.arange(w), w - 1 - np.arange(w))
    dy = np.minimum(np.arange(h), h - 1 - np.arange(h))
    dist = np.minimum(dy[:, None], dx[None, :]).astype(np.float64)
    return np.minimum(1.0, dist / feather)


def reinsert_faces(stylized_background: Image, faces, boxes,
                   feather: int = 0) -> Image:
    """Resize each stylized face to its source box and paste it back.

    ``feather > 0`` ramps the paste weight linearly from the box edge
    inward (weight ``min(1, d / feather)`` at pixel distance ``d``).
    Larger boxes are pasted first so overlapping smaller faces stay
    visible on top.
    """
    out = validate_image(stylized_background, "stylized background").copy()
    if feather < 0:
        raise ParameterError(f"feather must be >= 0, got {feather}")
    h, w = out.shape[:2]
    boxes = validate_boxes(boxes, w, h)
    by_id = {box.id: box for box in boxes}
    placements = []
    for face_id, face in faces:
        if face_id not in by_id:
            raise ParameterError(f"unknown face id {face_id}")
        placements.append((by_id[face_id], face))
    placements.sort(key=lambda p: (-p[0].area, p[0].y, p[0].x))

    for box, face in placements:
        face = validate_image(face, f"face id={box.id}")
        if face.shape[2] != out.shape[2]:
            raise ShapeError(
                f"face id={box.id} has {face.shape[2]} channels, "
                f"background has {out.shape[2]}")
        patch = resize(face, box.w, box.h, "bicubic")
        region = out[box.y:box.y + box.h, box.x:box.x + box.w]
        if feather == 0:
            region[:] = patch
        else:
            alpha = _feather_mask(box.w, box.h, feather)[:, :, None]
            region[:] = alpha * patch + (1.0 - alpha) * region
    return out


# ---------------------------------------------------------------------------
# Style reference grid
# ---------------------------------------------------------------------------

def build_style_mosaic(styles, spec: StyleMosaicSpec) -> Image:
    """Tile style images row-major into a single reference grid.

    Each image is resized (bicubic) to fill its cell; unused cells stay
    mid-gray.
    """
    styles = [validate_image(s, f"style image {i}") for i, s in enumerate(styles)]
    if len(styles) > spec.rows * spec.cols:
        raise ParameterError(
            f"{len(styles)} style images exceed grid capacity "
            f"{spec.rows}x{spec.cols}")
    channels = styles[0].shape[2] if styles else 3
    for i, s in enumerate(styles):
        if s.shape[2] != channels:
            raise ShapeError(f"style image {i} channel count differs")
    cell = spec.cell_size
    canvas = np.full((spec.rows * cell, spec.cols * cell, channels),
                     FILL_GRAY, dtype=np.float64)
    for k, style in enumerate(styles):
        row, col = divmod(k, spec.cols)
        canvas[row * cell:(row + 1) * cell, col * cell:(col + 1) * cell] = \
            resize(style, cell, cell, "bicubic")
    return canvas


# ---------------------------------------------------------------------------
# Stylizers (toy stand-ins for the style-transfer stage)
# ---------------------------------------------------------------------------

class Stylizer(ABC):
    @abstractmethod
    def apply(self, img: Image) -> Image:
        ...


class IdentityStylizer(Stylizer):
    def apply(self, img: Image) -> Image:
        return validate_image(img).copy()


class DegradingStylizer(Stylizer):
    """Loses fine detail by resampling down by ``factor`` and back up.

    Small structures (small faces) suffer the most, which is exactly
    the failure mode the mosaic pipeline is meant to mitigate.
    """

    def __init__(self, factor: int = 4):
        if factor < 1:
            raise ParameterError(f"degrade factor must be >= 1, got {factor}")
        self.factor = factor

    def apply(self, img: Image) -> Image:
        img = validate_image(img)
        h, w = img.shape[:2]
        small = resize(img, max(1, w // self.factor), max(1, h // self.factor),
                       "bicubic")
        return resize(small, w, h, "bicubic")


# ---------------------------------------------------------------------------
# Sidecar documents (face manifests and layout files)
# ---------------------------------------------------------------------------

def _box_to_json(box: FaceBox) -> dict:
    return {"id": box.id, "x": box.x, "y": box.y, "w": box.w, "h": box.h}


def _box_from_json(obj: dict, where: str) -> FaceBox:
    try:
        return FaceBox(x=int(obj["x"]), y=int(obj["y"]), w=int(obj["w"]),
                       h=int(obj["h"]), id=int(obj["id"]))
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"{where}: bad face box entry ({err})")


def save_face_manifest(path, boxes) -> None:
    doc = {"boxes": [_box_to_json(b) for b in boxes]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_face_manifest(path) -> list[FaceBox]:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON ({err})")
    if not isinstance(doc, dict) or "boxes" not in doc:
        raise FormatError(f"{path}: face manifest needs a 'boxes' list")
    boxes = [_box_from_json(obj, f"{path}: boxes[{i}]")
             for i, obj in enumerate(doc["boxes"])]
    seen = set()
    for box in boxes:
        if box.id in seen:
            raise FormatError(f"{path}: duplicate face id {box.id}")
        seen.add(box.id)
    return boxes


def _rect_to_json(rect: Rect) -> dict:
    return {"x": rect.x, "y": rect.y, "w": rect.w, "h": rect.h}


def _rect_from_json(obj: dict, where: str) -> Rect:
    try:
        return Rect(int(obj["x"]), int(obj["y"]), int(obj["w"]), int(obj["h"]))
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"{where}: bad rectangle ({err})")


def save_layout(path, layout: MosaicLayout) -> None:
    doc = {
        "canvas_w": layout.canvas_w,
        "canvas_h": layout.canvas_h,
        "background": _rect_to_json(layout.background),
        "tiles": [{
            "face_id": slot.face_id,
            "tile": _rect_to_json(slot.tile),
            "inner": _rect_to_json(slot.inner),
            "source": _box_to_json(slot.source),
        } for slot in layout.tiles],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_layout(path) -> MosaicLayout:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: invalid JSON ({err})")
    try:
        slots = tuple(TileSlot(
            face_id=int(obj["face_id"]),
            tile=_rect_from_json(obj["tile"], f"{path}: tiles[{i}].tile"),
            inner=_rect_from_json(obj["inner"], f"{path}: tiles[{i}].inner"),
            source=_box_from_json(obj["source"], f"{path}: tiles[{i}].source"),
        ) for i, obj in enumerate(doc["tiles"]))
        return MosaicLayout(
            canvas_w=int(doc["canvas_w"]), canvas_h=int(doc["canvas_h"]),
            background=_rect_from_json(doc["background"], f"{path}: background"),
            tiles=slots)
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"{path}: bad layout document ({err})")
