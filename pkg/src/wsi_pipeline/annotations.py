"""Slide metadata and RoI annotation parsing, polygon geometry, dataset summaries.

Annotations are free-hand closed contours in physical slide coordinates
(integer nanometers), each labeled with one of six tissue classes. The XML
schema is a fixed subset of vendor-style annotation files: a root element
holding ``annotation`` elements, each with a ``title`` child (the class
string) and a ``pointlist`` of ``point`` elements with integer ``x``/``y``.
"""

from __future__ import annotations

import enum
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DegenerateContour, MalformedXml, UnknownClassLabel

NM_PER_CM = 10**7
NM2_PER_CM2 = float(NM_PER_CM) ** 2

#: scanner resolution at x20 magnification, micrometers per pixel
DEFAULT_MPP = 0.4415


class TissueClass6(enum.IntEnum):
    """Six-way tissue classification of an annotated region."""

    HP = 0
    NORM = 1
    TA_HG = 2
    TA_LG = 3
    TVA_HG = 4
    TVA_LG = 5

    @property
    def label(self) -> str:
        return _CLASS_TO_LABEL[self]

    @staticmethod
    def from_label(title: str) -> "TissueClass6":
        try:
            return _LABEL_TO_CLASS[title]
        except KeyError:
            raise UnknownClassLabel(title) from None


_CLASS_TO_LABEL = {
    TissueClass6.HP: "HP",
    TissueClass6.NORM: "NORM",
    TissueClass6.TA_HG: "TA.HG",
    TissueClass6.TA_LG: "TA.LG",
    TissueClass6.TVA_HG: "TVA.HG",
    TissueClass6.TVA_LG: "TVA.LG",
}
_LABEL_TO_CLASS = {v: k for k, v in _CLASS_TO_LABEL.items()}


@dataclass(frozen=True)
class SlideMetadata:
    """Physical geometry of one scanned slide.

    ``origin_offset_nm`` is the position of pixel (0, 0) in annotation
    coordinate space; annotation nm coordinates map to pixels via
    ``pixel = (nm - offset) / (mpp * 1000)``.
    """

    slide_id: str
    width_px: int
    height_px: int
    mpp: float = DEFAULT_MPP
    origin_offset_nm: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.mpp <= 0:
            raise ValueError(f"mpp must be positive, got {self.mpp}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("slide dimensions must be positive")

    @property
    def nm_per_px(self) -> float:
        return self.mpp * 1000.0

    def nm_to_px(self, x_nm: float, y_nm: float) -> tuple[float, float]:
        ox, oy = self.origin_offset_nm
        return (x_nm - ox) / self.nm_per_px, (y_nm - oy) / self.nm_per_px

    def px_to_nm(self, x_px: float, y_px: float) -> tuple[float, float]:
        ox, oy = self.origin_offset_nm
        return x_px * self.nm_per_px + ox, y_px * self.nm_per_px + oy


@dataclass(frozen=True)
class Contour:
    """Closed polygon in integer nm coordinates (last point connects to first)."""

    points: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if len(self.points) < 3:
            raise DegenerateContour(f"contour needs >= 3 points, got {len(self.points)}")
        if _shoelace_twice_nm2(self.points) == 0:
            raise DegenerateContour("contour has zero area after closure")

    def bounds_nm(self) -> tuple[int, int, int, int]:
        """(min_x, min_y, max_x, max_y) of the vertex set."""
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class RoIAnnotation:
    roi_id: str
    label: TissueClass6
    contour: Contour


@dataclass(frozen=True)
class SlideAnnotationSet:
    metadata: SlideMetadata
    rois: tuple[RoIAnnotation, ...]

    def __post_init__(self):
        ids = [r.roi_id for r in self.rois]
        if len(ids) != len(set(ids)):
            raise MalformedXml(f"duplicate roi ids in slide {self.metadata.slide_id}")


def _shoelace_twice_nm2(points: Sequence[tuple[int, int]]) -> int:
    # exact on integer coordinates
    total = 0
    n = len(points)
    for i in range(n):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return abs(total)


def polygon_area_cm2(contour: Contour) -> float:
    """Absolute shoelace area of the closed contour, in cm^2."""
    return _shoelace_twice_nm2(contour.points) / 2.0 / NM2_PER_CM2


def point_in_roi(p: tuple[float, float], contour: Contour) -> bool:
    """Even-odd (ray casting) containment test; boundary points count as inside."""
    px, py = p
    pts = contour.points
    n = len(pts)
    inside = False
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        # boundary check: collinear and within the segment's bounding box
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        if cross == 0 and min(x1, x2) <= px <= max(x1, x2) and min(y1, y2) <= py <= max(y1, y2):
            return True
        if (y1 > py) != (y2 > py):
            x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < x_at:
                inside = not inside
    return inside


# ---------------------------------------------------------------------------
# XML parsing / canonical serialization


def parse_annotations(xml_text: str, metadata: SlideMetadata) -> SlideAnnotationSet:
    """Parse annotation XML into a typed RoI set.

    Coordinates are preserved verbatim (integer nm). Raises MalformedXml on
    schema violations, UnknownClassLabel for unrecognized titles and
    DegenerateContour for contours with fewer than 3 points.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise MalformedXml(f"xml parse error: {exc}") from exc

    rois = []
    for idx, ann in enumerate(root.findall("annotation"), start=1):
        title_el = ann.find("title")
        if title_el is None or title_el.text is None:
            raise MalformedXml(f"annotation #{idx} has no title")
        label = TissueClass6.from_label(title_el.text.strip())

        plist = ann.find("pointlist")
        if plist is None:
            raise MalformedXml(f"annotation #{idx} has no pointlist")
        points = []
        for pt in plist.findall("point"):
            x_el, y_el = pt.find("x"), pt.find("y")
            if x_el is None or y_el is None:
                raise MalformedXml(f"annotation #{idx} has a point without x/y")
            try:
                points.append((int(x_el.text.strip()), int(y_el.text.strip())))
            except (TypeError, ValueError):
                raise MalformedXml(
                    f"annotation #{idx} has non-integer coordinates"
                ) from None
        if len(points) < 3:
            raise DegenerateContour(
                f"annotation #{idx} has {len(points)} points, need >= 3"
            )
        roi_id = ann.get("id") or f"roi-{idx}"
        rois.append(RoIAnnotation(roi_id=roi_id, label=label, contour=Contour(tuple(points))))

    return SlideAnnotationSet(metadata=metadata, rois=tuple(rois))


def serialize_annotations(annset: SlideAnnotationSet) -> str:
    """Canonical XML form: fixed ordering, 2-space indent, one point per line."""
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', "<annotations>"]
    for roi in annset.rois:
        lines.append(f'  <annotation id="{roi.roi_id}">')
        lines.append(f"    <title>{roi.label.label}</title>")
        lines.append("    <pointlist>")
        for x, y in roi.contour.points:
            lines.append(f"      <point><x>{x}</x><y>{y}</y></point>")
        lines.append("    </pointlist>")
        lines.append("  </annotation>")
    lines.append("</annotations>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Slide metadata JSON


def metadata_to_json(md: SlideMetadata) -> str:
    obj = {
        "slide_id": md.slide_id,
        "mpp": md.mpp,
        "width_px": md.width_px,
        "height_px": md.height_px,
        "offset_x_nm": md.origin_offset_nm[0],
        "offset_y_nm": md.origin_offset_nm[1],
    }
    return json.dumps(obj, indent=2) + "\n"


def metadata_from_json(text: str) -> SlideMetadata:
    obj = json.loads(text)
    return SlideMetadata(
        slide_id=obj["slide_id"],
        mpp=float(obj["mpp"]),
        width_px=int(obj["width_px"]),
        height_px=int(obj["height_px"]),
        origin_offset_nm=(int(obj["offset_x_nm"]), int(obj["offset_y_nm"])),
    )


def load_annotation_set(xml_path: Path | str, metadata_path: Path | str) -> SlideAnnotationSet:
    md = metadata_from_json(Path(metadata_path).read_text(encoding="utf-8"))
    return parse_annotations(Path(xml_path).read_text(encoding="utf-8"), md)


# ---------------------------------------------------------------------------
# Dataset summary


@dataclass
class ClassTally:
    slide_count: int = 0
    roi_count: int = 0
    area_cm2: float = 0.0


@dataclass
class DatasetSummary:
    """Per-class slide/RoI/area tallies; totals are column sums.

    A slide counts for class t if it carries at least one RoI of t, so a
    multi-label slide contributes to several slide counts.
    """

    per_class: dict[TissueClass6, ClassTally] = field(
        default_factory=lambda: {t: ClassTally() for t in TissueClass6}
    )

    @property
    def total_slides(self) -> int:
        return sum(t.slide_count for t in self.per_class.values())

    @property
    def total_rois(self) -> int:
        return sum(t.roi_count for t in self.per_class.values())

    @property
    def total_area_cm2(self) -> float:
        return sum(t.area_cm2 for t in self.per_class.values())

    def as_dict(self) -> dict:
        return {
            "per_class": {
                t.label: {
                    "slides": tally.slide_count,
                    "rois": tally.roi_count,
                    "area_cm2": tally.area_cm2,
                }
                for t, tally in self.per_class.items()
            },
            "total_slides": self.total_slides,
            "total_rois": self.total_rois,
            "total_area_cm2": self.total_area_cm2,
        }


def summarize_dataset(sets: Iterable[SlideAnnotationSet]) -> DatasetSummary:
    summary = DatasetSummary()
    for annset in sets:
        classes_present = set()
        for roi in annset.rois:
            tally = summary.per_class[roi.label]
            tally.roi_count += 1
            tally.area_cm2 += polygon_area_cm2(roi.contour)
            classes_present.add(roi.label)
        for cls in classes_present:
            summary.per_class[cls].slide_count += 1
    return summary
