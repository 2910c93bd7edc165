"""Proxy-image layout documents: prompt assembly, parsing, validation.

A layout is a JSON object::

    {"scene": "...",
     "instances": [{"desc": "...",
                    "bbox": [x1, y1, x2, y2],
                    "modality": "text" | "image" | "image_and_text"}, ...]}

Coordinates are normalized to [0, 1] with the origin at the top-left.
Slight overshoots within [-0.02, 1.02] are clamped to [0, 1]; anything
further out is a violation (absolute pixel boxes are rejected, not
converted). Overlapping boxes are legal.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import ArgumentError, LayoutParseError, LayoutValidationError

CLAMP_SLACK = 0.02
PROMPT_TEMPLATE = "Given an image of {caption}, we show {rule}"
CAPTION_JOINER = "; "


class Modality(enum.Enum):
    TEXT = "text"
    IMAGE = "image"
    IMAGE_AND_TEXT = "image_and_text"


@dataclass(frozen=True)
class LayoutInstance:
    desc: str
    bbox: tuple[float, float, float, float]  # (x1, y1, x2, y2), normalized
    modality: Modality


@dataclass(frozen=True)
class ProxyLayout:
    scene: str
    instances: tuple[LayoutInstance, ...]


@dataclass(frozen=True)
class Violation:
    """One schema finding; ``instance`` is None for document-level rules."""

    instance: int | None
    rule: str
    detail: str

    def __str__(self) -> str:
        where = "-" if self.instance is None else str(self.instance)
        return f"instance {where}: {self.rule}: {self.detail}"


def build_prompt(query_captions: list[str], relative_caption: str) -> str:
    """Fill the fixed prompt template; captions are joined with '; '."""
    if not query_captions or any(not c for c in query_captions):
        raise ArgumentError("query_captions must be non-empty strings")
    if not relative_caption:
        raise ArgumentError("relative_caption must be non-empty")
    caption = CAPTION_JOINER.join(query_captions)
    return PROMPT_TEMPLATE.format(caption=caption, rule=relative_caption)


def _clamp(value: float) -> float | None:
    """Clamp slight overshoots into [0, 1]; None when out of tolerance."""
    if -CLAMP_SLACK <= value <= 1.0 + CLAMP_SLACK:
        return min(max(value, 0.0), 1.0)
    return None


def _scan_instance(index: int, raw) -> tuple[LayoutInstance | None, list[Violation]]:
    violations: list[Violation] = []
    if not isinstance(raw, dict):
        return None, [Violation(index, "structure", "instance must be an object")]

    desc = raw.get("desc")
    if not isinstance(desc, str):
        violations.append(Violation(index, "structure", "desc must be a string"))
        desc = ""
    elif not desc.strip():
        violations.append(Violation(index, "desc_nonempty", "empty description"))

    modality = None
    raw_modality = raw.get("modality")
    if isinstance(raw_modality, str):
        try:
            modality = Modality(raw_modality)
        except ValueError:
            violations.append(
                Violation(index, "modality", f"unknown modality {raw_modality!r}")
            )
    else:
        violations.append(Violation(index, "modality", "modality must be a string"))

    bbox = raw.get("bbox")
    coords: list[float] | None = None
    if not isinstance(bbox, list) or len(bbox) != 4:
        violations.append(Violation(index, "bbox_arity", "bbox must be [x1,y1,x2,y2]"))
    elif not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox):
        violations.append(Violation(index, "bbox_numeric", "bbox values must be numbers"))
    else:
        coords = []
        for axis, value in zip("x1 y1 x2 y2".split(), bbox):
            clamped = _clamp(float(value))
            if clamped is None:
                violations.append(
                    Violation(
                        index, "bbox_range", f"{axis}={value} outside [0,1] tolerance"
                    )
                )
            coords.append(clamped if clamped is not None else float(value))
        if coords[0] >= coords[2]:
            violations.append(
                Violation(index, "x_order", f"x1={coords[0]} not below x2={coords[2]}")
            )
        if coords[1] >= coords[3]:
            violations.append(
                Violation(index, "y_order", f"y1={coords[1]} not below y2={coords[3]}")
            )

    if violations or coords is None or modality is None:
        return None, violations
    return LayoutInstance(desc=desc, bbox=tuple(coords), modality=modality), violations


def scan_layout(raw: str) -> tuple[ProxyLayout | None, list[Violation]]:
    """Parse leniently, returning a layout (when constructible) plus all findings.

    JSON-level failures raise LayoutParseError with the byte offset; schema
    findings are returned as data.
    """
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise LayoutParseError(
            f"layout is not valid JSON at byte {exc.pos}: {exc.msg}", offset=exc.pos
        ) from exc

    violations: list[Violation] = []
    if not isinstance(doc, dict):
        return None, [Violation(None, "structure", "layout root must be an object")]

    scene = doc.get("scene")
    if not isinstance(scene, str):
        violations.append(Violation(None, "structure", "scene must be a string"))
        scene = ""
    elif not scene.strip():
        violations.append(Violation(None, "scene_nonempty", "empty scene description"))

    raw_instances = doc.get("instances")
    instances: list[LayoutInstance] = []
    if not isinstance(raw_instances, list):
        violations.append(Violation(None, "structure", "instances must be a list"))
    elif not raw_instances:
        violations.append(Violation(None, "instances_nonempty", "no instances"))
    else:
        for i, raw_inst in enumerate(raw_instances):
            inst, found = _scan_instance(i, raw_inst)
            violations.extend(found)
            if inst is not None:
                instances.append(inst)

    if violations:
        return None, violations
    return ProxyLayout(scene=scene, instances=tuple(instances)), []


def parse_layout(raw: str) -> ProxyLayout:
    """Parse and canonicalize a layout document, or fail with every finding."""
    layout, violations = scan_layout(raw)
    if violations:
        raise LayoutValidationError(violations)
    assert layout is not None
    return layout


def serialize_layout(layout: ProxyLayout) -> str:
    doc = {
        "scene": layout.scene,
        "instances": [
            {"desc": inst.desc, "bbox": list(inst.bbox), "modality": inst.modality.value}
            for inst in layout.instances
        ],
    }
    return json.dumps(doc, indent=2)


def validate_layout(layout: ProxyLayout) -> list[Violation]:
    """Report every violated invariant of an in-memory layout (empty = valid)."""
    violations: list[Violation] = []
    if not layout.scene.strip():
        violations.append(Violation(None, "scene_nonempty", "empty scene description"))
    if not layout.instances:
        violations.append(Violation(None, "instances_nonempty", "no instances"))
    for i, inst in enumerate(layout.instances):
        if not inst.desc.strip():
            violations.append(Violation(i, "desc_nonempty", "empty description"))
        x1, y1, x2, y2 = inst.bbox
        for axis, value in zip("x1 y1 x2 y2".split(), inst.bbox):
            if not 0.0 <= value <= 1.0:
                violations.append(
                    Violation(i, "bbox_range", f"{axis}={value} outside [0,1]")
                )
        if not x1 < x2:
            violations.append(Violation(i, "x_order", f"x1={x1} not below x2={x2}"))
        if not y1 < y2:
            violations.append(Violation(i, "y_order", f"y1={y1} not below y2={y2}"))
    return violations


def duplicate_image_instances(layout: ProxyLayout) -> ProxyLayout:
    """Give every image-modality instance a co-located image-and-text twin.

    The twin shares description and bbox. Only instances whose modality is
    exactly ``image`` are copied, so re-applying keeps adding one twin per
    original image instance (deliberately not idempotent).
    """
    out: list[LayoutInstance] = []
    for inst in layout.instances:
        out.append(inst)
        if inst.modality is Modality.IMAGE:
            out.append(
                LayoutInstance(
                    desc=inst.desc, bbox=inst.bbox, modality=Modality.IMAGE_AND_TEXT
                )
            )
    return ProxyLayout(scene=layout.scene, instances=tuple(out))


def scan_layout_dir(directory: str | Path) -> Iterator[tuple[str, Violation]]:
    """Yield (filename, violation) findings for every layout file in a directory.

    Unreadable or non-JSON files yield a single parse finding. Files are
    visited in sorted order for reproducible reports.
    """
    directory = Path(directory)
    for path in sorted(directory.glob("*.json")):
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as exc:
            yield path.name, Violation(None, "io", str(exc))
            continue
        try:
            _, violations = scan_layout(raw)
        except LayoutParseError as exc:
            yield path.name, Violation(None, "parse", str(exc))
            continue
        for violation in violations:
            yield path.name, violation
