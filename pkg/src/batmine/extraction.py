"""Staged text extraction: cycle-graph classification, paragraph
categorization, cell / material / operating-condition extraction.

Every stage goes through the gateway with a versioned prompt template and a
JSON schema; a deterministic regex fallback extractor covers the common
quantity grammar without any model. Stage outputs feed the next stage; one
paper's stages run sequentially, distinct papers are independent.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources

from .corpus import Caption, Document, GraphMetadata, Paragraph, locate_related_paragraphs
from .errors import InvalidStage
from .gateway import Gateway, load_template

MAJOR_CATEGORIES = ("material", "synthesis", "operating_condition", "other")
MATERIAL_SUBCATEGORIES = ("cathode", "anode", "electrolyte", "separator", "current_collector", "other")
OPERATING_SUBCATEGORIES = ("cycle_performance", "other")
COMPONENT_KEYS = ("cathode", "anode", "electrolyte", "separator", "current_collector")

MATERIAL_ROLES = (
    "active_material",
    "conductive_additive",
    "binder",
    "salt",
    "solvent",
    "additive",
    "separator",
    "current_collector",
    "anode",
    "electrolyte_amount",
)


def load_entity_catalog() -> list[dict]:
    """The frozen catalog of extracted entity kinds (auditably 29 of them)."""
    raw = json.loads(resources.files("batmine.assets").joinpath("entity_catalog.json").read_text("utf-8"))
    return raw["entities"]


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellRecord:
    cell_name: str
    component_names: dict[str, str | None]
    graph: GraphMetadata

    def __post_init__(self):
        if not self.cell_name:
            raise ValueError("cell_name is empty")
        unknown = set(self.component_names) - set(COMPONENT_KEYS)
        if unknown:
            raise ValueError(f"unknown component keys {sorted(unknown)}")

    def to_json_dict(self) -> dict:
        return {
            "cell_name": self.cell_name,
            "components": {k: self.component_names.get(k) for k in COMPONENT_KEYS},
        }


@dataclass(frozen=True)
class MaterialEntry:
    component: str  # sub-category this entry belongs to
    material_name: str
    role: str
    amount: float | tuple[float, float] | None = None
    unit: str | None = None
    cell_name: str | None = None

    def __post_init__(self):
        if self.amount is not None and self.unit is None:
            raise ValueError("amount present but unit missing")
        if isinstance(self.amount, tuple):
            if self.amount[0] < 0 or self.amount[1] < self.amount[0]:
                raise ValueError(f"bad range {self.amount}")
        elif self.amount is not None and self.amount < 0:
            raise ValueError(f"amount {self.amount} < 0")
        if self.role not in MATERIAL_ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def to_json_dict(self) -> dict:
        if isinstance(self.amount, tuple):
            amount = {"min": self.amount[0], "max": self.amount[1]}
        else:
            amount = self.amount
        return {
            "component": self.component,
            "material_name": self.material_name,
            "role": self.role,
            "amount": amount,
            "unit": self.unit,
            "cell_name": self.cell_name,
        }


@dataclass(frozen=True)
class ConditionValue:
    """One operating-condition field; a point value has min == max."""

    min: float
    max: float
    unit: str
    source: str  # caption | result | method

    @property
    def is_point(self) -> bool:
        return self.min == self.max

    @property
    def value(self) -> float:
        return self.min if self.is_point else (self.min + self.max) / 2.0

    def to_json_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "unit": self.unit, "source": self.source}


@dataclass(frozen=True)
class OperatingConditions:
    c_rate: ConditionValue | None = None
    current_density: ConditionValue | None = None
    temperature: ConditionValue | None = None

    def to_json_dict(self) -> dict:
        return {
            "c_rate": self.c_rate.to_json_dict() if self.c_rate else None,
            "current_density": self.current_density.to_json_dict() if self.current_density else None,
            "temperature": self.temperature.to_json_dict() if self.temperature else None,
        }


@dataclass
class PanelExtraction:
    meta: GraphMetadata
    cells: list[CellRecord]
    materials: list[MaterialEntry]
    conditions: OperatingConditions
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "graph": {"doi": self.meta.doi, "figure_id": self.meta.figure_id, "panel_label": self.meta.panel_label},
            "cells": [c.to_json_dict() for c in self.cells],
            "materials": [m.to_json_dict() for m in self.materials],
            "conditions": self.conditions.to_json_dict(),
            "warnings": list(self.warnings),
        }


@dataclass
class PaperExtraction:
    doi: str
    panels: list[PanelExtraction]
    paragraph_categories: dict[str, dict[str, str]] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "doi": self.doi,
            "panels": [p.to_json_dict() for p in self.panels],
            "paragraph_categories": self.paragraph_categories,
        }
        return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------------------
# gateway-backed stages
# ---------------------------------------------------------------------------

_TEMPLATES: dict[str, object] = {}


def _template(name: str):
    if name not in _TEMPLATES:
        _TEMPLATES[name] = load_template(name)
    return _TEMPLATES[name]


_PANEL_MARK_RE = re.compile(r"\(([a-z])\)")


def panel_caption(caption: Caption, panel_label: str) -> Caption:
    """Slice a multi-panel caption down to one panel's sentences.

    Captions mark panels as "(a) ... (b) ..."; the slice for "a" runs from
    its marker to the next one. Unmarked captions (or an empty panel label)
    pass through whole.
    """
    if not panel_label:
        return caption
    marks = [(m.group(1), m.start(), m.end()) for m in _PANEL_MARK_RE.finditer(caption.text)]
    for i, (letter, _, end) in enumerate(marks):
        if letter == panel_label.lower():
            stop = marks[i + 1][1] if i + 1 < len(marks) else len(caption.text)
            text = caption.text[end:stop].strip()
            if text:
                return Caption(caption.figure_id, (panel_label,), text)
    return caption


def classify_cycle_caption(caption: Caption, doi: str, gateway: Gateway) -> list[GraphMetadata]:
    """One GraphMetadata per caption panel judged to show a cycling test."""
    response = gateway.ask(_template("cycle_caption_classify"), {"caption": caption.text})
    metas = []
    seen = set()
    for item in response["panels"]:
        panel = item["panel"].strip().lower()
        if caption.panel_labels and panel and panel not in caption.panel_labels:
            continue
        if panel in seen:
            continue
        seen.add(panel)
        metas.append(GraphMetadata(doi=doi, figure_id=caption.figure_id, panel_label=panel))
    return metas


def categorize_paragraph(
    paragraph: Paragraph, stage: str, major: str | None, gateway: Gateway
) -> str:
    """Major- or sub-categorize one paragraph; synthesis paragraphs are
    excluded from material extraction downstream."""
    if stage == "major":
        response = gateway.ask(_template("categorize_major"), {"paragraph": paragraph.text})
        return response["category"]
    if stage != "sub":
        raise InvalidStage(f"stage must be 'major' or 'sub', got {stage!r}")
    if major == "material":
        response = gateway.ask(_template("categorize_sub_material"), {"paragraph": paragraph.text})
        return response["category"]
    if major == "operating_condition":
        response = gateway.ask(_template("categorize_sub_operating"), {"paragraph": paragraph.text})
        return response["category"]
    raise InvalidStage(f"sub-categorization needs major in (material, operating_condition), got {major!r}")


def extract_cells(
    caption: Caption, related: list[Paragraph], doi: str, gateway: Gateway, meta: GraphMetadata | None = None
) -> list[CellRecord]:
    """Cell names and component names for one cycle-graph panel. Caption
    takes precedence over result paragraphs for component naming."""
    meta = meta or GraphMetadata(doi, caption.figure_id, "")
    results_text = "\n".join(p.text for p in related) or "(none)"
    response = gateway.ask(
        _template("cell_extract"), {"caption": caption.text, "results": results_text}
    )
    cells = []
    seen = set()
    for item in response["cells"]:
        name = item["cell_name"].strip()
        if not name or name in seen:
            continue
        seen.add(name)
        components = {k: item["components"].get(k) for k in COMPONENT_KEYS}
        if not any(components.values()):
            components["cathode"] = None
        cells.append(CellRecord(cell_name=name, component_names=components, graph=meta))
    return cells


def _amount_from_json(raw) -> float | tuple[float, float] | None:
    if raw is None:
        return None
    if isinstance(raw, dict):
        return (float(raw["min"]), float(raw["max"]))
    return float(raw)


def extract_materials(
    paragraph: Paragraph, sub: str, cells: list[CellRecord], gateway: Gateway
) -> list[MaterialEntry]:
    """Material composition entries with amounts and units verbatim as
    written; standardization happens later."""
    cell_names = [c.cell_name for c in cells]
    response = gateway.ask(
        _template("material_extract"),
        {
            "paragraph": paragraph.text,
            "component": sub,
            "cells": ", ".join(cell_names) or "(none)",
        },
    )
    entries = []
    for item in response["entries"]:
        cell = item.get("cell_name")
        if cell is not None and cell not in cell_names:
            cell = assign_material_to_cell(cell, cell_names)
        entries.append(
            MaterialEntry(
                component=sub,
                material_name=item["material_name"],
                role=item["role"],
                amount=_amount_from_json(item.get("amount")),
                unit=item.get("unit"),
                cell_name=cell,
            )
        )
    return entries


def assign_material_to_cell(hint: str, cell_names: list[str]) -> str | None:
    """Longest-common-token match of a free-text cell hint; ties or zero
    overlap land in the unassigned pool (None)."""
    hint_tokens = set(_normalize_tokens(hint))
    best, best_score, tied = None, 0, False
    for name in cell_names:
        score = len(hint_tokens & set(_normalize_tokens(name)))
        if score > best_score:
            best, best_score, tied = name, score, False
        elif score == best_score and score > 0:
            tied = True
    if best_score == 0 or tied:
        return None
    return best


def _condition_from_json(raw, default_unit: str, source: str) -> ConditionValue | None:
    if raw is None:
        return None
    return ConditionValue(
        min=float(raw["min"]),
        max=float(raw["max"]),
        unit=raw.get("unit") or default_unit,
        source=source,
    )


def _conditions_for_source(text: str, source: str, gateway: Gateway) -> OperatingConditions:
    response = gateway.ask(_template("condition_extract"), {"source": source, "text": text})
    return OperatingConditions(
        c_rate=_condition_from_json(response.get("c_rate"), "C", source),
        current_density=_condition_from_json(response.get("current_density"), "mA/cm2", source),
        temperature=_condition_from_json(response.get("temperature"), "degC", source),
    )


def combine_condition_sources(
    caption: OperatingConditions | None,
    result: OperatingConditions | None,
    method: OperatingConditions | None,
) -> OperatingConditions:
    """Field-wise precedence caption > result > method: each field comes from
    the earliest source that states it; later sources never override."""
    ordered = [c for c in (caption, result, method) if c is not None]

    def pick(attr: str) -> ConditionValue | None:
        for conditions in ordered:
            value = getattr(conditions, attr)
            if value is not None:
                return value
        return None

    return OperatingConditions(
        c_rate=pick("c_rate"),
        current_density=pick("current_density"),
        temperature=pick("temperature"),
    )


def extract_operating_conditions(
    caption: Caption | None,
    related: list[Paragraph],
    methods: list[Paragraph],
    gateway: Gateway,
) -> OperatingConditions:
    """C-rate, current density and temperature with per-field source records,
    in caption > result > method order."""
    from_caption = (
        _conditions_for_source(caption.text, "caption", gateway) if caption and caption.text else None
    )
    result_text = "\n".join(p.text for p in related)
    from_result = _conditions_for_source(result_text, "result", gateway) if result_text else None
    method_text = "\n".join(p.text for p in methods)
    from_method = _conditions_for_source(method_text, "method", gateway) if method_text else None
    return combine_condition_sources(from_caption, from_result, from_method)


# ---------------------------------------------------------------------------
# deterministic fallback grammar
# ---------------------------------------------------------------------------

_NUM = r"(\d+(?:\.\d+)?)"
_NAME = r"([A-Za-z][A-Za-z0-9₀-₉()\-]*)"
_RANGE = r"\s*[-–—~]\s*"

_CONC_RE = re.compile(rf"{_NUM}\s*(mol/L|mol%|wt\.?%|M|m)(?![A-Za-zµμ/%])\s+{_NAME}")
_RATIO_RE = re.compile(
    r"([A-Za-z][A-Za-z0-9₀-₉]*(?:\s*[/:]\s*[A-Za-z][A-Za-z0-9₀-₉]*)+)\s*"
    r"\(\s*(\d+(?:\.\d+)?(?:\s*:\s*\d+(?:\.\d+)?)+)\s*,?\s*(v/v|w/w)\s*\)"
)
_CRATE_RANGE_RE = re.compile(rf"(?<![\w.°]){_NUM}{_RANGE}{_NUM}\s?C(?![\w°])")
_CRATE_RE = re.compile(rf"(?<![\w.°]){_NUM}\s?C(?![\w°])")
_CURRENT_RE = re.compile(rf"{_NUM}\s*(mA\s?/?\s?cm(?:⁻²|-2|²|2)|mA\s?cm⁻²)")
_TEMP_RANGE_RE = re.compile(rf"{_NUM}\s*°?\s?C?{_RANGE}{_NUM}\s*°\s?C")
_TEMP_RE = re.compile(rf"{_NUM}\s*°\s?C")
_TEMP_K_RE = re.compile(rf"{_NUM}\s*K\b")

_CONC_ROLE = {"M": "salt", "mol/L": "salt", "m": "salt", "wt%": "additive", "wt.%": "additive", "mol%": "additive"}


def extract_quantities(text: str, source: str) -> tuple[list[MaterialEntry], OperatingConditions]:
    """Regex grammar over free text; never raises on arbitrary input."""
    materials: list[MaterialEntry] = []
    for m in _CONC_RE.finditer(text):
        value, unit, name = m.groups()
        materials.append(
            MaterialEntry(
                component="electrolyte",
                material_name=name,
                role=_CONC_ROLE.get(unit, "salt"),
                amount=float(value),
                unit="wt%" if unit == "wt.%" else unit,
            )
        )
    for m in _RATIO_RE.finditer(text):
        names = [n.strip() for n in re.split(r"[/:]", m.group(1))]
        parts = [float(p) for p in m.group(2).split(":")]
        basis = m.group(3)
        if len(names) != len(parts):
            continue
        for name, part in zip(names, parts):
            materials.append(
                MaterialEntry(
                    component="electrolyte", material_name=name, role="solvent", amount=part, unit=basis
                )
            )

    c_rate = None
    m = _CRATE_RANGE_RE.search(text)
    if m:
        c_rate = ConditionValue(float(m.group(1)), float(m.group(2)), "C", source)
    else:
        m = _CRATE_RE.search(text)
        if m:
            v = float(m.group(1))
            c_rate = ConditionValue(v, v, "C", source)

    current = None
    m = _CURRENT_RE.search(text)
    if m:
        v = float(m.group(1))
        current = ConditionValue(v, v, "mA/cm2", source)

    temperature = None
    m = _TEMP_RANGE_RE.search(text)
    if m:
        temperature = ConditionValue(float(m.group(1)), float(m.group(2)), "degC", source)
    else:
        m = _TEMP_RE.search(text)
        if m:
            v = float(m.group(1))
            temperature = ConditionValue(v, v, "degC", source)
        else:
            m = _TEMP_K_RE.search(text)
            if m:
                v = float(m.group(1))
                temperature = ConditionValue(v, v, "K", source)

    return materials, OperatingConditions(c_rate=c_rate, current_density=current, temperature=temperature)


def fallback_extract(paragraph: Paragraph) -> tuple[list[MaterialEntry], OperatingConditions]:
    """Offline deterministic extraction for one paragraph."""
    return extract_quantities(paragraph.text, paragraph.section)


# ---------------------------------------------------------------------------
# per-paper driver
# ---------------------------------------------------------------------------


def extract_paper(doc: Document, gateway: Gateway) -> PaperExtraction:
    """Run the full staged extraction for one paper (stages sequential)."""
    categories: dict[str, dict[str, str]] = {}
    for p in doc.method_paragraphs:
        major = categorize_paragraph(p, "major", None, gateway)
        entry = {"major": major}
        if major in ("material", "operating_condition"):
            entry["sub"] = categorize_paragraph(p, "sub", major, gateway)
        categories[p.id] = entry

    material_paragraphs = [
        p
        for p in doc.method_paragraphs
        if categories[p.id]["major"] == "material"
        and categories[p.id].get("sub") in COMPONENT_KEYS
    ]
    cycle_method_paragraphs = [
        p
        for p in doc.method_paragraphs
        if categories[p.id]["major"] == "operating_condition"
        and categories[p.id].get("sub") == "cycle_performance"
    ]

    panels = []
    for caption in doc.captions:
        for meta in classify_cycle_caption(caption, doc.doi, gateway):
            sliced = panel_caption(caption, meta.panel_label)
            related_ids = locate_related_paragraphs(doc, meta)
            related = [doc.paragraph(pid) for pid in related_ids]
            cells = extract_cells(sliced, related, doc.doi, gateway, meta)
            warnings = []
            if not cells:
                warnings.append("no cells extracted for this panel")
            materials: list[MaterialEntry] = []
            for p in material_paragraphs:
                materials.extend(
                    extract_materials(p, categories[p.id]["sub"], cells, gateway)
                )
            conditions = extract_operating_conditions(sliced, related, cycle_method_paragraphs, gateway)
            panels.append(
                PanelExtraction(
                    meta=meta, cells=cells, materials=materials, conditions=conditions, warnings=warnings
                )
            )
    return PaperExtraction(doi=doc.doi, panels=panels, paragraph_categories=categories)


def paper_extraction_from_json(text: str) -> PaperExtraction:
    raw = json.loads(text)
    panels = []
    for p in raw["panels"]:
        meta = GraphMetadata(p["graph"]["doi"], p["graph"]["figure_id"], p["graph"]["panel_label"])
        cells = [
            CellRecord(cell_name=c["cell_name"], component_names=dict(c["components"]), graph=meta)
            for c in p["cells"]
        ]
        materials = [
            MaterialEntry(
                component=m["component"],
                material_name=m["material_name"],
                role=m["role"],
                amount=_amount_from_json(m["amount"]),
                unit=m["unit"],
                cell_name=m["cell_name"],
            )
            for m in p["materials"]
        ]
        cond = p["conditions"]

        def cv(key):
            return (
                ConditionValue(cond[key]["min"], cond[key]["max"], cond[key]["unit"], cond[key]["source"])
                if cond.get(key)
                else None
            )

        panels.append(
            PanelExtraction(
                meta=meta,
                cells=cells,
                materials=materials,
                conditions=OperatingConditions(cv("c_rate"), cv("current_density"), cv("temperature")),
                warnings=list(p.get("warnings", [])),
            )
        )
    return PaperExtraction(doi=raw["doi"], panels=panels, paragraph_categories=raw.get("paragraph_categories", {}))


def _normalize_tokens(text: str) -> list[str]:
    """Shared token normalization: casefold, split number-unit glue, strip
    hyphens and punctuation."""
    text = text.replace("-", " ")
    text = re.sub(r"(\d)([A-Za-z])", r"\1 \2", text)
    text = re.sub(r"([A-Za-z])(\d)", r"\1 \2", text)
    return [t for t in re.split(r"[^a-z0-9.]+", text.casefold()) if t]
