"""Match graph-series labels to text-extracted cells and assemble the
battery-cell database.

Label matching runs either through the gateway (schema-validated) or a
deterministic token-overlap scorer. Assembly standardizes materials and
conditions, derives cycle metrics and emits one JSON line per merged cell;
per-record failures are logged and skipped, never fatal.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import GraphMetadata
from .digitizer import CycleSeries
from .errors import SeriesTooShort, UnknownMaterial
from .extraction import (
    CellRecord,
    ConditionValue,
    MaterialEntry,
    OperatingConditions,
    PanelExtraction,
    PaperExtraction,
    _normalize_tokens,
)
from .gateway import Gateway, load_template
from .standardize import (
    ChemDictionary,
    CycleMetrics,
    convert_concentration,
    derive_cycle_metrics,
    normalize_quantity,
)


@dataclass
class MergeConfig:
    match_threshold: float = 0.6
    metric_targets: tuple[int, ...] = (100, 200, 300)
    required_resolved_components: tuple[str, ...] = ("separator",)
    activation_window: int = 0


# ---------------------------------------------------------------------------
# label matching
# ---------------------------------------------------------------------------


def token_similarity(a: str, b: str) -> float:
    """Jaccard overlap of normalized tokens ("2M LiFSI" ~ "2 M LiFSI in DME")."""
    ta, tb = set(_normalize_tokens(a)), set(_normalize_tokens(b))
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def match_labels(
    cells: list[CellRecord] | list[str],
    labels: list[str],
    gateway: Gateway | None = None,
    threshold: float = 0.6,
) -> dict[str, str | None]:
    """Injective label -> cell assignment; unmatched labels map to None."""
    cell_names = [c.cell_name if isinstance(c, CellRecord) else c for c in cells]
    if gateway is not None:
        return _match_labels_gateway(cell_names, labels, gateway)
    scored = []
    for li, label in enumerate(labels):
        for ci, name in enumerate(cell_names):
            score = token_similarity(label, name)
            if score >= threshold:
                scored.append((-score, li, ci))
    scored.sort()
    assignment: dict[str, str | None] = {label: None for label in labels}
    taken: set[int] = set()
    done: set[int] = set()
    for neg, li, ci in scored:
        if li in done or ci in taken:
            continue
        assignment[labels[li]] = cell_names[ci]
        done.add(li)
        taken.add(ci)
    return assignment


def _match_labels_gateway(cell_names: list[str], labels: list[str], gateway: Gateway) -> dict[str, str | None]:
    response = gateway.ask(
        load_template("label_match"),
        {"cells": "; ".join(cell_names), "labels": "; ".join(labels)},
    )
    assignment: dict[str, str | None] = {label: None for label in labels}
    taken: set[str] = set()
    for item in response["assignments"]:
        label, cell = item["label"], item["cell_name"]
        if label not in assignment or cell is None:
            continue
        if cell in cell_names and cell not in taken:
            assignment[label] = cell
            taken.add(cell)
    return assignment


# ---------------------------------------------------------------------------
# standardization of one cell's materials and conditions
# ---------------------------------------------------------------------------


@dataclass
class StandardizedMaterial:
    role: str
    component: str
    name: str
    smiles: str | None
    amount: float | tuple[float, float] | None
    unit: str | None
    approximate: bool = False

    def to_json_dict(self) -> dict:
        amount = {"min": self.amount[0], "max": self.amount[1]} if isinstance(self.amount, tuple) else self.amount
        return {
            "role": self.role,
            "component": self.component,
            "name": self.name,
            "smiles": self.smiles,
            "amount": amount,
            "unit": self.unit,
            "approximate": self.approximate,
        }


_ROLE_QUANTITY_KIND = {
    "anode": "thickness",
    "active_material": "loading",
    "electrolyte_amount": "electrolyte_amount",
}


def _mixture_density(solvents: list[tuple[float, float | None]]) -> float | None:
    """Volume-weighted density of the solvent mixture; None when unknown."""
    known = [(frac, rho) for frac, rho in solvents if rho is not None]
    if not known:
        return None
    total = sum(frac for frac, _ in known)
    if total <= 0:
        return None
    return sum(frac * rho for frac, rho in known) / total


def standardize_materials(
    entries: list[MaterialEntry], dictionary: ChemDictionary
) -> tuple[list[StandardizedMaterial], list[str]]:
    """Resolve names to SMILES and quantities to canonical units.

    Unknown names keep their text with smiles=None; salt concentrations in
    molality or wt% use the volume-weighted solvent density (flagged
    approximate).
    """
    notes: list[str] = []
    solvents = [e for e in entries if e.role == "solvent"]
    fractions: dict[int, float] = {}
    numeric = [(i, e) for i, e in enumerate(solvents) if isinstance(e.amount, (int, float))]
    total = sum(e.amount for _, e in numeric)
    if total > 0:
        fractions = {i: e.amount / total for i, e in numeric}
    densities = []
    for i, e in enumerate(solvents):
        entry = dictionary.get(e.material_name)
        densities.append((fractions.get(i, 0.0), entry.density if entry else None))
    solution_density = _mixture_density(densities)

    out: list[StandardizedMaterial] = []
    solvent_index = 0
    for e in entries:
        entry = dictionary.get(e.material_name)
        smiles = entry.smiles if entry else None
        if entry is None:
            notes.append(f"unknown material {e.material_name!r}")
        amount, unit, approx = e.amount, e.unit, False
        if e.role == "salt" and isinstance(amount, (int, float)) and unit is not None:
            if unit in ("M", "mol/L", "mol/l"):
                unit = "mol/L"
            elif entry is not None and solution_density is not None and unit in ("m", "mol/kg", "wt%"):
                amount = convert_concentration(amount, unit, entry.molecular_weight, solution_density)
                unit = "mol/L"
                approx = True  # solvent-mixture density stands in for solution density
            else:
                notes.append(f"salt {e.material_name!r}: cannot convert {unit!r} without density")
        elif e.role == "solvent":
            if fractions:
                amount = fractions.get(solvent_index)
                unit = "fraction"
            solvent_index += 1
        elif e.role in _ROLE_QUANTITY_KIND and isinstance(amount, (int, float)) and unit is not None:
            kind = _ROLE_QUANTITY_KIND[e.role]
            try:
                q = normalize_quantity(amount, unit, kind)
                amount, unit = q.value, q.unit
            except Exception as exc:  # noqa: BLE001 - unit left verbatim, noted
                notes.append(f"{e.role} {e.material_name!r}: {exc}")
        out.append(
            StandardizedMaterial(
                role=e.role,
                component=e.component,
                name=e.material_name,
                smiles=smiles,
                amount=amount,
                unit=unit,
                approximate=approx,
            )
        )
    return out, notes


def _standardize_condition(cv: ConditionValue | None, kind: str, notes: list[str]) -> dict | None:
    if cv is None:
        return None
    try:
        lo = normalize_quantity(cv.min, cv.unit, kind)
        hi = normalize_quantity(cv.max, cv.unit, kind)
        return {"min": lo.value, "max": hi.value, "unit": lo.unit, "source": cv.source}
    except Exception as exc:  # noqa: BLE001
        notes.append(f"{kind}: {exc}")
        return {"min": cv.min, "max": cv.max, "unit": cv.unit, "source": cv.source}


def standardize_conditions(conditions: OperatingConditions) -> tuple[dict, list[str]]:
    notes: list[str] = []
    return {
        "c_rate": _standardize_condition(conditions.c_rate, "c_rate", notes),
        "current_density": _standardize_condition(conditions.current_density, "current_density", notes),
        "temperature": _standardize_condition(conditions.temperature, "temperature", notes),
    }, notes


# ---------------------------------------------------------------------------
# merged records
# ---------------------------------------------------------------------------


@dataclass
class MergedCellRecord:
    cell: CellRecord
    materials: list[StandardizedMaterial]
    conditions: dict
    series: CycleSeries
    metrics: CycleMetrics
    provenance: dict

    def to_json_dict(self) -> dict:
        return {
            "cell": self.cell.to_json_dict(),
            "materials": [m.to_json_dict() for m in self.materials],
            "conditions": self.conditions,
            "series": {
                "label": self.series.label,
                "axis": self.series.axis,
                "points": [[int(c), float(v)] for c, v in self.series.points],
            },
            "metrics": self.metrics.to_json_dict(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "MergedCellRecord":
        prov = raw["provenance"]
        meta = GraphMetadata(prov["doi"], prov["figure"], prov["panel"])
        cell = CellRecord(
            cell_name=raw["cell"]["cell_name"], component_names=dict(raw["cell"]["components"]), graph=meta
        )
        materials = [
            StandardizedMaterial(
                role=m["role"],
                component=m["component"],
                name=m["name"],
                smiles=m["smiles"],
                amount=(m["amount"]["min"], m["amount"]["max"]) if isinstance(m["amount"], dict) else m["amount"],
                unit=m["unit"],
                approximate=m["approximate"],
            )
            for m in raw["materials"]
        ]
        series = CycleSeries(
            label=raw["series"]["label"],
            points=tuple((int(c), float(v)) for c, v in raw["series"]["points"]),
            axis=raw["series"]["axis"],
        )
        metrics = CycleMetrics(
            initial_capacity=raw["metrics"]["initial_capacity"],
            capacity_at={int(k): v for k, v in raw["metrics"]["capacity_at"].items()},
            max_cycle=raw["metrics"]["max_cycle"],
            eol_cycle=raw["metrics"]["eol_cycle"],
            stable_at={int(k): v for k, v in raw["metrics"]["stable_at"].items()},
        )
        return cls(cell=cell, materials=materials, conditions=raw["conditions"], series=series, metrics=metrics, provenance=prov)


def _sha(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def assemble_database(
    extractions: list[PaperExtraction],
    digitized: list[tuple[GraphMetadata, list[CycleSeries]]],
    dictionary: ChemDictionary,
    config: MergeConfig | None = None,
    gateway: Gateway | None = None,
) -> tuple[list[MergedCellRecord], list[dict]]:
    """Merge per-paper extractions with per-graph digitizations.

    Returns (records, log); the log collects unmatched labels/cells and
    dropped records with reasons. Output order is deterministic:
    (doi, figure, panel, cell name).
    """
    cfg = config or MergeConfig()
    log: list[dict] = []
    by_key: dict[tuple, tuple[GraphMetadata, list[CycleSeries]]] = {}
    for meta, series_list in digitized:
        by_key[meta.key()] = (meta, series_list)

    records: list[MergedCellRecord] = []
    for paper in extractions:
        for panel in paper.panels:
            key = panel.meta.key()
            entry = by_key.get(key)
            if entry is None:
                log.append({"event": "missing_digitization", "key": list(key)})
                continue
            _, series_list = entry
            if not panel.cells or not series_list:
                log.append({"event": "empty_panel", "key": list(key),
                            "cells": len(panel.cells), "series": len(series_list)})
                continue
            labels = [s.label for s in series_list]
            assignment = match_labels(panel.cells, labels, gateway=gateway, threshold=cfg.match_threshold)
            series_by_label = {s.label: s for s in series_list}
            matched_cells = set()
            for label in labels:
                cell_name = assignment.get(label)
                if cell_name is None:
                    log.append({"event": "unmatched_label", "key": list(key), "label": label})
                    continue
                matched_cells.add(cell_name)
                cell = next(c for c in panel.cells if c.cell_name == cell_name)
                record, reason = _build_record(cell, label, series_by_label[label], panel, dictionary, cfg)
                if record is None:
                    log.append({"event": "dropped_record", "key": list(key), "cell": cell_name, "reason": reason})
                else:
                    records.append(record)
            for cell in panel.cells:
                if cell.cell_name not in matched_cells:
                    log.append({"event": "unmatched_cell", "key": list(key), "cell": cell.cell_name})
    records.sort(key=lambda r: (r.provenance["doi"], r.provenance["figure"], r.provenance["panel"], r.cell.cell_name))
    return records, log


def _build_record(
    cell: CellRecord,
    label: str,
    series: CycleSeries,
    panel: PanelExtraction,
    dictionary: ChemDictionary,
    cfg: MergeConfig,
) -> tuple[MergedCellRecord | None, str | None]:
    for component in cfg.required_resolved_components:
        name = cell.component_names.get(component)
        if name is not None and dictionary.get(name) is None:
            return None, f"required component {component} ({name!r}) not in dictionary"
    own = [m for m in panel.materials if m.cell_name in (None, cell.cell_name)]
    materials, notes = standardize_materials(own, dictionary)
    conditions, cond_notes = standardize_conditions(panel.conditions)
    try:
        metrics = derive_cycle_metrics(series, list(cfg.metric_targets), cfg.activation_window)
    except SeriesTooShort as exc:
        return None, f"series too short: {exc}"
    provenance = {
        "doi": panel.meta.doi,
        "figure": panel.meta.figure_id,
        "panel": panel.meta.panel_label,
        "series_label": label,
        "text_hash": _sha(panel.to_json_dict()),
        "graph_hash": _sha([[int(c), float(v)] for c, v in series.points]),
        "notes": notes + cond_notes,
    }
    return (
        MergedCellRecord(
            cell=cell,
            materials=materials,
            conditions=conditions,
            series=series,
            metrics=metrics,
            provenance=provenance,
        ),
        None,
    )


# ---------------------------------------------------------------------------
# database file I/O (JSON lines, one record per line)
# ---------------------------------------------------------------------------


def write_database(records: list[MergedCellRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_database(path: str | Path) -> list[MergedCellRecord]:
    records = []
    for line in Path(path).read_text("utf-8").splitlines():
        if line.strip():
            records.append(MergedCellRecord.from_json_dict(json.loads(line)))
    return records
