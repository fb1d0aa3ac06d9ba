"""Filter the cell database and encode records into fixed-width vectors.

Presence slots (one per distinct material per role), a concentration slot per
salt, a ratio slot per solvent and five numeric slots; missing numerics are
median-imputed with statistics stored inside the schema so train and test
always use identical values. Cathode active materials are categorical class
labels (mixed oxides have no clean SMILES).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataset, SchemaMismatch
from .merge import MergedCellRecord, StandardizedMaterial
from .standardize import ChemDictionary, normalize_name

CATHODE_CLASS_PATTERNS = (
    ("NCM111", ("ncm111", "nmc111")),
    ("NCM523", ("ncm523", "nmc523")),
    ("NCM622", ("ncm622", "nmc622")),
    ("NCM811", ("ncm811", "nmc811")),
    ("NCA", ("nca",)),
    ("LCO", ("lco", "licoo2")),
    ("LMO", ("lmo", "limn2o4")),
    ("LFP", ("lfp", "lifepo4")),
    ("S", ("sulfur", "sulphur", "s8", "sc", "scnt", "ssp", "skb")),
)

PRESENCE_ROLES = ("active_material", "conductive_additive", "binder", "salt", "solvent", "additive")
NUMERIC_SLOTS = (
    ("anode_thickness", "um"),
    ("active_material_loading", "mg/cm2"),
    ("electrolyte_amount", "uL/mAh"),
    ("c_rate", "C"),
    ("current_density", "mA/cm2"),
)


def classify_cathode(name: str | None) -> str | None:
    if not name:
        return None
    norm = normalize_name(name)
    for label, patterns in CATHODE_CLASS_PATTERNS:
        if any(p in norm for p in patterns):
            return label
    return None


def cathode_class(record: MergedCellRecord) -> str | None:
    label = classify_cathode(record.cell.component_names.get("cathode"))
    if label:
        return label
    for m in record.materials:
        if m.role == "active_material":
            label = classify_cathode(m.name)
            if label:
                return label
    return None


def record_separator(record: MergedCellRecord) -> str | None:
    name = record.cell.component_names.get("separator")
    if name:
        return name
    for m in record.materials:
        if m.role == "separator":
            return m.name
    return None


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

_SEPARATOR_MODIFIERS = ("doped", "modified", "coated", "mixed", "grafted", "composite")


@dataclass
class FilterCriteria:
    require_celgard: bool = True
    rt_band: tuple[float, float] = (20.0, 30.0)
    include_missing_temperature: bool = True
    cathode_classes: tuple[str, ...] | None = None


def filter_dataset(
    records: list[MergedCellRecord],
    criteria: FilterCriteria | None = None,
    dictionary: ChemDictionary | None = None,
) -> list[MergedCellRecord]:
    """Keep pure-Celgard, room-temperature records (optionally one cathode
    class subset)."""
    crit = criteria or FilterCriteria()
    dictionary = dictionary or ChemDictionary.load()
    kept = []
    for r in records:
        if crit.require_celgard:
            sep = record_separator(r)
            if not sep:
                continue
            entry = dictionary.get(sep)
            if entry is None or entry.name != "Celgard":
                continue
            low = sep.lower()
            if any(mod in low for mod in _SEPARATOR_MODIFIERS):
                continue
        temp = (r.conditions or {}).get("temperature")
        if temp is None:
            if not crit.include_missing_temperature:
                continue
        else:
            lo, hi = crit.rt_band
            if not (lo <= temp["min"] and temp["max"] <= hi):
                continue
        if crit.cathode_classes is not None and cathode_class(r) not in crit.cathode_classes:
            continue
        kept.append(r)
    return kept


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    name: str
    kind: str  # onehot_presence | concentration | ratio | numeric
    role: str
    key: str

    def to_json_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "role": self.role, "key": self.key}


@dataclass
class FeatureSchema:
    slots: list[Slot]
    imputation: dict[str, float] = field(default_factory=dict)
    version: int = 1

    @property
    def width(self) -> int:
        return len(self.slots)

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "slots": [s.to_json_dict() for s in self.slots],
            "imputation": {k: self.imputation[k] for k in sorted(self.imputation)},
        }
        return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        raw = json.loads(text)
        return cls(
            slots=[Slot(s["name"], s["kind"], s["role"], s["key"]) for s in raw["slots"]],
            imputation=dict(raw["imputation"]),
            version=raw["version"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSchema":
        return cls.from_json(Path(path).read_text("utf-8"))


def material_key(m: StandardizedMaterial) -> str:
    """Slot key for one material: cathode class for active materials, SMILES
    when resolved, otherwise the normalized raw name."""
    if m.role == "active_material":
        return classify_cathode(m.name) or normalize_name(m.name)
    return m.smiles if m.smiles else normalize_name(m.name)


def _display(m: StandardizedMaterial) -> str:
    if m.role == "active_material":
        return classify_cathode(m.name) or m.name
    return m.name


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


def _record_values(record: MergedCellRecord) -> dict:
    """Raw per-record slot inputs: material keys, salt concentrations,
    solvent fractions, numeric quantities."""
    present: dict[str, set[str]] = {role: set() for role in PRESENCE_ROLES}
    conc: dict[str, float] = {}
    ratio: dict[str, float] = {}
    numeric: dict[str, float] = {}
    for m in record.materials:
        if m.role not in PRESENCE_ROLES and m.role not in ("anode", "electrolyte_amount"):
            continue
        if m.role == "anode":
            if _finite(m.amount) and m.unit == "um" and m.amount >= 0:
                numeric["anode_thickness"] = float(m.amount)
            continue
        if m.role == "electrolyte_amount":
            if _finite(m.amount) and m.amount >= 0:
                numeric["electrolyte_amount"] = float(m.amount)
            continue
        key = material_key(m)
        present[m.role].add(key)
        if m.role == "salt" and _finite(m.amount) and m.unit == "mol/L" and m.amount >= 0:
            conc[key] = float(m.amount)
        if m.role == "solvent" and _finite(m.amount) and m.amount >= 0:
            ratio[key] = float(m.amount)
        if m.role == "active_material" and _finite(m.amount) and m.unit == "mg/cm2" and m.amount >= 0:
            numeric["active_material_loading"] = float(m.amount)
    for cond_key, slot in (("c_rate", "c_rate"), ("current_density", "current_density")):
        cv = (record.conditions or {}).get(cond_key)
        if cv and _finite(cv.get("min")) and _finite(cv.get("max")):
            numeric[slot] = (float(cv["min"]) + float(cv["max"])) / 2.0
    return {"present": present, "conc": conc, "ratio": ratio, "numeric": numeric}


def build_schema(records: list[MergedCellRecord], config=None) -> FeatureSchema:
    """Deterministic schema over the subset: role order fixed, keys sorted."""
    if not records:
        raise EmptyDataset("cannot build a schema from zero records")
    values = [_record_values(r) for r in records]
    keys_by_role: dict[str, set[str]] = {role: set() for role in PRESENCE_ROLES}
    display: dict[tuple[str, str], str] = {}
    for r, v in zip(records, values):
        for role in PRESENCE_ROLES:
            keys_by_role[role] |= v["present"][role]
        for m in r.materials:
            if m.role in PRESENCE_ROLES:
                display.setdefault((m.role, material_key(m)), _display(m))

    slots: list[Slot] = []
    for role in PRESENCE_ROLES:
        for key in sorted(keys_by_role[role]):
            label = display.get((role, key), key)
            slots.append(Slot(name=f"{role}:{label}", kind="onehot_presence", role=role, key=key))
            if role == "salt":
                slots.append(Slot(name=f"salt_conc:{label}", kind="concentration", role=role, key=key))
            if role == "solvent":
                slots.append(Slot(name=f"solvent_ratio:{label}", kind="ratio", role=role, key=key))
    for name, unit in NUMERIC_SLOTS:
        slots.append(Slot(name=f"numeric:{name}", kind="numeric", role="numeric", key=name))

    names = [s.name for s in slots]
    if len(set(names)) != len(names):
        raise SchemaMismatch("slot names collide; material display names are ambiguous")

    imputation: dict[str, float] = {}
    for slot in slots:
        if slot.kind == "onehot_presence":
            continue
        observed = []
        for v in values:
            if slot.kind == "concentration" and slot.key in v["conc"]:
                observed.append(v["conc"][slot.key])
            elif slot.kind == "ratio" and slot.key in v["ratio"]:
                observed.append(v["ratio"][slot.key])
            elif slot.kind == "numeric" and slot.key in v["numeric"]:
                observed.append(v["numeric"][slot.key])
        imputation[slot.name] = float(np.median(observed)) if observed else 0.0
    return FeatureSchema(slots=slots, imputation=imputation)


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


@dataclass
class FeatureVector:
    values: np.ndarray
    record_id: str
    target: float | None = None


def record_id(record: MergedCellRecord) -> str:
    p = record.provenance
    return f"{p['doi']}|{p['figure']}|{p['panel']}|{record.cell.cell_name}"


def encode_record(
    record: MergedCellRecord, schema: FeatureSchema, include_initial_capacity: bool = False
) -> FeatureVector:
    """Total encoding: unknown materials leave all-zero presence, missing or
    non-finite numerics fall back to the schema's imputation medians, solvent
    ratios are renormalized to sum to exactly 1."""
    v = _record_values(record)
    out = np.zeros(schema.width + (1 if include_initial_capacity else 0), dtype=np.float64)
    ratio_idx = []
    for i, slot in enumerate(schema.slots):
        if slot.kind == "onehot_presence":
            out[i] = 1.0 if slot.key in v["present"][slot.role] else 0.0
        elif slot.kind == "concentration":
            if slot.key in v["present"]["salt"]:
                val = v["conc"].get(slot.key)
                out[i] = val if val is not None else schema.imputation.get(slot.name, 0.0)
            else:
                out[i] = 0.0
        elif slot.kind == "ratio":
            if slot.key in v["present"]["solvent"]:
                val = v["ratio"].get(slot.key)
                out[i] = val if val is not None else schema.imputation.get(slot.name, 0.0)
                ratio_idx.append(i)
            else:
                out[i] = 0.0
        else:
            val = v["numeric"].get(slot.key)
            out[i] = val if val is not None else schema.imputation.get(slot.name, 0.0)
    if ratio_idx:
        total = out[ratio_idx].sum()
        if not math.isfinite(total) or total <= 0:
            out[ratio_idx] = 1.0 / len(ratio_idx)
        else:
            out[ratio_idx] = out[ratio_idx] / total
    if include_initial_capacity:
        cap = record.metrics.initial_capacity
        out[-1] = float(cap) if _finite(cap) and cap >= 0 else 0.0
    out[~np.isfinite(out)] = 0.0
    return FeatureVector(values=out, record_id=record_id(record))


TASKS = ("initial_capacity", "capacity_at_cycle", "stability")


def target_value(record: MergedCellRecord, task: str, target_cycle: int | None = None):
    """Training target for one record; None means the record is unusable for
    this task (e.g. no capacity value at the target cycle)."""
    if task == "initial_capacity":
        cap = record.metrics.initial_capacity
        return float(cap) if _finite(cap) else None
    if task == "capacity_at_cycle":
        if target_cycle is None:
            raise ValueError("capacity_at_cycle needs target_cycle")
        cap = record.metrics.capacity_at.get(target_cycle)
        return float(cap) if cap is not None and _finite(cap) else None
    if task == "stability":
        if target_cycle is None:
            raise ValueError("stability needs target_cycle")
        return 1.0 if record.metrics.stable_at.get(target_cycle) else 0.0
    raise ValueError(f"unknown task {task!r} (have {TASKS})")


def encode_dataset(
    records: list[MergedCellRecord],
    schema: FeatureSchema,
    task: str,
    target_cycle: int | None = None,
    include_initial_capacity: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Encode all usable records; rows with no target for the task are
    dropped (the models train only on cells that have the value)."""
    rows, targets, ids = [], [], []
    for r in records:
        t = target_value(r, task, target_cycle)
        if t is None:
            continue
        fv = encode_record(r, schema, include_initial_capacity)
        rows.append(fv.values)
        targets.append(t)
        ids.append(fv.record_id)
    if not rows:
        raise EmptyDataset(f"no records usable for task {task}")
    return np.vstack(rows), np.array(targets, dtype=np.float64), ids


def dataset_to_csv(X: np.ndarray, y: np.ndarray, ids: list[str], schema: FeatureSchema,
                   include_initial_capacity: bool, path: str | Path) -> None:
    """Columnar CSV: header = slot names (+ initial_capacity) + target + id."""
    header = [s.name for s in schema.slots]
    if include_initial_capacity:
        header.append("numeric:initial_capacity")
    header += ["target", "id"]
    lines = [",".join(h.replace(",", ";") for h in header)]
    for row, t, rid in zip(X, y, ids):
        cells = [repr(float(v)) for v in row] + [repr(float(t)), rid.replace(",", ";")]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")
