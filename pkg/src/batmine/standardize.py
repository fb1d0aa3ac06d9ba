"""Canonical names, canonical units and derived cycle metrics.

Material names resolve to SMILES through a curated dictionary asset;
concentrations are harmonized to mol/L; other quantities are mapped onto one
canonical unit per kind. Cycle metrics (initial capacity, capacity at target
cycles, EOL, stability) are derived from digitized series.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import (
    DimensionMismatch,
    InvalidConcentration,
    MissingDensity,
    NegativeValue,
    SeriesTooShort,
    UnknownMaterial,
    UnknownUnit,
)

# ---------------------------------------------------------------------------
# chemical dictionary
# ---------------------------------------------------------------------------

_SUBSCRIPTS = str.maketrans("₀₁₂₃₄₅₆₇₈₉⁰¹²³⁴⁵⁶⁷⁸⁹", "01234567890123456789")


def normalize_name(name: str) -> str:
    """Lookup key: casefold, map sub/superscript digits, strip punctuation."""
    return re.sub(r"[^a-z0-9]", "", name.translate(_SUBSCRIPTS).casefold())


_SMILES_CHARS = re.compile(r"^[A-Za-z0-9@+\-\[\]()=#$%*./\\]+$")


def smiles_grammar_ok(smiles: str) -> bool:
    """Minimal well-formedness: allowed characters, balanced brackets and
    paired ring-closure digits (digits inside [] are not ring bonds)."""
    if not smiles or not _SMILES_CHARS.match(smiles):
        return False
    depth_round = depth_square = 0
    ring_counts: dict[str, int] = {}
    in_bracket = False
    for ch in smiles:
        if ch == "[":
            depth_square += 1
            in_bracket = True
        elif ch == "]":
            depth_square -= 1
            in_bracket = False
        elif ch == "(":
            depth_round += 1
        elif ch == ")":
            depth_round -= 1
        elif ch.isdigit() and not in_bracket:
            ring_counts[ch] = ring_counts.get(ch, 0) + 1
        if depth_round < 0 or depth_square < 0:
            return False
    if depth_round or depth_square:
        return False
    return all(n % 2 == 0 for n in ring_counts.values())


@dataclass(frozen=True)
class ChemEntry:
    name: str
    smiles: str
    molecular_weight: float  # g/mol
    density: float | None = None  # g/mL
    synonyms: tuple[str, ...] = ()
    kind: str = ""  # salt | solvent | binder | conductive_additive | separator | metal | additive


class ChemDictionary:
    """Name -> (SMILES, MW, density) lookup with synonym resolution."""

    def __init__(self, entries: list[ChemEntry]):
        self.entries = list(entries)
        self._index: dict[str, ChemEntry] = {}
        for e in self.entries:
            if not smiles_grammar_ok(e.smiles):
                raise ValueError(f"bad SMILES for {e.name!r}: {e.smiles!r}")
            if e.molecular_weight <= 0:
                raise ValueError(f"non-positive molecular weight for {e.name!r}")
            for key in (e.name, *e.synonyms):
                norm = normalize_name(key)
                if norm in self._index and self._index[norm] is not e:
                    raise ValueError(f"name collision on {key!r}")
                self._index[norm] = e

    def lookup(self, name: str) -> ChemEntry:
        entry = self._index.get(normalize_name(name))
        if entry is None:
            raise UnknownMaterial(name)
        return entry

    def get(self, name: str) -> ChemEntry | None:
        return self._index.get(normalize_name(name))

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ChemDictionary":
        if path is None:
            text = resources.files("batmine.assets").joinpath("chem_dictionary.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        raw = json.loads(text)
        entries = [
            ChemEntry(
                name=e["name"],
                smiles=e["smiles"],
                molecular_weight=float(e["molecular_weight"]),
                density=float(e["density"]) if e.get("density") is not None else None,
                synonyms=tuple(e.get("synonyms", ())),
                kind=e.get("kind", ""),
            )
            for e in raw["entries"]
        ]
        return cls(entries)


def name_to_smiles(name: str, dictionary: ChemDictionary) -> str:
    """Resolve a material name to its SMILES; raises :class:`UnknownMaterial`."""
    return dictionary.lookup(name).smiles


# ---------------------------------------------------------------------------
# concentration conversions (solution density rho in g/mL, M in g/mol)
# ---------------------------------------------------------------------------


def molality_to_molarity(b: float, molar_mass: float, density: float) -> float:
    """mol/kg solvent -> mol/L solution: c = 1000*rho*b / (1000 + b*M)."""
    return 1000.0 * density * b / (1000.0 + b * molar_mass)


def molarity_to_molality(c: float, molar_mass: float, density: float) -> float:
    denom = 1000.0 * density - c * molar_mass
    if denom <= 0:
        raise InvalidConcentration(f"{c} mol/L exceeds the solution mass at density {density}")
    return 1000.0 * c / denom


def wt_percent_to_molarity(w: float, molar_mass: float, density: float) -> float:
    """mass % -> mol/L solution: c = 10*rho*w / M."""
    if w >= 100.0:
        raise InvalidConcentration(f"wt% must be < 100, got {w}")
    return 10.0 * density * w / molar_mass


def molarity_to_wt_percent(c: float, molar_mass: float, density: float) -> float:
    return c * molar_mass / (10.0 * density)


def convert_concentration(
    value: float, unit: str, salt_mw: float, density: float | None = None
) -> float:
    """Convert a salt concentration to mol/L.

    Molality and mass-percent inputs need the solution density; molarity is
    returned unchanged.
    """
    if value < 0:
        raise NegativeValue(f"concentration {value} < 0")
    key = unit.strip()
    if key in ("mol/L", "mol/l", "M"):
        return float(value)
    if key in ("mol/kg", "m"):
        if density is None:
            raise MissingDensity("molality -> molarity needs the solution density")
        return molality_to_molarity(value, salt_mw, density)
    if key in ("wt%", "wt.%", "wt %"):
        if density is None:
            raise MissingDensity("wt% -> molarity needs the solution density")
        return wt_percent_to_molarity(value, salt_mw, density)
    raise UnknownUnit(f"concentration unit {unit!r}")


# ---------------------------------------------------------------------------
# general quantity normalization
# ---------------------------------------------------------------------------

QUANTITY_KINDS = (
    "concentration",
    "solvent_ratio",
    "thickness",
    "temperature",
    "current_density",
    "loading",
    "c_rate",
    "electrolyte_amount",
)

CANONICAL_UNITS = {
    "concentration": "mol/L",
    "solvent_ratio": "fraction",
    "thickness": "um",
    "temperature": "degC",
    "current_density": "mA/cm2",
    "loading": "mg/cm2",
    "c_rate": "C",
    "electrolyte_amount": "uL/mAh",
}

# accepted units per kind, as (scale, offset) applied value*scale + offset
_UNIT_TABLE: dict[str, dict[str, tuple[float, float]]] = {
    "concentration": {"mol/L": (1.0, 0.0), "M": (1.0, 0.0), "mM": (1e-3, 0.0), "mmol/L": (1e-3, 0.0)},
    "temperature": {"degC": (1.0, 0.0), "C": (1.0, 0.0), "K": (1.0, -273.15)},
    "thickness": {
        "um": (1.0, 0.0),
        "mm": (1000.0, 0.0),
        "cm": (10000.0, 0.0),
        "m": (1e6, 0.0),
        "nm": (1e-3, 0.0),
    },
    "current_density": {
        "mA/cm2": (1.0, 0.0),
        "A/m2": (0.1, 0.0),
        "uA/cm2": (1e-3, 0.0),
        "A/cm2": (1000.0, 0.0),
        "mA/mm2": (100.0, 0.0),
    },
    "loading": {"mg/cm2": (1.0, 0.0), "g/cm2": (1000.0, 0.0), "ug/cm2": (1e-3, 0.0)},
    "c_rate": {"C": (1.0, 0.0)},
    "electrolyte_amount": {"uL/mAh": (1.0, 0.0), "mL/Ah": (1.0, 0.0), "uL/mg": (1.0, 0.0)},
}

_UNIT_ALIASES = {
    "°c": "degC",
    "degc": "degC",
    "℃": "degC",
    "k": "K",
    "µm": "um",
    "μm": "um",
    "micron": "um",
    "ma/cm2": "mA/cm2",
    "ma cm-2": "mA/cm2",
    "ma/cm²": "mA/cm2",
    "ma cm⁻²": "mA/cm2",
    "a/m2": "A/m2",
    "a/m²": "A/m2",
    "ua/cm2": "uA/cm2",
    "µa/cm2": "uA/cm2",
    "μa/cm2": "uA/cm2",
    "μa/cm²": "uA/cm2",
    "a/cm2": "A/cm2",
    "a/cm²": "A/cm2",
    "ma/mm2": "mA/mm2",
    "mg/cm2": "mg/cm2",
    "mg cm-2": "mg/cm2",
    "mg/cm²": "mg/cm2",
    "mg cm⁻²": "mg/cm2",
    "g/cm2": "g/cm2",
    "g/cm²": "g/cm2",
    "ug/cm2": "ug/cm2",
    "µg/cm2": "ug/cm2",
    "μg/cm2": "ug/cm2",
    "ul/mah": "uL/mAh",
    "µl/mah": "uL/mAh",
    "μl/mah": "uL/mAh",
    "ml/ah": "mL/Ah",
    "ul/mg": "uL/mg",
    "µl/mg": "uL/mg",
    "μl/mg": "uL/mg",
    "mol/l": "mol/L",
    "mmol/l": "mmol/L",
}


def _canonical_unit_key(unit: str, kind: str) -> str:
    raw = unit.strip()
    table = _UNIT_TABLE[kind]
    if raw in table:
        return raw
    alias = _UNIT_ALIASES.get(re.sub(r"\s+", " ", raw.lower()))
    if alias is not None and alias in table:
        return alias
    for other_kind, other_table in _UNIT_TABLE.items():
        if other_kind == kind:
            continue
        alias2 = alias if alias is not None else raw
        if alias2 in other_table or raw in other_table:
            raise DimensionMismatch(f"unit {unit!r} belongs to {other_kind}, not {kind}")
    raise UnknownUnit(f"{unit!r} not accepted for {kind}")


@dataclass(frozen=True)
class Quantity:
    kind: str
    value: float | tuple[float, ...]
    unit: str

    def __post_init__(self):
        if self.kind not in QUANTITY_KINDS:
            raise ValueError(f"unknown quantity kind {self.kind!r}")


def normalize_quantity(value, unit: str, kind: str) -> Quantity:
    """Map a raw (value, unit) onto the canonical unit for its kind.

    Solvent ratios take a sequence of parts and come back as fractions
    summing to 1. Idempotent on canonical input.
    """
    if kind not in QUANTITY_KINDS:
        raise ValueError(f"unknown quantity kind {kind!r}")
    if kind == "solvent_ratio":
        if unit.strip() not in ("v/v", "w/w", "fraction", "mol/mol"):
            raise UnknownUnit(f"{unit!r} not accepted for solvent_ratio")
        parts = [float(p) for p in (value if isinstance(value, (list, tuple)) else [value])]
        if any(p < 0 for p in parts):
            raise NegativeValue("ratio parts must be non-negative")
        total = sum(parts)
        if total <= 0:
            raise NegativeValue("ratio parts sum to zero")
        return Quantity(kind, tuple(p / total for p in parts), CANONICAL_UNITS[kind])
    v = float(value)
    if not math.isfinite(v):
        raise NegativeValue(f"non-finite value {value!r}")
    if kind != "temperature" and v < 0:
        raise NegativeValue(f"{kind} {v} < 0")
    key = _canonical_unit_key(unit, kind)
    scale, offset = _UNIT_TABLE[kind][key]
    return Quantity(kind, v * scale + offset, CANONICAL_UNITS[kind])


# ---------------------------------------------------------------------------
# cycle metrics
# ---------------------------------------------------------------------------

EOL_FRACTION = 0.8
INTERPOLATION_WINDOW = 5


@dataclass(frozen=True)
class CycleMetrics:
    initial_capacity: float
    capacity_at: dict[int, float | None] = field(default_factory=dict)
    max_cycle: int = 0
    eol_cycle: int | None = None
    stable_at: dict[int, bool] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "initial_capacity": self.initial_capacity,
            "capacity_at": {str(k): v for k, v in sorted(self.capacity_at.items())},
            "max_cycle": self.max_cycle,
            "eol_cycle": self.eol_cycle,
            "stable_at": {str(k): v for k, v in sorted(self.stable_at.items())},
        }


def _as_points(series) -> list[tuple[int, float]]:
    points = list(series.points) if hasattr(series, "points") else [tuple(p) for p in series]
    if len(points) < 2:
        raise SeriesTooShort(f"{len(points)} point(s)")
    return [(int(c), float(v)) for c, v in points]


def derive_cycle_metrics(series, targets: list[int], activation_window: int = 0) -> CycleMetrics:
    """Initial capacity, capacity@N, EOL and stability labels for one series.

    EOL is the first recorded cycle whose capacity drops below 80% of the
    initial capacity (a capacity of exactly 80% is still alive). Stability at
    N requires the series to reach cycle N without EOL having occurred at or
    before N; a series ending before N is unstable. capacity@N interpolates
    linearly only when both bracketing points are within 5 cycles of N.

    ``activation_window`` > 0 takes the initial capacity as the maximum over
    the first that many cycles instead of the first recorded point.
    """
    points = _as_points(series)
    if activation_window > 0:
        window = [p for p in points if p[0] <= points[0][0] + activation_window - 1] or points[:1]
        initial_cycle, initial = max(window, key=lambda p: p[1])
    else:
        initial_cycle, initial = points[0]
    max_cycle = points[-1][0]
    threshold = EOL_FRACTION * initial

    eol = None
    for c, v in points:
        if c >= initial_cycle and v < threshold:
            eol = c
            break

    capacity_at: dict[int, float | None] = {}
    stable_at: dict[int, bool] = {}
    for target in targets:
        capacity_at[target] = _capacity_at(points, target)
        stable_at[target] = max_cycle >= target and (eol is None or eol > target)
    return CycleMetrics(
        initial_capacity=initial,
        capacity_at=capacity_at,
        max_cycle=max_cycle,
        eol_cycle=eol,
        stable_at=stable_at,
    )


def _capacity_at(points: list[tuple[int, float]], target: int) -> float | None:
    prev = None
    for c, v in points:
        if c == target:
            return v
        if c < target:
            prev = (c, v)

        else:
            if prev is None:
                return None
            if target - prev[0] <= INTERPOLATION_WINDOW and c - target <= INTERPOLATION_WINDOW:
                span = c - prev[0]
                return prev[1] + (v - prev[1]) * (target - prev[0]) / span
            return None
    return None
