"""Implant canonicalization and registry reconciliation.

Extracted implant records are compared to a registry snapshot on
(patient_id, component_role, surgery_date within tolerance). Matched pairs
with equal canonicalized (manufacturer, model) count as agreement, unequal
pairs as conflict, and unmatched records as missing on one side.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import date, datetime

from .errors import ConfigError, InputFormatError

COMPONENT_ROLES = ("acetabular", "femoral", "other")

STATUS_AGREEMENT = "agreement"
STATUS_CONFLICT = "conflict"
STATUS_MISSING_IN_REGISTRY = "missing_in_registry"
STATUS_MISSING_IN_EXTRACTION = "missing_in_extraction"


@dataclass(frozen=True)
class RegistryRecord:
    patient_id: str
    surgery_date: date
    component_role: str
    manufacturer: str
    model: str

    def __post_init__(self):
        if self.component_role not in COMPONENT_ROLES:
            raise ConfigError(f"unknown component_role {self.component_role!r}")
        if not self.manufacturer or not self.model:
            raise ConfigError("manufacturer and model must be nonempty")


def canonicalize_implant(mention, catalog: dict) -> tuple[str, str]:
    """Resolve an implant mention's canonical_id to an aliased
    (manufacturer, model) pair."""
    if mention.entity_type != "implant":
        raise ConfigError(f"not an implant mention: {mention.entity_type}")
    entry = catalog.get("catalog", {}).get(mention.canonical_id)
    if entry is None:
        raise InputFormatError(
            f"canonical_id {mention.canonical_id!r} absent from implant catalog",
            context={"canonical_id": mention.canonical_id},
        )
    aliases = catalog.get("manufacturer_aliases", {})
    manufacturer = aliases.get(entry["manufacturer"], entry["manufacturer"])
    return manufacturer, entry["model"]


def canonicalize_manufacturer(name: str, catalog: dict) -> str:
    return catalog.get("manufacturer_aliases", {}).get(name, name)


@dataclass(frozen=True)
class ReconciliationEntry:
    patient_id: str
    component_role: str
    status: str
    extracted: RegistryRecord | None
    registry: RegistryRecord | None


@dataclass
class ReconciliationReport:
    entries: list[ReconciliationEntry]

    def counts(self) -> dict[str, int]:
        out = {
            STATUS_AGREEMENT: 0,
            STATUS_CONFLICT: 0,
            STATUS_MISSING_IN_REGISTRY: 0,
            STATUS_MISSING_IN_EXTRACTION: 0,
        }
        for e in self.entries:
            out[e.status] += 1
        return out

    def fractions(self) -> dict[str, float]:
        counts = self.counts()
        total = sum(counts.values())
        if total == 0:
            return {k: 0.0 for k in counts}
        return {k: v / total for k, v in counts.items()}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(
                [
                    "patient_id", "component_role", "status",
                    "extracted_date", "extracted_manufacturer", "extracted_model",
                    "registry_date", "registry_manufacturer", "registry_model",
                ]
            )
            for e in self.entries:
                ext = e.extracted
                reg = e.registry
                w.writerow(
                    [
                        e.patient_id, e.component_role, e.status,
                        ext.surgery_date.isoformat() if ext else "",
                        ext.manufacturer if ext else "",
                        ext.model if ext else "",
                        reg.surgery_date.isoformat() if reg else "",
                        reg.manufacturer if reg else "",
                        reg.model if reg else "",
                    ]
                )

    def write_summary_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"counts": self.counts(), "fractions": self.fractions()}, fh, indent=2)


def reconcile_registry(extracted, registry, date_tolerance_days: int = 30) -> ReconciliationReport:
    """Match per (patient_id, component_role) by nearest surgery date within
    tolerance, then score matched pairs on (manufacturer, model) equality."""
    groups: dict[tuple[str, str], tuple[list, list]] = {}
    for rec in extracted:
        groups.setdefault((rec.patient_id, rec.component_role), ([], []))[0].append(rec)
    for rec in registry:
        groups.setdefault((rec.patient_id, rec.component_role), ([], []))[1].append(rec)

    entries: list[ReconciliationEntry] = []
    for (pid, role), (ext_recs, reg_recs) in sorted(groups.items()):
        pairs = []
        for i, er in enumerate(ext_recs):
            for j, rr in enumerate(reg_recs):
                delta = abs((er.surgery_date - rr.surgery_date).days)
                if delta <= date_tolerance_days:
                    tie = (min(er.surgery_date, rr.surgery_date), max(er.surgery_date, rr.surgery_date))
                    pairs.append((delta, tie, i, j))
        pairs.sort(key=lambda t: (t[0], t[1]))
        used_e: set[int] = set()
        used_r: set[int] = set()
        for _delta, _tie, i, j in pairs:
            if i in used_e or j in used_r:
                continue
            used_e.add(i)
            used_r.add(j)
            er, rr = ext_recs[i], reg_recs[j]
            status = (
                STATUS_AGREEMENT
                if (er.manufacturer, er.model) == (rr.manufacturer, rr.model)
                else STATUS_CONFLICT
            )
            entries.append(ReconciliationEntry(pid, role, status, er, rr))
        for i, er in enumerate(ext_recs):
            if i not in used_e:
                entries.append(
                    ReconciliationEntry(pid, role, STATUS_MISSING_IN_REGISTRY, er, None)
                )
        for j, rr in enumerate(reg_recs):
            if j not in used_r:
                entries.append(
                    ReconciliationEntry(pid, role, STATUS_MISSING_IN_EXTRACTION, None, rr)
                )
    return ReconciliationReport(entries=entries)


def load_registry_csv(path) -> list[RegistryRecord]:
    """CSV columns: patient_id, surgery_date (ISO-8601), component_role,
    manufacturer, model."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"patient_id", "surgery_date", "component_role", "manufacturer", "model"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InputFormatError(f"{path}: expected columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                when = datetime.fromisoformat(row["surgery_date"]).date()
            except ValueError as exc:
                raise InputFormatError(
                    f"{path}:{lineno}: bad surgery_date {row['surgery_date']!r}",
                    context={"line": lineno},
                ) from exc
            out.append(
                RegistryRecord(
                    patient_id=row["patient_id"],
                    surgery_date=when,
                    component_role=row["component_role"],
                    manufacturer=row["manufacturer"],
                    model=row["model"],
                )
            )
    return out
