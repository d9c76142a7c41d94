"""Synthetic corpora, label matrices, and survival data with known truth.

Everything here is template-driven and fully determined by a seed, so each
pipeline stage has an oracle: generated notes round-trip through the real
preprocessing/tagging code, gold labels are keyed by the resulting candidate
ids, and survival/count data come from closed-form generators.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta

import numpy as np

from .corpus import RawNote, preprocess
from .defaults import default_dictionaries, default_trigger_lexicon
from .errors import ConfigError
from .extraction import extract_candidates
from .lf_lib import attribute_lf, historical_lf, keyword_lf
from .outcomes import CohortPatient, Event, SurvivalDataset
from .reconcile import RegistryRecord
from .weaksup import ABSTAIN, FALSE, TRUE, LabelMatrix


# --- label-matrix oracle -------------------------------------------------


@dataclass(frozen=True)
class LFSpec:
    lf_id: str
    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ConfigError(f"LF spec rates must lie in [0,1]: {self}")


def gen_label_matrix(n: int, lf_specs, class_prior: float, seed: int):
    """Draw Y_i ~ Bernoulli(prior); each LF votes with probability beta_j
    and agrees with Y_i with probability alpha_j, independently. Returns
    (LabelMatrix, gold labels keyed by generated candidate ids)."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    specs = list(lf_specs)
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < class_prior).astype(int)
    votes = np.full((n, len(specs)), ABSTAIN, dtype=np.int8)
    for j, spec in enumerate(specs):
        active = rng.random(n) < spec.beta
        agree = rng.random(n) < spec.alpha
        vote = np.where(agree, y, 1 - y)
        votes[active, j] = vote[active].astype(np.int8)
    ids = [f"synth-{seed}-{i:06d}" for i in range(n)]
    matrix = LabelMatrix(
        candidate_ids=ids,
        lf_ids=[s.lf_id for s in specs],
        votes=votes,
    )
    gold = {cid: int(label) for cid, label in zip(ids, y)}
    return matrix, gold


# --- corpus generator ----------------------------------------------------

# Sentence templates with {pain}/{anatomy} slots. The lexical design makes
# the weak-supervision benefit measurable: the TRUE labeling function only
# covers the "complains" flavor, but the "severe ... today" cue is shared
# with the uncovered positive flavor, so lexical features generalize; the
# neutral negatives carry no LF signal at all yet are lexically distinct.
TEMPLATE_CLASSES = {
    "pos_covered": ("Patient complains of severe {pain} in the {anatomy} today.", 1),
    "pos_uncovered": ("Exam notes severe {pain} in the {anatomy} today.", 1),
    "neg_negated": ("No {pain} in the {anatomy} on exam.", 0),
    "neg_historical": ("History of {pain} in the {anatomy} years ago.", 0),
    "neg_hypo_covered": ("Monitor for possible {pain} in the {anatomy} going forward.", 0),
    "neg_hypo_uncovered": ("Team will watch for possible {pain} in the {anatomy} going forward.", 0),
}

FILLER_SENTENCE = "Seen in clinic for routine follow up."

DEFAULT_CLASS_WEIGHTS = {
    "pos_covered": 0.22,
    "pos_uncovered": 0.13,
    "neg_negated": 0.12,
    "neg_historical": 0.08,
    "neg_hypo_covered": 0.15,
    "neg_hypo_uncovered": 0.30,
}

DEFAULT_PAIN_SLOTS = ("pain", "tenderness", "soreness", "discomfort", "aching")
DEFAULT_ANATOMY_SLOTS = ("hip", "knee", "groin", "thigh", "buttock")

DEFAULT_SYSTEMS = {
    "Zimmer VerSys": {"manufacturer": "Zimmer Biomet", "model": "VerSys", "hazard": 0.0002},
    "Depuy Pinnacle": {"manufacturer": "Depuy", "model": "Pinnacle", "hazard": 0.0004},
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_patients: int = 120
    notes_per_patient: int = 4
    class_weights: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_WEIGHTS))
    pain_slots: tuple = DEFAULT_PAIN_SLOTS
    anatomy_slots: tuple = DEFAULT_ANATOMY_SLOTS
    systems: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_SYSTEMS.items()})
    followup_days: int = 1825
    registry_drop_rate: float = 0.0
    registry_variant_rate: float = 0.0
    base_date: date = date(2008, 1, 1)

    def __post_init__(self):
        for name, w in self.class_weights.items():
            if name not in TEMPLATE_CLASSES:
                raise ConfigError(f"unknown template class {name!r}")
            if not 0.0 <= w <= 1.0:
                raise ConfigError(f"class weight for {name!r} outside [0,1]")
        for rate in (self.registry_drop_rate, self.registry_variant_rate):
            if not 0.0 <= rate <= 1.0:
                raise ConfigError("corruption rates must lie in [0,1]")


def _fill(template: str, slots: dict) -> str:
    try:
        return template.format(**slots)
    except KeyError as exc:
        raise ConfigError(f"template references unknown slot {exc}") from exc


@dataclass
class SynthCorpus:
    notes: list[RawNote]
    note_class: dict[str, str]  # note_id -> template class
    gold_relations: dict[str, int]  # candidate_id -> gold label
    candidate_note: dict[str, str]  # candidate_id -> note_id
    candidates: list
    events: list[Event]
    cohort: dict[str, CohortPatient]
    extracted_records: list[RegistryRecord]
    registry_records: list[RegistryRecord]


def benchmark_lfs():
    """The benchmark's three labeling functions: a partial-coverage TRUE
    heuristic plus two attribute-based rejections."""
    return [
        keyword_lf("pain-anatomy", ["complains"], TRUE, scope="sentence", lf_id="lf_complains"),
        attribute_lf("pain-anatomy", "negated", FALSE, lf_id="lf_negated"),
        historical_lf("pain-anatomy"),
        keyword_lf("pain-anatomy", ["monitor"], FALSE, scope="sentence", lf_id="lf_monitor"),
    ]


def gen_corpus(config: SynthConfig | None = None) -> SynthCorpus:
    """Generate notes, run the real extraction pipeline to key gold labels by
    true candidate ids, and derive event timelines and registry records."""
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    classes = sorted(config.class_weights)
    weights = np.array([config.class_weights[c] for c in classes], dtype=float)
    if weights.sum() <= 0:
        raise ConfigError("class weights must sum to a positive value")
    weights = weights / weights.sum()

    dictionaries = default_dictionaries()
    lexicon = default_trigger_lexicon()

    notes: list[RawNote] = []
    note_class: dict[str, str] = {}
    system_names = sorted(config.systems)
    patient_system: dict[str, str] = {}
    cohort: dict[str, CohortPatient] = {}
    events: list[Event] = []
    extracted: list[RegistryRecord] = []
    registry: list[RegistryRecord] = []

    for p in range(config.n_patients):
        pid = f"P{p:05d}"
        system = system_names[int(rng.integers(len(system_names)))]
        patient_system[pid] = system
        index_date = config.base_date + timedelta(days=int(rng.integers(0, 365)))
        last_contact = index_date + timedelta(days=config.followup_days)
        cohort[pid] = CohortPatient(
            patient_id=pid,
            index_date=index_date,
            last_contact_date=last_contact,
            covariates={"implant_system": system},
        )
        # Event timeline from the per-system exponential hazard.
        hazard = float(config.systems[system]["hazard"])
        t = rng.exponential(1.0 / hazard) if hazard > 0 else float("inf")
        if t < config.followup_days:
            events.append(
                Event(
                    patient_id=pid,
                    event_class="revision",
                    timestamp=index_date + timedelta(days=int(t) + 1),
                    source="text",
                    provenance="synth",
                )
            )
        # Registry truth plus configured corruption.
        info = config.systems[system]
        truth = RegistryRecord(
            patient_id=pid,
            surgery_date=index_date,
            component_role="acetabular",
            manufacturer=info["manufacturer"],
            model=info["model"],
        )
        extracted.append(truth)
        if rng.random() < config.registry_drop_rate:
            pass  # record dropped from the registry snapshot
        elif rng.random() < config.registry_variant_rate:
            registry.append(
                RegistryRecord(
                    patient_id=pid,
                    surgery_date=index_date,
                    component_role="acetabular",
                    manufacturer=info["manufacturer"],
                    model=info["model"] + " II",
                )
            )
        else:
            registry.append(truth)

        for v in range(config.notes_per_patient):
            note_id = f"{pid}-N{v}"
            cls = classes[int(rng.choice(len(classes), p=weights))]
            template, _gold = TEMPLATE_CLASSES[cls]
            slots = {
                "pain": config.pain_slots[int(rng.integers(len(config.pain_slots)))],
                "anatomy": config.anatomy_slots[int(rng.integers(len(config.anatomy_slots)))],
            }
            text = FILLER_SENTENCE + " " + _fill(template, slots)
            notes.append(
                RawNote(
                    note_id=note_id,
                    patient_id=pid,
                    note_datetime=datetime.combine(
                        index_date + timedelta(days=30 * (v + 1)), datetime.min.time()
                    ),
                    note_type="progress",
                    text=text,
                )
            )
            note_class[note_id] = cls

    gold: dict[str, int] = {}
    candidate_note: dict[str, str] = {}
    candidates = []
    for note in notes:
        doc = preprocess(note)
        for cand in extract_candidates(doc, dictionaries, lexicon, relation_types=("pain-anatomy",)):
            cls = note_class[note.note_id]
            gold[cand.candidate_id] = TEMPLATE_CLASSES[cls][1]
            candidate_note[cand.candidate_id] = note.note_id
            candidates.append(cand)

    return SynthCorpus(
        notes=notes,
        note_class=note_class,
        gold_relations=gold,
        candidate_note=candidate_note,
        candidates=candidates,
        events=events,
        cohort=cohort,
        extracted_records=extracted,
        registry_records=registry,
    )


def write_corpus(corpus: SynthCorpus, outdir) -> dict[str, str]:
    """Write notes.jsonl, gold_relations.csv, gold_events.csv, registry.csv,
    and extracted_implants.csv; returns the path map."""
    import os

    paths = {
        "notes": os.path.join(outdir, "notes.jsonl"),
        "gold_relations": os.path.join(outdir, "gold_relations.csv"),
        "gold_events": os.path.join(outdir, "gold_events.csv"),
        "registry": os.path.join(outdir, "registry.csv"),
        "extracted_implants": os.path.join(outdir, "extracted_implants.csv"),
    }
    with open(paths["notes"], "w", encoding="utf-8") as fh:
        for note in corpus.notes:
            fh.write(
                json.dumps(
                    {
                        "note_id": note.note_id,
                        "patient_id": note.patient_id,
                        "note_datetime": note.note_datetime.isoformat(),
                        "note_type": note.note_type,
                        "text": note.text,
                    }
                )
                + "\n"
            )
    with open(paths["gold_relations"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["candidate_id", "label", "note_id"])
        for cid in sorted(corpus.gold_relations):
            w.writerow([cid, corpus.gold_relations[cid], corpus.candidate_note[cid]])
    with open(paths["gold_events"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "class", "date", "source", "provenance"])
        for e in corpus.events:
            w.writerow([e.patient_id, e.event_class, e.timestamp.isoformat(), e.source, e.provenance])
    for key, records in (("registry", corpus.registry_records),
                         ("extracted_implants", corpus.extracted_records)):
        with open(paths[key], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["patient_id", "surgery_date", "component_role", "manufacturer", "model"])
            for r in records:
                w.writerow([r.patient_id, r.surgery_date.isoformat(), r.component_role,
                            r.manufacturer, r.model])
    return paths


def gold_relations_from_csv(path) -> dict[str, int]:
    out: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["candidate_id"]] = int(row["label"])
    return out


# --- survival-data oracle ------------------------------------------------


def gen_survival_dataset(
    n: int,
    hazard_ratio: float,
    seed: int,
    baseline_hazard: float = 0.001,
    censor_days: float = 2000.0,
) -> SurvivalDataset:
    """Two equal groups with exponential event times; group B's hazard is
    baseline * hazard_ratio. Administrative censoring at ``censor_days``."""
    if n < 2:
        raise ConfigError("need at least two subjects")
    rng = np.random.default_rng(seed)
    group = (np.arange(n) % 2).astype(float)  # 0 = A, 1 = B
    hazard = baseline_hazard * hazard_ratio**group
    raw = rng.exponential(1.0 / hazard)
    times = np.minimum(raw, censor_days)
    events = (raw <= censor_days).astype(int)
    times = np.maximum(times, 1.0)
    return SurvivalDataset(
        subject_ids=[f"S{i:05d}" for i in range(n)],
        times=times,
        events=events,
        X=group.reshape(-1, 1),
        columns=["implant_system=B"],
        groups=["B" if g else "A" for g in group],
    )


def gen_nb_counts(n: int, beta, theta: float, seed: int):
    """Counts from an NB2 model with a single standard-normal covariate:
    log mu = beta[0] + beta[1] * x. Returns (counts, x)."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    mu = np.exp(beta[0] + beta[1] * x)
    lam = rng.gamma(shape=theta, scale=mu / theta)
    y = rng.poisson(lam)
    return y, x
