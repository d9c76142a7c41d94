"""Dictionary tagging, ConText-style attribute detection, and candidate generation.

Entities are tagged by longest-match dictionary lookup over tokens. Attributes
(negated / historical / hypothetical) come from three sources that union:
trigger scopes, section membership, and in-sentence past date mentions.
Relation candidates are the typed Cartesian product of mentions in a sentence.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .corpus import DateMention, Document, SectionSpan, Sentence, tokenize
from .errors import ConfigError, InputFormatError

ENTITY_TYPES = ("implant", "complication", "pain", "anatomy")

COMPLICATION_SUBCATEGORIES = (
    "revision",
    "component_wear",
    "mechanical_failure",
    "particle_disease",
    "radiographic_abnormality",
    "infection",
)

RELATION_TYPES = ("pain-anatomy", "implant-complication")

# arg1 type, arg2 type per relation
RELATION_ARG_TYPES = {
    "pain-anatomy": ("pain", "anatomy"),
    "implant-complication": ("complication", "implant"),
}

# Laterality / anatomical-position modifiers absorbed into anatomy spans.
POSITION_MODIFIERS = frozenset(
    {
        "left", "right", "bilateral", "lateral", "medial",
        "proximal", "distal", "anterior", "posterior",
        "r", "l", "rt", "lt",
    }
)

ATTR_NEGATED = "negated"
ATTR_HISTORICAL = "historical"
ATTR_HYPOTHETICAL = "hypothetical"


def _norm_term(term: str) -> str:
    return " ".join(t.text.lower() for t in tokenize(term))


@dataclass(frozen=True)
class DictEntry:
    canonical_id: str
    entity_type: str
    subcategory: str | None
    source_line: int


@dataclass(frozen=True)
class ExpansionOptions:
    punctuation_stripped: bool = True
    pluralize: bool = True


@dataclass
class Dictionary:
    entries: dict[str, DictEntry]
    source: str = ""
    version: str = ""

    @property
    def max_term_tokens(self) -> int:
        return max((len(k.split()) for k in self.entries), default=0)


def load_dictionary(path, expansion: ExpansionOptions | None = None) -> Dictionary:
    """Load a tab-separated dictionary: term, canonical_id, entity_type,
    subcategory (optional, complications only).

    With expansion enabled, punctuation-stripped and "-s" pluralized variants
    are added mapping to the same canonical_id; variants never overwrite
    explicit entries. Lookup is case-insensitive throughout.
    """
    entries: dict[str, DictEntry] = {}
    variants: dict[str, DictEntry] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 3:
                raise InputFormatError(
                    f"{path}:{lineno}: expected at least 3 tab-separated columns",
                    context={"line": lineno},
                )
            term, canonical_id, entity_type = cols[0].strip(), cols[1].strip(), cols[2].strip()
            subcategory = cols[3].strip() if len(cols) > 3 and cols[3].strip() else None
            if not term:
                raise InputFormatError(f"{path}:{lineno}: empty term", context={"line": lineno})
            if entity_type not in ENTITY_TYPES:
                raise InputFormatError(
                    f"{path}:{lineno}: unknown entity_type {entity_type!r}",
                    context={"line": lineno},
                )
            if entity_type == "complication":
                if subcategory not in COMPLICATION_SUBCATEGORIES:
                    raise InputFormatError(
                        f"{path}:{lineno}: complication needs a subcategory, got {subcategory!r}",
                        context={"line": lineno},
                    )
            elif subcategory is not None:
                raise InputFormatError(
                    f"{path}:{lineno}: subcategory only valid for complications",
                    context={"line": lineno},
                )
            key = _norm_term(term)
            entry = DictEntry(canonical_id, entity_type, subcategory, lineno)
            existing = entries.get(key)
            if existing is not None and existing.entity_type != entity_type:
                raise InputFormatError(
                    f"{path}: term {term!r} has conflicting entity types "
                    f"(lines {existing.source_line} and {lineno})",
                    context={"lines": [existing.source_line, lineno]},
                )
            entries[key] = entry
            if expansion is not None:
                for vkey in _expand(key, expansion):
                    variants.setdefault(vkey, entry)
    for vkey, entry in variants.items():
        entries.setdefault(vkey, entry)
    return Dictionary(entries=entries, source=str(path))


def _expand(key: str, options: ExpansionOptions):
    toks = key.split()
    if options.punctuation_stripped:
        stripped = [t for t in toks if any(c.isalnum() for c in t)]
        if stripped and stripped != toks:
            yield " ".join(stripped)
    if options.pluralize and toks and toks[-1].isalpha():
        yield " ".join(toks[:-1] + [toks[-1] + "s"])


@dataclass
class EntityMention:
    sentence: Sentence
    char_start: int
    char_end: int
    surface: str
    entity_type: str
    canonical_id: str
    subcategory: str | None
    token_start: int
    token_end: int
    attributes: set[str] = field(default_factory=set)

    def __post_init__(self):
        assert (self.subcategory is not None) == (self.entity_type == "complication")


def tag_entities(
    sentence: Sentence,
    dictionaries,
    position_modifiers=POSITION_MODIFIERS,
) -> list[EntityMention]:
    """Tag dictionary terms with longest-match-wins, left-to-right matching,
    independently per entity type. Anatomy mentions absorb adjacent preceding
    laterality/position modifier tokens into their span."""
    by_type: dict[str, dict[str, DictEntry]] = {}
    for d in dictionaries:
        for key, entry in d.entries.items():
            by_type.setdefault(entry.entity_type, {})[key] = entry
    toks = sentence.tokens
    norm = [t.text.lower() for t in toks]
    mentions: list[EntityMention] = []
    for etype, table in by_type.items():
        max_len = max((len(k.split()) for k in table), default=0)
        i = 0
        while i < len(toks):
            matched = None
            for length in range(min(max_len, len(toks) - i), 0, -1):
                key = " ".join(norm[i : i + length])
                entry = table.get(key)
                if entry is not None:
                    matched = (length, entry)
                    break
            if matched is None:
                i += 1
                continue
            length, entry = matched
            start_tok, end_tok = i, i + length
            if etype == "anatomy":
                while start_tok > 0 and norm[start_tok - 1] in position_modifiers:
                    start_tok -= 1
            cs, ce = toks[start_tok].start, toks[end_tok - 1].end
            mentions.append(
                EntityMention(
                    sentence=sentence,
                    char_start=cs,
                    char_end=ce,
                    surface=sentence.text[cs - sentence.char_start : ce - sentence.char_start],
                    entity_type=etype,
                    canonical_id=entry.canonical_id,
                    subcategory=entry.subcategory,
                    token_start=start_tok,
                    token_end=end_tok,
                )
            )
            i = end_tok
    mentions.sort(key=lambda m: (m.char_start, m.char_end, m.entity_type))
    return mentions


@dataclass(frozen=True)
class Trigger:
    phrase: str
    category: str  # negation | historical | hypothetical
    direction: str  # forward | backward | bidirectional
    terminators: tuple[str, ...] = ()


TRIGGER_CATEGORIES = {"negation": ATTR_NEGATED, "historical": ATTR_HISTORICAL, "hypothetical": ATTR_HYPOTHETICAL}


@dataclass
class TriggerLexicon:
    triggers: list[Trigger]


def load_trigger_lexicon(path) -> TriggerLexicon:
    """Load a tab-separated trigger lexicon: trigger, category, direction,
    terminators (comma-joined, may be empty)."""
    triggers: list[Trigger] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 3:
                raise InputFormatError(
                    f"{path}:{lineno}: expected at least 3 columns", context={"line": lineno}
                )
            phrase, category, direction = cols[0].strip(), cols[1].strip(), cols[2].strip()
            if not phrase:
                raise InputFormatError(f"{path}:{lineno}: empty trigger", context={"line": lineno})
            if category not in TRIGGER_CATEGORIES:
                raise InputFormatError(
                    f"{path}:{lineno}: unknown category {category!r}", context={"line": lineno}
                )
            if direction not in ("forward", "backward", "bidirectional"):
                raise InputFormatError(
                    f"{path}:{lineno}: unknown direction {direction!r}", context={"line": lineno}
                )
            terms = ()
            if len(cols) > 3 and cols[3].strip():
                terms = tuple(t.strip() for t in cols[3].split(",") if t.strip())
            triggers.append(Trigger(phrase, category, direction, terms))
    return TriggerLexicon(triggers)


@dataclass(frozen=True)
class ContextConfig:
    window: int = 6
    historical_headers: frozenset[str] = frozenset(
        {"PAST MEDICAL HISTORY", "PAST SURGICAL HISTORY"}
    )
    # Past bins at this level or older mark the sentence historical
    # (level 3 is the 30-365 day bin).
    historical_bin_level: int = 3


def _find_phrase(norm_tokens, phrase: str) -> list[tuple[int, int]]:
    words = _norm_term(phrase).split()
    hits = []
    for i in range(len(norm_tokens) - len(words) + 1):
        if norm_tokens[i : i + len(words)] == words:
            hits.append((i, i + len(words)))
    return hits


def apply_context(
    sentence: Sentence,
    mentions: list[EntityMention],
    lexicon: TriggerLexicon,
    section: SectionSpan | None = None,
    dates: list[DateMention] | None = None,
    config: ContextConfig | None = None,
) -> list[EntityMention]:
    """Union attributes onto mentions from trigger scopes, the section rule,
    and the past-date rule. Spans are never altered; attributes only grow."""
    config = config or ContextConfig()
    norm = [t.text.lower() for t in sentence.tokens]

    for trig in lexicon.triggers:
        attr = TRIGGER_CATEGORIES[trig.category]
        for tstart, tend in _find_phrase(norm, trig.phrase):
            if trig.direction in ("forward", "bidirectional"):
                scope_end = min(len(norm), tend + config.window)
                scope_end = _truncate_forward(norm, tend, scope_end, trig.terminators)
                for m in mentions:
                    if tend <= m.token_start < scope_end:
                        m.attributes.add(attr)
            if trig.direction in ("backward", "bidirectional"):
                scope_start = max(0, tstart - config.window)
                scope_start = _truncate_backward(norm, scope_start, tstart, trig.terminators)
                for m in mentions:
                    if scope_start <= m.token_end - 1 < tstart:
                        m.attributes.add(attr)

    if section is not None and section.canonical_header in config.historical_headers:
        for m in mentions:
            m.attributes.add(ATTR_HISTORICAL)

    for d in dates or []:
        if d.delta_bin.older_than_or_at(config.historical_bin_level):
            for m in mentions:
                m.attributes.add(ATTR_HISTORICAL)
            break
    return mentions


def _truncate_forward(norm, start, end, terminators) -> int:
    for term in terminators:
        for hs, _he in _find_phrase(norm[start:end], term):
            end = min(end, start + hs)
    return end


def _truncate_backward(norm, start, end, terminators) -> int:
    for term in terminators:
        for _hs, he in _find_phrase(norm[start:end], term):
            start = max(start, start + he)
    return start


@dataclass(frozen=True)
class RelationCandidate:
    relation_type: str
    arg1: EntityMention
    arg2: EntityMention
    sentence: Sentence
    note_id: str
    section_header: str
    date_bins: tuple[str, ...]
    candidate_id: str

    @property
    def left(self) -> EntityMention:
        return self.arg1 if self.arg1.token_start <= self.arg2.token_start else self.arg2

    @property
    def right(self) -> EntityMention:
        return self.arg2 if self.arg1.token_start <= self.arg2.token_start else self.arg1


def make_candidate_id(note_id, relation_type, arg1, arg2) -> str:
    raw = "|".join(
        [
            note_id,
            relation_type,
            f"{arg1.char_start}:{arg1.char_end}",
            f"{arg2.char_start}:{arg2.char_end}",
        ]
    )
    return hashlib.sha1(raw.encode("utf-8")).hexdigest()[:16]


def generate_candidates(
    sentence: Sentence,
    mentions: list[EntityMention],
    relation_type: str,
    note_id: str,
    section: SectionSpan | None = None,
    dates: list[DateMention] | None = None,
) -> list[RelationCandidate]:
    """One candidate per typed (arg1, arg2) pair, ordered by arg spans."""
    if relation_type not in RELATION_ARG_TYPES:
        raise ConfigError(f"unknown relation type {relation_type!r}")
    t1, t2 = RELATION_ARG_TYPES[relation_type]
    args1 = sorted(
        (m for m in mentions if m.entity_type == t1), key=lambda m: (m.char_start, m.char_end)
    )
    args2 = sorted(
        (m for m in mentions if m.entity_type == t2), key=lambda m: (m.char_start, m.char_end)
    )
    header = section.canonical_header if section is not None else "UNKNOWN"
    bins = tuple(d.delta_bin.label for d in dates or [])
    return [
        RelationCandidate(
            relation_type=relation_type,
            arg1=a1,
            arg2=a2,
            sentence=sentence,
            note_id=note_id,
            section_header=header,
            date_bins=bins,
            candidate_id=make_candidate_id(note_id, relation_type, a1, a2),
        )
        for a1 in args1
        for a2 in args2
    ]


def extract_candidates(doc: Document, dictionaries, lexicon: TriggerLexicon,
                       relation_types=RELATION_TYPES,
                       config: ContextConfig | None = None) -> list[RelationCandidate]:
    """Full per-document pipeline: tag, apply context, generate candidates."""
    out: list[RelationCandidate] = []
    for sentence in doc.sentences:
        mentions = tag_entities(sentence, dictionaries)
        if not mentions:
            continue
        section = doc.section_for(sentence.char_start)
        dates = doc.dates_in(sentence)
        apply_context(sentence, mentions, lexicon, section, dates, config)
        for rtype in relation_types:
            out.extend(
                generate_candidates(sentence, mentions, rtype, doc.note.note_id, section, dates)
            )
    return out
