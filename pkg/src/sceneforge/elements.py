"""Sparse scene-element representation of language annotations.

Each scene's QA text is reduced to a set of canonicalized elements (noun
phrases like "police officer" or "traffic cone"), classified against a
five-major / fourteen-minor taxonomy. Element identity is the canonical
string after synonym mapping, which keeps document-frequency counting exact
and auditable.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol

from .corpus import SceneRecord

logger = logging.getLogger(__name__)

UNCLASSIFIED = "unclassified"

_WS = re.compile(r"\s+")


class TaxonomyError(Exception):
    pass


@dataclass
class ElementTaxonomy:
    """Major/minor category tree plus the term vocabulary per minor category."""

    major_categories: list[str]
    minor_categories: list[str]
    minor_to_major: dict[str, str]
    term_to_minor: dict[str, str]

    def validate(self, expect_majors: int | None = 5, expect_minors: int | None = 14) -> None:
        if expect_majors is not None and len(self.major_categories) != expect_majors:
            raise TaxonomyError(
                f"expected {expect_majors} major categories, got {len(self.major_categories)}"
            )
        if expect_minors is not None and len(self.minor_categories) != expect_minors:
            raise TaxonomyError(
                f"expected {expect_minors} minor categories, got {len(self.minor_categories)}"
            )
        for minor, major in self.minor_to_major.items():
            if major not in self.major_categories:
                raise TaxonomyError(f"minor {minor!r} maps to unknown major {major!r}")
        missing = set(self.minor_categories) - set(self.minor_to_major)
        if missing:
            raise TaxonomyError(f"minor categories without a major mapping: {sorted(missing)}")

    def vocabulary(self) -> list[str]:
        return sorted(self.term_to_minor)


_SECTION = re.compile(r"^\[(?P<major>[^/\]]+)/(?P<minor>[^\]]+)\]$")


def load_taxonomy(path: Path, validate: bool = True) -> ElementTaxonomy:
    """Parse a plain-text taxonomy file.

    Format: ``[Major / Minor]`` section headers followed by one term per
    line; ``#`` starts a comment.
    """
    majors: list[str] = []
    minors: list[str] = []
    minor_to_major: dict[str, str] = {}
    term_to_minor: dict[str, str] = {}
    current_minor: str | None = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            major = m.group("major").strip()
            minor = m.group("minor").strip()
            if major not in majors:
                majors.append(major)
            if minor in minor_to_major:
                raise TaxonomyError(f"{path}:{lineno}: duplicate minor category {minor!r}")
            minors.append(minor)
            minor_to_major[minor] = major
            current_minor = minor
            continue
        if current_minor is None:
            raise TaxonomyError(f"{path}:{lineno}: term before any category header")
        term = _WS.sub(" ", line.lower())
        term_to_minor[term] = current_minor
    taxonomy = ElementTaxonomy(majors, minors, minor_to_major, term_to_minor)
    if validate:
        taxonomy.validate()
    return taxonomy


def load_synonyms(path: Path) -> dict[str, str]:
    """Parse ``surface = canonical`` lines; chains resolve to a fixpoint so a
    single lookup is idempotent."""
    raw_map: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TaxonomyError(f"{path}:{lineno}: expected 'surface = canonical'")
        surface, canonical = (part.strip() for part in line.split("=", 1))
        raw_map[_WS.sub(" ", surface.lower())] = _WS.sub(" ", canonical.lower())
    return resolve_synonym_chains(raw_map)


def resolve_synonym_chains(mapping: dict[str, str]) -> dict[str, str]:
    resolved: dict[str, str] = {}
    for surface in mapping:
        target = mapping[surface]
        seen = {surface}
        while target in mapping and target not in seen:
            seen.add(target)
            target = mapping[target]
        resolved[surface] = target
    return resolved


def canonicalize(surface: str, synonym_map: dict[str, str] | None = None) -> str:
    """Lowercase, trim, collapse whitespace, then apply the synonym map.

    Idempotent: canonicalize(canonicalize(x)) == canonicalize(x). Empty input
    stays empty; callers filter.
    """
    normalized = _WS.sub(" ", surface.strip().lower())
    if not normalized:
        return ""
    if synonym_map:
        normalized = synonym_map.get(normalized, normalized)
    return normalized


@dataclass
class Element:
    canonical_name: str
    minor_category: str = UNCLASSIFIED
    raw_mentions: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "canonical_name": self.canonical_name,
            "minor_category": self.minor_category,
            "raw_mentions": self.raw_mentions,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Element":
        return cls(
            canonical_name=d["canonical_name"],
            minor_category=d.get("minor_category", UNCLASSIFIED),
            raw_mentions=list(d.get("raw_mentions", [])),
        )


@dataclass
class SceneElements:
    """The deduplicated element set of one scene."""

    scene_id: str
    elements: list[Element] = field(default_factory=list)

    @property
    def no_elements(self) -> bool:
        return not self.elements

    def element_names(self) -> set[str]:
        return {e.canonical_name for e in self.elements}

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "elements": [e.to_dict() for e in self.elements],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneElements":
        return cls(
            scene_id=d["scene_id"],
            elements=[Element.from_dict(e) for e in d.get("elements", [])],
        )


class ElementExtractor(Protocol):
    def extract(self, record: SceneRecord) -> list[str]:
        """Return raw surface mentions found in the record's annotations."""
        ...


class DictionaryExtractor:
    """Offline extractor: scans annotation text for known vocabulary terms.

    Longest terms match first so "police officer" wins over "officer".
    Matching is case-insensitive on word boundaries; deterministic for a
    fixed vocabulary.
    """

    def __init__(self, vocabulary: Iterable[str]):
        terms = sorted({_WS.sub(" ", t.strip().lower()) for t in vocabulary if t.strip()})
        self.terms = sorted(terms, key=len, reverse=True)
        self._patterns = [
            (term, re.compile(r"(?<!\w)" + re.escape(term).replace(r"\ ", r"\s+") + r"(?!\w)",
                              re.IGNORECASE))
            for term in self.terms
        ]

    def extract(self, record: SceneRecord) -> list[str]:
        text = record.annotation_text()
        found: list[tuple[int, str]] = []
        claimed: list[tuple[int, int]] = []
        for _term, pattern in self._patterns:
            for m in pattern.finditer(text):
                start, end = m.start(), m.end()
                if any(start < c_end and end > c_start for c_start, c_end in claimed):
                    continue
                claimed.append((start, end))
                found.append((start, m.group(0)))
        found.sort(key=lambda item: item[0])
        return [surface for _, surface in found]


class RemoteExtractor:
    """Chat-completions extractor: prompts a remote model and parses a
    delimited element list from the reply.

    The bundled prompt template is a project reconstruction, not the original
    annotation prompt; treat extracted vocabularies from different templates
    as different corpora.
    """

    def __init__(self, backend, prompt_template: str, delimiter: str = ";"):
        self.backend = backend
        self.prompt_template = prompt_template
        self.delimiter = delimiter

    def extract(self, record: SceneRecord) -> list[str]:
        prompt = self.prompt_template.format(annotations=record.annotation_text())
        reply = self.backend.complete_text(prompt)
        return [part.strip() for part in reply.split(self.delimiter) if part.strip()]


def classify_element(element: Element, taxonomy: ElementTaxonomy) -> Element:
    """Assign the minor category; unknown elements land in the unclassified
    bucket (kept and scored, surfaced in statistics)."""
    minor = taxonomy.term_to_minor.get(element.canonical_name, UNCLASSIFIED)
    return replace(element, minor_category=minor)


def extract_elements(
    record: SceneRecord,
    extractor: ElementExtractor,
    synonym_map: dict[str, str] | None = None,
    taxonomy: ElementTaxonomy | None = None,
) -> SceneElements:
    """Extract, canonicalize, deduplicate, and classify a scene's elements.

    An empty result is returned as-is; callers flag such scenes "no-elements"
    and keep them out of rarity scoring.
    """
    mentions = extractor.extract(record)
    by_canonical: dict[str, Element] = {}
    for surface in mentions:
        canonical = canonicalize(surface, synonym_map)
        if not canonical:
            continue
        element = by_canonical.get(canonical)
        if element is None:
            element = Element(canonical_name=canonical, raw_mentions=[])
            by_canonical[canonical] = element
        if surface not in element.raw_mentions:
            element.raw_mentions.append(surface)
    elements = [by_canonical[name] for name in sorted(by_canonical)]
    if taxonomy is not None:
        elements = [classify_element(e, taxonomy) for e in elements]
    if not elements:
        logger.info("scene %s flagged no-elements (excluded from scoring)", record.scene_id)
    return SceneElements(scene_id=record.scene_id, elements=elements)


@dataclass
class CorpusStats:
    """Frequency summary over all scenes admitted to scoring."""

    n_scenes: int
    doc_freq: dict[str, int]
    minor_totals: list[tuple[str, int, int]]  # (minor, distinct elements, scene occurrences)
    unclassified_elements: list[str]
    no_element_scenes: list[str]

    def to_dict(self) -> dict:
        return {
            "n_scenes": self.n_scenes,
            "doc_freq": dict(sorted(self.doc_freq.items())),
            "minor_totals": [
                {"minor_category": m, "distinct_elements": d, "scene_occurrences": o}
                for m, d, o in self.minor_totals
            ],
            "unclassified_elements": self.unclassified_elements,
            "no_element_scenes": self.no_element_scenes,
        }


def corpus_statistics(
    all_scene_elements: Iterable[SceneElements], no_element_scenes: Iterable[str] = ()
) -> CorpusStats:
    """Document-frequency statistics: n_e counts scenes containing element e
    at least once (set semantics), never raw mention counts."""
    doc_freq: dict[str, int] = {}
    element_minor: dict[str, str] = {}
    n_scenes = 0
    for scene in all_scene_elements:
        if scene.no_elements:
            continue
        n_scenes += 1
        for element in scene.elements:
            doc_freq[element.canonical_name] = doc_freq.get(element.canonical_name, 0) + 1
            element_minor.setdefault(element.canonical_name, element.minor_category)

    per_minor: dict[str, list[int]] = {}
    for name, count in doc_freq.items():
        minor = element_minor[name]
        bucket = per_minor.setdefault(minor, [0, 0])
        bucket[0] += 1
        bucket[1] += count
    minor_totals = sorted(
        ((minor, d, o) for minor, (d, o) in per_minor.items()),
        key=lambda item: (-item[2], item[0]),
    )
    unclassified = sorted(n for n, m in element_minor.items() if m == UNCLASSIFIED)
    return CorpusStats(
        n_scenes=n_scenes,
        doc_freq=doc_freq,
        minor_totals=minor_totals,
        unclassified_elements=unclassified,
        no_element_scenes=sorted(no_element_scenes),
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

ELEMENTS_FILE = "elements.jsonl"


def write_scene_elements(items: Iterable[SceneElements], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for item in sorted(items, key=lambda s: s.scene_id):
            fh.write(json.dumps(item.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
    tmp.replace(path)
    return path


def read_scene_elements(path: Path) -> list[SceneElements]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(SceneElements.from_dict(json.loads(line)))
    return out
