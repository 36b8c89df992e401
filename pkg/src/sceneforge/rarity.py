"""Rarity scoring and long-tail candidate selection.

Per-element rarity is a smoothed inverse document frequency,

    r(e) = ln((N + alpha) / (n_e + alpha)),

and a scene's score is the sum of its unique elements' rarities damped by a
BM25-style length normalization,

    R = (sum r(e)) * (k + 1) / (k * (1 - b + b * n_obj / n_obj_avg) + 1),

so scenes that merely enumerate many common objects do not outrank genuinely
rare ones. Natural log throughout: the base only rescales every score by the
same constant, so rankings are invariant (property-tested).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .elements import SceneElements

logger = logging.getLogger(__name__)


class RarityError(Exception):
    pass


@dataclass(frozen=True)
class RarityParams:
    """Smoothing and length-normalization knobs.

    alpha > 0 keeps r(e) finite for unseen elements and damps ultra-rare
    terms; k in [1.2, 2.0] and b in [0, 1] control normalization strength.
    Defaults: alpha=1.0 (Laplace), k=1.5 (range midpoint), b=0.75 (canonical
    BM25 choice). These defaults are assumptions and are surfaced in every
    report header.
    """

    alpha: float = 1.0
    k: float = 1.5
    b: float = 0.75

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise RarityError(f"alpha must be positive, got {self.alpha}")
        if not 1.2 <= self.k <= 2.0:
            raise RarityError(f"k must be in [1.2, 2.0], got {self.k}")
        if not 0.0 <= self.b <= 1.0:
            raise RarityError(f"b must be in [0, 1], got {self.b}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "k": self.k, "b": self.b, "log_base": "natural"}


@dataclass
class FrequencyTable:
    """Corpus-wide document frequencies: n_e scenes contain element e, out of
    total_scenes scenes admitted to scoring."""

    total_scenes: int
    doc_freq: dict[str, int]
    built_from: str = ""

    def __post_init__(self) -> None:
        if self.total_scenes < 1:
            raise RarityError("frequency table requires at least one scene")
        for element, n_e in self.doc_freq.items():
            if not 0 <= n_e <= self.total_scenes:
                raise RarityError(
                    f"doc_freq[{element!r}]={n_e} outside [0, {self.total_scenes}]"
                )

    def to_dict(self) -> dict:
        return {
            "total_scenes": self.total_scenes,
            "doc_freq": dict(sorted(self.doc_freq.items())),
            "built_from": self.built_from,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyTable":
        return cls(
            total_scenes=int(d["total_scenes"]),
            doc_freq={str(k): int(v) for k, v in d["doc_freq"].items()},
            built_from=d.get("built_from", ""),
        )


def build_frequency_table(
    all_scene_elements: Iterable[SceneElements], built_from: str = ""
) -> FrequencyTable:
    """Exact document frequencies over scenes with a non-empty element set."""
    doc_freq: dict[str, int] = {}
    n = 0
    for scene in all_scene_elements:
        names = scene.element_names()
        if not names:
            continue
        n += 1
        for name in names:
            doc_freq[name] = doc_freq.get(name, 0) + 1
    if n == 0:
        raise RarityError("empty corpus: no scenes with elements")
    return FrequencyTable(total_scenes=n, doc_freq=doc_freq, built_from=built_from)


def element_rarity(element: str, table: FrequencyTable, params: RarityParams) -> float:
    """Smoothed IDF rarity of one element.

    An element absent from the table is treated as unseen (n_e = 0, maximally
    rare under smoothing) and flagged in the trace log.
    """
    n_e = table.doc_freq.get(element)
    if n_e is None:
        logger.warning("element %r not in frequency table; treated as n_e=0", element)
        n_e = 0
    return math.log((table.total_scenes + params.alpha) / (n_e + params.alpha))


def length_norm_factor(n_obj: int, n_obj_avg: float, params: RarityParams) -> float:
    return (params.k + 1.0) / (
        params.k * (1.0 - params.b + params.b * n_obj / n_obj_avg) + 1.0
    )


@dataclass
class ScoredScene:
    """Score plus the full audit trail: per-element rarities, the raw sum,
    the element count, and the normalization factor it was multiplied by."""

    scene_id: str
    element_rarities: dict[str, float] = field(default_factory=dict)
    raw_sum: float = 0.0
    n_obj: int = 0
    norm_factor: float = 1.0
    score: float = 0.0

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "element_rarities": dict(sorted(self.element_rarities.items())),
            "raw_sum": self.raw_sum,
            "n_obj": self.n_obj,
            "norm_factor": self.norm_factor,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoredScene":
        return cls(
            scene_id=d["scene_id"],
            element_rarities={str(k): float(v) for k, v in d.get("element_rarities", {}).items()},
            raw_sum=float(d["raw_sum"]),
            n_obj=int(d["n_obj"]),
            norm_factor=float(d["norm_factor"]),
            score=float(d["score"]),
        )


def scene_score(
    scene: SceneElements,
    table: FrequencyTable,
    params: RarityParams,
    n_obj_avg: float,
) -> ScoredScene:
    """Score one scene over its unique element set.

    Duplicate mentions never double-count; callers must exclude no-element
    scenes before scoring.
    """
    if scene.no_elements:
        raise RarityError(f"scene {scene.scene_id!r} has no elements; exclude before scoring")
    if not n_obj_avg > 0:
        raise RarityError(f"n_obj_avg must be positive, got {n_obj_avg}")
    names = sorted(scene.element_names())
    rarities = {name: element_rarity(name, table, params) for name in names}
    raw_sum = math.fsum(rarities.values())
    n_obj = len(names)
    norm = length_norm_factor(n_obj, n_obj_avg, params)
    return ScoredScene(
        scene_id=scene.scene_id,
        element_rarities=rarities,
        raw_sum=raw_sum,
        n_obj=n_obj,
        norm_factor=norm,
        score=raw_sum * norm,
    )


def average_object_count(all_scene_elements: Iterable[SceneElements]) -> float:
    """Mean unique-element count over scenes admitted to scoring."""
    counts = [len(s.element_names()) for s in all_scene_elements if not s.no_elements]
    if not counts:
        raise RarityError("no scenes with elements")
    return math.fsum(counts) / len(counts)


def score_corpus(
    all_scene_elements: Sequence[SceneElements],
    table: FrequencyTable,
    params: RarityParams,
) -> list[ScoredScene]:
    admitted = [s for s in all_scene_elements if not s.no_elements]
    if not admitted:
        raise RarityError("no scenes with elements")
    n_obj_avg = average_object_count(admitted)
    return [scene_score(s, table, params, n_obj_avg) for s in admitted]


@dataclass
class SelectionResult:
    """Top-percentile pick, ordered by descending score with scene_id as the
    deterministic tie-break."""

    percentile: float
    selected: list[str]
    avg_objects: float

    def to_dict(self) -> dict:
        return {
            "percentile": self.percentile,
            "selected": self.selected,
            "avg_objects": self.avg_objects,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        return cls(
            percentile=float(d["percentile"]),
            selected=[str(s) for s in d["selected"]],
            avg_objects=float(d["avg_objects"]),
        )


def selection_size(n_scenes: int, percentile: float) -> int:
    # Exact rational ceiling: never under-selects from float rounding
    # (e.g. 1.25% of 200000 must be exactly 2500).
    return int(math.ceil(Fraction(percentile) * n_scenes / 100))


def rank_and_select(scores: Sequence[ScoredScene], percentile: float) -> SelectionResult:
    """Select the top ``percentile`` percent of scenes by score."""
    if not scores:
        raise RarityError("no scores to rank")
    if not 0 < percentile <= 100:
        raise RarityError(f"percentile must be in (0, 100], got {percentile}")
    ordered = sorted(scores, key=lambda s: (-s.score, s.scene_id))
    count = selection_size(len(scores), percentile)
    avg_objects = math.fsum(s.n_obj for s in scores) / len(scores)
    return SelectionResult(
        percentile=percentile,
        selected=[s.scene_id for s in ordered[:count]],
        avg_objects=avg_objects,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

FREQUENCY_FILE = "frequency.json"
SCORES_FILE = "scores.csv"
SCORES_DETAIL_FILE = "scores_detail.jsonl"
SELECTION_FILE = "selection.json"

_SCORES_HEADER = "scene_id,raw_sum,n_obj,norm_factor,score"


def write_scores(scores: Sequence[ScoredScene], path: Path) -> Path:
    """Audit file: one line per scene, fixed six-decimal precision, diffable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(_SCORES_HEADER + "\n")
        for s in sorted(scores, key=lambda s: s.scene_id):
            fh.write(
                f"{s.scene_id},{s.raw_sum:.6f},{s.n_obj},{s.norm_factor:.6f},{s.score:.6f}\n"
            )
    tmp.replace(path)
    return path


def write_scores_detail(scores: Sequence[ScoredScene], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for s in sorted(scores, key=lambda s: s.scene_id):
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
    tmp.replace(path)
    return path


def read_scores_detail(path: Path) -> list[ScoredScene]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ScoredScene.from_dict(json.loads(line)))
    return out
