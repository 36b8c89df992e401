"""Scene store, source adapters, and training-corpus consolidation.

Unifies heterogeneous language-annotated driving datasets into a single
QA-format scene store (one front-view image per scene) and exports the
canonical training corpus. The store is newline-delimited JSON, one scene
per line, so very large corpora stream through without being held in a
database.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator, Protocol

logger = logging.getLogger(__name__)

TASK_CATEGORIES = ("traffic_scene_understanding", "meta_action_decision")
QA_KINDS = ("scene_description", "traffic_qa", "noteworthy_objects", "other")
SPLITS = ("train", "candidate", "test", "excluded")

# Candidate scenes may return to the training pool on rejection; test and
# excluded are terminal.
_ALLOWED_TRANSITIONS = {
    "train": {"train", "candidate", "test", "excluded"},
    "candidate": {"candidate", "train", "test", "excluded"},
    "test": {"test"},
    "excluded": {"excluded"},
}

SCENES_FILE = "scenes.jsonl"
MANIFESTS_FILE = "manifests.jsonl"

# Source tags with registered stub adapters (real parsers are the generic
# one; each stub just pins the source tag it stamps on ingested records).
STUB_SOURCES = (
    "drivelm",
    "impromptu-vla",
    "codalm",
    "lingoqa",
    "drama",
    "talk2car",
    "nuscenes-qa",
    "drivegpt4",
    "maplm",
    "nuinstruct",
    "omnidrive",
    "senna",
    "navsim",
    "bddx",
    "wod-e2e",
)


class CorpusError(Exception):
    """Base class for corpus-layer failures."""


class UnknownAdapterError(CorpusError):
    pass


class MalformedSourceError(CorpusError):
    """Source file cannot be parsed at all (syntax-level failure)."""

    def __init__(self, message: str, record_index: int | None = None):
        super().__init__(message)
        self.record_index = record_index


class RecordValidationError(CorpusError):
    pass


class SplitTransitionError(CorpusError):
    pass


class UnclassifiedExportError(CorpusError):
    """Export refused because some QA pairs lack a task category."""

    def __init__(self, scene_ids: list[str]):
        super().__init__(
            "export refused: unclassified QA pairs in scenes: " + ", ".join(scene_ids)
        )
        self.scene_ids = scene_ids


@dataclass
class QAPair:
    """One question/answer annotation attached to a scene.

    ``frame_index`` is an ingest-time tag used only by clip reduction; it is
    never exported.
    """

    question: str
    answer: str
    task_category: str | None = None
    qa_kind: str = "other"
    frame_index: int | None = None

    def validate(self) -> None:
        if not self.question.strip():
            raise RecordValidationError("question empty after trim")
        if not self.answer.strip():
            raise RecordValidationError("answer empty after trim")
        if self.task_category is not None and self.task_category not in TASK_CATEGORIES:
            raise RecordValidationError(f"unknown task_category {self.task_category!r}")
        if self.qa_kind not in QA_KINDS:
            raise RecordValidationError(f"unknown qa_kind {self.qa_kind!r}")

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "answer": self.answer,
            "task_category": self.task_category,
            "qa_kind": self.qa_kind,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QAPair":
        pair = cls(
            question=str(d.get("question", "")),
            answer=str(d.get("answer", "")),
            task_category=d.get("task_category"),
            qa_kind=d.get("qa_kind", "other"),
            frame_index=d.get("frame_index"),
        )
        pair.validate()
        return pair


@dataclass
class GroupTag:
    """Multi-view / clip membership parsed from the raw source record."""

    group_id: str
    frame_index: int | None = None
    view: str | None = None
    is_keyframe: bool = False


@dataclass
class SceneRecord:
    """One driving scene: a single front-view image plus its QA annotations."""

    scene_id: str
    source_dataset: str
    image_ref: str
    qa_pairs: list[QAPair] = field(default_factory=list)
    split: str = "train"
    provenance: str = ""
    group: GroupTag | None = None

    def validate(self) -> None:
        if not self.scene_id.strip():
            raise RecordValidationError("scene_id empty")
        if not self.image_ref.strip():
            raise RecordValidationError("image_ref empty")
        if self.split not in SPLITS:
            raise RecordValidationError(f"unknown split {self.split!r}")
        for pair in self.qa_pairs:
            pair.validate()

    def annotation_text(self) -> str:
        """All QA text of the scene, for element extraction."""
        parts: list[str] = []
        for pair in self.qa_pairs:
            parts.append(pair.question)
            parts.append(pair.answer)
        return "\n".join(parts)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "source_dataset": self.source_dataset,
            "image_ref": self.image_ref,
            "split": self.split,
            "provenance": self.provenance,
            "qa_pairs": [p.to_dict() for p in self.qa_pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRecord":
        group = None
        if d.get("group_id"):
            group = GroupTag(
                group_id=str(d["group_id"]),
                frame_index=d.get("frame_index"),
                view=d.get("view"),
                is_keyframe=bool(d.get("is_keyframe", False)),
            )
        record = cls(
            scene_id=str(d.get("scene_id", "")),
            source_dataset=str(d.get("source_dataset", "")),
            image_ref=str(d.get("image_ref", "") or ""),
            qa_pairs=[QAPair.from_dict(q) for q in d.get("qa_pairs", [])],
            split=d.get("split", "train"),
            provenance=str(d.get("provenance", "")),
            group=group,
        )
        record.validate()
        return record


@dataclass
class SourceManifest:
    """Outcome of one ingest call for one source."""

    source_name: str
    adapter_id: str
    record_count: int
    ingested_at: str
    new_records: int = 0
    duplicates: int = 0
    rejected: int = 0
    excluded_groups: int = 0

    def to_dict(self) -> dict:
        return {
            "source_name": self.source_name,
            "adapter_id": self.adapter_id,
            "record_count": self.record_count,
            "ingested_at": self.ingested_at,
            "new_records": self.new_records,
            "duplicates": self.duplicates,
            "rejected": self.rejected,
            "excluded_groups": self.excluded_groups,
        }


# ---------------------------------------------------------------------------
# Source adapters
# ---------------------------------------------------------------------------

# An adapter turns a source file into (record_index, raw_dict) rows in the
# canonical schema; validation happens centrally in ingest_source.
Adapter = Callable[[Path], Iterator[tuple[int, dict]]]

_ADAPTERS: dict[str, Adapter] = {}


def register_adapter(adapter_id: str, adapter: Adapter) -> None:
    _ADAPTERS[adapter_id] = adapter


def get_adapter(adapter_id: str) -> Adapter:
    try:
        return _ADAPTERS[adapter_id]
    except KeyError:
        raise UnknownAdapterError(
            f"unknown adapter {adapter_id!r}; registered: {', '.join(sorted(_ADAPTERS))}"
        ) from None


def registered_adapters() -> list[str]:
    return sorted(_ADAPTERS)


def parse_generic_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    """Canonical-schema JSONL: one scene object per line."""
    with open(path, "r", encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedSourceError(
                    f"{path}: invalid JSON at record {index}: {exc}", record_index=index
                ) from exc
            if not isinstance(obj, dict):
                raise MalformedSourceError(
                    f"{path}: record {index} is not an object", record_index=index
                )
            yield index, obj


def _stub_adapter(source_name: str) -> Adapter:
    def parse(path: Path) -> Iterator[tuple[int, dict]]:
        for index, raw in parse_generic_jsonl(path):
            raw = dict(raw)
            raw["source_dataset"] = source_name
            yield index, raw

    return parse


register_adapter("generic-jsonl", parse_generic_jsonl)
for _name in STUB_SOURCES:
    register_adapter(_name, _stub_adapter(_name))


# ---------------------------------------------------------------------------
# Scene store
# ---------------------------------------------------------------------------


class SceneStore:
    """Disk-backed scene collection keyed by scene_id.

    Single-writer contract: all mutations go through a lock; readers observe
    consistent snapshots. ``save`` writes atomically (tmp file + rename).
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self._scenes: dict[str, SceneRecord] = {}
        self._lock = threading.Lock()

    @classmethod
    def open(cls, root: Path) -> "SceneStore":
        store = cls(root)
        path = store.root / SCENES_FILE
        if path.exists():
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = SceneRecord.from_dict(json.loads(line))
                    store._scenes[record.scene_id] = record
        return store

    def __len__(self) -> int:
        return len(self._scenes)

    def __contains__(self, scene_id: str) -> bool:
        return scene_id in self._scenes

    def get(self, scene_id: str) -> SceneRecord | None:
        return self._scenes.get(scene_id)

    def add(self, record: SceneRecord) -> bool:
        """Store a record; returns False (and keeps the original) on duplicate id."""
        record.validate()
        with self._lock:
            if record.scene_id in self._scenes:
                return False
            self._scenes[record.scene_id] = record
            return True

    def records(self, split: str | None = None) -> list[SceneRecord]:
        """Records sorted by scene_id for deterministic iteration."""
        out = sorted(self._scenes.values(), key=lambda r: r.scene_id)
        if split is not None:
            out = [r for r in out if r.split == split]
        return out

    def set_split(self, scene_id: str, new_split: str) -> None:
        with self._lock:
            record = self._scenes.get(scene_id)
            if record is None:
                raise CorpusError(f"unknown scene_id {scene_id!r}")
            if new_split not in SPLITS:
                raise SplitTransitionError(f"unknown split {new_split!r}")
            if new_split not in _ALLOWED_TRANSITIONS[record.split]:
                raise SplitTransitionError(
                    f"{scene_id}: split may not move {record.split} -> {new_split}"
                )
            record.split = new_split

    def replace_qa_pairs(self, scene_id: str, qa_pairs: list[QAPair]) -> None:
        with self._lock:
            record = self._scenes.get(scene_id)
            if record is None:
                raise CorpusError(f"unknown scene_id {scene_id!r}")
            for pair in qa_pairs:
                pair.validate()
            record.qa_pairs = qa_pairs

    def save(self) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / SCENES_FILE
        tmp = path.with_suffix(".jsonl.tmp")
        with self._lock:
            with open(tmp, "w", encoding="utf-8") as fh:
                for record in self.records():
                    fh.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True))
                    fh.write("\n")
        tmp.replace(path)
        return path

    def append_manifest(self, manifest: SourceManifest) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.root / MANIFESTS_FILE, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(manifest.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


# ---------------------------------------------------------------------------
# View / keyframe reduction
# ---------------------------------------------------------------------------


@dataclass
class ReductionPolicy:
    """How multi-view groups and clips collapse to one record.

    Keyframe choice falls back to the middle frame when no frame of a clip
    is flagged as the annotated keyframe.
    """

    front_view_tag: str = "front"
    keyframe_strategy: str = "annotated-or-middle"  # or "first"


@dataclass
class ReductionStats:
    groups_reduced: int = 0
    records_dropped: int = 0
    excluded_groups: int = 0
    qa_pruned: int = 0


def _pick_keyframe(members: list[SceneRecord], policy: ReductionPolicy) -> SceneRecord:
    flagged = [m for m in members if m.group and m.group.is_keyframe]
    if policy.keyframe_strategy != "first" and flagged:
        return flagged[0]
    ordered = sorted(
        members,
        key=lambda m: (
            m.group.frame_index if m.group and m.group.frame_index is not None else 0,
            m.scene_id,
        ),
    )
    if policy.keyframe_strategy == "first":
        return ordered[0]
    return ordered[len(ordered) // 2]


def _merge_group(
    members: list[SceneRecord], policy: ReductionPolicy, stats: ReductionStats
) -> SceneRecord | None:
    views_present = any(m.group and m.group.view for m in members)
    if views_present:
        members = [
            m for m in members if m.group and (m.group.view or "") == policy.front_view_tag
        ]
        if not members:
            stats.excluded_groups += 1
            return None
    kept = _pick_keyframe(members, policy)
    kept_frame = kept.group.frame_index if kept.group else None

    # Clip-level QA (no frame tag) survives on the keyframe; frame-tagged QA
    # survives only if it references the kept frame.
    merged: list[QAPair] = []
    seen: set[tuple[str, str]] = set()
    for member in members:
        for pair in member.qa_pairs:
            if pair.frame_index is not None and pair.frame_index != kept_frame:
                stats.qa_pruned += 1
                continue
            key = (pair.question, pair.answer)
            if key in seen:
                continue
            seen.add(key)
            merged.append(replace(pair, frame_index=None))
    return replace(kept, qa_pairs=merged, group=None)


def reduce_views_and_keyframes(
    records: Iterable[SceneRecord], policy: ReductionPolicy | None = None
) -> tuple[list[SceneRecord], ReductionStats]:
    """Collapse each multi-view group or clip to one front-view record.

    Ungrouped records pass through unchanged (frame-tagged QA stripped of its
    tag). Groups with no front-view member are excluded and counted.
    """
    policy = policy or ReductionPolicy()
    stats = ReductionStats()
    out: list[SceneRecord] = []
    groups: dict[str, list[SceneRecord]] = {}
    order: list[tuple[str, str]] = []  # ("record", scene_id) / ("group", group_id)

    for record in records:
        if record.group is None:
            out_id = record.scene_id
            order.append(("record", out_id))
            groups[f"__single__{out_id}"] = [record]
        else:
            gid = record.group.group_id
            if gid not in groups:
                order.append(("group", gid))
            groups.setdefault(gid, []).append(record)

    result: list[SceneRecord] = []
    for kind, key in order:
        if kind == "record":
            member = groups[f"__single__{key}"][0]
            cleaned = [replace(p, frame_index=None) for p in member.qa_pairs]
            result.append(replace(member, qa_pairs=cleaned, group=None))
            continue
        members = groups[key]
        if len(members) > 1:
            stats.groups_reduced += 1
        merged = _merge_group(members, policy, stats)
        if merged is None:
            stats.records_dropped += len(members)
            continue
        stats.records_dropped += len(members) - 1
        result.append(merged)
    return result, stats


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def ingest_source(
    store: SceneStore,
    manifest_path: Path,
    adapter_id: str,
    policy: ReductionPolicy | None = None,
    source_name: str | None = None,
) -> SourceManifest:
    """Parse one source file and store its scenes with split=train.

    Per-record validation failures are rejected (logged with their record
    index) without aborting the ingest; duplicate scene_ids are rejected and
    logged so provenance is never silently overwritten. An ingest call covers
    exactly one source: records carrying a different source tag are rejected.
    """
    adapter = get_adapter(adapter_id)
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MalformedSourceError(f"source file not found: {manifest_path}")

    parsed: list[SceneRecord] = []
    rejected = 0
    resolved_source = source_name
    for index, raw in adapter(manifest_path):
        try:
            record = SceneRecord.from_dict(raw)
            record.split = "train"
            if resolved_source is None:
                resolved_source = record.source_dataset or adapter_id
            if not record.source_dataset:
                record.source_dataset = resolved_source
            if record.source_dataset != resolved_source:
                raise RecordValidationError(
                    f"source tag {record.source_dataset!r} does not match "
                    f"{resolved_source!r} (one source per ingest)"
                )
            parsed.append(record)
        except (RecordValidationError, CorpusError) as exc:
            rejected += 1
            logger.warning("%s: record %d rejected: %s", manifest_path, index, exc)

    if resolved_source is None:
        resolved_source = source_name or adapter_id

    reduced, stats = reduce_views_and_keyframes(parsed, policy)

    new_records = 0
    duplicates = 0
    for record in reduced:
        if store.add(record):
            new_records += 1
        else:
            duplicates += 1
            logger.warning("duplicate scene_id %r rejected (ingest continues)", record.scene_id)

    record_count = sum(1 for r in store.records() if r.source_dataset == resolved_source)
    manifest = SourceManifest(
        source_name=resolved_source,
        adapter_id=adapter_id,
        record_count=record_count,
        ingested_at=datetime.now(timezone.utc).isoformat(),
        new_records=new_records,
        duplicates=duplicates,
        rejected=rejected,
        excluded_groups=stats.excluded_groups,
    )
    store.append_manifest(manifest)
    return manifest


# ---------------------------------------------------------------------------
# QA classification
# ---------------------------------------------------------------------------


class AnnotationClassifier(Protocol):
    def classify(self, question: str, answer: str) -> tuple[str, str]:
        """Return (task_category, qa_kind)."""
        ...


class ClassificationError(CorpusError):
    """Remote classifier failure; the pair must be retried, never defaulted."""


class KeywordClassifier:
    """Offline keyword/rule classifier, deterministic for a fixed rule table."""

    def __init__(self, rules: dict):
        self.action_keywords = [k.lower() for k in rules["meta_action_keywords"]]
        self.kind_patterns = {
            kind: [p.lower() for p in patterns]
            for kind, patterns in rules["qa_kind_patterns"].items()
        }

    def classify(self, question: str, answer: str) -> tuple[str, str]:
        text = f"{question} {answer}".lower()
        question_l = question.lower()
        category = "traffic_scene_understanding"
        for keyword in self.action_keywords:
            if keyword in text:
                category = "meta_action_decision"
                break
        qa_kind = "other"
        for kind in ("scene_description", "noteworthy_objects", "traffic_qa"):
            if any(p in question_l for p in self.kind_patterns.get(kind, [])):
                qa_kind = kind
                break
        if qa_kind == "other" and question_l.rstrip().endswith("?"):
            qa_kind = "traffic_qa"
        return category, qa_kind


class RemoteClassifier:
    """Chat-backed classifier; replies must contain one category token and
    one kind token. Any backend failure or unparseable reply raises
    ClassificationError so the pair is queued for retry."""

    PROMPT = (
        "Classify this driving-scene annotation.\n"
        "Reply with two lines and nothing else:\n"
        "CATEGORY: traffic_scene_understanding | meta_action_decision\n"
        "KIND: scene_description | traffic_qa | noteworthy_objects | other\n\n"
        "Question: {question}\nAnswer: {answer}"
    )

    def __init__(self, backend):
        self.backend = backend

    def classify(self, question: str, answer: str) -> tuple[str, str]:
        try:
            reply = self.backend.complete_text(
                self.PROMPT.format(question=question, answer=answer)
            )
        except Exception as exc:
            raise ClassificationError(f"remote classifier failed: {exc}") from exc
        category = kind = None
        for line in reply.splitlines():
            line = line.strip()
            if line.upper().startswith("CATEGORY:"):
                candidate = line.split(":", 1)[1].strip().lower()
                if candidate in TASK_CATEGORIES:
                    category = candidate
            elif line.upper().startswith("KIND:"):
                candidate = line.split(":", 1)[1].strip().lower()
                if candidate in QA_KINDS:
                    kind = candidate
        if category is None:
            raise ClassificationError(f"unparseable classifier reply: {reply!r}")
        return category, kind or "other"


def classify_qa(pair: QAPair, classifier: AnnotationClassifier) -> QAPair:
    """Return a copy of the pair with task_category (and qa_kind) set.

    Raises on empty questions and propagates ClassificationError so remote
    failures queue for retry instead of being silently defaulted.
    """
    if not pair.question.strip():
        raise RecordValidationError("cannot classify pair with empty question")
    category, qa_kind = classifier.classify(pair.question, pair.answer)
    out = replace(pair, task_category=category)
    if out.qa_kind == "other":
        out = replace(out, qa_kind=qa_kind)
    out.validate()
    return out


@dataclass
class ClassifyReport:
    classified: int = 0
    already_classified: int = 0
    failed: list[tuple[str, int, str]] = field(default_factory=list)  # scene, pair idx, reason


def classify_store(store: SceneStore, classifier: AnnotationClassifier) -> ClassifyReport:
    """Classify every unclassified QA pair in place; failures queue for retry."""
    report = ClassifyReport()
    for record in store.records():
        updated = list(record.qa_pairs)
        changed = False
        for i, pair in enumerate(updated):
            if pair.task_category is not None:
                report.already_classified += 1
                continue
            try:
                updated[i] = classify_qa(pair, classifier)
                report.classified += 1
                changed = True
            except (ClassificationError, RecordValidationError) as exc:
                report.failed.append((record.scene_id, i, str(exc)))
        if changed:
            store.replace_qa_pairs(record.scene_id, updated)
    return report


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


@dataclass
class ExportResult:
    path: Path
    scene_count: int
    qa_count: int


def export_training_set(store: SceneStore, out_path: Path) -> ExportResult:
    """Write the canonical training corpus (split=train scenes) to JSONL.

    Refuses to export while any exported scene still carries an unclassified
    QA pair, listing the offending scene_ids.
    """
    records = store.records(split="train")
    unclassified = sorted(
        {r.scene_id for r in records if any(p.task_category is None for p in r.qa_pairs)}
    )
    if unclassified:
        raise UnclassifiedExportError(unclassified)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    qa_count = 0
    tmp = out_path.with_name(out_path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            qa_count += len(record.qa_pairs)
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
    tmp.replace(out_path)
    return ExportResult(path=out_path, scene_count=len(records), qa_count=qa_count)


def import_training_set(path: Path) -> list[SceneRecord]:
    """Read a canonical corpus file back into records (round-trip of export)."""
    out = []
    for _, raw in parse_generic_jsonl(Path(path)):
        out.append(SceneRecord.from_dict(raw))
    return out
