"""Human review loop over mined candidates.

Candidates enter a queue ordered by descending rarity score; reviewers lease
the next pending candidate, then accept, reject, or accept-with-correction.
Every state change is an event in an append-only log, so replaying the log
from an empty directory reconstructs the exact queue state and export:
crash recovery comes for free and every verdict stays auditable.

Leases are deliberately not durable: they expire on a timeout anyway, so a
crash simply returns in-flight candidates to pending.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

logger = logging.getLogger(__name__)

VERDICTS = ("accept", "reject")
DEFAULT_LEASE_SECONDS = 30 * 60
DEFAULT_TEST_SET_SIZE = 1000

LOG_FILE = "review_log.jsonl"
SNAPSHOT_FILE = "review_snapshot.json"
TEST_SET_FILE = "test_set.json"


class ReviewError(Exception):
    pass


class UnknownSceneError(ReviewError):
    pass


class AnnotationSchemaError(ReviewError):
    pass


@dataclass
class MachineAnnotation:
    """Unified re-annotation of a candidate: a detailed scene description and
    the noteworthy objects a model must not miss."""

    scene_description: str
    noteworthy_objects: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not isinstance(self.scene_description, str) or not self.scene_description.strip():
            raise AnnotationSchemaError("scene_description must be a non-empty string")
        if not isinstance(self.noteworthy_objects, list):
            raise AnnotationSchemaError("noteworthy_objects must be a list")
        for obj in self.noteworthy_objects:
            if not isinstance(obj, str) or not obj.strip():
                raise AnnotationSchemaError("noteworthy_objects entries must be non-empty strings")

    def to_dict(self) -> dict:
        return {
            "scene_description": self.scene_description,
            "noteworthy_objects": list(self.noteworthy_objects),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MachineAnnotation":
        ann = cls(
            scene_description=d.get("scene_description", ""),
            noteworthy_objects=list(d.get("noteworthy_objects", [])),
        )
        ann.validate()
        return ann


@dataclass
class ReviewCandidate:
    scene_id: str
    image_ref: str
    score: float
    machine_annotation: MachineAnnotation
    status: str = "pending"  # pending | in_review | decided
    element_rarities: dict[str, float] = field(default_factory=dict)
    qa: dict | None = None  # {"question", "answer"} carried through for evaluation

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "image_ref": self.image_ref,
            "score": self.score,
            "machine_annotation": self.machine_annotation.to_dict(),
            "status": self.status,
            "element_rarities": dict(sorted(self.element_rarities.items())),
            "qa": self.qa,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewCandidate":
        return cls(
            scene_id=d["scene_id"],
            image_ref=d["image_ref"],
            score=float(d["score"]),
            machine_annotation=MachineAnnotation.from_dict(d["machine_annotation"]),
            status=d.get("status", "pending"),
            element_rarities={str(k): float(v) for k, v in d.get("element_rarities", {}).items()},
            qa=d.get("qa"),
        )


@dataclass
class ReviewDecision:
    scene_id: str
    verdict: str
    reviewer_id: str
    sequence_no: int
    decided_at: str
    corrected_annotation: MachineAnnotation | None = None

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "verdict": self.verdict,
            "reviewer_id": self.reviewer_id,
            "sequence_no": self.sequence_no,
            "decided_at": self.decided_at,
            "corrected_annotation": (
                self.corrected_annotation.to_dict() if self.corrected_annotation else None
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewDecision":
        corrected = d.get("corrected_annotation")
        return cls(
            scene_id=d["scene_id"],
            verdict=d["verdict"],
            reviewer_id=d.get("reviewer_id", ""),
            sequence_no=int(d["sequence_no"]),
            decided_at=d.get("decided_at", ""),
            corrected_annotation=MachineAnnotation.from_dict(corrected) if corrected else None,
        )


@dataclass
class ExportedScene:
    scene_id: str
    image_ref: str
    score: float
    annotation: MachineAnnotation
    qa: dict | None = None

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "image_ref": self.image_ref,
            "score": self.score,
            "annotation": self.annotation.to_dict(),
            "qa": self.qa,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExportedScene":
        return cls(
            scene_id=d["scene_id"],
            image_ref=d["image_ref"],
            score=float(d["score"]),
            annotation=MachineAnnotation.from_dict(d["annotation"]),
            qa=d.get("qa"),
        )


@dataclass
class TestSetExport:
    __test__ = False  # pytest: domain type, not a test class

    scenes: list[ExportedScene]
    target_size: int
    checksum: str

    def to_dict(self) -> dict:
        return {
            "scenes": [s.to_dict() for s in self.scenes],
            "target_size": self.target_size,
            "checksum": self.checksum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TestSetExport":
        return cls(
            scenes=[ExportedScene.from_dict(s) for s in d["scenes"]],
            target_size=int(d["target_size"]),
            checksum=d["checksum"],
        )

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: Path) -> "TestSetExport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _export_checksum(scenes: Iterable[ExportedScene]) -> str:
    # Timestamps stay out of the digest so a replayed log yields the same
    # checksum regardless of when decisions were made.
    payload = json.dumps(
        [s.to_dict() for s in scenes], ensure_ascii=False, sort_keys=True
    ).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


@dataclass
class EnqueueResult:
    enqueued: int = 0
    held_back: list[str] = field(default_factory=list)
    already_present: int = 0


class ReviewQueue:
    """Durable review queue: append-only event log plus optional snapshot.

    submit paths append (flush + fsync) before acknowledging; the in-memory
    state is only updated after the event is on disk.
    """

    def __init__(
        self,
        root: Path,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.root = Path(root)
        self.lease_seconds = lease_seconds
        self._clock = clock
        self._lock = threading.Lock()
        self._seq = 0
        self.candidates: dict[str, ReviewCandidate] = {}
        self.decisions: dict[str, ReviewDecision] = {}
        self._leases: dict[str, tuple[str, float]] = {}  # scene_id -> (reviewer, expiry)

    # -- persistence --------------------------------------------------------

    @property
    def log_path(self) -> Path:
        return self.root / LOG_FILE

    @classmethod
    def open(
        cls,
        root: Path,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        clock: Callable[[], float] = time.monotonic,
    ) -> "ReviewQueue":
        """Load queue state by replaying the event log from the start."""
        queue = cls(root, lease_seconds=lease_seconds, clock=clock)
        if queue.log_path.exists():
            with open(queue.log_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        queue._apply_event(json.loads(line))
        return queue

    def _append_event(self, event: dict) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False, sort_keys=True))
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _apply_event(self, event: dict) -> None:
        kind = event["event"]
        self._seq = max(self._seq, int(event["seq"]))
        if kind == "enqueue":
            candidate = ReviewCandidate.from_dict(event["candidate"])
            candidate.status = "pending"
            self.candidates.setdefault(candidate.scene_id, candidate)
        elif kind == "decision":
            decision = ReviewDecision.from_dict(event["decision"])
            current = self.decisions.get(decision.scene_id)
            if current is None or decision.sequence_no > current.sequence_no:
                self.decisions[decision.scene_id] = decision
            candidate = self.candidates.get(decision.scene_id)
            if candidate is not None:
                candidate.status = "decided"
            self._leases.pop(decision.scene_id, None)
        else:
            logger.warning("unknown review event kind %r ignored", kind)

    def snapshot(self, path: Path | None = None) -> Path:
        """Point-in-time state dump; informational, replay remains the source
        of truth."""
        path = Path(path) if path else self.root / SNAPSHOT_FILE
        with self._lock:
            payload = {
                "seq": self._seq,
                "candidates": [c.to_dict() for c in self._ordered_candidates()],
                "decisions": [
                    self.decisions[k].to_dict() for k in sorted(self.decisions)
                ],
            }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        return path

    # -- queue operations ----------------------------------------------------

    def _ordered_candidates(self) -> list[ReviewCandidate]:
        return sorted(self.candidates.values(), key=lambda c: (-c.score, c.scene_id))

    def enqueue_candidates(self, candidates: Iterable[ReviewCandidate]) -> EnqueueResult:
        """Add candidates as pending; re-enqueueing an existing scene is a
        no-op, and candidates without a machine annotation are held back."""
        result = EnqueueResult()
        for candidate in candidates:
            try:
                candidate.machine_annotation.validate()
            except AnnotationSchemaError as exc:
                result.held_back.append(candidate.scene_id)
                logger.warning("candidate %s held back: %s", candidate.scene_id, exc)
                continue
            with self._lock:
                if candidate.scene_id in self.candidates:
                    result.already_present += 1
                    continue
                self._seq += 1
                event = {
                    "event": "enqueue",
                    "seq": self._seq,
                    "candidate": candidate.to_dict(),
                }
                self._append_event(event)
                self._apply_event(event)
                result.enqueued += 1
        return result

    def _expire_leases(self, now: float) -> None:
        expired = [sid for sid, (_, expiry) in self._leases.items() if expiry <= now]
        for sid in expired:
            del self._leases[sid]
            candidate = self.candidates.get(sid)
            if candidate is not None and candidate.status == "in_review":
                candidate.status = "pending"

    def next_candidate(self, reviewer_id: str) -> ReviewCandidate | None:
        """Lease the highest-score pending candidate to this reviewer.

        Atomic with respect to concurrent calls; a reviewer re-asking while
        holding a live lease gets the same candidate back.
        """
        with self._lock:
            now = self._clock()
            self._expire_leases(now)
            for sid, (holder, _) in self._leases.items():
                if holder == reviewer_id:
                    return self.candidates[sid]
            for candidate in self._ordered_candidates():
                if candidate.status == "pending":
                    candidate.status = "in_review"
                    self._leases[candidate.scene_id] = (
                        reviewer_id,
                        now + self.lease_seconds,
                    )
                    return candidate
            return None

    def lease_holder(self, scene_id: str) -> str | None:
        with self._lock:
            self._expire_leases(self._clock())
            lease = self._leases.get(scene_id)
            return lease[0] if lease else None

    def submit_decision(
        self,
        scene_id: str,
        verdict: str,
        reviewer_id: str,
        corrected_annotation: MachineAnnotation | dict | None = None,
    ) -> int:
        """Durably record a decision; returns its sequence_no.

        Later decisions supersede earlier ones for the same scene (second
        review passes are normal). The candidate stays in_review if the
        corrected annotation fails schema validation.
        """
        if verdict not in VERDICTS:
            raise ReviewError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        if scene_id not in self.candidates:
            raise UnknownSceneError(f"unknown scene_id {scene_id!r}")
        if isinstance(corrected_annotation, dict):
            corrected_annotation = MachineAnnotation.from_dict(corrected_annotation)
        if corrected_annotation is not None:
            corrected_annotation.validate()
        with self._lock:
            self._seq += 1
            decision = ReviewDecision(
                scene_id=scene_id,
                verdict=verdict,
                reviewer_id=reviewer_id,
                sequence_no=self._seq,
                decided_at=datetime.now(timezone.utc).isoformat(),
                corrected_annotation=corrected_annotation,
            )
            event = {"event": "decision", "seq": self._seq, "decision": decision.to_dict()}
            self._append_event(event)
            self._apply_event(event)
            return decision.sequence_no

    def stats(self) -> dict:
        with self._lock:
            self._expire_leases(self._clock())
            by_status = {"pending": 0, "in_review": 0, "decided": 0}
            for candidate in self.candidates.values():
                by_status[candidate.status] += 1
            accepted = sum(1 for d in self.decisions.values() if d.verdict == "accept")
            rejected = sum(1 for d in self.decisions.values() if d.verdict == "reject")
            return {
                "total": len(self.candidates),
                **by_status,
                "accepted": accepted,
                "rejected": rejected,
            }

    def effective_annotation(self, scene_id: str) -> MachineAnnotation:
        decision = self.decisions.get(scene_id)
        if decision is not None and decision.corrected_annotation is not None:
            return decision.corrected_annotation
        return self.candidates[scene_id].machine_annotation

    def accepted_scene_ids(self) -> list[str]:
        return sorted(sid for sid, d in self.decisions.items() if d.verdict == "accept")

    def rejected_scene_ids(self) -> list[str]:
        return sorted(sid for sid, d in self.decisions.items() if d.verdict == "reject")

    def export_test_set(
        self, target_size: int = DEFAULT_TEST_SET_SIZE, force_partial: bool = False
    ) -> TestSetExport:
        """Export the highest-score accepted scenes with their final
        (corrected when present) annotations."""
        if target_size < 1:
            raise ReviewError(f"target_size must be >= 1, got {target_size}")
        undecided = [c for c in self.candidates.values() if c.status != "decided"]
        if undecided and not force_partial:
            raise ReviewError(
                f"{len(undecided)} candidates still undecided; pass force_partial to export anyway"
            )
        accepted = [self.candidates[sid] for sid in self.accepted_scene_ids()]
        if not accepted:
            raise ReviewError("no accepted scenes to export")
        accepted.sort(key=lambda c: (-c.score, c.scene_id))
        chosen = accepted[:target_size]
        if len(chosen) < target_size:
            logger.warning(
                "test-set shortfall: %d accepted scenes for target %d",
                len(chosen),
                target_size,
            )
        scenes = [
            ExportedScene(
                scene_id=c.scene_id,
                image_ref=c.image_ref,
                score=c.score,
                annotation=self.effective_annotation(c.scene_id),
                qa=c.qa,
            )
            for c in chosen
        ]
        return TestSetExport(
            scenes=scenes,
            target_size=target_size,
            checksum=_export_checksum(scenes),
        )

    def state_digest(self) -> str:
        """Hash of the durable queue state (leases excluded: they expire)."""
        with self._lock:
            payload = {
                "candidates": [
                    {**c.to_dict(), "status": "decided" if c.status == "decided" else "pending"}
                    for c in self._ordered_candidates()
                ],
                "decisions": [self.decisions[k].to_dict() for k in sorted(self.decisions)],
            }
        return hashlib.sha256(
            json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8")
        ).hexdigest()
