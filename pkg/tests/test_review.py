from __future__ import annotations

import random
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from sceneforge.review import (
    AnnotationSchemaError,
    MachineAnnotation,
    ReviewError,
    ReviewQueue,
    TestSetExport,
    UnknownSceneError,
)

from conftest import make_candidate


class FakeClock:
    def __init__(self):
        self.now = 1000.0

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


class TestEnqueue:
    def test_all_pending_ordered_by_score(self, queue):
        result = queue.enqueue_candidates(
            [make_candidate("a", 5.0), make_candidate("b", 3.0), make_candidate("c", 9.0)]
        )
        assert result.enqueued == 3
        assert queue.stats()["pending"] == 3
        assert queue.next_candidate("r1").scene_id == "c"

    def test_missing_annotation_held_back(self, queue):
        bad = make_candidate("bad", 2.0)
        bad.machine_annotation = MachineAnnotation(scene_description="", noteworthy_objects=[])
        result = queue.enqueue_candidates([make_candidate("ok", 1.0), bad])
        assert result.enqueued == 1
        assert result.held_back == ["bad"]

    def test_reenqueue_is_idempotent(self, queue):
        candidates = [make_candidate("a", 1.0), make_candidate("b", 2.0)]
        queue.enqueue_candidates(candidates)
        second = queue.enqueue_candidates(candidates)
        assert second.enqueued == 0
        assert second.already_present == 2
        assert queue.stats()["total"] == 2


class TestNextCandidate:
    def test_empty_queue(self, queue):
        assert queue.next_candidate("r1") is None

    def test_highest_score_first_and_marked(self, queue):
        queue.enqueue_candidates([make_candidate("a", 5.0), make_candidate("b", 3.0)])
        candidate = queue.next_candidate("r1")
        assert candidate.scene_id == "a"
        assert candidate.status == "in_review"

    def test_concurrent_reviewers_get_disjoint_leases(self, tmp_path):
        queue = ReviewQueue(tmp_path / "rev")
        queue.enqueue_candidates([make_candidate(f"s{i}", float(i)) for i in range(16)])
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(lambda i: queue.next_candidate(f"rev-{i}"), range(8)))
        scene_ids = [c.scene_id for c in results if c is not None]
        assert len(scene_ids) == 8
        assert len(set(scene_ids)) == 8

    def test_same_reviewer_gets_same_lease_back(self, queue):
        queue.enqueue_candidates([make_candidate("a", 2.0), make_candidate("b", 1.0)])
        first = queue.next_candidate("r1")
        again = queue.next_candidate("r1")
        assert first.scene_id == again.scene_id

    def test_lease_expiry_returns_to_pending(self, tmp_path):
        clock = FakeClock()
        queue = ReviewQueue(tmp_path / "rev", lease_seconds=60, clock=clock)
        queue.enqueue_candidates([make_candidate("a", 1.0)])
        assert queue.next_candidate("r1").scene_id == "a"
        assert queue.next_candidate("r2") is None
        clock.advance(61)
        assert queue.next_candidate("r2").scene_id == "a"

    def test_all_decided_returns_none(self, queue):
        queue.enqueue_candidates([make_candidate("a", 1.0)])
        queue.submit_decision("a", "accept", "r1")
        assert queue.next_candidate("r1") is None

    def test_at_most_one_lease_holder(self, tmp_path):
        queue = ReviewQueue(tmp_path / "rev")
        queue.enqueue_candidates([make_candidate("only", 1.0)])
        seen = []
        lock = threading.Lock()

        def grab(reviewer):
            candidate = queue.next_candidate(reviewer)
            if candidate is not None:
                with lock:
                    seen.append(reviewer)

        with ThreadPoolExecutor(max_workers=6) as pool:
            list(pool.map(grab, [f"r{i}" for i in range(6)]))
        assert len(seen) == 1
        assert queue.lease_holder("only") == seen[0]


class TestSubmitDecision:
    def test_accept_with_correction_becomes_effective(self, queue):
        queue.enqueue_candidates([make_candidate("a", 1.0)])
        corrected = MachineAnnotation(
            scene_description="corrected description", noteworthy_objects=["deer"]
        )
        queue.submit_decision("a", "accept", "r1", corrected_annotation=corrected)
        assert queue.effective_annotation("a").scene_description == "corrected description"

    def test_later_decision_supersedes(self, queue):
        queue.enqueue_candidates([make_candidate("a", 1.0)])
        queue.submit_decision("a", "reject", "r1")
        queue.submit_decision("a", "accept", "r2")
        assert queue.accepted_scene_ids() == ["a"]
        assert queue.rejected_scene_ids() == []

    def test_unknown_scene_leaves_log_unchanged(self, queue):
        queue.enqueue_candidates([make_candidate("a", 1.0)])
        before = queue.log_path.read_bytes()
        with pytest.raises(UnknownSceneError):
            queue.submit_decision("ghost", "accept", "r1")
        assert queue.log_path.read_bytes() == before

    def test_invalid_correction_keeps_in_review(self, queue):
        queue.enqueue_candidates([make_candidate("a", 1.0)])
        queue.next_candidate("r1")
        with pytest.raises(AnnotationSchemaError):
            queue.submit_decision(
                "a", "accept", "r1",
                corrected_annotation={"scene_description": "", "noteworthy_objects": []},
            )
        assert queue.candidates["a"].status == "in_review"

    def test_sequence_numbers_monotone(self, queue):
        queue.enqueue_candidates([make_candidate("a", 1.0), make_candidate("b", 2.0)])
        first = queue.submit_decision("a", "accept", "r1")
        second = queue.submit_decision("b", "reject", "r1")
        assert second > first

    def test_bad_verdict_rejected(self, queue):
        queue.enqueue_candidates([make_candidate("a", 1.0)])
        with pytest.raises(ReviewError):
            queue.submit_decision("a", "maybe", "r1")


class TestExport:
    def _decided_queue(self, tmp_path, n_accept: int, n_reject: int = 0) -> ReviewQueue:
        queue = ReviewQueue(tmp_path / "rev")
        candidates = [make_candidate(f"s{i:03d}", float(i)) for i in range(n_accept + n_reject)]
        queue.enqueue_candidates(candidates)
        for i, candidate in enumerate(candidates):
            verdict = "accept" if i < n_accept else "reject"
            queue.submit_decision(candidate.scene_id, verdict, "r1")
        return queue

    def test_takes_highest_scores_up_to_target(self, tmp_path):
        queue = self._decided_queue(tmp_path, n_accept=15)
        export = queue.export_test_set(10)
        assert len(export.scenes) == 10
        scores = [s.score for s in export.scenes]
        assert scores == sorted(scores, reverse=True)
        assert export.scenes[0].scene_id == "s014"

    def test_shortfall_exports_what_exists(self, tmp_path):
        queue = self._decided_queue(tmp_path, n_accept=3)
        export = queue.export_test_set(1000)
        assert len(export.scenes) == 3
        assert export.target_size == 1000

    def test_rejected_never_exported(self, tmp_path):
        queue = self._decided_queue(tmp_path, n_accept=4, n_reject=4)
        export = queue.export_test_set(100)
        exported = {s.scene_id for s in export.scenes}
        assert exported == {"s000", "s001", "s002", "s003"}

    def test_zero_accepted_is_an_error(self, tmp_path):
        queue = self._decided_queue(tmp_path, n_accept=0, n_reject=2)
        with pytest.raises(ReviewError):
            queue.export_test_set(10)

    def test_undecided_blocks_unless_forced(self, queue):
        queue.enqueue_candidates([make_candidate("a", 1.0), make_candidate("b", 2.0)])
        queue.submit_decision("a", "accept", "r1")
        with pytest.raises(ReviewError):
            queue.export_test_set(10)
        export = queue.export_test_set(10, force_partial=True)
        assert [s.scene_id for s in export.scenes] == ["a"]

    def test_correction_lands_in_export(self, tmp_path):
        queue = ReviewQueue(tmp_path / "rev")
        queue.enqueue_candidates([make_candidate("a", 1.0)])
        queue.submit_decision(
            "a",
            "accept",
            "r1",
            corrected_annotation=MachineAnnotation(
                scene_description="fixed", noteworthy_objects=["goose"]
            ),
        )
        export = queue.export_test_set(5)
        assert export.scenes[0].annotation.scene_description == "fixed"
        assert export.scenes[0].annotation.noteworthy_objects == ["goose"]

    def test_replayed_log_gives_identical_checksum(self, tmp_path):
        queue = self._decided_queue(tmp_path, n_accept=6, n_reject=2)
        export = queue.export_test_set(4)
        replayed = ReviewQueue.open(tmp_path / "rev")
        export2 = replayed.export_test_set(4)
        assert export.checksum == export2.checksum
        assert export.to_dict() == export2.to_dict()

    def test_save_and_load_round_trip(self, tmp_path):
        queue = self._decided_queue(tmp_path, n_accept=3)
        export = queue.export_test_set(3)
        path = export.save(tmp_path / "test_set.json")
        loaded = TestSetExport.load(path)
        assert loaded.to_dict() == export.to_dict()


class TestDurability:
    def test_replay_after_every_append(self, tmp_path):
        rng = random.Random(42)
        root = tmp_path / "rev"
        queue = ReviewQueue(root)
        candidates = [make_candidate(f"s{i}", rng.random() * 10) for i in range(6)]
        queue.enqueue_candidates(candidates)
        for step in range(12):
            scene = rng.choice(candidates).scene_id
            verdict = rng.choice(["accept", "reject"])
            correction = None
            if rng.random() < 0.3:
                correction = MachineAnnotation(
                    scene_description=f"rewrite {step}", noteworthy_objects=["x"]
                )
            queue.submit_decision(scene, verdict, f"r{step % 3}", corrected_annotation=correction)
            replayed = ReviewQueue.open(root)
            assert replayed.state_digest() == queue.state_digest()

    def test_replay_reconstructs_pending_from_in_review(self, tmp_path):
        root = tmp_path / "rev"
        queue = ReviewQueue(root)
        queue.enqueue_candidates([make_candidate("a", 1.0), make_candidate("b", 2.0)])
        queue.next_candidate("r1")  # lease b
        replayed = ReviewQueue.open(root)
        # leases are transient: after a crash the candidate is pending again
        assert replayed.candidates["b"].status == "pending"
        assert replayed.state_digest() == queue.state_digest()
