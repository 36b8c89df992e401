from __future__ import annotations

import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneforge.config import data_path
from sceneforge.corpus import (
    KeywordClassifier,
    MalformedSourceError,
    QAPair,
    RecordValidationError,
    SceneRecord,
    SceneStore,
    SplitTransitionError,
    UnclassifiedExportError,
    UnknownAdapterError,
    classify_qa,
    classify_store,
    export_training_set,
    import_training_set,
    ingest_source,
    reduce_views_and_keyframes,
    registered_adapters,
)

from conftest import make_record, write_jsonl


def toy_rows(n: int = 3) -> list[dict]:
    return [
        {
            "scene_id": f"t{i}",
            "source_dataset": "toy",
            "image_ref": f"img/t{i}.jpg",
            "qa_pairs": [{"question": f"Q{i}?", "answer": f"A{i}"}],
        }
        for i in range(n)
    ]


def load_rules() -> KeywordClassifier:
    return KeywordClassifier(
        json.loads(data_path("classifier_rules.json").read_text(encoding="utf-8"))
    )


class TestIngest:
    def test_toy_source_count(self, store, tmp_path):
        path = write_jsonl(tmp_path / "toy.jsonl", toy_rows(3))
        manifest = ingest_source(store, path, "generic-jsonl")
        assert manifest.record_count == 3
        assert manifest.new_records == 3
        assert len(store) == 3
        assert all(r.split == "train" for r in store.records())

    def test_reingest_is_idempotent(self, store, tmp_path):
        path = write_jsonl(tmp_path / "toy.jsonl", toy_rows(3))
        ingest_source(store, path, "generic-jsonl")
        second = ingest_source(store, path, "generic-jsonl")
        assert second.new_records == 0
        assert second.duplicates == 3
        assert second.record_count == 3  # store still holds exactly 3
        assert len(store) == 3

    def test_record_missing_image_rejected_with_index(self, store, tmp_path, caplog):
        rows = toy_rows(3)
        rows[1]["image_ref"] = ""
        path = write_jsonl(tmp_path / "toy.jsonl", rows)
        with caplog.at_level("WARNING", logger="sceneforge.corpus"):
            manifest = ingest_source(store, path, "generic-jsonl")
        assert manifest.rejected == 1
        assert len(store) == 2
        assert any("record 1" in r.message for r in caplog.records)

    def test_unknown_adapter(self, store, tmp_path):
        path = write_jsonl(tmp_path / "toy.jsonl", toy_rows(1))
        with pytest.raises(UnknownAdapterError):
            ingest_source(store, path, "no-such-adapter")

    def test_syntax_error_aborts_with_index(self, store, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"scene_id": "ok", "image_ref": "x", "source_dataset": "toy"}\n{broken\n')
        with pytest.raises(MalformedSourceError) as excinfo:
            ingest_source(store, path, "generic-jsonl")
        assert excinfo.value.record_index == 1

    def test_stub_adapters_stamp_their_source(self, store, tmp_path):
        assert "drivelm" in registered_adapters()
        rows = toy_rows(2)
        for row in rows:
            row.pop("source_dataset")
        path = write_jsonl(tmp_path / "d.jsonl", rows)
        manifest = ingest_source(store, path, "drivelm")
        assert manifest.source_name == "drivelm"
        assert all(r.source_dataset == "drivelm" for r in store.records())

    def test_mixed_sources_rejected_per_record(self, store, tmp_path):
        rows = toy_rows(3)
        rows[2]["source_dataset"] = "different"
        path = write_jsonl(tmp_path / "toy.jsonl", rows)
        manifest = ingest_source(store, path, "generic-jsonl")
        assert manifest.rejected == 1
        assert len(store) == 2

    def test_concurrent_ingest_of_distinct_sources(self, store, tmp_path):
        paths = []
        for source in ("alpha", "beta", "gamma"):
            rows = [
                {
                    "scene_id": f"{source}-{i}",
                    "source_dataset": source,
                    "image_ref": "img.jpg",
                    "qa_pairs": [{"question": "Q?", "answer": "A"}],
                }
                for i in range(20)
            ]
            paths.append(write_jsonl(tmp_path / f"{source}.jsonl", rows))
        threads = [
            threading.Thread(target=ingest_source, args=(store, p, "generic-jsonl"))
            for p in paths
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(store) == 60


class TestReduction:
    @staticmethod
    def _clip(n_frames: int, group_id: str = "clip") -> list[SceneRecord]:
        records = []
        for frame in range(n_frames):
            rec = SceneRecord.from_dict(
                {
                    "scene_id": f"{group_id}-f{frame}",
                    "source_dataset": "toy",
                    "image_ref": f"img/f{frame}.jpg",
                    "group_id": group_id,
                    "frame_index": frame,
                    "qa_pairs": [{"question": "Clip-level?", "answer": "yes"}],
                }
            )
            records.append(rec)
        return records

    def test_clip_of_five_keeps_one(self):
        out, stats = reduce_views_and_keyframes(self._clip(5))
        assert len(out) == 1
        assert out[0].scene_id == "clip-f2"  # middle frame
        assert stats.records_dropped == 4

    def test_annotated_keyframe_wins(self):
        records = self._clip(5)
        records[4].group.is_keyframe = True
        out, _ = reduce_views_and_keyframes(records)
        assert out[0].scene_id == "clip-f4"

    def test_multi_view_keeps_front_only(self):
        records = []
        for view in ("front", "left", "right", "rear", "left_front", "right_front"):
            records.append(
                SceneRecord.from_dict(
                    {
                        "scene_id": f"v-{view}",
                        "source_dataset": "toy",
                        "image_ref": f"img/{view}.jpg",
                        "group_id": "views",
                        "view": view,
                        "qa_pairs": [{"question": "Q?", "answer": "A"}],
                    }
                )
            )
        out, _ = reduce_views_and_keyframes(records)
        assert [r.scene_id for r in out] == ["v-front"]

    def test_group_without_front_view_excluded_and_counted(self):
        records = []
        for view in ("left", "right"):
            records.append(
                SceneRecord.from_dict(
                    {
                        "scene_id": f"nf-{view}",
                        "source_dataset": "toy",
                        "image_ref": "img.jpg",
                        "group_id": "noview",
                        "view": view,
                        "qa_pairs": [{"question": "Q?", "answer": "A"}],
                    }
                )
            )
        out, stats = reduce_views_and_keyframes(records)
        assert out == []
        assert stats.excluded_groups == 1

    def test_qa_referencing_dropped_frame_pruned(self):
        records = self._clip(5)
        records[4].qa_pairs.append(
            QAPair(question="What happens at frame 4?", answer="event", frame_index=4)
        )
        records[2].qa_pairs.append(
            QAPair(question="What happens at frame 2?", answer="event", frame_index=2)
        )
        out, stats = reduce_views_and_keyframes(records)
        questions = [p.question for p in out[0].qa_pairs]
        assert "What happens at frame 2?" in questions
        assert "What happens at frame 4?" not in questions
        assert stats.qa_pruned == 1
        assert all(p.frame_index is None for p in out[0].qa_pairs)

    def test_ungrouped_records_pass_through(self):
        records = [make_record("solo-1"), make_record("solo-2")]
        out, stats = reduce_views_and_keyframes(records)
        assert [r.scene_id for r in out] == ["solo-1", "solo-2"]
        assert stats.records_dropped == 0

    def test_one_record_per_group_postcondition(self):
        records = self._clip(3, "a") + [make_record("solo")] + self._clip(4, "b")
        out, _ = reduce_views_and_keyframes(records)
        assert len(out) == 3


class TestClassifyQA:
    def test_scene_understanding_question(self):
        pair = QAPair(question="What objects are visible ahead?", answer="A car.")
        out = classify_qa(pair, load_rules())
        assert out.task_category == "traffic_scene_understanding"

    def test_action_question(self):
        pair = QAPair(question="Should the ego vehicle brake now?", answer="Yes.")
        out = classify_qa(pair, load_rules())
        assert out.task_category == "meta_action_decision"

    def test_empty_question_rejected(self):
        pair = QAPair(question="   ", answer="A")
        with pytest.raises(RecordValidationError):
            classify_qa(pair, load_rules())

    def test_deterministic(self):
        pair = QAPair(question="Describe the scene.", answer="A quiet road.")
        first = classify_qa(pair, load_rules())
        second = classify_qa(pair, load_rules())
        assert first.to_dict() == second.to_dict()
        assert first.qa_kind == "scene_description"

    def test_classify_store_fills_only_missing(self, store):
        store.add(make_record("s1"))
        record = make_record("s2")
        record.qa_pairs[0].task_category = None
        store.add(record)
        report = classify_store(store, load_rules())
        assert report.classified == 1
        assert report.already_classified == 1
        assert report.failed == []


class TestSplits:
    def test_forward_transitions(self, store):
        store.add(make_record("s"))
        store.set_split("s", "candidate")
        store.set_split("s", "train")  # rejection returns to the pool
        store.set_split("s", "candidate")
        store.set_split("s", "test")
        with pytest.raises(SplitTransitionError):
            store.set_split("s", "train")
        with pytest.raises(SplitTransitionError):
            store.set_split("s", "excluded")

    def test_excluded_is_terminal(self, store):
        store.add(make_record("s"))
        store.set_split("s", "excluded")
        with pytest.raises(SplitTransitionError):
            store.set_split("s", "train")


class TestExport:
    def test_counts_match_store(self, store, tmp_path):
        for i in range(10):
            record = make_record(f"s{i}")
            record.qa_pairs = [
                QAPair(
                    question=f"Q{j}?",
                    answer="A",
                    task_category="traffic_scene_understanding",
                )
                for j in range(4)
            ] + [
                QAPair(question="More?", answer="yes", task_category="meta_action_decision")
            ][: i % 2]
            store.add(record)
        expected_qa = sum(len(r.qa_pairs) for r in store.records())
        result = export_training_set(store, tmp_path / "train.jsonl")
        assert result.scene_count == 10
        assert result.qa_count == expected_qa

    def test_unclassified_refused_with_scene_ids(self, store, tmp_path):
        store.add(make_record("ok"))
        bad = make_record("bad")
        bad.qa_pairs[0].task_category = None
        store.add(bad)
        with pytest.raises(UnclassifiedExportError) as excinfo:
            export_training_set(store, tmp_path / "train.jsonl")
        assert excinfo.value.scene_ids == ["bad"]

    def test_round_trip_bit_identical(self, store, tmp_path):
        for i in range(5):
            record = make_record(f"s{i}", elements_text=f"unicode road é{i}")
            store.add(record)
        path = export_training_set(store, tmp_path / "train.jsonl").path
        reimported = import_training_set(path)
        assert [r.to_dict() for r in reimported] == [r.to_dict() for r in store.records()]
        # second export of the reimported store is byte-identical
        second_store = SceneStore(tmp_path / "store2")
        for record in reimported:
            second_store.add(record)
        path2 = export_training_set(second_store, tmp_path / "train2.jsonl").path
        assert path.read_bytes() == path2.read_bytes()

    def test_only_train_split_exported(self, store, tmp_path):
        store.add(make_record("keep"))
        gone = make_record("gone")
        store.add(gone)
        store.set_split("gone", "test")
        result = export_training_set(store, tmp_path / "train.jsonl")
        assert result.scene_count == 1

    @settings(max_examples=25, deadline=None)
    @given(
        n_scenes=st.integers(min_value=1, max_value=30),
        qa_per_scene=st.integers(min_value=1, max_value=6),
    )
    def test_export_counts_property(self, tmp_path_factory, n_scenes, qa_per_scene):
        store = SceneStore(tmp_path_factory.mktemp("prop"))
        for i in range(n_scenes):
            record = make_record(f"s{i}")
            record.qa_pairs = [
                QAPair(question=f"Q{j}?", answer="A", task_category="traffic_scene_understanding")
                for j in range(qa_per_scene)
            ]
            store.add(record)
        out = tmp_path_factory.mktemp("out") / "train.jsonl"
        result = export_training_set(store, out)
        assert result.scene_count == n_scenes
        assert result.qa_count == n_scenes * qa_per_scene


class TestStorePersistence:
    def test_save_and_reopen(self, tmp_path):
        store = SceneStore(tmp_path / "store")
        store.add(make_record("s1"))
        store.add(make_record("s2"))
        store.save()
        reopened = SceneStore.open(tmp_path / "store")
        assert len(reopened) == 2
        assert reopened.get("s1").to_dict() == store.get("s1").to_dict()

    def test_duplicate_add_keeps_original(self, store):
        original = make_record("dup", elements_text="original")
        assert store.add(original)
        assert not store.add(make_record("dup", elements_text="impostor"))
        assert store.get("dup").qa_pairs[0].answer == "original"


class FakeChatBackend:
    def __init__(self, reply: str | Exception):
        self.reply = reply
        self.prompts: list[str] = []

    def complete_text(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if isinstance(self.reply, Exception):
            raise self.reply
        return self.reply


class TestRemoteClassifier:
    def test_parses_category_and_kind(self):
        from sceneforge.corpus import RemoteClassifier

        backend = FakeChatBackend("CATEGORY: meta_action_decision\nKIND: traffic_qa")
        classifier = RemoteClassifier(backend)
        pair = classify_qa(QAPair(question="Should we stop?", answer="Yes"), classifier)
        assert pair.task_category == "meta_action_decision"
        assert pair.qa_kind == "traffic_qa"
        assert "Should we stop?" in backend.prompts[0]

    def test_backend_failure_queues_for_retry(self, store):
        from sceneforge.corpus import ClassificationError, RemoteClassifier

        record = make_record("s1")
        record.qa_pairs[0].task_category = None
        store.add(record)
        classifier = RemoteClassifier(FakeChatBackend(RuntimeError("endpoint down")))
        report = classify_store(store, classifier)
        assert report.classified == 0
        assert len(report.failed) == 1
        assert store.get("s1").qa_pairs[0].task_category is None  # never defaulted
        with pytest.raises(ClassificationError):
            classify_qa(QAPair(question="Q?", answer="A"), classifier)

    def test_unparseable_reply_is_an_error(self):
        from sceneforge.corpus import ClassificationError, RemoteClassifier

        classifier = RemoteClassifier(FakeChatBackend("I refuse to use the format."))
        with pytest.raises(ClassificationError):
            classify_qa(QAPair(question="Q?", answer="A"), classifier)
