from __future__ import annotations

import json
from pathlib import Path

import pytest

from sceneforge.corpus import QAPair, SceneRecord, SceneStore
from sceneforge.elements import Element, SceneElements
from sceneforge.review import MachineAnnotation, ReviewCandidate, ReviewQueue


def make_record(scene_id: str, elements_text: str = "a car and a pedestrian", **kwargs) -> SceneRecord:
    defaults = dict(
        source_dataset="toy",
        image_ref=f"images/{scene_id}.jpg",
        qa_pairs=[
            QAPair(
                question="Describe the scene.",
                answer=elements_text,
                task_category="traffic_scene_understanding",
                qa_kind="scene_description",
            )
        ],
    )
    defaults.update(kwargs)
    return SceneRecord(scene_id=scene_id, **defaults)


def make_scene_elements(scene_id: str, names: list[str]) -> SceneElements:
    return SceneElements(scene_id=scene_id, elements=[Element(canonical_name=n) for n in names])


def make_candidate(scene_id: str, score: float, objects: list[str] | None = None) -> ReviewCandidate:
    return ReviewCandidate(
        scene_id=scene_id,
        image_ref=f"images/{scene_id}.jpg",
        score=score,
        machine_annotation=MachineAnnotation(
            scene_description=f"scene {scene_id} with traffic",
            noteworthy_objects=objects or ["car", "pedestrian"],
        ),
        qa={"question": "What is ahead?", "answer": f"traffic near {scene_id}"},
    )


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


@pytest.fixture
def store(tmp_path) -> SceneStore:
    return SceneStore(tmp_path / "store")


@pytest.fixture
def queue(tmp_path) -> ReviewQueue:
    return ReviewQueue(tmp_path / "review")
