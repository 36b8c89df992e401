#!/usr/bin/env python3
"""Regenerate the bundled 50-scene fixture (deterministic).

Input records: 57 raw rows that reduce to exactly 50 stored scenes
(one multi-view group, one 4-frame clip, one group with no front view).
"""

from __future__ import annotations

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src/sceneforge/data/fixtures/scenes50.jsonl"

COMMON = [
    "car", "pedestrian", "traffic light", "truck", "bus", "bicycle",
    "crosswalk", "building", "tree", "traffic cone", "motorcycle", "sidewalk",
]
RARE = [
    "goose", "police officer", "ship", "excavator", "ambulance", "deer",
    "rickshaw", "snowplow", "wheelchair", "flood", "fire truck", "cattle",
]

DESC = "The road ahead shows {things}. Traffic is moving at moderate speed."
NOTE_Q = "List the noteworthy objects in this scene."
DESC_Q = "Describe the scene."
TSU_Q = "What objects are visible ahead?"
TSU_A = "Visible ahead: {things}."
MAD_Q = "Should the ego vehicle slow down here?"
MAD_A = "Yes, the ego vehicle should slow down because of the {hazard}."


def scene_row(scene_id: str, elems: list[str], hazard: str, **extra) -> dict:
    things = ", ".join(elems)
    qa = [
        {"question": DESC_Q, "answer": DESC.format(things=things), "qa_kind": "scene_description"},
        {"question": NOTE_Q, "answer": ", ".join(elems), "qa_kind": "noteworthy_objects"},
        {"question": TSU_Q, "answer": TSU_A.format(things=things), "qa_kind": "traffic_qa"},
        {"question": MAD_Q, "answer": MAD_A.format(hazard=hazard), "qa_kind": "other"},
    ]
    row = {
        "scene_id": scene_id,
        "source_dataset": "fixture-set",
        "image_ref": f"images/{scene_id}.jpg",
        "provenance": f"orig:{scene_id}",
        "qa_pairs": qa,
    }
    row.update(extra)
    return row


def main() -> None:
    rng = random.Random(20240501)
    rows: list[dict] = []

    for i in range(1, 47):
        sid = f"fx-{i:03d}"
        n_common = rng.randint(2, 6)
        elems = rng.sample(COMMON, n_common)
        if i % 4 == 0:  # every fourth scene carries one rare element
            elems.append(RARE[(i // 4 - 1) % len(RARE)])
        if i % 15 == 0:  # a couple of very rare double-hit scenes
            elems.append(RARE[(i // 15 + 5) % len(RARE)])
        hazard = elems[-1]
        rows.append(scene_row(sid, elems, hazard))

    # Multi-view group: only the front view survives.
    for view in ("front", "left", "right"):
        elems = ["car", "goose", "police officer"] if view == "front" else ["car"]
        rows.append(
            scene_row(
                f"fx-047-{view}", elems, "goose",
                group_id="grp-view-047", view=view,
            )
        )

    # Clip of four frames: middle frame (index 2) is the keyframe.
    clip_elems = ["truck", "ship", "traffic cone"]
    for frame in range(4):
        row = scene_row(
            f"fx-048-f{frame}", clip_elems, "ship",
            group_id="grp-clip-048", frame_index=frame,
        )
        # Frame-tagged QA: only the frame-2 one must survive reduction.
        row["qa_pairs"].append(
            {
                "question": f"What happens at frame {frame}?",
                "answer": f"Frame {frame} event near the ship.",
                "qa_kind": "other",
                "frame_index": frame,
            }
        )
        rows.append(row)

    # Group with no front view: excluded by reduction.
    for view in ("left", "right"):
        rows.append(
            scene_row(
                f"fx-drop-{view}", ["car"], "car",
                group_id="grp-noview", view=view,
            )
        )

    rows.append(scene_row("fx-049", ["car", "pedestrian", "ambulance", "flood"], "flood"))
    rows.append(scene_row("fx-050", ["bus", "crosswalk", "deer", "excavator"], "deer"))

    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} raw rows to {OUT}")


if __name__ == "__main__":
    main()
