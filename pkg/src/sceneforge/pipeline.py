"""Stage functions shared by the CLI: each reads and writes well-known files
under the store root so stages can be re-run independently.

Store layout:
    scenes.jsonl          scene store (corpus)
    manifests.jsonl       ingest manifests
    elements.jsonl        per-scene element sets
    element_stats.json    frequency summary
    frequency.json        document-frequency table
    scores.csv            audit scores (fixed 6-decimal)
    scores_detail.jsonl   scores incl. per-element rarities
    selection.json        mined candidate selection
    review/               append-only review log
    test_set.json         exported forgetting test set
    runs/<run_id>/        transcripts, verdicts, meta
    reports/              report.txt + report.json
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import corpus, elements, evalharness, metrics, rarity, review
from .config import PipelineConfig, data_path

logger = logging.getLogger(__name__)

ELEMENT_STATS_FILE = "element_stats.json"
RUNS_DIR = "runs"
REPORTS_DIR = "reports"

TASK_ALIASES = {
    "sd": "scene_description",
    "tqa": "traffic_qa",
    "nop": "noteworthy_objects",
}


class PipelineError(Exception):
    pass


def resolve_tasks(spec: str) -> list[str]:
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        task = TASK_ALIASES.get(part, part)
        if task not in evalharness.TASKS:
            raise PipelineError(f"unknown task {part!r}")
        if task not in out:
            out.append(task)
    if not out:
        raise PipelineError("no tasks selected")
    return out


@contextlib.contextmanager
def store_lock(store_root: Path):
    """Advisory lock: one write-stage subcommand owns the store at a time."""
    import fcntl

    store_root = Path(store_root)
    store_root.mkdir(parents=True, exist_ok=True)
    lock_file = open(store_root / ".lock", "w")
    try:
        fcntl.flock(lock_file, fcntl.LOCK_EX)
        yield
    finally:
        fcntl.flock(lock_file, fcntl.LOCK_UN)
        lock_file.close()


def _store_root(config: PipelineConfig) -> Path:
    if not config.store_root:
        raise PipelineError(
            "no store root configured (use --store, $FORGE_STORE, or the config file)"
        )
    return Path(config.store_root)


# ---------------------------------------------------------------------------
# Corpus stages
# ---------------------------------------------------------------------------


def stage_ingest(
    config: PipelineConfig,
    input_path: Path,
    adapter_id: str,
    source_name: str | None = None,
) -> corpus.SourceManifest:
    root = _store_root(config)
    with store_lock(root):
        store = corpus.SceneStore.open(root)
        policy = corpus.ReductionPolicy(
            front_view_tag=config.front_view_tag,
            keyframe_strategy=config.keyframe_strategy,
        )
        manifest = corpus.ingest_source(
            store, Path(input_path), adapter_id, policy=policy, source_name=source_name
        )
        classifier = corpus.KeywordClassifier(
            json.loads(config.resolved_classifier_rules().read_text(encoding="utf-8"))
        )
        corpus.classify_store(store, classifier)
        store.save()
    return manifest


def stage_export_train(config: PipelineConfig, out_path: Path) -> corpus.ExportResult:
    root = _store_root(config)
    store = corpus.SceneStore.open(root)
    return corpus.export_training_set(store, Path(out_path))


# ---------------------------------------------------------------------------
# Elements stage
# ---------------------------------------------------------------------------


def load_prompt_template(path: Path) -> str:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return "\n".join(line for line in lines if not line.startswith("#")).strip() + "\n"


def build_extractor(config: PipelineConfig, taxonomy, synonyms) -> elements.ElementExtractor:
    if config.extractor == "offline":
        vocabulary = list(taxonomy.term_to_minor) + list(synonyms)
        return elements.DictionaryExtractor(vocabulary)
    if config.extractor == "remote":
        if not config.extractor_endpoint:
            raise PipelineError(
                "remote extractor requires extractor_endpoint in the config"
            )
        spec = load_endpoint_config(Path(config.extractor_endpoint))
        template = load_prompt_template(data_path("extractor_prompt.txt"))
        return elements.RemoteExtractor(spec.backend, template)
    raise PipelineError(f"unknown extractor {config.extractor!r}")


def stage_extract(config: PipelineConfig, out_path: Path | None = None) -> Path:
    root = _store_root(config)
    with store_lock(root):
        store = corpus.SceneStore.open(root)
        if len(store) == 0:
            raise PipelineError("store is empty; run ingest first")
        taxonomy = elements.load_taxonomy(config.resolved_taxonomy())
        synonyms = elements.load_synonyms(config.resolved_synonyms())
        extractor = build_extractor(config, taxonomy, synonyms)
        results = []
        no_element_scenes = []
        for record in store.records():
            scene = elements.extract_elements(record, extractor, synonyms, taxonomy)
            if scene.no_elements:
                no_element_scenes.append(record.scene_id)
            results.append(scene)
        out = Path(out_path) if out_path else root / elements.ELEMENTS_FILE
        elements.write_scene_elements(results, out)
        stats = elements.corpus_statistics(results, no_element_scenes)
        (root / ELEMENT_STATS_FILE).write_text(
            json.dumps(stats.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    return out


# ---------------------------------------------------------------------------
# Rarity stages
# ---------------------------------------------------------------------------


def rarity_params(config: PipelineConfig) -> rarity.RarityParams:
    return rarity.RarityParams(alpha=config.alpha, k=config.k, b=config.b)


def stage_score(config: PipelineConfig) -> Path:
    root = _store_root(config)
    with store_lock(root):
        elements_path = root / elements.ELEMENTS_FILE
        if not elements_path.exists():
            raise PipelineError("no elements file; run extract first")
        all_elements = elements.read_scene_elements(elements_path)
        snapshot = _file_checksum(elements_path)
        table = rarity.build_frequency_table(all_elements, built_from=snapshot)
        (root / rarity.FREQUENCY_FILE).write_text(
            json.dumps(table.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        params = rarity_params(config)
        scores = rarity.score_corpus(all_elements, table, params)
        rarity.write_scores(scores, root / rarity.SCORES_FILE)
        rarity.write_scores_detail(scores, root / rarity.SCORES_DETAIL_FILE)
    return root / rarity.SCORES_FILE


def stage_mine(
    config: PipelineConfig,
    percentile: float | None = None,
    out_path: Path | None = None,
) -> rarity.SelectionResult:
    """Rank, select the top percentile, mark them candidates, and enqueue
    them for review with machine annotations."""
    root = _store_root(config)
    pct = percentile if percentile is not None else config.percentile
    with store_lock(root):
        detail_path = root / rarity.SCORES_DETAIL_FILE
        if not detail_path.exists():
            raise PipelineError("no scores; run score first")
        scores = rarity.read_scores_detail(detail_path)
        selection = rarity.rank_and_select(scores, pct)
        out = Path(out_path) if out_path else root / rarity.SELECTION_FILE
        out.parent.mkdir(parents=True, exist_ok=True)
        payload = {**selection.to_dict(), "config_checksum": config.checksum()}
        out.write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

        store = corpus.SceneStore.open(root)
        by_id = {s.scene_id: s for s in scores}
        annotator = OfflineAnnotator()
        candidates = []
        for scene_id in selection.selected:
            record = store.get(scene_id)
            if record is None:
                logger.warning("selected scene %s missing from store; skipped", scene_id)
                continue
            if record.split == "train":
                store.set_split(scene_id, "candidate")
            scored = by_id[scene_id]
            annotation = annotator.annotate(record)
            candidates.append(
                review.ReviewCandidate(
                    scene_id=scene_id,
                    image_ref=record.image_ref,
                    score=scored.score,
                    machine_annotation=annotation,
                    element_rarities=scored.element_rarities,
                    qa=_pick_eval_qa(record),
                )
            )
        queue = review.ReviewQueue.open(root / "review", lease_seconds=config.lease_seconds)
        result = queue.enqueue_candidates(candidates)
        store.save()
        logger.info(
            "mined %d candidates (%d new, %d held back)",
            len(selection.selected),
            result.enqueued,
            len(result.held_back),
        )
    return selection


# ---------------------------------------------------------------------------
# Machine annotation
# ---------------------------------------------------------------------------


def _pick_eval_qa(record: corpus.SceneRecord) -> dict | None:
    chosen = None
    for pair in record.qa_pairs:
        if pair.qa_kind == "traffic_qa":
            chosen = pair
            break
    if chosen is None and record.qa_pairs:
        chosen = record.qa_pairs[0]
    if chosen is None:
        return None
    return {"question": chosen.question, "answer": chosen.answer}


class OfflineAnnotator:
    """Derives machine annotations from the scene's own QA text; hermetic
    stand-in for the remote re-annotation model."""

    def annotate(self, record: corpus.SceneRecord) -> review.MachineAnnotation:
        description = ""
        for pair in record.qa_pairs:
            if pair.qa_kind == "scene_description":
                description = pair.answer
                break
        if not description:
            description = " ".join(p.answer for p in record.qa_pairs) or record.scene_id
        objects: list[str] = []
        for pair in record.qa_pairs:
            if pair.qa_kind == "noteworthy_objects":
                objects = [part.strip() for part in pair.answer.split(",") if part.strip()]
                break
        if not objects:
            objects = [record.scene_id]
        return review.MachineAnnotation(
            scene_description=description, noteworthy_objects=objects
        )


class RemoteAnnotator:
    """Re-annotation through a chat endpoint; expects a JSON object with
    scene_description and noteworthy_objects keys in the reply."""

    PROMPT = (
        "Re-annotate this driving scene. Reply with a JSON object with keys "
        '"scene_description" (detailed paragraph) and "noteworthy_objects" '
        "(list of short object descriptions). Existing annotations:\n{annotations}"
    )

    def __init__(self, backend):
        self.backend = backend

    def annotate(self, record: corpus.SceneRecord) -> review.MachineAnnotation:
        reply = self.backend.complete(
            evalharness.BackendRequest(
                prompt=self.PROMPT.format(annotations=record.annotation_text()),
                image_ref=record.image_ref,
                scene_id=record.scene_id,
            )
        )
        return review.MachineAnnotation.from_dict(json.loads(reply))


# ---------------------------------------------------------------------------
# Review stages
# ---------------------------------------------------------------------------


def open_queue(config: PipelineConfig) -> review.ReviewQueue:
    root = _store_root(config)
    return review.ReviewQueue.open(root / "review", lease_seconds=config.lease_seconds)


def stage_review_auto(config: PipelineConfig, verdict: str = "accept") -> int:
    """Scripted review stub: decide every pending candidate with one verdict.
    For hermetic runs and smoke tests; real review goes through the service."""
    root = _store_root(config)
    with store_lock(root):
        queue = open_queue(config)
        count = 0
        while True:
            candidate = queue.next_candidate("auto-reviewer")
            if candidate is None:
                break
            queue.submit_decision(candidate.scene_id, verdict, "auto-reviewer")
            count += 1
    return count


def stage_export_test(
    config: PipelineConfig, target_size: int | None = None, force_partial: bool = False
) -> Path:
    root = _store_root(config)
    size = target_size if target_size is not None else config.test_set_size
    with store_lock(root):
        queue = open_queue(config)
        export = queue.export_test_set(size, force_partial=force_partial)
        store = corpus.SceneStore.open(root)
        for scene in export.scenes:
            if scene.scene_id in store:
                store.set_split(scene.scene_id, "test")
        for scene_id in queue.rejected_scene_ids():
            record = store.get(scene_id)
            if record is not None and record.split == "candidate":
                store.set_split(scene_id, "train")
        store.save()
        path = export.save(root / review.TEST_SET_FILE)
    return path


# ---------------------------------------------------------------------------
# Evaluation stages
# ---------------------------------------------------------------------------


@dataclass
class EndpointSpec:
    backend: evalharness.Backend
    endpoint: evalharness.ModelEndpoint
    name: str


def load_endpoint_config(path: Path) -> EndpointSpec:
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = cfg.get("kind", "http")
    name = cfg.get("model_name") or cfg.get("judge_name") or kind
    if kind == "mock":
        backend = evalharness.MockModel(
            mode=cfg.get("mode", "fixed"),
            response=cfg.get("response", "ok"),
            model_name=name,
        )
        endpoint = evalharness.ModelEndpoint(model_name=name)
        return EndpointSpec(backend=backend, endpoint=endpoint, name=name)
    if kind == "offline-judge":
        return EndpointSpec(
            backend=evalharness.OverlapJudge(judge_name=name),
            endpoint=evalharness.ModelEndpoint(model_name=name),
            name=name,
        )
    if kind == "scripted-judge":
        script_raw = json.loads(Path(cfg["script_path"]).read_text(encoding="utf-8"))
        script = {
            (entry["scene_id"], entry["task"]): entry["output"] for entry in script_raw
        }
        return EndpointSpec(
            backend=evalharness.ScriptedJudge(script, judge_name=name),
            endpoint=evalharness.ModelEndpoint(model_name=name),
            name=name,
        )
    if kind == "http":
        endpoint = evalharness.ModelEndpoint(
            model_name=cfg["model_name"],
            endpoint_url=cfg["endpoint_url"],
            auth_ref=cfg.get("auth_env", ""),
            image_mode=cfg.get("image_mode", "base64"),
            max_in_flight=int(cfg.get("max_in_flight", 8)),
            retry=evalharness.RetryPolicy(
                attempts=int(cfg.get("retries", 3)),
                backoff_seconds=float(cfg.get("backoff_seconds", 0.5)),
                timeout_seconds=float(cfg.get("timeout_seconds", 60.0)),
            ),
        )
        return EndpointSpec(
            backend=evalharness.ChatCompletionsBackend(endpoint),
            endpoint=endpoint,
            name=endpoint.model_name,
        )
    raise PipelineError(f"unknown endpoint kind {kind!r} in {path}")


def stage_eval(
    config: PipelineConfig,
    model_config: Path,
    judge_configs: Sequence[Path],
    tasks: Sequence[str],
    run_id: str,
) -> Path:
    root = _store_root(config)
    test_set_path = root / review.TEST_SET_FILE
    if not test_set_path.exists():
        raise PipelineError("no test set; run export-test first")
    test_set = review.TestSetExport.load(test_set_path)
    specs = evalharness.load_task_specs(config.resolved_template_dir())
    model = load_endpoint_config(Path(model_config))
    judges = {}
    for judge_path in judge_configs:
        judge = load_endpoint_config(Path(judge_path))
        judges[judge.name] = judge.backend
    result = evalharness.run_evaluation(
        test_set, specs, model.backend, model.endpoint, judges, run_id, tasks=tasks
    )
    run_dir = evalharness.save_run(result, root / RUNS_DIR)
    meta_path = run_dir / "meta.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    meta["config_checksum"] = config.checksum()
    meta_path.write_text(
        json.dumps(meta, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return run_dir


def stage_report(
    config: PipelineConfig,
    run_ids: Sequence[str],
    base_run: str | None,
    out_dir: Path | None = None,
    judge_name: str | None = None,
) -> tuple[Path, Path]:
    root = _store_root(config)
    runs_dir = root / RUNS_DIR
    base_results: dict[str, metrics.ModelEvalResult] = {}
    base_model_name = ""
    if base_run:
        base_result = evalharness.load_run(runs_dir, base_run)
        judge = judge_name or base_result.judge_names[0]
        base_agg = metrics.aggregate_run(base_result, judge)
        base_model_name = base_result.model_name
        base_results[base_model_name] = base_agg

    results = []
    template_checksums: dict = {}
    test_set_checksum = ""
    runs = []
    for run_id in run_ids:
        run = evalharness.load_run(runs_dir, run_id)
        runs.append(run)
        judge = judge_name or run.judge_names[0]
        results.append(metrics.aggregate_run(run, judge, base_model=base_model_name))
        template_checksums = run.template_checksums
        test_set_checksum = run.test_set_checksum
    if base_model_name:
        base_row = base_results[base_model_name]
        results.append(base_row)

    rows = metrics.krr_rows(
        [r for r in results if r.base_model], base_results
    )

    # agreement section appears when the same >=2 judges covered >=3 models
    agreement = None
    common_judges = set.intersection(*(set(r.judge_names) for r in runs)) if runs else set()
    if len(common_judges) >= 2 and len({r.model_name for r in runs}) >= 3:
        per_judge = {
            judge: [metrics.aggregate_run(r, judge) for r in runs]
            for judge in sorted(common_judges)
        }
        try:
            agreement = metrics.judge_agreement(metrics.JudgePanelResult.from_results(per_judge))
        except metrics.MetricError as exc:
            logger.info("judge agreement skipped: %s", exc)
    assumptions = {
        "judge_scale": f"{evalharness.SCORE_SCALE[0]:.0f}-{evalharness.SCORE_SCALE[1]:.0f} (assumed)",
        "rarity_params": json.dumps(rarity_params(config).to_dict(), sort_keys=True),
        "template_checksums": json.dumps(template_checksums, sort_keys=True),
        "templates_note": "bundled reconstructions; scores are not comparable across template versions",
        "config_checksum": config.checksum(),
        "test_set_checksum": test_set_checksum,
    }
    text, data = metrics.build_report(results, rows, agreement, assumptions)
    out = Path(out_dir) if out_dir else root / REPORTS_DIR
    return metrics.write_report(text, data, out)


def _file_checksum(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()
