"""Benchmark runner: three tasks against a model endpoint, judged by an LLM.

Tasks: free scene description, traffic question answering, and noteworthy
object perception. The model under test and every judge speak the same
chat-completions-style wire protocol; deterministic mock backends (fixed or
annotation-derived models, scripted or token-overlap judges) are first-class
so the whole harness runs hermetically with zero external calls.

Judges emit a strict delimited verdict block. One automatic repair re-ask is
attempted on a parse failure before the verdict is recorded as failed.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .review import ExportedScene, TestSetExport

logger = logging.getLogger(__name__)

TASKS = ("scene_description", "traffic_qa", "noteworthy_objects")

PERCEPTION_LABELS = ("clearly_perceived", "vaguely_perceived", "not_perceived")
_PERCEPTION_SCORES = {
    "clearly_perceived": 1.0,
    "vaguely_perceived": 0.5,
    "not_perceived": 0.0,
}

SCORE_SCALE = (0.0, 100.0)  # judge scale for SD and T-QA; an assumption,
# surfaced in every report header.


class EvalError(Exception):
    pass


class EndpointAuthError(EvalError):
    """Authentication failure: the whole run aborts rather than recording
    hundreds of identical failures."""


class BackendError(EvalError):
    pass


class JudgeParseError(EvalError):
    pass


def perception_label_to_score(label: str) -> float:
    """clearly_perceived -> 1.0, vaguely_perceived -> 0.5, not_perceived -> 0.0."""
    try:
        return _PERCEPTION_SCORES[label]
    except KeyError:
        raise EvalError(
            f"unknown perception label {label!r}; expected one of {PERCEPTION_LABELS}"
        ) from None


# ---------------------------------------------------------------------------
# Task specs and templates
# ---------------------------------------------------------------------------

_REQUIRED_PROMPT_SLOTS = {
    "scene_description": set(),
    "traffic_qa": {"question"},
    "noteworthy_objects": set(),
}
_REQUIRED_JUDGE_SLOTS = {
    "scene_description": {"response", "ground_truth"},
    "traffic_qa": {"question", "response", "ground_truth"},
    "noteworthy_objects": {"response", "objects"},
}
# Free-perception tasks must not leak ground truth into the model prompt.
_HINT_FREE_TASKS = ("scene_description", "noteworthy_objects")


def template_placeholders(template: str) -> set[str]:
    return {
        name for _, name, _, _ in string.Formatter().parse(template) if name
    }


def template_checksum(template: str) -> str:
    return hashlib.sha256(template.encode("utf-8")).hexdigest()


@dataclass
class TaskSpec:
    task: str
    prompt_template: str
    judge_template: str

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise EvalError(f"unknown task {self.task!r}")
        prompt_slots = template_placeholders(self.prompt_template)
        missing = _REQUIRED_PROMPT_SLOTS[self.task] - prompt_slots
        if missing:
            raise EvalError(f"{self.task} prompt template missing slots: {sorted(missing)}")
        if self.task in _HINT_FREE_TASKS and prompt_slots:
            raise EvalError(
                f"{self.task} prompt template must contain no placeholders "
                f"(no object hints), found {sorted(prompt_slots)}"
            )
        judge_slots = template_placeholders(self.judge_template)
        missing = _REQUIRED_JUDGE_SLOTS[self.task] - judge_slots
        if missing:
            raise EvalError(f"{self.task} judge template missing slots: {sorted(missing)}")

    def checksums(self) -> dict:
        return {
            "prompt": template_checksum(self.prompt_template),
            "judge": template_checksum(self.judge_template),
        }


def load_task_specs(template_dir: Path) -> dict[str, TaskSpec]:
    template_dir = Path(template_dir)
    specs = {}
    for task in TASKS:
        prompt = (template_dir / "prompts" / f"{task}.txt").read_text(encoding="utf-8")
        judge = (template_dir / "judges" / f"{task}.txt").read_text(encoding="utf-8")
        specs[task] = TaskSpec(task=task, prompt_template=prompt, judge_template=judge)
    return specs


# ---------------------------------------------------------------------------
# Endpoints and backends
# ---------------------------------------------------------------------------


@dataclass
class RetryPolicy:
    attempts: int = 3
    backoff_seconds: float = 0.5
    timeout_seconds: float = 60.0


@dataclass
class ModelEndpoint:
    """Where and how to reach a model. auth_ref names an environment variable;
    the key itself is never stored or serialized."""

    model_name: str
    endpoint_url: str = ""
    auth_ref: str = ""
    image_mode: str = "base64"  # or "url"
    max_in_flight: int = 8
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "endpoint_url": self.endpoint_url,
            "auth_ref": self.auth_ref,
            "image_mode": self.image_mode,
            "max_in_flight": self.max_in_flight,
        }


@dataclass
class BackendRequest:
    """One completion request. ``meta`` carries harness-side context (scene
    annotation, ground truth) that HTTP backends ignore and mock/offline
    backends may consult."""

    prompt: str
    image_ref: str = ""
    scene_id: str = ""
    task: str = ""
    meta: dict = field(default_factory=dict)


class Backend(Protocol):
    def complete(self, request: BackendRequest) -> str: ...


class ChatCompletionsBackend:
    """Chat-completions wire protocol over HTTP with retries and backoff.

    A 401/403 aborts immediately (EndpointAuthError); other failures retry
    up to the policy's attempt count and then raise BackendError.
    """

    def __init__(self, endpoint: ModelEndpoint, post: Callable | None = None):
        import os

        import requests

        self.endpoint = endpoint
        self._post = post or requests.post
        self._api_key = os.environ.get(endpoint.auth_ref, "") if endpoint.auth_ref else ""

    def _image_part(self, image_ref: str) -> dict:
        if self.endpoint.image_mode == "url":
            return {"type": "image_url", "image_url": {"url": image_ref}}
        data = Path(image_ref).read_bytes()
        encoded = base64.b64encode(data).decode("ascii")
        return {
            "type": "image_url",
            "image_url": {"url": f"data:image/jpeg;base64,{encoded}"},
        }

    def complete(self, request: BackendRequest) -> str:
        content: list[dict] = [{"type": "text", "text": request.prompt}]
        if request.image_ref:
            content.append(self._image_part(request.image_ref))
        payload = {
            "model": self.endpoint.model_name,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        policy = self.endpoint.retry
        delay = policy.backoff_seconds
        last_error: Exception | None = None
        for attempt in range(policy.attempts):
            try:
                response = self._post(
                    self.endpoint.endpoint_url,
                    json=payload,
                    headers=headers,
                    timeout=policy.timeout_seconds,
                )
                if response.status_code in (401, 403):
                    raise EndpointAuthError(
                        f"{self.endpoint.endpoint_url}: authentication failed "
                        f"({response.status_code}); check ${self.endpoint.auth_ref}"
                    )
                if response.status_code == 429 or response.status_code >= 500:
                    raise BackendError(f"retryable status {response.status_code}")
                response.raise_for_status()
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except EndpointAuthError:
                raise
            except Exception as exc:  # noqa: BLE001 - every transport error retries
                last_error = exc
                if attempt + 1 < policy.attempts:
                    logger.warning(
                        "request failed (%s), retrying in %.1fs", exc, delay
                    )
                    time.sleep(delay)
                    delay *= 2
        raise BackendError(f"request failed after {policy.attempts} attempts: {last_error}")

    def complete_text(self, prompt: str) -> str:
        return self.complete(BackendRequest(prompt=prompt))


class MockModel:
    """Deterministic stand-in for a model under test.

    Modes:
      fixed     - the same response for every request
      perfect   - answers from the scene's own annotation (no forgetting)
      degraded  - perfect minus every second noteworthy object and the tail
                  of the description (simulates knowledge loss)
    """

    def __init__(self, mode: str = "fixed", response: str = "ok", model_name: str = "mock"):
        if mode not in ("fixed", "perfect", "degraded"):
            raise EvalError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.response = response
        self.model_name = model_name

    def complete(self, request: BackendRequest) -> str:
        if self.mode == "fixed":
            return self.response
        annotation = request.meta.get("annotation", {})
        description = annotation.get("scene_description", "")
        objects = list(annotation.get("noteworthy_objects", []))
        answer = (request.meta.get("qa") or {}).get("answer", "")
        if self.mode == "degraded":
            words = description.split()
            description = " ".join(words[: max(1, len(words) // 2)])
            objects = objects[::2]
            answer = " ".join(answer.split()[: max(1, len(answer.split()) // 2)])
        if request.task == "scene_description":
            return description or self.response
        if request.task == "traffic_qa":
            return answer or self.response
        if request.task == "noteworthy_objects":
            return "I can see: " + ", ".join(objects) if objects else "Nothing notable."
        return self.response

    def complete_text(self, prompt: str) -> str:
        return self.complete(BackendRequest(prompt=prompt))


class FailingBackend:
    """Test helper: fails for selected scene_ids, otherwise delegates."""

    def __init__(self, inner: Backend, fail_scene_ids: set[str]):
        self.inner = inner
        self.fail_scene_ids = set(fail_scene_ids)

    def complete(self, request: BackendRequest) -> str:
        if request.scene_id in self.fail_scene_ids:
            raise BackendError(f"injected failure for {request.scene_id}")
        return self.inner.complete(request)


_TOKEN = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


class OverlapJudge:
    """Deterministic rule-based judge for hermetic runs.

    SD / T-QA: score = round(100 * |response tokens ∩ truth tokens| /
    |truth tokens|). Perception: an object is clearly perceived when all its
    tokens appear in the response, vaguely when some do, otherwise not.
    Emits the same strict verdict block a remote judge is instructed to use.
    """

    def __init__(self, judge_name: str = "overlap-judge"):
        self.judge_name = judge_name

    def complete(self, request: BackendRequest) -> str:
        response = request.meta.get("response", "")
        if request.task == "noteworthy_objects":
            lines = []
            response_tokens = _tokens(response)
            for i, obj in enumerate(request.meta.get("objects", []), 1):
                obj_tokens = _tokens(obj)
                hit = len(obj_tokens & response_tokens)
                if obj_tokens and hit == len(obj_tokens):
                    label = "clearly_perceived"
                elif hit > 0:
                    label = "vaguely_perceived"
                else:
                    label = "not_perceived"
                lines.append(f"OBJECT {i}: {label}")
            return "\n".join(lines)
        truth_tokens = _tokens(request.meta.get("ground_truth", ""))
        if not truth_tokens:
            return "SCORE: 0"
        overlap = len(_tokens(response) & truth_tokens) / len(truth_tokens)
        return f"SCORE: {round(100 * overlap)}"


class ScriptedJudge:
    """Canned judge outputs keyed by (scene_id, task); unknown keys raise."""

    def __init__(self, script: dict[tuple[str, str], str], judge_name: str = "scripted-judge"):
        self.script = dict(script)
        self.judge_name = judge_name

    def complete(self, request: BackendRequest) -> str:
        key = (request.scene_id, request.task)
        if key not in self.script:
            raise BackendError(f"no scripted verdict for {key}")
        return self.script[key]


# ---------------------------------------------------------------------------
# Transcripts
# ---------------------------------------------------------------------------


@dataclass
class TranscriptRecord:
    """Immutable record of one model call (or its failure)."""

    scene_id: str
    task: str
    request_prompt: str
    image_ref: str
    model_response: str
    latency_s: float
    model_name: str
    run_id: str
    failed: bool = False
    failure_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "task": self.task,
            "request_prompt": self.request_prompt,
            "image_ref": self.image_ref,
            "model_response": self.model_response,
            "latency_s": self.latency_s,
            "model_name": self.model_name,
            "run_id": self.run_id,
            "failed": self.failed,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranscriptRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def _scene_meta(scene: ExportedScene) -> dict:
    return {"annotation": scene.annotation.to_dict(), "qa": scene.qa}


def build_prompt(spec: TaskSpec, scene: ExportedScene) -> str:
    if spec.task == "traffic_qa":
        question = (scene.qa or {}).get("question", "")
        return spec.prompt_template.format(question=question)
    return spec.prompt_template


def run_task(
    test_set: TestSetExport,
    spec: TaskSpec,
    backend: Backend,
    endpoint: ModelEndpoint,
    run_id: str,
) -> list[TranscriptRecord]:
    """One transcript per scene. Failures after retries become explicit
    failure transcripts; auth errors abort the run."""

    def call(scene: ExportedScene) -> TranscriptRecord:
        prompt = build_prompt(spec, scene)
        request = BackendRequest(
            prompt=prompt,
            image_ref=scene.image_ref,
            scene_id=scene.scene_id,
            task=spec.task,
            meta=_scene_meta(scene),
        )
        started = time.monotonic()
        try:
            response = backend.complete(request)
            return TranscriptRecord(
                scene_id=scene.scene_id,
                task=spec.task,
                request_prompt=prompt,
                image_ref=scene.image_ref,
                model_response=response,
                latency_s=time.monotonic() - started,
                model_name=endpoint.model_name,
                run_id=run_id,
            )
        except EndpointAuthError:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded, never dropped
            return TranscriptRecord(
                scene_id=scene.scene_id,
                task=spec.task,
                request_prompt=prompt,
                image_ref=scene.image_ref,
                model_response="",
                latency_s=time.monotonic() - started,
                model_name=endpoint.model_name,
                run_id=run_id,
                failed=True,
                failure_reason=str(exc),
            )

    scenes = sorted(test_set.scenes, key=lambda s: s.scene_id)
    with ThreadPoolExecutor(max_workers=max(1, endpoint.max_in_flight)) as pool:
        transcripts = list(pool.map(call, scenes))
    return transcripts


# ---------------------------------------------------------------------------
# Judging
# ---------------------------------------------------------------------------


@dataclass
class JudgeVerdict:
    scene_id: str
    task: str
    judge_name: str
    raw_judge_output: str
    score: float | None = None  # SD / T-QA, 0-100
    labels: list[str] | None = None  # noteworthy_objects, one per object
    parse_failed: bool = False

    def label_scores(self) -> list[float]:
        if self.labels is None:
            return []
        return [perception_label_to_score(label) for label in self.labels]

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "task": self.task,
            "judge_name": self.judge_name,
            "raw_judge_output": self.raw_judge_output,
            "score": self.score,
            "labels": self.labels,
            "parse_failed": self.parse_failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JudgeVerdict":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


_SCORE_LINE = re.compile(r"^\s*SCORE:\s*(-?[0-9]+(?:\.[0-9]+)?)\s*$", re.MULTILINE)
_OBJECT_LINE = re.compile(r"^\s*OBJECT\s+(\d+):\s*(\w+)\s*$", re.MULTILINE)

_REPAIR_INSTRUCTION = (
    "Your previous reply could not be parsed. Reply again using EXACTLY the "
    "required verdict format and nothing else."
)


def parse_score_verdict(raw: str) -> float:
    m = _SCORE_LINE.search(raw)
    if not m:
        raise JudgeParseError("no SCORE line found")
    value = float(m.group(1))
    if not SCORE_SCALE[0] <= value <= SCORE_SCALE[1]:
        raise JudgeParseError(f"score {value} outside [{SCORE_SCALE[0]}, {SCORE_SCALE[1]}]")
    return value


def parse_perception_verdict(raw: str, n_objects: int) -> list[str]:
    found: dict[int, str] = {}
    for m in _OBJECT_LINE.finditer(raw):
        index = int(m.group(1))
        label = m.group(2).lower()
        if label not in PERCEPTION_LABELS:
            raise JudgeParseError(f"unknown label {label!r} for object {index}")
        if index in found:
            raise JudgeParseError(f"duplicate verdict for object {index}")
        found[index] = label
    if sorted(found) != list(range(1, n_objects + 1)):
        raise JudgeParseError(
            f"expected exactly one label per object 1..{n_objects}, got {sorted(found)}"
        )
    return [found[i] for i in range(1, n_objects + 1)]


def format_objects(objects: Sequence[str]) -> str:
    return "\n".join(f"{i}. {obj}" for i, obj in enumerate(objects, 1))


def build_judge_prompt(
    spec: TaskSpec, transcript: TranscriptRecord, ground_truth: dict
) -> str:
    slots = {
        "response": transcript.model_response,
        "ground_truth": ground_truth.get("ground_truth", ""),
        "question": ground_truth.get("question", ""),
        "objects": format_objects(ground_truth.get("objects", [])),
    }
    needed = template_placeholders(spec.judge_template)
    return spec.judge_template.format(**{k: v for k, v in slots.items() if k in needed})


def judge_response(
    transcript: TranscriptRecord,
    ground_truth: dict,
    judge_backend: Backend,
    spec: TaskSpec,
    judge_name: str,
) -> JudgeVerdict:
    """Obtain and parse one verdict, with a single format-repair re-ask."""
    prompt = build_judge_prompt(spec, transcript, ground_truth)
    objects = list(ground_truth.get("objects", []))
    meta = {
        "response": transcript.model_response,
        "ground_truth": ground_truth.get("ground_truth", ""),
        "objects": objects,
    }

    def ask(ask_prompt: str) -> str:
        return judge_backend.complete(
            BackendRequest(
                prompt=ask_prompt,
                scene_id=transcript.scene_id,
                task=transcript.task,
                meta=meta,
            )
        )

    raw = ask(prompt)
    for attempt in range(2):
        try:
            if spec.task == "noteworthy_objects":
                labels = parse_perception_verdict(raw, len(objects))
                return JudgeVerdict(
                    scene_id=transcript.scene_id,
                    task=transcript.task,
                    judge_name=judge_name,
                    raw_judge_output=raw,
                    labels=labels,
                )
            score = parse_score_verdict(raw)
            return JudgeVerdict(
                scene_id=transcript.scene_id,
                task=transcript.task,
                judge_name=judge_name,
                raw_judge_output=raw,
                score=score,
            )
        except JudgeParseError as exc:
            if attempt == 0:
                logger.warning(
                    "judge output unparseable for %s/%s (%s); repair re-ask",
                    transcript.scene_id,
                    transcript.task,
                    exc,
                )
                raw = ask(f"{_REPAIR_INSTRUCTION}\n\n{prompt}")
            else:
                return JudgeVerdict(
                    scene_id=transcript.scene_id,
                    task=transcript.task,
                    judge_name=judge_name,
                    raw_judge_output=raw,
                    parse_failed=True,
                )
    raise AssertionError("unreachable")


def ground_truth_for(scene: ExportedScene, task: str) -> dict:
    if task == "scene_description":
        return {"ground_truth": scene.annotation.scene_description}
    if task == "traffic_qa":
        qa = scene.qa or {}
        return {"ground_truth": qa.get("answer", ""), "question": qa.get("question", "")}
    return {"objects": list(scene.annotation.noteworthy_objects)}


def judge_run(
    test_set: TestSetExport,
    transcripts: Sequence[TranscriptRecord],
    spec: TaskSpec,
    judge_backend: Backend,
    judge_name: str,
) -> list[JudgeVerdict]:
    """Judge every non-failed transcript of one task, serialized through a
    single collector so verdict order is deterministic."""
    scenes = {s.scene_id: s for s in test_set.scenes}
    verdicts = []
    for transcript in sorted(transcripts, key=lambda t: t.scene_id):
        if transcript.task != spec.task or transcript.failed:
            continue
        scene = scenes.get(transcript.scene_id)
        if scene is None:
            raise EvalError(f"transcript for unknown scene {transcript.scene_id!r}")
        verdicts.append(
            judge_response(
                transcript, ground_truth_for(scene, spec.task), judge_backend, spec, judge_name
            )
        )
    return verdicts


# ---------------------------------------------------------------------------
# Run persistence
# ---------------------------------------------------------------------------


def write_jsonl(rows: Sequence, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
    tmp.replace(path)
    return path


def read_transcripts(path: Path) -> list[TranscriptRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(TranscriptRecord.from_dict(json.loads(line)))
    return out


def read_verdicts(path: Path) -> list[JudgeVerdict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(JudgeVerdict.from_dict(json.loads(line)))
    return out


@dataclass
class RunResult:
    run_id: str
    model_name: str
    judge_names: list[str]
    transcripts: list[TranscriptRecord]
    verdicts: dict[str, list[JudgeVerdict]]  # judge_name -> verdicts
    template_checksums: dict
    test_set_checksum: str


def run_evaluation(
    test_set: TestSetExport,
    specs: dict[str, TaskSpec],
    model_backend: Backend,
    endpoint: ModelEndpoint,
    judges: dict[str, Backend],
    run_id: str,
    tasks: Sequence[str] = TASKS,
) -> RunResult:
    transcripts: list[TranscriptRecord] = []
    verdicts: dict[str, list[JudgeVerdict]] = {name: [] for name in judges}
    for task in tasks:
        spec = specs[task]
        task_transcripts = run_task(test_set, spec, model_backend, endpoint, run_id)
        transcripts.extend(task_transcripts)
        for judge_name, judge_backend in judges.items():
            verdicts[judge_name].extend(
                judge_run(test_set, task_transcripts, spec, judge_backend, judge_name)
            )
    # verdict completeness: every non-failed transcript judged by every judge
    expected = {(t.scene_id, t.task) for t in transcripts if not t.failed}
    for judge_name, rows in verdicts.items():
        covered = {(v.scene_id, v.task) for v in rows}
        missing = expected - covered
        if missing:
            raise EvalError(f"judge {judge_name!r} missing verdicts for {sorted(missing)}")
    checksums = {task: specs[task].checksums() for task in tasks}
    return RunResult(
        run_id=run_id,
        model_name=endpoint.model_name,
        judge_names=sorted(judges),
        transcripts=transcripts,
        verdicts=verdicts,
        template_checksums=checksums,
        test_set_checksum=test_set.checksum,
    )


def save_run(result: RunResult, runs_dir: Path) -> Path:
    run_dir = Path(runs_dir) / result.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(result.transcripts, run_dir / "transcripts.jsonl")
    for judge_name, rows in result.verdicts.items():
        write_jsonl(rows, run_dir / f"verdicts_{judge_name}.jsonl")
    meta = {
        "run_id": result.run_id,
        "model_name": result.model_name,
        "judge_names": result.judge_names,
        "template_checksums": result.template_checksums,
        "test_set_checksum": result.test_set_checksum,
        "score_scale": list(SCORE_SCALE),
    }
    (run_dir / "meta.json").write_text(
        json.dumps(meta, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return run_dir


def load_run(runs_dir: Path, run_id: str) -> RunResult:
    run_dir = Path(runs_dir) / run_id
    meta = json.loads((run_dir / "meta.json").read_text(encoding="utf-8"))
    transcripts = read_transcripts(run_dir / "transcripts.jsonl")
    verdicts = {}
    for judge_name in meta["judge_names"]:
        verdicts[judge_name] = read_verdicts(run_dir / f"verdicts_{judge_name}.jsonl")
    return RunResult(
        run_id=meta["run_id"],
        model_name=meta["model_name"],
        judge_names=meta["judge_names"],
        transcripts=transcripts,
        verdicts=verdicts,
        template_checksums=meta["template_checksums"],
        test_set_checksum=meta["test_set_checksum"],
    )
