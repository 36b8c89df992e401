"""Forgetting metrics and benchmark reports.

Noteworthy-object perception recall (NoPR) is the mean of per-object
semantic perception scores s_i in {1.0, 0.5, 0.0}, pooled over every target
object in the test set. The knowledge retention rate (KRR) is the ratio of a
fine-tuned model's NoPR to its base model's NoPR on the same test set;
values near 1.0 mean the knowledge survived fine-tuning. Backward transfer
(BWT) is the classic incremental-learning statistic: the mean signed change
on earlier tasks after training through task j, negative when training later
tasks erased earlier ability.

Judge robustness is summarized as pairwise Spearman rank correlation of the
per-task model rankings each judge induces: the claim under test is about
rankings, not absolute scores, so absolute deltas are supplementary only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .evalharness import RunResult


class MetricError(Exception):
    pass


class KRRUndefinedError(MetricError):
    """Base NoPR is zero: the ratio is undefined and must be reported as
    such, never as 0."""


class ChecksumMismatchError(MetricError):
    pass


# ---------------------------------------------------------------------------
# Core metric arithmetic
# ---------------------------------------------------------------------------


def nopr(scores: Sequence[float]) -> float:
    """Mean semantic perception score over all target objects; in [0, 1]."""
    if not scores:
        raise MetricError("nopr requires at least one perception score")
    for s in scores:
        if not 0.0 <= s <= 1.0:
            raise MetricError(f"perception score {s} outside [0, 1]")
    return math.fsum(scores) / len(scores)


def krr_ratio(post_nopr: float, base_nopr: float) -> float:
    """Fine-tuned NoPR divided by base NoPR; may exceed 1.0 when fine-tuning
    also helped the held-out scenes. Scale-invariant: both inputs may be on
    the [0,1] or the x100 scale as long as they match."""
    if base_nopr < 0 or post_nopr < 0:
        raise MetricError("NoPR inputs must be non-negative")
    if base_nopr == 0:
        raise KRRUndefinedError("base NoPR is 0; KRR undefined")
    return post_nopr / base_nopr


def format_krr(ratio: float) -> str:
    return f"{ratio * 100:.1f}%"


@dataclass
class ModelEvalResult:
    """Per-model aggregate: task means over non-failed, judged transcripts,
    with the counts those means were taken over (never reported without)."""

    model_name: str
    run_id: str
    judge_name: str
    sd_mean: float | None
    tqa_mean: float | None
    nopr: float | None
    verdict_counts: dict[str, int]
    failed_counts: dict[str, int]
    test_set_checksum: str = ""
    base_model: str = ""

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "run_id": self.run_id,
            "judge_name": self.judge_name,
            "sd_mean": self.sd_mean,
            "tqa_mean": self.tqa_mean,
            "nopr": self.nopr,
            "verdict_counts": dict(sorted(self.verdict_counts.items())),
            "failed_counts": dict(sorted(self.failed_counts.items())),
            "test_set_checksum": self.test_set_checksum,
            "base_model": self.base_model,
        }


@dataclass
class KRRInput:
    finetuned: ModelEvalResult
    base: ModelEvalResult

    def validate(self) -> None:
        if self.finetuned.test_set_checksum != self.base.test_set_checksum:
            raise ChecksumMismatchError(
                "KRR requires both runs on the identical test set: "
                f"{self.finetuned.test_set_checksum} != {self.base.test_set_checksum}"
            )
        if self.finetuned.judge_name != self.base.judge_name:
            raise ChecksumMismatchError(
                "KRR requires the same judge for both runs: "
                f"{self.finetuned.judge_name} != {self.base.judge_name}"
            )


def krr(pair: KRRInput) -> float:
    pair.validate()
    if pair.base.nopr is None or pair.finetuned.nopr is None:
        raise MetricError("both runs need a NoPR value")
    return krr_ratio(pair.finetuned.nopr, pair.base.nopr)


def _mean(values: list[float]) -> float | None:
    if not values:
        return None
    return math.fsum(values) / len(values)


def aggregate_run(result: RunResult, judge_name: str, base_model: str = "") -> ModelEvalResult:
    """Reduce one run's verdicts (for one judge) to a ModelEvalResult.

    Failed transcripts and parse-failed verdicts are excluded from means but
    counted; NoPR pools label scores over all objects, not per-scene means.
    """
    verdicts = result.verdicts.get(judge_name)
    if verdicts is None:
        raise MetricError(f"run {result.run_id} has no verdicts from judge {judge_name!r}")
    sd_scores: list[float] = []
    tqa_scores: list[float] = []
    label_scores: list[float] = []
    verdict_counts = {"scene_description": 0, "traffic_qa": 0, "noteworthy_objects": 0}
    failed_counts = {"scene_description": 0, "traffic_qa": 0, "noteworthy_objects": 0}
    for transcript in result.transcripts:
        if transcript.failed:
            failed_counts[transcript.task] += 1
    for verdict in verdicts:
        if verdict.parse_failed:
            failed_counts[verdict.task] += 1
            continue
        verdict_counts[verdict.task] += 1
        if verdict.task == "scene_description" and verdict.score is not None:
            sd_scores.append(verdict.score)
        elif verdict.task == "traffic_qa" and verdict.score is not None:
            tqa_scores.append(verdict.score)
        elif verdict.task == "noteworthy_objects":
            label_scores.extend(verdict.label_scores())
    return ModelEvalResult(
        model_name=result.model_name,
        run_id=result.run_id,
        judge_name=judge_name,
        sd_mean=_mean(sd_scores),
        tqa_mean=_mean(tqa_scores),
        nopr=nopr(label_scores) if label_scores else None,
        verdict_counts=verdict_counts,
        failed_counts=failed_counts,
        test_set_checksum=result.test_set_checksum,
        base_model=base_model,
    )


# ---------------------------------------------------------------------------
# Backward transfer
# ---------------------------------------------------------------------------


@dataclass
class ScoreMatrix:
    """q[(j, i)] = performance on task i after training through task j,
    1-based; entries with i <= j must exist for BWT at stage j."""

    tasks: list[str]
    q: dict[tuple[int, int], float] = field(default_factory=dict)

    def set(self, j: int, i: int, value: float) -> None:
        self.q[(j, i)] = value

    def get(self, j: int, i: int) -> float:
        return self.q[(j, i)]


def bwt(matrix: ScoreMatrix, j: int) -> float:
    """Mean signed delta on tasks 1..j-1 after training through task j;
    negative values signal catastrophic forgetting."""
    if j < 2:
        raise MetricError(f"bwt needs j >= 2, got {j}")
    missing = [
        (jj, ii)
        for ii in range(1, j)
        for jj in (j, ii)
        if (jj, ii) not in matrix.q
    ]
    if missing:
        raise MetricError(f"score matrix missing entries: {sorted(set(missing))}")
    total = math.fsum(matrix.get(j, i) - matrix.get(i, i) for i in range(1, j))
    return total / (j - 1)


# ---------------------------------------------------------------------------
# Judge agreement
# ---------------------------------------------------------------------------


def _scaled_ranks(values: Sequence[float]) -> list[int]:
    # Average ranks scaled by 2 so ties stay integral and the correlation
    # arithmetic is exact for identical / reversed orderings.
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        doubled_avg = (i + j) + 2  # 2 * ((i + j) / 2 + 1)
        for t in range(i, j + 1):
            ranks[order[t]] = doubled_avg
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Exactly +/-1.0 for identical or reversed rankings (integer arithmetic up
    to the final division).
    """
    if len(xs) != len(ys):
        raise MetricError("length mismatch")
    n = len(xs)
    if n < 2:
        raise MetricError("need at least two observations")
    rx = _scaled_ranks(xs)
    ry = _scaled_ranks(ys)
    sum_x = sum(rx)
    sum_y = sum(ry)
    var_x = n * sum(r * r for r in rx) - sum_x * sum_x
    var_y = n * sum(r * r for r in ry) - sum_y * sum_y
    if var_x == 0 or var_y == 0:
        raise MetricError("rank variance is zero; correlation undefined")
    num = n * sum(a * b for a, b in zip(rx, ry)) - sum_x * sum_y
    if var_x == var_y:
        return num / var_x
    return num / math.sqrt(var_x * var_y)


@dataclass
class JudgePanelResult:
    """Per-judge model scores over an identical model x task grid:
    scores[judge][model][task] = mean score."""

    scores: dict[str, dict[str, dict[str, float]]]

    @classmethod
    def from_results(
        cls, per_judge: Mapping[str, Sequence[ModelEvalResult]]
    ) -> "JudgePanelResult":
        scores: dict[str, dict[str, dict[str, float]]] = {}
        for judge, results in per_judge.items():
            scores[judge] = {}
            for result in results:
                cell: dict[str, float] = {}
                if result.sd_mean is not None:
                    cell["scene_description"] = result.sd_mean
                if result.tqa_mean is not None:
                    cell["traffic_qa"] = result.tqa_mean
                if result.nopr is not None:
                    cell["noteworthy_objects"] = result.nopr
                scores[judge][result.model_name] = cell
        return cls(scores=scores)

    def judges(self) -> list[str]:
        return sorted(self.scores)

    def models(self) -> list[str]:
        first = self.scores[self.judges()[0]]
        return sorted(first)

    def tasks(self) -> list[str]:
        first_models = self.scores[self.judges()[0]]
        return sorted(first_models[self.models()[0]])

    def validate(self) -> None:
        judges = self.judges()
        if len(judges) < 2:
            raise MetricError("judge agreement needs at least two judges")
        models = self.models()
        if len(models) < 3:
            raise MetricError("judge agreement needs at least three models")
        tasks = self.tasks()
        holes = []
        for judge in judges:
            for model in models:
                for task in tasks:
                    if task not in self.scores.get(judge, {}).get(model, {}):
                        holes.append((judge, model, task))
        if holes:
            raise MetricError(f"incomplete panel grid; missing cells: {holes}")


def judge_agreement(panel: JudgePanelResult) -> dict[str, dict[tuple[str, str], float]]:
    """Pairwise per-task Spearman correlations, symmetric, 1.0 on the
    diagonal."""
    panel.validate()
    judges = panel.judges()
    models = panel.models()
    tasks = panel.tasks()
    out: dict[str, dict[tuple[str, str], float]] = {}
    for task in tasks:
        table: dict[tuple[str, str], float] = {}
        for a in judges:
            for b in judges:
                xs = [panel.scores[a][m][task] for m in models]
                ys = [panel.scores[b][m][task] for m in models]
                table[(a, b)] = spearman(xs, ys)
        out[task] = table
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

NON_REPRODUCIBILITY_STATEMENT = (
    "Absolute SD / T-QA / NoPR values from published reference tables require "
    "the original proprietary models, judges, and the full 1,000-scene test "
    "set; this toolkit reproduces the metric arithmetic, pipeline determinism, "
    "and published-pair consistency checks only."
)


@dataclass
class KRRRow:
    model_name: str
    base_model: str
    ratio: float | None  # None = undefined
    note: str = ""


def krr_rows(
    results: Sequence[ModelEvalResult], base_results: Mapping[str, ModelEvalResult]
) -> list[KRRRow]:
    """Pair each fine-tuned result with its base run; missing or zero base
    NoPR yields an undefined row rather than a fake number."""
    rows = []
    for result in results:
        base = base_results.get(result.base_model)
        if base is None:
            rows.append(KRRRow(result.model_name, result.base_model, None, "no base run"))
            continue
        try:
            ratio = krr(KRRInput(finetuned=result, base=base))
            rows.append(KRRRow(result.model_name, result.base_model, ratio))
        except KRRUndefinedError:
            rows.append(KRRRow(result.model_name, result.base_model, None, "base NoPR 0"))
    return rows


def _fmt(value: float | None, scale: float = 1.0) -> str:
    if value is None:
        return "-"
    return f"{value * scale:.1f}"


def build_report(
    results: Sequence[ModelEvalResult],
    rows: Sequence[KRRRow],
    agreement: Mapping[str, Mapping[tuple[str, str], float]] | None,
    assumptions: Mapping[str, object],
) -> tuple[str, dict]:
    """Render the benchmark table as plain text plus a machine-readable dict
    mirroring every cell. Deterministic: no wall-clock content."""
    lines: list[str] = []
    lines.append("# Forgetting benchmark report")
    lines.append("")
    lines.append("## Assumptions")
    for key in sorted(assumptions):
        lines.append(f"- {key}: {assumptions[key]}")
    lines.append(f"- note: {NON_REPRODUCIBILITY_STATEMENT}")
    lines.append("")
    lines.append("## Results")
    header = (
        "Method | Base | SD | T-QA | NoPR | KRR | N(SD) | N(TQA) | N(NoP) | Failed"
    )
    lines.append(header)
    lines.append("-" * len(header))
    krr_by_model = {row.model_name: row for row in rows}
    report_rows = []
    for result in results:
        row = krr_by_model.get(result.model_name)
        if row is None:
            krr_cell = "-"
        elif row.ratio is None:
            krr_cell = f"undefined ({row.note})"
        else:
            krr_cell = format_krr(row.ratio)
        failed_total = sum(result.failed_counts.values())
        cells = [
            result.model_name,
            result.base_model or "-",
            _fmt(result.sd_mean),
            _fmt(result.tqa_mean),
            _fmt(result.nopr, scale=100.0),
            krr_cell,
            str(result.verdict_counts.get("scene_description", 0)),
            str(result.verdict_counts.get("traffic_qa", 0)),
            str(result.verdict_counts.get("noteworthy_objects", 0)),
            str(failed_total),
        ]
        lines.append(" | ".join(cells))
        report_rows.append(
            {
                "method": result.model_name,
                "base": result.base_model,
                "sd": None if result.sd_mean is None else round(result.sd_mean, 6),
                "tqa": None if result.tqa_mean is None else round(result.tqa_mean, 6),
                "nopr": None if result.nopr is None else round(result.nopr * 100, 6),
                "krr": krr_cell,
                "verdict_counts": dict(sorted(result.verdict_counts.items())),
                "failed_counts": dict(sorted(result.failed_counts.items())),
            }
        )

    agreement_data: dict[str, dict[str, float]] = {}
    if agreement:
        lines.append("")
        lines.append("## Judge agreement (Spearman rank correlation per task)")
        for task in sorted(agreement):
            table = agreement[task]
            pairs = sorted({tuple(sorted(pair)) for pair in table if pair[0] != pair[1]})
            for a, b in pairs:
                rho = table[(a, b)]
                lines.append(f"- {task}: {a} vs {b}: {rho:.6f}")
                agreement_data.setdefault(task, {})[f"{a} vs {b}"] = round(rho, 6)

    text = "\n".join(lines) + "\n"
    data = {
        "assumptions": {k: assumptions[k] for k in sorted(assumptions)},
        "non_reproducibility": NON_REPRODUCIBILITY_STATEMENT,
        "rows": report_rows,
        "judge_agreement": agreement_data,
        "results": [r.to_dict() for r in results],
    }
    return text, data


def write_report(text: str, data: dict, out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text_path = out_dir / "report.txt"
    json_path = out_dir / "report.json"
    text_path.write_text(text, encoding="utf-8")
    json_path.write_text(
        json.dumps(data, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return text_path, json_path
