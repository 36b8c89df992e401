"""forge: single entry point wiring the pipeline stages together.

Exit codes: 0 success, 1 runtime failure (machine-parsable "forge: error:"
line on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, review
from .config import PipelineConfig, load_config

logger = logging.getLogger(__name__)


def _percentile(value: str) -> float:
    try:
        p = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid percentile {value!r}") from None
    if not 0 < p <= 100:
        raise argparse.ArgumentTypeError(f"percentile must be in (0, 100], got {p}")
    return p


def _positive_int(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"value must be >= 1, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="Long-tail scene mining, review, and forgetting evaluation.",
    )
    parser.add_argument("--store", help="store root directory (or $FORGE_STORE)")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest one annotated source file")
    p.add_argument("--adapter", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--source", help="source tag override")

    p = sub.add_parser("export-train", help="export the canonical training corpus")
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="extract scene elements")
    p.add_argument("--extractor", choices=["offline", "remote"])
    p.add_argument("--out")

    p = sub.add_parser("score", help="build frequencies and score every scene")
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--b", type=float)

    p = sub.add_parser("mine", help="select the top rarity percentile as candidates")
    p.add_argument("--percentile", type=_percentile)
    p.add_argument("--out")

    p = sub.add_parser("review-serve", help="serve the review API (and UI if built)")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", help="static frontend bundle to serve at /")

    p = sub.add_parser("review-auto", help="scripted review stub: decide all pending")
    p.add_argument("--verdict", choices=["accept", "reject"], default="accept")

    p = sub.add_parser("export-test", help="export the verified forgetting test set")
    p.add_argument("--size", type=_positive_int)
    p.add_argument("--force-partial", action="store_true")

    p = sub.add_parser("eval", help="run benchmark tasks against a model endpoint")
    p.add_argument("--model", required=True, help="model endpoint config (JSON)")
    p.add_argument("--judges", required=True, help="comma-separated judge configs")
    p.add_argument("--tasks", default="sd,tqa,nop")
    p.add_argument("--run-id", required=True)

    p = sub.add_parser("report", help="aggregate runs into a benchmark report")
    p.add_argument("--runs", required=True, help="comma-separated run ids")
    p.add_argument("--base-run", help="base (pre-fine-tuning) run id for KRR")
    p.add_argument("--judge", help="judge name (default: first judge of each run)")
    p.add_argument("--out")

    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    overrides: dict = {"store_root": args.store}
    for key in ("alpha", "k", "b", "percentile", "extractor"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if getattr(args, "size", None) is not None:
        overrides["test_set_size"] = args.size
    return load_config(config_path=args.config, overrides=overrides)


def _run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    logger.debug("resolved config: %s (checksum %s)", config.to_dict(), config.checksum())

    if args.command == "ingest":
        manifest = pipeline.stage_ingest(
            config, Path(args.input), args.adapter, source_name=args.source
        )
        print(json.dumps(manifest.to_dict(), sort_keys=True))
        return 0

    if args.command == "export-train":
        result = pipeline.stage_export_train(config, Path(args.out))
        print(
            json.dumps(
                {
                    "path": str(result.path),
                    "scene_count": result.scene_count,
                    "qa_count": result.qa_count,
                },
                sort_keys=True,
            )
        )
        return 0

    if args.command == "extract":
        out = pipeline.stage_extract(config, Path(args.out) if args.out else None)
        print(json.dumps({"elements": str(out)}, sort_keys=True))
        return 0

    if args.command == "score":
        out = pipeline.stage_score(config)
        print(json.dumps({"scores": str(out)}, sort_keys=True))
        return 0

    if args.command == "mine":
        selection = pipeline.stage_mine(
            config,
            percentile=args.percentile,
            out_path=Path(args.out) if args.out else None,
        )
        print(
            json.dumps(
                {"selected": len(selection.selected), "percentile": selection.percentile},
                sort_keys=True,
            )
        )
        return 0

    if args.command == "review-serve":
        from .review_api import ReviewServer, ReviewService

        root = Path(config.store_root)
        queue = pipeline.open_queue(config)
        service = ReviewService(
            queue,
            image_root=root,
            ui_dir=Path(args.ui_dir) if args.ui_dir else None,
            export_path=root / review.TEST_SET_FILE,
            default_test_set_size=config.test_set_size,
        )
        server = ReviewServer(service, host=args.host, port=args.port)
        print(f"review service on http://{args.host}:{server.port}/ (Ctrl+C to stop)")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            server.shutdown()
        return 0

    if args.command == "review-auto":
        count = pipeline.stage_review_auto(config, verdict=args.verdict)
        print(json.dumps({"decided": count, "verdict": args.verdict}, sort_keys=True))
        return 0

    if args.command == "export-test":
        path = pipeline.stage_export_test(
            config, target_size=args.size, force_partial=args.force_partial
        )
        export = review.TestSetExport.load(path)
        print(
            json.dumps(
                {
                    "path": str(path),
                    "scenes": len(export.scenes),
                    "checksum": export.checksum,
                },
                sort_keys=True,
            )
        )
        return 0

    if args.command == "eval":
        tasks = pipeline.resolve_tasks(args.tasks)
        run_dir = pipeline.stage_eval(
            config,
            Path(args.model),
            [Path(p.strip()) for p in args.judges.split(",") if p.strip()],
            tasks,
            args.run_id,
        )
        print(json.dumps({"run_dir": str(run_dir), "tasks": tasks}, sort_keys=True))
        return 0

    if args.command == "report":
        text_path, json_path = pipeline.stage_report(
            config,
            [r.strip() for r in args.runs.split(",") if r.strip()],
            args.base_run,
            out_dir=Path(args.out) if args.out else None,
            judge_name=args.judge,
        )
        print(json.dumps({"report": str(text_path), "data": str(json_path)}, sort_keys=True))
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _run(args)
    except KeyboardInterrupt:
        print("forge: error: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single runtime-error funnel
        print(f"forge: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if getattr(args, "verbose", False):
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
