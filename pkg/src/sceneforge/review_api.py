"""HTTP service for the review UI.

JSON endpoints mirror the review domain types field-for-field:

    GET  /api/stats                queue counters
    POST /api/next                 {reviewer_id} -> candidate or null
    POST /api/decision             {scene_id, verdict, reviewer_id,
                                    corrected_annotation?} -> {sequence_no}
    GET  /api/image/<scene_id>     referenced image bytes
    POST /api/export               {target_size?, force_partial?} -> export

Static files from ``ui_dir`` are served at ``/`` when configured, so the
browser frontend and the API share one origin. Decisions from a reviewer
other than the live lease holder return 409 so stale tabs re-fetch instead
of stepping on an active review.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .review import (
    AnnotationSchemaError,
    ReviewError,
    ReviewQueue,
    UnknownSceneError,
)

logger = logging.getLogger(__name__)


class ReviewService:
    def __init__(
        self,
        queue: ReviewQueue,
        image_root: Path | None = None,
        ui_dir: Path | None = None,
        export_path: Path | None = None,
        default_test_set_size: int = 1000,
    ):
        self.queue = queue
        self.image_root = Path(image_root) if image_root else None
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.export_path = Path(export_path) if export_path else None
        self.default_test_set_size = default_test_set_size

    # -- handlers returning (status, payload) ---------------------------------

    def stats(self) -> tuple[int, dict]:
        return 200, self.queue.stats()

    def next_candidate(self, body: dict) -> tuple[int, dict]:
        reviewer_id = str(body.get("reviewer_id", "")).strip()
        if not reviewer_id:
            return 400, {"error": "reviewer_id required"}
        candidate = self.queue.next_candidate(reviewer_id)
        if candidate is None:
            return 200, {"candidate": None}
        return 200, {"candidate": candidate.to_dict()}

    def submit_decision(self, body: dict) -> tuple[int, dict]:
        scene_id = body.get("scene_id", "")
        reviewer_id = str(body.get("reviewer_id", "")).strip()
        if not reviewer_id:
            return 400, {"error": "reviewer_id required"}
        holder = self.queue.lease_holder(scene_id)
        if holder is not None and holder != reviewer_id:
            return 409, {"error": "lease_conflict", "lease_holder": holder}
        try:
            sequence_no = self.queue.submit_decision(
                scene_id=scene_id,
                verdict=body.get("verdict", ""),
                reviewer_id=reviewer_id,
                corrected_annotation=body.get("corrected_annotation"),
            )
        except UnknownSceneError as exc:
            return 404, {"error": str(exc)}
        except AnnotationSchemaError as exc:
            return 400, {"error": str(exc)}
        except ReviewError as exc:
            return 400, {"error": str(exc)}
        return 200, {"sequence_no": sequence_no, "scene_id": scene_id}

    def export(self, body: dict) -> tuple[int, dict]:
        target_size = int(body.get("target_size", self.default_test_set_size))
        force_partial = bool(body.get("force_partial", False))
        try:
            export = self.queue.export_test_set(target_size, force_partial=force_partial)
        except ReviewError as exc:
            return 400, {"error": str(exc)}
        if self.export_path:
            export.save(self.export_path)
        return 200, export.to_dict()

    def image_bytes(self, scene_id: str) -> tuple[int, bytes, str]:
        candidate = self.queue.candidates.get(scene_id)
        if candidate is None:
            return 404, b"unknown scene", "text/plain"
        path = Path(candidate.image_ref)
        if self.image_root and not path.is_absolute():
            path = self.image_root / path
        if not path.exists():
            return 404, b"image not found", "text/plain"
        content_type = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
        return 200, path.read_bytes(), content_type


def make_handler(service: ReviewService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            logger.debug("review-api: " + fmt, *args)

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload, ensure_ascii=False, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_bytes(self, status: int, body: bytes, content_type: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if length == 0:
                return {}
            raw = self.rfile.read(length)
            try:
                parsed = json.loads(raw)
            except json.JSONDecodeError:
                raise ValueError("request body is not valid JSON") from None
            if not isinstance(parsed, dict):
                raise ValueError("request body must be a JSON object")
            return parsed

        def do_OPTIONS(self):  # noqa: N802
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):  # noqa: N802
            if self.path == "/api/stats":
                status, payload = service.stats()
                self._send_json(status, payload)
                return
            if self.path.startswith("/api/image/"):
                scene_id = self.path[len("/api/image/") :]
                status, body, content_type = service.image_bytes(scene_id)
                self._send_bytes(status, body, content_type)
                return
            self._serve_static(self.path)

        def do_POST(self):  # noqa: N802
            try:
                body = self._read_body()
            except ValueError as exc:
                self._send_json(400, {"error": str(exc)})
                return
            if self.path == "/api/next":
                status, payload = service.next_candidate(body)
            elif self.path == "/api/decision":
                status, payload = service.submit_decision(body)
            elif self.path == "/api/export":
                status, payload = service.export(body)
            else:
                status, payload = 404, {"error": f"unknown endpoint {self.path}"}
            self._send_json(status, payload)

        def _serve_static(self, path: str) -> None:
            if service.ui_dir is None:
                self._send_json(404, {"error": "no UI bundle configured"})
                return
            rel = path.lstrip("/") or "index.html"
            target = (service.ui_dir / rel).resolve()
            if not str(target).startswith(str(service.ui_dir.resolve())) or not target.is_file():
                self._send_json(404, {"error": "not found"})
                return
            content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            self._send_bytes(200, target.read_bytes(), content_type)

    return Handler


class ReviewServer:
    """Threaded HTTP server wrapper; serve_forever in the background for
    tests, blocking for the CLI."""

    def __init__(self, service: ReviewService, host: str = "127.0.0.1", port: int = 0):
        self.httpd = ThreadingHTTPServer((host, port), make_handler(service))
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start_background(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def shutdown(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
