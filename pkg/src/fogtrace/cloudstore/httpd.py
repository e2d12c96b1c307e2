"""REST surface for the trace repository.

* ``POST /api/v1/token``  {client_id, client_secret} -> bearer token
* ``POST /api/v1/traces`` multipart parts ``manifest`` + ``trace`` -> 201 receipt
* ``GET  /api/v1/traces/{ref}`` -> blob, metadata in ``X-Trace-Manifest`` (base64 JSON)
* ``GET  /api/v1/traces?driver_id=&from=&to=&limit=&offset=`` -> metadata array

Errors are ``{error, detail}`` with matching status codes.
"""

from __future__ import annotations

import base64
import email.parser
import email.policy
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .service import CloudError, CloudStoreService, MissingPartError

_TRACES_PATH = "/api/v1/traces"
_TOKEN_PATH = "/api/v1/token"


def parse_multipart(content_type: str, body: bytes) -> dict[str, bytes]:
    """Extract named form parts from a multipart/form-data body."""
    head = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n".encode("latin-1")
    message = email.parser.BytesParser(policy=email.policy.default).parsebytes(head + body)
    if not message.is_multipart():
        raise MissingPartError("body is not multipart/form-data")
    parts: dict[str, bytes] = {}
    for part in message.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if name:
            payload = part.get_payload(decode=True)
            parts[str(name)] = payload if payload is not None else b""
    return parts


class _Handler(BaseHTTPRequestHandler):
    server_version = "TraceStore/1"
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> CloudStoreService:
        return self.server.service  # type: ignore[attr-defined]

    def do_POST(self):
        path = urlparse(self.path).path
        try:
            if path == _TOKEN_PATH:
                self._handle_token()
            elif path == _TRACES_PATH:
                self._handle_upload()
            else:
                self._send_json(404, {"error": "not-found", "detail": path})
        except CloudError as exc:
            self._send_json(exc.http_status, exc.to_body())

    def do_GET(self):
        url = urlparse(self.path)
        try:
            if url.path == _TRACES_PATH:
                self._handle_list(parse_qs(url.query))
            elif url.path.startswith(_TRACES_PATH + "/"):
                self._handle_get(url.path[len(_TRACES_PATH) + 1 :])
            else:
                self._send_json(404, {"error": "not-found", "detail": url.path})
        except CloudError as exc:
            self._send_json(exc.http_status, exc.to_body())

    # -- endpoint bodies ----------------------------------------------------

    def _handle_token(self):
        try:
            body = json.loads(self._read_body().decode("utf-8"))
            client_id = body["client_id"]
            client_secret = body["client_secret"]
        except (ValueError, KeyError, UnicodeDecodeError):
            return self._send_json(
                400, {"error": "bad-request", "detail": "body must be JSON with client_id/client_secret"}
            )
        token = self.service.issue_token(client_id, client_secret)
        ttl_s = (token.expires_at_ms - self.service.clock.now_ms()) / 1000.0
        self._send_json(
            200,
            {"access_token": token.token, "token_type": "Bearer", "expires_in": int(round(ttl_s))},
        )

    def _handle_upload(self):
        content_type = self.headers.get("Content-Type", "")
        if "multipart/form-data" not in content_type:
            raise MissingPartError("expected multipart/form-data")
        parts = parse_multipart(content_type, self._read_body())
        receipt = self.service.upload_trace(
            self._bearer(), parts.get("manifest"), parts.get("trace")
        )
        self._send_json(201, receipt)

    def _handle_get(self, trace_ref: str):
        blob, metadata = self.service.get_trace(self._bearer(), trace_ref)
        encoded = base64.b64encode(json.dumps(metadata.to_dict()).encode("utf-8"))
        self.send_response(200)
        self.send_header("Content-Type", "application/octet-stream")
        self.send_header("Content-Length", str(len(blob)))
        self.send_header("X-Trace-Manifest", encoded.decode("ascii"))
        self.end_headers()
        self.wfile.write(blob)

    def _handle_list(self, query: dict[str, list[str]]):
        def _int_param(name):
            values = query.get(name)
            return int(values[0]) if values else None

        listed = self.service.list_traces(
            self._bearer(),
            driver_id=query.get("driver_id", [None])[0],
            from_ms=_int_param("from"),
            to_ms=_int_param("to"),
            limit=_int_param("limit") or 50,
            offset=_int_param("offset") or 0,
        )
        self._send_json(200, [m.to_dict() for m in listed])

    # -- plumbing ------------------------------------------------------------

    def _bearer(self) -> str | None:
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer ") :].strip()
        return None

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length) if length else b""

    def _send_json(self, status: int, body) -> None:
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):
        pass


class CloudStoreHTTPServer:
    """Threaded HTTP front end over a :class:`CloudStoreService`."""

    def __init__(self, service: CloudStoreService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.service = service  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "CloudStoreHTTPServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "CloudStoreHTTPServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
