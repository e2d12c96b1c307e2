"""HTTP stub server mimicking the two third-party context services.

Endpoints: ``GET /flow?lat=&lon=`` and ``GET /weather?lat=&lon=``, JSON
bodies carrying exactly the typed fields. Responses are deterministic via
the underlying services.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .clock import SystemClock
from .external import FlowService, InvalidCoordinatesError, WeatherService


class _StubHandler(BaseHTTPRequestHandler):
    server_version = "ContextStub/1"

    def do_GET(self):
        owner: ContextStubServer = self.server.owner  # type: ignore[attr-defined]
        url = urlparse(self.path)
        query = parse_qs(url.query)
        try:
            lat = float(query.get("lat", ["nan"])[0])
            lon = float(query.get("lon", ["nan"])[0])
        except ValueError:
            return self._send(400, {"error": "invalid-coordinates", "detail": "lat/lon not numeric"})
        now_ms = owner.clock.now_ms()
        try:
            if url.path == "/flow":
                return self._send(200, owner.flow.segment(lat, lon, now_ms).to_dict())
            if url.path == "/weather":
                return self._send(200, owner.weather.observation(lat, lon, now_ms).to_dict())
        except InvalidCoordinatesError as exc:
            return self._send(400, {"error": "invalid-coordinates", "detail": str(exc)})
        return self._send(404, {"error": "not-found", "detail": self.path})

    def _send(self, status: int, body: dict) -> None:
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):  # noqa: A002 - quiet by default
        pass


class ContextStubServer:
    def __init__(
        self,
        flow: FlowService | None = None,
        weather: WeatherService | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        clock=None,
        seed: int = 0,
    ):
        self.flow = flow or FlowService(seed=seed)
        self.weather = weather or WeatherService(seed=seed)
        self.clock = clock if clock is not None else SystemClock()
        self._httpd = ThreadingHTTPServer((host, port), _StubHandler)
        self._httpd.owner = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ContextStubServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "ContextStubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
