"""End-to-end trip orchestration on one clock.

The runner wires a session together: the OBD poll loop drives the cadence
(producers are serviced between replies), wearable streams, the MiBand
poll schedule, GPS fixes read off the vehicle position, and the context
poller for traffic and weather. Everything shares the same clock object,
so a five-minute trip replays in well under a second of compute time on a
simulated clock and in real time on the system clock, through identical
code paths.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from ..external import ExternalError, TrafficClient, WeatherClient
from ..obd import CORE_PIDS
from ..wearables import MiBand, PhysioModel, WearableDevice
from .alerts import AlertEvent
from .obd_poller import PollStats, obd_poll_loop
from .records import SessionManifest, csv_to_rows
from .session import KIND_GPS, KIND_OBD, Gateway, GpsFix, LocalSource
from .uploader import Outbox, UploadReceipt, finalize_and_upload

log = logging.getLogger(__name__)

DEFAULT_GPS_PERIOD_MS = 1000.0
# Poll well inside the device's 10 s refresh window; the device throttles
# and the runner drops cached repeats, so one fresh value lands per window.
DEFAULT_MIBAND_POLL_MS = 1000.0
DEFAULT_CONTEXT_PERIOD_MS = 30_000.0


@dataclass
class RunResult:
    csv_bytes: bytes
    manifest: SessionManifest
    receipt: UploadReceipt | None
    alerts: list[AlertEvent]
    dropped: int
    obd: PollStats
    context_rounds: int
    context_failures: int
    trace_path: Path | None

    def channel_counts(self) -> Counter:
        return Counter(row.channel for row in csv_to_rows(self.csv_bytes))


class SessionRunner:
    def __init__(
        self,
        gateway: Gateway,
        clock,
        simulator=None,
        obd_link_factory=None,
        wearables: tuple[WearableDevice, ...] = (),
        physio: PhysioModel | None = None,
        traffic: TrafficClient | None = None,
        weather: WeatherClient | None = None,
        cloud_client=None,
        obd_pids: tuple[int, ...] = CORE_PIDS,
    ):
        self.gateway = gateway
        self.clock = clock
        self.simulator = simulator
        self.obd_link_factory = obd_link_factory
        self.wearables = tuple(wearables)
        self.physio = physio
        self.traffic = traffic
        self.weather = weather
        self.cloud_client = cloud_client
        self.obd_pids = obd_pids
        cfg = gateway.config
        self.gps_period_ms = cfg.get_float("gateway.gps_period_ms", DEFAULT_GPS_PERIOD_MS)
        self.miband_poll_ms = cfg.get_float("gateway.miband_poll_ms", DEFAULT_MIBAND_POLL_MS)
        self.context_period_ms = cfg.get_float("external.period_ms", DEFAULT_CONTEXT_PERIOD_MS)

    def run(self, driver_id: str, vehicle_id: str, duration_s: float, upload: bool = True) -> RunResult:
        for device in self.wearables:
            self.gateway.pair_device(device)
        obd_source = gps_source = None
        if self.obd_link_factory is not None:
            obd_source = self.gateway.pair_device(LocalSource("obd-1", KIND_OBD)).device_id
        if self.simulator is not None:
            gps_source = self.gateway.pair_device(LocalSource("gps-1", KIND_GPS)).device_id

        session = self.gateway.start_session(driver_id, vehicle_id)
        start = self.clock.now_ms()
        t_end = start + duration_s * 1000.0

        state = _ProducerState(self, session, gps_source, start)
        try:
            if self.obd_link_factory is not None:
                obd_stats = obd_poll_loop(
                    self.obd_link_factory,
                    session,
                    self.clock,
                    source=obd_source,
                    duration_ms=duration_s * 1000.0,
                    pids=self.obd_pids,
                    on_cycle=state.service,
                )
            else:
                obd_stats = PollStats()
                self._scheduler_loop(state, t_end)
        finally:
            state.close()

        csv_bytes, manifest = self.gateway.end_session()
        trace_path = self._persist_trace(csv_bytes, manifest)
        receipt = None
        if upload and self.cloud_client is not None:
            receipt = self.upload(csv_bytes, manifest, trace_path)
        return RunResult(
            csv_bytes=csv_bytes,
            manifest=manifest,
            receipt=receipt,
            alerts=list(session.alerts),
            dropped=session.dropped,
            obd=obd_stats,
            context_rounds=state.context_rounds,
            context_failures=state.context_failures,
            trace_path=trace_path,
        )

    def _scheduler_loop(self, state: "_ProducerState", t_end: float) -> None:
        while True:
            now = self.clock.now_ms()
            if now >= t_end:
                return
            state.service(now)
            next_due = min(state.next_due(), t_end)
            wait = next_due - self.clock.now_ms()
            if wait > 0:
                self.clock.sleep_ms(wait)

    def _persist_trace(self, csv_bytes: bytes, manifest: SessionManifest) -> Path | None:
        if self.gateway.trace_dir is None:
            return None
        self.gateway.trace_dir.mkdir(parents=True, exist_ok=True)
        path = self.gateway.trace_dir / f"{manifest.session_id}.csv"
        path.write_bytes(csv_bytes)
        return path

    def upload(self, csv_bytes: bytes, manifest: SessionManifest, trace_path: Path | None = None) -> UploadReceipt:
        outbox_dir = self.gateway.outbox_dir or (self.gateway.trace_dir or Path(".")) / "outbox"
        receipt = finalize_and_upload(
            csv_bytes,
            manifest,
            self.gateway.key,
            self.cloud_client,
            Outbox(outbox_dir),
            self.clock,
        )
        retain = self.gateway.config.get_bool("gateway.retain_plaintext", True)
        if not retain and trace_path is not None and trace_path.exists():
            trace_path.unlink()
        return receipt


class _ProducerState:
    """Due-time bookkeeping for every non-OBD producer."""

    def __init__(self, runner: SessionRunner, session, gps_source: str | None, start_ms: float):
        self.runner = runner
        self.session = session
        self.gps_source = gps_source
        self.streams = []
        self.miband: list[MiBand] = []
        self.miband_due: dict[str, float] = {}
        self.miband_last: dict[str, int] = {}
        for device in runner.wearables:
            if isinstance(device, MiBand):
                self.miband.append(device)
                self.miband_due[device.device_id] = start_ms
            elif hasattr(device, "subscribe"):
                self.streams.append(device.subscribe(start_ms))
        self.gps_active = gps_source is not None and runner.simulator is not None
        self.context_active = runner.traffic is not None or runner.weather is not None
        self.gps_due = start_ms + runner.gps_period_ms
        self.context_due = start_ms + runner.context_period_ms
        self.context_rounds = 0
        self.context_failures = 0
        self._phys_t = start_ms
        self._phys_speed = self._current_speed()

    def _current_speed(self) -> float:
        if self.runner.simulator is None:
            return 0.0
        return self.runner.simulator.snapshot().speed_kmh

    def service(self, now: float) -> None:
        sim = self.runner.simulator
        if sim is not None:
            sim.advance_to(now)
        self._update_physio(now)
        for stream in self.streams:
            while stream.next_due_ms <= now:
                self.session.ingest(stream.take(now))
        for device in self.miband:
            if now >= self.miband_due[device.device_id]:
                sample = device.poll(now)
                if sample.measured_at != self.miband_last.get(device.device_id):
                    self.miband_last[device.device_id] = sample.measured_at
                    self.session.ingest(sample)
                self.miband_due[device.device_id] += self.runner.miband_poll_ms
        if self.gps_active:
            while self.gps_due <= now:
                state = sim.snapshot()
                self.session.ingest(GpsFix(state.lat, state.lon, now), source=self.gps_source)
                self.gps_due += self.runner.gps_period_ms
        if self.context_active and now >= self.context_due:
            self._poll_context(now)
            self.context_due += self.runner.context_period_ms

    def _update_physio(self, now: float) -> None:
        if self.runner.physio is None:
            return
        dt = now - self._phys_t
        if dt <= 0:
            return
        speed = self._current_speed()
        accel = (speed - self._phys_speed) / 3.6 / (dt / 1000.0)
        self.runner.physio.update(accel, dt)
        self._phys_t = now
        self._phys_speed = speed

    def _poll_context(self, now: float) -> None:
        self.context_rounds += 1
        if self.runner.simulator is not None:
            state = self.runner.simulator.snapshot()
            lat, lon = state.lat, state.lon
        else:
            lat, lon = 0.0, 0.0
        for client, fetch in (
            (self.runner.traffic, "get_flow_segment"),
            (self.runner.weather, "get_current_weather"),
        ):
            if client is None:
                continue
            try:
                self.session.ingest(getattr(client, fetch)(lat, lon))
            except ExternalError as exc:
                self.context_failures += 1
                log.debug("context fetch failed: %s", exc)

    def next_due(self) -> float:
        dues = [stream.next_due_ms for stream in self.streams]
        dues.extend(self.miband_due.values())
        if self.gps_active:
            dues.append(self.gps_due)
        if self.context_active:
            dues.append(self.context_due)
        return min(dues) if dues else math.inf

    def close(self) -> None:
        for stream in self.streams:
            stream.close()
