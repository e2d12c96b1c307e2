"""Simulated ECU: a scripted drive answering OBD queries with delayed replies.

The simulator evolves a kinematic state (speed, rpm, throttle, gear,
odometer, position along a route polyline) in fixed ticks while a drive
profile supplies the speed targets. OBD replies are delayed by a sample
from a triangular latency distribution, default ``(50, 80, 200)`` ms whose
mean is 110 ms; the reply always reflects the state at the moment of reply
emission, and replies on one connection are strictly FIFO.

The kinematic rules are documented constants, not physics:

* speed moves toward the segment target, bounded by the profile's
  acceleration limit
* throttle = clamp(k_accel * accel + k_drag * speed, 0, 100)
* gear comes from a fixed shift table (upshifts at 20/40/60/90 km/h)
* rpm = 800 + speed * 120 / gear, clamped to [800, 6500]
"""

from __future__ import annotations

import math
import random
import socket
import socketserver
import threading
from dataclasses import dataclass, replace

from .clock import SystemClock
from .config import Config
from .obd import (
    CORE_PIDS,
    NRC_SERVICE_NOT_SUPPORTED,
    NRC_SUBFUNCTION_NOT_SUPPORTED,
    MalformedFrameError,
    ObdRequest,
    ObdResponse,
    PidId,
    UnsupportedModeError,
    VehicleReading,
    encode_measurement,
    encode_request,
    parse_request,
    parse_response,
    render_negative_response,
    render_response,
)

IDLE_RPM = 800.0
MAX_RPM = 6500.0
GEAR_SHIFT_KMH = (20.0, 40.0, 60.0, 90.0)  # upshift thresholds for gears 2..5
DEFAULT_TICK_MS = 100.0

# Small closed loop used as the default route polyline.
DEFAULT_ROUTE = (
    (52.5200, 13.4050),
    (52.5235, 13.4115),
    (52.5262, 13.4180),
    (52.5240, 13.4260),
    (52.5190, 13.4230),
    (52.5160, 13.4140),
    (52.5200, 13.4050),
)


@dataclass(frozen=True)
class VehicleState:
    speed_kmh: float = 0.0
    rpm: float = IDLE_RPM
    throttle_pct: float = 0.0
    gear: int = 1
    odometer_m: float = 0.0
    lat: float = DEFAULT_ROUTE[0][0]
    lon: float = DEFAULT_ROUTE[0][1]
    sim_time_ms: float = 0.0
    elapsed_ms: float = 0.0  # time since trip start, drives the profile


@dataclass(frozen=True)
class DriveProfile:
    """Scripted targets: ``segments`` is a sequence of (duration s, target km/h)."""

    name: str
    segments: tuple[tuple[float, float], ...]
    accel_limit_mps2: float
    route: tuple[tuple[float, float], ...] = DEFAULT_ROUTE

    def __post_init__(self):
        for duration, target in self.segments:
            if duration <= 0:
                raise ValueError(f"segment durations must be positive, got {duration}")
            if not 0 <= target <= 255:
                raise ValueError(f"target speeds must be in [0, 255] km/h, got {target}")

    @property
    def total_s(self) -> float:
        return sum(duration for duration, _ in self.segments)

    def target_speed_at(self, elapsed_s: float) -> float:
        """Target for the given trip time; the script repeats when exhausted."""
        t = elapsed_s % self.total_s
        for duration, target in self.segments:
            if t < duration:
                return target
            t -= duration
        return self.segments[-1][1]


CALM_PROFILE = DriveProfile(
    name="calm",
    segments=((40, 30), (80, 50), (30, 30), (60, 45), (20, 0), (70, 55)),
    accel_limit_mps2=1.5,
)

AGGRESSIVE_PROFILE = DriveProfile(
    name="aggressive",
    segments=((15, 70), (10, 15), (20, 95), (10, 30), (25, 130), (10, 0), (15, 80), (15, 20)),
    accel_limit_mps2=3.5,
)

PROFILES = {p.name: p for p in (CALM_PROFILE, AGGRESSIVE_PROFILE)}


@dataclass
class ThrottleParams:
    k_accel: float = 25.0  # % per m/s^2
    k_drag: float = 0.5  # % per km/h


@dataclass
class LatencyModel:
    """Triangular reply-delay distribution in milliseconds."""

    min_ms: float = 50.0
    mode_ms: float = 80.0
    max_ms: float = 200.0
    seed: int = 0

    def __post_init__(self):
        if not self.min_ms <= self.mode_ms <= self.max_ms:
            raise ValueError("latency model requires min <= mode <= max")
        self._rng = random.Random(self.seed)
        self._lock = threading.Lock()

    @classmethod
    def fixed(cls, delay_ms: float, seed: int = 0) -> "LatencyModel":
        return cls(min_ms=delay_ms, mode_ms=delay_ms, max_ms=delay_ms, seed=seed)

    @property
    def mean_ms(self) -> float:
        return (self.min_ms + self.mode_ms + self.max_ms) / 3.0

    def sample(self) -> float:
        with self._lock:
            return self._rng.triangular(self.min_ms, self.max_ms, self.mode_ms)


class Route:
    """Cumulative-distance lookup along a polyline of (lat, lon) points."""

    _M_PER_DEG_LAT = 110_540.0
    _M_PER_DEG_LON_EQ = 111_320.0

    def __init__(self, points: tuple[tuple[float, float], ...]):
        if not points:
            raise ValueError("route needs at least one point")
        self.points = points
        ref_lat = math.radians(points[0][0])
        self._lon_scale = self._M_PER_DEG_LON_EQ * math.cos(ref_lat)
        self._cum = [0.0]
        for (lat1, lon1), (lat2, lon2) in zip(points, points[1:]):
            dx = (lon2 - lon1) * self._lon_scale
            dy = (lat2 - lat1) * self._M_PER_DEG_LAT
            self._cum.append(self._cum[-1] + math.hypot(dx, dy))

    @property
    def length_m(self) -> float:
        return self._cum[-1]

    def point_at(self, distance_m: float) -> tuple[float, float]:
        if self.length_m <= 0:
            return self.points[0]
        d = distance_m % self.length_m
        for i in range(1, len(self._cum)):
            if d <= self._cum[i]:
                seg = self._cum[i] - self._cum[i - 1]
                frac = 0.0 if seg == 0 else (d - self._cum[i - 1]) / seg
                (lat1, lon1), (lat2, lon2) = self.points[i - 1], self.points[i]
                return (lat1 + (lat2 - lat1) * frac, lon1 + (lon2 - lon1) * frac)
        return self.points[-1]


_ROUTE_CACHE: dict[tuple[tuple[float, float], ...], Route] = {}


def _route_for(profile: DriveProfile) -> Route:
    route = _ROUTE_CACHE.get(profile.route)
    if route is None:
        route = _ROUTE_CACHE[profile.route] = Route(profile.route)
    return route


def gear_for_speed(speed_kmh: float) -> int:
    gear = 1
    for threshold in GEAR_SHIFT_KMH:
        if speed_kmh >= threshold:
            gear += 1
    return gear


def step(
    state: VehicleState,
    profile: DriveProfile,
    dt_ms: float,
    params: ThrottleParams | None = None,
) -> VehicleState:
    """Advance the kinematic state by one tick. Inputs are clamped, never rejected."""
    if dt_ms <= 0:
        raise ValueError("dt must be positive")
    params = params or ThrottleParams()
    dt_s = dt_ms / 1000.0

    target = profile.target_speed_at(state.elapsed_ms / 1000.0)
    max_delta_kmh = profile.accel_limit_mps2 * dt_s * 3.6
    delta = min(max(target - state.speed_kmh, -max_delta_kmh), max_delta_kmh)
    speed = max(0.0, state.speed_kmh + delta)

    accel_mps2 = (speed - state.speed_kmh) / 3.6 / dt_s
    throttle = min(max(params.k_accel * accel_mps2 + params.k_drag * speed, 0.0), 100.0)
    gear = gear_for_speed(speed)
    rpm = min(max(IDLE_RPM + speed * 120.0 / gear, IDLE_RPM), MAX_RPM)

    odometer = state.odometer_m + (state.speed_kmh + speed) / 2.0 / 3.6 * dt_s
    lat, lon = _route_for(profile).point_at(odometer)

    return replace(
        state,
        speed_kmh=speed,
        rpm=rpm,
        throttle_pct=throttle,
        gear=gear,
        odometer_m=odometer,
        lat=lat,
        lon=lon,
        sim_time_ms=state.sim_time_ms + dt_ms,
        elapsed_ms=state.elapsed_ms + dt_ms,
    )


class VehicleSimulator:
    """Owns one vehicle state and answers OBD request frames from it.

    ``advance_to`` steps the state in fixed ticks up to the given timestamp;
    snapshots handed out are immutable copies, so repliers never observe a
    state mid-update. Thread safe.
    """

    def __init__(
        self,
        profile: DriveProfile = CALM_PROFILE,
        latency: LatencyModel | None = None,
        seed: int = 0,
        tick_ms: float = DEFAULT_TICK_MS,
        start_ms: float = 0.0,
        throttle_params: ThrottleParams | None = None,
        supported_pids: tuple[int, ...] = CORE_PIDS,
    ):
        self.profile = profile
        self.latency = latency if latency is not None else LatencyModel(seed=seed)
        self.tick_ms = float(tick_ms)
        self.throttle_params = throttle_params or ThrottleParams()
        self.supported_pids = tuple(supported_pids)
        route = _route_for(profile)
        lat, lon = route.point_at(0.0)
        self._state = VehicleState(lat=lat, lon=lon, sim_time_ms=float(start_ms))
        self._lock = threading.RLock()

    @classmethod
    def from_config(cls, config: Config, start_ms: float = 0.0) -> "VehicleSimulator":
        profile = PROFILES[config.get_str("vehicle.profile", "calm")]
        latency = LatencyModel(
            min_ms=config.get_float("vehicle.latency.min_ms", 50.0),
            mode_ms=config.get_float("vehicle.latency.mode_ms", 80.0),
            max_ms=config.get_float("vehicle.latency.max_ms", 200.0),
            seed=config.get_int("seed", 0),
        )
        params = ThrottleParams(
            k_accel=config.get_float("vehicle.throttle.k_accel", 25.0),
            k_drag=config.get_float("vehicle.throttle.k_drag", 0.5),
        )
        return cls(
            profile=profile,
            latency=latency,
            seed=config.get_int("seed", 0),
            tick_ms=config.get_float("vehicle.tick_ms", DEFAULT_TICK_MS),
            start_ms=start_ms,
            throttle_params=params,
        )

    def snapshot(self) -> VehicleState:
        with self._lock:
            return self._state

    def step_once(self) -> VehicleState:
        with self._lock:
            self._state = step(self._state, self.profile, self.tick_ms, self.throttle_params)
            return self._state

    def advance_to(self, t_ms: float) -> VehicleState:
        with self._lock:
            while self._state.sim_time_ms + self.tick_ms <= t_ms:
                self._state = step(self._state, self.profile, self.tick_ms, self.throttle_params)
            return self._state

    def measurement(self, pid: int) -> float:
        state = self.snapshot()
        if pid == 0x0C:
            return state.rpm
        if pid == 0x0D:
            return state.speed_kmh
        if pid == 0x11:
            return state.throttle_pct
        raise KeyError(f"no measurement for PID 0x{pid:02X}")

    def reply_frame(self, raw_request: bytes) -> bytes:
        """Frame in, frame out. Unsupported or broken requests get a 7F frame."""
        try:
            pid_id = parse_request(raw_request)
        except UnsupportedModeError:
            mode = _request_mode(raw_request)
            return render_negative_response(mode, NRC_SERVICE_NOT_SUPPORTED)
        except MalformedFrameError:
            return render_negative_response(0x00, NRC_SERVICE_NOT_SUPPORTED)
        if pid_id.pid not in self.supported_pids:
            return render_negative_response(pid_id.mode, NRC_SUBFUNCTION_NOT_SUPPORTED)
        data = encode_measurement(pid_id.pid, self.measurement(pid_id.pid))
        return render_response(pid_id, data)


def _request_mode(raw: bytes) -> int:
    try:
        return int(raw.decode("ascii", "replace").strip().split()[0], 16) & 0xFF
    except (ValueError, IndexError):
        return 0x00


def run_trip(
    profile: DriveProfile,
    duration_s: float,
    seed: int = 0,
    tick_ms: float = DEFAULT_TICK_MS,
    start_ms: float = 0.0,
    throttle_params: ThrottleParams | None = None,
) -> list[VehicleReading]:
    """Tick a fresh simulator for the whole duration and log every tick.

    Deterministic for a given seed; duration 0 yields an empty log.
    """
    if duration_s < 0:
        raise ValueError("duration must be >= 0")
    sim = VehicleSimulator(
        profile=profile,
        seed=seed,
        tick_ms=tick_ms,
        start_ms=start_ms,
        throttle_params=throttle_params,
    )
    readings: list[VehicleReading] = []
    for _ in range(int(round(duration_s * 1000.0 / tick_ms))):
        state = sim.step_once()
        readings.append(
            VehicleReading(
                speed_kmh=state.speed_kmh,
                rpm=state.rpm,
                throttle_pct=state.throttle_pct,
                sampled_at=state.sim_time_ms,
            )
        )
    return readings


class _RequestHelper:
    """Shared encode/transact/parse cycle for OBD links."""

    clock: object

    def transact(self, raw_request: bytes) -> bytes:  # pragma: no cover - interface
        raise NotImplementedError

    def request(self, pid: int | PidId) -> ObdResponse:
        pid_id = pid if isinstance(pid, PidId) else PidId(pid=pid)
        req = ObdRequest(pid_id=pid_id, issued_at=self.clock.now_ms())
        reply = self.transact(encode_request(req.pid_id))
        return parse_response(reply, req.pid_id, received_at=self.clock.now_ms())


class InProcessObdLink(_RequestHelper):
    """Synchronous link to a simulator sharing the caller's clock.

    The reply is built from the state advanced to the reply-emission time,
    then delivery is delayed by a latency-model sample. With a simulated
    clock the delay is virtual, so thousands of exchanges run in
    milliseconds of compute time.
    """

    def __init__(self, simulator: VehicleSimulator, clock, latency: LatencyModel | None = None):
        self.simulator = simulator
        self.clock = clock
        self.latency = latency if latency is not None else simulator.latency
        self.closed = False

    def transact(self, raw_request: bytes) -> bytes:
        if self.closed:
            raise ConnectionError("link is closed")
        t_reply = self.clock.now_ms() + self.latency.sample()
        self.simulator.advance_to(t_reply)
        reply = self.simulator.reply_frame(raw_request)
        self.clock.sleep_ms(t_reply - self.clock.now_ms())
        return reply

    def close(self) -> None:
        self.closed = True


class TcpObdLink(_RequestHelper):
    """Client for the TCP framing server; one in-flight request at a time."""

    def __init__(self, host: str, port: int, clock=None, timeout_s: float = 30.0):
        self.clock = clock if clock is not None else SystemClock()
        self._sock = socket.create_connection((host, port), timeout=timeout_s)
        self._buffer = bytearray()

    def transact(self, raw_request: bytes) -> bytes:
        self._sock.sendall(raw_request)
        while b"\r" not in self._buffer:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionError("OBD server closed the connection")
            self._buffer.extend(chunk)
        idx = self._buffer.index(b"\r")
        frame = bytes(self._buffer[: idx + 1])
        del self._buffer[: idx + 1]
        return frame

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class _VehicleHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: VehicleTcpServer = self.server.owner  # type: ignore[attr-defined]
        buffer = bytearray()
        while True:
            try:
                chunk = self.request.recv(4096)
            except OSError:
                return
            if not chunk:
                return
            buffer.extend(chunk)
            # Requests on one connection are serviced strictly in order.
            while b"\r" in buffer:
                idx = buffer.index(b"\r")
                frame = bytes(buffer[: idx + 1]).lstrip(b"\n>")
                del buffer[: idx + 1]
                delay = server.simulator.latency.sample()
                server.clock.sleep_ms(delay)
                server.simulator.advance_to(server.clock.now_ms())
                try:
                    self.request.sendall(server.simulator.reply_frame(frame))
                except OSError:
                    return


class _ThreadingTcp(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class VehicleTcpServer:
    """Serves the OBD framing over loopback TCP, one thread per connection."""

    def __init__(self, simulator: VehicleSimulator, host: str = "127.0.0.1", port: int = 0, clock=None):
        self.simulator = simulator
        self.clock = clock if clock is not None else SystemClock()
        self._tcp = _ThreadingTcp((host, port), _VehicleHandler)
        self._tcp.owner = self  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    @property
    def port(self) -> int:
        return self._tcp.server_address[1]

    def start(self) -> "VehicleTcpServer":
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "VehicleTcpServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
