from __future__ import annotations

import pytest

from fogtrace.clock import SimulatedClock
from fogtrace.cloudstore import ClientAccount, CloudClient, CloudStoreHTTPServer, CloudStoreService
from fogtrace.external import (
    FlowService,
    LocalFlowProvider,
    LocalWeatherProvider,
    RateLimiter,
    TrafficClient,
    WeatherClient,
    WeatherService,
)
from fogtrace.gateway import Gateway, SessionRunner
from fogtrace.vehicle import PROFILES, InProcessObdLink, LatencyModel, VehicleSimulator
from fogtrace.wearables import MiBand, PhysioModel, Polar, Spire

TEST_KEY = bytes(range(32))


@pytest.fixture
def sim_clock() -> SimulatedClock:
    return SimulatedClock()


@pytest.fixture
def key() -> bytes:
    return TEST_KEY


@pytest.fixture
def accounts() -> dict[str, ClientAccount]:
    return {
        "gw": ClientAccount("gw", "gw-secret", frozenset({"upload", "read"})),
        "uploader": ClientAccount("uploader", "up-secret", frozenset({"upload"})),
        "reader": ClientAccount("reader", "rd-secret", frozenset({"read"})),
    }


@pytest.fixture
def store_service(tmp_path, accounts) -> CloudStoreService:
    return CloudStoreService(tmp_path / "store", clients=accounts)


@pytest.fixture
def store_server(store_service):
    with CloudStoreHTTPServer(store_service) as server:
        yield server


@pytest.fixture
def cloud_client(store_server) -> CloudClient:
    return CloudClient(store_server.base_url, "gw", "gw-secret")


@pytest.fixture
def pipeline_factory(sim_clock, key):
    """Fully wired session runner on the simulated clock."""

    def make(
        profile: str = "calm",
        seed: int = 7,
        context: bool = True,
        cloud_client=None,
        obd: bool = True,
        outbox_dir=None,
        trace_dir=None,
        config=None,
    ):
        clock = sim_clock
        sim = VehicleSimulator(
            profile=PROFILES[profile],
            latency=LatencyModel(seed=seed),
            seed=seed,
            start_ms=clock.now_ms(),
        )
        physio = PhysioModel()
        gateway = Gateway(
            clock=clock, key=key, outbox_dir=outbox_dir, trace_dir=trace_dir, config=config
        )
        traffic = weather = None
        if context:
            traffic = TrafficClient(
                LocalFlowProvider(FlowService(seed), clock), RateLimiter(clock=clock), clock
            )
            weather = WeatherClient(
                LocalWeatherProvider(WeatherService(seed), clock), RateLimiter(clock=clock), clock
            )
        runner = SessionRunner(
            gateway,
            clock,
            simulator=sim,
            obd_link_factory=(lambda: InProcessObdLink(sim, clock)) if obd else None,
            wearables=(
                MiBand("miband-1", physio, seed),
                Polar("polar-1", physio, seed),
                Spire("spire-1", physio, seed),
            ),
            physio=physio,
            traffic=traffic,
            weather=weather,
            cloud_client=cloud_client,
        )
        return runner

    return make
