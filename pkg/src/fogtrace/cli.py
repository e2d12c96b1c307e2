"""Command-line entry point.

Subcommands:

* ``run``       end-to-end session: drive, aggregate, encrypt, upload
* ``bench-obd`` polling throughput and latency benchmark
* ``verify``    download, decrypt and re-validate an uploaded trace
* ``replay``    summarize a trace from the store or a local CSV
* ``erase``     clear device buffers and/or local gateway storage

``--self-contained`` spawns every needed service in-process (vehicle,
context stubs, cloud store) so a full pipeline runs from a single command.
The default clock is simulated, which replays multi-minute sessions in
well under a second; ``--clock real`` runs the identical pipeline against
a TCP vehicle server and HTTP stubs in wall time.

Exit codes: 0 success, 1 stage failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from .bench import run_obd_bench
from .clock import SimulatedClock, SystemClock
from .cloudstore import ClientAccount, CloudClient, CloudStoreHTTPServer, CloudStoreService
from .config import Config
from .external import (
    FlowService,
    HttpFlowProvider,
    HttpWeatherProvider,
    LocalFlowProvider,
    LocalWeatherProvider,
    RateLimiter,
    TrafficClient,
    WeatherClient,
    WeatherService,
)
from .external_httpd import ContextStubServer
from .gateway import Gateway, Outbox, SessionRunner, flush_outbox
from .gateway.envelope import open_envelope
from .gateway.records import SessionManifest, csv_to_rows, sha256_hex, validate_rows
from .vehicle import (
    PROFILES,
    InProcessObdLink,
    LatencyModel,
    TcpObdLink,
    VehicleSimulator,
    VehicleTcpServer,
)
from .wearables import MiBand, PhysioModel, Polar, Spire

DEFAULT_CLIENT_ID = "gateway"
DEFAULT_CLIENT_SECRET = "local-dev-secret"


class StageError(Exception):
    def __init__(self, stage_name: str, cause: Exception):
        super().__init__(f"stage '{stage_name}' failed: {cause}")
        self.stage_name = stage_name
        self.cause = cause


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fogtrace", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, default=None, help="master seed for all generators")
    parser.add_argument(
        "--self-contained",
        action="store_true",
        help="spawn vehicle, context stubs and cloud store in-process",
    )
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a full trip through the pipeline")
    run.add_argument("--driver", default="driver-1")
    run.add_argument("--vehicle", default="vehicle-1")
    run.add_argument("--duration", type=float, default=300.0, help="trip length in seconds")
    run.add_argument("--profile", choices=sorted(PROFILES), default="calm")
    run.add_argument("--clock", choices=("sim", "real"), default="sim")
    run.add_argument("--out", default="fogtrace-out", help="artifact directory")
    run.add_argument("--outbox-dir", default=None)
    run.add_argument("--store-dir", default=None, help="cloud store root (self-contained)")
    run.add_argument("--cloud-url", default=None)
    run.add_argument("--key-hex", default=None)
    run.add_argument("--key-file", default=None)
    run.add_argument("--no-upload", action="store_true", help="skip the cloud store entirely")
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench-obd", help="OBD throughput/latency benchmark")
    bench.add_argument("--duration", type=float, default=300.0, help="benchmark length in seconds")
    bench.add_argument("--latency", default="50,80,200", help="min,mode,max reply delay (ms)")
    bench.add_argument("--fixed-ms", type=float, default=None, help="constant reply delay (ms)")
    bench.add_argument("--window-s", type=float, default=60.0)
    bench.add_argument("--clock", choices=("sim", "real"), default="sim")
    bench.add_argument("--out-csv", default=None, help="write the per-update series here")
    bench.set_defaults(func=cmd_bench_obd)

    verify = sub.add_parser("verify", help="re-validate an uploaded trace")
    verify.add_argument("--trace-ref", required=True)
    verify.add_argument("--key-hex", default=None)
    verify.add_argument("--key-file", default=None)
    verify.add_argument("--cloud-url", default=None)
    verify.add_argument("--store-dir", default=None)
    verify.add_argument("--out", default="fogtrace-out")
    verify.set_defaults(func=cmd_verify)

    replay = sub.add_parser("replay", help="summarize a stored trace")
    replay.add_argument("--trace-ref", default=None)
    replay.add_argument("--csv-file", default=None, help="local plaintext trace instead")
    replay.add_argument("--key-hex", default=None)
    replay.add_argument("--key-file", default=None)
    replay.add_argument("--cloud-url", default=None)
    replay.add_argument("--store-dir", default=None)
    replay.add_argument("--out", default="fogtrace-out")
    replay.set_defaults(func=cmd_replay)

    erase = sub.add_parser("erase", help="erase device and/or local gateway data")
    erase.add_argument("--scope", choices=("device", "local", "both"), required=True)
    erase.add_argument("--out", default="fogtrace-out")
    erase.add_argument("--outbox-dir", default=None)
    erase.add_argument("--trace-dir", default=None)
    erase.set_defaults(func=cmd_erase)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"fogtrace: {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort CLI boundary
        print(f"fogtrace: {args.command}: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:  # console script
    sys.exit(main())


# -- shared builders ---------------------------------------------------------


def _load_config(args) -> Config:
    if args.config:
        return Config.load(args.config)
    return Config()


def _seed(args, cfg: Config) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.get_int("seed", 42)


def _make_clock(kind: str):
    return SimulatedClock() if kind == "sim" else SystemClock()


def _resolve_key(args, cfg: Config, out_dir: Path | None, generate: bool) -> bytes | None:
    key_hex = getattr(args, "key_hex", None) or cfg.get("gateway.key_hex")
    key_file = getattr(args, "key_file", None) or cfg.get("gateway.key_file")
    if key_hex:
        return bytes.fromhex(key_hex)
    if key_file:
        return bytes.fromhex(Path(key_file).read_text().strip())
    if out_dir is not None:
        existing = out_dir / "key.hex"
        if existing.exists():
            return bytes.fromhex(existing.read_text().strip())
        if generate:
            key = os.urandom(32)
            out_dir.mkdir(parents=True, exist_ok=True)
            existing.write_text(key.hex() + "\n")
            return key
    return None


def _client_accounts(cfg: Config) -> dict[str, ClientAccount]:
    accounts: dict[str, ClientAccount] = {}
    for key, value in cfg.as_dict().items():
        parts = key.split(".")
        if len(parts) == 4 and parts[:2] == ["cloud", "client"] and parts[3] == "secret":
            client_id = parts[2]
            scopes = cfg.get_str(f"cloud.client.{client_id}.scopes", "upload,read")
            accounts[client_id] = ClientAccount(
                client_id=client_id,
                client_secret=value,
                scopes=frozenset(s.strip() for s in scopes.split(",") if s.strip()),
            )
    if not accounts:
        accounts[DEFAULT_CLIENT_ID] = ClientAccount(
            client_id=DEFAULT_CLIENT_ID,
            client_secret=DEFAULT_CLIENT_SECRET,
            scopes=frozenset({"upload", "read"}),
        )
    return accounts


def _cloud_client(args, cfg: Config, stack: contextlib.ExitStack, out_dir: Path) -> CloudClient | None:
    """Remote client if a URL is configured, else a self-contained store."""
    client_id = cfg.get_str("cloud.client_id", DEFAULT_CLIENT_ID)
    client_secret = cfg.get_str("cloud.client_secret", DEFAULT_CLIENT_SECRET)
    cloud_url = getattr(args, "cloud_url", None) or cfg.get("cloud.base_url")
    if cloud_url:
        return CloudClient(cloud_url, client_id, client_secret)
    if not args.self_contained:
        return None
    store_dir = Path(getattr(args, "store_dir", None) or out_dir / "store")
    service = CloudStoreService(
        store_dir,
        clients=_client_accounts(cfg),
        token_ttl_s=cfg.get_int("cloud.token_ttl_s", 3600),
    )
    server = stack.enter_context(CloudStoreHTTPServer(service))
    return CloudClient(server.base_url, client_id, client_secret)


# -- run -----------------------------------------------------------------------


def cmd_run(args) -> int:
    with _stage("setup"):
        cfg = _load_config(args)
        seed = _seed(args, cfg)
        clock = _make_clock(args.clock)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)

        profile = PROFILES[args.profile]
        latency = LatencyModel(
            min_ms=cfg.get_float("vehicle.latency.min_ms", 50.0),
            mode_ms=cfg.get_float("vehicle.latency.mode_ms", 80.0),
            max_ms=cfg.get_float("vehicle.latency.max_ms", 200.0),
            seed=seed,
        )
        simulator = VehicleSimulator(
            profile=profile, latency=latency, seed=seed, start_ms=clock.now_ms()
        )

        key = _resolve_key(args, cfg, out_dir, generate=not args.no_upload)
        gateway = Gateway(
            gateway_id=cfg.get_str("gateway.id", "gateway-1"),
            clock=clock,
            key=key,
            outbox_dir=args.outbox_dir or out_dir / "outbox",
            trace_dir=out_dir / "traces",
            config=cfg,
        )

        physio = PhysioModel()
        wearables = (
            MiBand("miband-1", physio, seed),
            Polar("polar-1", physio, seed),
            Spire("spire-1", physio, seed),
        )

    with contextlib.ExitStack() as stack:
        with _stage("setup"):
            if args.clock == "real" and args.self_contained:
                server = stack.enter_context(VehicleTcpServer(simulator, clock=clock))
                host, port = server.address
                link_factory = lambda: TcpObdLink(host, port, clock)  # noqa: E731
            else:
                link_factory = lambda: InProcessObdLink(simulator, clock)  # noqa: E731

            ext_seed = cfg.get_int("external.seed", seed)
            if args.clock == "real" and args.self_contained:
                stub = stack.enter_context(ContextStubServer(seed=ext_seed, clock=clock))
                flow_provider = HttpFlowProvider(stub.base_url)
                weather_provider = HttpWeatherProvider(stub.base_url)
            else:
                flow_provider = LocalFlowProvider(FlowService(ext_seed), clock)
                weather_provider = LocalWeatherProvider(WeatherService(ext_seed), clock)
            traffic = TrafficClient(flow_provider, RateLimiter(clock=clock), clock)
            weather = WeatherClient(weather_provider, RateLimiter(clock=clock), clock)

            cloud = None
            if not args.no_upload:
                cloud = _cloud_client(args, cfg, stack, out_dir)
                if cloud is None:
                    raise ValueError(
                        "no cloud store configured; pass --cloud-url, --self-contained or --no-upload"
                    )

        if cloud is not None:
            # Anything stranded by an earlier run goes out first.
            with _stage("outbox-flush"):
                receipts, _still_pending = flush_outbox(Outbox(gateway.outbox_dir), cloud, clock)
            for receipt in receipts:
                print(f"flushed pending upload {receipt.trace_ref[:12]}...", file=sys.stderr)

        runner = SessionRunner(
            gateway,
            clock,
            simulator=simulator,
            obd_link_factory=link_factory,
            wearables=wearables,
            physio=physio,
            traffic=traffic,
            weather=weather,
            cloud_client=cloud,
        )
        with _stage("session"):
            result = runner.run(args.driver, args.vehicle, args.duration, upload=False)
        if cloud is not None:
            with _stage("upload"):
                result.receipt = runner.upload(result.csv_bytes, result.manifest, result.trace_path)

    with _stage("write-artifacts"):
        (out_dir / "manifest.json").write_bytes(result.manifest.to_json())
        if result.receipt is not None:
            (out_dir / "receipt.json").write_text(
                json.dumps(
                    {
                        "trace_ref": result.receipt.trace_ref,
                        "size_bytes": result.receipt.size_bytes,
                        "sha256": result.receipt.sha256,
                    },
                    indent=2,
                )
            )

    summary = {
        "session_id": result.manifest.session_id,
        "row_count": result.manifest.row_count,
        "csv_sha256": result.manifest.csv_sha256,
        "alerts": len(result.alerts),
        "dropped": result.dropped,
        "obd_rows": result.obd.rows,
        "trace_ref": result.receipt.trace_ref if result.receipt else None,
        "out_dir": str(out_dir),
    }
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(f"session {summary['session_id']}: {summary['row_count']} rows, {summary['alerts']} alerts")
        if result.receipt:
            print(f"uploaded as {result.receipt.trace_ref}")
        print(f"artifacts in {out_dir}")
    return 0


# -- bench ---------------------------------------------------------------------


def cmd_bench_obd(args) -> int:
    with _stage("setup"):
        cfg = _load_config(args)
        seed = _seed(args, cfg)
        clock = _make_clock(args.clock)
        if args.fixed_ms is not None:
            latency = LatencyModel.fixed(args.fixed_ms, seed=seed)
        else:
            try:
                lo, mode, hi = (float(x) for x in args.latency.split(","))
            except ValueError as exc:
                raise ValueError(f"--latency expects min,mode,max, got {args.latency!r}") from exc
            latency = LatencyModel(min_ms=lo, mode_ms=mode, max_ms=hi, seed=seed)
        simulator = VehicleSimulator(latency=latency, seed=seed, start_ms=clock.now_ms())

    with contextlib.ExitStack() as stack:
        with _stage("setup"):
            if args.clock == "real" and args.self_contained:
                server = stack.enter_context(VehicleTcpServer(simulator, clock=clock))
                link = TcpObdLink(*server.address, clock=clock)
            else:
                link = InProcessObdLink(simulator, clock)
        with _stage("bench"):
            report = run_obd_bench(
                link, clock, args.duration * 1000.0, window_ms=args.window_s * 1000.0
            )

    if args.out_csv:
        Path(args.out_csv).write_bytes(report.series_csv())
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.summary())
    return 1 if report.interrupted else 0


# -- verify / replay -------------------------------------------------------------


def _fetch_and_decrypt(args, cfg, stack) -> tuple[bytes, bytes, SessionManifest, dict]:
    """Download a trace and open its envelope: (blob, csv, manifest, metadata)."""
    out_dir = Path(getattr(args, "out", "fogtrace-out"))
    cloud = _cloud_client(args, cfg, stack, out_dir)
    if cloud is None:
        raise ValueError("no cloud store configured; pass --cloud-url or --self-contained")
    key = _resolve_key(args, cfg, out_dir, generate=False)
    if key is None:
        raise ValueError("no key available; pass --key-hex or --key-file")
    blob, metadata = cloud.get_trace(args.trace_ref)
    manifest = SessionManifest.from_dict(metadata["manifest"])
    csv_bytes = open_envelope(blob, manifest.to_json(), key)
    return blob, csv_bytes, manifest, metadata


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    checks: list[tuple[str, bool, str]] = []

    def check(name: str, ok: bool, detail: str = "") -> None:
        checks.append((name, ok, detail))

    blob = csv_bytes = manifest = None
    with contextlib.ExitStack() as stack:
        try:
            with _stage("download"):
                out_dir = Path(args.out)
                cloud = _cloud_client(args, cfg, stack, out_dir)
                if cloud is None:
                    raise ValueError("no cloud store configured")
                blob, metadata = cloud.get_trace(args.trace_ref)
            check("download", True, f"{len(blob)} bytes")
            check(
                "content-address",
                sha256_hex(blob) == args.trace_ref,
                "stored bytes hash to the requested reference",
            )
            with _stage("metadata"):
                manifest = SessionManifest.from_dict(metadata["manifest"])
            with _stage("decrypt"):
                key = _resolve_key(args, cfg, out_dir, generate=False)
                if key is None:
                    raise ValueError("no key available; pass --key-hex or --key-file")
            try:
                csv_bytes = open_envelope(blob, manifest.to_json(), key)
                check("decrypt-auth", True)
            except Exception as exc:
                check("decrypt-auth", False, str(exc))
        except StageError as exc:
            check(exc.stage_name, False, str(exc.cause))

        if csv_bytes is not None and manifest is not None:
            check(
                "csv-sha256",
                sha256_hex(csv_bytes) == manifest.csv_sha256,
                "plaintext hash matches manifest",
            )
            try:
                rows = csv_to_rows(csv_bytes)
                check("row-count", len(rows) == manifest.row_count, f"{len(rows)} rows")
                problems = validate_rows(rows)
                check("row-invariants", not problems, "; ".join(problems[:5]))
            except ValueError as exc:
                check("csv-parse", False, str(exc))

    all_ok = all(ok for _, ok, _ in checks)
    if args.json:
        print(
            json.dumps(
                {
                    "trace_ref": args.trace_ref,
                    "passed": all_ok,
                    "checks": [{"name": n, "ok": ok, "detail": d} for n, ok, d in checks],
                },
                indent=2,
            )
        )
    else:
        for name, ok, detail in checks:
            status = "PASS" if ok else "FAIL"
            print(f"{status} {name}" + (f" ({detail})" if detail else ""))
    return 0 if all_ok else 1


def cmd_replay(args) -> int:
    cfg = _load_config(args)
    if not args.csv_file and not args.trace_ref:
        print("fogtrace: replay: need --trace-ref or --csv-file", file=sys.stderr)
        return 2
    with contextlib.ExitStack() as stack:
        with _stage("load"):
            if args.csv_file:
                csv_bytes = Path(args.csv_file).read_bytes()
            else:
                _, csv_bytes, _, _ = _fetch_and_decrypt(args, cfg, stack)
        with _stage("parse"):
            rows = csv_to_rows(csv_bytes)

    channels = Counter(row.channel for row in rows)
    sources = Counter(row.source for row in rows)
    alerts = [row.value for row in rows if row.channel == "alert"]
    span_ms = rows[-1].timestamp_ms - rows[0].timestamp_ms if rows else 0
    if args.json:
        print(
            json.dumps(
                {
                    "rows": len(rows),
                    "span_s": span_ms / 1000.0,
                    "channels": dict(channels),
                    "sources": dict(sources),
                    "alerts": alerts,
                },
                indent=2,
            )
        )
    else:
        print(f"{len(rows)} rows spanning {span_ms / 1000.0:.1f}s")
        for channel, count in sorted(channels.items()):
            print(f"  {channel}: {count}")
        if alerts:
            print("alerts: " + ", ".join(alerts))
    return 0


def cmd_erase(args) -> int:
    with _stage("erase"):
        out_dir = Path(args.out)
        gateway = Gateway(
            outbox_dir=args.outbox_dir or out_dir / "outbox",
            trace_dir=args.trace_dir or out_dir / "traces",
        )
        erased = gateway.erase_data(args.scope)
    if args.json:
        print(json.dumps(erased))
    else:
        print(f"erased scope={args.scope}: {erased}")
    return 0


if __name__ == "__main__":
    entrypoint()
