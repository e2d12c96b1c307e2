from __future__ import annotations

import pytest

from fogtrace.gateway.records import (
    CSV_HEADER,
    Pairing,
    SessionManifest,
    TraceRow,
    csv_to_rows,
    device_ts_of,
    encode_value,
    fmt_scalar,
    rows_to_csv,
    scalar_of,
    sha256_hex,
    sort_rows,
    state_of,
    validate_rows,
)


class TestScalars:
    @pytest.mark.parametrize(
        "value,expected",
        [(60, "60"), (60.0, "60"), (72.5, "72.5"), (3.1415926535, "3.141593"), (0.0, "0"), (-1.25, "-1.25")],
    )
    def test_fmt_scalar(self, value, expected):
        assert fmt_scalar(value) == expected

    def test_fmt_rejects_bool(self):
        with pytest.raises(TypeError):
            fmt_scalar(True)

    def test_value_with_device_timestamp(self):
        value = encode_value(72.0, 1_700_000_000_123)
        assert value == "72@1700000000123"
        assert scalar_of(value) == 72.0
        assert device_ts_of(value) == 1_700_000_000_123

    def test_plain_value(self):
        assert scalar_of("55.5") == 55.5
        assert device_ts_of("55.5") is None

    def test_state_of(self):
        assert state_of("tension@123") == "tension"
        assert scalar_of("tension@123") is None


class TestTraceRow:
    def test_unknown_channel_rejected(self):
        with pytest.raises(ValueError):
            TraceRow(0, "x", "nope", "1", "")

    def test_bad_interpolated_flag(self):
        with pytest.raises(ValueError):
            TraceRow(0, "x", "bpm", "1", "", interpolated=2)


class TestCsv:
    def _rows(self):
        return [
            TraceRow(3, "obd-1", "rpm", "1724", "rpm"),
            TraceRow(1, "polar-1", "bpm", "72@1", "bpm"),
            TraceRow(2, "gps-1", "lat", "52.52", "deg"),
            TraceRow(2, "gps-1", "lon", "13.405", "deg"),
        ]

    def test_header_bit_exact(self):
        data = rows_to_csv([])
        assert data == b"timestamp_ms,source,channel,value,unit,interpolated\n"
        assert tuple("timestamp_ms,source,channel,value,unit,interpolated".split(",")) == CSV_HEADER

    def test_round_trip_identity(self):
        rows = sort_rows(self._rows())
        assert csv_to_rows(rows_to_csv(rows)) == rows

    def test_quoting_survives_round_trip(self):
        rows = [TraceRow(1, 'sr,c"x', "alert", 'va,l"ue', "")]
        assert csv_to_rows(rows_to_csv(rows)) == rows

    def test_lf_line_endings(self):
        data = rows_to_csv(sort_rows(self._rows()))
        assert b"\r" not in data

    def test_sort_key_is_timestamp_source_channel(self):
        rows = sort_rows(self._rows())
        assert [(r.timestamp_ms, r.source, r.channel) for r in rows] == [
            (1, "polar-1", "bpm"),
            (2, "gps-1", "lat"),
            (2, "gps-1", "lon"),
            (3, "obd-1", "rpm"),
        ]

    def test_sort_is_stable_for_equal_keys(self):
        a = TraceRow(5, "polar-1", "rr_ms", "800@1", "ms")
        b = TraceRow(5, "polar-1", "rr_ms", "820@1", "ms")
        assert sort_rows([a, b]) == [a, b]

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError):
            csv_to_rows(b"nope\n1,2,3,4,5,6\n")

    def test_empty_file_rejected(self):
        with pytest.raises(ValueError):
            csv_to_rows(b"")


class TestValidateRows:
    def test_clean_rows_pass(self):
        rows = sort_rows(
            [
                TraceRow(1, "a", "bpm", "70@1", "bpm"),
                TraceRow(2, "a", "bpm", "71@2", "bpm"),
            ]
        )
        assert validate_rows(rows) == []

    def test_decreasing_timestamp_flagged(self):
        rows = [TraceRow(2, "a", "bpm", "70", "bpm"), TraceRow(1, "a", "bpm", "71", "bpm")]
        assert any("decreases" in p for p in validate_rows(rows))

    def test_non_numeric_numeric_channel_flagged(self):
        rows = [TraceRow(1, "a", "bpm", "high", "bpm")]
        assert any("not numeric" in p for p in validate_rows(rows))


class TestManifest:
    def _manifest(self):
        return SessionManifest(
            session_id="sid",
            driver_id="drv",
            vehicle_id="veh",
            started_at=100,
            ended_at=200,
            devices=(Pairing("polar-1", "polar-h7", "gw-1", 99),),
            row_count=12,
            csv_sha256="ab" * 32,
        )

    def test_json_round_trip_byte_identical(self):
        manifest = self._manifest()
        encoded = manifest.to_json()
        again = SessionManifest.from_json(encoded)
        assert again == manifest
        assert again.to_json() == encoded

    def test_field_names_exact(self):
        import json

        data = json.loads(self._manifest().to_json())
        assert set(data) == {
            "session_id",
            "driver_id",
            "vehicle_id",
            "started_at",
            "ended_at",
            "devices",
            "row_count",
            "csv_sha256",
            "schema_version",
        }
        assert data["schema_version"] == "1"

    def test_sha256_helper(self):
        assert sha256_hex(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
