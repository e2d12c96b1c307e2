from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogtrace.gateway.gapfill import fill_gaps, fill_session_gaps
from fogtrace.gateway.records import TraceRow, scalar_of
from oracles import brute_force_gapfill


def bpm_row(t: int, value: float, interpolated: int = 0, source: str = "polar-1") -> TraceRow:
    return TraceRow(t, source, "bpm", f"{value:g}", "bpm", interpolated)


class TestSpecifiedCases:
    def test_single_missing_sample_interpolated(self):
        rows = [bpm_row(0, 70.0), bpm_row(4000, 74.0)]
        filled = fill_gaps(rows, "bpm", 2000.0)
        inserted = [r for r in filled if r.interpolated]
        assert len(inserted) == 1
        assert inserted[0].timestamp_ms == 2000
        assert scalar_of(inserted[0].value) == pytest.approx(72.0)
        assert inserted[0].unit == "bpm"
        assert inserted[0].source == "polar-1"

    def test_long_gap_left_open(self):
        rows = [bpm_row(0, 70.0), bpm_row(20_000, 74.0)]
        filled = fill_gaps(rows, "bpm", 2000.0)
        assert all(not r.interpolated for r in filled)

    def test_non_numeric_channel_untouched(self):
        rows = [
            TraceRow(0, "spire-1", "resp_state", "calm@0", ""),
            TraceRow(20_000, "spire-1", "resp_state", "tension@20000", ""),
        ]
        assert fill_gaps(rows, "resp_state", 5000.0) == rows

    def test_normal_cadence_not_filled(self):
        rows = [bpm_row(i * 2000, 70.0 + i) for i in range(10)]
        assert [r for r in fill_gaps(rows, "bpm", 2000.0) if r.interpolated] == []

    def test_two_missing_samples(self):
        rows = [bpm_row(0, 60.0), bpm_row(6000, 66.0)]
        inserted = [r for r in fill_gaps(rows, "bpm", 2000.0) if r.interpolated]
        assert [(r.timestamp_ms, scalar_of(r.value)) for r in inserted] == [
            (2000, pytest.approx(62.0)),
            (4000, pytest.approx(64.0)),
        ]

    def test_other_channels_pass_through(self):
        rows = [bpm_row(0, 70.0), TraceRow(100, "obd-1", "rpm", "900", "rpm"), bpm_row(4000, 74.0)]
        filled = fill_gaps(rows, "bpm", 2000.0)
        assert TraceRow(100, "obd-1", "rpm", "900", "rpm") in filled


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=1, max_value=8000),  # gap to previous sample
                st.floats(min_value=30.0, max_value=220.0, allow_nan=False),
            ),
            min_size=2,
            max_size=30,
        )
    )
    def test_matches_brute_force_oracle(self, deltas):
        t = 0
        samples = []
        for gap, value in deltas:
            t += gap
            samples.append((t, round(value, 3)))
        rows = [bpm_row(ts, v) for ts, v in samples]
        filled = fill_gaps(rows, "bpm", 2000.0)
        inserted = [(r.timestamp_ms, scalar_of(r.value)) for r in filled if r.interpolated]
        expected = brute_force_gapfill(samples, 2000.0)
        assert len(inserted) == len(expected)
        for (t_got, v_got), (t_want, v_want) in zip(inserted, expected):
            assert t_got == t_want
            assert v_got == pytest.approx(v_want, abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.integers(min_value=1, max_value=8000),
                st.floats(min_value=30.0, max_value=220.0, allow_nan=False),
            ),
            min_size=2,
            max_size=30,
        )
    )
    def test_inserted_values_bounded_by_neighbours(self, deltas):
        t = 0
        rows = []
        for gap, value in deltas:
            t += gap
            rows.append(bpm_row(t, round(value, 3)))
        filled = fill_gaps(rows, "bpm", 2000.0)
        originals = [(r.timestamp_ms, scalar_of(r.value)) for r in filled if not r.interpolated]
        for row in filled:
            if not row.interpolated:
                continue
            prev = max((ts, v) for ts, v in originals if ts < row.timestamp_ms)
            nxt = min((ts, v) for ts, v in originals if ts > row.timestamp_ms)
            lo, hi = sorted((prev[1], nxt[1]))
            assert lo - 1e-9 <= scalar_of(row.value) <= hi + 1e-9

    def test_output_sorted(self):
        rows = [bpm_row(4000, 74.0), bpm_row(0, 70.0)]
        filled = fill_gaps(rows, "bpm", 2000.0)
        stamps = [r.timestamp_ms for r in filled]
        assert stamps == sorted(stamps)


class TestSessionGapFill:
    def test_per_source_periods(self):
        rows = [
            bpm_row(0, 70.0, source="polar-1"),
            bpm_row(4000, 74.0, source="polar-1"),
            bpm_row(0, 70.0, source="miband-1"),
            bpm_row(4000, 74.0, source="miband-1"),
        ]

        def period_for(source, channel):
            return 2000.0 if source == "polar-1" and channel == "bpm" else None

        filled = fill_session_gaps(rows, period_for)
        inserted = [r for r in filled if r.interpolated]
        assert len(inserted) == 1
        assert inserted[0].source == "polar-1"

    def test_unknown_sources_untouched(self):
        rows = [bpm_row(0, 70.0), bpm_row(4000, 74.0)]
        assert [r for r in fill_session_gaps(rows, lambda s, c: None) if r.interpolated] == []
