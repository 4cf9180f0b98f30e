import random

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from drcap.errors import (
    AlignmentError,
    ConfigError,
    DuplicateTimestampError,
    EmptyDatasetError,
    GapError,
    RowError,
    SchemaError,
)
from drcap.ingest import (
    SiteMetadata,
    clamp_power,
    fill_gaps,
    find_gaps,
    load_csv,
    write_csv,
)

from conftest import HEADER, make_rows


def minutes(*offsets, base="2024-03-06T14:00:00+08:00"):
    t0 = pd.Timestamp(base)
    return [(t0 + pd.Timedelta(minutes=m)).isoformat() for m in offsets]


def test_load_ten_rows(write_csv_file, meta):
    ds = load_csv(write_csv_file(make_rows(minutes(*range(10)))), meta)
    assert len(ds) == 10
    assert ds.dt == 60
    assert str(ds.timestamps.tz) == "Asia/Singapore"
    rec = next(ds.records)
    assert rec.total_power == 1000.0 and rec.occupancy == 40


def test_missing_column_names_it(write_csv_file, meta):
    header = HEADER.replace("occupancy_pct", "occ")
    path = write_csv_file(make_rows(minutes(0, 1)), header=header)
    with pytest.raises(SchemaError, match="occupancy_pct") as info:
        load_csv(path, meta)
    assert info.value.column == "occupancy_pct"


def test_column_map(write_csv_file, meta):
    header = HEADER.replace("occupancy_pct", "occ")
    path = write_csv_file(make_rows(minutes(0, 1)), header=header)
    ds = load_csv(path, meta, column_map={"occupancy_pct": "occ"})
    assert ds.frame["occupancy_pct"].tolist() == [40, 40]
    with pytest.raises(SchemaError, match="'occ'"):
        load_csv(write_csv_file(make_rows(minutes(0)), name="b.csv"), meta,
                 column_map={"occupancy_pct": "occ"})


def test_gap_multiple_of_interval_accepted(write_csv_file, meta):
    ds = load_csv(write_csv_file(make_rows(minutes(0, 2))), meta)
    assert len(ds) == 2


def test_misaligned_gap_rejected(write_csv_file, meta):
    rows = make_rows(minutes(0, 1.5))
    with pytest.raises(AlignmentError):
        load_csv(write_csv_file(rows), meta)


def test_unparseable_cell_reports_line(write_csv_file, meta):
    rows = make_rows(minutes(0, 1, 2))
    rows[1] = rows[1].replace(",40,", ",abc,")
    with pytest.raises(RowError) as info:
        load_csv(write_csv_file(rows), meta)
    assert info.value.line == 3


def test_duplicate_timestamp(write_csv_file, meta):
    with pytest.raises(DuplicateTimestampError):
        load_csv(write_csv_file(make_rows(minutes(0, 1, 1))), meta)


def test_naive_timestamp_rejected(write_csv_file, meta):
    rows = make_rows(["2024-03-06T14:00:00"])
    with pytest.raises(RowError, match="offset"):
        load_csv(write_csv_file(rows), meta)


def test_out_of_range_occupancy(write_csv_file, meta):
    rows = make_rows(minutes(0))
    rows[0] = rows[0].replace(",40,", ",140,")
    with pytest.raises(RowError, match="occupancy"):
        load_csv(write_csv_file(rows), meta)


def test_end_use_closure(write_csv_file, meta):
    rows = [f"{minutes(0)[0]},1000,900,200,300,40,300,28,24,500"]
    with pytest.raises(RowError, match="sum"):
        load_csv(write_csv_file(rows), meta)
    # within the 5% default tolerance
    rows = [f"{minutes(0)[0]},1000,510,200,300,40,300,28,24,500"]
    assert len(load_csv(write_csv_file(rows, name="ok.csv"), meta)) == 1


def test_end_use_columns_optional(write_csv_file, meta):
    header = "timestamp,total_power_w,occupancy_pct,solar_wm2,ext_temp_c,indoor_temp_c,indoor_lux"
    rows = [f"{t},1000,40,300,28,24,500" for t in minutes(0, 1)]
    ds = load_csv(write_csv_file(rows, header=header), meta)
    assert not ds.has_column("hvac_power_w")


def test_empty_file(write_csv_file, meta):
    with pytest.raises(EmptyDatasetError):
        load_csv(write_csv_file([]), meta)


def test_timezone_normalised(write_csv_file, meta):
    rows = make_rows(["2024-03-06T06:00:00Z", "2024-03-06T14:01:00+08:00"])
    ds = load_csv(write_csv_file(rows), meta)
    assert [t.hour for t in ds.timestamps] == [14, 14]


def test_permutation_insensitive(write_csv_file, meta):
    rows = make_rows(minutes(*range(20)))
    a = load_csv(write_csv_file(rows), meta)
    shuffled = rows[:]
    random.Random(3).shuffle(shuffled)
    b = load_csv(write_csv_file(shuffled, name="shuf.csv"), meta)
    assert a.equals(b)


def test_csv_round_trip(write_csv_file, meta, tmp_path):
    rows = [f"{t},{1234.56789 + i / 7:.6g},,,,{i * 3.3 % 100:.6g},{i * 17.1:.6g},27.5,24,500"
            for i, t in enumerate(minutes(*range(30)))]
    a = load_csv(write_csv_file(rows), meta)
    out = tmp_path / "rt.csv"
    write_csv(a, out)
    b = load_csv(out, meta)
    assert a.equals(b)
    out2 = tmp_path / "rt2.csv"
    write_csv(b, out2)
    assert out.read_bytes() == out2.read_bytes()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=30))
def test_round_trip_property(tmp_path_factory, values):
    meta = SiteMetadata("s", 100.0, 60.0, "UTC")
    tmp = tmp_path_factory.mktemp("rt")
    rows = [f"{t},{v:.6g},,,,10,0,25,24,300" for t, v in zip(minutes(*range(len(values))), values)]
    src = tmp / "a.csv"
    src.write_text(HEADER + "\n" + "\n".join(rows) + "\n")
    a = load_csv(src, meta)
    write_csv(a, tmp / "b.csv")
    assert load_csv(tmp / "b.csv", meta).equals(a)


def test_metadata_json_round_trip(tmp_path):
    m = SiteMetadata.from_dict({
        "site_name": "ZEB", "floor_area_m2": 154.5, "sampling_interval_s": 60,
        "timezone": "Asia/Singapore", "holidays": ["2024-05-01"], "z_l_w": 0, "z_h_w": 10000,
    })
    m.to_json(tmp_path / "m.json")
    assert SiteMetadata.from_json(tmp_path / "m.json") == m
    with pytest.raises(SchemaError):
        SiteMetadata.from_dict({"site_name": "x"})
    with pytest.raises(ConfigError):
        SiteMetadata("x", 0.0, 60.0)


# clamp_power


def _ds(write_csv_file, meta, powers):
    rows = [f"{t},{p},,,,40,300,28,24,500" for t, p in zip(minutes(*range(len(powers))), powers)]
    return load_csv(write_csv_file(rows), meta)


def test_clamp_default_bounds_identity(write_csv_file, meta):
    ds = _ds(write_csv_file, meta, [0, 500, 12000])
    out = clamp_power(ds)
    assert out.clamped == 0
    assert np.array_equal(out.power, ds.power)


def test_clamp_upper(write_csv_file):
    meta = SiteMetadata("s", 100.0, 60.0, "UTC", z_l_w=0, z_h_w=10_000)
    ds = _ds(write_csv_file, meta, [500, 12_000, 9_000])
    out = clamp_power(ds)
    assert out.power.tolist() == [500, 10_000, 9_000]
    assert out.clamped == 1


def test_clamp_idempotent(write_csv_file):
    meta = SiteMetadata("s", 100.0, 60.0, "UTC", z_l_w=100, z_h_w=1000)
    once = clamp_power(_ds(write_csv_file, meta, [50, 500, 1500, 99.5]))
    twice = clamp_power(once)
    assert once.equals(twice) and twice.clamped == 0


def test_clamp_bad_bounds(write_csv_file):
    meta = SiteMetadata("s", 100.0, 60.0, "UTC", z_l_w=10, z_h_w=5)
    with pytest.raises(ConfigError):
        clamp_power(_ds(write_csv_file, meta, [1, 2]))


# fill_gaps


def test_no_gaps_identity(write_csv_file, meta):
    ds = _ds(write_csv_file, meta, [1, 2, 3])
    for policy in ("drop-window", "hold-last", "fail"):
        assert fill_gaps(ds, policy).equals(ds)


def test_hold_last_fills_two(write_csv_file, meta):
    rows = make_rows(minutes(0, 1, 4, 5))
    ds = load_csv(write_csv_file(rows), meta)
    out = fill_gaps(ds, "hold-last")
    assert len(out) == 6
    filled = out.frame["filled"].tolist()
    assert filled == [False, False, True, True, False, False]
    assert out.frame["total_power_w"].tolist()[1:4] == [1001.0, 1001.0, 1001.0]


def test_hold_last_gap_too_long(write_csv_file, meta):
    ds = load_csv(write_csv_file(make_rows(minutes(0, 11))), meta)
    with pytest.raises(GapError) as info:
        fill_gaps(ds, "hold-last", max_gap=5)
    assert info.value.span == 10
    assert info.value.start == pd.Timestamp(minutes(1)[0])


def test_fail_policy(write_csv_file, meta):
    ds = load_csv(write_csv_file(make_rows(minutes(0, 3))), meta)
    with pytest.raises(GapError):
        fill_gaps(ds, "fail")
    with pytest.raises(ConfigError):
        fill_gaps(ds, "interpolate")


def test_drop_window_records_gaps(write_csv_file, meta):
    ds = load_csv(write_csv_file(make_rows(minutes(0, 1, 4))), meta)
    out = fill_gaps(ds, "drop-window")
    assert len(out) == 3
    assert out.gaps == tuple(find_gaps(ds))
    assert out.gaps[0][1] == 2
    assert out.contiguous_runs().tolist() == [0, 0, 1]
