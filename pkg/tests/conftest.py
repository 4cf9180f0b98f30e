import textwrap

import pytest

from drcap.ingest import SiteMetadata

HEADER = ("timestamp,total_power_w,hvac_power_w,light_power_w,plug_power_w,"
          "occupancy_pct,solar_wm2,ext_temp_c,indoor_temp_c,indoor_lux")


@pytest.fixture
def meta():
    return SiteMetadata("test-site", 154.5, 60.0, "Asia/Singapore")


def make_rows(times, power=1000.0):
    rows = []
    for i, t in enumerate(times):
        p = power + i
        rows.append(f"{t},{p},{p * 0.5},{p * 0.2},{p * 0.3},40,300,28,24,500")
    return rows


@pytest.fixture
def write_csv_file(tmp_path):
    def _write(rows, header=HEADER, name="data.csv"):
        path = tmp_path / name
        path.write_text(header + "\n" + "\n".join(rows) + "\n")
        return path

    return _write


def dedent(s):
    return textwrap.dedent(s).lstrip()
