import random
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skytrace.adsb import (
    CSV_COLUMNS,
    AdsbRecord,
    SynthConfig,
    group_into_trajectories,
    parse_csv,
    synth_generate,
    write_csv,
    write_rejects,
)
from skytrace.errors import ConfigError, SchemaError

HEADER = ",".join(CSV_COLUMNS)
TABLE1_ROW = "1478874138,aaa83f,33.79832,-84.40912,3275.0,221.5576,348.4813,-0.32512,EJA786,1478872800"


def write(tmp_path, *lines, name="in.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def rec(ts, icao="abc123", lat=33.0, **kw):
    base = dict(
        timestamp=ts, icao24=icao, lat=lat, lon=-84.0, altitude=1000.0, velocity=200.0,
        heading=90.0, vertical_rate=0.0, callsign="TST1", hour=ts - ts % 3600,
    )
    base.update(kw)
    return AdsbRecord(**base)


def test_parse_table1_row(tmp_path):
    result = parse_csv(write(tmp_path, HEADER, TABLE1_ROW))
    assert result.rejected == []
    (r,) = result.records
    assert r.timestamp == 1478874138
    assert r.icao24 == "aaa83f"
    assert r.lat == 33.79832
    assert r.velocity == 221.5576
    assert r.heading == 348.4813
    assert r.vertical_rate == -0.32512
    assert r.callsign == "EJA786"
    assert r.hour == 1478872800


def test_parse_header_only(tmp_path):
    result = parse_csv(write(tmp_path, HEADER))
    assert result.records == [] and result.rejected == []


def test_parse_rejects_out_of_range_latitude(tmp_path):
    bad = TABLE1_ROW.replace("33.79832", "95.0")
    result = parse_csv(write(tmp_path, HEADER, TABLE1_ROW, bad))
    assert len(result.records) == 1
    assert result.rejected[0][0] == 3
    assert "range violation" in result.rejected[0][1] and "lat" in result.rejected[0][1]


@pytest.mark.parametrize(
    "mutation, fragment",
    [
        (lambda f: f.__setitem__(1, "zz83f1"), "icao24"),
        (lambda f: f.__setitem__(6, "360.0"), "heading"),
        (lambda f: f.__setitem__(5, "-3"), "velocity"),
        (lambda f: f.__setitem__(9, "1478869200"), "hour"),
        (lambda f: f.__setitem__(2, "north"), "lat"),
        (lambda f: f.__setitem__(4, ""), "baroaltitude"),
        (lambda f: f.__setitem__(3, "nan"), "lon"),
    ],
)
def test_parse_rejection_reasons(tmp_path, mutation, fragment):
    fields = TABLE1_ROW.split(",")
    mutation(fields)
    result = parse_csv(write(tmp_path, HEADER, ",".join(fields)))
    assert result.records == []
    assert fragment in result.rejected[0][1]


def test_parse_short_row_is_rejected(tmp_path):
    result = parse_csv(write(tmp_path, HEADER, "1478874138,aaa83f"))
    assert result.rejected and "fields" in result.rejected[0][1]


def test_parse_missing_column_and_file(tmp_path):
    header = HEADER.replace(",vertrate", "")
    with pytest.raises(SchemaError, match="vertrate"):
        parse_csv(write(tmp_path, header))
    with pytest.raises(OSError):
        parse_csv(tmp_path / "nope.csv")


def test_uppercase_icao_and_padded_callsign_are_normalised(tmp_path):
    row = TABLE1_ROW.replace("aaa83f", "AAA83F").replace("EJA786", "EJA786  ")
    (r,) = parse_csv(write(tmp_path, HEADER, row)).records
    assert r.icao24 == "aaa83f" and r.callsign == "EJA786"


def test_write_rejects_format(tmp_path):
    p = tmp_path / "rej.txt"
    write_rejects([(3, "range violation: x"), (7, "bad")], p)
    assert p.read_text() == "3\trange violation: x\n7\tbad\n"


def test_roundtrip_is_bit_exact(tmp_path):
    trajs = synth_generate(SynthConfig(count=3, duration=300, seed=5))
    records = [r for t in trajs for r in t.records]
    write_csv(records, tmp_path / "a.csv")
    first = parse_csv(tmp_path / "a.csv")
    assert first.rejected == []
    assert first.records == records
    write_csv(first.records, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# --- grouping -----------------------------------------------------------------


def test_group_two_aircraft():
    records = [rec(t, "aaaaaa") for t in (0, 10, 20)] + [rec(t, "bbbbbb") for t in (5, 15)]
    g = group_into_trajectories(records)
    assert [t.icao24 for t in g.trajectories] == ["aaaaaa", "bbbbbb"]
    assert g.discarded == []


def test_group_splits_on_long_gap():
    records = [rec(t) for t in (0, 10, 20, 7220, 7230)]
    g = group_into_trajectories(records)
    assert [len(t) for t in g.trajectories] == [3, 2]


def test_group_discards_singletons():
    g = group_into_trajectories([rec(0), rec(10), rec(5000)])
    assert len(g.trajectories) == 1
    assert g.discarded == [rec(5000)]


def sort_then_scan(records, gap):
    ordered = sorted(records, key=lambda r: (r.icao24, r.timestamp))
    segments, cur = [], []
    for r in ordered:
        if cur and (r.icao24 != cur[-1].icao24 or r.timestamp - cur[-1].timestamp > gap):
            segments.append(cur)
            cur = []
        cur.append(r)
    if cur:
        segments.append(cur)
    return [s for s in segments if len(s) >= 2]


def test_group_matches_sort_then_scan_oracle():
    rnd = random.Random(11)
    records = []
    for icao in ("a00001", "b00002", "c00003"):
        t = 0
        for _ in range(1000 // 3 + 1):
            t += rnd.choice([5, 10, 10, 10, 2000])
            records.append(rec(t, icao, lat=rnd.uniform(30, 35)))
    records = records[:1000]
    rnd.shuffle(records)
    got = group_into_trajectories(records).trajectories
    expected = sort_then_scan(records, 900)
    key = lambda seg: [(r.icao24, r.timestamp, r.lat) for r in seg]  # noqa: E731
    assert sorted(key(t.records) for t in got) == sorted(key(s) for s in expected)


@given(st.lists(st.tuples(st.sampled_from(["aaaaaa", "bbbbbb", "cccccc"]), st.integers(0, 20000)), max_size=60))
@settings(max_examples=60)
def test_group_covers_every_record_once(pairs):
    records = [rec(t, icao) for icao, t in pairs]
    g = group_into_trajectories(records)
    out = [r for t in g.trajectories for r in t.records] + g.discarded
    assert sorted(out, key=repr) == sorted(records, key=repr)
    for t in g.trajectories:
        t.check()
        assert all(a.timestamp <= b.timestamp for a, b in zip(t.records, t.records[1:]))


# --- synthetic generator ------------------------------------------------------


def test_synth_clean_regular_and_smooth():
    cfg = SynthConfig(
        count=4, duration=600, period=5, gap_probability=0.0, duplicate_probability=0.0,
        noise_lat=0, noise_lon=0, noise_altitude=0, noise_velocity=0, noise_heading=0, noise_vertical_rate=0,
    )
    for t in synth_generate(cfg):
        ts = t.timestamps
        assert np.all(np.diff(ts) == 5)
        lat = np.array([r.lat for r in t.records])
        alt = np.array([r.altitude for r in t.records])
        # second differences are tiny compared to first differences on a smooth path
        assert np.max(np.abs(np.diff(lat, 2))) < 0.1 * np.max(np.abs(np.diff(lat))) + 1e-9
        assert np.max(np.abs(np.diff(alt, 2))) < 50.0
        for r in t.records:
            assert r.validate() is None


def test_synth_deterministic():
    cfg = SynthConfig(count=5, duration=400, seed=7)
    assert synth_generate(cfg) == synth_generate(replace(cfg))
    assert synth_generate(cfg) != synth_generate(replace(cfg, seed=8))


def test_synth_gap_fraction_concentrates():
    cfg = SynthConfig(count=10, duration=4995, period=5, gap_probability=0.1, duplicate_probability=0.0, seed=3)
    total = 10 * (4995 // 5 + 1)
    assert total == 10_000
    kept = sum(len(t) for t in synth_generate(cfg))
    assert 0.08 <= 1 - kept / total <= 0.12


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        synth_generate(SynthConfig(gap_probability=0.6))
    with pytest.raises(ConfigError):
        synth_generate(SynthConfig(count=0))
