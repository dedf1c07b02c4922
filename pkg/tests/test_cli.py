import csv
import io
import os

import pytest

from singlehop.cli import run_cli, summarize
from singlehop.edra import Event, MaintenanceMsg
from singlehop.ring import PeerAddr
from singlehop import wire


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_model_sweep_reproduces_curve_grid(tmp_path):
    out = tmp_path / "model.csv"
    rc = run_cli(["model", "--n", "1e4..1e7", "--savg-min", "60,169,174,780",
                  "--f", "0.01", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out)
    ns = {float(r["n"]) for r in rows}
    assert min(ns) == 1e4 and max(ns) == pytest.approx(1e7)
    assert len(ns) == 13                     # four points per decade
    d1ht = [r for r in rows if r["model"] == "d1ht" and not r["variant"]]
    calot = [r for r in rows if r["model"] == "calot"
             and r["variant"] == "per_peer_heartbeat"]
    assert len(d1ht) == 13 * 4 and len(calot) == 13 * 4
    # the comparison protocol costs at least twice as much everywhere
    by_key = {(r["n"], r["s_avg"]): float(r["bandwidth_bps"]) for r in d1ht}
    for r in calot:
        assert float(r["bandwidth_bps"]) >= 2 * by_key[(r["n"], r["s_avg"])]


def test_model_quarantine_rows_and_summary(tmp_path):
    out = tmp_path / "q.csv"
    rc = run_cli(["model", "--n", "1e5,1e6,1e7", "--savg-min", "169",
                  "--quarantine-phi", "0.24,0.31", "--out", str(out)])
    assert rc == 0
    text = summarize(str(out))
    assert "quarantine gains" in text
    assert "0.24" in text and "0.31" in text


def test_sim_csv_and_determinism(tmp_path):
    args = ["sim", "--n", "64", "--savg-min", "30", "--duration", "120",
            "--seed", "5", "--lookup-rate", "0.2"]
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run_cli(args + ["--out", str(out1)]) == 0
    assert run_cli(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    rows = read_csv(out1)
    assert len(rows) == 1
    assert rows[0]["protocol"] == "d1ht"
    assert float(rows[0]["one_hop_fraction"]) > 0.9


def test_sim_multi_seed_summary(tmp_path):
    out = tmp_path / "s.csv"
    rc = run_cli(["sim", "--n", "48", "--savg-min", "30", "--duration", "90",
                  "--seed", "1,2,3", "--lookup-rate", "0.2",
                  "--out", str(out)])
    assert rc == 0
    rows = read_csv(out)
    assert len(rows) == 3
    assert {r["seed"] for r in rows} == {"1", "2", "3"}
    lines = summarize(str(out)).splitlines()
    assert any("±" in line for line in lines[1:])   # intervals in the data


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("duration=60\nseed=9\n")
    out = tmp_path / "c.csv"
    rc = run_cli(["sim", "--n", "48", "--savg-min", "30", "--duration", "999",
                  "--lookup-rate", "0.2", "--config", str(cfg),
                  "--out", str(out)])
    assert rc == 0
    row = read_csv(out)[0]
    assert row["duration"] == "60.0"
    assert row["seed"] == "9"


def test_config_file_bad_key_is_config_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_knob=1\n")
    rc = run_cli(["sim", "--n", "48", "--savg-min", "30",
                  "--config", str(cfg), "--out", "-"])
    assert rc == 2


def test_unknown_flag_exits_2():
    assert run_cli(["model", "--frobnicate"]) == 2


def test_unwritable_output_exits_2(tmp_path):
    rc = run_cli(["model", "--n", "1e4", "--savg-min", "60",
                  "--out", str(tmp_path / "nodir" / "x.csv")])
    assert rc == 2


def test_wire_decode_roundtrip(tmp_path, capsys):
    msg = MaintenanceMsg(2, (Event.join(PeerAddr("10.0.0.9", 4170)),), 77,
                         PeerAddr("10.0.0.1", 4170))
    payload = wire.encode_maintenance(msg, 3, 4170).payload
    hexfile = tmp_path / "dg.hex"
    hexfile.write_text(payload.hex())
    rc = run_cli(["wire", "--decode", str(hexfile)])
    assert rc == 0
    outp = capsys.readouterr().out
    assert "ttl = 2" in outp
    assert "10.0.0.9" in outp
    assert "accounted bytes = 44" in outp


def test_wire_decode_invalid_hex_exits_2(tmp_path):
    bad = tmp_path / "bad.hex"
    bad.write_text("zz-not-hex")
    assert run_cli(["wire", "--decode", str(bad)]) == 2


def test_wire_decode_truncated_exits_2(tmp_path):
    bad = tmp_path / "trunc.hex"
    bad.write_text("01002a")
    assert run_cli(["wire", "--decode", str(bad)]) == 2


def test_seed_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("D1HT_SEED", "17")
    out = tmp_path / "env.csv"
    rc = run_cli(["sim", "--n", "48", "--savg-min", "30", "--duration", "60",
                  "--lookup-rate", "0.2", "--out", str(out)])
    assert rc == 0
    assert read_csv(out)[0]["seed"] == "17"


def test_summarize_single_row_plain(tmp_path):
    out = tmp_path / "one.csv"
    run_cli(["sim", "--n", "48", "--savg-min", "30", "--duration", "60",
             "--seed", "4", "--lookup-rate", "0.2", "--out", str(out)])
    lines = summarize(str(out)).splitlines()
    assert all("±" not in line for line in lines[1:])   # no interval from one seed
