import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from tvgossip import __version__
from tvgossip.cli import HEADERS, format_csv, main, subseed

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def configs(tmp_path):
    dst = tmp_path / "configs"
    shutil.copytree(CONFIGS, dst)
    return dst


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_consensus_run_writes_trace_and_manifest(configs, tmp_path):
    out = tmp_path / "out"
    assert main(["--config", str(configs / "consensus_cycle16.json"), "--out", str(out)]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == HEADERS["trace"]
    assert len(lines) == 1 + 301
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == __version__
    for key in ("lambda_max", "lambda_min_plus", "chi", "rho", "gamma", "beta", "eta", "theta", "M", "B"):
        assert key in manifest["derived"]


def test_lowerbound_n4_manifest(configs, tmp_path):
    out = tmp_path / "lb"
    assert main(["--config", str(configs / "lowerbound_n4.json"), "--out", str(out)]) == 0
    seq = json.loads((out / "sequence" / "manifest.json").read_text())
    assert seq["t"] == 4 and seq["period"] == 8
    changed = [s["changed"] for s in seq["steps"][1:]]
    assert all(len(c["removed"]) == 2 and len(c["added"]) == 2 for c in changed)
    assert (out / "flow.csv").read_text().startswith("m,l_m,bound,slack\n")


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_bundled_configs_rerun_identically(configs, tmp_path, name):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--config", str(configs / name), "--out", str(a)]) == 0
    assert main(["--config", str(configs / name), "--out", str(b)]) == 0
    ta, tb = tree(a), tree(b)
    assert ta.keys() == tb.keys() and any(k.endswith(".csv") for k in ta)
    assert ta == tb


def test_seed_flag_changes_output(configs, tmp_path):
    cfg = str(configs / "consensus_cycle16.json")
    main(["--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "b" / "trace.csv").read_bytes()


@pytest.mark.parametrize(
    "doc",
    [
        {"kind": "nope", "params": {}},
        {"kind": "consensus", "params": {"family": "families/complete8.json"}},
        {"kind": "consensus", "params": {"family": "families/complete8.json", "N": -1}},
        {"kind": "lowerbound", "params": {"n": 4, "extra": 1}},
        {"kind": "lowerbound", "seed": -3, "params": {"n": 4}},
        {"kind": "consensus", "params": {"family": "families/missing.json", "N": 3}},
    ],
)
def test_schema_errors_exit_1_without_output(configs, tmp_path, doc):
    out = tmp_path / "out"
    cfg = write_config(configs / "bad.json", doc)
    assert main(["--config", str(cfg), "--out", str(out)]) == 1
    assert not out.exists()


def test_unparseable_and_missing_config(configs, tmp_path):
    bad = configs / "broken.json"
    bad.write_text("{not json")
    assert main(["--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["--config", str(configs / "absent.json"), "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize(
    "params",
    [
        {"n": 4, "mu": 1.0, "L": 10.0},
        {"n": 4, "m_max": 31},
    ],
)
def test_precondition_failures_exit_2(configs, tmp_path, params, capsys):
    out = tmp_path / "out"
    cfg = write_config(configs / "pre.json", {"kind": "lowerbound", "params": params})
    assert main(["--config", str(cfg), "--out", str(out)]) == 2
    assert "precondition" in capsys.readouterr().err
    assert not out.exists()


def test_decopt_mu_above_L_exit_2(configs, tmp_path):
    cfg = write_config(configs / "d.json", {
        "kind": "decopt",
        "params": {"family": "families/complete8.json", "d": 2, "mu": 5.0, "L": 1.0, "epsilon": 1e-3},
    })
    assert main(["--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_unwritable_output_exit_3(configs, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["--config", str(configs / "family_ring8.json"), "--out", str(blocker / "sub")]) == 3


def test_sweep_merges_by_seed(configs, tmp_path):
    out = tmp_path / "sw"
    cfg = str(configs / "consensus_static.json")
    assert main(["--config", cfg, "--out", str(out), "--seed", "10", "--sweep", "3", "--workers", "2"]) == 0
    merged = (out / "trace.csv").read_text().splitlines()
    assert merged[0] == "seed," + HEADERS["trace"]
    seeds = [int(line.split(",")[0]) for line in merged[1:]]
    assert seeds == sorted(seeds) and set(seeds) == {10, 11, 12}
    assert json.loads((out / "sweep.json").read_text())["seeds"] == [10, 11, 12]
    single = tmp_path / "single"
    main(["--config", cfg, "--out", str(single), "--seed", "11"])
    assert (out / "seed-11" / "trace.csv").read_bytes() == (single / "trace.csv").read_bytes()


def test_empty_trace_is_header_only():
    assert format_csv("a,b", []) == "a,b\n"


def test_float_format_round_trips():
    vals = np.random.default_rng(0).standard_normal(50) * 10.0 ** np.arange(-25, 25)
    text = format_csv("x", [(v,) for v in vals])
    np.testing.assert_array_equal([float(s) for s in text.splitlines()[1:]], vals)
    assert text.endswith("\n")


def test_large_trace_writes_fast(tmp_path):
    rows = [(k, k, 1.0 / (k + 1), 2.0 / (k + 3), 3.0 / (k + 7)) for k in range(10_000)]
    start = time.perf_counter()
    (tmp_path / "t.csv").write_text(format_csv(HEADERS["trace"], rows), encoding="utf-8")
    assert time.perf_counter() - start < 1.0


def test_subseed_labels_independent():
    assert subseed(5, "chain") == subseed(5, "chain")
    assert len({subseed(5, "chain"), subseed(5, "levels"), subseed(6, "chain")}) == 3
    assert 0 <= subseed(2**64 - 1, "x") < 2**64


def test_console_entry_point(configs, tmp_path):
    out = tmp_path / "cli"
    res = subprocess.run(
        [sys.executable, "-m", "tvgossip.cli", "--config", str(configs / "family_ring8.json"), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert res.returncode == 0, res.stderr
    assert (out / "mixing.csv").exists()
