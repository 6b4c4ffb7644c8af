import json
import os

import pytest

from critbrw import cli


def test_config_roundtrip_byte_identical():
    cfg = {"d": 5, "r": 3, "u_grid": [1, 2, 4], "samples": 1000,
           "offspring": "geometric",
           "green": {"L": 14, "start": [6, 0, 0, 0, 0]}}
    text = cli.dump_config(cfg)
    assert cli.parse_config(text) == cfg
    assert cli.dump_config(cli.parse_config(text)) == text


def test_config_hash_stability():
    cfg = {"a": 1, "b": [1, 2]}
    assert cli.config_hash(cfg) == cli.config_hash({"b": [1, 2], "a": 1})
    assert cli.config_hash(cfg) != cli.config_hash({"a": 2, "b": [1, 2]})


def test_unknown_scenario_and_bad_config(tmp_path):
    with pytest.raises(SystemExit):
        cli.run_scenario("no-such-thing", out_dir=str(tmp_path))
    with pytest.raises(SystemExit):
        cli.run_scenario("tail", {"samples": 0}, out_dir=str(tmp_path))


def test_claim_coverage_unique():
    seen = {}
    for name, sd in cli.SCENARIOS.items():
        for claim in sd.covers:
            assert claim not in seen, "claim %s covered twice" % claim
            seen[claim] = name
    # every scenario covers at least one claim and the spec scenario names exist
    for required in ["tail", "short-time", "low-dim", "inside-moments",
                     "outside-moments-d5", "outside-moments-d4", "localized-tree",
                     "martingale-check", "waves", "spine-check", "many-spines",
                     "hitting-scan", "potential", "oracle-compare"]:
        assert required in cli.SCENARIOS
        assert cli.SCENARIOS[required].covers


def test_scenario_outputs_and_reproducibility(tmp_path):
    cfg = {"d": 1, "r": 2, "u_grid": [1, 2, 4, 8, 16], "samples": 30_000,
           "kill_factor": 0, "budget": 10 ** 6}
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    m1 = cli.run_scenario("tail", cfg, out_dir=out1, seed=5)
    m2 = cli.run_scenario("tail", cfg, out_dir=out2, seed=5)
    assert m1["metrics"] == m2["metrics"]
    assert m1["config_hash"] == m2["config_hash"]
    for name in ("manifest_tail.json", "verdict_tail.json", "config_tail.txt"):
        assert os.path.exists(os.path.join(out1, name))
    cells1 = open(os.path.join(out1, "tail_cells_d1_r2.csv")).read()
    cells2 = open(os.path.join(out2, "tail_cells_d1_r2.csv")).read()
    assert cells1 == cells2


def test_emit_tables_deterministic(tmp_path):
    cfg = {"d": 1, "r": 2, "u_grid": [1, 2, 4, 8, 16], "samples": 20_000,
           "kill_factor": 0, "budget": 10 ** 6}
    out = str(tmp_path)
    m = cli.run_scenario("tail", cfg, out_dir=out, seed=1)
    p1 = cli.emit_tables(m, out)
    bytes1 = open(p1, "rb").read()
    p2 = cli.emit_tables(m, out)
    assert open(p2, "rb").read() == bytes1
    assert b"verdict" in bytes1


def test_cli_main_list_and_run(tmp_path, capsys):
    assert cli.main(["list"]) == 0
    out = capsys.readouterr().out
    assert "tail" in out and "spine-check" in out
    cfg_path = tmp_path / "cfg.txt"
    cfg_path.write_text("d = 1\nr = 2\nu_grid = [1, 2, 4, 8, 16]\n"
                        "samples = 20000\nkill_factor = 0\nbudget = 1000000\n")
    rc = cli.main(["tail", "--config", str(cfg_path), "--seed", "2",
                   "--out", str(tmp_path / "res")])
    assert rc == 0
    verdict = json.load(open(tmp_path / "res" / "verdict_tail.json"))
    assert verdict["scenario"] == "tail"


def test_manifest_records_inputs(tmp_path):
    m = cli.run_scenario("low-dim",
                         {"checks": [{"d": 1, "order": 2,
                                      "n_grid": [8, 16, 32], "samples": 5000}]},
                         out_dir=str(tmp_path), seed=4)
    assert m["seed"] == 4
    assert m["code_version"]
    assert "moment_rate_d1_k2" in m["verdicts"]


def test_run_record_schema(tmp_path):
    from critbrw import engine, model
    spec = engine.SimSpec(dim=1, offspring=model.binary(),
                          step=model.uniform_step(1), target_ball=2)
    oc = engine.run(spec, 3)
    rec = oc.to_record()
    assert rec["schema"] == "run-record/v1"
    assert set(rec) == {"schema", "status", "ell", "frozen", "confined",
                        "nodes", "max_generation"}
    json.dumps(rec)
