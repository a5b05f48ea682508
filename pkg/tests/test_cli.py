import json

import pytest

from vmghe import cli, scenario as sc


@pytest.mark.parametrize("name,verdict,value", [("mphe_add", "accept", 1234 + 4321), ("mkhe_mul", "accept", None),
                                                ("mghe_mix", "accept", None)])
def test_honest_bundled_scenarios(name, verdict, value):
    res = sc.run_scenario(sc.load_scenario(name))
    rep = res.report
    assert rep["verdict"] == verdict and rep["correct"]
    assert rep["distributed_matches_ideal"] is True
    assert not rep["noise"]["exhausted"]
    if value is not None:
        assert rep["result"] == value


@pytest.mark.parametrize("name,reasons", [("tamper_slot", {"replica-mismatch", "challenge-mismatch"}),
                                          ("wrong_circuit", {"tag-mismatch"}),
                                          ("stale_label", {"challenge-mismatch", "replica-mismatch",
                                                           "tag-mismatch"})])
def test_tamper_bundled_scenarios(name, reasons):
    rep = sc.run_scenario(sc.load_scenario(name)).report
    assert rep["verdict"] == "reject" and rep["reason"] in reasons and rep["noise"] is None


def test_bundled_names():
    assert {"mphe_add", "mkhe_mul", "mghe_mix", "tamper_slot", "wrong_circuit", "stale_label",
            "guess_slots"} <= set(sc.bundled_scenarios())


def test_scenario_text_roundtrip():
    scn = sc.load_scenario("mghe_mix")
    assert sc.parse_scenario(scn.to_text()) == scn
    assert sc.Scenario.from_dict(json.loads(json.dumps(scn.to_dict()))) == scn


@pytest.mark.parametrize("text", [
    "[scenario]\n[groups]\nA = a\n[program]\nexpr = x - y\n[inputs]\nx = 1 @ A\ny = 2 @ A\n",
    "[scenario]\n[groups]\nA = a\n[program]\nexpr = x + y\n[inputs]\nx = 1 @ A\n",
    "[scenario]\n[groups]\nA = a\n[program]\nexpr = x\n[inputs]\nx = 1 @ B\n",
    "[scenario]\n[groups]\nA = a\n[program]\nexpr = x\n[inputs]\nx = 1\n",
    "[scenario]\n[groups]\nA = a\n[program]\nexpr = x\n[inputs]\nx = 1 @ A\n[tamper]\nkind = bribe\n",
    "[groups]\nA = a\n",
])
def test_bad_scenarios(text):
    with pytest.raises(ValueError):
        sc.parse_scenario(text)


def test_random_scenario_shapes():
    for seed in range(20):
        scn = sc.random_scenario(seed)
        prog = scn.parsed()
        assert prog.depth() <= 2 and prog.mul_count() <= 4
        assert len(scn.config.groups) <= 3 and all(len(r) <= 3 for _, r in scn.config.groups)
        assert len(sc.random_scenario(seed, shape="mphe").config.groups) == 1
        assert all(len(r) == 1 for _, r in sc.random_scenario(seed, shape="mkhe").config.groups)
    assert sc.random_scenario(3) == sc.random_scenario(3)


def test_wilson_interval():
    lo, hi = sc.wilson_interval(0, 100)
    assert lo == 0 and 0.05 < hi < 0.07
    lo, hi = sc.wilson_interval(50, 100)
    assert lo == pytest.approx(1 - hi)
    with pytest.raises(ValueError):
        sc.wilson_interval(0, 0)


def test_stats_minimum_trials():
    with pytest.raises(ValueError):
        sc.run_stats(sc.load_scenario("wrong_circuit"), 29)


def test_stats_no_tamper_control():
    rep = sc.run_stats(sc.load_scenario("mphe_add").replace(preset="TEST-S"), 30)
    assert rep["rejections"] == 0 and rep["errors"] == 0 and rep["consistent"]


# -- command line ------------------------------------------------------------------

def test_cli_run_writes_report_and_transcript(tmp_path, capsys):
    out, tr = tmp_path / "r.json", tmp_path / "t.txt"
    assert cli.main(["run", "mphe_add", "--out", str(out), "--transcript", str(tr)]) == 0
    assert "accept value=5555" in capsys.readouterr().out
    rep = sc.load_report(out.read_text())
    assert rep["verdict"] == "accept" and rep["transcript_digest"]
    assert sc.dump_report(rep) == out.read_text()
    assert cli.main(["replay", str(tr)]) == 0


def test_cli_replay_detects_edits(tmp_path):
    tr = tmp_path / "t.txt"
    cli.main(["run", "mkhe_mul", "--transcript", str(tr), "--out", str(tmp_path / "r.json")])
    lines = tr.read_text().splitlines()
    last = lines[-1].split(" ")
    last[3] = ("0" if last[3][0] != "0" else "1") + last[3][1:]
    lines[-1] = " ".join(last)
    tr.write_text("\n".join(lines) + "\n")
    assert cli.main(["replay", str(tr)]) == 1


def test_cli_reject_is_exit_zero(capsys):
    assert cli.main(["run", "wrong_circuit"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "reject"


def test_cli_overrides(capsys):
    assert cli.main(["run", "mphe_add", "--seed", "5", "--mode", "crs_free", "--lambda", "4"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["seed"] == 5 and rep["mode"] == "crs_free" and rep["lambda"] == 4


def test_cli_usage_errors(capsys):
    assert cli.main(["stats", "wrong_circuit", "--trials", "10"]) == 2
    assert cli.main(["run", "no_such_scenario"]) == 2
    assert cli.main(["run", "mphe_add", "--lambda", "7"]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "mphe_add", "--mode", "trusted"])
    assert exc.value.code == 2


def test_cli_protocol_error_exit(monkeypatch):
    def boom(scn):
        raise sc.ProtocolError("simulated failure")

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert cli.main(["run", "mphe_add"]) == 1


def test_cli_stats(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert cli.main(["stats", "wrong_circuit", "--trials", "30", "--out", str(out)]) == 0
    rep = sc.load_report(out.read_text())
    assert rep["rejections"] == 30 and rep["detection_rate"] == 1.0 and rep["consistent"]


def test_cli_bench(capsys):
    assert cli.main(["bench", "--preset", "TEST-S", "--repeats", "1", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert [r["op"] for r in rep["rows"]] == list(sc.BENCH_OPS)
    assert rep["total_ms"] < 5000


def test_cli_list(capsys):
    assert cli.main(["list"]) == 0
    assert "guess_slots" in capsys.readouterr().out


def test_report_format_is_checked():
    with pytest.raises(ValueError):
        sc.load_report('{"format": "other/9"}')


def test_noise_telemetry_counts_constants():
    scn = sc.parse_scenario("[scenario]\npreset = TEST-M\n[groups]\nA = a\n[program]\nexpr = x * x + 500\n"
                            "[inputs]\nx = 9 @ A\n")
    noise = sc.run_scenario(scn).report["noise"]
    assert noise["noise_bits"] < noise["delta_half_bits"] - 20
