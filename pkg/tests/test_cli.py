import json

from cits_sim.cli import main
from cits_sim.fixtures import fixture_path

REF = str(fixture_path("reference.json"))
SC1 = str(fixture_path("scenario1.json"))
SC2 = str(fixture_path("scenario2.json"))


def test_validate_ok(capsys):
    assert main(["validate", "--topology", REF]) == 0
    assert capsys.readouterr().out == ""


def test_validate_reports_dangling_link(tmp_path, capsys):
    data = json.loads(fixture_path("reference.json").read_text())
    data["links"].append({"a": "CC-1", "b": "GHOST", "protocol": "InternetIpv6", "latency_ms": 30})
    p = tmp_path / "t.json"
    p.write_text(json.dumps(data))
    assert main(["validate", "--topology", str(p)]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and "GHOST" in lines[0]


def test_validate_unreadable(tmp_path):
    p = tmp_path / "t.json"
    p.write_text("{nope")
    assert main(["validate", "--topology", str(p)]) == 2
    assert main(["validate", "--topology", str(tmp_path / "missing.json")]) == 2


def test_run_exit_codes(tmp_path):
    assert main(["run", "--topology", REF, "--quiet"]) == 0
    assert main(["run", "--topology", SC1, "--scenario", str(fixture_path("attack_s1.json")), "--quiet"]) == 2
    assert main(["run", "--topology", str(tmp_path / "none.json"), "--quiet"]) == 1


def test_run_outputs_are_reproducible(tmp_path):
    args = ["run", "--topology", SC2, "--scenario", str(fixture_path("attack_s2.json")), "--quiet"]
    for name in ("a", "b"):
        main(args + ["--seed", "5", "--trace", str(tmp_path / f"{name}.jsonl"),
                     "--report", str(tmp_path / f"{name}.json")])
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    first = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
    assert list(first) == ["time", "node", "direction", "msg", "summary", "alarm"]


def test_run_several_seeds_in_parallel(tmp_path):
    trace = tmp_path / "t.jsonl"
    rc = main(["run", "--topology", REF, "--seed", "1", "--seed", "2", "--jobs", "2", "--quiet",
               "--trace", str(trace), "--horizon-ms", "10000"])
    assert rc == 0
    assert (tmp_path / "t.seed1.jsonl").exists() and (tmp_path / "t.seed2.jsonl").exists()


def test_attack_paths_output(capsys):
    assert main(["attack-paths", "--topology", SC2, "--attacker", "ATK-1", "--goal", "signal-control"]) == 0
    assert capsys.readouterr().out == "CVE-2019-5432 → CVE-2021-22118 → CVE-2022-43870\n"
    assert main(["attack-paths", "--topology", SC2, "--attacker", "ATK-1", "--goal", "signal-control",
                 "--depth", "1"]) == 0
    assert capsys.readouterr().out == ""
    assert main(["attack-paths", "--topology", SC2, "--attacker", "ATK-1", "--goal", "bogus"]) == 1
