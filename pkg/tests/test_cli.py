import json

import pytest

from filippov.cli import run


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_classify_csv(capsys):
    assert run(["classify", "--scenario", "z1", "--surface", "0", "--samples", "64"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("param,x,y")
    assert len(lines) == 65 and all(l.endswith(",Sliding") for l in lines[1:])


def test_density_solve(capsys):
    assert run(["density-solve", "--stripes", '{"mode": "torus", "b": [1, 2, 4]}']) == 0
    doc = _json(capsys)
    assert doc["schema_version"] == 1
    assert doc["result"]["alpha"] == pytest.approx([12 / 7, 6 / 7, 3 / 7], rel=1e-14)


def test_no_command_is_usage_error(capsys):
    assert run([]) == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv, flag", [
    (["integrate", "--scenario", "z1", "--point", "0,0.5", "--rtol", "1e-20"], "--rtol"),
    (["satnz", "--scenario", "z1", "--nx", "0"], "--nx"),
    (["integrate", "--scenario", "nope", "--point", "0,0"], "--scenario"),
    (["classify", "--scenario", "z1", "--surface", "4"], "--surface"),
    (["flowset", "--scenario", "z1", "--boxes", "[[1, 0, 0, 1]]"], "--boxes"),
])
def test_usage_errors_name_the_flag(capsys, argv, flag):
    assert run(argv) == 2
    assert flag in capsys.readouterr().err


def test_computational_error_gives_error_json(capsys):
    assert run(["integrate", "--scenario", "z1", "--point", "0.3,0", "--T", "-1", "--policy", "deterministic"]) == 1
    doc = _json(capsys)
    assert doc["error"]["type"] == "DeterministicBranchError"


def test_svg_outputs(tmp_path, capsys):
    svg = tmp_path / "p.svg"
    assert run(["integrate", "--scenario", "foldfold_center", "--point", "0,0.25", "--T", "3", "--svg", str(svg)]) == 0
    assert svg.read_text().startswith("<svg") and "<polyline" in svg.read_text()
    heat = tmp_path / "h.svg"
    assert run(["satnz", "--scenario", "ex42", "--nx", "4", "--ny", "4", "--svg", str(heat)]) == 0
    assert heat.read_text().count("<rect") == 17


def test_catalog(capsys):
    assert run(["catalog"]) == 0
    names = [e["name"] for e in _json(capsys)["result"]["entries"]]
    assert "ex43" in names and "striped_klein" in names
    assert run(["catalog", "--show", "z1"]) == 0
    assert "piece" in _json(capsys)["result"]["source"]


def test_scenario_file_and_replay(tmp_path, capsys):
    from filippov import scenarios
    f = tmp_path / "m.scn"
    f.write_text(scenarios.source("foldfold_center"))
    out = tmp_path / "a.json"
    assert run(["return-map", "--scenario", str(f), "--offsets", "0.1", "--out", str(out)]) == 0
    f.unlink()
    # the replay uses the scenario text stored in the config
    out2 = tmp_path / "b.json"
    assert run(["return-map", "--config", str(out), "--out", str(out2)]) == 0
    strip = lambda p: [l for l in p.read_text().splitlines() if '"generated_at"' not in l]
    assert strip(out) == strip(out2)


def test_config_of_wrong_command(tmp_path, capsys):
    out = tmp_path / "a.json"
    assert run(["catalog", "--out", str(out)]) == 0
    assert run(["density-solve", "--config", str(out)]) == 2
