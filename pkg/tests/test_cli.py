import io
import json

import pytest

from cayleyqms import cli
from cayleyqms.cli import Record, format_number, main, parse_json_report, render_csv, render_json, run_scenario
from cayleyqms.models import random_classical_data
from cayleyqms.reconstruction import to_json

ISING = {"model": "ising", "k": 2, "n": 1, "beta": 0.5, "J": 1.0, "Jp": -0.5}
RANDOM = {"model": "random", "k": 2, "d": 2, "q": 2, "n": 1, "seed": 4}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(path, **kw):
    buf = io.StringIO()
    code = run_scenario(path, stream=buf, **kw)
    return code, buf.getvalue()


def test_number_format():
    assert format_number(0.0) == "0"
    assert format_number(0.1) == "0.10000000000000001"
    assert format_number(1.5e-16) == "0.00000000000000015"
    assert format_number(float("nan")) == '"nan"'
    assert format_number(float("inf")) == '"inf"'


def test_record_round_trip():
    recs = [Record("markov", "markov_level_0", "Markov identity", 1.7e-16, 1e-12),
            Record("gibbs", "row_sums", "row sums of weights", 0.1, 1e-12)]
    text = render_json(recs)
    assert len(text.strip().split("\n")) == 2
    back = parse_json_report(text)
    assert [r.passed for r in back] == [True, False]
    assert render_json(back) == text
    rows = render_csv(recs).strip().split("\n")
    assert rows[0] == ",".join(cli.FIELDS)
    assert len(rows) == 3


@pytest.mark.parametrize("cfg", [ISING, RANDOM])
def test_all_suites_pass(tmp_path, cfg):
    path = _write(tmp_path, {**cfg, "suites": list(cli.SUITES)})
    code, text = _run(path)
    assert code == 0
    recs = [json.loads(line) for line in text.strip().split("\n")]
    assert {r["suite"] for r in recs} == set(cli.SUITES)
    assert all(set(r) == set(cli.FIELDS) and r["pass"] for r in recs)


def test_ising_selected_suites(tmp_path):
    path = _write(tmp_path, {**ISING, "n": 2, "suites": ["markov", "gibbs", "hamiltonian"]})
    code, text = _run(path)
    assert code == 0
    recs = parse_json_report(text)
    assert any(r.check == "classical_gibbs" for r in recs)


def test_reports_are_reproducible(tmp_path):
    path = _write(tmp_path, {**RANDOM, "suites": ["markov", "gibbs"]})
    assert _run(path) == _run(path)


def test_defect_fails(tmp_path):
    cfg = {**RANDOM, "suites": ["gibbs"],
           "defects": [{"kind": "scale_weight", "site": "", "row": 0, "factor": 1.1}]}
    code, text = _run(_write(tmp_path, cfg))
    assert code == 1
    bad = [r for r in parse_json_report(text) if not r.passed]
    assert bad and any(r.check == "row_sums" and r.residual == pytest.approx(0.1) for r in bad)


@pytest.mark.parametrize("cfg", [
    {"model": "nope"},
    {"model": "ising", "k": 2, "n": 1, "beta": 0.5, "J": 1.0},
    {**RANDOM, "suites": ["unknown"]},
    {**RANDOM, "tolerances": {"bogus": 1.0}},
    {**RANDOM, "n": "two"},
    {"model": "reconstruction"},
    {**RANDOM, "suites": ["gibbs"], "defects": [{"kind": "scale_weight", "site": "1", "row": 0, "factor": 1.1}]},
    {**RANDOM, "suites": ["reconstruct"], "defects": [{"kind": "scale_weight", "site": "", "row": 5, "factor": 1.1}]},
])
def test_config_errors(tmp_path, cfg):
    assert _run(_write(tmp_path, cfg))[0] == 2


def test_unreadable_config(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert _run(str(path))[0] == 2
    assert _run(str(tmp_path / "missing.json"))[0] == 2


def test_resource_guard(tmp_path):
    path = _write(tmp_path, {**RANDOM, "suites": ["markov"]})
    assert _run(path, max_dim=4)[0] == 3


def test_empty_suites(tmp_path):
    path = _write(tmp_path, RANDOM)
    assert _run(path) == (0, "")
    code, text = _run(path, fmt="csv")
    assert code == 0 and text.strip() == ",".join(cli.FIELDS)


def test_output_path_and_format(tmp_path):
    out = tmp_path / "report.csv"
    path = _write(tmp_path, {**RANDOM, "suites": ["canonical"], "output": {"path": str(out), "format": "csv"}})
    code, text = _run(path)
    assert code == 0 and text == ""
    rows = out.read_text().strip().split("\n")
    assert rows[0] == ",".join(cli.FIELDS) and len(rows) > 1
    other = tmp_path / "other.json"
    assert main(["run", path, "--out", str(other), "--format", "json"]) == 0
    assert all(json.loads(line)["suite"] == "canonical" for line in other.read_text().strip().split("\n"))


def test_reconstruction_data_file(tmp_path):
    data, fs = random_classical_data(2, 2, 2, 2, 2)
    (tmp_path / "data.json").write_text(to_json(data, fs))
    path = _write(tmp_path, {"model": "reconstruction", "data_file": "data.json", "n": 1,
                             "suites": ["reconstruct", "markov"]})
    code, text = _run(path)
    assert code == 0
    assert {r.suite for r in parse_json_report(text)} == {"reconstruct", "markov"}
