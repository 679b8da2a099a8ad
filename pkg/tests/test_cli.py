"""Command line: exit codes, emitted formats, reports."""
import json

import pytest

from pie2d import cli, examples
from pie2d.sdp import read_sdpa

import test_lpi as lpi_tests


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_convert_heat_dump(capsys):
    code, out, _ = run(capsys, "convert", str(examples.path("heat")))
    assert code == 0
    assert "[xy <- xy] tags=(1, 1)" in out
    assert "x*y - x*ν - y*θ + θ*ν" in out


def test_convert_bundled_name_and_json(capsys, tmp_path):
    dest = tmp_path / "wave.json"
    code, _, _ = run(capsys, "convert", "wave", "--emit", "json", "--out", str(dest))
    assert code == 0
    doc = json.loads(dest.read_text())
    assert doc["rect"] == ["0", "1", "0", "1"]
    k = doc["kernels"][0]
    assert set(k) == {"block", "rows", "cols", "terms"}
    assert set(k["terms"][0]) >= {"exps", "num", "den"} and len(k["terms"][0]["exps"]) == 4


def test_convert_missing_file(capsys):
    code, _, err = run(capsys, "convert", "no/such/file.pde")
    assert code == 1 and "no such PDE file" in err


def test_convert_template_needs_value(capsys, tmp_path):
    f = tmp_path / "t.pde"
    f.write_text(examples.text("heat_reaction"))
    code, _, err = run(capsys, "convert", str(f))
    assert code == 1 and "R" in err
    code, _, _ = run(capsys, "convert", str(f), "-p", "R=3")
    assert code == 0


def test_bad_parameter_syntax(capsys):
    code, _, err = run(capsys, "convert", "heat_reaction", "-p", "R")
    assert code == 1 and "NAME=VALUE" in err


def test_stability_over_capacity_is_not_certified(capsys, tmp_path):
    rep = tmp_path / "r.json"
    code, out, _ = run(capsys, "stability", "heat_r25", "-d", "3", "--report", str(rep))
    assert code == 2
    assert out.startswith("not certified at degree 3")
    doc = json.loads(rep.read_text())
    for k in ("verdict", "eps", "del", "zeta", "decay_bound", "degree", "solver", "probes"):
        assert k in doc
    assert "LpiCapacityError" in doc["failures"][0]


@pytest.fixture
def reaction_file(monkeypatch):
    """Route the loader to the small reaction system u_t = -u."""
    monkeypatch.setattr(cli, "load_pair", lambda cfg, extra=None: lpi_tests.reaction(-1))
    return "heat"


def test_stability_certified_exit_and_report(capsys, tmp_path, reaction_file):
    rep = tmp_path / "r.json"
    code, out, _ = run(capsys, "stability", reaction_file, "-d", "0", "--report", str(rep))
    assert code == 0 and out.startswith("certified")
    doc = json.loads(rep.read_text())
    assert doc["verdict"] == "certified" and doc["zeta"] > 0
    assert set(doc["solver"]) >= {"iters", "gap", "residuals"}


def test_report_is_deterministic(capsys, tmp_path, reaction_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "stability", reaction_file, "-d", "0", "--report", str(a))
    run(capsys, "stability", reaction_file, "-d", "0", "--report", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_emit_sdpa(capsys, tmp_path, reaction_file):
    dest = tmp_path / "lpi.dat-s"
    code, _, _ = run(capsys, "stability", reaction_file, "-d", "0", "--emit", "sdpa", str(dest))
    assert code == 0
    p = read_sdpa(dest)
    assert p.sizes[:2] == [9, 9]


def test_bisect_command(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "load_pair",
                        lambda cfg, extra=None: lpi_tests.reaction(extra[cfg.bisect[0]]))
    rep = tmp_path / "b.json"
    code, out, _ = run(capsys, "bisect", "heat_reaction", "R", "-2", "1", "--iters", "3",
                       "-d", "0", "--report", str(rep))
    assert code == 0
    doc = json.loads(rep.read_text())
    assert len(doc["probes"]) == 5 and doc["threshold"] <= 0
    assert "largest certified value" in out


def test_stability_bisect_flag_routes_to_bisection(capsys, monkeypatch):
    monkeypatch.setattr(cli, "load_pair", lambda cfg, extra=None: lpi_tests.reaction(1))
    code, out, _ = run(capsys, "stability", "heat_reaction", "-d", "0",
                       "--bisect", "R", "0", "1", "2")
    assert code == 2 and "nothing certified" in out


def test_selftest_passes(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0
    assert "5/5 checks passed" in out


def test_selftest_perturbed_kernel_is_named(capsys):
    code, out, _ = run(capsys, "selftest", "--perturb")
    assert code == 1
    assert "T identities  FAIL" in out
