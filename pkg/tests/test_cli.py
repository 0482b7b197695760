import json

import pytest

from rieszlab.cli import DEFAULTS, build_parser, dump_report, main, resolve_config, run

SMALL = {
    "lattice": {"samples": 500, "dim": 4},
    "truncate-homology": {"samples": 80, "bodies": 2},
    "lift-demo": {"samples": 2, "circle_vertices": 12},
    "retraction": {"samples": 120, "trials": 300, "grid_spacing": 0.1},
    "kinoshita": {"samples": 60, "trajectories": 50, "time_samples": 10, "seeds": 1},
}


def write_config(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return p


def strip_clock(text):
    data = json.loads(text)
    data.pop("wall_clock_seconds")
    return data


def test_config_precedence(tmp_path):
    cfg_file = write_config(tmp_path, {"samples": 123, "dim": 5})
    args = build_parser().parse_args(["lattice", "--config", str(cfg_file), "--samples", "77"])
    cfg = resolve_config("lattice", args)
    assert cfg["samples"] == 77  # flag beats file
    assert cfg["dim"] == 5  # file beats default
    assert cfg["seed"] == DEFAULTS["lattice"]["seed"]


def test_config_rejects_unknown_and_bad(tmp_path):
    parser = build_parser()
    with pytest.raises(SystemExit):
        resolve_config("lattice", parser.parse_args(["lattice", "--config", str(write_config(tmp_path, {"bogus": 1}))]))
    with pytest.raises(SystemExit):
        resolve_config("lift-demo", parser.parse_args(["lift-demo", "--tolerance", "-1"]))
    with pytest.raises(SystemExit):
        resolve_config("lattice", parser.parse_args(["lattice", "--tolerance", "0.1"]))


@pytest.mark.parametrize("command", sorted(SMALL))
def test_subcommand_report(command, tmp_path, capsys):
    cfg_file = write_config(tmp_path, SMALL[command])
    out = tmp_path / "out"
    code = main([command, "--config", str(cfg_file), "--out", str(out)])
    data = json.loads((out / "report.json").read_text())
    assert set(data) >= {"schema_version", "command", "config", "checks", "passed", "wall_clock_seconds"}
    assert data["command"] == command
    assert code == (0 if data["passed"] else 1)
    printed = capsys.readouterr().out
    assert printed.count("PASS") + printed.count("FAIL") == len(data["checks"])
    assert data["passed"], data["checks"]


@pytest.mark.parametrize("command", ["lattice", "retraction"])
def test_reports_reproducible(command, tmp_path):
    cfg = {**DEFAULTS[command], **SMALL[command]}
    run(command, cfg, tmp_path / "a")
    run(command, cfg, tmp_path / "b")
    a = strip_clock((tmp_path / "a" / "report.json").read_text())
    b = strip_clock((tmp_path / "b" / "report.json").read_text())
    assert a == b


def test_failing_check_sets_exit_code(tmp_path, monkeypatch):
    import rieszlab.cli as cli

    def broken(cfg, out, plot):
        rep = cli.Report("lattice", cfg)
        rep.check("always_false", False, passed=True)
        return rep

    monkeypatch.setitem(cli.COMMANDS, "lattice", broken)
    assert main(["lattice", "--out", str(tmp_path)]) == 1


def test_dump_report_sorted():
    text = dump_report({"b": 1, "a": [1.5]})
    assert text.index('"a"') < text.index('"b"')
