"""The command-line front end: spec parsing, output files, determinism,
and the exit-code contract (0 pass, 1 failed check, 2 config error)."""

import pytest

from sparsesecagg import cli
from sparsesecagg.experiments import Check, ExperimentResult


def write_spec(tmp_path, body):
    path = tmp_path / "spec.toml"
    path.write_text(body)
    return path


TINY_RUN = """
kind = "compression"
n = 50
d = 5000
alpha = 0.1
theta = 0.0
gamma = 0.0
c = 256
clip_bound = 1.0
rounds = 2
"""


def test_theory_prints_guarantee_table(capsys):
    rc = cli.main(
        ["theory", "--N", "100", "--alpha", "0.5", "--theta", "0.1", "--gamma", "0.2"]
    )
    out = capsys.readouterr().out
    assert rc == 0
    assert "T          28.329793" in out
    assert "p'" in out and "p~" in out and "bound(J)" in out
    assert "mu=1.0 L=10.0 E=5 J=500" in out  # defaults resolved and shown


def test_theory_alpha_cap_row(capsys):
    rc = cli.main(["theory", "--N", "2", "--alpha", "1.0", "--theta", "0.0", "--gamma", "0.0"])
    assert rc == 0
    assert "p          1.000000" in capsys.readouterr().out


def test_theory_rejects_bad_theta(capsys):
    rc = cli.main(["theory", "--N", "10", "--alpha", "0.5", "--theta", "0.6", "--gamma", "0.0"])
    err = capsys.readouterr().err
    assert rc == 2
    assert "theta" in err and "[0, 0.5)" in err


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["theory", "--N", "10"])
    assert exc.value.code == 2


def test_run_writes_outputs_and_passes(tmp_path, capsys):
    spec = write_spec(tmp_path, TINY_RUN)
    out_dir = tmp_path / "results"
    rc = cli.main(["run", "--spec", str(spec), "--seed", "3", "--out", str(out_dir)])
    captured = capsys.readouterr()
    assert rc == 0
    assert "result: PASS" in captured.out
    csv_path = out_dir / "compression_3.csv"
    summary = out_dir / "summary.txt"
    assert csv_path.exists() and summary.exists()
    text = summary.read_text()
    assert "seed = 3" in text  # resolved config embeds the override
    assert 'kind = "compression"' in text  # verbatim spec is quoted
    assert str(spec) in text
    header = csv_path.read_text().splitlines()[0]
    assert header.split(",")[0] == "round"


def test_run_is_byte_identical(tmp_path):
    spec = write_spec(tmp_path, TINY_RUN)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--spec", str(spec), "--seed", "7", "--out", str(out_a)]) == 0
    assert cli.main(["run", "--spec", str(spec), "--seed", "7", "--out", str(out_b)]) == 0
    assert (out_a / "compression_7.csv").read_bytes() == (out_b / "compression_7.csv").read_bytes()
    # summaries differ only in the out path they echo
    sa = (out_a / "summary.txt").read_text().replace(str(out_a), "OUT")
    sb = (out_b / "summary.txt").read_text().replace(str(out_b), "OUT")
    assert sa == sb


def test_different_seeds_differ(tmp_path):
    spec = write_spec(tmp_path, TINY_RUN)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cli.main(["run", "--spec", str(spec), "--seed", "1", "--out", str(out_a)])
    cli.main(["run", "--spec", str(spec), "--seed", "2", "--out", str(out_b)])
    assert (out_a / "compression_1.csv").read_bytes() != (out_b / "compression_2.csv").read_bytes()


def test_run_rejects_bad_specs(tmp_path, capsys):
    cases = [
        ("missing.toml", None, "no such file"),
        ("bad.toml", "kind = [unclosed", "not valid TOML"),
        ("nokind.toml", 'n = 5\n', "kind"),
        ("unknown.toml", 'kind = "compression"\nnn = 5\n', "nn"),
        ("badkind.toml", 'kind = "nosuch"\n', "kind"),
        ("badtheta.toml", TINY_RUN.replace("theta = 0.0", "theta = 0.6"), "theta"),
        ("boolseed.toml", TINY_RUN + "seed = true\n", "seed"),
    ]
    for name, body, needle in cases:
        path = tmp_path / name
        if body is not None:
            path.write_text(body)
        rc = cli.main(["run", "--spec", str(path), "--out", str(tmp_path / "o")])
        err = capsys.readouterr().err
        assert rc == 2, name
        assert "config error" in err and needle in err, name


def test_failed_check_exits_1(tmp_path, monkeypatch, capsys):
    def fake_run(spec):
        return ExperimentResult(
            name=spec.kind,
            seed=spec.seed,
            elapsed=0.0,
            checks=[Check("made-up invariant", False, "forced for the exit-code test")],
            columns=("x",),
            rows=[(1,)],
            summary=[],
        )

    monkeypatch.setattr(cli, "run_experiment", fake_run)
    spec = write_spec(tmp_path, TINY_RUN)
    rc = cli.main(["run", "--spec", str(spec), "--out", str(tmp_path / "o")])
    out = capsys.readouterr().out
    assert rc == 1
    assert "[FAIL] made-up invariant" in out
    assert "result: FAIL" in out
    # outputs are still written for post-mortem
    assert (tmp_path / "o" / "summary.txt").exists()


def test_spec_file_seed_used_when_not_overridden(tmp_path):
    spec = write_spec(tmp_path, TINY_RUN + "seed = 9\n")
    out = tmp_path / "o"
    assert cli.main(["run", "--spec", str(spec), "--out", str(out)]) == 0
    assert (out / "compression_9.csv").exists()
