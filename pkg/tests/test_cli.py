import json

import pytest
from click.testing import CliRunner

from neurostream.cli import main
from neurostream.io import container_read


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def recording(workdir, runner):
    path = workdir / "synth.nsig"
    res = runner.invoke(main, ["synth", "--out", str(path), "--duration", "6", "--seed", "3"])
    assert res.exit_code == 0, res.output
    return path


@pytest.fixture(scope="module")
def trained(workdir, runner, recording):
    ckpt = workdir / "model.nsae"
    report = workdir / "report.csv"
    args = ["train", "--data", str(recording), "--epochs", "1", "--folds", "3", "--repeats", "3",
            "--batch-size", "16", "--seed", "1", "--report", str(report), "--out", str(ckpt)]
    res = runner.invoke(main, args)
    assert res.exit_code == 0, res.output
    return ckpt, report, res.stdout, args


def test_help_lists_commands(runner):
    res = runner.invoke(main, ["--help"])
    assert res.exit_code == 0
    for cmd in ("synth", "import", "train", "eval", "encode", "stream", "bench-jitter", "filter-response"):
        assert cmd in res.output


def test_subcommand_help_documents_flags(runner):
    res = runner.invoke(main, ["stream", "--help"])
    for flag in ("--source", "--checkpoint", "--rate", "--duration", "--record", "--jitter", "--seed"):
        assert flag in res.output


def test_unknown_flag_is_usage_error(runner, workdir):
    out = workdir / "never.nsig"
    res = runner.invoke(main, ["synth", "--out", str(out), "--bogus"])
    assert res.exit_code == 2
    assert not out.exists()


def test_epochs_zero(runner, recording, workdir):
    out = workdir / "never.nsae"
    res = runner.invoke(main, ["train", "--data", str(recording), "--epochs", "0", "--out", str(out)])
    assert res.exit_code == 2
    assert "epochs must be ≥ 1" in res.output
    assert not out.exists()


def test_folds_one(runner, recording, workdir):
    res = runner.invoke(main, ["train", "--data", str(recording), "--folds", "1", "--out", str(workdir / "x")])
    assert res.exit_code == 2


def test_synth_is_deterministic(runner, workdir, recording):
    again = workdir / "again.nsig"
    runner.invoke(main, ["synth", "--out", str(again), "--duration", "6", "--seed", "3"])
    assert again.read_bytes() == recording.read_bytes()
    c = container_read(recording)
    assert c.sampling_rate == 512.0 and len(c.frames) == 96


def test_train_report_rows(trained):
    _, report, stdout, _ = trained
    rows = report.read_text().splitlines()
    assert rows[0] == "subject,fold,repeat,mse"
    assert len(rows) == 1 + 9
    assert {tuple(r.split(",")[1:3]) for r in rows[1:]} == {(str(f), str(r)) for f in range(3) for r in range(3)}
    assert "# mean" in stdout


def test_train_same_seed_same_report(trained, runner, workdir):
    ckpt, report, stdout, args = trained
    args = list(args)
    args[args.index("--out") + 1] = str(workdir / "model2.nsae")
    args[args.index("--report") + 1] = str(workdir / "report2.csv")
    res = runner.invoke(main, args)
    assert res.exit_code == 0
    assert res.stdout == stdout
    assert (workdir / "report2.csv").read_text() == report.read_text()
    assert (workdir / "model2.nsae").read_bytes() == ckpt.read_bytes()


def test_eval(trained, runner, recording):
    res = runner.invoke(main, ["eval", "--data", str(recording), "--checkpoint", str(trained[0])])
    assert res.exit_code == 0, res.output
    out = json.loads(res.stdout)
    assert out["chunks"] > 0 and out["mse"] > 0


def test_encode(trained, runner, recording, workdir):
    out = workdir / "codes.nsig"
    res = runner.invoke(main, ["encode", "--data", str(recording), "--checkpoint", str(trained[0]), "--out", str(out)])
    assert res.exit_code == 0, res.output
    c = container_read(out)
    assert c.num_channels == 128 and len(c.frames) > 0


def test_corrupt_checkpoint_is_runtime_error(runner, recording, workdir):
    bad = workdir / "bad.nsae"
    bad.write_bytes(b"garbage")
    res = runner.invoke(main, ["eval", "--data", str(recording), "--checkpoint", str(bad)])
    assert res.exit_code == 1
    assert "error:" in res.output


def test_stream_missing_checkpoint(runner, recording, workdir):
    missing = workdir / "nope.nsae"
    res = runner.invoke(main, ["stream", "--source", str(recording), "--checkpoint", str(missing)])
    assert res.exit_code == 2
    assert "nope.nsae" in res.output


def test_stream_playback(trained, runner, recording, workdir):
    rec, jit = workdir / "enc.nsig", workdir / "jitter.csv"
    res = runner.invoke(main, ["stream", "--source", str(recording), "--checkpoint", str(trained[0]),
                               "--duration", "2", "--record", str(rec), "--jitter", str(jit)])
    assert res.exit_code == 0, res.output
    summary = json.loads(res.stdout)
    assert summary["frames"] == 32
    assert summary["codes"] == 31
    for key in ("mean_ms", "std_ms", "fraction_within_1ms"):
        assert key in summary
    assert len(jit.read_text().splitlines()) == 30
    assert (workdir / "jitter.hist.csv").exists()
    assert len(container_read(rec).frames) == 31


def test_import(runner, workdir):
    csv = workdir / "d.csv"
    csv.write_text("Fz,Cz,Pz\n" + "".join(f"{i},{-i},{i * 0.5}\n" for i in range(512)))
    out = workdir / "imp.nsig"
    res = runner.invoke(main, ["import", "--csv", str(csv), "--fs", "512", "--out", str(out)])
    assert res.exit_code == 0, res.output
    c = container_read(out)
    assert c.channel_names == ("Fz", "Cz", "Pz") and len(c.frames) == 16


def test_import_bad_cell(runner, workdir):
    csv = workdir / "bad.csv"
    csv.write_text("a,b\n1,2\n3,NaN\n")
    res = runner.invoke(main, ["import", "--csv", str(csv), "--fs", "512", "--out", str(workdir / "x.nsig")])
    assert res.exit_code == 1
    assert "line 3" in res.output


def parse_table(text):
    lines = text.strip().splitlines()
    assert lines[0] == "hz,db"
    return {float(f): float(d) for f, d in (l.split(",") for l in lines[1:])}


def test_filter_response_bandpass(runner):
    res = runner.invoke(main, ["filter-response", "--filter", "bandpass", "--points", "50", "--at", "0.5", "--at", "60"])
    assert res.exit_code == 0
    t = parse_table(res.stdout)
    assert t[0.5] == pytest.approx(-3.0, abs=0.5)
    assert t[60.0] == pytest.approx(-3.0, abs=0.5)
    assert t[0.0] == -300.0
    assert len(t) == 53


def test_filter_response_notch(runner, workdir):
    sos = workdir / "notch.sos"
    res = runner.invoke(main, ["filter-response", "--filter", "notch", "--at", "50", "--sos", str(sos)])
    t = parse_table(res.stdout)
    assert t[50.0] <= -60.0
    assert len(sos.read_text().splitlines()) == 1
