import json

import numpy as np
import pytest

from isam_mtl.cli import run
from isam_mtl.data import SynthSpec, synthesize, write_container

SMALL = {"conv_channels": [6, 6], "n_neurons": 6, "latent_dim": 4, "decoder_channels": 6, "batch_size": 16,
         "epochs": 2, "shots": [1, 2], "repeats": 2, "dense_steps": 10}


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "spec.json").write_text(json.dumps({"n_samples": 64, "trials_per_class": 6}))
    (tmp_path / "cfg.json").write_text(json.dumps(SMALL))
    assert run(["synth", "--spec", "spec.json", "--seed", "1", "--out", "d.eegb"]) == 0
    return tmp_path


def test_smoke_path(workdir):
    assert run(["train", "--data", "d.eegb", "--config", "cfg.json", "--seed", "1", "--out", "m.ckpt"]) == 0
    assert (workdir / "m.ckpt").exists() and (workdir / "m.ckpt.json").exists()
    assert (workdir / "m.ckpt.history.csv").read_text().count("\n") == 3
    assert run(["fit", "--data", "d.eegb", "--checkpoint", "m.ckpt", "--config", "cfg.json",
                "--out-dir", "amm"]) == 0
    assert sorted(p.name for p in (workdir / "amm").iterdir()) == [
        f"amm_s{s}.{ext}" for s in range(3) for ext in ("csv", "json")]
    assert run(["eval", "--data", "d.eegb", "--checkpoint", "m.ckpt", "--config", "cfg.json",
                "--amm-dir", "amm", "--out", "r.json"]) == 0
    refit = ["eval", "--data", "d.eegb", "--checkpoint", "m.ckpt", "--config", "cfg.json", "--out", "r2.json"]
    assert run(refit) == 0
    assert (workdir / "r.json").read_bytes() == (workdir / "r2.json").read_bytes()
    report = json.loads((workdir / "r.json").read_text())
    assert set(report["per_subject"]) == {"0", "1", "2"}
    assert (workdir / "r.csv").read_text().startswith("subject,n_trials,accuracy\n")

    assert run(["fewshot", "--data", "d.eegb", "--checkpoint", "m.ckpt", "--config", "cfg.json",
                "--shots", "1,full", "--out", "fs.csv"]) == 0
    lines = (workdir / "fs.csv").read_text().splitlines()
    assert lines[0] == "shots,mean,std,repeats" and lines[2].startswith("full,")

    assert run(["export-latents", "--data", "d.eegb", "--checkpoint", "m.ckpt", "--config", "cfg.json",
                "--out", "lat.csv"]) == 0
    lat = (workdir / "lat.csv").read_text().splitlines()
    assert len(lat) == 1 + 3 * 4 * 6 and lat[0].split(",")[3:] == [f"mu{i}" for i in range(4)]

    assert run(["amm-reverse", "--amm", "amm/amm_s0.csv", "--label", "2", "--checkpoint", "m.ckpt",
                "--out", "rev.csv"]) == 0
    raster = np.loadtxt(workdir / "rev.csv", delimiter=",", skiprows=1)
    assert raster.shape == (6, 16)


def test_ablate(workdir):
    assert run(["ablate", "--data", "d.eegb", "--config", "cfg.json", "--variants", "a,c",
                "--out", "abl.csv", "--json", "abl.json"]) == 0
    rows = (workdir / "abl.csv").read_text().splitlines()
    assert rows[0] == "variant,description,mean,std" and [r[0] for r in rows[1:]] == ["a", "c"]


def test_import_command(tmp_path):
    for name in ("s0_c0_0.csv", "s0_c1_0.csv"):
        (tmp_path / name).write_text("1,2,3\n4,5,6\n")
    assert run(["import", "--dir", str(tmp_path), "--out", str(tmp_path / "x.eegb")]) == 0
    (tmp_path / "s0_c1_1.csv").write_text("1,2\n4,5\n")
    assert run(["import", "--dir", str(tmp_path), "--out", str(tmp_path / "y.eegb")]) == 2
    assert not (tmp_path / "y.eegb").exists()


def test_eval_without_checkpoint_names_file(workdir, capsys):
    code = run(["eval", "--data", "d.eegb", "--checkpoint", "absent.ckpt", "--out", "r.json"])
    assert code == 2
    assert "absent.ckpt" in capsys.readouterr().err
    assert not (workdir / "r.json").exists()


def test_usage_errors_exit_1(workdir, capsys):
    assert run(["bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run([]) == 1
    assert run(["train", "--data", "d.eegb"]) == 1  # missing --out
    assert run(["train", "--data", "d.eegb", "--out", "m.ckpt", "--epochs", "two"]) == 1
    assert run(["ablate", "--data", "d.eegb", "--variants", "a,z", "--out", "x.csv"]) == 1
    assert not (workdir / "m.ckpt").exists() and not (workdir / "x.csv").exists()


def test_bad_config_key_exit_2(workdir):
    (workdir / "bad.json").write_text(json.dumps({"epochz": 3}))
    assert run(["train", "--data", "d.eegb", "--config", "bad.json", "--out", "m.ckpt"]) == 2


def test_non_finite_data_exit_3(tmp_path):
    ts = synthesize(SynthSpec(n_samples=64, trials_per_class=2, subject_gains=[1.0], subject_phases=[0.0]), 0)
    ts.data[0, 0, 5] = np.nan
    write_container(ts, tmp_path / "nan.eegb")
    (tmp_path / "cfg.json").write_text(json.dumps({**SMALL, "epochs": 1}))
    code = run(["train", "--data", str(tmp_path / "nan.eegb"), "--config", str(tmp_path / "cfg.json"),
                "--out", str(tmp_path / "m.ckpt")])
    assert code == 3
    assert not (tmp_path / "m.ckpt").exists()


@pytest.mark.parametrize("command", ["synth", "import", "train", "fit", "eval", "fewshot", "ablate",
                                     "export-latents", "amm-reverse"])
def test_help_documents_flags(command, capsys):
    assert run([command, "--help"]) == 0
    text = capsys.readouterr().out
    assert "--" in text and "usage:" in text


def test_same_seed_identical_outputs(workdir):
    outputs = []
    for tag in ("a", "b"):
        assert run(["train", "--data", "d.eegb", "--config", "cfg.json", "--seed", "1",
                    "--out", f"m_{tag}.ckpt", "--history", f"h_{tag}.csv"]) == 0
        assert run(["eval", "--data", "d.eegb", "--checkpoint", f"m_{tag}.ckpt", "--config", "cfg.json",
                    "--out", f"r_{tag}.json"]) == 0
        assert run(["fewshot", "--data", "d.eegb", "--checkpoint", f"m_{tag}.ckpt", "--config", "cfg.json",
                    "--seed", "1", "--out", f"f_{tag}.csv"]) == 0
        outputs.append([(workdir / n).read_bytes() for n in
                        (f"m_{tag}.ckpt", f"h_{tag}.csv", f"r_{tag}.json", f"r_{tag}.csv", f"f_{tag}.csv")])
    assert outputs[0] == outputs[1]
    assert run(["train", "--data", "d.eegb", "--config", "cfg.json", "--seed", "2",
                "--out", "m_c.ckpt", "--history", "h_c.csv"]) == 0
    assert (workdir / "h_c.csv").read_bytes() != outputs[0][1]
