import configparser

import numpy as np
import pytest

from incepse.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, clip_settings, main, parse_seeds, resolve_config

MINI_FLAGS = ["--depth", "2", "--branch-channels", "4", "--bottleneck-channels", "4", "--batch-size", "16"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("syn")
    assert main(["synth", "--out", str(out), "--num-records", "80", "--classes", "3", "--seconds", "2",
                 "--noise", "0.1", "--seed", "1"]) == EXIT_OK
    return out


def _data_flags(d, manifest="manifest.csv"):
    return ["--data", str(d / manifest), "--task", "synthetic", "--task-file", str(d / "tasks.txt")]


def test_parse_seeds():
    assert parse_seeds("0-9") == list(range(10))
    assert parse_seeds("0,2,5") == [0, 2, 5]
    assert parse_seeds("4") == [4]


def test_task_default_resolution():
    cfg, _ = resolve_config("super")
    assert (cfg.scheduler, cfg.base_lr, cfg.epochs, cfg.dropout_p) == ("onecycle", 1e-2, 15, 0.11)
    cfg, _ = resolve_config("sub")
    assert (cfg.scheduler, cfg.plateau_factor, cfg.plateau_patience, cfg.base_lr, cfg.dropout_p) == \
        ("plateau", 0.3, 1, 1e-3, 0.09)


def test_config_file_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[DEFAULT]\nbatch_size = 64\nepochs = 3\n[super]\nepochs = 4\nclip_norm = none\ndepth = 3\n")
    cfg, model = resolve_config("super", ini, {"epochs": 9})
    assert (cfg.batch_size, cfg.epochs, cfg.clip_norm, model.depth) == (64, 9, None, 3)
    cfg, _ = resolve_config("sub", ini)
    assert cfg.epochs == 3 and cfg.clip_norm == 0.1


def test_unknown_config_key(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[super]\nlearning_speed = 3\n")
    with pytest.raises(ValueError, match="learning_speed"):
        resolve_config("super", ini)


def test_default_clip_grid():
    rows = clip_settings([None, 0.5, 0.3, 0.1])
    assert [r[0] for r in rows] == ["no-clip", "clip=0.5", "clip=0.3", "clip=0.1"]


def test_preprocess_idempotent(synth_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["preprocess", "--data", str(synth_dir / "manifest.csv"), "--out", str(out)]) == EXIT_OK
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert (a / "lead_stats.txt").exists() and (a / "effective_config.ini").exists()
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    cp = configparser.ConfigParser()
    cp.read(a / "effective_config.ini")
    assert (float(cp["band"]["low_hz"]), float(cp["band"]["high_hz"]), float(cp["band"]["fs_hz"])) == (1, 45, 100)


def test_preprocess_rejects_nyquist(synth_dir, tmp_path):
    rc = main(["preprocess", "--data", str(synth_dir / "manifest.csv"), "--out", str(tmp_path), "--high", "60"])
    assert rc == EXIT_VALIDATION


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    rc = main(["train", *_data_flags(synth_dir), "--out", str(out), "--seeds", "0-1", "--epochs", "12",
               "--lr", "1e-2", "--dropout", "0", *MINI_FLAGS])
    assert rc == EXIT_OK
    return out


def test_train_outputs(trained):
    for name in ("effective_config.ini", "aggregate.csv", "report_seed0.csv", "report_seed1.csv",
                 "best_seed0.ckpt", "best_seed1.ckpt"):
        assert (trained / name).exists(), name
    lines = (trained / "aggregate.csv").read_text().splitlines()
    assert lines[0].startswith("setting,runs,mean") and lines[1].startswith("synthetic,2,")
    cp = configparser.ConfigParser()
    cp.read(trained / "effective_config.ini")
    assert cp["train"]["epochs"] == "12" and cp["model"]["num_classes"] == "3"


def test_evaluate_train_split(trained, synth_dir, capsys):
    rc = main(["evaluate", *_data_flags(synth_dir), "--checkpoint", str(trained / "best_seed0.ckpt"),
               "--split", "train"])
    assert rc == EXIT_OK
    auroc = float(capsys.readouterr().out.split("macro_auroc=")[1].split()[0])
    assert auroc >= 0.99


def test_predict_rows_and_range(trained, synth_dir, tmp_path):
    rc = main(["predict", *_data_flags(synth_dir), "--checkpoint", str(trained / "best_seed0.ckpt"),
               "--out", str(tmp_path)])
    assert rc == EXIT_OK
    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert lines[0] == "record_id,c0,c1,c2"
    assert len(lines) - 1 == 80
    probs = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    assert np.all((probs > 0) & (probs < 1))


def test_evaluate_wrong_task_dims(trained, synth_dir):
    rc = main(["evaluate", "--data", str(synth_dir / "manifest.csv"), "--task", "super",
               "--checkpoint", str(trained / "best_seed0.ckpt")])
    assert rc == EXIT_VALIDATION


def test_ablate_clip_single_value(synth_dir, tmp_path):
    rc = main(["ablate-clip", *_data_flags(synth_dir), "--out", str(tmp_path), "--seed", "0", "--values", "0.1",
               "--epochs", "1", *MINI_FLAGS])
    assert rc == EXIT_OK
    rows = (tmp_path / "ablate_clip.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].split(",")[3] == "0.0"


def test_ablate_stability_rows(synth_dir, tmp_path):
    rc = main(["ablate-stability", *_data_flags(synth_dir), "--out", str(tmp_path), "--seed", "0",
               "--epochs", "1", *MINI_FLAGS])
    assert rc == EXIT_OK
    rows = (tmp_path / "ablate_stability.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["clip+decay", "decay-only", "none"]
    cp = configparser.ConfigParser()
    cp.read(tmp_path / "effective_config.ini")
    assert cp["setting:none"]["weight_decay"] == "0.0"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_failed_seed_continues(synth_dir, tmp_path, capsys):
    rc = main(["train", *_data_flags(synth_dir), "--out", str(tmp_path), "--seeds", "0,1", "--epochs", "1",
               "--lr", "1e30", "--no-clip", *MINI_FLAGS])
    assert rc == EXIT_RUNTIME
    assert capsys.readouterr().err.count("FAILED") == 2
    assert (tmp_path / "aggregate.csv").read_text().splitlines()[1].endswith(",2")


def test_gradcheck_op_scale():
    assert main(["gradcheck", "--scale", "op"]) == EXIT_OK


def test_usage_errors():
    assert main(["train"]) == EXIT_VALIDATION
    assert main(["nonsense"]) == EXIT_VALIDATION
    assert main(["train", "--data", "missing.csv", "--task", "super", "--out", "/tmp/x-none"]) == EXIT_VALIDATION
