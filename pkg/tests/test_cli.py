import hashlib
import json
import shutil
from pathlib import Path

import pytest

from fgbgvos.cli import main
from fgbgvos.config import load_run_config
from fgbgvos.errors import InvalidConfigError

TINY_MODEL_ARGS = [
    "--set", "embedding_dim=8", "--set", "encoder_width=8",
    "--set", "windows=1,2", "--set", "stage_widths=16,24,24",
    "--set", "context_width=16", "--set", "decoder_width=16",
]


def _tree_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for p in sorted(root.rglob("*.png")):
        digest.update(p.relative_to(root).as_posix().encode())
        digest.update(p.read_bytes())
    return digest.hexdigest()


def _gen(tmp_path, name="data", **kw):
    args = ["gen-data", "--out", str(tmp_path / name), "--seqs", "2",
            "--frames", "4", "--size", "24", "--objects", "2", "--seed", "7"]
    for k, v in kw.items():
        args += [f"--{k}", str(v)]
    assert main(args) == 0
    return tmp_path / name


def test_gen_data_layout_and_reproducibility(tmp_path):
    a = _gen(tmp_path, "a")
    assert sorted(p.name for p in a.iterdir()) == ["seq000", "seq001"]
    assert len(list((a / "seq000" / "frames").glob("*.png"))) == 4
    assert len(list((a / "seq000" / "masks").glob("*.png"))) == 4
    b = _gen(tmp_path, "b")
    assert _tree_hash(a) == _tree_hash(b)


def test_gen_data_zero_objects_exits_one(tmp_path, capsys):
    rc = main(["gen-data", "--out", str(tmp_path / "x"), "--objects", "0"])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_unknown_flag_exits_one(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "x"), "--bogus"]) == 1


def test_train_infer_eval_pipeline(tmp_path, capsys):
    data = _gen(tmp_path)
    run = tmp_path / "run"
    rc = main(["train", "--data", str(data), "--out", str(run),
               "--steps", "40", *TINY_MODEL_ARGS,
               "--set", "crop_size=24", "--set", "n_current=2",
               "--set", "aug_scale_min=1.0", "--set", "aug_scale_max=1.0",
               "--set", "aug_flip=false"])
    assert rc == 0
    assert (run / "checkpoint.pt").is_file()
    log = [json.loads(line) for line in
           (run / "loss_log.jsonl").read_text().splitlines()]
    assert len(log) == 40
    assert log[-1]["loss"] < log[0]["loss"]

    pred = tmp_path / "pred"
    rc = main(["infer", "--data", str(data), "--checkpoint",
               str(run / "checkpoint.pt"), "--out", str(pred)])
    assert rc == 0
    for seq in ("seq000", "seq001"):
        names = sorted(p.name for p in (pred / seq).glob("*.png"))
        assert names == ["00000.png", "00001.png", "00002.png", "00003.png"]

    rc = main(["eval", "--pred", str(pred), "--data", str(data),
               "--report", str(tmp_path / "report.json")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "J&F = " in out
    assert (tmp_path / "report.json").is_file()


def test_eval_perfect_predictions_prints_one(tmp_path, capsys):
    data = _gen(tmp_path)
    pred = tmp_path / "pred"
    for seq_dir in data.iterdir():
        (pred / seq_dir.name).mkdir(parents=True)
        for m in (seq_dir / "masks").glob("*.png"):
            shutil.copy(m, pred / seq_dir.name / m.name)
    assert main(["eval", "--pred", str(pred), "--data", str(data)]) == 0
    assert "J&F = 1.000" in capsys.readouterr().out


def test_infer_missing_checkpoint_exits_two(tmp_path, capsys):
    data = _gen(tmp_path)
    rc = main(["infer", "--data", str(data), "--checkpoint",
               str(tmp_path / "nope.pt"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "data error" in capsys.readouterr().err


def test_eval_missing_predictions_exits_two(tmp_path):
    data = _gen(tmp_path)
    (tmp_path / "empty_pred").mkdir()
    rc = main(["eval", "--pred", str(tmp_path / "empty_pred"), "--data", str(data)])
    assert rc == 2


# --- config file surface ------------------------------------------------------

def test_config_file_roundtrip(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "# comment\n"
        "embedding_dim = 16\n"
        "windows = 2,4\n"
        "scales = 1.0,1.3\n"
        "lr = 0.005\n"
        "aug_flip = false\n"
        "min_fg_pixels = none\n"
        "tolerance = 3\n"
    )
    cfg = load_run_config(cfg_file)
    assert cfg.embedding_dim == 16
    assert cfg.windows == (2, 4)
    assert cfg.scales == (1.0, 1.3)
    assert cfg.lr == 0.005
    assert cfg.aug_flip is False
    assert cfg.min_fg_pixels is None
    assert cfg.tolerance == 3


def test_config_unknown_key_rejected(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("embeding_dim = 16\n")
    with pytest.raises(InvalidConfigError):
        load_run_config(cfg_file)
    with pytest.raises(InvalidConfigError):
        load_run_config(None, {"nope": "1"})


def test_config_bad_value_rejected(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("lr = fast\n")
    with pytest.raises(InvalidConfigError):
        load_run_config(cfg_file)


def test_config_overrides_win(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("steps = 10\n")
    cfg = load_run_config(cfg_file, {"steps": "3"})
    assert cfg.steps == 3


def test_deterministic_flag_lists_kernels(tmp_path, capsys):
    data = _gen(tmp_path)
    run = tmp_path / "run"
    rc = main(["train", "--data", str(data), "--out", str(run),
               "--steps", "1", "--deterministic", *TINY_MODEL_ARGS,
               "--set", "crop_size=24", "--set", "n_current=2",
               "--set", "aug_scale_min=1.0", "--set", "aug_scale_max=1.0",
               "--set", "aug_flip=false"])
    assert rc == 0
    assert "deterministic mode on" in capsys.readouterr().out
