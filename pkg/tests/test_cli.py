import filecmp
import subprocess
import sys

import numpy as np
import pytest

from histofusion.checkpoint import read_checkpoint, save_checkpoint
from histofusion.cli import format_table, main
from histofusion.config import BottleneckConfig, DeformConfig, ModelConfig, ScaleConfig, format_config
from histofusion.data import load_image, save_image
from histofusion.network import build_model

TINY = ModelConfig(scales=(ScaleConfig(1, 8, 1), ScaleConfig(2, 16, 1)),
                   bottleneck=BottleneckConfig(blocks=1, bins=2), deform=DeformConfig(groups=2),
                   seed=3)


def tree(root):
    return sorted(p.relative_to(root) for p in root.rglob("*"))


def same_tree(a, b) -> bool:
    if tree(a) != tree(b):
        return False
    files = [str(p) for p in tree(a) if (a / p).is_file()]
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    return not mismatch and not errors


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(root), "--seed", "7", "--train", "3", "--test", "2",
                 "--size", "16"]) == 0
    return root


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(format_config(TINY) + "train.stage1_epochs = 1\ntrain.stage2_epochs = 1\n"
                    "train.patch = 16\ntrain.batch_size = 2\n")
    return path


class TestSynth:
    def test_same_seed_byte_identical(self, dataset, tmp_path, capsys):
        again = tmp_path / "again"
        assert main(["synth", "--out", str(again), "--seed", "7", "--train", "3", "--test", "2",
                     "--size", "16"]) == 0
        assert same_tree(dataset, again)
        assert "train" in capsys.readouterr().out

    def test_different_seed_differs(self, dataset, tmp_path):
        other = tmp_path / "other"
        main(["synth", "--out", str(other), "--seed", "8", "--train", "3", "--test", "2",
              "--size", "16"])
        assert tree(dataset) == tree(other) and not same_tree(dataset, other)


class TestEval:
    def test_identical_dirs(self, dataset, capsys):
        clean = str(dataset / "test" / "clean")
        assert main(["eval", "--pred", clean, "--gt", clean]) == 0
        out = capsys.readouterr().out
        last = out.strip().splitlines()[-1].split()
        assert last == ["HistoFusionNet", "100.000", "1.000"]
        assert "PSNR↑" in out and "SSIM↑" in out

    def test_hazy_scores_below_cap(self, dataset, capsys):
        assert main(["eval", "--pred", str(dataset / "test" / "hazy"),
                     "--gt", str(dataset / "test" / "clean"), "--method", "hazy"]) == 0
        name, psnr, ssim = capsys.readouterr().out.strip().splitlines()[-1].split()
        assert name == "hazy" and 0 < float(psnr) < 100 and 0 < float(ssim) < 1

    def test_missing_prediction(self, dataset, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        assert main(["eval", "--pred", str(tmp_path / "empty"),
                     "--gt", str(dataset / "test" / "clean")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and "0000.png" in err and len(err.strip().splitlines()) == 1

    def test_table_layout(self):
        text = format_table([("a", 20.0, 0.5), ("b", 30.0, 0.7)], "Ours")
        assert text.splitlines()[-1].split() == ["Ours", "25.000", "0.600"]


class TestInfer:
    def test_missing_checkpoint_names_path(self, dataset, tmp_path, capsys):
        missing = tmp_path / "absent.ckpt"
        code = main(["infer", "--checkpoint", str(missing), "--in", str(dataset / "test" / "hazy"),
                     "--out", str(tmp_path / "out")])
        assert code != 0 and str(missing) in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_writes_one_output_per_input(self, dataset, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        save_checkpoint(build_model(TINY), ckpt)
        out = tmp_path / "out"
        assert main(["infer", "--checkpoint", str(ckpt), "--in", str(dataset / "test" / "hazy"),
                     "--out", str(out)]) == 0
        assert sorted(p.name for p in out.iterdir()) == ["0000.png", "0001.png"]
        assert load_image(out / "0000.png").shape == (3, 16, 16)

    def test_corrupt_checkpoint(self, dataset, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        assert main(["infer", "--checkpoint", str(bad), "--in", str(dataset / "test" / "hazy"),
                     "--out", str(tmp_path / "o")]) == 1
        assert "bad.ckpt" in capsys.readouterr().err


class TestTrain:
    def test_stage1_then_stage2(self, dataset, config_file, tmp_path, capsys):
        s1, s2, log = tmp_path / "s1.ckpt", tmp_path / "s2.ckpt", tmp_path / "log.jsonl"
        data = str(dataset / "train.txt")
        assert main(["train", "--stage", "1", "--config", str(config_file), "--data", data,
                     "--out", str(s1), "--log", str(log)]) == 0
        assert len(log.read_text().splitlines()) == 1
        assert main(["train", "--stage", "2", "--config", str(config_file), "--data", data,
                     "--init", str(s1), "--out", str(s2)]) == 0
        a, b = read_checkpoint(s1)[1], read_checkpoint(s2)[1]
        assert a["stem_w"].tobytes() == b["stem_w"].tobytes()
        assert any(a[n].tobytes() != b[n].tobytes() for n in a if n.startswith("refine."))

    def test_same_seed_reproducible(self, dataset, config_file, tmp_path):
        outs = []
        for name in ("a.ckpt", "b.ckpt"):
            outs.append(tmp_path / name)
            main(["train", "--stage", "1", "--config", str(config_file), "--seed", "5",
                  "--data", str(dataset / "train.txt"), "--out", str(outs[-1])])
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_stage2_requires_init(self, dataset, config_file, tmp_path, capsys):
        assert main(["train", "--stage", "2", "--config", str(config_file),
                     "--data", str(dataset / "train.txt"), "--out", str(tmp_path / "x")]) == 1
        assert "stage-1 checkpoint" in capsys.readouterr().err

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("scales.widht = 3\n")
        assert main(["train", "--stage", "1", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
        assert "widht" in capsys.readouterr().err


class TestAblate:
    @pytest.mark.parametrize("drop,prefix", [("histogram", "histogram"),
                                             ("freqbranch", "freq_branch"), ("refine", "refine")])
    def test_reports_removed_group(self, drop, prefix, tmp_path, capsys):
        out = tmp_path / "ab.ckpt"
        assert main(["ablate", "--drop", drop, "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert prefix in text and out.is_file()
        names = set(read_checkpoint(out)[1])
        assert not any(n.startswith(prefix + ".") for n in names)


class TestUsage:
    @pytest.mark.parametrize("argv", [["frobnicate"], ["eval", "--pred", "x"],
                                      ["ablate", "--drop", "everything"], ["synth", "--bogus", "1"]])
    def test_usage_errors_exit_2(self, argv, capsys):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2
        assert "usage:" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "histofusion", "nope"], capture_output=True,
                              text=True)
        assert proc.returncode == 2 and "usage:" in proc.stderr

    def test_check_grads_subset(self, capsys):
        assert main(["check-grads", "--only", "conv2d", "layer_norm", "--seeds", "2"]) == 0
        out = capsys.readouterr().out
        assert "4/4 case runs passed" in out

    def test_check_grads_unknown_case(self, capsys):
        assert main(["check-grads", "--only", "softmax_xl"]) == 1
        assert "softmax_xl" in capsys.readouterr().err


def test_infer_then_eval_round_trip(dataset, tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    model = build_model(TINY)
    for name, p in model.named_parameters():
        p.data[...] = 0
    save_checkpoint(model, ckpt)
    out = tmp_path / "out"
    main(["infer", "--checkpoint", str(ckpt), "--in", str(dataset / "test" / "hazy"), "--out", str(out)])
    # all-zero weights: head sigmoid gives 0.5 everywhere, refinement adds nothing
    assert np.all(load_image(out / "0000.png") == np.float32(128 / 255))
    gt = tmp_path / "gt"
    gt.mkdir()
    for name in ("0000.png", "0001.png"):
        save_image(np.full((3, 16, 16), 0.5), gt / name)
    capsys.readouterr()
    assert main(["eval", "--pred", str(out), "--gt", str(gt)]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1].split()[1:] == ["100.000", "1.000"]
