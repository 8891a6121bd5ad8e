import subprocess
import sys

import numpy as np
import pytest

from deepaec import dsp
from deepaec.cli import main
from deepaec.network import D3Spec, MaskNet, NetConfig, save_config
from deepaec.scenes import load_scene_dir
from deepaec.training import save_model


@pytest.fixture(scope="module")
def micro_cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "micro.cfg"
    save_config(NetConfig(bnc_out=4, d3_blocks=[D3Spec(1, 2, 2)],
                          transitions=[4]), path)
    return str(path)


@pytest.fixture(scope="module")
def scene_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    rc = main(["gen-scenes", "--out", str(root / "train"), "--count", "3",
               "--seed", "7", "--doubletalk", "--duration", "0.6"])
    assert rc == 0
    rc = main(["gen-scenes", "--out", str(root / "val"), "--count", "2",
               "--seed", "8", "--doubletalk", "--duration", "0.6"])
    assert rc == 0
    return root


class TestGenScenes:
    def test_writes_loadable_scene_dirs(self, scene_dirs):
        train = sorted((scene_dirs / "train").iterdir())
        assert len(train) == 3
        scene = load_scene_dir(train[0])
        assert len(scene.mic) == int(0.6 * dsp.SAMPLE_RATE)
        assert np.any(scene.echo)  # doubletalk scenes carry echo

    def test_deterministic_per_seed(self, scene_dirs, tmp_path):
        rc = main(["gen-scenes", "--out", str(tmp_path / "again"), "--count", "1",
                   "--seed", "7", "--doubletalk", "--duration", "0.6"])
        assert rc == 0
        a = load_scene_dir(sorted((scene_dirs / "train").iterdir())[0])
        b = load_scene_dir(tmp_path / "again" / "scene_00000")
        np.testing.assert_array_equal(a.mic, b.mic)

    def test_fixed_ser_snr(self, tmp_path):
        rc = main(["gen-scenes", "--out", str(tmp_path / "fx"), "--count", "1",
                   "--seed", "3", "--doubletalk", "--ser-db", "0", "--snr-db",
                   "1000", "--duration", "0.6"])
        assert rc == 0
        scene = load_scene_dir(tmp_path / "fx" / "scene_00000")
        ratio = 10 * np.log10(np.dot(scene.clean, scene.clean)
                              / np.dot(scene.echo, scene.echo))
        assert abs(ratio) < 0.1


class TestTrainEvalEnhance:
    @pytest.fixture(scope="class")
    def model_dir(self, micro_cfg_file, scene_dirs, tmp_path_factory):
        out = tmp_path_factory.mktemp("model") / "m"
        rc = main(["train", "--config", micro_cfg_file,
                   "--scenes", str(scene_dirs / "train"),
                   "--val", str(scene_dirs / "val"),
                   "--out", str(out), "--epochs", "1", "--batch", "2",
                   "--alpha", "1.0", "--beta", "0.0", "--seed", "5"])
        assert rc == 0
        return out

    def test_train_writes_model_and_history(self, model_dir):
        assert (model_dir / "weights.bin").exists()
        assert (model_dir / "manifest.txt").exists()
        assert (model_dir / "config.cfg").exists()
        history = (model_dir / "history.txt").read_text().strip().splitlines()
        assert len(history) == 2  # header + one epoch

    def test_eval_writes_report(self, model_dir, scene_dirs, tmp_path):
        report = tmp_path / "report.tsv"
        rc = main(["eval", "--model", str(model_dir),
                   "--scenes", str(scene_dirs / "val"),
                   "--report", str(report)])
        assert rc == 0
        lines = report.read_text().strip().splitlines()
        assert lines[0].startswith("scene\t")
        assert len(lines) >= 1 + 2 + 2  # header, rows, mean, stdev

    def test_enhance_writes_wav(self, model_dir, scene_dirs, tmp_path):
        scene_dir = sorted((scene_dirs / "val").iterdir())[0]
        sid = scene_dir.name
        out = tmp_path / "enhanced.wav"
        rc = main(["enhance", "--model", str(model_dir),
                   "--mic", str(scene_dir / f"{sid}_mic.wav"),
                   "--lpb", str(scene_dir / f"{sid}_lpb.wav"),
                   "--out", str(out)])
        assert rc == 0
        y = dsp.read_wav(out)
        assert len(y) > 0

    def test_augment_flags_accepted(self, micro_cfg_file, scene_dirs, tmp_path):
        rc = main(["train", "--config", micro_cfg_file,
                   "--scenes", str(scene_dirs / "train"),
                   "--val", str(scene_dirs / "val"),
                   "--out", str(tmp_path / "m2"), "--epochs", "1", "--batch", "3",
                   "--augment", "shift,scale", "--seed", "5"])
        assert rc == 0


class TestParamCount:
    def test_prints_count(self, micro_cfg_file, capsys):
        assert main(["param-count", "--config", micro_cfg_file]) == 0
        printed = int(capsys.readouterr().out.strip())
        from deepaec.network import load_config

        assert printed == MaskNet(load_config(micro_cfg_file)).param_count()

    def test_packaged_default_config_file(self, tmp_path, capsys):
        import deepaec.configs
        from importlib import resources

        cfg = resources.files("deepaec").joinpath("configs", "default_dual.cfg")
        assert main(["param-count", "--config", str(cfg)]) == 0
        assert int(capsys.readouterr().out.strip()) == 356580


class TestExitCodes:
    def test_usage_error_is_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--config"])  # missing value
        assert exc.value.code == 1

    def test_unknown_subcommand_is_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_missing_scenes_dir_is_2(self, micro_cfg_file, tmp_path):
        rc = main(["eval", "--model", str(tmp_path / "nope"),
                   "--scenes", str(tmp_path / "nothing"),
                   "--report", str(tmp_path / "r.tsv")])
        assert rc == 2

    def test_bad_config_is_2(self, tmp_path, scene_dirs):
        bad = tmp_path / "bad.cfg"
        bad.write_text("bnc_out = quantum\n")
        rc = main(["train", "--config", str(bad),
                   "--scenes", str(scene_dirs / "train"),
                   "--val", str(scene_dirs / "val"),
                   "--out", str(tmp_path / "m"), "--epochs", "1", "--batch", "1"])
        assert rc == 2

    def test_nan_model_is_3(self, scene_dirs, tmp_path):
        net = MaskNet(NetConfig(bnc_out=4, d3_blocks=[D3Spec(1, 2, 2)],
                                transitions=[4]))
        for name, p in net.named_params():
            if name.endswith("final.b_r"):
                p.data[...] = np.nan
        save_model(tmp_path / "nanmodel", net)
        scene_dir = sorted((scene_dirs / "val").iterdir())[0]
        sid = scene_dir.name
        rc = main(["enhance", "--model", str(tmp_path / "nanmodel"),
                   "--mic", str(scene_dir / f"{sid}_mic.wav"),
                   "--lpb", str(scene_dir / f"{sid}_lpb.wav"),
                   "--out", str(tmp_path / "out.wav")])
        assert rc == 3


def test_module_entry_point(micro_cfg_file):
    proc = subprocess.run(
        [sys.executable, "-m", "deepaec", "param-count", "--config", micro_cfg_file],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.strip().isdigit()
