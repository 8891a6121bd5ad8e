import numpy as np
import pytest

from deepaec import dsp
from deepaec.errors import DataError, InvalidArgumentError
from deepaec.scenes import (ScenePlan, augment_scale, augment_shift,
                            distortion_f, load_scene_dir, make_scene,
                            save_scene_dir, shift_signal, synth_source)


class TestSynthSource:
    def test_deterministic_per_seed(self):
        a = synth_source("speech", 7, 1.0)
        b = synth_source("speech", 7, 1.0)
        np.testing.assert_array_equal(a, b)
        c = synth_source("speech", 8, 1.0)
        assert not np.array_equal(a, c)

    def test_noise_roughly_symmetric(self):
        x = synth_source("noise", 3, 2.0)
        assert abs(x.mean()) < 0.01

    @pytest.mark.parametrize("kind", ["speech", "noise"])
    def test_peak_normalized(self, kind):
        x = synth_source(kind, 5, 1.0)
        assert abs(np.abs(x).max() - 0.5) < 1e-6

    def test_too_short_rejected(self):
        with pytest.raises(InvalidArgumentError):
            synth_source("speech", 1, 0.25)

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidArgumentError):
            synth_source("birdsong", 1, 1.0)

    def test_speech_has_pauses_and_activity(self):
        x = synth_source("speech", 11, 2.0)
        frame_rms = np.sqrt(np.mean(x[:32000].reshape(125, 256) ** 2, axis=1))
        assert (frame_rms < 0.01).any()   # pauses
        assert (frame_rms > 0.05).sum() > 30  # voiced stretches


class TestDistortion:
    def test_identity_configuration(self):
        plan = ScenePlan(seed=1, clip_level=1.0, rir_decay=0.0, delay_samples=0)
        q = synth_source("speech", 2, 1.0)
        np.testing.assert_array_equal(distortion_f(q, plan), q)

    def test_clipping_limits_peak(self):
        plan = ScenePlan(seed=1, clip_level=0.1, rir_decay=0.0, delay_samples=0)
        q = synth_source("speech", 2, 1.0)  # peak 0.5
        out = distortion_f(q, plan)
        assert np.abs(out).max() == pytest.approx(0.1)

    def test_delay_peaks_cross_correlation_at_lag(self):
        plan = ScenePlan(seed=3, clip_level=0.8, rir_decay=0.05, delay_samples=32)
        base = ScenePlan(seed=3, clip_level=0.8, rir_decay=0.05, delay_samples=0)
        q = synth_source("speech", 4, 1.0)
        delayed = distortion_f(q, plan)
        undelayed = distortion_f(q, base)
        xc = np.correlate(delayed, undelayed, mode="full")
        lag = int(np.argmax(xc)) - (len(undelayed) - 1)
        assert lag == 32

    def test_rir_spreads_energy(self):
        plan = ScenePlan(seed=5, clip_level=1.0, rir_decay=0.08, delay_samples=0)
        q = np.zeros(16000)
        q[100] = 1.0
        out = distortion_f(q, plan)
        assert np.flatnonzero(np.abs(out) > 1e-9).max() > 200


class TestMakeScene:
    def test_clean_mixture_when_everything_off(self):
        plan = ScenePlan(seed=9, snr_db=np.inf, ser_db=np.inf)
        scene = make_scene(plan)
        np.testing.assert_array_equal(scene.mic, scene.clean)
        assert not np.any(scene.echo)

    def test_zero_db_ser_matches_speech_energy(self):
        plan = ScenePlan(seed=10, ser_db=0.0, snr_db=np.inf, delay_samples=16,
                         clip_level=0.9, rir_decay=0.05)
        scene = make_scene(plan)
        e_echo = np.dot(scene.echo, scene.echo)
        e_clean = np.dot(scene.clean, scene.clean)
        assert abs(10 * np.log10(e_echo / e_clean)) < 0.1

    def test_snr_scaling(self):
        plan = ScenePlan(seed=11, ser_db=np.inf, snr_db=10.0)
        scene = make_scene(plan)
        ratio = 10 * np.log10(np.dot(scene.clean, scene.clean)
                              / np.dot(scene.noise, scene.noise))
        assert abs(ratio - 10.0) < 0.1

    def test_deterministic(self):
        plan = ScenePlan(seed=12, ser_db=2.0, snr_db=15.0, delay_samples=64)
        a = make_scene(plan)
        b = make_scene(plan)
        np.testing.assert_array_equal(a.mic, b.mic)
        np.testing.assert_array_equal(a.loopback, b.loopback)

    def test_reconstruction_identity(self):
        plan = ScenePlan(seed=13, ser_db=-3.0, snr_db=8.0, delay_samples=128,
                         clip_level=0.7, rir_decay=0.06)
        scene = make_scene(plan)
        resid = scene.mic - (scene.clean + scene.noise + scene.echo)
        assert np.dot(resid, resid) < 1e-16 * np.dot(scene.mic, scene.mic)

    def test_singletalk_has_no_echo(self):
        plan = ScenePlan(seed=14, ser_db=None, snr_db=20.0, doubletalk=False)
        scene = make_scene(plan)
        assert not np.any(scene.echo)
        assert not np.any(scene.loopback)
        assert np.any(scene.clean)

    def test_inconsistent_plan_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ScenePlan(seed=1, ser_db=5.0, doubletalk=False)

    def test_target_scale_applied_on_loud_mixture(self):
        plan = ScenePlan(seed=15, ser_db=-10.0, snr_db=5.0)  # loud echo + noise
        scene = make_scene(plan)
        assert np.abs(scene.mic).max() <= 0.99 + 1e-12
        if scene.target_scale < 1.0:
            np.testing.assert_allclose(
                np.abs(scene.clean).max(), 0.5 * scene.target_scale, rtol=1e-9)


class TestAugmentations:
    def test_zero_probability_is_identity(self, rng):
        q = synth_source("speech", 20, 1.0)
        out = augment_shift(q, rng, prob=0.0)
        np.testing.assert_array_equal(out, q)
        out = augment_scale(q, rng, prob=0.0)
        np.testing.assert_array_equal(out, q)

    def test_forced_full_shift_zero_fills(self):
        q = np.ones(4096)
        out = shift_signal(q, 512)
        assert not np.any(out[:512])
        np.testing.assert_array_equal(out[512:], q[:-512])

    def test_forced_unit_scale_is_identity(self, rng):
        q = synth_source("speech", 21, 1.0)
        np.testing.assert_array_equal(q * 1.0, q)

    def test_half_scale_drops_six_db(self):
        q = synth_source("speech", 22, 1.0)
        before = np.dot(q, q)
        after = np.dot(0.5 * q, 0.5 * q)
        assert 10 * np.log10(before / after) == pytest.approx(6.0206, abs=1e-3)

    def test_application_frequency(self):
        rng = np.random.default_rng(0)
        q = np.ones(600)
        applied = 0
        for _ in range(4000):
            out = augment_scale(q, rng, prob=0.5)
            applied += not np.array_equal(out, q)
        assert 0.45 < applied / 4000 < 0.55

    def test_shift_magnitude_bounded(self):
        rng = np.random.default_rng(1)
        q = np.arange(1.0, 2049.0)
        for _ in range(300):
            out = augment_shift(q, rng, prob=1.0)
            nz = np.flatnonzero(out)
            d = out[nz[0]] - q[0] if nz.size else 0
            lead_zeros = nz[0] if nz.size else 0
            assert lead_zeros <= 512

    def test_scale_factor_bounded(self):
        rng = np.random.default_rng(2)
        q = np.ones(100)
        for _ in range(300):
            out = augment_scale(q, rng, prob=1.0)
            c = out[0]
            assert 0.5 <= c <= 1.5

    def test_inputs_never_mutated(self):
        # augmentation touches only the returned loopback copy
        rng = np.random.default_rng(3)
        scene = make_scene(ScenePlan(seed=33, ser_db=0.0, snr_db=15.0))
        before = {k: getattr(scene, k).copy()
                  for k in ("mic", "clean", "echo", "loopback")}
        for _ in range(20):
            augment_shift(scene.loopback, rng, prob=1.0)
            augment_scale(scene.loopback, rng, prob=1.0)
        for k, v in before.items():
            np.testing.assert_array_equal(getattr(scene, k), v)


class TestSceneDirs:
    def _scene(self):
        return make_scene(ScenePlan(seed=30, ser_db=0.0, snr_db=12.0,
                                    delay_samples=40, clip_level=0.9,
                                    rir_decay=0.04))

    def test_round_trip_within_quantization(self, tmp_path):
        scene = self._scene()
        d = tmp_path / "scene_00000"
        save_scene_dir(d, scene)
        loaded = load_scene_dir(d)
        for a, b in ((scene.mic, loaded.mic), (scene.loopback, loaded.loopback),
                     (scene.clean, loaded.clean), (scene.echo, loaded.echo)):
            assert np.abs(a - b).max() <= 1.0 / 32768
        assert loaded.target_scale == scene.target_scale

    def test_missing_loopback_named_in_error(self, tmp_path):
        scene = self._scene()
        d = tmp_path / "scene_00001"
        save_scene_dir(d, scene)
        (d / "scene_00001_lpb.wav").unlink()
        with pytest.raises(FileNotFoundError, match="lpb"):
            load_scene_dir(d)

    def test_meta_target_scale_parsed(self, tmp_path):
        scene = self._scene()
        d = tmp_path / "scene_00002"
        save_scene_dir(d, scene)
        (d / "scene_00002_meta.txt").write_text("target_scale = 0.8\n")
        assert load_scene_dir(d).target_scale == 0.8

    def test_length_mismatch_rejected(self, tmp_path):
        scene = self._scene()
        d = tmp_path / "scene_00003"
        save_scene_dir(d, scene)
        dsp.write_wav(d / "scene_00003_lpb.wav", scene.loopback[:-100])
        with pytest.raises(DataError):
            load_scene_dir(d)

    def test_missing_meta_key_rejected(self, tmp_path):
        scene = self._scene()
        d = tmp_path / "scene_00004"
        save_scene_dir(d, scene)
        (d / "scene_00004_meta.txt").write_text("# nothing here\n")
        with pytest.raises(DataError):
            load_scene_dir(d)
