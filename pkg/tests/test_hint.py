import numpy as np
import pytest

from posedistill import hint as H
from posedistill.autodiff import Tensor
from posedistill.data import build_teacher_cache, generate_synthetic
from posedistill.errors import DataError, ShapeError
from posedistill.models import MlpSpec, init_model
from posedistill.pipeline import train_teacher
from posedistill.config import DistillConfig


class TestHintLoss:
    def test_zero_when_representations_match(self):
        rep = np.random.default_rng(0).uniform(-1, 1, (5, 8))
        assert H.hint_loss(Tensor(rep), rep.copy()).data == 0.0

    def test_single_sample_hand_value(self):
        student = np.zeros((1, 2))
        teacher = np.ones((1, 2))  # difference vector (1, 1)
        assert H.hint_loss(Tensor(student), teacher).data == 2.0

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(1)
        s = rng.uniform(-1, 1, (4, 6))
        t = rng.uniform(-1, 1, (4, 6))
        base = H.hint_loss(Tensor(s), t).data
        scaled = H.hint_loss(Tensor(3.0 * s), 3.0 * t).data
        assert scaled == pytest.approx(9.0 * base, rel=1e-12)

    def test_width_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            H.hint_loss(Tensor(np.zeros((2, 4))), np.zeros((2, 5)))


class TestAttentiveHintLoss:
    def test_full_trust_equals_hint_loss(self):
        rng = np.random.default_rng(2)
        s = rng.uniform(-1, 1, (6, 4))
        t = rng.uniform(-1, 1, (6, 4))
        a = H.attentive_hint_loss(Tensor(s), t, np.ones(6))
        b = H.hint_loss(Tensor(s), t)
        assert a.data == b.data

    def test_zero_trust_kills_loss(self):
        rng = np.random.default_rng(3)
        s = rng.uniform(-1, 1, (6, 4))
        t = rng.uniform(-1, 1, (6, 4))
        assert H.attentive_hint_loss(Tensor(s), t, np.zeros(6)).data == 0.0

    def test_hand_weighted_case(self):
        # per-sample squared diffs {2, 4} with weights {0.75, 0.25} -> 1.25
        s = np.zeros((2, 2))
        t = np.array([[1.0, 1.0], [2.0, 0.0]])
        phi = np.array([0.75, 0.25])
        assert H.attentive_hint_loss(Tensor(s), t, phi).data == 1.25

    def test_uniform_weight_scales_exactly(self):
        rng = np.random.default_rng(4)
        s = rng.uniform(-1, 1, (5, 3))
        t = rng.uniform(-1, 1, (5, 3))
        c = 0.37
        a = H.attentive_hint_loss(Tensor(s), t, np.full(5, c)).data
        b = c * H.hint_loss(Tensor(s), t).data
        assert a == pytest.approx(b, rel=1e-15)

    def test_missing_phi_rejected(self):
        with pytest.raises(Exception):
            H.attentive_hint_loss(Tensor(np.zeros((2, 3))), np.zeros((2, 3)), np.ones(3))


@pytest.fixture(scope="module")
def small_setup():
    config = DistillConfig.from_dict({
        "teacher": {"widths": [16, 32, 24, 6], "hint_index": 2},
        "student": {"widths": [16, 20, 24, 6], "hint_index": 2},
        "teacher_epochs": 5,
        "generator": {"num_train": 2, "num_val": 1, "num_test": 1,
                      "length": 120, "feature_dim": 16},
    })
    dataset = generate_synthetic(0, 2, 1, 1, 120, 16)
    teacher, _ = train_teacher(config, dataset, seed=0)
    cache = build_teacher_cache(teacher, dataset)
    return config, dataset, teacher, cache


class TestTrainStage1:
    def test_zero_learning_rate_changes_nothing(self, small_setup):
        config, dataset, _, cache = small_setup
        student = init_model(config.student, np.random.default_rng(1))
        before = [p.data.copy() for p in student.parameters()]
        report = H.train_stage1(student, cache, dataset, "ht", epochs=3, lr=0.0, seed=0)
        initial = H.reconstruction_error(student, cache, dataset)
        assert all(np.array_equal(b, p.data)
                   for b, p in zip(before, student.parameters()))
        assert report["reconstruction_error"] == initial

    def test_mode_none_skips_training(self, small_setup):
        config, dataset, _, cache = small_setup
        student = init_model(config.student, np.random.default_rng(1))
        initial = H.reconstruction_error(student, cache, dataset)
        report = H.train_stage1(student, cache, dataset, "none", epochs=10, seed=0)
        assert report["reconstruction_error"] == initial
        assert report["epochs"] == 0

    @pytest.mark.parametrize("mode", ["ht", "aht"])
    def test_training_reduces_reconstruction_error(self, small_setup, mode):
        config, dataset, _, cache = small_setup
        student = init_model(config.student, np.random.default_rng(1))
        initial = H.reconstruction_error(student, cache, dataset)
        report = H.train_stage1(student, cache, dataset, mode,
                                epochs=15, lr=1e-3, seed=0)
        assert report["reconstruction_error"] < initial

    def test_layers_above_guided_untouched(self, small_setup):
        config, dataset, _, cache = small_setup
        student = init_model(config.student, np.random.default_rng(2))
        guided = student.spec.hint_index
        above_before = [
            p.data.copy() for p in student.parameters(first_layer=guided + 1)
        ]
        H.train_stage1(student, cache, dataset, "aht", epochs=3, lr=1e-3, seed=0)
        above_after = student.parameters(first_layer=guided + 1)
        assert all(np.array_equal(b, p.data)
                   for b, p in zip(above_before, above_after))
        # prefix did move
        prefix = student.parameters(last_layer=guided)
        assert any(not np.array_equal(p.data, q)
                   for p, q in zip(prefix, [p.data * 0 for p in prefix]))

    def test_width_mismatch_rejected(self, small_setup):
        config, dataset, _, cache = small_setup
        bad = init_model(MlpSpec(widths=(16, 20, 30, 6), hint_index=2),
                         np.random.default_rng(0))
        with pytest.raises(DataError):
            H.train_stage1(bad, cache, dataset, "ht", epochs=1, seed=0)

    def test_unknown_mode_rejected(self, small_setup):
        config, dataset, _, cache = small_setup
        student = init_model(config.student, np.random.default_rng(1))
        with pytest.raises(ValueError):
            H.train_stage1(student, cache, dataset, "fitnets", seed=0)


class TestHintPhi:
    def test_blend_interpolates_groups(self, small_setup):
        _, _, _, cache = small_setup
        pos = np.arange(10)
        blended = H.hint_phi(cache, pos, beta=0.3, mode="blend")
        expected = 0.3 * cache.phi_t[pos] + 0.7 * cache.phi_r[pos]
        assert np.array_equal(blended, expected)

    def test_single_group_modes(self, small_setup):
        _, _, _, cache = small_setup
        pos = np.arange(5)
        assert np.array_equal(H.hint_phi(cache, pos, mode="translation"),
                              cache.phi_t[pos])
        assert np.array_equal(H.hint_phi(cache, pos, mode="rotation"),
                              cache.phi_r[pos])

    def test_unknown_mode_rejected(self, small_setup):
        _, _, _, cache = small_setup
        with pytest.raises(ValueError):
            H.hint_phi(cache, np.arange(3), mode="max")
