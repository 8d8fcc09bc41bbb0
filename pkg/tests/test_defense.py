import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from augmixcloak.augmentation import AugIntensity
from augmixcloak.classifier import init_model
from augmixcloak.defense import DefenseConfig, QueryBatch, answer_query, clip_confidence, transform_query
from augmixcloak.dfl import build_topology, make_participants
from augmixcloak.imaging import Normalizer
from augmixcloak.pca_fusion import PcaGallery
from augmixcloak.phash import compute_phash

RNG = np.random.default_rng(0)
GALLERY = PcaGallery(tuple(RNG.random((10, 10, 1)) for _ in range(3)))
IMG = RNG.random((10, 10, 1))


class TestTransform:
    def test_bypass_when_not_detected(self):
        out, dec = transform_query(IMG, compute_phash(IMG), False, DefenseConfig(), GALLERY)
        assert out is IMG and not dec.is_member_detected and dec.ops == ()

    def test_disabled_is_identity(self):
        out, _ = transform_query(IMG, 123, True, DefenseConfig(enabled=False), GALLERY)
        assert out is IMG

    def test_alpha_one_no_augmentation_is_identity(self):
        cfg = DefenseConfig(AugIntensity([0], [1.0]), alpha=1.0)
        out, dec = transform_query(IMG, 5, True, cfg, GALLERY)
        np.testing.assert_array_equal(out, IMG)
        assert dec.aug_num == 0

    def test_alpha_zero_gives_gallery_image(self):
        out, dec = transform_query(IMG, 7, True, DefenseConfig(alpha=0.0), GALLERY)
        np.testing.assert_array_equal(out, GALLERY[7 % 3])
        assert dec.pca_key == 1

    def test_decision_record(self):
        cfg = DefenseConfig(AugIntensity([2], [1.0]), alpha=0.5)
        _, dec = transform_query(IMG, 13, True, cfg, GALLERY)
        assert dec.to_dict() == {"is_member_detected": True, "aug_key": 1, "aug_num": 2, "pca_key": 1,
                                 "ops": ["Rotation", "AffineTranslate"]}

    def test_config_round_trip(self):
        cfg = DefenseConfig(AugIntensity([1, 2], [0.4, 0.6]), alpha=0.65)
        assert DefenseConfig.from_dict(cfg.to_dict()) == cfg


class TestAnswer:
    def setup_method(self):
        rng = np.random.default_rng(1)
        self.members = rng.random((5, 10, 10, 1))
        self.topology = build_topology("ring", 3)
        model = init_model("cnn", 3, 0, (10, 10, 1))
        parts = [(self.members, np.zeros(5, int)), (rng.random((2, 10, 10, 1)), np.zeros(2, int)),
                 (rng.random((2, 10, 10, 1)), np.zeros(2, int))]
        self.parts = make_participants(self.topology, parts, [model] * 3)
        self.norm = Normalizer([0.5], [0.25])

    def test_member_detected_and_deterministic(self):
        cfg = DefenseConfig()
        p1, d1 = answer_query(self.topology, self.parts, 1, self.members[2], cfg, GALLERY, self.norm)
        p2, d2 = answer_query(self.topology, self.parts, 1, self.members[2].copy(), cfg, GALLERY, self.norm)
        assert d1.is_member_detected and d1 == d2
        np.testing.assert_array_equal(p1, p2)

    def test_nonmember_passes_through(self):
        other = np.random.default_rng(9).random((10, 10, 1))
        _, dec = answer_query(self.topology, self.parts, 0, other, DefenseConfig(), GALLERY, self.norm)
        assert not dec.is_member_detected

    def test_gallery_mismatch(self):
        with pytest.raises(ValueError):
            answer_query(self.topology, self.parts, 0, IMG, DefenseConfig(),
                         PcaGallery(GALLERY.images[:2]), self.norm)

    def test_batch_matches_single_path(self):
        cfg = DefenseConfig(AugIntensity([1, 2], [0.5, 0.5]), alpha=0.7)
        queries = np.concatenate([self.members[:3], np.random.default_rng(4).random((2, 10, 10, 1))])
        batch = QueryBatch(queries, self.topology, self.parts, 0)
        assert batch.detected.tolist() == [True, True, True, False, False]
        probs = batch.predict(self.parts[0].model, self.norm, cfg, GALLERY)
        for i, img in enumerate(queries):
            single, _ = answer_query(self.topology, self.parts, 0, img, cfg, GALLERY, self.norm)
            np.testing.assert_allclose(probs[i], single, atol=1e-12)


class TestClip:
    def test_example(self):
        np.testing.assert_allclose(clip_confidence([0.9, 0.1], 0.6), [0.6, 0.4])

    def test_below_cap_untouched(self):
        np.testing.assert_array_equal(clip_confidence([0.5, 0.3, 0.2], 0.6), [0.5, 0.3, 0.2])

    def test_rejects_cap_below_uniform(self):
        with pytest.raises(ValueError):
            clip_confidence([0.5, 0.5], 0.4)

    def test_runner_up_also_capped(self):
        out = clip_confidence([0.6, 0.39, 0.01], 0.4)
        assert out.max() <= 0.4 + 1e-12 and out.sum() == pytest.approx(1.0)

    @given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=10), st.floats(0.0, 0.99))
    def test_properties(self, raw, frac):
        p = np.array(raw) / sum(raw)
        cap = 1 / len(p) + frac * (1 - 1 / len(p)) * 0.999
        out = clip_confidence(p, cap)
        assert out.sum() == pytest.approx(1.0)
        assert out.max() <= cap + 1e-9
        assert out.argmax() == p.argmax() or np.isclose(out.max(), out[p.argmax()])
