import itertools

import numpy as np
import pytest

from srkd.corpus import (
    AugmentConfig, SyntheticCorpusSpec, augment_batch, confusable_groups, coupled_views,
    draw_augmentation, generate_corpus,
)


def pair_cosines(protos, pairs):
    planted = {tuple(sorted(p)) for p in pairs}
    inside, outside = [], []
    for a, b in itertools.combinations(range(len(protos)), 2):
        c = float(protos[a] @ protos[b])
        (inside if (a, b) in planted else outside).append(c)
    return inside, outside


class TestCorpus:
    def test_no_planted_structure(self):
        cos = []
        for seed in range(10):
            spec = SyntheticCorpusSpec(confusion_strength=0.0, seed=seed)
            cos.extend(pair_cosines(generate_corpus(spec).prototypes, ())[1])
        assert max(cos) - min(cos) < 0.1

    @pytest.mark.parametrize("strength", [0.3, 0.8, 0.9])
    def test_planted_pairs_closer(self, strength):
        spec = SyntheticCorpusSpec(confusion_strength=strength, seed=3)
        inside, outside = pair_cosines(generate_corpus(spec).prototypes, spec.confusable_pairs)
        assert min(inside) > max(outside)

    def test_unit_prototypes(self):
        c = generate_corpus(SyntheticCorpusSpec())
        np.testing.assert_allclose(np.linalg.norm(c.prototypes, axis=1), 1.0, atol=1e-12)

    def test_deterministic(self):
        a = generate_corpus(SyntheticCorpusSpec(seed=7))
        b = generate_corpus(SyntheticCorpusSpec(seed=7))
        for name in ("train_img", "train_txt", "eval_img", "prompt_txt"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        assert np.array_equal(a.eval_measures, b.eval_measures, equal_nan=True)

    def test_shapes_and_group(self):
        spec = SyntheticCorpusSpec()
        c = generate_corpus(spec)
        assert c.train_img.shape == (spec.num_classes * spec.samples_per_class, spec.ambient_dim)
        assert c.group == (5, 6, 7)
        assert c.coarse_classes == (0, 1, 2, 3, 4)
        in_group = np.isin(c.eval_labels, c.group)
        assert np.isfinite(c.eval_measures[in_group]).all()
        assert np.isnan(c.eval_measures[~in_group]).all()

    def test_modalities_independent_views(self):
        c = generate_corpus(SyntheticCorpusSpec())
        assert not np.allclose(c.train_img, c.train_txt)

    def test_signal_dim_error(self):
        with pytest.raises(ValueError):
            SyntheticCorpusSpec(ambient_dim=8, signal_dim=16)

    @pytest.mark.parametrize("pairs", [((0, 8),), ((3, 3),)])
    def test_bad_pairs(self, pairs):
        with pytest.raises(ValueError):
            SyntheticCorpusSpec(confusable_pairs=pairs)

    def test_groups(self):
        assert confusable_groups(6, [(0, 1), (4, 5), (1, 2)]) == [(0, 1, 2), (4, 5)]


class TestAugmentation:
    def test_disabled(self, rng):
        x = rng.normal(size=12)
        cfg = AugmentConfig(enabled=False)
        t, s = coupled_views(x, draw_augmentation(rng, 12, cfg), cfg)
        assert np.array_equal(t, x) and np.array_equal(s, x)

    def test_same_draw(self, rng):
        x = rng.normal(size=12)
        d = draw_augmentation(rng, 12, AugmentConfig())
        t, s = coupled_views(x, d)
        assert np.array_equal(t, s) and not np.array_equal(t, x)
        assert np.array_equal(coupled_views(x, d)[0], t)

    def test_distinct_draws(self, rng):
        x = rng.normal(size=12)
        views = {coupled_views(x, draw_augmentation(rng, 12, AugmentConfig()))[0].tobytes() for _ in range(100)}
        assert len(views) == 100

    def test_batch(self, rng):
        b = rng.normal(size=(5, 6))
        tv, sv, draws = augment_batch(b, rng, AugmentConfig())
        assert np.array_equal(tv, sv) and len(draws) == 5
        tv, sv, draws = augment_batch(b, rng, AugmentConfig(enabled=False))
        assert np.array_equal(tv, b) and draws == []
