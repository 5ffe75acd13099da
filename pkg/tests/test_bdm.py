import math

import numpy as np
import pytest

from thermohand.bdm import (
    BdmModel,
    EmptySelectionError,
    Gallery,
    GalleryError,
    SingularComponentError,
    dispersion_ratios,
    estimate_dispersions,
    g_score,
    identify,
    load_model,
    save_model,
    select_components,
    train_bdm,
)


def gaussian_log_density(x, variance):
    """Independent closed-form N(x | 0, v) log density, coded from scratch."""
    return -0.5 * math.log(2.0 * math.pi * variance) - x * x / (2.0 * variance)


def g_oracle(diff, model):
    total = 0.0
    for k in model.selected:
        si = model.sigma_i_sq[k]
        sp = model.sigma_p_sq[k]
        v_equal = 2.0 * si
        if model.double_within_variance:
            v_unequal = 2.0 * (sp + si)
        else:
            v_unequal = 2.0 * sp + si
        total += gaussian_log_density(diff[k], v_unequal)
        total -= gaussian_log_density(diff[k], v_equal)
    return total + model.log_prior_ratio


def random_model(rng, dim=12, threshold=1.0):
    si = rng.uniform(0.1, 2.0, dim)
    sp = rng.uniform(0.0, 5.0, dim)
    ratios = dispersion_ratios(si, sp)
    selected = np.nonzero(ratios <= threshold)[0]
    return BdmModel(si, sp, ratios, selected, threshold)


class TestEstimateDispersions:
    def test_identical_templates_give_zero_everywhere(self):
        v = np.array([1.0, 2.0, 3.0])
        gallery = Gallery.from_dict({0: [v, v], 1: [v, v]})
        si, sp = estimate_dispersions(gallery)
        np.testing.assert_array_equal(si, 0.0)
        np.testing.assert_array_equal(sp, 0.0)

    def test_two_users_identical_within(self):
        m1 = np.array([0.0, 4.0])
        m2 = np.array([2.0, -4.0])
        gallery = Gallery.from_dict({0: [m1, m1], 1: [m2, m2]})
        si, sp = estimate_dispersions(gallery)
        np.testing.assert_array_equal(si, 0.0)
        np.testing.assert_allclose(sp, (m1 - m2) ** 2 / 2.0)

    def test_hand_computed_pooled_case(self):
        gallery = Gallery.from_dict({
            "a": np.array([[0.0], [2.0]]),
            "b": np.array([[10.0], [12.0]]),
        })
        si, sp = estimate_dispersions(gallery)
        assert si[0] == pytest.approx(2.0)
        assert sp[0] == pytest.approx(50.0)

    def test_matches_direct_estimators_on_random_gallery(self):
        rng = np.random.default_rng(1)
        users = {u: rng.normal(u, 1.0, (4, 6)) for u in range(5)}
        gallery = Gallery.from_dict(users)
        si, sp = estimate_dispersions(gallery)
        pooled = sum(((m - m.mean(axis=0)) ** 2).sum(axis=0) for m in users.values())
        pooled /= sum(m.shape[0] - 1 for m in users.values())
        means = np.stack([m.mean(axis=0) for m in users.values()])
        np.testing.assert_allclose(si, pooled, atol=1e-12)
        np.testing.assert_allclose(sp, means.var(axis=0, ddof=1), atol=1e-12)


class TestGalleryContracts:
    def test_single_user_rejected(self):
        with pytest.raises(GalleryError):
            Gallery.from_dict({0: np.zeros((2, 3))})

    def test_single_template_rejected(self):
        with pytest.raises(GalleryError):
            Gallery.from_dict({0: np.zeros((1, 3)), 1: np.zeros((2, 3))})

    def test_mismatched_length_rejected(self):
        with pytest.raises(GalleryError):
            Gallery.from_dict({0: np.zeros((2, 3)), 1: np.zeros((2, 4))})


class TestSelectComponents:
    def test_threshold_one_keeps_everything_with_variance(self):
        rng = np.random.default_rng(2)
        model = random_model(rng, dim=20)
        selected = select_components(model, 1.0)
        np.testing.assert_array_equal(selected, np.arange(20))

    def test_direct_comparison(self):
        si = np.array([0.2, 0.9, 0.5])
        sp = 1.0 - si
        model = BdmModel(si, sp, si.copy(), np.array([]), 0.5)
        np.testing.assert_array_equal(select_components(model, 0.5), [0, 2])

    def test_zero_total_variance_discarded(self):
        si = np.array([0.0, 1.0])
        sp = np.array([0.0, 1.0])
        ratios = dispersion_ratios(si, sp)
        model = BdmModel(si, sp, ratios, np.array([]), 1.0)
        np.testing.assert_array_equal(select_components(model, 1.0), [1])

    def test_empty_selection_raises(self):
        si = np.array([1.0, 1.0])
        sp = np.array([0.0, 0.0])
        model = BdmModel(si, sp, dispersion_ratios(si, sp), np.array([]), 0.5)
        with pytest.raises(EmptySelectionError):
            select_components(model, 0.5)

    def test_descending_thresholds_nest(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            model = random_model(rng, dim=30)
            grid = sorted(rng.uniform(0.05, 1.0, 6), reverse=True)
            previous = None
            for threshold in grid:
                try:
                    current = set(select_components(model, threshold).tolist())
                except EmptySelectionError:
                    current = set()
                if previous is not None:
                    assert current <= previous
                previous = current


class TestGScore:
    def test_hand_computed_single_component(self):
        model = BdmModel(np.array([1.0]), np.array([4.0]), np.array([0.2]),
                         np.array([0]), 1.0)
        g = g_score(np.array([0.0]), model)
        assert g == pytest.approx(-0.5 * math.log(5.0), abs=1e-6)
        assert g == pytest.approx(-0.8047, abs=1e-4)

    def test_zero_diff_favors_equal_when_users_differ(self):
        rng = np.random.default_rng(4)
        model = random_model(rng)
        g = g_score(np.zeros(model.feature_length), model)
        v_unequal, v_equal = model.pair_variances()
        expected = 0.5 * np.sum(np.log(v_equal / v_unequal))
        assert g == pytest.approx(expected, abs=1e-12)
        assert g < 0.0

    def test_large_differences_favor_unequal(self):
        model = BdmModel(np.array([1.0]), np.array([4.0]), np.array([0.2]),
                         np.array([0]), 1.0)
        assert g_score(np.array([100.0]), model) > 0.0
        assert g_score(np.array([-100.0]), model) > 0.0

    def test_even_and_monotone_in_magnitude(self):
        rng = np.random.default_rng(5)
        model = random_model(rng, dim=1)
        xs = np.linspace(0.0, 20.0, 50)
        values = [g_score(np.array([x]), model) for x in xs]
        for x, v in zip(xs, values):
            assert g_score(np.array([-x]), model) == pytest.approx(v, abs=1e-12)
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            model = random_model(rng, dim=8,
                                 threshold=float(rng.uniform(0.3, 1.0)))
            if model.selected.size == 0:
                continue
            diff = rng.normal(0.0, 3.0, 8)
            assert g_score(diff, model) == pytest.approx(
                g_oracle(diff, model), abs=1e-9
            )

    def test_displayed_variance_variant(self):
        model = BdmModel(np.array([1.0]), np.array([4.0]), np.array([0.2]),
                         np.array([0]), 1.0, double_within_variance=False)
        g = g_score(np.array([0.0]), model)
        assert g == pytest.approx(0.5 * math.log(2.0 / 9.0), abs=1e-12)

    def test_prior_ratio_shifts_score(self):
        si, sp = np.array([1.0]), np.array([4.0])
        base = BdmModel(si, sp, np.array([0.2]), np.array([0]), 1.0)
        shifted = BdmModel(si, sp, np.array([0.2]), np.array([0]), 1.0,
                           log_prior_ratio=0.7)
        x = np.array([1.3])
        assert g_score(x, shifted) == pytest.approx(g_score(x, base) + 0.7)

    def test_singular_component_rejected(self):
        model = BdmModel(np.array([0.0]), np.array([4.0]), np.array([0.0]),
                         np.array([0]), 1.0)
        with pytest.raises(SingularComponentError):
            g_score(np.array([1.0]), model)


def separable_gallery(rng, users=5, samples=3, dim=10, spread=10.0):
    data = {}
    for u in range(users):
        center = rng.normal(0.0, spread, dim)
        data[u] = center + rng.normal(0.0, 0.3, (samples, dim))
    return Gallery.from_dict(data)


class TestIdentify:
    def test_probe_equal_to_template_wins(self):
        rng = np.random.default_rng(7)
        gallery = separable_gallery(rng)
        model = train_bdm(gallery, 1.0)
        probe = gallery.templates[2][0]
        best, scores = identify(probe, gallery, model)
        assert best == gallery.user_ids[2]
        assert scores.shape == (5,)

    def test_two_user_hand_case(self):
        gallery = Gallery.from_dict({
            "a": np.array([[-1.0], [1.0]]),
            "b": np.array([[9.0], [11.0]]),
        })
        model = train_bdm(gallery, 1.0)
        best, scores = identify(np.array([1.0]), gallery, model)
        assert best == "a"
        assert scores[0] < scores[1]

    def test_tie_breaks_to_lowest_user_id(self):
        gallery = Gallery.from_dict({
            5: np.array([[0.0, 1.0], [0.0, -1.0]]),
            9: np.array([[0.0, 1.0], [0.0, -1.0]]),
        })
        si = np.array([1.0, 1.0])
        sp = np.array([2.0, 2.0])
        model = BdmModel(si, sp, dispersion_ratios(si, sp),
                         np.array([0, 1]), 1.0)
        best, scores = identify(np.array([0.3, 0.3]), gallery, model)
        assert scores[0] == scores[1]
        assert best == 5

    def test_rank1_is_perfect_on_enrolled_probes(self):
        rng = np.random.default_rng(8)
        gallery = separable_gallery(rng, users=8, samples=4)
        model = train_bdm(gallery, 1.0)
        for i, uid in enumerate(gallery.user_ids):
            for probe in gallery.templates[i]:
                best, _ = identify(probe, gallery, model)
                assert best == uid

    def test_argmin_invariant_under_increasing_transform(self):
        rng = np.random.default_rng(9)
        gallery = separable_gallery(rng)
        model = train_bdm(gallery, 1.0)
        probe = rng.normal(0.0, 5.0, gallery.feature_length)
        _, scores = identify(probe, gallery, model)
        transformed = np.exp(scores / 10.0)
        assert int(np.argmin(scores)) == int(np.argmin(transformed))

    def test_min_aggregate_option(self):
        rng = np.random.default_rng(10)
        gallery = separable_gallery(rng)
        model = train_bdm(gallery, 1.0)
        probe = gallery.templates[1][0]
        best, _ = identify(probe, gallery, model, aggregate="min")
        assert best == gallery.user_ids[1]


class TestTrainBdm:
    def test_all_identical_gallery_fails(self):
        v = np.ones(4)
        gallery = Gallery.from_dict({0: [v, v], 1: [v, v]})
        with pytest.raises(EmptySelectionError):
            train_bdm(gallery, 1.0)

    def test_noise_components_discarded(self):
        rng = np.random.default_rng(11)
        data = {}
        for u in range(4):
            informative = rng.normal(0.0, 5.0, 10)
            rows = []
            for _ in range(3):
                row = np.zeros(100)
                row[:10] = informative + rng.normal(0.0, 0.05, 10)
                row[10:] = 7.7  # constant -> zero variance everywhere
                rows.append(row)
            data[u] = np.stack(rows)
        model = train_bdm(Gallery.from_dict(data), 0.5)
        assert set(model.selected.tolist()) <= set(range(10))
        assert model.selected.size > 0

    def test_full_rank_gallery_keeps_all_at_threshold_one(self):
        rng = np.random.default_rng(12)
        gallery = separable_gallery(rng, users=4, samples=3, dim=16)
        model = train_bdm(gallery, 1.0)
        assert model.selected.size == 16

    def test_model_json_roundtrip(self, tmp_path):
        rng = np.random.default_rng(13)
        gallery = separable_gallery(rng)
        model = train_bdm(gallery, 0.8, log_prior_ratio=0.1,
                          double_within_variance=False)
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        np.testing.assert_allclose(back.sigma_i_sq, model.sigma_i_sq)
        np.testing.assert_allclose(back.sigma_p_sq, model.sigma_p_sq)
        np.testing.assert_array_equal(back.selected, model.selected)
        assert back.sigma_threshold == model.sigma_threshold
        assert back.log_prior_ratio == model.log_prior_ratio
        assert back.double_within_variance == model.double_within_variance
        probe = rng.normal(0.0, 2.0, gallery.feature_length)
        assert g_score(probe, back) == pytest.approx(g_score(probe, model))
