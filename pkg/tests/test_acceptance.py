"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside pytest's own verdicts.  Every tolerance is pinned here.
"""

import math
import time

import numpy as np
import pytest

from thermohand import fusion
from thermohand.bdm import BdmModel, Gallery, dispersion_ratios, g_score, train_bdm
from thermohand.evaluate import PipelineConfig, run_evaluation
from thermohand.features import dct2, idct2
from thermohand.imagecore import GrayImage
from thermohand.regions import RegionKind
from thermohand.segmentation import (
    HAND_ABOVE,
    RegistrationConfig,
    SimilarityTransform,
    _make_objective,
    apply_similarity,
    binarize,
    dice,
    otsu_threshold,
    register_masks,
    segment_thermal,
)
from thermohand.synth import SyntheticConfig, generate_dataset


def report(criterion: str, detail: str) -> None:
    print(f"[PASS] {criterion}: {detail}", flush=True)


# --- criterion 1: DCT oracle equivalence ---------------------------------

def dct2_reference(f: np.ndarray) -> np.ndarray:
    """Direct double-sum evaluation of the transform definition.

    Cosine tables come straight from cos(pi (2x+1) u / 2N); the double sum
    is einsum-evaluated but structurally the O(N^4) definition.
    """
    h, w = f.shape
    x = np.arange(h)
    y = np.arange(w)
    cos_x = np.cos(np.pi * np.outer(np.arange(h), 2 * x + 1) / (2.0 * h))
    cos_y = np.cos(np.pi * np.outer(np.arange(w), 2 * y + 1) / (2.0 * w))
    alpha_u = np.where(np.arange(h) == 0, math.sqrt(1.0 / h), math.sqrt(2.0 / h))
    alpha_v = np.where(np.arange(w) == 0, math.sqrt(1.0 / w), math.sqrt(2.0 / w))
    direct = np.einsum("xy,ux,vy->uv", f, cos_x, cos_y)
    return alpha_u[:, None] * alpha_v[None, :] * direct


def test_criterion_1_dct_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_fwd = worst_inv = worst_parseval = 0.0
    for _ in range(100):
        f = rng.random((16, 16))
        coeffs = dct2(f)
        worst_fwd = max(worst_fwd, float(np.abs(coeffs - dct2_reference(f)).max()))
        worst_inv = max(worst_inv, float(np.abs(idct2(coeffs) - f).max()))
        e_in, e_out = float(np.sum(f * f)), float(np.sum(coeffs * coeffs))
        worst_parseval = max(worst_parseval, abs(e_in - e_out) / e_in)
    elapsed = time.perf_counter() - start
    assert worst_fwd <= 1e-9
    assert worst_inv <= 1e-9
    assert worst_parseval <= 1e-9
    assert elapsed < 5.0
    report("criterion 1 (DCT oracle)",
           f"100 images, max fwd err {worst_fwd:.2e}, inv err {worst_inv:.2e}, "
           f"Parseval {worst_parseval:.2e}, {elapsed:.2f}s")


# --- criterion 2: Otsu oracle equality -----------------------------------

def otsu_reference_bin(pixels: np.ndarray, bins: int = 256) -> int:
    lo, hi = float(pixels.min()), float(pixels.max())
    hist, edges = np.histogram(pixels, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    variances = []
    for k in range(bins - 1):
        n0 = hist[: k + 1].sum()
        n1 = hist[k + 1 :].sum()
        if n0 == 0 or n1 == 0:
            variances.append(0.0)
            continue
        m0 = (hist[: k + 1] * centers[: k + 1]).sum() / n0
        m1 = (hist[k + 1 :] * centers[k + 1 :]).sum() / n1
        variances.append(float(n0) * float(n1) * (m0 - m1) ** 2)
    floor = max(variances) * (1.0 - 1e-9)
    return next(k for k, v in enumerate(variances) if v >= floor)


def test_criterion_2_otsu_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(102)
    cases = [rng.random((24, 24)) for _ in range(90)]
    for _ in range(10):
        lo_c, hi_c = rng.uniform(0.05, 0.35), rng.uniform(0.6, 0.95)
        spread = rng.uniform(0.01, 0.08)
        pick = rng.random((24, 24)) < rng.uniform(0.3, 0.7)
        cases.append(np.clip(np.where(pick, rng.normal(lo_c, spread, (24, 24)),
                                      rng.normal(hi_c, spread, (24, 24))), 0, 1))
    for pixels in cases:
        image = GrayImage(pixels)
        level, degenerate = otsu_threshold(image)
        assert not degenerate
        k = otsu_reference_bin(pixels)
        lo, hi = float(pixels.min()), float(pixels.max())
        width = (hi - lo) / 256
        expected = lo + (k + 0.5) * width
        assert level == pytest.approx(expected, abs=width * 1e-9)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report("criterion 2 (Otsu oracle)",
           f"100 histograms incl. 10 bimodal, exact bin agreement, {elapsed:.2f}s")


# --- criterion 3: registration recovery ----------------------------------

def registration_pair(seed: int):
    rng = np.random.default_rng(seed)
    cfg = SyntheticConfig(num_users=2, train_samples=1, test_samples=1,
                          rng_seed=seed, pose_translation=0.0, pose_rotation=0.0)
    mask = generate_dataset(cfg).samples[0].vis_mask
    truth = SimilarityTransform(math.radians(rng.uniform(-10, 10)),
                                rng.uniform(-10, 10), rng.uniform(-10, 10),
                                rng.uniform(0.9, 1.1))
    warped = apply_similarity(mask, truth, mask.width, mask.height)
    th = GrayImage(np.where(warped.pixels, 0.75, 0.2))
    return mask, th, truth


def test_criterion_3_registration_recovery():
    start = time.perf_counter()
    recovered = 0
    config = RegistrationConfig()
    for seed in range(50):
        mask, th, truth = registration_pair(seed)
        init = SimilarityTransform.identity()
        init_loss = _make_objective(config, mask, th)(init)
        result = register_masks(mask, th, init, config)
        assert result.objective_value <= init_loss
        t = result.transform
        if (abs(t.rotation - truth.rotation) <= math.radians(0.5)
                and abs(t.dx - truth.dx) <= 1.0
                and abs(t.dy - truth.dy) <= 1.0
                and abs(t.scale - truth.scale) <= 0.01 * truth.scale):
            recovered += 1
    elapsed = time.perf_counter() - start
    assert recovered >= 48
    assert elapsed < 60.0
    report("criterion 3 (registration recovery)",
           f"{recovered}/50 within 0.5deg/1px/1%, objective monotone, {elapsed:.1f}s")


# --- criterion 4: cold-finger segmentation -------------------------------

def test_criterion_4_cold_finger_segmentation():
    start = time.perf_counter()
    cfg = SyntheticConfig(num_users=15, train_samples=1, test_samples=1,
                          cold_finger_prob=1.0, rng_seed=104)
    samples = generate_dataset(cfg).samples
    assert len(samples) == 30
    worst_ours, worst_gap = 1.0, 1.0
    for s in samples:
        th_mask, _ = segment_thermal(s.vis, s.th, s.transform)
        ours = dice(th_mask, s.th_mask)
        level, _ = otsu_threshold(s.th)
        direct = dice(binarize(s.th, level, HAND_ABOVE), s.th_mask)
        assert ours >= 0.95
        assert ours > direct
        worst_ours = min(worst_ours, ours)
        worst_gap = min(worst_gap, ours - direct)
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report("criterion 4 (cold-finger segmentation)",
           f"30 samples, min Dice {worst_ours:.3f}, min margin over direct "
           f"Otsu {worst_gap:.3f}, {elapsed:.1f}s")


# --- criterion 5: matcher closed-form oracle ------------------------------

def gaussian_log_density(x: float, variance: float) -> float:
    return -0.5 * math.log(2.0 * math.pi * variance) - x * x / (2.0 * variance)


def g_reference(diff: np.ndarray, model: BdmModel) -> float:
    total = 0.0
    for k in model.selected:
        si, sp = model.sigma_i_sq[k], model.sigma_p_sq[k]
        v_unequal = 2.0 * (sp + si) if model.double_within_variance else 2.0 * sp + si
        total += gaussian_log_density(float(diff[k]), v_unequal)
        total -= gaussian_log_density(float(diff[k]), 2.0 * si)
    return total + model.log_prior_ratio


def test_criterion_5_matcher_oracle():
    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(2, 16))
        si = rng.uniform(0.05, 3.0, dim)
        sp = rng.uniform(0.0, 6.0, dim)
        ratios = dispersion_ratios(si, sp)
        threshold = float(rng.uniform(0.3, 1.0))
        selected = np.nonzero(ratios <= threshold)[0]
        if selected.size == 0:
            continue
        model = BdmModel(si, sp, ratios, selected, threshold,
                         log_prior_ratio=float(rng.uniform(-0.5, 0.5)))
        diff = rng.normal(0.0, 2.5, dim)
        worst = max(worst, abs(g_score(diff, model) - g_reference(diff, model)))
    assert worst <= 1e-9
    hand_model = BdmModel(np.array([1.0]), np.array([4.0]), np.array([0.2]),
                          np.array([0]), 1.0)
    g = g_score(np.array([0.0]), hand_model)
    assert g == pytest.approx(-0.5 * math.log(5.0), abs=1e-6)
    report("criterion 5 (matcher closed-form oracle)",
           f"1000 cases, max |diff| {worst:.2e}; 1-D hand case g={g:.4f}")


# --- criterion 6: selection monotonicity ----------------------------------

def test_criterion_6_selection_nesting():
    rng = np.random.default_rng(106)
    from thermohand.bdm import EmptySelectionError, select_components

    for _ in range(20):
        users = {u: rng.normal(rng.normal(0, 3), 1.0, (3, 24))
                 for u in range(4)}
        model = train_bdm(Gallery.from_dict(users), 1.0)
        grid = sorted(rng.uniform(0.02, 1.0, 8), reverse=True)
        previous = None
        for threshold in grid:
            try:
                current = set(select_components(model, threshold).tolist())
            except EmptySelectionError:
                current = set()
            if previous is not None:
                assert current <= previous
            previous = current
    report("criterion 6 (selection monotonicity)",
           "20 trained models, descending thresholds give nested selections")


# --- criterion 7: end-to-end synthetic identification ---------------------

def test_criterion_7_end_to_end_identification():
    start = time.perf_counter()
    clean = SyntheticConfig(num_users=20, rng_seed=107)
    vis_report = run_evaluation(generate_dataset(clean),
                                PipelineConfig(region=RegionKind.WHOLE_HAND,
                                               feature_length=100,
                                               sigma_threshold=0.9),
                                spectra=("vis",))
    vis_row = vis_report.row("vis")
    assert vis_row.mean >= 95.0

    drifted = SyntheticConfig(num_users=20, rng_seed=107, th_session_drift=0.08)
    th_report = run_evaluation(generate_dataset(drifted),
                               PipelineConfig(region=RegionKind.WHOLE_HAND,
                                              feature_length=100,
                                              sigma_threshold=0.9),
                               spectra=("th",))
    th_row = th_report.row("th")
    assert th_row.rates[0] >= th_row.rates[4]
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    report("criterion 7 (end-to-end identification)",
           f"VIS mean {vis_row.mean:.1f}% (>=95); drifted TH test1 "
           f"{th_row.rates[0]:.1f}% >= test5 {th_row.rates[4]:.1f}%, {elapsed:.1f}s")


# --- criterion 8: fusion endpoint identity and interior optimum -----------

def test_criterion_8_fusion_endpoints_and_interior():
    rng = np.random.default_rng(108)
    truth = list(rng.integers(0, 6, 18))
    vis = fusion.ScoreMatrix(rng.normal(0, 2, (18, 6)), fusion.LOWER)
    th = fusion.ScoreMatrix(rng.normal(0, 2, (18, 6)), fusion.LOWER)
    for alpha, single in ((0.0, th), (1.0, vis)):
        fused = fusion.weighted_combine(vis, th, alpha)
        assert fusion.decide(fused) == fusion.decide(single)
    sweep = dict(fusion.alpha_sweep(vis, th, truth, [0.0, 1.0]))
    assert sweep[0.0] == fusion.identification_rate(fusion.decide(th), truth)
    assert sweep[1.0] == fusion.identification_rate(fusion.decide(vis), truth)

    comp_truth = [0, 1, 0, 1]
    comp_vis = fusion.ScoreMatrix(np.array([
        [0.48, 0.52], [0.52, 0.48], [0.9, 0.1], [0.1, 0.9],
    ]), fusion.HIGHER)
    comp_th = fusion.ScoreMatrix(np.array([
        [0.9, 0.1], [0.1, 0.9], [0.48, 0.52], [0.52, 0.48],
    ]), fusion.HIGHER)
    rates = dict(fusion.alpha_sweep(comp_vis, comp_th, comp_truth,
                                    [0.0, 0.5, 1.0]))
    assert rates[0.5] > rates[0.0]
    assert rates[0.5] > rates[1.0]
    report("criterion 8 (fusion endpoints)",
           f"endpoint decisions bitwise-equal; interior alpha 0.5 rate "
           f"{rates[0.5]:.0f}% beats endpoints {rates[0.0]:.0f}%/{rates[1.0]:.0f}%")


# --- criterion 9: determinism ---------------------------------------------

def test_criterion_9_determinism(tmp_path):
    from thermohand.cli import main

    toml = tmp_path / "gen.toml"
    toml.write_text("num_users = 4\ntrain_samples = 2\ntest_samples = 2\n"
                    "image_size = 96\nrng_seed = 109\nsensor_dx = 3.0\n"
                    "sensor_dy = -2.0\npose_translation = 2.0\n")
    eval_toml = tmp_path / "eval.toml"
    eval_toml.write_text('feature_length = 48\ntrain_samples = 2\n'
                         'spectra = ["vis", "th"]\nfusion_rule = "mean"\n')
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["generate", "--config", str(toml), "--out", str(out)]) == 0
        rpt = tmp_path / f"report_{run}.csv"
        assert main(["evaluate", "--manifest", str(out / "manifest.csv"),
                     "--config", str(eval_toml), "--out", str(rpt)]) == 0
        reports.append(rpt.read_bytes())
    assert reports[0] == reports[1]
    report("criterion 9 (determinism)",
           "two seeded pipeline runs produced byte-identical reports")
