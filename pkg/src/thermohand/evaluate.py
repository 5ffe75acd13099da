"""The enrollment/test protocol and result-table emission.

Per user the first five samples enroll the gallery and each later sample is
one numbered test, so a report row carries five per-test identification
rates plus their mean and population standard deviation, the selected
component count, and the threshold.  The same machinery accepts datasets
loaded from a manifest of PGM files, so a real acquisition laid out the
same way can be evaluated without code changes.
"""

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import bdm, fusion
from .features import dct2, zigzag_select
from .imagecore import GrayImage, load_image
from .regions import FingerSeparationError, RegionKind, extract_region, normalize_hand
from .segmentation import (
    HAND_ABOVE,
    RegistrationConfig,
    SimilarityTransform,
    binarize,
    majority_filter,
    otsu_threshold,
    register_masks,
    segment_thermal,
    transform_from_text,
)
from .synth import MANIFEST_COLUMNS, SyntheticDataset


SPECTRA = ("vis", "th")
FUSION_RULES = fusion.SCORE_RULES + ("vote", "weighted")


@dataclass(frozen=True)
class PipelineConfig:
    """One evaluation cell: region, feature length, matcher settings."""

    region: RegionKind = RegionKind.WHOLE_HAND
    feature_length: int = 100
    sigma_threshold: float = 0.90
    normalized_size: int = 128
    mask_background: bool = True
    scan_order: str = "zigzag"
    aggregate: str = "mean"
    double_within_variance: bool = True
    calibration: str = "sample"  # "sample" | "base" | "register"
    score_normalization: str = "none"  # for the weighted rule


@dataclass(frozen=True)
class EvalSample:
    user_id: int
    index: int
    session: int
    split: str
    test_number: int
    vis: GrayImage
    th: GrayImage
    transform: SimilarityTransform | None


@dataclass(frozen=True)
class EvalDataset:
    samples: tuple
    base_transform: SimilarityTransform | None = None

    def users(self) -> list:
        return sorted({s.user_id for s in self.samples})

    def test_numbers(self) -> list:
        return sorted({s.test_number for s in self.samples if s.test_number > 0})


def as_eval_dataset(dataset: SyntheticDataset) -> EvalDataset:
    samples = tuple(
        EvalSample(s.user_id, s.index, s.session, s.split, s.test_number,
                   s.vis, s.th, s.transform)
        for s in dataset.samples
    )
    return EvalDataset(samples, dataset.base_transform)


def load_manifest(manifest_path, train_samples: int = 5) -> EvalDataset:
    """Read a manifest CSV of PGM paths into an evaluation dataset.

    VIS files are 8-bit, TH files 16-bit; mask and transform columns may be
    empty.  Samples numbered 1..train_samples are the enrollment split.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    with open(manifest_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][: len(MANIFEST_COLUMNS)] != MANIFEST_COLUMNS:
        raise ValueError(
            f"{manifest_path}: expected header {','.join(MANIFEST_COLUMNS)}"
        )
    samples = []
    for row in rows[1:]:
        user_id, session, number = int(row[0]), int(row[1]), int(row[2])
        vis = load_image(root / row[3], 8)
        th = load_image(root / row[4], 16)
        transform = None
        if len(row) > 6 and row[6]:
            transform = transform_from_text((root / row[6]).read_text())
        index = number - 1
        split = "train" if index < train_samples else "test"
        samples.append(EvalSample(
            user_id, index, session, split,
            (index - train_samples + 1) if split == "test" else 0,
            vis, th, transform,
        ))
    return EvalDataset(tuple(samples))


def _thermal_transform(sample: EvalSample, dataset: EvalDataset,
                       cfg: PipelineConfig, vis_mask) -> SimilarityTransform:
    if cfg.calibration == "sample" and sample.transform is not None:
        return sample.transform
    if cfg.calibration in ("sample", "base") and dataset.base_transform is not None:
        return dataset.base_transform
    if cfg.calibration == "register":
        return register_masks(vis_mask, sample.th,
                              SimilarityTransform.identity(),
                              RegistrationConfig()).transform
    if sample.transform is not None:
        return sample.transform
    raise ValueError(
        f"no calibration transform available for user {sample.user_id} "
        f"sample {sample.index + 1}; use calibration='register'"
    )


def sample_features(sample: EvalSample, spectrum: str, cfg: PipelineConfig,
                    dataset: EvalDataset) -> tuple[np.ndarray, bool]:
    """Feature vector for one sample and spectrum.

    Returns (vector, finger_fallback): when the index finger cannot be
    isolated the whole-hand region substitutes and the flag is set.
    """
    level, _ = otsu_threshold(sample.vis)
    vis_mask = majority_filter(binarize(sample.vis, level, HAND_ABOVE))
    if spectrum == "vis":
        image, mask = sample.vis, vis_mask
    elif spectrum == "th":
        transform = _thermal_transform(sample, dataset, cfg, vis_mask)
        mask, _ = segment_thermal(sample.vis, sample.th, transform)
        image = sample.th
    else:
        raise ValueError(f"unknown spectrum {spectrum!r}")
    if cfg.mask_background:
        image = GrayImage(np.where(mask.pixels, image.pixels, 0.0))
    hand = normalize_hand(image, mask, cfg.normalized_size)
    fallback = False
    try:
        region = extract_region(hand, cfg.region)
    except FingerSeparationError:
        region = extract_region(hand, RegionKind.WHOLE_HAND)
        fallback = True
    coeffs = dct2(region.pixels)
    return zigzag_select(coeffs, cfg.feature_length, cfg.scan_order), fallback


@dataclass(frozen=True)
class ReportRow:
    label: str
    region: str
    rates: tuple
    mean: float
    std: float
    selected: int | None = None
    sigma_threshold: float | None = None
    fallbacks: int = 0


@dataclass(frozen=True)
class EvaluationReport:
    rows: tuple

    def row(self, label: str) -> ReportRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


REPORT_COLUMNS = ["label", "region", "test1", "test2", "test3", "test4",
                  "test5", "mean", "std", "selected", "threshold", "fallbacks"]


def write_report(report: EvaluationReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in report.rows:
            rates = [format(x, ".6f") for x in r.rates]
            rates += [""] * (5 - len(rates))
            writer.writerow(
                [r.label, r.region] + rates
                + [format(r.mean, ".6f"), format(r.std, ".6f"),
                   "" if r.selected is None else r.selected,
                   "" if r.sigma_threshold is None else format(r.sigma_threshold, ".6g"),
                   r.fallbacks]
            )


@dataclass
class _SpectrumRun:
    model: bdm.BdmModel
    gallery: bdm.Gallery
    matrices: dict  # test_number -> ScoreMatrix (lower is better)
    fallbacks: int


def _run_spectrum(dataset: EvalDataset, spectrum: str,
                  cfg: PipelineConfig) -> _SpectrumRun:
    users = dataset.users()
    feats: dict = {}
    fallbacks = 0
    for s in dataset.samples:
        vec, fell = sample_features(s, spectrum, cfg, dataset)
        feats[(s.user_id, s.index)] = vec
        fallbacks += int(fell)
    train = {u: np.stack([feats[(s.user_id, s.index)]
                          for s in dataset.samples
                          if s.user_id == u and s.split == "train"])
             for u in users}
    gallery = bdm.Gallery.from_dict(train)
    model = bdm.train_bdm(gallery, cfg.sigma_threshold,
                          double_within_variance=cfg.double_within_variance)
    matrices = {}
    for k in dataset.test_numbers():
        probes = sorted((s for s in dataset.samples if s.test_number == k),
                        key=lambda s: s.user_id)
        rows = []
        for s in probes:
            _, scores = bdm.identify(feats[(s.user_id, s.index)], gallery,
                                     model, cfg.aggregate)
            rows.append(scores)
        matrices[k] = fusion.ScoreMatrix(
            np.stack(rows), fusion.LOWER,
            class_ids=tuple(users),
            probe_ids=tuple(f"t{k}|{s.user_id}" for s in probes),
        )
    return _SpectrumRun(model, gallery, matrices, fallbacks)


def _rates(matrices: dict, truth_per_test: dict) -> tuple:
    return tuple(
        fusion.identification_rate(fusion.decide(matrices[k]), truth_per_test[k])
        for k in sorted(matrices)
    )


def _fuse_test(vis_m, th_m, rule: str, alpha: float | None,
               score_normalization: str):
    if rule == "weighted":
        if alpha is None:
            raise ValueError("the weighted rule needs an alpha")
        a = fusion.normalize_scores(vis_m, score_normalization)
        b = fusion.normalize_scores(th_m, score_normalization)
        return fusion.decide(fusion.weighted_combine(a, b, alpha))
    if rule == "vote":
        return fusion.majority_vote([vis_m, th_m])
    a = fusion.normalize_scores(fusion.to_higher_is_better(vis_m), "minmax")
    b = fusion.normalize_scores(fusion.to_higher_is_better(th_m), "minmax")
    return fusion.decide(fusion.combine_scores([a, b], rule))


def run_evaluation(dataset: EvalDataset | SyntheticDataset,
                   cfg: PipelineConfig,
                   spectra: tuple = ("vis",),
                   fusion_rule: str | None = None,
                   alpha: float | None = None) -> EvaluationReport:
    """Train on the enrollment split, score every numbered test, and
    build per-spectrum rows plus an optional fused row."""
    if isinstance(dataset, SyntheticDataset):
        dataset = as_eval_dataset(dataset)
    for spectrum in spectra:
        if spectrum not in SPECTRA:
            raise ValueError(f"unknown spectrum {spectrum!r}")
    if fusion_rule is not None and fusion_rule not in FUSION_RULES:
        raise ValueError(f"unknown fusion rule {fusion_rule!r}")

    runs = {sp: _run_spectrum(dataset, sp, cfg) for sp in spectra}
    users = dataset.users()
    truth = {k: [s.user_id for s in sorted(
                (s for s in dataset.samples if s.test_number == k),
                key=lambda s: s.user_id)]
             for k in dataset.test_numbers()}

    rows = []
    region = cfg.region.value
    for sp in spectra:
        run = runs[sp]
        rates = _rates(run.matrices, truth)
        rows.append(ReportRow(
            label=sp, region=region, rates=rates,
            mean=float(np.mean(rates)), std=float(np.std(rates)),
            selected=int(run.model.selected.size),
            sigma_threshold=cfg.sigma_threshold,
            fallbacks=run.fallbacks,
        ))
    if fusion_rule is not None:
        if set(spectra) != {"vis", "th"}:
            raise ValueError("fusion needs both the vis and th spectra")
        rates = []
        for k in sorted(truth):
            decisions = _fuse_test(runs["vis"].matrices[k], runs["th"].matrices[k],
                                   fusion_rule, alpha, cfg.score_normalization)
            rates.append(fusion.identification_rate(decisions, truth[k]))
        rates = tuple(rates)
        label = f"vis+th:{fusion_rule}"
        if fusion_rule == "weighted":
            label += f"@{alpha:g}"
        rows.append(ReportRow(
            label=label, region=region, rates=rates,
            mean=float(np.mean(rates)), std=float(np.std(rates)),
        ))
    return EvaluationReport(tuple(rows))


def sweep_weighted_rule(dataset: EvalDataset | SyntheticDataset,
                        cfg: PipelineConfig, grid) -> list[dict]:
    """Per-alpha identification rates of the trained rule, one row per
    alpha with the five per-test rates, their mean, and population std."""
    if isinstance(dataset, SyntheticDataset):
        dataset = as_eval_dataset(dataset)
    runs = {sp: _run_spectrum(dataset, sp, cfg) for sp in ("vis", "th")}
    truth = {k: [s.user_id for s in sorted(
                (s for s in dataset.samples if s.test_number == k),
                key=lambda s: s.user_id)]
             for k in dataset.test_numbers()}
    out = []
    for alpha in grid:
        rates = []
        for k in sorted(truth):
            decisions = _fuse_test(runs["vis"].matrices[k], runs["th"].matrices[k],
                                   "weighted", float(alpha), cfg.score_normalization)
            rates.append(fusion.identification_rate(decisions, truth[k]))
        out.append({
            "alpha": float(alpha),
            "rates": tuple(rates),
            "mean": float(np.mean(rates)),
            "std": float(np.std(rates)),
        })
    return out


def export_scores(dataset: EvalDataset | SyntheticDataset, cfg: PipelineConfig,
                  out_dir) -> dict:
    """Dump the stacked per-test score matrices for both spectra as CSVs
    (vis_scores.csv, th_scores.csv) whose probe ids carry the test number
    and true class as "t<k>|<user>".  Returns {spectrum: path}."""
    if isinstance(dataset, SyntheticDataset):
        dataset = as_eval_dataset(dataset)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for sp in ("vis", "th"):
        run = _run_spectrum(dataset, sp, cfg)
        stacked = np.vstack([run.matrices[k].scores for k in sorted(run.matrices)])
        probe_ids = sum((list(run.matrices[k].probe_ids)
                         for k in sorted(run.matrices)), [])
        matrix = fusion.ScoreMatrix(stacked, fusion.LOWER,
                                    class_ids=run.matrices[min(run.matrices)].class_ids,
                                    probe_ids=tuple(probe_ids))
        path = out / f"{sp}_scores.csv"
        fusion.save_scores(matrix, path)
        paths[sp] = path
    return paths


def config_from_dict(doc: dict) -> PipelineConfig:
    """Build a pipeline config from a parsed TOML mapping."""
    doc = dict(doc)
    if "region" in doc:
        doc["region"] = RegionKind(doc["region"])
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
    return PipelineConfig(**doc)
