"""Command-line front end for the dual-spectrum hand pipeline.

Subcommands: generate, segment, extract, train, identify, evaluate, fuse.
Configs are TOML, tabular outputs are CSV; every failure exits nonzero
with a one-line diagnostic.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import bdm, evaluate, fusion, synth
from .imagecore import load_image, save_image, save_mask
from .regions import RegionKind
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
    transform_to_text,
)


def _read_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def cmd_generate(args) -> int:
    cfg = synth.config_from_dict(_read_toml(args.config)) if args.config \
        else synth.SyntheticConfig()
    dataset = synth.generate_dataset(cfg)
    manifest = synth.write_dataset(dataset, args.out)
    print(f"wrote {len(dataset.samples)} samples to {manifest}")
    return 0


def cmd_segment(args) -> int:
    vis = load_image(args.vis, 8)
    th = load_image(args.th, 16)
    if args.calib:
        transform = transform_from_text(Path(args.calib).read_text())
    elif args.register:
        level, _ = otsu_threshold(vis)
        vis_mask = majority_filter(binarize(vis, level, HAND_ABOVE))
        result = register_masks(vis_mask, th, SimilarityTransform.identity(),
                                RegistrationConfig())
        transform = result.transform
        print(f"registered: objective {result.objective_value:.6f} "
              f"after {result.iterations} iterations "
              f"(converged: {result.converged})")
    else:
        transform = SimilarityTransform.identity()
    th_mask, masked_th = segment_thermal(vis, th, transform,
                                         clean=not args.no_clean)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    level, _ = otsu_threshold(vis)
    vis_mask = binarize(vis, level, HAND_ABOVE)
    if not args.no_clean:
        vis_mask = majority_filter(vis_mask)
    save_mask(vis_mask, out / "vis_mask.pgm")
    save_mask(th_mask, out / "th_mask.pgm")
    save_image(masked_th, out / "masked_th.pgm", 16)
    (out / "transform.txt").write_text(transform_to_text(transform))
    print(f"wrote masks and masked thermal image to {out}")
    return 0


def _feature_header(length: int) -> list[str]:
    return (["user_id", "session", "sample", "region", "spectrum"]
            + [f"v{i + 1}" for i in range(length)])


def cmd_extract(args) -> int:
    dataset = evaluate.load_manifest(Path(args.indir) / "manifest.csv",
                                     args.train_samples)
    cfg = evaluate.PipelineConfig(region=RegionKind(args.region),
                                  feature_length=args.length)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_feature_header(args.length))
        for sample in dataset.samples:
            for spectrum in ("vis", "th"):
                vec, _ = evaluate.sample_features(sample, spectrum, cfg, dataset)
                writer.writerow(
                    [sample.user_id, sample.session, sample.index + 1,
                     args.region, spectrum]
                    + [format(v, ".17g") for v in vec]
                )
    print(f"wrote features for {len(dataset.samples)} samples to {args.out}")
    return 0


def _load_feature_rows(path, spectrum, region):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:5] != ["user_id", "session", "sample", "region", "spectrum"]:
        raise ValueError(f"{path}: expected a feature CSV header")
    out = []
    for row in rows[1:]:
        if spectrum and row[4] != spectrum:
            continue
        if region and row[3] != region:
            continue
        out.append((int(row[0]), int(row[2]), np.array([float(v) for v in row[5:]])))
    if not out:
        raise ValueError(f"{path}: no rows match spectrum={spectrum} region={region}")
    return out


def _gallery_from_rows(rows, train_samples):
    users: dict = {}
    for user_id, sample, vec in rows:
        if sample <= train_samples:
            users.setdefault(user_id, []).append(vec)
    return bdm.Gallery.from_dict({u: np.stack(v) for u, v in users.items()})


def cmd_train(args) -> int:
    rows = _load_feature_rows(args.features, args.spectrum, args.region)
    gallery = _gallery_from_rows(rows, args.train_samples)
    model = bdm.train_bdm(gallery, args.sigma_threshold)
    bdm.save_model(model, args.out)
    print(f"trained on {len(gallery.user_ids)} users; "
          f"selected {model.selected.size}/{model.feature_length} components; "
          f"model -> {args.out}")
    return 0


def cmd_identify(args) -> int:
    rows = _load_feature_rows(args.gallery, args.spectrum, args.region)
    gallery = _gallery_from_rows(rows, args.train_samples)
    model = bdm.load_model(args.model)
    parts = args.probe.split(",")
    if len(parts) != 3:
        raise ValueError("--probe must be user_id,session,sample")
    uid, session, number = (int(p) for p in parts)
    probe = None
    with open(args.gallery, newline="") as fh:
        all_rows = list(csv.reader(fh))
    for row in all_rows[1:]:
        if (int(row[0]), int(row[1]), int(row[2])) == (uid, session, number) \
                and (not args.spectrum or row[4] == args.spectrum):
            probe = np.array([float(v) for v in row[5:]])
            break
    if probe is None:
        raise ValueError(f"probe {args.probe} not found in {args.gallery}")
    best, scores = bdm.identify(probe, gallery, model)
    order = np.argsort(scores, kind="stable")
    print("rank user_id score")
    for rank, i in enumerate(order, start=1):
        print(f"{rank} {gallery.user_ids[i]} {scores[i]:.6f}")
    print(f"identified: {best}")
    return 0


def cmd_evaluate(args) -> int:
    doc = _read_toml(args.config) if args.config else {}
    spectra = tuple(doc.pop("spectra", ["vis"]))
    rule = doc.pop("fusion_rule", None)
    alpha = doc.pop("alpha", None)
    train_samples = int(doc.pop("train_samples", 5))
    cfg = evaluate.config_from_dict(doc)
    dataset = evaluate.load_manifest(args.manifest, train_samples)
    report = evaluate.run_evaluation(dataset, cfg, spectra, rule, alpha)
    evaluate.write_report(report, args.out)
    if args.dump_scores:
        evaluate.export_scores(dataset, cfg, args.dump_scores)
    for row in report.rows:
        rates = " ".join(f"{r:5.1f}" for r in row.rates)
        print(f"{row.label:>16} [{row.region}]: {rates}  "
              f"mean {row.mean:5.1f} std {row.std:4.1f}")
    print(f"report -> {args.out}")
    return 0


def _parse_sweep(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError("--sweep must be start:step:stop")
    start, step, stop = (float(p) for p in parts)
    if step <= 0:
        raise ValueError("sweep step must be positive")
    grid = []
    k = 0
    while True:
        v = start + k * step
        if v > stop + 1e-12:
            break
        grid.append(min(v, stop))
        k += 1
    return grid


def _truth_from_probe_ids(probe_ids):
    truth = []
    for pid in probe_ids:
        parts = str(pid).split("|")
        if len(parts) < 2:
            raise ValueError(
                f"probe id {pid!r} lacks the 't<test>|<true_class>' form "
                "needed to derive ground truth for a sweep"
            )
        truth.append(parts[1])
    return truth


def cmd_fuse(args) -> int:
    vis_m = fusion.load_scores(args.vis_scores, args.polarity)
    th_m = fusion.load_scores(args.th_scores, args.polarity)
    if args.sweep:
        grid = _parse_sweep(args.sweep)
        truth = _truth_from_probe_ids(vis_m.probe_ids)
        tests = sorted({str(p).split("|")[0] for p in vis_m.probe_ids})
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha"]
                            + [f"rate_test{t.lstrip('t')}" for t in tests]
                            + ["mean", "std"])
            for alpha in grid:
                fused = fusion.weighted_combine(vis_m, th_m, alpha)
                decisions = fusion.decide(fused)
                rates = []
                for t in tests:
                    sel = [i for i, p in enumerate(vis_m.probe_ids)
                           if str(p).split("|")[0] == t]
                    rates.append(fusion.identification_rate(
                        [decisions[i] for i in sel], [truth[i] for i in sel]))
                writer.writerow([format(alpha, "g")]
                                + [format(r, ".6f") for r in rates]
                                + [format(float(np.mean(rates)), ".6f"),
                                   format(float(np.std(rates)), ".6f")])
        print(f"sweep -> {args.out}")
        return 0
    if args.rule == "weighted":
        if args.alpha is None:
            raise ValueError("--rule weighted needs --alpha (or --sweep)")
        fused = fusion.weighted_combine(vis_m, th_m, args.alpha)
        fusion.save_scores(fused, args.out)
    elif args.rule == "vote":
        decisions = fusion.majority_vote([vis_m, th_m])
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["probe_id", "class_id", "score"])
            votes_per_probe = [
                [d[i] for d in (fusion.decide(vis_m), fusion.decide(th_m))]
                for i in range(vis_m.probes)
            ]
            for i, pid in enumerate(vis_m.probe_ids):
                writer.writerow([pid, decisions[i],
                                 votes_per_probe[i].count(decisions[i])])
    else:
        a = fusion.normalize_scores(fusion.to_higher_is_better(vis_m), "minmax")
        b = fusion.normalize_scores(fusion.to_higher_is_better(th_m), "minmax")
        fused = fusion.combine_scores([a, b], args.rule)
        fusion.save_scores(fused, args.out)
    print(f"fused ({args.rule}) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermohand",
        description="Dual-spectrum (visible + thermal) hand identification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic dataset")
    p.add_argument("--config", help="TOML with SyntheticConfig keys")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("segment", help="VIS-guided thermal segmentation")
    p.add_argument("--vis", required=True)
    p.add_argument("--th", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--calib", help="transform file (rotation dx dy scale)")
    group.add_argument("--register", action="store_true",
                       help="find the transform by simplex search")
    p.add_argument("--no-clean", action="store_true",
                   help="skip the 3x3 majority mask cleanup")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("extract", help="region DCT features for a dataset")
    p.add_argument("--in", dest="indir", required=True,
                   help="dataset directory containing manifest.csv")
    p.add_argument("--region", choices=[k.value for k in RegionKind],
                   default="hand")
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--train-samples", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the dispersion matcher")
    p.add_argument("--features", required=True)
    p.add_argument("--sigma-threshold", type=float, required=True)
    p.add_argument("--spectrum", choices=["vis", "th"], default="vis")
    p.add_argument("--region", default=None)
    p.add_argument("--train-samples", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("identify", help="rank gallery users for one probe")
    p.add_argument("--model", required=True)
    p.add_argument("--probe", required=True, help="user_id,session,sample")
    p.add_argument("--gallery", required=True, help="feature CSV")
    p.add_argument("--spectrum", choices=["vis", "th"], default="vis")
    p.add_argument("--region", default=None)
    p.add_argument("--train-samples", type=int, default=5)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("evaluate", help="run the train/test protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="TOML with PipelineConfig keys")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-scores", help="also write per-spectrum score CSVs here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fuse", help="combine two score matrices")
    p.add_argument("--vis-scores", required=True)
    p.add_argument("--th-scores", required=True)
    p.add_argument("--rule", choices=list(evaluate.FUSION_RULES), default="weighted")
    p.add_argument("--alpha", type=float)
    p.add_argument("--sweep", help="start:step:stop grid of alpha values")
    p.add_argument("--polarity", choices=[fusion.LOWER, fusion.HIGHER],
                   default=fusion.LOWER)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
