"""Command-line interface.

Commands: synth, preprocess, train-encoder, train-decoder, train-color,
sample, evaluate, ablate. Runs are configured by a single JSON document
(every field defaulted); flags only override paths and seeds, keeping runs
reproducible from the config alone. Every command exits nonzero on error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .ablation import AblationTestSet, TrainedEncoderBundle, channel_ablation, region_ablation
from .checkpoint import Checkpoint, state_dict_to_tensors, tensors_to_state_dict
from .color import colorize
from .config import RunConfig, load_config
from .diffusion import make_schedule, sample
from .epoch_io import is_epoch_container, load_raw_recording, save_epochs
from .metrics import CHAMFER_CONVENTION, EvalReport, chance_calibration, protocol_5sample
from .montage import DEFAULT_REGION_MAP, load_region_map
from .pointcloud import PointCloud, load_ply, save_ply
from .shapecls import PointNetClassifier, train_shape_classifier
from .signals import average_repetitions, preprocess_recording
from .synth import gen_dataset
from .train import (
    classification_report_cells,
    load_color_model,
    load_dataset,
    load_decoder,
    load_encoder,
    train_color,
    train_decoder,
    train_encoder,
)


def _override_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    return dataclasses.replace(
        cfg,
        train=dataclasses.replace(cfg.train, seed=seed),
        eval=dataclasses.replace(cfg.eval, seed=seed),
        synth=dataclasses.replace(cfg.synth, seed=seed),
    )


def _require_checkpoint(path: str | None, what: str) -> Path:
    if path is None:
        raise FileNotFoundError(f"missing {what} checkpoint: pass --{what}")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(
            f"{what} checkpoint {p} does not exist; train it first (eeg2cloud train-{what})"
        )
    return p


def _sample_seed(base: int, stimulus_id: str, index: int) -> int:
    digest = sum((i + 1) * ord(ch) for i, ch in enumerate(stimulus_id))
    return int(np.random.SeedSequence([base, digest, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _override_seed(load_config(args.config), args.seed)
    manifest = gen_dataset(cfg.synth, args.out, force=args.force)
    print(f"wrote dataset with {len(manifest['files'])} files to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report: dict[str, list[str]] = {}
    for inp in args.input:
        path = Path(inp)
        if is_epoch_container(path):
            raise ValueError(
                f"{path} is already a preprocessed epoch container; preprocess expects raw recordings"
            )
        rec = load_raw_recording(path)
        sets, rejected = preprocess_recording(rec, cfg.preprocess)
        report[path.name] = rejected
        for kind, eps in sets.items():
            dest = out / f"{path.stem}_{kind}.epochs"
            save_epochs(eps, dest)
            print(f"{path.name}: {eps.n_trials} {kind} epochs @ {eps.rate:g} Hz -> {dest.name}")
        for entry in rejected:
            print(f"{path.name}: rejected {entry}")
    with open(out / "preprocess_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return 0


def cmd_train_encoder(args) -> int:
    cfg = _override_seed(load_config(args.config), args.seed)
    path = train_encoder(cfg, args.data, args.out, resume=args.resume)
    print(f"encoder checkpoint: {path}")
    return 0


def cmd_train_decoder(args) -> int:
    cfg = _override_seed(load_config(args.config), args.seed)
    enc = _require_checkpoint(args.encoder, "encoder")
    path = train_decoder(cfg, args.data, enc, args.out, resume=args.resume)
    print(f"decoder checkpoint: {path}")
    return 0


def cmd_train_color(args) -> int:
    cfg = _override_seed(load_config(args.config), args.seed)
    enc = _require_checkpoint(args.encoder, "encoder")
    path = train_color(cfg, args.data, enc, args.out)
    print(f"coloring-model checkpoint: {path}")
    return 0


def cmd_sample(args) -> int:
    cfg = _override_seed(load_config(args.config), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(args.data)
    encoder, _ = load_encoder(_require_checkpoint(args.encoder, "encoder"))
    decoder, _ = load_decoder(_require_checkpoint(args.decoder, "decoder"))
    color_model = None
    if args.color is not None:
        color_model, _ = load_color_model(_require_checkpoint(args.color, "color"))
    sched = make_schedule(cfg.diffusion.n_steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end)

    stimuli = args.stimuli.split(",") if args.stimuli else sorted(
        sid for sid, info in data.labels.items() if info["split"] == "test"
    )
    test_s = average_repetitions(data.test_static, "test")
    test_d = average_repetitions(data.test_dynamic, "test")
    by_sid = {l.stimulus_id: i for i, l in enumerate(test_s.labels)}
    from .pipeline import epochs_to_tensor

    e_s, e_d = epochs_to_tensor(test_s), epochs_to_tensor(test_d)
    for sid in stimuli:
        if sid not in by_sid:
            raise KeyError(f"stimulus {sid!r} not in the test split")
        i = by_sid[sid]
        with torch.no_grad():
            f_g, f_a = encoder.features(e_s[i : i + 1], e_d[i : i + 1])
        for j in range(args.n):
            seed = _sample_seed(cfg.eval.seed, sid, j)
            pts = sample(
                decoder, f_g[0], sched, cfg.diffusion.train_points, seed,
                steps=cfg.diffusion.sample_steps,
            )
            cloud = PointCloud(points=pts.numpy().astype(np.float64))
            if color_model is not None:
                cloud = colorize(cloud, f_a[0], color_model, data.palette)
            dest = out / f"{sid}_sample{j}_seed{seed}.ply"
            save_ply(cloud, dest)
            print(f"wrote {dest.name}")
    return 0


def _get_classifier(args, cfg: RunConfig, data, out: Path) -> PointNetClassifier:
    if args.classifier is not None:
        ck = Checkpoint.load(_require_checkpoint(args.classifier, "classifier"))
        model = PointNetClassifier(n_classes=int(ck.meta["n_classes"]))
        model.load_state_dict(tensors_to_state_dict("model", ck.tensors))
        model.eval()
        return model
    clouds, labels = [], []
    for sid, info in sorted(data.labels.items()):
        if info["split"] == "train":
            clouds.append(load_ply(data.cloud_path(sid)).points)
            labels.append(info["object_class"])
    model = train_shape_classifier(
        clouds, labels, n_classes=72, steps=cfg.eval.classifier_steps, seed=cfg.eval.seed
    )
    ck = Checkpoint(
        tensors=state_dict_to_tensors("model", model),
        meta={"kind": "classifier", "n_classes": 72, "steps": cfg.eval.classifier_steps},
    )
    ck.save(out / "classifier.ckpt")
    return model


def cmd_evaluate(args) -> int:
    cfg = _override_seed(load_config(args.config), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.chance_selftest:
        rates = chance_calibration(cfg.eval.chance_trials, 72, (1, 5), cfg.eval.seed)
        rates6 = chance_calibration(cfg.eval.chance_trials, 6, (1, 2), cfg.eval.seed + 1)
        report = EvalReport(
            metadata={"kind": "chance_selftest", "trials": cfg.eval.chance_trials,
                      "seed": cfg.eval.seed},
            metrics={
                "object_top1_chance": rates[1],
                "object_top5_chance": rates[5],
                "color_top1_chance": rates6[1],
                "color_top2_chance": rates6[2],
            },
        )
        report.to_json(out / "chance_selftest.json")
        for k, v in sorted(report.metrics.items()):
            print(f"{k}: {v:.3f}")
        return 0

    data = load_dataset(args.data)
    encoder, enc_ck = load_encoder(_require_checkpoint(args.encoder, "encoder"))
    test_s = average_repetitions(data.test_static, "test")
    test_d = average_repetitions(data.test_dynamic, "test")
    subjects = sorted({l.subject_id for l in test_s.labels})

    cells = classification_report_cells(encoder, test_s, test_d)
    chance = {"object_top1": 100 / 72, "object_top5": 500 / 72,
              "color_top1": 100 / 6, "color_top2": 200 / 6}
    with open(out / "classification.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["condition", "object_top1", "object_top5", "color_top1", "color_top2"])
        writer.writerow(["chance"] + [f"{chance[k]:.2f}" for k in
                                      ("object_top1", "object_top5", "color_top1", "color_top2")])
        for mode in ("static", "dynamic", "fused"):
            writer.writerow(
                [mode]
                + [f"{cells[f'{mode}/{k}']:.2f}" for k in
                   ("object_top1", "object_top5", "color_top1", "color_top2")]
            )

    metrics = dict(cells)
    if len(subjects) > 1:
        from .train import per_subject_cells

        metrics.update(per_subject_cells(encoder, test_s, test_d))
    metadata = {
        "kind": "evaluation",
        "seed": cfg.eval.seed,
        "subjects": subjects,
        "n_test_stimuli": test_s.n_trials,
        "f1_tau": cfg.eval.f1_tau,
        "chamfer_convention": CHAMFER_CONVENTION,
        "encoder_steps": enc_ck.step,
    }

    if args.decoder is not None:
        decoder, _ = load_decoder(_require_checkpoint(args.decoder, "decoder"))
        classifier = _get_classifier(args, cfg, data, out)
        sched = make_schedule(
            cfg.diffusion.n_steps, cfg.diffusion.beta_start, cfg.diffusion.beta_end
        )
        class_pool = data.class_pool
        # protocols needing more candidate classes than the dataset offers are skipped
        configs = tuple((n, k) for n, k in ((2, 1), (10, 3)) if n <= len(class_pool))
        metadata["protocol_configs"] = [list(c) for c in configs]
        from .pipeline import epochs_to_tensor

        e_s, e_d = epochs_to_tensor(test_s), epochs_to_tensor(test_d)
        rows = []
        agg: dict[str, list[float]] = {}
        for i, lab in enumerate(test_s.labels):
            with torch.no_grad():
                f_g, _ = encoder.features(e_s[i : i + 1], e_d[i : i + 1])
            samples = []
            for j in range(cfg.eval.n_samples):
                seed = _sample_seed(cfg.eval.seed, lab.stimulus_id, j)
                pts = sample(
                    decoder, f_g[0], sched, cfg.diffusion.train_points, seed,
                    steps=cfg.diffusion.sample_steps,
                )
                samples.append(pts.numpy().astype(np.float64))
            gt = load_ply(data.cloud_path(lab.stimulus_id)).points
            res = protocol_5sample(
                samples,
                lab.object_class,
                classifier,
                class_pool,
                seed=_sample_seed(cfg.eval.seed, lab.stimulus_id, 999),
                configs=configs,
                gt_cloud=gt,
                tau=cfg.eval.f1_tau,
            )
            row = {"stimulus": lab.stimulus_id}
            for k, v in res.average.items():
                row[f"avg_{k}"] = v
                agg.setdefault(f"recon/avg_{k}", []).append(v)
            for k, v in res.best.items():
                row[f"best_{k}"] = v
                agg.setdefault(f"recon/best_{k}", []).append(v)
            rows.append(row)
        for k, vals in agg.items():
            metrics[k] = float(np.mean(vals))
        with open(out / "reconstruction.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)

    report = EvalReport(metadata=metadata, metrics=metrics)
    report.to_json(out / "report.json")
    for k, v in sorted(metrics.items()):
        print(f"{k}: {v:.3f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _override_seed(load_config(args.config), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(args.data)
    encoder, ck = load_encoder(_require_checkpoint(args.encoder, "encoder"))
    bundle = TrainedEncoderBundle(model=encoder, step=ck.step)
    testset = AblationTestSet(
        static=average_repetitions(data.test_static, "test"),
        dynamic=average_repetitions(data.test_dynamic, "test"),
    )
    if args.mode == "channel":
        records = channel_ablation(bundle, testset)
        with open(out / "channel_saliency.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(records[0].keys()))
            writer.writeheader()
            writer.writerows(records)
        with open(out / "channel_saliency.json", "w", encoding="utf-8") as fh:
            json.dump(records, fh, indent=2, sort_keys=True)
        print(f"wrote saliency for {len(records)} channels")
    else:
        region_map = (
            load_region_map(args.region_map) if args.region_map else DEFAULT_REGION_MAP
        )
        grid = region_ablation(bundle, testset, region_map)
        with open(out / "region_ablation.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["region", "static", "dynamic", "fused"])
            for region in sorted(grid):
                writer.writerow(
                    [region] + [f"{grid[region][m]:.2f}" for m in ("static", "dynamic", "fused")]
                )
        with open(out / "region_ablation.json", "w", encoding="utf-8") as fh:
            json.dump(grid, fh, indent=2, sort_keys=True)
        print(f"wrote {len(grid)}x3 region ablation grid")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eeg2cloud", description="EEG-to-colored-point-cloud decoding pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override all stage seeds")
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", default=None, help="dataset directory")

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    common(p, data=False)
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="preprocess raw recordings into epoch containers")
    common(p, data=False)
    p.add_argument("--input", nargs="+", required=True, help="raw recording .npz files")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train-encoder", help="train the fusion encoder")
    common(p)
    p.add_argument("--resume", default=None, help="resume from a checkpoint")
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("train-decoder", help="train the diffusion shape decoder")
    common(p)
    p.add_argument("--encoder", default=None, help="trained encoder checkpoint")
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train_decoder)

    p = sub.add_parser("train-color", help="train the coloring model")
    common(p)
    p.add_argument("--encoder", default=None)
    p.set_defaults(func=cmd_train_color)

    p = sub.add_parser("sample", help="sample point clouds for test stimuli")
    common(p)
    p.add_argument("--encoder", default=None)
    p.add_argument("--decoder", default=None)
    p.add_argument("--color", default=None, help="coloring-model checkpoint (optional)")
    p.add_argument("--stimuli", default=None, help="comma-separated stimulus ids (default: all test)")
    p.add_argument("--n", type=int, default=5, help="samples per stimulus")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="run the classification/reconstruction benchmarks")
    common(p)
    p.add_argument("--encoder", default=None)
    p.add_argument("--decoder", default=None, help="include the reconstruction benchmark")
    p.add_argument("--color", default=None)
    p.add_argument("--classifier", default=None, help="point-cloud classifier checkpoint")
    p.add_argument(
        "--chance-selftest", action="store_true",
        help="only run the random-score chance calibration",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="channel or region ablation saliency")
    common(p)
    p.add_argument("--encoder", default=None)
    p.add_argument("--mode", choices=("channel", "region"), default="channel")
    p.add_argument("--region-map", default=None, help="region map JSON override")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if hasattr(args, "data") and args.data is None:
            # resolve through the config / NEURO3D_DATA_DIR when the flag is omitted
            cfg = load_config(args.config)
            args.data = str(cfg.resolve_data_dir(None))
        return args.func(args)
    except Exception as exc:  # CLI contract: nonzero exit, message on stderr
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
