"""Training loops: fusion encoder, diffusion decoder, coloring model.

All loops are seeded and resumable: checkpoints carry model and optimizer
tensors plus both RNG states, so resuming reproduces the next step bitwise.
A NaN/Inf loss aborts with a diagnostic rather than training onward.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    Checkpoint,
    pack_rng_state,
    restore_rng_state,
    state_dict_to_tensors,
    tensors_to_state_dict,
)
from .color import ColorModel, ColorPalette, color_loss, dominant_color
from .config import RunConfig, config_to_dict
from .diffusion import PointDenoiser, make_schedule, q_sample
from .epoch_io import load_epochs
from .features import PrecomputedVisualFeatures
from .metrics import topk_accuracy
from .pipeline import EncoderArch, NeuralDecodingModel, batched_class_scores, epochs_to_tensor
from .pointcloud import load_ply
from .signals import EpochSet


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class PairedDataset:
    """A loaded dataset directory: paired epoch sets + targets."""

    train_static: EpochSet
    train_dynamic: EpochSet
    test_static: EpochSet
    test_dynamic: EpochSet
    labels: dict[str, dict]
    visual: PrecomputedVisualFeatures
    clouds_dir: Path
    palette: ColorPalette

    def cloud_path(self, stimulus_id: str) -> Path:
        return self.clouds_dir / f"{stimulus_id}.ply"

    @property
    def class_pool(self) -> np.ndarray:
        return np.unique([info["object_class"] for info in self.labels.values()])


def _check_paired(static: EpochSet, dynamic: EpochSet, what: str) -> None:
    key = lambda l: (l.stimulus_id, l.repetition)
    if [key(l) for l in static.labels] != [key(l) for l in dynamic.labels]:
        raise ValueError(f"{what}: static/dynamic trials are not aligned")


def load_dataset(data_dir: str | Path) -> PairedDataset:
    root = Path(data_dir)
    if not (root / "manifest.json").exists():
        raise FileNotFoundError(f"{root} does not contain a dataset (no manifest.json)")
    sets = {}
    for split in ("train", "test"):
        for kind in ("static", "dynamic"):
            sets[f"{split}_{kind}"] = load_epochs(root / f"{split}_{kind}.epochs")
    _check_paired(sets["train_static"], sets["train_dynamic"], "train")
    _check_paired(sets["test_static"], sets["test_dynamic"], "test")
    with open(root / "labels.json", "r", encoding="utf-8") as fh:
        labels = json.load(fh)
    return PairedDataset(
        train_static=sets["train_static"],
        train_dynamic=sets["train_dynamic"],
        test_static=sets["test_static"],
        test_dynamic=sets["test_dynamic"],
        labels=labels,
        visual=PrecomputedVisualFeatures(root / "visual_features.json"),
        clouds_dir=root / "clouds",
        palette=ColorPalette.from_json(root / "palette.json"),
    )


def _loss_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _np_rng_meta(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True)


def _np_rng_from_meta(blob: str) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(blob)
    return rng


def _opt_to_tensors(opt: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for idx, state in opt.state_dict()["state"].items():
        for key, value in state.items():
            if torch.is_tensor(value):
                out[f"_opt.{idx}.{key}"] = value.detach().cpu().numpy()
            else:
                out[f"_opt.{idx}.{key}"] = np.asarray(value, dtype=np.float64)
    return out


def _opt_from_tensors(opt: torch.optim.Optimizer, tensors: dict[str, np.ndarray]) -> None:
    sd = opt.state_dict()
    state: dict[int, dict] = {}
    for name, arr in tensors.items():
        if not name.startswith("_opt."):
            continue
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = torch.as_tensor(arr)
    sd["state"] = state
    opt.load_state_dict(sd)


def _require_finite(loss: torch.Tensor, step: int, parts: dict | None = None) -> None:
    if not torch.isfinite(loss):
        detail = f" (components: {parts})" if parts else ""
        raise TrainingDiverged(f"non-finite loss at step {step}{detail}")


# ---------------------------------------------------------------------------
# Encoder training
# ---------------------------------------------------------------------------


def build_decoding_model(cfg: RunConfig, n_channels: int) -> NeuralDecodingModel:
    arch = EncoderArch(
        n_channels=n_channels,
        d_model=cfg.encoder.d_model,
        n_heads=cfg.encoder.n_heads,
        n_layers=cfg.encoder.n_layers,
        patch=cfg.encoder.patch,
        agg_heads=cfg.encoder.agg_heads,
        feature_dim=cfg.encoder.feature_dim,
        decouple_hidden=cfg.encoder.decouple_hidden,
    )
    return NeuralDecodingModel(arch, cfg.loss)


def _visual_targets(data: PairedDataset, labels) -> torch.Tensor:
    feats = [data.visual(l.stimulus_id) for l in labels]
    return torch.as_tensor(np.stack(feats), dtype=torch.float32)


def train_encoder(
    cfg: RunConfig,
    data_dir: str | Path,
    out_dir: str | Path,
    resume: str | Path | None = None,
    epochs: int | None = None,
) -> Path:
    """Train the fusion encoder + decoupled heads; returns checkpoint path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(data_dir)
    tc = cfg.train

    torch.manual_seed(tc.seed)
    model = build_decoding_model(cfg, data.train_static.n_channels)
    opt = torch.optim.AdamW(
        model.parameters(), lr=tc.lr, betas=tc.adam_betas, weight_decay=tc.weight_decay
    )
    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0xE0C0]))

    e_s = epochs_to_tensor(data.train_static)
    e_d = epochs_to_tensor(data.train_dynamic)
    f_v = _visual_targets(data, data.train_static.labels)
    obj = torch.as_tensor([l.object_class for l in data.train_static.labels])
    col = torch.as_tensor([l.color_class for l in data.train_static.labels])

    step = 0
    start_epoch = 0
    if resume is not None:
        ck = Checkpoint.load(resume)
        model.load_state_dict(tensors_to_state_dict("model", ck.tensors))
        _opt_from_tensors(opt, ck.tensors)
        rng = _np_rng_from_meta(ck.meta["np_rng"])
        step = ck.step
        start_epoch = int(ck.meta["epoch"])

    n = e_s.shape[0]
    n_epochs = tc.encoder_epochs if epochs is None else epochs
    rows: list[dict] = []
    model.train()
    for epoch in range(start_epoch, n_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, tc.batch_size):
            idx = order[lo : lo + tc.batch_size]
            if len(idx) < 2:  # contrastive term needs >= 2 trials
                continue
            total, parts = model.training_loss(e_s[idx], e_d[idx], f_v[idx], obj[idx], col[idx])
            _require_finite(total, step, parts)
            opt.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            opt.step()
            step += 1
            if step % tc.log_every == 0 or lo == 0:
                rows.append({"step": step, "epoch": epoch, **parts})

    ckpt_path = out / "encoder.ckpt"
    _save_encoder_checkpoint(ckpt_path, cfg, model, opt, rng, step, n_epochs)
    _loss_csv(out / "encoder_loss.csv", rows)
    return ckpt_path


def _save_encoder_checkpoint(path, cfg, model, opt, rng, step, epoch) -> None:
    tensors = state_dict_to_tensors("model", model)
    tensors.update(_opt_to_tensors(opt))
    meta = {
        "kind": "encoder",
        "arch": model.arch.to_dict(),
        "config": config_to_dict(cfg),
        "step": step,
        "epoch": epoch,
        "np_rng": _np_rng_meta(rng),
    }
    Checkpoint(tensors=tensors, meta=meta).save(path)


def load_encoder(path: str | Path) -> tuple[NeuralDecodingModel, Checkpoint]:
    from .config import config_from_dict

    ck = Checkpoint.load(path)
    if ck.meta.get("kind") != "encoder":
        raise ValueError(f"{path} is not an encoder checkpoint")
    cfg = config_from_dict(ck.meta["config"])
    arch = EncoderArch.from_dict(ck.meta["arch"])
    model = NeuralDecodingModel(arch, cfg.loss)
    model.load_state_dict(tensors_to_state_dict("model", ck.tensors))
    model.eval()
    return model, ck


@torch.no_grad()
def encoder_features(
    model: NeuralDecodingModel, static: EpochSet, dynamic: EpochSet, batch_size: int = 64
) -> tuple[torch.Tensor, torch.Tensor]:
    """Geometry and appearance features for every paired trial."""
    model.eval()
    e_s = epochs_to_tensor(static)
    e_d = epochs_to_tensor(dynamic)
    gs, as_ = [], []
    for i in range(0, e_s.shape[0], batch_size):
        f_g, f_a = model.features(e_s[i : i + batch_size], e_d[i : i + batch_size])
        gs.append(f_g)
        as_.append(f_a)
    return torch.cat(gs), torch.cat(as_)


def classification_report_cells(
    model: NeuralDecodingModel, static: EpochSet, dynamic: EpochSet
) -> dict[str, float]:
    """Table-style classification accuracies for each signal condition."""
    obj_labels = np.array([l.object_class for l in static.labels])
    col_labels = np.array([l.color_class for l in static.labels])
    e_s = epochs_to_tensor(static)
    e_d = epochs_to_tensor(dynamic)
    cells: dict[str, float] = {}
    for mode in ("static", "dynamic", "fused"):
        obj_scores, col_scores = batched_class_scores(model, e_s, e_d, mode=mode)
        cells[f"{mode}/object_top1"] = topk_accuracy(obj_scores, obj_labels, 1)
        cells[f"{mode}/object_top5"] = topk_accuracy(obj_scores, obj_labels, 5)
        cells[f"{mode}/color_top1"] = topk_accuracy(col_scores, col_labels, 1)
        cells[f"{mode}/color_top2"] = topk_accuracy(col_scores, col_labels, 2)
    return cells


def _subset_epochs(x: EpochSet, idx: list[int]) -> EpochSet:
    return EpochSet(
        epochs=x.epochs[idx],
        kind=x.kind,
        rate=x.rate,
        labels=[x.labels[i] for i in idx],
        channel_names=list(x.channel_names),
    )


def per_subject_cells(
    model: NeuralDecodingModel, static: EpochSet, dynamic: EpochSet
) -> dict[str, float]:
    """Classification cells split by subject, keyed ``subject<id>/<cell>``."""
    subjects = sorted({l.subject_id for l in static.labels})
    out: dict[str, float] = {}
    for sid in subjects:
        idx = [i for i, l in enumerate(static.labels) if l.subject_id == sid]
        cells = classification_report_cells(
            model, _subset_epochs(static, idx), _subset_epochs(dynamic, idx)
        )
        out.update({f"subject{sid}/{k}": v for k, v in cells.items()})
    return out


# ---------------------------------------------------------------------------
# Diffusion decoder training
# ---------------------------------------------------------------------------


def _load_train_clouds(data: PairedDataset) -> dict[str, np.ndarray]:
    out = {}
    for sid, info in data.labels.items():
        if info["split"] == "train":
            out[sid] = load_ply(data.cloud_path(sid)).points
    return out


def train_decoder(
    cfg: RunConfig,
    data_dir: str | Path,
    encoder_ckpt: str | Path,
    out_dir: str | Path,
    resume: str | Path | None = None,
    steps: int | None = None,
) -> Path:
    """Train the conditional denoiser on (geometry feature, cloud) pairs with
    the encoder frozen."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(data_dir)
    tc = cfg.train
    dc = cfg.diffusion

    encoder, _ = load_encoder(encoder_ckpt)
    f_g, _ = encoder_features(encoder, data.train_static, data.train_dynamic)
    f_g = f_g.detach()
    clouds = _load_train_clouds(data)
    trial_sids = [l.stimulus_id for l in data.train_static.labels]

    torch.manual_seed(tc.seed)
    model = PointDenoiser(cond_dim=encoder.arch.feature_dim, widths=dc.widths, ctx_dim=dc.ctx_dim)
    opt = torch.optim.AdamW(
        model.parameters(), lr=tc.lr, betas=tc.adam_betas, weight_decay=tc.weight_decay
    )
    sched = make_schedule(dc.n_steps, dc.beta_start, dc.beta_end)
    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0xD1FF]))
    gen = torch.Generator().manual_seed(tc.seed + 1)

    step = 0
    if resume is not None:
        ck = Checkpoint.load(resume)
        model.load_state_dict(tensors_to_state_dict("model", ck.tensors))
        _opt_from_tensors(opt, ck.tensors)
        rng = _np_rng_from_meta(ck.meta["np_rng"])
        restore_rng_state(gen, ck.tensors["_rng.torch"])
        step = ck.step

    n_steps = tc.decoder_steps if steps is None else steps
    batch = min(tc.batch_size, 8)
    rows: list[dict] = []
    model.train()
    while step < n_steps:
        idx = rng.integers(0, len(trial_sids), size=batch)
        x0 = torch.stack(
            [
                torch.as_tensor(
                    clouds[trial_sids[i]][
                        rng.integers(0, len(clouds[trial_sids[i]]), size=dc.train_points)
                    ],
                    dtype=torch.float32,
                )
                for i in idx
            ]
        )
        cond = f_g[idx]
        t = torch.randint(1, sched.n_steps + 1, (batch,), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        x_t = q_sample(x0, t, eps, sched)
        pred = model(x_t, t, cond)
        loss = ((pred - eps) ** 2).mean()
        _require_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
        opt.step()
        step += 1
        if step % tc.log_every == 0 or step == 1:
            rows.append({"step": step, "loss": float(loss.detach())})

    ckpt_path = out / "decoder.ckpt"
    tensors = state_dict_to_tensors("model", model)
    tensors.update(_opt_to_tensors(opt))
    tensors["_rng.torch"] = pack_rng_state(gen)
    meta = {
        "kind": "decoder",
        "config": config_to_dict(cfg),
        "step": step,
        "np_rng": _np_rng_meta(rng),
    }
    Checkpoint(tensors=tensors, meta=meta).save(ckpt_path)
    _loss_csv(out / "decoder_loss.csv", rows)
    return ckpt_path


def load_decoder(path: str | Path) -> tuple[PointDenoiser, Checkpoint]:
    from .config import config_from_dict

    ck = Checkpoint.load(path)
    if ck.meta.get("kind") != "decoder":
        raise ValueError(f"{path} is not a decoder checkpoint")
    cfg = config_from_dict(ck.meta["config"])
    model = PointDenoiser(
        cond_dim=cfg.encoder.feature_dim,
        widths=cfg.diffusion.widths,
        ctx_dim=cfg.diffusion.ctx_dim,
    )
    model.load_state_dict(tensors_to_state_dict("model", ck.tensors))
    model.eval()
    return model, ck


# ---------------------------------------------------------------------------
# Coloring model training
# ---------------------------------------------------------------------------


def train_color(
    cfg: RunConfig,
    data_dir: str | Path,
    encoder_ckpt: str | Path,
    out_dir: str | Path,
    steps: int | None = None,
) -> Path:
    """Train the single-step coloring model on (cloud, appearance feature)
    pairs against majority-vote dominant-color labels."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(data_dir)
    tc = cfg.train

    encoder, _ = load_encoder(encoder_ckpt)
    _, f_a = encoder_features(encoder, data.train_static, data.train_dynamic)
    f_a = f_a.detach()
    trial_sids = [l.stimulus_id for l in data.train_static.labels]
    clouds: dict[str, np.ndarray] = {}
    votes: dict[str, int] = {}
    for sid, info in data.labels.items():
        if info["split"] == "train":
            cloud = load_ply(data.cloud_path(sid))
            clouds[sid] = cloud.points
            votes[sid] = dominant_color(cloud, data.palette)

    torch.manual_seed(tc.seed)
    model = ColorModel(cond_dim=encoder.arch.feature_dim, hidden=cfg.color.hidden)
    opt = torch.optim.AdamW(
        model.parameters(), lr=tc.lr, betas=tc.adam_betas, weight_decay=tc.weight_decay
    )
    rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0xC070]))

    n_steps = tc.color_steps if steps is None else steps
    n_points = min(cfg.diffusion.train_points, 512)
    batch = min(tc.batch_size, 16)
    rows: list[dict] = []
    model.train()
    for step in range(1, n_steps + 1):
        idx = rng.integers(0, len(trial_sids), size=batch)
        pts = torch.stack(
            [
                torch.as_tensor(
                    clouds[trial_sids[i]][
                        rng.integers(0, len(clouds[trial_sids[i]]), size=n_points)
                    ],
                    dtype=torch.float32,
                )
                for i in idx
            ]
        )
        labels = torch.as_tensor([votes[trial_sids[i]] for i in idx])
        logits = model(pts, f_a[idx])
        loss = color_loss(logits, labels)
        _require_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
        opt.step()
        if step % tc.log_every == 0 or step == 1:
            rows.append({"step": step, "loss": float(loss.detach())})

    ckpt_path = out / "color.ckpt"
    tensors = state_dict_to_tensors("model", model)
    meta = {"kind": "color", "config": config_to_dict(cfg), "step": n_steps}
    Checkpoint(tensors=tensors, meta=meta).save(ckpt_path)
    _loss_csv(out / "color_loss.csv", rows)
    return ckpt_path


def load_color_model(path: str | Path) -> tuple[ColorModel, Checkpoint]:
    from .config import config_from_dict

    ck = Checkpoint.load(path)
    if ck.meta.get("kind") != "color":
        raise ValueError(f"{path} is not a coloring-model checkpoint")
    cfg = config_from_dict(ck.meta["config"])
    model = ColorModel(cond_dim=cfg.encoder.feature_dim, hidden=cfg.color.hidden)
    model.load_state_dict(tensors_to_state_dict("model", ck.tensors))
    model.eval()
    return model, ck
