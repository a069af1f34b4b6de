"""Optimization loop, the S1-S4 ablation harness and self-boosting stages."""

import copy
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .datasets import iterate_batches
from .geometry import warp_right_to_left
from .losses import LossConfig, feature_metric_loss, photometric_loss, smoothness_loss, total_loss
from .metrics import end_point_error, three_pixel_error
from .network import StereoNet, save_checkpoint

log = logging.getLogger(__name__)

SETTINGS = ("S1", "S2", "S3", "S4")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs_per_stage: int = 30
    batch_size: int = 2
    crop_size: tuple = (128, 256)
    seed: int = 0
    K: int = 3
    loss: LossConfig = field(default_factory=LossConfig)
    setting: str = "S1"
    early_stop: bool = False
    early_stop_rel: float = 0.005
    early_stop_patience: int = 3

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        if self.epochs_per_stage < 0 or self.batch_size < 1:
            raise ValueError("epochs_per_stage must be >= 0 and batch_size >= 1")
        self.crop_size = tuple(self.crop_size) if self.crop_size else None


@dataclass
class StageState:
    k: int
    net: StereoNet
    frozen_loss_extractor: Optional[torch.nn.Module] = None
    history: list = field(default_factory=list)
    best_net: Optional[StereoNet] = None

    def __post_init__(self):
        if (self.k == 0) != (self.frozen_loss_extractor is None):
            raise ValueError("stage 0 has no loss extractor; later stages must have one")


def configure_ablation(setting, batch):
    """Return ((input left, input right), (loss left, loss right)) for S1..S4.

    ``batch`` is a dict with 'left', 'right_up' and optionally 'right_hr'
    (arrays or tensors); the loss right view is the one warped onto the left.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    left, up = batch["left"], batch["right_up"]
    hr = batch.get("right_hr")
    if setting != "S1" and hr is None:
        raise ValueError(f"setting {setting} needs the HR right view")
    inputs = (left, hr) if setting in ("S2", "S4") else (left, up)
    loss_pair = (left, hr) if setting in ("S3", "S4") else (left, up)
    return inputs, loss_pair


def freeze(module):
    frozen = copy.deepcopy(module)
    frozen.eval()
    for p in frozen.parameters():
        p.requires_grad_(False)
    return frozen


def compute_loss(net, batch, cfg, loss_extractor=None):
    """Total loss for one batch; returns (loss, disparity)."""
    (in_l, in_r), (loss_l, loss_r) = configure_ablation(cfg.setting, batch)
    disp, _, _ = net(in_l, in_r)
    if not torch.isfinite(disp).all():
        raise TrainingDivergedError("non-finite disparity prediction")
    warp = warp_right_to_left(loss_r, disp)
    if loss_extractor is None:
        data = photometric_loss(loss_l, warp, cfg.loss)
    else:
        # warp in image space, then re-encode with the frozen extractor
        feat_l = loss_extractor(loss_l)
        feat_w = loss_extractor(warp.warped)
        data = feature_metric_loss(feat_l, warp._replace(warped=feat_w), cfg.loss)
    return total_loss(data, smoothness_loss(disp, loss_l), cfg.loss), disp


@torch.no_grad()
def predict(net, samples, setting="S1", dtype=torch.float32):
    """Full-image disparity predictions (numpy, one per sample)."""
    net.eval()
    out = []
    for batch in iterate_batches(samples, 1, crop=None, shuffle=False, dtype=dtype):
        (in_l, in_r), _ = configure_ablation(setting, batch)
        out.append(net(in_l, in_r)[0][0].double().numpy())
    return out


def evaluate(net, samples, setting="S1"):
    """Mean 3PE (%) and EPE (px) over samples with ground truth."""
    samples = [s for s in samples if s.gt_disparity is not None]
    if not samples:
        raise ValueError("no samples with ground truth")
    preds = predict(net, samples, setting)
    pe3 = [three_pixel_error(p, s.gt_disparity) for p, s in zip(preds, samples)]
    epe = [end_point_error(p, s.gt_disparity) for p, s in zip(preds, samples)]
    return {"3pe": float(np.mean(pe3)), "epe": float(np.mean(epe)), "per_scene_3pe": pe3, "per_scene_epe": epe}


def train_stage(init, loss_extractor, data, cfg, k=0, val_data=None, out_dir=None, log_path=None):
    """Train a copy of ``init`` with ADAM for ``cfg.epochs_per_stage`` epochs.

    Without ``loss_extractor`` the data term is the photometric loss;
    otherwise it is the feature-metric loss under that extractor, which is
    frozen (deep-copied, never updated).
    """
    if not data:
        raise ValueError("training data is empty")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    torch.manual_seed(cfg.seed + 7919 * k)
    rng = np.random.default_rng([cfg.seed, k])
    net = copy.deepcopy(init)
    frozen = freeze(loss_extractor) if loss_extractor is not None else None
    dtype = next(net.parameters()).dtype
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2))
    state = StageState(k=k, net=net, frozen_loss_extractor=frozen)
    best = math.inf
    for epoch in range(cfg.epochs_per_stage):
        net.train()
        losses = []
        for batch in iterate_batches(data, cfg.batch_size, cfg.crop_size, rng, dtype=dtype):
            where = f"stage {k} epoch {epoch} scenes {batch['scene_id']}"
            try:
                loss, _ = compute_loss(net, batch, cfg, frozen)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(f"{where}: {e}") from e
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"{where}: non-finite loss {loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        row = {"stage": k, "epoch": epoch, "loss": float(np.mean(losses))}
        if val_data:
            m = evaluate(net, val_data, cfg.setting)
            row.update(val_3pe=m["3pe"], val_epe=m["epe"])
            if m["epe"] < best:
                best = m["epe"]
                state.best_net = copy.deepcopy(net)
                if out_dir:
                    save_checkpoint(os.path.join(out_dir, f"stage_{k}_best.ckpt"), net, stage=k, epoch=epoch)
        state.history.append(row)
        log.info("stage %d epoch %d loss %.5f", k, epoch, row["loss"])
        if log_path:
            _append_log(log_path, row)
        if cfg.early_stop and _plateaued([r["loss"] for r in state.history], cfg):
            log.info("stage %d converged after %d epochs", k, epoch + 1)
            break
    if out_dir:
        save_checkpoint(os.path.join(out_dir, f"stage_{k}.ckpt"), net, stage=k)
    return state


def _plateaued(losses, cfg):
    p = cfg.early_stop_patience
    if len(losses) <= p:
        return False
    ref = losses[-p - 1]
    return (ref - min(losses[-p:])) < cfg.early_stop_rel * abs(ref)


def _append_log(path, row):
    keys = ("stage", "epoch", "loss", "val_3pe", "val_epe")
    new = not os.path.exists(path)
    with open(path, "a") as f:
        if new:
            f.write("\t".join(keys) + "\n")
        f.write("\t".join("" if row.get(k) is None else str(row[k]) for k in keys) + "\n")


def self_boost(data, cfg, net_cfg=None, init=None, val_data=None, out_dir=None):
    """Stage 0 with the photometric loss, then K stages each trained with the
    feature-metric loss of the previous stage's frozen extractor."""
    if cfg.K < 1:
        raise ValueError("self-boosting needs K >= 1")
    if init is None:
        init = StereoNet(net_cfg)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.tsv") if out_dir else None
    states = [train_stage(init, None, data, cfg, 0, val_data, out_dir, log_path)]
    for k in range(1, cfg.K + 1):
        prev = states[-1].net
        states.append(train_stage(prev, prev.extractor, data, cfg, k, val_data, out_dir, log_path))
    return states
