"""Training loop, early stopping and the ablation protocol."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import metrics
from .data import VideoRecord, batches, make_sequences
from .losses import LossWeights, breakdown_residual, combined_loss
from .model import SUBSPACE_MODES, ModelConfig, MisAvoidd, predict_video
from .optim import AdamState, adam_step, clip_grad_norm, global_grad_norm
from .tensor import backward

log = logging.getLogger(__name__)

ABLATION_ROWS = ("full", "no_inv", "no_orth", "no_sim", "specific_only", "invariant_only")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss_weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-4
    batch_size: int = 32
    grad_clip: float = 1.0
    dropout: float = 0.1
    hidden_dim: int = 128
    common_dim: int = 128
    num_heads: int = 4
    head_hidden: int = 1024
    seq_len_visual: int = 30
    patience: int = 11
    max_epochs: int = 300
    seed: int = 0
    subspace_mode: str = "full"
    decay_rate: float = 0.98
    threshold: float = 0.5
    max_fpr: float = 0.1

    def validate(self) -> None:
        self.loss_weights.validate()
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.subspace_mode not in SUBSPACE_MODES:
            raise ValueError(f"unknown subspace_mode {self.subspace_mode!r}")
        if self.lr <= 0 or self.grad_clip <= 0 or not 0 < self.decay_rate <= 1:
            raise ValueError("lr, grad_clip must be positive and decay_rate in (0, 1]")

    def model_config(self, d_audio: int, d_visual: int) -> ModelConfig:
        return ModelConfig(
            d_audio=d_audio,
            d_visual=d_visual,
            hidden=self.hidden_dim,
            d=self.common_dim,
            num_heads=self.num_heads,
            head_hidden=self.head_hidden,
            dropout=self.dropout,
            subspace_mode=self.subspace_mode,
        )


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: dict[str, float]
    val: dict
    max_grad_norm: float
    wall_time: float = 0.0

    def log_dict(self) -> dict:
        """Deterministic fields only (wall time excluded)."""
        d = asdict(self)
        d.pop("wall_time")
        return d


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = -math.inf
    stopped_early: bool = False


def score_records(model: MisAvoidd, records: Sequence[VideoRecord], seq_len_visual: int, batch_size: int = 256):
    """Eval-mode video scores (mean over the video's sequences)."""
    seqs = make_sequences(records, seq_len_visual, train_mode=False)
    pairs = []
    for b in batches(seqs, batch_size, shuffle=False):
        pairs.extend(zip(b.video_ids, model.score(b)))
    return predict_video(pairs)


def evaluate_records(
    model: MisAvoidd,
    records: Sequence[VideoRecord],
    seq_len_visual: int = 30,
    threshold: float = 0.5,
    max_fpr: float = 0.1,
) -> metrics.EvalReport:
    scores = score_records(model, records, seq_len_visual)
    labels = {r.video_id: r.label for r in records}
    return metrics.evaluate(metrics.ScoreSet.from_dict(scores, labels), threshold, max_fpr)


def _snapshot(model: MisAvoidd) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in model.params.items()}


def train(
    cfg: TrainConfig, train_set: Sequence[VideoRecord], val_set: Sequence[VideoRecord]
) -> tuple[MisAvoidd, TrainLog]:
    """Fit a model, early-stopping on validation AUC; returns the best-epoch model."""
    cfg.validate()
    if not train_set or not val_set:
        raise ValueError("train and validation splits must be nonempty")
    if len({r.label for r in val_set}) < 2:
        raise metrics.SingleClassError("validation split needs both classes")
    d_a = train_set[0].audio_features.shape[1]
    d_v = train_set[0].visual_features.shape[1]
    model = MisAvoidd(cfg.model_config(d_a, d_v), seed=cfg.seed)
    params = model.parameters()
    opt = AdamState.for_params(params, lr=cfg.lr, decay_rate=cfg.decay_rate)
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    train_seqs = make_sequences(train_set, cfg.seq_len_visual, train_mode=True)
    w = cfg.loss_weights
    tlog = TrainLog()
    best = _snapshot(model)

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        sums = {"l_inv": 0.0, "l_orth": 0.0, "l_sim": 0.0, "l_cls": 0.0, "l_total": 0.0}
        n_seen = 0
        max_norm = 0.0
        lr_used = opt.lr
        for bi, batch in enumerate(batches(train_seqs, cfg.batch_size, seed=cfg.seed * 100003 + epoch)):
            model.zero_grad()
            out = model.forward(batch, train_mode=True, rng=dropout_rng)
            br = combined_loss(out.reps, out.y_hat, batch.labels, w)
            if not math.isfinite(br.l_total):
                raise DivergenceError(f"loss is {br.l_total} at epoch {epoch}, batch {bi + 1}")
            residual = breakdown_residual(br, w)
            assert residual <= 1e-12, f"loss breakdown identity off by {residual}"
            backward(br.total)
            clip_grad_norm(params, cfg.grad_clip)
            norm = global_grad_norm(params)
            assert norm <= cfg.grad_clip + 1e-9
            max_norm = max(max_norm, norm)
            adam_step(opt, params)
            for k, v in br.as_dict().items():
                sums[k] += v * len(batch)
            n_seen += len(batch)
        opt.decay()

        report = evaluate_records(model, val_set, cfg.seq_len_visual, cfg.threshold, cfg.max_fpr)
        rec = EpochRecord(
            epoch=epoch,
            lr=lr_used,
            train_loss={k: v / n_seen for k, v in sums.items()},
            val=report.as_dict(),
            max_grad_norm=max_norm,
            wall_time=time.perf_counter() - t0,
        )
        tlog.epochs.append(rec)
        log.info("epoch %d loss %.4f val auc %.4f", epoch, rec.train_loss["l_total"], report.auc)
        if report.auc > tlog.best_val_auc:
            tlog.best_val_auc = report.auc
            tlog.best_epoch = epoch
            best = _snapshot(model)
        elif epoch - tlog.best_epoch >= cfg.patience:
            tlog.stopped_early = True
            break

    for k, p in model.params.items():
        p.data = best[k]
        p.zero_grad()
    return model, tlog


def ablation_configs(cfg: TrainConfig) -> dict[str, TrainConfig]:
    """The six retraining variants: zero one loss weight, or keep one subspace."""
    w = cfg.loss_weights
    return {
        "full": replace(cfg, subspace_mode="full"),
        "no_inv": replace(cfg, subspace_mode="full", loss_weights=replace(w, alpha=0.0)),
        "no_orth": replace(cfg, subspace_mode="full", loss_weights=replace(w, beta=0.0)),
        "no_sim": replace(cfg, subspace_mode="full", loss_weights=replace(w, gamma=0.0)),
        "specific_only": replace(cfg, subspace_mode="specific_only"),
        "invariant_only": replace(cfg, subspace_mode="invariant_only"),
    }


def ablate(
    cfg: TrainConfig,
    train_set: Sequence[VideoRecord],
    val_set: Sequence[VideoRecord],
    test_set: Sequence[VideoRecord],
) -> dict[str, metrics.EvalReport]:
    """Train every ablation variant with the same seed and data order; report test metrics."""
    rows = {}
    for name, variant in ablation_configs(cfg).items():
        model, _ = train(variant, train_set, val_set)
        rows[name] = evaluate_records(model, test_set, variant.seq_len_visual, variant.threshold, variant.max_fpr)
        log.info("ablation %s: test auc %.4f", name, rows[name].auc)
    return rows
