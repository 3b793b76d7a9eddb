"""Command-line entry point: gen-synth, train, eval, ablate, selfcheck.

Exit codes: 0 ok, 1 selfcheck failure, 2 config or data error,
3 divergence, 4 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data, metrics, tensor as T
from .config import ConfigError, RunConfig
from .model import CheckpointMismatch, MisAvoidd
from .trainer import ABLATION_ROWS, DivergenceError, ablate, evaluate_records, train

log = logging.getLogger("misavoidd")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4


def _setup_logging() -> None:
    level = os.environ.get("MISAVOIDD_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _overrides(args) -> dict:
    o = {}
    if getattr(args, "seed", None) is not None:
        o["train.seed"] = args.seed
        o["synth.seed"] = args.seed
    if getattr(args, "out", None) is not None:
        o["out_dir"] = args.out
    if getattr(args, "manifest", None) is not None:
        o["data.manifest"] = args.manifest
    if getattr(args, "threshold", None) is not None:
        o["train.threshold"] = args.threshold
    if getattr(args, "max_fpr", None) is not None:
        o["train.max_fpr"] = args.max_fpr
    return o


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e.strerror}") from e
    return out


def _records(cfg: RunConfig) -> list[data.VideoRecord]:
    if not cfg.data.manifest:
        raise ConfigError("data.manifest is required (set it in the config or pass --manifest)")
    return data.load_manifest(cfg.data.manifest)


def _dims(records) -> tuple[int, int]:
    return records[0].audio_features.shape[1], records[0].visual_features.shape[1]


def cmd_gen_synth(cfg: RunConfig) -> dict:
    out = _out_dir(cfg)
    records = data.synth_generate(cfg.synth)
    try:
        manifest = data.write_dataset(records, out)
    except OSError as e:
        raise ConfigError(f"cannot write dataset under {out}: {e}") from e
    config_mod.save(cfg, out / "config.json")
    summary = {"manifest": str(manifest), "counts": {}}
    for split in data.SPLITS:
        rs = data.by_split(records, split)
        summary["counts"][split] = {"real": sum(r.label == 0 for r in rs), "fake": sum(r.label == 1 for r in rs)}
    return summary


def cmd_train(cfg: RunConfig) -> dict:
    records = _records(cfg)
    out = _out_dir(cfg)
    config_mod.save(cfg, out / "config.json")
    t0 = time.perf_counter()
    model, tlog = train(cfg.train, data.by_split(records, "train"), data.by_split(records, "val"))
    total = time.perf_counter() - t0
    model.save(out / "checkpoint.bin")
    with open(out / "train_log.jsonl", "w") as fh:
        for rec in tlog.epochs:
            fh.write(json.dumps(rec.log_dict(), sort_keys=True) + "\n")
        fh.write(json.dumps({"best_epoch": tlog.best_epoch, "best_val_auc": tlog.best_val_auc,
                             "stopped_early": tlog.stopped_early}, sort_keys=True) + "\n")
    timing = {"total_seconds": total, "epoch_seconds": [r.wall_time for r in tlog.epochs]}
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    report = evaluate_records(model, data.by_split(records, "val"), cfg.train.seq_len_visual,
                              cfg.train.threshold, cfg.train.max_fpr)
    (out / "val_report.json").write_text(report.to_json() + "\n")
    return report.as_dict()


def cmd_eval(cfg: RunConfig, checkpoint: str, split: str = "test") -> dict:
    if split not in data.SPLITS:
        raise ConfigError(f"--split must be one of {', '.join(data.SPLITS)}")
    records = data.by_split(_records(cfg), split)
    if not records:
        raise ConfigError(f"split {split!r} is empty in {cfg.data.manifest}")
    expected = cfg.train.model_config(*_dims(records))
    model = MisAvoidd.load(checkpoint, expected)
    report = evaluate_records(model, records, cfg.train.seq_len_visual, cfg.train.threshold, cfg.train.max_fpr)
    return report.as_dict()


def cmd_ablate(cfg: RunConfig) -> dict:
    """Six-row table; each row averages test metrics over ``ablation.seeds``."""
    records = _records(cfg)
    out = _out_dir(cfg)
    config_mod.save(cfg, out / "config.json")
    splits = [data.by_split(records, s) for s in ("train", "val", "test")]
    per_seed = {}
    for seed in cfg.ablation.seeds:
        cfg.train.seed = seed
        rows = ablate(cfg.train, *splits)
        per_seed[seed] = {k: v.as_dict() for k, v in rows.items()}
    table = {}
    for name in ABLATION_ROWS:
        table[name] = {k: float(np.mean([per_seed[s][name][k] for s in per_seed])) for k in metrics.REPORT_KEYS}
    doc = {"rows": table, "per_seed": {str(s): v for s, v in per_seed.items()}}
    (out / "ablation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", *metrics.REPORT_KEYS])
        for name in ABLATION_ROWS:
            w.writerow([name, *(table[name][k] for k in metrics.REPORT_KEYS)])
    return table


def _selfcheck_items():
    """Yield (name, thunk) pairs; a thunk returns (ok, detail)."""
    from .gradcheck import finite_diff_check
    from .losses import LossWeights, cmd, combined_loss, orthogonality_loss
    from .model import ModelConfig, SubspaceReps, multi_head_attention
    from .tensor import Tensor

    def grad_ops():
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(3, 4)))
        W1 = Tensor(rng.normal(size=(4, 5)))
        W2 = Tensor(rng.normal(size=(5, 2)))
        f = lambda: T.sum_squares(T.tanh(T.matmul(T.sigmoid(T.matmul(x, W1)), W2)))  # noqa: E731
        err = finite_diff_check(f, [W1, W2])
        return err < 1e-3, f"max rel err {err:.2e}"

    def grad_model():
        rng = np.random.default_rng(1)
        cfg = ModelConfig(d_audio=3, d_visual=4, hidden=5, d=8, num_heads=2, head_hidden=6)
        m = MisAvoidd(cfg, seed=1)
        batch = data.SequenceBatch(rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3, 4)),
                                   np.array([0.0, 1.0, 0.0, 1.0]), ["a", "b", "c", "d"])

        def f():
            o = m.forward(batch, train_mode=False)
            return combined_loss(o.reps, o.y_hat, batch.labels, LossWeights()).total

        err = finite_diff_check(f, m.parameters(), max_coords=4)
        return err < 1e-3, f"max rel err {err:.2e}"

    def cmd_oracle():
        v = cmd(Tensor([[0.0], [0.5], [1.0]]), Tensor([[0.25], [0.5], [0.75]]), 5).item()
        same = cmd(Tensor([[0.1], [0.7]]), Tensor([[0.1], [0.7]])).item()
        return abs(v - 0.16406) < 1e-5 and same == 0.0, f"cmd = {v:.6f}"

    def orth_cases():
        r = Tensor([[0.6, 0.8, 0.0]])
        z = Tensor(np.zeros((1, 3)))
        v = orthogonality_loss(SubspaceReps(z, z, r, r, r, r, z, z), center=False).item()
        return abs(v - 4.0) < 1e-12, f"identical rows give {v}"

    def attention():
        rng = np.random.default_rng(2)
        M = Tensor(rng.normal(size=(2, 4, 8)))
        Wv, Wo, zero = Tensor(rng.normal(size=(8, 8))), Tensor(np.eye(8)), Tensor(np.zeros((8, 8)))
        _, weights, pre = multi_head_attention(M, zero, zero, Wv, Wo, 4)
        mean_v = (M.data @ Wv.data).mean(axis=1, keepdims=True)
        ok = all(np.allclose(a.sum(-1), 1.0, atol=1e-9) for a in weights)
        dev = float(np.abs(pre.data - mean_v).max())
        return ok and dev < 1e-9, f"mean deviation {dev:.1e}"

    def metric_oracle():
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(20):
            s = np.round(rng.uniform(size=20), 1)
            y = np.r_[0, 1, rng.integers(0, 2, 18)]
            worst = max(worst, abs(metrics.auc(*metrics.roc_curve(s, y)) - metrics.mann_whitney_auc(s, y)))
        e = metrics.eer(*metrics.roc_curve([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]))
        return worst < 1e-9 and abs(e - 0.25) < 1e-9, f"auc gap {worst:.1e}, eer {e}"

    def mfcc_silence():
        from .audio import AudioClip, mfcc

        fr = mfcc(AudioClip(16000, np.zeros(16000))).frames
        return fr.shape == (98, 13) and np.ptp(fr, axis=0).max() == 0.0, f"shape {fr.shape}"

    return [
        ("gradient: primitive ops", grad_ops),
        ("gradient: full objective", grad_model),
        ("cmd oracle", cmd_oracle),
        ("orthogonality cases", orth_cases),
        ("attention invariants", attention),
        ("metrics oracle", metric_oracle),
        ("mfcc silence", mfcc_silence),
    ]


def cmd_selfcheck(corrupt_grad: str | None = None, stream=None) -> int:
    stream = stream or sys.stdout
    fault = T.inject_grad_fault(corrupt_grad, 1.1) if corrupt_grad else contextlib.nullcontext()
    failed = 0
    with fault:
        for name, check in _selfcheck_items():
            try:
                ok, detail = check()
            except Exception as e:  # a crash counts as a failure
                ok, detail = False, f"{type(e).__name__}: {e}"
            failed += not ok
            print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})", file=stream)
    print(f"{'all checks passed' if not failed else f'{failed} check(s) failed'}", file=stream)
    return EXIT_OK if not failed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="misavoidd", description="Audio-visual deepfake detector with subspace fusion.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        sp.add_argument("--config", help="JSON run config; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        if manifest:
            sp.add_argument("--manifest", help="dataset manifest CSV")
        return sp

    common(sub.add_parser("gen-synth", help="write a synthetic dataset"), manifest=False)
    common(sub.add_parser("train", help="train and save a checkpoint"))
    ev = common(sub.add_parser("eval", help="evaluate a checkpoint on one split"))
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", default="test")
    ev.add_argument("--threshold", type=float)
    ev.add_argument("--max-fpr", type=float)
    common(sub.add_parser("ablate", help="train the six ablation variants"))
    sc = sub.add_parser("selfcheck", help="run the built-in invariant checks")
    sc.add_argument("--corrupt-grad", metavar="KIND", help="debug: scale the backward of one op kind by 1.1")
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "selfcheck":
        return cmd_selfcheck(args.corrupt_grad)
    try:
        cfg = config_mod.load(args.config, _overrides(args))
        if args.command == "gen-synth":
            result = cmd_gen_synth(cfg)
        elif args.command == "train":
            result = cmd_train(cfg)
        elif args.command == "eval":
            result = cmd_eval(cfg, args.checkpoint, args.split)
            if args.out:
                (_out_dir(cfg) / f"eval_{args.split}.json").write_text(json.dumps(result) + "\n")
        else:
            result = cmd_ablate(cfg)
    except (ConfigError, data.DataError, metrics.SingleClassError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    print(json.dumps(result, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
