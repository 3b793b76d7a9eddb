"""Invariant/specific subspace network with attention fusion.

Per modality an LSTM encodes the frame sequence and an affine+ReLU
projection maps its final hidden state to the common width ``d``. Private
encoders ``T_a``/``T_v`` and the shared encoder ``E_c`` produce the
specific and invariant representations, a shared decoder reconstructs the
projected vector, and multi-head self-attention over the stacked
representations feeds the prediction head.
"""

from __future__ import annotations

import json
import struct
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from . import tensor as T
from .data import SequenceBatch
from .tensor import Tensor

SubspaceMode = Literal["full", "specific_only", "invariant_only"]
SUBSPACE_MODES = ("full", "specific_only", "invariant_only")
CHECKPOINT_MAGIC = b"MISAVDD\x00"
CHECKPOINT_VERSION = 1


class CheckpointMismatch(ValueError):
    pass


@dataclass
class ModelConfig:
    d_audio: int = 13
    d_visual: int = 32
    hidden: int = 128
    d: int = 128
    num_heads: int = 4
    head_hidden: int = 1024
    dropout: float = 0.1
    subspace_mode: str = "full"

    def validate(self) -> None:
        if self.d % self.num_heads:
            raise ValueError(f"d={self.d} is not divisible by num_heads={self.num_heads}")
        if self.subspace_mode not in SUBSPACE_MODES:
            raise ValueError(f"unknown subspace_mode {self.subspace_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def num_rows(self) -> int:
        return 4 if self.subspace_mode == "full" else 2


@dataclass
class SubspaceReps:
    u_a: Tensor
    u_v: Tensor
    h_a: Tensor | None = None
    h_v: Tensor | None = None
    g_a: Tensor | None = None
    g_v: Tensor | None = None
    recon_a: Tensor | None = None
    recon_v: Tensor | None = None

    def stacked(self) -> list[Tensor]:
        """Representations fed to fusion, in ``[h_a, h_v, g_a, g_v]`` order."""
        return [r for r in (self.h_a, self.h_v, self.g_a, self.g_v) if r is not None]


@dataclass
class ForwardOutput:
    y_hat: Tensor
    reps: SubspaceReps
    attention: list[np.ndarray] = field(default_factory=list)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Xavier-uniform weights, zero biases, LSTM forget-gate bias 1."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    H, d = cfg.hidden, cfg.d
    p: dict[str, np.ndarray] = {}
    for m, d_in in (("a", cfg.d_audio), ("v", cfg.d_visual)):
        p[f"lstm_{m}.W_ih"] = xavier(rng, d_in, 4 * H)
        p[f"lstm_{m}.W_hh"] = xavier(rng, H, 4 * H)
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        p[f"lstm_{m}.b"] = b
        p[f"proj_{m}.W"] = xavier(rng, H, d)
        p[f"proj_{m}.b"] = np.zeros(d)
    layers = []
    if cfg.subspace_mode in ("full", "specific_only"):
        layers += ["T_a", "T_v"]
    if cfg.subspace_mode in ("full", "invariant_only"):
        layers.append("E_c")
    layers.append("D")
    for name in layers:
        p[f"{name}.W"] = xavier(rng, d, d)
        p[f"{name}.b"] = np.zeros(d)
    for name in ("W_q", "W_k", "W_v", "W_o"):
        p[f"att.{name}"] = xavier(rng, d, d)
    widths = [cfg.num_rows * d, cfg.head_hidden, cfg.head_hidden, 1]
    for i in range(3):
        p[f"out.W{i + 1}"] = xavier(rng, widths[i], widths[i + 1])
        p[f"out.b{i + 1}"] = np.zeros(widths[i + 1])
    return {k: Tensor(v, requires_grad=True) for k, v in p.items()}


def dropout(x: Tensor, rate: float, train_mode: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not train_mode or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("train_mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, Tensor(keep))


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, W), b)


def lstm_cell(x_t: Tensor, h: Tensor, c: Tensor, W_ih: Tensor, W_hh: Tensor, b: Tensor):
    """One LSTM step, gate order (input, forget, cell, output)."""
    H = h.shape[-1]
    gates = T.add(T.add(T.matmul(x_t, W_ih), T.matmul(h, W_hh)), b)
    i = T.sigmoid(gates[:, 0:H])
    f = T.sigmoid(gates[:, H : 2 * H])
    g = T.tanh(gates[:, 2 * H : 3 * H])
    o = T.sigmoid(gates[:, 3 * H : 4 * H])
    c = T.add(T.mul(f, c), T.mul(i, g))
    h = T.mul(o, T.tanh(c))
    return h, c


def lstm_final_state(x: np.ndarray, W_ih: Tensor, W_hh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over ``x`` [B, L, d_in] from a zero state; return h_L."""
    B, L, _ = x.shape
    H = W_hh.shape[0]
    h = Tensor(np.zeros((B, H)))
    c = Tensor(np.zeros((B, H)))
    for t in range(L):
        h, c = lstm_cell(Tensor(x[:, t, :]), h, c, W_ih, W_hh, b)
    return h


def multi_head_attention(
    M: Tensor, W_q: Tensor, W_k: Tensor, W_v: Tensor, W_o: Tensor, num_heads: int
) -> tuple[Tensor, list[np.ndarray], Tensor]:
    """Self-attention over the rows of ``M`` [B, R, d].

    Head ``i`` uses column block ``i`` of each projection. Returns the
    output [B, R, d], the per-head weight arrays [B, R, R], and the
    concatenated head outputs before ``W_o``.
    """
    d = M.shape[-1]
    if d % num_heads:
        raise T.ShapeError(f"attention: d={d} not divisible by {num_heads} heads")
    dk = W_q.shape[1] // num_heads
    heads, weights = [], []
    for i in range(num_heads):
        cols = slice(i * dk, (i + 1) * dk)
        q = T.matmul(M, W_q[:, cols])
        k = T.matmul(M, W_k[:, cols])
        v = T.matmul(M, W_v[:, cols])
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(dk))
        a = T.softmax(scores)
        weights.append(a.data)
        heads.append(T.matmul(a, v))
    concat = heads[0] if num_heads == 1 else T.concat(heads, axis=-1)
    return T.matmul(concat, W_o), weights, concat


class MisAvoidd:
    """The detector: parameters plus the forward computation."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    # -- stages ------------------------------------------------------------
    def encode_sequences(self, batch: SequenceBatch, train_mode: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        p, cfg = self.params, self.cfg
        if batch.x_audio.shape[-1] != cfg.d_audio or batch.x_visual.shape[-1] != cfg.d_visual:
            raise T.ShapeError(
                f"encode: batch feature dims ({batch.x_audio.shape[-1]}, {batch.x_visual.shape[-1]}) "
                f"do not match model ({cfg.d_audio}, {cfg.d_visual})"
            )
        out = []
        for m, x in (("a", batch.x_audio), ("v", batch.x_visual)):
            h = lstm_final_state(x, p[f"lstm_{m}.W_ih"], p[f"lstm_{m}.W_hh"], p[f"lstm_{m}.b"])
            u = T.relu(affine(h, p[f"proj_{m}.W"], p[f"proj_{m}.b"]))
            out.append(dropout(u, cfg.dropout, train_mode, rng))
        return out[0], out[1]

    def project_subspaces(self, u_a: Tensor, u_v: Tensor) -> SubspaceReps:
        p, mode = self.params, self.cfg.subspace_mode
        reps = SubspaceReps(u_a=u_a, u_v=u_v)
        if mode != "invariant_only":
            reps.h_a = T.relu(affine(u_a, p["T_a.W"], p["T_a.b"]))
            reps.h_v = T.relu(affine(u_v, p["T_v.W"], p["T_v.b"]))
        if mode != "specific_only":
            reps.g_a = T.relu(affine(u_a, p["E_c.W"], p["E_c.b"]))
            reps.g_v = T.relu(affine(u_v, p["E_c.W"], p["E_c.b"]))
        for m in ("a", "v"):
            parts = [r for r in (getattr(reps, f"h_{m}"), getattr(reps, f"g_{m}")) if r is not None]
            z = parts[0] if len(parts) == 1 else T.add(parts[0], parts[1])
            setattr(reps, f"recon_{m}", affine(z, p["D.W"], p["D.b"]))
        return reps

    def attention_fuse(self, reps: SubspaceReps) -> tuple[Tensor, list[np.ndarray]]:
        p = self.params
        M = T.stack(reps.stacked(), axis=1)  # [B, R, d]
        fused, weights, _ = multi_head_attention(
            M, p["att.W_q"], p["att.W_k"], p["att.W_v"], p["att.W_o"], self.cfg.num_heads
        )
        B, R, d = fused.shape
        return T.reshape(fused, (B, R * d)), weights

    def predict(self, h_out: Tensor, train_mode: bool = False, rng=None) -> Tensor:
        p, rate = self.params, self.cfg.dropout
        z = dropout(T.relu(affine(h_out, p["out.W1"], p["out.b1"])), rate, train_mode, rng)
        z = dropout(T.relu(affine(z, p["out.W2"], p["out.b2"])), rate, train_mode, rng)
        logit = affine(z, p["out.W3"], p["out.b3"])
        return T.sigmoid(T.reshape(logit, (logit.shape[0],)))

    def forward(self, batch: SequenceBatch, train_mode: bool = False, rng=None) -> ForwardOutput:
        u_a, u_v = self.encode_sequences(batch, train_mode, rng)
        reps = self.project_subspaces(u_a, u_v)
        h_out, weights = self.attention_fuse(reps)
        return ForwardOutput(self.predict(h_out, train_mode, rng), reps, weights)

    def score(self, batch: SequenceBatch) -> np.ndarray:
        """Eval-mode per-sequence fake probabilities."""
        with T.no_grad():
            return self.forward(batch, train_mode=False).y_hat.data.copy()

    # -- checkpoints -------------------------------------------------------
    def save(self, path: str | Path) -> None:
        header = json.dumps({"version": CHECKPOINT_VERSION, "arch": asdict(self.cfg)}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
            fh.write(header)
            fh.write(struct.pack("<I", len(self.params)))
            for name, t in self.params.items():
                nb = name.encode()
                fh.write(struct.pack("<I", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<I", t.ndim))
                fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path, expected: ModelConfig | None = None) -> MisAvoidd:
        """Load a checkpoint; raises CheckpointMismatch if its architecture differs from ``expected``."""
        raw = Path(path).read_bytes()
        if not raw.startswith(CHECKPOINT_MAGIC):
            raise CheckpointMismatch(f"{path}: not a checkpoint file")
        off = len(CHECKPOINT_MAGIC)
        version, hlen = struct.unpack_from("<II", raw, off)
        off += 8
        if version != CHECKPOINT_VERSION:
            raise CheckpointMismatch(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
        header = json.loads(raw[off : off + hlen])
        off += hlen
        cfg = ModelConfig(**header["arch"])
        if expected is not None and asdict(expected) != asdict(cfg):
            diff = {k: (v, asdict(expected)[k]) for k, v in asdict(cfg).items() if asdict(expected)[k] != v}
            raise CheckpointMismatch(f"{path}: architecture mismatch (checkpoint, expected): {diff}")
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        params: dict[str, Tensor] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
            params[name] = Tensor(arr, requires_grad=True)
        reference = init_params(cfg, 0)
        if list(reference) != list(params) or any(reference[k].shape != params[k].shape for k in params):
            raise CheckpointMismatch(f"{path}: parameter layout does not match architecture")
        return cls(cfg, params)


def predict_video(sequence_scores: Iterable[tuple[str, float]]) -> dict[str, float]:
    """Average sequence scores per video, keeping first-seen video order."""
    groups: dict[str, list[float]] = defaultdict(list)
    for vid, score in sequence_scores:
        groups[vid].append(float(score))
    if not groups:
        raise ValueError("no sequence scores to aggregate")
    return {vid: float(np.mean(s)) for vid, s in groups.items()}
