"""Losses, the Adam optimizer, train/eval loops, and trace analysis.

Training is single-threaded and fully determined by (seed, config): the
model init, epoch shuffles, Gumbel noise, and dropout masks all come from one
seeded stream consumed in a fixed order. Evaluation runs greedy (no selection
noise, no dropout) so repeated evaluations agree bit for bit.
"""

import json
import time
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from . import numerics as nm
from .codec import CodecConfig
from .layer import ScoffConfig
from .model import FRAME_TASKS, GruBaseline, ScoffModel
from .numerics import Tape, Tensor, backward
from .rng import Rng
from .tasks import AddingSequence


@dataclass
class TrainConfig:
    task: str = "switching"
    model: str = "scoff"  # "scoff" or "gru"
    scoff: ScoffConfig = field(default_factory=ScoffConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    baseline_width: "int | None" = None  # default: n_f * d_h, matched hidden size
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    burn_in: int = 10
    horizon: int = 15
    clip_norm: float = 1.0
    eval_subset: int = 32

    def resolved_baseline_width(self) -> int:
        if self.baseline_width is not None:
            return self.baseline_width
        return self.scoff.n_f * self.scoff.d_h


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    eval_losses: list          # per rollout step (self-fed) or [mse]
    eval_teacher: list
    schema_usage: list         # fraction of selections per schema
    alignment_purity: "float | None"
    dead_schemata: list
    wall_seconds: float

    def to_json(self) -> str:
        # wall-clock is intentionally left out so metrics files are
        # reproducible byte for byte from (seed, config)
        rec = {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "eval_losses": self.eval_losses,
            "eval_teacher": self.eval_teacher,
            "schema_usage": self.schema_usage,
            "alignment_purity": self.alignment_purity,
            "dead_schemata": self.dead_schemata,
        }
        return json.dumps(rec, sort_keys=True)


# ---- losses ----------------------------------------------------------------


def bce_per_frame(logits: Tensor, target) -> Tensor:
    """Mean per-pixel binary cross entropy in stable logit form."""
    return nm.logistic_loss_mean(logits, np.asarray(target, dtype=np.float64))


def mse_scalar(pred: Tensor, target: float) -> Tensor:
    if pred.data.size != 1:
        raise ValueError(f"mse_scalar expects a scalar prediction, got {pred.shape}")
    d = pred - float(target)
    return d * d


# ---- optimizer -------------------------------------------------------------


def adam_step(params: list, grads: list, moments: tuple, t: int, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update, in place; returns (params, moments)."""
    if t < 1:
        raise ValueError(f"step counter must be >= 1, got {t}")
    m, v = moments
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * (g * g)
        p.data -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)
    return params, (m, v)


class Adam:
    """Holds moments for a parameter list and applies scaled, clipped steps."""

    def __init__(self, params: list, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def apply(self, scale: float = 1.0, clip: "float | None" = None) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad * scale
                 for p in self.params]
        if clip is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > clip:
                coef = clip / norm
                grads = [g * coef for g in grads]
        self.t += 1
        adam_step(self.params, grads, (self.m, self.v), self.t, self.lr,
                  self.beta1, self.beta2, self.eps)
        for p in self.params:
            p.zero_grad()


# ---- model construction and per-sequence passes -----------------------------


def build_model(cfg: TrainConfig, rng: Rng):
    if cfg.model == "scoff":
        return ScoffModel(cfg.task, cfg.scoff, cfg.codec, rng)
    if cfg.model == "gru":
        return GruBaseline(cfg.task, cfg.resolved_baseline_width(), cfg.codec, rng)
    raise ValueError(f"unknown model kind {cfg.model!r}")


def video_loss(model, frames, rng=None, training: bool = False):
    """Teacher-forced next-frame prediction loss, averaged over steps."""
    state = model.init_state()
    losses, traces = [], []
    for t in range(frames.shape[0] - 1):
        feats = model.encode(frames[t])
        state, trace = model.step(feats, state, rng, training)
        logits = model.readout(state)
        losses.append(bce_per_frame(logits, frames[t + 1]))
        traces.append(trace)
    total = losses[0]
    for piece in losses[1:]:
        total = total + piece
    return total * (1.0 / len(losses)), traces


def adding_loss(model, seq: AddingSequence, rng=None, training: bool = False):
    """Terminal-target regression loss over the full token sequence."""
    tokens = seq.tokens()
    state = model.init_state()
    traces = []
    for t in range(tokens.shape[0]):
        feats = model.encode(tokens[t])
        state, trace = model.step(feats, state, rng, training)
        traces.append(trace)
    pred = model.readout(state)
    return mse_scalar(pred, seq.target), traces


def sequence_loss(model, seq, rng=None, training: bool = False):
    if isinstance(seq, AddingSequence):
        return adding_loss(model, seq, rng, training)
    return video_loss(model, seq.frames, rng, training)


# ---- evaluation -------------------------------------------------------------


def eval_rollout(model, sequences: list, burn_in: int, horizon: int):
    """Per-step BCE curves for teacher-forced and self-fed prediction.

    Step i predicts frame burn_in + i. The self-fed mode thresholds each
    predicted frame at probability 0.5 before re-encoding it.
    """
    if not sequences:
        raise ValueError("no sequences to evaluate")
    T = sequences[0].frames.shape[0]
    if burn_in < 1 or horizon < 1 or burn_in + horizon > T:
        raise ValueError(
            f"need 1 <= burn_in and burn_in + horizon <= {T}, "
            f"got burn_in={burn_in}, horizon={horizon}")
    teacher = np.zeros(horizon)
    self_fed = np.zeros(horizon)
    for seq in sequences:
        frames = seq.frames
        for mode, acc in (("teacher", teacher), ("self", self_fed)):
            state = model.init_state()
            feed = frames[0]
            for t in range(burn_in + horizon - 1):
                feats = model.encode(feed)
                state, _ = model.step(feats, state)
                logits = model.readout(state)
                target_idx = t + 1
                if target_idx >= burn_in:
                    i = target_idx - burn_in
                    acc[i] += bce_per_frame(logits, frames[target_idx]).item()
                if mode == "teacher" or target_idx < burn_in:
                    feed = frames[target_idx]
                else:
                    feed = (logits.data > 0.0).astype(np.float64)
    teacher /= len(sequences)
    self_fed /= len(sequences)
    return teacher.tolist(), self_fed.tolist()


def eval_adding(model, sequences: list) -> float:
    """Mean squared error of the terminal prediction."""
    total = 0.0
    for seq in sequences:
        loss, _ = adding_loss(model, seq)
        total += loss.item()
    return total / len(sequences)


def collect_traces(model, sequences: list, burn_in: int = 0):
    """Greedy-mode traces and per-step labels, burn-in steps dropped.

    Adding sequences are labeled operand (1) vs null (0) per step.
    """
    all_traces, all_labels = [], []
    for seq in sequences:
        if isinstance(seq, AddingSequence):
            _, traces = adding_loss(model, seq)
            labels = seq.indicators.any(axis=1).astype(np.int64)
        else:
            _, traces = video_loss(model, seq.frames)
            labels = seq.labels[1:]  # trace t corresponds to predicting frame t+1
        all_traces.append(traces[burn_in:])
        all_labels.append(np.asarray(labels)[burn_in:len(traces)])
    return all_traces, all_labels


def schema_alignment_purity(traces: list, labels: list) -> float:
    """Best assignment score between selected schemata and ground-truth modes.

    Builds the schema-by-mode co-occurrence over every active slot step and
    returns the matched mass of the best injective assignment divided by the
    total mass. Invariant under relabeling of either side.
    """
    pairs = []
    n_s, n_m = 0, 0
    for seq_traces, seq_labels in zip(traces, labels):
        for trace, label in zip(seq_traces, seq_labels):
            n_s = trace.schema_scores.shape[1]
            n_m = max(n_m, int(label) + 1)
            pairs.append((trace, int(label)))
    if not pairs:
        raise ValueError("no traces to score")
    counts = np.zeros((n_s, n_m))
    for trace, mode in pairs:
        for k in range(trace.schema.shape[0]):
            j = int(trace.schema[k])
            if j >= 0:
                counts[j, mode] += 1.0
    if counts.sum() == 0:
        raise ValueError("no selections to score")
    n_s, n_m = counts.shape
    if min(n_s, n_m) > 8:
        raise ValueError("assignment enumeration capped at 8 on the smaller side")
    if n_m <= n_s:
        best = max(sum(counts[p[i], i] for i in range(n_m))
                   for p in permutations(range(n_s), n_m))
    else:
        best = max(sum(counts[j, p[j]] for j in range(n_s))
                   for p in permutations(range(n_m), n_s))
    return float(best / counts.sum())


# ---- the training loop -------------------------------------------------------


def train_model(cfg: TrainConfig, train_data: list, eval_data: "list | None" = None,
                log=None):
    """Returns (metrics records, trained model); bit-deterministic per (seed, config)."""
    if not train_data:
        raise ValueError("empty training dataset")
    root = Rng(cfg.seed)
    model = build_model(cfg, root.spawn(0))
    run_rng = root.spawn(1)
    params = model.parameters()
    opt = Adam(list(params.values()), cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)

    n_s = cfg.scoff.n_s
    metrics = []
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = list(range(len(train_data)))
        run_rng.shuffle(order)
        epoch_loss = 0.0
        usage = np.zeros(n_s)
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            for idx in batch:
                with Tape() as tape:
                    loss, traces = sequence_loss(model, train_data[idx], run_rng,
                                                 training=True)
                backward(loss, tape)
                epoch_loss += loss.item()
                for trace in traces:
                    if trace is None:
                        continue
                    for j in trace.schema:
                        if j >= 0:
                            usage[j] += 1
            opt.apply(scale=1.0 / len(batch), clip=cfg.clip_norm)
        epoch_loss /= len(order)

        usage_frac = (usage / usage.sum()).tolist() if usage.sum() else [0.0] * n_s
        dead = [j for j, frac in enumerate(usage_frac) if frac < 0.01] \
            if usage.sum() else []

        eval_self, eval_teacher, purity = [], [], None
        if eval_data:
            subset = eval_data[:cfg.eval_subset]
            if cfg.task in FRAME_TASKS:
                eval_teacher, eval_self = eval_rollout(model, subset, cfg.burn_in,
                                                       cfg.horizon)
            else:
                eval_self = [eval_adding(model, subset)]
                eval_teacher = list(eval_self)
            if model.kind == "scoff":
                traces, labels = collect_traces(model, subset, cfg.burn_in)
                try:
                    purity = schema_alignment_purity(traces, labels)
                except ValueError:
                    purity = None

        record = MetricsRecord(
            epoch=epoch, train_loss=epoch_loss, eval_losses=eval_self,
            eval_teacher=eval_teacher, schema_usage=usage_frac,
            alignment_purity=purity, dead_schemata=dead,
            wall_seconds=time.perf_counter() - started)
        metrics.append(record)
        if log is not None:
            purity_s = "-" if purity is None else f"{purity:.3f}"
            log(f"epoch {epoch}: train_loss={epoch_loss:.6f} "
                f"purity={purity_s} usage={[round(u, 3) for u in usage_frac]} "
                f"({record.wall_seconds:.1f}s)")
    return metrics, model


# ---- checkpoints -------------------------------------------------------------


def save_checkpoint(directory, params: dict, config: dict) -> None:
    import os
    os.makedirs(directory, exist_ok=True)
    names = sorted(params)
    manifest = {"tensors": [{"name": n, "shape": list(params[n].shape)}
                            for n in names],
                "config": config}
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    with open(os.path.join(directory, "tensors.bin"), "wb") as f:
        for n in names:
            nm.write_tensor(f, params[n])


def load_checkpoint(directory):
    import os
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    tensors = {}
    with open(os.path.join(directory, "tensors.bin"), "rb") as f:
        for entry in manifest["tensors"]:
            t = nm.read_tensor(f)
            if list(t.shape) != entry["shape"]:
                raise ValueError(f"checkpoint shape mismatch for {entry['name']}")
            tensors[entry["name"]] = t
    return tensors, manifest["config"]


def restore_model(model, tensors: dict) -> None:
    params = model.parameters()
    missing = set(params) - set(tensors)
    if missing:
        raise ValueError(f"checkpoint is missing parameters: {sorted(missing)}")
    for name, p in params.items():
        if tensors[name].shape != p.shape:
            raise ValueError(f"shape mismatch restoring {name}")
        p.data[...] = tensors[name].data
