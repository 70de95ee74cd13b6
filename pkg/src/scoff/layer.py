"""The factorized recurrent layer: slots compete for input positions, each
active slot picks one schema from the shared bank to run its update, and the
slots then exchange information through soft attention, all within one step.

State is a plain [n_f, d_h] Tensor, one row per slot.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .attention import AttentionProjections, attend, head_mean, topk_mask
from .numerics import Tensor
from .recurrent import SchemaBank, gru_step, init_schema
from .rng import Rng


@dataclass
class ScoffConfig:
    """Layer geometry and selection behavior.

    ``inp_values`` doubles as the input width of every schema cell, and the
    communication value width always equals d_h because the communication
    result is added onto the state.
    """

    n_f: int = 6
    n_s: int = 4
    d_h: int = 32
    d_in: int = 24
    inp_heads: int = 1
    inp_keys: int = 16
    inp_values: int = 32
    inp_dropout: float = 0.1
    sel_keys: int = 16
    comm_heads: int = 2
    comm_keys: int = 16
    comm_dropout: float = 0.1
    n_sel: "int | None" = None
    tau: float = 1.0
    hard_selection: bool = True
    comm_sparse: bool = False

    def __post_init__(self):
        if self.n_sel is None:
            self.n_sel = self.n_f
        self.validate()

    def validate(self) -> None:
        for name in ("n_f", "n_s", "d_h", "d_in", "inp_heads", "inp_keys",
                     "inp_values", "sel_keys", "comm_heads", "comm_keys"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 1 <= self.n_sel <= self.n_f:
            raise ValueError(f"n_sel must lie in [1, {self.n_f}], got {self.n_sel}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.inp_values % self.inp_heads:
            raise ValueError("inp_values must divide evenly across inp_heads")
        if self.d_h % self.comm_heads:
            raise ValueError("d_h must divide evenly across comm_heads")
        for name in ("inp_dropout", "comm_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0,1)")


@dataclass
class StepTrace:
    """Per-step record of what the layer attended to and selected."""

    input_weights: np.ndarray   # [n_f, P], head-mean, columns sum to 1 over slots
    active: np.ndarray          # bool [n_f]
    schema: np.ndarray          # int [n_f], -1 for inactive slots
    schema_scores: np.ndarray   # [n_f, n_s] soft selection weights, zero rows if inactive
    comm_weights: np.ndarray    # [n_f, n_f], head-mean, rows sum to 1 over sources

    def to_record(self, t: int) -> dict:
        return {
            "t": t,
            "active": [bool(a) for a in self.active],
            "schema": [int(s) for s in self.schema],
            "input_weights": [[float(v) for v in row] for row in self.input_weights],
            "comm_weights": [[float(v) for v in row] for row in self.comm_weights],
        }


class ScoffLayer:
    """Drop-in recurrent layer over position-encoded features."""

    def __init__(self, config: ScoffConfig, rng: Rng):
        config.validate()
        self.config = config
        c = config
        self.input_proj = AttentionProjections.build(
            rng, c.d_h, c.d_in, c.d_in, c.inp_heads, c.inp_keys, c.inp_values,
            c.inp_dropout)
        self.sel_query = nm.glorot(rng, c.d_h, c.sel_keys)
        self.sel_key = nm.glorot(rng, c.d_h, c.sel_keys)
        self.comm_proj = AttentionProjections.build(
            rng, c.d_h, c.d_h, c.d_h, c.comm_heads, c.comm_keys, c.d_h,
            c.comm_dropout)
        self.bank = SchemaBank(
            [init_schema(rng, c.inp_values, c.d_h) for _ in range(c.n_s)])

    def init_state(self) -> Tensor:
        return Tensor._lift(np.zeros((self.config.n_f, self.config.d_h)))

    # ---- step 2: competition over input positions ----------------------

    def input_read(self, features: Tensor, state: Tensor,
                   rng: "Rng | None" = None, training: bool = False):
        """Per-slot reads: softmax over slots splits each position's mass.

        Returns (z [n_f, inp_values], head-mean weights [n_f, P], relevance
        [n_f]) where relevance is each slot's strongest positional claim,
        used for sparse activation.
        """
        c = self.config
        if features.shape[1] != c.d_in:
            raise ValueError(f"feature width {features.shape[1]} != configured d_in {c.d_in}")
        scale = 1.0 / math.sqrt(c.inp_keys)
        outs, weights = [], []
        for h in range(c.inp_heads):
            q = nm.matmul(state, self.input_proj.query[h])
            k = nm.matmul(features, self.input_proj.key[h])
            v = nm.matmul(features, self.input_proj.value[h])
            aw, out = attend(q, k, v, "queriers", scale,
                             dropout=self.input_proj.dropout, rng=rng,
                             training=training)
            outs.append(out)
            weights.append(aw)
        z = outs[0] if len(outs) == 1 else nm.concat(outs, axis=1)
        mean_w = head_mean(weights)
        relevance = mean_w.max(axis=1)
        return z, mean_w, relevance

    # ---- step 3: schema selection and update ----------------------------

    def schema_select_update(self, z: Tensor, state: Tensor,
                             rng: "Rng | None" = None,
                             noise: "Tensor | None" = None):
        """Hypothetical updates under every schema, then per-slot selection.

        Selection scores are the raw query-key dots plus Gumbel noise, with
        no scale factor. Hard mode forwards the one-hot winner and routes the
        gradient through the softened scores; soft mode mixes hypotheticals.
        Returns (new rows [n_f, d_h], indices [n_f], soft scores [n_f, n_s]).
        """
        c = self.config
        hyps = [gru_step(z, state, self.bank[j]) for j in range(c.n_s)]
        hstack = nm.stack(hyps, axis=1)  # [n_f, n_s, d_h]
        keys = nm.reshape(
            nm.matmul(nm.reshape(hstack, (c.n_f * c.n_s, c.d_h)), self.sel_key),
            (c.n_f, c.n_s, c.sel_keys))
        q = nm.reshape(nm.matmul(state, self.sel_query), (c.n_f, 1, c.sel_keys))
        logits = (q * keys).sum(axis=2)  # [n_f, n_s]
        if noise is None:
            if rng is None:
                raise ValueError("schema selection needs either an rng or explicit noise")
            noise = nm.sample_gumbel(rng, (c.n_f, c.n_s))
        if noise.shape != (c.n_f, c.n_s):
            raise ValueError(f"noise must be [{c.n_f}, {c.n_s}], got {noise.shape}")
        scores = logits + noise
        indices = np.argmax(scores.data, axis=1)
        soft = nm.softmax(scores * (1.0 / c.tau), axis=1)
        if c.hard_selection:
            hard = np.zeros((c.n_f, c.n_s))
            hard[np.arange(c.n_f), indices] = 1.0
            sel = nm.straight_through(soft, hard)
        else:
            sel = soft
        h_new = (nm.reshape(sel, (c.n_f, c.n_s, 1)) * hstack).sum(axis=1)
        return h_new, indices, soft.data.copy()

    # ---- step 4: communication ------------------------------------------

    def communicate(self, state_prev: Tensor, state_new: Tensor,
                    rng: "Rng | None" = None, training: bool = False,
                    receive_mask: "np.ndarray | None" = None):
        """Residual exchange: queries from the pre-update state, keys and
        values from the post-update state, normalized over sources.
        """
        c = self.config
        scale = 1.0 / math.sqrt(c.comm_keys)
        outs, weights = [], []
        for h in range(c.comm_heads):
            q = nm.matmul(state_prev, self.comm_proj.query[h])
            k = nm.matmul(state_new, self.comm_proj.key[h])
            v = nm.matmul(state_new, self.comm_proj.value[h])
            aw, out = attend(q, k, v, "candidates", scale,
                             dropout=self.comm_proj.dropout, rng=rng,
                             training=training)
            outs.append(out)
            weights.append(aw)
        update = outs[0] if len(outs) == 1 else nm.concat(outs, axis=1)
        if receive_mask is not None:
            update = update * Tensor._lift(receive_mask.astype(np.float64).reshape(-1, 1))
        return state_new + update, head_mean(weights)

    # ---- one full step ----------------------------------------------------

    def step(self, features: Tensor, state: Tensor, rng: "Rng | None" = None,
             training: bool = False, noise: "Tensor | None" = None):
        """Read, select-and-update the most relevant slots, communicate."""
        c = self.config
        z, w_in, relevance = self.input_read(features, state, rng, training)
        if c.n_sel < c.n_f:
            active = topk_mask(relevance, c.n_sel)
        else:
            active = np.ones(c.n_f, dtype=bool)
        h_upd, indices, soft = self.schema_select_update(z, state, rng, noise)
        if active.all():
            h_mid = h_upd
        else:
            mask = active.astype(np.float64).reshape(-1, 1)
            h_mid = h_upd * Tensor._lift(mask) + state * Tensor._lift(1.0 - mask)
            indices = np.where(active, indices, -1)
            soft = soft * active.reshape(-1, 1)
        recv = active if (c.comm_sparse and not active.all()) else None
        state_out, w_comm = self.communicate(state, h_mid, rng, training, recv)
        trace = StepTrace(input_weights=w_in, active=active, schema=indices,
                          schema_scores=soft, comm_weights=w_comm)
        return state_out, trace

    def rollout(self, feature_seq: list, initial: "Tensor | None" = None,
                rng: "Rng | None" = None, training: bool = False):
        """Fold :meth:`step` over the sequence; returns (states, traces)."""
        if not feature_seq:
            raise ValueError("rollout needs a non-empty feature sequence")
        state = self.init_state() if initial is None else initial
        states, traces = [], []
        for features in feature_seq:
            state, trace = self.step(features, state, rng, training)
            states.append(state)
            traces.append(trace)
        return states, traces

    def parameters(self) -> dict:
        out = {}
        for h in range(self.config.inp_heads):
            out[f"inp_q{h}"] = self.input_proj.query[h]
            out[f"inp_k{h}"] = self.input_proj.key[h]
            out[f"inp_v{h}"] = self.input_proj.value[h]
        out["sel_q"] = self.sel_query
        out["sel_k"] = self.sel_key
        for h in range(self.config.comm_heads):
            out[f"comm_q{h}"] = self.comm_proj.query[h]
            out[f"comm_k{h}"] = self.comm_proj.key[h]
            out[f"comm_v{h}"] = self.comm_proj.value[h]
        for j, schema in enumerate(self.bank):
            for name, t in zip(schema._FIELDS, schema.params()):
                out[f"schema{j}.{name}"] = t
        return out


def write_traces(f, traces: list) -> None:
    """JSON-lines trace stream, one record per timestep."""
    for t, trace in enumerate(traces):
        f.write(json.dumps(trace.to_record(t), sort_keys=True))
        f.write("\n")


def schema_usage(traces: list, n_s: int) -> np.ndarray:
    """[n_f, n_s] matrix of selection frequencies over a trace stream."""
    if not traces:
        raise ValueError("no traces")
    n_f = traces[0].schema.shape[0]
    counts = np.zeros((n_f, n_s))
    for trace in traces:
        for k in range(n_f):
            j = trace.schema[k]
            if j >= 0:
                counts[k, j] += 1
    totals = counts.sum(axis=1, keepdims=True)
    totals[totals == 0] = 1.0
    return counts / totals
