"""Trainable models sharing one sequence interface.

Both models expose encode / init_state / step / readout / parameters, so the
training loop and evaluators cannot tell them apart. The baseline is a single
monolithic GRU cell over mean-pooled features with the same encoder and
readout machinery.

When ``step`` is called without an rng the schema choice is greedy (zero
selection noise) and dropout is off, which is the deterministic evaluation
mode.
"""

import numpy as np

from .codec import (CodecConfig, FrameReadout, PositionEncoder, ScalarReadout,
                    TokenEncoder)
from .layer import ScoffConfig, ScoffLayer
from .numerics import Tensor
from .recurrent import gru_step, init_schema
from .rng import Rng
from .tasks import GRID

FRAME_TASKS = ("single", "switching", "bouncing")
TOKEN_FEATURES = 3  # value plus the two operand indicator channels


def _build_encoder(task: str, codec_cfg: CodecConfig, rng: Rng):
    if task in FRAME_TASKS:
        return PositionEncoder(rng, GRID, GRID, codec_cfg)
    if task == "adding":
        return TokenEncoder(rng, TOKEN_FEATURES, codec_cfg)
    raise ValueError(f"unknown task {task!r}")


class ScoffModel:
    kind = "scoff"

    def __init__(self, task: str, scoff_cfg: ScoffConfig, codec_cfg: CodecConfig,
                 rng: Rng):
        if scoff_cfg.d_in != codec_cfg.d_a:
            raise ValueError(
                f"layer d_in {scoff_cfg.d_in} must equal encoder width {codec_cfg.d_a}")
        self.task = task
        self.encoder = _build_encoder(task, codec_cfg, rng)
        self.layer = ScoffLayer(scoff_cfg, rng)
        if task in FRAME_TASKS:
            self.head = FrameReadout(rng, scoff_cfg.d_h, codec_cfg, self.encoder)
        else:
            self.head = ScalarReadout(rng, scoff_cfg.d_h, codec_cfg)
        self._zero_noise = Tensor._lift(np.zeros((scoff_cfg.n_f, scoff_cfg.n_s)))

    def encode(self, x) -> Tensor:
        if self.task in FRAME_TASKS:
            return self.encoder.encode_frame(np.asarray(x, dtype=np.float64))
        return self.encoder.encode_token(np.asarray(x, dtype=np.float64))

    def init_state(self) -> Tensor:
        return self.layer.init_state()

    def step(self, features: Tensor, state: Tensor, rng: "Rng | None" = None,
             training: bool = False):
        noise = None if rng is not None else self._zero_noise
        return self.layer.step(features, state, rng, training, noise=noise)

    def readout(self, state: Tensor) -> Tensor:
        return self.head.readout(state)

    def parameters(self) -> dict:
        out = {}
        for name, t in self.encoder.params().items():
            out[name] = t
        for name, t in self.layer.parameters().items():
            out[f"layer.{name}"] = t
        for name, t in self.head.params().items():
            out[name] = t
        return out


class GruBaseline:
    kind = "gru"

    def __init__(self, task: str, width: int, codec_cfg: CodecConfig, rng: Rng):
        if width < 1:
            raise ValueError(f"hidden width must be positive, got {width}")
        self.task = task
        self.width = width
        self.encoder = _build_encoder(task, codec_cfg, rng)
        self.cell = init_schema(rng, codec_cfg.d_a, width)
        if task in FRAME_TASKS:
            self.head = FrameReadout(rng, width, codec_cfg, self.encoder)
        else:
            self.head = ScalarReadout(rng, width, codec_cfg)

    def encode(self, x) -> Tensor:
        if self.task in FRAME_TASKS:
            return self.encoder.encode_frame(np.asarray(x, dtype=np.float64))
        return self.encoder.encode_token(np.asarray(x, dtype=np.float64))

    def init_state(self) -> Tensor:
        return Tensor._lift(np.zeros((1, self.width)))

    def step(self, features: Tensor, state: Tensor, rng: "Rng | None" = None,
             training: bool = False):
        pooled = features.mean(axis=0, keepdims=True)
        return gru_step(pooled, state, self.cell), None

    def readout(self, state: Tensor) -> Tensor:
        return self.head.readout(state)

    def parameters(self) -> dict:
        out = {}
        for name, t in self.encoder.params().items():
            out[name] = t
        for name, t in zip(self.cell._FIELDS, self.cell.params()):
            out[f"cell.{name}"] = t
        for name, t in self.head.params().items():
            out[name] = t
        return out
