"""Input encoders and output readouts around the recurrent layer.

Frames are 16x16 grayscale rasters cut into square patches; each patch runs
through a shared two-layer perceptron and gets a learned position embedding
appended, giving one feature row per position. Scalar-task tokens take the
same perceptron route as a single position. Readout transforms every slot row
with one shared perceptron, pools the rows with a learned attention query
(so slot order cannot matter), and projects the pooled vector to the task
output.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Tensor
from .rng import Rng


@dataclass
class CodecConfig:
    patch: int = 4
    d_c: int = 16
    d_pos: int = 8
    enc_hidden: int = 32
    dec_hidden: int = 64
    readout_hidden: int = 32
    readout_width: int = 32

    @property
    def d_a(self) -> int:
        return self.d_c + self.d_pos


class PositionEncoder:
    """Patch perceptron plus learned position embeddings."""

    def __init__(self, rng: Rng, height: int, width: int, cfg: CodecConfig):
        if height % cfg.patch or width % cfg.patch:
            raise ValueError(
                f"frame {height}x{width} not divisible by patch size {cfg.patch}")
        self.height = height
        self.width = width
        self.cfg = cfg
        s = cfg.patch
        self.grid = (height // s, width // s)
        self.positions = self.grid[0] * self.grid[1]
        self.w1 = nm.glorot(rng, s * s, cfg.enc_hidden)
        self.b1 = nm.zeros(cfg.enc_hidden, requires_grad=True)
        self.w2 = nm.glorot(rng, cfg.enc_hidden, cfg.d_c)
        self.b2 = nm.zeros(cfg.d_c, requires_grad=True)
        self.pos_table = nm.glorot(rng, self.positions, cfg.d_pos)

    @property
    def d_a(self) -> int:
        return self.cfg.d_a

    def patch_rows(self, frame: np.ndarray) -> np.ndarray:
        s = self.cfg.patch
        gh, gw = self.grid
        return (np.asarray(frame, dtype=np.float64)
                .reshape(gh, s, gw, s)
                .transpose(0, 2, 1, 3)
                .reshape(self.positions, s * s))

    def encode_frame(self, frame: np.ndarray) -> Tensor:
        """[P, d_a] rows, each patch encoding with its position embedding."""
        frame = np.asarray(frame, dtype=np.float64)
        if frame.shape != (self.height, self.width):
            raise ValueError(f"expected {self.height}x{self.width} frame, got {frame.shape}")
        if frame.min() < 0.0 or frame.max() > 1.0:
            raise ValueError("frame values must lie in [0, 1]")
        x = Tensor._lift(self.patch_rows(frame))
        c = nm.matmul(nm.tanh(nm.matmul(x, self.w1) + self.b1), self.w2) + self.b2
        return nm.concat([c, self.pos_table], axis=1)

    def params(self) -> dict:
        return {"enc_w1": self.w1, "enc_b1": self.b1, "enc_w2": self.w2,
                "enc_b2": self.b2, "enc_pos": self.pos_table}


class TokenEncoder:
    """Lifts one input token to a single feature row (P = 1)."""

    def __init__(self, rng: Rng, n_features: int, cfg: CodecConfig):
        self.n_features = n_features
        self.cfg = cfg
        self.positions = 1
        self.w1 = nm.glorot(rng, n_features, cfg.enc_hidden)
        self.b1 = nm.zeros(cfg.enc_hidden, requires_grad=True)
        self.w2 = nm.glorot(rng, cfg.enc_hidden, cfg.d_c)
        self.b2 = nm.zeros(cfg.d_c, requires_grad=True)
        self.pos_table = nm.glorot(rng, 1, cfg.d_pos)

    @property
    def d_a(self) -> int:
        return self.cfg.d_a

    def encode_token(self, token: np.ndarray) -> Tensor:
        token = np.asarray(token, dtype=np.float64)
        if token.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features}-feature token, got {token.shape}")
        x = Tensor(token.reshape(1, self.n_features))
        c = nm.matmul(nm.tanh(nm.matmul(x, self.w1) + self.b1), self.w2) + self.b2
        return nm.concat([c, self.pos_table], axis=1)

    def params(self) -> dict:
        return {"enc_w1": self.w1, "enc_b1": self.b1, "enc_w2": self.w2,
                "enc_b2": self.b2, "enc_pos": self.pos_table}


class ReadoutBase:
    """Shared slot transform and attention pooling over slot rows."""

    def __init__(self, rng: Rng, d_h: int, cfg: CodecConfig):
        self.cfg = cfg
        self.w1 = nm.glorot(rng, d_h, cfg.readout_hidden)
        self.b1 = nm.zeros(cfg.readout_hidden, requires_grad=True)
        self.w2 = nm.glorot(rng, cfg.readout_hidden, cfg.readout_width)
        self.b2 = nm.zeros(cfg.readout_width, requires_grad=True)
        self.pool_q = nm.glorot(rng, cfg.readout_width, 1)

    def pooled(self, state: Tensor) -> Tensor:
        """[1, readout_width]: transform rows, pool with the learned query."""
        rows = nm.matmul(nm.tanh(nm.matmul(state, self.w1) + self.b1), self.w2) + self.b2
        w = nm.softmax(nm.matmul(rows, self.pool_q), axis=0)
        return nm.matmul(nm.transpose(w), rows)

    def params(self) -> dict:
        return {"ro_w1": self.w1, "ro_b1": self.b1, "ro_w2": self.w2,
                "ro_b2": self.b2, "ro_pool": self.pool_q}


class FrameReadout(ReadoutBase):
    """Per-pixel logit map from a position-wise perceptron over the pooled
    vector concatenated with the encoder's position embeddings.

    The hidden layer is what lets the logits couple state content with
    position; a plain linear projection of the concatenation would decompose
    into (state term) + (position term) and could never draw content at a
    state-dependent location.
    """

    def __init__(self, rng: Rng, d_h: int, cfg: CodecConfig, encoder: PositionEncoder):
        super().__init__(rng, d_h, cfg)
        self.encoder = encoder
        s = cfg.patch
        self.w_dec1 = nm.glorot(rng, cfg.readout_width + cfg.d_pos, cfg.dec_hidden)
        self.b_dec1 = nm.zeros(cfg.dec_hidden, requires_grad=True)
        self.w_dec2 = nm.glorot(rng, cfg.dec_hidden, s * s)
        self.b_dec2 = nm.zeros(s * s, requires_grad=True)
        self._ones = Tensor._lift(np.ones((encoder.positions, 1)))

    def readout(self, state: Tensor) -> Tensor:
        """[H, W] logits."""
        pooled = self.pooled(state)
        rows = nm.matmul(self._ones, pooled)  # broadcast pooled to every position
        rows = nm.concat([rows, self.encoder.pos_table], axis=1)
        hidden = nm.tanh(nm.matmul(rows, self.w_dec1) + self.b_dec1)
        patches = nm.matmul(hidden, self.w_dec2) + self.b_dec2
        gh, gw = self.encoder.grid
        s = self.cfg.patch
        img = nm.transpose(nm.reshape(patches, (gh, gw, s, s)), (0, 2, 1, 3))
        return nm.reshape(img, (self.encoder.height, self.encoder.width))

    def params(self) -> dict:
        out = super().params()
        out["ro_dec_w1"] = self.w_dec1
        out["ro_dec_b1"] = self.b_dec1
        out["ro_dec_w2"] = self.w_dec2
        out["ro_dec_b2"] = self.b_dec2
        return out


class ScalarReadout(ReadoutBase):
    """Single regression output from the pooled vector."""

    def __init__(self, rng: Rng, d_h: int, cfg: CodecConfig):
        super().__init__(rng, d_h, cfg)
        self.w_out = nm.glorot(rng, cfg.readout_width, 1)
        self.b_out = nm.zeros(1, requires_grad=True)

    def readout(self, state: Tensor) -> Tensor:
        pooled = self.pooled(state)
        return nm.reshape(nm.matmul(pooled, self.w_out) + self.b_out, ())

    def params(self) -> dict:
        out = super().params()
        out["ro_out_w"] = self.w_out
        out["ro_out_b"] = self.b_out
        return out
