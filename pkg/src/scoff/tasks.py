"""Synthetic sequence generators with exact ground truth.

Video tasks live on a 16x16 binary grid with 2x2 balls and small integer
velocities, so the physics is exact and every frame can be re-rendered from
the recorded ball states. The adding task produces value/indicator channel
sequences with an exact scalar target.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .rng import Rng

GRID = 16
BALL = 2
POS_MAX = GRID - BALL  # largest valid top-left coordinate

# switching task geometry: oscillation bounds for the moving coordinate and
# the two mode-indicator pixels in the bottom-left corner
OSC_LO = 2
OSC_HI = 11
INDICATOR_ROW = GRID - 1

# centered 4-row by 8-column occluder, drawn as background
OCCLUDER = (6, 4, 4, 8)

SINGLE_MODES = ("accelerate", "constant", "random_walk")
MODE_IDS = {name: i for i, name in enumerate(SINGLE_MODES)}
V_CLAMP = 3  # accelerate mode keeps each velocity component in [-3, 3]

TASK_IDS = {"single": 1, "switching": 2, "bouncing": 3, "adding": 4}
_WALK_STEPS = ((0, 1), (0, -1), (1, 0), (-1, 0))


@dataclass
class FrameSequence:
    task: str
    frames: np.ndarray                    # uint8 [T, GRID, GRID], values {0,1}
    labels: np.ndarray                    # int64 [T], dynamics mode per step
    positions: "np.ndarray | None" = None  # int64 [T, n_balls, 2]
    velocities: "np.ndarray | None" = None
    occluder: "tuple | None" = None
    indicators: bool = False

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def rerender(self) -> np.ndarray:
        """Frames recomputed from the recorded ball states."""
        if self.positions is None:
            raise ValueError("sequence carries no ball states")
        out = np.zeros_like(self.frames)
        for t in range(self.length):
            mode = int(self.labels[t]) if self.indicators else None
            out[t] = render_frame(self.positions[t], indicator_mode=mode,
                                  occluder=self.occluder)
        return out


@dataclass
class AddingSequence:
    values: np.ndarray      # f64 [L], drawn U(0,1)
    indicators: np.ndarray  # uint8 [L, 2], first/second-half operand marks
    target: float
    n_operands: int

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def tokens(self) -> np.ndarray:
        """f64 [L, 3] model inputs: value plus the two indicator channels."""
        return np.column_stack([self.values, self.indicators.astype(np.float64)])


def render_frame(positions, indicator_mode=None, occluder=None) -> np.ndarray:
    frame = np.zeros((GRID, GRID), dtype=np.uint8)
    for r, c in np.asarray(positions).reshape(-1, 2):
        frame[r:r + BALL, c:c + BALL] = 1
    if indicator_mode is not None:
        frame[INDICATOR_ROW, int(indicator_mode)] = 1
    if occluder is not None:
        top, left, h, w = occluder
        frame[top:top + h, left:left + w] = 0
    return frame


def _reflect(p: int, v: int, lo: int = 0, hi: int = POS_MAX) -> tuple:
    """Advance one coordinate with wall reflection; returns (p', v')."""
    p += v
    if p < lo:
        p = 2 * lo - p
        v = -v
    elif p > hi:
        p = 2 * hi - p
        v = -v
    return p, v


def _sample_position(rng: Rng, lo: int = 0, hi: int = POS_MAX) -> tuple:
    return rng.randint(hi - lo + 1) + lo, rng.randint(hi - lo + 1) + lo


def _sample_velocity(rng: Rng) -> tuple:
    while True:
        v = (rng.randint(5) - 2, rng.randint(5) - 2)
        if v != (0, 0):
            return v


def _sample_accel(rng: Rng) -> tuple:
    while True:
        a = (rng.randint(3) - 1, rng.randint(3) - 1)
        if a != (0, 0):
            return a


def gen_single_dynamics(rng: Rng, length: int, mode: str, accel=None,
                        velocity=None, start=None) -> FrameSequence:
    """One ball under a fixed dynamics mode.

    accelerate: v grows by a fixed per-sequence increment each step (clamped
    to +-V_CLAMP); constant: fixed v; random_walk: a fresh unit direction
    every step. Walls reflect.
    """
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    if mode not in SINGLE_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    pos = _sample_position(rng) if start is None else tuple(start)
    if mode == "random_walk":
        vel = (0, 0)
    else:
        vel = _sample_velocity(rng) if velocity is None else tuple(velocity)
    if mode == "accelerate":
        acc = _sample_accel(rng) if accel is None else tuple(accel)
    else:
        acc = (0, 0)

    positions = np.zeros((length, 1, 2), dtype=np.int64)
    velocities = np.zeros((length, 1, 2), dtype=np.int64)
    positions[0, 0] = pos
    velocities[0, 0] = vel
    for t in range(1, length):
        if mode == "random_walk":
            vel = _WALK_STEPS[rng.randint(4)]
        elif mode == "accelerate":
            vel = (max(-V_CLAMP, min(V_CLAMP, vel[0] + acc[0])),
                   max(-V_CLAMP, min(V_CLAMP, vel[1] + acc[1])))
        r, vr = _reflect(pos[0], vel[0])
        c, vc = _reflect(pos[1], vel[1])
        pos, vel = (r, c), (vr, vc)
        positions[t, 0] = pos
        velocities[t, 0] = vel

    frames = np.stack([render_frame(positions[t]) for t in range(length)])
    labels = np.full(length, MODE_IDS[mode], dtype=np.int64)
    return FrameSequence("single", frames, labels, positions, velocities)


def gen_switching_dynamics(rng: Rng, length: int) -> FrameSequence:
    """One ball oscillating horizontally then vertically (or the reverse),
    switching exactly once at the midpoint. The pixel at (15, mode) marks the
    current dynamics.
    """
    if length < 11 or length % 2 == 0:
        raise ValueError(f"length must be odd and >= 11, got {length}")
    first = rng.randint(2)  # 0 horizontal, 1 vertical
    span = OSC_HI - OSC_LO + 1
    fixed = rng.randint(span) + OSC_LO
    moving = rng.randint(span) + OSC_LO
    direction = 1 if rng.randint(2) else -1
    switch_at = (length - 1) // 2
    labels = np.where(np.arange(length) < switch_at, first, 1 - first).astype(np.int64)

    positions = np.zeros((length, 1, 2), dtype=np.int64)
    velocities = np.zeros((length, 1, 2), dtype=np.int64)

    def state(mode, mov):
        # horizontal motion moves the column (axis 1), vertical the row
        return (fixed, mov) if mode == 0 else (mov, fixed)

    positions[0, 0] = state(labels[0], moving)
    velocities[0, 0] = (0, direction) if labels[0] == 0 else (direction, 0)
    for t in range(1, length):
        moving, direction = _reflect(moving, direction, OSC_LO, OSC_HI)
        positions[t, 0] = state(labels[t], moving)
        velocities[t, 0] = (0, direction) if labels[t] == 0 else (direction, 0)

    frames = np.stack([
        render_frame(positions[t], indicator_mode=int(labels[t]))
        for t in range(length)
    ])
    return FrameSequence("switching", frames, labels, positions, velocities,
                         indicators=True)


def gen_bouncing_mini(rng: Rng, length: int, n_balls: int,
                      occluder: "tuple | None" = None) -> FrameSequence:
    """Equal 2x2 balls with wall reflection and velocity exchange on contact.

    A colliding pair swaps velocity vectors and holds position for that step,
    which conserves kinetic energy exactly. Occluder pixels are forced to
    background so balls pass behind.
    """
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    if not 1 <= n_balls <= 4:
        raise ValueError(f"n_balls must lie in [1, 4], got {n_balls}")
    pos = []
    for _ in range(n_balls):
        for attempt in range(100):
            cand = _sample_position(rng)
            if all(abs(cand[0] - p[0]) >= BALL or abs(cand[1] - p[1]) >= BALL
                   for p in pos):
                pos.append(cand)
                break
        else:
            raise RuntimeError("could not place balls without overlap")
    vel = [_sample_velocity(rng) for _ in range(n_balls)]

    positions = np.zeros((length, n_balls, 2), dtype=np.int64)
    velocities = np.zeros((length, n_balls, 2), dtype=np.int64)
    positions[0] = pos
    velocities[0] = vel
    for t in range(1, length):
        moved = []
        for i in range(n_balls):
            r, vr = _reflect(pos[i][0], vel[i][0])
            c, vc = _reflect(pos[i][1], vel[i][1])
            moved.append((r, c))
            vel[i] = (vr, vc)
        for i in range(n_balls):
            for j in range(i + 1, n_balls):
                if (abs(moved[i][0] - moved[j][0]) < BALL
                        and abs(moved[i][1] - moved[j][1]) < BALL):
                    vel[i], vel[j] = vel[j], vel[i]
                    moved[i], moved[j] = pos[i], pos[j]
        pos = moved
        positions[t] = pos
        velocities[t] = vel

    frames = np.stack([
        render_frame(positions[t], occluder=occluder) for t in range(length)
    ])
    labels = np.zeros(length, dtype=np.int64)
    return FrameSequence("bouncing", frames, labels, positions, velocities,
                         occluder=occluder)


def _sample_distinct(rng: Rng, lo: int, hi: int, count: int) -> list:
    pool = list(range(lo, hi))
    if count > len(pool):
        raise ValueError(f"cannot pick {count} distinct positions from [{lo},{hi})")
    for i in range(count):
        j = i + rng.randint(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:count])


def gen_adding(rng: Rng, length: int, n_operands: int) -> AddingSequence:
    """Uniform values with ceil(N/2) operands marked in the first half of the
    sequence and floor(N/2) in the second; the target is their exact sum.
    """
    if n_operands < 1 or n_operands > length:
        raise ValueError(f"n_operands must lie in [1, {length}], got {n_operands}")
    values = np.asarray(rng.uniform(length))
    half = (length + 1) // 2
    first = _sample_distinct(rng, 0, half, (n_operands + 1) // 2)
    second = _sample_distinct(rng, half, length, n_operands // 2)
    indicators = np.zeros((length, 2), dtype=np.uint8)
    indicators[first, 0] = 1
    indicators[second, 1] = 1
    target = float(sum(values[i] for i in first) + sum(values[i] for i in second))
    return AddingSequence(values, indicators, target, n_operands)


# ---- dataset files ---------------------------------------------------------

_MAGIC = b"SCFD"


def write_dataset(path, sequences: list) -> None:
    """Header: magic, u32 task id, u32 count, u32 T (or L), u32 H, u32 W."""
    if not sequences:
        raise ValueError("refusing to write an empty dataset")
    first = sequences[0]
    if isinstance(first, AddingSequence):
        task, t_or_l, h, w = "adding", first.length, 0, 0
    else:
        task, t_or_l = first.task, first.length
        h, w = first.frames.shape[1:]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IIIII", TASK_IDS[task], len(sequences), t_or_l, h, w))
        for seq in sequences:
            if seq.length != t_or_l:
                raise ValueError("all sequences in a dataset must share length")
            if isinstance(seq, AddingSequence):
                triple = np.column_stack([
                    seq.values, seq.indicators.astype(np.float64)])
                f.write(triple.astype("<f8").tobytes(order="C"))
                f.write(struct.pack("<d", seq.target))
                f.write(struct.pack("<I", seq.n_operands))
            else:
                f.write(seq.frames.astype(np.uint8).tobytes(order="C"))
                f.write(seq.labels.astype(np.uint8).tobytes(order="C"))


def read_dataset(path) -> list:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a dataset file")
        task_id, count, t_or_l, h, w = struct.unpack("<IIIII", f.read(20))
        names = {v: k for k, v in TASK_IDS.items()}
        if task_id not in names:
            raise ValueError(f"unknown task id {task_id}")
        task = names[task_id]
        out = []
        for _ in range(count):
            if task == "adding":
                triples = np.frombuffer(f.read(8 * 3 * t_or_l), dtype="<f8")
                triples = triples.reshape(t_or_l, 3)
                (target,) = struct.unpack("<d", f.read(8))
                (n_ops,) = struct.unpack("<I", f.read(4))
                out.append(AddingSequence(
                    triples[:, 0].astype(np.float64),
                    triples[:, 1:].astype(np.uint8), float(target), n_ops))
            else:
                frames = np.frombuffer(f.read(t_or_l * h * w), dtype=np.uint8)
                frames = frames.reshape(t_or_l, h, w).copy()
                labels = np.frombuffer(f.read(t_or_l), dtype=np.uint8)
                out.append(FrameSequence(
                    task, frames, labels.astype(np.int64),
                    indicators=(task == "switching"),
                    occluder=None))
        return out
