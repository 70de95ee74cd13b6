"""Command-line entry point.

Commands: gen-data, train, eval, trace, check-grad, param-count. Config files
are plain ``key = value`` lines with optional ``[section]`` headers and ``#``
comments; ``--set key=value`` overrides win over file values. Every command
that writes artifacts also writes the resolved configuration beside them, and
every artifact is reproducible byte for byte from (command, config, seed).

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 verification failure.
"""

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from . import tasks
from .codec import CodecConfig
from .layer import ScoffConfig, ScoffLayer, schema_usage, write_traces
from .numerics import Tensor, grad_check
from .recurrent import recurrent_param_count
from .rng import Rng
from .training import (TrainConfig, build_model, collect_traces, eval_adding,
                       eval_rollout, load_checkpoint, restore_model,
                       save_checkpoint, train_model)


class ConfigError(Exception):
    pass


# key -> (type, default); None defaults are filled per task after merging
_KEYS = {
    "task": (str, "switching"),
    "model": (str, "scoff"),
    "seed": (int, 0),
    "n_f": (int, 6),
    "n_s": (int, 4),
    "d_h": (int, 32),
    "n_sel": (int, 0),           # 0 means all slots active every step
    "sel_keys": (int, 16),
    "tau": (float, 1.0),
    "hard_selection": (bool, True),
    "inp_heads": (int, 1),
    "inp_keys": (int, 16),
    "inp_values": (int, 32),
    "inp_dropout": (float, 0.1),
    "comm_heads": (int, 2),
    "comm_keys": (int, 16),
    "comm_values": (int, 0),     # 0 means d_h; anything else must equal d_h
    "comm_dropout": (float, 0.1),
    "comm_sparse": (bool, False),
    "patch": (int, 4),
    "d_c": (int, 16),
    "d_pos": (int, 8),
    "enc_hidden": (int, 32),
    "dec_hidden": (int, 64),
    "readout_hidden": (int, 32),
    "readout_width": (int, 32),
    "lr": (float, None),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "epsilon": (float, 1e-8),
    "clip_norm": (float, 1.0),
    "batch_size": (int, 64),
    "epochs": (int, 10),
    "eval_subset": (int, 32),
    "baseline_width": (int, 0),  # 0 means n_f * d_h
    "burn_in": (int, None),
    "horizon": (int, None),
    "train_count": (int, 2000),
    "test_count": (int, 500),
    "length": (int, None),
    "n_balls": (int, 2),
    "occluder": (bool, False),
    "mode": (str, "mixed"),
    "operands": (str, "2,4"),
    "data": (str, ""),
    "checkpoint": (str, ""),
}

_TASKS = ("single", "switching", "bouncing", "adding")
_MODELS = ("scoff", "gru")
_LENGTH_DEFAULTS = {"single": 20, "switching": 21, "bouncing": 30, "adding": 50}


@dataclass
class RunConfig:
    command: str
    config_path: "str | None" = None
    overrides: list = field(default_factory=list)
    seed: "int | None" = None
    out_dir: str = "out"


def _coerce(key: str, raw: str, where: str):
    kind = _KEYS[key][0]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: malformed value for {key!r}: {raw!r}") from None


def parse_config(path: "str | None", overrides=(), seed: "int | None" = None) -> dict:
    """Defaults, then file values, then overrides; unknown keys are errors."""
    resolved = {k: d for k, (_, d) in _KEYS.items()}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                s = line.split("#", 1)[0].strip()
                if not s:
                    continue
                if s.startswith("[") and s.endswith("]"):
                    continue  # section headers are organizational only
                if "=" not in s:
                    raise ConfigError(f"{path}:{lineno}: expected key = value, got {s!r}")
                key, _, raw = s.partition("=")
                key = key.strip()
                if key not in _KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                resolved[key] = _coerce(key, raw, f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"override: unknown key {key!r}")
        resolved[key] = _coerce(key, raw, f"override {key}")
    if seed is not None:
        resolved["seed"] = int(seed)

    task = resolved["task"]
    if task not in _TASKS:
        raise ConfigError(f"task must be one of {_TASKS}, got {task!r}")
    if resolved["model"] not in _MODELS:
        raise ConfigError(f"model must be one of {_MODELS}, got {resolved['model']!r}")
    if resolved["lr"] is None:
        resolved["lr"] = 1e-2 if task == "adding" else 1e-4
    if resolved["length"] is None:
        resolved["length"] = _LENGTH_DEFAULTS[task]
    if resolved["burn_in"] is None:
        resolved["burn_in"] = 10 if task == "bouncing" else 5
    if resolved["horizon"] is None:
        resolved["horizon"] = 15 if task == "bouncing" else 10
    if resolved["comm_values"] not in (0, resolved["d_h"]):
        raise ConfigError(
            "comm_values must equal d_h (the communication result is added "
            f"onto the state); got {resolved['comm_values']} with d_h={resolved['d_h']}")
    return resolved


def to_train_config(r: dict) -> TrainConfig:
    codec = CodecConfig(patch=r["patch"], d_c=r["d_c"], d_pos=r["d_pos"],
                        enc_hidden=r["enc_hidden"], dec_hidden=r["dec_hidden"],
                        readout_hidden=r["readout_hidden"],
                        readout_width=r["readout_width"])
    scoff = ScoffConfig(
        n_f=r["n_f"], n_s=r["n_s"], d_h=r["d_h"], d_in=codec.d_a,
        inp_heads=r["inp_heads"], inp_keys=r["inp_keys"],
        inp_values=r["inp_values"], inp_dropout=r["inp_dropout"],
        sel_keys=r["sel_keys"], comm_heads=r["comm_heads"],
        comm_keys=r["comm_keys"], comm_dropout=r["comm_dropout"],
        n_sel=(r["n_sel"] or None), tau=r["tau"],
        hard_selection=r["hard_selection"], comm_sparse=r["comm_sparse"])
    return TrainConfig(
        task=r["task"], model=r["model"], scoff=scoff, codec=codec,
        baseline_width=(r["baseline_width"] or None), lr=r["lr"],
        beta1=r["beta1"], beta2=r["beta2"], epsilon=r["epsilon"],
        batch_size=r["batch_size"], epochs=r["epochs"], seed=r["seed"],
        burn_in=r["burn_in"], horizon=r["horizon"], clip_norm=r["clip_norm"],
        eval_subset=r["eval_subset"])


def _write_snapshot(out_dir: str, resolved: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.cfg"), "w") as f:
        f.write("# resolved configuration\n")
        for key in sorted(resolved):
            f.write(f"{key} = {resolved[key]}\n")


def _require(resolved: dict, key: str) -> str:
    if not resolved[key]:
        raise ConfigError(f"missing required key: {key}")
    return resolved[key]


# ---- data generation ---------------------------------------------------------


def _gen_sequences(resolved: dict, count: int, seed_offset: int) -> list:
    task = resolved["task"]
    root = Rng(resolved["seed"])
    out = []
    for i in range(count):
        child = root.spawn(seed_offset + i)
        if task == "single":
            mode = resolved["mode"]
            if mode == "mixed":
                mode = tasks.SINGLE_MODES[child.randint(3)]
            out.append(tasks.gen_single_dynamics(child, resolved["length"], mode))
        elif task == "switching":
            out.append(tasks.gen_switching_dynamics(child, resolved["length"]))
        elif task == "bouncing":
            occ = tasks.OCCLUDER if resolved["occluder"] else None
            out.append(tasks.gen_bouncing_mini(child, resolved["length"],
                                               resolved["n_balls"], occ))
        else:
            choices = [int(x) for x in resolved["operands"].split(",") if x.strip()]
            if not choices:
                raise ConfigError("operands must list at least one count")
            n = choices[child.randint(len(choices))]
            out.append(tasks.gen_adding(child, resolved["length"], n))
    return out


def cmd_gen_data(run: RunConfig, resolved: dict) -> int:
    os.makedirs(run.out_dir, exist_ok=True)
    train = _gen_sequences(resolved, resolved["train_count"], 0)
    test = _gen_sequences(resolved, resolved["test_count"], 1_000_000)
    tasks.write_dataset(os.path.join(run.out_dir, "train.scfd"), train)
    tasks.write_dataset(os.path.join(run.out_dir, "test.scfd"), test)
    _write_snapshot(run.out_dir, resolved)
    print(f"wrote {len(train)} train / {len(test)} test sequences to {run.out_dir}")
    return 0


def cmd_train(run: RunConfig, resolved: dict) -> int:
    data_dir = _require(resolved, "data")
    train_path = os.path.join(data_dir, "train.scfd")
    test_path = os.path.join(data_dir, "test.scfd")
    for p in (train_path, test_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"dataset file not found: {p}")
    train_data = tasks.read_dataset(train_path)
    eval_data = tasks.read_dataset(test_path)
    cfg = to_train_config(resolved)
    metrics, model = train_model(cfg, train_data, eval_data,
                                 log=lambda s: print(s, file=sys.stderr))
    os.makedirs(run.out_dir, exist_ok=True)
    with open(os.path.join(run.out_dir, "metrics.jsonl"), "w") as f:
        for record in metrics:
            f.write(record.to_json())
            f.write("\n")
    save_checkpoint(os.path.join(run.out_dir, "checkpoint"),
                    model.parameters(), resolved)
    _write_snapshot(run.out_dir, resolved)
    print(f"final train loss {metrics[-1].train_loss:.6f}; artifacts in {run.out_dir}")
    return 0


def _restore(resolved: dict):
    ckpt_dir = _require(resolved, "checkpoint")
    tensors, stored = load_checkpoint(ckpt_dir)
    cfg = to_train_config(stored)
    model = build_model(cfg, Rng(stored["seed"]).spawn(0))
    restore_model(model, tensors)
    return model, cfg, stored


def cmd_eval(run: RunConfig, resolved: dict) -> int:
    data_dir = _require(resolved, "data")
    model, cfg, _ = _restore(resolved)
    test = tasks.read_dataset(os.path.join(data_dir, "test.scfd"))
    os.makedirs(run.out_dir, exist_ok=True)
    path = os.path.join(run.out_dir, "rollout_curve.csv")
    if cfg.task == "adding":
        mse = eval_adding(model, test)
        with open(path, "w") as f:
            f.write("step,mse\n")
            f.write(f"0,{mse}\n")
        print(f"test mse {mse:.6f}; curve in {path}")
    else:
        teacher, self_fed = eval_rollout(model, test, cfg.burn_in, cfg.horizon)
        with open(path, "w") as f:
            f.write("step,teacher_forced,self_fed\n")
            for i, (a, b) in enumerate(zip(teacher, self_fed)):
                f.write(f"{i},{a},{b}\n")
        print(f"mean self-fed bce {np.mean(self_fed):.6f}; curve in {path}")
    _write_snapshot(run.out_dir, resolved)
    return 0


def cmd_trace(run: RunConfig, resolved: dict) -> int:
    data_dir = _require(resolved, "data")
    model, cfg, _ = _restore(resolved)
    if model.kind != "scoff":
        raise ValueError("trace requires a scoff checkpoint")
    test = tasks.read_dataset(os.path.join(data_dir, "test.scfd"))
    subset = test[:max(1, cfg.eval_subset)]
    traces, _ = collect_traces(model, subset)
    os.makedirs(run.out_dir, exist_ok=True)
    with open(os.path.join(run.out_dir, "traces.jsonl"), "w") as f:
        write_traces(f, traces[0])
    flat = [t for seq in traces for t in seq]
    usage = schema_usage(flat, cfg.scoff.n_s)
    with open(os.path.join(run.out_dir, "schema_usage.csv"), "w") as f:
        for row in usage:
            f.write(",".join(str(v) for v in row))
            f.write("\n")
    _write_snapshot(run.out_dir, resolved)
    print(f"traced {len(subset)} sequences into {run.out_dir}")
    return 0


def cmd_check_grad(run: RunConfig, resolved: dict) -> int:
    """Two unrolled soft-selection steps over the fixed verification layer
    (3 slots, 2 schemata, width 8, 4 positions, dropout off), against central
    differences at eps=1e-5; threshold 1e-4."""
    n_f, n_s, d_h, positions = 3, 2, 8, 4
    cfg = ScoffConfig(n_f=n_f, n_s=n_s, d_h=d_h, d_in=6, inp_heads=1,
                      inp_keys=4, inp_values=6, inp_dropout=0.0, sel_keys=4,
                      comm_heads=1, comm_keys=4, comm_dropout=0.0,
                      hard_selection=False)
    rng = Rng(resolved["seed"])
    layer = ScoffLayer(cfg, rng)
    feats = [Tensor(np.asarray(rng.uniform((positions, cfg.d_in)))) for _ in range(2)]
    noise = [nm.sample_gumbel(rng, (n_f, n_s)) for _ in range(2)]
    params = list(layer.parameters().values())

    def loss_fn(_params):
        state = layer.init_state()
        for t in range(2):
            state, _ = layer.step(feats[t], state, noise=noise[t])
        return (state * state).sum()

    err = grad_check(loss_fn, params, eps=1e-5)
    print(f"max relative gradient error: {err:.3e}")
    return 0 if err < 1e-4 else 3


def cmd_param_count(run: RunConfig, resolved: dict) -> int:
    bank, mono = recurrent_param_count(resolved["n_f"], resolved["n_s"],
                                       resolved["d_h"], resolved["inp_values"])
    print(f"schema-bank recurrent parameters: {bank}")
    print(f"monolithic recurrent parameters: {mono}")
    print(f"ratio: {bank / mono:.4f}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "trace": cmd_trace,
    "check-grad": cmd_check_grad,
    "param-count": cmd_param_count,
}


def dispatch(run: RunConfig) -> int:
    if run.command not in _COMMANDS:
        raise ConfigError(f"unknown command {run.command!r}")
    resolved = parse_config(run.config_path, run.overrides, run.seed)
    return _COMMANDS[run.command](run, resolved)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def main(argv=None) -> int:
    parser = _Parser(prog="scoff", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", dest="out_dir", default="out")
    try:
        args = parser.parse_args(argv)
        run = RunConfig(command=args.command, config_path=args.config,
                        overrides=args.overrides, seed=args.seed,
                        out_dir=args.out_dir)
        return dispatch(run)
    except ConfigError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
