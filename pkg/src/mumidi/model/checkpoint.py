"""Self-describing checkpoint files.

A checkpoint is an ``.npz`` archive. Every parameter is stored under its
module name as a little-endian float64 array; Adam moments live under
``adam/<name>/exp_avg`` and ``adam/<name>/exp_avg_sq``. The ``__meta__``
entry holds UTF-8 JSON with the format version, model config, training
config, step counter and any caller-supplied run config.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .network import AccompanimentModel
from .train import TrainConfig, TrainResult, make_optimizer

FORMAT_VERSION = "popmag-ckpt-1"
META_KEY = "__meta__"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: AccompanimentModel
    train_config: TrainConfig
    step: int
    meta: dict
    optimizer: torch.optim.Adam | None = None

    def as_train_result(self) -> TrainResult:
        opt = self.optimizer or make_optimizer(self.model, self.train_config)
        return TrainResult(self.model, opt, [], self.step)


def _le64(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().double().numpy().astype("<f8")


def save_checkpoint(path, result: TrainResult, tc: TrainConfig, run_config: dict | None = None) -> None:
    model = result.model
    arrays: dict[str, np.ndarray] = {}
    names = []
    for name, p in model.named_parameters():
        arrays[name] = _le64(p)
        names.append(name)
        st = result.optimizer.state.get(p, {})
        if "exp_avg" in st:
            arrays[f"adam/{name}/exp_avg"] = _le64(st["exp_avg"])
            arrays[f"adam/{name}/exp_avg_sq"] = _le64(st["exp_avg_sq"])
    adam_steps = {
        name: int(result.optimizer.state[p]["step"])
        for name, p in model.named_parameters()
        if "step" in result.optimizer.state.get(p, {})
    }
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_json(),
        "train_config": tc.to_json(),
        "step": result.step,
        "parameters": {n: list(arrays[n].shape) for n in names},
        "adam_steps": adam_steps,
        "run_config": run_config or {},
        "dtype": str(model.dtype).removeprefix("torch."),
    }
    arrays[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
    if META_KEY not in arrays:
        raise CheckpointError(f"{path}: missing {META_KEY}")
    meta = json.loads(arrays.pop(META_KEY).tobytes().decode("utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {meta.get('format_version')!r}")
    cfg = ModelConfig.from_json(meta["model_config"])
    tc = TrainConfig.from_json(meta["train_config"])
    model = AccompanimentModel(cfg)
    if meta.get("dtype") == "float64":
        model = model.double()
    expected = dict(model.named_parameters())
    if set(meta["parameters"]) != set(expected):
        raise CheckpointError(f"{path}: parameter names do not match the config")
    with torch.no_grad():
        for name, p in expected.items():
            data = arrays[name]
            if list(data.shape) != list(p.shape):
                raise CheckpointError(f"{path}: {name} has shape {data.shape}, expected {tuple(p.shape)}")
            p.copy_(torch.from_numpy(data.astype(np.float64)).to(p.dtype))
    opt = make_optimizer(model, tc)
    for name, p in expected.items():
        if f"adam/{name}/exp_avg" in arrays:
            opt.state[p] = {
                "step": torch.tensor(float(meta["adam_steps"][name])),
                "exp_avg": torch.from_numpy(arrays[f"adam/{name}/exp_avg"].astype(np.float64)).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(arrays[f"adam/{name}/exp_avg_sq"].astype(np.float64)).to(p.dtype),
            }
    model.eval()
    return Checkpoint(model, tc, int(meta["step"]), meta, opt)
