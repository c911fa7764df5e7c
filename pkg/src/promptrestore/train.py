"""Stage-2 optimization: loss, training loop, schedules and checkpointing.

Training is a pure function of (initial weights, seed, data order, config):
the data stream is driven by one serializable numpy generator, so replays
are bit-identical and a resumed run continues the exact same trace.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, asdict

import numpy as np
import torch

from . import checkpoint as ckpt
from .backbone import BackboneConfig, RestorationBackbone
from .corpus import CATEGORIES
from .degrade import make_batch


class TrainingFailureError(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass
class TrainConfig:
    steps: int
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-4
    batch_size: int = 6
    patch: int = 128
    seed: int = 0
    loss: str = "l1"
    schedule: str = "constant"
    tasks: tuple = ("noise", "rain", "haze")
    ckpt_every: int = 0   # 0: only the final checkpoint
    finetune_encoder: bool = False

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.tasks = tuple(self.tasks)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in ("l1", "l2"):
            raise ValueError("loss must be 'l1' or 'l2'")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be 'constant' or 'cosine'")
        if not self.tasks or any(t not in CATEGORIES for t in self.tasks):
            raise ValueError(f"tasks must be a non-empty subset of {CATEGORIES}")

    def task_mix(self) -> tuple:
        return tuple(1.0 / len(self.tasks) if c in self.tasks else 0.0 for c in CATEGORIES)


def loss(pred: torch.Tensor, target: torch.Tensor, kind: str = "l1") -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if kind == "l1":
        return (pred - target).abs().mean()
    if kind == "l2":
        return ((pred - target) ** 2).mean()
    raise ValueError(f"unknown loss kind {kind!r}")


def schedule_lr(config: TrainConfig, step: int) -> float:
    if config.schedule == "cosine":
        return config.lr * 0.5 * (1.0 + math.cos(math.pi * step / config.steps))
    return config.lr


class GuidanceCache:
    """Embeds instruction sentences through a frozen encoder, memoized."""

    def __init__(self, encoder):
        self.encoder = encoder
        self._cache = {}

    def batch(self, texts) -> torch.Tensor:
        missing = [t for t in texts if t not in self._cache]
        if missing:
            zs = self.encoder.embed_batch(missing)
            for t, z in zip(missing, zs):
                self._cache[t] = z
        return torch.stack([self._cache[t] for t in texts])


def _to_torch_batch(pairs):
    deg = np.stack([p.degraded.transpose(2, 0, 1) for p in pairs])
    clean = np.stack([p.clean.transpose(2, 0, 1) for p in pairs])
    return (torch.from_numpy(np.ascontiguousarray(deg)).float(),
            torch.from_numpy(np.ascontiguousarray(clean)).float())


def train_step(model, guidance, batch, config: TrainConfig, opt, step=None):
    """One optimizer update; returns the pre-update batch loss."""
    if not batch:
        raise ValueError("batch must be non-empty")
    deg, clean = _to_torch_batch(batch)
    z = guidance.batch([p.instruction.text for p in batch])
    pred = model(deg, z)
    l = loss(pred, clean, config.loss)
    if not torch.isfinite(l):
        raise TrainingFailureError(f"non-finite loss at step {step}", step=step)
    opt.zero_grad()
    l.backward()
    opt.step()
    return float(l)


# -- checkpoint plumbing -----------------------------------------------------

def _rng_state(data_rng) -> dict:
    return {
        "numpy": data_rng.bit_generator.state,
        "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
    }


def _restore_rng(state: dict):
    rng = np.random.default_rng()
    rng.bit_generator.state = state["numpy"]
    torch.set_rng_state(torch.from_numpy(np.frombuffer(
        base64.b64decode(state["torch"]), dtype=np.uint8).copy()))
    return rng


def _opt_tensors(model, opt) -> dict:
    out = {}
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        out[f"opt.{name}.step"] = np.asarray(float(st["step"]), dtype=np.float32)
        out[f"opt.{name}.exp_avg"] = st["exp_avg"].detach().numpy()
        out[f"opt.{name}.exp_avg_sq"] = st["exp_avg_sq"].detach().numpy()
    return out


def _restore_opt(model, opt, tensors):
    for name, p in model.named_parameters():
        key = f"opt.{name}.exp_avg"
        if key not in tensors:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(np.ravel(tensors[f"opt.{name}.step"])[0])),
            "exp_avg": torch.from_numpy(tensors[key].copy()),
            "exp_avg_sq": torch.from_numpy(tensors[f"opt.{name}.exp_avg_sq"].copy()),
        }


def save_backbone(path, model, *, config: TrainConfig | None = None, opt=None,
                  step: int = 0, data_rng=None) -> None:
    tensors = {f"model.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if opt is not None:
        tensors.update(_opt_tensors(model, opt))
    cfg = {"backbone": model.config.to_dict()}
    if config is not None:
        cfg["train"] = asdict(config)
    rng_state = _rng_state(data_rng) if data_rng is not None else None
    ckpt.save_checkpoint(path, tensors, kind="backbone", config=cfg, step=step, rng_state=rng_state)


def load_backbone(path):
    """Returns (model, manifest, raw tensor dict incl. optimizer state)."""
    manifest, tensors = ckpt.load_checkpoint(path)
    if manifest["kind"] != "backbone":
        raise ckpt.CheckpointError(f"expected a backbone checkpoint, got {manifest['kind']!r}")
    model = RestorationBackbone(BackboneConfig.from_dict(manifest["config"]["backbone"]))
    model_tensors = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    ckpt.match_tensors(model_tensors, [k for k, _ in model.state_dict().items()])
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in model_tensors.items()})
    return model, manifest, tensors


def fit(model, encoder, cleans, corpus, config: TrainConfig, out_dir=None, resume=None):
    """Run config.steps updates of train_step with periodic checkpointing.

    Returns (model, log). With resume=path, continues an interrupted run and
    reproduces the exact loss trace of the uninterrupted one.
    """
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr,
                            betas=config.betas, weight_decay=config.weight_decay)
    start = 0
    if resume is not None:
        manifest, tensors = ckpt.load_checkpoint(resume)
        model_tensors = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
        ckpt.match_tensors(model_tensors, [k for k, _ in model.state_dict().items()])
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in model_tensors.items()})
        _restore_opt(model, opt, tensors)
        rng = _restore_rng(manifest["rng"])
        start = manifest["step"]
    else:
        rng = np.random.default_rng(config.seed)

    if config.finetune_encoder:
        opt.add_param_group({"params": list(encoder.parameters())})
        guidance = _TrainableGuidance(encoder)
    else:
        guidance = GuidanceCache(encoder)

    task_mix = config.task_mix()
    log = []
    model.train()
    for step in range(start + 1, config.steps + 1):
        lr = schedule_lr(config, step)
        for group in opt.param_groups:
            group["lr"] = lr
        batch = make_batch(cleans, task_mix, corpus, config.patch, rng, config.batch_size)
        loss_val = train_step(model, guidance, batch, config, opt, step=step)
        log.append({"step": step, "loss": loss_val, "lr": lr})
        if out_dir is not None and config.ckpt_every and step % config.ckpt_every == 0:
            save_backbone(f"{out_dir}/step{step:06d}.ckpt", model, config=config,
                          opt=opt, step=step, data_rng=rng)
    model.eval()
    if out_dir is not None:
        save_backbone(f"{out_dir}/final.ckpt", model, config=config, opt=opt,
                      step=config.steps, data_rng=rng)
        with open(f"{out_dir}/train_log.jsonl", "w", encoding="utf-8") as f:
            for entry in log:
                f.write(json.dumps(entry) + "\n")
    return model, log


class _TrainableGuidance:
    """Guidance with gradients flowing into the encoder (unfrozen stage 1)."""

    def __init__(self, encoder):
        self.encoder = encoder

    def batch(self, texts) -> torch.Tensor:
        from .corpus import tokenize
        from .textenc import _pad_batch, pool_guidance

        self.encoder.train()
        ids, mask, _ = _pad_batch([tokenize(self.encoder.corpus, t) for t in texts],
                                  self.encoder.corpus, self.encoder.config.max_len)
        return pool_guidance(self.encoder(ids, mask), mask)
