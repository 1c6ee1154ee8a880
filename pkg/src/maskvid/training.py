"""Masked-token training: batch assembly, the AdamW step, gradient verification
and binary checkpoints.

Batches mix whole-video samples with image samples (frames drawn independently
from one episode and trained with per-frame attention isolation). All
randomness flows from the config seed, so loss curves are reproducible
bit-for-bit on one platform.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import random
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import Dataset
from .masking import sample_train_mask
from .model import VideoTokenModel, build_model
from .prompt import text_to_ids
from .transformer import ModelConfig, masked_ce_loss

CHECKPOINT_VERSION = 1
_BLOB_MAGIC = b"DCKP"
_BLOB_HEADER = 8  # magic + u32 version


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    weight_decay: float = 0.01
    batch_size: int = 8
    iterations: int = 3000
    prompt_dropout: float = 0.1
    image_fraction: float = 0.5
    seed: int = 0
    checkpoint_interval: int = 500
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be non-negative, got {self.iterations}")
        if not 0.0 <= self.prompt_dropout <= 1.0:
            raise ValueError(f"prompt_dropout must lie in [0, 1], got {self.prompt_dropout}")
        if not 0.0 <= self.image_fraction <= 1.0:
            raise ValueError(f"image_fraction must lie in [0, 1], got {self.image_fraction}")


@dataclass
class Batch:
    """One mode-uniform slice of a training batch."""

    tokens: torch.Tensor          # (B, N, h, w) target token ids
    mask: torch.Tensor            # (B, N, h, w) bool, True = masked
    text_ids: torch.Tensor        # (B, K)
    actions: torch.Tensor | None  # (B, N, 2) or None
    action_present: torch.Tensor | None
    drop: torch.Tensor            # (B,) bool prompt dropout flags
    image_mode: bool


def prepare_episode(entry, cfg: ModelConfig) -> dict:
    """Tensor cache for one dataset entry."""
    return {
        "tokens": torch.from_numpy(entry.tokens.tokens.astype(np.int64)),
        "text_ids": text_to_ids(entry.caption, cfg.text_vocab, cfg.text_len),
        "actions": (torch.from_numpy(entry.actions.astype(np.float32))
                    if entry.actions is not None else None),
    }


class BatchSampler:
    """Draws mode-mixed batches from an in-memory dataset, seed-deterministically."""

    def __init__(self, dataset: Dataset, model_cfg: ModelConfig, cfg: TrainConfig):
        if dataset.vocab != model_cfg.vocab:
            raise ValueError(
                f"dataset vocab {dataset.vocab} does not match model vocab {model_cfg.vocab}"
            )
        self.cfg = cfg
        self.model_cfg = model_cfg
        self.rng = random.Random(cfg.seed)
        self.episodes = [prepare_episode(e, model_cfg) for e in dataset.entries]
        first = dataset.entries[0].tokens
        self.frames, self.th, self.tw = first.frames, first.th, first.tw
        self.mask_id = model_cfg.mask_id

    def _draw_sample(self) -> tuple[dict, bool]:
        image_mode = self.rng.random() < self.cfg.image_fraction
        ep = self.episodes[self.rng.randrange(len(self.episodes))]
        if image_mode:
            rows = [ep["tokens"][self.rng.randrange(self.frames)] for _ in range(self.frames)]
            tokens = torch.stack(rows)
            actions = None
        else:
            tokens = ep["tokens"]
            actions = ep["actions"]
        mask = sample_train_mask(self.th, self.tw, self.rng)
        return {
            "tokens": tokens,
            "mask": torch.from_numpy(mask.as_array()),
            "text_ids": ep["text_ids"],
            "actions": actions,
            "drop": self.rng.random() < self.cfg.prompt_dropout,
        }, image_mode

    def next_batch(self) -> list[Batch]:
        video, image = [], []
        for _ in range(self.cfg.batch_size):
            sample, image_mode = self._draw_sample()
            (image if image_mode else video).append(sample)
        parts = []
        for samples, image_mode in ((video, False), (image, True)):
            if not samples:
                continue
            tokens = torch.stack([s["tokens"] for s in samples])
            mask = torch.stack([s["mask"] for s in samples]).unsqueeze(1).expand_as(tokens)
            present = torch.tensor([s["actions"] is not None for s in samples])
            if bool(present.any()):
                zero = torch.zeros(self.frames, 2)
                actions = torch.stack([s["actions"] if s["actions"] is not None else zero
                                       for s in samples])
                action_present = present
            else:
                actions, action_present = None, None
            parts.append(Batch(
                tokens=tokens,
                mask=mask.contiguous(),
                text_ids=torch.stack([s["text_ids"] for s in samples]),
                actions=actions,
                action_present=action_present,
                drop=torch.tensor([s["drop"] for s in samples]),
                image_mode=image_mode,
            ))
        return parts


def batch_loss(model: VideoTokenModel, parts: list[Batch]) -> torch.Tensor:
    """Masked cross-entropy averaged over all masked positions of all parts."""
    total_nll = None
    total_masked = 0
    for part in parts:
        inputs = torch.where(part.mask, torch.full_like(part.tokens, model.cfg.mask_id),
                             part.tokens)
        prompt = model.prompt_encoder(
            part.tokens.shape[0], part.tokens.shape[1], part.text_ids,
            part.actions, part.drop, part.action_present,
        )
        logits = model.transformer(inputs, prompt, image_mode=part.image_mode)
        count = int(part.mask.sum())
        nll = masked_ce_loss(logits, part.tokens, part.mask) * count
        total_nll = nll if total_nll is None else total_nll + nll
        total_masked += count
    if total_masked == 0:
        raise ValueError("mask selects no positions")
    return total_nll / total_masked


def train_step(model: VideoTokenModel, optimizer: torch.optim.Optimizer,
               parts: list[Batch], cfg: TrainConfig) -> float:
    """One optimization step; raises 'divergence' before touching state if the
    loss is not finite."""
    loss = batch_loss(model, parts)
    if not bool(torch.isfinite(loss)):
        raise ValueError(f"divergence: loss is {loss.item()} at this step")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip > 0:
        nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    return float(loss.detach())


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                             betas=(0.9, 0.999), eps=1e-8,
                             weight_decay=cfg.weight_decay)


def masked_top1_accuracy(model: VideoTokenModel, dataset: Dataset, rate: float = 0.5,
                         seed: int = 1234) -> float:
    """Deterministic evaluation: mask a fixed fraction per episode, predict, score top-1."""
    cfg = model.cfg
    correct = 0
    total = 0
    with torch.no_grad():
        for i, entry in enumerate(dataset.entries):
            ep = prepare_episode(entry, cfg)
            tokens = ep["tokens"].unsqueeze(0)
            mask = sample_train_mask(entry.tokens.th, entry.tokens.tw,
                                     random.Random(seed + i), rate=rate)
            mask_t = torch.from_numpy(mask.as_array()).view(1, 1, *mask.as_array().shape)
            mask_t = mask_t.expand_as(tokens).contiguous()
            inputs = torch.where(mask_t, torch.full_like(tokens, cfg.mask_id), tokens)
            actions = ep["actions"].unsqueeze(0) if ep["actions"] is not None else None
            logits = model(inputs, ep["text_ids"].unsqueeze(0), actions)
            pred = logits.argmax(dim=-1)
            correct += int((pred[mask_t] == tokens[mask_t]).sum())
            total += int(mask_t.sum())
    return correct / total


@dataclass
class TrainRecord:
    step: int
    loss: float
    mode_mix: dict
    lr: float
    accuracy: float | None = None


class Trainer:
    """Seeded training loop with JSONL logging and periodic checkpoints."""

    def __init__(self, model: VideoTokenModel, dataset: Dataset, cfg: TrainConfig,
                 log_path: str | Path | None = None):
        self.model = model
        self.dataset = dataset
        self.cfg = cfg
        self.sampler = BatchSampler(dataset, model.cfg, cfg)
        self.optimizer = make_optimizer(model, cfg)
        self.log_path = Path(log_path) if log_path else None
        self.step_num = 0
        if self.log_path:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self.log_path.write_text("")

    def _log(self, record: TrainRecord) -> None:
        if self.log_path:
            with open(self.log_path, "a") as f:
                f.write(json.dumps(asdict(record)) + "\n")

    def step(self) -> TrainRecord:
        parts = self.sampler.next_batch()
        loss = train_step(self.model, self.optimizer, parts, self.cfg)
        self.step_num += 1
        mix = {("image" if p.image_mode else "video"): p.tokens.shape[0] for p in parts}
        record = TrainRecord(self.step_num, loss, mix, self.cfg.learning_rate)
        self._log(record)
        return record

    def run(self, steps: int | None = None, eval_every: int = 0,
            stop_accuracy: float | None = None,
            checkpoint_dir: str | Path | None = None) -> list[TrainRecord]:
        """Train for up to ``steps`` iterations; optionally evaluate masked top-1
        accuracy every ``eval_every`` steps and stop early at ``stop_accuracy``."""
        steps = self.cfg.iterations if steps is None else steps
        history = []
        for _ in range(steps):
            record = self.step()
            if eval_every and self.step_num % eval_every == 0:
                record.accuracy = masked_top1_accuracy(self.model, self.dataset)
                self._log(record)
            history.append(record)
            if checkpoint_dir and self.cfg.checkpoint_interval > 0 \
                    and self.step_num % self.cfg.checkpoint_interval == 0:
                save_checkpoint(checkpoint_dir, self.model, self.optimizer, self.step_num)
            if stop_accuracy is not None and record.accuracy is not None \
                    and record.accuracy >= stop_accuracy:
                break
        if checkpoint_dir:
            save_checkpoint(checkpoint_dir, self.model, self.optimizer, self.step_num)
        return history


# ---------------------------------------------------------------------------
# gradient verification

@dataclass
class GradcheckResult:
    max_rel_error: float
    per_param: dict[str, float]
    coords_checked: int


def finite_diff_gradcheck(model: VideoTokenModel, parts: list[Batch], eps: float = 1e-5,
                          n_coords: int = 100, seed: int = 0,
                          param_names: list[str] | None = None) -> GradcheckResult:
    """Compare autograd gradients against central differences in float64.

    Samples at least ceil(n_coords / groups) coordinates from every parameter
    group (optionally restricted to ``param_names``). Relative error is
    |a - n| / max(|a|, |n|, 1e-12).
    """
    work = copy.deepcopy(model).double()
    parts64 = [Batch(
        tokens=p.tokens, mask=p.mask, text_ids=p.text_ids,
        actions=p.actions.double() if p.actions is not None else None,
        action_present=p.action_present, drop=p.drop, image_mode=p.image_mode,
    ) for p in parts]

    def loss_fn() -> torch.Tensor:
        return batch_loss(work, parts64)

    loss = loss_fn()
    work.zero_grad()
    loss.backward()

    params = [(name, p) for name, p in work.named_parameters()
              if param_names is None or name in param_names]
    if not params:
        raise ValueError("no parameters selected for gradcheck")
    rng = random.Random(seed)
    per_coord = max(1, math.ceil(n_coords / len(params)))
    per_param: dict[str, float] = {}
    checked = 0
    worst = 0.0
    with torch.no_grad():
        for name, p in params:
            flat = p.view(-1)
            grad = p.grad.view(-1) if p.grad is not None else torch.zeros_like(flat)
            worst_here = 0.0
            for _ in range(per_coord):
                idx = rng.randrange(flat.numel())
                original = flat[idx].item()
                flat[idx] = original + eps
                up = float(loss_fn())
                flat[idx] = original - eps
                down = float(loss_fn())
                flat[idx] = original
                numeric = (up - down) / (2 * eps)
                analytic = float(grad[idx])
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
                worst_here = max(worst_here, rel)
                checked += 1
            per_param[name] = worst_here
            worst = max(worst, worst_here)
    return GradcheckResult(worst, per_param, checked)


# ---------------------------------------------------------------------------
# checkpoints

def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _optimizer_entries(model: VideoTokenModel,
                       optimizer: torch.optim.Optimizer) -> list[tuple[str, torch.Tensor]]:
    entries = []
    lookup = {id(p): name for name, p in model.named_parameters()}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if not state:
                continue
            name = lookup[id(p)]
            step = state["step"]
            step_t = step.detach().clone().float() if torch.is_tensor(step) \
                else torch.tensor(float(step))
            entries.append((f"optim.{name}.step", step_t.reshape(-1)))
            entries.append((f"optim.{name}.exp_avg", state["exp_avg"]))
            entries.append((f"optim.{name}.exp_avg_sq", state["exp_avg_sq"]))
    return entries


def save_checkpoint(directory: str | Path, model: VideoTokenModel,
                    optimizer: torch.optim.Optimizer | None = None, step: int = 0) -> Path:
    """Write manifest.json plus a raw little-endian float32 blob; bitwise round trip."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    named = [(name, p.detach()) for name, p in model.named_parameters()]
    if optimizer is not None:
        named += _optimizer_entries(model, optimizer)

    entries = []
    offset = _BLOB_HEADER
    blobs = []
    for name, tensor in named:
        data = tensor.detach().to(torch.float32).contiguous().numpy().astype("<f4")
        entries.append({
            "name": name,
            "shape": list(tensor.shape),
            "dtype": "float32",
            "offset": offset,
        })
        blobs.append(data.tobytes())
        offset += data.nbytes

    with open(directory / "params.blob", "wb") as f:
        f.write(_BLOB_MAGIC + struct.pack("<I", CHECKPOINT_VERSION))
        for blob in blobs:
            f.write(blob)

    manifest = {
        "format": "maskvid-checkpoint",
        "version": CHECKPOINT_VERSION,
        "step": step,
        "config": asdict(model.cfg),
        "config_hash": config_hash(model.cfg),
        "blob": "params.blob",
        "entries": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory / "manifest.json"


@dataclass
class CheckpointBundle:
    model: VideoTokenModel
    step: int
    optimizer_entries: dict[str, torch.Tensor]


def load_checkpoint(directory: str | Path,
                    expected_config_hash: str | None = None) -> CheckpointBundle:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version mismatch: file has {manifest.get('version')}, "
            f"this build reads {CHECKPOINT_VERSION}"
        )
    stored_hash = manifest["config_hash"]
    if expected_config_hash is not None and stored_hash != expected_config_hash:
        raise ValueError(
            f"config hash mismatch: checkpoint has {stored_hash}, expected {expected_config_hash}"
        )
    raw = (directory / manifest["blob"]).read_bytes()
    if raw[:4] != _BLOB_MAGIC:
        raise ValueError("bad checkpoint header")
    (blob_version,) = struct.unpack_from("<I", raw, 4)
    if blob_version != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint blob version mismatch: blob has {blob_version}, "
            f"this build reads {CHECKPOINT_VERSION}"
        )

    cfg_dict = dict(manifest["config"])
    cfg_dict["conv_kernel"] = tuple(cfg_dict["conv_kernel"])
    cfg = ModelConfig(**cfg_dict)
    model = VideoTokenModel(cfg)

    tensors: dict[str, torch.Tensor] = {}
    for entry in manifest["entries"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=start).copy()
        tensors[entry["name"]] = torch.from_numpy(arr).view(entry["shape"])

    with torch.no_grad():
        for name, p in model.named_parameters():
            if name not in tensors:
                raise ValueError(f"checkpoint missing parameter {name}")
            p.copy_(tensors.pop(name))
    optim_entries = {k: v for k, v in tensors.items() if k.startswith("optim.")}
    return CheckpointBundle(model, manifest["step"], optim_entries)


def restore_optimizer(optimizer: torch.optim.Optimizer, model: VideoTokenModel,
                      entries: dict[str, torch.Tensor]) -> None:
    """Load saved Adam moments back into a freshly built optimizer."""
    if not entries:
        return
    sd = optimizer.state_dict()
    state = {}
    for i, (name, p) in enumerate(model.named_parameters()):
        key = f"optim.{name}.step"
        if key not in entries:
            continue
        state[i] = {
            "step": entries[key].reshape(()).clone(),
            "exp_avg": entries[f"optim.{name}.exp_avg"].view_as(p).clone(),
            "exp_avg_sq": entries[f"optim.{name}.exp_avg_sq"].view_as(p).clone(),
        }
    sd["state"] = state
    optimizer.load_state_dict(sd)
