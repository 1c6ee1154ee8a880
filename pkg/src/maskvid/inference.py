"""Parallel masked-token decoding with classifier-free guidance, an
autoregressive baseline, and mask builders for the five generation tasks.

Parallel decoding runs a fixed number of steps; each step predicts every
still-masked position, then commits only the highest-confidence candidates
per frame according to the cosine unmask schedule. Committed tokens are never
revisited. The autoregressive baseline predicts one position per forward pass
in raster order.
"""

from __future__ import annotations

import random
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .masking import UnmaskSchedule, inference_unmask_counts
from .model import VideoTokenModel
from .tokenizer import TokenGrid

DIFFUSION_REFERENCE_STEPS = 30  # reported reference line, not simulated


@dataclass(frozen=True)
class DecodeConfig:
    steps: int = 10
    guidance: float = 0.0
    temperature: float = 1.0
    anneal_noise: bool = True
    seed: int = 0
    selection: str = "frame"  # "frame": per-frame top-k; "global": over all positions

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.guidance < 0:
            raise ValueError("guidance must be non-negative")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.selection not in ("frame", "global"):
            raise ValueError(f"selection must be 'frame' or 'global', got {self.selection!r}")


@dataclass
class DecodeReport:
    mode: str
    steps: int
    forward_passes: int
    per_step_unmasked: list[int] = field(default_factory=list)
    duration_s: float = 0.0
    guidance: float = 0.0
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def cfg_logits(cond: torch.Tensor, uncond: torch.Tensor, guidance: float) -> torch.Tensor:
    """Guided logits g = (1 + guidance) * cond - guidance * uncond."""
    if cond.shape != uncond.shape:
        raise ValueError(f"logit shapes differ: {tuple(cond.shape)} vs {tuple(uncond.shape)}")
    return (1.0 + guidance) * cond - guidance * uncond


def _gumbel(shape, gen: torch.Generator) -> torch.Tensor:
    u = torch.rand(shape, generator=gen)
    return -torch.log(-torch.log(u.clamp_min(1e-20)).clamp_min(1e-20))


def _sample_candidates(logits: torch.Tensor, temperature: float,
                       gen: torch.Generator) -> torch.Tensor:
    """Per-row categorical sample at the given temperature; argmax when it is zero."""
    if temperature <= 0:
        return logits.argmax(dim=-1)
    probs = torch.softmax(logits / temperature, dim=-1)
    return torch.multinomial(probs, 1, generator=gen).squeeze(-1)


class _Decoder:
    """Shared plumbing for both decode loops: prompts, forward passes, counting."""

    def __init__(self, model: VideoTokenModel, grid: TokenGrid,
                 text_ids: torch.Tensor | None, actions: torch.Tensor | None,
                 cfg: DecodeConfig):
        if grid.vocab != model.cfg.vocab:
            raise ValueError(f"grid vocab {grid.vocab} does not match model {model.cfg.vocab}")
        self.model = model
        self.cfg = cfg
        self.tokens = torch.from_numpy(grid.tokens.astype(np.int64)).unsqueeze(0)
        self.mask_id = grid.mask_id
        self.vocab = grid.vocab
        self.frames = grid.frames
        self.passes = 0
        self.gen = torch.Generator().manual_seed(cfg.seed)
        self._text_ids = text_ids
        self._actions = actions
        self._cond_prompt: torch.Tensor | None = None
        self._null_prompt: torch.Tensor | None = None

    def masked(self) -> torch.Tensor:
        return self.tokens[0] == self.mask_id

    def _forward(self, unconditional: bool) -> torch.Tensor:
        if unconditional:
            if self._null_prompt is None:
                self._null_prompt = self.model.prompt_encoder.null_prompt(1, self.frames)
            prompt = self._null_prompt
        else:
            if self._cond_prompt is None:
                self._cond_prompt = self.model.build_prompt(
                    1, self.frames, self._text_ids, self._actions)
            prompt = self._cond_prompt
        self.passes += 1
        return self.model.transformer(self.tokens, prompt)[0]

    def guided_logits(self) -> torch.Tensor:
        """(N, h, w, vocab) logits; the unconditional pass only runs when guidance > 0."""
        cond = self._forward(unconditional=False)
        if self.cfg.guidance == 0:
            return cond
        uncond = self._forward(unconditional=True)
        return cfg_logits(cond, uncond, self.cfg.guidance)

    def result(self) -> TokenGrid:
        return TokenGrid(self.tokens[0].numpy().astype(np.int32), self.vocab)


def _frame_schedules(masked: torch.Tensor, steps: int,
                     selection: str) -> dict[int | None, UnmaskSchedule]:
    """Unmask schedules keyed by frame index (or a single None key in global mode)."""
    if selection == "global":
        return {None: inference_unmask_counts(int(masked.sum()), steps)}
    schedules: dict[int | None, UnmaskSchedule] = {}
    for f in range(masked.shape[0]):
        count = int(masked[f].sum())
        if count:
            schedules[f] = inference_unmask_counts(count, steps)
    return schedules


def parallel_decode(model: VideoTokenModel, grid: TokenGrid,
                    text_ids: torch.Tensor | None = None,
                    actions: torch.Tensor | None = None,
                    cfg: DecodeConfig = DecodeConfig()) -> tuple[TokenGrid, DecodeReport]:
    """Fill every masked position of ``grid`` in ``cfg.steps`` steps.

    Each step samples a candidate for every masked position from the guided
    logits at temperature tau0 * (1 - t/T), scores candidates by their
    log-probability plus Gumbel noise on the same anneal, and commits the
    scheduled number of highest-confidence candidates per frame. Initially
    known tokens pass through untouched.
    """
    start = time.perf_counter()
    report = DecodeReport("parallel", 0, 0, [], 0.0, cfg.guidance, cfg.seed)
    dec = _Decoder(model, grid, text_ids, actions, cfg)
    masked = dec.masked()
    if not bool(masked.any()):
        report.duration_s = time.perf_counter() - start
        return dec.result(), report

    schedules = _frame_schedules(masked, cfg.steps, cfg.selection)
    model.eval()
    with torch.no_grad():
        for t in range(cfg.steps):
            logits = dec.guided_logits()
            masked = dec.masked()
            anneal = cfg.temperature * (1.0 - t / cfg.steps)
            positions = masked.nonzero(as_tuple=False)  # (M, 3) rows of (frame, r, c)
            row_logits = logits[masked]                 # (M, vocab)
            candidates = _sample_candidates(row_logits, anneal, dec.gen)
            logprobs = torch.log_softmax(row_logits, dim=-1)
            confidence = logprobs.gather(1, candidates.unsqueeze(1)).squeeze(1)
            if cfg.anneal_noise and anneal > 0:
                confidence = confidence + anneal * _gumbel(confidence.shape, dec.gen)

            committed = 0
            for key, schedule in schedules.items():
                in_scope = torch.ones(len(positions), dtype=torch.bool) if key is None \
                    else positions[:, 0] == key
                idx = in_scope.nonzero(as_tuple=False).squeeze(1)
                take = min(schedule.counts[t], len(idx))
                if take == 0:
                    continue
                top = idx[confidence[idx].topk(take).indices]
                sel = positions[top]
                dec.tokens[0, sel[:, 0], sel[:, 1], sel[:, 2]] = candidates[top]
                committed += take
            report.per_step_unmasked.append(committed)
            report.steps += 1

    if bool(dec.masked().any()):
        raise RuntimeError("decode left masked tokens after the final step")
    report.forward_passes = dec.passes
    report.duration_s = time.perf_counter() - start
    return dec.result(), report


def autoregressive_decode(model: VideoTokenModel, grid: TokenGrid,
                          text_ids: torch.Tensor | None = None,
                          actions: torch.Tensor | None = None,
                          cfg: DecodeConfig = DecodeConfig()) -> tuple[TokenGrid, DecodeReport]:
    """Baseline: visit masked positions in raster (frame, row, col) order and
    commit one token per forward pass (argmax of the guided logits, or a
    temperature sample when temperature > 0)."""
    start = time.perf_counter()
    report = DecodeReport("autoregressive", 0, 0, [], 0.0, cfg.guidance, cfg.seed)
    dec = _Decoder(model, grid, text_ids, actions, cfg)
    positions = dec.masked().nonzero(as_tuple=False)
    model.eval()
    with torch.no_grad():
        for pos in positions:
            f, r, c = pos.tolist()
            logits = dec.guided_logits()
            row = logits[f, r, c].unsqueeze(0)
            token = _sample_candidates(row, cfg.temperature, dec.gen)[0]
            dec.tokens[0, f, r, c] = token
            report.steps += 1
            report.per_step_unmasked.append(1)
    report.forward_passes = dec.passes
    report.duration_s = time.perf_counter() - start
    return dec.result(), report


TASKS = ("t2v", "i2v", "inpaint", "stylize", "a2v")


def _require(task: str, value, name: str):
    if value is None:
        raise ValueError(f"task {task} requires {name}")
    return value


def build_task_mask(task: str, frames: int, grid_h: int, grid_w: int, vocab: int, *,
                    source: TokenGrid | None = None,
                    region: tuple[int, int, int, int] | None = None,
                    ratio: float | None = None,
                    actions: np.ndarray | None = None,
                    patch_size: int | None = None,
                    seed: int = 0) -> TokenGrid:
    """Build the initial token grid for one of the five generation tasks.

    t2v masks everything; i2v keeps the source image as frame 0; inpaint masks
    tokens whose pixel patch intersects ``region`` (x0, y0, x1, y1, half-open)
    in every frame; stylize masks round(ratio * h * w) positions, the same in
    every frame; a2v is i2v plus a required action track (consumed by the
    caller's prompt).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
    mask_id = vocab
    tokens = np.full((frames, grid_h, grid_w), mask_id, dtype=np.int32)

    if task == "t2v":
        pass

    elif task in ("i2v", "a2v"):
        src = _require(task, source, "source")
        if (src.th, src.tw) != (grid_h, grid_w) or src.vocab != vocab:
            raise ValueError("source grid does not match the target geometry")
        tokens[0] = src.tokens[0]
        if task == "a2v":
            track = _require(task, actions, "actions")
            if len(track) != frames:
                raise ValueError(f"action track length {len(track)} != frame count {frames}")

    elif task == "inpaint":
        src = _require(task, source, "source")
        rect = _require(task, region, "region")
        f = _require(task, patch_size, "patch_size")
        if src.frames != frames or (src.th, src.tw) != (grid_h, grid_w) or src.vocab != vocab:
            raise ValueError("source grid does not match the target geometry")
        x0, y0, x1, y1 = rect
        tokens[:] = src.tokens
        for r in range(grid_h):
            for c in range(grid_w):
                if x0 < (c + 1) * f and x1 > c * f and y0 < (r + 1) * f and y1 > r * f:
                    tokens[:, r, c] = mask_id

    elif task == "stylize":
        src = _require(task, source, "source")
        rho = _require(task, ratio, "ratio")
        if src.frames != frames or (src.th, src.tw) != (grid_h, grid_w) or src.vocab != vocab:
            raise ValueError("source grid does not match the target geometry")
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"ratio must lie in [0, 1], got {rho}")
        count = int(np.floor(rho * grid_h * grid_w + 0.5))
        tokens[:] = src.tokens
        chosen = random.Random(seed).sample(range(grid_h * grid_w), count)
        for i in chosen:
            tokens[:, i // grid_w, i % grid_w] = mask_id

    return TokenGrid(tokens, vocab)
