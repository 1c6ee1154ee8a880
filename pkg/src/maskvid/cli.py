"""Command-line entry point wiring the whole pipeline.

Subcommands: gen-data, fit-tokenizer, encode-data, train, generate, gradcheck,
bench-decode. Exit codes: 0 success, 1 validation error (bad flags, bad config,
unreadable inputs), 2 runtime error. Every source of randomness hangs off an
explicit --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch

from . import data, formats, inference, tokenizer, training
from .model import build_model
from .prompt import text_to_ids
from .tokenizer import Codebook, Video
from .transformer import ModelConfig

CONFIG_SECTIONS = ("model", "train", "decode", "world")


class CliError(Exception):
    """Validation failure; maps to exit code 1."""


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _dataclass_from(section: dict, cls, overrides: dict):
    """Build a config dataclass from a config-file section plus flag overrides."""
    known = {f.name for f in fields(cls)}
    for key in section:
        if key not in known:
            raise CliError(f"unknown {cls.__name__} key: {key}")
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "conv_kernel" in merged and merged["conv_kernel"] is not None:
        merged["conv_kernel"] = tuple(merged["conv_kernel"])
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError(f"config {path} must be a JSON object")
    for key in cfg:
        if key not in CONFIG_SECTIONS:
            raise CliError(f"unknown config section: {key}")
    return cfg


def _validated(fn, *args, **kwargs):
    """Run a loading/validation step, converting failures to CliError."""
    try:
        return fn(*args, **kwargs)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(str(exc)) from exc


def _parse_grid(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise CliError(f"grid must look like 8x8x8, got {text!r}")
    try:
        n, h, w = (int(p) for p in parts)
    except ValueError:
        raise CliError(f"grid must contain integers, got {text!r}") from None
    return n, h, w


def _parse_region(text: str) -> tuple[int, int, int, int]:
    try:
        x0, y0, x1, y1 = (int(p) for p in text.split(","))
    except ValueError:
        raise CliError(f"region must be x0,y0,x1,y1 in pixels, got {text!r}") from None
    return x0, y0, x1, y1


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommand handlers

def cmd_gen_data(args) -> int:
    section = _load_config_file(args.config).get("world", {})
    world = _dataclass_from(section, data.WorldConfig, {
        "frames": args.frames, "size": args.size, "shapes": args.shapes,
        "agent": args.agent or None, "agent_color": args.agent_color,
        "agent_yaw": args.agent_yaw, "agent_speed": args.agent_speed,
    })
    episodes = data.generate_episodes(world, args.episodes, args.seed)
    index = data.save_episodes(episodes, args.out, world)
    print(index)
    return 0


def cmd_fit_tokenizer(args) -> int:
    episodes, _ = _validated(data.load_episodes, args.data)
    patches = data.dataset_patches(episodes, args.patch)
    codebook = tokenizer.fit_codebook(patches, args.vocab, args.seed)
    codebook.save(args.out)
    print(args.out)
    return 0


def cmd_encode_data(args) -> int:
    episodes, world = _validated(data.load_episodes, args.data)
    codebook = _validated(Codebook.load, args.codebook)
    manifest = data.encode_dataset(episodes, codebook, args.out,
                                   config_hash=data.world_config_hash(world))
    print(manifest)
    return 0


def cmd_train(args) -> int:
    cfg_file = _load_config_file(args.config)
    train_cfg = _dataclass_from(cfg_file.get("train", {}), training.TrainConfig, {
        "learning_rate": args.lr, "batch_size": args.batch_size,
        "iterations": args.steps, "seed": args.seed,
        "image_fraction": args.image_fraction, "prompt_dropout": args.prompt_dropout,
        "weight_decay": args.weight_decay,
    })
    dataset = _validated(data.load_dataset, args.data)
    first = dataset.entries[0].tokens
    model_cfg = _dataclass_from(cfg_file.get("model", {}), ModelConfig, {
        "vocab": dataset.vocab, "frames": first.frames,
        "grid_h": first.th, "grid_w": first.tw,
        "channels": args.channels, "layers": args.layers,
    })
    model = build_model(model_cfg, train_cfg.seed)
    trainer = training.Trainer(model, dataset, train_cfg, log_path=args.log)
    history = trainer.run(eval_every=args.eval_every or 0,
                          stop_accuracy=args.stop_accuracy,
                          checkpoint_dir=args.out)
    final = history[-1] if history else None
    summary = {
        "steps": trainer.step_num,
        "final_loss": final.loss if final else None,
        "accuracy": training.masked_top1_accuracy(model, dataset) if args.eval_every else None,
        "checkpoint": str(Path(args.out) / "manifest.json"),
    }
    print(json.dumps(summary))
    return 0


def cmd_generate(args) -> int:
    bundle = _validated(training.load_checkpoint, args.ckpt)
    model = bundle.model
    codebook = _validated(Codebook.load, args.codebook)
    if codebook.vocab != model.cfg.vocab:
        raise CliError(
            f"codebook vocab {codebook.vocab} does not match checkpoint vocab {model.cfg.vocab}"
        )
    cfg = _dataclass_from(_load_config_file(args.config).get("decode", {}),
                          inference.DecodeConfig, {
                              "steps": args.steps, "guidance": args.guidance,
                              "temperature": args.temperature, "seed": args.seed,
                          })

    frames = args.frames or model.cfg.frames
    source = None
    if args.source:
        video = _validated(Video.load, args.source)
        source = tokenizer.encode_video(video, codebook)
    actions = _validated(formats.read_actions, args.actions) if args.actions else None

    grid = _validated(
        inference.build_task_mask, args.task, frames, model.cfg.grid_h, model.cfg.grid_w,
        model.cfg.vocab, source=source, region=args.region and _parse_region(args.region),
        ratio=args.ratio, actions=actions, patch_size=codebook.patch_size, seed=cfg.seed,
    )

    text_ids = text_to_ids(args.prompt, model.cfg.text_vocab,
                           model.cfg.text_len).unsqueeze(0) if args.prompt else None
    action_t = None
    if args.task == "a2v" or actions is not None:
        if actions is None:
            raise CliError("task a2v requires actions")
        action_t = torch.from_numpy(actions.astype(np.float32)).unsqueeze(0)

    result, report = inference.parallel_decode(model, grid, text_ids, action_t, cfg)
    video_out = tokenizer.decode_tokens(result, codebook)
    video_out.save(args.out)
    _emit(report.to_json(), args.report)
    return 0


def cmd_gradcheck(args) -> int:
    model_cfg = ModelConfig(vocab=17, frames=3, grid_h=4, grid_w=4, channels=32,
                            layers=2, heads=2, text_vocab=64, text_channels=16)
    model = build_model(model_cfg, args.seed)
    batch = _gradcheck_batch(model_cfg, args.seed)
    result = training.finite_diff_gradcheck(model, batch, eps=args.eps,
                                            n_coords=args.coords, seed=args.seed)
    _emit({"max_rel_error": result.max_rel_error, "coords_checked": result.coords_checked},
          args.out)
    if result.max_rel_error >= args.tolerance:
        print(f"gradcheck failed: {result.max_rel_error} >= {args.tolerance}", file=sys.stderr)
        return 2
    return 0


def _gradcheck_batch(cfg: ModelConfig, seed: int) -> list[training.Batch]:
    gen = torch.Generator().manual_seed(seed)
    tokens = torch.randint(0, cfg.vocab, (2, cfg.frames, cfg.grid_h, cfg.grid_w), generator=gen)
    mask = torch.rand((2, 1, cfg.grid_h, cfg.grid_w), generator=gen) < 0.5
    mask[..., 0, 0] = True  # at least one masked position per sample
    mask = mask.expand_as(tokens).contiguous()
    text_ids = torch.randint(0, cfg.text_vocab, (2, cfg.text_len), generator=gen)
    actions = torch.rand((2, cfg.frames, 2), generator=gen)
    return [training.Batch(tokens, mask, text_ids, actions,
                           torch.tensor([True, True]), torch.tensor([False, False]), False)]


def cmd_bench_decode(args) -> int:
    frames, grid_h, grid_w = _parse_grid(args.grid)
    model_cfg = ModelConfig(vocab=args.vocab, frames=frames, grid_h=grid_h, grid_w=grid_w,
                            channels=64, layers=2, heads=4)
    model = build_model(model_cfg, args.seed)
    masked_total = frames * grid_h * grid_w
    cfg = inference.DecodeConfig(steps=args.steps, guidance=args.guidance,
                                 temperature=args.temperature, seed=args.seed)

    grid = inference.build_task_mask("t2v", frames, grid_h, grid_w, args.vocab)
    _, parallel = inference.parallel_decode(model, grid, cfg=cfg)
    grid = inference.build_task_mask("t2v", frames, grid_h, grid_w, args.vocab)
    _, auto = inference.autoregressive_decode(model, grid, cfg=cfg)

    _emit({
        "grid": args.grid,
        "masked_tokens": masked_total,
        "parallel": {"steps": parallel.steps, "forward_passes": parallel.forward_passes,
                     "duration_s": parallel.duration_s},
        "autoregressive": {"steps": auto.steps, "forward_passes": auto.forward_passes,
                           "duration_s": auto.duration_s},
        "diffusion_reference_steps": inference.DIFFUSION_REFERENCE_STEPS,
        "forward_pass_ratio": auto.forward_passes / max(parallel.forward_passes, 1),
    }, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> Parser:
    parser = Parser(prog="maskvid", description=__doc__,
                    formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen-data", help="generate synthetic episodes", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int, default=8, help="number of episodes")
    p.add_argument("--seed", type=int, default=0, help="world seed")
    p.add_argument("--frames", type=int, default=None, help="frames per episode")
    p.add_argument("--size", type=int, default=None, help="frame side in pixels")
    p.add_argument("--shapes", type=int, default=None, help="squares per episode (1-3)")
    p.add_argument("--agent", action="store_true", help="make the first shape action-controlled")
    p.add_argument("--agent-color", default=None, help="pin the agent to a palette color")
    p.add_argument("--agent-yaw", type=float, default=None, help="agent yaw magnitude (rad/frame)")
    p.add_argument("--agent-speed", type=float, default=None, help="agent speed (cells/frame)")
    p.add_argument("--config", default=None, help="JSON config file with a 'world' section")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("fit-tokenizer", help="fit a k-means patch codebook", formatter_class=fmt)
    p.add_argument("--data", required=True, help="episode directory from gen-data")
    p.add_argument("--vocab", type=int, default=512, help="codebook entries")
    p.add_argument("--patch", type=int, default=8, help="patch side in pixels")
    p.add_argument("--seed", type=int, default=0, help="k-means seed")
    p.add_argument("--out", required=True, help="output DCBK path")
    p.set_defaults(handler=cmd_fit_tokenizer)

    p = sub.add_parser("encode-data", help="tokenize episodes into a dataset", formatter_class=fmt)
    p.add_argument("--data", required=True, help="episode directory from gen-data")
    p.add_argument("--codebook", required=True, help="DCBK path")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(handler=cmd_encode_data)

    p = sub.add_parser("train", help="train masked-token prediction", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--log", default=None, help="JSONL training log path")
    p.add_argument("--config", default=None, help="JSON config with 'model'/'train' sections")
    p.add_argument("--lr", type=float, default=None, help="learning rate")
    p.add_argument("--batch-size", type=int, default=None, help="samples per step")
    p.add_argument("--steps", type=int, default=None, help="training iterations")
    p.add_argument("--seed", type=int, default=None, help="training seed")
    p.add_argument("--image-fraction", type=float, default=None, help="image-mode sample share")
    p.add_argument("--prompt-dropout", type=float, default=None, help="prompt dropout probability")
    p.add_argument("--weight-decay", type=float, default=None, help="AdamW weight decay")
    p.add_argument("--channels", type=int, default=None, help="model width override")
    p.add_argument("--layers", type=int, default=None, help="model depth override")
    p.add_argument("--eval-every", type=int, default=None, help="evaluate accuracy every n steps")
    p.add_argument("--stop-accuracy", type=float, default=None,
                   help="stop early at this masked top-1 accuracy")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("generate", help="decode a video for one task", formatter_class=fmt)
    p.add_argument("--task", required=True, choices=inference.TASKS, help="generation task")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--codebook", required=True, help="DCBK path")
    p.add_argument("--prompt", default=None, help="text prompt")
    p.add_argument("--source", default=None, help="source DVID (i2v/inpaint/stylize/a2v)")
    p.add_argument("--region", default=None, help="inpaint rectangle x0,y0,x1,y1 in pixels")
    p.add_argument("--ratio", type=float, default=None, help="stylize mask ratio")
    p.add_argument("--actions", default=None, help="DACT action track (a2v)")
    p.add_argument("--frames", type=int, default=None, help="frames to generate (default: model)")
    p.add_argument("--steps", type=int, default=None, help="parallel decode steps")
    p.add_argument("--guidance", type=float, default=None, help="guidance scale")
    p.add_argument("--temperature", type=float, default=None, help="sampling temperature")
    p.add_argument("--seed", type=int, default=None, help="decode seed")
    p.add_argument("--out", required=True, help="output DVID path")
    p.add_argument("--report", default=None, help="decode report JSON path (default: stdout)")
    p.add_argument("--config", default=None, help="JSON config with a 'decode' section")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification",
                       formatter_class=fmt)
    p.add_argument("--coords", type=int, default=100, help="coordinates to sample")
    p.add_argument("--eps", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--tolerance", type=float, default=1e-4, help="max allowed relative error")
    p.add_argument("--out", default=None, help="report JSON path (default: stdout)")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("bench-decode", help="compare decode step counts", formatter_class=fmt)
    p.add_argument("--grid", default="8x8x8", help="token grid as NxHxW")
    p.add_argument("--steps", type=int, default=10, help="parallel decode steps")
    p.add_argument("--vocab", type=int, default=512, help="codebook size for the bench model")
    p.add_argument("--guidance", type=float, default=0.0, help="guidance scale")
    p.add_argument("--temperature", type=float, default=1.0, help="sampling temperature")
    p.add_argument("--seed", type=int, default=0, help="model and decode seed")
    p.add_argument("--out", default=None, help="report JSON path (default: stdout)")
    p.set_defaults(handler=cmd_bench_decode)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
