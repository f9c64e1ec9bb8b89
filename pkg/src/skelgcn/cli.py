"""``skelgcn`` command line: synth, ssm, train, eval, gradcheck, fuse.

Data goes to files or stdout, diagnostics to stderr.  Exit status is 0 on
success, 1 when the command fails, 2 on bad usage.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .gcn import ReginaConfig
from .graph import build_graph
from .model import Model, ModelConfig, build_model, tiny_config
from .skeleton import (DEFAULT_TOPOLOGY, NTU_TOPOLOGY, BoneTopology, load_manifest, load_sequence,
                       read_ntu_skeleton)
from .ssm import compute_ssm, export_ssm, pairwise_frame_distances, validate_ssm
from .synth import SynthConfig, config_dict, write_dataset
from .train import (TrainConfig, TrainingDiverged, evaluate, fuse_scores,
                    load_checkpoint, load_dataset, read_scores,
                    save_checkpoint, topk_accuracy, train, write_history, write_scores)

log = logging.getLogger("skelgcn")

GRADCHECK_THRESHOLD = 1e-4
TINY_TOPOLOGY = BoneTopology.from_undirected(4, [(0, 1), (1, 2), (1, 3)], 1)


class CommandError(Exception):
    """Failure that should end the command with a one-line message."""


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")
    return value == "on"


def _log_config(name: str, cfg: dict) -> None:
    log.info("%s %s", name, json.dumps(cfg, sort_keys=True))


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig(classes=args.classes, subjects=args.subjects, cameras=args.cameras,
                          reps=args.reps, frames=args.frames, noise_std=args.noise, seed=args.seed)
    except ValueError as exc:
        args.parser.error(str(exc))
    _log_config("synth", {**config_dict(cfg), "out": str(args.out), "split": args.split})
    manifest = write_dataset(args.out, cfg, split=args.split)
    print(f"wrote {len(manifest.items)} sequences ({cfg.classes} classes x {cfg.subjects} subjects "
          f"x {cfg.cameras} cameras x {cfg.reps} reps) to {args.out}")
    print(f"{args.split}: {len(manifest.partition('train'))} train, "
          f"{len(manifest.partition('test'))} test")
    return 0


def _read_any_sequence(path: Path):
    if path.suffix == ".skeleton":
        bodies = read_ntu_skeleton(path, num_joints=None)
        if len(bodies) > 1:
            log.info("%s holds %d bodies, using the first", path, len(bodies))
        return bodies[0]
    return load_sequence(path)


def cmd_ssm(args) -> int:
    _log_config("ssm", {"input": str(args.input), "metric": args.metric, "format": args.format,
                        "out": str(args.out)})
    seq = _read_any_sequence(Path(args.input))
    ssm = compute_ssm(seq, args.metric)
    export_ssm(ssm, args.out, args.format)
    problems = validate_ssm(ssm)
    print(f"{ssm.size}x{ssm.size} {args.metric} SSM written to {args.out}")
    print("validation: ok (symmetric, hollow, non-negative)" if not problems
          else "validation: " + "; ".join(problems))
    return 0 if not problems else 1


def _regina_config(args) -> ReginaConfig:
    return ReginaConfig(enabled=args.regina, kernel_size=args.kernel_size, temporal_kernel=9,
                        learnable_conv=args.ssm_conv, shared_conv=args.shared_conv)


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest).resplit(args.split)
    try:
        regina = _regina_config(args)
        tcfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    except ValueError as exc:
        args.parser.error(str(exc))
    data = load_dataset(manifest, "train", args.frames, args.stream,
                        args.metric if regina.enabled else None)
    num_classes = args.classes or int(max(it.label for it in manifest.items)) + 1
    mcfg = ModelConfig(regina=regina, num_classes=num_classes, frames=args.frames)
    run = {"manifest": str(args.manifest), "split": args.split, "stream": args.stream,
           "metric": args.metric, "frames": args.frames, "train_samples": len(data),
           "model": mcfg.to_dict(), "train": asdict(tcfg)}
    _log_config("train", run)
    model = build_model(mcfg, seed=args.seed)
    try:
        history = train(model, data, tcfg)
    except TrainingDiverged as exc:
        raise CommandError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"split": args.split, "stream": args.stream, "metric": args.metric, "frames": args.frames,
            "epochs": args.epochs, "seed": args.seed, "lr": args.lr,
            "final_train_loss": history[-1]["train_loss"] if history else None}
    save_checkpoint(out / "checkpoint.json", model, meta)
    write_history(out / "history.csv", history)
    (out / "run.json").write_text(json.dumps(run, sort_keys=True, indent=1) + "\n")
    if history:
        last = history[-1]
        print(f"epoch {last['epoch']}: train loss {last['train_loss']:.4f}, "
              f"train top1 {last['train_top1']:.4f}")
    print(f"checkpoint: {out / 'checkpoint.json'} ({model.num_parameters()} parameters)")
    return 0


def cmd_eval(args) -> int:
    try:
        model, meta = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise CommandError(f"cannot read checkpoint: {exc}") from None
    manifest = load_manifest(args.manifest)
    split = args.split or meta.get("split", manifest.split)
    manifest = manifest.resplit(split)
    cfg = model.config
    labels = [it.label for it in manifest.items]
    if max(labels) >= cfg.num_classes:
        raise CommandError(f"manifest has label {max(labels)} but the checkpoint has "
                           f"{cfg.num_classes} classes")
    stream = meta.get("stream", "joint")
    metric = meta.get("metric", "l2") if cfg.regina.enabled else None
    _log_config("eval", {"checkpoint": str(args.checkpoint), "manifest": str(args.manifest),
                         "split": split, "subset": args.subset, "stream": stream})
    try:
        data = load_dataset(manifest, args.subset, cfg.frames, stream, metric)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    if data.x.shape[3] != cfg.num_joints:
        raise CommandError(f"data has {data.x.shape[3]} joints, checkpoint expects {cfg.num_joints}")
    m = evaluate(model, data)
    print(f"top1 {m.top1:.4f}")
    print(f"top5 {m.top5:.4f}")
    print("per-class " + " ".join(f"{v:.3f}" for v in m.per_class))
    if args.scores_out:
        write_scores(args.scores_out, data.ids, m.probs)
    return 0


def gradcheck_error(config: ModelConfig | None = None, seed: int = 0) -> float:
    """Worst relative gradient error of the tiny model on a random 2-sample batch."""
    config = config or tiny_config()
    model = Model(config, build_graph(_topology_for(config.num_joints)), seed)
    rng = np.random.default_rng([seed, 3])
    x = rng.normal(size=(2, config.in_channels, config.frames, config.num_joints))
    ssm = np.stack([pairwise_frame_distances(s.transpose(2, 1, 0)) for s in x])
    labels = np.arange(2) % config.num_classes
    return ad.grad_check(lambda *_: ad.softmax_cross_entropy(model(x, ssm), labels),
                         model.parameters())


def _topology_for(n: int) -> BoneTopology:
    for topo in (TINY_TOPOLOGY, DEFAULT_TOPOLOGY, NTU_TOPOLOGY):
        if topo.num_joints == n:
            return topo
    return BoneTopology.from_undirected(n, [(j - 1, j) for j in range(1, n)], 0)


def cmd_gradcheck(args) -> int:
    if args.config:
        try:
            config = ModelConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise CommandError(f"bad config {args.config}: {exc}") from None
    else:
        config = tiny_config(ReginaConfig(enabled=args.regina, temporal_kernel=5))
    _log_config("gradcheck", {"seed": args.seed, "model": config.to_dict()})
    err = gradcheck_error(config, args.seed)
    ok = err <= GRADCHECK_THRESHOLD
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAIL'}, threshold {GRADCHECK_THRESHOLD:g})")
    return 0 if ok else 1


def cmd_fuse(args) -> int:
    ids_a, a = read_scores(args.scores_a)
    ids_b, b = read_scores(args.scores_b)
    if len(ids_a) != len(ids_b):
        raise CommandError(f"score files have {len(ids_a)} and {len(ids_b)} rows")
    if ids_a != ids_b:
        raise CommandError("score files list different samples or a different order")
    manifest = load_manifest(args.manifest)
    by_id = {it.sample_id: it.label for it in manifest.items}
    missing = [i for i in ids_a if i not in by_id]
    if missing:
        raise CommandError(f"{len(missing)} scored samples are not in the manifest, e.g. {missing[0]}")
    labels = np.array([by_id[i] for i in ids_a])
    try:
        pred = fuse_scores(a, b)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    fused = a + b
    print(f"stream a top1 {topk_accuracy(a, labels, 1):.4f}")
    print(f"stream b top1 {topk_accuracy(b, labels, 1):.4f}")
    print(f"fused top1 {float(np.mean(pred == labels)):.4f}")
    print(f"fused top5 {topk_accuracy(fused, labels, 5):.4f}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skelgcn", description="Skeleton action recognition with "
                                "self-similarity weighted temporal graph convolutions.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic skeleton dataset")
    s.add_argument("--classes", type=int, default=5)
    s.add_argument("--subjects", type=int, default=8)
    s.add_argument("--cameras", type=int, default=2)
    s.add_argument("--reps", type=int, default=10)
    s.add_argument("--frames", type=int, default=64)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", choices=("xsub", "xview"), default="xsub")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ssm", help="compute and export one sequence's self-similarity matrix")
    s.add_argument("--input", type=Path, required=True, help="sequence JSON or NTU .skeleton file")
    s.add_argument("--metric", choices=("l1", "l2"), default="l2")
    s.add_argument("--format", choices=("csv", "pgm"), default="csv")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_ssm)

    s = sub.add_parser("train", help="train a model on a manifest's train partition")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--split", choices=("xsub", "xview"), default="xsub")
    s.add_argument("--regina", type=_on_off, default=True, metavar="on|off")
    s.add_argument("--kernel-size", type=int, default=3, help="SSM conv kernel size (odd)")
    s.add_argument("--metric", choices=("l1", "l2"), default="l2")
    s.add_argument("--stream", choices=("joint", "bone"), default="joint")
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--frames", type=int, default=64)
    s.add_argument("--classes", type=int, default=None, help="default: largest label + 1")
    s.add_argument("--ssm-conv", type=_on_off, default=True, metavar="on|off",
                   help="learnable conv over the SSM (off feeds raw distances)")
    s.add_argument("--shared-conv", action="store_true", help="one SSM conv kernel for all blocks")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="Top-1/Top-5 of a checkpoint")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--split", choices=("xsub", "xview"), default=None,
                   help="default: the split the checkpoint was trained on")
    s.add_argument("--subset", choices=("train", "test"), default="test")
    s.add_argument("--scores-out", type=Path, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of every gradient of a tiny model")
    s.add_argument("--config", type=Path, default=None, help="model config JSON (default: tiny)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--regina", type=_on_off, default=True, metavar="on|off")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("fuse", help="fuse two score files by summing probabilities")
    s.add_argument("--scores-a", type=Path, required=True)
    s.add_argument("--scores-b", type=Path, required=True)
    s.add_argument("--manifest", type=Path, required=True)
    s.set_defaults(func=cmd_fuse)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.parser = parser
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CommandError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"skelgcn {args.command}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
