"""Command-line entry point: ``thzq {synth,train,eval,gradcheck,params}``.

Exit codes: 0 success, 1 runtime error, 2 usage error. The resolved
configuration of every run is printed to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from thzq import io as thzio
from thzq import nn, pipeline, synth, vqc
from thzq.errors import ThzqError

log = logging.getLogger("thzq")

MODEL_CHOICES = [k.value for k in pipeline.ModelKind]


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _decay(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thzq", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: $THZQ_THREADS or 1)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raster-scan dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--scene", help="scene override text file (6 blocks of 8x8 0/1)")
    p.add_argument("--config", help="JSON file with SceneConfig fields")

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=_positive_int, default=1000)
    p.add_argument("--lr", type=_positive_float, default=5.0)
    p.add_argument("--decay", type=_decay, default=0.5)
    p.add_argument("--decay-every", type=_positive_int, default=10)
    p.add_argument("--batch", type=_positive_int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freeze-vqc", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=synth.SPLITS, default="test")
    p.add_argument("--heatmaps", metavar="PREFIX")
    p.add_argument("--report", metavar="PATH", help="also write the report to a file")

    p = sub.add_parser("gradcheck", help="cross-check circuit and end-to-end gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=_positive_float, default=1e-5)
    p.add_argument("--instances", type=_positive_int, default=20)

    p = sub.add_parser("params", help="print trainable-parameter counts")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    return parser


def _resolve_threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("THZQ_THREADS")
    if env is None:
        return 1
    try:
        value = int(env)
    except ValueError:
        raise UsageError(f"THZQ_THREADS must be a positive integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"THZQ_THREADS must be a positive integer, got {env!r}")
    return value


def _echo_config(args, **extra) -> None:
    resolved = {k: v for k, v in vars(args).items()}
    resolved.update(extra)
    print("config: " + json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)


def cmd_synth(args) -> int:
    config = synth.SceneConfig.from_json_file(args.config) if args.config else synth.SceneConfig()
    config.seed = args.seed
    scene = None
    if args.scene:
        scene = synth.read_scene_file(args.scene, config.n_surfaces, config.pixels_per_side)
    _echo_config(args, scene_config=config.to_dict())
    dataset = synth.synth_dataset(config, scene, threads=args.threads)
    thzio.write_dataset(dataset, args.out)
    counts = [len(dataset.indices(s)) for s in synth.SPLITS]
    print(f"wrote {len(dataset)} samples to {args.out} "
          f"(train={counts[0]} valid={counts[1]} test={counts[2]})")
    return 0


def history_path(ckpt_path) -> Path:
    p = Path(ckpt_path)
    return p.with_name(p.name + ".history.csv")


def cmd_train(args) -> int:
    config = nn.TrainConfig(
        epochs=args.epochs,
        base_lr=args.lr,
        decay_factor=args.decay,
        decay_every=args.decay_every,
        batch_size=args.batch,
        seed=args.seed,
    )
    dataset = thzio.read_dataset(args.data)
    _echo_config(args, train_config=vars(config))
    ckpt, metrics = pipeline.train(
        args.model, dataset, config, freeze_vqc=args.freeze_vqc,
        on_epoch=lambda r: log.info("epoch %d lr=%g loss=%.6f valid=%.4f",
                                    r.epoch, r.lr, r.train_loss, r.valid_mean_acc),
    )
    thzio.write_checkpoint(ckpt, args.out)
    thzio.write_history_csv(ckpt.history, history_path(args.out))
    sys.stdout.write(thzio.metrics_report(
        metrics, model=ckpt.kind.value, split="valid", best_epoch=ckpt.best_epoch))
    return 0


def cmd_eval(args) -> int:
    ckpt = thzio.read_checkpoint(args.ckpt)
    dataset = thzio.read_dataset(args.data)
    _echo_config(args)
    metrics = pipeline.evaluate(ckpt, dataset, args.split)
    report = thzio.metrics_report(metrics, model=ckpt.kind.value, split=args.split)
    sys.stdout.write(report)
    if args.report:
        thzio._write_text(args.report, report)
    if args.heatmaps:
        maps = pipeline.reconstruct_images(ckpt, dataset, args.split)
        for path in thzio.export_heatmaps(maps, args.heatmaps):
            print(f"wrote {path}", file=sys.stderr)
    return 0


def run_gradcheck(seed: int = 0, eps: float = 1e-5, instances: int = 20, out=None) -> bool:
    """Parameter-shift vs adjoint vs finite differences, then the end-to-end hybrid loss.

    Tolerances: 1e-9 between the exact methods, 1e-5 against finite
    differences, 1e-4 relative for the end-to-end check.
    """
    from thzq.gradcheck import end_to_end_check, random_circuit_instance

    out = out or sys.stdout
    rng = np.random.default_rng(seed)
    ok = True
    for i in range(instances):
        inst = random_circuit_instance(rng)
        shift = vqc.grad_parameter_shift(inst.layout, inst.thetas, inst.waveform, inst.upstream)
        adj = vqc.grad_adjoint(inst.layout, inst.thetas, inst.waveform, inst.upstream)
        fd = vqc.finite_difference_grad(inst.layout, inst.thetas, inst.waveform, inst.upstream, h=eps)
        e_sa = float(np.max(np.abs(shift - adj)))
        e_fd = float(max(np.max(np.abs(shift - fd)), np.max(np.abs(adj - fd))))
        passed = e_sa <= 1e-9 and e_fd <= 1e-5
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} circuit[{i}] n={inst.layout.n_qubits} "
              f"L={inst.layout.n_layers} shift-vs-adjoint={e_sa:.2e} vs-fd={e_fd:.2e}", file=out)
    rel = end_to_end_check(seed)
    passed = rel <= 1e-4
    ok &= passed
    print(f"{'PASS' if passed else 'FAIL'} end-to-end qml-dnn max-rel-err={rel:.2e}", file=out)
    return ok


def cmd_gradcheck(args) -> int:
    _echo_config(args)
    return 0 if run_gradcheck(args.seed, args.eps, args.instances) else 1


def cmd_params(args) -> int:
    _echo_config(args)
    counts = pipeline.param_counts(args.model)
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "params": cmd_params,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.threads = _resolve_threads(args)
    except UsageError as exc:
        print(f"thzq: error: {exc}", file=sys.stderr)
        return 2
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except (ThzqError, ValueError, OSError) as exc:
        print(f"thzq: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
