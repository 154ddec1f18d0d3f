"""Command-line entry point: ``handobj {synth,train,eval,infer,gradcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import RunConfig

log = logging.getLogger("handobj")


def _config(path: Optional[str]) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def cmd_synth(args) -> int:
    from .synth import generate_scenes, write_dataset

    config = _config(args.config)
    samples = generate_scenes(args.seed, args.count, config)
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .synth import read_dataset
    from .training import load_checkpoint, train

    config = _config(args.config)
    data = args.data or config.data_dir
    if not data:
        raise SystemExit("train: no dataset given (--data or data_dir in the config)")
    samples = read_dataset(data)
    state = load_checkpoint(args.resume, expect=config) if args.resume else None
    if state is not None:
        state.model.config = config
    state = train(config, samples, args.out, state=state)
    last = state.log[-1] if state.log else {}
    print(f"trained to step {state.step}; final loss {last.get('loss', float('nan')):.5g}; checkpoint {Path(args.out) / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate, save_report
    from .synth import read_dataset
    from .training import load_checkpoint

    expect = RunConfig.load(args.config) if args.config else None
    model = load_checkpoint(args.ckpt, expect=expect).model
    samples = read_dataset(args.data)
    report = evaluate(model, samples, args.noise_sigma, args.eval_points, args.batch_size, oracle=args.oracle)
    save_report(report, args.report)
    print(json.dumps(report.means(), indent=1, sort_keys=True))
    return 0


def cmd_infer(args) -> int:
    from .evaluation import export_prediction, predict
    from .synth import read_sample
    from .training import load_checkpoint

    model = load_checkpoint(args.ckpt).model
    pred = predict(model, [read_sample(args.sample)], batch_size=1)[0]
    meta = export_prediction(pred, args.out)
    print(f"wrote {meta['n_sparse']} sparse and {meta['n_dense']} dense points to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_suite

    names = [n for n in args.ops.split(",") if n] if args.ops else None
    corrupt = [n for n in args.corrupt_op.split(",") if n] if args.corrupt_op else []
    try:
        results = run_suite(names, corrupt)
    except KeyError as e:
        print(f"gradcheck: {e.args[0]}", file=sys.stderr)
        return 2
    for r in results:
        print(f"{r.name:24s} max_rel_err {r.error:.3e}  tol {r.tol:.0e}  {'ok' if r.ok else 'FAIL'}  ({r.seconds:.1f}s)")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handobj", description="Hand-held object point-cloud reconstruction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write a metrics report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--noise-sigma", type=float, default=0.0)
    e.add_argument("--eval-points", type=int)
    e.add_argument("--batch-size", type=int)
    e.add_argument("--config", help="reject the checkpoint unless its model dims match this config")
    e.add_argument("--oracle", action="store_true", help="score ground-truth clouds (protocol self-test)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="reconstruct one sample and export PLY clouds")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--sample", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--ops", help="comma-separated subset of checks")
    g.add_argument("--corrupt-op", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
