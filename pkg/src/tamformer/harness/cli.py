"""Command-line entry point: ``tamformer <subcommand> ...``.

Exit codes: 0 success, 1 failed gradient check or diverged run, 2 contract or usage error,
3 I/O or parse error.
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from ..data import GeneratorConfig, generate_synthetic, load_dataset, save_dataset, split
from ..errors import ContractError, ParseError, TamformerError
from ..maskgen import sparsity_stats, write_mask_csv
from ..model import (
    PROFILES,
    ModelConfig,
    anticipation_bounds,
    forward_arrays,
    load_checkpoint,
    stack_windows,
)
from ..numerics import no_grad
from ..training import TRAIN_PROFILES, model_grad_check, train_two_stage, write_train_log
from .evaluate import emit_report, evaluate_at_times, load_report
from .plot import plot_f1_over_time

GRAD_TOLERANCE = 1e-4
EXIT_OK, EXIT_FAIL, EXIT_CONTRACT, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("tamformer")


def model_config_from(arg, profile="desk"):
    """A profile name or a path to a JSON model config."""
    if arg is None:
        return PROFILES[profile]
    if arg in PROFILES:
        return PROFILES[arg]
    try:
        with open(arg) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(arg, exc.msg, exc.lineno) from None
    return ModelConfig.from_dict(doc)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ContractError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_gen_data(args):
    config = model_config_from(args.config, args.profile)
    fractions = tuple(_floats(args.fractions))
    gen = GeneratorConfig.for_model(config, balance=args.balance, fractions=fractions)
    samples, manifest = generate_synthetic(args.n, args.seed, gen)
    save_dataset(args.out, samples, manifest)
    counts = {k: len(manifest.ids(k)) for k in ("train", "val", "test")}
    print(f"wrote {len(samples)} samples to {args.out} (splits {counts})")
    return EXIT_OK


def cmd_train(args):
    config = model_config_from(args.config, args.profile)
    samples, manifest = load_dataset(args.data)
    tc = TRAIN_PROFILES[args.profile]
    overrides = {"seed": args.seed, "reg_stage2": args.stage2 == "on", "augment": args.augment}
    if args.lr is not None:
        overrides["lr"] = args.lr
    if args.epochs1 is not None:
        overrides["epochs_stage1"] = args.epochs1
    if args.epochs2 is not None:
        overrides["epochs_stage2"] = args.epochs2
    tc = type(tc).from_dict({**tc.to_dict(), **overrides})
    t0 = time.perf_counter()
    result = train_two_stage(samples, manifest, config, tc, out_dir=args.out)
    write_train_log(os.path.join(args.out, "train_log.csv"), result.log)
    last = result.log[-1] if result.log else None
    msg = f"trained {len(result.log)} epochs in {time.perf_counter() - t0:.1f}s"
    if last is not None:
        msg += f"; final l_ce={last.l_ce:.4f} l_r={last.l_r:.4f} train f1={last.f1:.4f}"
    print(msg)
    print(f"checkpoints: {', '.join(result.checkpoints)}")
    return EXIT_OK


def _eval_samples(args):
    samples, manifest = load_dataset(args.data)
    chosen = split(samples, manifest, args.split)
    if not chosen:
        raise ContractError(f"split {args.split!r} of {args.data} is empty")
    return chosen


def cmd_eval(args):
    params = load_checkpoint(args.checkpoint)
    samples = _eval_samples(args)
    if args.times:
        times = _floats(args.times)
    else:
        lo, hi = anticipation_bounds(samples[0], params.config)
        step = params.config.query_stride / params.config.fps
        times = list(np.round(np.arange(hi, lo - 1e-9, -step), 10))
    report = evaluate_at_times(params, samples, times, args.threshold, args.mask_threshold,
                               seed=args.seed)
    for r in report.rows:
        auc = "n/a" if r.auc is None else f"{r.auc:.4f}"
        print(f"t_a={r.t_a:g}s acc={r.acc:.4f} auc={auc} f1={r.f1:.4f} "
              f"frames {r.mean_frames_used:.2f}/{r.mean_frames_available:.2f}")
    if args.report:
        emit_report(report, args.report)
        print(f"report written to {args.report}")
    return EXIT_OK


def cmd_grad_check(args):
    config = model_config_from(args.config)
    t0 = time.perf_counter()
    worst, per = model_grad_check(config, eps=args.eps, seed=args.seed, batch=args.batch)
    for name, err in per.items():
        log.info("%s: %.3e", name, err)
    print(f"max relative error {worst:.3e} over {len(per)} tensors "
          f"({time.perf_counter() - t0:.1f}s, eps={args.eps:g})")
    return EXIT_OK if worst < GRAD_TOLERANCE else EXIT_FAIL


def cmd_dump_masks(args):
    params = load_checkpoint(args.checkpoint)
    samples = _eval_samples(args)[: args.limit]
    os.makedirs(args.out, exist_ok=True)
    with no_grad():
        out = forward_arrays(params, stack_windows(samples, params.config))
    summary = os.path.join(args.out, "sparsity.csv")
    with open(summary, "w") as fh:
        fh.write("sample_id,mask,row,frames_used,frames_available\n")
        for key, mask in (("enc", out.mask_e), ("dec", out.mask_d)):
            used, avail = sparsity_stats(mask, args.threshold)
            for i, s in enumerate(samples):
                safe = s.sample_id.replace("#", "_")
                write_mask_csv(os.path.join(args.out, f"{safe}.{key}.csv"), mask.rows.data[i])
                for r in range(used.shape[-1]):
                    fh.write(f"{s.sample_id},{key},{r},{used[i, r]},{avail[i, r]}\n")
    print(f"wrote masks for {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_plot(args):
    reports = []
    for spec in args.reports:
        name, _, path = spec.rpartition("=")
        name = name or os.path.splitext(os.path.basename(path))[0]
        reports.append((name, load_report(path)))
    plot_f1_over_time(reports, args.out)
    print(f"plot written to {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="tamformer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, default=264)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--balance", type=float, default=0.5, help="fraction of crossing samples")
    g.add_argument("--fractions", default="0.7,0.1,0.2", help="train,val,test fractions")
    g.add_argument("--config", help="model profile name or JSON model config (sets widths)")
    g.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="model profile name or JSON model config")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--profile", choices=sorted(TRAIN_PROFILES), default="desk")
    t.add_argument("--stage2", choices=("on", "off"), default="on",
                   help="add the anticipation-gap term in stage 2")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs1", type=int)
    t.add_argument("--epochs2", type=int)
    t.add_argument("--augment", action="store_true", help="encoding-window augmentation")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="metrics at anticipation times")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--times", help='seconds before the event, e.g. "0.4,0.3,0.2,0.1"; '
                                   "default: every query step")
    e.add_argument("--report", help="output path (.csv or .json)")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--mask-threshold", type=float, default=0.5)
    e.add_argument("--seed", type=int, help="echoed into the report")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference gradient check")
    c.add_argument("--config", default="desk", help="model profile name or JSON model config")
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--batch", type=int, default=2)
    c.set_defaults(func=cmd_grad_check)

    d = sub.add_parser("dump-masks", help="write learned masks as CSV")
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--threshold", type=float, default=0.5)
    d.add_argument("--split", default="test", choices=("train", "val", "test"))
    d.add_argument("--limit", type=int, default=10, help="number of samples")
    d.set_defaults(func=cmd_dump_masks)

    pl = sub.add_parser("plot", help="F1 over anticipation time as SVG")
    pl.add_argument("--reports", nargs="+", required=True, help="[name=]report path")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONTRACT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TamformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
