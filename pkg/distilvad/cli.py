"""
DistilVAD command line

    python -m distilvad gen|pretrain|distill|eval|bench|ablate --config <file.json> [--seed n] [--out dir]

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime error.
Failures print one line ``error code=<n> kind=<kind> reason=<text>`` to stderr.
"""
import argparse
import os
import sys

from distilvad.ablation import run_ablation
from distilvad.bench import bench_variants, write_bench_csv
from distilvad.checkpoint import load_checkpoint
from distilvad.config import load_config
from distilvad.exceptions import ConfigError, DistilVADError, UnknownAxisError
from distilvad.pipeline import build_teachers, distill, evaluate, generate, load_data, pretrain
from distilvad.tensor import set_default_dtype
from distilvad.utils import get_logger, get_precision, setup_logging

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("gen", "pretrain", "distill", "eval", "bench", "ablate")

logger = get_logger("cli")


class UsageError(Exception):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="distilvad", description="Adversarial multi-teacher distillation for video anomaly detection")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="run configuration JSON (defaults when omitted)")
        p.add_argument("--seed", type=int, help="overrides the training and scene seeds")
        p.add_argument("--out", help="run directory for every artifact")
        return p

    command("gen", "generate the synthetic dataset")
    command("pretrain", "reconstruction pre-training of the encoder").add_argument(
        "--resume", help="pre-training checkpoint to continue from")
    command("distill", "distill the student from the teachers").add_argument(
        "--resume", help="distillation checkpoint to continue from")
    command("eval", "score the test split and write the AUC report").add_argument(
        "--scorer", help="student, ae or teacher:<i>")
    bench = command("bench", "measure forward throughput")
    bench.add_argument("--checkpoint", help="student checkpoint; random weights when omitted")
    bench.add_argument("--batch-size", type=int, help="sequences per forward pass")
    bench.add_argument("--replicas", type=int, help="parallel workers sharing the model")
    command("ablate", "train and evaluate ablation cases").add_argument(
        "--axes", help="comma-separated axes, e.g. losses,alpha")
    return parser


def cmd_gen(cfg, args):
    dataset = generate(cfg)
    for split in ("train", "distill", "test"):
        print(f"{split}: {len(dataset.split(split))} clips, {dataset.frame_count(split)} frames")


def cmd_pretrain(cfg, args):
    result = pretrain(cfg, load_data(cfg, ["train"]), resume=args.resume)
    print(f"encoder: {cfg.paths.encoder_checkpoint} ({len(result.reports)} batches)")


def cmd_distill(cfg, args):
    result = distill(cfg, load_data(cfg, [cfg.train.distill_split]), resume=args.resume)
    print(f"student: {cfg.paths.student_checkpoint} ({len(result.reports)} batches)")


def cmd_eval(cfg, args):
    if args.scorer:
        cfg.eval.scorer = args.scorer
    micro, macro = evaluate(cfg, load_data(cfg, ["test"]))
    print(f"micro_auc={micro.auc:.6f} macro_auc={macro.auc:.6f}")


def cmd_bench(cfg, args):
    if args.batch_size:
        cfg.bench.batch_size = args.batch_size
    if args.replicas:
        cfg.bench.replicas = args.replicas
    cfg.bench.validate()
    state = load_checkpoint(args.checkpoint) if args.checkpoint else None
    reports = bench_variants(cfg.model, cfg.bench, seed=cfg.train.seed, stride=cfg.train.stride, state=state)
    write_bench_csv(cfg.paths.bench_csv, reports)
    for r in reports:
        print(f"{r.variant}: fps={r.fps:.1f} e2e_fps={r.e2e_fps:.1f}")


def cmd_ablate(cfg, args):
    if args.axes:
        cfg.ablation.axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    cfg.ablation.validate()
    table = run_ablation(cfg, load_data(cfg), build_teachers(cfg), path=cfg.paths.ablation_csv)
    print(table.to_string(index=False))


HANDLERS = {"gen": cmd_gen, "pretrain": cmd_pretrain, "distill": cmd_distill, "eval": cmd_eval,
            "bench": cmd_bench, "ablate": cmd_ablate}


def report_error(code, kind, reason):
    reason = " ".join(str(reason).split())
    print(f"error code={code} kind={kind} reason={reason}", file=sys.stderr)
    return code


def main(argv=None):
    """Run one subcommand; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return report_error(EXIT_USAGE, e.kind, e)

    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        os.makedirs(cfg.paths.run_dir, exist_ok=True)
        setup_logging(logs_dir=os.path.join(cfg.paths.run_dir, "logs"), command=args.command)
        set_default_dtype(get_precision())
        logger.info(f"Running {args.command} in {cfg.paths.run_dir}")
        HANDLERS[args.command](cfg, args)
    except UnknownAxisError as e:
        return report_error(EXIT_USAGE, e.kind, e)
    except ConfigError as e:
        return report_error(EXIT_CONFIG, e.kind, e)
    except (DistilVADError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return report_error(EXIT_RUNTIME, getattr(e, "kind", "io"), e)
    return EXIT_OK
