"""
Command-line surface: train, eval, replay, check, ablation

Exit codes: 0 success, 1 config error, 2 invariant-suite failure, 3 checkpoint mismatch.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from core import checkpoint
from core.agent import EncoderMode
from core.config import Ablation, EvalProtocol, RunConfig, RunMode, apply_ablation, load_config, with_overrides
from core.diagnostics import run_checks
from core.errors import CheckpointMismatchError
from core.evaluate import (
    PolicyController, RandomController, TeleportOracle, ZeroController,
    evaluate_checkpoint, load_agent, replay, report_json, run_ablation,
)
from core.exporter import ReportExporter
from core.rl_train import Trainer
from core.run_store import RunStore
from presets.tables import get_ablation_name

logger = logging.getLogger("pushrl")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK_FAILED = 2
EXIT_CHECKPOINT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pushrl", description="Planar push policy training and evaluation")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="train a policy")
    common(p)
    p.add_argument("--ablation", choices=[a.value for a in Ablation])
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", action="store_true", help="continue from resume.pkl in --out")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--encoder", choices=[EncoderMode.STUDENT.value, EncoderMode.EXPERT.value])
    p.add_argument("--protocol", choices=[e.value for e in EvalProtocol])
    p.add_argument("--pdf", action="store_true", help="also write report.pdf")

    p = sub.add_parser("replay", help="log one seeded episode per physics tick")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--controller", choices=["policy", "zero", "random", "teleport"], default="policy")
    p.add_argument("--encoder", choices=[EncoderMode.STUDENT.value, EncoderMode.EXPERT.value])
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--seconds", type=float)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--only", nargs="*", help="check names to run")

    p = sub.add_parser("ablation", help="train and evaluate ablations")
    common(p)
    p.add_argument("--ablation", choices=[a.value for a in Ablation] + ["all"], default="all")
    p.add_argument("--episodes", type=int)
    return parser


def resolve_config(args: argparse.Namespace, mode: RunMode) -> RunConfig:
    """CLI flags over the config file (or the checkpoint's stored config) over environment defaults"""
    if getattr(args, "config", None):
        config = load_config(args.config)
    elif getattr(args, "checkpoint", None):
        _, metadata, _, _ = checkpoint.read_header(args.checkpoint)
        config = RunConfig.model_validate(metadata.get("config", {}))
    else:
        config = RunConfig()

    overrides = {
        "mode": mode.value,
        "seed": getattr(args, "seed", None),
        "paths.out_dir": getattr(args, "out", None),
        "paths.checkpoint": getattr(args, "checkpoint", None),
        "eval.episodes": getattr(args, "episodes", None),
        "eval.encoder": getattr(args, "encoder", None),
        "eval.protocol": getattr(args, "protocol", None),
        "ppo.iterations": getattr(args, "iterations", None),
    }
    ablation = getattr(args, "ablation", None)
    if ablation and ablation != "all":
        overrides["ablation"] = ablation
    return with_overrides(config, **overrides)


def _registry(config: RunConfig) -> RunStore:
    return RunStore(config.paths.registry_path)


def cmd_train(args) -> int:
    config = resolve_config(args, RunMode.TRAIN)
    out_dir = Path(config.paths.out_dir)
    if args.resume and not args.config:
        # the checkpoint's stored config wins over defaults when resuming
        trainer = Trainer.resume(out_dir)
        if args.iterations:
            trainer.config = with_overrides(trainer.config, **{"ppo.iterations": args.iterations})
        config = trainer.config
    elif args.resume:
        trainer = Trainer.resume(out_dir, apply_ablation(config))
    else:
        trainer = Trainer(apply_ablation(config), out_dir)
    result = trainer.train()

    last = result.records[-1].model_dump() if result.records else {}
    run_id = _registry(config).save_run("train", trainer.config.ablation.value, config.seed, str(out_dir),
                                        {"checkpoint": str(result.checkpoint), "last_iteration": last})
    print(f"✓ Checkpoint: {result.checkpoint}")
    print(f"✓ Metrics: {result.metrics}")
    print(f"✓ Run id: {run_id}")
    return EXIT_OK


def write_report(report, out_dir: Path, pdf: bool = False) -> List[Path]:
    exporter = ReportExporter()
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(report_json(report) + "\n", encoding="utf-8")
    paths = [report_path] + exporter.write_csv(report, out_dir)
    if pdf:
        pdf_path = out_dir / "report.pdf"
        pdf_path.write_bytes(exporter.export_to_pdf(report).getvalue())
        paths.append(pdf_path)
    return paths


def _print_rates(report) -> None:
    for c in report.criteria:
        time = f"{c.mean_time:.2f} s" if c.mean_time is not None else "n/a"
        print(f"  ({c.distance:g} m, {c.yaw_deg:g}°): {c.success_rate:5.1f}%  mean time {time}  "
              f"final {c.final_success_rate:5.1f}%")


def cmd_eval(args) -> int:
    config = resolve_config(args, RunMode.EVAL)
    report = evaluate_checkpoint(args.checkpoint, config, encoder=config.eval.encoder)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    paths = write_report(report, out_dir, args.pdf)

    summary = {"controller": report.controller, "encoder": report.encoder, "protocol": report.protocol,
               "episodes": report.episodes, "criteria": [c.model_dump() for c in report.criteria]}
    run_id = _registry(config).save_run("eval", config.ablation.value, config.eval.seed, str(out_dir), summary)
    print(f"✓ Evaluated {report.episodes} episodes ({report.encoder})")
    _print_rates(report)
    for path in paths:
        print(f"✓ Wrote {path}")
    print(f"✓ Run id: {run_id}")
    return EXIT_OK


def cmd_replay(args) -> int:
    config = resolve_config(args, RunMode.REPLAY)
    if args.controller == "policy":
        if not args.checkpoint:
            print("✗ --checkpoint is required for the policy controller", file=sys.stderr)
            return EXIT_CONFIG
        agent, _ = load_agent(args.checkpoint, config)
        controller = PolicyController(agent, config.eval.encoder)
    elif args.controller == "random":
        controller = RandomController(args.task_seed)
    elif args.controller == "teleport":
        controller = TeleportOracle()
    else:
        controller = ZeroController()

    out_path = Path(config.paths.out_dir) / f"replay_{args.controller}_{args.task_seed}.jsonl"
    count = replay(config, controller, args.task_seed, out_path, args.seconds)
    print(f"✓ {count} records → {out_path}")
    return EXIT_OK


def cmd_check(args) -> int:
    report = run_checks(args.only or None)
    for result in report.checks:
        mark = "✓" if result.passed else "✗"
        print(f"{mark} {result.name}: {result.detail}")
    if not report.passed:
        failed = sum(1 for r in report.checks if not r.passed)
        print(f"✗ {failed} of {len(report.checks)} checks failed")
        return EXIT_CHECK_FAILED
    print(f"✓ All {len(report.checks)} checks passed")
    return EXIT_OK


def cmd_ablation(args) -> int:
    config = resolve_config(args, RunMode.TRAIN)
    names = [a for a in Ablation] if args.ablation == "all" else [Ablation(args.ablation)]
    store = _registry(config)
    base_out = Path(config.paths.out_dir)

    base_ckpt = None
    for ablation in names:
        out_dir = base_out / ablation.value
        ckpt, effective = run_ablation(config, ablation, out_dir, base_checkpoint=base_ckpt)
        if ablation is Ablation.NONE:
            base_ckpt = ckpt
        report = evaluate_checkpoint(ckpt, effective.model_copy(update={"mode": RunMode.EVAL}),
                                     encoder=effective.eval.encoder)
        write_report(report, out_dir)
        store.save_run("ablation", ablation.value, config.seed, str(out_dir),
                       {"checkpoint": str(ckpt), "criteria": [c.model_dump() for c in report.criteria]})
        print(f"✓ {ablation.value} ({get_ablation_name(ablation.value)})")
        _print_rates(report)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "replay": cmd_replay,
    "check": cmd_check,
    "ablation": cmd_ablation,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"✗ Invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, json.JSONDecodeError) as e:
        print(f"✗ Config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatchError as e:
        logger.error(f"✗ Checkpoint mismatch: {e}")
        print(f"✗ Checkpoint mismatch: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
