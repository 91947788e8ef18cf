"""Command-line workbench entry point.

Subcommands: demo-script, teleop-serve, train, rollout, rollout-robot,
eval-offsets, report.  Global flags: --config, --seed, --out.  The
environment variable CSF_LOG sets the diagnostic verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("csf")


def _setup_logging() -> None:
    level = os.environ.get("CSF_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_demo_script(args) -> int:
    from .config import WorkbenchConfig
    from .demos import record_scripted, save_demo, write_manifest

    cfg = WorkbenchConfig.load(args.config)
    scene = cfg.resolve_scene()
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    count = args.count or cfg.demo.count
    kept = failed = 0
    for i in range(count):
        demo = record_scripted(scene, rng, cfg.expert.runtime(),
                               lin_range=cfg.demo.lin_range,
                               ang_range=cfg.demo.ang_range,
                               max_time=cfg.demo.max_time)
        if demo.meta.success:
            kept += 1
        else:
            failed += 1
            if not cfg.demo.keep_failed:
                continue
        save_demo(demo, out / f"scripted_{i:04d}.demo.jsonl")
    write_manifest(out)
    log.info("recorded %d demonstrations (%d successful) into %s", count, kept, out)
    print(f"demos: {count} recorded, {kept} successful, {failed} failed -> {out}")
    return 0


def cmd_train(args) -> int:
    from .config import WorkbenchConfig
    from .demos import load_dataset
    from .model import save_model, train

    cfg = WorkbenchConfig.load(args.config)
    hyper = cfg.training.runtime()
    if args.seed is not None:
        hyper.rng_seed = args.seed
    if args.steps:
        hyper.steps = args.steps
    dataset = load_dataset(args.data)
    usable = [d for d in dataset if d.meta.success]
    if not usable:
        print("no successful demonstrations found", file=sys.stderr)
        return 2
    out = _out_dir(args)
    rng = np.random.default_rng(hyper.rng_seed)

    def progress(step, loss):
        if step % 100 == 0:
            log.info("step %d loss %.6f", step, loss)

    model, losses = train(usable, hyper, rng, progress=progress)
    model_path = out / "model.json"
    save_model(model, model_path)
    with open(out / "loss_curve.csv", "w") as fh:
        fh.write("step,loss\n")
        for i, l in enumerate(losses):
            fh.write(f"{i},{l!r}\n")
    print(f"trained on {len(usable)} demos for {hyper.steps} steps; "
          f"final loss {losses[-1]:.6f} -> {model_path}")
    return 0


def cmd_rollout(args) -> int:
    from .config import WorkbenchConfig
    from .evaluation import (report_rollouts, rollout_object, save_rollout_logs,
                             trial_rng)
    from .model import load_model
    from .sim import random_start

    cfg = WorkbenchConfig.load(args.config)
    scene = cfg.resolve_scene()
    model = load_model(args.model)
    out = _out_dir(args)
    rcfg = cfg.rollout.runtime()
    logs = []
    outcomes = []
    for k in range(args.count):
        rng = trial_rng(args.seed, k)
        start = random_start(scene, rng, cfg.rollout.start_lin, cfg.rollout.start_ang)
        lg = rollout_object(model, scene, start, rcfg)
        logs.append(lg)
        outcomes.append(lg.outcome)
        log.info("rollout %d: %s (final %.4f m)", k, lg.outcome, lg.final_distance)
    save_rollout_logs(logs, out / "rollout_logs.jsonl")
    report_rollouts(logs, out)
    wins = outcomes.count("success")
    print(f"rollouts: {wins}/{args.count} success -> {out}")
    return 0


def cmd_rollout_robot(args) -> int:
    from .config import WorkbenchConfig
    from .evaluation import (default_placement, report_rollouts, rollout_robot,
                             save_rollout_logs, trial_rng)
    from .model import load_model
    from .sim import random_start

    cfg = WorkbenchConfig.load(args.config)
    scene = cfg.resolve_scene()
    model = load_model(args.model)
    chain = cfg.resolve_chain(args.chain)
    ctrl = cfg.controller.runtime()
    placement = cfg.placement_for(chain.name) or default_placement(chain.name)
    out = _out_dir(args)
    rcfg = cfg.rollout.runtime()
    logs = []
    for k in range(args.count):
        rng = trial_rng(args.seed, k)
        start = random_start(scene, rng, cfg.rollout.start_lin, cfg.rollout.start_ang)
        lg = rollout_robot(model, chain, ctrl, scene, cfg=rcfg, placement=placement,
                           start=start)
        logs.append(lg)
        log.info("robot rollout %d on %s: %s (final %.4f m)", k, chain.name,
                 lg.outcome, lg.final_distance)
    save_rollout_logs(logs, out / f"robot_logs_{chain.name}.jsonl")
    report_rollouts(logs, out)
    wins = sum(1 for lg in logs if lg.outcome == "success")
    print(f"robot rollouts on {chain.name}: {wins}/{args.count} success -> {out}")
    return 0


def cmd_eval_offsets(args) -> int:
    from .config import WorkbenchConfig
    from .evaluation import eval_offsets, report_offsets, save_offset_trials
    from .model import load_model

    cfg = WorkbenchConfig.load(args.config)
    scene = cfg.resolve_scene()
    model = load_model(args.model)
    chain = cfg.resolve_chain(args.chain) if args.chain else None
    out = _out_dir(args)
    trials = args.trials or cfg.offsets.trials
    result, logs = eval_offsets(
        model, scene, cfg.offsets.margin_lin, cfg.offsets.margin_rot,
        trials, args.seed, cfg.rollout.runtime(),
        start_lin=cfg.rollout.start_lin, start_ang=cfg.rollout.start_ang,
        near_miss_factor=cfg.offsets.near_miss_factor,
        chain=chain, ctrl_cfg=cfg.controller.runtime() if chain else None)
    save_offset_trials(result, out / "offset_trials.jsonl")
    report_offsets(result, out)
    counts = {c: sum(1 for t in result if t.outcome == c)
              for c in ("success", "near_miss", "fail")}
    print(f"offsets: {counts} over {trials} trials -> {out}")
    return 0


def cmd_report(args) -> int:
    from .evaluation import (load_offset_trials, load_rollout_logs, report_offsets,
                             report_rollouts)

    out = _out_dir(args)
    src = Path(args.data)
    made = []
    logs_file = src / "rollout_logs.jsonl" if src.is_dir() else src
    if logs_file.exists() and logs_file.suffix == ".jsonl" and "rollout" in logs_file.name:
        made += report_rollouts(load_rollout_logs(logs_file), out)
    trials_file = src / "offset_trials.jsonl" if src.is_dir() else src
    if trials_file.exists() and "offset" in trials_file.name:
        made += report_offsets(load_offset_trials(trials_file), out)
    if not made:
        print(f"nothing reportable under {src}", file=sys.stderr)
        return 2
    print("wrote: " + ", ".join(str(p) for p in made))
    return 0


def cmd_teleop_serve(args) -> int:
    from .config import WorkbenchConfig
    from .gateway import serve

    cfg = WorkbenchConfig.load(args.config)
    if args.scene:
        cfg.scene = args.scene
    gw = cfg.gateway.runtime()
    if args.port:
        gw.port = args.port
    serve(cfg.resolve_scene(), gw, _out_dir(args), seed=args.seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csf",
        description="contact-skill workbench: record demonstrations, train "
                    "wrench-sequence skills, execute and evaluate them")
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-script", help="generate scripted demonstrations")
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(fn=cmd_demo_script)

    p = sub.add_parser("train", help="train the skill model on a dataset directory")
    p.add_argument("--data", required=True, help="directory of .demo.jsonl files")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("rollout", help="object-steering rollouts in simulation")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, default=20)
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("rollout-robot", help="robot-coupled rollouts via force control")
    p.add_argument("--model", required=True)
    p.add_argument("--chain", default=None)
    p.add_argument("--count", type=int, default=10)
    p.set_defaults(fn=cmd_rollout_robot)

    p = sub.add_parser("eval-offsets", help="target-corruption robustness study")
    p.add_argument("--model", required=True)
    p.add_argument("--chain", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(fn=cmd_eval_offsets)

    p = sub.add_parser("report", help="regenerate CSV/SVG reports from saved logs")
    p.add_argument("--data", required=True, help="log file or directory")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("teleop-serve", help="run the teleoperation gateway")
    p.add_argument("--scene", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(fn=cmd_teleop_serve)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
