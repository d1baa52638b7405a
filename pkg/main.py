"""driftplan command line: field generation, ingestion, training, evaluation and comparison.

    python main.py gen-field --kind vortex --size 48 --frames 8 --out vortex.csv
    python main.py ingest --in raw.csv --out field.csv --crop 0,0,24,24
    python main.py train --kind spin --size 16 --rounds 5000 --out spin.dpck
    python main.py eval --method ilqr --field meander.csv --trials 50 --out trials.csv
    python main.py compare --checkpoint spin.dpck --field area.csv --random-crops 3 --crop-size 16
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from agents.drl_agent import PolicyController
from agents.ilqr_agent import ILQRController
from agents.training_coordinator import TrainingCoordinator
from config import RunConfig, load_run_config, setup_logging
from models.data_models import CurrentCsvSchema, Method, PatternKind
from models.exceptions import ConfigurationError, DriftplanError
from services.checkpoint import load_checkpoint, replay_path
from services.current_data import ingest_currents, save_currents
from services.disturbance_field import DisturbanceField, generate
from services.environment import BatchResult, EnvSpec, run_batch
from services.policy_network import PolicyWeights
from services.replay_buffer import ReplayBuffer
from services.reports import (
    curve_frame, paired_frame, paired_row, render_csv, summary_frame, trials_frame, write_csv,
)

logger = logging.getLogger("driftplan")

# dedicated flag -> RunConfig key
FLAG_KEYS = {
    "kind": "kind", "size": "grid_size", "frames": "n_frames", "dt_frame": "dt_frame",
    "strength": "strength", "scale": "scale", "rounds": "rounds", "trials": "trials",
    "seed": "seed", "workers": "workers",
}


# --- argument parsing --------------------------------------------------------

def _parse_set(values: Optional[List[str]]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for item in values or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _parse_crop(text: str) -> Tuple[int, int, int, int]:
    try:
        x0, y0, w, h = (int(part) for part in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"crop must be x0,y0,w,h, got '{text}'") from exc
    return x0, y0, w, h


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("--seed", type=int, help="base seed (falls back to DRIFTPLAN_SEED)")
    common.add_argument("--workers", type=int, help="parallel trial workers")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    pattern = argparse.ArgumentParser(add_help=False)
    pattern.add_argument("--kind", choices=[k.value for k in PatternKind])
    pattern.add_argument("--size", type=int, help="grid cells per side")
    pattern.add_argument("--frames", type=int)
    pattern.add_argument("--dt-frame", dest="dt_frame", type=float)
    pattern.add_argument("--strength", type=float)
    pattern.add_argument("--scale", type=float)

    parser = argparse.ArgumentParser(prog="driftplan", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-field", parents=[common, pattern], help="write an artificial field CSV")
    gen.add_argument("--out", type=Path, required=True)

    ingest = commands.add_parser("ingest", parents=[common], help="normalise an external current CSV")
    ingest.add_argument("--in", dest="source", type=Path, required=True)
    ingest.add_argument("--out", type=Path, required=True)
    ingest.add_argument("--crop", help="x0,y0,w,h in cells")

    train = commands.add_parser("train", parents=[common, pattern], help="train the policy network")
    train.add_argument("--field", type=Path, help="field CSV (otherwise --kind generates one)")
    train.add_argument("--out", type=Path, required=True, help="checkpoint path")
    train.add_argument("--curve", type=Path, help="learning-curve CSV (default <out>.curve.csv)")
    train.add_argument("--rounds", type=int)
    train.add_argument("--resume", type=Path, help="continue from this checkpoint")

    evaluate = commands.add_parser("eval", parents=[common, pattern], help="run evaluation trials")
    evaluate.add_argument("--method", choices=[m.value for m in Method], required=True)
    evaluate.add_argument("--field", type=Path)
    evaluate.add_argument("--checkpoint", type=Path)
    evaluate.add_argument("--trials", type=int)
    evaluate.add_argument("--out", type=Path, help="per-trial CSV")
    evaluate.add_argument("--summary", type=Path, help="summary CSV")

    compare = commands.add_parser("compare", parents=[common, pattern], help="paired DRL vs iLQR comparison")
    compare.add_argument("--checkpoint", type=Path, required=True)
    compare.add_argument("--field", type=Path, action="append", help="one area per field file")
    compare.add_argument("--crop", action="append", help="x0,y0,w,h sub-area of the first field")
    compare.add_argument("--random-crops", type=int, default=0, help="number of random sub-areas")
    compare.add_argument("--crop-size", type=int, default=16)
    compare.add_argument("--trials", type=int)
    compare.add_argument("--out-summary", type=Path, required=True)
    compare.add_argument("--out-trials", type=Path)
    compare.add_argument("--out-paired", type=Path)
    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    overrides.update(_parse_set(args.set))
    return load_run_config(args.config, overrides)


# --- shared helpers ----------------------------------------------------------

def load_field(args: argparse.Namespace, cfg: RunConfig) -> DisturbanceField:
    path = getattr(args, "field", None)
    if isinstance(path, list):
        path = path[0] if path else None
    if path is not None:
        schema = CurrentCsvSchema(cell_size=cfg.cell_size, strength_cap=cfg.effective_strength_cap())
        return ingest_currents(path, schema)
    return generate(cfg.pattern_spec(), cfg.grid_size, cfg.grid_size, cfg.n_frames, cfg.dt_frame,
                    cell_size=cfg.cell_size, strength_cap=cfg.effective_strength_cap())


def env_spec(field: DisturbanceField, cfg: RunConfig, area: str = "area1") -> EnvSpec:
    try:
        return EnvSpec(
            field=field, border_obstacles=cfg.border_obstacles, start=cfg.start, goal=cfg.goal,
            min_separation=cfg.min_separation, motion=cfg.motion(), step_cap=cfg.step_cap,
            success_radius=cfg.success_radius, time_scale=cfg.time_scale, area=area,
        )
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc


def _print_summary(summary: Dict[str, Any]) -> None:
    for key, value in summary.items():
        print(f"{key}: {value}")


def _evaluate(env: EnvSpec, method: Method, cfg: RunConfig,
              weights: Optional[PolicyWeights] = None) -> BatchResult:
    if method == Method.DRL:
        factory = lambda: PolicyController(weights, greedy=True)  # noqa: E731
    else:
        factory = lambda: ILQRController(cfg.ilqr(), cfg.rho)  # noqa: E731
    return run_batch(env, factory, cfg.trials, seed=cfg.seed, workers=cfg.workers,
                     include_failures=cfg.include_failures)


# --- commands ----------------------------------------------------------------

def cmd_gen_field(args: argparse.Namespace, cfg: RunConfig) -> int:
    field = load_field(argparse.Namespace(field=None), cfg)
    save_currents(field, args.out)
    _print_summary(field.summary())
    return 0


def cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    schema = CurrentCsvSchema(cell_size=cfg.cell_size, strength_cap=cfg.effective_strength_cap())
    field = ingest_currents(args.source, schema)
    if args.crop:
        field = field.crop(*_parse_crop(args.crop))
    save_currents(field, args.out)
    _print_summary(field.summary())
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.field is None and args.kind is None and args.resume is None:
        raise ConfigurationError("train needs --field or --kind")
    env = env_spec(load_field(args, cfg), cfg)
    buffer = None
    start_round = 0
    if args.resume is not None:
        weights, state = load_checkpoint(args.resume)
        start_round = int(state.get("round", 0))
        if replay_path(args.resume).exists():
            buffer = ReplayBuffer.load(replay_path(args.resume))
        logger.info("resuming from %s at round %d", args.resume, start_round)
    else:
        weights = PolicyWeights.init(cfg.network())

    coordinator = TrainingCoordinator(env, cfg.training(), weights, cfg.ilqr(), cfg.rho, buffer=buffer,
                                      start_round=start_round, checkpoint_path=args.out)
    result = coordinator.run_training()
    coordinator.save(args.out)
    curve_path = args.curve or args.out.with_name(args.out.name + ".curve.csv")
    write_csv(curve_frame(result.curve), curve_path)
    if result.curve:
        tail = result.curve[-100:]
        print(f"rounds: {coordinator.round}")
        print(f"success_rate_last_{len(tail)}: {sum(r.success for r in tail) / len(tail):.4f}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    method = Method(args.method)
    weights = None
    if method == Method.DRL:
        if args.checkpoint is None:
            raise ConfigurationError("eval --method drl needs --checkpoint")
        weights, _ = load_checkpoint(args.checkpoint)
    env = env_spec(load_field(args, cfg), cfg)
    result = _evaluate(env, method, cfg, weights)
    if args.out is not None:
        write_csv(trials_frame(result.trials), args.out)
    frame = summary_frame([result.summary])
    if args.summary is not None:
        write_csv(frame, args.summary)
    sys.stdout.write(render_csv(frame))
    return 0


def compare_areas(args: argparse.Namespace, cfg: RunConfig) -> List[Tuple[str, DisturbanceField]]:
    fields = [ingest_currents(path, CurrentCsvSchema(cell_size=cfg.cell_size,
                                                     strength_cap=cfg.effective_strength_cap()))
              for path in (args.field or [])]
    if not fields:
        fields = [load_field(argparse.Namespace(field=None), cfg)]
    base = fields[0]
    crops = [_parse_crop(text) for text in (args.crop or [])]
    if args.random_crops:
        size = args.crop_size
        if size > base.grid_w or size > base.grid_h:
            raise ConfigurationError(f"crop size {size} exceeds the {base.grid_w}x{base.grid_h} field")
        rng = np.random.default_rng([cfg.seed, 7])
        for _ in range(args.random_crops):
            x0 = int(rng.integers(0, base.grid_w - size + 1))
            y0 = int(rng.integers(0, base.grid_h - size + 1))
            crops.append((x0, y0, size, size))
    if crops:
        return [(f"area{i}", base.crop(*crop)) for i, crop in enumerate(crops, start=1)]
    return [(f"area{i}", field) for i, field in enumerate(fields, start=1)]


def cmd_compare(args: argparse.Namespace, cfg: RunConfig) -> int:
    weights, _ = load_checkpoint(args.checkpoint)
    summaries, trials, paired = [], [], []
    for area, field in compare_areas(args, cfg):
        env = env_spec(field, cfg, area)
        drl = _evaluate(env, Method.DRL, cfg, weights)
        ilqr = _evaluate(env, Method.ILQR, cfg)
        summaries += [drl.summary, ilqr.summary]
        trials += drl.trials + ilqr.trials
        paired.append(paired_row(area, drl.trials, ilqr.trials))
    frame = summary_frame(summaries)
    write_csv(frame, args.out_summary)
    if args.out_trials is not None:
        write_csv(trials_frame(trials), args.out_trials)
    if args.out_paired is not None:
        write_csv(paired_frame(paired), args.out_paired)
    sys.stdout.write(render_csv(frame))
    return 0


COMMANDS = {
    "gen-field": cmd_gen_field,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 after --help
        return exc.code if isinstance(exc.code, int) else 0
    try:
        setup_logging("DEBUG" if args.verbose else None)
        cfg = run_config_from_args(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigurationError, ValidationError) as exc:
        print(f"driftplan: error: {exc}", file=sys.stderr)
        return 2
    except (DriftplanError, OSError) as exc:
        print(f"driftplan: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
