"""
Command-line surface tying simulation, training, active learning and evaluation together
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

from config.experiment_config import ExperimentConfig
from config.flowcount_config import RuntimeConfig
from src.crowd_sim import simulate
from src.encoding import FieldEncoder
from src.errors import ConfigError, FlowCountError
from src.grid_flow import ReconstructionMode
from src.losses import LossBreakdown
from src.regressor import load_checkpoint, save_checkpoint
from src.training import (
    VARIANTS,
    AblationSettings,
    ModelDensityPredictor,
    ModelFlowPredictor,
    OracleFlowPredictor,
    evaluate,
    optical_samples,
    pretrain_fo,
    run_ablation,
    run_active_learning,
    split_sequence,
    summarize,
    train_density_regressor,
    train_three_frame,
)

from .artifacts import CURVE_COLUMNS, output_lock, run_manifest, write_manifest, write_table
from .dataset import Dataset, export_dataset, load_dataset
from .plots import export_plots


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

LOSS_COLUMNS = list(LossBreakdown.__dataclass_fields__)

# flag -> dotted config key
OVERRIDES = {
    "seed": "seed",
    "v": "train.keyframe_interval",
    "alpha": "weights.alpha",
    "beta": "weights.beta",
    "gamma": "weights.gamma",
    "delta": "weights.delta",
    "patch_n": "patches.n",
    "al_iters": "active.iterations",
    "selector": "active.selector",
    "steps": "train.max_steps",
    "frames": "sim.n_frames",
    "agents": "sim.n_agents",
    "motion": "sim.motion_model",
    "rows": "sim.rows",
    "cols": "sim.cols",
}

# per-command remapping; train-active retrains for steps_per_round in every round
COMMAND_OVERRIDES = {
    "train-active": {"steps": "active.steps_per_round"},
}


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="root seed")
    parser.add_argument("--out", help="output directory")


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", help="dataset directory (overrides paths.dataset)")
    parser.add_argument("--v", type=int, help="keyframe interval")
    parser.add_argument("--steps", type=int, help="optimizer steps")
    for name in ("alpha", "beta", "gamma", "delta"):
        parser.add_argument(f"--{name}", type=float, help=f"loss weight {name}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowcount", description="People-flow crowd counting experiments")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("simulate", help="simulate a crowd and export a dataset directory")
    _common_flags(p)
    p.add_argument("--v", type=int, help="keep annotations every V frames")
    p.add_argument("--frames", type=int)
    p.add_argument("--agents", type=int)
    p.add_argument("--motion", choices=["lanes", "swirl", "random-walk"])
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)

    p = sub.add_parser("render-density", help="render density targets of an annotated dataset")
    _common_flags(p)
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--counts", action="store_true", help="integer per-cell counts instead of Gaussian maps")

    p = sub.add_parser("pretrain-fo", help="pre-train the density-pair to optical-flow regressor")
    _common_flags(p)
    _training_flags(p)

    p = sub.add_parser("train", help="three-frame flow training (or a density baseline)")
    _common_flags(p)
    _training_flags(p)
    p.add_argument("--fo", help="pre-trained F_o checkpoint enabling the optical term")
    p.add_argument("--density", choices=["baseline", "weak", "image-pair"], help="train a density regressor instead")

    p = sub.add_parser("train-active", help="patch annotations with active selection")
    _common_flags(p)
    _training_flags(p)
    p.add_argument("--patch-n", type=int)
    p.add_argument("--al-iters", type=int)
    p.add_argument("--selector", choices=["active", "random"])
    p.add_argument("--variant", choices=["base", "spatial", "all"], default="all")

    p = sub.add_parser("eval", help="MAE / RMSE of a checkpoint (or of the ground-truth flows)")
    _common_flags(p)
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--checkpoint", help="flow or density regressor checkpoint")
    p.add_argument("--oracle", action="store_true", help="evaluate the dataset's ground-truth flows")
    p.add_argument("--mode", choices=[m.value for m in ReconstructionMode], default="averaged")

    p = sub.add_parser("ablate", help="compare training variants over seeds")
    _common_flags(p)
    p.add_argument("--variants", help=f"comma-separated subset of: {', '.join(sorted(VARIANTS))}")
    p.add_argument("--seeds", type=int, help="number of seeds starting at --seed")
    p.add_argument("--v", type=int)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("export-plots", help="raster plots and tidy tables from curve CSVs")
    p.add_argument("csv", nargs="+", help="curve CSVs written by train-active")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    flags = {**OVERRIDES, **COMMAND_OVERRIDES.get(getattr(args, "command", None), {})}
    overrides = {key: getattr(args, flag) for flag, key in flags.items() if getattr(args, flag, None) is not None}
    if getattr(args, "dataset", None):
        overrides["paths.dataset"] = str(Path(args.dataset))
    return config.with_overrides(overrides) if overrides else config


def _require_out(args: argparse.Namespace) -> Path:
    if not args.out:
        raise ConfigError(f"'{args.command}' needs --out")
    return Path(args.out)


def _dataset(config: ExperimentConfig) -> Dataset:
    if not config.paths.dataset:
        raise ConfigError("no dataset: pass --dataset or set paths.dataset")
    return load_dataset(config.paths.dataset)


def cmd_simulate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = _require_out(args)
    sim = simulate(config.sim_config())
    export_dataset(sim, out, config.train.keyframe_interval, run_manifest("simulate", config))
    print(f"Simulated {sim.n_frames} frames into {out}")
    return EXIT_OK


def cmd_render_density(args: argparse.Namespace, config: ExperimentConfig) -> int:
    dataset = _dataset(config)
    sequence = dataset.training_sequence(config.kernel_spec(), smooth=not args.counts)
    with output_lock(_require_out(args)) as out:
        for t, density in sorted(sequence.targets.items()):
            (out / f"density_{t:05d}.flc").write_bytes(FieldEncoder.encode_density(density))
            FieldEncoder.write_csv(FieldEncoder.density_table(density), out / f"density_{t:05d}.csv")
        write_manifest(out, run_manifest("render-density", config, {"frames": sorted(sequence.targets)}))
    print(f"Rendered {len(sequence.targets)} density maps")
    return EXIT_OK


def cmd_pretrain_fo(args: argparse.Namespace, config: ExperimentConfig) -> int:
    sequence = _dataset(config).training_sequence(config.kernel_spec())
    result = pretrain_fo(optical_samples(sequence), config.train.fo_steps if args.steps is None else args.steps,
                         config.train.learning_rate, config.network_config(), config.seed)
    with output_lock(_require_out(args)) as out:
        save_checkpoint(result.params, out / "fo.ckpt", {"seed": config.seed})
        write_table([row.to_dict() for row in result.history], LOSS_COLUMNS, out / "losses.csv")
        write_manifest(out, run_manifest("pretrain-fo", config, {"final_loss": result.final_loss}))
    print(f"F_o final loss {result.final_loss:.6f}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    sequence = _dataset(config).training_sequence(config.kernel_spec())
    train_config = config.train_config()
    if args.density:
        result = train_density_regressor(sequence, train_config, args.density, config.network_config())
    else:
        fo_path = args.fo or config.paths.fo_checkpoint
        fo_params = load_checkpoint(fo_path) if fo_path else None
        result = train_three_frame(sequence, train_config, config.network_config(), fo_params)
    with output_lock(_require_out(args)) as out:
        save_checkpoint(result.params, out / "model.ckpt", {"seed": config.seed})
        write_table([row.to_dict() for row in result.history], LOSS_COLUMNS, out / "losses.csv")
        write_manifest(out, run_manifest("train", config, {
            "final_loss": result.final_loss,
            "keyframes_used": sorted(set(result.keyframes_used)),
        }))
    print(f"Final training loss {result.final_loss:.6f}")
    return EXIT_OK


def cmd_train_active(args: argparse.Namespace, config: ExperimentConfig) -> int:
    sequence = _dataset(config).training_sequence(config.kernel_spec())
    train, test = split_sequence(sequence, config.ablation.train_fraction)
    outcome = run_active_learning(
        train, test, config.train_config(), config.patch_grid(), config.active_config(),
        args.variant, config.network_config(), RuntimeConfig.from_env(),
    )
    with output_lock(_require_out(args)) as out:
        save_checkpoint(outcome.params, out / "model.ckpt", {"seed": config.seed})
        write_table([r.to_dict() for r in outcome.records], CURVE_COLUMNS, out / "curve.csv")
        write_manifest(out, run_manifest("train-active", config, {
            "variant": args.variant,
            "iterations": [r.to_dict() for r in outcome.records],
        }))
    final = outcome.records[-1]
    print(f"Annotation ratio {final.annotation_ratio:.4f}: MAE {final.mae:.3f} RMSE {final.rmse:.3f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: ExperimentConfig) -> int:
    dataset = _dataset(config)
    sequence = dataset.training_sequence(config.kernel_spec())
    mode = ReconstructionMode(args.mode)
    if args.oracle:
        if not dataset.flows:
            raise ConfigError("the dataset carries no ground-truth flows")
        predictor = OracleFlowPredictor(dataset.flows, mode)
    elif args.checkpoint or config.paths.checkpoint:
        params = load_checkpoint(args.checkpoint or config.paths.checkpoint)
        if params.layout.kind == "density":
            predictor = ModelDensityPredictor(params, sequence.frames)
        else:
            predictor = ModelFlowPredictor(params, sequence.frames, mode)
    else:
        raise ConfigError("eval needs --checkpoint or --oracle")
    result = evaluate(predictor, sequence.counts)
    print(f"MAE {result.mae:.3f} RMSE {result.rmse:.3f}")
    if args.out:
        with output_lock(args.out) as out:
            frames = sorted(sequence.counts)
            rows = [{"frame": t, "true": z, "predicted": z_hat}
                    for t, z, z_hat in zip(frames, result.true_counts, result.predicted_counts)]
            write_table(rows, ["frame", "true", "predicted"], out / "counts.csv")
            write_manifest(out, run_manifest("eval", config, {"mae": result.mae, "rmse": result.rmse,
                                                              "oracle": bool(args.oracle), "mode": mode.value}))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, config: ExperimentConfig) -> int:
    names = args.variants.split(",") if args.variants else list(config.ablation.variants)
    n_seeds = args.seeds if args.seeds is not None else config.ablation.seeds
    settings = AblationSettings(
        sim=config.sim_config(), kernel=config.kernel_spec(), train=config.train_config(),
        patches=config.patch_grid(), active=config.active_config(), network=config.network_config(),
        runtime=RuntimeConfig.from_env(), train_fraction=config.ablation.train_fraction,
        fo_steps=config.train.fo_steps,
    )
    results = run_ablation([n.strip() for n in names], list(range(config.seed, config.seed + n_seeds)), settings)
    summary = summarize(results)
    with output_lock(_require_out(args)) as out:
        write_table([r.to_dict() for r in results], ["variant", "seed", "mae", "rmse"], out / "ablation.csv")
        write_manifest(out, run_manifest("ablate", config, {"summary": summary}))
    for name, row in summary.items():
        print(f"{name:16s} MAE {row['mae']:.3f} RMSE {row['rmse']:.3f} ({int(row['seeds'])} seeds)")
    return EXIT_OK


def cmd_export_plots(args: argparse.Namespace, config: ExperimentConfig) -> int:
    written = export_plots(args.csv, args.out)
    print(f"Wrote {len(written)} files to {args.out}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, ExperimentConfig], int]] = {
    "simulate": cmd_simulate,
    "render-density": cmd_render_density,
    "pretrain-fo": cmd_pretrain_fo,
    "train": cmd_train,
    "train-active": cmd_train_active,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "export-plots": cmd_export_plots,
}


def cmd_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = load_config(args) if args.command != "export-plots" else ExperimentConfig()
        return COMMANDS[args.command](args, config)
    except (FlowCountError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME
    except (ValueError, ArithmeticError) as e:
        logger.error(f"{args.command} failed ({type(e).__name__}): {e}")
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cmd_dispatch())
