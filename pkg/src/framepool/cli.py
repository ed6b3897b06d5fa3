"""Command-line surface: gen, stats, rebalance, train, eval, lr-curve.

Every subcommand accepts --config pointing at a JSON file whose keys mirror
the flag names (underscored); explicit flags win over file values.  The
effective configuration is printed as one `config {...}` line before any work
so a run can be reconstructed from its log.  Failures exit non-zero with a
single `error: ...` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .featureio import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .losses import HuberParams
from .metrics import (
    GapConfig,
    gap,
    miss_analysis,
    miss_report_csv,
    miss_report_text,
    read_predictions_csv,
    read_truth_csv,
    write_predictions_csv,
)
from .netmodel import ModelConfig, init_model, model_forward, set_output_prior
from .rebalance import build_hard_subset, build_tail_subset, label_frequency_stats, stats_csv
from .schedule import PRESETS, ScheduleParams
from .schedule import curve_csv as lr_curve_csv
from .trainer import (
    PhasePlan,
    TrainConfig,
    curve_csv,
    dedupe_by_id,
    load_checkpoint,
    make_checkpoint,
    restore_checkpoint,
    save_checkpoint,
    train,
    train_phases,
)


class _Parser(argparse.ArgumentParser):
    """argparse's two-line usage dump replaced by a single parsable line."""

    def error(self, message: str) -> None:
        self.exit(2, f"error: {message}\n")


_GEN_DEFAULTS = {
    "videos": 1000, "vocab": 50, "d_video": 32, "d_audio": 8,
    "t_min": 4, "t_max": 12, "labels_min": 1, "labels_max": 3,
    "imbalance_exponent": 1.5, "noise_scale": 0.05, "seed": 0, "out": None,
}
_STATS_DEFAULTS = {"data": None, "out": None}
_REBALANCE_DEFAULTS = {
    "data": None, "mode": None, "rank_threshold": None, "multiplier": 3, "out": None,
}
_TRAIN_DEFAULTS = {
    "data": None, "val": None, "phase2_data": None, "phase2_epochs": None,
    "pooling": "netvlad", "clusters": 8, "audio_clusters": 0, "hidden": 64,
    "modality": "separate", "batch_size": 32, "epochs": 2.5, "eval_every": 0.25,
    "seed": 0, "optimizer": "adam", "delta": 1.0, "top_n": 20,
    "output_prior": None, "preset": None, "initial_lr": None, "decay": None,
    "decay_per_epoch": None, "staircase": None, "out_curve": None,
    "out_checkpoint": None,
}
_EVAL_DEFAULTS = {
    "predictions": None, "truth": None, "checkpoint": None, "data": None,
    "top_n": 20, "out_miss": None, "out_predictions": None,
}
_LR_CURVE_DEFAULTS = {
    "preset": None, "initial_lr": None, "decay": None, "decay_per_epoch": None,
    "staircase": None, "epochs": 3.0, "step": 0.25, "out": None,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="framepool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file; flags override its keys")
        return p

    p = add("gen", "write a synthetic dataset file")
    p.add_argument("--videos", type=int)
    p.add_argument("--vocab", type=int)
    p.add_argument("--d-video", type=int)
    p.add_argument("--d-audio", type=int)
    p.add_argument("--t-min", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--labels-min", type=int)
    p.add_argument("--labels-max", type=int)
    p.add_argument("--imbalance-exponent", type=float)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("stats", "label frequency table for a dataset")
    p.add_argument("--data")
    p.add_argument("--out")

    p = add("rebalance", "derive a tail or hard-pattern subset")
    p.add_argument("--data")
    p.add_argument("--mode", choices=["tail", "hard"])
    p.add_argument("--rank-threshold", type=int)
    p.add_argument("--multiplier", type=int)
    p.add_argument("--out")

    p = add("train", "train a model, optionally in two phases")
    p.add_argument("--data")
    p.add_argument("--val")
    p.add_argument("--phase2-data")
    p.add_argument("--phase2-epochs", type=float)
    p.add_argument("--pooling", choices=["netvlad", "netfv"])
    p.add_argument("--clusters", type=int)
    p.add_argument("--audio-clusters", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--modality", choices=["separate", "concat"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=float)
    p.add_argument("--eval-every", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--delta", type=float)
    p.add_argument("--top-n", type=int)
    p.add_argument("--output-prior", type=float,
                   help="start every output probability here instead of 0.5")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--initial-lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--decay-per-epoch", type=float)
    p.add_argument("--staircase", action=argparse.BooleanOptionalAction)
    p.add_argument("--out-curve")
    p.add_argument("--out-checkpoint")

    p = add("eval", "GAP plus missed-label report from CSVs or a checkpoint")
    p.add_argument("--predictions")
    p.add_argument("--truth")
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--top-n", type=int)
    p.add_argument("--out-miss")
    p.add_argument("--out-predictions")

    p = add("lr-curve", "emit a learning-rate schedule as CSV")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--initial-lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--decay-per-epoch", type=float)
    p.add_argument("--staircase", action=argparse.BooleanOptionalAction)
    p.add_argument("--epochs", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--out")

    return parser


def _effective(args: argparse.Namespace, defaults: dict) -> dict:
    cfg = dict(defaults)
    if args.config is not None:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        cfg.update(file_cfg)
    for key in defaults:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    return cfg


def _banner(command: str, cfg: dict) -> None:
    print("config", json.dumps({"command": command, **cfg}, sort_keys=True))


def _require(cfg: dict, key: str) -> None:
    if cfg[key] is None:
        raise ValueError(f"--{key.replace('_', '-')} is required")


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as sink:
            sink.write(text)


def _resolve_schedule(cfg: dict) -> ScheduleParams:
    base = PRESETS[cfg["preset"]] if cfg["preset"] else PRESETS["slow"]
    return ScheduleParams(
        initial_lr=base.initial_lr if cfg["initial_lr"] is None else cfg["initial_lr"],
        decay=base.decay if cfg["decay"] is None else cfg["decay"],
        decay_per_epoch=(base.decay_per_epoch if cfg["decay_per_epoch"] is None
                         else cfg["decay_per_epoch"]),
        staircase=base.staircase if cfg["staircase"] is None else cfg["staircase"],
    )


def cmd_gen(cfg: dict) -> int:
    _require(cfg, "out")
    spec = SyntheticSpec(
        num_videos=cfg["videos"], vocab_size=cfg["vocab"], d_video=cfg["d_video"],
        d_audio=cfg["d_audio"], t_min=cfg["t_min"], t_max=cfg["t_max"],
        labels_min=cfg["labels_min"], labels_max=cfg["labels_max"],
        imbalance_exponent=cfg["imbalance_exponent"], noise_scale=cfg["noise_scale"],
        seed=cfg["seed"])
    records = generate_synthetic(spec)
    written = save_dataset(cfg["out"], records, spec.header())
    print(f"wrote {cfg['out']}: {len(records)} videos, {written} bytes")
    return 0


def cmd_stats(cfg: dict) -> int:
    _require(cfg, "data")
    header, records = load_dataset(cfg["data"])
    stats = label_frequency_stats(records, header.vocab_size)
    _write_text(cfg["out"], stats_csv(stats))
    return 0


def cmd_rebalance(cfg: dict) -> int:
    for key in ("data", "mode", "out"):
        _require(cfg, key)
    header, records = load_dataset(cfg["data"])
    if cfg["mode"] == "tail":
        _require(cfg, "rank_threshold")
        subset = build_tail_subset(records, cfg["rank_threshold"], header.vocab_size)
    else:
        subset = build_hard_subset(records, cfg["multiplier"])
    out_header = dataclasses.replace(header, record_count=len(subset))
    save_dataset(cfg["out"], subset, out_header)
    print(f"wrote {cfg['out']}: {len(subset)} videos (from {len(records)})")
    return 0


def cmd_train(cfg: dict) -> int:
    for key in ("data", "val"):
        _require(cfg, key)
    header, records = load_dataset(cfg["data"])
    val_header, val_records = load_dataset(cfg["val"])
    shape = (header.d_video, header.d_audio, header.vocab_size)
    if shape != (val_header.d_video, val_header.d_audio, val_header.vocab_size):
        raise ValueError(f"train/val shape mismatch: {shape} vs "
                         f"{(val_header.d_video, val_header.d_audio, val_header.vocab_size)}")
    model_config = ModelConfig(
        pooling_kind=cfg["pooling"], cluster_size=cfg["clusters"],
        hidden_size=cfg["hidden"], d_video=header.d_video, d_audio=header.d_audio,
        vocab_size=header.vocab_size, modality_mode=cfg["modality"],
        audio_cluster_size=cfg["audio_clusters"])
    model = init_model(model_config, seed=cfg["seed"])
    if cfg["output_prior"] is not None:
        set_output_prior(model, cfg["output_prior"])
    train_config = TrainConfig(
        batch_size=cfg["batch_size"], epoch_budget=cfg["epochs"],
        eval_every=cfg["eval_every"], seed=cfg["seed"],
        schedule=_resolve_schedule(cfg), loss=HuberParams(delta=cfg["delta"]),
        optimizer=cfg["optimizer"], gap_top_n=cfg["top_n"])

    if cfg["phase2_data"] is not None:
        _require(cfg, "phase2_epochs")
        _, phase2_records = load_dataset(cfg["phase2_data"])
        plan = PhasePlan(phases=[(records, cfg["epochs"]),
                                 (phase2_records, cfg["phase2_epochs"])])
        result = train_phases(plan, val_records, model, train_config)
    else:
        result = train(records, val_records, model, train_config)

    if cfg["out_curve"] is not None:
        _write_text(cfg["out_curve"], curve_csv(result.curve))
    if cfg["out_checkpoint"] is not None:
        cp = make_checkpoint(result.model, result.opt_state, result.global_step,
                             result.epoch_fraction, train_config)
        save_checkpoint(cfg["out_checkpoint"], cp)
    final_val = [row for row in result.curve if row[1] == "val"][-1]
    print(f"steps {result.global_step}")
    print(f"final_epoch {result.epoch_fraction:.6f}")
    print(f"final_val_gap {final_val[2]:.7f}")
    return 0


def _model_predictions(cfg: dict) -> tuple[list, dict]:
    model, _, _, _ = restore_checkpoint(load_checkpoint(cfg["checkpoint"]))
    _, records = load_dataset(cfg["data"])
    records = dedupe_by_id(records)
    if records and records[0].frames.shape[1] != model.config.feature_dim:
        raise ValueError(
            f"dataset feature width {records[0].frames.shape[1]} != model "
            f"feature_dim {model.config.feature_dim}")
    predictions = []
    truth = {}
    for start in range(0, len(records), 128):
        chunk = records[start:start + 128]
        probs, _ = model_forward([r.frames for r in chunk], model)
        for record, row in zip(chunk, probs):
            video_id = record.id.decode()
            items = sorted(((label, float(c)) for label, c in enumerate(row)),
                           key=lambda item: (-item[1], item[0]))[:cfg["top_n"]]
            predictions.append((video_id, items))
            truth[video_id] = set(record.labels.tolist())
    return predictions, truth


def cmd_eval(cfg: dict) -> int:
    file_mode = cfg["predictions"] is not None or cfg["truth"] is not None
    model_mode = cfg["checkpoint"] is not None or cfg["data"] is not None
    if file_mode == model_mode:
        raise ValueError("pass either --predictions with --truth, "
                         "or --checkpoint with --data")
    if file_mode:
        for key in ("predictions", "truth"):
            _require(cfg, key)
        with open(cfg["predictions"]) as fh:
            predictions = read_predictions_csv(fh)
        with open(cfg["truth"]) as fh:
            truth = read_truth_csv(fh)
    else:
        for key in ("checkpoint", "data"):
            _require(cfg, key)
        predictions, truth = _model_predictions(cfg)
        if cfg["out_predictions"] is not None:
            _write_text(cfg["out_predictions"], write_predictions_csv(predictions))
    config = GapConfig(n=cfg["top_n"])
    print(f"GAP {gap(predictions, truth, config):.7f}")
    report = miss_analysis(predictions, truth, config)
    print(miss_report_text(report), end="")
    if cfg["out_miss"] is not None:
        _write_text(cfg["out_miss"], miss_report_csv(report))
    return 0


def cmd_lr_curve(cfg: dict) -> int:
    params = _resolve_schedule(cfg)
    _write_text(cfg["out"], lr_curve_csv(params, cfg["epochs"], cfg["step"]))
    return 0


_COMMANDS = {
    "gen": (cmd_gen, _GEN_DEFAULTS),
    "stats": (cmd_stats, _STATS_DEFAULTS),
    "rebalance": (cmd_rebalance, _REBALANCE_DEFAULTS),
    "train": (cmd_train, _TRAIN_DEFAULTS),
    "eval": (cmd_eval, _EVAL_DEFAULTS),
    "lr-curve": (cmd_lr_curve, _LR_CURVE_DEFAULTS),
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler, defaults = _COMMANDS[args.command]
    try:
        cfg = _effective(args, defaults)
        _banner(args.command, cfg)
        return handler(cfg)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
