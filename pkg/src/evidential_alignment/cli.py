"""Command-line front end: ``evalign generate|train|eval|bound``.

Exit codes: 0 on success, 1 for invalid input (config, data, checkpoint,
profile), 2 for runtime or numeric failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bounds import GroupRiskProfile, bound_report, group_risks
from .data import CsvSchema, load_csv, save_csv
from .evaluation import evaluate, report
from .experiments import CSV_KEYS, PRESETS, build_splits, preset, run_pipeline
from .model import ShapeError, load_checkpoint, save_checkpoint
from .training import TrainConfig

TOP_KEYS = ("data", "train", "output", "format", "bound")
DATA_KEYS = {
    "synthetic": (
        "train_counts", "n_val", "n_test", "val_p_corr", "test_p_corr",
        "core_separation", "spurious_separation", "noise_sigma", "d",
    ),
    "colored_mnist": ("mnist_dir", "class_digits", "train_counts", "val_p_corr", "test_p_corr"),
    "csv": CSV_KEYS,
}
BOUND_KEYS = ("kl_qp", "delta")


class ValidationError(ValueError):
    """Invalid configuration or input; maps to exit code 1."""


def _config_help() -> str:
    train = ", ".join(f.name for f in fields(TrainConfig))
    lines = [
        "config file (JSON) keys:",
        f"  top level: {', '.join(TOP_KEYS)}",
        "  data.source: synthetic | colored_mnist | csv",
    ]
    lines += [f"  data ({src}): {', '.join(keys)}" for src, keys in DATA_KEYS.items()]
    lines += [
        f"  train: {train}",
        f"  bound: {', '.join(BOUND_KEYS)}",
        f"presets: {', '.join(sorted(PRESETS))}",
        "precedence: preset < config file < EA_SEED < --set / flags",
    ]
    return "\n".join(lines)


# -- config ---------------------------------------------------------------------


def _deep_update(base: dict, new: dict) -> dict:
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict) and k != "train_counts":
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def _parse_set(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ValidationError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def load_config(args) -> dict:
    cfg: dict = {}
    if getattr(args, "preset", None):
        try:
            cfg = preset(args.preset)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ValidationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        _deep_update(cfg, file_cfg)
    cfg.setdefault("data", {})
    cfg.setdefault("train", {})
    if os.environ.get("EA_SEED"):
        try:
            cfg["train"]["seed"] = int(os.environ["EA_SEED"])
        except ValueError as exc:
            raise ValidationError(f"EA_SEED must be an integer, got {os.environ['EA_SEED']!r}") from exc
    for item in getattr(args, "set", None) or []:
        keys, value = _parse_set(item)
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ValidationError(f"--set {item!r}: {k!r} is not a section")
        node[keys[-1]] = value
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
    if getattr(args, "mnist_dir", None):
        cfg["data"]["mnist_dir"] = args.mnist_dir
    elif cfg["data"].get("source") == "colored_mnist" and not cfg["data"].get("mnist_dir"):
        cfg["data"]["mnist_dir"] = os.environ.get("EA_MNIST_DIR")
    if getattr(args, "output", None):
        cfg["output"] = args.output
    if getattr(args, "format", None):
        cfg["format"] = args.format
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    unknown = set(cfg) - set(TOP_KEYS)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    data = cfg["data"]
    source = data.get("source")
    if source not in DATA_KEYS:
        raise ValidationError(f"data.source must be one of {sorted(DATA_KEYS)}, got {source!r}")
    extra = set(data) - set(DATA_KEYS[source]) - {"source"}
    if extra:
        raise ValidationError(f"unknown keys for data source {source!r}: {sorted(extra)}")
    if source == "colored_mnist":
        if not data.get("mnist_dir"):
            raise ValidationError("colored_mnist needs data.mnist_dir (or --mnist-dir / EA_MNIST_DIR)")
        if not Path(data["mnist_dir"]).is_dir():
            raise ValidationError(f"MNIST directory not found: {data['mnist_dir']}")
    if source == "csv":
        for key in ("train", "validation", "calib", "selection", "test"):
            if data.get(key) and not Path(data[key]).is_file():
                raise ValidationError(f"data.{key}: file not found: {data[key]}")
    try:
        cfg["train_config"] = TrainConfig.from_dict(cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"train config: {exc}") from exc
    bound = cfg.get("bound")
    if bound is not None:
        if not isinstance(bound, dict) or set(bound) - set(BOUND_KEYS):
            raise ValidationError(f"bound section accepts only {list(BOUND_KEYS)}")
        delta = float(bound.get("delta", 0.05))
        if not 0.0 < delta < 1.0:
            raise ValidationError(f"bound.delta must lie in (0, 1), got {delta}")
    if cfg.get("format", "table") not in ("table", "json"):
        raise ValidationError(f"format must be table or json, got {cfg['format']!r}")


def _outdir(cfg: dict, default: str) -> Path:
    out = Path(cfg.get("output") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _group_summary(name: str, data) -> str:
    counts = ", ".join(f"({y},{a})={n}" for (y, a), n in sorted(data.group_counts().items()))
    return f"{name}: N={len(data)} {counts}"


# -- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args)
    tc = cfg["train_config"]
    splits = build_splits(cfg["data"], tc.seed)
    calib, selection = splits.calibration_split(tc.calib_fraction, tc.seed)
    out = _outdir(cfg, "data")
    parts = {"train": splits.train, "calib": calib, "selection": selection, "test": splits.test}
    schema = None
    written = {}
    for name, data in parts.items():
        if data is None:
            continue
        schema = save_csv(data, out / f"{name}.csv")
        written[name] = str(out / f"{name}.csv")
        print(_group_summary(name, data))
    _write_json(out / "schema.json", schema.to_dict())
    train_cfg = {k: v for k, v in cfg["train"].items()}
    _write_json(out / "config.json", {"data": {"source": "csv", "schema": schema.to_dict(), **written}, "train": train_cfg})
    print(f"wrote {', '.join(written.values())}, {out / 'schema.json'}, {out / 'config.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    tc = cfg["train_config"]
    splits = build_splits(cfg["data"], tc.seed)
    result = run_pipeline(splits, tc, stage=args.stage)
    out = _outdir(cfg, "runs")
    save_checkpoint(result.theta1, out / "theta1.ckpt")
    traces = {"stage1": result.stage1_trace}
    if result.theta2 is not None:
        save_checkpoint(result.theta2, out / "theta2.ckpt")
        traces["stage2"] = result.stage2.trace
    _write_json(out / "traces.json", traces)

    payload = result.final_metrics.to_dict()
    payload["stage"] = args.stage
    payload["erm"] = result.erm_metrics.to_dict()
    payload["train_config"] = tc.to_dict()
    if result.stage2 is not None:
        payload["stage2"] = {"selected_epoch": result.stage2.selected_epoch, "beta": result.stage2.beta}
    if cfg.get("bound") is not None:
        risks, n_g = group_risks(result.head, splits.train)
        G = len(n_g)
        profile = GroupRiskProfile(
            n_g, risks, [1.0 / G] * G, float(cfg["bound"].get("kl_qp", 0.0)), float(cfg["bound"].get("delta", 0.05))
        )
        payload.update(bound_report(profile))
    _write_json(out / "metrics.json", payload)
    fmt = cfg.get("format", "table")
    if fmt == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        if args.stage == "full":
            print("ERM (stage 1)")
            print(report(result.erm_metrics))
            print()
            print("Evidential alignment (stage 2)")
        print(report(result.final_metrics))
    return 0


def cmd_eval(args) -> int:
    try:
        head = load_checkpoint(args.checkpoint)
    except FileNotFoundError as exc:
        raise ValidationError(f"checkpoint not found: {args.checkpoint}") from exc
    schema_path = Path(args.schema) if args.schema else Path(args.data).with_name("schema.json")
    try:
        schema = CsvSchema.from_dict(json.loads(schema_path.read_text(encoding="utf-8")))
    except FileNotFoundError as exc:
        raise ValidationError(f"schema file not found: {schema_path} (pass --schema)") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{schema_path}: invalid JSON: {exc}") from exc
    if not Path(args.data).is_file():
        raise ValidationError(f"data file not found: {args.data}")
    data = load_csv(args.data, schema)
    if data.d != head.d or data.n_classes != head.K:
        raise ShapeError(
            f"checkpoint expects d={head.d}, K={head.K}; dataset has d={data.d}, K={data.n_classes}"
        )
    print(report(evaluate(head, data), fmt=args.format))
    return 0


def cmd_bound(args) -> int:
    path = Path(args.profile)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ValidationError(f"profile not found: {path}") from exc
    profile = GroupRiskProfile.from_json(text)
    if not 0.0 < profile.delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {profile.delta}")
    rep = bound_report(profile)
    if args.format == "json":
        print(json.dumps(rep, indent=2, sort_keys=True))
    else:
        pb = rep["pac_bayes"]
        for key in ("bound", "reweighted_risk", "alpha", "n_min", "complexity", "group_count", "kl_qp", "delta"):
            print(f"{key:<16} {pb[key]:.10g}" if isinstance(pb[key], float) else f"{key:<16} {pb[key]}")
    return 0


# -- entry point ----------------------------------------------------------------


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. train.beta=1.0 (repeatable)")
    p.add_argument("--seed", type=int, help="overrides train.seed and EA_SEED")
    p.add_argument("--mnist-dir", help="directory with the four MNIST IDX files")
    p.add_argument("--output", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="evalign", description="Two-stage evidential training for group robustness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write train/calib/selection/test CSVs", epilog=_config_help(), formatter_class=fmt)
    _add_config_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run Stage 1, scoring, Stage 2 and selection", epilog=_config_help(), formatter_class=fmt)
    _add_config_args(p)
    p.add_argument("--stage", choices=("full", "erm-only"), default="full")
    p.add_argument("--format", choices=("table", "json"))
    p.set_defaults(func=cmd_train)

    epilog = "schema keys: " + ", ".join(f.name for f in fields(CsvSchema))
    p = sub.add_parser("eval", help="evaluate a checkpoint on a CSV dataset", epilog=epilog)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="CSV file")
    p.add_argument("--schema", help="schema JSON (default: schema.json beside the data file)")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_eval)

    epilog = "profile keys: n_g, empirical_risks, weights, kl_qp, delta (optionally under 'pac_bayes_profile')"
    p = sub.add_parser("bound", help="PAC-Bayes worst-group bound for a risk profile", epilog=epilog)
    p.add_argument("profile", help="profile JSON file")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_bound)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (ArithmeticError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return 2


def _one_line(exc: BaseException) -> str:
    msg = str(exc) or type(exc).__name__
    return " ".join(msg.split())


if __name__ == "__main__":
    sys.exit(main())
