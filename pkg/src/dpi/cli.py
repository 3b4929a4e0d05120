"""Command line: ``probe``, ``run``, ``ablate`` and ``report``.

Runs are described by an INI file::

    [suite]
    profile = mixed
    seed = 0

    [training]
    lr = 0.01

    [method]
    name = dpi
    p = 1
    tau = 0.1
    seed = 42

    [output]
    dir = runs/dpi-mixed

Any key can be overridden with ``--set section.key=value``; the flag wins.
Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import io
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, DPIError, NumericError
from .evalreport import emit_report, merge_scoreboards, read_report_json, write_board
from .models import ModelSpec
from .param_core import Checkpoint, save_checkpoint
from .scheduler import (
    RunConfig,
    ablate_p,
    plan_from_probes,
    prepare_run_dir,
    probe_all,
    run_method,
    write_plan_files,
    write_run_dir,
)
from .tasks import make_benchmark_suite
from .trainer import TrainingConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# section -> key -> converter
_SCHEMA = {
    "suite": {
        "profile": str, "n_tasks": int, "input_dim": int, "seed": int, "noise_std": float,
        "distractor_std": float, "n_train": int, "n_eval": int, "block_width": int,
    },
    "model": {"kind": str, "input_dim": int, "output_dim": int, "hidden_dim": int, "activation": str},
    "training": {f.name: f.type for f in fields(TrainingConfig) if f.name != "seed"},
    "method": {"name": str, "p": float, "tau": float, "K": int, "seed": int},
    "ablate": {"p_values": str},
    "output": {"dir": str},
}
_REQUIRED = {("suite", "profile"), ("method", "name")}
_CONVERT = {"str": str, "int": int, "float": float}


def _converter(tp):
    return _CONVERT.get(tp, tp) if isinstance(tp, str) else tp


@dataclass
class CliConfig:
    """Validated raw values, ``{section: {key: str}}``."""

    values: dict[str, dict[str, str]]

    def get(self, section: str, key: str, default=None):
        raw = self.values.get(section, {}).get(key)
        if raw is None:
            return default
        conv = _converter(_SCHEMA[section][key])
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {conv.__name__}", field=f"{section}.{key}") from None

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section in _SCHEMA:
            if self.values.get(section):
                cp[section] = dict(sorted(self.values[section].items()))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_config(text: str, overrides: Sequence[str] = ()) -> CliConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (K)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}", field="config") from None
    values: dict[str, dict[str, str]] = {s: dict(cp[s]) for s in cp.sections()}
    for item in overrides:
        key, sep, val = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}", field=key.strip() or "--set")
        values.setdefault(section, {})[name] = val.strip()
    for section, items in values.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]", field=section)
        for key in items:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}", field=f"{section}.{key}")
    for section, key in sorted(_REQUIRED):
        if key not in values.get(section, {}):
            raise ConfigError(f"missing required config key {section}.{key}", field=f"{section}.{key}")
    cfg = CliConfig(values)
    for section, items in values.items():
        for key in items:
            cfg.get(section, key)  # type check every value now
    return cfg


def load_config(path, overrides: Sequence[str] = ()) -> CliConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="config") from None
    return parse_config(text, overrides)


def build_suite(cfg: CliConfig):
    profile = cfg.get("suite", "profile")
    model = None
    if cfg.values.get("model"):
        kind = cfg.get("model", "kind")
        if kind is None:
            raise ConfigError("missing required config key model.kind", field="model.kind")
        in_dim = cfg.get("suite", "input_dim") or cfg.get("model", "input_dim") or (160 if profile == "adversarial" else 40)
        model = ModelSpec(
            kind, in_dim, cfg.get("model", "output_dim", 4), cfg.get("model", "hidden_dim", 0), cfg.get("model", "activation", "tanh")
        )
    kwargs = {}
    for key in ("noise_std", "distractor_std", "n_train", "n_eval", "block_width"):
        val = cfg.get("suite", key)
        if val is not None:
            kwargs[key] = val
    if "block_width" in kwargs and profile != "adversarial":
        raise ConfigError("suite.block_width applies to the adversarial profile only", field="suite.block_width")
    return make_benchmark_suite(
        profile,
        n_tasks=cfg.get("suite", "n_tasks", 5),
        input_dim=cfg.get("suite", "input_dim") or (model.input_dim if model else None),
        seed=cfg.get("suite", "seed", 0),
        model=model,
        **kwargs,
    )


def build_run_config(cfg: CliConfig) -> RunConfig:
    suite = build_suite(cfg)
    # calibrated defaults shipped with the suite, then the config file
    base = dict(suite.meta.get("training", {}))
    for key in _SCHEMA["training"]:
        val = cfg.get("training", key)
        if val is not None:
            base[key] = val
    training = TrainingConfig(**base)
    return RunConfig(
        suite,
        training,
        p=cfg.get("method", "p", suite.meta.get("p", 1.0)),
        tau=cfg.get("method", "tau", suite.meta.get("tau", 0.1)),
        method=cfg.get("method", "name"),
        K=cfg.get("method", "K"),
        seed=cfg.get("method", "seed", 0),
    )


def _output_dir(cfg: CliConfig, args) -> Path:
    out = args.out or cfg.get("output", "dir")
    if not out:
        raise ConfigError("missing required config key output.dir (or pass --out)", field="output.dir")
    # the snapshot records where the run actually went
    cfg.values.setdefault("output", {})["dir"] = str(out)
    return Path(out)


def _start_run_dir(cfg: CliConfig, args) -> Path:
    out = prepare_run_dir(_output_dir(cfg, args), overwrite=args.overwrite)
    (out / "config.ini").write_text(cfg.to_ini())
    return out


def cmd_probe(args) -> int:
    cfg = load_config(args.config, args.set)
    run = replace(build_run_config(cfg), method="dpi")
    out = _start_run_dir(cfg, args)
    probes = probe_all(run, workers=args.workers)
    plan = plan_from_probes(run, probes)
    pdir = out / "probes"
    pdir.mkdir()
    spec_hash = run.suite.model.spec_hash()
    for tid, theta in probes.items():
        save_checkpoint(Checkpoint(theta, spec_hash, run.seed, 0), pdir / f"{tid}.ckpt")
    write_plan_files(plan, out)
    print(f"K={plan.K} stages: " + " | ".join(",".join(s) for s in plan.stages))
    print(f"plan written to {out / 'plan.json'}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    run = build_run_config(cfg)
    out = _output_dir(cfg, args)
    prepare_run_dir(out, overwrite=args.overwrite)
    result = run_method(run, workers=args.workers)
    write_run_dir(result, out, overwrite=True)
    (out / "config.ini").write_text(cfg.to_ini())
    row = read_report_json(out / "report.json").rows[0]
    print(f"{row.label}: avg_norm={row.avg_norm:.4f} mean_forgetting={row.mean_forgetting:.4f}")
    print(f"run directory: {out}")
    return EXIT_OK


def _parse_p_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot parse p list {text!r}", field="ablate.p_values") from None
    if not vals:
        raise ConfigError("p list is empty", field="ablate.p_values")
    return vals


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.set)
    run = replace(build_run_config(cfg), method="dpi")
    p_text = args.p or cfg.get("ablate", "p_values") or "0.1 0.5 1 5 10"
    p_values = _parse_p_list(p_text)
    for p in p_values:
        if not 0.0 < p <= 100.0:
            raise ConfigError(f"p={p!r} must lie in (0, 100]", field="p")
    out = _start_run_dir(cfg, args)
    sweep = ablate_p(run, p_values, workers=args.workers)
    board = emit_report([], out, ablation=[r for _, r in sweep])
    for r in board.ablation:
        print(f"p={r.p!r}: avg_norm={r.avg_norm:.4f}")
    print(f"ablation written to {out / 'ablation_p.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    boards = []
    for d in args.run_dirs:
        path = Path(d) / "report.json"
        if not path.is_file():
            raise ConfigError(f"{d} is not a run directory (no report.json)", field="run_dirs")
        try:
            boards.append(read_report_json(path))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path}: unreadable report ({exc})", field="run_dirs") from None
    try:
        board = merge_scoreboards(boards)
    except ValueError as exc:
        raise ConfigError(str(exc), field="suite") from None
    if args.out:
        write_board(board, args.out)
    _print_board(board)
    return EXIT_OK


def _print_board(board) -> None:
    ids = board.task_ids
    rows = board.ordered()
    if rows:
        width = max(len(r.label or r.method) for r in rows)
        print(" " * width + "  " + "  ".join(f"{t:>6}" for t in ids) + "  avg_norm")
        for r in rows:
            cells = "  ".join(f"{r.scores[t]:6.2f}" for t in ids)
            print(f"{(r.label or r.method):<{width}}  {cells}  {r.avg_norm:8.4f}")
    for r in board.ablation:
        print(f"p={r.p!r}: avg_norm={r.avg_norm:.4f}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpi", description="Core-parameter isolation fine-tuning on synthetic suites.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="INI run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config value")
        sp.add_argument("--out", help="run directory (overrides output.dir)")
        sp.add_argument("--overwrite", action="store_true", help="replace a non-empty run directory")
        sp.add_argument("--workers", type=int, default=1, help="threads for the probe phase")

    common(sub.add_parser("probe", help="probe fine-tune, extract regions, write the grouping plan"))
    common(sub.add_parser("run", help="run one method end to end"))
    sp = sub.add_parser("ablate", help="sweep the core percentage p with shared probes")
    common(sp)
    sp.add_argument("--p", help="comma or space separated p values (default 0.1,0.5,1,5,10)")
    sp = sub.add_parser("report", help="merge run directories into one scoreboard")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--out", help="write the merged report here")
    return ap


_COMMANDS = {"probe": cmd_probe, "run": cmd_run, "ablate": cmd_ablate, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        where = f" (coordinate {exc.coordinate})" if exc.coordinate is not None else ""
        print(f"numeric error{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        field = f" [{exc.field}]" if exc.field else ""
        print(f"config error{field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DPIError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
