"""Command-line entry points: mine, eval, gp, backtest, report.

Commands are batch jobs writing into an output directory whose layout is
stable: a manifest with the config snapshot and data digests, the JSONL
run log, the convergence table and chart, the best expression, and the
per-split fitness reports. Reruns overwrite atomically. Exit codes are 0
on success, 2 for config/usage errors, 3 for data errors, 4 for backend
errors, and 5 for internal failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import __version__, alpha_dsl, data_io, eval_engine, evolution, gp_baseline
from .backtest import BacktestConfig, benchmark_curve, run_backtest
from .data_io import DataError, SplitSpec
from .eval_engine import Panel
from .llm_backend import BackendConfig, BackendError, PromptLibrary, make_backend
from .runlog import RunLog, read_log, write_convergence_csv

plt.rcParams["svg.hashsalt"] = "alphaevo"
plt.rcParams["svg.fonttype"] = "none"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4
EXIT_INTERNAL = 5


class ConfigError(ValueError):
    pass


# --- config file handling -------------------------------------------------


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            obj = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config root must be an object")
    return obj


def _section(cfg: dict, name: str) -> dict:
    section = cfg.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    return section


def _build_dataclass(cls, section: dict, name: str, overrides: dict | None = None):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys in config section '{name}': {sorted(unknown)}")
    merged = dict(section)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{name}': {exc}") from exc


def _evolution_config(cfg: dict, seed: int | None) -> evolution.EvolutionConfig:
    section = dict(_section(cfg, "evolution"))
    operators = section.get("operators")
    if isinstance(operators, str):
        try:
            section["operators"] = evolution.OPERATOR_SETS[operators]
        except KeyError:
            raise ConfigError(
                f"unknown operator set {operators!r}; use one of "
                f"{sorted(evolution.OPERATOR_SETS)} or an explicit list"
            ) from None
    elif isinstance(operators, list):
        section["operators"] = tuple(operators)
    return _build_dataclass(
        evolution.EvolutionConfig, section, "evolution", {"seed": seed}
    )


def _gp_config(cfg: dict, seed: int | None) -> gp_baseline.GpConfig:
    return _build_dataclass(gp_baseline.GpConfig, _section(cfg, "gp"), "gp", {"seed": seed})


def _backend_config(cfg: dict, kind: str | None) -> BackendConfig:
    return _build_dataclass(BackendConfig, _section(cfg, "backend"), "backend", {"kind": kind})


def _backtest_config(cfg: dict) -> BacktestConfig:
    return _build_dataclass(BacktestConfig, _section(cfg, "backtest"), "backtest")


def _split_spec(cfg: dict) -> tuple[SplitSpec | None, int]:
    section = _section(cfg, "split")
    context_days = section.get("context_days", data_io.DEFAULT_SPLIT_CONTEXT)
    ranges = {k: v for k, v in section.items() if k != "context_days"}
    if not ranges:
        return None, context_days
    missing = {"train", "validation", "test"} - set(ranges)
    if missing:
        raise ConfigError(f"split section is missing ranges: {sorted(missing)}")
    extra = set(ranges) - {"train", "validation", "test"}
    if extra:
        raise ConfigError(f"unknown keys in split section: {sorted(extra)}")
    try:
        spec = SplitSpec(
            train=tuple(ranges["train"]),
            validation=tuple(ranges["validation"]),
            test=tuple(ranges["test"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"split section: {exc}") from exc
    return spec, context_days


def _default_split_spec(panel: Panel) -> SplitSpec:
    """Positional 60/20/20 split used when the config gives no dates."""
    dates = panel.dates
    if len(dates) < 15:
        raise DataError("panel too short for a default split; provide split dates")
    i1 = int(len(dates) * 0.6)
    i2 = int(len(dates) * 0.8)
    after_last = dates[-1] + "~"  # past any ISO date string
    return SplitSpec(
        train=(dates[0], dates[i1]),
        validation=(dates[i1], dates[i2]),
        test=(dates[i2], after_last),
    )


def _load_splits(args, cfg: dict) -> tuple[Panel, Panel, Panel, Panel]:
    panel = data_io.load_panel(args.data)
    spec, context_days = _split_spec(cfg)
    if spec is None:
        spec = _default_split_spec(panel)
    train, validation, test = data_io.split(panel, spec, context_days=context_days)
    return panel, train, validation, test


# --- output helpers -------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest(command: str, args, config_snapshot: dict, outputs: list[str]) -> dict:
    return {
        "artifact_version": __version__,
        "command": command,
        "seed": getattr(args, "seed", None),
        "config": config_snapshot,
        "data": {"path": args.data, "sha256": _sha256(args.data)},
        "outputs": sorted(outputs),
    }


def _save_figure(fig, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    os.replace(tmp, path)


def _plot_convergence(series_by_label: dict[str, list[tuple[int, float | None]]], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, series in series_by_label.items():
        xs = [e for e, v in series if v is not None]
        ys = [v for _, v in series if v is not None]
        ax.plot(xs, ys, label=label)
    ax.set_xlabel("evaluations consumed")
    ax.set_ylabel("best validation IC")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, path)


def _plot_equity(curve, benchmark, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(curve.dates, curve.values, label="strategy")
    ax.plot(benchmark.dates, benchmark.values, label="equal-weight benchmark",
            linestyle="--", color="gray")
    step = max(1, len(curve.dates) // 8)
    ax.set_xticks(range(0, len(curve.dates), step))
    ax.set_xticklabels(curve.dates[::step], rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("cumulative return")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, path)


def _fitness_json(report: eval_engine.FitnessReport) -> dict:
    return report.to_dict()


# --- commands --------------------------------------------------------------


def cmd_mine(args) -> int:
    cfg = _load_config(args.config)
    evo_config = _evolution_config(cfg, args.seed)
    backend_config = _backend_config(cfg, args.backend)
    _, train, validation, test = _load_splits(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log_path = out / "run_log.jsonl"
    tmp_log = out / "run_log.jsonl.tmp"
    log = RunLog(str(tmp_log))
    prompts = PromptLibrary(args.templates)
    try:
        backend = make_backend(backend_config, log)
        result = evolution.run(evo_config, train, validation, backend, prompts, log)
    finally:
        log.close()
        os.replace(tmp_log, log_path)

    outputs = ["manifest.json", "run_log.jsonl", "convergence.csv", "convergence.svg",
               "best_expression.txt", "fitness_train.json", "fitness_validation.json",
               "fitness_test.json"]
    write_convergence_csv(result.convergence, str(out / "convergence.csv"))
    _plot_convergence({"evolution": result.convergence}, out / "convergence.svg")
    if result.best is None or result.best.expression is None:
        _write_text(out / "best_expression.txt", "")
        print("no individual was successfully evaluated", file=sys.stderr)
    else:
        best_expr = result.best.expression
        _write_text(out / "best_expression.txt", alpha_dsl.unparse(best_expr) + "\n")
        _write_json(out / "fitness_train.json", _fitness_json(result.best.train))
        _write_json(out / "fitness_validation.json", _fitness_json(result.best.validation))
        _write_json(
            out / "fitness_test.json",
            _fitness_json(eval_engine.fitness(best_expr, test, evo_config.horizon)),
        )
    snapshot = {
        "evolution": evo_config.to_dict(),
        "backend": backend_config.to_dict(),
        "split": _section(cfg, "split"),
    }
    _write_json(out / "manifest.json", _manifest("mine", args, snapshot, outputs))
    print(f"evaluations: {result.evaluations}  generations: {result.generations}")
    if result.best is not None:
        print(f"best expression: {result.best.expression_text}")
        print(f"validation IC: {result.best.validation_ic}")
    return EXIT_OK


def cmd_gp(args) -> int:
    cfg = _load_config(args.config)
    gp_config = _gp_config(cfg, args.seed)
    _, train, validation, test = _load_splits(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log_path = out / "run_log.jsonl"
    tmp_log = out / "run_log.jsonl.tmp"
    log = RunLog(str(tmp_log))
    try:
        result = gp_baseline.run_gp(gp_config, train, validation, log)
    finally:
        log.close()
        os.replace(tmp_log, log_path)

    outputs = ["manifest.json", "run_log.jsonl", "convergence.csv", "convergence.svg",
               "best_expression.txt", "fitness_train.json", "fitness_validation.json",
               "fitness_test.json"]
    write_convergence_csv(result.convergence, str(out / "convergence.csv"))
    _plot_convergence({"gp": result.convergence}, out / "convergence.svg")
    if result.best is None:
        _write_text(out / "best_expression.txt", "")
        print("no expression was successfully evaluated", file=sys.stderr)
    else:
        text = alpha_dsl.unparse(result.best.expression)
        _write_text(out / "best_expression.txt", text + "\n")
        _write_json(out / "fitness_train.json", _fitness_json(result.best.train))
        _write_json(out / "fitness_validation.json", _fitness_json(result.best.validation))
        _write_json(
            out / "fitness_test.json",
            _fitness_json(
                eval_engine.fitness(result.best.expression, test, gp_config.horizon)
            ),
        )
        print(f"best expression: {text}")
        print(f"validation IC: {result.best.validation_ic}")
    snapshot = {"gp": gp_config.to_dict(), "split": _section(cfg, "split")}
    _write_json(out / "manifest.json", _manifest("gp", args, snapshot, outputs))
    print(f"evaluations: {result.evaluations}  generations: {result.generations}")
    return EXIT_OK


def _pick_split(args, cfg: dict) -> Panel:
    panel = data_io.load_panel(args.data)
    which = getattr(args, "split", None)
    if which is None:
        return panel
    spec, context_days = _split_spec(cfg)
    if spec is None:
        spec = _default_split_spec(panel)
    train, validation, test = data_io.split(panel, spec, context_days=context_days)
    return {"train": train, "valid": validation, "test": test}[which]


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    try:
        expr = alpha_dsl.parse(args.expr)
    except alpha_dsl.ExprError as exc:
        print(f"expression error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    panel = _pick_split(args, cfg)
    report = eval_engine.fitness(expr, panel, args.horizon)
    record = report.to_dict()
    record["split"] = args.split or "all"
    print(json.dumps(record, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_backtest(args) -> int:
    cfg = _load_config(args.config)
    if args.expr is None and args.expr_file is None:
        raise ConfigError("provide --expr or --expr-file")
    text = args.expr
    if text is None:
        try:
            text = Path(args.expr_file).read_text(encoding="utf-8").strip()
        except OSError as exc:
            raise ConfigError(f"cannot read expression file: {exc}") from exc
    if not text:
        raise ConfigError("expression is empty")
    try:
        expr = alpha_dsl.parse(text)
    except alpha_dsl.ExprError as exc:
        print(f"expression error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    bt_config = _backtest_config(cfg)
    panel = _pick_split(args, cfg)
    scores = eval_engine.evaluate(expr, panel)
    curve = run_backtest(scores, panel, bt_config)
    benchmark = benchmark_curve(panel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["date,strategy,benchmark,turnover"]
    for i, day in enumerate(curve.dates):
        lines.append(
            f"{day},{curve.values[i]!r},{benchmark.values[i]!r},{curve.turnover[i]!r}"
        )
    _write_text(out / "equity.csv", "\n".join(lines) + "\n")
    _plot_equity(curve, benchmark, out / "equity.svg")
    print(f"strategy terminal return: {curve.terminal_value}")
    print(f"benchmark terminal return: {benchmark.terminal_value}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = args.labels.split(",") if args.labels else None
    if labels is not None and len(labels) != len(args.logs):
        raise ConfigError("--labels must name each log exactly once")
    series_by_label: dict[str, list[tuple[int, float | None]]] = {}
    for i, log_path in enumerate(args.logs):
        try:
            records = read_log(log_path)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from exc
        label = labels[i] if labels else Path(log_path).stem
        while label in series_by_label:
            label += "'"
        series = [
            (r["evaluations"], r["best_validation_ic"])
            for r in records
            if r.get("kind") == "convergence"
        ]
        series_by_label[label] = series
    _plot_convergence(series_by_label, out / "report.svg")
    lines = ["label,evaluations,best_validation_ic"]
    for label, series in series_by_label.items():
        for evaluations, value in series:
            lines.append(f"{label},{evaluations},{'' if value is None else repr(value)}")
    _write_text(out / "report.csv", "\n".join(lines) + "\n")
    print(f"wrote {out / 'report.svg'} with {len(series_by_label)} series")
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alphaevo",
        description="Evolve, evaluate, and backtest formulaic alpha factors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    mine = sub.add_parser("mine", help="run the thought-evolution search")
    mine.add_argument("--config", help="JSON config file")
    mine.add_argument("--data", required=True, help="long-format panel CSV")
    mine.add_argument("--out", required=True, help="output directory")
    mine.add_argument("--seed", type=int, help="override the config seed")
    mine.add_argument("--backend", choices=["remote", "mock"], help="override backend kind")
    mine.add_argument("--templates", help="directory overriding prompt templates")
    mine.set_defaults(func=cmd_mine)

    gp = sub.add_parser("gp", help="run the GP baseline search")
    gp.add_argument("--config", help="JSON config file")
    gp.add_argument("--data", required=True)
    gp.add_argument("--out", required=True)
    gp.add_argument("--seed", type=int)
    gp.set_defaults(func=cmd_gp)

    evaluate = sub.add_parser("eval", help="score one expression on a panel")
    evaluate.add_argument("--expr", required=True, help="expression text")
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--config", help="JSON config (for split dates)")
    evaluate.add_argument("--split", choices=["train", "valid", "test"])
    evaluate.add_argument("--horizon", type=int, default=5)
    evaluate.set_defaults(func=cmd_eval)

    bt = sub.add_parser("backtest", help="run the top-k/drop-m strategy")
    bt.add_argument("--expr", help="expression text")
    bt.add_argument("--expr-file", help="file holding the expression")
    bt.add_argument("--data", required=True)
    bt.add_argument("--out", required=True)
    bt.add_argument("--config", help="JSON config (backtest + split sections)")
    bt.add_argument("--split", choices=["train", "valid", "test"])
    bt.set_defaults(func=cmd_backtest)

    report = sub.add_parser("report", help="overlay convergence curves from run logs")
    report.add_argument("logs", nargs="+", help="run_log.jsonl files")
    report.add_argument("--out", required=True)
    report.add_argument("--labels", help="comma-separated series labels")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
