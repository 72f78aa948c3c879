"""Command-line entry point wiring workloads, predictors, and the simulator.

Commands are driven by a YAML config file (see configs/*.cfg) whose fields
can be overridden by flags.  Every command is reproducible: the config plus
its seed list fully determines all outputs.  Exit codes: 0 success,
2 validation error, 3 calibration failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import metrics as metrics_mod
from .metrics import ComparisonRow, MetricsError, SweepPoint, compare, emit_csv, emit_svg
from .predictor import (
    NoisyPredictorConfig,
    PredictionError,
    REFERENCE_NOISE_SPREAD,
    perception_metrics,
    predict_all,
)
from .scheduler import SchedulePolicy, ScheduleError
from .simulator import (
    CalibrationError,
    CostModel,
    DEFAULT_ANCHORS,
    RunReport,
    SimulationError,
    calibrate,
    default_cost_model,
    load_cost_model,
    run_scheduled,
    run_vanilla,
    save_cost_model,
)
from .workload import (
    PRESETS,
    Request,
    WorkloadError,
    generate_synthetic,
    load_trace,
    realized_lengths,
    save_trace,
)

OUTPUT_DIR_ENV = "SEQSCHED_OUTPUT_DIR"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CALIBRATION = 3
EXIT_IO = 4

# Seed of the reference workload the default cost model is calibrated on.
CALIBRATION_SEED = 0


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class PredictorSetup:
    kind: str = "noisy"
    spread: float = REFERENCE_NOISE_SPREAD
    bias: int = 0
    noise_seed: int = 0
    fixed_value: Optional[int] = None

    def noise(self) -> Optional[NoisyPredictorConfig]:
        if self.kind != "noisy":
            return None
        return NoisyPredictorConfig(bias=self.bias, spread=self.spread, seed=self.noise_seed)


@dataclass(frozen=True)
class RunSpec:
    label: str
    mode: str  # "vanilla" | "scheduled"
    mbs: int = 16
    predictor: Optional[PredictorSetup] = None


@dataclass
class ExperimentConfig:
    workload: str = "alpaca-like"
    n_requests: int = 10_000
    seeds: tuple[int, ...] = (7,)
    output_dir: Path = Path("out")
    cost_model: str | dict = "calibrated-default"
    baseline: str = "vanilla"
    predictor: PredictorSetup = field(default_factory=PredictorSetup)
    policy: SchedulePolicy = field(default_factory=SchedulePolicy)
    runs: Optional[tuple[RunSpec, ...]] = None
    sweep: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.workload not in PRESETS and not Path(self.workload).exists():
            raise ConfigError(
                f"workload {self.workload!r} is neither a preset "
                f"({', '.join(sorted(PRESETS))}) nor an existing trace file"
            )
        if isinstance(self.cost_model, str) and self.cost_model != "calibrated-default":
            if not Path(self.cost_model).exists():
                raise ConfigError(f"cost model file not found: {self.cost_model}")


def _parse_predictor(obj) -> PredictorSetup:
    if obj is None:
        return PredictorSetup()
    if isinstance(obj, str):
        obj = {"kind": obj}
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError(f"predictor must be a kind string or mapping, got {obj!r}")
    kind = obj["kind"]
    fixed_value = obj.get("fixed_value")
    if ":" in kind:
        kind, _, param = kind.partition(":")
        if kind != "fixed":
            raise ConfigError(f"only fixed:<n> takes an inline parameter, got {obj!r}")
        fixed_value = int(param)
    spread = obj.get("spread", "calibrated")
    if spread == "calibrated":
        spread = REFERENCE_NOISE_SPREAD
    return PredictorSetup(
        kind=kind,
        spread=float(spread),
        bias=int(obj.get("bias", 0)),
        noise_seed=int(obj.get("seed", 0)),
        fixed_value=fixed_value,
    )


def _parse_policy(obj, workload_truncation: Optional[int]) -> SchedulePolicy:
    obj = dict(obj or {})
    if "max_cap" not in obj and workload_truncation is not None:
        obj["max_cap"] = workload_truncation
    try:
        return SchedulePolicy(**obj)
    except TypeError as exc:
        raise ConfigError(f"bad policy field: {exc}")


def load_config(path: Optional[str], overrides: argparse.Namespace) -> ExperimentConfig:
    """Build an ExperimentConfig from a YAML file plus CLI overrides."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        loaded = yaml.safe_load(p.read_text(encoding="utf-8"))
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: config must be a mapping")
        raw = loaded

    workload = getattr(overrides, "workload", None) or raw.get("workload", "alpaca-like")
    n_requests = getattr(overrides, "n_requests", None) or raw.get("n_requests", 10_000)
    seeds = getattr(overrides, "seeds", None) or raw.get("seeds", [7])
    out = (
        getattr(overrides, "output_dir", None)
        or os.environ.get(OUTPUT_DIR_ENV)
        or raw.get("output_dir", "out")
    )
    truncation = _workload_truncation(workload)
    policy = _parse_policy(raw.get("policy"), truncation)
    for name in (
        "group_size",
        "base_batch",
        "bin_cell",
        "max_cap",
        "vbs_token_budget",
        "vbs_cutoff",
    ):
        value = getattr(overrides, name, None)
        if value is not None:
            policy = replace(policy, **{name: value})
    for name in ("binning", "fcr", "vbs"):
        value = getattr(overrides, name, None)
        if value is not None:
            policy = replace(policy, **{name: value})

    predictor = _parse_predictor(getattr(overrides, "predictor", None) or raw.get("predictor"))

    runs = None
    if raw.get("runs"):
        specs = []
        for entry in raw["runs"]:
            if "label" not in entry or "mode" not in entry:
                raise ConfigError(f"run entry needs label and mode: {entry!r}")
            if entry["mode"] not in ("vanilla", "scheduled"):
                raise ConfigError(f"unknown run mode: {entry['mode']!r}")
            specs.append(
                RunSpec(
                    label=entry["label"],
                    mode=entry["mode"],
                    mbs=int(entry.get("mbs", policy.base_batch)),
                    predictor=(
                        _parse_predictor(entry["predictor"])
                        if "predictor" in entry
                        else None
                    ),
                )
            )
        runs = tuple(specs)

    config = ExperimentConfig(
        workload=workload,
        n_requests=int(n_requests),
        seeds=tuple(int(s) for s in seeds),
        output_dir=Path(out),
        cost_model=getattr(overrides, "cost_model", None) or raw.get("cost_model", "calibrated-default"),
        baseline=raw.get("baseline", "vanilla"),
        predictor=predictor,
        policy=policy,
        runs=runs,
        sweep=raw.get("sweep", {}),
    )
    config.validate()
    return config


def _workload_truncation(workload: str) -> Optional[int]:
    if workload in PRESETS:
        return PRESETS[workload](1, 0).truncation
    return None


def build_workload(config: ExperimentConfig, seed: int) -> list[Request]:
    if config.workload in PRESETS:
        return generate_synthetic(PRESETS[config.workload](config.n_requests, seed))
    return load_trace(config.workload)


_CALIBRATED_CACHE: dict[tuple, CostModel] = {}


def resolve_cost_model(config: ExperimentConfig) -> CostModel:
    """Materialize the config's cost model, calibrating the default on demand.

    The calibrated default always fits the alpaca-like reference workload so
    that one GPU-equivalent model is shared across experiments.
    """
    if isinstance(config.cost_model, dict):
        return CostModel(**config.cost_model)
    if config.cost_model == "calibrated-default":
        key = ("default", CALIBRATION_SEED)
        if key not in _CALIBRATED_CACHE:
            reference = generate_synthetic(PRESETS["alpaca-like"](10_000, CALIBRATION_SEED))
            _CALIBRATED_CACHE[key] = calibrate(reference, run_seed=CALIBRATION_SEED)
        return _CALIBRATED_CACHE[key]
    return load_cost_model(config.cost_model)


def _execute(
    spec: RunSpec,
    config: ExperimentConfig,
    requests: Sequence[Request],
    cm: CostModel,
    seed: int,
) -> RunReport:
    if spec.mode == "vanilla":
        return run_vanilla(requests, spec.mbs, cm, seed, label=spec.label)
    setup = spec.predictor or config.predictor
    return run_scheduled(
        requests,
        config.policy,
        setup.kind,
        cm,
        seed,
        noise=setup.noise(),
        fixed_value=setup.fixed_value,
        label=spec.label,
    )


def _default_runs(config: ExperimentConfig) -> tuple[RunSpec, ...]:
    return (
        RunSpec(label="vanilla", mode="vanilla", mbs=config.policy.base_batch),
        RunSpec(label="scheduled", mode="scheduled"),
    )


def _summarize(per_label: dict[str, list[RunReport]]) -> dict:
    summary = {}
    for label, reports in per_label.items():
        stats = {}
        for name in ("throughput", "redundancy", "avg_batch_len", "failure_rate"):
            values = [getattr(r, name) for r in reports]
            stats[name] = {
                "mean": statistics.fmean(values),
                "stddev": statistics.stdev(values) if len(values) > 1 else 0.0,
            }
        summary[label] = stats
    return summary


def _mean_rows(per_label: dict[str, list[RunReport]], baseline: str) -> list[ComparisonRow]:
    if baseline not in per_label:
        raise MetricsError(f"baseline {baseline!r} not among runs")
    base_thr = statistics.fmean(r.throughput for r in per_label[baseline])
    rows = []
    for label, reports in per_label.items():
        thr = statistics.fmean(r.throughput for r in reports)
        rows.append(
            ComparisonRow(
                label=label,
                throughput=thr,
                improvement_pct=(thr / base_thr - 1.0) * 100.0,
                avg_len=statistics.fmean(r.avg_batch_len for r in reports),
                redundancy=statistics.fmean(r.redundancy for r in reports),
                failure_rate=statistics.fmean(r.failure_rate for r in reports),
                token_throughput=statistics.fmean(r.token_throughput for r in reports),
            )
        )
    return rows


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    cm = resolve_cost_model(config)
    runs = config.runs or _default_runs(config)
    per_label: dict[str, list[RunReport]] = {spec.label: [] for spec in runs}
    for seed in config.seeds:
        requests = build_workload(config, seed)
        for spec in runs:
            report = _execute(spec, config, requests, cm, seed)
            per_label[spec.label].append(report)
            out = config.output_dir / f"{spec.label}_seed{seed}.json"
            out.write_text(report.to_json() + "\n")
    summary = {"seeds": list(config.seeds), "runs": _summarize(per_label)}
    (config.output_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if config.baseline in per_label:
        emit_csv(_mean_rows(per_label, config.baseline), config.output_dir / "comparison.csv")
    print(f"wrote {len(config.seeds) * len(runs)} reports to {config.output_dir}")
    for label, stats in summary["runs"].items():
        thr = stats["throughput"]
        print(f"  {label}: throughput {thr['mean']:.3f} ± {thr['stddev']:.3f} samples/s")
    return EXIT_OK


# Valid (binning, fcr, vbs) cells; VBS without FCR is excluded because an
# uncapped batch has no bounded token budget for VBS to maintain.
ABLATION_CELLS = (
    ("none", (False, False, False)),
    ("fcr", (False, True, False)),
    ("fcr+vbs", (False, True, True)),
    ("bin", (True, False, False)),
    ("bin+fcr", (True, True, False)),
    ("bin+fcr+vbs", (True, True, True)),
)

ABLATION_NOTE = (
    "cells with VBS but no FCR are excluded: without failure collection a "
    "batch is uncapped and has no token budget to size against"
)


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    cm = resolve_cost_model(config)
    per_label: dict[str, list[RunReport]] = {"vanilla": []}
    for seed in config.seeds:
        requests = build_workload(config, seed)
        per_label["vanilla"].append(
            run_vanilla(requests, config.policy.base_batch, cm, seed, label="vanilla")
        )
        for label, (binning, fcr, vbs) in ABLATION_CELLS:
            policy = replace(config.policy, binning=binning, fcr=fcr, vbs=vbs)
            report = run_scheduled(
                requests,
                policy,
                config.predictor.kind,
                cm,
                seed,
                noise=config.predictor.noise(),
                fixed_value=config.predictor.fixed_value,
                label=label,
            )
            per_label.setdefault(label, []).append(report)
    rows = _mean_rows(per_label, "vanilla")
    emit_csv(rows, config.output_dir / "ablation.csv")
    summary = {
        "seeds": list(config.seeds),
        "note": ABLATION_NOTE,
        "runs": _summarize(per_label),
    }
    (config.output_dir / "ablation.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote ablation table ({len(rows)} rows) to {config.output_dir}/ablation.csv")
    print(f"note: {ABLATION_NOTE}")
    for row in rows:
        print(
            f"  {row.label}: {row.throughput:.3f} samples/s "
            f"({row.improvement_pct:+.1f}%), avg len {row.avg_len:.0f}"
        )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    axis = args.axis
    values = args.values
    if values is None:
        values = config.sweep.get(axis)
    if values is None:
        raise ConfigError(f"no values given for sweep axis {axis!r}")
    values = [int(v) for v in values]
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    config.output_dir.mkdir(parents=True, exist_ok=True)
    cm = resolve_cost_model(config)
    points = []
    for value in values:
        reports = []
        for seed in config.seeds:
            requests = build_workload(config, seed)
            if axis == "batch_size":
                reports.append(run_vanilla(requests, value, cm, seed, label=f"mbs{value}"))
            else:
                policy = replace(config.policy, group_size=max(value, config.policy.base_batch))
                reports.append(
                    run_scheduled(
                        requests,
                        policy,
                        config.predictor.kind,
                        cm,
                        seed,
                        noise=config.predictor.noise(),
                        fixed_value=config.predictor.fixed_value,
                        label=f"group{value}",
                    )
                )
        points.append(
            SweepPoint(
                x=float(value),
                throughput=statistics.fmean(r.throughput for r in reports),
                redundancy=statistics.fmean(r.redundancy for r in reports),
                failure_rate=statistics.fmean(r.failure_rate for r in reports),
            )
        )
    csv_path = config.output_dir / f"sweep_{axis}.csv"
    svg_path = config.output_dir / f"sweep_{axis}.svg"
    emit_csv(points, csv_path)
    emit_svg(points, svg_path, x_label=axis.replace("_", " "))
    print(f"wrote {csv_path} and {svg_path}")
    for p in points:
        print(f"  {axis}={p.x:g}: {p.throughput:.3f} samples/s")
    return EXIT_OK


def cmd_perception_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config, args)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    setup = config.predictor
    reports = []
    for seed in config.seeds:
        requests = build_workload(config, seed)
        predictions = predict_all(
            setup.kind, requests, setup.noise(), fixed_value=setup.fixed_value
        )
        real = realized_lengths(requests, seed)
        reports.append(perception_metrics(predictions, [real[r.id] for r in requests]))
    mean_report = {
        name: statistics.fmean(getattr(r, name) for r in reports)
        for name in ("error_w", "acc50", "acc100", "underestimate_rate")
    }
    out = {
        "predictor": setup.kind,
        "seeds": list(config.seeds),
        "per_seed": [r.to_dict() for r in reports],
        "mean": mean_report,
    }
    path = config.output_dir / "perception.json"
    path.write_text(json.dumps(out, indent=2) + "\n")
    with (config.output_dir / "perception.csv").open("w", encoding="utf-8") as fh:
        fh.write("error_w,acc50,acc100,underestimate_rate\n")
        fh.write(
            f"{mean_report['error_w']:.4g},{mean_report['acc50']:.4g},"
            f"{mean_report['acc100']:.4g},{mean_report['underestimate_rate']:.4g}\n"
        )
    print(
        f"{setup.kind}: error {mean_report['error_w']:.1f}, "
        f"acc50 {mean_report['acc50']:.1%}, acc100 {mean_report['acc100']:.1%}"
    )
    return EXIT_OK


def cmd_gen_workload(args: argparse.Namespace) -> int:
    preset = args.preset
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    requests = generate_synthetic(PRESETS[preset](args.n, args.seed))
    save_trace(requests, args.out)
    print(f"wrote {len(requests)} requests to {args.out}")
    return EXIT_OK


def _parse_anchor(text: str) -> tuple[int, float]:
    try:
        mbs, _, target = text.partition(":")
        return int(mbs), float(target)
    except ValueError:
        raise ConfigError(f"anchor must look like MBS:THROUGHPUT, got {text!r}")


def cmd_calibrate(args: argparse.Namespace) -> int:
    anchors = tuple(_parse_anchor(a) for a in args.anchor) if args.anchor else DEFAULT_ANCHORS
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    requests = generate_synthetic(PRESETS[args.preset](args.n, args.seed))
    cm = calibrate(requests, anchors, run_seed=args.seed)
    save_cost_model(cm, args.out)
    check = run_vanilla(requests, anchors[0][0], cm, args.seed)
    print(f"wrote cost model to {args.out} (time_scale {cm.time_scale:.6g})")
    print(
        f"closed loop: vanilla mbs={anchors[0][0]} -> {check.throughput:.4f} samples/s "
        f"(target {anchors[0][1]})"
    )
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config (configs/*.cfg)")
    p.add_argument("--workload", help="preset name or trace path")
    p.add_argument("--n-requests", dest="n_requests", type=int)
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")])
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--cost-model", dest="cost_model")
    p.add_argument("--predictor", help="oracle_max|oracle_mean|noisy|fixed:<n>|trace")
    p.add_argument("--group-size", dest="group_size", type=int)
    p.add_argument("--base-batch", dest="base_batch", type=int)
    p.add_argument("--bin-cell", dest="bin_cell", type=int)
    p.add_argument("--max-cap", dest="max_cap", type=int)
    p.add_argument("--vbs-token-budget", dest="vbs_token_budget", type=int)
    p.add_argument("--vbs-cutoff", dest="vbs_cutoff", type=int)
    for name in ("binning", "fcr", "vbs"):
        group = p.add_mutually_exclusive_group()
        group.add_argument(f"--{name}", dest=name, action="store_true", default=None)
        group.add_argument(f"--no-{name}", dest=name, action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqsched",
        description="Length-aware sequence scheduling experiments on a simulated decoder",
        epilog="exit codes: 0 ok, 2 validation error, 3 calibration failure, 4 I/O error",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the config's experiments over all seeds")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_ablate = sub.add_parser("ablate", help="toggle binning/FCR/VBS against vanilla")
    _add_config_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_sweep = sub.add_parser("sweep", help="sweep group size or batch size")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--axis", choices=("group_size", "batch_size"), required=True)
    p_sweep.add_argument("--values", type=lambda s: [int(x) for x in s.split(",")])
    p_sweep.set_defaults(func=cmd_sweep)

    p_perc = sub.add_parser("perception-eval", help="score a predictor against realized lengths")
    _add_config_flags(p_perc)
    p_perc.set_defaults(func=cmd_perception_eval)

    p_gen = sub.add_parser("gen-workload", help="write a synthetic workload trace")
    p_gen.add_argument("--preset", default="alpaca-like")
    p_gen.add_argument("--n", type=int, default=10_000)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_workload)

    p_cal = sub.add_parser("calibrate", help="fit the cost model time scale to anchors")
    p_cal.add_argument("--preset", default="alpaca-like")
    p_cal.add_argument("--n", type=int, default=10_000)
    p_cal.add_argument("--seed", type=int, default=CALIBRATION_SEED)
    p_cal.add_argument(
        "--anchor",
        action="append",
        help="MBS:THROUGHPUT pair; repeatable (default 16:1.22)",
    )
    p_cal.add_argument("--out", required=True)
    p_cal.set_defaults(func=cmd_calibrate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        if exc.residuals:
            print(f"residuals: {[f'{r:+.4f}' for r in exc.residuals]}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (
        ConfigError,
        WorkloadError,
        PredictionError,
        ScheduleError,
        SimulationError,
        MetricsError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
