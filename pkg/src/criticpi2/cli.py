"""Command-line entry point: ``train``, ``benchmark`` and ``ablation`` subcommands.

Exit codes: 0 on success, 1 on a configuration error, 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import envs
from .config import ConfigError, ExperimentConfig, parse_config, to_dict
from .nn import save_params
from .trainer import ResultRow, build_agent, run_experiment

log = logging.getLogger(__name__)

OUT_ENV_VAR = "CRITICPI2_OUT"
DEFAULT_OUT = "runs"

# Deterministic learning-curve columns. Wall-clock columns live in timing.json
# so that identical runs give byte-identical CSV files.
CSV_COLUMNS = (
    "episode",
    "train_return",
    "episode_length",
    "eval_return",
    "dynamics_loss",
    "critic_loss",
    "actor_loss",
)
TIMING_COLUMNS = ("mean_plan_time_s", "wall_time_s")

# Published mean planning cost per call, in seconds, for reference only.
REFERENCE_PLAN_TIME_S = {
    "critic_pi2": 0.0139,
    "vanilla_pi2": 1.09,
    "mpc": 1.22,
    "ddpg": 0.001,
}

ABLATIONS = {
    "full": {},
    "no_greedy": {"no_greedy": True},
    "no_critic": {"no_critic": True},
    "no_actor_training": {"no_actor_training": True},
}


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def format_number(value) -> str:
    """Locale-independent, round-trippable text; missing or non-finite values become empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if not math.isfinite(value):
        return ""
    return repr(value)


def write_results_csv(path: Path, rows: Sequence[ResultRow]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([format_number(getattr(row, c)) for c in CSV_COLUMNS])


def read_results_csv(path: Path) -> list[dict[str, float | None]]:
    with open(path, newline="", encoding="ascii") as fh:
        return [
            {k: (float(v) if v != "" else None) for k, v in rec.items()}
            for rec in csv.DictReader(fh)
        ]


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="ascii")


def final_return(rows: Sequence[ResultRow]) -> float | None:
    """Last evaluation return, or the last training return when no evaluation ran."""
    for row in reversed(rows):
        if row.eval_return is not None:
            return float(row.eval_return)
    return float(rows[-1].train_return) if rows else None


def best_return(rows: Sequence[ResultRow]) -> float | None:
    evals = [r.eval_return for r in rows if r.eval_return is not None]
    if evals:
        return float(max(evals))
    return float(max(r.train_return for r in rows)) if rows else None


def resolve_out(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV_VAR) or DEFAULT_OUT)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def train_run(cfg: ExperimentConfig, out: Path) -> dict[str, Any]:
    """Runs one experiment and writes its CSV, JSON and model files into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", to_dict(cfg))
    result = run_experiment(cfg)
    rows = result.rows
    write_results_csv(out / "results.csv", rows)
    write_json(
        out / "timing.json",
        {c: [_finite_or_none(getattr(r, c)) for r in rows] for c in ("episode", *TIMING_COLUMNS)},
    )
    models = out / "models"
    models.mkdir(exist_ok=True)
    for name, params in result.agent.networks().items():
        save_params(params, models / f"{name}.bin")
    summary = {
        "agent": cfg.agent,
        "seed": cfg.seed,
        "episodes": len(rows),
        "first_return": float(rows[0].train_return) if rows else None,
        "final_return": final_return(rows),
        "best_return": best_return(rows),
        "config": to_dict(cfg),
    }
    write_json(out / "summary.json", summary)
    return summary


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    summary = train_run(cfg, out)
    print(
        f"{cfg.agent} seed {cfg.seed}: {summary['episodes']} episodes, "
        f"final return {summary['final_return']}, best {summary['best_return']} -> {out}"
    )
    return 0


def _time_calls(fn, calls: int, warmup: int = 2) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    times = np.empty(calls)
    for i in range(calls):
        start = time.perf_counter()
        fn()
        times[i] = time.perf_counter() - start
    return float(times.mean()), float(times.std())


def benchmark_configs(cfg: ExperimentConfig) -> dict[str, ExperimentConfig]:
    """One config per compared planner, sharing the seed and every network setting."""
    base = dataclasses.replace(cfg, agent="critic_pi2", ablation=type(cfg.ablation)())
    return {
        "critic_pi2": dataclasses.replace(base, planner=dataclasses.replace(cfg.planner, H=1)),
        "vanilla_pi2": dataclasses.replace(base, agent="vanilla_pi2"),
        "mpc": dataclasses.replace(base, agent="mpc"),
        "ddpg": dataclasses.replace(base, agent="ddpg"),
    }


def run_benchmark(cfg: ExperimentConfig, calls: int = 100) -> dict[str, Any]:
    """Mean and standard deviation of wall-clock time per planning call."""
    if calls < 1:
        raise ValueError("calls must be >= 1")
    spec = cfg.env.build()
    rows = {}
    for name, sub in benchmark_configs(cfg).items():
        agent = build_agent(sub, spec, np.random.SeedSequence(cfg.seed).spawn(1)[0])
        obs_rng = np.random.default_rng(cfg.seed)
        rng = np.random.default_rng(cfg.seed + 1)
        observations = [envs.reset(spec, int(s))[1] for s in obs_rng.integers(0, 2**31, size=8)]
        counter = iter(range(10**9))

        def call():
            agent.act(observations[next(counter) % len(observations)], rng, evaluate=(name == "ddpg"))

        mean, std = _time_calls(call, calls)
        rows[name] = {
            "mean_s": mean,
            "std_s": std,
            "calls": calls,
            "horizon": None if name == "ddpg" else (1 if name == "critic_pi2" else sub.planner.baseline_H),
            "reference_s": REFERENCE_PLAN_TIME_S[name],
        }
    cp = rows["critic_pi2"]["mean_s"]
    return {
        "env": spec.name,
        "K": cfg.planner.K,
        "M": cfg.planner.M,
        "results": rows,
        "ratios": {
            "vanilla_pi2_over_critic_pi2": rows["vanilla_pi2"]["mean_s"] / cp,
            "mpc_over_critic_pi2": rows["mpc"]["mean_s"] / cp,
        },
    }


def format_benchmark(report: dict[str, Any]) -> str:
    lines = [
        f"planning cost per call on {report['env']} (K={report['K']}, M={report['M']})",
        f"{'method':<12} {'H':>4} {'mean (s)':>12} {'std (s)':>12} {'reference (s)':>14}",
    ]
    for name, r in report["results"].items():
        h = "-" if r["horizon"] is None else str(r["horizon"])
        lines.append(f"{name:<12} {h:>4} {r['mean_s']:>12.6f} {r['std_s']:>12.6f} {r['reference_s']:>14.4f}")
    ratios = report["ratios"]
    lines.append(
        f"speedup of critic_pi2: {ratios['vanilla_pi2_over_critic_pi2']:.1f}x vs vanilla_pi2, "
        f"{ratios['mpc_over_critic_pi2']:.1f}x vs mpc"
    )
    return "\n".join(lines)


def cmd_benchmark(cfg: ExperimentConfig, out: Path, calls: int = 100) -> int:
    report = run_benchmark(cfg, calls)
    text = format_benchmark(report)
    out.mkdir(parents=True, exist_ok=True)
    (out / "benchmark.txt").write_text(text + "\n", encoding="ascii")
    write_json(out / "benchmark.json", report)
    print(text)
    return 0


def ablation_config(cfg: ExperimentConfig, variant: str, seed: int) -> ExperimentConfig:
    return dataclasses.replace(cfg, seed=seed, ablation=type(cfg.ablation)(**ABLATIONS[variant]))


def effective_settings(cfg: ExperimentConfig) -> dict[str, Any]:
    """The settings an ablation switch is allowed to touch."""
    settings = dataclasses.asdict(cfg.effective_planner())
    settings["actor_training"] = not cfg.ablation.no_actor_training
    return settings


def config_diff(a: ExperimentConfig, b: ExperimentConfig) -> dict[str, list]:
    sa, sb = effective_settings(a), effective_settings(b)
    return {k: [sa[k], sb[k]] for k in sa if sa[k] != sb[k]}


def run_ablation(cfg: ExperimentConfig, out: Path, seeds: Sequence[int]) -> dict[str, Any]:
    if cfg.agent != "critic_pi2":
        raise ConfigError("ablation requires agent = critic_pi2")
    if cfg.ablation.any:
        raise ConfigError("ablation switches must be off in the base config")
    variants = {}
    for variant in ABLATIONS:
        finals, firsts = [], []
        for seed in seeds:
            summary = train_run(ablation_config(cfg, variant, seed), out / variant / f"seed_{seed}")
            finals.append(summary["final_return"])
            firsts.append(summary["first_return"])
        variants[variant] = {
            "seeds": list(seeds),
            "final_returns": finals,
            "first_returns": firsts,
            "mean_final_return": float(np.mean(finals)) if finals else None,
            "mean_first_return": float(np.mean(firsts)) if firsts else None,
            "config_diff_vs_full": config_diff(ablation_config(cfg, "full", 0), ablation_config(cfg, variant, 0)),
        }
    ranking = sorted(variants, key=lambda v: -(variants[v]["mean_final_return"] or -math.inf))
    comparison = {"env": cfg.env.name, "variants": variants, "ranking": ranking}
    write_json(out / "comparison.json", comparison)
    return comparison


def cmd_ablation(cfg: ExperimentConfig, out: Path, seeds: Sequence[int]) -> int:
    comparison = run_ablation(cfg, out, seeds)
    for rank, name in enumerate(comparison["ranking"], 1):
        print(f"{rank}. {name:<18} mean final return {comparison['variants'][name]['mean_final_return']}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="criticpi2", description="Critic PI2 model-based RL experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (empty file = defaults)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. planner.K=50 (repeatable)")
        p.add_argument("--seed", type=int, help="experiment seed")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR} or ./{DEFAULT_OUT})")
        p.add_argument("-v", "--verbose", action="store_true", help="log every episode")

    common(sub.add_parser("train", help="run one experiment"))
    bench = sub.add_parser("benchmark", help="planning latency per call")
    common(bench)
    bench.add_argument("--calls", type=int, default=100, help="timed calls per method (default 100)")
    abl = sub.add_parser("ablation", help="full vs ablated Critic PI2 variants")
    common(abl)
    abl.add_argument("--seeds", help="comma-separated seed list (default: the config seed)")
    return parser


def _parse_seeds(text: str | None, default: int) -> list[int]:
    if not text:
        return [default]
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --seeds value {text!r}") from exc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = parse_config(args.config, overrides)
        out = resolve_out(args.out)
        if args.command == "ablation":
            seeds = _parse_seeds(args.seeds, cfg.seed)
            if cfg.agent != "critic_pi2" or cfg.ablation.any:
                raise ConfigError("ablation requires agent = critic_pi2 with all ablation switches off")
        if args.command == "benchmark" and args.calls < 1:
            raise ConfigError("--calls must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "benchmark":
            return cmd_benchmark(cfg, out, args.calls)
        return cmd_ablation(cfg, out, seeds)
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
