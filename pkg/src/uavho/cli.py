"""Command-line entry point: ``uavho train|eval|explain|compare|gen-sample-log``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import dqn, explain, ingest, report
from .config import EXPLAIN_METHODS, RunConfig, load_config
from .env import (FEATURE_NAMES, ChmPolicy, EpisodeMetrics, Scenario, run_episode,
                  stay_policy)
from .errors import ConfigError, InvalidArgument, ParseError, TrainingDivergence, UavhoError

log = logging.getLogger("uavho")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE = 0, 1, 2, 3, 4

CHECKPOINT = "checkpoint.json"
SUMMARY = "run_summary.json"


def run_dir(cfg: RunConfig, out: Optional[str]) -> Path:
    if out:
        d = Path(out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        d = Path(cfg.output_dir) / f"{stamp}-{cfg.seed}"
        k = 1
        while d.exists():
            d = Path(cfg.output_dir) / f"{stamp}-{cfg.seed}.{k}"
            k += 1
    d.mkdir(parents=True, exist_ok=True)
    return d


def csv_header(cfg: RunConfig) -> str:
    return f"uavho seed={cfg.seed} config_sha256={cfg.digest()}"


def write_summary(path: Path, cfg: RunConfig, command: str, **payload) -> None:
    doc = {"command": command, "seed": cfg.seed, "config_sha256": cfg.digest(),
           "config": cfg.echo(), **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config, getattr(args, "seed", None))
    if getattr(args, "episodes", None) is not None and args.command == "train":
        cfg.train = dataclasses.replace(cfg.train, episodes=args.episodes)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = run_dir(cfg, args.out)
    t0 = time.time()
    res = dqn.train(cfg.scenario, cfg.train)
    ckpt = dqn.checkpoint_dict(res.model, res.normalizer, cfg.train)
    ckpt["run_config"] = cfg.echo()
    with open(out / CHECKPOINT, "w", encoding="utf-8") as fh:
        json.dump(ckpt, fh, sort_keys=True)
        fh.write("\n")
    with open(out / "training_log.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {csv_header(cfg)}\n")
        dqn.write_training_log(res.log, fh)
    tail = res.log[-20:]
    write_summary(out / SUMMARY, cfg, "train",
                  episodes=cfg.train.episodes, gradient_steps=res.gradient_steps,
                  final_mean_return=float(np.mean([e.episode_return for e in tail])) if tail else None,
                  elapsed_s=round(time.time() - t0, 3))
    print(out / CHECKPOINT)
    return EXIT_OK


def load_policy_model(path, scenario: Scenario):
    model, normalizer, _ = dqn.load_checkpoint(path)
    if model.n_outputs != scenario.num_candidates:
        raise InvalidArgument(
            f"{path}: checkpoint has {model.n_outputs} actions, scenario needs {scenario.num_candidates}")
    return model, normalizer


def make_policy(kind: str, scenario: Scenario, checkpoint=None):
    if kind == "stay":
        return stay_policy
    if kind == "chm":
        return ChmPolicy(scenario.chm.hysteresis_db, scenario.chm.time_to_trigger_steps)
    if kind == "dqn":
        if checkpoint is None:
            raise ConfigError("--checkpoint: required for the dqn policy")
        return dqn.greedy_policy(*load_policy_model(checkpoint, scenario))
    raise InvalidArgument(f"unknown policy {kind!r}")


def evaluate(policy, scenario: Scenario, seed: int, episodes: int) -> list[EpisodeMetrics]:
    return [run_episode(policy, scenario, dqn.derive_seed(seed, dqn.EVAL_STREAM, i)).metrics
            for i in range(episodes)]


def median_metrics(ms: list[EpisodeMetrics]) -> dict:
    rows = [m.as_row() for m in ms]
    return {k: float(np.median([r[k] for r in rows])) for k in rows[0]}


EVAL_COLUMNS = ("policy", "episode", "handovers", "ping_pongs", "ping_pong_pct",
                "mean_buffer_bits", "dropped_bits", "mean_reward")


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    episodes = args.episodes or cfg.eval.episodes
    kinds = ["dqn", "chm", "stay"] if args.policy == "all" else [args.policy]
    if args.policy == "all" and not args.checkpoint:
        kinds = ["chm", "stay"]
    policies = {kind: make_policy(kind, cfg.scenario, args.checkpoint) for kind in kinds}
    out = run_dir(cfg, args.out)
    results = {kind: evaluate(policy, cfg.scenario, cfg.seed, episodes)
               for kind, policy in policies.items()}
    medians = {k: median_metrics(v) for k, v in results.items()}
    with open(out / "eval.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {csv_header(cfg)}\n")
        fh.write(",".join(EVAL_COLUMNS) + "\n")
        for kind, ms in results.items():
            for i, m in enumerate(ms):
                r = m.as_row()
                fh.write(",".join([kind, str(i)] + [repr(float(r[c])) if isinstance(r[c], float)
                                                    else str(r[c]) for c in EVAL_COLUMNS[2:]]) + "\n")
            med = medians[kind]
            fh.write(",".join([kind, "median"] + [repr(med[c]) for c in EVAL_COLUMNS[2:]]) + "\n")
    write_summary(out / SUMMARY, cfg, "eval", episodes=episodes, medians=medians,
                  checkpoint=str(args.checkpoint) if args.checkpoint else None)
    print(f"{'policy':8s} {'handovers':>10s} {'ping-pong %':>12s} {'dropped bits':>14s}")
    for kind, med in medians.items():
        print(f"{kind:8s} {med['handovers']:10.1f} {med['ping_pong_pct']:12.1f} "
              f"{med['dropped_bits']:14.0f}")
    return EXIT_OK


def simulated_background(model, normalizer, scenario: Scenario, seed: int, size: int):
    """``size`` states drawn uniformly without replacement from one seeded
    greedy-policy episode."""
    policy = dqn.greedy_policy(model, normalizer)
    trace = run_episode(policy, scenario, dqn.derive_seed(seed, dqn.BACKGROUND_STREAM, 0)).trace
    rng = np.random.default_rng(dqn.derive_seed(seed, dqn.BACKGROUND_STREAM, 1))
    idx = np.sort(rng.choice(len(trace), size=min(size, len(trace)), replace=False))
    states = np.array([normalizer.normalize(trace[i].state) for i in idx])
    return explain.BackgroundSet(states, "simulated")


def cmd_explain(args) -> int:
    cfg = _load_cfg(args)
    method = args.method or cfg.explain.method
    n_perm = args.n or cfg.explain.n_permutations
    bsize = args.background or cfg.explain.background_size
    model, normalizer = load_policy_model(args.checkpoint, cfg.scenario)
    out = run_dir(cfg, args.out)
    t0 = time.time()
    background = simulated_background(model, normalizer, cfg.scenario, cfg.seed, bsize)

    contexts = []
    extra = {}
    if args.source == "sim":
        policy = dqn.greedy_policy(model, normalizer)
        trace = run_episode(policy, cfg.scenario,
                            dqn.derive_seed(cfg.seed, dqn.EXPLAIN_STREAM, 0)).trace
        states = [r.state for r in trace]
        for r in trace:
            contexts.append({"handover": r.handover, "serving": r.state.serving_bs_id,
                             "target": r.state.candidate_bs_ids[r.action], "uav": 0, "t": r.t})
    else:
        with open(args.source, encoding="utf-8", newline="") as fh:
            rows = ingest.parse_flight_log(fh)
        replay = ingest.replay_to_states(rows, cfg.scenario.traffic, cfg.scenario.grid, cfg.seed)
        for s in replay.states:
            s.check()
        states = replay.states
        extra = {"log_rows": len(rows), "replayed_states": len(states),
                 "skipped_rows": replay.skipped_rows, "replay_warnings": replay.warnings}
        if args.background_source == "log":
            z = np.array([normalizer.normalize(s) for s in states])
            rng = np.random.default_rng(dqn.derive_seed(cfg.seed, dqn.BACKGROUND_STREAM, 2))
            idx = np.sort(rng.choice(len(z), size=min(bsize, len(z)), replace=False))
            background = explain.BackgroundSet(z[idx], "ingested")
    rng = np.random.default_rng(dqn.derive_seed(cfg.seed, dqn.EXPLAIN_STREAM, 1))
    attrs = explain.explain_trace(model, states, background, method, normalizer, n_perm, rng)
    if args.source != "sim":
        for k, a in enumerate(attrs):
            s = states[k]
            contexts.append({"handover": a.action != s.serving_slot, "serving": s.serving_bs_id,
                             "target": s.candidate_bs_ids[a.action], "uav": replay.uav_ids[k],
                             "t": k})

    header = csv_header(cfg)
    with open(out / "attributions.csv", "w", encoding="utf-8") as fh:
        report.write_attributions_csv(attrs, fh, header=header)
    with open(out / "beeswarm.csv", "w", encoding="utf-8") as fh:
        report.write_beeswarm_csv(attrs, fh, header=header)
    with open(out / "background.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# {header} provenance={background.provenance}\n")
        fh.write(",".join(FEATURE_NAMES) + "\n")
        for z in background.states:
            fh.write(",".join(repr(float(v)) for v in normalizer.denormalize(z)) + "\n")
    summary = {"source": args.source, "method": method, "background_size": len(background),
               "background_provenance": background.provenance, "instances": len(attrs), **extra}
    if attrs:
        imp = report.global_importance(attrs)
        with open(out / "importance.csv", "w", encoding="utf-8") as fh:
            report.write_importance_csv(imp, fh, header=header)
        flagged = [k for k, c in enumerate(contexts) if c["handover"]][:cfg.explain.max_waterfalls]
        if not flagged:
            flagged = [0]
        for k in flagged:
            with open(out / f"waterfall_{k}.csv", "w", encoding="utf-8") as fh:
                report.write_waterfall_csv(report.waterfall(attrs[k]), fh, header=header)
        with open(out / "explanations.txt", "w", encoding="utf-8") as fh:
            for a, c in zip(attrs, contexts):
                fh.write(report.render_explanation(a, c, cfg.explain.top_k).text + "\n")
        summary["importance_ranking"] = imp.top(len(FEATURE_NAMES))
        summary["importance_alignment"] = {
            "buffer_queue_size_rank": imp.rank_of("buffer_queue_size"),
            "position_rank": imp.rank_of("position"),
            "both_in_top4": imp.rank_of("buffer_queue_size") <= 4 and imp.rank_of("position") <= 4,
        }
        summary["max_efficiency_gap"] = float(max(abs(a.efficiency_gap) for a in attrs))
        summary["waterfall_steps"] = flagged
    summary["elapsed_s"] = round(time.time() - t0, 3)
    write_summary(out / SUMMARY, cfg, "explain", **summary)
    print(out)
    return EXIT_OK


def cmd_compare(args) -> int:
    tables = []
    for path in (args.a, args.b):
        with open(path, encoding="utf-8") as fh:
            tables.append(report.read_importance_csv(fh, str(path)))
    rows = report.compare_runs(*tables)
    header = f"uavho compare a={args.a} b={args.b}"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            report.write_compare_csv(rows, fh, header=header)
    else:
        report.write_compare_csv(rows, sys.stdout, header=header)
    return EXIT_OK


def cmd_gen_sample_log(args) -> int:
    cfg = _load_cfg(args) if args.config else RunConfig()
    seed = args.seed if args.seed is not None else cfg.seed
    rows = ingest.generate_sample_log(cfg.scenario, seed, args.rows)
    with open(args.out, "w", encoding="utf-8") as fh:
        ingest.write_flight_log(rows, fh)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavho", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a DQN handover policy")
    t.add_argument("--config", required=True)
    t.add_argument("--episodes", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (default <output_dir>/<timestamp>-<seed>)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate dqn / chm / stay policies on seeded episodes")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--policy", choices=("dqn", "chm", "stay", "all"), default="dqn")
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("explain", help="Shapley attributions and reports for a trained policy")
    x.add_argument("--config", required=True)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--source", default="sim", help="'sim' or a flight-log CSV path")
    x.add_argument("--method", choices=EXPLAIN_METHODS)
    x.add_argument("--n", type=int, help="permutations for the sampled method")
    x.add_argument("--background", type=int, help="background set size")
    x.add_argument("--background-source", choices=("sim", "log"), default="sim")
    x.add_argument("--seed", type=int)
    x.add_argument("--out")
    x.set_defaults(func=cmd_explain)

    c = sub.add_parser("compare", help="rank shifts between two importance.csv files")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("gen-sample-log", help="write a synthetic flight log")
    g.add_argument("--config")
    g.add_argument("--rows", type=int, default=200)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_sample_log)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, ParseError) as exc:
        name = getattr(exc, "filename", None)
        msg = f"{name}: {exc.strerror}" if name and getattr(exc, "strerror", None) else str(exc)
        print(f"io error: {msg}", file=sys.stderr)
        return EXIT_IO
    except UavhoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
