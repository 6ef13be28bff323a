"""``partforge`` command-line entry point."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from partforge.cli.config import (
    SPLITS,
    MetricsRow,
    build_id,
    format_metrics,
    parse_bool,
    parse_caps,
    read_config_file,
    read_metrics,
    run_pool,
    write_metrics,
)
from partforge.errors import CapExceeded, CapMismatch, ConfigError, Diverged, SchemaVersionMismatch

log = logging.getLogger("partforge")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
NOT_CONFIG = {"command", "config", "out", "caps_given"}


def episode_seed(seed: int, chair_id: int, i: int) -> int:
    """Reset seed of episode ``i`` on a chair; episode 0 is shared with the baseline."""
    return seed * 1_000_000 + chair_id * 1000 + i


# -- helpers -----------------------------------------------------------------------

def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved(args) -> dict:
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in NOT_CONFIG or callable(v):
            continue
        cfg[k] = list(v) if isinstance(v, tuple) else v
    return cfg


def _record_run(args, out: Path) -> dict:
    cfg = _resolved(args)
    log.info("build %s, resolved config %s", build_id(), json.dumps(cfg, sort_keys=True))
    (out / "run.json").write_text(json.dumps({"command": args.command, "build": build_id(), "config": cfg},
                                             indent=1, sort_keys=True) + "\n")
    return cfg


def _dataset(args):
    from partforge.assets import load_dataset

    if not args.dataset:
        raise ConfigError("--dataset is required")
    return load_dataset(args.dataset)


def _split_ids(manifest, splits: str) -> dict[str, tuple[int, ...]]:
    names = [s.strip() for s in splits.split(",") if s.strip()]
    for s in names:
        if s not in SPLITS:
            raise ConfigError(f"unknown split {s!r}; choose from {', '.join(SPLITS)}")
    return {s: manifest.split(s) for s in names}


def _chair_ids(args, manifest) -> list[int]:
    if args.chairs:
        ids = [int(x) for x in args.chairs.split(",")]
        unknown = set(ids) - set(manifest.all_ids())
        if unknown:
            raise ConfigError(f"unknown chair ids {sorted(unknown)}")
        return ids
    return sorted(i for ids in _split_ids(manifest, args.split).values() for i in ids)


def _check_caps(chairs, caps):
    P, K, _ = caps
    for c in chairs:
        if c.n_parts > P or max(len(p.connections) for p in c.parts) > K:
            raise CapMismatch(f"chair {c.id} does not fit caps {caps}")


# -- commands ----------------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    from partforge.assets import build_dataset, save_dataset

    out = _out_dir(args)
    _record_run(args, out)
    if args.n_chairs < 2:
        raise ConfigError("--n-chairs must be >= 2")
    manifest, chairs = build_dataset(args.n_chairs, args.seed, test_fraction=args.test_fraction,
                                     hard_fraction=args.hard_fraction,
                                     max_parts=args.max_parts or args.caps[0], n_test=args.n_test)
    save_dataset(manifest, chairs, out)
    log.info("wrote %d chairs (%d easy train, %d hard train, %d test) to %s", len(chairs),
             len(manifest.easy_train), len(manifest.hard_train), manifest.n_test, out)
    return EXIT_OK


def cmd_annotate(args) -> int:
    from partforge.assets import annotate_chair, save_dataset

    manifest, chairs = _dataset(args)
    out = _out_dir(args)
    _record_run(args, out)
    annotated = [annotate_chair(chairs[i]) for i in sorted(chairs)]
    save_dataset(manifest, annotated, out)
    n_conn = sum(len(p.connections) for c in annotated for p in c.parts) // 2
    log.info("annotated %d chairs, %d connections", len(annotated), n_conn)
    return EXIT_OK


def cmd_train_ae(args) -> int:
    from partforge.learn import PointCloudAutoEncoder, part_clouds, save_ae

    manifest, chairs = _dataset(args)
    out = _out_dir(args)
    _record_run(args, out)
    ids = sorted(i for ids in _split_ids(manifest, args.split).values() for i in ids)
    X = part_clouds([chairs[i] for i in ids], orientations=args.orientations, seed=args.seed)
    if len(X) < 100:
        raise ConfigError(f"autoencoder training needs >= 100 clouds, dataset gives {len(X)}")
    ae = PointCloudAutoEncoder(epochs=args.epochs, random_state=args.seed).fit(X)
    save_ae(out / "ae.bin", ae, {"build": build_id()})
    with open(out / "ae_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows([i + 1, f"{loss:.6g}"] for i, loss in enumerate(ae.loss_curve_))
    ratio = ae.final_loss_ / ae.initial_loss_
    log.info("autoencoder on %d clouds: loss %.4g -> %.4g (ratio %.4f)", len(X), ae.initial_loss_,
             ae.final_loss_, ratio)
    return EXIT_OK


def _train_one(task) -> dict:
    from partforge.learn import DDQNAgent, load_ae, save_agent

    chair, opts, out = task
    ae = load_ae(opts["ae"])
    agent = DDQNAgent(ae, caps=tuple(opts["caps"]), mode=opts["mode"], budget=opts["budget"],
                      eval_every=opts["eval_every"], eval_episodes=opts["eval_episodes"],
                      max_states=opts["max_states"], random_state=opts["seed"]).fit(chair)
    save_agent(Path(out) / f"expert_{chair.id}.bin", agent, {"build": build_id()})
    agent.write_log(Path(out) / f"train_log_{chair.id}.csv")
    return {"chair_id": chair.id, "success_rate": agent.success_rate_, "steps": agent.n_steps_}


def cmd_train_single(args) -> int:
    manifest, chairs = _dataset(args)
    out = _out_dir(args)
    _record_run(args, out)
    ids = _chair_ids(args, manifest)
    _check_caps([chairs[i] for i in ids], args.caps)
    opts = {"ae": _require(args.ae, "--ae"), "caps": args.caps, "mode": args.mode, "budget": args.budget,
            "eval_every": args.eval_every, "eval_episodes": args.eval_episodes,
            "max_states": args.max_states, "seed": args.seed}
    results = sorted(run_pool(_train_one, [(chairs[i], opts, str(out)) for i in ids]),
                     key=lambda r: r["chair_id"])
    with open(out / "experts.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["chair_id", "success_rate", "steps"], lineterminator="\n")
        w.writeheader()
        w.writerows(results)
    for r in results:
        log.info("chair %d: greedy success %.2f after %d steps", r["chair_id"], r["success_rate"], r["steps"])
    return EXIT_OK


def cmd_distill(args) -> int:
    from partforge.learn import distill_train, load_ae, load_agent, save_qnet

    manifest, chairs = _dataset(args)
    out = _out_dir(args)
    _record_run(args, out)
    ae = load_ae(_require(args.ae, "--ae"))
    paths = sorted(Path(_require(args.experts, "--experts")).glob("expert_*.bin"),
                   key=lambda p: int(p.stem.split("_")[1]))
    experts = [load_agent(p, ae) for p in paths]
    experts = [e for e in experts if e.success_rate_ > 0]
    if not experts:
        raise ConfigError("no expert with a successful greedy rollout was found")
    modes = {e.mode for e in experts}
    if len(modes) != 1 or len({tuple(e.caps) for e in experts}) != 1:
        raise CapMismatch("experts disagree on mode or caps")
    policy, report = distill_train(experts, [chairs[e.chair_id_] for e in experts], ae, epochs=args.epochs,
                                   seed=args.seed, lam=args.lam, augment=args.augment, sigma=args.sigma)
    report["experts"] = [e.chair_id_ for e in experts]
    save_qnet(out / "policy.bin", policy.network_, experts[0].caps,
              {"policy": "distilled", "mode": modes.pop(), "report": report, "build": build_id()})
    (out / "distill_report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    log.info("distilled %d experts: held-in agreement %.3f, held-out %.3f", len(experts),
             report["held_in_agreement"], report["held_out_agreement"])
    return EXIT_OK


def rollout_episodes(env, choose, seed: int, episodes: int, log_path) -> list[dict]:
    """Run ``episodes`` episodes of ``choose`` on ``env`` and log every step to ``log_path``."""
    from partforge.env import TrajectoryLog
    from partforge.learn import run_episode

    out = []
    with TrajectoryLog(log_path) as tlog:
        for i in range(episodes):
            s = episode_seed(seed, env.chair.id, i)
            success, reward, states, steps = run_episode(env, choose, s, log=tlog)
            out.append({"chair_id": env.chair.id, "seed": s, "success": int(success), "reward": reward,
                        "plan_steps": states, "steps": steps})
    return out


def metrics_row(method: str, split: str, episodes: list[dict]) -> MetricsRow:
    """Success percentage and, on the test split, mean attempted states per episode."""
    rate = 100.0 * sum(e["success"] for e in episodes) / len(episodes)
    steps = float(np.mean([e["plan_steps"] for e in episodes])) if split == "test" else None
    return MetricsRow(method, split, rate, steps)


def _eval_chair(task) -> list[dict]:
    from partforge.env import AssemblyEnv
    from partforge.learn import build_state_encoding, load_ae, load_qnet, part_features, q_columns
    from partforge.planner import RRTParams

    chair, opts, log_path = task
    ae = load_ae(opts["ae"])
    net, caps, meta = load_qnet(opts["policy"])
    env = AssemblyEnv(chair, mode=opts["mode"], caps=caps,
                      planner=RRTParams(max_states=opts["max_states"], seed=opts["seed"]))
    feats = [None]

    def choose(state, cols):
        if state.step_count == 0:  # features are fixed at reset, as in training
            feats[0] = part_features(ae, state)
        h = net.hidden(build_state_encoding(state, feats[0], caps[0])[None])[-1][0]
        return cols[int(np.argmax(q_columns(net, h, cols)))]

    return rollout_episodes(env, choose, opts["seed"], opts["episodes"], log_path)


def _policy_mode(path) -> tuple[str, tuple]:
    from partforge.learn import load_checkpoint

    _, meta = load_checkpoint(path)
    if meta.get("kind") != "qnet":
        raise SchemaVersionMismatch(f"{path} is not a policy checkpoint")
    return meta.get("mode", meta.get("agent", {}).get("mode", "oc")), tuple(meta["caps"])


def cmd_eval(args) -> int:
    manifest, chairs = _dataset(args)
    out = _out_dir(args)
    cfg = _record_run(args, out)
    mode, caps = _policy_mode(_require(args.policy, "--policy"))
    if args.caps_given and tuple(args.caps) != caps:
        raise CapMismatch(f"policy caps {caps} differ from --caps {tuple(args.caps)}")
    opts = {"ae": _require(args.ae, "--ae"), "policy": args.policy, "episodes": args.episodes,
            "max_states": args.max_states, "seed": args.seed, "mode": mode}
    method = "ours_oc" if mode == "oc" else "ours_full"
    rows, per_episode = [], []
    for split, ids in _split_ids(manifest, args.split).items():
        _check_caps([chairs[i] for i in ids], caps)
        tasks = [(chairs[i], opts, str(out / f"traj_{split}_{i}.jsonl")) for i in ids]
        eps = [e for r in run_pool(_eval_chair, tasks) for e in r]
        if not eps:
            continue
        for e in eps:
            e["split"] = split
        per_episode += eps
        rows.append(metrics_row(method, split, eps))
    _write_episodes(per_episode, out / "episodes.csv")
    write_metrics(rows, out / "metrics.csv", cfg)
    sys.stdout.write(format_metrics(rows, cfg))
    return EXIT_OK


def _write_episodes(eps, path):
    fields = ["split", "chair_id", "seed", "success", "reward", "plan_steps", "steps"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(sorted(eps, key=lambda e: (e["split"], e["chair_id"], e["seed"])))


def _baseline_chair(task) -> dict:
    from partforge.env import reset
    from partforge.planner import RRTParams, plan_full_assembly

    chair, opts = task
    s = episode_seed(opts["seed"], chair.id, 0)
    out = plan_full_assembly(chair, reset(chair, s).poses, RRTParams(max_states=opts["max_states"], seed=s))
    return {"chair_id": chair.id, "query_kind": "full", "result": out.result,
            "states_attempted": out.states_attempted, "wall_ms": out.wall_ms, "success": int(out.success)}


def cmd_baseline(args) -> int:
    from partforge.planner import write_planner_report

    manifest, chairs = _dataset(args)
    out = _out_dir(args)
    cfg = _record_run(args, out)
    rows, report = [], []
    for split, ids in _split_ids(manifest, args.split).items():
        res = sorted(run_pool(_baseline_chair, [(chairs[i], {"seed": args.seed, "max_states": args.max_states})
                                                for i in ids]), key=lambda r: r["chair_id"])
        if not res:
            continue
        report += res
        rows.append(MetricsRow("baseline_oc", split, 100.0 * sum(r["success"] for r in res) / len(res),
                               float(np.mean([r["states_attempted"] for r in res]))))
    write_planner_report(report, out / "planner_report.csv")
    write_metrics(rows, out / "metrics.csv", cfg)
    sys.stdout.write(format_metrics(rows, cfg))
    return EXIT_OK


def cmd_export_traj(args) -> int:
    from partforge.env import read_log
    from partforge.env.log import poses_array
    from partforge.geom import Pose6D, merge_meshes, save_obj

    _, chairs = _dataset(args)
    out = _out_dir(args)
    _record_run(args, out)
    records = read_log(_require(args.log, "--log"))
    chair_of = {}
    n = 0
    for rec in records:
        if rec["t"] == 0:
            if "chair_id" not in rec:
                raise ConfigError("trajectory log lacks chair ids")
            chair_of[rec["episode"]] = chairs[rec["chair_id"]]
        chair = chair_of[rec["episode"]]
        poses = poses_array(rec)
        scene = merge_meshes([p.mesh.transformed(Pose6D.from_array(q)) for p, q in zip(chair.parts, poses)])
        save_obj(scene, out / f"scene_e{rec['episode']}_t{rec['t']:03d}.obj")
        n += 1
    log.info("wrote %d scenes to %s", n, out)
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    cfg = _record_run(args, out)
    rows = []
    for run in args.runs:
        path = Path(run) / "metrics.csv" if Path(run).is_dir() else Path(run)
        rows += read_metrics(path)
    write_metrics(rows, out / "metrics.csv", cfg)
    lines = [f"{'Method':<12}{'Split':<12}{'SuccRate(%)':>12}{'Plan Steps':>14}"]
    for r in sorted(rows, key=MetricsRow.sort_key):
        c = r.cells()
        lines.append(f"{c[0]:<12}{c[1]:<12}{c[2]:>12}{(c[3] or '-'):>14}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _require(value, flag):
    if value in (None, ""):
        raise ConfigError(f"{flag} is required")
    return value


# -- parser ------------------------------------------------------------------------

COMMANDS = {
    "gen-dataset": cmd_gen_dataset, "annotate": cmd_annotate, "train-ae": cmd_train_ae,
    "train-single": cmd_train_single, "distill": cmd_distill, "eval": cmd_eval, "baseline": cmd_baseline,
    "export-traj": cmd_export_traj, "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value file; flags given on the command line take precedence")
    p.add_argument("--out", help="output directory")
    p.add_argument("--max-states", type=int, default=100_000, help="planner cap per query")
    p.add_argument("--budget", type=int, default=40_000, help="DDQN step budget")
    p.add_argument("--caps", type=parse_caps, default=(8, 6, 6), help="padding caps P,K,W")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="partforge", description="Part-assembly planning and learning experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("gen-dataset", help="generate and annotate a chair dataset")
    p.add_argument("--n-chairs", type=int, default=40)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--hard-fraction", type=float, default=0.25)
    p.add_argument("--max-parts", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    sub.add_parser("annotate", help="recompute connections, symmetry classes and grasp regions")
    p = sub.add_parser("train-ae", help="fit the point-cloud autoencoder")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--orientations", type=int, default=4)
    p.add_argument("--split", default="easy_train,hard_train")
    p = sub.add_parser("train-single", help="train one DDQN expert per chair")
    p.add_argument("--ae")
    p.add_argument("--chairs", default="", help="comma-separated chair ids (default: --split)")
    p.add_argument("--split", default="easy_train,hard_train")
    p.add_argument("--mode", choices=("oc", "full"), default="oc")
    p.add_argument("--eval-every", type=int, default=2000)
    p.add_argument("--eval-episodes", type=int, default=20)
    p = sub.add_parser("distill", help="distill experts into one multi-task policy")
    p.add_argument("--ae")
    p.add_argument("--experts", help="directory of expert checkpoints")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lam", type=float, default=50.0)
    p.add_argument("--augment", type=int, default=4)
    p.add_argument("--sigma", type=float, default=0.01)
    p = sub.add_parser("eval", help="greedy rollouts of a policy checkpoint")
    p.add_argument("--ae")
    p.add_argument("--policy")
    p.add_argument("--split", default="test")
    p.add_argument("--episodes", type=int, default=5)
    p = sub.add_parser("baseline", help="whole-assembly RRT-Connect baseline")
    p.add_argument("--split", default="test")
    p = sub.add_parser("export-traj", help="write OBJ scenes for every logged step")
    p.add_argument("--log")
    p = sub.add_parser("report", help="merge metrics from run directories")
    p.add_argument("runs", nargs="+")
    for p in sub.choices.values():
        _common(p)
    return parser


def _bool_flag(action) -> bool:
    return isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction))


def parse_args(argv) -> argparse.Namespace:
    """Parse flags, layering an optional ``--config`` file underneath them."""
    parser = build_parser()
    argv = list(argv)
    if not argv or argv[0] not in COMMANDS:
        return parser.parse_args(argv)  # prints help or raises
    sub = parser._subparsers._group_actions[0].choices[argv[0]]
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[1:])
    ns = argparse.Namespace()
    if known.config:
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        for key, raw in read_config_file(known.config).items():
            if key not in actions:
                raise ConfigError(f"unknown config key {key!r}")
            act = actions[key]
            if act.nargs == "+":
                value = raw.split()
            elif _bool_flag(act):
                value = parse_bool(raw)
            else:
                value = act.type(raw) if act.type else raw
            setattr(ns, key, value)
    caps_given = hasattr(ns, "caps") or any(a == "--caps" or a.startswith("--caps=") for a in argv)
    args = sub.parse_args(argv[1:], namespace=ns)
    args.command, args.caps_given = argv[0], caps_given
    return args


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        code = COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ConfigError, CapMismatch, CapExceeded, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except Diverged as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except (OSError, SchemaVersionMismatch) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
