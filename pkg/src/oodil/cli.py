"""Command-line entry point: demo generation, the three pipeline stages, evaluation,
sweeps and static SVG output.

Every command reads one JSON run configuration (``--config``, defaults built in),
applies ``--set section.key=value`` overrides and the ``OODIL_SEED`` environment
variable, and writes a manifest next to its outputs.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import traceback
import xml.etree.ElementTree as ET
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cluster import ClusterAssignment, ClusterHyper, ClusterModel, label_corpus, train_scc
from .demos import Corpus, load_corpus, save_corpus, transitions
from .envs import CAUSE_NAMES, OBSTACLE_Y, DrivingConfig, make_env, scripted_driving_demo
from .imitate import VARIANTS, PipelineHyper, run_variant, stage_seeds, train_weighted_gail
from .rl import Policy, RlHyper, evaluate
from .numcore import load_checkpoint, save_checkpoint
from .transfer import (
    GailHyper,
    TransferabilityModel,
    sampling_distribution,
    score_new,
    train_transferability,
    transition_weights,
)

log = logging.getLogger("oodil")

DEFAULT_CONFIG = {
    "seed": 0,
    "env": {
        "target": {"kind": "driving", "obstacle_widths": [0.4, 0.25], "speed": 1.0,
                   "step_size": 0.02, "max_steps": 200},
        "sources": [
            {"name": "s0", "obstacle_widths": [0.1, 0.5], "speed": 1.0},
            {"name": "s1", "obstacle_widths": [0.5, 0.25], "speed": 1.0},
            {"name": "s2", "obstacle_widths": [0.25, 0.25], "speed": 5.0},
        ],
        # unseen dynamics for score-new
        "held_out": [
            {"name": "h0", "obstacle_widths": [0.25, 0.25], "speed": 2.0},
            {"name": "h1", "obstacle_widths": [0.3, 0.3], "speed": 1.0},
        ],
    },
    "demos": {"per_source": 200, "held_out_per_source": 50},
    "cluster": asdict(ClusterHyper()),
    "rl": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(RlHyper()).items()},
    "transfer": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(GailHyper()).items()},
    "imitation": {k: list(v) if isinstance(v, tuple) else v
                  for k, v in asdict(GailHyper(iterations=300, eval_every=10, eval_episodes=20)).items()},
    "pipeline": {"variants": ["ours"], "seeds": None, "eval_episodes": 100, "workers": 1},
}


class CliError(Exception):
    pass


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise CliError(f"--set expects section.key=value, got {assignment!r}")
    path, value = assignment.split("=", 1)
    keys = path.split(".")
    node = config
    for k in keys[:-1]:
        if isinstance(node, list):
            node = node[int(k)]
        elif k in node and isinstance(node[k], (dict, list)):
            node = node[k]
        else:
            raise CliError(f"unknown config section {path!r}")
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = _parse_value(value)
    elif last not in node:
        raise CliError(f"unknown config key {path!r}")
    else:
        node[last] = _parse_value(value)


def load_config(path=None, overrides=(), env=None) -> dict:
    """Defaults <- config file (or a manifest's ``config``) <- --set <- OODIL_SEED."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        doc = json.loads(Path(path).read_text())
        doc = doc.get("config", doc)
        _merge(config, doc)
    for o in overrides:
        apply_override(config, o)
    env = os.environ if env is None else env
    if env.get("OODIL_SEED"):
        config["seed"] = int(env["OODIL_SEED"])
    return config


def _merge(base: dict, new: dict) -> None:
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def pipeline_hyper(config: dict) -> PipelineHyper:
    return PipelineHyper(cluster=ClusterHyper(**config["cluster"]), rl=RlHyper(**config["rl"]),
                         transfer=GailHyper(**config["transfer"]),
                         imitation=GailHyper(**config["imitation"]),
                         workers=int(config["pipeline"]["workers"]))


def code_version() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def write_manifest(out_dir, command: str, config: dict, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": config, "code_version": code_version(), **(extra or {})}
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def _source_config(src: dict, target: dict) -> DrivingConfig:
    d = {k: v for k, v in src.items() if k not in ("name", "kind")}
    d.setdefault("step_size", target.get("step_size", 0.02))
    d.setdefault("max_steps", target.get("max_steps", 200))
    d["obstacle_widths"] = tuple(d["obstacle_widths"])
    return DrivingConfig(**d)


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------


def read_demos(paths) -> Corpus:
    files = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("*.jsonl")))
        elif p.exists():
            files.append(p)
        else:
            raise CliError(f"demo file not found: {p}")
    if not files:
        raise CliError(f"no demo files under {', '.join(map(str, paths))}")
    return Corpus.concat([load_corpus(f) for f in files])


def write_csv(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_weights(path, tr, w) -> None:
    write_csv(path, ["trajectory_id", "t", "w"],
              [(tr.traj_ids[i], int(t), repr(float(x))) for i, t, x in zip(tr.traj_index, tr.t, w)])


def read_weights(path, corpus: Corpus) -> np.ndarray:
    """Weights in ``demos.transitions`` order; every transition must be covered."""
    table = {(r["trajectory_id"], int(r["t"])): float(r["w"]) for r in read_csv(path)}
    tr = transitions(corpus)
    keys = list(tr.keys())
    missing = [k for k in keys if k not in table]
    if missing:
        raise CliError(f"{len(missing)} transitions have no weight, e.g. {missing[0]}")
    extra = set(table) - set(keys)
    if extra:
        raise CliError(f"weights for unknown transitions, e.g. {sorted(extra)[0]}")
    return np.array([table[k] for k in keys])


def save_policy(path, policy: Policy, meta: dict) -> None:
    save_checkpoint(path, policy.params(), {"activations": policy.net.activations, **meta})


def load_policy(path) -> Policy:
    params, meta = load_checkpoint(path)
    return Policy.from_json({"activations": meta["activations"],
                             "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                                        for k, v in params.items()}})


# --------------------------------------------------------------------------
# SVG
# --------------------------------------------------------------------------


def _shade(v: float) -> str:
    # light to dark blue, monotone in v
    v = float(np.clip(v, 0.0, 1.0))
    lo, hi = np.array([222, 235, 247]), np.array([8, 48, 107])
    r, g, b = np.round(lo + v * (hi - lo)).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _svg_root(width, height):
    return ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width),
                      height=str(height), viewBox=f"0 0 {width} {height}")


def _write_svg(root, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(root).write(path, encoding="utf-8", xml_declaration=True)


def transferability_svg(corpus: Corpus, weights: np.ndarray, target: DrivingConfig, path) -> dict:
    """Obstacles of the target plus one polyline per demo, shaded by its mean weight."""
    tr = transitions(corpus)
    sums = np.bincount(tr.traj_index, weights=weights, minlength=len(tr.traj_ids))
    counts = np.bincount(tr.traj_index, minlength=len(tr.traj_ids))
    mean_w = dict(zip(tr.traj_ids, sums / np.maximum(counts, 1)))
    S, pad, legend = 480, 20, 70
    root = _svg_root(S + 2 * pad + legend, S + 2 * pad)
    X = lambda x: pad + S * x
    Y = lambda y: pad + S * (1.0 - y)
    ET.SubElement(root, "rect", x=str(pad), y=str(pad), width=str(S), height=str(S),
                  fill="white", stroke="black")
    y0, y1 = OBSTACLE_Y
    for lo, hi in target.obstacles():
        ET.SubElement(root, "rect", x=f"{X(lo):.2f}", y=f"{Y(y1):.2f}", width=f"{S * (hi - lo):.2f}",
                      height=f"{S * (y1 - y0):.2f}", fill="#999999")
    for traj in sorted(corpus, key=lambda t: mean_w[t.trajectory_id]):
        pts = " ".join(f"{X(np.clip(x, 0, 1)):.2f},{Y(np.clip(y, 0, 1)):.2f}" for x, y in traj.states[:, :2])
        ET.SubElement(root, "polyline", points=pts, fill="none",
                      stroke=_shade(mean_w[traj.trajectory_id]), **{"stroke-width": "1"},
                      **{"data-id": traj.trajectory_id,
                         "data-w": repr(float(mean_w[traj.trajectory_id]))})
    lx = S + 2 * pad + 10
    for i in range(50):
        v = 1.0 - i / 49
        ET.SubElement(root, "rect", x=str(lx), y=f"{pad + i * S / 50:.2f}", width="16",
                      height=f"{S / 50 + 0.5:.2f}", fill=_shade(v))
    for v, yy in ((1.0, pad + 10), (0.0, pad + S)):
        t = ET.SubElement(root, "text", x=str(lx + 20), y=f"{yy:.0f}", **{"font-size": "11"})
        t.text = f"w={v:.0f}"
    _write_svg(root, path)
    return mean_w


def errorbar_svg(xs, means, stds, path, xlabel: str, ylabel: str) -> None:
    """Mean +/- std against evenly spaced categorical x values."""
    W, H, m = 480, 320, 50
    root = _svg_root(W, H)
    lo = float(np.min(np.asarray(means) - np.asarray(stds)))
    hi = float(np.max(np.asarray(means) + np.asarray(stds)))
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    X = lambda i: m + (W - 2 * m) * (i + 0.5) / len(xs)
    Y = lambda v: H - m - (H - 2 * m) * (v - lo) / (hi - lo)
    ET.SubElement(root, "rect", x=str(m), y=str(m), width=str(W - 2 * m), height=str(H - 2 * m),
                  fill="white", stroke="black")
    pts = []
    for i, (x, mu, sd) in enumerate(zip(xs, means, stds)):
        ET.SubElement(root, "line", x1=f"{X(i):.2f}", x2=f"{X(i):.2f}", y1=f"{Y(mu - sd):.2f}",
                      y2=f"{Y(mu + sd):.2f}", stroke="black")
        ET.SubElement(root, "circle", cx=f"{X(i):.2f}", cy=f"{Y(mu):.2f}", r="3", fill="#08306b")
        t = ET.SubElement(root, "text", x=f"{X(i):.2f}", y=str(H - m + 15), **{"font-size": "11",
                                                                               "text-anchor": "middle"})
        t.text = str(x)
        pts.append(f"{X(i):.2f},{Y(mu):.2f}")
    ET.SubElement(root, "polyline", points=" ".join(pts), fill="none", stroke="#08306b")
    for v in (lo, hi):
        t = ET.SubElement(root, "text", x=str(m - 5), y=f"{Y(v):.0f}", **{"font-size": "10",
                                                                          "text-anchor": "end"})
        t.text = f"{v:.0f}"
    t = ET.SubElement(root, "text", x=str(W // 2), y=str(H - 10), **{"text-anchor": "middle"})
    t.text = xlabel
    t = ET.SubElement(root, "text", x="12", y=str(m - 15))
    t.text = ylabel
    _write_svg(root, path)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def generate_demos(config: dict, held_out: bool = False) -> dict[str, Corpus]:
    """One corpus per source; gaps taken round-robin, one seed stream per source."""
    target = config["env"]["target"]
    sources = config["env"]["held_out" if held_out else "sources"]
    n = int(config["demos"]["held_out_per_source" if held_out else "per_source"])
    if n < 1:
        raise CliError("at least one demonstration per source is required")
    root = np.random.SeedSequence([int(config["seed"]), 1 if held_out else 0])
    out = {}
    for src, child in zip(sources, root.spawn(len(sources))):
        name = src["name"]
        rng = np.random.default_rng(child)
        try:
            cfg = _source_config(src, target)
            gaps = list(cfg.gaps())
            if not gaps:
                raise ValueError("no feasible gap")
            trajs = [scripted_driving_demo(cfg, gaps[i % len(gaps)], rng, f"{name}-{i:04d}",
                                           f"{name}/{gaps[i % len(gaps)]}") for i in range(n)]
        except ValueError as e:
            raise CliError(f"source {name!r}: {e}") from e
        out[name] = Corpus(trajs)
    return out


def cmd_gen_demos(args, config):
    out = Path(args.out)
    corpora = generate_demos(config, held_out=args.held_out)
    prefix = "held_out" if args.held_out else "demos"
    for name, corpus in corpora.items():
        save_corpus(corpus, out / f"{prefix}_{name}.jsonl")
        print(f"{prefix}_{name}.jsonl: {len(corpus)} trajectories, "
              f"{sum(len(t.states) - 1 for t in corpus)} transitions")
    write_manifest(out, "gen-demos", config, {"held_out": args.held_out})


def cmd_cluster(args, config):
    corpus = read_demos(args.demos)
    if args.k is not None:
        config["cluster"]["K"] = args.k
    hyper = ClusterHyper(**config["cluster"])
    rng = stage_seeds(int(config["seed"]))["cluster"]
    model = train_scc(corpus, hyper, rng, log_every=args.log_every)
    assignment = label_corpus(model, corpus, rng)
    model_path, labels_path = args.out
    model.save(model_path)
    assignment.save(labels_path)
    print("cluster sizes:", assignment.sizes())
    write_manifest(Path(labels_path).parent, "cluster", config)


def cmd_transfer(args, config):
    corpus = read_demos(args.demos)
    assignment = ClusterAssignment.load(args.labels)
    target = json.loads(Path(args.env).read_text()) if args.env else config["env"]["target"]
    config["env"]["target"] = target
    unknown = set(corpus.ids) - set(assignment.labels)
    if unknown:
        raise CliError(f"{len(unknown)} trajectories have no cluster label, e.g. {sorted(unknown)[0]}")
    tmodel = train_transferability(target, corpus, assignment, RlHyper(**config["rl"]),
                                   GailHyper(**config["transfer"]),
                                   stage_seeds(int(config["seed"]))["transfer"],
                                   int(config["pipeline"]["workers"]))
    tr, w = transition_weights(tmodel, corpus)
    tmodel_path, weights_path = args.out
    tmodel.save(tmodel_path)
    write_weights(weights_path, tr, w)
    print(f"{len(w)} transitions, mean w {w.mean():.4f}")
    write_manifest(Path(weights_path).parent, "transfer", config)


def cmd_train(args, config):
    corpus = read_demos(args.demos)
    target = json.loads(Path(args.env).read_text()) if args.env else config["env"]["target"]
    config["env"]["target"] = target
    p_w = sampling_distribution(read_weights(args.weights, corpus)) if args.weights else None
    seed = int(config["seed"])
    res = train_weighted_gail(target, corpus, p_w, RlHyper(**config["rl"]),
                              GailHyper(**config["imitation"]), stage_seeds(seed)["imitation"])
    policy_path, curve_path = args.out
    save_policy(policy_path, res.policy, {"variant": args.variant, "seed": seed})
    write_csv(curve_path, ["variant", "seed", "env_steps", "mean_return", "goal_rate"],
              [(args.variant, seed, r["env_steps"], r["mean_return"], r["goal_rate"])
               for r in res.trace["curve"]])
    write_manifest(Path(policy_path).parent, "train", config)


def cmd_eval(args, config):
    policy = load_policy(args.policy)
    target = json.loads(Path(args.env).read_text()) if args.env else config["env"]["target"]
    stats = evaluate(policy, make_env(target), args.episodes, np.random.default_rng(int(config["seed"])))
    write_csv(args.out, ["episode", "return", "length", "outcome"],
              [(i, repr(r), n, CAUSE_NAMES[c])
               for i, (r, n, c) in enumerate(zip(stats["returns"], stats["lengths"], stats["causes"]))])
    summary = {k: v for k, v in stats.items() if k not in ("returns", "lengths", "causes")}
    print(json.dumps(summary, indent=1))


def cmd_score_new(args, config):
    corpus = read_demos(args.demos)
    cmodel = ClusterModel.load(args.cluster_model)
    tmodel = TransferabilityModel.load(args.tmodel)
    rng = np.random.default_rng(np.random.SeedSequence([int(config["seed"]), 2]))
    tr, w, labels = score_new(cmodel, tmodel, corpus, rng)
    weights_path, labels_path = args.out
    write_weights(weights_path, tr, w)
    Path(labels_path).write_text(json.dumps({"K": cmodel.K, "labels": labels}, indent=1))
    print(f"{len(w)} new transitions, w in [{w.min():.4g}, {w.max():.4g}], mean {w.mean():.4f}")


def cmd_viz(args, config):
    corpus = read_demos(args.demos)
    w = read_weights(args.weights, corpus)
    target = json.loads(Path(args.env).read_text()) if args.env else config["env"]["target"]
    env = make_env(target)
    transferability_svg(corpus, w, env.config, args.out)
    print(f"wrote {args.out}")


def run_pipeline(config: dict, out: Path, demo_paths=None) -> dict:
    """gen-demos (unless given) -> cluster -> transfer -> train -> eval -> viz."""
    out.mkdir(parents=True, exist_ok=True)
    stage = "demos"
    try:
        if demo_paths:
            corpus = read_demos(demo_paths)
        else:
            corpora = generate_demos(config)
            for name, c in corpora.items():
                save_corpus(c, out / "demos" / f"demos_{name}.jsonl")
            corpus = read_demos([out / "demos"])
        hyper = pipeline_hyper(config)
        target = config["env"]["target"]
        seeds = config["pipeline"]["seeds"] or [int(config["seed"])]
        curves, summary = [], {}
        for variant in config["pipeline"]["variants"]:
            for seed in seeds:
                stage = f"{variant}/seed{seed}"
                run = run_variant(variant, corpus, target, hyper, int(seed),
                                  int(config["pipeline"]["eval_episodes"]))
                d = out / f"{variant}_seed{seed}"
                d.mkdir(exist_ok=True)
                if run.cluster_model is not None:
                    run.cluster_model.save(d / "cluster_model.json")
                if run.assignment is not None:
                    run.assignment.save(d / "labels.json")
                if run.tmodel is not None:
                    run.tmodel.save(d / "tmodel.json")
                    tr = transitions(corpus)
                    write_weights(d / "weights.csv", tr, run.weights)
                    transferability_svg(corpus, run.weights, make_env(target).config,
                                        d / "transferability.svg")
                save_policy(d / "policy.json", run.policy, {"variant": variant, "seed": int(seed)})
                curves.extend(run.curve_rows())
                summary[f"{variant}/seed{seed}"] = {k: v for k, v in run.final.items()
                                                    if k not in ("returns", "lengths", "causes")}
                summary[f"{variant}/seed{seed}"]["seconds"] = {k: round(v, 1)
                                                               for k, v in run.timings.items()}
                log.info("%s seed %s: return %.1f goal rate %.2f", variant, seed,
                         run.final["mean_return"], run.final["goal_rate"])
        write_csv(out / "curves.csv", ["variant", "seed", "env_steps", "mean_return", "goal_rate"],
                  [(r["variant"], r["seed"], r["env_steps"], r["mean_return"], r["goal_rate"])
                   for r in curves])
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
        write_manifest(out, "pipeline", config)
        return summary
    except Exception as e:
        (out / "FAILED").write_text(f"stage: {stage}\n{type(e).__name__}: {e}\n{traceback.format_exc()}")
        raise


def cmd_pipeline(args, config):
    summary = run_pipeline(config, Path(args.out), args.demos)
    print(json.dumps(summary, indent=1, sort_keys=True))


SWEEP_KEYS = {"K": "K", "lambda": "lam"}


def cmd_sweep(args, config):
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("sweep needs at least one value")
    out = Path(args.out)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [int(config["seed"])]
    rows = []
    for v in values:
        for s in seeds:
            cfg = copy.deepcopy(config)
            cfg["cluster"][SWEEP_KEYS[args.axis]] = v
            cfg["pipeline"]["seeds"] = [s]
            cfg["pipeline"]["variants"] = ["ours"]
            summary = run_pipeline(cfg, out / f"{args.axis}={v}", args.demos)
            res = summary[f"ours/seed{s}"]
            rows.append((v, s, res["mean_return"], res["goal_rate"]))
    write_csv(out / "sweep.csv", [args.axis, "seed", "final_return", "goal_rate"], rows)
    means = [np.mean([r[2] for r in rows if r[0] == v]) for v in values]
    stds = [np.std([r[2] for r in rows if r[0] == v]) for v in values]
    errorbar_svg(values, means, stds, out / "sweep.svg", args.axis, "final return")
    write_manifest(out, "sweep", config, {"axis": args.axis, "values": values, "seeds": seeds})


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oodil", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="run configuration (JSON) or a manifest")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-demos", cmd_gen_demos, "write one demo file per source dynamics")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--held-out", action="store_true", help="generate the held-out sources instead")

    sp = add("cluster", cmd_cluster, "contrastive clustering of demo trajectories")
    sp.add_argument("--demos", nargs="+", required=True)
    sp.add_argument("--k", type=int)
    sp.add_argument("--out", nargs=2, required=True, metavar=("MODEL", "LABELS"))
    sp.add_argument("--log-every", type=int, default=0)

    sp = add("transfer", cmd_transfer, "per-cluster transferability weights")
    sp.add_argument("--demos", nargs="+", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--env", help="target environment JSON")
    sp.add_argument("--out", nargs=2, required=True, metavar=("TMODEL", "WEIGHTS_CSV"))

    sp = add("train", cmd_train, "weighted GAIL on all demos (uniform without --weights)")
    sp.add_argument("--demos", nargs="+", required=True)
    sp.add_argument("--weights")
    sp.add_argument("--env")
    sp.add_argument("--variant", default="ours")
    sp.add_argument("--out", nargs=2, required=True, metavar=("POLICY", "CURVE_CSV"))

    sp = add("eval", cmd_eval, "evaluate a policy checkpoint")
    sp.add_argument("--policy", required=True)
    sp.add_argument("--env")
    sp.add_argument("--episodes", type=int, default=100)
    sp.add_argument("--out", required=True, help="per-episode CSV")

    sp = add("score-new", cmd_score_new, "weight unseen demos with frozen models")
    sp.add_argument("--demos", nargs="+", required=True)
    sp.add_argument("--cluster-model", required=True)
    sp.add_argument("--tmodel", required=True)
    sp.add_argument("--out", nargs=2, required=True, metavar=("WEIGHTS_CSV", "LABELS"))

    sp = add("viz", cmd_viz, "SVG of demos shaded by transferability")
    sp.add_argument("--demos", nargs="+", required=True)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--env")
    sp.add_argument("--out", required=True)

    sp = add("sweep", cmd_sweep, "repeat the pipeline over K or lambda")
    sp.add_argument("--axis", choices=sorted(SWEEP_KEYS), required=True)
    sp.add_argument("--values", required=True, help="comma-separated")
    sp.add_argument("--seeds", help="comma-separated, default: config seed")
    sp.add_argument("--demos", nargs="+")
    sp.add_argument("--out", required=True)

    sp = add("pipeline", cmd_pipeline, "cluster, transfer, train and evaluate end to end")
    sp.add_argument("--demos", nargs="+")
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        config = load_config(args.config, args.set)
        if args.command == "pipeline":
            bad = set(config["pipeline"]["variants"]) - set(VARIANTS)
            if bad:
                raise CliError(f"unknown variants {sorted(bad)}")
        args.fn(args, config)
    except Exception as e:  # every failure becomes a message and a nonzero exit
        print(f"oodil {args.command}: error: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
