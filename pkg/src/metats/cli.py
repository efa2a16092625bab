"""Command-line front end: ``metats run | validate | replay``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .bandit import init_agent, uninformative_prior
from .gaussian import Gaussian
from .harness import (
    AGENTS,
    ConfigError,
    ExperimentConfig,
    TrialEnvironment,
    default_out_dir,
    emit_results,
    load_config,
    run_experiment,
)
from .radar import Scene, make_world, run_track
from .rng import stream, sub_seed

log = logging.getLogger("metats")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="metats", description="Meta-Thompson Sampling radar tracking experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the Monte Carlo comparison and write CSV/JSON results")
    run.add_argument("--config", required=True)
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default: $METATS_OUT_DIR or ./results)")
    run.add_argument("--agents", help=f"comma-separated subset of {','.join(AGENTS)}")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--save-scenes", action="store_true", help="also write trial 0's scenes as replayable JSON")

    val = sub.add_parser("validate", help="check a config and print it with defaults resolved")
    val.add_argument("--config", required=True)

    rep = sub.add_parser("replay", help="re-simulate one serialized scene")
    rep.add_argument("--scene", required=True)
    rep.add_argument("--config", help="config supplying kinematics and noise settings")
    rep.add_argument("--agent", choices=("uninformative", "oracle"), default="uninformative")
    rep.add_argument("--horizon", type=int)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", help="optional per-CPI CSV path")
    return p


def _resolve(args):
    cfg = load_config(args.config)
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.agents is not None:
        changes["agents"] = args.agents
    return cfg.replace(**changes) if changes else cfg


def _save_scenes(cfg: ExperimentConfig, out: Path):
    env = TrialEnvironment(cfg, 0)
    d = out / "scenes"
    d.mkdir(parents=True, exist_ok=True)
    for s in range(cfg.tracks):
        doc = {"trial": 0, "track": s + 1, "p_star_mean": env.p_star.mean.tolist(), "scene": env.scene(s).to_dict()}
        (d / f"trial000_track{s + 1:03d}.json").write_text(json.dumps(doc, indent=1) + "\n")


def cmd_run(args):
    cfg = _resolve(args)
    out = Path(args.out or default_out_dir())
    t0 = time.perf_counter()
    _, agg = run_experiment(cfg, workers=max(1, args.workers))
    paths = emit_results(agg, cfg, out)
    if args.save_scenes:
        _save_scenes(cfg, out)
    log.info("%d trials in %.1f s", cfg.trials, time.perf_counter() - t0)
    summary = json.loads(paths["summary"].read_text())
    for a, v in summary["agents"].items():
        print(f"{a:>14}: cum regret {v['cum_regret']:9.1f}  cum lost {v['cum_lost']:6.2f}  "
              f"SINR(last 10) {v['mean_sinr_last10']:6.2f} dB")
    print(f"results written to {out}")
    return 0


def cmd_validate(args):
    cfg = load_config(args.config)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_replay(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    path = Path(args.scene)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"scene file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"scene file {path} is not valid JSON: {e}") from e
    try:
        scene = Scene.from_dict(doc.get("scene", doc))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid scene in {path}: {e}") from e
    n = args.horizon or cfg.horizon
    nz = cfg.noise
    world = make_world(scene, n, cfg.scene, stream(args.seed, 0, "world", 0),
                       sub_seed(args.seed, 0, "noise", 0), sub_seed(args.seed, 0, "measurement", 0))
    if args.agent == "oracle":
        if "p_star_mean" not in doc:
            raise ConfigError("oracle replay needs 'p_star_mean' in the scene document")
        prior = Gaussian.isotropic(doc["p_star_mean"], nz.sigma02)
    else:
        prior = uninformative_prior(scene.true_theta.size, nz.sigmaQ2, cfg.uninformative_scale)
    res = run_track(world, init_agent(prior, nz.sigma2), n, stream(args.seed, 0, "agent", AGENTS.index(args.agent)), cfg.scene)
    print(f"agent {args.agent}: {n} CPIs, mean SINR {res.sinr_db.mean():.2f} dB, "
          f"regret {res.regret.sum():.2f}, lost {'yes at CPI %d' % (res.lost_at + 1) if res.lost else 'no'}, "
          f"final position error {res.position_error[-1]:.1f} m")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("cpi,state,observation,waveform,loss_db,sinr_db,regret,position_error_m\n")
            for k in range(n):
                fh.write(f"{k + 1},{world.states[k]},{res.observations[k]},{res.chosen[k]},"
                         f"{res.losses[k]:.6g},{res.sinr_db[k]:.6g},{res.regret[k]:.6g},{res.position_error[k]:.6g}\n")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": cmd_run, "validate": cmd_validate, "replay": cmd_replay}[args.command]
    try:
        return handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # any failure past config resolution
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
