"""Monte Carlo comparison of uninformative-prior TS, meta-TS and oracle-prior TS.

Every trial draws one true task prior, then plays ``tracks`` tracks of
``horizon`` CPIs. All agents see the same scenes, state sequences, target
trajectories and noise draws; only their own posterior-sampling streams
differ.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bandit import UNINFORMATIVE_SCALE, init_agent, uninformative_prior
from .engine import run_track_fast
from .gaussian import Gaussian, sample_gaussian
from .meta import init_meta, run_meta_ts
from .radar import FEATURE_DIM, SceneConfig, make_world, sample_task
from .rng import stream, sub_seed

log = logging.getLogger(__name__)

AGENTS = ("uninformative", "meta", "oracle")
PER_TRACK = ("regret", "cum_regret", "lost", "cum_lost", "mean_sinr")
PER_CPI = ("within_regret", "rmse_final")
OUT_DIR_ENV = "METATS_OUT_DIR"


class ConfigError(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class TrialFailure(RuntimeError):
    def __init__(self, trial, agent, stage, cause):
        super().__init__(f"trial {trial}, agent {agent}, track {stage + 1}: {cause}")
        self.trial, self.agent, self.stage = trial, agent, stage


@dataclass(frozen=True)
class NoiseConfig:
    sigma2: float = 1.0  # loss noise, dB^2
    sigma02: float = 0.25  # instance-prior variance
    sigmaQ2: float = 4.0  # meta-prior variance


@dataclass(frozen=True)
class ExperimentConfig:
    tracks: int = 50
    horizon: int = 200
    trials: int = 100
    feature_dim: int = FEATURE_DIM
    seed: int = 20210601
    agents: tuple = AGENTS
    uninformative_scale: float = UNINFORMATIVE_SCALE
    noise: NoiseConfig = NoiseConfig()
    scene: SceneConfig = SceneConfig()

    @property
    def waveforms(self):
        return self.scene.waveforms

    def validate(self):
        for name in ("tracks", "horizon", "trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.feature_dim != FEATURE_DIM:
            raise ConfigError(f"the radar features are {FEATURE_DIM}-dimensional, got feature_dim={self.feature_dim}")
        for name, v in dataclasses.asdict(self.noise).items():
            if not v > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.uninformative_scale > 0:
            raise ConfigError("uninformative_scale must be positive")
        if not self.agents or any(a not in AGENTS for a in self.agents) or len(set(self.agents)) != len(self.agents):
            raise ConfigError(f"agents must be a non-empty subset of {AGENTS}")
        try:
            self.scene.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def to_dict(self):
        doc = {
            "tracks": self.tracks,
            "horizon": self.horizon,
            "trials": self.trials,
            "feature_dim": self.feature_dim,
            "seed": self.seed,
            "agents": list(self.agents),
            "uninformative_scale": self.uninformative_scale,
        }
        doc.update(dataclasses.asdict(self.noise))
        doc.update(dataclasses.asdict(self.scene))
        return doc

    @classmethod
    def from_dict(cls, doc):
        """Build from a flat JSON document; absent keys take their defaults."""
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        top = {f.name for f in dataclasses.fields(cls)} - {"noise", "scene"}
        noise_keys = {f.name for f in dataclasses.fields(NoiseConfig)}
        scene_keys = {f.name for f in dataclasses.fields(SceneConfig)}
        unknown = set(doc) - top - noise_keys - scene_keys
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: doc[k] for k in top if k in doc}
        if "agents" in kw:
            kw["agents"] = _canonical_agents(kw["agents"])
        try:
            cfg = cls(
                noise=NoiseConfig(**{k: float(doc[k]) for k in noise_keys if k in doc}),
                scene=SceneConfig(**{k: doc[k] for k in scene_keys if k in doc}),
                **kw,
            )
        except TypeError as e:
            raise ConfigError(str(e)) from e
        return cfg.validate()

    def replace(self, **changes):
        doc = self.to_dict()
        doc.update(changes)
        return ExperimentConfig.from_dict(doc)


def _canonical_agents(agents):
    if isinstance(agents, str):
        agents = [a.strip() for a in agents.split(",") if a.strip()]
    unknown = [a for a in agents if a not in AGENTS]
    if unknown:
        raise ConfigError(f"unknown agents {unknown}; choose from {AGENTS}")
    return tuple(a for a in AGENTS if a in agents)


def load_config(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------- trials


class TrialEnvironment:
    """Task sampler for one trial; tracks are generated lazily and cached."""

    def __init__(self, cfg: ExperimentConfig, trial: int):
        self.cfg = cfg
        self.trial = trial
        nz = cfg.noise
        meta_prior = Gaussian.isotropic(np.zeros(cfg.feature_dim), nz.sigmaQ2)
        mu_star = sample_gaussian(meta_prior, stream(cfg.seed, trial, "p_star"))
        self.p_star = Gaussian.isotropic(mu_star, nz.sigma02)
        self._worlds = {}

    def scene(self, stage):
        return self.world(stage).scene

    def world(self, stage):
        if stage not in self._worlds:
            cfg, seed, t = self.cfg, self.cfg.seed, self.trial
            scene = sample_task(self.p_star, stream(seed, t, "scene", stage), cfg.scene, cfg.noise.sigma2)
            self._worlds[stage] = make_world(
                scene, cfg.horizon, cfg.scene, stream(seed, t, "world", stage),
                sub_seed(seed, t, "noise", stage), sub_seed(seed, t, "measurement", stage),
            )
        return self._worlds[stage]

    def run_track(self, stage, agent, n, rng):
        try:
            return run_track_fast(self.world(stage), agent, n, rng, self.cfg.scene)
        except TrialFailure:
            raise
        except Exception as e:
            raise TrialFailure(self.trial, "?", stage, e) from e


@dataclass
class MetricsRecord:
    """Named series for one trial (or the cross-trial mean), plus standard errors after aggregation.

    Keys are ``"<agent>/<field>"`` for per-agent series and ``"kl"`` for the
    meta agent's plug-in KL per track.
    """

    series: dict
    stderr: dict = field(default_factory=dict)
    trials: int = 1

    def __getitem__(self, key):
        return self.series[key]

    def agents(self):
        return [a for a in AGENTS if f"{a}/regret" in self.series]


def _agent_series(tracks):
    regret = np.array([t.regret.sum() for t in tracks])
    lost = np.array([float(t.lost) for t in tracks])
    return {
        "regret": regret,
        "cum_regret": np.cumsum(regret),
        "lost": lost,
        "cum_lost": np.cumsum(lost),
        "mean_sinr": np.array([t.sinr_db.mean() for t in tracks]),
        "within_regret": np.mean([np.cumsum(t.regret) for t in tracks], axis=0),
        "rmse_final": tracks[-1].position_error.copy(),
    }


def run_trial(cfg: ExperimentConfig, trial: int) -> MetricsRecord:
    env = TrialEnvironment(cfg, trial)
    nz = cfg.noise
    m, n, d = cfg.tracks, cfg.horizon, cfg.feature_dim
    series = {}
    for name in cfg.agents:
        rng = stream(cfg.seed, trial, "agent", AGENTS.index(name))
        try:
            if name == "meta":
                outcomes = run_meta_ts(env, m, n, init_meta(d, nz.sigmaQ2, nz.sigma02, nz.sigma2), rng)
                tracks = [o.track for o in outcomes]
                series["kl"] = np.array([o.kl for o in outcomes])
            else:
                prior = env.p_star if name == "oracle" else uninformative_prior(d, nz.sigmaQ2, cfg.uninformative_scale)
                tracks = [env.run_track(s, init_agent(prior, nz.sigma2), n, rng) for s in range(m)]
        except TrialFailure as e:
            raise TrialFailure(trial, name, e.stage, e.__cause__) from e.__cause__
        for key, v in _agent_series(tracks).items():
            series[f"{name}/{key}"] = v
    return MetricsRecord(series)


def aggregate(records) -> MetricsRecord:
    """Elementwise cross-trial mean and standard error."""
    records = list(records)
    if not records:
        raise ShapeMismatch("no trials to aggregate")
    keys = set(records[0].series)
    for r in records[1:]:
        if set(r.series) != keys:
            raise ShapeMismatch("trial records carry different series")
    mean, se = {}, {}
    N = len(records)
    for k in sorted(keys):
        try:
            stack = np.stack([np.asarray(r.series[k], dtype=float) for r in records])
        except ValueError as e:
            raise ShapeMismatch(f"series {k!r} has inconsistent shapes") from e
        mean[k] = stack.mean(axis=0)
        se[k] = stack.std(axis=0, ddof=1) / np.sqrt(N) if N > 1 else np.zeros_like(mean[k])
    return MetricsRecord(mean, se, N)


def _run_trial_star(args):
    return run_trial(*args)


def run_experiment(cfg: ExperimentConfig, workers=1):
    """Run every trial; returns ``(per-trial records, aggregate)``."""
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_trial_star, jobs))
    else:
        records = [run_trial(*j) for j in jobs]
    return records, aggregate(records)


# ---------------------------------------------------------------- output


def _fmt(x):
    return "%.6g" % x


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


def summarize(agg: MetricsRecord, cfg: ExperimentConfig):
    m, n = cfg.tracks, cfg.horizon
    tail = slice(max(m - 10, 0), m)
    out = {"trials": agg.trials, "tracks": m, "horizon": n, "seed": cfg.seed, "agents": {}}
    for a in agg.agents():
        out["agents"][a] = {
            "cum_regret": float(agg[f"{a}/cum_regret"][-1]),
            "cum_regret_stderr": float(agg.stderr[f"{a}/cum_regret"][-1]),
            "cum_lost": float(agg[f"{a}/cum_lost"][-1]),
            "cum_lost_stderr": float(agg.stderr[f"{a}/cum_lost"][-1]),
            "mean_sinr_last10": float(agg[f"{a}/mean_sinr"][tail].mean()),
            "rmse_first20": float(agg[f"{a}/rmse_final"][:20].mean()),
        }
    if "uninformative/cum_lost" in agg.series and "meta/cum_lost" in agg.series:
        out["lost_tracks_gap"] = float(agg["uninformative/cum_lost"][-1] - agg["meta/cum_lost"][-1])
    if "kl" in agg.series:
        kl = agg["kl"]
        out["kl"] = {"first": float(kl[0]), "at_10": float(kl[min(9, m - 1)]), "last": float(kl[-1])}
    if "uninformative/within_regret" in agg.series and n >= 4:
        wr = agg["uninformative/within_regret"]
        q = n // 4
        ratio = float(wr[-1] / wr[q - 1]) if wr[q - 1] > 0 else None
        bound = 4.0 * np.sqrt(n / q)
        out["regret_growth_check"] = {
            "horizon": n, "quarter": q, "ratio": ratio, "bound": float(bound),
            "sublinear": bool(ratio is not None and ratio < bound),
        }
    return out


def emit_results(agg: MetricsRecord, cfg: ExperimentConfig, out_dir):
    """Write the CSV series plus ``config.json`` and ``summary.json``; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e
    agents = agg.agents()
    m, n = cfg.tracks, cfg.horizon

    def per_track(key):
        return [
            [s + 1, a, _fmt(agg[f"{a}/{key}"][s]), _fmt(agg.stderr[f"{a}/{key}"][s])]
            for s in range(m) for a in agents
        ]

    paths = {}
    paths["lost_tracks"] = out / "lost_tracks.csv"
    _write_csv(paths["lost_tracks"], ["track", "agent", "mean_cum_lost", "stderr"], per_track("cum_lost"))
    paths["kl"] = out / "kl.csv"
    kl_rows = []
    if "kl" in agg.series:
        kl_rows = [[s + 1, _fmt(agg["kl"][s]), _fmt(agg.stderr["kl"][s])] for s in range(m)]
    _write_csv(paths["kl"], ["track", "kl_mean", "kl_stderr"], kl_rows)
    paths["regret"] = out / "regret.csv"
    _write_csv(paths["regret"], ["track", "agent", "cum_regret_mean", "stderr"], per_track("cum_regret"))
    paths["sinr"] = out / "sinr.csv"
    _write_csv(paths["sinr"], ["track", "agent", "mean_sinr_db", "stderr"], per_track("mean_sinr"))
    paths["rmse"] = out / "rmse_final_track.csv"
    _write_csv(paths["rmse"], ["cpi", "agent", "rmse_m", "stderr"], [
        [k + 1, a, _fmt(agg[f"{a}/rmse_final"][k]), _fmt(agg.stderr[f"{a}/rmse_final"][k])]
        for k in range(n) for a in agents
    ])
    paths["config"] = out / "config.json"
    paths["summary"] = out / "summary.json"
    try:
        paths["config"].write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
        paths["summary"].write_text(json.dumps(summarize(agg, cfg), indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"cannot write results in {out}: {e}") from e
    return paths


def default_out_dir():
    return os.environ.get(OUT_DIR_ENV, "results")
