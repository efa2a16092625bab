"""Finite-state target channel, target kinematics, tracker and lost-track rule.

The channel state follows an order-``r`` Markov process that ignores the
radar's transmissions. The radar observes the state through a noisy kernel,
sees a (average, worst-case) relative-loss feature pair per waveform, and
receives loss ``<theta, phi> + eta`` in dB, i.e. ``SINR_dB = -loss``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields

import numpy as np

from .bandit import AgentState, RoundRecord, select_waveform, update_agent, instant_regret
from .gaussian import DimensionMismatch, Gaussian, NotPositiveDefinite, cholesky, sample_gaussian, symmetrize

FEATURE_DIM = 2


class NonPositiveRange(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    """Scene randomization and kinematics settings. All defaults are modelling choices."""

    states: int = 4
    waveforms: int = 5
    memory_order: int = 2
    obs_diag: float = 0.85
    transition_concentration: float = 1.0
    transition_stickiness: float = 0.6
    loss_center_low: float = -12.0
    loss_center_high: float = 4.0
    loss_spread_low: float = 1.0
    loss_spread_high: float = 6.0
    worst_case_min_prob: float = 0.01
    reference_range: float = 10_000.0
    feature_clip: float = 1_000.0
    # kinematics / tracking
    dt: float = 0.1
    process_noise: float = 0.5
    max_speed: float = 300.0
    range_low: float = 9_000.0
    range_high: float = 11_000.0
    speed_low: float = 20.0
    speed_high: float = 150.0
    meas_sigma: float = 50.0
    cue_pos_sigma: float = 300.0
    cue_vel_sigma: float = 30.0
    lost_threshold_db: float = 3.0
    lost_window: int = 5

    def validate(self):
        if self.states < 1 or self.waveforms < 1 or self.memory_order < 1:
            raise ValueError("states, waveforms and memory_order must be >= 1")
        if not 0.5 <= self.obs_diag <= 1.0:
            raise ValueError("obs_diag must lie in [0.5, 1]")
        if not 0.0 <= self.transition_stickiness <= 1.0:
            raise ValueError("transition_stickiness must lie in [0, 1]")
        if self.loss_center_low > self.loss_center_high or self.loss_spread_low > self.loss_spread_high:
            raise ValueError("loss ranges must have low <= high")
        for name in ("reference_range", "dt", "max_speed", "meas_sigma", "range_low", "feature_clip"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.range_low > self.range_high or self.speed_low > self.speed_high:
            raise ValueError("kinematic ranges must have low <= high")
        if self.speed_high > self.max_speed:
            raise ValueError("speed_high exceeds max_speed")
        if self.lost_window < 1:
            raise ValueError("lost_window must be >= 1")


def _check_stochastic(a, name):
    a = np.asarray(a, dtype=float)
    if np.any(a < 0) or not np.allclose(a.sum(axis=-1), 1.0, rtol=0, atol=1e-12):
        raise ValueError(f"{name} rows must be non-negative and sum to 1")
    return a


def _normalize_rows(a):
    a = np.asarray(a, dtype=float)
    return a / a.sum(axis=-1, keepdims=True)


def stationary_marginal(transition):
    """Long-run marginal of the current state for an order-r kernel ``P[s_{k-r+1}, ..., s_k, s_{k+1}]``."""
    S = transition.shape[-1]
    r = transition.ndim - 1
    histories = list(itertools.product(range(S), repeat=r))
    index = {h: i for i, h in enumerate(histories)}
    P = np.zeros((len(histories), len(histories)))
    for h in histories:
        for b in range(S):
            P[index[h], index[h[1:] + (b,)]] += transition[h + (b,)]
    A = np.vstack([P.T - np.eye(len(histories)), np.ones(len(histories))])
    rhs = np.zeros(len(histories) + 1)
    rhs[-1] = 1.0
    pi = np.clip(np.linalg.lstsq(A, rhs, rcond=None)[0], 0.0, None)
    pi /= pi.sum()
    marg = np.zeros(S)
    for h, p in zip(histories, pi):
        marg[h[-1]] += p
    return marg


@dataclass(frozen=True)
class Scene:
    """One task: channel kernels, relative-loss table and the true loss parameter."""

    transition: np.ndarray  # shape (S,)*r + (S,)
    observation: np.ndarray  # (S, S), row s is P(o | s)
    relative_loss: np.ndarray  # (S, K), dB
    true_theta: np.ndarray  # (d,)
    loss_noise_variance: float = 1.0
    reference_range: float = 10_000.0
    feature_clip: float = 1_000.0
    worst_case_min_prob: float = 0.01
    feature_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        T = _check_stochastic(self.transition, "transition kernel")
        O = _check_stochastic(self.observation, "observation kernel")
        R = np.asarray(self.relative_loss, dtype=float)
        theta = np.asarray(self.true_theta, dtype=float)
        S = O.shape[0]
        if O.shape != (S, S) or T.shape[-1] != S or any(n != S for n in T.shape):
            raise DimensionMismatch("kernel shapes disagree on the state count")
        if R.ndim != 2 or R.shape[0] != S:
            raise DimensionMismatch("relative-loss table must be states x waveforms")
        if theta.shape != (FEATURE_DIM,):
            raise DimensionMismatch(f"true_theta must have length {FEATURE_DIM}")
        if np.any(np.diag(O) < 0.5):
            raise ValueError("observation kernel diagonal must be at least 0.5")
        for name, v in (("transition", T), ("observation", O), ("relative_loss", R), ("true_theta", theta)):
            object.__setattr__(self, name, v)

        # state posterior given an observation, under the stationary state marginal
        joint = O * stationary_marginal(T)[:, None]  # [s, o]
        col = joint.sum(axis=0)
        post = np.where(col > 0, joint / np.where(col > 0, col, 1.0), 1.0 / S).T  # [o, s]
        avg = post @ R
        worst = np.empty_like(avg)
        for o in range(S):
            support = post[o] > self.worst_case_min_prob
            if not support.any():
                support = post[o] == post[o].max()
            worst[o] = R[support].max(axis=0)
        object.__setattr__(self, "feature_table", np.stack([avg, worst], axis=-1))  # [o, w, 2]

    @property
    def state_count(self):
        return self.observation.shape[0]

    @property
    def waveform_count(self):
        return self.relative_loss.shape[1]

    @property
    def memory_order(self):
        return self.transition.ndim - 1

    def to_dict(self):
        return {
            "transition": self.transition.tolist(),
            "observation": self.observation.tolist(),
            "relative_loss": self.relative_loss.tolist(),
            "true_theta": self.true_theta.tolist(),
            "loss_noise_variance": self.loss_noise_variance,
            "reference_range": self.reference_range,
            "feature_clip": self.feature_clip,
            "worst_case_min_prob": self.worst_case_min_prob,
        }

    @classmethod
    def from_dict(cls, doc):
        names = {f.name for f in fields(cls) if f.init}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown scene fields: {sorted(unknown)}")
        return cls(**doc)


def _random_transition(cfg: SceneConfig, rng):
    S, r = cfg.states, cfg.memory_order
    shape = (S,) * r + (S,)
    rows = rng.dirichlet(np.full(S, cfg.transition_concentration), size=S**r).reshape(shape)
    stay = np.zeros(shape)
    for h in itertools.product(range(S), repeat=r):
        stay[h + (h[-1],)] = 1.0
    return _normalize_rows((1.0 - cfg.transition_stickiness) * rows + cfg.transition_stickiness * stay)


def _observation_kernel(S, diag):
    if S == 1:
        return np.ones((1, 1))
    O = np.full((S, S), (1.0 - diag) / (S - 1))
    np.fill_diagonal(O, diag)
    return _normalize_rows(O)


def sample_task(p_star: Gaussian, rng: np.random.Generator, cfg: SceneConfig = SceneConfig(), noise_variance=1.0) -> Scene:
    if p_star.dim != FEATURE_DIM:
        raise DimensionMismatch(f"task prior must have d={FEATURE_DIM}")
    theta = sample_gaussian(p_star, rng)
    transition = _random_transition(cfg, rng)
    centers = rng.uniform(cfg.loss_center_low, cfg.loss_center_high, size=cfg.waveforms)
    spreads = rng.uniform(cfg.loss_spread_low, cfg.loss_spread_high, size=cfg.waveforms)
    table = centers + spreads * rng.standard_normal((cfg.states, cfg.waveforms))
    return Scene(
        transition,
        _observation_kernel(cfg.states, cfg.obs_diag),
        table,
        theta,
        loss_noise_variance=noise_variance,
        reference_range=cfg.reference_range,
        feature_clip=cfg.feature_clip,
        worst_case_min_prob=cfg.worst_case_min_prob,
    )


def _draw(row, rng):
    u = rng.random()
    return min(int(np.searchsorted(np.cumsum(row), u, side="right")), row.size - 1)


def initial_state(scene: Scene, rng) -> int:
    return _draw(stationary_marginal(scene.transition), rng)


def step_state(scene: Scene, history, rng) -> int:
    """Next state given the most recent states (oldest first).

    Histories shorter than the memory order are left-padded with their
    earliest state.
    """
    r = scene.memory_order
    history = list(history)
    if not history:
        raise ValueError("step_state needs at least one past state")
    h = history[-r:]
    h = [h[0]] * (r - len(h)) + h
    return _draw(scene.transition[tuple(h)], rng)


def observe_state(scene: Scene, s, rng) -> int:
    return _draw(scene.observation[s], rng)


def range_scale(track_range, reference_range):
    if not track_range > 0:
        raise NonPositiveRange(f"track range must be positive, got {track_range}")
    return (track_range / reference_range) ** 2


def context_features(scene: Scene, o, track_range):
    """K x 2 matrix of (average, worst-case) relative loss scaled by (r / r0)^2."""
    g = range_scale(track_range, scene.reference_range)
    return np.clip(scene.feature_table[o] * g, -scene.feature_clip, scene.feature_clip)


def realize_loss(scene: Scene, phi, rng) -> float:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != scene.true_theta.shape:
        raise DimensionMismatch(f"feature has shape {phi.shape}")
    mean = float(scene.true_theta @ phi)
    if scene.loss_noise_variance == 0:
        return mean
    return mean + np.sqrt(scene.loss_noise_variance) * rng.standard_normal()


# ---------------------------------------------------------------- kinematics


@dataclass(frozen=True)
class TargetState:
    position: np.ndarray
    velocity: np.ndarray


def step_target(t: TargetState, dt, rng, q=0.5, max_speed=300.0) -> TargetState:
    """Constant-velocity move, then white velocity noise with variance ``q * dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    position = t.position + t.velocity * dt
    velocity = t.velocity
    if q > 0:
        velocity = velocity + np.sqrt(q * dt) * rng.standard_normal(2)
    speed = np.hypot(*velocity)
    if speed > max_speed:
        velocity = velocity * (max_speed / speed)
    return TargetState(position, velocity)


@dataclass(frozen=True)
class TrackerState:
    estimate: np.ndarray  # (x, y, vx, vy)
    covariance: np.ndarray  # 4 x 4


_H = np.hstack([np.eye(2), np.zeros((2, 2))])


def _cv_matrices(dt, q):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    Q = np.diag([0.0, 0.0, q * dt, q * dt])
    return F, Q


def tracker_predict(tr: TrackerState, dt, q=0.5) -> TrackerState:
    F, Q = _cv_matrices(dt, q)
    return TrackerState(F @ tr.estimate, symmetrize(F @ tr.covariance @ F.T + Q))


def tracker_correct(tr: TrackerState, measured_position, sinr_db, meas_sigma2=2500.0) -> TrackerState:
    """Position-measurement update with noise ``meas_sigma2 / SINR_linear`` per axis."""
    R = (meas_sigma2 / 10.0 ** (sinr_db / 10.0)) * np.eye(2)
    P = tr.covariance
    S = P[:2, :2] + R
    K = np.linalg.solve(S, P[:2, :]).T  # P H^T S^-1, S symmetric
    innov = np.asarray(measured_position, dtype=float) - tr.estimate[:2]
    A = np.eye(4) - K @ _H
    P_new = symmetrize(A @ P @ A.T + K @ R @ K.T)  # Joseph form
    if not np.all(np.isfinite(P_new)):
        raise NotPositiveDefinite("tracker covariance is not finite")
    return TrackerState(tr.estimate + K @ innov, P_new)


def tracker_update(tr: TrackerState, measured_position, sinr_db, dt, q=0.5, meas_sigma2=2500.0) -> TrackerState:
    if not np.all(np.isfinite(tr.covariance)):
        raise NotPositiveDefinite("tracker covariance is not finite")
    cholesky(tr.covariance)
    return tracker_correct(tracker_predict(tr, dt, q), measured_position, sinr_db, meas_sigma2)


@dataclass(frozen=True)
class LostTrackDetector:
    threshold: float = 3.0
    window: int = 5
    consecutive_below: int = 0
    tripped: bool = False


def detect_lost_track(det: LostTrackDetector, sinr_db) -> LostTrackDetector:
    below = det.consecutive_below + 1 if sinr_db < det.threshold else 0
    return LostTrackDetector(det.threshold, det.window, below, det.tripped or below >= det.window)


# ---------------------------------------------------------------- one track


@dataclass(frozen=True)
class TrackWorld:
    """Everything about one track that does not depend on the radar's choices."""

    scene: Scene
    states: np.ndarray
    observations: np.ndarray
    positions: np.ndarray  # true target position at each CPI
    cue: TrackerState  # initial tracker state
    noise_seed: int  # loss noise stream, replayed identically for every agent
    measurement_seed: int


def make_world(scene: Scene, n, cfg: SceneConfig, rng, noise_seed, measurement_seed) -> TrackWorld:
    states = np.empty(n, dtype=int)
    obs = np.empty(n, dtype=int)
    history = []
    for k in range(n):
        s = initial_state(scene, rng) if k == 0 else step_state(scene, history, rng)
        history.append(s)
        states[k] = s
    for k in range(n):
        obs[k] = observe_state(scene, states[k], rng)

    bearing = rng.uniform(0, 2 * np.pi)
    rng0 = rng.uniform(cfg.range_low, cfg.range_high)
    heading = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(cfg.speed_low, cfg.speed_high)
    target = TargetState(rng0 * np.array([np.cos(bearing), np.sin(bearing)]), speed * np.array([np.cos(heading), np.sin(heading)]))
    P0 = np.diag([cfg.cue_pos_sigma**2] * 2 + [cfg.cue_vel_sigma**2] * 2)
    truth0 = np.concatenate([target.position, target.velocity])
    cue = TrackerState(truth0 + np.sqrt(np.diag(P0)) * rng.standard_normal(4), P0)
    positions = np.empty((n, 2))
    for k in range(n):
        target = step_target(target, cfg.dt, rng, cfg.process_noise, cfg.max_speed)
        positions[k] = target.position
    return TrackWorld(scene, states, obs, positions, cue, int(noise_seed), int(measurement_seed))


@dataclass
class TrackResult:
    design: np.ndarray
    losses: np.ndarray
    regret: np.ndarray
    sinr_db: np.ndarray
    chosen: np.ndarray
    position_error: np.ndarray
    lost: bool
    lost_at: int  # CPI index where the detector tripped, -1 if never
    observations: np.ndarray
    final_agent: AgentState = field(repr=False)

    @property
    def rounds(self):
        return [
            RoundRecord(int(o), int(w), self.design[k], float(self.losses[k]), float(self.regret[k]))
            for k, (o, w) in enumerate(zip(self.observations, self.chosen))
        ]


def run_track(world: TrackWorld, agent: AgentState, n, rng, cfg: SceneConfig) -> TrackResult:
    """Play ``n`` CPIs: predict, pick a waveform, observe the loss, update tracker and agent."""
    scene = world.scene
    if n > world.states.size:
        raise ValueError(f"world has {world.states.size} CPIs, asked for {n}")
    noise_rng = np.random.default_rng(world.noise_seed)
    meas_rng = np.random.default_rng(world.measurement_seed)
    meas_sigma2 = cfg.meas_sigma**2
    det = LostTrackDetector(cfg.lost_threshold_db, cfg.lost_window)
    tracker = world.cue
    d = scene.true_theta.size
    design = np.empty((n, d))
    losses = np.empty(n)
    regret = np.empty(n)
    sinr = np.empty(n)
    chosen = np.empty(n, dtype=int)
    err = np.empty(n)
    lost_at = -1
    for k in range(n):
        pred = tracker_predict(tracker, cfg.dt, cfg.process_noise)
        ctx = context_features(scene, world.observations[k], float(np.hypot(*pred.estimate[:2])))
        w = select_waveform(agent, ctx, rng)
        phi = ctx[w]
        loss = realize_loss(scene, phi, noise_rng)
        agent = update_agent(agent, phi, loss)
        s_db = -loss
        z = world.positions[k] + np.sqrt(meas_sigma2 / 10.0 ** (s_db / 10.0)) * meas_rng.standard_normal(2)
        tracker = tracker_correct(pred, z, s_db, meas_sigma2)
        det = detect_lost_track(det, s_db)
        if det.tripped and lost_at < 0:
            lost_at = k
        design[k] = phi
        losses[k] = loss
        regret[k] = instant_regret(scene.true_theta, ctx, w)
        sinr[k] = s_db
        chosen[k] = w
        err[k] = np.hypot(*(tracker.estimate[:2] - world.positions[k]))
    return TrackResult(design, losses, regret, sinr, chosen, err, det.tripped, lost_at, world.observations[:n].copy(), agent)
