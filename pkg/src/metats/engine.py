"""Compiled track loop used by the Monte Carlo harness.

Computes exactly what :func:`metats.radar.run_track` computes, with the
random draws supplied up front: the same generators consumed in the same
order, so both paths choose the same waveforms. The op-by-op version stays
the reference and is cross-checked against this one in the tests.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .bandit import AgentState
from .gaussian import LinearPosterior, NotPositiveDefinite, symmetrize
from .radar import SceneConfig, TrackResult, TrackWorld


@njit(cache=True)
def _track_kernel(table, ref_range, clip, theta, noise_sd, obs, positions, est0, cov0,
                  dt, q, meas_sigma2, threshold, window, prec0, shift0, noise_var, z, eta, xi):
    n = obs.size
    d = theta.size
    K = table.shape[1]
    design = np.empty((n, d))
    losses = np.empty(n)
    regret = np.empty(n)
    sinr = np.empty(n)
    chosen = np.empty(n, dtype=np.int64)
    err = np.empty(n)
    prec = prec0.copy()
    shift = shift0.copy()
    est = est0.copy()
    P = cov0.copy()
    L = np.zeros((d, d))
    y = np.empty(d)
    th = np.empty(d)
    ctx = np.empty((K, d))
    F = np.eye(4)
    F[0, 2] = dt
    F[1, 3] = dt
    below = 0
    lost_at = -1
    status = 0
    fail_at = -1
    for k in range(n):
        # tracker predict
        est = F @ est
        P = F @ P @ F.T
        P[2, 2] += q * dt
        P[3, 3] += q * dt
        P = 0.5 * (P + P.T)
        rng_ = np.sqrt(est[0] * est[0] + est[1] * est[1])
        if not rng_ > 0:
            status = 2
            fail_at = k
            break
        g = (rng_ / ref_range) ** 2
        o = obs[k]
        for w in range(K):
            for j in range(d):
                v = table[o, w, j] * g
                ctx[w, j] = min(max(v, -clip), clip)

        # posterior sample: theta = L^-T (L^-1 b + z)
        ok = True
        for attempt in range(2):
            jit = 0.0 if attempt == 0 else 1e-10
            ok = True
            for i in range(d):
                for j in range(i + 1):
                    s = prec[i, j] + (jit if i == j else 0.0)
                    for m in range(j):
                        s -= L[i, m] * L[j, m]
                    if i == j:
                        if s <= 1e-12:
                            ok = False
                            break
                        L[i, i] = np.sqrt(s)
                    else:
                        L[i, j] = s / L[j, j]
                if not ok:
                    break
            if ok:
                break
        if not ok:
            status = 1
            fail_at = k
            break
        for i in range(d):
            s = shift[i]
            for m in range(i):
                s -= L[i, m] * y[m]
            y[i] = s / L[i, i]
        for i in range(d):
            y[i] += z[k, i]
        for i in range(d - 1, -1, -1):
            s = y[i]
            for m in range(i + 1, d):
                s -= L[m, i] * th[m]
            th[i] = s / L[i, i]
        best = 0
        best_val = np.inf
        opt_val = np.inf
        chosen_mean = 0.0
        for w in range(K):
            v = 0.0
            t = 0.0
            for j in range(d):
                v += ctx[w, j] * th[j]
                t += ctx[w, j] * theta[j]
            if v < best_val:
                best_val = v
                best = w
            if t < opt_val:
                opt_val = t
        for j in range(d):
            chosen_mean += ctx[best, j] * theta[j]
            design[k, j] = ctx[best, j]
        loss = chosen_mean + noise_sd * eta[k]

        # conjugate update
        for i in range(d):
            shift[i] += design[k, i] * (loss / noise_var)
            for j in range(d):
                prec[i, j] += design[k, i] * design[k, j] / noise_var
        prec = 0.5 * (prec + prec.T)

        s_db = -loss
        r_var = meas_sigma2 / 10.0 ** (s_db / 10.0)
        zx = positions[k, 0] + np.sqrt(r_var) * xi[k, 0]
        zy = positions[k, 1] + np.sqrt(r_var) * xi[k, 1]
        # tracker correct, Joseph form
        S = P[:2, :2].copy()
        S[0, 0] += r_var
        S[1, 1] += r_var
        det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
        Si = np.empty((2, 2))
        Si[0, 0] = S[1, 1] / det
        Si[1, 1] = S[0, 0] / det
        Si[0, 1] = -S[0, 1] / det
        Si[1, 0] = -S[1, 0] / det
        Kg = np.ascontiguousarray(P[:, :2]) @ Si
        A = np.eye(4)
        A[:, :2] -= Kg
        P = A @ P @ A.T + r_var * (Kg @ Kg.T)
        P = 0.5 * (P + P.T)
        ix = zx - est[0]
        iy = zy - est[1]
        for i in range(4):
            est[i] += Kg[i, 0] * ix + Kg[i, 1] * iy

        below = below + 1 if s_db < threshold else 0
        if below >= window and lost_at < 0:
            lost_at = k
        losses[k] = loss
        regret[k] = max(chosen_mean - opt_val, 0.0)
        sinr[k] = s_db
        chosen[k] = best
        ex = est[0] - positions[k, 0]
        ey = est[1] - positions[k, 1]
        err[k] = np.sqrt(ex * ex + ey * ey)
    return design, losses, regret, sinr, chosen, err, lost_at, prec, shift, status, fail_at


def run_track_fast(world: TrackWorld, agent: AgentState, n, rng, cfg: SceneConfig) -> TrackResult:
    """Drop-in replacement for :func:`metats.radar.run_track`."""
    scene = world.scene
    if n > world.states.size:
        raise ValueError(f"world has {world.states.size} CPIs, asked for {n}")
    post = agent.posterior
    d = post.dim
    z = rng.standard_normal((n, d))
    eta = np.random.default_rng(world.noise_seed).standard_normal(n)
    xi = np.random.default_rng(world.measurement_seed).standard_normal((n, 2))
    out = _track_kernel(
        scene.feature_table, float(scene.reference_range), float(scene.feature_clip),
        scene.true_theta, float(np.sqrt(scene.loss_noise_variance)),
        world.observations[:n].astype(np.int64), world.positions[:n], world.cue.estimate, world.cue.covariance,
        float(cfg.dt), float(cfg.process_noise), float(cfg.meas_sigma) ** 2,
        float(cfg.lost_threshold_db), int(cfg.lost_window),
        post.precision, post.shift, float(post.noise_variance), z, eta, xi,
    )
    design, losses, regret, sinr, chosen, err, lost_at, prec, shift, status, fail_at = out
    if status == 1:
        raise NotPositiveDefinite(f"posterior precision lost positive definiteness at CPI {fail_at}")
    if status == 2:
        raise ValueError(f"predicted track range is not positive at CPI {fail_at}")
    final = AgentState(LinearPosterior(symmetrize(prec), shift, post.noise_variance), agent.prior_used)
    return TrackResult(design, losses, regret, sinr, chosen, err, lost_at >= 0, int(lost_at),
                       world.observations[:n].copy(), final)
