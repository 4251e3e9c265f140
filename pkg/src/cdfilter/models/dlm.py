"""First-order dynamic linear model with a moving-window filtered sampler.

Model: y_t ~ N(theta_t, sigma^2), theta_t ~ N(phi * theta_{t-1}, tau^2),
|phi| < 1, with priors sigma^2 ~ IG(a0, b0), tau^2 ~ IG(c0, d0),
phi ~ U(-1, 1) and theta_0 ~ N(0, h0).

While t <= window the sampler is the exact single-site Gibbs sweep over the
whole latent path (the lag parameter moves by random-walk Metropolis, its
conditional being a truncated normal known only up to the constraint).
Beyond that, latents older than the window are frozen at their last draw
mean and enter through four propagated scalars:

    C1 = 1/2 sum (y_s - th_s)^2       over frozen s
    C2 = 1/2 sum th_{s-1}^2           over frozen transitions
    C3 = 1/2 sum th_s th_{s-1}
    C4 = 1/2 sum th_s^2

so that C4 - 2 phi C3 + phi^2 C2 recovers half the frozen sum of squared
innovations, which is exactly the inverse-gamma rate contribution the full
conditional needs.
"""

from __future__ import annotations

import math

import numpy as np

from ..base import StreamingSampler
from ..engine import Group, SamplerState, metropolis_step, step_shard
from ..errors import ShardShapeError
from ..numerics import RngStream, sample_invgamma

__all__ = [
    "sweep_latents",
    "tau2_rate",
    "sigma2_rate",
    "phi_moments",
    "phi_mh_chain",
    "CdfDlm",
]


def sweep_latents(theta, ys, anchor, phi, tau2, sigma2, z, theta0_update=False,
                  h0=10.0):
    """One forward single-site Gibbs pass over the latent window, in place.

    ``theta`` is a Python list (fast scalar access); ``anchor`` is the value
    of the latent just left of the window (a frozen estimate, or the
    sampled theta_0 during the exact phase).  ``z`` supplies one standard
    normal per position.  Returns the updated anchor when
    ``theta0_update`` is set (exact phase samples theta_0 too).
    """
    m = len(theta)
    w_y = 1.0 / sigma2
    w_t = phi / tau2
    if theta0_update and m:
        prec0 = 1.0 / h0 + phi * phi / tau2
        anchor = (w_t * theta[0]) / prec0 + z[-1] / math.sqrt(prec0)
    prec_i = w_y + (1.0 + phi * phi) / tau2
    sd_i = 1.0 / math.sqrt(prec_i)
    prec_t = w_y + 1.0 / tau2
    sd_t = 1.0 / math.sqrt(prec_t)
    left = anchor
    for i in range(m - 1):
        val = (w_y * ys[i] + w_t * (left + theta[i + 1])) / prec_i + sd_i * z[i]
        theta[i] = val
        left = val
    if m:
        theta[m - 1] = (w_y * ys[m - 1] + w_t * left) / prec_t + sd_t * z[m - 1]
    return anchor


def tau2_rate(d0, c2, c3, c4, phi, theta, anchor) -> float:
    """Innovation-variance conditional rate: prior + frozen part via the
    propagated scalars + the within-window squared innovations."""
    frozen = c4 - 2.0 * phi * c3 + phi * phi * c2
    arr = np.asarray(theta)
    prev = np.concatenate(([anchor], arr[:-1]))
    window = 0.5 * float(np.sum((arr - phi * prev) ** 2))
    return d0 + frozen + window


def sigma2_rate(b0, c1, theta, ys) -> float:
    """Observation-variance conditional rate."""
    return b0 + c1 + 0.5 * float(np.sum((np.asarray(ys) - np.asarray(theta)) ** 2))


def phi_moments(c2, c3, theta, anchor):
    """(num, den) of the lag conditional: the target is
    N(num / den, tau^2 / den) restricted to (-1, 1)."""
    arr = np.asarray(theta)
    prev = np.concatenate(([anchor], arr[:-1]))
    num = 2.0 * c3 + float(arr @ prev)
    den = 2.0 * c2 + float(prev @ prev)
    return num, den


def phi_mh_chain(phi, num, den, tau2, n_steps, rng: RngStream, step_size=0.1):
    """Random-walk Metropolis steps for the lag parameter.

    Returns (last value, acceptance count).  Proposals outside (-1, 1) are
    always rejected through the hard constraint in the log target.
    """

    def log_target(v):
        if abs(v) >= 1.0:
            return -math.inf
        return -(den * v * v - 2.0 * num * v) / (2.0 * tau2)

    accepted = 0
    for _ in range(n_steps):
        phi, ok = metropolis_step(phi, log_target, step_size, rng)
        accepted += ok
    return phi, accepted


class CdfDlm(StreamingSampler):
    """Moving-window filtered sampler for the AR(1) state-space model.

    ``n_draws`` Gibbs sweeps run per observation; within each sweep the lag
    parameter advances by ``n_mh // n_draws`` Metropolis sub-steps so one
    observation consumes ``n_mh`` Metropolis proposals in total.
    """

    def __init__(self, n_draws: int = 50, n_mh: int = 500, window: int = 100,
                 a0: float = 1.0, b0: float = 1.0, c0: float = 1.0, d0: float = 1.0,
                 h0: float = 10.0, phi_step: float = 0.1,
                 random_state: int | None = None):
        self.n_draws = n_draws
        self.n_mh = n_mh
        self.window = window
        self.a0 = a0
        self.b0 = b0
        self.c0 = c0
        self.d0 = d0
        self.h0 = h0
        self.phi_step = phi_step
        self.random_state = random_state

    def _init_state(self) -> None:
        state = SamplerState(self._rng_root())
        for cid in ("C1", "C2", "C3", "C4"):
            state.register_stat(cid, 0.0)
        state.slots["win_theta"] = []          # latent values, oldest first
        state.slots["win_y"] = []              # matching observations
        state.slots["theta0_cur"] = 0.0
        state.slots["frozen"] = [0.0]          # frozen path [th0_hat, th1_hat, ...]
        state.slots["win_means"] = []
        state.slots["tau2_cur"] = 1.0
        state.slots["sigma2_cur"] = 1.0
        state.slots["phi_cur"] = 0.0
        state.slots["mh_accept"] = 0.0
        state.slots["mh_total"] = 0.0
        state.estimates["phi"] = 0.0
        state.estimates["tau2"] = 1.0
        state.estimates["sigma2"] = 1.0
        self.state_ = state
        self.groups_ = [
            Group("window_block", params=("theta_t", "tau2", "sigma2", "phi"),
                  update_stats=self._absorb_observation, sample=self._sample_sweeps,
                  estimate=self._estimate_block),
            Group("frozen_path", params=(),
                  update_stats=self._freeze_outgoing, sample=None),
        ]

    @property
    def groups(self):
        return self.groups_

    def validate_shard(self, state, shard) -> None:
        if not np.isfinite(shard):
            raise ShardShapeError("observation must be a finite scalar")

    def _absorb_observation(self, state: SamplerState, y_t: float) -> None:
        theta = state.slots["win_theta"]
        prev = theta[-1] if theta else state.slots["frozen"][-1]
        theta.append(state.slots["phi_cur"] * prev)  # one-step prediction start
        state.slots["win_y"].append(float(y_t))

    def _exact_phase(self, state: SamplerState) -> bool:
        return state.t <= self.window

    def _sample_sweeps(self, state: SamplerState, y_t, n_draws, rng: RngStream):
        theta = state.slots["win_theta"]
        ys = state.slots["win_y"]
        exact = self._exact_phase(state)
        anchor = state.slots["theta0_cur"] if exact else state.slots["frozen"][-1]
        tau2 = state.slots["tau2_cur"]
        sigma2 = state.slots["sigma2_cur"]
        phi = state.slots["phi_cur"]
        c1, c2 = state.stat("C1"), state.stat("C2")
        c3, c4 = state.stat("C3"), state.stat("C4")
        t = state.t
        m = len(theta)
        mh_per_sweep = max(1, self.n_mh // n_draws)
        out = {k: np.empty(n_draws) for k in ("theta_t", "tau2", "sigma2", "phi")}
        sums = np.zeros(m)
        anchor_sum = 0.0
        zmat = rng.standard_normal((n_draws, m + 1))
        for s in range(n_draws):
            anchor = sweep_latents(theta, ys, anchor, phi, tau2, sigma2, zmat[s],
                                   theta0_update=exact, h0=self.h0)
            rate_tau = tau2_rate(self.d0, c2, c3, c4, phi, theta, anchor)
            tau2 = float(sample_invgamma(self.c0 + 0.5 * t, rate_tau, rng))
            rate_sig = sigma2_rate(self.b0, c1, theta, ys)
            sigma2 = float(sample_invgamma(self.a0 + 0.5 * t, rate_sig, rng))
            num, den = phi_moments(c2, c3, theta, anchor)
            phi, acc = phi_mh_chain(phi, num, den, tau2, mh_per_sweep, rng,
                                    self.phi_step)
            state.slots["mh_accept"] += acc
            state.slots["mh_total"] += mh_per_sweep
            sums += theta
            anchor_sum += anchor
            out["theta_t"][s] = theta[-1]
            out["tau2"][s] = tau2
            out["sigma2"][s] = sigma2
            out["phi"][s] = phi
        state.slots["win_means"] = list(sums / n_draws)
        state.slots["theta0_mean"] = anchor_sum / n_draws
        state.slots["theta0_cur"] = anchor
        state.slots["tau2_cur"] = tau2
        state.slots["sigma2_cur"] = sigma2
        state.slots["phi_cur"] = phi
        return out

    def _estimate_block(self, state, draws):
        return {
            "theta_t": float(draws["theta_t"].mean()),
            "tau2": float(draws["tau2"].mean()),
            "sigma2": float(draws["sigma2"].mean()),
            "phi": float(draws["phi"].mean()),
        }

    def _freeze_outgoing(self, state: SamplerState, y_t) -> None:
        theta = state.slots["win_theta"]
        if len(theta) < self.window:
            return
        frozen = state.slots["frozen"]
        if state.t == self.window:
            # theta_0 leaves the sampled set together with the first latent
            frozen[0] = state.slots["theta0_mean"]
        th_out = state.slots["win_means"][0]
        th_prev = frozen[-1]
        y_out = state.slots["win_y"][0]
        state.add_to_stat("C1", 0.5 * (y_out - th_out) ** 2)
        state.add_to_stat("C2", 0.5 * th_prev * th_prev)
        state.add_to_stat("C3", 0.5 * th_prev * th_out)
        state.add_to_stat("C4", 0.5 * th_out * th_out)
        frozen.append(th_out)
        del theta[0]
        del state.slots["win_y"][0]
        del state.slots["win_means"][0]

    def partial_fit(self, y_t):
        if not hasattr(self, "state_"):
            self._init_state()
        _, batch = step_shard(self.state_, float(y_t), self, self.n_draws)
        self._record(batch)
        return self

    # -- fitted results ------------------------------------------------------
    @property
    def latent_path_estimate_(self) -> np.ndarray:
        """Estimates for theta_1..theta_t: frozen values then window means."""
        frozen = self.state_.slots["frozen"][1:]
        return np.array(frozen + self.state_.slots["win_means"])

    @property
    def phi_estimate_(self) -> float:
        return float(self.state_.estimate("phi"))

    @property
    def mh_acceptance_(self) -> float:
        tot = self.state_.slots["mh_total"]
        return self.state_.slots["mh_accept"] / tot if tot else float("nan")

    def tracked_nbytes(self) -> int:
        """Propagated scalars plus the moving window."""
        return self.state_.scss_nbytes() + 16 * len(self.state_.slots["win_theta"])
