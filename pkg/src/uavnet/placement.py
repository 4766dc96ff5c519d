"""Energy-efficient fair UAV placement via deterministic-policy actor-critic control.

J UAVs fly continuously in a 3-D airspace box serving N quasi-stationary users,
one user per UAV per slot, matched greedily by achievable rate subject to a
minimum-rate QoS threshold. The per-slot reward is Jain-fairness-weighted sum
rate per joule, minus unit penalties for airspace-boundary violations and for
breaking UAV-to-UAV connectivity. Baselines: uniform random actions and a
one-step-lookahead greedy over sampled candidate actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel, env
from .env import MovementAction
from .metrics import jain_index
from .neural import Adam, DenseNet

RANDOM = "random"
GREEDY = "greedy"
DRL = "drl"


@dataclass(frozen=True)
class DrlConfig:
    num_uavs: int = 3
    num_users: int = 100
    area_m: float = 2500.0
    h_min_m: float = 100.0
    h_max_m: float = 800.0
    tx_power_dbm: float = 24.0
    fc_ghz: float = 2.0
    bandwidth_hz: float = 10e6
    qos_min_bps: float = 1e6
    comm_range_m: float = 500.0
    d_max_m: float = 50.0
    slot_dt_s: float = 1.0
    slots_per_episode: int = 40
    episodes: int = 300
    hidden_sizes: tuple = (400, 300)
    gamma: float = 0.95
    replay_capacity: int = 50_000
    batch_size: int = 64
    warmup_steps: int = 500
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    tau: float = 0.01                 # target-network blend rate
    noise_scale: float = 0.3
    noise_final: float = 0.05
    penalty_boundary: float = 1.0
    penalty_connectivity: float = 1.0
    ee_reward_scale: float = 1e5      # bits/J corresponding to one reward unit
    greedy_candidates: int = 8
    eval_episodes: int = 20
    buildings_beta: float = 0.0       # placement airspace defaults to an open area

    def __post_init__(self):
        if self.num_uavs < 1 or self.num_users < 1:
            raise ValueError("need at least one UAV and one user")

    @property
    def state_dim(self) -> int:
        return 3 * self.num_uavs + self.num_users + 1

    @property
    def action_dim(self) -> int:
        return 3 * self.num_uavs


def desk_config(**overrides) -> DrlConfig:
    """Desk-scale defaults: small fleet, small nets, minutes-not-hours training."""
    kw = dict(num_uavs=2, num_users=20, hidden_sizes=(128, 96), episodes=300)
    kw.update(overrides)
    return DrlConfig(**kw)


@dataclass
class MdpState:
    uav_positions: np.ndarray        # (J, 3)
    served_bits: np.ndarray          # (N,) cumulative served traffic
    slot: int

    def to_vector(self, cfg: DrlConfig) -> np.ndarray:
        p = self.uav_positions
        feats = np.empty(cfg.state_dim)
        k = cfg.num_uavs
        feats[0:3 * k:3] = 2.0 * p[:, 0] / cfg.area_m - 1.0
        feats[1:3 * k:3] = 2.0 * p[:, 1] / cfg.area_m - 1.0
        feats[2:3 * k:3] = 2.0 * (p[:, 2] - cfg.h_min_m) / (cfg.h_max_m - cfg.h_min_m) - 1.0
        top = self.served_bits.max()
        share = self.served_bits / top if top > 0 else np.zeros_like(self.served_bits)
        feats[3 * k:3 * k + cfg.num_users] = 2.0 * share - 1.0
        feats[-1] = 2.0 * self.slot / max(cfg.slots_per_episode, 1) - 1.0
        return feats


@dataclass
class RewardBreakdown:
    sum_rate_bps: float
    fairness: float
    energy_j: float
    penalty: float
    reward: float


def compute_reward(cumulative_bits, matched_rates, energy_j: float,
                   boundary: bool, disconnected: bool,
                   penalty_boundary: float = 1.0, penalty_connectivity: float = 1.0,
                   ee_scale: float = 1.0) -> RewardBreakdown:
    """Fairness-weighted sum rate per joule, minus constraint penalties.

    Fairness is Jain's index over the cumulative per-user served traffic, so
    coverage must rotate among users to score well.
    """
    if energy_j <= 0:
        raise ValueError(f"energy must be positive, got {energy_j}")
    fairness = jain_index(cumulative_bits)
    sum_rate = float(np.sum(matched_rates))
    penalty = (penalty_boundary * bool(boundary)
               + penalty_connectivity * bool(disconnected))
    reward = fairness * (sum_rate / energy_j) / ee_scale - penalty
    return RewardBreakdown(sum_rate, fairness, energy_j, penalty, reward)


def associate_users(rate_matrix: np.ndarray, qos_min_bps: float) -> list[tuple[int, int]]:
    """One-to-one greedy matching by descending rate, QoS-feasible pairs only.

    Ties break toward the lowest UAV id, then the lowest user id. Returns
    (uav, user) pairs; an empty matching is valid.
    """
    j_n = np.argwhere(rate_matrix >= qos_min_bps)
    order = sorted(((-rate_matrix[j, n], j, n) for j, n in j_n))
    used_uav: set[int] = set()
    used_user: set[int] = set()
    matching = []
    for _, j, n in order:
        if j in used_uav or n in used_user:
            continue
        used_uav.add(int(j))
        used_user.add(int(n))
        matching.append((int(j), int(n)))
    return matching


def connectivity_ok(uav_positions, comm_range_m: float) -> bool:
    """True iff the UAV-to-UAV graph with edges within comm_range_m is connected."""
    p = np.asarray(uav_positions, dtype=float)
    n = p.shape[0]
    if n < 1:
        raise ValueError("need at least one UAV")
    if n == 1:
        return True
    d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=2)
    adj = d <= comm_range_m
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for k in np.flatnonzero(adj[i]):
            if k not in seen:
                seen.add(int(k))
                frontier.append(int(k))
    return len(seen) == n


def actions_from_vector(u: np.ndarray, cfg: DrlConfig) -> list[MovementAction]:
    """Map a normalized [-1, 1]^{3J} policy output onto per-UAV movement bounds."""
    u = np.clip(u, -1.0, 1.0)
    actions = []
    for j in range(cfg.num_uavs):
        du, pu, yu = u[3 * j:3 * j + 3]
        actions.append(MovementAction(
            distance_m=(du + 1.0) / 2.0 * cfg.d_max_m,
            pitch_rad=pu * math.pi / 2.0,
            yaw_rad=((yu + 1.0) / 2.0 * 2.0 * math.pi) % (2.0 * math.pi)))
    return actions


def act(actor: DenseNet, state_vec: np.ndarray, noise_scale: float,
        rng: np.random.Generator | None) -> np.ndarray:
    """Deterministic actor output plus exploration noise, clipped back to bounds."""
    u = actor.forward(state_vec)
    if noise_scale > 0:
        if rng is None:
            raise ValueError("noise needs an rng")
        u = u + noise_scale * rng.standard_normal(u.shape)
    return np.clip(u, -1.0, 1.0)


class PlacementEnv:
    """Slot-stepped control environment wrapping the world kinematics and channel."""

    def __init__(self, cfg: DrlConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.channels = channel.ChannelParams(
            fc_ghz=cfg.fc_ghz, bandwidth_hz=cfg.bandwidth_hz,
            noise_power_dbm=channel.noise_power_dbm(cfg.bandwidth_hz))
        self.world = None
        self.state: MdpState | None = None
        self._uavs: list[env.UavState] = []

    def reset(self, episode_seed: int) -> MdpState:
        cfg = self.cfg
        rng = np.random.default_rng(episode_seed)
        world_cfg = env.WorldConfig(
            area_x_m=cfg.area_m, area_y_m=cfg.area_m,
            alpha=0.3 if cfg.buildings_beta > 0 else 0.0, beta=cfg.buildings_beta,
            num_users=cfg.num_users, num_uavs=0, seed=episode_seed,
            uav_h_min_m=cfg.h_min_m, uav_h_max_m=cfg.h_max_m,
            uav_tx_power_dbm=cfg.tx_power_dbm)
        self.world = env.generate_world(world_cfg, seed=episode_seed)
        # spawn the fleet as a connected cluster near the area center
        center = np.array([cfg.area_m / 2, cfg.area_m / 2])
        self._uavs = []
        for _ in range(cfg.num_uavs):
            xy = center + rng.uniform(-150.0, 150.0, size=2)
            z = rng.uniform(cfg.h_min_m, min(cfg.h_min_m + 200.0, cfg.h_max_m))
            self._uavs.append(env.UavState(np.array([xy[0], xy[1], z]),
                                           cfg.h_min_m, cfg.h_max_m, cfg.tx_power_dbm))
        self.state = MdpState(np.stack([u.position for u in self._uavs]),
                              np.zeros(cfg.num_users), 0)
        return self.state

    def rate_matrix(self, uav_positions: np.ndarray) -> np.ndarray:
        """Mean achievable rate (unit fading gain) for every UAV-user pair."""
        cfg = self.cfg
        users = np.stack([u.position for u in self.world.users])
        diff = uav_positions[:, None, :] - users[None, :, :]
        d3d = np.linalg.norm(diff, axis=2)
        rates = np.zeros_like(d3d)
        for j in range(d3d.shape[0]):
            # the aerial path-loss table ends at 300 m; its altitude argument
            # is clamped there while geometry keeps the true distance
            h_eval = min(max(uav_positions[j, 2], 23.0), channel.UTG_H_MAX_M)
            for n in range(d3d.shape[1]):
                los = (True if not self.world.buildings
                       else env.is_los(uav_positions[j], users[n], self.world))
                pl = channel.utg_path_loss_db(d3d[j, n], h_eval, cfg.fc_ghz, los)
                rates[j, n] = channel.link_capacity_bps(
                    cfg.tx_power_dbm, pl, 1.0,
                    self.channels.noise_power_dbm, cfg.bandwidth_hz)
        return rates

    def _advance(self, u: np.ndarray, uavs: list[env.UavState],
                 served: np.ndarray, slot: int):
        cfg = self.cfg
        actions = actions_from_vector(u, cfg)
        stepped = [env.step_uav(s, a, cfg.slot_dt_s, cfg.area_m, cfg.area_m)
                   for s, a in zip(uavs, actions)]
        energy = sum(s.cumulative_energy_j - p.cumulative_energy_j
                     for s, p in zip(stepped, uavs))
        positions = np.stack([s.position for s in stepped])
        rates = self.rate_matrix(positions)
        matching = associate_users(rates, cfg.qos_min_bps)
        matched_rates = [rates[j, n] for j, n in matching]
        new_served = served.copy()
        for (j, n), r in zip(matching, matched_rates):
            new_served[n] += r * cfg.slot_dt_s
        boundary = any(s.violated_boundary for s in stepped)
        disconnected = not connectivity_ok(positions, cfg.comm_range_m)
        breakdown = compute_reward(new_served, matched_rates, energy,
                                   boundary, disconnected,
                                   cfg.penalty_boundary, cfg.penalty_connectivity,
                                   cfg.ee_reward_scale)
        next_state = MdpState(positions, new_served, slot + 1)
        return stepped, next_state, breakdown, matching

    def step(self, u: np.ndarray):
        """Apply a normalized joint action; returns (next_state, RewardBreakdown, matching)."""
        stepped, next_state, breakdown, matching = self._advance(
            u, self._uavs, self.state.served_bits, self.state.slot)
        self._uavs = stepped
        self.state = next_state
        return next_state, breakdown, matching

    def peek_step(self, u: np.ndarray) -> RewardBreakdown:
        """Simulate one step from the current state without committing it."""
        _, _, breakdown, _ = self._advance(
            u, self._uavs, self.state.served_bits, self.state.slot)
        return breakdown

    def episode_done(self) -> bool:
        return self.state.slot >= self.cfg.slots_per_episode


def baseline_policy(kind: str, env_: PlacementEnv, candidate_count: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Random: uniform over bounds. Greedy: best immediate reward among sampled
    candidates (ties keep the first sampled). greedy with candidate_count=1
    reduces to random on the same draw stream.
    """
    if kind not in (RANDOM, GREEDY):
        raise ValueError(f"unknown baseline kind {kind!r}")
    dim = env_.cfg.action_dim
    if kind == RANDOM:
        return rng.uniform(-1.0, 1.0, dim)
    best_u = None
    best_r = -math.inf
    for _ in range(max(candidate_count, 1)):
        u = rng.uniform(-1.0, 1.0, dim)
        r = env_.peek_step(u).reward
        if r > best_r:
            best_r = r
            best_u = u
    return best_u


class _Replay:
    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.size = 0
        self.head = 0

    def push(self, s, a, r, s2):
        i = self.head
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, batch)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]


def _soft_update(target: DenseNet, source: DenseNet, tau: float) -> None:
    for tp, sp in zip(target.params(), source.params()):
        tp *= 1.0 - tau
        tp += tau * sp


@dataclass
class TrainResult:
    actor: DenseNet
    critic: DenseNet
    curve: list  # (episode, mean_reward, mean_fairness, mean_ee)


def train_drl(cfg: DrlConfig, seed: int, progress=None) -> TrainResult:
    """Off-policy actor-critic training loop with replay and target networks."""
    root = np.random.SeedSequence(seed)
    net_seed, rng_seed = (int(s.generate_state(1)[0]) for s in root.spawn(2))
    rng = np.random.default_rng(rng_seed)
    actor = DenseNet([cfg.state_dim, *cfg.hidden_sizes, cfg.action_dim],
                     output_activation="tanh", seed=net_seed)
    critic = DenseNet([cfg.state_dim + cfg.action_dim, *cfg.hidden_sizes, 1],
                      seed=net_seed + 1)
    actor_t = actor.copy()
    critic_t = critic.copy()
    actor_opt = Adam(lr=cfg.actor_lr)
    critic_opt = Adam(lr=cfg.critic_lr)
    replay = _Replay(cfg.replay_capacity, cfg.state_dim, cfg.action_dim)
    world = PlacementEnv(cfg, seed)
    curve = []
    total_steps = 0

    for episode in range(cfg.episodes):
        frac = episode / max(cfg.episodes - 1, 1)
        noise = cfg.noise_scale + (cfg.noise_final - cfg.noise_scale) * frac
        state = world.reset(episode_seed=seed * 1_000_003 + episode)
        s_vec = state.to_vector(cfg)
        rewards = []
        fair = []
        ee = []
        while not world.episode_done():
            if total_steps < cfg.warmup_steps:
                u = rng.uniform(-1.0, 1.0, cfg.action_dim)
            else:
                u = act(actor, s_vec, noise, rng)
            next_state, breakdown, _ = world.step(u)
            s2_vec = next_state.to_vector(cfg)
            replay.push(s_vec, u, breakdown.reward, s2_vec)
            rewards.append(breakdown.reward)
            fair.append(breakdown.fairness)
            ee.append(breakdown.sum_rate_bps / breakdown.energy_j)
            s_vec = s2_vec
            total_steps += 1
            if replay.size >= max(cfg.batch_size, cfg.warmup_steps):
                _ddpg_update(cfg, actor, critic, actor_t, critic_t,
                             actor_opt, critic_opt, replay, rng)
        if not math.isfinite(float(np.sum(rewards))):
            raise RuntimeError(f"training diverged at episode {episode}")
        curve.append((episode, float(np.mean(rewards)), float(np.mean(fair)),
                      float(np.mean(ee))))
        if progress is not None:
            progress(episode, curve[-1])
    return TrainResult(actor, critic, curve)


def _ddpg_update(cfg, actor, critic, actor_t, critic_t, actor_opt, critic_opt,
                 replay, rng) -> None:
    s, a, r, s2 = replay.sample(cfg.batch_size, rng)
    a2 = actor_t.forward(s2)
    q2 = critic_t.forward(np.concatenate([s2, a2], axis=1))[:, 0]
    y = r + cfg.gamma * q2
    # critic regression toward the bootstrapped target
    sa = np.concatenate([s, a], axis=1)
    q, caches = critic._forward_cached(sa)
    diff = q[:, 0] - y
    grads, _ = critic._backward(caches, (2.0 * diff / diff.size)[:, None])
    critic_opt.step(critic.params(), grads)
    # actor ascends the critic's action-value
    a_pred, a_caches = actor._forward_cached(s)
    sa_pred = np.concatenate([s, a_pred], axis=1)
    dq = critic.input_gradient(sa_pred, np.ones((cfg.batch_size, 1)))
    dq_da = dq[:, cfg.state_dim:]
    a_grads, _ = actor._backward(a_caches, -dq_da / cfg.batch_size)
    actor_opt.step(actor.params(), a_grads)
    _soft_update(actor_t, actor, cfg.tau)
    _soft_update(critic_t, critic, cfg.tau)


def evaluate_policy(cfg: DrlConfig, policy_kind: str, seed: int,
                    actor: DenseNet | None = None,
                    episodes: int | None = None) -> list[float]:
    """Per-episode mean rewards over shared evaluation layouts.

    Evaluation episodes are seeded from `seed` alone, so different policies
    score against identical worlds (paired comparisons).
    """
    episodes = cfg.eval_episodes if episodes is None else episodes
    world = PlacementEnv(cfg, seed)
    out = []
    for k in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 7919, k)))
        state = world.reset(episode_seed=seed * 7_000_003 + k)
        s_vec = state.to_vector(cfg)
        rewards = []
        while not world.episode_done():
            if policy_kind == DRL:
                if actor is None:
                    raise ValueError("drl evaluation needs a trained actor")
                u = act(actor, s_vec, 0.0, None)
            else:
                u = baseline_policy(policy_kind, world, cfg.greedy_candidates, rng)
            next_state, breakdown, _ = world.step(u)
            s_vec = next_state.to_vector(cfg)
            rewards.append(breakdown.reward)
        out.append(float(np.mean(rewards)))
    return out
