"""Online neural estimation of UtG channel gains from measured coefficients.

Per-UAV dense networks learn the mapping (UAV position, user position) ->
channel gain in dB over an offline phase followed by an online phase. Targets
are realized gains (path loss plus a small-scale fading draw), affinely
normalized to [-1, 1] by config-declared dB bounds. The online phase also
scores instantaneous energy efficiency twice: with link rates allocated from
predicted gains (realized throughput capped by the true channel) and with
perfect channel knowledge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel, env
from .neural import Adam, DenseNet, TrainingDivergedError, train_step


@dataclass(frozen=True)
class EstimatorConfig:
    hidden_sizes: tuple = (512, 256)
    pretrain_slots: int = 736
    online_slots: int = 500
    num_uavs: int = 3
    uav_altitude_m: float = 50.0
    bandwidth_hz: float = 10e6
    fc_ghz: float = 2.0
    rician_k_db: float = 15.0
    num_users: int = 90
    slot_dt_s: float = 1.0
    holdout_fraction: float = 0.2
    gain_db_min: float = -220.0
    gain_db_max: float = -60.0
    learning_rate: float = 1e-3
    learning_rate_final: float = 1e-4
    replay_capacity: int = 8192
    train_batch: int = 128
    train_steps_per_slot: int = 3
    patrol_radius_m: float = 150.0
    patrol_omega_rad: float = 0.03
    area_m: float = 1000.0
    alpha: float = 0.3
    beta: float = 300.0
    delta_m: float = 30.0

    def __post_init__(self):
        if self.pretrain_slots <= 0 or self.online_slots <= 0:
            raise ValueError("slot counts must be positive")
        if self.gain_db_max <= self.gain_db_min:
            raise ValueError("gain bounds must be increasing")


@dataclass
class TrainingSample:
    uav_id: int
    features: np.ndarray      # 6 values in [-1, 1]
    target: float             # normalized gain
    gain_db: float            # raw measured gain
    los: bool
    d3d_m: float
    ss_gain: float            # small-scale fading draw behind gain_db


class GainEstimator:
    """One trainable gain model per UAV, with its own optimizer and replay."""

    def __init__(self, cfg: EstimatorConfig, uav_id: int, seed: int):
        sizes = [6, *cfg.hidden_sizes, 1]
        self.cfg = cfg
        self.uav_id = uav_id
        self.net = DenseNet(sizes, seed=seed)
        self.opt = Adam(lr=cfg.learning_rate)
        self.replay_x: list[np.ndarray] = []
        self.replay_t: list[float] = []
        self.clamp_count = 0

    def normalize_target(self, gain_db: float) -> float:
        cfg = self.cfg
        g = min(max(gain_db, cfg.gain_db_min), cfg.gain_db_max)
        return 2.0 * (g - cfg.gain_db_min) / (cfg.gain_db_max - cfg.gain_db_min) - 1.0

    def denormalize_target(self, t: float) -> float:
        cfg = self.cfg
        return (t + 1.0) / 2.0 * (cfg.gain_db_max - cfg.gain_db_min) + cfg.gain_db_min

    def features(self, uav_pos, user_pos) -> np.ndarray:
        cfg = self.cfg
        f = np.array([
            2.0 * uav_pos[0] / cfg.area_m - 1.0,
            2.0 * uav_pos[1] / cfg.area_m - 1.0,
            2.0 * uav_pos[2] / channel.UTG_H_MAX_M - 1.0,
            2.0 * user_pos[0] / cfg.area_m - 1.0,
            2.0 * user_pos[1] / cfg.area_m - 1.0,
            2.0 * user_pos[2] / channel.UTG_H_MAX_M - 1.0,
        ])
        clipped = np.clip(f, -1.0, 1.0)
        if not np.array_equal(clipped, f):
            self.clamp_count += 1
        return clipped

    def predict_target(self, features: np.ndarray) -> float:
        return float(self.net.forward(features)[0])

    def predict_gain(self, uav_pos, user_pos) -> float:
        """Estimated channel gain in dB for the given geometry."""
        return self.denormalize_target(self.predict_target(self.features(uav_pos, user_pos)))

    def train_slot(self, feats: np.ndarray, targets: np.ndarray, rng: np.random.Generator):
        """Push the slot's samples into replay and take the configured optimizer steps."""
        for f, t in zip(feats, targets):
            self.replay_x.append(f)
            self.replay_t.append(float(t))
        if len(self.replay_x) > self.cfg.replay_capacity:
            drop = len(self.replay_x) - self.cfg.replay_capacity
            del self.replay_x[:drop]
            del self.replay_t[:drop]
        n = len(self.replay_x)
        for _ in range(self.cfg.train_steps_per_slot):
            take = min(self.cfg.train_batch, n)
            idx = rng.choice(n, size=take, replace=False)
            x = np.stack([self.replay_x[i] for i in idx])
            t = np.array([self.replay_t[i] for i in idx])[:, None]
            loss = train_step(self.net, x, t, self.opt)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"estimator {self.uav_id} diverged")


class ChanestSim:
    """Simulation clock for the estimation experiment: world, patrols, measurements."""

    def __init__(self, cfg: EstimatorConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        world_cfg = env.WorldConfig(
            area_x_m=cfg.area_m, area_y_m=cfg.area_m, alpha=cfg.alpha, beta=cfg.beta,
            delta_m=cfg.delta_m, seed=seed, num_users=cfg.num_users, num_uavs=0,
            user_mobility=env.RANDOM_WAYPOINT,
            uav_h_min_m=min(cfg.uav_altitude_m, 23.0), uav_h_max_m=channel.UTG_H_MAX_M)
        self.world = env.generate_world(world_cfg, seed=seed)
        self.channels = channel.ChannelParams(
            fc_ghz=cfg.fc_ghz, bandwidth_hz=cfg.bandwidth_hz,
            noise_power_dbm=channel.noise_power_dbm(cfg.bandwidth_hz),
            rician_k_db=cfg.rician_k_db)
        self.tx_power_dbm = 24.0
        # evenly spread patrol centers, offset phases
        k = cfg.num_uavs
        margin = cfg.patrol_radius_m + 50.0
        centers = []
        for i in range(k):
            ang = 2.0 * math.pi * i / max(k, 1)
            cx = cfg.area_m / 2 + (cfg.area_m / 2 - margin) * math.cos(ang) * 0.7
            cy = cfg.area_m / 2 + (cfg.area_m / 2 - margin) * math.sin(ang) * 0.7
            centers.append((cx, cy))
        self.patrol_centers = centers
        self.slot = 0
        self.uav_positions = [self._patrol_position(i) for i in range(k)]
        self.slot_energy_j = self._slot_energy()

    def _patrol_position(self, uav_id: int) -> np.ndarray:
        cfg = self.cfg
        theta = cfg.patrol_omega_rad * self.slot + 2.0 * math.pi * uav_id / max(cfg.num_uavs, 1)
        cx, cy = self.patrol_centers[uav_id]
        return np.array([cx + cfg.patrol_radius_m * math.cos(theta),
                         cy + cfg.patrol_radius_m * math.sin(theta),
                         cfg.uav_altitude_m])

    def _slot_energy(self) -> float:
        # hover plus patrol arc length, per UAV
        cfg = self.cfg
        arc = 2.0 * cfg.patrol_radius_m * math.sin(cfg.patrol_omega_rad / 2.0)
        per_uav = (env.DEFAULT_HOVER_POWER_W * cfg.slot_dt_s
                   + env.DEFAULT_PROPULSION_J_PER_M * arc)
        return per_uav * cfg.num_uavs

    def advance_slot(self) -> None:
        self.slot += 1
        self.world.users[:] = env.step_users(
            self.world.users, self.cfg.slot_dt_s, self.rng,
            self.cfg.area_m, self.cfg.area_m)
        self.uav_positions = [self._patrol_position(i) for i in range(self.cfg.num_uavs)]

    def associate_users(self) -> list[int]:
        """Nearest-UAV association; index i gives the serving UAV of user i."""
        uavs = np.stack(self.uav_positions)
        out = []
        for u in self.world.users:
            d = np.linalg.norm(uavs - u.position[None, :], axis=1)
            out.append(int(np.argmin(d)))
        return out


def collect_slot_samples(sim: ChanestSim, estimators: list[GainEstimator]) -> list[TrainingSample]:
    """Measure one sample per active UtG link: realized gain in dB, normalized."""
    assoc = sim.associate_users()
    samples = []
    for user_idx, uav_id in enumerate(assoc):
        user = sim.world.users[user_idx]
        uav_pos = sim.uav_positions[uav_id]
        d3d = float(np.linalg.norm(uav_pos - user.position))
        los = env.is_los(uav_pos, user.position, sim.world)
        pl = channel.utg_path_loss_db(d3d, uav_pos[2], sim.cfg.fc_ghz, los)
        ss = channel.small_scale_power_gain(los, sim.cfg.rician_k_db, sim.rng)
        gain_db = -pl + 10.0 * math.log10(ss) if ss > 0 else sim.cfg.gain_db_min
        est = estimators[uav_id]
        samples.append(TrainingSample(
            uav_id, est.features(uav_pos, user.position),
            est.normalize_target(gain_db), gain_db, los, d3d, ss))
    return samples


def make_estimators(cfg: EstimatorConfig, seed: int) -> list[GainEstimator]:
    streams = np.random.SeedSequence(seed).spawn(cfg.num_uavs)
    return [GainEstimator(cfg, i, int(s.generate_state(1)[0])) for i, s in enumerate(streams)]


def _split_and_train(sim, estimators, samples, mse_rows):
    """Held-out MSE (pre-update net) then train on the rest; one row per UAV."""
    cfg = sim.cfg
    for est in estimators:
        mine = [s for s in samples if s.uav_id == est.uav_id]
        if not mine:
            mse_rows.append((sim.slot, est.uav_id, float("nan")))
            continue
        order = sim.rng.permutation(len(mine))
        n_hold = max(1, int(round(cfg.holdout_fraction * len(mine))))
        hold = [mine[i] for i in order[:n_hold]]
        train = [mine[i] for i in order[n_hold:]]
        preds = est.net.forward(np.stack([s.features for s in hold]))
        targets = np.array([s.target for s in hold])[:, None]
        mse = float(np.mean((preds - targets) ** 2))
        mse_rows.append((sim.slot, est.uav_id, mse))
        if train:
            est.train_slot(np.stack([s.features for s in train]),
                           np.array([s.target for s in train]), sim.rng)


def run_offline_phase(sim: ChanestSim, cfg: EstimatorConfig, estimators=None):
    """Pretraining phase: collect-then-train for cfg.pretrain_slots slots.

    Returns (estimators, mse_rows) with one (slot, uav_id, holdout_mse) row
    per UAV per slot, slots numbered from 1.
    """
    if estimators is None:
        estimators = make_estimators(cfg, sim.seed)
    mse_rows: list[tuple] = []
    decay = cfg.learning_rate_final / cfg.learning_rate
    for k in range(cfg.pretrain_slots):
        # exponential learning-rate anneal over the pretraining phase
        lr = cfg.learning_rate * decay ** (k / max(cfg.pretrain_slots - 1, 1))
        for est in estimators:
            est.opt.lr = lr
        sim.advance_slot()
        samples = collect_slot_samples(sim, estimators)
        _split_and_train(sim, estimators, samples, mse_rows)
    return estimators, mse_rows


def run_online_phase(sim: ChanestSim, estimators: list[GainEstimator],
                     cfg: EstimatorConfig, oracle: bool = False):
    """Online phase: predict, measure, train, for cfg.online_slots slots.

    Returns (mse_rows, ee_rows). mse_rows hold the prequential normalized MSE
    of the slot's predictions against measured targets. ee_rows hold
    (slot, ee_predicted, ee_perfect) where rate allocation uses predicted
    gains, realized throughput is capped by the true channel, and the perfect
    row allocates from true gains. With oracle=True the predictor is bypassed
    by the true gains (EE ratio is then exactly 1).
    """
    mse_rows: list[tuple] = []
    ee_rows: list[tuple] = []
    for _ in range(cfg.online_slots):
        sim.advance_slot()
        samples = collect_slot_samples(sim, estimators)
        per_uav_err: dict[int, list[float]] = {e.uav_id: [] for e in estimators}
        realized_sum = 0.0
        perfect_sum = 0.0
        for s in samples:
            est = estimators[s.uav_id]
            pred_t = est.predict_target(s.features)
            per_uav_err[s.uav_id].append((pred_t - s.target) ** 2)
            pred_gain_db = s.gain_db if oracle else est.denormalize_target(pred_t)
            alloc = channel.capacity_from_gain_db(
                sim.tx_power_dbm, pred_gain_db,
                sim.channels.noise_power_dbm, cfg.bandwidth_hz)
            true_cap = channel.capacity_from_gain_db(
                sim.tx_power_dbm, s.gain_db,
                sim.channels.noise_power_dbm, cfg.bandwidth_hz)
            realized_sum += min(alloc, true_cap)
            perfect_sum += true_cap
        for est in estimators:
            errs = per_uav_err[est.uav_id]
            mse_rows.append((sim.slot, est.uav_id,
                             float(np.mean(errs)) if errs else float("nan")))
        power_w = sim.slot_energy_j / sim.cfg.slot_dt_s
        ee_rows.append((sim.slot, realized_sum / power_w, perfect_sum / power_w))
        # train on all measured samples from the slot
        by_uav: dict[int, list[TrainingSample]] = {}
        for s in samples:
            by_uav.setdefault(s.uav_id, []).append(s)
        for est in estimators:
            mine = by_uav.get(est.uav_id)
            if mine:
                est.train_slot(np.stack([s.features for s in mine]),
                               np.array([s.target for s in mine]), sim.rng)
    return mse_rows, ee_rows


def predict_gain(estimator: GainEstimator, uav_pos, user_pos) -> float:
    """De-normalized estimated gain (dB); positions outside bounds are clamped."""
    return estimator.predict_gain(uav_pos, user_pos)


def run_experiment(cfg: EstimatorConfig, seed: int):
    """Full offline + online run; returns (mse_rows, ee_rows, estimators)."""
    sim = ChanestSim(cfg, seed)
    estimators, offline_mse = run_offline_phase(sim, cfg)
    online_mse, ee_rows = run_online_phase(sim, estimators, cfg)
    return offline_mse + online_mse, ee_rows, estimators
