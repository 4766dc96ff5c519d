"""Discrete-time packet routing over a UAV relay field toward a ground sink.

Relays sit on a jittered lattice whose radio graph (10 m radius by default)
reaches the GCS. Each slot: pending transmissions resolve (per-link loss
probability, ACK one slot after reception), ACK timeouts trigger reselection
with the failed candidate cooled down, sinusoidal Poisson traffic arrives,
and every idle relay forwards its head-of-queue packet to a next hop chosen
by the active protocol:

  par_predict   -- minimum weighted sum of normalized predicted backlog,
                   link delay, and hop count; the stale beacon backlog is
                   projected to the present with PAR predictions from a
                   shared recurrent cell trained online
  shortest_path -- minimum hop count, lowest id on ties
  backlog_aware -- minimum beacon-observed backlog among hop-decreasing
                   neighbors

Neighbor queue state is disseminated by periodic beacons, so every protocol
works from observations up to beacon_period_slots - 1 slots old; prediction
exists to bridge exactly that staleness. Candidates are restricted to strictly
decreasing hop count, which keeps every delivered trace loop-free.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import channel
from .neural import Adam, RecurrentCell, recurrent_train_step

GCS_ID = -1
PAR_PREDICT = "par_predict"
SHORTEST_PATH = "shortest_path"
BACKLOG_AWARE = "backlog_aware"
PROTOCOLS = (PAR_PREDICT, SHORTEST_PATH, BACKLOG_AWARE)

SPEED_OF_LIGHT_M_PER_S = 299_792_458.0


class TopologyError(ValueError):
    """The generated relay graph does not reach the GCS."""


@dataclass(frozen=True)
class TrafficModel:
    """Poisson arrivals whose rate rides a slow per-UAV-phase sinusoid."""

    mean_pps: float                 # packets per slot, per UAV, long-run mean
    rel_amplitude: float = 0.9
    period_slots: int = 240
    num_uavs: int = 1

    def rate(self, uav_id: int, slot: int) -> float:
        phase = 2.0 * math.pi * uav_id / max(self.num_uavs, 1)
        rate = self.mean_pps * (1.0 + self.rel_amplitude
                                * math.sin(2.0 * math.pi * slot / self.period_slots + phase))
        return max(rate, 0.0)


def generate_arrivals(model: TrafficModel, uav_id: int, slot: int,
                      rng: np.random.Generator) -> int:
    """Packet count entering uav_id's queue this slot."""
    rate = model.rate(uav_id, slot)
    if rate == 0.0:
        return 0
    return int(rng.poisson(rate))


@dataclass(frozen=True)
class RoutingConfig:
    comm_radius_m: float = 10.0
    ack_timeout_ms: float = 10.0
    slot_ms: float = 1.0
    weight_backlog: float = 0.8
    weight_delay: float = 0.1
    weight_hops: float = 0.1
    predictor_window: int = 12
    predictor_hidden: int = 8
    predictor_lr: float = 5e-3
    packet_bits: float = 10_000.0
    fc_ghz: float = 2.4
    bandwidth_hz: float = 10e6
    tx_power_dbm: float = 24.0
    link_loss_prob: float = 0.02
    cooldown_slots: int = 20
    beacon_period_slots: int = 8    # neighbor backlog is known from the last beacon
    lattice_spacing_m: float = 8.0
    lattice_jitter_m: float = 0.9
    lattice_kind: str = "square"        # or "triangular"
    arrival_total_pps: float = 1.3      # network-wide mean load, split across UAVs
    arrival_rel_amplitude: float = 0.9
    arrival_period_slots: int = 240
    max_queue: int | None = None
    validate_selection: bool = False    # brute-force argmin check on every call

    def __post_init__(self):
        w = (self.weight_backlog, self.weight_delay, self.weight_hops)
        if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"weights must be nonnegative and sum to 1, got {w}")
        if self.ack_timeout_ms <= 0:
            raise ValueError("ack timeout must be positive")

    @property
    def timeout_slots(self) -> int:
        return max(1, int(round(self.ack_timeout_ms / self.slot_ms)))


@dataclass
class Packet:
    id: int
    origin: int
    created_slot: int
    size_bits: float
    hops: list = field(default_factory=list)
    delivered_slot: int | None = None


class UavQueue:
    """FIFO packet buffer plus the node's recent PAR history."""

    def __init__(self, window: int):
        self.buffer: deque[Packet] = deque()
        self.par_history: deque[int] = deque(maxlen=window)

    @property
    def backlog(self) -> int:
        return len(self.buffer)


@dataclass
class NextHopScore:
    candidate: int
    backlog_norm: float
    delay_norm: float
    hops_norm: float
    score: float


def _min_max_normalize(values: list[float]) -> list[float]:
    lo = min(values)
    hi = max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def select_next_hop(candidates: list[int], backlogs: list[float],
                    delays_ms: list[float], hop_counts: list[float],
                    weights: tuple[float, float, float],
                    validate: bool = False) -> tuple[int, list[NextHopScore]]:
    """Arg-min of the weighted sum of min-max-normalized metrics; lowest id on ties."""
    if not candidates:
        raise ValueError("empty candidate set: hold the packet instead")
    w_l, w_d, w_h = weights
    l_n = _min_max_normalize(backlogs)
    d_n = _min_max_normalize(delays_ms)
    h_n = _min_max_normalize(hop_counts)
    scores = [NextHopScore(c, l, d, h, w_l * l + w_d * d + w_h * h)
              for c, l, d, h in zip(candidates, l_n, d_n, h_n)]
    best = min(scores, key=lambda s: (s.score, s.candidate))
    if validate:
        # independent enumeration over the raw components
        brute = None
        for i, c in enumerate(candidates):
            val = w_l * l_n[i] + w_d * d_n[i] + w_h * h_n[i]
            if brute is None or val < brute[0] - 1e-15 or (
                    abs(val - brute[0]) <= 1e-15 and c < brute[1]):
                brute = (val, c)
        if brute[1] != best.candidate:
            raise AssertionError(
                f"selection mismatch: picked {best.candidate}, brute force {brute[1]}")
    return best.candidate, scores


def build_topology(cfg: RoutingConfig, num_uavs: int, rng: np.random.Generator):
    """Jittered-lattice relay positions growing outward from the GCS at the origin.

    The triangular lattice keeps six 8 m neighbors per node, so most relays see
    two or three hop-decreasing candidates; the square variant is sparser.
    """
    s = cfg.lattice_spacing_m
    cells = []
    reach = int(math.ceil(math.sqrt(num_uavs))) + 3
    if cfg.lattice_kind == "triangular":
        for j in range(reach + 1):
            for i in range(reach + 1):
                x = (i + 0.5 * (j % 2)) * s
                y = j * (s * math.sqrt(3.0) / 2.0)
                if i == 0 and j == 0:
                    continue
                cells.append((x * x + y * y, x, y))
    elif cfg.lattice_kind == "square":
        for i in range(reach + 1):
            for j in range(reach + 1):
                if i == 0 and j == 0:
                    continue
                cells.append(((i * s) ** 2 + (j * s) ** 2, i * s, j * s))
    else:
        raise ValueError(f"unknown lattice kind {cfg.lattice_kind!r}")
    cells.sort()
    positions = np.zeros((num_uavs, 2))
    for k, (_, x, y) in enumerate(cells[:num_uavs]):
        positions[k] = (x + rng.uniform(-cfg.lattice_jitter_m, cfg.lattice_jitter_m),
                        y + rng.uniform(-cfg.lattice_jitter_m, cfg.lattice_jitter_m))
    gcs = np.zeros(2)
    return positions, gcs


def min_hops_to_gcs(positions: np.ndarray, gcs: np.ndarray,
                    comm_radius_m: float) -> np.ndarray:
    """Breadth-first hop counts toward the GCS; unreachable nodes get inf."""
    n = positions.shape[0]
    pts = np.vstack([gcs[None, :], positions])
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    adj = d <= comm_radius_m
    hops = np.full(n + 1, np.inf)
    hops[0] = 0.0
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            for k in np.flatnonzero(adj[i]):
                if hops[k] == np.inf:
                    hops[k] = hops[i] + 1
                    nxt.append(int(k))
        frontier = nxt
    return hops[1:]


class ParPredictor:
    """Shared one-step-ahead PAR predictor over all relays' arrival histories.

    Falls back to the last observed PAR while the history is short or while the
    cell's rolling one-step error has not yet beaten the last-value rule
    (tracked as exponential moving averages updated at every training step).
    """

    EMA_DECAY = 0.99

    def __init__(self, cfg: RoutingConfig, seed: int):
        self.window = cfg.predictor_window
        self.norm = 2.0  # packets/slot mapped to 1.0; inputs clip at the scale limit
        self.cell = RecurrentCell(1, cfg.predictor_hidden, seed=seed)
        self.opt = Adam(lr=cfg.predictor_lr)
        self.trained_steps = 0
        self.ema_err_cell = None
        self.ema_err_last = None

    def _encode(self, windows: np.ndarray) -> np.ndarray:
        return np.clip(windows / self.norm, 0.0, 2.0)[..., None]

    @property
    def cell_is_better(self) -> bool:
        return (self.ema_err_cell is not None
                and self.ema_err_cell < self.ema_err_last)

    def predict(self, window) -> float:
        """One-step-ahead PAR; last observed value until the cell earns trust."""
        window = list(window)
        if not window:
            return 0.0
        if len(window) < self.window or not self.cell_is_better:
            return float(window[-1])
        x = self._encode(np.asarray(window, dtype=float)[None, :])
        _, pred = self.cell.forward(x[0])
        return max(float(pred) * self.norm, 0.0)

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        if not self.cell_is_better:
            return windows[:, -1].astype(float)
        _, preds = self.cell.forward(self._encode(windows))
        return np.maximum(preds * self.norm, 0.0)

    def train(self, windows: np.ndarray, next_pars: np.ndarray) -> float:
        x = self._encode(windows)
        targets = np.clip(next_pars / self.norm, 0.0, 2.0)
        _, pre_preds = self.cell.forward(x)
        err_cell = float(np.mean((pre_preds - targets) ** 2))
        err_last = float(np.mean((x[:, -1, 0] - targets) ** 2))
        if self.ema_err_cell is None:
            self.ema_err_cell = err_cell
            self.ema_err_last = err_last
        else:
            d = self.EMA_DECAY
            self.ema_err_cell = d * self.ema_err_cell + (1 - d) * err_cell
            self.ema_err_last = d * self.ema_err_last + (1 - d) * err_last
        loss = recurrent_train_step(self.cell, x, targets, self.opt)
        self.trained_steps += 1
        return loss


def predict_backlog(predictor: ParPredictor, par_window, current_backlog: int,
                    service_pps: float = 1.0) -> float:
    """Predicted next-slot backlog: current + predicted arrivals - nominal service.

    Deliberately unclipped: a negative value ranks a relay by how much idle
    margin it is predicted to have.
    """
    pred_par = predictor.predict(par_window)
    return current_backlog + pred_par - service_pps


@dataclass
class LatencyStats:
    protocol: str
    num_uavs: int
    seed: int
    generated: int
    delivered: int
    dropped: int
    mean_latency_ms: float
    p95_latency_ms: float
    latencies_ms: list = field(repr=False, default_factory=list)


class RoutingSim:
    """One deterministic routing run; see the module docstring for the slot loop."""

    def __init__(self, cfg: RoutingConfig, protocol: str, num_uavs: int, seed: int,
                 positions: np.ndarray | None = None, traffic: TrafficModel | None = None):
        if protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {protocol!r}")
        if num_uavs < 2:
            raise ValueError("need at least two relays")
        self.cfg = cfg
        self.protocol = protocol
        self.num_uavs = num_uavs
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        topo_ss, arr_ss, loss_ss, pred_ss = ss.spawn(4)
        if positions is None:
            positions, gcs = build_topology(cfg, num_uavs, np.random.default_rng(topo_ss))
        else:
            positions = np.asarray(positions, dtype=float)
            gcs = np.zeros(2)
        self.positions = positions
        self.gcs = gcs
        self.hops = min_hops_to_gcs(positions, gcs, cfg.comm_radius_m)
        if np.any(np.isinf(self.hops)):
            raise TopologyError(
                f"{int(np.isinf(self.hops).sum())} relays cannot reach the GCS")
        self.arrival_rng = np.random.default_rng(arr_ss)
        self.loss_rng = np.random.default_rng(loss_ss)
        self.traffic = traffic if traffic is not None else TrafficModel(
            mean_pps=cfg.arrival_total_pps / num_uavs,
            rel_amplitude=cfg.arrival_rel_amplitude,
            period_slots=cfg.arrival_period_slots, num_uavs=num_uavs)
        self.queues = [UavQueue(cfg.predictor_window) for _ in range(num_uavs)]
        self.predictor = (ParPredictor(cfg, int(pred_ss.generate_state(1)[0]))
                          if protocol == PAR_PREDICT else None)
        self.use_oracle_par = False  # diagnostic: bypass the predictor with true rates
        self.observed_backlog = [0] * num_uavs
        self.last_beacon_slot = 0
        # band-pass state over predicted inflow: fast EMA tracks the wave,
        # slow EMA holds the static load baked into the queues already
        self._inflow_fast: np.ndarray | None = None
        self._inflow_slow: np.ndarray | None = None
        # static per-link delay table (transmission + propagation, ms)
        self.link_delay_ms = {}
        self.neighbors: list[list[int]] = []
        pts = {i: positions[i] for i in range(num_uavs)}
        pts[GCS_ID] = gcs
        hop_of = {i: self.hops[i] for i in range(num_uavs)}
        hop_of[GCS_ID] = 0.0
        for j in range(num_uavs):
            cand = []
            for k in list(range(num_uavs)) + [GCS_ID]:
                if k == j:
                    continue
                d = float(np.linalg.norm(pts[j] - pts[k]))
                if d <= cfg.comm_radius_m and hop_of[k] < hop_of[j]:
                    pl = channel.utu_path_loss_db(max(d, 0.1), cfg.fc_ghz)
                    rate = channel.link_capacity_bps(
                        cfg.tx_power_dbm, pl, 1.0,
                        channel.noise_power_dbm(cfg.bandwidth_hz), cfg.bandwidth_hz)
                    self.link_delay_ms[(j, k)] = (cfg.packet_bits / rate * 1e3
                                                  + d / SPEED_OF_LIGHT_M_PER_S * 1e3)
                    cand.append(k)
            self.neighbors.append(sorted(cand))
        self.transit_fraction = self._transit_matrix()
        # per-sender in-flight transmission and candidate cooldowns
        self.in_flight: list[tuple | None] = [None] * num_uavs
        self.cooldown_until: list[dict[int, int]] = [dict() for _ in range(num_uavs)]
        self.next_packet_id = 0
        self.generated = 0
        self.dropped = 0
        self.delivered: list[Packet] = []
        # FIFO accounting: every first enqueue at a node stamps a rank; the
        # dequeued rank sequence must be nondecreasing (a timed-out packet
        # re-queued at the head legitimately repeats its rank).
        self._enqueue_rank = [0] * num_uavs
        self._last_dequeued_rank = [-1] * num_uavs
        self._rank_of: dict[tuple[int, int], int] = {}
        self.fifo_violations = 0
        self.conservation_violations = 0

    # -- queue ops with FIFO accounting -----------------------------------
    def _enqueue(self, node: int, packet: Packet, front: bool = False) -> None:
        q = self.queues[node]
        if front:
            q.buffer.appendleft(packet)  # retransmission keeps its turn
            return
        if self.cfg.max_queue is not None and q.backlog >= self.cfg.max_queue:
            self.dropped += 1
            return
        self._rank_of[(node, packet.id)] = self._enqueue_rank[node]
        self._enqueue_rank[node] += 1
        q.buffer.append(packet)

    def _dequeue(self, node: int) -> Packet:
        pkt = self.queues[node].buffer.popleft()
        rank = self._rank_of[(node, pkt.id)]
        if rank < self._last_dequeued_rank[node]:
            self.fifo_violations += 1
        self._last_dequeued_rank[node] = rank
        return pkt

    # -- slot phases -------------------------------------------------------
    def _resolve_transmissions(self, slot: int) -> None:
        for j in range(self.num_uavs):
            entry = self.in_flight[j]
            if entry is None:
                continue
            pkt, to, sent_slot, lost = entry
            if not lost and slot == sent_slot + 1:
                if to == GCS_ID:
                    pkt.delivered_slot = slot
                    self.delivered.append(pkt)
                else:
                    pkt.hops.append(to)
                    self._enqueue(to, pkt)
                self.in_flight[j] = None

    def _handle_timeouts(self, slot: int) -> None:
        for j in range(self.num_uavs):
            entry = self.in_flight[j]
            if entry is None:
                continue
            pkt, to, sent_slot, lost = entry
            if slot - sent_slot >= self.cfg.timeout_slots:
                self.cooldown_until[j][to] = slot + self.cfg.cooldown_slots
                self._enqueue(j, pkt, front=True)
                self.in_flight[j] = None

    def _spawn_arrivals(self, slot: int, arrivals_now: list[int]) -> None:
        for j in range(self.num_uavs):
            n = generate_arrivals(self.traffic, j, slot, self.arrival_rng)
            for _ in range(n):
                pkt = Packet(self.next_packet_id, j, slot, self.cfg.packet_bits, hops=[j])
                self.next_packet_id += 1
                self.generated += 1
                self._enqueue(j, pkt)
                arrivals_now[j] += 1

    def _candidates(self, j: int, slot: int) -> list[int]:
        cands = [k for k in self.neighbors[j]
                 if self.cooldown_until[j].get(k, 0) <= slot]
        # a cooled-down sole neighbor is still better than deadlock
        return cands if cands else list(self.neighbors[j])

    def _choose(self, j: int, slot: int, predicted_backlog) -> int:
        cands = self._candidates(j, slot)
        if self.protocol == SHORTEST_PATH:
            return min(cands, key=lambda k: (0.0 if k == GCS_ID else self.hops[k], k))
        if self.protocol == BACKLOG_AWARE:
            return min(cands, key=lambda k: (0 if k == GCS_ID else self.observed_backlog[k], k))
        backlogs = [0.0 if k == GCS_ID else predicted_backlog[k] for k in cands]
        delays = [self.link_delay_ms[(j, k)] for k in cands]
        hop_counts = [0.0 if k == GCS_ID else float(self.hops[k]) for k in cands]
        chosen, _ = select_next_hop(cands, backlogs, delays, hop_counts,
                                    (self.cfg.weight_backlog, self.cfg.weight_delay,
                                     self.cfg.weight_hops),
                                    validate=self.cfg.validate_selection)
        return chosen

    def _transit_matrix(self) -> np.ndarray:
        """F[u, k] = fraction of u's traffic expected to transit relay k,
        assuming equal splits over hop-decreasing candidates. Static topology
        makes this a one-off computation; it turns per-node PAR predictions
        into predicted relay inflow."""
        n = self.num_uavs
        f = np.zeros((n, n))
        order = sorted(range(n), key=lambda k: -self.hops[k])
        for u in range(n):
            mass = np.zeros(n)
            mass[u] = 1.0
            for node in order:
                if mass[node] == 0.0 or not self.neighbors[node]:
                    continue
                share = mass[node] / len(self.neighbors[node])
                for k in self.neighbors[node]:
                    if k != GCS_ID:
                        mass[k] += share
                        f[u, k] += share
        return f

    def _beacon(self, slot: int) -> None:
        if slot % self.cfg.beacon_period_slots == 0:
            self.observed_backlog = [q.backlog for q in self.queues]
            self.last_beacon_slot = slot

    def _forward(self, slot: int) -> None:
        predicted = None
        if self.protocol == PAR_PREDICT:
            if self.use_oracle_par:
                par_hat = np.array([self.traffic.rate(k, slot)
                                    for k in range(self.num_uavs)])
            else:
                par_hat = np.zeros(self.num_uavs)
                full = [k for k in range(self.num_uavs)
                        if len(self.queues[k].par_history) == self.cfg.predictor_window]
                if full:
                    windows = np.array([list(self.queues[k].par_history) for k in full],
                                       dtype=float)
                    batch = self.predictor.predict_batch(windows)
                    for k, p in zip(full, batch):
                        par_hat[k] = p
                for k in range(self.num_uavs):
                    if k not in full:
                        hist = self.queues[k].par_history
                        par_hat[k] = float(hist[-1]) if hist else 0.0
            # predicted total inflow: own traffic plus upstream waves routed here
            arrivals_hat = par_hat + self.transit_fraction.T @ par_hat
            if self._inflow_fast is None:
                self._inflow_fast = arrivals_hat.copy()
                self._inflow_slow = arrivals_hat.copy()
            else:
                self._inflow_fast = 0.7 * self._inflow_fast + 0.3 * arrivals_hat
                self._inflow_slow = 0.998 * self._inflow_slow + 0.002 * arrivals_hat
            # queues already embody the steady-state load; only the smoothed
            # inflow anomaly (the wave) forecasts where each queue is heading
            deviation = self._inflow_fast - self._inflow_slow
            horizon = slot - self.last_beacon_slot + 1
            predicted = {}
            for k in range(self.num_uavs):
                predicted[k] = float(self.observed_backlog[k]) + deviation[k] * horizon
        for j in range(self.num_uavs):
            if self.in_flight[j] is not None or self.queues[j].backlog == 0:
                continue
            if not self.neighbors[j]:
                continue
            to = self._choose(j, slot, predicted)
            pkt = self._dequeue(j)
            lost = bool(self.loss_rng.random() < self.cfg.link_loss_prob)
            self.in_flight[j] = (pkt, to, slot, lost)

    def _train_predictor(self, arrivals_now: list[int]) -> None:
        if self.predictor is None:
            return
        windows = []
        targets = []
        for k in range(self.num_uavs):
            hist = self.queues[k].par_history
            if len(hist) == self.cfg.predictor_window:
                windows.append(list(hist))
                targets.append(arrivals_now[k])
        if windows:
            self.predictor.train(np.asarray(windows, dtype=float),
                                 np.asarray(targets, dtype=float))
        for k in range(self.num_uavs):
            self.queues[k].par_history.append(arrivals_now[k])

    def _check_conservation(self) -> None:
        queued = sum(q.backlog for q in self.queues)
        flying = sum(1 for e in self.in_flight if e is not None)
        if self.generated != len(self.delivered) + queued + flying + self.dropped:
            self.conservation_violations += 1

    def step(self, slot: int, arrivals_enabled: bool = True) -> None:
        # PAR tracks the sensed-traffic (external) arrival process only;
        # relayed-in packets show up through the backlog instead.
        arrivals_now = [0] * self.num_uavs
        self._resolve_transmissions(slot)
        self._handle_timeouts(slot)
        if arrivals_enabled:
            self._spawn_arrivals(slot, arrivals_now)
        self._beacon(slot)
        self._forward(slot)
        self._train_predictor(arrivals_now)
        self._check_conservation()

    def outstanding(self) -> int:
        return (sum(q.backlog for q in self.queues)
                + sum(1 for e in self.in_flight if e is not None))

    def run(self, duration_slots: int, drain: bool = True,
            max_drain_slots: int = 20_000) -> LatencyStats:
        slot = 0
        for slot in range(duration_slots):
            self.step(slot)
        if drain:
            while self.outstanding() > 0 and slot < duration_slots + max_drain_slots:
                slot += 1
                self.step(slot, arrivals_enabled=False)
        lat = [(p.delivered_slot - p.created_slot) * self.cfg.slot_ms
               for p in self.delivered]
        mean = float(np.mean(lat)) if lat else 0.0
        p95 = float(np.percentile(lat, 95)) if lat else 0.0
        return LatencyStats(self.protocol, self.num_uavs, self.seed,
                            self.generated, len(self.delivered), self.dropped,
                            mean, p95, lat)


def simulate(cfg: RoutingConfig, protocol: str, num_uavs: int,
             duration_slots: int, seed: int, **kwargs) -> LatencyStats:
    """Run one routing simulation end to end (with final drain) and summarize."""
    sim = RoutingSim(cfg, protocol, num_uavs, seed, **kwargs)
    return sim.run(duration_slots)
