"""Experiment runner: config parsing, seed sweeps, CSV artifact emission.

Config files are line-oriented `section.key = value` with full-line `#`
comments. Unknown keys are rejected; missing keys take the documented
defaults, and the fully resolved config is echoed into the output directory
as resolved_config.txt (which re-parses to an identical config).

Exit codes: 0 success, 2 config error, 3 runtime abort (partial artifacts are
kept with a .partial suffix). UAVNET_THREADS caps seed parallelism.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import chanest, placement, routing


class ConfigError(ValueError):
    pass


def _parse_bool(tok: str) -> bool:
    if tok.lower() in ("true", "1", "yes"):
        return True
    if tok.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {tok!r}")


def _parse_int(tok: str) -> int:
    return int(tok, 10)


def _parse_int_list(tok: str) -> tuple:
    return tuple(int(t.strip(), 10) for t in tok.split(",") if t.strip())


def _parse_str_list(tok: str) -> tuple:
    return tuple(t.strip() for t in tok.split(",") if t.strip())


_PARSERS = {"int": _parse_int, "float": float, "str": str.strip, "bool": _parse_bool,
            "int_list": _parse_int_list, "str_list": _parse_str_list}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section.key -> (type name, default, optional range check)
KNOWN_KEYS: dict[str, tuple] = {
    "experiment.kind": ("str", "chanest", lambda v: v in ("chanest", "placement", "routing")),
    "experiment.seeds": ("int_list", (1,), lambda v: len(v) > 0),
    "experiment.out_dir": ("str", "out", None),

    "chanest.pretrain_slots": ("int", 736, lambda v: v > 0),
    "chanest.online_slots": ("int", 500, lambda v: v > 0),
    "chanest.num_uavs": ("int", 3, lambda v: v > 0),
    "chanest.num_users": ("int", 90, lambda v: v > 0),
    "chanest.uav_altitude_m": ("float", 50.0, lambda v: 22.5 < v <= 300.0),
    "chanest.bandwidth_hz": ("float", 10e6, lambda v: v > 0),
    "chanest.fc_ghz": ("float", 2.0, lambda v: v > 0),
    "chanest.rician_k_db": ("float", 15.0, None),
    "chanest.hidden_sizes": ("int_list", (512, 256), lambda v: all(s > 0 for s in v)),
    "chanest.holdout_fraction": ("float", 0.2, lambda v: 0 < v < 1),
    "chanest.gain_db_min": ("float", -220.0, None),
    "chanest.gain_db_max": ("float", -60.0, None),
    "chanest.learning_rate": ("float", 1e-3, lambda v: v > 0),
    "chanest.learning_rate_final": ("float", 1e-4, lambda v: v > 0),
    "chanest.replay_capacity": ("int", 8192, lambda v: v > 0),
    "chanest.train_batch": ("int", 128, lambda v: v > 0),
    "chanest.train_steps_per_slot": ("int", 3, lambda v: v > 0),
    "chanest.area_m": ("float", 1000.0, lambda v: v > 0),
    "chanest.alpha": ("float", 0.3, lambda v: 0 <= v < 1),
    "chanest.beta": ("float", 300.0, lambda v: v >= 0),
    "chanest.delta_m": ("float", 30.0, lambda v: v > 0),
    "chanest.patrol_radius_m": ("float", 150.0, lambda v: v > 0),
    "chanest.patrol_omega_rad": ("float", 0.03, None),
    "chanest.slot_dt_s": ("float", 1.0, lambda v: v > 0),

    "placement.num_uavs": ("int", 2, lambda v: v >= 1),
    "placement.n_users": ("int", 20, lambda v: v >= 1),
    "placement.episodes": ("int", 300, lambda v: v > 0),
    "placement.slots_per_episode": ("int", 40, lambda v: v > 0),
    "placement.hidden_sizes": ("int_list", (128, 96), lambda v: all(s > 0 for s in v)),
    "placement.area_m": ("float", 2500.0, lambda v: v > 0),
    "placement.h_min_m": ("float", 100.0, lambda v: v > 0),
    "placement.h_max_m": ("float", 800.0, lambda v: v > 0),
    "placement.tx_power_dbm": ("float", 24.0, None),
    "placement.fc_ghz": ("float", 2.0, lambda v: v > 0),
    "placement.bandwidth_hz": ("float", 10e6, lambda v: v > 0),
    "placement.qos_min_bps": ("float", 1e6, lambda v: v >= 0),
    "placement.comm_range_m": ("float", 500.0, lambda v: v > 0),
    "placement.d_max_m": ("float", 50.0, lambda v: v > 0),
    "placement.slot_dt_s": ("float", 1.0, lambda v: v > 0),
    "placement.gamma": ("float", 0.95, lambda v: 0 <= v < 1),
    "placement.replay_capacity": ("int", 50_000, lambda v: v > 0),
    "placement.batch_size": ("int", 64, lambda v: v > 0),
    "placement.warmup_steps": ("int", 500, lambda v: v >= 0),
    "placement.actor_lr": ("float", 1e-4, lambda v: v > 0),
    "placement.critic_lr": ("float", 1e-3, lambda v: v > 0),
    "placement.tau": ("float", 0.01, lambda v: 0 < v <= 1),
    "placement.noise_scale": ("float", 0.3, lambda v: v >= 0),
    "placement.noise_final": ("float", 0.05, lambda v: v >= 0),
    "placement.penalty_boundary": ("float", 1.0, None),
    "placement.penalty_connectivity": ("float", 1.0, None),
    "placement.ee_reward_scale": ("float", 1e5, lambda v: v > 0),
    "placement.greedy_candidates": ("int", 8, lambda v: v >= 1),
    "placement.eval_episodes": ("int", 20, lambda v: v >= 1),
    "placement.buildings_beta": ("float", 0.0, lambda v: v >= 0),

    "routing.j_values": ("int_list", (5, 10, 15, 20), lambda v: all(j >= 2 for j in v)),
    "routing.protocols": ("str_list", routing.PROTOCOLS,
                          lambda v: all(p in routing.PROTOCOLS for p in v)),
    "routing.duration_slots": ("int", 4000, lambda v: v > 0),
    "routing.comm_radius_m": ("float", 10.0, lambda v: v > 0),
    "routing.t_th_ms": ("float", 10.0, lambda v: v > 0),
    "routing.slot_ms": ("float", 1.0, lambda v: v > 0),
    "routing.weight_backlog": ("float", 0.8, lambda v: v >= 0),
    "routing.weight_delay": ("float", 0.1, lambda v: v >= 0),
    "routing.weight_hops": ("float", 0.1, lambda v: v >= 0),
    "routing.predictor_window": ("int", 12, lambda v: v > 0),
    "routing.predictor_hidden": ("int", 8, lambda v: v > 0),
    "routing.predictor_lr": ("float", 5e-3, lambda v: v > 0),
    "routing.packet_bits": ("float", 10_000.0, lambda v: v > 0),
    "routing.fc_ghz": ("float", 2.4, lambda v: v > 0),
    "routing.bandwidth_hz": ("float", 10e6, lambda v: v > 0),
    "routing.tx_power_dbm": ("float", 24.0, None),
    "routing.link_loss_prob": ("float", 0.02, lambda v: 0 <= v < 1),
    "routing.cooldown_slots": ("int", 20, lambda v: v >= 0),
    "routing.beacon_period_slots": ("int", 8, lambda v: v >= 1),
    "routing.lattice_spacing_m": ("float", 8.0, lambda v: v > 0),
    "routing.lattice_jitter_m": ("float", 0.9, lambda v: v >= 0),
    "routing.lattice_kind": ("str", "square", lambda v: v in ("square", "triangular")),
    "routing.arrival_total_pps": ("float", 1.3, lambda v: v >= 0),
    "routing.arrival_rel_amplitude": ("float", 0.9, lambda v: v >= 0),
    "routing.arrival_period_slots": ("int", 240, lambda v: v > 0),
    "routing.validate_selection": ("bool", False, None),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, (_, default, _) in KNOWN_KEYS.items():
            self.values.setdefault(key, default)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def kind(self) -> str:
        return self.values["experiment.kind"]

    @property
    def seeds(self) -> tuple:
        return self.values["experiment.seeds"]

    def dump(self) -> str:
        lines = [f"{key} = {_fmt(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def estimator_config(self) -> chanest.EstimatorConfig:
        g = lambda k: self.values["chanest." + k]
        return chanest.EstimatorConfig(
            hidden_sizes=g("hidden_sizes"), pretrain_slots=g("pretrain_slots"),
            online_slots=g("online_slots"), num_uavs=g("num_uavs"),
            uav_altitude_m=g("uav_altitude_m"), bandwidth_hz=g("bandwidth_hz"),
            fc_ghz=g("fc_ghz"), rician_k_db=g("rician_k_db"),
            num_users=g("num_users"), slot_dt_s=g("slot_dt_s"),
            holdout_fraction=g("holdout_fraction"), gain_db_min=g("gain_db_min"),
            gain_db_max=g("gain_db_max"), learning_rate=g("learning_rate"),
            learning_rate_final=g("learning_rate_final"),
            replay_capacity=g("replay_capacity"), train_batch=g("train_batch"),
            train_steps_per_slot=g("train_steps_per_slot"),
            patrol_radius_m=g("patrol_radius_m"), patrol_omega_rad=g("patrol_omega_rad"),
            area_m=g("area_m"), alpha=g("alpha"), beta=g("beta"), delta_m=g("delta_m"))

    def drl_config(self) -> placement.DrlConfig:
        g = lambda k: self.values["placement." + k]
        return placement.DrlConfig(
            num_uavs=g("num_uavs"), num_users=g("n_users"), area_m=g("area_m"),
            h_min_m=g("h_min_m"), h_max_m=g("h_max_m"), tx_power_dbm=g("tx_power_dbm"),
            fc_ghz=g("fc_ghz"), bandwidth_hz=g("bandwidth_hz"),
            qos_min_bps=g("qos_min_bps"), comm_range_m=g("comm_range_m"),
            d_max_m=g("d_max_m"), slot_dt_s=g("slot_dt_s"),
            slots_per_episode=g("slots_per_episode"), episodes=g("episodes"),
            hidden_sizes=g("hidden_sizes"), gamma=g("gamma"),
            replay_capacity=g("replay_capacity"), batch_size=g("batch_size"),
            warmup_steps=g("warmup_steps"), actor_lr=g("actor_lr"),
            critic_lr=g("critic_lr"), tau=g("tau"), noise_scale=g("noise_scale"),
            noise_final=g("noise_final"), penalty_boundary=g("penalty_boundary"),
            penalty_connectivity=g("penalty_connectivity"),
            ee_reward_scale=g("ee_reward_scale"), greedy_candidates=g("greedy_candidates"),
            eval_episodes=g("eval_episodes"), buildings_beta=g("buildings_beta"))

    def routing_config(self) -> routing.RoutingConfig:
        g = lambda k: self.values["routing." + k]
        return routing.RoutingConfig(
            comm_radius_m=g("comm_radius_m"), ack_timeout_ms=g("t_th_ms"),
            slot_ms=g("slot_ms"), weight_backlog=g("weight_backlog"),
            weight_delay=g("weight_delay"), weight_hops=g("weight_hops"),
            predictor_window=g("predictor_window"), predictor_hidden=g("predictor_hidden"),
            predictor_lr=g("predictor_lr"), packet_bits=g("packet_bits"),
            fc_ghz=g("fc_ghz"), bandwidth_hz=g("bandwidth_hz"),
            tx_power_dbm=g("tx_power_dbm"), link_loss_prob=g("link_loss_prob"),
            cooldown_slots=g("cooldown_slots"), beacon_period_slots=g("beacon_period_slots"),
            lattice_spacing_m=g("lattice_spacing_m"), lattice_jitter_m=g("lattice_jitter_m"),
            lattice_kind=g("lattice_kind"), arrival_total_pps=g("arrival_total_pps"),
            arrival_rel_amplitude=g("arrival_rel_amplitude"),
            arrival_period_slots=g("arrival_period_slots"),
            validate_selection=g("validate_selection"))


def parse_config(text: str) -> ExperimentConfig:
    """Total parse: returns a fully resolved config or raises ConfigError."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, _, tok = line.partition("=")
        key = key.strip()
        tok = tok.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        type_name, _, check = KNOWN_KEYS[key]
        try:
            value = _PARSERS[type_name](tok)
        except (ValueError, TypeError):
            raise ConfigError(
                f"line {lineno}: {key} expects {type_name}, got {tok!r}") from None
        if check is not None and not check(value):
            raise ConfigError(f"line {lineno}: {key} = {tok!r} out of range")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    try:
        cfg = ExperimentConfig(values)
        # construct module configs so cross-field constraints also surface now
        cfg.estimator_config()
        cfg.drl_config()
        cfg.routing_config()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_csv_cell(v) for v in row) + "\n")


def _run_chanest_seed(values: dict, seed: int):
    cfg = ExperimentConfig(dict(values)).estimator_config()
    mse_rows, ee_rows, _ = chanest.run_experiment(cfg, seed)
    return ([(seed, slot, uav, mse) for slot, uav, mse in mse_rows],
            [(seed, slot, a, b) for slot, a, b in ee_rows])


def _run_placement_seed(values: dict, seed: int):
    cfg = ExperimentConfig(dict(values)).drl_config()
    result = placement.train_drl(cfg, seed)
    curve = [(seed, ep, r, fair, ee) for ep, r, fair, ee in result.curve]
    evals = []
    for kind in (placement.DRL, placement.GREEDY, placement.RANDOM):
        rewards = placement.evaluate_policy(cfg, kind, seed, actor=result.actor)
        evals += [(seed, kind, i, r) for i, r in enumerate(rewards)]
    return curve, evals


def _run_routing_seed(values: dict, seed: int):
    exp = ExperimentConfig(dict(values))
    cfg = exp.routing_config()
    rows = []
    for protocol in exp["routing.protocols"]:
        for j in exp["routing.j_values"]:
            st = routing.simulate(cfg, protocol, j, exp["routing.duration_slots"], seed)
            rows.append((protocol, j, seed, st.mean_latency_ms, st.p95_latency_ms,
                         st.delivered, st.dropped))
    return (rows,)


_RUNNERS = {"chanest": _run_chanest_seed, "placement": _run_placement_seed,
            "routing": _run_routing_seed}

_ARTIFACTS = {
    "chanest": (("chanest_mse.csv", ["seed", "slot", "uav_id", "mse"]),
                ("chanest_ee.csv", ["seed", "slot", "ee_predicted", "ee_perfect"])),
    "placement": (("drl_curve.csv", ["seed", "episode", "mean_reward", "fairness", "ee"]),
                  ("policy_eval.csv", ["seed", "policy_kind", "episode", "reward"])),
    "routing": (("routing_latency.csv",
                 ["protocol", "j_uavs", "seed", "mean_latency_ms", "p95_latency_ms",
                  "delivered", "dropped"]),),
}


def _thread_cap() -> int:
    raw = os.environ.get("UAVNET_THREADS", "")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"UAVNET_THREADS must be an integer, got {raw!r}")
    return max(1, os.cpu_count() or 1)


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> int:
    """Run the configured experiment over all seeds; returns the exit code."""
    out = Path(out_dir or cfg["experiment.out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(cfg.dump())

    runner = _RUNNERS[cfg.kind]
    seeds = sorted(set(cfg.seeds))
    results: dict[int, tuple] = {}
    failed: list[tuple[int, str]] = []
    workers = min(_thread_cap(), len(seeds))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(runner, cfg.values, s): s for s in seeds}
            for fut in concurrent.futures.as_completed(futures):
                seed = futures[fut]
                try:
                    results[seed] = fut.result()
                except Exception as exc:  # noqa: BLE001 - report and abort
                    failed.append((seed, f"{type(exc).__name__}: {exc}"))
    else:
        for seed in seeds:
            try:
                results[seed] = runner(cfg.values, seed)
            except Exception as exc:  # noqa: BLE001
                failed.append((seed, f"{type(exc).__name__}: {exc}"))

    suffix = ".partial" if failed else ""
    written = ["resolved_config.txt"]
    for idx, (name, header) in enumerate(_ARTIFACTS[cfg.kind]):
        rows = []
        for seed in seeds:
            if seed in results:
                rows.extend(results[seed][idx])
        path = out / (name + suffix)
        write_csv(path, header, rows)
        written.append(name + suffix)

    manifest = []
    for name in sorted(written):
        data = (out / name).read_bytes()
        manifest.append(f"{name} {len(data)} sha256:{hashlib.sha256(data).hexdigest()}")
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")

    if failed:
        for seed, msg in failed:
            print(f"seed {seed} aborted: {msg}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="uavnet", description="Run the UAV networking experiments")
    parser.add_argument("--config", type=Path, default=None,
                        help="experiment config file (section.key = value lines)")
    parser.add_argument("--seed", type=str, default=None,
                        help="comma-separated seed list, overrides the config")
    parser.add_argument("--out", type=str, default=None,
                        help="output directory, overrides the config")
    args = parser.parse_args(argv)

    try:
        text = args.config.read_text() if args.config is not None else ""
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text)
        if args.seed is not None:
            seeds = _parse_int_list(args.seed)
            if not seeds:
                raise ConfigError("empty --seed list")
            cfg.values["experiment.seeds"] = seeds
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run_experiment(cfg, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
