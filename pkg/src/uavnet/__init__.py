"""Deterministic multi-UAV network simulator and intelligent-networking library.

Three embedded experiments share an urban world model, a channel stack, and a
small hand-rolled neural toolkit:

  chanest   -- online neural estimation of UAV-to-ground channel gains
  placement -- actor-critic continuous movement control for fair,
               energy-efficient coverage, with random/greedy baselines
  routing   -- packet relaying toward a ground sink with traffic-prediction
               next-hop selection against shortest-path/backlog baselines

Every run is seedable and byte-deterministic; the `uavnet` CLI drives the
experiments and emits CSV artifacts.
"""

from . import chanest, channel, cli, env, metrics, neural, placement, routing

__all__ = ["chanest", "channel", "cli", "env", "metrics", "neural",
           "placement", "routing"]
__version__ = "0.1.0"
