"""Ground-truth assembly trajectories and their log round trip."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..relational import WorldState
from ..simulation import Trajectory, read_log, write_log
from .domain import (ATTRIBUTES, RELATIONS, Action, AssemblyConfig, AssemblyDomain, AssemblyState,
                     Observation, apply_propositional_fault, apply_relational_fault, derive_rng,
                     generate_domain, generate_plan, observe)

__all__ = ["AssemblyTrajectory", "simulate_assembly", "write_assembly_log", "read_assembly_log"]


@dataclass
class AssemblyTrajectory:
    domain: AssemblyDomain
    states: list
    actions: list
    observations: list
    branches: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def fault_events(self) -> int:
        return int(sum(b != 0 for b in self.branches))

    def to_generic(self) -> Trajectory:
        d = self.domain
        return Trajectory([s.to_world_state(d) for s in self.states],
                          [[] for _ in self.actions],
                          [o.facts(d) for o in self.observations],
                          [str(a) for a in self.actions],
                          _config_record(d.cfg))


def simulate_assembly(cfg: AssemblyConfig, seed: int | None = None, run: int = 0) -> AssemblyTrajectory:
    """Draw domain, plan, faulty execution and observations.

    Each component reads its own stream derived from ``(seed, run, name)``.
    """
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    seed = cfg.seed
    domain, state = generate_domain(cfg, derive_rng(seed, run, "domain"))
    plan = generate_plan(cfg, derive_rng(seed, run, "plan"), domain)
    fault_rng = derive_rng(seed, run, "faults")
    obs_rng = derive_rng(seed, run, "observations")
    states, observations, branches = [state], [], []
    for action in plan:
        if action.relational:
            state, br = apply_relational_fault(domain, state, action, cfg.fault_probability, fault_rng,
                                               relational_similarity=cfg.relational_similarity,
                                               return_branch=True)
        else:
            state, br = apply_propositional_fault(domain, state, action, cfg.fault_probability,
                                                  fault_rng, return_branch=True)
        branches.append(int(br[0]))
        states.append(state)
        observations.append(observe(domain, state, action, cfg.p_o, obs_rng))
    return AssemblyTrajectory(domain, states, plan, observations, branches)


def _config_record(cfg: AssemblyConfig) -> dict:
    rec = asdict(cfg)
    return {k: json.dumps(v, sort_keys=True) for k, v in rec.items()}


def write_assembly_log(traj: AssemblyTrajectory, path) -> None:
    write_log(traj.to_generic(), path, event_preds=())


def read_assembly_log(path) -> AssemblyTrajectory:
    """Rebuild a trajectory (domain included) from its log."""
    raw = read_log(path, action_parser=lambda s: [])
    if not raw.config:
        raise ValueError(f"{path}: not an assembly log (no CONFIG records)")
    fields = {k: json.loads(v) for k, v in raw.config.items()}
    cfg = AssemblyConfig(**fields)
    domain = AssemblyDomain(cfg)
    vocab = domain.vocabulary
    states = [AssemblyState.from_world_state(domain, WorldState(vocab, t, facts))
              for t, facts in enumerate(raw.states)]
    actions = [Action.parse(lbl, t) for t, lbl in enumerate(raw.labels, start=1)]
    observations = []
    for t, facts in enumerate(raw.observations, start=1):
        attr_rows, rel_rows = [], []
        for g, v in facts:
            if g.pred in ATTRIBUTES:
                attr_rows.append((domain.index[g.args[0]], ATTRIBUTES.index(g.pred),
                                  domain.value_index[g.pred][g.args[1]]))
            else:
                rel_rows.append((RELATIONS.index(g.pred), domain.index[g.args[0]],
                                 domain.index[g.args[1]], int(v)))
        observations.append(Observation(t, np.array(attr_rows, dtype=np.int64).reshape(-1, 3),
                                        np.array(rel_rows, dtype=np.int64).reshape(-1, 4)))
    return AssemblyTrajectory(domain, states, actions, observations)
