"""Versioned filter checkpoints.

Assembly filters are stored as ``.npz`` archives holding the particle arrays,
the Rao-Blackwellised blocks and the generator state; generic particle sets
are stored as text, one group of identical particles per record.
"""

from __future__ import annotations

import json

import numpy as np

from ..assembly.domain import Action, AssemblyState, Observation
from ..relational import WorldState
from ..simulation import format_fact, parse_fact
from .assembly import AssemblyPF, AssemblyRBPF, AssemblyRBPFSets, _Filter
from .particles import ParticleSet

__all__ = ["CHECKPOINT_VERSION", "CheckpointError", "save_filter", "load_filter",
           "save_particles", "load_particles"]

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _action_arrays(f) -> dict:
    out = {}
    action = getattr(f, "action", None)
    if action is not None:
        out["action"] = np.array(f"{action.time}|{action}")
    obs = getattr(f, "obs", None)
    if obs is not None:
        out["obs_time"] = np.array(obs.time)
        out["obs_attr"] = obs.attr_obs
        out["obs_rel"] = obs.rel_obs
    return out


def save_filter(f: _Filter, path) -> None:
    """Write ``f``'s complete state; :func:`load_filter` restores it exactly."""
    meta = {"version": CHECKPOINT_VERSION, "class": type(f).__name__, "n": f.n,
            "p_f": f.p_f, "p_o": f.p_o, "kappa": f.kappa,
            "relational_similarity": f.relational_similarity, "recover": f.recover,
            "events": f.events, "rng": f.rng.bit_generator.state}
    arrays = {}
    if isinstance(f, AssemblyPF):
        arrays.update(attrs=f.state.attrs, rel=f.state.rel, time=np.array(f.state.time),
                      prev_attrs=f.prev.attrs, prev_rel=f.prev.rel, prev_time=np.array(f.prev.time))
        arrays.update(_action_arrays(f))
        for key in ("max_len",):
            if hasattr(f, key):
                meta[key] = getattr(f, key)
    elif isinstance(f, AssemblyRBPF):
        arrays.update(attrs=f.attrs, blocks=f.blocks)
    elif isinstance(f, AssemblyRBPFSets):
        arrays.update(attrs=f.attrs)
        meta["prune"] = f.prune
        meta["sets"] = [[{str(x): [[sorted(c), p] for c, p in cells.items()]
                          for x, cells in part[r].items()} for r in (0, 1)] for part in f.blocks]
    else:
        raise CheckpointError(f"cannot checkpoint {type(f).__name__}")
    arrays["meta"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_filter(path, domain) -> _Filter:
    from . import assembly as mod
    with np.load(path, allow_pickle=False) as z:
        data = {k: z[k] for k in z.files}
    meta = json.loads(str(data["meta"]))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    cls = getattr(mod, meta["class"], None)
    if cls is None or not issubclass(cls, _Filter):
        raise CheckpointError(f"unknown filter class {meta['class']}")
    rng = np.random.Generator(getattr(np.random, meta["rng"]["bit_generator"])())
    rng.bit_generator.state = meta["rng"]
    kw = dict(kappa=meta["kappa"], relational_similarity=meta["relational_similarity"],
              recover=meta["recover"])
    if "max_len" in meta:
        kw["max_len"] = meta["max_len"]
    if "prune" in meta:
        kw["prune"] = meta["prune"]
    f = cls(domain, meta["n"], meta["p_f"], meta["p_o"], rng, **kw)
    f.events = [tuple(e) for e in meta["events"]]
    if isinstance(f, AssemblyPF):
        f.state = AssemblyState(data["attrs"], data["rel"], int(data["time"]))
        f._memo = {}
        f.prev = AssemblyState(data["prev_attrs"], data["prev_rel"], int(data["prev_time"]))
        f.action = None
        if "action" in data:
            t, text = str(data["action"]).split("|", 1)
            f.action = Action.parse(text, int(t))
        f.obs = None
        if "obs_time" in data:
            f.obs = Observation(int(data["obs_time"]), data["obs_attr"], data["obs_rel"])
    elif isinstance(f, AssemblyRBPF):
        f._attrs = data["attrs"]
        f.blocks = data["blocks"]
    else:
        f._attrs = data["attrs"]
        f.blocks = [[{int(x): {frozenset(c): p for c, p in cells} for x, cells in part[r].items()}
                     for r in (0, 1)] for part in meta["sets"]]
    return f


def save_particles(particles: ParticleSet, path) -> None:
    """Text dump of a generic particle set."""
    lines = [f"# rdbn particles v{CHECKPOINT_VERSION}"]
    for state, count in zip(particles.states, particles.counts):
        lines.append(f"GROUP {int(count)} {state.time}")
        lines.extend(f"FACT {format_fact(p, a)}" for p, a in sorted(state.facts))
    for step, note in particles.events:
        lines.append(f"EVENT {step} {note}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_particles(path, vocabulary) -> ParticleSet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# rdbn particles v{CHECKPOINT_VERSION}":
        raise CheckpointError(f"{path}: not a version {CHECKPOINT_VERSION} particle file")
    groups, events = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        head, _, rest = line.partition(" ")
        if head == "GROUP":
            count, time = rest.split()
            groups.append((int(count), int(time), []))
        elif head == "FACT" and groups:
            groups[-1][2].append(parse_fact(rest))
        elif head == "EVENT":
            step, _, note = rest.partition(" ")
            events.append((int(step), note))
        else:
            raise CheckpointError(f"{path}:{lineno}: unexpected record {line!r}")
    states = [WorldState(vocabulary, t, facts) for _, t, facts in groups]
    return ParticleSet(states, np.array([c for c, _, _ in groups], dtype=np.int64), events)
